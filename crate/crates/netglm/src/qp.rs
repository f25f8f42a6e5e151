//! Dense convex quadratic programs with two-sided linear constraints:
//!
//! ```text
//!     minimize    1/2 x' P x + q' x
//!     subject to  l <= A x <= u
//! ```
//!
//! Operator splitting in the OSQP style: the iteration alternates a
//! regularized equality-constrained solve with a projection onto the box,
//! with penalty adaptation and periodic refactorization. Once the iterates
//! settle, an active-set polish solves the equality-constrained KKT system;
//! a polished point that verifies the KKT conditions is returned immediately,
//! otherwise iteration continues to the residual tolerance or the cap.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, cholesky_solve};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct QpOptions<T: Scalar> {
    /// Absolute primal/dual residual tolerance.
    pub eps_abs: T,
    pub max_iter: usize,
    /// Splitting regularization.
    pub sigma: T,
    /// Initial penalty.
    pub rho: T,
    /// Over-relaxation factor.
    pub alpha: T,
}

impl<T: Scalar> Default for QpOptions<T> {
    fn default() -> Self {
        QpOptions {
            eps_abs: T::from_f(1e-9),
            max_iter: 20_000,
            sigma: T::from_f(1e-6),
            rho: T::from_f(0.1),
            alpha: T::from_f(1.6),
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution<T: Scalar> {
    pub x: Array1<T>,
    /// `1/2 x' P x + q' x` at the returned point.
    pub objective: T,
    pub iterations: usize,
    /// Worst bound violation `max(l - Ax, Ax - u, 0)` over all rows.
    pub max_violation: T,
    /// Whether the returned point came from a verified polish step.
    pub polished: bool,
    /// Whether the splitting iteration met its residual tolerance (a polished
    /// exit counts as converged).
    pub converged: bool,
    /// Whether a primal infeasibility certificate was found: a ray `dy` with
    /// `A' dy = 0` whose support function over the bounds is negative.
    pub infeasible: bool,
}

/// Solve the box-constrained QP.
///
/// `p` must be symmetric positive semidefinite; every bound pair must satisfy
/// `l_i <= u_i` with finite values.
pub fn solve_qp<T: Scalar>(
    p: &Array2<T>,
    q: &Array1<T>,
    a: &Array2<T>,
    l: &Array1<T>,
    u: &Array1<T>,
    opts: &QpOptions<T>,
) -> Result<QpSolution<T>> {
    let d = p.nrows();
    let m = a.nrows();
    if p.ncols() != d || q.len() != d || a.ncols() != d || l.len() != m || u.len() != m {
        return Err(Error::Argument(
            "inconsistent QP dimensions".into(),
        ));
    }
    if l.iter().zip(u.iter()).any(|(lo, hi)| !(lo <= hi)) {
        return Err(Error::Argument("QP bounds must satisfy l <= u".into()));
    }

    let ata = a.t().dot(a);
    let mut rho = opts.rho;
    let mut kkt = factor(p, &ata, opts.sigma, rho)?;

    let mut x = Array1::<T>::zeros(d);
    let mut z = clamp(&a.dot(&x), l, u);
    let mut y = Array1::<T>::zeros(m);
    let mut y_prev = y.clone();

    let mut best: Option<QpSolution<T>> = None;
    let mut last_checked_prim = T::infinity();
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;

        // x-update: (P + sigma I + rho A'A) x+ = sigma x - q + A'(rho z - y)
        let rhs = &x.mapv(|v| v * opts.sigma) - q
            + &a.t().dot(&(&z.mapv(|v| v * rho) - &y));
        let x_new = cholesky_solve(&kkt, rhs.view());
        let ax_new = a.dot(&x_new);

        // relaxed z/y updates
        let ax_relaxed = &ax_new.mapv(|v| v * opts.alpha)
            + &z.mapv(|v| v * (T::one() - opts.alpha));
        let z_new = clamp(&(&ax_relaxed + &y.mapv(|v| v / rho)), l, u);
        y_prev.assign(&y);
        y = &y + &(&ax_relaxed - &z_new).mapv(|v| v * rho);
        x = x_new;
        z = z_new;

        // primal infeasibility certificate on the dual increment
        if iterations % 25 == 0 {
            let dy = &y - &y_prev;
            let ndy = inf_norm(&dy);
            if ndy > T::from_f(1e-14) {
                let eps = T::from_f(1e-5) * ndy;
                let at_dy_norm = inf_norm(&a.t().dot(&dy));
                let support: T = dy
                    .iter()
                    .zip(l.iter().zip(u.iter()))
                    .map(|(&v, (&lo, &hi))| {
                        if v > T::zero() {
                            hi * v
                        } else {
                            lo * v
                        }
                    })
                    .sum();
                if at_dy_norm <= eps && support <= -eps {
                    let viol = violation(&a.dot(&x), l, u);
                    return Ok(QpSolution {
                        objective: objective(p, q, &x),
                        x,
                        iterations,
                        max_violation: viol,
                        polished: false,
                        converged: false,
                        infeasible: true,
                    });
                }
            }
        }

        let r_prim = inf_norm(&(&ax_new - &z));
        let r_dual = inf_norm(&(&p.dot(&x) + q + &a.t().dot(&y)));

        let settled = r_prim <= T::from_f(1e-6) && r_dual <= T::from_f(1e-6);
        if (settled && iterations % 250 == 0) || (r_prim <= opts.eps_abs && r_dual <= opts.eps_abs)
        {
            if let Some(pol) = polish(p, q, a, l, u, &y, opts) {
                return Ok(QpSolution {
                    iterations,
                    polished: true,
                    converged: true,
                    ..pol
                });
            }
        }
        if r_prim <= opts.eps_abs && r_dual <= opts.eps_abs {
            let violation = violation(&a.dot(&x), l, u);
            return Ok(QpSolution {
                objective: objective(p, q, &x),
                x,
                iterations,
                max_violation: violation,
                polished: false,
                converged: true,
                infeasible: false,
            });
        }

        if iterations % 100 == 0 {
            // track the best feasible-ish iterate in case we stop at the cap
            let viol = violation(&a.dot(&x), l, u);
            let obj = objective(p, q, &x);
            if best
                .as_ref()
                .map(|b| viol < b.max_violation)
                .unwrap_or(true)
            {
                best = Some(QpSolution {
                    x: x.clone(),
                    objective: obj,
                    iterations,
                    max_violation: viol,
                    polished: false,
                    converged: false,
                    infeasible: false,
                });
            }

            // penalty adaptation: balance the residuals
            if r_prim > T::zero() && r_dual > T::zero() {
                let ratio = (r_prim / r_dual).sqrt();
                let proposed = (rho * ratio)
                    .max(T::from_f(1e-6))
                    .min(T::from_f(1e6));
                if proposed > rho * T::from_f(5.0) || proposed < rho / T::from_f(5.0) {
                    rho = proposed;
                    kkt = factor(p, &ata, opts.sigma, rho)?;
                }
            }
        }

        // stall detection: an infeasible program keeps a large primal residual
        if iterations % 3000 == 0 {
            if r_prim > T::from_f(1e-6) && r_prim > last_checked_prim * T::from_f(0.99) {
                break;
            }
            last_checked_prim = r_prim;
        }
    }

    // cap reached (or stalled): last polish attempt, then best effort
    if let Some(pol) = polish(p, q, a, l, u, &y, opts) {
        return Ok(QpSolution {
            iterations,
            polished: true,
            converged: true,
            ..pol
        });
    }
    let viol = violation(&a.dot(&x), l, u);
    let current = QpSolution {
        objective: objective(p, q, &x),
        x,
        iterations,
        max_violation: viol,
        polished: false,
        converged: false,
        infeasible: false,
    };
    Ok(match best {
        Some(b) if b.max_violation < current.max_violation => QpSolution {
            iterations,
            ..b
        },
        _ => current,
    })
}

fn factor<T: Scalar>(
    p: &Array2<T>,
    ata: &Array2<T>,
    sigma: T,
    rho: T,
) -> Result<Array2<T>> {
    let d = p.nrows();
    let mut k = p + &ata.mapv(|v| v * rho);
    for i in 0..d {
        k[(i, i)] += sigma;
    }
    cholesky_lower(k.view())
        .map_err(|e| Error::Numeric(format!("splitting matrix factorization failed: {e}")))
}

fn clamp<T: Scalar>(v: &Array1<T>, l: &Array1<T>, u: &Array1<T>) -> Array1<T> {
    Array1::from_iter(
        v.iter()
            .zip(l.iter().zip(u.iter()))
            .map(|(&x, (&lo, &hi))| x.max(lo).min(hi)),
    )
}

fn inf_norm<T: Scalar>(v: &Array1<T>) -> T {
    v.iter().map(|x| x.abs()).fold(T::zero(), T::max)
}

fn violation<T: Scalar>(ax: &Array1<T>, l: &Array1<T>, u: &Array1<T>) -> T {
    ax.iter()
        .zip(l.iter().zip(u.iter()))
        .map(|(&v, (&lo, &hi))| (lo - v).max(v - hi).max(T::zero()))
        .fold(T::zero(), T::max)
}

fn objective<T: Scalar>(p: &Array2<T>, q: &Array1<T>, x: &Array1<T>) -> T {
    T::from_f(0.5) * x.dot(&p.dot(x)) + q.dot(x)
}

/// Active-set polish: guess the active rows from the dual signs, solve the
/// equality-constrained KKT system through a Schur complement, and verify the
/// resulting KKT conditions. Returns `None` when the guess does not verify.
fn polish<T: Scalar>(
    p: &Array2<T>,
    q: &Array1<T>,
    a: &Array2<T>,
    l: &Array1<T>,
    u: &Array1<T>,
    y: &Array1<T>,
    opts: &QpOptions<T>,
) -> Option<QpSolution<T>> {
    let d = p.nrows();
    let y_tol = T::from_f(1e-10);
    let mut active: Vec<(usize, bool)> = Vec::new(); // (row, is_upper)
    for (i, &yi) in y.iter().enumerate() {
        if yi > y_tol {
            active.push((i, true));
        } else if yi < -y_tol {
            active.push((i, false));
        }
    }
    if active.is_empty() {
        return None;
    }
    let k = active.len();
    let mut a_act = Array2::<T>::zeros((k, d));
    let mut b_act = Array1::<T>::zeros(k);
    for (row, &(i, upper)) in active.iter().enumerate() {
        a_act.row_mut(row).assign(&a.row(i));
        b_act[row] = if upper { u[i] } else { l[i] };
    }

    let delta = T::from_f(1e-11);
    let mut p_reg = p.clone();
    for i in 0..d {
        p_reg[(i, i)] += delta;
    }
    let lp = cholesky_lower(p_reg.view()).ok()?;
    // Schur complement S = A_act P^{-1} A_act' (+ delta I)
    let mut pinv_at = Array2::<T>::zeros((d, k));
    for (col, _) in (0..k).zip(active.iter()) {
        let rhs = a_act.row(col).to_owned();
        pinv_at.column_mut(col).assign(&cholesky_solve(&lp, rhs.view()));
    }
    let mut schur = a_act.dot(&pinv_at);
    for i in 0..k {
        schur[(i, i)] += delta;
    }
    let ls = cholesky_lower(schur.view()).ok()?;
    let pinv_q = cholesky_solve(&lp, q.view());
    let rhs = -(&b_act + &a_act.dot(&pinv_q));
    let nu = cholesky_solve(&ls, rhs.view());
    // x = -P^{-1}(q + A_act' nu)
    let x = -(&pinv_q + &pinv_at.dot(&nu));

    // dual signs must agree with the guessed sides
    for (row, &(_, upper)) in active.iter().enumerate() {
        if upper && nu[row] < -y_tol {
            return None;
        }
        if !upper && nu[row] > y_tol {
            return None;
        }
    }

    // KKT verification at the polished point
    let ax = a.dot(&x);
    let viol = violation(&ax, l, u);
    let scale = T::one() + inf_norm(&x) + inf_norm(q);
    if viol > opts.eps_abs * scale {
        return None;
    }
    let mut y_full = Array1::<T>::zeros(a.nrows());
    for (row, &(i, _)) in active.iter().enumerate() {
        y_full[i] = nu[row];
    }
    let stationarity = inf_norm(&(&p.dot(&x) + q + &a.t().dot(&y_full)));
    if stationarity > opts.eps_abs * scale * T::from_f(10.0) {
        return None;
    }
    Some(QpSolution {
        objective: objective(p, q, &x),
        x,
        iterations: 0,
        max_violation: viol,
        polished: true,
        converged: true,
        infeasible: false,
    })
}
