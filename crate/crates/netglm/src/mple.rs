//! l1-penalized maximum pseudolikelihood estimation on the first half of a
//! strong independent set.
//!
//! The objective is the negative average conditional log-likelihood over the
//! fitting vertices (up to an additive constant that cancels in differences)
//! plus an l1 penalty. It is smooth-plus-separable and convex, so the solver
//! is accelerated proximal gradient with backtracking, a monotone restart,
//! and a KKT stopping rule.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::graph::Hypergraph;
use crate::linalg::gram_operator_norm;
use crate::mrf::{local_field, log_cosh, Dataset};
use crate::scalar::Scalar;

/// Options for [`fit_mple`].
#[derive(Debug, Clone)]
pub struct SolverOptions<T: Scalar> {
    /// KKT residual below which the fit counts as converged.
    pub tol: T,
    pub max_iter: usize,
    /// Starting point (defaults to the origin).
    pub init: Option<Array1<T>>,
    /// Scale covariate columns to unit root-mean-square over the fitting set
    /// before optimizing (the penalty then acts on the scaled coefficients).
    /// Off by default: the model has no intercept and no natural scale-free
    /// reparameterization.
    pub standardize: bool,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        SolverOptions {
            tol: T::from_f(1e-7),
            max_iter: 5000,
            init: None,
            standardize: false,
        }
    }
}

/// Result of the penalized pseudolikelihood fit.
#[derive(Debug, Clone)]
pub struct MpleFit<T: Scalar> {
    pub theta_tilde: Array1<T>,
    pub lambda: T,
    pub iterations: usize,
    /// Final penalized objective value.
    pub objective: T,
    /// Max-norm distance of the negative gradient from the l1 subdifferential.
    pub kkt_residual: T,
    pub converged: bool,
}

/// Default penalty level `c * sqrt(log d / n)` (natural logarithm; `n` is the
/// full sample size, not the fitting-set size).
pub fn lambda_default<T: Scalar>(n: usize, d: usize, c: T) -> T {
    c * (T::from_f((d as f64).ln()) / T::from_f(n as f64)).sqrt()
}

/// Componentwise soft-thresholding `sign(z) * max(|z| - tau, 0)`.
pub fn soft_threshold<T: Scalar>(z: &Array1<T>, tau: T) -> Array1<T> {
    z.mapv(|v| v.signum() * (v.abs() - tau).max(T::zero()))
}

/// Negative average pseudo-log-likelihood over `s1`.
///
/// `L(b) = -(1/|S1|) sum_{i in S1} [ y_i (m_i + x_i' b) - log cosh(m_i + x_i' b) ]`.
pub fn neg_pseudo_loglik<T: Scalar>(
    b: &Array1<T>,
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    s1: &[usize],
) -> Result<T> {
    let prob = PseudoProblem::new(data, h, s1)?;
    prob.check_dim(b)?;
    Ok(prob.smooth(b))
}

/// Gradient of [`neg_pseudo_loglik`]: component `k` is
/// `-(1/|S1|) sum_{i in S1} x_ik (y_i - tanh(v_i))`.
pub fn pseudo_grad<T: Scalar>(
    b: &Array1<T>,
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    s1: &[usize],
) -> Result<Array1<T>> {
    let prob = PseudoProblem::new(data, h, s1)?;
    prob.check_dim(b)?;
    Ok(prob.grad(b))
}

/// Minimize `L(b) + lambda * ||b||_1` by monotone accelerated proximal
/// gradient with backtracking line search.
///
/// Stops when the KKT residual drops below `opts.tol` or after
/// `opts.max_iter` iterations; in the latter case the fit is returned with
/// `converged = false` and the caller decides what to do with it.
pub fn fit_mple<T: Scalar>(
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    s1: &[usize],
    lambda: T,
    opts: &SolverOptions<T>,
) -> Result<MpleFit<T>> {
    if !(lambda >= T::zero()) {
        return Err(Error::Argument(format!(
            "lambda must be nonnegative (got {})",
            lambda.to_f()
        )));
    }
    let mut prob = PseudoProblem::new(data, h, s1)?;
    let d = data.dim();
    let scales = if opts.standardize {
        Some(prob.standardize())
    } else {
        None
    };

    let mut x = match &opts.init {
        Some(b0) => {
            prob.check_dim(b0)?;
            match &scales {
                Some(s) => Array1::from_iter(b0.iter().zip(s.iter()).map(|(&b, &s)| b * s)),
                None => b0.clone(),
            }
        }
        None => Array1::zeros(d),
    };

    // Global Lipschitz bound: ||X'X/m||_2 dominates the Hessian since the
    // per-observation curvature sech^2 is at most one.
    let mut step_l = gram_operator_norm(prob.xs.view(), 60).max(T::from_f(1e-12));
    let backtrack_slack = T::from_f(1e-12);

    let mut x_prev = x.clone();
    let mut y = x.clone();
    let mut momentum = T::one();
    let mut fx = prob.smooth(&x) + lambda * l1_norm(&x);
    if !fx.is_finite() {
        return Err(Error::Numeric("objective is not finite at the start".into()));
    }

    let mut iterations = 0;
    let mut kkt = kkt_residual(&prob.grad(&x), &x, lambda);
    let mut converged = kkt <= opts.tol;

    while !converged && iterations < opts.max_iter {
        iterations += 1;

        let (mut z, mut fz) = backtracked_step(&prob, &y, lambda, &mut step_l)?;
        if fz > fx + backtrack_slack {
            // Accelerated candidate overshot: restart momentum and take a
            // plain proximal step from x, which cannot increase the objective.
            y.assign(&x);
            momentum = T::one();
            let (z2, fz2) = backtracked_step(&prob, &y, lambda, &mut step_l)?;
            z = z2;
            fz = fz2;
        }
        debug_assert!(
            fz <= fx + T::from_f(1e-9) * (T::one() + fx.abs()),
            "objective increased: {} -> {}",
            fx.to_f(),
            fz.to_f()
        );

        let next_momentum =
            (T::one() + (T::one() + T::from_f(4.0) * momentum * momentum).sqrt())
                / T::from_f(2.0);
        let mix = (momentum - T::one()) / next_momentum;
        y = &z + &((&z - &x_prev).mapv(|v| v * mix));
        momentum = next_momentum;
        x_prev = x;
        x = z;
        fx = fz;
        if !fx.is_finite() {
            return Err(Error::Numeric(format!(
                "objective became non-finite at iteration {iterations}"
            )));
        }

        kkt = kkt_residual(&prob.grad(&x), &x, lambda);
        converged = kkt <= opts.tol;
    }

    let theta_tilde = match &scales {
        Some(s) => Array1::from_iter(x.iter().zip(s.iter()).map(|(&b, &s)| b / s)),
        None => x,
    };
    Ok(MpleFit {
        theta_tilde,
        lambda,
        iterations,
        objective: fx,
        kkt_residual: kkt,
        converged,
    })
}

fn backtracked_step<T: Scalar>(
    prob: &PseudoProblem<T>,
    y: &Array1<T>,
    lambda: T,
    step_l: &mut T,
) -> Result<(Array1<T>, T)> {
    let fy = prob.smooth(y);
    let gy = prob.grad(y);
    loop {
        let step = T::one() / *step_l;
        let z = soft_threshold(&(y - &gy.mapv(|g| g * step)), lambda * step);
        let fz_smooth = prob.smooth(&z);
        let diff = &z - y;
        let quad = fy
            + gy.dot(&diff)
            + *step_l / T::from_f(2.0) * diff.dot(&diff)
            + T::from_f(1e-14);
        if fz_smooth <= quad {
            return Ok((z.clone(), fz_smooth + lambda * l1_norm(&z)));
        }
        *step_l *= T::from_f(2.0);
        if !(step_l.to_f() < 1e18) {
            return Err(Error::Numeric(
                "backtracking line search failed to find a valid step".into(),
            ));
        }
    }
}

fn l1_norm<T: Scalar>(b: &Array1<T>) -> T {
    b.iter().map(|v| v.abs()).sum()
}

/// Distance of `-grad` from the subdifferential `lambda * d||b||_1`, max norm.
fn kkt_residual<T: Scalar>(grad: &Array1<T>, b: &Array1<T>, lambda: T) -> T {
    grad.iter()
        .zip(b.iter())
        .map(|(&g, &bk)| {
            if bk != T::zero() {
                (g + lambda * bk.signum()).abs()
            } else {
                (g.abs() - lambda).max(T::zero())
            }
        })
        .fold(T::zero(), T::max)
}

/// Unpenalized pseudo-likelihood refit restricted to a coordinate support.
///
/// The l1 stage does the selection; refitting the selected coordinates with
/// `lambda = 0` removes the shrinkage while keeping everything else fixed.
/// Coordinates outside `support` stay exactly zero.
pub fn refit_on_support<T: Scalar>(
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    s1: &[usize],
    support: &[usize],
    opts: &SolverOptions<T>,
) -> Result<MpleFit<T>> {
    if support.is_empty() {
        return Err(Error::Argument("refit support is empty".into()));
    }
    let d = data.dim();
    let mut seen = vec![false; d];
    for &k in support {
        if k >= d {
            return Err(Error::Argument(format!(
                "support coordinate {k} out of range for d = {d}"
            )));
        }
        if seen[k] {
            return Err(Error::Argument(format!(
                "support coordinate {k} appears more than once"
            )));
        }
        seen[k] = true;
    }
    let reduced_x = data.x().select(ndarray::Axis(1), support);
    let reduced = Dataset::new(reduced_x, data.y().to_owned())?;
    let reduced_opts = SolverOptions {
        init: None,
        standardize: false,
        ..opts.clone()
    };
    let fit = fit_mple(&reduced, h, s1, T::zero(), &reduced_opts)?;
    let mut theta = Array1::<T>::zeros(d);
    for (slot, &k) in support.iter().enumerate() {
        theta[k] = fit.theta_tilde[slot];
    }
    Ok(MpleFit {
        theta_tilde: theta,
        ..fit
    })
}

/// Pseudo-likelihood data restricted to the fitting vertices: covariate rows,
/// responses, and the (fixed) local fields.
struct PseudoProblem<T: Scalar> {
    xs: Array2<T>,
    ys: Array1<T>,
    fields: Array1<T>,
    inv_m: T,
}

impl<T: Scalar> PseudoProblem<T> {
    fn new(data: &Dataset<T>, h: &Hypergraph<T>, s1: &[usize]) -> Result<Self> {
        if s1.is_empty() {
            return Err(Error::InsufficientData(
                "the fitting vertex set is empty".into(),
            ));
        }
        if data.n() != h.vertex_count() {
            return Err(Error::Argument(format!(
                "dataset has {} rows but the graph has {} vertices",
                data.n(),
                h.vertex_count()
            )));
        }
        let mut seen = vec![false; data.n()];
        for &i in s1 {
            if i >= data.n() {
                return Err(Error::Argument(format!(
                    "fitting vertex {i} out of range for n = {}",
                    data.n()
                )));
            }
            if seen[i] {
                return Err(Error::Argument(format!(
                    "fitting vertex {i} appears more than once"
                )));
            }
            seen[i] = true;
        }
        let m = s1.len();
        let d = data.dim();
        let mut xs = Array2::<T>::zeros((m, d));
        let mut ys = Array1::<T>::zeros(m);
        let mut fields = Array1::<T>::zeros(m);
        let y_all = data.y_slice();
        for (row, &i) in s1.iter().enumerate() {
            xs.row_mut(row).assign(&data.covariate_row(i));
            ys[row] = y_all[i];
            fields[row] = local_field(h, y_all, i)?;
        }
        Ok(PseudoProblem {
            xs,
            ys,
            fields,
            inv_m: T::one() / T::from_f(m as f64),
        })
    }

    fn check_dim(&self, b: &Array1<T>) -> Result<()> {
        if b.len() != self.xs.ncols() {
            return Err(Error::Argument(format!(
                "coefficient vector has length {}, expected {}",
                b.len(),
                self.xs.ncols()
            )));
        }
        Ok(())
    }

    /// Scale columns to unit RMS in place; returns the applied scales.
    fn standardize(&mut self) -> Array1<T> {
        let m = T::from_f(self.xs.nrows() as f64);
        let scales: Array1<T> = (0..self.xs.ncols())
            .map(|j| {
                let rms = (self.xs.column(j).map(|v| *v * *v).sum() / m).sqrt();
                if rms > T::from_f(1e-12) {
                    rms
                } else {
                    T::one()
                }
            })
            .collect();
        for j in 0..self.xs.ncols() {
            let s = scales[j];
            self.xs.column_mut(j).mapv_inplace(|v| v / s);
        }
        scales
    }

    fn linear_predictor(&self, b: &Array1<T>) -> Array1<T> {
        &self.xs.dot(b) + &self.fields
    }

    fn smooth(&self, b: &Array1<T>) -> T {
        let v = self.linear_predictor(b);
        let mut total = T::zero();
        for (vi, yi) in v.iter().zip(self.ys.iter()) {
            total = total + *yi * *vi - log_cosh(*vi);
        }
        -total * self.inv_m
    }

    fn grad(&self, b: &Array1<T>) -> Array1<T> {
        let v = self.linear_predictor(b);
        let resid: Array1<T> =
            Array1::from_iter(v.iter().zip(self.ys.iter()).map(|(&vi, &yi)| yi - vi.tanh()));
        self.xs.t().dot(&resid).mapv(|g| -g * self.inv_m)
    }
}
