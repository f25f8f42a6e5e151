//! Debiased point estimates, variance estimates, confidence intervals, and
//! hypothesis tests for linear and quadratic functionals, plus multiple
//! testing corrections and the end-to-end pipelines.
//!
//! The quantile convention throughout is the upper tail: `z_q` denotes
//! `Phi^{-1}(1 - q)`, so a symmetric `(1 - alpha)` interval uses
//! `z_{alpha/2}` on both sides.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde_json::json;

use crate::error::{Error, Result};
use crate::graph::{
    ascending_order, greedy_strong_independent_set, random_order, split_independent_set,
    Hypergraph, VertexSplit,
};
use crate::linalg::cholesky_lower;
use crate::mple::{fit_mple, lambda_default, refit_on_support, MpleFit, SolverOptions};
use crate::mrf::{f_sigmoid, local_field, Dataset};
use crate::projection::{
    build_constraint_spec, solve_projection_with, ProjectionContext, ProjectionResult,
    QpConstants,
};
use crate::qp::QpOptions;
use crate::scalar::Scalar;
pub use crate::stats::{normal_cdf, normal_quantile, two_sided_p_value, upper_quantile};

/// Debiased estimate of `c' theta`:
/// `c' theta_tilde + (2/|S2|) sum_{i in S2} (ybar_i - f(v_i)) u' x_i`.
pub fn debias_linear<T: Scalar>(
    c: ArrayView1<'_, T>,
    fit: &MpleFit<T>,
    proj: &ProjectionResult<T>,
    data: &Dataset<T>,
    s2: &[usize],
    h: &Hypergraph<T>,
) -> Result<T> {
    if c.len() != data.dim() || fit.theta_tilde.len() != data.dim() {
        return Err(Error::Argument(format!(
            "functional/fit dimension mismatch: c has {}, fit has {}, data has {}",
            c.len(),
            fit.theta_tilde.len(),
            data.dim()
        )));
    }
    let correction = residual_projection_sum(fit, proj, data, s2, h)?;
    Ok(c.dot(&fit.theta_tilde) + T::from_f(2.0) * correction)
}

/// `(1/|S2|) sum (ybar_i - f(v_i)) u' x_i` — shared by the linear and
/// quadratic corrections (which scale it by 2 and 4 respectively).
fn residual_projection_sum<T: Scalar>(
    fit: &MpleFit<T>,
    proj: &ProjectionResult<T>,
    data: &Dataset<T>,
    s2: &[usize],
    h: &Hypergraph<T>,
) -> Result<T> {
    if s2.is_empty() {
        return Err(Error::InsufficientData(
            "the correction vertex set is empty".into(),
        ));
    }
    if proj.u_hat.len() != data.dim() {
        return Err(Error::Argument(format!(
            "projection direction has length {}, expected {}",
            proj.u_hat.len(),
            data.dim()
        )));
    }
    let y = data.y_slice();
    let mut total = T::zero();
    for &i in s2 {
        if i >= data.n() {
            return Err(Error::Argument(format!(
                "correction vertex {i} out of range for n = {}",
                data.n()
            )));
        }
        let v = local_field(h, y, i)? + data.covariate_row(i).dot(&fit.theta_tilde);
        let resid = data.y_bar(i) - f_sigmoid(v);
        total += resid * data.covariate_row(i).dot(&proj.u_hat);
    }
    Ok(total / T::from_f(s2.len() as f64))
}

/// Plug-in variance `(1/|S2|^2) sum 4 f(v_i)(1 - f(v_i)) (u' x_i)^2`.
pub fn estimate_variance<T: Scalar>(
    proj: &ProjectionResult<T>,
    fit: &MpleFit<T>,
    data: &Dataset<T>,
    s2: &[usize],
    h: &Hypergraph<T>,
) -> Result<T> {
    let v = variance_sum(&proj.u_hat, &fit.theta_tilde, data, s2, h)?
        / T::from_f((s2.len() * s2.len()) as f64);
    if !(v > T::zero()) {
        return Err(Error::DegenerateVariance);
    }
    Ok(v)
}

/// `sum_i 4 f(v_i)(1 - f(v_i)) (u' x_i)^2` over `s2` at parameter `theta`.
pub(crate) fn variance_sum<T: Scalar>(
    u: &Array1<T>,
    theta: &Array1<T>,
    data: &Dataset<T>,
    s2: &[usize],
    h: &Hypergraph<T>,
) -> Result<T> {
    if s2.is_empty() {
        return Err(Error::InsufficientData(
            "the correction vertex set is empty".into(),
        ));
    }
    let y = data.y_slice();
    let four = T::from_f(4.0);
    let mut total = T::zero();
    for &i in s2 {
        let v = local_field(h, y, i)? + data.covariate_row(i).dot(theta);
        let f = f_sigmoid(v);
        let ux = data.covariate_row(i).dot(u);
        total += four * f * (T::one() - f) * ux * ux;
    }
    Ok(total)
}

/// Symmetric `(1 - alpha)` confidence interval `estimate ± z_{alpha/2} sqrt(V)`.
pub fn conf_interval<T: Scalar>(estimate: T, variance: T, alpha: T) -> Result<(T, T)> {
    if !(variance > T::zero()) {
        return Err(Error::Argument(format!(
            "variance must be positive (got {})",
            variance.to_f()
        )));
    }
    let a = alpha.to_f();
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Argument(format!(
            "alpha must lie strictly in (0,1), got {a}"
        )));
    }
    let z = upper_quantile(alpha / T::from_f(2.0))?;
    let half = z * variance.sqrt();
    Ok((estimate - half, estimate + half))
}

/// Standardized statistic `T = (estimate - null) / sqrt(V)`.
pub fn test_statistic<T: Scalar>(estimate: T, null_value: T, variance: T) -> Result<T> {
    if !(variance > T::zero()) {
        return Err(Error::Argument(format!(
            "variance must be positive (got {})",
            variance.to_f()
        )));
    }
    Ok((estimate - null_value) / variance.sqrt())
}

/// One-sided test of `H0: c'theta <= null_value`: rejects when
/// `estimate - null_value >= z_alpha sqrt(V)`.
pub fn one_sided_reject<T: Scalar>(
    estimate: T,
    null_value: T,
    variance: T,
    alpha: T,
) -> Result<bool> {
    if !(variance > T::zero()) {
        return Err(Error::Argument("variance must be positive".into()));
    }
    let z = upper_quantile(alpha)?;
    Ok(estimate - null_value >= z * variance.sqrt())
}

/// Bonferroni cutoff for `j_count` two-sided tests at family level `alpha`:
/// the upper `alpha / (2 j_count)` quantile.
pub fn bonferroni_threshold<T: Scalar>(j_count: usize, alpha: T) -> Result<T> {
    if j_count == 0 {
        return Err(Error::Argument("j_count must be >= 1".into()));
    }
    upper_quantile(alpha / T::from_f(2.0 * j_count as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MultipleTestMethod {
    Bonferroni,
    Bh,
}

/// Which hypotheses a multiple-testing procedure rejects.
#[derive(Debug, Clone)]
pub struct MultipleTestResult<T: Scalar> {
    pub method: MultipleTestMethod,
    /// Cutoff applied to `|T_j|`.
    pub threshold: T,
    /// Indices with `|T_j| >= threshold`.
    pub rejected: Vec<usize>,
    pub alpha: T,
}

/// BH-type cutoff: the smallest `kappa` in `[0, sqrt(2 log J - 2 log log J)]`
/// with estimated false-discovery proportion
/// `J (2 - 2 Phi(kappa)) / max(#{|T_j| >= kappa}, 1) <= alpha`.
///
/// The rejection count is piecewise constant in `kappa`, so the infimum is
/// found per segment in closed form through the normal quantile. When no
/// `kappa` in range qualifies the cutoff falls back to `sqrt(2 log J)`;
/// families smaller than three fall back to Bonferroni.
pub fn bh_cutoff<T: Scalar>(t_stats: &[T], alpha: T) -> Result<MultipleTestResult<T>> {
    if t_stats.is_empty() {
        return Err(Error::Argument("no test statistics supplied".into()));
    }
    let a = alpha.to_f();
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Argument(format!(
            "alpha must lie strictly in (0,1), got {a}"
        )));
    }
    let j = t_stats.len();
    let abs: Vec<f64> = t_stats.iter().map(|t| t.to_f().abs()).collect();
    if j < 3 {
        let threshold = bonferroni_threshold(j, alpha)?;
        let thr = threshold.to_f();
        return Ok(MultipleTestResult {
            method: MultipleTestMethod::Bonferroni,
            threshold,
            rejected: rejected_at(&abs, thr),
            alpha,
        });
    }

    let jf = j as f64;
    let bound = (2.0 * jf.ln() - 2.0 * jf.ln().ln()).sqrt();
    let count_at_least = |kappa: f64| abs.iter().filter(|&&v| v >= kappa).count();

    let mut kappa_hat: Option<f64> = None;
    // ratio at zero: every statistic is counted
    let ratio0 = jf / count_at_least(0.0).max(1) as f64;
    if ratio0 <= a {
        kappa_hat = Some(0.0);
    } else {
        // segment boundaries: distinct |T_j| inside (0, bound), then bound
        let mut cuts: Vec<f64> = abs
            .iter()
            .copied()
            .filter(|&v| v > 0.0 && v < bound)
            .collect();
        cuts.sort_by(|x, y| x.total_cmp(y));
        cuts.dedup();
        cuts.push(bound);
        let mut lo = 0.0f64;
        for hi in cuts {
            // on (lo, hi] the rejection count equals #{|T_j| >= hi}
            let c_eff = count_at_least(hi).max(1) as f64;
            let z_star: f64 = upper_quantile(a * c_eff / (2.0 * jf))?;
            let candidate = z_star.max(lo);
            if candidate <= hi {
                kappa_hat = Some(candidate);
                break;
            }
            lo = hi;
        }
    }
    let (threshold, method) = match kappa_hat {
        Some(k) => (k, MultipleTestMethod::Bh),
        // standard convention when the estimated FDP never drops below alpha
        None => ((2.0 * jf.ln()).sqrt(), MultipleTestMethod::Bh),
    };
    Ok(MultipleTestResult {
        method,
        threshold: T::from_f(threshold),
        rejected: rejected_at(&abs, threshold),
        alpha,
    })
}

fn rejected_at(abs: &[f64], threshold: f64) -> Vec<usize> {
    abs.iter()
        .enumerate()
        .filter_map(|(idx, &v)| (v >= threshold).then_some(idx))
        .collect()
}

/// Greedy scan order for the independent-set construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GreedyOrder {
    Ascending,
    Random,
}

/// Knobs of the two-step pipeline.
#[derive(Debug, Clone)]
pub struct PipelineConfig<T: Scalar> {
    /// Constant in the default penalty `lambda = lambda_c sqrt(log d / n)`.
    pub lambda_c: T,
    /// Explicit penalty overriding the default.
    pub lambda_override: Option<T>,
    pub qp_consts: QpConstants<T>,
    pub solver: SolverOptions<T>,
    pub qp_opts: QpOptions<T>,
    pub greedy_order: GreedyOrder,
    /// Null value for the reported test statistic.
    pub null_value: T,
    /// Refit the selected support without the penalty before debiasing. The
    /// l1 stage then only does model selection; the shrinkage it would leave
    /// in the plug-in values and the logistic weights is removed. On by
    /// default; the refit is skipped when the selected support is empty,
    /// too large for the fitting half, or fails to converge.
    pub refit: bool,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        PipelineConfig {
            lambda_c: T::from_f(2.0),
            lambda_override: None,
            qp_consts: QpConstants::default(),
            solver: SolverOptions::default(),
            qp_opts: QpOptions::default(),
            greedy_order: GreedyOrder::Ascending,
            null_value: T::zero(),
            refit: true,
        }
    }
}

/// Everything the pipeline computes before it sees a functional: the split,
/// the first-stage fit, and the weighted design on the correction half.
/// Reused across targets when several functionals are tested on one dataset.
#[derive(Debug, Clone)]
pub struct PipelineState<T: Scalar> {
    pub split: VertexSplit,
    pub fit: MpleFit<T>,
    pub ctx: ProjectionContext<T>,
}

/// Run the target-independent pipeline stages: greedy strong independent
/// set, random split, penalized fit on the first half, weighted design on
/// the second.
pub fn prepare_pipeline<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    cfg: &PipelineConfig<T>,
    rng: &mut R,
) -> Result<PipelineState<T>> {
    if data.n() != h.vertex_count() {
        return Err(Error::Argument(format!(
            "dataset has {} rows but the graph has {} vertices",
            data.n(),
            h.vertex_count()
        ))
        .in_stage("independent-set"));
    }
    let n = data.n();
    let order = match cfg.greedy_order {
        GreedyOrder::Ascending => ascending_order(n),
        GreedyOrder::Random => random_order(n, rng),
    };
    let s = greedy_strong_independent_set(h, &order).map_err(|e| e.in_stage("independent-set"))?;
    let split = split_independent_set(&s, rng).map_err(|e| e.in_stage("split"))?;
    let lambda = cfg
        .lambda_override
        .unwrap_or_else(|| lambda_default(n, data.dim(), cfg.lambda_c));
    let mut fit =
        fit_mple(data, h, &split.s1, lambda, &cfg.solver).map_err(|e| e.in_stage("fit"))?;
    if cfg.refit {
        let support: Vec<usize> = fit
            .theta_tilde
            .iter()
            .enumerate()
            .filter_map(|(k, &v)| (v != T::zero()).then_some(k))
            .collect();
        if !support.is_empty() && 3 * support.len() <= split.s1.len() {
            match refit_on_support(data, h, &split.s1, &support, &cfg.solver) {
                Ok(refit) if refit.converged => {
                    fit = MpleFit {
                        lambda: fit.lambda,
                        ..refit
                    };
                }
                // an ill-behaved refit (separation, non-convergence) falls
                // back to the penalized solution
                _ => {}
            }
        }
    }
    let ctx = ProjectionContext::new(data, &split.s2, fit.theta_tilde.view(), h)
        .map_err(|e| e.in_stage("projection"))?;
    Ok(PipelineState { split, fit, ctx })
}

/// Per-report diagnostics from the pipeline stages.
#[derive(Debug, Clone)]
pub struct PipelineDiagnostics<T: Scalar> {
    pub fit_lambda: T,
    pub fit_kkt_residual: T,
    pub fit_iterations: usize,
    pub fit_converged: bool,
    pub projection_inflations: usize,
    /// Constraint slacks `(inf, scalar, max)` at the returned direction.
    pub projection_residuals: (T, T, T),
    pub set_size: usize,
    pub s1_size: usize,
    pub s2_size: usize,
}

/// Full inference report for a linear functional `c' theta`.
#[derive(Debug, Clone)]
pub struct LinearInference<T: Scalar> {
    pub c: Array1<T>,
    pub estimate: T,
    pub variance: T,
    pub ci_lo: T,
    pub ci_hi: T,
    pub alpha: T,
    /// Standardized statistic against the configured null value.
    pub t_stat: T,
    pub p_value: T,
    pub diagnostics: PipelineDiagnostics<T>,
}

impl<T: Scalar> LinearInference<T> {
    pub fn covers(&self, truth: T) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }

    pub fn ci_length(&self) -> T {
        self.ci_hi - self.ci_lo
    }

    /// JSON report with the fixed schema used by the CLI.
    pub fn report_json(&self, functional: serde_json::Value) -> serde_json::Value {
        json!({
            "functional": functional,
            "estimate": self.estimate.to_f(),
            "variance": self.variance.to_f(),
            "ci": [self.ci_lo.to_f(), self.ci_hi.to_f()],
            "t_stat": self.t_stat.to_f(),
            "p_value": self.p_value.to_f(),
            "projection": {
                "inflations": self.diagnostics.projection_inflations,
                "residuals": {
                    "inf": self.diagnostics.projection_residuals.0.to_f(),
                    "scalar": self.diagnostics.projection_residuals.1.to_f(),
                    "max": self.diagnostics.projection_residuals.2.to_f(),
                },
            },
            "fit": {
                "lambda": self.diagnostics.fit_lambda.to_f(),
                "kkt_residual": self.diagnostics.fit_kkt_residual.to_f(),
            },
        })
    }
}

/// Inference for one linear functional against a prepared pipeline state.
pub fn infer_linear_for_target<T: Scalar>(
    state: &PipelineState<T>,
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    c: ArrayView1<'_, T>,
    alpha: T,
    cfg: &PipelineConfig<T>,
) -> Result<LinearInference<T>> {
    infer_linear_detailed(state, data, h, c, alpha, cfg).map(|(li, _)| li)
}

/// As [`infer_linear_for_target`], additionally returning the projection
/// (the harness uses its direction for oracle-variance diagnostics).
pub fn infer_linear_detailed<T: Scalar>(
    state: &PipelineState<T>,
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    c: ArrayView1<'_, T>,
    alpha: T,
    cfg: &PipelineConfig<T>,
) -> Result<(LinearInference<T>, ProjectionResult<T>)> {
    let spec = build_constraint_spec(c, data.n(), data.dim(), cfg.qp_consts)
        .map_err(|e| e.in_stage("projection"))?;
    let proj = solve_projection_with(&state.ctx, &spec, &cfg.qp_opts)
        .map_err(|e| e.in_stage("projection"))?;
    let estimate = debias_linear(c, &state.fit, &proj, data, &state.split.s2, h)
        .map_err(|e| e.in_stage("debias"))?;
    let variance = estimate_variance(&proj, &state.fit, data, &state.split.s2, h)
        .map_err(|e| e.in_stage("variance"))?;
    let (ci_lo, ci_hi) = conf_interval(estimate, variance, alpha)?;
    let t_stat = test_statistic(estimate, cfg.null_value, variance)?;
    let report = LinearInference {
        c: c.to_owned(),
        estimate,
        variance,
        ci_lo,
        ci_hi,
        alpha,
        t_stat,
        p_value: two_sided_p_value(t_stat),
        diagnostics: diagnostics(state, &proj),
    };
    Ok((report, proj))
}

fn diagnostics<T: Scalar>(
    state: &PipelineState<T>,
    proj: &ProjectionResult<T>,
) -> PipelineDiagnostics<T> {
    PipelineDiagnostics {
        fit_lambda: state.fit.lambda,
        fit_kkt_residual: state.fit.kkt_residual,
        fit_iterations: state.fit.iterations,
        fit_converged: state.fit.converged,
        projection_inflations: proj.inflations,
        projection_residuals: (proj.residual_inf, proj.residual_scalar, proj.residual_max),
        set_size: state.split.s_full.len(),
        s1_size: state.split.s1.len(),
        s2_size: state.split.s2.len(),
    }
}

/// End-to-end inference for `c' theta`: independent set, split, fit,
/// projection, debias, variance, interval, test.
pub fn infer_linear_pipeline<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    c: ArrayView1<'_, T>,
    alpha: T,
    cfg: &PipelineConfig<T>,
    rng: &mut R,
) -> Result<LinearInference<T>> {
    let state = prepare_pipeline(data, h, cfg, rng)?;
    infer_linear_for_target(&state, data, h, c, alpha, cfg)
}

/// Dependence-blind comparator: the identical machinery run with no
/// interaction field (`m_i = 0`), fitting on a random half of all vertices
/// and debiasing on the other half.
pub fn baseline_pipeline<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    c: ArrayView1<'_, T>,
    alpha: T,
    cfg: &PipelineConfig<T>,
    rng: &mut R,
) -> Result<LinearInference<T>> {
    let edgeless = Hypergraph::edgeless(data.n());
    infer_linear_pipeline(data, &edgeless, c, alpha, cfg, rng)
}

/// Inference report for a quadratic functional `theta' M theta`.
#[derive(Debug, Clone)]
pub struct QuadraticInference<T: Scalar> {
    pub m_matrix: Array2<T>,
    /// Debiased estimate before truncation.
    pub q_tilde: T,
    /// Truncated estimate `max(q_tilde, 0)`.
    pub q_hat: T,
    /// Variance with the `1/n` remainder floor added.
    pub variance: T,
    pub ci_lo: T,
    pub ci_hi: T,
    pub alpha: T,
    pub diagnostics: Option<PipelineDiagnostics<T>>,
}

impl<T: Scalar> QuadraticInference<T> {
    pub fn covers(&self, truth: T) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }

    pub fn report_json(&self, functional: serde_json::Value) -> serde_json::Value {
        let mut out = json!({
            "functional": functional,
            "estimate": self.q_hat.to_f(),
            "q_tilde": self.q_tilde.to_f(),
            "variance": self.variance.to_f(),
            "ci": [self.ci_lo.to_f(), self.ci_hi.to_f()],
        });
        if let Some(d) = &self.diagnostics {
            out["projection"] = json!({
                "inflations": d.projection_inflations,
                "residuals": {
                    "inf": d.projection_residuals.0.to_f(),
                    "scalar": d.projection_residuals.1.to_f(),
                    "max": d.projection_residuals.2.to_f(),
                },
            });
            out["fit"] = json!({
                "lambda": d.fit_lambda.to_f(),
                "kkt_residual": d.fit_kkt_residual.to_f(),
            });
        }
        out
    }
}

fn check_spd<T: Scalar>(m: &ArrayView2<'_, T>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::Argument("M must be square".into()));
    }
    let asym = m
        .iter()
        .zip(m.t().iter())
        .map(|(a, b)| (*a - *b).abs())
        .fold(T::zero(), T::max);
    if asym > T::from_f(1e-10) {
        return Err(Error::Argument(format!(
            "M is asymmetric (max |M - M'| = {})",
            asym.to_f()
        )));
    }
    cholesky_lower(m.view())
        .map_err(|_| Error::Argument("M is not positive definite".into()))?;
    Ok(())
}

/// Debiased inference for `Q = theta' M theta` given a projection computed
/// for the target `M theta_tilde`:
/// `Q_tilde = theta_tilde' M theta_tilde + (4/|S2|) sum (ybar_i - f(v_i)) u' x_i`,
/// truncated at zero, with variance
/// `(16/|S2|^2) sum f(v_i)(1 - f(v_i)) (u' x_i)^2 + 1/n`.
pub fn debias_quadratic<T: Scalar>(
    m_matrix: ArrayView2<'_, T>,
    fit: &MpleFit<T>,
    proj_m: &ProjectionResult<T>,
    data: &Dataset<T>,
    s2: &[usize],
    h: &Hypergraph<T>,
    alpha: T,
) -> Result<QuadraticInference<T>> {
    check_spd(&m_matrix)?;
    if m_matrix.nrows() != data.dim() {
        return Err(Error::Argument(format!(
            "M is {}x{} but the data dimension is {}",
            m_matrix.nrows(),
            m_matrix.ncols(),
            data.dim()
        )));
    }
    let plug_in = fit.theta_tilde.dot(&m_matrix.dot(&fit.theta_tilde));
    let correction = residual_projection_sum(fit, proj_m, data, s2, h)?;
    let q_tilde = plug_in + T::from_f(4.0) * correction;
    let q_hat = q_tilde.max(T::zero());
    // 16 f(1-f) = 4 * [4 f(1-f)]
    let variance = T::from_f(4.0) * variance_sum(&proj_m.u_hat, &fit.theta_tilde, data, s2, h)?
        / T::from_f((s2.len() * s2.len()) as f64)
        + T::one() / T::from_f(data.n() as f64);
    let z = upper_quantile(alpha / T::from_f(2.0))?;
    let half = z * variance.sqrt();
    Ok(QuadraticInference {
        m_matrix: m_matrix.to_owned(),
        q_tilde,
        q_hat,
        variance,
        ci_lo: (q_hat - half).max(T::zero()),
        ci_hi: q_hat + half,
        alpha,
        diagnostics: None,
    })
}

/// Quadratic-functional inference against a prepared pipeline state.
///
/// A first stage that selected nothing (`theta_tilde = 0`) makes the
/// projection target `M theta_tilde` vanish; the report then degenerates to
/// the zero estimate with the `1/n` variance floor instead of failing, so
/// batch experiments keep running.
pub fn infer_quadratic_for_target<T: Scalar>(
    state: &PipelineState<T>,
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    m_matrix: ArrayView2<'_, T>,
    alpha: T,
    cfg: &PipelineConfig<T>,
) -> Result<QuadraticInference<T>> {
    check_spd(&m_matrix)?;
    let target = m_matrix.dot(&state.fit.theta_tilde);
    let norm = target.dot(&target).sqrt();
    if !(norm > T::zero()) {
        let variance = T::one() / T::from_f(data.n() as f64);
        let z = upper_quantile(alpha / T::from_f(2.0))?;
        return Ok(QuadraticInference {
            m_matrix: m_matrix.to_owned(),
            q_tilde: T::zero(),
            q_hat: T::zero(),
            variance,
            ci_lo: T::zero(),
            ci_hi: z * variance.sqrt(),
            alpha,
            diagnostics: None,
        });
    }
    let spec = build_constraint_spec(target.view(), data.n(), data.dim(), cfg.qp_consts)
        .map_err(|e| e.in_stage("projection"))?;
    let proj = solve_projection_with(&state.ctx, &spec, &cfg.qp_opts)
        .map_err(|e| e.in_stage("projection"))?;
    let mut out = debias_quadratic(m_matrix, &state.fit, &proj, data, &state.split.s2, h, alpha)
        .map_err(|e| e.in_stage("debias"))?;
    out.diagnostics = Some(diagnostics(state, &proj));
    Ok(out)
}

/// End-to-end quadratic-functional inference.
pub fn infer_quadratic_pipeline<T: Scalar, R: Rng + ?Sized>(
    data: &Dataset<T>,
    h: &Hypergraph<T>,
    m_matrix: ArrayView2<'_, T>,
    alpha: T,
    cfg: &PipelineConfig<T>,
    rng: &mut R,
) -> Result<QuadraticInference<T>> {
    let state = prepare_pipeline(data, h, cfg, rng)?;
    infer_quadratic_for_target(&state, data, h, m_matrix, alpha, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{from_ising, lattice2d};
    use crate::mrf::{gibbs_sampler, sample_covariates, CovariateSpec, ModelSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stub_fit(theta: Array1<f64>) -> MpleFit<f64> {
        MpleFit {
            theta_tilde: theta,
            lambda: 0.0,
            iterations: 0,
            objective: 0.0,
            kkt_residual: 0.0,
            converged: true,
        }
    }

    fn stub_proj(u: Array1<f64>) -> ProjectionResult<f64> {
        ProjectionResult {
            u_hat: u,
            objective: 0.0,
            residual_inf: 0.0,
            residual_scalar: 0.0,
            residual_max: 0.0,
            inflations: 0,
            iterations: 0,
        }
    }

    #[test]
    fn debias_hand_instance() {
        // theta = (0), c = (1), u = (1), X = ((1), (-1)), y = (+1, -1),
        // no edges: 0 + (2/2) [ (1 - 1/2)*1 + (0 - 1/2)*(-1) ] = 1
        let data = Dataset::new(array![[1.0], [-1.0]], array![1.0, -1.0]).unwrap();
        let h = Hypergraph::<f64>::edgeless(2);
        let fit = stub_fit(array![0.0]);
        let proj = stub_proj(array![1.0]);
        let est = debias_linear(array![1.0].view(), &fit, &proj, &data, &[0, 1], &h).unwrap();
        assert_abs_diff_eq!(est, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn debias_reduces_to_plug_in_when_residuals_cancel() {
        // two vertices with equal covariates and opposite responses at
        // v_i = 0: the residuals +1/2 and -1/2 cancel exactly
        let data = Dataset::new(array![[2.0], [2.0]], array![1.0, -1.0]).unwrap();
        let h = Hypergraph::<f64>::edgeless(2);
        let fit = stub_fit(array![0.0]);
        let proj = stub_proj(array![3.0]);
        let c = array![5.0];
        let est = debias_linear(c.view(), &fit, &proj, &data, &[0, 1], &h).unwrap();
        assert_abs_diff_eq!(est, c.dot(&fit.theta_tilde), epsilon = 1e-15);
    }

    #[test]
    fn debias_ignores_vertices_orthogonal_to_u() {
        let h3 = Hypergraph::<f64>::edgeless(3);
        let h2 = Hypergraph::<f64>::edgeless(2);
        let data3 = Dataset::new(
            array![[1.0, 0.0], [-1.0, 0.5], [0.0, 1.0]],
            array![1.0, -1.0, 1.0],
        )
        .unwrap();
        let data2 = Dataset::new(array![[1.0, 0.0], [-1.0, 0.5]], array![1.0, -1.0]).unwrap();
        let fit = stub_fit(array![0.2, -0.1]);
        let proj = stub_proj(array![1.0, 0.0]);
        let c = array![1.0, 1.0];
        // vertex 2 has u'x = 0, so the correction sums match up to the
        // 1/|S2| normalization
        let est3 = debias_linear(c.view(), &fit, &proj, &data3, &[0, 1, 2], &h3).unwrap();
        let est2 = debias_linear(c.view(), &fit, &proj, &data2, &[0, 1], &h2).unwrap();
        let plug = c.dot(&fit.theta_tilde);
        assert_abs_diff_eq!(est3 - plug, (est2 - plug) * 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn variance_examples() {
        let h = Hypergraph::<f64>::edgeless(4);
        let data = Dataset::new(
            array![[1.0], [1.0], [1.0], [1.0]],
            array![1.0, -1.0, 1.0, -1.0],
        )
        .unwrap();
        let fit = stub_fit(array![0.0]);
        // u = 0 -> degenerate
        assert!(matches!(
            estimate_variance(&stub_proj(array![0.0]), &fit, &data, &[0, 1, 2, 3], &h),
            Err(Error::DegenerateVariance)
        ));
        // v = 0, u'x = 1, |S2| = 4 -> 1/4
        let v = estimate_variance(&stub_proj(array![1.0]), &fit, &data, &[0, 1, 2, 3], &h)
            .unwrap();
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        // scaling u by 3 scales the variance by 9
        let v9 = estimate_variance(&stub_proj(array![3.0]), &fit, &data, &[0, 1, 2, 3], &h)
            .unwrap();
        assert_abs_diff_eq!(v9, 9.0 * v, epsilon = 1e-14);
    }

    #[test]
    fn interval_reference_values() {
        let (lo, hi) = conf_interval(0.0, 1.0, 0.05f64).unwrap();
        assert_abs_diff_eq!(lo, -1.959_963_984_540_054, epsilon = 1e-9);
        assert_abs_diff_eq!(hi, 1.959_963_984_540_054, epsilon = 1e-9);
        // length identity
        let (lo, hi) = conf_interval(0.3, 0.25, 0.05f64).unwrap();
        assert_abs_diff_eq!(
            hi - lo,
            2.0 * 1.959_963_984_540_054 * 0.5,
            epsilon = 1e-9
        );
        // alpha near 1 collapses onto the estimate
        let (lo, hi) = conf_interval(0.3, 0.25, 0.999_99f64).unwrap();
        assert!(hi - lo < 1e-4);
        assert!(lo <= 0.3 && 0.3 <= hi);
        assert!(conf_interval(0.0, 0.0, 0.05f64).is_err());
        assert!(conf_interval(0.0, 1.0, 1.0f64).is_err());
    }

    #[test]
    fn test_statistic_examples() {
        assert_eq!(test_statistic(1.0, 1.0, 4.0f64).unwrap(), 0.0);
        assert_eq!(two_sided_p_value(0.0f64), 1.0);
        let t = test_statistic(1.0, 0.0, 0.25f64).unwrap();
        assert_abs_diff_eq!(t, 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(two_sided_p_value(t), 0.045_500_263_896_358, epsilon = 1e-12);
        // joint scaling leaves T unchanged
        let t2 = test_statistic(3.0, 0.0, 2.25f64).unwrap();
        assert_abs_diff_eq!(t2, 2.0, epsilon = 1e-14);
        assert!(test_statistic(1.0, 0.0, 0.0f64).is_err());
    }

    #[test]
    fn one_sided_rule() {
        // z_{0.05} = 1.6449; estimate 1.7 with unit variance rejects
        assert!(one_sided_reject(1.7, 0.0, 1.0, 0.05f64).unwrap());
        assert!(!one_sided_reject(1.6, 0.0, 1.0, 0.05f64).unwrap());
    }

    #[test]
    fn bonferroni_reference_values() {
        assert_abs_diff_eq!(
            bonferroni_threshold(1, 0.05f64).unwrap(),
            1.959_963_984_540_054,
            epsilon = 1e-9
        );
        assert_abs_diff_eq!(
            bonferroni_threshold(10, 0.05f64).unwrap(),
            2.807_033_768_343_804,
            epsilon = 1e-9
        );
        let mut prev = 0.0;
        for j in 1..40 {
            let t = bonferroni_threshold(j, 0.05f64).unwrap();
            assert!(t > prev);
            prev = t;
        }
        assert!(bonferroni_threshold(0, 0.05f64).is_err());
    }

    #[test]
    fn bh_all_large_statistics() {
        let t = vec![10.0f64; 100];
        let res = bh_cutoff(&t, 0.05).unwrap();
        assert_eq!(res.method, MultipleTestMethod::Bh);
        assert_abs_diff_eq!(res.threshold, 1.959_963_984_540_054, epsilon = 1e-5);
        assert_eq!(res.rejected.len(), 100);
    }

    #[test]
    fn bh_all_zero_statistics_fall_back() {
        let t = vec![0.0f64; 100];
        let res = bh_cutoff(&t, 0.05).unwrap();
        assert_abs_diff_eq!(
            res.threshold,
            (2.0 * 100.0f64.ln()).sqrt(),
            epsilon = 1e-12
        );
        assert!(res.rejected.is_empty());
    }

    #[test]
    fn bh_rejected_set_matches_threshold() {
        let t = vec![0.5, 3.2, -4.0, 1.1, 2.9, 0.0, -2.6, 5.5];
        let res = bh_cutoff(&t, 0.1f64).unwrap();
        let expect: Vec<usize> = t
            .iter()
            .enumerate()
            .filter_map(|(i, &v)| (v.abs() >= res.threshold).then_some(i))
            .collect();
        assert_eq!(res.rejected, expect);
    }

    #[test]
    fn bh_small_families_use_bonferroni() {
        let t = vec![3.0f64, 0.1];
        let res = bh_cutoff(&t, 0.05).unwrap();
        assert_eq!(res.method, MultipleTestMethod::Bonferroni);
        assert_abs_diff_eq!(
            res.threshold,
            bonferroni_threshold(2, 0.05f64).unwrap(),
            epsilon = 1e-12
        );
        assert!(bh_cutoff::<f64>(&[], 0.05).is_err());
    }

    #[test]
    fn bh_segment_scan_matches_dense_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let j = 5 + (rng.gen::<u64>() % 60) as usize;
            let t: Vec<f64> = (0..j).map(|_| f64::standard_normal(&mut rng) * 1.8).collect();
            let alpha = 0.05 + 0.2 * rng.gen::<f64>();
            let res = bh_cutoff(&t, alpha).unwrap();

            // dense-grid reference for the infimum
            let jf = j as f64;
            let bound = (2.0 * jf.ln() - 2.0 * jf.ln().ln()).sqrt();
            let ratio = |kappa: f64| {
                let tail = 2.0 - 2.0 * normal_cdf(kappa);
                let count = t.iter().filter(|v| v.abs() >= kappa).count().max(1);
                jf * tail / count as f64
            };
            let steps = 200_000;
            let grid_kappa = (0..=steps)
                .map(|i| bound * i as f64 / steps as f64)
                .find(|&k| ratio(k) <= alpha);
            match grid_kappa {
                Some(k) => {
                    assert!(
                        (res.threshold - k).abs() <= 2.0 * bound / steps as f64 + 1e-9,
                        "kappa {} vs grid {k}",
                        res.threshold
                    );
                }
                None => {
                    assert_abs_diff_eq!(
                        res.threshold,
                        (2.0 * jf.ln()).sqrt(),
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn quadratic_zero_residual_recovers_plug_in() {
        // covariates orthogonal to theta keep v = 0; equal rows with
        // opposite responses then cancel the correction exactly
        let data = Dataset::new(array![[0.8, 0.6], [0.8, 0.6]], array![1.0, -1.0]).unwrap();
        let h = Hypergraph::<f64>::edgeless(2);
        let fit = stub_fit(array![0.6, -0.8]);
        let proj = stub_proj(array![1.0, 0.0]);
        let m = Array2::<f64>::eye(2);
        let out =
            debias_quadratic(m.view(), &fit, &proj, &data, &[0, 1], &h, 0.05).unwrap();
        assert_abs_diff_eq!(out.q_hat, 1.0, epsilon = 1e-12);
        assert!(out.variance >= 0.5 - 1e-15); // 1/n floor with n = 2
    }

    #[test]
    fn quadratic_truncation_clamps_at_zero() {
        // single vertex with a strongly negative residual drives q_tilde
        // below zero; the estimate and the lower endpoint clamp at 0
        let data = Dataset::new(array![[4.0], [0.0]], array![-1.0, 1.0]).unwrap();
        let h = Hypergraph::<f64>::edgeless(2);
        let fit = stub_fit(array![0.1]);
        let proj = stub_proj(array![1.0]);
        let m = Array2::<f64>::eye(1);
        let out = debias_quadratic(m.view(), &fit, &proj, &data, &[0], &h, 0.05).unwrap();
        assert!(out.q_tilde < 0.0);
        assert_eq!(out.q_hat, 0.0);
        assert_eq!(out.ci_lo, 0.0);
        assert!(out.ci_hi > 0.0);
        assert!(out.variance >= 0.5);
    }

    #[test]
    fn quadratic_rejects_bad_m() {
        let data = Dataset::new(array![[1.0, 0.0], [0.0, 1.0]], array![1.0, -1.0]).unwrap();
        let h = Hypergraph::<f64>::edgeless(2);
        let fit = stub_fit(array![0.5, 0.5]);
        let proj = stub_proj(array![1.0, 0.0]);
        let asym = array![[1.0, 0.5], [0.0, 1.0]];
        assert!(
            debias_quadratic(asym.view(), &fit, &proj, &data, &[0], &h, 0.05).is_err()
        );
        let indef = array![[1.0, 2.0], [2.0, 1.0]];
        assert!(
            debias_quadratic(indef.view(), &fit, &proj, &data, &[0], &h, 0.05).is_err()
        );
    }

    /// Simulated lattice instance for pipeline-level tests.
    fn pipeline_instance(seed: u64) -> (Dataset<f64>, Hypergraph<f64>) {
        let h = from_ising(&lattice2d::<f64>(8, 8).unwrap(), 0.2, 0.25).unwrap();
        let d = 6;
        let mut theta = Array1::<f64>::zeros(d);
        theta[0] = 1.0;
        theta[1] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = sample_covariates(64, &CovariateSpec::ar(d, 0.2).unwrap(), &mut rng).unwrap();
        let model = ModelSpec::new(h.clone(), theta).unwrap();
        let y = gibbs_sampler(&model, &x.view(), 400, &mut rng, None).unwrap();
        (Dataset::new(x, y).unwrap(), h)
    }

    #[test]
    fn pipeline_is_deterministic_and_sane() {
        let (data, h) = pipeline_instance(42);
        let mut c = Array1::<f64>::zeros(6);
        c[1] = 1.0;
        let cfg = PipelineConfig::default();
        let a = infer_linear_pipeline(
            &data,
            &h,
            c.view(),
            0.05,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        let b = infer_linear_pipeline(
            &data,
            &h,
            c.view(),
            0.05,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        assert_eq!(a.estimate, b.estimate);
        assert_eq!(a.ci_lo, b.ci_lo);
        assert_eq!(a.variance, b.variance);

        assert!(a.ci_lo < a.ci_hi);
        assert!(a.variance > 0.0);
        assert!(a.p_value >= 0.0 && a.p_value <= 1.0);
        assert!(a.ci_lo <= a.estimate && a.estimate <= a.ci_hi);
        assert_eq!(a.diagnostics.s1_size + a.diagnostics.s2_size, a.diagnostics.set_size);

        let report = a.report_json(json!({"kind": "coordinate", "index": 1}));
        assert_eq!(report["estimate"].as_f64().unwrap(), a.estimate);
        assert_eq!(report["ci"][0].as_f64().unwrap(), a.ci_lo);
        assert!(report["fit"]["lambda"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn baseline_runs_on_the_same_data() {
        let (data, _) = pipeline_instance(43);
        let mut c = Array1::<f64>::zeros(6);
        c[1] = 1.0;
        let cfg = PipelineConfig::default();
        let out = baseline_pipeline(
            &data,
            c.view(),
            0.05,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(9),
        )
        .unwrap();
        assert!(out.ci_lo < out.ci_hi);
        // baseline uses all vertices: the two halves partition [0, n)
        assert_eq!(out.diagnostics.set_size, data.n());
    }

    #[test]
    fn quadratic_pipeline_runs_and_respects_invariants() {
        let (data, h) = pipeline_instance(44);
        let m = Array2::<f64>::eye(6);
        let cfg = PipelineConfig::default();
        let out = infer_quadratic_pipeline(
            &data,
            &h,
            m.view(),
            0.05,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(11),
        )
        .unwrap();
        assert!(out.q_hat >= 0.0);
        assert!(out.ci_lo >= 0.0);
        assert!(out.variance >= 1.0 / data.n() as f64);
        assert!(out.ci_lo <= out.ci_hi);
    }

    #[test]
    fn quadratic_degenerate_fit_falls_back_to_floor_variance() {
        let (data, h) = pipeline_instance(45);
        let m = Array2::<f64>::eye(6);
        // an enormous penalty forces theta_tilde = 0
        let cfg = PipelineConfig {
            lambda_override: Some(100.0),
            ..PipelineConfig::default()
        };
        let out = infer_quadratic_pipeline(
            &data,
            &h,
            m.view(),
            0.05,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(13),
        )
        .unwrap();
        assert_eq!(out.q_hat, 0.0);
        assert_eq!(out.ci_lo, 0.0);
        assert_abs_diff_eq!(out.variance, 1.0 / data.n() as f64, epsilon = 1e-15);
    }

    #[test]
    fn pipeline_errors_carry_stage_labels() {
        let (data, _) = pipeline_instance(46);
        // graph with the wrong vertex count fails in the first stage
        let wrong = Hypergraph::<f64>::edgeless(3);
        let mut c = Array1::<f64>::zeros(6);
        c[0] = 1.0;
        let err = infer_linear_pipeline(
            &data,
            &wrong,
            c.view(),
            0.05,
            &PipelineConfig::default(),
            &mut ChaCha8Rng::seed_from_u64(1),
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("stage `independent-set`"));
    }
}
