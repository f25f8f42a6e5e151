//! The dependent-response model: local fields, conditional probabilities,
//! Gibbs sampling, an exact small-`n` oracle, and covariate generation.
//!
//! Responses `y in {-1,+1}^n` follow the law
//! `P(y | X) ∝ exp( sum_e g_e * prod_{i in e} y_i + sum_i y_i x_i' theta )`,
//! so conditionally on the rest each site is a logistic draw with linear
//! predictor `v_i = m_i(y) + x_i' theta`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Hypergraph;
use crate::linalg::cholesky_lower;
use crate::scalar::Scalar;

/// Hard cap on exact enumeration: `2^20` configurations.
const EXACT_MAX_VERTICES: usize = 20;

/// Overflow-safe logistic function `f(x) = e^x / (e^x + e^{-x})`.
///
/// Computed as `1 / (1 + e^{-2|x|})` on the reflected argument and
/// complemented for negative `x`, which makes `f(x) + f(-x) == 1` hold
/// exactly in floating point (the complement `1 - p` with `p in [0.5, 1)`
/// is an exact subtraction).
pub fn f_sigmoid<T: Scalar>(x: T) -> T {
    let p = T::one() / (T::one() + (-T::from_f(2.0) * x.abs()).exp());
    if x >= T::zero() {
        p
    } else {
        T::one() - p
    }
}

/// Stable `log cosh(x) = |x| + log1p(e^{-2|x|}) - log 2`.
pub fn log_cosh<T: Scalar>(x: T) -> T {
    let a = x.abs();
    a + (-T::from_f(2.0) * a).exp().ln_1p() - T::from_f(std::f64::consts::LN_2)
}

/// Local interaction field `m_i(y) = sum_{e: i in e} g_e * prod_{j in e, j != i} y_j`.
pub fn local_field<T: Scalar>(h: &Hypergraph<T>, y: &[T], i: usize) -> Result<T> {
    if i >= h.vertex_count() {
        return Err(Error::Argument(format!(
            "vertex {i} out of range for n = {}",
            h.vertex_count()
        )));
    }
    if y.len() != h.vertex_count() {
        return Err(Error::Argument(format!(
            "response vector has length {}, expected {}",
            y.len(),
            h.vertex_count()
        )));
    }
    Ok(local_field_unchecked(h, y, i))
}

#[inline]
pub(crate) fn local_field_unchecked<T: Scalar>(h: &Hypergraph<T>, y: &[T], i: usize) -> T {
    let mut m = T::zero();
    for &e in h.incident_edges(i) {
        let edge = &h.edges()[e];
        let mut prod = edge.weight;
        for &j in &edge.vertices {
            if j != i {
                prod *= y[j];
            }
        }
        m += prod;
    }
    m
}

/// Graph plus regression parameter: everything that defines the law of `y`.
#[derive(Debug, Clone)]
pub struct ModelSpec<T: Scalar> {
    pub graph: Hypergraph<T>,
    pub theta: Array1<T>,
}

impl<T: Scalar> ModelSpec<T> {
    pub fn new(graph: Hypergraph<T>, theta: Array1<T>) -> Result<Self> {
        if theta.is_empty() {
            return Err(Error::Argument("theta must have dimension >= 1".into()));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("theta contains a non-finite entry".into()));
        }
        Ok(ModelSpec { graph, theta })
    }

    fn check_covariates(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        if x.nrows() != self.graph.vertex_count() || x.ncols() != self.theta.len() {
            return Err(Error::Argument(format!(
                "covariate matrix is {}x{}, model expects {}x{}",
                x.nrows(),
                x.ncols(),
                self.graph.vertex_count(),
                self.theta.len()
            )));
        }
        Ok(())
    }
}

/// Covariate matrix and response vector, validated on construction.
#[derive(Debug, Clone)]
pub struct Dataset<T: Scalar> {
    x: Array2<T>,
    y: Array1<T>,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Array2<T>, y: Array1<T>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Argument(format!(
                "x has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if y.iter().any(|&v| v != T::one() && v != -T::one()) {
            return Err(Error::Argument(
                "responses must take values in {-1, +1}".into(),
            ));
        }
        Ok(Dataset {
            x: x.as_standard_layout().into_owned(),
            y: y.as_standard_layout().into_owned(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, T> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, T> {
        self.y.view()
    }

    pub fn y_slice(&self) -> &[T] {
        self.y.as_slice().expect("owned y is contiguous")
    }

    pub fn covariate_row(&self, i: usize) -> ArrayView1<'_, T> {
        self.x.row(i)
    }

    /// Response recoded to {0, 1}: `(y_i + 1) / 2`.
    pub fn y_bar(&self, i: usize) -> T {
        (self.y[i] + T::one()) / T::from_f(2.0)
    }

    /// Write `y,x1,..,xd` rows (responses as `-1`/`1` integers).
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.dim()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec = vec![format!("{}", self.y[i].to_f() as i64)];
            rec.extend(self.x.row(i).iter().map(|v| format!("{}", v.to_f())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse the CSV format produced by [`Dataset::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.is_empty() || &headers[0] != "y" {
            return Err(Error::Argument(
                "dataset CSV must start with a `y` column".into(),
            ));
        }
        let d = headers.len() - 1;
        let mut ys: Vec<T> = Vec::new();
        let mut xs: Vec<T> = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != d + 1 {
                return Err(Error::Argument(format!(
                    "dataset CSV row has {} fields, expected {}",
                    record.len(),
                    d + 1
                )));
            }
            let parse = |s: &str| -> Result<T> {
                s.trim()
                    .parse::<f64>()
                    .map(T::from_f)
                    .map_err(|e| Error::Argument(format!("bad number {s:?}: {e}")))
            };
            ys.push(parse(&record[0])?);
            for j in 1..=d {
                xs.push(parse(&record[j])?);
            }
        }
        let n = ys.len();
        let x = Array2::from_shape_vec((n, d), xs)
            .map_err(|e| Error::Argument(format!("bad dataset shape: {e}")))?;
        Dataset::new(x, Array1::from(ys))
    }
}

/// `P(y_i = +1 | y_{-i}, X) = f(m_i(y) + x_i' theta)`.
pub fn conditional_prob_plus<T: Scalar>(
    m: &ModelSpec<T>,
    data: &Dataset<T>,
    i: usize,
) -> Result<T> {
    m.check_covariates(&data.x())?;
    let field = local_field(&m.graph, data.y_slice(), i)?;
    let v = field + data.covariate_row(i).dot(&m.theta);
    Ok(f_sigmoid(v))
}

/// Systematic-scan Gibbs sampler.
///
/// One sweep visits the sites `0..n` in order and resamples each from its
/// conditional; the state after `sweeps` full sweeps is returned. `init`
/// defaults to i.i.d. uniform signs drawn from `rng`.
pub fn gibbs_sampler<T: Scalar, R: Rng + ?Sized>(
    m: &ModelSpec<T>,
    x: &ArrayView2<'_, T>,
    sweeps: usize,
    rng: &mut R,
    init: Option<&[T]>,
) -> Result<Array1<T>> {
    if sweeps == 0 {
        return Err(Error::Argument("sweeps must be >= 1".into()));
    }
    m.check_covariates(x)?;
    let n = m.graph.vertex_count();
    let mut y: Vec<T> = match init {
        Some(y0) => {
            if y0.len() != n {
                return Err(Error::Argument(format!(
                    "init has length {}, expected {n}",
                    y0.len()
                )));
            }
            if y0.iter().any(|&v| v != T::one() && v != -T::one()) {
                return Err(Error::Argument("init entries must be -1 or +1".into()));
            }
            y0.to_vec()
        }
        None => (0..n)
            .map(|_| if rng.gen::<bool>() { T::one() } else { -T::one() })
            .collect(),
    };
    // covariate part of the linear predictor never changes during the scan
    let xtheta = x.dot(&m.theta);
    for _ in 0..sweeps {
        for i in 0..n {
            let v = local_field_unchecked(&m.graph, &y, i) + xtheta[i];
            let p_plus = f_sigmoid(v).to_f();
            y[i] = if rng.gen::<f64>() < p_plus {
                T::one()
            } else {
                -T::one()
            };
        }
    }
    Ok(Array1::from(y))
}

/// Exact model distribution over all `2^n` sign configurations.
///
/// Configuration `k` encodes `y_i = +1` iff bit `i` of `k` is set. Computed
/// with a log-sum-exp normalization; requires `n <= 20`.
pub fn exact_distribution<T: Scalar>(m: &ModelSpec<T>, x: &ArrayView2<'_, T>) -> Result<Vec<T>> {
    m.check_covariates(x)?;
    let n = m.graph.vertex_count();
    if n > EXACT_MAX_VERTICES {
        return Err(Error::Resource(format!(
            "exact enumeration over 2^{n} configurations exceeds the 2^{EXACT_MAX_VERTICES} cap"
        )));
    }
    let xtheta = x.dot(&m.theta);
    let size = 1usize << n;
    let mut logw = Vec::with_capacity(size);
    let mut y = vec![-T::one(); n];
    let mut max_logw = T::neg_infinity();
    for k in 0..size {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = if k & (1 << i) != 0 { T::one() } else { -T::one() };
        }
        let mut w = T::zero();
        for e in m.graph.edges() {
            let mut prod = e.weight;
            for &j in &e.vertices {
                prod *= y[j];
            }
            w += prod;
        }
        for i in 0..n {
            w += y[i] * xtheta[i];
        }
        if w > max_logw {
            max_logw = w;
        }
        logw.push(w);
    }
    let mut probs: Vec<T> = logw.into_iter().map(|w| (w - max_logw).exp()).collect();
    let total: T = probs.iter().copied().sum();
    for p in &mut probs {
        *p /= total;
    }
    Ok(probs)
}

/// Covariate-row distribution: dimension plus covariance structure.
#[derive(Debug, Clone)]
pub struct CovariateSpec<T: Scalar> {
    pub d: usize,
    pub kind: CovarianceKind<T>,
}

#[derive(Debug, Clone)]
pub enum CovarianceKind<T: Scalar> {
    /// Autoregressive covariance `Sigma_ij = rho^|i-j|`.
    Ar { rho: T },
    /// Explicit symmetric positive definite covariance.
    Explicit(Array2<T>),
}

impl<T: Scalar> CovariateSpec<T> {
    pub fn ar(d: usize, rho: T) -> Result<Self> {
        if d == 0 {
            return Err(Error::Argument("covariate dimension must be >= 1".into()));
        }
        if !(rho.abs() < T::one()) {
            return Err(Error::Argument(format!(
                "AR parameter must satisfy |rho| < 1 (got {})",
                rho.to_f()
            )));
        }
        Ok(CovariateSpec {
            d,
            kind: CovarianceKind::Ar { rho },
        })
    }

    /// Explicit covariance; SPD-ness is verified by a Cholesky factorization.
    pub fn explicit(sigma: Array2<T>) -> Result<Self> {
        if sigma.nrows() == 0 || sigma.nrows() != sigma.ncols() {
            return Err(Error::Argument(
                "covariance must be square and nonempty".into(),
            ));
        }
        let asym = sigma
            .iter()
            .zip(sigma.t().iter())
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max);
        if asym > T::from_f(1e-10) {
            return Err(Error::NotSpd(format!(
                "covariance is asymmetric (max |S - S'| = {})",
                asym.to_f()
            )));
        }
        cholesky_lower(sigma.view())?;
        Ok(CovariateSpec {
            d: sigma.nrows(),
            kind: CovarianceKind::Explicit(sigma),
        })
    }

    fn covariance(&self) -> Array2<T> {
        match &self.kind {
            CovarianceKind::Ar { rho } => ar_covariance(self.d, *rho).expect("validated"),
            CovarianceKind::Explicit(s) => s.clone(),
        }
    }
}

/// Autoregressive covariance matrix `Sigma_ij = rho^|i-j|`.
pub fn ar_covariance<T: Scalar>(d: usize, rho: T) -> Result<Array2<T>> {
    if d == 0 {
        return Err(Error::Argument("dimension must be >= 1".into()));
    }
    if !(rho.abs() < T::one()) {
        return Err(Error::Argument(format!(
            "AR parameter must satisfy |rho| < 1 (got {})",
            rho.to_f()
        )));
    }
    let mut sigma = Array2::<T>::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            let lag = i.abs_diff(j) as i32;
            sigma[(i, j)] = rho.powi(lag);
        }
    }
    Ok(sigma)
}

/// Draw `n` i.i.d. rows from `N(0, Sigma)` as `L z` with `L` the lower
/// Cholesky factor of `Sigma` and `z` standard normal.
pub fn sample_covariates<T: Scalar, R: Rng + ?Sized>(
    n: usize,
    spec: &CovariateSpec<T>,
    rng: &mut R,
) -> Result<Array2<T>> {
    let sigma = spec.covariance();
    let l = cholesky_lower(sigma.view())?;
    let d = spec.d;
    let mut x = Array2::<T>::zeros((n, d));
    let mut z = vec![T::zero(); d];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = T::standard_normal(rng);
        }
        for j in 0..d {
            let mut s = T::zero();
            for k in 0..=j {
                s += l[(j, k)] * z[k];
            }
            x[(i, j)] = s;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{from_ising, lattice2d, Hypergraph};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::array;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Hypergraph<f64> {
        Hypergraph::new(
            3,
            [[0, 1], [0, 2], [1, 2]].iter().map(|e| (e.to_vec(), 0.1)),
        )
        .unwrap()
    }

    #[test]
    fn sigmoid_reference_values() {
        assert_eq!(f_sigmoid(0.0f64), 0.5);
        assert_abs_diff_eq!(f_sigmoid(1.0f64), 0.880_797_077_977_882_4, epsilon = 1e-15);
        for x in [0.3f64, 1.0, 5.0] {
            assert_eq!(f_sigmoid(x) + f_sigmoid(-x), 1.0);
        }
    }

    #[test]
    fn sigmoid_complement_is_exact_up_to_30() {
        let mut x = -30.0f64;
        while x <= 30.0 {
            assert_eq!(f_sigmoid(x) + f_sigmoid(-x), 1.0, "x = {x}");
            x += 0.007_812_5;
        }
    }

    #[test]
    fn sigmoid_is_strictly_increasing() {
        // strictly increasing wherever 1 - f(x) is representable, i.e. until
        // e^{-2x} falls below one ulp around 1.0; monotone beyond that
        let mut prev = f_sigmoid(-16.0f64);
        let mut x = -16.0 + 0.05;
        while x <= 16.0 {
            let cur = f_sigmoid(x);
            assert!(cur > prev, "not strictly increasing at {x}");
            prev = cur;
            x += 0.05;
        }
        let mut prev = f_sigmoid(-30.0f64);
        let mut x = -30.0 + 0.05;
        while x <= 30.0 {
            let cur = f_sigmoid(x);
            assert!(cur >= prev, "not monotone at {x}");
            prev = cur;
            x += 0.05;
        }
    }

    #[test]
    fn log_cosh_matches_naive_and_survives_large_arguments() {
        for x in [-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            assert_relative_eq!(log_cosh(x), x.cosh().ln(), epsilon = 1e-14);
        }
        assert_relative_eq!(
            log_cosh(500.0f64),
            500.0 - std::f64::consts::LN_2,
            epsilon = 1e-14
        );
    }

    #[test]
    fn local_field_examples() {
        let empty = Hypergraph::<f64>::edgeless(2);
        assert_eq!(local_field(&empty, &[1.0, -1.0], 0).unwrap(), 0.0);

        let h = Hypergraph::new(3, vec![(vec![0, 1, 2], 0.5)]).unwrap();
        assert_abs_diff_eq!(
            local_field(&h, &[1.0, -1.0, -1.0], 0).unwrap(),
            0.5,
            epsilon = 1e-15
        );

        assert_abs_diff_eq!(
            local_field(&triangle(), &[1.0, 1.0, -1.0], 0).unwrap(),
            0.0,
            epsilon = 1e-15
        );

        assert!(local_field(&empty, &[1.0, 1.0], 2).is_err());
        assert!(local_field(&empty, &[1.0], 0).is_err());
    }

    proptest! {
        #[test]
        fn local_field_is_bounded_by_incident_weight(signs in proptest::collection::vec(prop::bool::ANY, 3)) {
            let h = triangle();
            let y: Vec<f64> = signs.iter().map(|&s| if s { 1.0 } else { -1.0 }).collect();
            for i in 0..3 {
                let m = local_field(&h, &y, i).unwrap();
                let cap: f64 = h.incident_edges(i).iter().map(|&e| h.edges()[e].weight).sum();
                prop_assert!(m.abs() <= cap + 1e-15);
            }
        }
    }

    #[test]
    fn conditional_examples() {
        let model = ModelSpec::new(Hypergraph::<f64>::edgeless(2), array![0.0, 0.0]).unwrap();
        let data = Dataset::new(array![[1.0, 0.0], [0.0, 1.0]], array![1.0, -1.0]).unwrap();
        assert_eq!(conditional_prob_plus(&model, &data, 0).unwrap(), 0.5);

        // m_i = 0.5 via a hyperedge, covariate part 0.5 -> f(1)
        let h = Hypergraph::new(3, vec![(vec![0, 1, 2], 0.5)]).unwrap();
        let model = ModelSpec::new(h, array![0.5]).unwrap();
        let data = Dataset::new(array![[1.0], [0.0], [0.0]], array![1.0, -1.0, -1.0]).unwrap();
        assert_abs_diff_eq!(
            conditional_prob_plus(&model, &data, 0).unwrap(),
            f_sigmoid(1.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn conditionals_match_exact_enumeration() {
        let h = Hypergraph::new(3, vec![(vec![0, 1], 0.3), (vec![1, 2], 0.2)]).unwrap();
        let theta = array![0.7, -0.4];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = sample_covariates(3, &CovariateSpec::ar(2, 0.2).unwrap(), &mut rng).unwrap();
        let model = ModelSpec::new(h, theta).unwrap();
        let probs = exact_distribution(&model, &x.view()).unwrap();

        for k in 0..8usize {
            let y: Vec<f64> = (0..3)
                .map(|i| if k & (1 << i) != 0 { 1.0 } else { -1.0 })
                .collect();
            let data = Dataset::new(x.clone(), Array1::from(y)).unwrap();
            for i in 0..3 {
                let plus = k | (1 << i);
                let minus = k & !(1 << i);
                let oracle = probs[plus] / (probs[plus] + probs[minus]);
                let got = conditional_prob_plus(&model, &data, i).unwrap();
                assert_abs_diff_eq!(got, oracle, epsilon = 1e-12);
                assert!(got > 0.0 && got < 1.0);
            }
        }
    }

    #[test]
    fn exact_distribution_examples() {
        let model = ModelSpec::new(Hypergraph::<f64>::edgeless(2), array![0.0]).unwrap();
        let x = array![[0.0], [0.0]];
        let probs = exact_distribution(&model, &x.view()).unwrap();
        for p in &probs {
            assert_abs_diff_eq!(*p, 0.25, epsilon = 1e-15);
        }

        let g = 0.5f64;
        let h = Hypergraph::new(2, vec![(vec![0, 1], g)]).unwrap();
        let model = ModelSpec::new(h, array![0.0]).unwrap();
        let probs = exact_distribution(&model, &x.view()).unwrap();
        let expect = g.exp() / (2.0 * g.exp() + 2.0 * (-g).exp());
        assert_abs_diff_eq!(probs[0b11], expect, epsilon = 1e-14);
        assert_abs_diff_eq!(probs[0b00], expect, epsilon = 1e-14);
        let total: f64 = probs.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_distribution_respects_size_cap() {
        let model = ModelSpec::new(Hypergraph::<f64>::edgeless(21), array![0.0]).unwrap();
        let x = Array2::<f64>::zeros((21, 1));
        assert!(matches!(
            exact_distribution(&model, &x.view()),
            Err(Error::Resource(_))
        ));
    }

    #[test]
    fn flip_symmetry_on_pairwise_graphs() {
        // negating theta and every response leaves the law unchanged:
        // probs_theta[k] == probs_{-theta}[~k] (pairwise interactions only)
        let h = from_ising(&lattice2d::<f64>(2, 2).unwrap(), 0.3, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = sample_covariates(4, &CovariateSpec::ar(2, 0.2).unwrap(), &mut rng).unwrap();
        let theta = array![0.8, -0.3];
        let plus = ModelSpec::new(h.clone(), theta.clone()).unwrap();
        let minus = ModelSpec::new(h, -theta).unwrap();
        let p = exact_distribution(&plus, &x.view()).unwrap();
        let q = exact_distribution(&minus, &x.view()).unwrap();
        let mask = (1usize << 4) - 1;
        for k in 0..=mask {
            assert_abs_diff_eq!(p[k], q[!k & mask], epsilon = 1e-13);
        }
    }

    #[test]
    fn gibbs_is_seed_deterministic() {
        let h = from_ising(&lattice2d::<f64>(3, 3).unwrap(), 0.2, 0.25).unwrap();
        let model = ModelSpec::new(h, array![0.5, -0.2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = sample_covariates(9, &CovariateSpec::ar(2, 0.2).unwrap(), &mut rng).unwrap();
        let a = gibbs_sampler(
            &model,
            &x.view(),
            50,
            &mut ChaCha8Rng::seed_from_u64(3),
            None,
        )
        .unwrap();
        let b = gibbs_sampler(
            &model,
            &x.view(),
            50,
            &mut ChaCha8Rng::seed_from_u64(3),
            None,
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gibbs_on_edgeless_graph_is_fair_coin() {
        let n = 400;
        let model = ModelSpec::new(Hypergraph::<f64>::edgeless(n), array![0.0]).unwrap();
        let x = Array2::<f64>::zeros((n, 1));
        let y = gibbs_sampler(
            &model,
            &x.view(),
            2000,
            &mut ChaCha8Rng::seed_from_u64(17),
            None,
        )
        .unwrap();
        let mean = y.sum() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean = {mean}");
    }

    #[test]
    fn gibbs_tracks_exact_distribution_on_small_chain() {
        // short sanity version of the acceptance check
        let h = Hypergraph::new(3, vec![(vec![0, 1], 0.125), (vec![1, 2], 0.125)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = sample_covariates(3, &CovariateSpec::ar(2, 0.2).unwrap(), &mut rng).unwrap();
        let model = ModelSpec::new(h, array![1.0, 0.0]).unwrap();
        let exact = exact_distribution(&model, &x.view()).unwrap();

        let mut counts = [0usize; 8];
        let draws = 20_000;
        let mut chain_rng = ChaCha8Rng::seed_from_u64(29);
        let mut state = gibbs_sampler(&model, &x.view(), 200, &mut chain_rng, None).unwrap();
        for _ in 0..draws {
            let next = gibbs_sampler(
                &model,
                &x.view(),
                2,
                &mut chain_rng,
                Some(state.as_slice().unwrap()),
            )
            .unwrap();
            let mut idx = 0usize;
            for (i, &v) in next.iter().enumerate() {
                if v > 0.0 {
                    idx |= 1 << i;
                }
            }
            counts[idx] += 1;
            state = next;
        }
        let tv: f64 = counts
            .iter()
            .zip(exact.iter())
            .map(|(&c, &p)| (c as f64 / draws as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "tv = {tv}");
    }

    #[test]
    fn ar_covariance_examples() {
        let s = ar_covariance::<f64>(3, 0.2).unwrap();
        let expect = array![[1.0, 0.2, 0.04], [0.2, 1.0, 0.2], [0.04, 0.2, 1.0]];
        for (a, b) in s.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let id = ar_covariance::<f64>(3, 0.0).unwrap();
        assert_eq!(id, Array2::<f64>::eye(3));
        assert!(ar_covariance::<f64>(3, 1.0).is_err());
        assert!(cholesky_lower(ar_covariance::<f64>(500, 0.2).unwrap().view()).is_ok());
    }

    #[test]
    fn covariate_sampling_moments_and_determinism() {
        let n = 100_000;
        let spec = CovariateSpec::ar(2, 0.2).unwrap();
        let x = sample_covariates(n, &spec, &mut ChaCha8Rng::seed_from_u64(71)).unwrap();
        let var0 = x.column(0).map(|v| v * v).sum() / n as f64;
        assert!((var0 - 1.0).abs() < 0.02, "var = {var0}");
        let cov: f64 = x.rows().into_iter().map(|r| r[0] * r[1]).sum::<f64>() / n as f64;
        assert!((cov - 0.2).abs() < 0.02, "lag-1 cov = {cov}");

        let again = sample_covariates(n, &spec, &mut ChaCha8Rng::seed_from_u64(71)).unwrap();
        assert_eq!(x, again);
    }

    #[test]
    fn explicit_covariance_must_be_spd() {
        assert!(CovariateSpec::explicit(array![[1.0, 2.0], [2.0, 1.0]]).is_err());
        assert!(CovariateSpec::explicit(array![[1.0, 0.5], [0.4, 1.0]]).is_err());
        assert!(CovariateSpec::explicit(array![[2.0, 0.3], [0.3, 1.0]]).is_ok());
    }

    #[test]
    fn dataset_validation_and_csv_round_trip() {
        assert!(Dataset::new(array![[1.0], [2.0]], array![1.0, 0.5]).is_err());
        assert!(Dataset::new(array![[1.0]], array![1.0, -1.0]).is_err());

        let data = Dataset::new(array![[0.25, -1.5], [3.0, 0.125]], array![1.0, -1.0]).unwrap();
        let mut buf = Vec::new();
        data.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("y,x1,x2\n1,0.25,-1.5\n-1,3,0.125\n"));
        let back = Dataset::<f64>::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.y(), data.y());
        assert_eq!(back.x(), data.x());
    }

    #[test]
    fn sigmoid_works_in_f32() {
        assert_eq!(f_sigmoid(0.0f32), 0.5);
        assert_eq!(f_sigmoid(2.0f32) + f_sigmoid(-2.0f32), 1.0);
    }
}
