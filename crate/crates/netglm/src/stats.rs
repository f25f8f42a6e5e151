//! Standard-normal distribution functions.
//!
//! The quantile uses the Wichura rational approximation (absolute error well
//! below 1e-9 across the open unit interval); the CDF goes through `erfc`.
//! Both are computed in `f64` and narrowed at the boundary, which keeps the
//! stated accuracy for every scalar type.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Standard normal CDF `Phi(x)`.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    T::from_f(0.5 * libm::erfc(-x.to_f() / SQRT_2))
}

/// Standard normal quantile `Phi^{-1}(p)` for `p` in the open unit interval.
///
/// Project-wide convention: `z_q` denotes the upper-`q` quantile, obtained as
/// [`upper_quantile`]`(q) = -normal_quantile(q)`; the antisymmetry of the
/// approximation makes the two forms consistent to the last bit.
pub fn normal_quantile<T: Scalar>(p: T) -> Result<T> {
    let pf = p.to_f();
    if !(pf > 0.0 && pf < 1.0) {
        return Err(Error::Argument(format!(
            "normal_quantile: p must lie strictly in (0,1), got {pf}"
        )));
    }
    Ok(T::from_f(quantile_f64(pf)))
}

/// Upper-tail quantile: the `z` with `P(Z >= z) = q`.
pub fn upper_quantile<T: Scalar>(q: T) -> Result<T> {
    let qf = q.to_f();
    if !(qf > 0.0 && qf < 1.0) {
        return Err(Error::Argument(format!(
            "upper_quantile: q must lie strictly in (0,1), got {qf}"
        )));
    }
    Ok(T::from_f(-quantile_f64(qf)))
}

/// Two-sided p-value for a standard-normal test statistic.
pub fn two_sided_p_value<T: Scalar>(t: T) -> T {
    let tail = 0.5 * libm::erfc(t.to_f().abs() / SQRT_2);
    T::from_f((2.0 * tail).min(1.0))
}

/// One-sample Kolmogorov-Smirnov statistic against a reference CDF.
///
/// `sample` need not be sorted; the comparison CDF is evaluated pointwise.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = (f - i as f64 / n).abs();
        let hi = ((i + 1) as f64 / n - f).abs();
        d = d.max(lo).max(hi);
    }
    d
}

// Rational approximation for the inverse normal CDF (Wichura, AS 241).
fn quantile_f64(p: f64) -> f64 {
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&CENTRAL_NUM, r) / poly(&CENTRAL_DEN, r);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        poly(&TAIL_NUM, r) / poly(&TAIL_DEN, r)
    } else {
        let r = r - 5.0;
        poly(&FAR_TAIL_NUM, r) / poly(&FAR_TAIL_DEN, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

#[inline]
fn poly(coeffs: &[f64; 8], x: f64) -> f64 {
    // Horner evaluation, coefficients ordered from degree 0 upward.
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_5,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946e4,
    4.592_195_393_154_987e4,
    6.726_577_092_700_87e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_854e3,
];
const TAIL_NUM: [f64; 8] = [
    1.423_437_110_749_683_5,
    4.630_337_846_156_546,
    5.769_497_221_460_691,
    3.647_848_324_763_204_5,
    1.270_458_252_452_368_4,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const TAIL_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_759,
    1.676_384_830_183_803_8,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const FAR_TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103,
    5.463_784_911_164_114,
    1.784_826_539_917_291_3,
    2.965_605_718_285_048_7e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const FAR_TAIL_DEN: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantile_at_half_is_zero() {
        assert_eq!(normal_quantile(0.5f64).unwrap(), 0.0);
    }

    #[test]
    fn upper_quantile_matches_reference_values() {
        assert_abs_diff_eq!(
            upper_quantile(0.025f64).unwrap(),
            1.959_963_984_540_054_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            upper_quantile(0.0025f64).unwrap(),
            2.807_033_768_343_804,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cdf_quantile_round_trip_within_1e9() {
        let mut p = 1e-6f64;
        while p < 1.0 - 1e-6 {
            let z = normal_quantile(p).unwrap();
            assert_abs_diff_eq!(normal_cdf(z), p, epsilon = 1e-9);
            p += 0.000_937;
        }
    }

    #[test]
    fn quantile_rejects_boundary() {
        assert!(normal_quantile(0.0f64).is_err());
        assert!(normal_quantile(1.0f64).is_err());
        assert!(upper_quantile(-0.1f64).is_err());
    }

    #[test]
    fn p_value_reference() {
        assert_abs_diff_eq!(two_sided_p_value(2.0f64), 0.045_500_263_896_358_41, epsilon = 1e-12);
        assert_eq!(two_sided_p_value(0.0f64), 1.0);
    }

    #[test]
    fn ks_statistic_on_exact_uniform_grid() {
        // Sample at the i/(n+1) quantiles of the uniform CDF on [0,1]:
        // D_n is then 1/(n+1)-ish by construction.
        let n = 99usize;
        let xs: Vec<f64> = (1..=n).map(|i| i as f64 / (n + 1) as f64).collect();
        let d = ks_statistic(&xs, |x| x.clamp(0.0, 1.0));
        assert!(d <= 1.0 / (n as f64 + 1.0) + 1e-12);
    }
}
