//! Modified Bessel function of the second kind for real order.
//!
//! `K_mu` and `K_{mu+1}` with `|mu| <= 1/2` come from Temme's series for
//! small arguments and Steed's continued fraction (CF2) for large ones; the
//! requested order is then reached by forward recurrence, which is stable for
//! `K`.

#![allow(clippy::excessive_precision)]

use std::f64::consts::PI;

pub use statrs::function::gamma::{gamma, ln_gamma};

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

/// Taylor coefficients of `1/Gamma(z)` around 0, starting at `z^1`.
const RGAMMA_TAYLOR: [f64; 26] = [
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
];

/// Returns `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for `|mu| <= 1/2`,
/// where `gam1 = (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)` and
/// `gam2 = (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    // 1/Gamma(1+x) = sum_k c_{k+1} x^k, so the odd and even parts give gam1 and gam2.
    let mu2 = mu * mu;
    let mut odd = 0.0;
    let mut even = 0.0;
    let mut pow = 1.0;
    for pair in RGAMMA_TAYLOR.chunks(2) {
        even += pair[0] * pow;
        if let Some(c) = pair.get(1) {
            odd += c * pow;
        }
        pow *= mu2;
    }
    let gam1 = -odd;
    let gam2 = even;
    let gampl = even + mu * odd;
    let gammi = even - mu * odd;
    (gam1, gam2, gampl, gammi)
}

/// `(K_mu(x), K_{mu+1}(x))` for `|mu| <= 1/2`, `x > 0`.
fn bessel_k_pair(mu: f64, x: f64) -> (f64, f64) {
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    if x < SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu * mu);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum, sum1 * xi2)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu * mu;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let kmu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        let k1 = kmu * (mu + x + 0.5 - h) * xi;
        (kmu, k1)
    }
}

/// Modified Bessel function of the second kind `K_nu(x)` for real `nu` and `x > 0`.
///
/// Returns `+inf` at `x == 0` and `NaN` for negative or NaN `x`. `K` is even in
/// its order, so negative `nu` is folded onto `|nu|`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    if x.is_nan() || nu.is_nan() || x < 0.0 {
        return f64::NAN;
    }
    if x == 0.0 {
        return f64::INFINITY;
    }
    if x > 745.0 {
        return 0.0;
    }
    let nu = nu.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut kmu, mut k1) = bessel_k_pair(mu, x);
    let xi2 = 2.0 / x;
    for i in 1..=(nl as usize) {
        let next = (mu + i as f64) * xi2 * k1 + kmu;
        kmu = k1;
        k1 = next;
    }
    kmu
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    // Reference values computed with mpmath at 40 digits.
    #[test]
    fn matches_high_precision_reference() {
        let cases = [
            (0.5, 1.0, 0.461_068_504_447_894_558_44),
            (1.5, 1.0, 0.922_137_008_895_789_116_88),
            (0.1, 0.01, 4.934_666_009_755_597_087_1),
            (0.2, 3.0, 0.034_942_427_790_006_609_113),
            (2.0, 0.5, 7.550_183_551_240_869_436_6),
            (5.0, 2.0, 9.431_049_100_596_467_442_8),
            (6.0, 7.5, 0.002_200_879_582_742_050_009_1),
            (0.3, 25.0, 3.470_282_759_936_808_621_6e-12),
            (3.7, 1.9, 1.848_670_375_529_746_431_5),
            (1.0, 2.0, 0.139_865_881_816_522_427_28),
            (2.5, 40.0, 9.066_005_151_810_602_517_2e-19),
            (0.75, 1e-4, 1_030.447_085_399_112_265_3),
        ];
        for (nu, x, want) in cases {
            let got = bessel_k(nu, x);
            assert!(rel(got, want) < 1e-12, "K_{nu}({x}) = {got}, want {want}");
        }
    }

    #[test]
    fn half_order_closed_form() {
        for &x in &[0.05, 0.3, 1.0, 1.99, 2.0, 2.01, 7.0, 30.0] {
            let want = (PI / (2.0 * x)).sqrt() * (-x).exp();
            assert!(rel(bessel_k(0.5, x), want) < 1e-13);
        }
    }

    #[test]
    fn edge_arguments() {
        assert!(bessel_k(1.0, 0.0).is_infinite());
        assert!(bessel_k(1.0, -1.0).is_nan());
        assert_eq!(bessel_k(1.0, 1000.0), 0.0);
        assert_eq!(bessel_k(-1.3, 0.7), bessel_k(1.3, 0.7));
    }

    #[test]
    fn gamma_helpers_agree_with_direct_values() {
        for &mu in &[-0.5, -0.2, 0.0, 0.1, 0.37, 0.5] {
            let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
            assert!((gampl - 1.0 / gamma(1.0 + mu)).abs() < 1e-14);
            assert!((gammi - 1.0 / gamma(1.0 - mu)).abs() < 1e-14);
            assert!((gam2 - 0.5 * (gammi + gampl)).abs() < 1e-14);
            if mu.abs() > 0.05 {
                assert!((gam1 - (gammi - gampl) / (2.0 * mu)).abs() < 1e-12);
            }
        }
    }
}
