//! Standard normal distribution: CDF, density and quantile.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, computed through `erfc` so that the lower tail keeps
/// full relative accuracy.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Mass of the normal law `N(mean, var)` on `[lo, hi]`.
pub fn interval_mass(mean: f64, var: f64, lo: f64, hi: f64) -> f64 {
    let s = var.sqrt();
    let (zl, zh) = ((lo - mean) / s, (hi - mean) / s);
    // Subtract in whichever tail keeps the two terms small.
    if zl > 0.0 {
        cdf(-zl) - cdf(-zh)
    } else {
        cdf(zh) - cdf(zl)
    }
}

const A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[inline]
fn horner(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Inverse of the standard normal CDF (Wichura's AS241, about 16 significant
/// digits). `p` must lie in the open interval `(0, 1)`.
pub fn quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0, "quantile argument {p} outside (0, 1)");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return q * horner(&A, r) / horner(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        horner(&C, r) / horner(&D, r)
    } else {
        r -= 5.0;
        horner(&E, r) / horner(&F, r)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn quantile_matches_statrs_inverse() {
        let n = Normal::standard();
        let mut worst: f64 = 0.0;
        for i in 1..20_000 {
            let p = i as f64 / 20_000.0;
            worst = worst.max((quantile(p) - n.inverse_cdf(p)).abs());
        }
        for k in 3..150 {
            let p = 10f64.powf(-(k as f64) / 10.0);
            worst = worst.max((quantile(p) - n.inverse_cdf(p)).abs());
            worst = worst.max((quantile(1.0 - p) - n.inverse_cdf(1.0 - p)).abs());
        }
        assert!(worst < 1e-9, "max quantile error {worst}");
    }

    #[test]
    fn cdf_inverts_quantile() {
        for &p in &[1e-300, 1e-12, 0.01, 0.3, 0.5, 0.77, 0.999] {
            let x = quantile(p);
            assert!((cdf(x) / p - 1.0).abs() < 1e-12, "p={p}");
        }
    }

    #[test]
    fn cdf_reference_values() {
        // mpmath: ncdf(-1), ncdf(-2), ncdf(-10)
        assert!((cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
        assert!((cdf(-2.0) - 0.022_750_131_948_179_21).abs() < 1e-15);
        assert!((cdf(-10.0) / 7.619_853_024_160_527e-24 - 1.0).abs() < 1e-12);
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn interval_mass_is_symmetric_and_complete() {
        assert!((interval_mass(0.0, 1.0, -50.0, 50.0) - 1.0).abs() < 1e-15);
        let a = interval_mass(1.0, 4.0, 2.0, 3.0);
        let b = interval_mass(1.0, 4.0, -1.0, 0.0);
        assert!((a - b).abs() < 1e-15);
    }
}
