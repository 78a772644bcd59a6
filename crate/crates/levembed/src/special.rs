//! Special functions used by the chi-squared loss and the diagnostics:
//! log-gamma and the inverse standard normal CDF.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpecialError {
    #[error("ln_gamma requires a positive argument, got {0}")]
    LnGammaDomain(f64),
    #[error("probit requires p in (0, 1), got {0}")]
    ProbitDomain(f64),
}

/// Lanczos coefficients, g = 7, 9 terms.
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

const LN_SQRT_TWO_PI: f64 = 0.918_938_533_204_672_74;

/// Natural log of the Gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64, SpecialError> {
    if !(x > 0.0) {
        return Err(SpecialError::LnGammaDomain(x));
    }
    if x < 0.5 {
        // Gamma(x) = Gamma(x + 1) / x
        return Ok(ln_gamma_lanczos(x + 1.0) - x.ln());
    }
    Ok(ln_gamma_lanczos(x))
}

fn ln_gamma_lanczos(x: f64) -> f64 {
    let z = x - 1.0;
    let mut a = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    let t = z + 7.5;
    LN_SQRT_TWO_PI + (z + 0.5) * t.ln() - t + a.ln()
}

/// Base-2 log of the Gamma function for `x > 0`.
pub fn log2_gamma(x: f64) -> Result<f64, SpecialError> {
    Ok(ln_gamma(x)? / std::f64::consts::LN_2)
}

/// Inverse standard normal CDF (Wichura's PPND16 rational approximation,
/// absolute error well below 1e-9 over the full open interval).
pub fn probit(p: f64) -> Result<f64, SpecialError> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SpecialError::ProbitDomain(p));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        return Ok(q * poly(&PPND_A, r) / poly(&PPND_B, r));
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&PPND_C, r) / poly(&PPND_D, r)
    } else {
        let r = r - 5.0;
        poly(&PPND_E, r) / poly(&PPND_F, r)
    };
    Ok(if q < 0.0 { -z } else { z })
}

fn poly(coef: &[f64], x: f64) -> f64 {
    coef.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const PPND_A: [f64; 8] = [
    3.387_132_872_796_366_608,
    133.141_667_891_784_377_45,
    1_971.590_950_306_551_442_7,
    13_731.693_765_509_461_125,
    45_921.953_931_549_871_457,
    67_265.770_927_008_700_853,
    33_430.575_583_588_128_105,
    2_509.080_928_730_122_672_7,
];
const PPND_B: [f64; 8] = [
    1.0,
    42.313_330_701_600_911_252,
    687.187_007_492_057_908_3,
    5_394.196_021_424_751_107_7,
    21_213.794_301_586_595_867,
    39_307.895_800_092_710_610,
    28_729.085_735_721_942_674,
    5_226.495_278_852_854_561_0,
];
const PPND_C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_90,
    5.769_497_221_460_691_405_50,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    0.241_780_725_177_450_611_770,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_40e-4,
];
const PPND_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_40,
    0.689_767_334_985_100_004_550,
    0.148_103_976_427_480_074_590,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946_00e-4,
    1.050_750_071_644_416_843_24e-9,
];
const PPND_E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    0.296_560_571_828_504_891_230,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const PPND_F: [f64; 8] = [
    1.0,
    0.599_832_206_555_887_937_69,
    0.136_929_880_922_735_805_31,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591_00e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn ln_gamma_of_one_is_zero() {
        assert!(ln_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(ln_gamma(2.0).unwrap().abs() < 1e-14);
    }

    #[test]
    fn ln_gamma_of_half_is_half_ln_pi() {
        let expected = 0.5 * PI.ln();
        assert!((ln_gamma(0.5).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn ln_gamma_recurrence_step() {
        // Gamma(x + 1) = x * Gamma(x), checked at 40.5 against the chain built
        // from Gamma(0.5).
        let lhs = ln_gamma(41.5).unwrap() - ln_gamma(40.5).unwrap();
        assert!((lhs - 40.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_rejects_non_positive() {
        assert!(ln_gamma(0.0).is_err());
        assert!(ln_gamma(-3.0).is_err());
        assert!(ln_gamma(f64::NAN).is_err());
    }

    #[test]
    fn probit_is_antisymmetric_around_half() {
        assert_eq!(probit(0.5).unwrap(), 0.0);
        for &p in &[0.01, 0.1, 0.25, 0.4] {
            let lo = probit(p).unwrap();
            let hi = probit(1.0 - p).unwrap();
            assert!((lo + hi).abs() < 1e-12, "p={p} lo={lo} hi={hi}");
        }
    }

    #[test]
    fn probit_hits_known_quantile() {
        // 97.5% quantile of the standard normal.
        let z = probit(0.975).unwrap();
        assert!((z - 1.959_963_984_540_054).abs() < 1e-8, "z={z}");
    }

    #[test]
    fn probit_rejects_out_of_range() {
        assert!(probit(0.0).is_err());
        assert!(probit(1.0).is_err());
        assert!(probit(-0.1).is_err());
    }
}
