//! Scalar special functions: logistic sigmoid, softplus, the standard normal
//! density/CDF and its inverse.

#[allow(unused_imports)] // std builds resolve the inherent f64 methods instead
use num_traits::Float;

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Arguments of the inverse normal CDF are clamped to `(EPS, 1 - EPS)`.
pub const PROBIT_CLAMP: f64 = 1e-12;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(softplus(x), sigmoid(x))` sharing one exponential.
#[inline]
pub fn softplus_and_sigmoid(x: f64) -> (f64, f64) {
    let e = (-x.abs()).exp();
    let inv = 1.0 / (1.0 + e);
    if x > 0.0 {
        (x + e.ln_1p(), inv)
    } else {
        (e.ln_1p(), e * inv)
    }
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * core::f64::consts::FRAC_1_SQRT_2)
}

/// Inverse standard-normal CDF.
///
/// Takes both the lower tail `p` and the upper tail `q = 1 - p` so that either
/// tail can be resolved without cancellation; callers that only have `p` can
/// use [`probit`]. Returns the quantile and whether the argument had to be
/// clamped into `(PROBIT_CLAMP, 1 - PROBIT_CLAMP)`.
///
/// Wichura's AS241 (PPND16) rational approximations, relative accuracy about
/// 1e-16.
pub fn probit_tails(p: f64, q: f64) -> (f64, bool) {
    let (lower, upper_side) = if p <= q { (p, false) } else { (q, true) };
    let clamped = !(lower >= PROBIT_CLAMP);
    let lower = if clamped { PROBIT_CLAMP } else { lower };

    if lower > 0.075 {
        // central region, |p - 0.5| <= 0.425
        let c = if upper_side { 0.5 - q } else { p - 0.5 };
        let c = if clamped { 0.5 - lower } else { c };
        let r = 0.180625 - c * c;
        let num = ((((((r * 2509.080_928_730_122_7 + 33430.575_583_588_13) * r
            + 67265.770_927_008_7)
            * r
            + 45921.953_931_549_87)
            * r
            + 13731.693_765_509_46)
            * r
            + 1971.590_950_306_551_4)
            * r
            + 133.141_667_891_784_38)
            * r
            + 3.387_132_872_796_366_5;
        let den = ((((((r * 5226.495_278_852_546 + 28729.085_735_721_943) * r
            + 39307.895_800_092_71)
            * r
            + 21213.794_301_586_596)
            * r
            + 5394.196_021_424_751)
            * r
            + 687.187_007_492_057_9)
            * r
            + 42.313_330_701_600_91)
            * r
            + 1.0;
        (c * num / den, clamped)
    } else {
        let mut r = (-lower.ln()).sqrt();
        let v = if r <= 5.0 {
            r -= 1.6;
            let num = ((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r
                + 0.241_780_725_177_450_6)
                * r
                + 1.270_458_252_452_368_4)
                * r
                + 3.647_848_324_763_204_5)
                * r
                + 5.769_497_221_460_691)
                * r
                + 4.630_337_846_156_545)
                * r
                + 1.423_437_110_749_683_5;
            let den = ((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_345e-4) * r
                + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0;
            num / den
        } else {
            r -= 5.0;
            let num = ((((((r * 2.010_334_399_292_288e-7 + 2.711_555_568_743_487_6e-5) * r
                + 0.001_242_660_947_388_078_4)
                * r
                + 0.026_532_189_526_576_124)
                * r
                + 0.296_560_571_828_504_9)
                * r
                + 1.784_826_539_917_291_3)
                * r
                + 5.463_784_911_164_114)
                * r
                + 6.657_904_643_501_103;
            let den = ((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0;
            num / den
        };
        (if upper_side { v } else { -v }, clamped)
    }
}

/// Inverse standard-normal CDF of a lower-tail probability.
pub fn probit(p: f64) -> f64 {
    probit_tails(p, 1.0 - p).0
}
