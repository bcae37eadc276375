//! Special functions used by the gamma marginals and the Gaussian copula.
//!
//! * `ln_gamma`: Lanczos approximation (g = 7, 9 terms), ~1e-15 relative.
//! * `gamma_p` / `gamma_q`: regularized incomplete gamma functions, evaluated
//!   by the power series below `a + 1` and by a modified-Lentz continued
//!   fraction above it. Both tails are returned without cancellation.
//! * `gamma_p_inverse`: Halley iteration safeguarded by a bisection bracket.
//! * `normal_cdf`: through `erfc(t) = Q(1/2, t^2)`.
//! * `normal_quantile`: Wichura's AS 241 (PPND16), ~1e-16 relative.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
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

/// Natural logarithm of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (k, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + k as f64);
    }
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma function ψ(x) for `x > 0`.
pub fn digamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2 * (1.0 / 252.0
                        - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    acc + x.ln() - 0.5 * inv - series
}

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;

/// Both tails of the regularized incomplete gamma function, `(P(a, x), Q(a, x))`.
///
/// `a > 0`, `x >= 0`. Whichever tail is computed directly carries full
/// relative precision; the other is its complement.
pub fn gamma_pq(a: f64, x: f64) -> (f64, f64) {
    debug_assert!(a > 0.0 && x >= 0.0);
    if x == 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        let p = lower_series(a, x, log_prefactor);
        (p, 1.0 - p)
    } else {
        let q = upper_continued_fraction(a, x, log_prefactor);
        (1.0 - q, q)
    }
}

/// Regularized lower incomplete gamma function P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    gamma_pq(a, x).0
}

/// Regularized upper incomplete gamma function Q(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    gamma_pq(a, x).1
}

fn lower_series(a: f64, x: f64, log_prefactor: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * EPS {
            break;
        }
    }
    (sum.ln() + log_prefactor).exp().min(1.0)
}

fn upper_continued_fraction(a: f64, x: f64, log_prefactor: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    (h.ln() + log_prefactor).exp().min(1.0)
}

/// Inverse of `P(a, ·)`: the `x >= 0` with `P(a, x) = p`, for `p` in (0, 1).
pub fn gamma_p_inverse(a: f64, p: f64) -> f64 {
    debug_assert!(a > 0.0 && p > 0.0 && p < 1.0);
    gamma_inverse_tails(a, p, 1.0 - p)
}

/// Inverse of `Q(a, ·)`: the `x >= 0` with `Q(a, x) = q`, accurate for tiny `q`.
pub fn gamma_q_inverse(a: f64, q: f64) -> f64 {
    debug_assert!(a > 0.0 && q > 0.0 && q < 1.0);
    gamma_inverse_tails(a, 1.0 - q, q)
}

/// Solves `P(a, x) = p` where `q = 1 - p` is supplied separately so the
/// smaller tail keeps full relative precision.
fn gamma_inverse_tails(a: f64, p: f64, q: f64) -> f64 {
    let ln_gamma_a = ln_gamma(a);
    let mut x = initial_gamma_quantile(a, p, q, ln_gamma_a);

    // residual f(x) = P(a, x) - p, evaluated from the accurate tail
    let residual = |x: f64| -> f64 {
        let (lower, upper) = gamma_pq(a, x);
        if p < 0.5 {
            lower - p
        } else {
            q - upper
        }
    };

    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    for _ in 0..200 {
        let f = residual(x);
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let log_density = (a - 1.0) * x.ln() - x - ln_gamma_a;
        let density = log_density.exp();
        let mut next = if density > 0.0 && density.is_finite() {
            let newton = f / density;
            let curvature = (a - 1.0) / x - 1.0;
            let denom = 1.0 - 0.5 * newton * curvature;
            let step = if denom.abs() > 0.1 { newton / denom } else { newton };
            x - step
        } else {
            f64::NAN
        };
        if !(next > lo && next < hi) || !next.is_finite() {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { 2.0 * x.max(lo) + 1.0 };
        }
        if (next - x).abs() <= 1e-15 * next.abs() {
            return next;
        }
        x = next;
        if hi.is_finite() && (hi - lo) <= 1e-15 * hi {
            return 0.5 * (lo + hi);
        }
    }
    x
}

fn initial_gamma_quantile(a: f64, p: f64, q: f64, ln_gamma_a: f64) -> f64 {
    if a > 1.0 {
        let pp = if p < 0.5 { p } else { q };
        let t = (-2.0 * pp.ln()).sqrt();
        let mut z = (2.307_53 + t * 0.270_61) / (1.0 + t * (0.992_29 + t * 0.044_81)) - t;
        if p < 0.5 {
            z = -z;
        }
        let guess = a * (1.0 - 1.0 / (9.0 * a) - z / (3.0 * a.sqrt())).powi(3);
        guess.max(1e-3)
    } else {
        let t = 1.0 - a * (0.253 + a * 0.12);
        if p < t {
            // small-x expansion of P(a, x) ~ x^a / Γ(a + 1)
            ((p.ln() + ln_gamma_a + a.ln()) / a).exp().max(1e-300)
        } else {
            1.0 - (q / (1.0 - t)).ln()
        }
    }
}

/// Standard normal log-density.
pub fn normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let half_tail = 0.5 * gamma_q(0.5, 0.5 * x * x);
    if x < 0.0 {
        half_tail
    } else {
        1.0 - half_tail
    }
}

/// Upper tail 1 - Φ(x), accurate for large positive `x`.
pub fn normal_sf(x: f64) -> f64 {
    normal_cdf(-x)
}

/// Standard normal quantile Φ⁻¹(p) for `p` in (0, 1).
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        let num = (((((((2.509_080_928_730_122_672_7e3 * r + 3.343_057_558_358_812_810_5e4) * r
            + 6.726_577_092_700_870_085_3e4)
            * r
            + 4.592_195_393_154_987_145_7e4)
            * r
            + 1.373_169_376_550_946_112_5e4)
            * r
            + 1.971_590_950_306_551_442_7e3)
            * r
            + 1.331_416_678_917_843_774_5e2)
            * r
            + 3.387_132_872_796_366_608_0)
            * q;
        let den = ((((((5.226_495_278_852_854_561_0e3 * r + 2.872_908_573_572_194_267_4e4) * r
            + 3.930_789_580_009_271_061_0e4)
            * r
            + 2.121_379_430_158_659_586_7e4)
            * r
            + 5.394_196_021_424_751_107_7e3)
            * r
            + 6.871_870_074_920_579_083_0e2)
            * r
            + 4.231_333_070_160_091_125_2e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let magnitude = tail_quantile(tail);
    if q < 0.0 {
        -magnitude
    } else {
        magnitude
    }
}

/// |Φ⁻¹(tail)| for a tail probability `tail <= 0.075`.
fn tail_quantile(tail: f64) -> f64 {
    let mut r = (-tail.ln()).sqrt();
    if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414_076_4e-4 * r + 2.272_384_498_926_918_458_33e-2)
            * r
            + 2.417_807_251_774_506_117_7e-1)
            * r
            + 1.270_458_252_452_368_382_58)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34;
        let den = ((((((1.050_750_071_644_416_843_24e-9 * r + 5.475_938_084_995_344_946e-4)
            * r
            + 1.519_866_656_361_645_719_66e-2)
            * r
            + 1.481_039_764_274_800_745_9e-1)
            * r
            + 6.897_673_349_851_000_045_5e-1)
            * r
            + 1.676_384_830_183_803_849_4)
            * r
            + 2.053_191_626_637_758_821_87)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_15e-5)
            * r
            + 1.242_660_947_388_078_438_6e-3)
            * r
            + 2.653_218_952_657_612_309_3e-2)
            * r
            + 2.965_605_718_285_048_912_3e-1)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2;
        let den = ((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_888_7e-7)
            * r
            + 1.846_318_317_510_054_681_8e-5)
            * r
            + 7.868_691_311_456_132_591e-4)
            * r
            + 1.487_536_129_085_061_485_25e-2)
            * r
            + 1.369_298_809_227_358_053_1e-1)
            * r
            + 5.998_322_065_558_879_376_9e-1)
            * r
            + 1.0;
        num / den
    }
}

/// Latent normal score from a CDF value given as both tails, `(lower, upper)`.
///
/// Uses whichever tail is smaller so scores stay accurate near `u = 1`.
pub fn normal_score_from_tails(lower: f64, upper: f64) -> f64 {
    if lower <= upper {
        normal_quantile(lower)
    } else {
        -normal_quantile(upper)
    }
}

/// erfc(x) for any real `x`.
pub fn erfc(x: f64) -> f64 {
    2.0 * normal_cdf(-x / FRAC_1_SQRT_2)
}
