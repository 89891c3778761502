//! Special functions: error function, Gaussian Q, log-gamma, and the modified
//! Bessel function of the second kind evaluated by quadrature.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Error function, |error| < 1e-12 over the real line.
///
/// Power series below the crossover, continued-fraction erfc above it.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x == 0.0 {
        return 0.0;
    }
    if x < 3.0 {
        // erf(x) = (2/sqrt(pi)) * sum_{n>=0} (-1)^n x^(2n+1) / (n! (2n+1))
        let mut term = x;
        let mut sum = x;
        let x2 = x * x;
        let mut n = 1u32;
        loop {
            term *= -x2 / n as f64;
            let contrib = term / (2 * n + 1) as f64;
            sum += contrib;
            if contrib.abs() < 1e-18 * sum.abs() || n > 200 {
                break;
            }
            n += 1;
        }
        (2.0 / PI.sqrt()) * sum
    } else {
        1.0 - erfc_cf(x)
    }
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        2.0 - erfc(-x)
    } else if x < 3.0 {
        1.0 - erf(x)
    } else {
        erfc_cf(x)
    }
}

/// Continued fraction for erfc, valid for x >= ~2 (modified Lentz).
///
/// erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
fn erfc_cf(x: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = x;
    let mut c = f;
    let mut d = 0.0;
    for k in 1..200 {
        let a = k as f64 / 2.0;
        // b terms alternate between x (odd k handled via a) - standard form:
        // the CF is x + a1/(x + a2/(x + ...)) with a_k = k/2.
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / PI.sqrt() / f
}

/// Gaussian tail probability Q(x) = P(N(0,1) > x) = erfc(x/sqrt(2))/2.
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Natural log of the gamma function (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        const COEF: [f64; 9] = [
            0.999_999_999_999_809_93,
            676.520_368_121_885_1,
            -1259.139_216_722_402_8,
            771.323_428_777_653_13,
            -176.615_029_162_140_59,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_571_6e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let z = x - 1.0;
        let mut acc = COEF[0];
        for (i, c) in COEF.iter().enumerate().skip(1) {
            acc += c / (z + i as f64);
        }
        let t = z + 7.5;
        0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Modified Bessel function of the second kind K_nu(x) for x > 0.
///
/// Evaluates the integral representation
///   K_nu(x) = \int_0^inf exp(-x cosh t) cosh(nu t) dt
/// with the peak exponent factored out for range safety and the truncation
/// point chosen adaptively from the integrand's decay. Relative error is
/// well below 1e-9 for nu in [0, 10], x in [1e-4, 70].
pub fn bessel_k(nu: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Err(Error::Domain(format!("bessel_k requires x > 0, got {x}")));
    }
    let nu = nu.abs(); // K_{-nu} = K_{nu}
    let phi = |t: f64| -> f64 {
        // ln cosh(nu t) computed overflow-free
        let a = nu * t;
        let ln_cosh = if a > 30.0 {
            a - std::f64::consts::LN_2
        } else {
            a.cosh().ln()
        };
        -x * t.cosh() + ln_cosh
    };

    // Locate the maximum of phi on t >= 0 by golden-section search.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while phi(hi) > phi(hi * 0.75) && hi < 64.0 {
        hi *= 2.0;
    }
    let gr = (5.0f64.sqrt() - 1.0) / 2.0;
    for _ in 0..120 {
        let m1 = hi - gr * (hi - lo);
        let m2 = lo + gr * (hi - lo);
        if phi(m1) < phi(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let t_peak = 0.5 * (lo + hi);
    let phi_max = phi(t_peak);

    // Truncate where the integrand has fallen ~60 e-folds below the peak.
    let mut t_hi = (t_peak + 1.0).max(1.0);
    while phi(t_hi) > phi_max - 60.0 && t_hi < 700.0 {
        t_hi += 1.0;
    }

    // Composite Gauss-Legendre with panel doubling until stable.
    let integrand = |t: f64| (phi(t) - phi_max).exp();
    let mut panels = 16usize;
    let mut prev = gauss_panels(&integrand, 0.0, t_hi, panels);
    loop {
        panels *= 2;
        let cur = gauss_panels(&integrand, 0.0, t_hi, panels);
        if (cur - prev).abs() <= 1e-12 * cur.abs() || panels >= 512 {
            return Ok(cur * phi_max.exp());
        }
        prev = cur;
    }
}

/// 16-point Gauss-Legendre nodes/weights on [-1, 1] (positive half; mirrored).
const GL16_X: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003_0,
    0.865_631_202_387_831_7,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_W: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_54,
    0.149_595_988_816_576_73,
    0.124_628_971_255_533_87,
    0.095_158_511_682_492_78,
    0.062_253_523_938_647_89,
    0.027_152_459_411_754_095,
];

/// Composite 16-point Gauss-Legendre over `panels` equal panels of [a, b].
pub fn gauss_panels<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut acc = 0.0;
        for i in 0..8 {
            acc += GL16_W[i] * (f(mid + half * GL16_X[i]) + f(mid - half * GL16_X[i]));
        }
        total += acc * half;
    }
    total
}

/// Adaptive Simpson quadrature to a relative tolerance.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        eps: f64,
        depth: u32,
    ) -> f64 {
        let (left, ml, fml) = simpson(f, a, fa, m, fm);
        let (right, mr, fmr) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * eps {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, ml, fml, 0.5 * eps, depth - 1)
                + recurse(f, m, fm, b, fb, right, mr, fmr, 0.5 * eps, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    let eps = rel_tol * whole.abs().max(1e-300);
    recurse(f, a, fa, b, fb, whole, m, fm, eps, 48)
}
