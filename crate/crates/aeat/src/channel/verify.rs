//! Statistical self-checks of the channel samplers, exposed as the
//! `verify-channel` report.

use super::malaga::{quadrature_mean, quadrature_normalization};
use super::{
    aoa_outage_prob, sample_aoa, sample_env, sample_pointing, ChannelModel, EnvParams,
};
use crate::error::Result;
use crate::numerics::rng::RngStream;
use serde::Serialize;

/// One named check: `pass` iff `|value - target| <= tol` (absolute) or the
/// stated relative form, as computed by the producing check.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    pub tol: f64,
    pub pass: bool,
}

impl Check {
    fn abs(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            target,
            tol,
            pass: (value - target).abs() <= tol,
        }
    }

    fn rel(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            target,
            tol,
            pass: ((value - target) / target).abs() <= tol,
        }
    }

    fn upper(name: &str, value: f64, bound: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            target: bound,
            tol: bound,
            pass: value <= bound,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChannelVerifyReport {
    pub seed: u64,
    pub config_hash: String,
    pub turbulence_samples: usize,
    pub aoa_samples: usize,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

/// Reference geometry for checks that need a concrete environment.
pub fn reference_env() -> EnvParams {
    EnvParams {
        z: 1000.0,
        v_d: 13.0,
        cn2: 5e-14,
        sigma_s: 0.03,
        sigma_a: 0.005,
    }
}

/// Run every statistical check against the sampler implementations.
///
/// `turb_n` controls the turbulence sampler checks (the acceptance gate uses
/// 1e6) and `aoa_n` the outage-frequency check (the gate uses 1e7).
pub fn verify_channel(
    model: &ChannelModel,
    seed: u64,
    config_hash: &str,
    turb_n: usize,
    aoa_n: usize,
) -> Result<ChannelVerifyReport> {
    let alpha = model.consts.alpha;
    let beta = model.consts.beta;
    let mut checks = Vec::new();

    // Density normalization by adaptive quadrature.
    let norm = quadrature_normalization(&model.malaga, alpha, beta);
    checks.push(Check::abs("malaga_pdf_normalization", norm, 1.0, 1e-3));

    // Turbulence sampler against its tabulated CDF: KS statistic and mean.
    let qmean = quadrature_mean(&model.malaga, alpha, beta);
    let mut rng = RngStream::derive(seed, 1);
    let mut samples: Vec<f64> = (0..turb_n).map(|_| model.table().sample(&mut rng)).collect();
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut ks: f64 = 0.0;
    for (i, s) in samples.iter().enumerate() {
        let f = model.table().cdf_at(*s);
        let lo = i as f64 / turb_n as f64;
        let hi = (i + 1) as f64 / turb_n as f64;
        ks = ks.max((f - lo).abs()).max((f - hi).abs());
    }
    checks.push(Check::upper("turbulence_ks", ks, 0.005));
    let smean = samples.iter().sum::<f64>() / turb_n as f64;
    checks.push(Check::rel("turbulence_mean_vs_quadrature", smean, qmean, 0.005));

    // Pointing sampler mean against the closed form A0 g^2/(g^2+1).
    let env = reference_env();
    let pp = model.pointing_for(&env)?;
    let mut rng = RngStream::derive(seed, 2);
    let pn = turb_n;
    let pmean: f64 = (0..pn)
        .map(|_| sample_pointing(&mut rng, pp.a0, pp.g))
        .sum::<f64>()
        / pn as f64;
    let pwant = pp.a0 * pp.g * pp.g / (pp.g * pp.g + 1.0);
    checks.push(Check::rel("pointing_mean_vs_closed_form", pmean, pwant, 0.005));

    // Pointing empirical CDF against (h/A0)^(g^2) at the quartile points.
    let mut rng = RngStream::derive(seed, 3);
    let mut psamples: Vec<f64> = (0..pn)
        .map(|_| sample_pointing(&mut rng, pp.a0, pp.g))
        .collect();
    psamples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut worst = 0.0f64;
    for frac in [0.25, 0.5, 0.75] {
        let x = frac * pp.a0;
        let emp = psamples.partition_point(|s| *s <= x) as f64 / pn as f64;
        worst = worst.max((emp - frac.powf(pp.g * pp.g)).abs());
    }
    checks.push(Check::upper("pointing_cdf_quartiles", worst, 1e-3));

    // AoA outage frequency within 3 binomial sigma of S.
    let s = aoa_outage_prob(model.consts.theta_fov, env.sigma_a)?;
    let mut rng = RngStream::derive(seed, 4);
    let outages = (0..aoa_n)
        .filter(|_| sample_aoa(&mut rng, s) == 0.0)
        .count();
    let freq = outages as f64 / aoa_n as f64;
    let sigma = (s * (1.0 - s) / aoa_n as f64).sqrt();
    checks.push(Check::abs("aoa_outage_frequency", freq, s, 3.0 * sigma));

    // Composite moments factorize across the independent factors.
    let mut rng = RngStream::derive(seed, 5);
    let cn = turb_n / 2;
    let mut hsum = 0.0;
    for _ in 0..cn {
        hsum += model.sample_channel(&mut rng, &env)?.h;
    }
    let hmean = hsum / cn as f64;
    let xi = super::scattering_coefficient(env.v_d, model.consts.lambda)?;
    let h_l = super::atmospheric_attenuation(env.z, xi)?;
    let product = h_l * qmean * pwant * (1.0 - s);
    checks.push(Check::rel("composite_mean_factorizes", hmean, product, 0.01));

    // Environment sampler stays inside its ranges.
    let mut rng = RngStream::derive(seed, 6);
    let violations = (0..100_000)
        .filter(|_| sample_env(&mut rng).validate().is_err())
        .count();
    checks.push(Check::abs("env_range_violations", violations as f64, 0.0, 0.0));

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(ChannelVerifyReport {
        seed,
        config_hash: config_hash.to_string(),
        turbulence_samples: turb_n,
        aoa_samples: aoa_n,
        checks,
        all_pass,
    })
}
