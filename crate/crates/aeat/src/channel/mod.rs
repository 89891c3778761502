//! Statistical simulation of the UAV-to-ground free-space-optical fading
//! channel and the intensity-modulated received-signal model.
//!
//! The composite coefficient is `h = h_l * h_a * h_p * h_aoa`:
//! atmospheric attenuation (Beer-Lambert with a Kim-model scattering
//! coefficient), Malaga turbulence fading, pointing-error fading from
//! platform jitter, and angle-of-arrival outage. One draw applies to one
//! transmitted block (quasi-static block fading).

pub mod malaga;
pub mod verify;

use crate::error::{Error, Result};
use crate::numerics::rng::RngStream;
use crate::numerics::special::erf;
use malaga::{MalagaCdfTable, MalagaParams};

/// Link-distance range in metres.
pub const Z_RANGE: (f64, f64) = (1000.0, 5000.0);
/// Visibility range in kilometres.
pub const VD_RANGE: (f64, f64) = (2.0, 13.0);
/// Admissible refractive-index structure parameters (m^-2/3).
pub const CN2_SET: [f64; 4] = [5e-14, 1.7e-14, 5e-15, 4e-15];
/// Pointing-error standard deviation range in metres.
pub const SIGMA_S_RANGE: (f64, f64) = (0.01, 0.05);
/// Angular-jitter standard deviation range in radians.
pub const SIGMA_A_RANGE: (f64, f64) = (0.002, 0.005);

/// The five-dimensional environment vector driving both the channel and the
/// model conditioning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    /// Link distance (m).
    pub z: f64,
    /// Visibility (km).
    pub v_d: f64,
    /// Refractive-index structure parameter (m^-2/3).
    pub cn2: f64,
    /// Pointing-error standard deviation (m).
    pub sigma_s: f64,
    /// Angular-jitter standard deviation (rad).
    pub sigma_a: f64,
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !in_range(self.z, Z_RANGE) {
            return Err(Error::Domain(format!("Z={} outside {:?}", self.z, Z_RANGE)));
        }
        if !in_range(self.v_d, VD_RANGE) {
            return Err(Error::Domain(format!(
                "V_d={} outside {:?}",
                self.v_d, VD_RANGE
            )));
        }
        if !CN2_SET.iter().any(|c| (c - self.cn2).abs() < 1e-20) {
            return Err(Error::Domain(format!("Cn2={} not in {:?}", self.cn2, CN2_SET)));
        }
        if !in_range(self.sigma_s, SIGMA_S_RANGE) {
            return Err(Error::Domain(format!(
                "sigma_s={} outside {:?}",
                self.sigma_s, SIGMA_S_RANGE
            )));
        }
        if !in_range(self.sigma_a, SIGMA_A_RANGE) {
            return Err(Error::Domain(format!(
                "sigma_a={} outside {:?}",
                self.sigma_a, SIGMA_A_RANGE
            )));
        }
        Ok(())
    }
}

/// Fixed physical constants of the link (Table-II-aligned defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelConstants {
    /// Photodetector responsivity.
    pub eta_e: f64,
    /// Receiver noise variance.
    pub sigma_w2: f64,
    /// Wavelength (m).
    pub lambda: f64,
    /// Receiver lens radius (m).
    pub r_a: f64,
    /// Beamwidth at Z = 0 (m).
    pub w_oz: f64,
    /// Receiver field of view (rad).
    pub theta_fov: f64,
    /// Malaga large-scale parameter.
    pub alpha: f64,
    /// Malaga fading parameter (integer: the finite sum runs to it).
    pub beta: u32,
    /// Half the total scatter power.
    pub b0: f64,
    /// Coupling factor entering the coherent power.
    pub rho_malaga: f64,
    /// Line-of-sight power.
    pub omega: f64,
    /// Phase difference between LoS and coupled scatter components.
    pub phase_diff: f64,
}

impl Default for ChannelConstants {
    fn default() -> Self {
        Self {
            eta_e: 0.5,
            sigma_w2: 1e-10,
            lambda: 1550e-9,
            r_a: 0.1,
            w_oz: 2.0,
            theta_fov: 0.020,
            alpha: 8.2,
            beta: 4,
            b0: 0.1079,
            rho_malaga: 0.596,
            omega: 1.3265,
            phase_diff: std::f64::consts::FRAC_PI_2,
        }
    }
}

impl ChannelConstants {
    pub fn sigma_w(&self) -> f64 {
        self.sigma_w2.sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta < 1 {
            return Err(Error::Domain("beta must be a positive integer".into()));
        }
        for (name, v) in [
            ("eta_e", self.eta_e),
            ("sigma_w2", self.sigma_w2),
            ("lambda", self.lambda),
            ("r_a", self.r_a),
            ("w_oz", self.w_oz),
            ("theta_fov", self.theta_fov),
            ("alpha", self.alpha),
            ("b0", self.b0),
            ("omega", self.omega),
        ] {
            if v <= 0.0 {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.rho_malaga) {
            return Err(Error::Domain(format!(
                "rho_malaga must lie in [0,1], got {}",
                self.rho_malaga
            )));
        }
        Ok(())
    }
}

/// One realization of the composite fading coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelDraw {
    pub h_l: f64,
    pub h_a: f64,
    pub h_p: f64,
    pub h_aoa: f64,
    pub h: f64,
}

/// Which form of the coherence-length expression to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoherenceVariant {
    /// As printed (with lambda^2); yields non-physical magnitudes.
    PaperLambda,
    /// Standard form with the wavenumber squared. Default.
    StandardK,
}

/// Kim-model scattering coefficient (1/km) from visibility (km) and
/// wavelength (m).
pub fn scattering_coefficient(v_d_km: f64, lambda_m: f64) -> Result<f64> {
    if v_d_km <= 0.0 {
        return Err(Error::Domain(format!("visibility must be > 0, got {v_d_km}")));
    }
    let lambda_nm = lambda_m * 1e9;
    let q = if v_d_km > 50.0 {
        1.6
    } else if v_d_km > 6.0 {
        1.3
    } else if v_d_km > 1.0 {
        0.16 * v_d_km + 0.34
    } else if v_d_km > 0.5 {
        v_d_km - 0.5
    } else {
        0.0
    };
    Ok((3.91 / v_d_km) * (lambda_nm / 550.0).powf(-q))
}

/// Beer-Lambert attenuation over `z` metres with `xi` per kilometre.
pub fn atmospheric_attenuation(z_m: f64, xi_per_km: f64) -> Result<f64> {
    if z_m < 0.0 || xi_per_km < 0.0 {
        return Err(Error::Domain(format!(
            "attenuation inputs must be non-negative: Z={z_m}, xi={xi_per_km}"
        )));
    }
    Ok((-(z_m / 1000.0) * xi_per_km).exp())
}

/// Rytov variance sigma_R^2 = 1.23 Cn^2 k^(7/6) Z^(11/6), k = 2 pi / lambda.
pub fn rytov_variance(cn2: f64, lambda_m: f64, z_m: f64) -> Result<f64> {
    if cn2 <= 0.0 || lambda_m <= 0.0 || z_m < 0.0 {
        return Err(Error::Domain(format!(
            "rytov inputs out of domain: Cn2={cn2}, lambda={lambda_m}, Z={z_m}"
        )));
    }
    let k = 2.0 * std::f64::consts::PI / lambda_m;
    Ok(1.23 * cn2 * k.powf(7.0 / 6.0) * z_m.powf(11.0 / 6.0))
}

/// Coherence length rho_c = (0.55 Cn^2 w^2 Z)^(-3/5), where `w` is the
/// wavenumber (standard) or the wavelength exactly as printed.
pub fn coherence_length(
    cn2: f64,
    lambda_m: f64,
    z_m: f64,
    variant: CoherenceVariant,
) -> Result<f64> {
    if cn2 <= 0.0 || lambda_m <= 0.0 || z_m <= 0.0 {
        return Err(Error::Domain(format!(
            "coherence inputs must be positive: Cn2={cn2}, lambda={lambda_m}, Z={z_m}"
        )));
    }
    let w2 = match variant {
        CoherenceVariant::PaperLambda => lambda_m * lambda_m,
        CoherenceVariant::StandardK => {
            let k = 2.0 * std::f64::consts::PI / lambda_m;
            k * k
        }
    };
    Ok((0.55 * cn2 * w2 * z_m).powf(-3.0 / 5.0))
}

/// Gaussian beam width at distance Z given the waist and coherence length.
pub fn beam_width(z_m: f64, w_oz: f64, lambda_m: f64, rho_c: f64) -> Result<f64> {
    if w_oz <= 0.0 || lambda_m <= 0.0 || rho_c <= 0.0 || z_m < 0.0 {
        return Err(Error::Domain(format!(
            "beam_width inputs out of domain: Z={z_m}, w_oz={w_oz}, lambda={lambda_m}, rho_c={rho_c}"
        )));
    }
    let theta = 1.0 + 2.0 * w_oz * w_oz / (rho_c * rho_c);
    let diff = lambda_m * z_m / (std::f64::consts::PI * w_oz * w_oz);
    Ok(w_oz * (1.0 + theta * diff * diff).sqrt())
}

/// Geometry-derived quantities of the pointing-error model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointingParams {
    /// Beam waist at the receiver (m).
    pub w_z: f64,
    /// erf argument sqrt(pi/2) r_a / w_z.
    pub v: f64,
    /// Power fraction collected at zero pointing error.
    pub a0: f64,
    /// Equivalent beam radius (m).
    pub w_zeq: f64,
    /// Ratio w_zeq / (2 sigma_s).
    pub g: f64,
}

/// Pointing geometry from lens radius, beam width, and jitter deviation.
///
/// Uses the standard equivalent-beam form
/// `w_zeq^2 = w_z^2 sqrt(pi) erf(v) / (2 v exp(-v^2))`.
pub fn pointing_params(r_a: f64, w_z: f64, sigma_s: f64) -> Result<PointingParams> {
    if r_a <= 0.0 || w_z <= 0.0 || sigma_s <= 0.0 {
        return Err(Error::Domain(format!(
            "pointing inputs must be positive: r_a={r_a}, w_z={w_z}, sigma_s={sigma_s}"
        )));
    }
    let v = (std::f64::consts::PI / 2.0).sqrt() * r_a / w_z;
    let e = erf(v);
    let a0 = e * e;
    let w_zeq2 = w_z * w_z * std::f64::consts::PI.sqrt() * e / (2.0 * v * (-v * v).exp());
    let w_zeq = w_zeq2.sqrt();
    Ok(PointingParams {
        w_z,
        v,
        a0,
        w_zeq,
        g: w_zeq / (2.0 * sigma_s),
    })
}

/// Inverse-CDF draw of the pointing fading: h_p = A0 u^(1/g^2), u in (0,1].
pub fn sample_pointing(rng: &mut RngStream, a0: f64, g: f64) -> f64 {
    debug_assert!(a0 > 0.0 && a0 < 1.0 && g > 0.0);
    let u = rng.uniform_open();
    a0 * u.powf(1.0 / (g * g))
}

/// Probability that the angle of arrival exceeds the field of view:
/// S = exp(-theta_FoV^2 / (2 sigma_a^2)).
pub fn aoa_outage_prob(theta_fov: f64, sigma_a: f64) -> Result<f64> {
    if theta_fov <= 0.0 || sigma_a <= 0.0 {
        return Err(Error::Domain(format!(
            "aoa inputs must be positive: theta_fov={theta_fov}, sigma_a={sigma_a}"
        )));
    }
    Ok((-theta_fov * theta_fov / (2.0 * sigma_a * sigma_a)).exp())
}

/// AoA outage indicator: 0 with probability `s`, else 1.
pub fn sample_aoa(rng: &mut RngStream, s: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&s));
    if rng.uniform() < s {
        0.0
    } else {
        1.0
    }
}

/// Angular-jitter deviation from UAV boresight angles and orientation
/// deviations:
/// sigma_a^2 = ((3 t'x^2 sx^4 + 3 t'y^2 sy^4 + sx^6 + sy^6) / 2)^(1/3).
pub fn compute_sigma_a(
    theta_tx_p: f64,
    theta_ty_p: f64,
    sigma_txo: f64,
    sigma_tyo: f64,
) -> Result<f64> {
    if sigma_txo <= 0.0 || sigma_tyo <= 0.0 {
        return Err(Error::Domain(
            "orientation standard deviations must be positive".into(),
        ));
    }
    let s2 = ((3.0 * theta_tx_p * theta_tx_p * sigma_txo.powi(4)
        + 3.0 * theta_ty_p * theta_ty_p * sigma_tyo.powi(4)
        + sigma_txo.powi(6)
        + sigma_tyo.powi(6))
        / 2.0)
        .powf(1.0 / 3.0);
    Ok(s2.sqrt())
}

/// Draw environment parameters uniformly over their admissible ranges
/// (component order: Z, V_d, Cn2, sigma_s, sigma_a).
pub fn sample_env(rng: &mut RngStream) -> EnvParams {
    let z = rng.range(Z_RANGE.0, Z_RANGE.1);
    let v_d = rng.range(VD_RANGE.0, VD_RANGE.1);
    let cn2 = CN2_SET[rng.below(CN2_SET.len() as u64) as usize];
    let sigma_s = rng.range(SIGMA_S_RANGE.0, SIGMA_S_RANGE.1);
    let sigma_a = rng.range(SIGMA_A_RANGE.0, SIGMA_A_RANGE.1);
    EnvParams {
        z,
        v_d,
        cn2,
        sigma_s,
        sigma_a,
    }
}

/// Received vector y_i = amplitude * h * x_i + w_i with w ~ N(0, sigma_w^2).
pub fn apply_channel(
    x: &[f64],
    h: f64,
    amplitude: f64,
    sigma_w: f64,
    rng: &mut RngStream,
) -> Vec<f64> {
    x.iter()
        .map(|xi| amplitude * h * xi + sigma_w * rng.normal())
        .collect()
}

/// The full channel model: constants plus the precomputed turbulence CDF
/// table (the Malaga shape does not depend on the environment vector, so the
/// table is built once).
#[derive(Debug, Clone)]
pub struct ChannelModel {
    pub consts: ChannelConstants,
    pub variant: CoherenceVariant,
    pub malaga: MalagaParams,
    table: MalagaCdfTable,
}

impl ChannelModel {
    pub fn new(consts: ChannelConstants, variant: CoherenceVariant) -> Result<Self> {
        consts.validate()?;
        let malaga = malaga::malaga_params(&consts)?;
        let table = MalagaCdfTable::build(&malaga, consts.alpha, consts.beta)?;
        Ok(Self {
            consts,
            variant,
            malaga,
            table,
        })
    }

    pub fn table(&self) -> &MalagaCdfTable {
        &self.table
    }

    /// Pointing geometry induced by an environment draw.
    pub fn pointing_for(&self, env: &EnvParams) -> Result<PointingParams> {
        let rho_c = coherence_length(env.cn2, self.consts.lambda, env.z, self.variant)?;
        let w_z = beam_width(env.z, self.consts.w_oz, self.consts.lambda, rho_c)?;
        pointing_params(self.consts.r_a, w_z, env.sigma_s)
    }

    /// One composite draw (one transmitted block). Factor order is fixed:
    /// turbulence, pointing, angle-of-arrival.
    pub fn sample_channel(&self, rng: &mut RngStream, env: &EnvParams) -> Result<ChannelDraw> {
        let xi = scattering_coefficient(env.v_d, self.consts.lambda)?;
        let h_l = atmospheric_attenuation(env.z, xi)?;
        let h_a = self.table.sample(rng);
        let pp = self.pointing_for(env)?;
        let h_p = sample_pointing(rng, pp.a0, pp.g);
        let s = aoa_outage_prob(self.consts.theta_fov, env.sigma_a)?;
        let h_aoa = sample_aoa(rng, s);
        Ok(ChannelDraw {
            h_l,
            h_a,
            h_p,
            h_aoa,
            h: h_l * h_a * h_p * h_aoa,
        })
    }

    /// Monte Carlo estimate of E[h] over the environment distribution,
    /// from a dedicated calibration stream.
    pub fn calibrate_mean_h(&self, master_seed: u64, draws: usize) -> Result<f64> {
        let mut rng = RngStream::derive(master_seed, CALIBRATION_STREAM);
        let mut acc = 0.0;
        for _ in 0..draws {
            let env = sample_env(&mut rng);
            acc += self.sample_channel(&mut rng, &env)?.h;
        }
        Ok(acc / draws as f64)
    }
}

/// Stream id reserved for SNR calibration draws.
pub const CALIBRATION_STREAM: u64 = 0xCA11_B7A7;

/// Transmit-side scaling solved from a target SNR under the convention
/// `SNR_dB = 20 log10(amplitude * E[h] / sigma_w)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkBudget {
    pub amplitude: f64,
    pub sigma_w: f64,
    pub mean_h: f64,
    pub snr_db: f64,
}

impl LinkBudget {
    pub fn from_snr_db(snr_db: f64, sigma_w: f64, mean_h: f64) -> Self {
        let amplitude = sigma_w * 10f64.powf(snr_db / 20.0) / mean_h;
        Self {
            amplitude,
            sigma_w,
            mean_h,
            snr_db,
        }
    }

    /// Receiver-side normalization 1 / (amplitude * E[h]).
    pub fn decode_scale(&self) -> f64 {
        1.0 / (self.amplitude * self.mean_h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Frozen oracle values (scipy/mpmath, 40-digit evaluation).
    const XI_13KM: f64 = 0.07821205442470243;
    const XI_2KM: f64 = 0.9866593050322449;
    const HL_1KM: f64 = 0.9247702044080032;
    const RYTOV_REF: f64 = 0.995477192556352;
    const RHO_STD: f64 = 0.02552598910153099;
    const RHO_PAPER: f64 = 2.0323679890036168e13;
    const WZ_REF: f64 = 2.0001871838045844;
    const V_REF: f64 = 0.06265944092168284;
    const A0_REF: f64 = 0.004985939354966878;
    const G_REF: f64 = 33.38033552868824;
    const S_E8: f64 = 3.3546262790251185e-4;
    const SIGMA_A_EX: f64 = 0.003078073975148189;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn kim_scattering_reference_points() {
        assert!(rel(scattering_coefficient(13.0, 1550e-9).unwrap(), XI_13KM) < 1e-12);
        assert!(rel(scattering_coefficient(2.0, 1550e-9).unwrap(), XI_2KM) < 1e-12);
        // limit: vanishes as visibility grows
        assert!(scattering_coefficient(1e9, 1550e-9).unwrap() < 1e-8);
        assert!(scattering_coefficient(0.0, 1550e-9).is_err());
        assert!(scattering_coefficient(-1.0, 1550e-9).is_err());
    }

    #[test]
    fn beer_lambert_reference_points() {
        assert_eq!(atmospheric_attenuation(0.0, 0.3).unwrap(), 1.0);
        assert_eq!(atmospheric_attenuation(4000.0, 0.0).unwrap(), 1.0);
        assert!(rel(atmospheric_attenuation(1000.0, 0.07821).unwrap(), HL_1KM) < 1e-12);
        assert!(atmospheric_attenuation(-1.0, 0.1).is_err());
        assert!(atmospheric_attenuation(1.0, -0.1).is_err());
    }

    #[test]
    fn rytov_reference_and_linearity() {
        let s = rytov_variance(5e-14, 1550e-9, 1000.0).unwrap();
        assert!(rel(s, RYTOV_REF) < 1e-12);
        assert_eq!(rytov_variance(5e-14, 1550e-9, 0.0).unwrap(), 0.0);
        let d = rytov_variance(1e-13, 1550e-9, 1000.0).unwrap();
        assert!(rel(d, 2.0 * rytov_variance(5e-14, 1550e-9, 1000.0).unwrap()) < 1e-12);
    }

    #[test]
    fn coherence_both_variants() {
        let std =
            coherence_length(5e-14, 1550e-9, 1000.0, CoherenceVariant::StandardK).unwrap();
        assert!(rel(std, RHO_STD) < 1e-12);
        let paper =
            coherence_length(5e-14, 1550e-9, 1000.0, CoherenceVariant::PaperLambda).unwrap();
        assert!(rel(paper, RHO_PAPER) < 1e-10);
        // the printed form is non-physical: kilometres-plus coherence radii
        assert!(paper > 1e10);
        // power law: rho(2Z) = 2^(-3/5) rho(Z)
        let z2 = coherence_length(5e-14, 1550e-9, 2000.0, CoherenceVariant::StandardK).unwrap();
        assert!(rel(z2, std * 2f64.powf(-0.6)) < 1e-12);
    }

    #[test]
    fn beam_width_reference_and_monotonicity() {
        let w = beam_width(1000.0, 2.0, 1550e-9, 0.0255).unwrap();
        assert!(rel(w, WZ_REF) < 1e-12);
        assert_eq!(beam_width(0.0, 2.0, 1550e-9, 0.0255).unwrap(), 2.0);
        let mut prev = 0.0;
        for z in [0.0, 1000.0, 2500.0, 5000.0] {
            let wz = beam_width(z, 2.0, 1550e-9, 0.0255).unwrap();
            assert!(wz >= prev);
            prev = wz;
        }
    }

    #[test]
    fn pointing_reference_geometry() {
        let pp = pointing_params(0.1, 2.0002, 0.03).unwrap();
        assert!(rel(pp.v, V_REF) < 1e-12);
        assert!(rel(pp.a0, A0_REF) < 1e-10);
        assert!(rel(pp.g, G_REF) < 1e-10);
        assert!(pp.a0 > 0.0 && pp.a0 < 1.0);
        // v large -> A0 -> 1
        let wide = pointing_params(100.0, 1.0, 0.03).unwrap();
        assert!((wide.a0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn pointing_sampler_support_and_endpoint() {
        let pp = pointing_params(0.1, 2.0002, 0.03).unwrap();
        let mut rng = RngStream::new(5);
        for _ in 0..10_000 {
            let h = sample_pointing(&mut rng, pp.a0, pp.g);
            assert!(h > 0.0 && h <= pp.a0);
        }
        // u = 1 gives exactly A0 by the inverse CDF
        assert_eq!(pp.a0 * 1f64.powf(1.0 / (pp.g * pp.g)), pp.a0);
    }

    #[test]
    fn pointing_sampler_mean_closed_form() {
        // E[h_p] = A0 g^2 / (g^2 + 1); use a small g so the test is sharp
        let (a0, g) = (0.3, 2.0);
        let mut rng = RngStream::new(77);
        let n = 400_000;
        let mean: f64 = (0..n)
            .map(|_| sample_pointing(&mut rng, a0, g))
            .sum::<f64>()
            / n as f64;
        let want = a0 * g * g / (g * g + 1.0);
        assert!(rel(mean, want) < 5e-3, "mean {mean} want {want}");
    }

    #[test]
    fn pointing_empirical_cdf_matches_power_law() {
        let (a0, g) = (0.3, 2.0);
        let mut rng = RngStream::new(21);
        let n = 200_000usize;
        let mut samples: Vec<f64> = (0..n).map(|_| sample_pointing(&mut rng, a0, g)).collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for frac in [0.25, 0.5, 0.75] {
            let x = frac * a0;
            let emp = samples.partition_point(|s| *s <= x) as f64 / n as f64;
            let want = frac.powf(g * g);
            assert!(
                (emp - want).abs() < 5e-3,
                "F({x}) = {emp}, want {want}"
            );
        }
    }

    #[test]
    fn aoa_reference_and_limits() {
        let s = aoa_outage_prob(0.020, 0.005).unwrap();
        assert!(rel(s, S_E8) < 1e-12);
        assert!(aoa_outage_prob(0.020, 1e-9).unwrap() < 1e-300);
        assert!((aoa_outage_prob(0.020, 1e9).unwrap() - 1.0).abs() < 1e-12);
        let mut rng = RngStream::new(1);
        assert_eq!(sample_aoa(&mut rng, 0.0), 1.0);
        assert_eq!(sample_aoa(&mut rng, 1.0), 0.0);
    }

    #[test]
    fn sigma_a_symmetry_and_reference() {
        // symmetric zero-boresight case collapses to sigma^2
        let s = compute_sigma_a(0.0, 0.0, 3e-3, 3e-3).unwrap();
        assert!(rel(s, 3e-3) < 1e-12);
        let v = compute_sigma_a(1e-3, 0.0, 3e-3, 3e-3).unwrap();
        assert!(rel(v, SIGMA_A_EX) < 1e-12);
        // degree-1 homogeneity
        let a = compute_sigma_a(1e-3, 2e-3, 3e-3, 4e-3).unwrap();
        let b = compute_sigma_a(2e-3, 4e-3, 6e-3, 8e-3).unwrap();
        assert!(rel(b, 2.0 * a) < 1e-12);
    }

    #[test]
    fn env_sampling_stays_in_ranges() {
        let mut rng = RngStream::new(123);
        for _ in 0..100_000 {
            let env = sample_env(&mut rng);
            env.validate().unwrap();
        }
    }

    #[test]
    fn env_component_means_near_midpoints() {
        let mut rng = RngStream::new(9);
        let n = 100_000;
        let (mut z, mut vd, mut ss, mut sa) = (0.0, 0.0, 0.0, 0.0);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            let e = sample_env(&mut rng);
            z += e.z;
            vd += e.v_d;
            ss += e.sigma_s;
            sa += e.sigma_a;
            let idx = CN2_SET.iter().position(|c| *c == e.cn2).unwrap();
            counts[idx] += 1;
        }
        let nf = n as f64;
        assert!(rel(z / nf, 3000.0) < 0.01);
        assert!(rel(vd / nf, 7.5) < 0.01);
        assert!(rel(ss / nf, 0.03) < 0.01);
        assert!(rel(sa / nf, 0.0035) < 0.01);
        // multinomial: each freq within 3 sigma of 0.25
        let sigma = (0.25 * 0.75 / nf).sqrt();
        for c in counts {
            assert!((c as f64 / nf - 0.25).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn apply_channel_identity_and_noise_variance() {
        let mut rng = RngStream::new(4);
        let x = vec![0.0, 0.25, 0.5, 1.0];
        let y = apply_channel(&x, 1.0, 1.0, 0.0, &mut rng);
        assert_eq!(y, x);

        let zeros = vec![0.0; 200_000];
        let y = apply_channel(&zeros, 1.0, 1.0, 0.7, &mut rng);
        let var = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
        assert!(rel(var, 0.49) < 0.02, "noise var {var}");
    }

    #[test]
    fn apply_channel_linearity_in_mean() {
        let mut rng = RngStream::new(8);
        let x = vec![0.5; 100_000];
        let y2 = apply_channel(&x.iter().map(|v| 2.0 * v).collect::<Vec<_>>(), 0.8, 1.5, 0.3, &mut rng);
        let mean = y2.iter().sum::<f64>() / y2.len() as f64;
        assert!(rel(mean, 2.0 * 1.5 * 0.8 * 0.5) < 0.01);
    }

    #[test]
    fn channel_draw_is_product_and_deterministic() {
        let model = ChannelModel::new(ChannelConstants::default(), CoherenceVariant::StandardK)
            .unwrap();
        let env = EnvParams {
            z: 1500.0,
            v_d: 10.0,
            cn2: 5e-14,
            sigma_s: 0.03,
            sigma_a: 0.004,
        };
        let mut r1 = RngStream::new(42);
        let mut r2 = RngStream::new(42);
        for _ in 0..1000 {
            let a = model.sample_channel(&mut r1, &env).unwrap();
            let b = model.sample_channel(&mut r2, &env).unwrap();
            assert_eq!(a.h.to_bits(), b.h.to_bits());
            assert_eq!(a.h, a.h_l * a.h_a * a.h_p * a.h_aoa);
            assert!(a.h_l > 0.0 && a.h_l <= 1.0);
            assert!(a.h_a > 0.0);
            assert!(a.h_p > 0.0);
            assert!(a.h_aoa == 0.0 || a.h_aoa == 1.0);
        }
    }

    #[test]
    fn link_budget_round_trip() {
        let lb = LinkBudget::from_snr_db(10.0, 1e-5, 2e-3);
        let snr = 20.0 * (lb.amplitude * lb.mean_h / lb.sigma_w).log10();
        assert!((snr - 10.0).abs() < 1e-10);
        assert!(rel(lb.decode_scale(), 1.0 / (lb.amplitude * lb.mean_h)) < 1e-15);
    }
}
