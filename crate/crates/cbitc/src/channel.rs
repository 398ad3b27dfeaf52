//! Air-to-ground channel model: probabilistic LoS/NLoS path loss with a
//! synthesized vertical uniform-linear-array antenna pattern, producing the
//! complex baseband channel coefficient from each BS to the UAV and the
//! receiver noise power.
//!
//! The LoS probability and the two path-loss branches use a small parametric
//! model: line of sight is certain above a configurable altitude threshold
//! and decays exponentially with horizontal distance below it; the LoS branch
//! is free-space (exponent 2) and the NLoS branch uses a larger exponent plus
//! a fixed excess loss. Channel phase is uniform, since every analytic result
//! downstream is phase-invariant once the beamforming phases are aligned.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::Deserialize;

use crate::topology::{distance_3d, Point3};
use crate::{Error, Result};

/// Vertical uniform linear array synthesizing the BS antenna pattern.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AntennaConfig {
    pub num_elements: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
    /// Electrical downtilt in degrees below the horizon.
    pub downtilt_deg: f64,
}

impl Default for AntennaConfig {
    fn default() -> Self {
        Self {
            num_elements: 10,
            element_spacing: 0.5,
            downtilt_deg: 10.0,
        }
    }
}

/// Channel model parameters.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    pub carrier_frequency_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub rb_subcarriers: u32,
    pub subcarrier_spacing_hz: f64,
    /// Above this UAV altitude the link is always line-of-sight.
    pub los_altitude_threshold_m: f64,
    /// Horizontal e-folding distance of the LoS probability near ground level.
    pub los_decay_scale_m: f64,
    pub pathloss_exponent_los: f64,
    pub pathloss_exponent_nlos: f64,
    pub nlos_extra_loss_db: f64,
    /// Log-normal shadow fading standard deviation; 0 disables shadowing.
    pub shadow_sigma_db: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            carrier_frequency_hz: 2.0e9,
            noise_psd_dbm_hz: -164.0,
            rb_subcarriers: 12,
            subcarrier_spacing_hz: 15.0e3,
            los_altitude_threshold_m: 100.0,
            los_decay_scale_m: 300.0,
            pathloss_exponent_los: 2.0,
            pathloss_exponent_nlos: 3.5,
            nlos_extra_loss_db: 20.0,
            shadow_sigma_db: 0.0,
        }
    }
}

impl ChannelParams {
    /// Sanity-check the parametrization: positive scales, free-space or
    /// steeper exponents, NLoS never milder than LoS.
    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_frequency_hz > 0.0)
            || !(self.subcarrier_spacing_hz > 0.0)
            || self.rb_subcarriers == 0
            || !(self.los_altitude_threshold_m > 0.0)
            || !(self.los_decay_scale_m > 0.0)
        {
            return Err(Error::InvalidArgument(
                "channel frequencies and scales must be positive".into(),
            ));
        }
        if self.pathloss_exponent_los < 2.0
            || self.pathloss_exponent_nlos < self.pathloss_exponent_los
            || self.nlos_extra_loss_db < 0.0
            || self.shadow_sigma_db < 0.0
        {
            return Err(Error::InvalidArgument(
                "need NLoS exponent >= LoS exponent >= 2 and nonnegative losses".into(),
            ));
        }
        Ok(())
    }
}

/// Complex baseband channel coefficient from a BS to the UAV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelCoefficient {
    /// Linear field gain, >= 0.
    pub amplitude: f64,
    /// Phase in [0, 2*pi).
    pub phase: f64,
    pub los: bool,
}

impl ChannelCoefficient {
    pub fn coefficient(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude, self.phase)
    }

    /// Channel power gain |f|^2.
    pub fn power_gain(&self) -> f64 {
        self.amplitude * self.amplitude
    }
}

/// Receiver noise power over the UAV's resource block, in watts.
pub fn noise_power(params: &ChannelParams) -> f64 {
    let bandwidth = params.rb_subcarriers as f64 * params.subcarrier_spacing_hz;
    let dbm = params.noise_psd_dbm_hz + 10.0 * bandwidth.log10();
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Half-wave dipole element power pattern at `elevation` radians above the
/// horizon. Unity toward the horizon, zero toward zenith/nadir.
fn element_power_pattern(elevation: f64) -> f64 {
    let c = elevation.cos();
    if c.abs() < 1e-12 {
        return 0.0;
    }
    let num = (PI / 2.0 * elevation.sin()).cos();
    (num * num) / (c * c)
}

/// Linear power gain of the synthesized ULA pattern at `elevation` radians
/// above the horizon (negative = below). Product of the element power
/// pattern and the squared array-factor magnitude, steered to the downtilt.
pub fn array_gain(config: &AntennaConfig, elevation: f64) -> f64 {
    let n = config.num_elements as f64;
    let steer = -config.downtilt_deg.to_radians();
    let psi = TAU * config.element_spacing * (elevation.sin() - steer.sin());
    let half = psi / 2.0;
    let af_sq = if half.sin().abs() < 1e-9 {
        // Main lobe (or grating lobe): |AF| -> N.
        n * n
    } else {
        let af = (n * half).sin() / half.sin();
        af * af
    };
    element_power_pattern(elevation) * af_sq
}

/// Probability of line of sight given horizontal distance and UAV altitude.
///
/// Certain LoS at or above the altitude threshold; below it, exponential
/// decay in horizontal distance with an e-folding scale that stretches as
/// the UAV climbs toward the threshold.
pub fn los_probability(params: &ChannelParams, horizontal_distance: f64, uav_altitude: f64) -> f64 {
    if uav_altitude >= params.los_altitude_threshold_m {
        return 1.0;
    }
    let climb = (1.0 - uav_altitude / params.los_altitude_threshold_m).max(0.0);
    (-horizontal_distance * climb / params.los_decay_scale_m).exp()
}

/// Path loss in dB at 3D distance `d3d_m`, per branch. The LoS branch at the
/// free-space exponent reproduces 32.45 + 20 log10(f_MHz) + 20 log10(d_km).
pub fn pathloss_db(params: &ChannelParams, d3d_m: f64, los: bool) -> f64 {
    let f_mhz = params.carrier_frequency_hz / 1e6;
    // Free-space loss at the 1 m reference distance.
    let ref_1m = 32.45 + 20.0 * f_mhz.log10() - 60.0;
    let exponent = if los {
        params.pathloss_exponent_los
    } else {
        params.pathloss_exponent_nlos
    };
    let extra = if los { 0.0 } else { params.nlos_extra_loss_db };
    ref_1m + 10.0 * exponent * d3d_m.log10() + extra
}

/// Draw one channel realization from a BS to the UAV.
///
/// The LoS state is Bernoulli with [`los_probability`], the amplitude follows
/// the antenna gain and branch path loss, and the phase is uniform in
/// [0, 2*pi). Deterministic for a given RNG state.
pub fn sample_channel<R: Rng + ?Sized>(
    rng: &mut R,
    params: &ChannelParams,
    config: &AntennaConfig,
    bs_position: &Point3,
    uav_position: &Point3,
) -> Result<ChannelCoefficient> {
    let d3d = distance_3d(bs_position, uav_position);
    if d3d == 0.0 {
        return Err(Error::InvalidArgument(
            "BS and UAV positions coincide".into(),
        ));
    }
    let d2d = bs_position.horizontal_distance(uav_position);
    let elevation = (uav_position.z - bs_position.z).atan2(d2d);

    let p_los = los_probability(params, d2d, uav_position.z);
    let los = rng.random::<f64>() < p_los;

    let mut pl_db = pathloss_db(params, d3d, los);
    if params.shadow_sigma_db > 0.0 {
        // Box-Muller standard normal.
        let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos();
        pl_db += params.shadow_sigma_db * z;
    }

    let gain = array_gain(config, elevation) * 10f64.powf(-pl_db / 10.0);
    let phase = rng.random::<f64>() * TAU;
    Ok(ChannelCoefficient {
        amplitude: gain.sqrt(),
        phase,
        los,
    })
}
