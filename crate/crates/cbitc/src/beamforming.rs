//! SINR expressions and optimal beamforming for the UAV downlink.
//!
//! Covers the three schemes: single-BS association without cooperative
//! beamforming, conventional CB (available BSs transmit only the UAV's
//! symbol), and CB with interference transmission and cancellation, where the
//! available BSs also spend power retransmitting the terrestrial symbols in
//! anti-phase. For a single available BS the optimal power split between the
//! UAV's symbol and the cancellation signals has a closed form; the general
//! case is handled by the conic solver in [`crate::solver`].
//!
//! All SINR math is carried in linear units; dB conversions happen only at
//! I/O boundaries.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::Deserialize;

use crate::{Error, Result};

/// Transmission scheme under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub enum Scheme {
    NoCb,
    ConvCb,
    CentralizedItc,
    DistributedItc,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::NoCb,
        Scheme::ConvCb,
        Scheme::CentralizedItc,
        Scheme::DistributedItc,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Scheme::NoCb => "NoCB",
            Scheme::ConvCb => "ConvCB",
            Scheme::CentralizedItc => "CentralizedITC",
            Scheme::DistributedItc => "DistributedITC",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nocb" | "no-cb" => Ok(Scheme::NoCb),
            "convcb" | "conv-cb" => Ok(Scheme::ConvCb),
            "centralizeditc" | "centralized-itc" | "centralized" => Ok(Scheme::CentralizedItc),
            "distributeditc" | "distributed-itc" | "distributed" => Ok(Scheme::DistributedItc),
            other => Err(Error::InvalidArgument(format!("unknown scheme '{other}'"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// SINR outcome of one scheme on one realization.
#[derive(Debug, Clone, Copy)]
pub struct SinrReport {
    pub scheme: Scheme,
    /// Linear SINR.
    pub sinr: f64,
    /// Achievable rate log2(1 + sinr) in bits/s/Hz.
    pub rate: f64,
}

impl SinrReport {
    pub fn new(scheme: Scheme, sinr: f64) -> Self {
        Self {
            scheme,
            sinr,
            rate: (1.0 + sinr).log2(),
        }
    }
}

/// Nonnegative transmit amplitudes at each available BS: `v_u[i]` for the
/// UAV's symbol and `v_j[j][i]` for the symbol of the UE served by occupied
/// BS `j`. Index `i` runs over the available set in ascending BS order.
#[derive(Debug, Clone)]
pub struct PowerAllocation {
    pub v_u: Vec<f64>,
    pub v_j: BTreeMap<usize, Vec<f64>>,
    pub power_budget: f64,
}

impl PowerAllocation {
    pub fn num_available(&self) -> usize {
        self.v_u.len()
    }

    /// Total transmit power of available BS `i`.
    pub fn per_bs_power(&self, i: usize) -> f64 {
        let itc: f64 = self.v_j.values().map(|v| v[i] * v[i]).sum();
        itc + self.v_u[i] * self.v_u[i]
    }

    /// Check nonnegativity and the per-BS power budget within `tol` watts.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.v_u.iter().any(|&v| v < 0.0)
            || self.v_j.values().any(|v| v.iter().any(|&x| x < 0.0))
        {
            return Err(Error::InvalidArgument(
                "allocation amplitudes must be nonnegative".into(),
            ));
        }
        for v in self.v_j.values() {
            if v.len() != self.v_u.len() {
                return Err(Error::InvalidArgument(
                    "allocation vectors have inconsistent lengths".into(),
                ));
            }
        }
        for i in 0..self.num_available() {
            let p = self.per_bs_power(i);
            if p > self.power_budget + tol {
                return Err(Error::InvalidArgument(format!(
                    "BS {i} power {p} exceeds budget {}",
                    self.power_budget
                )));
            }
        }
        Ok(())
    }
}

/// Complex beamforming weights at each available BS, same indexing as
/// [`PowerAllocation`].
#[derive(Debug, Clone)]
pub struct Beamformer {
    pub w_u: Vec<Complex64>,
    pub w_j: BTreeMap<usize, Vec<Complex64>>,
}

impl Beamformer {
    pub fn num_available(&self) -> usize {
        self.w_u.len()
    }

    pub fn per_bs_power(&self, i: usize) -> f64 {
        let itc: f64 = self.w_j.values().map(|w| w[i].norm_sqr()).sum();
        itc + self.w_u[i].norm_sqr()
    }
}

/// SINR of single-BS association without cooperative beamforming: the serving
/// BS transmits at full power against the aggregate terrestrial interference.
pub fn sinr_no_cb(serving_gain: f64, occupied_gains: &[f64], power: f64, noise: f64) -> f64 {
    let interference: f64 = occupied_gains.iter().sum::<f64>() * power;
    power * serving_gain / (noise + interference)
}

/// SINR of conventional CB: all available BSs transmit the UAV's symbol at
/// full power with phase-aligned weights, interference untouched.
pub fn sinr_conventional_cb(
    available_amps: &[f64],
    occupied_gains: &[f64],
    power: f64,
    noise: f64,
) -> f64 {
    let signal_amp: f64 = available_amps.iter().sum::<f64>() * power.sqrt();
    let interference: f64 = occupied_gains.iter().sum::<f64>() * power;
    signal_amp * signal_amp / (noise + interference)
}

/// Assemble complex weights from an amplitude allocation using the optimal
/// phases: the UAV weights conjugate the serving channel phase so the signals
/// combine coherently, and each cancellation weight lands in anti-phase with
/// the corresponding terrestrial interference at the UAV receiver.
pub fn optimal_phases(
    alloc: &PowerAllocation,
    available: &[Complex64],
    occupied: &BTreeMap<usize, Complex64>,
) -> Beamformer {
    assert_eq!(alloc.v_u.len(), available.len(), "allocation/channel mismatch");
    let w_u = alloc
        .v_u
        .iter()
        .zip(available)
        .map(|(&amp, f_n)| Complex64::from_polar(amp, -f_n.arg()))
        .collect();
    let w_j = alloc
        .v_j
        .iter()
        .map(|(&j, amps)| {
            let f_j = occupied.get(&j).expect("channel for occupied BS");
            let weights = amps
                .iter()
                .zip(available)
                .map(|(&amp, f_n)| Complex64::from_polar(amp, f_j.arg() - f_n.arg() + PI))
                .collect();
            (j, weights)
        })
        .collect();
    Beamformer { w_u, w_j }
}

/// SINR achieved by a CB-ITC beamformer: coherent signal power over noise
/// plus residual terrestrial interference after cancellation. Occupied BSs
/// absent from the beamformer contribute their full interference power.
pub fn sinr_cb_itc(
    beamformer: &Beamformer,
    available: &[Complex64],
    occupied: &BTreeMap<usize, Complex64>,
    power: f64,
    noise: f64,
) -> Result<f64> {
    if beamformer.w_u.len() != available.len() {
        return Err(Error::InvalidArgument(
            "beamformer/channel dimension mismatch".into(),
        ));
    }
    let budget = power + 1e-6 * power + 1e-12;
    for i in 0..beamformer.num_available() {
        let p = beamformer.per_bs_power(i);
        if p > budget {
            return Err(Error::InvalidArgument(format!(
                "per-BS power constraint violated at BS {i}: {p} > {power}"
            )));
        }
    }

    let signal: Complex64 = available
        .iter()
        .zip(&beamformer.w_u)
        .map(|(f_n, w)| f_n * w)
        .sum();
    let sqrt_p = power.sqrt();
    let mut denom = noise;
    for (&j, f_j) in occupied {
        let mut residual = sqrt_p * f_j;
        if let Some(w) = beamformer.w_j.get(&j) {
            residual += available
                .iter()
                .zip(w)
                .map(|(f_n, w_nj)| f_n * w_nj)
                .sum::<Complex64>();
        }
        denom += residual.norm_sqr();
    }
    Ok(signal.norm_sqr() / denom)
}

/// Optimal single-BS, single-interferer power split.
#[derive(Debug, Clone, Copy)]
pub struct N1K1Solution {
    /// Amplitude spent canceling the interferer.
    pub v_j: f64,
    /// Amplitude spent on the UAV's symbol.
    pub v_u: f64,
    /// Resulting maximum SINR.
    pub eta: f64,
}

/// Closed-form optimum of the one-available-BS, one-occupied-BS power split.
/// `f_a` and `f_o` are the channel amplitudes of the available and occupied
/// BS respectively.
pub fn closed_form_n1_k1(f_a: f64, f_o: f64, power: f64, noise: f64) -> Result<N1K1Solution> {
    if !(f_a > 0.0) {
        return Err(Error::DegenerateChannel(format!(
            "serving amplitude must be positive, got {f_a}"
        )));
    }
    if !(noise > 0.0) || power < 0.0 || f_o < 0.0 {
        return Err(Error::InvalidArgument(
            "need noise > 0, power >= 0, f_o >= 0".into(),
        ));
    }
    let fa2 = f_a * f_a;
    let fo2 = f_o * f_o;
    if power == 0.0 {
        return Ok(N1K1Solution {
            v_j: 0.0,
            v_u: 0.0,
            eta: 0.0,
        });
    }
    if f_o == 0.0 {
        // No interference to cancel; analytic limit of the general form.
        return Ok(N1K1Solution {
            v_j: 0.0,
            v_u: power.sqrt(),
            eta: power * fa2 / noise,
        });
    }
    let x = noise + (fa2 + fo2) * power;
    let disc = (x * x - 4.0 * fa2 * fo2 * power * power).max(0.0);
    let v_j = (x - disc.sqrt()) / (2.0 * f_a * f_o * power.sqrt());
    let v_u = (power - v_j * v_j).max(0.0).sqrt();
    let y = noise + (fo2 - fa2) * power;
    let eta = (-y + (y * y + 4.0 * noise * power * fa2).sqrt()) / (2.0 * noise);
    Ok(N1K1Solution { v_j, v_u, eta })
}

/// SINR when the single available BS spends all power on the UAV's symbol.
pub fn eta_without_itc(f_a: f64, f_o: f64, power: f64, noise: f64) -> f64 {
    power * f_a * f_a / (noise + power * f_o * f_o)
}

/// High-power behavior of the optimal single-BS SINR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaLimit {
    /// Converges to the given finite value (partial cancellation regime).
    Finite(f64),
    /// Grows linearly in the transmit power.
    DivergesLinearly,
    /// Grows like the square root of the transmit power (equal-gain case).
    DivergesSqrt,
}

#[derive(Debug, Clone, Copy)]
pub struct AsymptoticLimits {
    /// Limit of the ITC power fraction v_j^2 / P as the power grows.
    pub rho_j: f64,
    pub eta: EtaLimit,
}

/// Power-to-infinity limits of the optimal single-BS solution.
pub fn asymptotic_limits(f_a: f64, f_o: f64) -> AsymptoticLimits {
    let fa2 = f_a * f_a;
    let fo2 = f_o * f_o;
    let rho_j = if fa2 >= fo2 { fo2 / fa2 } else { fa2 / fo2 };
    let eta = if fa2 > fo2 {
        EtaLimit::DivergesLinearly
    } else if fa2 == fo2 {
        EtaLimit::DivergesSqrt
    } else {
        EtaLimit::Finite(fa2 / (fo2 - fa2))
    };
    AsymptoticLimits { rho_j, eta }
}

/// Optimal single-available-BS power split against any number of occupied
/// BSs.
#[derive(Debug, Clone)]
pub struct N1Solution {
    pub v_j: BTreeMap<usize, f64>,
    pub v_u: f64,
    pub eta: f64,
    /// ITC capability: serving gain minus the sum of interferer gains.
    pub s_a: f64,
}

/// Closed-form optimum with one available BS and K >= 0 occupied BSs;
/// reduces to [`closed_form_n1_k1`] when K = 1.
pub fn closed_form_n1_k_many(
    f_a: f64,
    occupied_amps: &BTreeMap<usize, f64>,
    power: f64,
    noise: f64,
) -> Result<N1Solution> {
    if !(f_a > 0.0) {
        return Err(Error::DegenerateChannel(format!(
            "serving amplitude must be positive, got {f_a}"
        )));
    }
    if !(noise > 0.0) || power < 0.0 {
        return Err(Error::InvalidArgument("need noise > 0, power >= 0".into()));
    }
    let fa2 = f_a * f_a;
    let s_a = fa2 - occupied_amps.values().map(|a| a * a).sum::<f64>();
    let y = noise - power * s_a;
    let eta = (-y + (y * y + 4.0 * noise * power * fa2).sqrt()) / (2.0 * noise);
    let scale = eta / (eta + 1.0) * power.sqrt() / f_a;
    let v_j: BTreeMap<usize, f64> = occupied_amps
        .iter()
        .map(|(&j, &amp)| (j, scale * amp))
        .collect();
    let spent: f64 = v_j.values().map(|v| v * v).sum();
    let v_u = (power - spent).max(0.0).sqrt();
    Ok(N1Solution { v_j, v_u, eta, s_a })
}

/// Derivative of the optimal SINR with respect to the ITC capability `s_a`;
/// strictly positive whenever the power is.
pub fn eta_sensitivity(s_a: f64, f_a: f64, power: f64, noise: f64) -> f64 {
    let fa2 = f_a * f_a;
    let y = noise - power * s_a;
    let radicand = y * y + 4.0 * noise * power * fa2;
    let eta = (-y + radicand.sqrt()) / (2.0 * noise);
    power * eta / radicand.sqrt()
}

/// ITC and UAV-signal power fractions (rho_j, rho_u) along a transmit-power
/// sweep for the single-BS, single-interferer case.
pub fn power_ratio_curve(
    f_a: f64,
    f_o: f64,
    noise: f64,
    p_list: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if p_list.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument("power list must ascend".into()));
    }
    p_list
        .iter()
        .map(|&p| {
            if p <= 0.0 {
                return Ok((0.0, 1.0));
            }
            let sol = closed_form_n1_k1(f_a, f_o, p, noise)?;
            let rho_j = sol.v_j * sol.v_j / p;
            Ok((rho_j, 1.0 - rho_j))
        })
        .collect()
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

fn unit_symbol<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::new(standard_normal(rng), standard_normal(rng)) / 2f64.sqrt()
}

/// Symbol-level Monte-Carlo SINR estimate: draws unit-power data symbols and
/// receiver noise, then forms the ratio of sample signal power to sample
/// interference-plus-noise power. Returns infinity when the realized
/// interference-plus-noise power is exactly zero but the signal is not.
pub fn empirical_sinr<R: Rng + ?Sized>(
    rng: &mut R,
    beamformer: &Beamformer,
    available: &[Complex64],
    occupied: &BTreeMap<usize, Complex64>,
    power: f64,
    noise: f64,
    num_symbols: usize,
) -> f64 {
    let c_u: Complex64 = available
        .iter()
        .zip(&beamformer.w_u)
        .map(|(f_n, w)| f_n * w)
        .sum();
    let sqrt_p = power.sqrt();
    let c_j: Vec<Complex64> = occupied
        .iter()
        .map(|(&j, f_j)| {
            let mut c = sqrt_p * f_j;
            if let Some(w) = beamformer.w_j.get(&j) {
                c += available
                    .iter()
                    .zip(w)
                    .map(|(f_n, w_nj)| f_n * w_nj)
                    .sum::<Complex64>();
            }
            c
        })
        .collect();

    let noise_amp = noise.sqrt();
    let mut signal_power = 0.0;
    let mut other_power = 0.0;
    for _ in 0..num_symbols {
        let x_u = unit_symbol(rng);
        signal_power += (c_u * x_u).norm_sqr();
        let mut y = noise_amp * unit_symbol(rng);
        for c in &c_j {
            y += c * unit_symbol(rng);
        }
        other_power += y.norm_sqr();
    }
    if other_power == 0.0 {
        if signal_power == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        signal_power / other_power
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    /// Brute-force optimum of the single-BS, single-interferer split over a
    /// uniform grid of the cancellation amplitude.
    fn grid_search_n1_k1(f_a: f64, f_o: f64, power: f64, noise: f64, points: usize) -> f64 {
        let fa2 = f_a * f_a;
        let mut best = 0.0f64;
        for i in 0..points {
            let v_j = power.sqrt() * i as f64 / (points - 1) as f64;
            let v_u2 = power - v_j * v_j;
            if v_u2 < 0.0 {
                continue;
            }
            let residual = f_o * power.sqrt() - f_a * v_j;
            let eta = fa2 * v_u2 / (noise + residual * residual);
            best = best.max(eta);
        }
        best
    }

    fn worked_example() -> N1K1Solution {
        closed_form_n1_k1(10f64.sqrt(), 12f64.sqrt(), 10.0, 1.0).unwrap()
    }

    #[test]
    fn no_cb_examples() {
        assert_eq!(sinr_no_cb(4.0, &[1.0], 0.0, 1.0), 0.0);
        assert!((sinr_no_cb(4.0, &[1.0], 1.0, 1.0) - 2.0).abs() < 1e-15);
        assert!((sinr_no_cb(10.0, &[], 10.0, 1.0) - 100.0).abs() < 1e-12);
    }

    #[test]
    fn conventional_cb_examples() {
        assert!((sinr_conventional_cb(&[1.0, 2.0], &[], 1.0, 1.0) - 9.0).abs() < 1e-12);
        let single = sinr_conventional_cb(&[2.0], &[1.5], 3.0, 0.5);
        assert!((single - sinr_no_cb(4.0, &[1.5], 3.0, 0.5)).abs() < 1e-12);
        assert_eq!(sinr_conventional_cb(&[1.0, 2.0], &[1.0], 0.0, 1.0), 0.0);
    }

    #[test]
    fn optimal_phase_angles() {
        let alloc = PowerAllocation {
            v_u: vec![1.0],
            v_j: BTreeMap::from([(3, vec![0.5])]),
            power_budget: 2.0,
        };
        let available = vec![Complex64::from_polar(1.0, PI / 4.0)];
        let occupied = BTreeMap::from([(3, Complex64::from_polar(1.0, 0.0))]);
        let bf = optimal_phases(&alloc, &available, &occupied);
        assert!((bf.w_u[0].arg() - (-PI / 4.0)).abs() < 1e-12);
        // angle(w_nj) = angle(f_j) - angle(f_n) + pi = -pi/4 + pi = 3pi/4.
        assert!((bf.w_j[&3][0].arg() - 3.0 * PI / 4.0).abs() < 1e-12);

        // With all-real positive channels the signal product is real
        // positive and the cancellation product real negative.
        let available = vec![Complex64::new(2.0, 0.0)];
        let occupied = BTreeMap::from([(3, Complex64::new(1.5, 0.0))]);
        let bf = optimal_phases(&alloc, &available, &occupied);
        let sig = available[0] * bf.w_u[0];
        let canc = available[0] * bf.w_j[&3][0];
        assert!(sig.re > 0.0 && sig.im.abs() < 1e-12);
        assert!(canc.re < 0.0 && canc.im.abs() < 1e-12);
    }

    #[test]
    fn cb_itc_reduces_to_conventional_when_weights_zero() {
        let available = vec![
            Complex64::from_polar(1.0, 0.3),
            Complex64::from_polar(2.0, -1.1),
        ];
        let occupied = BTreeMap::from([(7, Complex64::from_polar(1.4, 2.2))]);
        let p: f64 = 3.0;
        let alloc = PowerAllocation {
            v_u: vec![p.sqrt(), p.sqrt()],
            v_j: BTreeMap::new(),
            power_budget: p,
        };
        let bf = optimal_phases(&alloc, &available, &occupied);
        let itc = sinr_cb_itc(&bf, &available, &occupied, p, 1.0).unwrap();
        let conv = sinr_conventional_cb(&[1.0, 2.0], &[1.4f64 * 1.4], p, 1.0);
        assert!((itc - conv).abs() < 1e-12 * conv);
    }

    #[test]
    fn cb_itc_zero_beamformer() {
        let available = vec![Complex64::new(1.0, 0.0)];
        let occupied = BTreeMap::from([(2, Complex64::new(1.0, 0.0))]);
        let bf = Beamformer {
            w_u: vec![Complex64::new(0.0, 0.0)],
            w_j: BTreeMap::new(),
        };
        assert_eq!(sinr_cb_itc(&bf, &available, &occupied, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn cb_itc_rejects_power_violation() {
        let available = vec![Complex64::new(1.0, 0.0)];
        let occupied = BTreeMap::new();
        let bf = Beamformer {
            w_u: vec![Complex64::new(2.0, 0.0)],
            w_j: BTreeMap::new(),
        };
        assert!(sinr_cb_itc(&bf, &available, &occupied, 1.0, 1.0).is_err());
    }

    #[test]
    fn closed_form_worked_example() {
        let sol = worked_example();
        assert!((sol.eta - 4.0).abs() < 1e-12);
        assert!((sol.v_j - 192.0 / (2.0 * 1200f64.sqrt())).abs() < 1e-12);
        assert!((sol.v_u * sol.v_u - 2.32).abs() < 1e-9);
        // Residual interference is nonnegative at the optimum.
        assert!(12f64.sqrt() * 10f64.sqrt() - 10f64.sqrt() * sol.v_j >= 0.0);
        // Cross-check against the brute-force oracle.
        let oracle = grid_search_n1_k1(10f64.sqrt(), 12f64.sqrt(), 10.0, 1.0, 10_000);
        assert!((sol.eta - oracle).abs() < 1e-4 * oracle);
    }

    #[test]
    fn closed_form_cb_itc_evaluation() {
        // Feed the closed-form amplitudes through the general SINR formula.
        let sol = worked_example();
        let available = vec![Complex64::from_polar(10f64.sqrt(), 0.7)];
        let occupied = BTreeMap::from([(0, Complex64::from_polar(12f64.sqrt(), -2.1))]);
        let alloc = PowerAllocation {
            v_u: vec![sol.v_u],
            v_j: BTreeMap::from([(0, vec![sol.v_j])]),
            power_budget: 10.0,
        };
        let bf = optimal_phases(&alloc, &available, &occupied);
        let sinr = sinr_cb_itc(&bf, &available, &occupied, 10.0, 1.0).unwrap();
        assert!((sinr - 4.0).abs() < 1e-9);
    }

    #[test]
    fn closed_form_degenerate_cases() {
        assert!(matches!(
            closed_form_n1_k1(0.0, 1.0, 1.0, 1.0),
            Err(Error::DegenerateChannel(_))
        ));
        let no_interference = closed_form_n1_k1(2.0, 0.0, 5.0, 1.0).unwrap();
        assert_eq!(no_interference.v_j, 0.0);
        assert!((no_interference.eta - 20.0).abs() < 1e-12);
        let zero_power = closed_form_n1_k1(2.0, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(zero_power.eta, 0.0);
        assert_eq!(zero_power.v_j, 0.0);
    }

    #[test]
    fn closed_form_dominates_no_itc() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let f_a = rng.random_range(0.2..5.0);
            let f_o = rng.random_range(0.0..5.0);
            let p = rng.random_range(0.01..50.0);
            let noise = rng.random_range(0.1..3.0);
            let sol = closed_form_n1_k1(f_a, f_o, p, noise).unwrap();
            let eta0 = eta_without_itc(f_a, f_o, p, noise);
            assert!(sol.eta >= eta0 - 1e-9 * eta0.max(1.0));
            // Interference is reduced, never inverted.
            assert!(f_o * p.sqrt() - f_a * sol.v_j >= -1e-9);
        }
    }

    #[test]
    fn eta_without_itc_examples() {
        let eta0 = eta_without_itc(10f64.sqrt(), 12f64.sqrt(), 10.0, 1.0);
        assert!((eta0 - 100.0 / 121.0).abs() < 1e-12);
        assert!((eta_without_itc(2.0, 0.0, 7.0, 1.0) - 28.0).abs() < 1e-12);
        // Large-power limit approaches |f_a|^2/|f_o|^2.
        let big = eta_without_itc(10f64.sqrt(), 12f64.sqrt(), 1e12, 1.0);
        assert!((big - 10.0 / 12.0).abs() < 1e-9);
    }

    #[test]
    fn asymptotic_limit_cases() {
        let ex1 = asymptotic_limits(10f64.sqrt(), 12f64.sqrt());
        assert!((ex1.rho_j - 10.0 / 12.0).abs() < 1e-12);
        match ex1.eta {
            EtaLimit::Finite(v) => assert!((v - 5.0).abs() < 1e-9),
            other => panic!("expected finite limit, got {other:?}"),
        }

        let ex2 = asymptotic_limits(15f64.sqrt(), 12f64.sqrt());
        assert!((ex2.rho_j - 12.0 / 15.0).abs() < 1e-12);
        assert_eq!(ex2.eta, EtaLimit::DivergesLinearly);

        let equal = asymptotic_limits(2.0, 2.0);
        assert!((equal.rho_j - 1.0).abs() < 1e-12);
        assert_eq!(equal.eta, EtaLimit::DivergesSqrt);
    }

    #[test]
    fn multi_interferer_matches_single() {
        let k1 = closed_form_n1_k1(10f64.sqrt(), 12f64.sqrt(), 10.0, 1.0).unwrap();
        let many = closed_form_n1_k_many(
            10f64.sqrt(),
            &BTreeMap::from([(5, 12f64.sqrt())]),
            10.0,
            1.0,
        )
        .unwrap();
        assert!((many.eta - k1.eta).abs() <= 1e-12 * k1.eta);
        assert!((many.v_j[&5] - k1.v_j).abs() <= 1e-12 * k1.v_j);
        assert!((many.v_u - k1.v_u).abs() <= 1e-12 * k1.v_u);
        assert!((many.s_a - -2.0).abs() < 1e-12);
    }

    #[test]
    fn multi_interferer_worked_example() {
        let amps = BTreeMap::from([(1, 2.0), (2, 8f64.sqrt())]);
        let sol = closed_form_n1_k_many(10f64.sqrt(), &amps, 10.0, 1.0).unwrap();
        assert!((sol.eta - 4.0).abs() < 1e-12);
        assert!((sol.v_j[&1] - 1.6).abs() < 1e-12);
        assert!((sol.v_j[&2] - 2.2627416998).abs() < 1e-9);
        assert!((sol.v_u * sol.v_u - 2.32).abs() < 1e-9);

        // Objective evaluated at the closed-form point reproduces eta.
        let p: f64 = 10.0;
        let residual: f64 = amps
            .iter()
            .map(|(j, a)| {
                let r = a * p.sqrt() - 10f64.sqrt() * sol.v_j[j];
                r * r
            })
            .sum();
        let eta_eval = 10.0 * sol.v_u * sol.v_u / (1.0 + residual);
        assert!((eta_eval - sol.eta).abs() < 1e-9);

        // Coarse 2-D grid never beats the closed form.
        let mut best = 0.0f64;
        let n = 400;
        for i in 0..=n {
            for k in 0..=n {
                let v1 = p.sqrt() * i as f64 / n as f64;
                let v2 = p.sqrt() * k as f64 / n as f64;
                let v_u2 = p - v1 * v1 - v2 * v2;
                if v_u2 < 0.0 {
                    continue;
                }
                let r1 = 2.0 * p.sqrt() - 10f64.sqrt() * v1;
                let r2 = 8f64.sqrt() * p.sqrt() - 10f64.sqrt() * v2;
                best = best.max(10.0 * v_u2 / (1.0 + r1 * r1 + r2 * r2));
            }
        }
        assert!(best <= sol.eta + 1e-9);
        assert!(sol.eta - best < 1e-3 * sol.eta);
    }

    #[test]
    fn multi_interferer_no_occupied() {
        let sol = closed_form_n1_k_many(2.0, &BTreeMap::new(), 5.0, 1.0).unwrap();
        assert!((sol.eta - 20.0).abs() < 1e-12);
        assert!((sol.v_u - 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sensitivity_positive_and_worked_value() {
        let v = eta_sensitivity(-2.0, 10f64.sqrt(), 10.0, 1.0);
        assert!((v - 40.0 / 29.0).abs() < 1e-12);
        assert_eq!(eta_sensitivity(-2.0, 10f64.sqrt(), 0.0, 1.0), 0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            let s_a = rng.random_range(-10.0..10.0);
            let f_a = rng.random_range(0.1..4.0);
            let p = rng.random_range(0.01..100.0);
            assert!(eta_sensitivity(s_a, f_a, p, 1.0) > 0.0);
        }
    }

    #[test]
    fn power_ratio_curve_monotone() {
        let p_list: Vec<f64> = (0..20).map(|i| 10f64.powf(-2.0 + 0.3 * i as f64)).collect();
        let curve = power_ratio_curve(10f64.sqrt(), 12f64.sqrt(), 1.0, &p_list).unwrap();
        for win in curve.windows(2) {
            assert!(win[1].0 > win[0].0, "rho_j must strictly increase");
        }
        for &(rho_j, rho_u) in &curve {
            assert!((rho_j + rho_u - 1.0).abs() < 1e-12);
        }
        // Small-power limit.
        let tiny = power_ratio_curve(10f64.sqrt(), 12f64.sqrt(), 1.0, &[1e-9]).unwrap();
        assert!(tiny[0].0 < 1e-6);
        // Large-power limit from example 1.
        let huge = power_ratio_curve(10f64.sqrt(), 12f64.sqrt(), 1.0, &[1e6]).unwrap();
        assert!((huge[0].0 - 10.0 / 12.0).abs() < 1e-2);
        assert!(power_ratio_curve(1.0, 1.0, 1.0, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn phase_optimality_over_perturbations() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 3;
        let available: Vec<Complex64> = (0..n)
            .map(|_| Complex64::from_polar(rng.random_range(0.2..2.0), rng.random_range(0.0..TAU)))
            .collect();
        let occupied: BTreeMap<usize, Complex64> = (0..2)
            .map(|j| {
                (
                    j,
                    Complex64::from_polar(rng.random_range(0.2..2.0), rng.random_range(0.0..TAU)),
                )
            })
            .collect();
        let p: f64 = 4.0;
        // A feasible random amplitude allocation.
        let mut v_u = Vec::new();
        let mut v_1 = Vec::new();
        let mut v_2 = Vec::new();
        for _ in 0..n {
            let a: f64 = rng.random_range(0.0..1.0);
            let b: f64 = rng.random_range(0.0..1.0);
            let c: f64 = rng.random_range(0.0..1.0);
            let scale = (p / (a * a + b * b + c * c).max(1e-9)).sqrt() * 0.9;
            v_u.push(a * scale);
            v_1.push(b * scale);
            v_2.push(c * scale);
        }
        // Anti-phase cancellation is only optimal while each interferer is
        // reduced, not inverted; cap the cancellation rows accordingly, as
        // any optimal allocation does.
        for (j, row) in [(0usize, &mut v_1), (1usize, &mut v_2)] {
            let applied: f64 = row
                .iter()
                .zip(&available)
                .map(|(v, f)| v * f.norm())
                .sum();
            let cap = p.sqrt() * occupied[&j].norm();
            if applied > cap {
                let shrink = cap / applied;
                row.iter_mut().for_each(|v| *v *= shrink);
            }
        }
        let alloc = PowerAllocation {
            v_u,
            v_j: BTreeMap::from([(0, v_1.clone()), (1, v_2.clone())]),
            power_budget: p,
        };
        let best = optimal_phases(&alloc, &available, &occupied);
        let best_sinr = sinr_cb_itc(&best, &available, &occupied, p, 1.0).unwrap();
        for _ in 0..100 {
            let perturbed = Beamformer {
                w_u: best
                    .w_u
                    .iter()
                    .map(|w| w * Complex64::from_polar(1.0, rng.random_range(0.0..TAU)))
                    .collect(),
                w_j: best
                    .w_j
                    .iter()
                    .map(|(&j, ws)| {
                        (
                            j,
                            ws.iter()
                                .map(|w| w * Complex64::from_polar(1.0, rng.random_range(0.0..TAU)))
                                .collect(),
                        )
                    })
                    .collect(),
            };
            let sinr = sinr_cb_itc(&perturbed, &available, &occupied, p, 1.0).unwrap();
            assert!(sinr <= best_sinr * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn empirical_sinr_tracks_analytic() {
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let sol = worked_example();
        let available = vec![Complex64::from_polar(10f64.sqrt(), 1.3)];
        let occupied = BTreeMap::from([(0, Complex64::from_polar(12f64.sqrt(), 0.4))]);
        let alloc = PowerAllocation {
            v_u: vec![sol.v_u],
            v_j: BTreeMap::from([(0, vec![sol.v_j])]),
            power_budget: 10.0,
        };
        let bf = optimal_phases(&alloc, &available, &occupied);
        let est = empirical_sinr(&mut rng, &bf, &available, &occupied, 10.0, 1.0, 100_000);
        assert!((est - 4.0).abs() < 0.08, "estimate {est}");
    }

    #[test]
    fn empirical_sinr_edge_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let available = vec![Complex64::new(1.0, 0.0), Complex64::new(2.0, 0.0)];
        let occupied = BTreeMap::new();
        // Noiseless, no interferers: the estimator degenerates to a pure
        // signal-power check.
        let alloc = PowerAllocation {
            v_u: vec![1.0, 1.0],
            v_j: BTreeMap::new(),
            power_budget: 1.0,
        };
        let bf = optimal_phases(&alloc, &available, &occupied);
        let est = empirical_sinr(&mut rng, &bf, &available, &occupied, 1.0, 0.0, 100);
        assert!(est.is_infinite());
        let coherent: Complex64 = available.iter().zip(&bf.w_u).map(|(f, w)| f * w).sum();
        assert!((coherent.norm_sqr() - 9.0).abs() < 1e-12);

        let zero = Beamformer {
            w_u: vec![Complex64::new(0.0, 0.0); 2],
            w_j: BTreeMap::new(),
        };
        let est = empirical_sinr(&mut rng, &zero, &available, &occupied, 1.0, 1.0, 100);
        assert_eq!(est, 0.0);
    }

    #[test]
    fn report_rate_matches_sinr() {
        for sinr in [0.0, 0.5, 4.0, 1e6] {
            let r = SinrReport::new(Scheme::ConvCb, sinr);
            assert_eq!(r.rate, (1.0 + sinr).log2());
        }
        assert_eq!(Scheme::CentralizedItc.label(), "CentralizedITC");
        assert_eq!("no-cb".parse::<Scheme>().unwrap(), Scheme::NoCb);
    }

    #[test]
    fn closed_form_matches_grid_oracle_randomized() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for _ in 0..100 {
            let f_a = rng.random_range(0.5..4.0);
            let f_o = rng.random_range(0.1..4.0);
            let p = rng.random_range(0.5..50.0);
            let noise = rng.random_range(0.5..4.0);
            let sol = closed_form_n1_k1(f_a, f_o, p, noise).unwrap();
            let oracle = grid_search_n1_k1(f_a, f_o, p, noise, 10_000);
            assert!(
                (sol.eta - oracle).abs() <= 1e-4 * oracle.max(1e-12),
                "closed form {} vs oracle {} at ({f_a},{f_o},{p},{noise})",
                sol.eta,
                oracle
            );
        }
    }
}
