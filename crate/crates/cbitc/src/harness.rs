//! Monte-Carlo experiment harness: seeded random UE layouts, per-scheme
//! SINR evaluation, aggregation over realizations, and CSV output.
//!
//! Each realization draws a UE layout and one channel per BS from an RNG
//! stream keyed by (seed, realization index), so results are bit-identical
//! across runs and across serial/parallel execution, and the same
//! realization index sees the same channels at every sweep point (common
//! random numbers).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::beamforming::{
    closed_form_n1_k_many, optimal_phases, sinr_cb_itc, sinr_conventional_cb, sinr_no_cb, Scheme,
};
use crate::channel::{noise_power, sample_channel, AntennaConfig, ChannelCoefficient, ChannelParams};
use crate::distributed::{build_cooperation_graph, run_protocol};
use crate::scheduler::{available_bss, best_single_server, place_ues};
use crate::solver::{build_p2_program, recover_allocation, solve, SolveStatus};
use crate::topology::{build_grid, HexGrid, Placement, Point3};
use crate::{Error, Result};

/// Full experiment description. Defaults follow the reference scenario:
/// three tiers of 800 m cells, a UAV hovering at 200 m over cell 1, seven
/// co-channel terrestrial UEs, tier-1 ICIC, and 200 averaged realizations.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub realizations: usize,
    pub power_sweep_dbm: Vec<f64>,
    /// Number of co-channel terrestrial UEs (K).
    pub ue_count: usize,
    /// Cooperation size M of the distributed scheme.
    pub cooperation_size: usize,
    /// Information-exchange rounds L of the distributed scheme.
    pub exchange_rounds: usize,
    /// ICIC neighborhood tier q.
    pub icic_tier: usize,
    pub uav_altitude_m: f64,
    pub uav_x_m: f64,
    pub uav_y_m: f64,
    pub grid_tiers: usize,
    pub cell_radius_m: f64,
    pub bs_height_m: f64,
    pub schemes: Vec<Scheme>,
    pub channel: ChannelParams,
    pub antenna: AntennaConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            realizations: 200,
            power_sweep_dbm: (-2..=8).map(|i| 5.0 * i as f64).collect(),
            ue_count: 7,
            cooperation_size: 4,
            exchange_rounds: 3,
            icic_tier: 1,
            uav_altitude_m: 200.0,
            uav_x_m: 150.0,
            uav_y_m: 420.0,
            grid_tiers: 3,
            cell_radius_m: 800.0,
            bs_height_m: 25.0,
            schemes: Scheme::ALL.to_vec(),
            channel: ChannelParams::default(),
            antenna: AntennaConfig::default(),
        }
    }
}

/// Flat key-value config file; every key optional, unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    realizations: Option<usize>,
    power_sweep_dbm: Option<Vec<f64>>,
    ue_count: Option<usize>,
    cooperation_size: Option<usize>,
    exchange_rounds: Option<usize>,
    icic_tier: Option<usize>,
    uav_altitude_m: Option<f64>,
    uav_x_m: Option<f64>,
    uav_y_m: Option<f64>,
    grid_tiers: Option<usize>,
    cell_radius_m: Option<f64>,
    bs_height_m: Option<f64>,
    schemes: Option<Vec<String>>,
    // Channel overrides.
    carrier_frequency_hz: Option<f64>,
    noise_psd_dbm_hz: Option<f64>,
    rb_subcarriers: Option<u32>,
    subcarrier_spacing_hz: Option<f64>,
    los_altitude_threshold_m: Option<f64>,
    los_decay_scale_m: Option<f64>,
    pathloss_exponent_los: Option<f64>,
    pathloss_exponent_nlos: Option<f64>,
    nlos_extra_loss_db: Option<f64>,
    shadow_sigma_db: Option<f64>,
    // Antenna overrides.
    num_elements: Option<usize>,
    element_spacing: Option<f64>,
    downtilt_deg: Option<f64>,
}

impl ExperimentConfig {
    /// Parse a flat TOML key-value document; missing keys keep defaults,
    /// unknown keys are an error.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut cfg = ExperimentConfig::default();
        macro_rules! take {
            ($($field:ident => $slot:expr),* $(,)?) => {
                $(if let Some(v) = raw.$field { $slot = v; })*
            };
        }
        take! {
            seed => cfg.seed,
            realizations => cfg.realizations,
            power_sweep_dbm => cfg.power_sweep_dbm,
            ue_count => cfg.ue_count,
            cooperation_size => cfg.cooperation_size,
            exchange_rounds => cfg.exchange_rounds,
            icic_tier => cfg.icic_tier,
            uav_altitude_m => cfg.uav_altitude_m,
            uav_x_m => cfg.uav_x_m,
            uav_y_m => cfg.uav_y_m,
            grid_tiers => cfg.grid_tiers,
            cell_radius_m => cfg.cell_radius_m,
            bs_height_m => cfg.bs_height_m,
            carrier_frequency_hz => cfg.channel.carrier_frequency_hz,
            noise_psd_dbm_hz => cfg.channel.noise_psd_dbm_hz,
            rb_subcarriers => cfg.channel.rb_subcarriers,
            subcarrier_spacing_hz => cfg.channel.subcarrier_spacing_hz,
            los_altitude_threshold_m => cfg.channel.los_altitude_threshold_m,
            los_decay_scale_m => cfg.channel.los_decay_scale_m,
            pathloss_exponent_los => cfg.channel.pathloss_exponent_los,
            pathloss_exponent_nlos => cfg.channel.pathloss_exponent_nlos,
            nlos_extra_loss_db => cfg.channel.nlos_extra_loss_db,
            shadow_sigma_db => cfg.channel.shadow_sigma_db,
            num_elements => cfg.antenna.num_elements,
            element_spacing => cfg.antenna.element_spacing,
            downtilt_deg => cfg.antenna.downtilt_deg,
        }
        if let Some(names) = raw.schemes {
            let mut schemes = Vec::new();
            for name in names {
                let s: Scheme = name.parse()?;
                if !schemes.contains(&s) {
                    schemes.push(s);
                }
            }
            cfg.schemes = schemes;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one scheme required".into()));
        }
        self.channel
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.schemes.contains(&Scheme::DistributedItc) {
            if self.cooperation_size <= self.icic_tier {
                return Err(Error::Config(format!(
                    "cooperation size {} must exceed the ICIC tier {}",
                    self.cooperation_size, self.icic_tier
                )));
            }
            if self.exchange_rounds == 0 {
                return Err(Error::Config("exchange_rounds must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// One aggregated line of results.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub p_dbm: f64,
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub mean_rate_bps_hz: f64,
    pub mean_sinr_db: f64,
    pub realizations: usize,
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Per-realization linear SINR for every enabled scheme at every sweep
/// point: sinr[p_idx][scheme_idx].
struct RealizationOutcome {
    sinr: Vec<Vec<f64>>,
}

struct Context {
    grid: HexGrid,
    uav: Point3,
    noise: f64,
    powers_w: Vec<f64>,
}

fn realization_rng(seed: u64, realization: usize) -> ChaCha12Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&(realization as u64).to_le_bytes());
    bytes[16] = 0x5e;
    ChaCha12Rng::from_seed(bytes)
}

fn evaluate_realization(
    cfg: &ExperimentConfig,
    ctx: &Context,
    realization: usize,
) -> Result<RealizationOutcome> {
    let mut rng = realization_rng(cfg.seed, realization);
    let (ues, occupied) = place_ues(&mut rng, &ctx.grid, cfg.ue_count, cfg.icic_tier)?;
    let placement = Placement {
        uav_position: ctx.uav,
        ue_positions: ues,
    };
    placement.validate(&ctx.grid)?;
    let available = available_bss(&ctx.grid, &occupied, cfg.icic_tier);

    // One channel draw per BS, in index order, independent of the scheme
    // set and the sweep point.
    let mut channels: BTreeMap<usize, ChannelCoefficient> = BTreeMap::new();
    for b in 0..ctx.grid.num_bs() {
        let pos = ctx.grid.bs_position(b)?;
        channels.insert(
            b,
            sample_channel(&mut rng, &cfg.channel, &cfg.antenna, &pos, &ctx.uav)?,
        );
    }

    let num_p = ctx.powers_w.len();
    let mut sinr = vec![vec![0.0; cfg.schemes.len()]; num_p];
    if available.is_empty() {
        // No BS may serve the UAV on this layout; every scheme is silent.
        return Ok(RealizationOutcome { sinr });
    }

    let occupied_gains: Vec<f64> = occupied.iter().map(|j| channels[j].power_gain()).collect();
    let occupied_amps: BTreeMap<usize, f64> = occupied
        .iter()
        .map(|&j| (j, channels[&j].amplitude))
        .collect();
    let occupied_coeff: BTreeMap<usize, _> = occupied
        .iter()
        .map(|&j| (j, channels[&j].coefficient()))
        .collect();
    let available_amps: Vec<f64> = available.iter().map(|n| channels[n].amplitude).collect();
    let available_coeff: Vec<_> = available.iter().map(|n| channels[n].coefficient()).collect();

    let best_server = best_single_server(&available, &channels)?;
    let best_gain = channels[&best_server].power_gain();

    let graph = if cfg.schemes.contains(&Scheme::DistributedItc) {
        Some(build_cooperation_graph(
            &ctx.grid,
            &occupied,
            &available,
            cfg.cooperation_size,
            cfg.icic_tier,
        )?)
    } else {
        None
    };
    let all_coeff: BTreeMap<usize, _> = channels
        .iter()
        .map(|(&b, c)| (b, c.coefficient()))
        .collect();

    for (p_idx, &power) in ctx.powers_w.iter().enumerate() {
        let mut centralized = None;
        let mut distributed = None;
        for (s_idx, scheme) in cfg.schemes.iter().enumerate() {
            let value = match scheme {
                Scheme::NoCb => sinr_no_cb(best_gain, &occupied_gains, power, ctx.noise),
                Scheme::ConvCb => {
                    sinr_conventional_cb(&available_amps, &occupied_gains, power, ctx.noise)
                }
                Scheme::CentralizedItc => {
                    let value = if available.len() == 1 {
                        closed_form_n1_k_many(
                            available_amps[0],
                            &occupied_amps,
                            power,
                            ctx.noise,
                        )?
                        .eta
                    } else if occupied.is_empty() {
                        sinr_conventional_cb(&available_amps, &[], power, ctx.noise)
                    } else {
                        let program =
                            build_p2_program(&available_amps, &occupied_amps, power, ctx.noise)?;
                        let solution = solve(&program, 1e-8);
                        if solution.status != SolveStatus::Optimal {
                            return Err(Error::SolverFailure(format!(
                                "status {:?} (gap {:.2e}, residual {:.2e}) at P = {power} W",
                                solution.status,
                                solution.duality_gap,
                                solution.constraint_residual
                            )));
                        }
                        let alloc = recover_allocation(&program, &solution)?;
                        let bf = optimal_phases(&alloc, &available_coeff, &occupied_coeff);
                        let evaluated =
                            sinr_cb_itc(&bf, &available_coeff, &occupied_coeff, power, ctx.noise)?;
                        debug_assert!(
                            (evaluated - solution.objective_value.powi(2)).abs()
                                <= 1e-6 * evaluated.max(1e-12)
                        );
                        evaluated
                    };
                    centralized = Some(value);
                    value
                }
                Scheme::DistributedItc => {
                    let run = run_protocol(
                        graph.as_ref().expect("graph built"),
                        &all_coeff,
                        power,
                        ctx.noise,
                        cfg.exchange_rounds,
                    )?;
                    distributed = Some(run.report.sinr);
                    run.report.sinr
                }
            };
            sinr[p_idx][s_idx] = value;
        }
        if let (Some(cent), Some(dist)) = (centralized, distributed) {
            // The distributed allocation is feasible for the centralized
            // problem, so the optimum can only be better.
            assert!(
                dist <= cent * (1.0 + 1e-6) + 1e-12,
                "distributed SINR {dist} exceeds centralized {cent}"
            );
        }
    }
    Ok(RealizationOutcome { sinr })
}

/// Run the configured experiment: every enabled scheme at every sweep
/// point, averaged over seeded realizations. Realizations evaluate in
/// parallel on the current rayon pool; aggregation is an ordered reduction,
/// so the output is identical regardless of thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let ctx = Context {
        grid: build_grid(cfg.grid_tiers, cfg.cell_radius_m, cfg.bs_height_m)?,
        uav: Point3::new(cfg.uav_x_m, cfg.uav_y_m, cfg.uav_altitude_m),
        noise: noise_power(&cfg.channel),
        powers_w: cfg.power_sweep_dbm.iter().map(|&d| dbm_to_watts(d)).collect(),
    };

    let outcomes: Vec<Result<RealizationOutcome>> = (0..cfg.realizations)
        .into_par_iter()
        .map(|r| evaluate_realization(cfg, &ctx, r))
        .collect();
    let mut evaluated = Vec::with_capacity(outcomes.len());
    for (idx, outcome) in outcomes.into_iter().enumerate() {
        evaluated.push(outcome.map_err(|e| {
            Error::InvalidArgument(format!("realization {idx} failed: {e}"))
        })?);
    }

    let mut rows = Vec::new();
    for (p_idx, &p_dbm) in cfg.power_sweep_dbm.iter().enumerate() {
        for (s_idx, &scheme) in cfg.schemes.iter().enumerate() {
            let mut rate_sum = 0.0;
            let mut sinr_sum = 0.0;
            for outcome in &evaluated {
                let sinr = outcome.sinr[p_idx][s_idx];
                rate_sum += (1.0 + sinr).log2();
                sinr_sum += sinr;
            }
            let n = cfg.realizations as f64;
            rows.push(ResultRow {
                scheme,
                p_dbm,
                k: cfg.ue_count,
                m: cfg.cooperation_size,
                l: cfg.exchange_rounds,
                mean_rate_bps_hz: rate_sum / n,
                mean_sinr_db: 10.0 * (sinr_sum / n).log10(),
                realizations: cfg.realizations,
            });
        }
    }
    Ok(rows)
}

pub const CSV_HEADER: &str = "scheme,P_dBm,K,M,L,mean_rate_bps_hz,mean_sinr_dB,realizations";

fn fmt_sig6(v: f64) -> String {
    format!("{v:.5e}")
}

/// Render rows as CSV text: fixed column order, six significant digits.
pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.scheme.label(),
            r.p_dbm,
            r.k,
            r.m,
            r.l,
            fmt_sig6(r.mean_rate_bps_hz),
            fmt_sig6(r.mean_sinr_db),
            r.realizations
        ));
    }
    out
}

/// Write rows to a CSV file. Refuses an empty row set before touching the
/// path.
pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no rows to write".into()));
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(csv_string(rows).as_bytes())?;
    Ok(())
}

/// Parse CSV text produced by [`csv_string`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::InvalidArgument(format!(
                "unexpected CSV header: {other:?}"
            )))
        }
    }
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(Error::InvalidArgument(format!(
                    "expected 8 CSV fields, got {}",
                    fields.len()
                )));
            }
            let parse_f = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::InvalidArgument(format!("bad float '{s}': {e}")))
            };
            let parse_u = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::InvalidArgument(format!("bad count '{s}': {e}")))
            };
            Ok(ResultRow {
                scheme: fields[0].parse()?,
                p_dbm: parse_f(fields[1])?,
                k: parse_u(fields[2])?,
                m: parse_u(fields[3])?,
                l: parse_u(fields[4])?,
                mean_rate_bps_hz: parse_f(fields[5])?,
                mean_sinr_db: parse_f(fields[6])?,
                realizations: parse_u(fields[7])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            realizations: 4,
            power_sweep_dbm: vec![10.0, 30.0],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = small_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(csv_string(&a).into_bytes(), csv_string(&b).into_bytes());
    }

    #[test]
    fn serial_and_parallel_agree() {
        let cfg = small_config();
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg))
            .unwrap();
        let parallel = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| run_experiment(&cfg))
            .unwrap();
        assert_eq!(csv_string(&serial), csv_string(&parallel));
    }

    #[test]
    fn no_ues_makes_cooperative_schemes_equal() {
        let cfg = ExperimentConfig {
            ue_count: 0,
            realizations: 3,
            power_sweep_dbm: vec![20.0],
            schemes: vec![Scheme::ConvCb, Scheme::CentralizedItc, Scheme::DistributedItc],
            ..ExperimentConfig::default()
        };
        let rows = run_experiment(&cfg).unwrap();
        assert_eq!(rows.len(), 3);
        assert!((rows[0].mean_rate_bps_hz - rows[1].mean_rate_bps_hz).abs() < 1e-9);
        assert!((rows[0].mean_rate_bps_hz - rows[2].mean_rate_bps_hz).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trip() {
        let cfg = small_config();
        let rows = run_experiment(&cfg).unwrap();
        let parsed = parse_csv(&csv_string(&rows)).unwrap();
        assert_eq!(parsed.len(), rows.len());
        for (a, b) in rows.iter().zip(&parsed) {
            assert_eq!(a.scheme, b.scheme);
            assert_eq!(a.p_dbm, b.p_dbm);
            assert_eq!((a.k, a.m, a.l, a.realizations), (b.k, b.m, b.l, b.realizations));
            assert!((a.mean_rate_bps_hz - b.mean_rate_bps_hz).abs() <= 1e-5 * a.mean_rate_bps_hz.abs().max(1e-9));
            assert!((a.mean_sinr_db - b.mean_sinr_db).abs() <= 1e-4);
        }
    }

    #[test]
    fn emit_refuses_empty() {
        let err = emit_csv(&[], Path::new("/tmp/cbitc-should-not-exist.csv")).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
        assert!(!Path::new("/tmp/cbitc-should-not-exist.csv").exists());
    }

    #[test]
    fn config_parsing() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seed = 9
            realizations = 12
            power_sweep_dbm = [0.0, 10.0]
            ue_count = 3
            schemes = ["no-cb", "centralized-itc"]
            carrier_frequency_hz = 3.5e9
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.realizations, 12);
        assert_eq!(cfg.ue_count, 3);
        assert_eq!(cfg.schemes, vec![Scheme::NoCb, Scheme::CentralizedItc]);
        assert_eq!(cfg.channel.carrier_frequency_hz, 3.5e9);
        // Untouched default.
        assert_eq!(cfg.cooperation_size, 4);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = ExperimentConfig::from_toml_str("sede = 9").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn config_rejects_bad_cooperation_size() {
        let err = ExperimentConfig::from_toml_str("cooperation_size = 1\nicic_tier = 1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn power_conversion() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
        assert!((dbm_to_watts(0.0) - 1e-3).abs() < 1e-15);
    }
}
