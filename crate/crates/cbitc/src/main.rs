//! Command-line front end for the CB-ITC experiment harness.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbitc::beamforming::{closed_form_n1_k1, closed_form_n1_k_many, Scheme};
use cbitc::harness::{csv_string, emit_csv, run_experiment, ExperimentConfig, ResultRow};
use cbitc::solver::{build_p2_program, solve, SolveStatus};

#[derive(Parser)]
#[command(
    name = "cbitc",
    about = "Cellular-downlink cooperative beamforming with interference transmission and \
             cancellation: scheme-comparison experiments for a UAV user",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Experiment config file (flat TOML key-value document).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the number of Monte-Carlo realizations.
    #[arg(long)]
    realizations: Option<usize>,
    /// Comma-separated scheme list: no-cb, conv-cb, centralized-itc,
    /// distributed-itc.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<String>>,
    /// Worker threads for the realization loop (default: all cores).
    #[arg(long)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Mean rate per scheme across the transmit-power sweep.
    SweepPower(SweepPower),
    /// Mean rate per scheme as the terrestrial UE count varies.
    SweepUes(SweepUes),
    /// Mean rate of the distributed scheme as the exchange-round budget
    /// varies.
    SweepRounds(SweepRounds),
    /// Mean rate per scheme at several UAV altitudes.
    SweepAltitude(SweepAltitude),
    /// Self-check of the closed forms against brute force and of the conic
    /// solver against the closed forms.
    OracleCheck(OracleCheck),
}

#[derive(Args)]
struct SweepPower {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct SweepUes {
    #[command(flatten)]
    common: CommonOpts,
    /// UE counts to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,4,7,10")]
    ue_counts: Vec<usize>,
    /// Transmit power for every point of the sweep.
    #[arg(long, default_value_t = 20.0)]
    power_dbm: f64,
}

#[derive(Args)]
struct SweepRounds {
    #[command(flatten)]
    common: CommonOpts,
    /// Exchange-round budgets to sweep.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    rounds: Vec<usize>,
    #[arg(long, default_value_t = 30.0)]
    power_dbm: f64,
}

#[derive(Args)]
struct SweepAltitude {
    #[command(flatten)]
    common: CommonOpts,
    /// UAV altitudes in meters.
    #[arg(long, value_delimiter = ',', default_value = "1.5,60,200")]
    altitudes: Vec<f64>,
    #[arg(long, default_value_t = 20.0)]
    power_dbm: f64,
}

#[derive(Args)]
struct OracleCheck {
    /// Random instances per check.
    #[arg(long, default_value_t = 200)]
    instances: usize,
}

fn load_config(common: &CommonOpts) -> cbitc::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(realizations) = common.realizations {
        cfg.realizations = realizations;
    }
    if let Some(names) = &common.schemes {
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

fn write_rows(common: &CommonOpts, rows: &[ResultRow]) -> cbitc::Result<()> {
    match &common.out {
        Some(path) => {
            emit_csv(rows, path)?;
            eprintln!("wrote {} rows to {}", rows.len(), path.display());
        }
        None => print!("{}", csv_string(rows)),
    }
    Ok(())
}

fn run_with_pool<T>(
    threads: Option<usize>,
    f: impl FnOnce() -> cbitc::Result<T> + Send,
) -> cbitc::Result<T>
where
    T: Send,
{
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| cbitc::Error::Config(e.to_string()))?
            .install(f),
        None => f(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SweepPower(cmd) => sweep_power(cmd),
        Command::SweepUes(cmd) => sweep_ues(cmd),
        Command::SweepRounds(cmd) => sweep_rounds(cmd),
        Command::SweepAltitude(cmd) => sweep_altitude(cmd),
        Command::OracleCheck(cmd) => {
            return if oracle_check(cmd) {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn sweep_power(cmd: SweepPower) -> cbitc::Result<()> {
    let cfg = load_config(&cmd.common)?;
    let rows = run_with_pool(cmd.common.parallel, || run_experiment(&cfg))?;
    write_rows(&cmd.common, &rows)
}

fn sweep_ues(cmd: SweepUes) -> cbitc::Result<()> {
    let base = load_config(&cmd.common)?;
    let rows = run_with_pool(cmd.common.parallel, || {
        let mut rows = Vec::new();
        for &k in &cmd.ue_counts {
            let cfg = ExperimentConfig {
                ue_count: k,
                power_sweep_dbm: vec![cmd.power_dbm],
                ..base.clone()
            };
            rows.extend(run_experiment(&cfg)?);
        }
        Ok(rows)
    })?;
    write_rows(&cmd.common, &rows)
}

fn sweep_rounds(cmd: SweepRounds) -> cbitc::Result<()> {
    let base = load_config(&cmd.common)?;
    let rows = run_with_pool(cmd.common.parallel, || {
        let mut rows = Vec::new();
        for &l in &cmd.rounds {
            let cfg = ExperimentConfig {
                exchange_rounds: l,
                power_sweep_dbm: vec![cmd.power_dbm],
                ..base.clone()
            };
            rows.extend(run_experiment(&cfg)?);
        }
        Ok(rows)
    })?;
    write_rows(&cmd.common, &rows)
}

fn sweep_altitude(cmd: SweepAltitude) -> cbitc::Result<()> {
    let base = load_config(&cmd.common)?;
    let rows = run_with_pool(cmd.common.parallel, || {
        let mut rows = Vec::new();
        for &h in &cmd.altitudes {
            let cfg = ExperimentConfig {
                uav_altitude_m: h,
                power_sweep_dbm: vec![cmd.power_dbm],
                ..base.clone()
            };
            rows.extend(run_experiment(&cfg)?);
        }
        Ok(rows)
    })?;
    write_rows(&cmd.common, &rows)
}

/// Grid-search oracle for the single-BS, single-interferer optimum.
fn grid_search_eta(f_a: f64, f_o: f64, power: f64, noise: f64, points: usize) -> f64 {
    let fa2 = f_a * f_a;
    let mut best = 0.0f64;
    for i in 0..points {
        let v_j = power.sqrt() * i as f64 / (points - 1) as f64;
        let v_u2 = power - v_j * v_j;
        if v_u2 < 0.0 {
            continue;
        }
        let residual = f_o * power.sqrt() - f_a * v_j;
        best = best.max(fa2 * v_u2 / (noise + residual * residual));
    }
    best
}

fn oracle_check(cmd: OracleCheck) -> bool {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0xC0FFEE);
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{}: {name} ({detail})", if ok { "PASS" } else { "FAIL" });
        all_ok &= ok;
    };

    // Closed form vs brute force.
    let mut worst = 0.0f64;
    for _ in 0..cmd.instances {
        let f_a = rng.random_range(0.5..4.0);
        let f_o = rng.random_range(0.1..4.0);
        let p = rng.random_range(0.5..50.0);
        let noise = rng.random_range(0.5..4.0);
        let eta = closed_form_n1_k1(f_a, f_o, p, noise).unwrap().eta;
        let oracle = grid_search_eta(f_a, f_o, p, noise, 10_000);
        worst = worst.max((eta - oracle).abs() / oracle.max(1e-12));
    }
    report(
        "closed form vs grid search",
        worst <= 1e-4,
        format!("{} instances, worst relative error {worst:.2e}", cmd.instances),
    );

    // Conic solver vs closed forms.
    let mut worst = 0.0f64;
    let mut solved = true;
    for _ in 0..cmd.instances.min(50) {
        let k = rng.random_range(1..=8);
        let f_a = rng.random_range(0.3..4.0);
        let occupied: BTreeMap<usize, f64> =
            (0..k).map(|j| (j, rng.random_range(0.1..3.0))).collect();
        let p = rng.random_range(0.5..30.0);
        let closed = closed_form_n1_k_many(f_a, &occupied, p, 1.0).unwrap();
        let program = build_p2_program(&[f_a], &occupied, p, 1.0).unwrap();
        let sol = solve(&program, 1e-8);
        solved &= sol.status == SolveStatus::Optimal;
        let sinr = sol.objective_value * sol.objective_value;
        worst = worst.max((sinr - closed.eta).abs() / closed.eta.max(1e-12));
    }
    report(
        "conic solver vs closed forms",
        solved && worst <= 1e-5,
        format!("worst relative error {worst:.2e}"),
    );

    all_ok
}
