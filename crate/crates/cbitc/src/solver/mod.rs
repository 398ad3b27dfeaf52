//! Centralized optimum of the CB-ITC power allocation for any number of
//! available BSs, via a second-order cone reformulation.
//!
//! The SINR maximization becomes conic after two steps: a slack variable
//! bounds the noise-plus-residual-interference power, and dividing every
//! amplitude by that slack turns the fractional objective into a linear one.
//! The resulting program has one norm-<=-1 cone for the interference/noise
//! body and one power cone per available BS. Instances are nondimensionalized
//! before solving: amplitudes are expressed relative to the noise floor at
//! full transmit power, so the unit power budget and unit noise keep the
//! numbers well scaled across the dBm range. The SINR is invariant under this
//! rescaling.

mod ipm;

use std::collections::BTreeMap;
use std::io::Write;

use crate::beamforming::PowerAllocation;
use crate::{Error, Result};

pub use ipm::ConeSpec;
use ipm::{solve_hsde, ConicData, IpmStatus, Mat};

/// Standard-form cone program `min c^T x  s.t.  b - A x ∈ K` carrying the
/// metadata needed to map its solution back to transmit amplitudes.
///
/// Variable layout: the N scaled UAV-signal amplitudes, then one block of N
/// scaled cancellation amplitudes per occupied BS (ascending BS id), then the
/// inverse slack. The cone list is the nonnegative orthant over all
/// variables, the unit interference/noise cone, and one per-BS power cone per
/// available BS.
#[derive(Debug, Clone)]
pub struct ConeProgram {
    c: Vec<f64>,
    a: Mat,
    b: Vec<f64>,
    cones: Vec<ConeSpec>,
    num_available: usize,
    occupied_ids: Vec<usize>,
    power: f64,
    noise: f64,
}

/// Solver outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

/// Certified solution of a [`ConeProgram`].
#[derive(Debug, Clone)]
pub struct ConeSolution {
    /// Variable values in the program's (scaled) units.
    pub variables: Vec<f64>,
    /// Maximized linear objective; its square is the achievable SINR.
    pub objective_value: f64,
    pub status: SolveStatus,
    /// Complementarity gap relative to max(1, |objective|).
    pub duality_gap: f64,
    /// Worst relative primal/dual equation residual.
    pub constraint_residual: f64,
    pub iterations: usize,
}

/// Build the conic form of the joint power-allocation problem.
///
/// `available_amps[i]` is the channel amplitude of the i-th available BS (in
/// ascending BS order); `occupied_amps` maps each occupied BS id to its
/// interference channel amplitude.
pub fn build_p2_program(
    available_amps: &[f64],
    occupied_amps: &BTreeMap<usize, f64>,
    power: f64,
    noise: f64,
) -> Result<ConeProgram> {
    if available_amps.is_empty() {
        return Err(Error::NoServer);
    }
    if !(noise > 0.0) || power < 0.0 {
        return Err(Error::InvalidArgument("need noise > 0, power >= 0".into()));
    }
    if available_amps.iter().any(|&a| a < 0.0) || occupied_amps.values().any(|&a| a < 0.0) {
        return Err(Error::InvalidArgument(
            "channel amplitudes must be nonnegative".into(),
        ));
    }

    let n_av = available_amps.len();
    let k = occupied_amps.len();
    // Nondimensionalize: amplitudes relative to the noise floor at full
    // power, unit budget, unit noise. The SINR is invariant under this
    // rescaling; the solver equilibrates the matrix internally.
    let scale = (power / noise).sqrt();
    let g_u: Vec<f64> = available_amps.iter().map(|a| a * scale).collect();
    let g_j: Vec<f64> = occupied_amps.values().map(|a| a * scale).collect();

    // Variables: [a_u (n_av); a_j per occupied (n_av each); b_tilde].
    let nvar = n_av * (k + 1) + 1;
    let b_idx = nvar - 1;
    let au_idx = |i: usize| i;
    let aj_idx = |jk: usize, i: usize| n_av + jk * n_av + i;

    let nrows = nvar + (k + 2) * (n_av + 1);
    let mut a = Mat::zeros(nrows, nvar);
    let mut b = vec![0.0; nrows];
    let mut cones = Vec::with_capacity(2 + n_av);

    // Nonnegative orthant: s = x.
    for v in 0..nvar {
        *a.at_mut(v, v) = -1.0;
    }
    cones.push(ConeSpec::NonNeg(nvar));
    let mut row = nvar;

    // Interference/noise cone: || [g_j b - g_u.a_j]_j ; b || <= 1.
    cones.push(ConeSpec::Soc(k + 2));
    b[row] = 1.0;
    row += 1;
    for (jk, &gj) in g_j.iter().enumerate() {
        *a.at_mut(row, b_idx) = -gj;
        for i in 0..n_av {
            *a.at_mut(row, aj_idx(jk, i)) = g_u[i];
        }
        row += 1;
    }
    *a.at_mut(row, b_idx) = -1.0;
    row += 1;

    // Per-BS power cones: || [a_j[i]]_j ; a_u[i] || <= b.
    for i in 0..n_av {
        cones.push(ConeSpec::Soc(k + 2));
        *a.at_mut(row, b_idx) = -1.0;
        row += 1;
        for jk in 0..k {
            *a.at_mut(row, aj_idx(jk, i)) = -1.0;
            row += 1;
        }
        *a.at_mut(row, au_idx(i)) = -1.0;
        row += 1;
    }
    debug_assert_eq!(row, nrows);

    let mut c = vec![0.0; nvar];
    for i in 0..n_av {
        c[i] = -g_u[i];
    }

    Ok(ConeProgram {
        c,
        a,
        b,
        cones,
        num_available: n_av,
        occupied_ids: occupied_amps.keys().copied().collect(),
        power,
        noise,
    })
}

impl ConeProgram {
    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.b.len()
    }

    pub fn num_available(&self) -> usize {
        self.num_available
    }

    pub fn occupied_ids(&self) -> &[usize] {
        &self.occupied_ids
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn cones(&self) -> &[ConeSpec] {
        &self.cones
    }

    /// Objective coefficients of the maximized linear functional.
    pub fn objective(&self) -> Vec<f64> {
        self.c.iter().map(|v| -v).collect()
    }

    /// Dump the instance as a plain-text problem file: dimensions, cone
    /// list, then dense coefficient rows. Intended for offline cross-checks
    /// with an independent solver.
    pub fn write_problem(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# cone program: minimize c.x subject to b - A.x in K")?;
        writeln!(
            w,
            "# variables: uav amplitudes (n={}), cancellation blocks per occupied BS {:?}, inverse slack",
            self.num_available, self.occupied_ids
        )?;
        writeln!(w, "vars {}", self.num_vars())?;
        writeln!(w, "rows {}", self.num_rows())?;
        for cone in &self.cones {
            match cone {
                ConeSpec::NonNeg(n) => writeln!(w, "cone nonneg {n}")?,
                ConeSpec::Soc(n) => writeln!(w, "cone soc {n}")?,
            }
        }
        let fmt = |vals: &[f64]| {
            vals.iter()
                .map(|v| format!("{v:.17e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        writeln!(w, "c {}", fmt(&self.c))?;
        writeln!(w, "b {}", fmt(&self.b))?;
        for r in 0..self.num_rows() {
            writeln!(w, "A{r} {}", fmt(self.a.row(r)))?;
        }
        Ok(())
    }
}

/// Solve a cone program to the requested relative tolerance on the duality
/// gap and equation residuals. Deterministic; at most 200 iterations.
pub fn solve(program: &ConeProgram, tol: f64) -> ConeSolution {
    let data = ConicData {
        c: &program.c,
        a: &program.a,
        b: &program.b,
        cones: &program.cones,
    };
    let res = solve_hsde(&data, tol, 200);
    let objective_value: f64 = program
        .c
        .iter()
        .zip(&res.x)
        .map(|(c, x)| -c * x)
        .sum();
    ConeSolution {
        variables: res.x,
        objective_value,
        status: match res.status {
            IpmStatus::Optimal => SolveStatus::Optimal,
            IpmStatus::Infeasible => SolveStatus::Infeasible,
            IpmStatus::MaxIter => SolveStatus::MaxIter,
        },
        duality_gap: res.gap_rel,
        constraint_residual: res.residual_rel,
        iterations: res.iterations,
    }
}

/// Map an optimal cone solution back to transmit amplitudes by undoing the
/// slack division and the noise-floor scaling.
pub fn recover_allocation(
    program: &ConeProgram,
    solution: &ConeSolution,
) -> Result<PowerAllocation> {
    if solution.status != SolveStatus::Optimal {
        return Err(Error::SolverFailure(format!(
            "cannot recover from status {:?}",
            solution.status
        )));
    }
    let n_av = program.num_available;
    let b_tilde = *solution.variables.last().expect("nonempty solution");
    if b_tilde <= 1e-10 {
        return Err(Error::DegenerateSolution(format!(
            "inverse slack {b_tilde} too small"
        )));
    }
    let sqrt_p = program.power.sqrt();
    let unscale = |v: f64| (v / b_tilde).max(0.0) * sqrt_p;

    let v_u: Vec<f64> = (0..n_av).map(|i| unscale(solution.variables[i])).collect();
    let v_j: BTreeMap<usize, Vec<f64>> = program
        .occupied_ids
        .iter()
        .enumerate()
        .map(|(jk, &j)| {
            let base = n_av + jk * n_av;
            let amps = (0..n_av)
                .map(|i| unscale(solution.variables[base + i]))
                .collect();
            (j, amps)
        })
        .collect();

    let alloc = PowerAllocation {
        v_u,
        v_j,
        power_budget: program.power,
    };
    alloc.validate(1e-6 * program.power.max(1e-30)).map_err(|e| {
        Error::DegenerateSolution(format!("recovered allocation infeasible: {e}"))
    })?;
    Ok(alloc)
}
