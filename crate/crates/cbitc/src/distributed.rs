//! Divide-and-conquer distributed CB-ITC.
//!
//! Instead of a central scheduler with global channel knowledge, each
//! occupied BS splits its interference channel into portions and hands each
//! portion to a nearby available BS, which cancels what it was given with
//! its best effort. The split ratios are either fixed (open loop, one
//! exchange round) or iteratively rebalanced toward the BSs with spare
//! cancellation capability (closed loop). The protocol runs as deterministic
//! synchronous rounds; the message trace is recorded for inspection.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use crate::beamforming::{optimal_phases, sinr_cb_itc, PowerAllocation, Scheme, SinrReport};
use crate::topology::{neighbors, HexGrid};
use crate::{Error, Result};

/// Who cooperates with whom: each occupied BS j talks to the available BSs
/// in its first M-tier neighborhood (Omega_j), and dually each available BS
/// n serves the occupied BSs that selected it (J_on).
#[derive(Debug, Clone)]
pub struct CooperationGraph {
    /// Occupied BS -> available BSs within M tiers. Keys cover every
    /// occupied BS; values may be empty.
    pub omega_j: BTreeMap<usize, BTreeSet<usize>>,
    /// Available BS -> occupied BSs it cancels for. Keys cover every
    /// available BS; values may be empty.
    pub j_o_n: BTreeMap<usize, BTreeSet<usize>>,
    pub cooperation_size: usize,
}

impl CooperationGraph {
    pub fn available(&self) -> impl Iterator<Item = usize> + '_ {
        self.j_o_n.keys().copied()
    }

    pub fn occupied(&self) -> impl Iterator<Item = usize> + '_ {
        self.omega_j.keys().copied()
    }
}

/// Interference splitting state at one exchange round.
#[derive(Debug, Clone)]
pub struct SplitState {
    /// theta[(j, n)]: fraction of occupied BS j's interference assigned to
    /// available BS n. Rows sum to 1 over n in Omega_j.
    pub theta: BTreeMap<(usize, usize), f64>,
    pub round: usize,
    /// S_n: cancellation capability of each available BS with a nonempty
    /// assignment: |f_n|^2 minus the sum of its assigned squared portions.
    pub capabilities: BTreeMap<usize, f64>,
    /// A_n: S_n split equally over the occupied BSs served by n.
    pub shares: BTreeMap<usize, f64>,
}

impl SplitState {
    /// Row-sum invariant: splitting ratios of every occupied BS with a
    /// nonempty neighborhood sum to one.
    pub fn validate(&self, graph: &CooperationGraph) -> Result<()> {
        for (&j, omega) in &graph.omega_j {
            if omega.is_empty() {
                continue;
            }
            let sum: f64 = omega.iter().map(|&n| self.theta[&(j, n)]).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "splitting ratios of BS {j} sum to {sum}"
                )));
            }
            for &n in omega {
                let t = self.theta[&(j, n)];
                if !(-1e-15..=1.0 + 1e-12).contains(&t) {
                    return Err(Error::InvalidArgument(format!(
                        "ratio theta[{j},{n}] = {t} out of [0,1]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Protocol message kinds, in the order they appear within a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    /// Occupied -> available: the ratio-scaled channel coefficient.
    ChannelShare,
    /// Available -> occupied: the per-BS capability share A_n.
    CapacityBroadcast,
    /// Occupied -> available, final round only: the UE's data symbol.
    SymbolShare,
}

#[derive(Debug, Clone, Copy)]
pub struct ProtocolMessage {
    pub round: usize,
    pub kind: MessageKind,
    pub sender: usize,
    pub receiver: usize,
    /// Payload magnitude: |f_j| theta for channel shares, A_n for capacity
    /// broadcasts, 1 for symbol shares (bookkeeping only).
    pub payload: f64,
}

/// Build the cooperation graph from the grid and occupation state. Requires
/// a cooperation size of at least q + 1, since no available BS exists within
/// q tiers of an occupied BS.
pub fn build_cooperation_graph(
    grid: &HexGrid,
    occupied: &BTreeSet<usize>,
    available: &BTreeSet<usize>,
    m: usize,
    q: usize,
) -> Result<CooperationGraph> {
    if m <= q {
        return Err(Error::CooperationSize { m, q });
    }
    let mut omega_j: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut j_o_n: BTreeMap<usize, BTreeSet<usize>> =
        available.iter().map(|&n| (n, BTreeSet::new())).collect();
    for &j in occupied {
        let hood = neighbors(grid, j, m)?;
        let omega: BTreeSet<usize> = hood.intersection(available).copied().collect();
        for &n in &omega {
            j_o_n.get_mut(&n).expect("available BS").insert(j);
        }
        omega_j.insert(j, omega);
    }
    Ok(CooperationGraph {
        omega_j,
        j_o_n,
        cooperation_size: m,
    })
}

/// Recompute capabilities S_n and equal shares A_n from the ratios.
fn refresh_capabilities(
    theta: &BTreeMap<(usize, usize), f64>,
    graph: &CooperationGraph,
    gains: &BTreeMap<usize, f64>,
) -> (BTreeMap<usize, f64>, BTreeMap<usize, f64>) {
    let mut capabilities = BTreeMap::new();
    let mut shares = BTreeMap::new();
    for (&n, assigned) in &graph.j_o_n {
        if assigned.is_empty() {
            continue;
        }
        let load: f64 = assigned
            .iter()
            .map(|&j| {
                let t = theta[&(j, n)];
                gains[&j] * t * t
            })
            .sum();
        let s_n = gains[&n] - load;
        capabilities.insert(n, s_n);
        shares.insert(n, s_n / assigned.len() as f64);
    }
    (capabilities, shares)
}

/// Open-loop split: each occupied BS divides its interference equally over
/// its reachable available BSs. `gains` maps every BS id in the graph to its
/// channel power gain |f|^2.
pub fn open_loop_split(graph: &CooperationGraph, gains: &BTreeMap<usize, f64>) -> SplitState {
    let mut theta = BTreeMap::new();
    for (&j, omega) in &graph.omega_j {
        if omega.is_empty() {
            continue;
        }
        let share = 1.0 / omega.len() as f64;
        for &n in omega {
            theta.insert((j, n), share);
        }
    }
    let (capabilities, shares) = refresh_capabilities(&theta, graph, gains);
    SplitState {
        theta,
        round: 1,
        capabilities,
        shares,
    }
}

/// One closed-loop rebalancing round: every occupied BS that sees both
/// spare-capability and overloaded available BSs moves splitting weight from
/// the overloaded ones (ascending share order) to the spare ones (descending
/// share order), bounded so the spare BSs keep nonnegative capability. All
/// occupied BSs update simultaneously against the same broadcast shares.
pub fn closed_loop_round(
    state: &SplitState,
    graph: &CooperationGraph,
    gains: &BTreeMap<usize, f64>,
) -> SplitState {
    let mut theta = state.theta.clone();
    for (&j, omega) in &graph.omega_j {
        if omega.is_empty() {
            continue;
        }
        let mut surplus: Vec<usize> = Vec::new();
        let mut deficit: Vec<usize> = Vec::new();
        for &n in omega {
            if state.shares[&n] > 0.0 {
                surplus.push(n);
            } else {
                deficit.push(n);
            }
        }
        if surplus.is_empty() || deficit.is_empty() {
            continue;
        }
        let g_j = gains[&j];
        // Headroom per surplus BS from the capability-preservation bound.
        let headroom: BTreeMap<usize, f64> = surplus
            .iter()
            .map(|&n| {
                let t = state.theta[&(j, n)];
                let d = (state.shares[&n] / g_j + t * t).sqrt() - t;
                (n, d.max(0.0))
            })
            .collect();
        let mut quota: f64 = headroom.values().sum();

        // Drain the overloaded BSs, most overloaded first (ties by id).
        deficit.sort_by(|a, b| {
            state.shares[a]
                .partial_cmp(&state.shares[b])
                .unwrap()
                .then(a.cmp(b))
        });
        let mut moved = 0.0;
        for &n in &deficit {
            if quota <= 0.0 {
                break;
            }
            let t = theta[&(j, n)];
            let reduced = (t - quota).max(0.0);
            quota -= t - reduced;
            moved += t - reduced;
            theta.insert((j, n), reduced);
        }

        // Grant the freed weight to the spare BSs, most capable first.
        surplus.sort_by(|a, b| {
            state.shares[b]
                .partial_cmp(&state.shares[a])
                .unwrap()
                .then(a.cmp(b))
        });
        let mut remaining = moved;
        for &n in &surplus {
            if remaining <= 0.0 {
                break;
            }
            let t = theta[&(j, n)];
            let grant = headroom[&n].min(remaining).min(1.0 - t);
            theta.insert((j, n), t + grant);
            remaining -= grant;
        }
        assert!(
            remaining <= 1e-12,
            "ITC quota not consumed for BS {j}: {remaining} left"
        );

        // Renormalize away accumulated roundoff; anything larger than 1e-12
        // indicates a logic error, not float drift.
        let sum: f64 = omega.iter().map(|&n| theta[&(j, n)]).sum();
        assert!(
            (sum - 1.0).abs() <= 1e-12,
            "splitting ratios of BS {j} drifted to {sum}"
        );
        for &n in omega {
            let t = theta[&(j, n)] / sum;
            theta.insert((j, n), t.clamp(0.0, 1.0));
        }
    }

    let (capabilities, shares) = refresh_capabilities(&theta, graph, gains);
    SplitState {
        theta,
        round: state.round + 1,
        capabilities,
        shares,
    }
}

/// Best-effort per-BS power allocation for the current split, in the
/// high-SNR form: a BS with nonnegative capability cancels its assigned
/// portions exactly; an overloaded BS scales down proportionally; a BS with
/// nothing assigned puts all power on the UAV's symbol.
///
/// The returned allocation indexes available BSs in ascending id order.
pub fn distributed_power_allocation(
    state: &SplitState,
    graph: &CooperationGraph,
    gains: &BTreeMap<usize, f64>,
    power: f64,
) -> PowerAllocation {
    let available: Vec<usize> = graph.available().collect();
    let n_av = available.len();
    let sqrt_p = power.sqrt();

    let mut v_u = vec![0.0; n_av];
    let mut v_j: BTreeMap<usize, Vec<f64>> = graph
        .occupied()
        .map(|j| (j, vec![0.0; n_av]))
        .collect();

    for (idx, &n) in available.iter().enumerate() {
        let assigned = &graph.j_o_n[&n];
        if assigned.is_empty() {
            v_u[idx] = sqrt_p;
            continue;
        }
        let g_n = gains[&n];
        let s_n = state.capabilities[&n];
        let load: f64 = assigned
            .iter()
            .map(|&j| {
                let t = state.theta[&(j, n)];
                gains[&j] * t * t
            })
            .sum();
        let mut spent = 0.0;
        for &j in assigned {
            let t = state.theta[&(j, n)];
            let f_j = gains[&j].sqrt();
            let amp = if s_n >= 0.0 {
                f_j * sqrt_p * t / g_n.sqrt()
            } else {
                g_n.sqrt() * f_j * sqrt_p * t / load
            };
            v_j.get_mut(&j).expect("occupied BS")[idx] = amp;
            spent += amp * amp;
        }
        v_u[idx] = (power - spent).max(0.0).sqrt();
    }

    PowerAllocation {
        v_u,
        v_j,
        power_budget: power,
    }
}

/// Residual interference amplitude per occupied BS after best-effort ITC:
/// zero for fully canceled portions, the overload excess otherwise, and the
/// full interference when no available BS was reachable.
pub fn residual_interference(
    state: &SplitState,
    graph: &CooperationGraph,
    gains: &BTreeMap<usize, f64>,
    power: f64,
) -> BTreeMap<usize, f64> {
    let sqrt_p = power.sqrt();
    graph
        .omega_j
        .iter()
        .map(|(&j, omega)| {
            let f_j = gains[&j].sqrt();
            if omega.is_empty() {
                return (j, sqrt_p * f_j);
            }
            let alpha: f64 = omega
                .iter()
                .map(|&n| {
                    let s_n = state.capabilities[&n];
                    if s_n >= 0.0 {
                        return 0.0;
                    }
                    let t = state.theta[&(j, n)];
                    let load: f64 = graph.j_o_n[&n]
                        .iter()
                        .map(|&jj| {
                            let tt = state.theta[&(jj, n)];
                            gains[&jj] * tt * tt
                        })
                        .sum();
                    -f_j * sqrt_p * t * s_n / load
                })
                .sum();
            (j, alpha)
        })
        .collect()
}

/// Result of one full protocol run.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub allocation: PowerAllocation,
    pub report: SinrReport,
    pub trace: Vec<ProtocolMessage>,
    pub final_state: SplitState,
}

/// Execute the round-based protocol: open-loop initialization, then
/// `max_rounds - 1` closed-loop rebalancing rounds, then symbol sharing,
/// beamforming with the aligned phases, and transmission. `channels` maps
/// every BS id in the graph to its complex channel coefficient. Fully
/// deterministic.
pub fn run_protocol(
    graph: &CooperationGraph,
    channels: &BTreeMap<usize, Complex64>,
    power: f64,
    noise: f64,
    max_rounds: usize,
) -> Result<ProtocolRun> {
    if max_rounds == 0 {
        return Err(Error::InvalidArgument(
            "the protocol needs at least one round".into(),
        ));
    }
    let gains: BTreeMap<usize, f64> = channels.iter().map(|(&b, c)| (b, c.norm_sqr())).collect();
    let mut trace = Vec::new();

    let mut state = open_loop_split(graph, &gains);
    for (&j, omega) in &graph.omega_j {
        for &n in omega {
            trace.push(ProtocolMessage {
                round: state.round,
                kind: MessageKind::ChannelShare,
                sender: j,
                receiver: n,
                payload: gains[&j].sqrt() * state.theta[&(j, n)],
            });
        }
    }

    while state.round < max_rounds {
        for (&n, assigned) in &graph.j_o_n {
            if assigned.is_empty() {
                continue;
            }
            for &j in assigned {
                trace.push(ProtocolMessage {
                    round: state.round,
                    kind: MessageKind::CapacityBroadcast,
                    sender: n,
                    receiver: j,
                    payload: state.shares[&n],
                });
            }
        }
        state = closed_loop_round(&state, graph, &gains);
        state.validate(graph)?;
        for (&j, omega) in &graph.omega_j {
            for &n in omega {
                trace.push(ProtocolMessage {
                    round: state.round,
                    kind: MessageKind::ChannelShare,
                    sender: j,
                    receiver: n,
                    payload: gains[&j].sqrt() * state.theta[&(j, n)],
                });
            }
        }
    }

    for (&j, omega) in &graph.omega_j {
        for &n in omega {
            if state.theta[&(j, n)] > 0.0 {
                trace.push(ProtocolMessage {
                    round: state.round,
                    kind: MessageKind::SymbolShare,
                    sender: j,
                    receiver: n,
                    payload: 1.0,
                });
            }
        }
    }

    let allocation = distributed_power_allocation(&state, graph, &gains, power);
    let available: Vec<Complex64> = graph.available().map(|n| channels[&n]).collect();
    let occupied: BTreeMap<usize, Complex64> =
        graph.occupied().map(|j| (j, channels[&j])).collect();
    let beamformer = optimal_phases(&allocation, &available, &occupied);
    let sinr = sinr_cb_itc(&beamformer, &available, &occupied, power, noise)?;

    Ok(ProtocolRun {
        allocation,
        report: SinrReport::new(Scheme::DistributedItc, sinr),
        trace,
        final_state: state,
    })
}

/// Export the message trace as a line-oriented log: one message per line.
pub fn format_trace(trace: &[ProtocolMessage]) -> String {
    let mut out = String::new();
    for msg in trace {
        let kind = match msg.kind {
            MessageKind::ChannelShare => "channel-share",
            MessageKind::CapacityBroadcast => "capacity-broadcast",
            MessageKind::SymbolShare => "symbol-share",
        };
        out.push_str(&format!(
            "{} {} {} {} {:.6e}\n",
            msg.round, kind, msg.sender, msg.receiver, msg.payload
        ));
    }
    out
}
