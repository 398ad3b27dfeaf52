//! Terrestrial resource-block occupation and UAV serving-BS eligibility.
//!
//! A BS is *occupied* when it serves a terrestrial UE on the UAV's resource
//! block; the ICIC rule keeps occupied BSs at least q+1 tiers apart. A BS is
//! *available* to serve the UAV iff no occupied BS lies in its first q-tier
//! neighborhood.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::channel::ChannelCoefficient;
use crate::topology::{neighbors, HexGrid};
use crate::{Error, Result};

/// UE ground positions keyed by their serving (occupied) BS, plus the
/// occupied set itself.
pub type UePlacement = (BTreeMap<usize, (f64, f64)>, BTreeSet<usize>);

/// Resource-block occupation state for one RB.
#[derive(Debug, Clone)]
pub struct RbAssignment {
    pub occupied: BTreeSet<usize>,
    pub available: BTreeSet<usize>,
    pub icic_tier: usize,
}

impl RbAssignment {
    /// Check the ICIC invariants against a grid.
    pub fn validate(&self, grid: &HexGrid) -> Result<()> {
        if !self.occupied.is_disjoint(&self.available) {
            return Err(Error::InvalidArgument(
                "occupied and available sets overlap".into(),
            ));
        }
        for &j in &self.occupied {
            for &k in &self.occupied {
                if j != k && grid.cell_distance(j, k)? <= self.icic_tier as u32 {
                    return Err(Error::InvalidArgument(format!(
                        "occupied BSs {j} and {k} violate the {}-tier separation",
                        self.icic_tier
                    )));
                }
            }
        }
        for &n in &self.available {
            let hood = neighbors(grid, n, self.icic_tier)?;
            if hood.intersection(&self.occupied).next().is_some() {
                return Err(Error::InvalidArgument(format!(
                    "available BS {n} has an occupied neighbor"
                )));
            }
        }
        Ok(())
    }
}

const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

/// Draw a uniform point inside cell `j`'s hexagon.
fn sample_point_in_cell<R: Rng + ?Sized>(rng: &mut R, grid: &HexGrid, j: usize) -> (f64, f64) {
    let c = grid.bs_position(j).expect("valid cell index");
    let r = grid.cell_radius();
    let half_w = 3f64.sqrt() / 2.0 * r;
    loop {
        let x = c.x + rng.random_range(-half_w..half_w);
        let y = c.y + rng.random_range(-r..r);
        if grid.cell_contains(j, x, y).expect("valid cell index") {
            return (x, y);
        }
    }
}

/// Place `k` terrestrial UEs, one per cell, such that the occupied BSs are
/// pairwise more than `q` tiers apart.
///
/// Cells are drawn sequentially, uniformly over the cells still compatible
/// with the ICIC rule; a dead end resamples the whole layout. Gives up with
/// a packing error after a bounded number of attempts.
pub fn place_ues<R: Rng + ?Sized>(
    rng: &mut R,
    grid: &HexGrid,
    k: usize,
    q: usize,
) -> Result<UePlacement> {
    if k > grid.num_bs() {
        return Err(Error::PackingInfeasible(format!(
            "{k} UEs cannot occupy {} cells",
            grid.num_bs()
        )));
    }
    let mut attempts = 0usize;
    'layout: loop {
        let mut occupied: BTreeSet<usize> = BTreeSet::new();
        let mut ues: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        for _ in 0..k {
            attempts += 1;
            if attempts > MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::PackingInfeasible(format!(
                    "no ICIC-compatible placement of {k} UEs with q={q} found in \
                     {MAX_PLACEMENT_ATTEMPTS} attempts"
                )));
            }
            let feasible: Vec<usize> = (0..grid.num_bs())
                .filter(|&c| {
                    occupied
                        .iter()
                        .all(|&o| grid.cell_distance(c, o).unwrap() > q as u32)
                })
                .collect();
            if feasible.is_empty() {
                continue 'layout;
            }
            let cell = feasible[rng.random_range(0..feasible.len())];
            let pos = sample_point_in_cell(rng, grid, cell);
            occupied.insert(cell);
            ues.insert(cell, pos);
        }
        return Ok((ues, occupied));
    }
}

/// The available set: BSs with no occupied BS in their first q-tier
/// neighborhood.
pub fn available_bss(grid: &HexGrid, occupied: &BTreeSet<usize>, q: usize) -> BTreeSet<usize> {
    (0..grid.num_bs())
        .filter(|&n| !occupied.contains(&n))
        .filter(|&n| {
            let hood = neighbors(grid, n, q).expect("valid index");
            hood.intersection(occupied).next().is_none()
        })
        .collect()
}

/// The available BS with the largest channel power gain; ties go to the
/// lowest BS index.
pub fn best_single_server(
    available: &BTreeSet<usize>,
    channels: &BTreeMap<usize, ChannelCoefficient>,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &n in available {
        let gain = channels
            .get(&n)
            .ok_or_else(|| Error::InvalidArgument(format!("no channel for BS {n}")))?
            .power_gain();
        match best {
            Some((_, g)) if gain <= g => {}
            _ => best = Some((n, gain)),
        }
    }
    best.map(|(n, _)| n).ok_or(Error::NoServer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_grid;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn coeff(amplitude: f64) -> ChannelCoefficient {
        ChannelCoefficient {
            amplitude,
            phase: 0.0,
            los: true,
        }
    }

    #[test]
    fn zero_ues_empty_sets() {
        let grid = build_grid(3, 800.0, 25.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let (ues, occ) = place_ues(&mut rng, &grid, 0, 1).unwrap();
        assert!(ues.is_empty() && occ.is_empty());
    }

    #[test]
    fn seven_ues_tier_one_separation() {
        let grid = build_grid(3, 800.0, 25.0).unwrap();
        for seed in 0..20 {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let (ues, occ) = place_ues(&mut rng, &grid, 7, 1).unwrap();
            assert_eq!(occ.len(), 7);
            assert_eq!(ues.len(), 7);
            for &a in &occ {
                for &b in &occ {
                    if a != b {
                        assert!(grid.cell_distance(a, b).unwrap() > 1);
                    }
                }
                let (x, y) = ues[&a];
                assert!(grid.cell_contains(a, x, y).unwrap());
            }
            let assignment = RbAssignment {
                available: available_bss(&grid, &occ, 1),
                occupied: occ,
                icic_tier: 1,
            };
            assignment.validate(&grid).unwrap();
        }
    }

    #[test]
    fn packing_infeasible_single_cell() {
        let grid = build_grid(0, 800.0, 25.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let err = place_ues(&mut rng, &grid, 2, 1).unwrap_err();
        assert!(matches!(err, Error::PackingInfeasible(_)));
    }

    #[test]
    fn placement_deterministic_per_seed() {
        let grid = build_grid(3, 800.0, 25.0).unwrap();
        let a = place_ues(&mut ChaCha12Rng::seed_from_u64(9), &grid, 7, 1).unwrap();
        let b = place_ues(&mut ChaCha12Rng::seed_from_u64(9), &grid, 7, 1).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn available_no_occupied_is_all() {
        let grid = build_grid(3, 800.0, 25.0).unwrap();
        let avail = available_bss(&grid, &BTreeSet::new(), 1);
        assert_eq!(avail.len(), grid.num_bs());
    }

    #[test]
    fn available_excludes_center_neighborhood() {
        let grid = build_grid(3, 800.0, 25.0).unwrap();
        let occ = BTreeSet::from([0]);
        let avail = available_bss(&grid, &occ, 1);
        assert_eq!(avail.len(), 30);
        assert!(!avail.contains(&0));
        for n in 1..=6 {
            assert!(!avail.contains(&n), "first-ring BS {n} should be excluded");
        }
    }

    #[test]
    fn available_all_occupied_is_empty() {
        let grid = build_grid(2, 800.0, 25.0).unwrap();
        let occ: BTreeSet<usize> = (0..grid.num_bs()).collect();
        assert!(available_bss(&grid, &occ, 1).is_empty());
    }

    #[test]
    fn best_server_selection() {
        let mut channels = BTreeMap::new();
        channels.insert(4, coeff(2.0));
        channels.insert(9, coeff(1.0));
        let avail = BTreeSet::from([4, 9]);
        assert_eq!(best_single_server(&avail, &channels).unwrap(), 4);

        let single = BTreeSet::from([9]);
        assert_eq!(best_single_server(&single, &channels).unwrap(), 9);

        // Tie goes to the lowest index.
        channels.insert(9, coeff(2.0));
        assert_eq!(best_single_server(&avail, &channels).unwrap(), 4);

        assert!(matches!(
            best_single_server(&BTreeSet::new(), &channels),
            Err(Error::NoServer)
        ));
    }
}
