//! Hexagonal cell-grid geometry: BS/UAV/UE positions, tier neighborhoods and
//! 3D distances.
//!
//! Cells are pointy-top hexagons addressed by axial coordinates. Ring
//! membership is decided on the axial lattice rather than by distance
//! thresholds, so neighborhood queries are exact and free of float ties. The
//! grid is finite: cells on the boundary keep truncated neighborhoods, there
//! is no wrap-around.

use std::collections::BTreeSet;

use crate::{Error, Result};

/// A point in 3D space, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Horizontal (ground-projected) distance to another point.
    pub fn horizontal_distance(&self, other: &Point3) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Euclidean distance between two 3D points.
pub fn distance_3d(a: &Point3, b: &Point3) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// A hexagonal grid of base stations: one center cell surrounded by `tiers`
/// rings, `1 + 3*tiers*(tiers+1)` cells in total.
///
/// BS ordering is deterministic: ring-major (ring 0 first), angle-minor
/// within a ring (counterclockwise starting from the positive x axis).
#[derive(Debug, Clone)]
pub struct HexGrid {
    cell_radius: f64,
    tiers: usize,
    bs_height: f64,
    /// Axial (q, r) lattice coordinate per BS.
    axial: Vec<(i32, i32)>,
    positions: Vec<Point3>,
}

/// Axial hex distance between two lattice points.
fn hex_distance(a: (i32, i32), b: (i32, i32)) -> u32 {
    let dq = a.0 - b.0;
    let dr = a.1 - b.1;
    ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
}

/// Build a grid with the center cell at the origin.
pub fn build_grid(tiers: usize, cell_radius: f64, bs_height: f64) -> Result<HexGrid> {
    if !(cell_radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "cell radius must be positive, got {cell_radius}"
        )));
    }

    let to_xy = |(q, r): (i32, i32)| -> (f64, f64) {
        let x = 3f64.sqrt() * cell_radius * (q as f64 + r as f64 / 2.0);
        let y = 1.5 * cell_radius * r as f64;
        (x, y)
    };

    let mut axial = vec![(0, 0)];
    let t = tiers as i32;
    for ring in 1..=t {
        let mut cells: Vec<((i32, i32), f64)> = Vec::new();
        for q in -ring..=ring {
            for r in -ring..=ring {
                if hex_distance((q, r), (0, 0)) == ring as u32 {
                    let (x, y) = to_xy((q, r));
                    let mut angle = y.atan2(x);
                    if angle < 0.0 {
                        angle += std::f64::consts::TAU;
                    }
                    cells.push(((q, r), angle));
                }
            }
        }
        cells.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        axial.extend(cells.into_iter().map(|(c, _)| c));
    }

    let positions = axial
        .iter()
        .map(|&c| {
            let (x, y) = to_xy(c);
            Point3::new(x, y, bs_height)
        })
        .collect();

    Ok(HexGrid {
        cell_radius,
        tiers,
        bs_height,
        axial,
        positions,
    })
}

impl HexGrid {
    pub fn num_bs(&self) -> usize {
        self.axial.len()
    }

    pub fn cell_radius(&self) -> f64 {
        self.cell_radius
    }

    pub fn tiers(&self) -> usize {
        self.tiers
    }

    pub fn bs_height(&self) -> f64 {
        self.bs_height
    }

    pub fn bs_position(&self, j: usize) -> Result<Point3> {
        self.positions
            .get(j)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("BS index {j} out of range")))
    }

    pub fn bs_positions(&self) -> &[Point3] {
        &self.positions
    }

    /// Axial hex distance between two cells.
    pub fn cell_distance(&self, a: usize, b: usize) -> Result<u32> {
        let ca = self
            .axial
            .get(a)
            .ok_or_else(|| Error::InvalidArgument(format!("BS index {a} out of range")))?;
        let cb = self
            .axial
            .get(b)
            .ok_or_else(|| Error::InvalidArgument(format!("BS index {b} out of range")))?;
        Ok(hex_distance(*ca, *cb))
    }

    /// Whether a ground point lies inside cell `j`'s hexagon (boundary
    /// inclusive).
    pub fn cell_contains(&self, j: usize, x: f64, y: f64) -> Result<bool> {
        let c = self.bs_position(j)?;
        let dx = (x - c.x).abs();
        let dy = (y - c.y).abs();
        let r = self.cell_radius;
        let eps = 1e-9 * r;
        Ok(dx <= 3f64.sqrt() / 2.0 * r + eps && dy <= r - dx / 3f64.sqrt() + eps)
    }
}

/// The first q-tier neighborhood N_j(q) of BS `j`, including `j` itself.
/// Boundary cells return only the BSs that exist on the grid.
pub fn neighbors(grid: &HexGrid, j: usize, q: usize) -> Result<BTreeSet<usize>> {
    if j >= grid.num_bs() {
        return Err(Error::InvalidArgument(format!("BS index {j} out of range")));
    }
    let center = grid.axial[j];
    Ok(grid
        .axial
        .iter()
        .enumerate()
        .filter(|(_, &c)| hex_distance(center, c) <= q as u32)
        .map(|(i, _)| i)
        .collect())
}

/// UAV and terrestrial-UE positions on a grid.
#[derive(Debug, Clone)]
pub struct Placement {
    pub uav_position: Point3,
    /// Ground position of the UE served by each occupied BS.
    pub ue_positions: std::collections::BTreeMap<usize, (f64, f64)>,
}

impl Placement {
    /// Validate the placement invariants against a grid: positive UAV
    /// altitude and every UE inside its serving cell.
    pub fn validate(&self, grid: &HexGrid) -> Result<()> {
        if !(self.uav_position.z > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "UAV altitude must be positive, got {}",
                self.uav_position.z
            )));
        }
        for (&j, &(x, y)) in &self.ue_positions {
            if !grid.cell_contains(j, x, y)? {
                return Err(Error::InvalidArgument(format!(
                    "UE of BS {j} lies outside its cell"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_cell_counts() {
        assert_eq!(build_grid(0, 800.0, 25.0).unwrap().num_bs(), 1);
        assert_eq!(build_grid(2, 800.0, 25.0).unwrap().num_bs(), 19);
        assert_eq!(build_grid(3, 800.0, 25.0).unwrap().num_bs(), 37);
    }

    #[test]
    fn zero_tiers_single_bs_at_origin() {
        let g = build_grid(0, 800.0, 25.0).unwrap();
        let p = g.bs_position(0).unwrap();
        assert_eq!((p.x, p.y, p.z), (0.0, 0.0, 25.0));
    }

    #[test]
    fn nonpositive_radius_rejected() {
        assert!(build_grid(3, 0.0, 25.0).is_err());
        assert!(build_grid(3, -1.0, 25.0).is_err());
    }

    #[test]
    fn ordering_ring_major_angle_minor() {
        let g = build_grid(3, 800.0, 25.0).unwrap();
        // Ring index of BS i, recomputed from the axial coordinates.
        let ring = |i: usize| g.cell_distance(0, i).unwrap();
        let mut prev = 0;
        for i in 0..g.num_bs() {
            assert!(ring(i) >= prev, "ring-major order violated at {i}");
            prev = ring(i);
        }
        // First cell of ring 1 sits on the positive x axis.
        let p = g.bs_position(1).unwrap();
        assert!(p.y.abs() < 1e-9 && p.x > 0.0);
    }

    #[test]
    fn heights_and_adjacent_spacing() {
        let g = build_grid(3, 800.0, 25.0).unwrap();
        let expected = 3f64.sqrt() * 800.0;
        for i in 0..g.num_bs() {
            assert_eq!(g.bs_position(i).unwrap().z, 25.0);
            for j in 0..g.num_bs() {
                if i != j && g.cell_distance(i, j).unwrap() == 1 {
                    let d = g
                        .bs_position(i)
                        .unwrap()
                        .horizontal_distance(&g.bs_position(j).unwrap());
                    assert!((d - expected).abs() < 1e-6 * expected);
                }
            }
        }
    }

    #[test]
    fn neighbors_center_examples() {
        let g = build_grid(3, 800.0, 25.0).unwrap();
        assert_eq!(
            neighbors(&g, 0, 0).unwrap(),
            BTreeSet::from([0]),
            "q = 0 is self only"
        );
        assert_eq!(neighbors(&g, 0, 1).unwrap().len(), 7);
        assert_eq!(neighbors(&g, 0, 2).unwrap().len(), 19);
        assert_eq!(neighbors(&g, 0, 3).unwrap().len(), 37);
    }

    #[test]
    fn neighbors_truncated_at_boundary() {
        let g = build_grid(3, 800.0, 25.0).unwrap();
        // Corner cell of the outer ring: the first cell of ring 3 lies on
        // the x axis and is a ring corner.
        let corner = 19; // 1 + 6 + 12 = first index of ring 3
        assert_eq!(g.cell_distance(0, corner).unwrap(), 3);
        let n = neighbors(&g, corner, 1).unwrap();
        assert!(n.len() < 7, "boundary neighborhood not truncated: {n:?}");
        assert!(n.contains(&corner));
    }

    #[test]
    fn neighbors_invalid_index() {
        let g = build_grid(1, 800.0, 25.0).unwrap();
        assert!(neighbors(&g, 99, 1).is_err());
    }

    #[test]
    fn distance_3d_examples() {
        let o = Point3::new(0.0, 0.0, 0.0);
        assert_eq!(distance_3d(&o, &o), 0.0);
        assert_eq!(
            distance_3d(&Point3::new(0.0, 0.0, 25.0), &Point3::new(0.0, 0.0, 200.0)),
            175.0
        );
        assert_eq!(distance_3d(&Point3::new(3.0, 4.0, 0.0), &o), 5.0);
    }

    #[test]
    fn ue_containment_checks() {
        let g = build_grid(1, 800.0, 25.0).unwrap();
        assert!(g.cell_contains(0, 0.0, 0.0).unwrap());
        assert!(g.cell_contains(0, 0.0, 799.9).unwrap());
        assert!(!g.cell_contains(0, 0.0, 900.0).unwrap());
        let p1 = g.bs_position(1).unwrap();
        assert!(g.cell_contains(1, p1.x, p1.y).unwrap());
        assert!(!g.cell_contains(1, 0.0, 0.0).unwrap());
    }

    #[test]
    fn placement_validation() {
        let g = build_grid(1, 800.0, 25.0).unwrap();
        let p1 = g.bs_position(1).unwrap();
        let good = Placement {
            uav_position: Point3::new(150.0, 420.0, 200.0),
            ue_positions: std::collections::BTreeMap::from([(0, (10.0, -20.0)), (1, (p1.x, p1.y))]),
        };
        good.validate(&g).unwrap();

        let grounded = Placement {
            uav_position: Point3::new(0.0, 0.0, 0.0),
            ue_positions: Default::default(),
        };
        assert!(grounded.validate(&g).is_err());

        let stray = Placement {
            uav_position: Point3::new(0.0, 0.0, 200.0),
            ue_positions: std::collections::BTreeMap::from([(1, (0.0, 0.0))]),
        };
        assert!(stray.validate(&g).is_err(), "UE outside its cell");
    }

    proptest! {
        #[test]
        fn neighborhood_properties(tiers in 0usize..4, q in 0usize..4, sel in 0usize..1000) {
            let g = build_grid(tiers, 500.0, 25.0).unwrap();
            let j = sel % g.num_bs();
            let n_q = neighbors(&g, j, q).unwrap();
            let n_q1 = neighbors(&g, j, q + 1).unwrap();
            // j in N_j(q), N_j(q) subset of N_j(q+1), and symmetry.
            prop_assert!(n_q.contains(&j));
            prop_assert!(n_q.is_subset(&n_q1));
            for k in 0..g.num_bs() {
                let n_k = neighbors(&g, k, q).unwrap();
                prop_assert_eq!(n_q.contains(&k), n_k.contains(&j));
            }
        }
    }
}
