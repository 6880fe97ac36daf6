//! Neighborhood search, PCA surface-normal estimation, and analytic
//! incidence-angle computation.
//!
//! The sensor sits at the origin of the scan frame. Normals are oriented to
//! face the sensor (dot with the beam direction ≤ 0) so the incidence angle
//! is always well defined in [0, π/2].

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::exec;
use crate::scan::{Point, Scan};

/// Default ball-query radius in meters.
pub const DEFAULT_BALL_RADIUS: f64 = 0.5;
/// Minimum neighbor count for a trusted normal. Three suffice in theory;
/// five buys noise robustness on real terrain.
pub const DEFAULT_MIN_NEIGHBORS: usize = 5;

/// A 3-vector of unit Euclidean norm (within 1e-9 after construction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3(Vector3<f64>);

impl UnitVector3 {
    /// Normalize an arbitrary non-zero finite vector.
    pub fn normalized(v: Vector3<f64>) -> Result<UnitVector3> {
        let norm = v.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::NonUnitVector { norm });
        }
        Ok(UnitVector3(v / norm))
    }

    /// Accept a vector already claimed to be unit; rejects norms off by
    /// more than 1e-6, then renormalizes exactly.
    pub fn checked(v: Vector3<f64>) -> Result<UnitVector3> {
        let norm = v.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NonUnitVector { norm });
        }
        Ok(UnitVector3(v / norm))
    }

    pub fn from_components(x: f64, y: f64, z: f64) -> Result<UnitVector3> {
        UnitVector3::normalized(Vector3::new(x, y, z))
    }

    pub fn dot(&self, other: &UnitVector3) -> f64 {
        self.0.dot(&other.0)
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn components(&self) -> [f64; 3] {
        [self.0.x, self.0.y, self.0.z]
    }

    pub fn flipped(&self) -> UnitVector3 {
        UnitVector3(-self.0)
    }
}

/// Estimated surface normal at a point.
///
/// `planarity` is 1 − λ₃/λ₂ of the neighborhood covariance eigenvalues and
/// is set to exactly 0 when the estimate is degenerate (too few neighbors,
/// or a collinear/isotropic neighborhood); callers must skip such points.
#[derive(Debug, Clone, Copy)]
pub struct NormalEstimate {
    pub normal: UnitVector3,
    pub neighbor_count: usize,
    pub planarity: f64,
}

impl NormalEstimate {
    pub fn is_degenerate(&self) -> bool {
        self.planarity == 0.0
    }

    fn degenerate(neighbor_count: usize) -> NormalEstimate {
        NormalEstimate {
            normal: UnitVector3(Vector3::z()),
            neighbor_count,
            planarity: 0.0,
        }
    }
}

struct KdNode {
    point: u32,
    axis: u8,
    left: i32,
    right: i32,
}

/// Static kd-tree over scan points answering inclusive radius queries.
/// Immutable after build; concurrent queries are safe.
pub struct SpatialIndex {
    positions: Vec<Vector3<f64>>,
    nodes: Vec<KdNode>,
    root: i32,
}

impl SpatialIndex {
    pub fn build(scan: &Scan) -> Result<SpatialIndex> {
        if scan.is_empty() {
            return Err(Error::EmptyScan);
        }
        let positions: Vec<Vector3<f64>> = scan
            .points
            .iter()
            .map(|p| Vector3::new(p.x, p.y, p.z))
            .collect();
        let mut order: Vec<u32> = (0..positions.len() as u32).collect();
        let mut nodes = Vec::with_capacity(positions.len());
        let root = build_node(&positions, &mut order, 0, &mut nodes);
        Ok(SpatialIndex {
            positions,
            nodes,
            root,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn position(&self, idx: usize) -> Vector3<f64> {
        self.positions[idx]
    }

    /// Indices of all points within `radius` (inclusive) of `center`,
    /// ascending.
    pub fn query_radius(&self, center: &Vector3<f64>, radius: f64) -> Vec<u32> {
        let mut out = Vec::new();
        self.query_radius_into(center, radius, &mut out);
        out
    }

    /// Allocation-reusing variant of [`query_radius`](Self::query_radius).
    pub fn query_radius_into(&self, center: &Vector3<f64>, radius: f64, out: &mut Vec<u32>) {
        out.clear();
        if radius < 0.0 {
            return;
        }
        let r2 = radius * radius;
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if id < 0 {
                continue;
            }
            let node = &self.nodes[id as usize];
            let pos = &self.positions[node.point as usize];
            if (pos - center).norm_squared() <= r2 {
                out.push(node.point);
            }
            let delta = center[node.axis as usize] - pos[node.axis as usize];
            let (near, far) = if delta <= 0.0 {
                (node.left, node.right)
            } else {
                (node.right, node.left)
            };
            stack.push(near);
            if delta * delta <= r2 {
                stack.push(far);
            }
        }
        out.sort_unstable();
    }
}

fn build_node(
    positions: &[Vector3<f64>],
    order: &mut [u32],
    depth: usize,
    nodes: &mut Vec<KdNode>,
) -> i32 {
    if order.is_empty() {
        return -1;
    }
    let axis = (depth % 3) as u8;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        positions[a as usize][axis as usize].total_cmp(&positions[b as usize][axis as usize])
    });
    let point = order[mid];
    let id = nodes.len() as i32;
    nodes.push(KdNode {
        point,
        axis,
        left: -1,
        right: -1,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_node(positions, lo, depth + 1, nodes);
    let right = build_node(positions, hi, depth + 1, nodes);
    nodes[id as usize].left = left;
    nodes[id as usize].right = right;
    id
}

/// Unit vector from the sensor origin toward `point`.
pub fn beam_direction(point: &Point) -> Result<UnitVector3> {
    let v = Vector3::new(point.x, point.y, point.z);
    let norm = v.norm();
    if norm < 1e-12 {
        return Err(Error::ZeroRange);
    }
    Ok(UnitVector3(v / norm))
}

/// Incidence angle α = arccos(|l · n|) between a beam and a surface normal,
/// in [0, π/2]. The absolute value makes the result invariant to the
/// normal's sign, which an unoriented PCA estimate cannot fix.
pub fn incidence_angle(beam: &UnitVector3, normal: &UnitVector3) -> Result<f64> {
    for v in [beam, normal] {
        let norm = v.0.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NonUnitVector { norm });
        }
    }
    Ok(beam.dot(normal).abs().min(1.0).acos())
}

/// PCA normal of the neighborhood within `radius` of `center`.
///
/// The normal is the eigenvector of the neighborhood covariance with the
/// smallest eigenvalue, flipped to face the sensor. Estimates backed by
/// fewer than `min_neighbors` points, or by collinear/isotropic
/// neighborhoods, come back degenerate (planarity 0).
pub fn estimate_normal(
    index: &SpatialIndex,
    center: &Vector3<f64>,
    radius: f64,
    min_neighbors: usize,
) -> NormalEstimate {
    let mut neighbors = Vec::new();
    estimate_normal_with_buf(index, center, radius, min_neighbors, &mut neighbors)
}

fn estimate_normal_with_buf(
    index: &SpatialIndex,
    center: &Vector3<f64>,
    radius: f64,
    min_neighbors: usize,
    neighbors: &mut Vec<u32>,
) -> NormalEstimate {
    debug_assert!(radius > 0.0);
    index.query_radius_into(center, radius, neighbors);
    let n = neighbors.len();
    if n < min_neighbors.max(3) {
        return NormalEstimate::degenerate(n);
    }

    let mut centroid = Vector3::zeros();
    for &i in neighbors.iter() {
        centroid += index.positions[i as usize];
    }
    centroid /= n as f64;

    let mut cov = Matrix3::zeros();
    for &i in neighbors.iter() {
        let d = index.positions[i as usize] - centroid;
        cov += d * d.transpose();
    }
    cov /= n as f64;

    let eigen = cov.symmetric_eigen();
    // Sort eigenpairs descending: λ₁ ≥ λ₂ ≥ λ₃.
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));
    let (l1, l2, l3) = (
        eigen.eigenvalues[idx[0]].max(0.0),
        eigen.eigenvalues[idx[1]].max(0.0),
        eigen.eigenvalues[idx[2]].max(0.0),
    );
    // Collinear or fully isotropic neighborhoods cannot define a plane.
    if l2 <= 1e-12 * l1.max(1e-300) || l1 <= 0.0 {
        return NormalEstimate::degenerate(n);
    }
    let planarity = (1.0 - l3 / l2).max(0.0);
    if planarity == 0.0 {
        return NormalEstimate::degenerate(n);
    }

    let mut normal = eigen.eigenvectors.column(idx[2]).into_owned();
    normal /= normal.norm();
    // Face the sensor at the origin: dot(normal, point − origin) ≤ 0.
    if normal.dot(center) > 0.0 {
        normal = -normal;
    }
    NormalEstimate {
        normal: UnitVector3(normal),
        neighbor_count: n,
        planarity,
    }
}

/// Normal estimates for every point of an indexed scan (parallel when the
/// `parallel` feature is on; output order always matches point order).
pub fn estimate_normals(
    index: &SpatialIndex,
    radius: f64,
    min_neighbors: usize,
) -> Vec<NormalEstimate> {
    exec::map_indices(index.len(), |i| {
        estimate_normal(index, &index.positions[i], radius, min_neighbors)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scan::SensorKind;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn scan_from(positions: &[[f64; 3]]) -> Scan {
        let points = positions
            .iter()
            .map(|&[x, y, z]| Point::new(x, y, z, 1.0))
            .collect();
        Scan::new(points, SensorKind::OusterRaw)
    }

    #[test]
    fn radius_query_inclusive_boundary() {
        let scan = scan_from(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        let index = SpatialIndex::build(&scan).unwrap();
        let both = index.query_radius(&Vector3::zeros(), 1.0);
        assert_eq!(both, vec![0, 1]);
        let only_self = index.query_radius(&Vector3::zeros(), 0.99);
        assert_eq!(only_self, vec![0]);
    }

    #[test]
    fn empty_scan_rejected() {
        let scan = scan_from(&[]);
        assert!(matches!(SpatialIndex::build(&scan), Err(Error::EmptyScan)));
    }

    #[test]
    fn radius_query_matches_linear_scan() {
        // Oracle: O(n²) scan over the same cloud.
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let positions: Vec<[f64; 3]> = (0..1000)
            .map(|_| {
                [
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                    rng.gen_range(-10.0..10.0),
                ]
            })
            .collect();
        let scan = scan_from(&positions);
        let index = SpatialIndex::build(&scan).unwrap();
        for _ in 0..100 {
            let q = Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            let radius = rng.gen_range(0.1..5.0);
            let got = index.query_radius(&q, radius);
            let want: Vec<u32> = positions
                .iter()
                .enumerate()
                .filter(|(_, p)| {
                    let d = Vector3::new(p[0], p[1], p[2]) - q;
                    d.norm() <= radius
                })
                .map(|(i, _)| i as u32)
                .collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn plane_normal_is_exact_and_faces_sensor() {
        // Grid on z = 5 above the sensor: normal flips to (0,0,-1).
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f64 * 0.1, j as f64 * 0.1, 5.0]);
            }
        }
        let scan = scan_from(&pts);
        let index = SpatialIndex::build(&scan).unwrap();
        let est = estimate_normal(&index, &Vector3::new(0.5, 0.5, 5.0), 0.5, 5);
        assert!(!est.is_degenerate());
        let [nx, ny, nz] = est.normal.components();
        assert!(nx.abs() < 1e-9 && ny.abs() < 1e-9);
        assert!((nz + 1.0).abs() < 1e-9, "nz = {nz}");
        assert!((est.planarity - 1.0).abs() < 1e-9);
    }

    #[test]
    fn too_few_neighbors_degenerate() {
        let scan = scan_from(&[[0.0, 0.0, 5.0], [0.1, 0.0, 5.0]]);
        let index = SpatialIndex::build(&scan).unwrap();
        let est = estimate_normal(&index, &Vector3::new(0.0, 0.0, 5.0), 0.5, 5);
        assert!(est.is_degenerate());
        assert_eq!(est.neighbor_count, 2);
    }

    #[test]
    fn collinear_neighbors_degenerate() {
        let pts: Vec<[f64; 3]> = (0..8).map(|i| [i as f64 * 0.05, 0.0, 5.0]).collect();
        let scan = scan_from(&pts);
        let index = SpatialIndex::build(&scan).unwrap();
        let est = estimate_normal(&index, &Vector3::new(0.2, 0.0, 5.0), 0.5, 5);
        assert!(est.is_degenerate());
    }

    #[test]
    fn sphere_normals_match_radial_direction() {
        // Oracle: analytic normals of a sphere centered at the origin are
        // radial; sensor-facing flip makes them point inward.
        let radius = 10.0;
        let mut pts = Vec::new();
        let step = 0.012; // radians; ~0.12 m spacing on the sphere
        let mut polar = 0.0f64;
        while polar <= 0.5 {
            let mut az = 0.0f64;
            while az < std::f64::consts::TAU {
                pts.push([
                    radius * polar.sin() * az.cos(),
                    radius * polar.sin() * az.sin(),
                    radius * polar.cos(),
                ]);
                az += step / polar.sin().max(0.012);
            }
            polar += step;
        }
        let scan = scan_from(&pts);
        let index = SpatialIndex::build(&scan).unwrap();
        let mut checked = 0;
        for (i, p) in pts.iter().enumerate().step_by(37) {
            let center = Vector3::new(p[0], p[1], p[2]);
            // Interior queries only: skip points near the cap boundary.
            let polar = (p[2] / radius).acos();
            if !(0.08..=0.42).contains(&polar) {
                continue;
            }
            let est = estimate_normal(&index, &center, 0.5, 5);
            assert!(!est.is_degenerate(), "degenerate at {i}");
            let inward = UnitVector3::normalized(-center).unwrap();
            let angle = est.normal.dot(&inward).clamp(-1.0, 1.0).acos();
            assert!(
                angle.to_degrees() < 2.0,
                "normal off radial by {:.3} deg at point {i}",
                angle.to_degrees()
            );
            checked += 1;
        }
        assert!(checked > 50, "only {checked} sphere points checked");
    }

    #[test]
    fn incidence_angle_reference_cases() {
        let beam = UnitVector3::from_components(0.0, 0.0, -1.0).unwrap();
        let normal = UnitVector3::from_components(0.0, 0.0, 1.0).unwrap();
        assert!(incidence_angle(&beam, &normal).unwrap().abs() < 1e-12);

        let beam = UnitVector3::from_components(1.0, 0.0, 0.0).unwrap();
        assert!((incidence_angle(&beam, &normal).unwrap() - FRAC_PI_2).abs() < 1e-12);

        let beam = UnitVector3::from_components(1.0, 0.0, -1.0).unwrap();
        assert!((incidence_angle(&beam, &normal).unwrap() - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn incidence_angle_rejects_non_unit() {
        let ok = UnitVector3::from_components(0.0, 0.0, 1.0).unwrap();
        let bad = UnitVector3(Vector3::new(0.0, 0.0, 1.1));
        assert!(matches!(
            incidence_angle(&bad, &ok),
            Err(Error::NonUnitVector { .. })
        ));
    }

    #[test]
    fn incidence_angle_symmetric_under_flip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let rv = |rng: &mut rand_chacha::ChaCha8Rng| {
                UnitVector3::from_components(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            };
            let (Ok(l), Ok(n)) = (rv(&mut rng), rv(&mut rng)) else {
                continue;
            };
            let a = incidence_angle(&l, &n).unwrap();
            let b = incidence_angle(&l, &n.flipped()).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((0.0..=FRAC_PI_2 + 1e-12).contains(&a));
        }
    }

    #[test]
    fn beam_direction_cases() {
        let b = beam_direction(&Point::new(3.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(b.components(), [1.0, 0.0, 0.0]);

        assert!(matches!(
            beam_direction(&Point::new(0.0, 0.0, 0.0, 1.0)),
            Err(Error::ZeroRange)
        ));

        let b = beam_direction(&Point::new(1.0, 2.0, 2.0, 1.0)).unwrap();
        let [x, y, z] = b.components();
        assert!((x - 1.0 / 3.0).abs() < 1e-12);
        assert!((y - 2.0 / 3.0).abs() < 1e-12);
        assert!((z - 2.0 / 3.0).abs() < 1e-12);
    }
}
