//! Property tests over the crate invariants: format round-trips, calibration
//! inversion, classification invariances, and metric algebra.

use proptest::prelude::*;

use lidar_reflect::calibration::{self, CalibrationSettings, RangeGate};
use lidar_reflect::evaluation::{iou, ConfusionMatrix, ScoringMode};
use lidar_reflect::geometry::UnitVector3;
use lidar_reflect::scan::{
    read_scan, write_scan, Point, Scan, SensorKind, TerrainClass,
};
use lidar_reflect::synth::NearRangeModel;

fn finite_f32() -> impl Strategy<Value = f32> {
    (-1.0e6f32..1.0e6).prop_map(|v| v)
}

prop_compose! {
    fn arb_point()(x in finite_f32(), y in finite_f32(), z in finite_f32(),
                   intensity in 0.0f32..65536.0) -> Point {
        Point::new(x as f64, y as f64, z as f64, intensity as f64)
    }
}

proptest! {
    /// Write-then-read is the identity on f32-valued scans.
    #[test]
    fn scan_round_trip(points in prop::collection::vec(arb_point(), 0..300)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.bin");
        let scan = Scan::new(points, SensorKind::OusterRaw);
        write_scan(&scan, &path).unwrap();
        let back = read_scan(&path, SensorKind::OusterRaw).unwrap();
        prop_assert_eq!(scan, back);
    }

    /// Label write-then-read is the identity under the canonical ontology.
    #[test]
    fn label_round_trip(ids in prop::collection::vec(0u16..6, 1..300)) {
        use lidar_reflect::scan::{read_labels, write_labels, OntologyMap};
        let labels: Vec<TerrainClass> =
            ids.iter().map(|&i| TerrainClass::from_id(i).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let scan_path = dir.path().join("s.bin");
        let label_path = dir.path().join("s.label");
        let scan = Scan::new(
            labels.iter().map(|_| Point::new(1.0, 0.0, 0.0, 1.0)).collect(),
            SensorKind::OusterRaw,
        );
        write_scan(&scan, &scan_path).unwrap();
        write_labels(&labels, &label_path).unwrap();
        let scan = read_scan(&scan_path, SensorKind::OusterRaw).unwrap();
        let (scan, warnings) =
            read_labels(&label_path, scan, &OntologyMap::canonical()).unwrap();
        prop_assert_eq!(warnings.unmapped, 0);
        prop_assert_eq!(scan.labels.unwrap(), labels);
    }

    /// calibrate(I,R,a) * cos(a) / R² recovers I to 1e-12 relative.
    #[test]
    fn calibrate_exactness(
        intensity in 0.0f64..1.0e5,
        range in 6.0f64..60.0,
        alpha in 0.0f64..1.48,
    ) {
        let gate = RangeGate::default();
        let c = calibration::calibrate(intensity, range, alpha, &gate, 1.49).unwrap();
        let back = c * alpha.cos() / (range * range);
        prop_assert!((back - intensity).abs() <= 1e-12 * intensity.max(1e-300));
    }

    /// Forward model then calibration recovers rho within 1e-9 relative in
    /// the eta = 1 region.
    #[test]
    fn forward_inverse_consistency(
        rho in 1e-6f64..1.0e4,
        range in 6.0f64..60.0,
        alpha_deg in 0.0f64..80.0,
    ) {
        let alpha = alpha_deg.to_radians();
        let eta = NearRangeModel::default().eta(range);
        prop_assert_eq!(eta, 1.0);
        let raw = eta * rho * alpha.cos() / (range * range);
        let gate = RangeGate::default();
        let c = calibration::calibrate(raw, range, alpha, &gate, 1.49).unwrap();
        prop_assert!((c - rho).abs() <= 1e-9 * rho);
    }

    /// calibrate is strictly increasing in intensity at fixed (R, alpha).
    #[test]
    fn calibrate_monotone_in_intensity(
        i1 in 0.0f64..1.0e5,
        delta in 1e-6f64..1.0e3,
        range in 6.0f64..60.0,
        alpha in 0.0f64..1.4,
    ) {
        let gate = RangeGate::default();
        let a = calibration::calibrate(i1, range, alpha, &gate, 1.49).unwrap();
        let b = calibration::calibrate(i1 + delta, range, alpha, &gate, 1.49).unwrap();
        prop_assert!(b > a);
    }

    /// Incidence angle is flip-symmetric and confined to [0, pi/2].
    #[test]
    fn incidence_angle_range_and_flip(
        lx in -1.0f64..1.0, ly in -1.0f64..1.0, lz in -1.0f64..1.0,
        nx in -1.0f64..1.0, ny in -1.0f64..1.0, nz in -1.0f64..1.0,
    ) {
        prop_assume!((lx * lx + ly * ly + lz * lz) > 1e-3);
        prop_assume!((nx * nx + ny * ny + nz * nz) > 1e-3);
        let l = UnitVector3::from_components(lx, ly, lz).unwrap();
        let n = UnitVector3::from_components(nx, ny, nz).unwrap();
        let a = lidar_reflect::geometry::incidence_angle(&l, &n).unwrap();
        let b = lidar_reflect::geometry::incidence_angle(&l, &n.flipped()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::FRAC_PI_2 + 1e-12).contains(&a));
    }

    /// Confusion accumulation is associative and commutative over batches.
    #[test]
    fn confusion_accumulation_algebra(
        pairs in prop::collection::vec((0u16..6, 0u16..6), 1..120),
        split in 0usize..120,
    ) {
        let gt: Vec<TerrainClass> =
            pairs.iter().map(|&(g, _)| TerrainClass::from_id(g).unwrap()).collect();
        let pred: Vec<TerrainClass> =
            pairs.iter().map(|&(_, p)| TerrainClass::from_id(p).unwrap()).collect();
        let split = split.min(pairs.len());

        let mut whole = ConfusionMatrix::new(ScoringMode::default());
        whole.accumulate(&gt, &pred).unwrap();

        let mut a = ConfusionMatrix::new(ScoringMode::default());
        a.accumulate(&gt[..split], &pred[..split]).unwrap();
        let mut b = ConfusionMatrix::new(ScoringMode::default());
        b.accumulate(&gt[split..], &pred[split..]).unwrap();

        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        prop_assert_eq!(&ab, &whole);
        prop_assert_eq!(&ba, &whole);
    }

    /// IoU values stay in [0, 1].
    #[test]
    fn iou_bounds(pairs in prop::collection::vec((1u16..6, 0u16..6), 1..200)) {
        let gt: Vec<TerrainClass> =
            pairs.iter().map(|&(g, _)| TerrainClass::from_id(g).unwrap()).collect();
        let pred: Vec<TerrainClass> =
            pairs.iter().map(|&(_, p)| TerrainClass::from_id(p).unwrap()).collect();
        let mut cm = ConfusionMatrix::new(ScoringMode::default());
        cm.accumulate(&gt, &pred).unwrap();
        let report = iou(&cm).unwrap();
        for (_, v) in &report.per_class {
            if let Some(v) = v {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
        prop_assert!((0.0..=1.0).contains(&report.mean));
    }

    /// Neighborhood mode filter output is invariant under consistent point
    /// reordering.
    #[test]
    fn filter_permutation_invariance(
        labels in prop::collection::vec(0u16..6, 8..60),
        seed in 0u64..1000,
    ) {
        use lidar_reflect::geometry::SpatialIndex;
        use lidar_reflect::profiles::neighborhood_mode_filter;
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        let n = labels.len();
        let labels: Vec<TerrainClass> =
            labels.iter().map(|&i| TerrainClass::from_id(i).unwrap()).collect();
        // Deterministic pseudo-random cloud derived from the seed.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        use rand::Rng;
        let points: Vec<Point> = (0..n)
            .map(|_| {
                Point::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    1.0,
                )
            })
            .collect();

        let scan = Scan::new(points.clone(), SensorKind::OusterRaw);
        let index = SpatialIndex::build(&scan).unwrap();
        let filtered = neighborhood_mode_filter(&labels, &index, 0.8);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let perm_points: Vec<Point> = perm.iter().map(|&i| points[i]).collect();
        let perm_labels: Vec<TerrainClass> = perm.iter().map(|&i| labels[i]).collect();
        let perm_scan = Scan::new(perm_points, SensorKind::OusterRaw);
        let perm_index = SpatialIndex::build(&perm_scan).unwrap();
        let perm_filtered = neighborhood_mode_filter(&perm_labels, &perm_index, 0.8);

        for (new_pos, &old_pos) in perm.iter().enumerate() {
            prop_assert_eq!(perm_filtered[new_pos], filtered[old_pos]);
        }
    }
}

/// Bulk round trip: 1e5 random finite points survive write-then-read
/// exactly.
#[test]
fn scan_round_trip_bulk() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    let points: Vec<Point> = (0..100_000)
        .map(|_| {
            Point::new(
                rng.gen_range(-1.0e4f32..1.0e4) as f64,
                rng.gen_range(-1.0e4f32..1.0e4) as f64,
                rng.gen_range(-1.0e4f32..1.0e4) as f64,
                rng.gen_range(0.0f32..65536.0) as f64,
            )
        })
        .collect();
    let scan = Scan::new(points, SensorKind::OusterRaw);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bulk.bin");
    write_scan(&scan, &path).unwrap();
    let back = read_scan(&path, SensorKind::OusterRaw).unwrap();
    assert_eq!(scan, back);
}

/// Range gate edge: a scan entirely under the near gate calibrates to an
/// empty output with every point counted.
#[test]
fn all_near_points_gated() {
    let points: Vec<Point> = (0..50)
        .map(|i| Point::new(3.0 + 0.01 * i as f64, 0.0, 0.0, 1.0))
        .collect();
    let n = points.len();
    let scan = Scan::new(points, SensorKind::OusterRaw);
    let normals = vec![
        lidar_reflect::geometry::NormalEstimate {
            normal: UnitVector3::from_components(-1.0, 0.0, 0.0).unwrap(),
            neighbor_count: 10,
            planarity: 1.0,
        };
        n
    ];
    let out = calibration::calibrate_scan(
        &scan,
        &normals,
        &CalibrationSettings::default(),
        calibration::AlphaSource::Analytic,
    )
    .unwrap();
    assert!(out.points.is_empty());
    assert_eq!(out.rejects.below_gate, n);
}
