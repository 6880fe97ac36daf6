//! LiDAR intensity calibration and terrain classification.
//!
//! Raw LiDAR intensity confounds surface reflectivity with range and
//! incidence angle. This crate recovers a reflectivity proxy by correcting
//! for both, classifies off-road terrain points by proximity to per-class
//! calibrated-intensity modes, converts factory-preprocessed (Velodyne
//! style) intensity back to raw form for cross-sensor use, and scores
//! segmentations with per-class IoU — all verifiable against a built-in
//! synthetic sensor oracle.
//!
//! Pipeline sketch:
//!
//! ```text
//! scan ──► normals (ball query + PCA) ──► incidence angle (analytic or
//!      regressor) ──► calibrate I·R²/cos α ──► class profiles / nearest
//!      mode ──► IoU evaluation
//! ```
//!
//! Scan-level loops are data-parallel via rayon when the default
//! `parallel` feature is enabled; disabling it yields identical
//! (sequential) results.

pub mod calibration;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod profiles;
pub mod regressor;
pub mod scan;
pub mod synth;
pub mod transfer;
pub mod util;

pub use calibration::{
    calibrate, calibrate_scan, extract_alpha_ground_truth, range_correct, AlphaBinTable,
    AlphaSource, CalibratedPoint, CalibrationSettings, RangeGate, RejectCounts, ScanCalibration,
};
pub use config::{AlphaSourceKind, PipelineConfig, ENV_PREFIX};
pub use error::{Error, Result};
pub use evaluation::{format_key_values, format_table, iou, ConfusionMatrix, IouReport, ScoringMode};
pub use geometry::{
    beam_direction, estimate_normal, estimate_normals, incidence_angle, NormalEstimate,
    SpatialIndex, UnitVector3,
};
pub use profiles::{
    build_profiles, classify_point, classify_scan, neighborhood_mode_filter, ClassProfile,
    ProfileSet, ScanPrediction,
};
pub use regressor::{
    backward, evaluate_mae, mae_loss, train, FeatureVector, MlpModel, TrainConfig, TrainReport,
};
pub use scan::{
    read_label_ids, read_labels, read_scan, write_labels, write_scan, OntologyMap, Point, Scan,
    SensorKind, TerrainClass,
};
pub use synth::{
    generate_scan, parse_scene_spec, simulate_velodyne_channel, GroundTruthPoint, NearRangeModel,
    RayGrid, SceneSpec, SceneSurface, SensorMode, SensorSimConfig, SurfaceGeometry,
    VelodyneCompensation,
};
pub use transfer::{
    build_max_curve, check_class_independence, compute_q, convert_velodyne, fit_transfer,
    fit_transfer_over, pool_q, MaxCurve, QSample, QSeries, TransferCurve,
};
