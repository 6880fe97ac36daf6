//! Command-line definitions and config resolution.
//!
//! Precedence for every pipeline knob: flag > environment
//! (`LIDAR_REFLECT_*`) > config file (`--config`) > built-in default.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use lidar_reflect::config::PipelineConfig;

use crate::CliError;

#[derive(Parser)]
#[command(
    name = "lidar-reflect",
    version,
    about = "Calibrate LiDAR intensity for range and incidence angle, classify terrain by \
             calibrated-intensity modes, convert preprocessed intensity to raw, and score \
             segmentations"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic scan (+ labels and ground truth) from a scene spec.
    Synth(SynthArgs),
    /// Extract ground-truth incidence angles from labeled scans and train the regressor.
    FitAlpha(FitAlphaArgs),
    /// Build per-class calibrated-intensity profiles from labeled scans.
    Profile(ProfileArgs),
    /// Classify scans by proximity to profile modes; writes one label file per scan.
    Segment(SegmentArgs),
    /// Fit the cross-sensor transfer curve and/or convert preprocessed scans to raw.
    ConvertVelodyne(ConvertArgs),
    /// Score predicted label files against ground truth (per-class IoU and mean).
    Evaluate(EvaluateArgs),
}

/// Flags shared by every subcommand; each mirrors a config key.
#[derive(Args)]
pub struct ConfigArgs {
    /// Config file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for scan-level parallelism (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,

    #[arg(long)]
    pub r_min: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub ball_radius: Option<f64>,
    #[arg(long)]
    pub min_neighbors: Option<usize>,
    #[arg(long)]
    pub alpha_max_deg: Option<f64>,
    #[arg(long)]
    pub alpha_bin_width: Option<f64>,
    #[arg(long)]
    pub min_bin_count: Option<usize>,
    #[arg(long)]
    pub robust_percentile: Option<f64>,
    #[arg(long)]
    pub min_support: Option<u64>,
    #[arg(long)]
    pub transfer_degree: Option<usize>,
    #[arg(long)]
    pub transfer_bin_width: Option<f64>,
    #[arg(long)]
    pub neighborhood_filter: Option<bool>,
    #[arg(long)]
    pub filter_radius: Option<f64>,
    /// `analytic` or `regressor`.
    #[arg(long)]
    pub alpha_source: Option<String>,
    /// Regressor model file (with `--alpha-source regressor`).
    #[arg(long)]
    pub alpha_model: Option<PathBuf>,
    /// Ontology map file (`<raw_id> <class_name>` lines); canonical ids when absent.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig, CliError> {
        let mut config = PipelineConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        config.apply_env()?;

        macro_rules! apply {
            ($($field:ident),* $(,)?) => {
                $(if let Some(v) = &self.$field {
                    config.$field = v.clone();
                })*
            };
        }
        apply!(
            r_min,
            r_max,
            ball_radius,
            min_neighbors,
            alpha_max_deg,
            alpha_bin_width,
            min_bin_count,
            robust_percentile,
            min_support,
            transfer_degree,
            transfer_bin_width,
            neighborhood_filter,
            filter_radius,
            seed,
            learning_rate,
            batch_size,
            epochs,
            validation_fraction,
        );
        if let Some(source) = &self.alpha_source {
            config.alpha_source = source.parse()?;
        }
        if let Some(path) = &self.alpha_model {
            config.alpha_model = Some(path.display().to_string());
        }
        if let Some(path) = &self.ontology {
            config.ontology = Some(path.display().to_string());
        }
        config.validate()?;
        lidar_reflect::exec::set_worker_threads(self.jobs);
        Ok(config)
    }
}

#[derive(Args)]
pub struct SynthArgs {
    /// Scene spec file.
    #[arg(long)]
    pub scene: PathBuf,
    /// Output directory for the scan, label, and ground-truth files.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Basename of the emitted files.
    #[arg(long, default_value = "synth")]
    pub name: String,
    /// Override the scene spec's seed.
    #[arg(long)]
    pub override_seed: Option<u64>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct FitAlphaArgs {
    /// Scan files or directories (raw Ouster-style intensity).
    #[arg(long, required = true, num_args = 1..)]
    pub scans: Vec<PathBuf>,
    /// Label directory (or files paired by order with the scans).
    #[arg(long, required = true, num_args = 1..)]
    pub labels: Vec<PathBuf>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional training report.
    #[arg(long)]
    pub report: Option<PathBuf>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct ProfileArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub scans: Vec<PathBuf>,
    #[arg(long, required = true, num_args = 1..)]
    pub labels: Vec<PathBuf>,
    /// Output profile document.
    #[arg(long)]
    pub out: PathBuf,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct SegmentArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub scans: Vec<PathBuf>,
    /// Profile document written by `profile`.
    #[arg(long)]
    pub profiles: PathBuf,
    /// Output directory for predicted label files (one per scan).
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Intensity convention of the input scans.
    #[arg(long, default_value = "ouster")]
    pub sensor: String,
    /// Transfer curve for preprocessed (velodyne) inputs.
    #[arg(long)]
    pub curve: Option<PathBuf>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct ConvertArgs {
    /// Preprocessed (Velodyne-style) scans to convert.
    #[arg(long, required = true, num_args = 1..)]
    pub velodyne_scans: Vec<PathBuf>,
    /// Labels for the velodyne scans (needed when fitting a curve).
    #[arg(long, num_args = 1..)]
    pub velodyne_labels: Vec<PathBuf>,
    /// Paired raw scans of the same scenes (needed when fitting a curve).
    #[arg(long, num_args = 1..)]
    pub ouster_scans: Vec<PathBuf>,
    /// Labels for the ouster scans.
    #[arg(long, num_args = 1..)]
    pub ouster_labels: Vec<PathBuf>,
    /// Apply a previously fitted curve instead of fitting one.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Output directory for converted scans.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Where to write the fitted curve.
    #[arg(long)]
    pub curve_out: Option<PathBuf>,

    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Ground-truth label files or directory.
    #[arg(long, required = true, num_args = 1..)]
    pub gt_labels: Vec<PathBuf>,
    /// Predicted label files or directory.
    #[arg(long, required = true, num_args = 1..)]
    pub pred_labels: Vec<PathBuf>,
    /// Report output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `penalize-abstention` (default) or `in-gate-only`.
    #[arg(long, default_value = "penalize-abstention")]
    pub scoring: String,
    /// Ontology for predicted labels (canonical ids when absent).
    #[arg(long)]
    pub pred_ontology: Option<PathBuf>,

    #[command(flatten)]
    pub config: ConfigArgs,
}
