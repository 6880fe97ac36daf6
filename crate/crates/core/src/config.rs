//! Declarative pipeline configuration: ledger defaults, plain-text config
//! files, environment overrides, and the header block embedded in every
//! output artifact. Precedence is flag > env > file > default; the CLI
//! applies flags on top of what this module resolves.

use std::path::Path;

use crate::calibration::{
    CalibrationSettings, RangeGate, DEFAULT_ALPHA_BIN_WIDTH, DEFAULT_ALPHA_MAX_DEG,
    DEFAULT_MIN_BIN_COUNT, DEFAULT_ROBUST_PERCENTILE,
};
use crate::error::{Error, Result};
use crate::geometry::{DEFAULT_BALL_RADIUS, DEFAULT_MIN_NEIGHBORS};
use crate::regressor::TrainConfig;

/// Environment variable prefix for config overrides, e.g.
/// `LIDAR_REFLECT_R_MIN=8` overrides `r_min`.
pub const ENV_PREFIX: &str = "LIDAR_REFLECT_";

/// How per-point incidence angles are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaSourceKind {
    Analytic,
    Regressor,
}

impl AlphaSourceKind {
    pub fn name(self) -> &'static str {
        match self {
            AlphaSourceKind::Analytic => "analytic",
            AlphaSourceKind::Regressor => "regressor",
        }
    }
}

impl std::str::FromStr for AlphaSourceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(AlphaSourceKind::Analytic),
            "regressor" => Ok(AlphaSourceKind::Regressor),
            other => Err(Error::Config(format!("unknown alpha source `{other}`"))),
        }
    }
}

/// Every knob of the pipeline with its default. Serialized in full into
/// each output artifact header so runs are reproducible from artifacts
/// alone.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Range gate lower edge, meters.
    pub r_min: f64,
    /// Range gate upper edge, meters.
    pub r_max: f64,
    /// Ball-query radius for normal estimation, meters.
    pub ball_radius: f64,
    /// Minimum neighbors for a trusted normal.
    pub min_neighbors: usize,
    /// Grazing-angle cutoff, degrees.
    pub alpha_max_deg: f64,
    /// Range-bin width for alpha extraction, meters.
    pub alpha_bin_width: f64,
    /// Minimum points per usable range bin.
    pub min_bin_count: usize,
    /// Robust-maximum percentile (100 = exact max).
    pub robust_percentile: f64,
    /// Minimum points per class profile.
    pub min_support: u64,
    /// Polynomial degree of the sensor transfer fit.
    pub transfer_degree: usize,
    /// Range-bin width for transfer max-curves, meters.
    pub transfer_bin_width: f64,
    /// Apply the spatial neighborhood mode filter after classification.
    pub neighborhood_filter: bool,
    /// Radius of the neighborhood mode filter, meters.
    pub filter_radius: f64,
    /// Incidence-angle source.
    pub alpha_source: AlphaSourceKind,
    /// Regressor model file (required when alpha_source = regressor).
    pub alpha_model: Option<String>,
    /// Ontology map file (canonical ids when absent).
    pub ontology: Option<String>,
    /// Seed for every stochastic step.
    pub seed: u64,
    /// Regressor training: learning rate.
    pub learning_rate: f64,
    /// Regressor training: batch size.
    pub batch_size: usize,
    /// Regressor training: epochs.
    pub epochs: usize,
    /// Regressor training: validation fraction.
    pub validation_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            r_min: 6.0,
            r_max: 60.0,
            ball_radius: DEFAULT_BALL_RADIUS,
            min_neighbors: DEFAULT_MIN_NEIGHBORS,
            alpha_max_deg: DEFAULT_ALPHA_MAX_DEG,
            alpha_bin_width: DEFAULT_ALPHA_BIN_WIDTH,
            min_bin_count: DEFAULT_MIN_BIN_COUNT,
            robust_percentile: DEFAULT_ROBUST_PERCENTILE,
            min_support: 1000,
            transfer_degree: 3,
            transfer_bin_width: 1.0,
            neighborhood_filter: false,
            filter_radius: DEFAULT_BALL_RADIUS,
            alpha_source: AlphaSourceKind::Analytic,
            alpha_model: None,
            ontology: None,
            seed: 42,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 200,
            validation_fraction: 0.1,
        }
    }
}

impl PipelineConfig {
    pub fn gate(&self) -> Result<RangeGate> {
        RangeGate::new(self.r_min, self.r_max)
    }

    pub fn calibration_settings(&self) -> Result<CalibrationSettings> {
        Ok(CalibrationSettings {
            gate: self.gate()?,
            alpha_max: self.alpha_max_deg.to_radians(),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            validation_fraction: self.validation_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gate()?;
        let positive = [
            ("ball_radius", self.ball_radius),
            ("alpha_bin_width", self.alpha_bin_width),
            ("transfer_bin_width", self.transfer_bin_width),
            ("filter_radius", self.filter_radius),
            ("learning_rate", self.learning_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0 < self.robust_percentile && self.robust_percentile <= 100.0) {
            return Err(Error::Config(format!(
                "robust_percentile must be in (0, 100], got {}",
                self.robust_percentile
            )));
        }
        if !(0.0 < self.alpha_max_deg && self.alpha_max_deg < 90.0) {
            return Err(Error::Config(format!(
                "alpha_max_deg must be in (0, 90), got {}",
                self.alpha_max_deg
            )));
        }
        if self.alpha_source == AlphaSourceKind::Regressor && self.alpha_model.is_none() {
            return Err(Error::Config(
                "alpha_source = regressor requires alpha_model".into(),
            ));
        }
        self.train_config().validate()?;
        Ok(())
    }

    /// All keys with their current values, in stable order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |o: &Option<String>| o.clone().unwrap_or_default();
        vec![
            ("r_min", self.r_min.to_string()),
            ("r_max", self.r_max.to_string()),
            ("ball_radius", self.ball_radius.to_string()),
            ("min_neighbors", self.min_neighbors.to_string()),
            ("alpha_max_deg", self.alpha_max_deg.to_string()),
            ("alpha_bin_width", self.alpha_bin_width.to_string()),
            ("min_bin_count", self.min_bin_count.to_string()),
            ("robust_percentile", self.robust_percentile.to_string()),
            ("min_support", self.min_support.to_string()),
            ("transfer_degree", self.transfer_degree.to_string()),
            ("transfer_bin_width", self.transfer_bin_width.to_string()),
            ("neighborhood_filter", self.neighborhood_filter.to_string()),
            ("filter_radius", self.filter_radius.to_string()),
            ("alpha_source", self.alpha_source.name().to_string()),
            ("alpha_model", opt(&self.alpha_model)),
            ("ontology", opt(&self.ontology)),
            ("seed", self.seed.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("validation_fraction", self.validation_fraction.to_string()),
        ]
    }

    /// Set one field from its textual key/value form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value `{value}` for {what}"));
        match key {
            "r_min" => self.r_min = value.parse().map_err(|_| bad(key))?,
            "r_max" => self.r_max = value.parse().map_err(|_| bad(key))?,
            "ball_radius" => self.ball_radius = value.parse().map_err(|_| bad(key))?,
            "min_neighbors" => self.min_neighbors = value.parse().map_err(|_| bad(key))?,
            "alpha_max_deg" => self.alpha_max_deg = value.parse().map_err(|_| bad(key))?,
            "alpha_bin_width" => self.alpha_bin_width = value.parse().map_err(|_| bad(key))?,
            "min_bin_count" => self.min_bin_count = value.parse().map_err(|_| bad(key))?,
            "robust_percentile" => self.robust_percentile = value.parse().map_err(|_| bad(key))?,
            "min_support" => self.min_support = value.parse().map_err(|_| bad(key))?,
            "transfer_degree" => self.transfer_degree = value.parse().map_err(|_| bad(key))?,
            "transfer_bin_width" => {
                self.transfer_bin_width = value.parse().map_err(|_| bad(key))?
            }
            "neighborhood_filter" => {
                self.neighborhood_filter = value.parse().map_err(|_| bad(key))?
            }
            "filter_radius" => self.filter_radius = value.parse().map_err(|_| bad(key))?,
            "alpha_source" => self.alpha_source = value.parse()?,
            "alpha_model" => {
                self.alpha_model = (!value.is_empty()).then(|| value.to_string());
            }
            "ontology" => {
                self.ontology = (!value.is_empty()).then(|| value.to_string());
            }
            "seed" => self.seed = value.parse().map_err(|_| bad(key))?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad(key))?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad(key))?,
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key))?,
            "validation_fraction" => {
                self.validation_fraction = value.parse().map_err(|_| bad(key))?
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a config file (`key = value` lines, `#` comments) over `self`.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = crate::util::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |detail: String| Error::ConfigParse {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(format!("expected `key = value`, got `{line}`")))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    /// Apply `LIDAR_REFLECT_<KEY>` environment overrides over `self`.
    pub fn apply_env(&mut self) -> Result<()> {
        for (key, _) in self.clone().pairs() {
            let var = format!("{ENV_PREFIX}{}", key.to_uppercase());
            if let Ok(value) = std::env::var(&var) {
                self.set(key, &value)?;
            }
        }
        Ok(())
    }

    /// Header block (comment lines) embedded in every text artifact.
    pub fn header_block(&self) -> String {
        let mut out = String::from("# config\n");
        for (k, v) in self.pairs() {
            out.push_str(&format!("# {k} = {v}\n"));
        }
        out
    }

    /// Parse the `# key = value` header lines back into a config. Used to
    /// recover the settings an artifact was built with.
    pub fn from_header_lines<'a>(lines: impl Iterator<Item = &'a str>) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::default();
        for line in lines {
            let Some(body) = line.strip_prefix('#').map(str::trim) else {
                continue;
            };
            if let Some((k, v)) = body.split_once('=') {
                let key = k.trim();
                if config.pairs().iter().any(|(name, _)| *name == key) {
                    config.set(key, v.trim())?;
                }
            }
        }
        Ok(config)
    }
}
