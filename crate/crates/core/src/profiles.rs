//! Per-class calibrated-intensity distributions, mode extraction, and
//! nearest-mode classification, plus the optional spatial neighborhood
//! mode filter.

use std::collections::BTreeMap;

use crate::calibration::{AlphaSource, RejectCounts};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{self, SpatialIndex};
use crate::scan::{Scan, TerrainClass};

/// Histogram bins per class: bin width is 1% of the class value range,
/// never fewer than this many bins.
const MIN_HISTOGRAM_BINS: usize = 64;

/// Calibrated-intensity distribution of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub class: TerrainClass,
    /// Calibrated intensity at the histogram peak.
    pub mode: f64,
    /// Number of points backing the profile.
    pub support: u64,
    /// Interquartile range of the calibrated values.
    pub spread: f64,
    /// Histogram low edge.
    pub bin_lo: f64,
    /// Histogram bin width (0 for a degenerate single-value class).
    pub bin_width: f64,
    pub counts: Vec<u64>,
}

impl ClassProfile {
    fn build(class: TerrainClass, values: &mut [f64]) -> ClassProfile {
        values.sort_unstable_by(|a, b| a.total_cmp(b));
        let support = values.len() as u64;
        let lo = values[0];
        let hi = values[values.len() - 1];
        let spread = rank(values, 0.75) - rank(values, 0.25);

        if hi == lo {
            return ClassProfile {
                class,
                mode: lo,
                support,
                spread,
                bin_lo: lo,
                bin_width: 0.0,
                counts: vec![support],
            };
        }

        let n_bins = 100usize.max(MIN_HISTOGRAM_BINS);
        let bin_width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0u64; n_bins];
        for &v in values.iter() {
            let idx = (((v - lo) / bin_width) as usize).min(n_bins - 1);
            counts[idx] += 1;
        }
        // Highest-count bin, ties to the lower bin.
        let peak = counts
            .iter()
            .enumerate()
            .max_by(|(ia, ca), (ib, cb)| ca.cmp(cb).then(ib.cmp(ia)))
            .map(|(i, _)| i)
            .unwrap();
        ClassProfile {
            class,
            mode: lo + (peak as f64 + 0.5) * bin_width,
            support,
            spread,
            bin_lo: lo,
            bin_width,
            counts,
        }
    }
}

/// Nearest-rank quantile of sorted values.
fn rank(sorted: &[f64], q: f64) -> f64 {
    let r = ((q * sorted.len() as f64).ceil() as usize).max(1);
    sorted[(r - 1).min(sorted.len() - 1)]
}

/// One profile per trained class plus the settings they were built under.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    /// Profiles ordered by ascending class id.
    pub profiles: Vec<ClassProfile>,
    /// Classes that fell below the support threshold: (class, count seen).
    pub excluded: Vec<(TerrainClass, u64)>,
    /// Settings recorded for reproducibility.
    pub config: PipelineConfig,
}

impl ProfileSet {
    pub fn profile(&self, class: TerrainClass) -> Option<&ClassProfile> {
        self.profiles.iter().find(|p| p.class == class)
    }
}

/// Build per-class histograms and modes from labeled calibrated values.
/// Void-labeled points are ignored; classes with fewer than `min_support`
/// points are excluded and recorded, never guessed.
pub fn build_profiles(
    labeled_values: &[(TerrainClass, f64)],
    min_support: u64,
    config: &PipelineConfig,
) -> Result<ProfileSet> {
    let mut per_class: BTreeMap<TerrainClass, Vec<f64>> = BTreeMap::new();
    for &(class, value) in labeled_values {
        if class == TerrainClass::Void {
            continue;
        }
        per_class.entry(class).or_default().push(value);
    }
    if per_class.is_empty() {
        return Err(Error::InsufficientData(
            "no non-void labeled points to profile".into(),
        ));
    }

    let mut profiles = Vec::new();
    let mut excluded = Vec::new();
    for (class, mut values) in per_class {
        if (values.len() as u64) < min_support {
            log::warn!(
                "class {class}: {} point(s) below min_support {min_support}; excluded",
                values.len()
            );
            excluded.push((class, values.len() as u64));
            continue;
        }
        profiles.push(ClassProfile::build(class, &mut values));
    }
    if profiles.is_empty() {
        return Err(Error::InsufficientData(format!(
            "every class fell below min_support {min_support}"
        )));
    }
    Ok(ProfileSet {
        profiles,
        excluded,
        config: config.clone(),
    })
}

/// Class whose mode is nearest to `value`; ties break to the lower class
/// id (profiles are stored in ascending-id order, so strict `<` keeps the
/// first winner).
pub fn classify_point(value: f64, profiles: &ProfileSet) -> TerrainClass {
    debug_assert!(!profiles.profiles.is_empty());
    let mut best = profiles.profiles[0].class;
    let mut best_distance = (value - profiles.profiles[0].mode).abs();
    for p in &profiles.profiles[1..] {
        let d = (value - p.mode).abs();
        if d < best_distance {
            best = p.class;
            best_distance = d;
        }
    }
    best
}

/// Full-scan classification: calibrate, then nearest-mode per point.
#[derive(Debug, Clone)]
pub struct ScanPrediction {
    /// One label per scan point; gated-out points are void.
    pub labels: Vec<TerrainClass>,
    pub rejects: RejectCounts,
}

/// Classify every point of a raw scan. Points rejected by any gate are
/// predicted void (honest abstention). When `config.neighborhood_filter`
/// is set, each label is replaced by the most frequent label within
/// `config.filter_radius`.
pub fn classify_scan(
    scan: &Scan,
    profiles: &ProfileSet,
    config: &PipelineConfig,
    alpha_source: AlphaSource<'_>,
) -> Result<ScanPrediction> {
    if profiles.profiles.is_empty() {
        return Err(Error::Contract("profile set is empty".into()));
    }
    let settings = config.calibration_settings()?;
    let index = SpatialIndex::build(scan)?;
    let normals = geometry::estimate_normals(&index, config.ball_radius, config.min_neighbors);
    let calibration = crate::calibration::calibrate_scan(scan, &normals, &settings, alpha_source)?;

    let mut labels = vec![TerrainClass::Void; scan.len()];
    for cp in &calibration.points {
        labels[cp.index] = classify_point(cp.calibrated_intensity, profiles);
    }
    if config.neighborhood_filter {
        labels = neighborhood_mode_filter(&labels, &index, config.filter_radius);
    }
    Ok(ScanPrediction {
        labels,
        rejects: calibration.rejects,
    })
}

/// Replace each point's label by the most frequent label within `radius`
/// of it (self included). Ties keep the original label.
pub fn neighborhood_mode_filter(
    predictions: &[TerrainClass],
    index: &SpatialIndex,
    radius: f64,
) -> Vec<TerrainClass> {
    assert_eq!(
        predictions.len(),
        index.len(),
        "predictions must parallel the indexed scan"
    );
    exec::map_indices(predictions.len(), |i| {
        let mut neighbors = Vec::new();
        index.query_radius_into(&index.position(i), radius, &mut neighbors);
        let mut counts = [0u32; TerrainClass::ALL.len()];
        for &n in &neighbors {
            counts[predictions[n as usize].id() as usize] += 1;
        }
        let top = *counts.iter().max().unwrap();
        let winners: Vec<usize> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == top)
            .map(|(id, _)| id)
            .collect();
        if winners.len() == 1 {
            TerrainClass::from_id(winners[0] as u16).unwrap()
        } else {
            predictions[i]
        }
    })
}

/// Human-readable profile document with the full config header.
pub fn profiles_to_document(set: &ProfileSet) -> String {
    let mut out = String::from("profile-set v1\n");
    out.push_str(&set.config.header_block());
    for p in &set.profiles {
        out.push_str(&format!("[class {}]\n", p.class.name()));
        out.push_str(&format!("id = {}\n", p.class.id()));
        out.push_str(&format!("mode = {}\n", p.mode));
        out.push_str(&format!("support = {}\n", p.support));
        out.push_str(&format!("iqr = {}\n", p.spread));
        out.push_str(&format!("bin_lo = {}\n", p.bin_lo));
        out.push_str(&format!("bin_width = {}\n", p.bin_width));
        out.push_str("counts =");
        for c in &p.counts {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
    }
    if !set.excluded.is_empty() {
        out.push_str("[excluded]\n");
        for (class, count) in &set.excluded {
            out.push_str(&format!("{} = {}\n", class.name(), count));
        }
    }
    out
}

/// Parse a document produced by [`profiles_to_document`].
pub fn profiles_from_document(text: &str) -> Result<ProfileSet> {
    let mut lines = text.lines();
    if lines.next() != Some("profile-set v1") {
        return Err(Error::Contract("missing `profile-set v1` magic".into()));
    }
    let config = PipelineConfig::from_header_lines(text.lines())?;

    let mut profiles: Vec<ClassProfile> = Vec::new();
    let mut excluded = Vec::new();
    let mut current: Option<ClassProfile> = None;
    let mut in_excluded = false;
    let bad = |detail: String| Error::Contract(format!("profile document: {detail}"));

    for raw in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix("[class ").and_then(|s| s.strip_suffix(']')) {
            if let Some(p) = current.take() {
                profiles.push(p);
            }
            in_excluded = false;
            let class = TerrainClass::from_name(name)
                .ok_or_else(|| bad(format!("unknown class `{name}`")))?;
            current = Some(ClassProfile {
                class,
                mode: 0.0,
                support: 0,
                spread: 0.0,
                bin_lo: 0.0,
                bin_width: 0.0,
                counts: Vec::new(),
            });
            continue;
        }
        if line == "[excluded]" {
            if let Some(p) = current.take() {
                profiles.push(p);
            }
            in_excluded = true;
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if in_excluded {
            let class = TerrainClass::from_name(key)
                .ok_or_else(|| bad(format!("unknown excluded class `{key}`")))?;
            let count = value
                .parse()
                .map_err(|_| bad(format!("bad excluded count `{value}`")))?;
            excluded.push((class, count));
            continue;
        }
        let p = current
            .as_mut()
            .ok_or_else(|| bad(format!("`{key}` outside a class section")))?;
        match key {
            "id" => {
                let id: u16 = value.parse().map_err(|_| bad(format!("bad id `{value}`")))?;
                if TerrainClass::from_id(id) != Some(p.class) {
                    return Err(bad(format!("id {id} does not match class {}", p.class)));
                }
            }
            "mode" => p.mode = value.parse().map_err(|_| bad(format!("bad mode `{value}`")))?,
            "support" => {
                p.support = value
                    .parse()
                    .map_err(|_| bad(format!("bad support `{value}`")))?
            }
            "iqr" => p.spread = value.parse().map_err(|_| bad(format!("bad iqr `{value}`")))?,
            "bin_lo" => {
                p.bin_lo = value
                    .parse()
                    .map_err(|_| bad(format!("bad bin_lo `{value}`")))?
            }
            "bin_width" => {
                p.bin_width = value
                    .parse()
                    .map_err(|_| bad(format!("bad bin_width `{value}`")))?
            }
            "counts" => {
                p.counts = value
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad(format!("bad count `{t}`"))))
                    .collect::<Result<_>>()?
            }
            other => return Err(bad(format!("unknown key `{other}`"))),
        }
    }
    if let Some(p) = current.take() {
        profiles.push(p);
    }
    if profiles.is_empty() {
        return Err(bad("no class sections".into()));
    }
    profiles.sort_by_key(|p| p.class);
    Ok(ProfileSet {
        profiles,
        excluded,
        config,
    })
}
