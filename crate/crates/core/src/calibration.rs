//! Radiometric correction of raw intensity for range and incidence angle,
//! with range gating, plus ground-truth incidence-angle extraction from
//! per-range-bin maximum intensities.
//!
//! The core identity: within the range gate the raw return scales as
//! `rho * cos(alpha) / R^2`, so `intensity * R^2 / cos(alpha)` is a
//! reflectivity proxy. Below the near-range threshold the optics are
//! non-ideal and no closed-form inverse exists, so those points are gated
//! out rather than corrected.

use crate::error::{Error, Result};
use crate::exec;
use crate::geometry::{self, NormalEstimate, UnitVector3};
use crate::regressor::{FeatureVector, MlpModel};
use crate::scan::{Point, Scan, SensorKind, SELF_RETURN_RANGE};
use crate::util::percentile;

/// Default maximum usable incidence angle. The cosine division explodes
/// toward grazing incidence; beyond this points are rejected, not amplified.
pub const DEFAULT_ALPHA_MAX_DEG: f64 = 85.0;
/// Default per-range-bin width for alpha extraction, meters.
pub const DEFAULT_ALPHA_BIN_WIDTH: f64 = 1.0;
/// Default minimum points a bin needs before its maximum is trusted.
pub const DEFAULT_MIN_BIN_COUNT: usize = 20;
/// Default robust-maximum percentile; 100 selects the exact maximum.
pub const DEFAULT_ROBUST_PERCENTILE: f64 = 99.0;

/// Inclusive range window within which the ideal `1/R^2` model holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeGate {
    r_min: f64,
    r_max: f64,
}

impl Default for RangeGate {
    fn default() -> Self {
        RangeGate {
            r_min: 6.0,
            r_max: 60.0,
        }
    }
}

impl RangeGate {
    pub fn new(r_min: f64, r_max: f64) -> Result<RangeGate> {
        if !(r_min > 0.0 && r_min < r_max && r_max.is_finite()) {
            return Err(Error::Config(format!(
                "range gate requires 0 < r_min < r_max, got [{r_min}, {r_max}]"
            )));
        }
        Ok(RangeGate { r_min, r_max })
    }

    pub fn r_min(&self) -> f64 {
        self.r_min
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn contains(&self, range: f64) -> bool {
        (self.r_min..=self.r_max).contains(&range)
    }

    fn out_of_gate(&self, range: f64) -> Error {
        Error::OutOfGate {
            range,
            r_min: self.r_min,
            r_max: self.r_max,
        }
    }
}

/// Reflectivity proxy: `intensity * range^2 / cos(alpha)`.
///
/// `range` must lie inside the gate and `alpha` at or below `alpha_max`
/// (radians); violations are errors so callers can count gated points.
pub fn calibrate(
    intensity: f64,
    range: f64,
    alpha: f64,
    gate: &RangeGate,
    alpha_max: f64,
) -> Result<f64> {
    if !gate.contains(range) {
        return Err(gate.out_of_gate(range));
    }
    if alpha > alpha_max {
        return Err(Error::GrazingAngle {
            alpha_deg: alpha.to_degrees(),
            max_deg: alpha_max.to_degrees(),
        });
    }
    debug_assert!(intensity >= 0.0);
    Ok(intensity * range * range / alpha.cos())
}

/// Range-only correction `intensity * range^2`, valid beyond the near-range
/// threshold where the optical efficiency is 1.
pub fn range_correct(intensity: f64, range: f64, r_min: f64) -> Result<f64> {
    if range <= r_min {
        return Err(Error::OutOfGate {
            range,
            r_min,
            r_max: f64::INFINITY,
        });
    }
    Ok(intensity * range * range)
}

/// Per-range-bin robust maximum intensities over the gate.
#[derive(Debug, Clone)]
pub struct AlphaBinTable {
    bin_width: f64,
    r_min: f64,
    bins: Vec<AlphaBin>,
    min_bin_count: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlphaBin {
    pub robust_max: f64,
    pub count: usize,
}

impl AlphaBinTable {
    /// Bin `(range, intensity)` samples over the gate and record the robust
    /// (percentile) maximum per bin. Samples outside the gate are an error.
    pub fn build(
        samples: &[(f64, f64)],
        gate: &RangeGate,
        bin_width: f64,
        robust_percentile: f64,
        min_bin_count: usize,
    ) -> Result<AlphaBinTable> {
        if bin_width <= 0.0 {
            return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
        }
        let n_bins = ((gate.r_max() - gate.r_min()) / bin_width).ceil() as usize;
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
        for &(range, intensity) in samples {
            if !gate.contains(range) {
                return Err(gate.out_of_gate(range));
            }
            let idx = bin_index(range, gate, bin_width, n_bins);
            values[idx].push(intensity);
        }
        let bins = values
            .into_iter()
            .map(|v| {
                if v.is_empty() {
                    AlphaBin::default()
                } else {
                    AlphaBin {
                        robust_max: percentile(&v, robust_percentile),
                        count: v.len(),
                    }
                }
            })
            .collect();
        Ok(AlphaBinTable {
            bin_width,
            r_min: gate.r_min(),
            bins,
            min_bin_count,
        })
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin(&self, idx: usize) -> &AlphaBin {
        &self.bins[idx]
    }

    pub fn bin_lo(&self, idx: usize) -> f64 {
        self.r_min + idx as f64 * self.bin_width
    }

    /// A bin is usable when it holds enough points and a positive maximum.
    pub fn usable(&self, idx: usize) -> bool {
        let b = &self.bins[idx];
        b.count >= self.min_bin_count && b.robust_max > 0.0
    }

    fn index_of(&self, range: f64) -> usize {
        (((range - self.r_min) / self.bin_width) as usize).min(self.bins.len() - 1)
    }

    /// Plain-text dump: `<bin_lo> <bin_hi> <robust_max> <count>` per line.
    pub fn to_table_string(&self) -> String {
        let mut out = String::new();
        for (i, b) in self.bins.iter().enumerate() {
            out.push_str(&format!(
                "{} {} {} {}\n",
                self.bin_lo(i),
                self.bin_lo(i) + self.bin_width,
                b.robust_max,
                b.count
            ));
        }
        out
    }
}

fn bin_index(range: f64, gate: &RangeGate, bin_width: f64, n_bins: usize) -> usize {
    (((range - gate.r_min()) / bin_width) as usize).min(n_bins - 1)
}

/// Ground-truth incidence angles for one class: per point,
/// `arccos(intensity / bin_robust_max)` clipped to [0, π/2].
///
/// Points in bins that fail the minimum-count threshold come back `None`
/// (flagged unusable, not guessed). Intensities above the robust maximum
/// clip to α = 0.
pub fn extract_alpha_ground_truth(
    samples: &[(f64, f64)],
    gate: &RangeGate,
    bin_width: f64,
    robust_percentile: f64,
    min_bin_count: usize,
) -> Result<(Vec<Option<f64>>, AlphaBinTable)> {
    let table = AlphaBinTable::build(samples, gate, bin_width, robust_percentile, min_bin_count)?;
    let alphas = samples
        .iter()
        .map(|&(range, intensity)| {
            let idx = table.index_of(range);
            if !table.usable(idx) {
                return None;
            }
            let ratio = (intensity / table.bin(idx).robust_max).clamp(0.0, 1.0);
            Some(ratio.acos())
        })
        .collect();
    Ok((alphas, table))
}

/// A point that survived every gate, carrying its incidence angle and
/// calibrated intensity. `index` refers back into the source scan.
#[derive(Debug, Clone, Copy)]
pub struct CalibratedPoint {
    pub index: usize,
    pub point: Point,
    pub alpha: f64,
    pub calibrated_intensity: f64,
}

/// Why points were omitted from a scan calibration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectCounts {
    /// Range under the self-return cutoff (sensor housing).
    pub self_return: usize,
    /// Range below the gate (near-range optics).
    pub below_gate: usize,
    /// Range above the gate.
    pub above_gate: usize,
    /// Incidence angle past the grazing cutoff.
    pub grazing: usize,
    /// No trustworthy surface normal.
    pub degenerate_normal: usize,
}

impl RejectCounts {
    pub fn total(&self) -> usize {
        self.self_return + self.below_gate + self.above_gate + self.grazing + self.degenerate_normal
    }

    fn absorb(&mut self, reason: RejectReason) {
        match reason {
            RejectReason::SelfReturn => self.self_return += 1,
            RejectReason::BelowGate => self.below_gate += 1,
            RejectReason::AboveGate => self.above_gate += 1,
            RejectReason::Grazing => self.grazing += 1,
            RejectReason::DegenerateNormal => self.degenerate_normal += 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum RejectReason {
    SelfReturn,
    BelowGate,
    AboveGate,
    Grazing,
    DegenerateNormal,
}

/// Result of calibrating a whole scan: surviving points in point-index
/// order plus reject tallies.
#[derive(Debug, Clone)]
pub struct ScanCalibration {
    pub points: Vec<CalibratedPoint>,
    pub rejects: RejectCounts,
}

/// Where per-point incidence angles come from.
#[derive(Clone, Copy)]
pub enum AlphaSource<'a> {
    /// `arccos(|n · l|)` from the estimated normal.
    Analytic,
    /// Trained regressor over the normal ⊕ beam feature vector.
    Regressor(&'a MlpModel),
}

/// Settings shared by scan-level calibration and classification.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSettings {
    pub gate: RangeGate,
    pub alpha_max: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            gate: RangeGate::default(),
            alpha_max: DEFAULT_ALPHA_MAX_DEG.to_radians(),
        }
    }
}

/// Calibrate every point of a raw scan given per-point normals. Points
/// failing any gate are omitted and counted; output order follows point
/// index. Velodyne-tagged scans must be converted to raw first.
pub fn calibrate_scan(
    scan: &Scan,
    normals: &[NormalEstimate],
    settings: &CalibrationSettings,
    alpha_source: AlphaSource<'_>,
) -> Result<ScanCalibration> {
    if scan.sensor != SensorKind::OusterRaw {
        return Err(Error::WrongSensor {
            expected: SensorKind::OusterRaw.name(),
            found: scan.sensor.name(),
            hint: "convert preprocessed intensity to raw first",
        });
    }
    if normals.len() != scan.len() {
        return Err(Error::Contract(format!(
            "normal list length {} does not match point count {}",
            normals.len(),
            scan.len()
        )));
    }

    let outcomes = exec::map_indices(scan.len(), |i| {
        calibrate_point(i, &scan.points[i], &normals[i], settings, alpha_source)
    });

    let mut points = Vec::new();
    let mut rejects = RejectCounts::default();
    for outcome in outcomes {
        match outcome? {
            Ok(cp) => points.push(cp),
            Err(reason) => rejects.absorb(reason),
        }
    }
    Ok(ScanCalibration { points, rejects })
}

/// Compute the per-point alpha for a sensor-facing normal and beam.
fn point_alpha(
    normal: &UnitVector3,
    beam: &UnitVector3,
    alpha_source: AlphaSource<'_>,
) -> Result<f64> {
    match alpha_source {
        AlphaSource::Analytic => geometry::incidence_angle(beam, normal),
        AlphaSource::Regressor(model) => {
            let features = FeatureVector::from_vectors(normal, beam);
            model.forward(&features)
        }
    }
}

fn calibrate_point(
    index: usize,
    point: &Point,
    normal: &NormalEstimate,
    settings: &CalibrationSettings,
    alpha_source: AlphaSource<'_>,
) -> Result<std::result::Result<CalibratedPoint, RejectReason>> {
    let range = point.range();
    if range < SELF_RETURN_RANGE {
        return Ok(Err(RejectReason::SelfReturn));
    }
    if range < settings.gate.r_min() {
        return Ok(Err(RejectReason::BelowGate));
    }
    if range > settings.gate.r_max() {
        return Ok(Err(RejectReason::AboveGate));
    }
    if normal.is_degenerate() {
        return Ok(Err(RejectReason::DegenerateNormal));
    }
    let beam = geometry::beam_direction(point)?;
    let alpha = point_alpha(&normal.normal, &beam, alpha_source)?;
    if alpha > settings.alpha_max {
        return Ok(Err(RejectReason::Grazing));
    }
    let calibrated = calibrate(point.intensity, range, alpha, &settings.gate, settings.alpha_max)?;
    Ok(Ok(CalibratedPoint {
        index,
        point: *point,
        alpha,
        calibrated_intensity: calibrated,
    }))
}
