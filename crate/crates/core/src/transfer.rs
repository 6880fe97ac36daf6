//! Inversion of factory intensity preprocessing: per-class per-range-bin
//! maximum-intensity curves, their cross-sensor ratio Q, a class-independence
//! check, a polynomial fit of Q over range, and scan conversion.
//!
//! Q samples are anchored at the *low edge* of each range bin: the maximum
//! of a 1/R²-decaying quantity over a bin is attained at the bin's near
//! edge, so that is the range the ratio actually measures.
//!
//! The fit minimizes count-weighted *relative* residuals. Q spans two
//! orders of magnitude over a typical gate; an absolute least-squares fit
//! would let the far-range tail drift by large factors and corrupt every
//! converted intensity there. `residual_rms` is therefore a relative
//! quantity (0.05 means the fit misses samples by 5 percent RMS).

use nalgebra::{DMatrix, DVector};

use crate::calibration::RangeGate;
use crate::error::{Error, Result};
use crate::scan::{Scan, SensorKind, TerrainClass};
use crate::util::{atomic_write, percentile, read_to_string};

/// Per-range-bin robust maximum intensity for one class and sensor.
#[derive(Debug, Clone)]
pub struct MaxCurve {
    pub class: TerrainClass,
    pub sensor: SensorKind,
    gate: RangeGate,
    bin_width: f64,
    min_bin_count: usize,
    bins: Vec<MaxBin>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaxBin {
    pub robust_max: f64,
    pub count: usize,
}

impl MaxCurve {
    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn bin(&self, idx: usize) -> &MaxBin {
        &self.bins[idx]
    }

    /// Low edge of bin `idx` — the range a bin's maximum is anchored to.
    pub fn bin_range(&self, idx: usize) -> f64 {
        self.gate.r_min() + idx as f64 * self.bin_width
    }

    pub fn usable(&self, idx: usize) -> bool {
        self.bins[idx].count >= self.min_bin_count && self.bins[idx].robust_max > 0.0
    }

    fn same_binning(&self, other: &MaxCurve) -> bool {
        self.gate == other.gate
            && self.bin_width == other.bin_width
            && self.bins.len() == other.bins.len()
    }
}

/// Pool labeled points of `class` from `scans` and record the robust
/// per-bin maximum intensity over the gate.
pub fn build_max_curve(
    scans: &[Scan],
    class: TerrainClass,
    gate: &RangeGate,
    bin_width: f64,
    robust_percentile: f64,
    min_bin_count: usize,
) -> Result<MaxCurve> {
    if bin_width <= 0.0 {
        return Err(Error::Config(format!(
            "bin width must be positive, got {bin_width}"
        )));
    }
    let sensor = scans
        .first()
        .map(|s| s.sensor)
        .ok_or_else(|| Error::InsufficientData("no scans supplied".into()))?;
    let n_bins = ((gate.r_max() - gate.r_min()) / bin_width).ceil() as usize;
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for scan in scans {
        if scan.sensor != sensor {
            return Err(Error::Contract(
                "scans in one max-curve pool must share a sensor tag".into(),
            ));
        }
        let labels = scan.labels.as_ref().ok_or_else(|| {
            Error::Contract("max-curve extraction needs labeled scans".into())
        })?;
        for (p, &label) in scan.points.iter().zip(labels) {
            if label != class {
                continue;
            }
            let r = p.range();
            if !gate.contains(r) {
                continue;
            }
            let idx = (((r - gate.r_min()) / bin_width) as usize).min(n_bins - 1);
            values[idx].push(p.intensity);
        }
    }
    let bins: Vec<MaxBin> = values
        .into_iter()
        .map(|v| {
            if v.is_empty() {
                MaxBin::default()
            } else {
                MaxBin {
                    robust_max: percentile(&v, robust_percentile),
                    count: v.len(),
                }
            }
        })
        .collect();
    let curve = MaxCurve {
        class,
        sensor,
        gate: *gate,
        bin_width,
        min_bin_count,
        bins,
    };
    if (0..curve.len()).filter(|&i| curve.usable(i)).count() == 0 {
        return Err(Error::InsufficientData(format!(
            "no range bin for class {class} holds at least {min_bin_count} points"
        )));
    }
    Ok(curve)
}

/// One ratio sample: range anchor, Q value, and its weight (the smaller of
/// the two bin counts behind it).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QSample {
    pub range: f64,
    pub q: f64,
    pub weight: f64,
}

/// Per-bin ratio series for one class.
#[derive(Debug, Clone, PartialEq)]
pub struct QSeries {
    pub class: TerrainClass,
    pub samples: Vec<QSample>,
    /// Bins skipped because either side was missing or the denominator
    /// was zero.
    pub dropped_bins: usize,
}

/// Elementwise per-bin ratio ouster / velodyne. Curves must share class
/// and binning; bins unusable on either side are dropped, as are bins with
/// a zero denominator (division guard).
pub fn compute_q(ouster: &MaxCurve, velodyne: &MaxCurve) -> Result<QSeries> {
    if ouster.class != velodyne.class {
        return Err(Error::Contract(format!(
            "Q of mismatched classes {} and {}",
            ouster.class, velodyne.class
        )));
    }
    if !ouster.same_binning(velodyne) {
        return Err(Error::Contract("Q of curves with different binning".into()));
    }
    if ouster.sensor != SensorKind::OusterRaw || velodyne.sensor != SensorKind::VelodynePreprocessed
    {
        return Err(Error::Contract(format!(
            "Q expects (raw, preprocessed) curves, got ({}, {})",
            ouster.sensor, velodyne.sensor
        )));
    }
    let mut samples = Vec::new();
    let mut dropped = 0usize;
    for i in 0..ouster.len() {
        if !ouster.usable(i) || !velodyne.usable(i) {
            dropped += 1;
            continue;
        }
        let denom = velodyne.bin(i).robust_max;
        if denom <= 0.0 {
            log::warn!(
                "bin at {} m: zero preprocessed maximum, dropped",
                ouster.bin_range(i)
            );
            dropped += 1;
            continue;
        }
        samples.push(QSample {
            range: ouster.bin_range(i),
            q: ouster.bin(i).robust_max / denom,
            weight: ouster.bin(i).count.min(velodyne.bin(i).count) as f64,
        });
    }
    Ok(QSeries {
        class: ouster.class,
        samples,
        dropped_bins: dropped,
    })
}

/// Cross-class ratio statistics for one class pair.
#[derive(Debug, Clone)]
pub struct PairDeviation {
    pub class_a: TerrainClass,
    pub class_b: TerrainClass,
    /// Mean of per-bin Q_a / Q_b over shared bins.
    pub mean_ratio: f64,
    /// Largest |Q_a/Q_b − 1| over shared bins.
    pub max_abs_deviation: f64,
    pub shared_bins: usize,
}

/// Divide Q curves of different classes by each other. Object-independence
/// of the preprocessing shows up as ratios near 1.
pub fn check_class_independence(q_curves: &[QSeries]) -> Result<Vec<PairDeviation>> {
    if q_curves.len() < 2 {
        return Err(Error::Contract(
            "class-independence check needs at least two classes".into(),
        ));
    }
    let mut out = Vec::new();
    for i in 0..q_curves.len() {
        for j in i + 1..q_curves.len() {
            let (a, b) = (&q_curves[i], &q_curves[j]);
            let mut ratios = Vec::new();
            for sa in &a.samples {
                if let Some(sb) = b.samples.iter().find(|s| s.range == sa.range) {
                    ratios.push(sa.q / sb.q);
                }
            }
            if ratios.is_empty() {
                continue;
            }
            let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
            let max_dev = ratios
                .iter()
                .map(|r| (r - 1.0).abs())
                .fold(0.0f64, f64::max);
            out.push(PairDeviation {
                class_a: a.class,
                class_b: b.class,
                mean_ratio: mean,
                max_abs_deviation: max_dev,
                shared_bins: ratios.len(),
            });
        }
    }
    if out.is_empty() {
        return Err(Error::InsufficientData(
            "no shared bins between any class pair".into(),
        ));
    }
    Ok(out)
}

/// Concatenate per-class Q series into one pooled series for fitting,
/// keeping per-sample weights. Justified by the class-independence of Q.
pub fn pool_q(series: &[QSeries]) -> QSeries {
    let mut samples = Vec::new();
    let mut dropped = 0;
    for s in series {
        samples.extend_from_slice(&s.samples);
        dropped += s.dropped_bins;
    }
    samples.sort_by(|a, b| a.range.total_cmp(&b.range));
    QSeries {
        class: TerrainClass::Void,
        samples,
        dropped_bins: dropped,
    }
}

/// Fitted polynomial Q(r): ascending monomial coefficients over range in
/// meters, valid on `domain` only.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferCurve {
    pub degree: usize,
    /// Ascending monomial coefficients in r (meters).
    pub coeffs: Vec<f64>,
    pub domain: (f64, f64),
    /// Count-weighted relative residual RMS of the fit.
    pub residual_rms: f64,
}

impl TransferCurve {
    /// Evaluate Q at `range`; outside the fit domain is an error.
    pub fn evaluate(&self, range: f64) -> Result<f64> {
        if !(self.domain.0..=self.domain.1).contains(&range) {
            return Err(Error::OutOfCurveDomain {
                range,
                lo: self.domain.0,
                hi: self.domain.1,
            });
        }
        Ok(self.evaluate_unchecked(range))
    }

    fn evaluate_unchecked(&self, range: f64) -> f64 {
        // Horner.
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * range + c)
    }

    /// Plain-text form: degree, ascending coefficients, domain, residual.
    pub fn to_file_string(&self) -> String {
        let mut out = String::from("transfer-curve v1\n");
        out.push_str(&format!("degree {}\n", self.degree));
        out.push_str("coeffs");
        for c in &self.coeffs {
            out.push_str(&format!(" {c}"));
        }
        out.push('\n');
        out.push_str(&format!("domain {} {}\n", self.domain.0, self.domain.1));
        out.push_str(&format!("residual_rms {}\n", self.residual_rms));
        out
    }

    pub fn save(&self, path: &std::path::Path, header: &str) -> Result<()> {
        let mut text = self.to_file_string();
        text.push_str(header);
        atomic_write(path, text.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<TransferCurve> {
        let text = read_to_string(path)?;
        let err = |detail: String| Error::Format {
            path: path.to_path_buf(),
            detail,
        };
        let mut lines = text.lines();
        if lines.next() != Some("transfer-curve v1") {
            return Err(err("missing `transfer-curve v1` magic".into()));
        }
        let degree: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("degree "))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("missing or bad degree".into()))?;
        let coeffs: Vec<f64> = lines
            .next()
            .and_then(|l| l.strip_prefix("coeffs"))
            .ok_or_else(|| err("missing coeffs".into()))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(format!("bad coefficient `{t}`"))))
            .collect::<Result<_>>()?;
        if coeffs.len() != degree + 1 {
            return Err(err(format!(
                "degree {degree} needs {} coefficients, got {}",
                degree + 1,
                coeffs.len()
            )));
        }
        let domain_line = lines
            .next()
            .and_then(|l| l.strip_prefix("domain "))
            .ok_or_else(|| err("missing domain".into()))?;
        let parts: Vec<f64> = domain_line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(format!("bad domain value `{t}`"))))
            .collect::<Result<_>>()?;
        let [lo, hi] = parts[..] else {
            return Err(err("domain needs two values".into()));
        };
        let residual_rms: f64 = lines
            .next()
            .and_then(|l| l.strip_prefix("residual_rms "))
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| err("missing or bad residual_rms".into()))?;
        Ok(TransferCurve {
            degree,
            coeffs,
            domain: (lo, hi),
            residual_rms,
        })
    }
}

/// Least-squares polynomial fit of a Q series.
///
/// Internally fits in a [-1, 1]-scaled variable for conditioning, then
/// expands back to monomial coefficients in r. Requires at least
/// `degree + 1` samples and rejects fits that dip non-positive anywhere in
/// the domain (they would mint negative raw intensities).
pub fn fit_transfer(series: &QSeries, degree: usize) -> Result<TransferCurve> {
    fit_transfer_over(series, degree, None)
}

/// [`fit_transfer`] with an explicit validity domain. Bin anchors sit at
/// bin low edges, so the data of the last bin extends one bin width past
/// the last anchor; callers that know the true coverage (e.g. the range
/// gate) can declare it here. `None` falls back to the sample range.
pub fn fit_transfer_over(
    series: &QSeries,
    degree: usize,
    domain: Option<(f64, f64)>,
) -> Result<TransferCurve> {
    let samples = &series.samples;
    if samples.len() < degree + 1 {
        return Err(Error::InsufficientData(format!(
            "degree-{degree} fit needs at least {} samples, got {}",
            degree + 1,
            samples.len()
        )));
    }
    let sample_lo = samples.iter().map(|s| s.range).fold(f64::INFINITY, f64::min);
    let sample_hi = samples
        .iter()
        .map(|s| s.range)
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = domain.unwrap_or((sample_lo, sample_hi));
    if !(hi.is_finite() && lo.is_finite() && hi > lo) {
        return Err(Error::InsufficientData(
            "fit domain collapsed to a single range".into(),
        ));
    }
    if sample_lo < lo || sample_hi > hi {
        return Err(Error::Contract(format!(
            "samples span [{sample_lo}, {sample_hi}] outside declared domain [{lo}, {hi}]"
        )));
    }
    let scale = 2.0 / (hi - lo);
    let offset = -(hi + lo) / (hi - lo);

    // Rows weighted by sqrt(count)/q: count-weighted relative residuals.
    let n = samples.len();
    let mut design = DMatrix::zeros(n, degree + 1);
    let mut rhs = DVector::zeros(n);
    for (i, s) in samples.iter().enumerate() {
        if s.q <= 0.0 {
            return Err(Error::Contract(format!(
                "non-positive Q sample {} at {} m",
                s.q, s.range
            )));
        }
        let w = s.weight.max(1.0).sqrt() / s.q;
        let t = scale * s.range + offset;
        let mut pow = 1.0;
        for j in 0..=degree {
            design[(i, j)] = w * pow;
            pow *= t;
        }
        rhs[i] = w * s.q;
    }
    let svd = design.svd(true, true);
    let scaled_coeffs = svd
        .solve(&rhs, 1e-12)
        .map_err(|e| Error::FitRejected(format!("least-squares solve failed: {e}")))?;

    // Expand p(scale*r + offset) into monomial coefficients of r.
    let mut coeffs = vec![0.0f64];
    for &c in scaled_coeffs.iter().rev() {
        coeffs = poly_mul_linear(&coeffs, scale, offset);
        coeffs[0] += c;
    }
    coeffs.resize(degree + 1, 0.0);

    let mut curve = TransferCurve {
        degree,
        coeffs,
        domain: (lo, hi),
        residual_rms: 0.0,
    };

    // Relative residual RMS over the samples.
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let rel = curve.evaluate_unchecked(s.range) / s.q - 1.0;
        let w = s.weight.max(1.0);
        num += w * rel * rel;
        den += w;
    }
    curve.residual_rms = (num / den).sqrt();

    // Positivity over the whole domain.
    for i in 0..=1000 {
        let r = lo + (hi - lo) * i as f64 / 1000.0;
        let v = curve.evaluate_unchecked(r);
        if !v.is_finite() || v <= 0.0 {
            return Err(Error::FitRejected(format!(
                "fitted Q is {v} at {r} m; conversion would produce non-positive intensities"
            )));
        }
    }
    Ok(curve)
}

/// Multiply polynomial `p` (ascending coefficients) by `(a x + b)`.
fn poly_mul_linear(p: &[f64], a: f64, b: f64) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + 1];
    for (i, &c) in p.iter().enumerate() {
        out[i] += c * b;
        out[i + 1] += c * a;
    }
    out
}

/// Outcome of a Velodyne-to-raw conversion.
#[derive(Debug, Clone)]
pub struct ConvertedScan {
    pub scan: Scan,
    /// Points dropped because their range fell outside the curve domain.
    pub dropped_out_of_domain: usize,
}

/// Multiply each point's intensity by Q(range) and flip the sensor tag to
/// raw. Points outside the curve domain are dropped (polynomial
/// extrapolation is unsafe); labels stay aligned with surviving points.
pub fn convert_velodyne(scan: &Scan, curve: &TransferCurve) -> Result<ConvertedScan> {
    if scan.sensor != SensorKind::VelodynePreprocessed {
        return Err(Error::WrongSensor {
            expected: SensorKind::VelodynePreprocessed.name(),
            found: scan.sensor.name(),
            hint: "conversion applies to preprocessed scans only",
        });
    }
    let mut points = Vec::with_capacity(scan.len());
    let mut labels = scan.labels.as_ref().map(|_| Vec::with_capacity(scan.len()));
    let mut dropped = 0usize;
    for (i, p) in scan.points.iter().enumerate() {
        match curve.evaluate(p.range()) {
            Ok(q) => {
                points.push(crate::scan::Point::new(p.x, p.y, p.z, p.intensity * q));
                if let (Some(ls), Some(src)) = (labels.as_mut(), scan.labels.as_ref()) {
                    ls.push(src[i]);
                }
            }
            Err(Error::OutOfCurveDomain { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyDomainIntersection);
    }
    let mut out = Scan::new(points, SensorKind::OusterRaw);
    if let Some(ls) = labels {
        out = out.with_labels(ls)?;
    }
    Ok(ConvertedScan {
        scan: out,
        dropped_out_of_domain: dropped,
    })
}
