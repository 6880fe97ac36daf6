//! Confusion matrices, per-class IoU, and mean IoU over labeled scans.
//!
//! Void ground truth is never scored (tallied separately). Void
//! *predictions* — the pipeline's abstentions — count as false negatives
//! for the point's true class by default, since a full-scan benchmark must
//! penalize abstention; an in-gate-only mode that skips them exists for
//! diagnostics.

use crate::error::{Error, Result};
use crate::scan::TerrainClass;

const N_CLASSES: usize = TerrainClass::ALL.len();

/// How abstentions (void predictions on scored ground truth) are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoringMode {
    /// Abstentions are false negatives for the true class.
    #[default]
    PenalizeAbstention,
    /// Abstentions are skipped (tallied as gated); diagnostics only.
    InGateOnly,
}

/// Mergeable confusion counts indexed by (ground truth, prediction).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; N_CLASSES]; N_CLASSES],
    mode: ScoringMode,
    /// Points whose ground truth was void (never scored).
    pub void_ground_truth: u64,
    /// Abstentions skipped under `InGateOnly`.
    pub gated_skipped: u64,
}

impl ConfusionMatrix {
    pub fn new(mode: ScoringMode) -> ConfusionMatrix {
        ConfusionMatrix {
            counts: [[0; N_CLASSES]; N_CLASSES],
            mode,
            void_ground_truth: 0,
            gated_skipped: 0,
        }
    }

    pub fn mode(&self) -> ScoringMode {
        self.mode
    }

    pub fn count(&self, gt: TerrainClass, pred: TerrainClass) -> u64 {
        self.counts[gt.id() as usize][pred.id() as usize]
    }

    /// Total scored points.
    pub fn scored(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Add one aligned (ground truth, prediction) pair of label lists.
    pub fn accumulate(&mut self, gt: &[TerrainClass], pred: &[TerrainClass]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::Contract(format!(
                "ground truth has {} labels, predictions {}",
                gt.len(),
                pred.len()
            )));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if g == TerrainClass::Void {
                self.void_ground_truth += 1;
                continue;
            }
            if p == TerrainClass::Void && self.mode == ScoringMode::InGateOnly {
                self.gated_skipped += 1;
                continue;
            }
            self.counts[g.id() as usize][p.id() as usize] += 1;
        }
        Ok(())
    }

    /// Merge another matrix (accumulation is associative and commutative).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.mode != other.mode {
            return Err(Error::Contract("merging matrices of different modes".into()));
        }
        for g in 0..N_CLASSES {
            for p in 0..N_CLASSES {
                self.counts[g][p] += other.counts[g][p];
            }
        }
        self.void_ground_truth += other.void_ground_truth;
        self.gated_skipped += other.gated_skipped;
        Ok(())
    }
}

/// Per-class intersection-over-union plus the mean over classes present in
/// the ground truth.
#[derive(Debug, Clone)]
pub struct IouReport {
    /// One entry per scored class in id order; `None` marks classes absent
    /// from the ground truth (excluded from the mean).
    pub per_class: Vec<(TerrainClass, Option<f64>)>,
    pub mean: f64,
    pub scored: u64,
    pub void_ground_truth: u64,
    pub gated_skipped: u64,
}

impl IouReport {
    pub fn class_iou(&self, class: TerrainClass) -> Option<f64> {
        self.per_class
            .iter()
            .find(|(c, _)| *c == class)
            .and_then(|(_, v)| *v)
    }
}

/// IoU_c = TP / (TP + FP + FN) per class over the matrix.
pub fn iou(cm: &ConfusionMatrix) -> Result<IouReport> {
    if cm.scored() == 0 {
        return Err(Error::EmptyReport);
    }
    let mut per_class = Vec::new();
    let mut sum = 0.0;
    let mut present = 0usize;
    for class in TerrainClass::SCORED {
        let c = class.id() as usize;
        let row: u64 = (0..N_CLASSES).map(|p| cm.counts[c][p]).sum();
        if row == 0 {
            per_class.push((class, None));
            continue;
        }
        let tp = cm.counts[c][c];
        let fn_ = row - tp;
        let fp: u64 = (0..N_CLASSES)
            .filter(|&g| g != c)
            .map(|g| cm.counts[g][c])
            .sum();
        let value = tp as f64 / (tp + fp + fn_) as f64;
        sum += value;
        present += 1;
        per_class.push((class, Some(value)));
    }
    Ok(IouReport {
        per_class,
        mean: sum / present as f64,
        scored: cm.scored(),
        void_ground_truth: cm.void_ground_truth,
        gated_skipped: cm.gated_skipped,
    })
}

/// Column order of the report table.
const TABLE_ORDER: [TerrainClass; 5] = [
    TerrainClass::Tree,
    TerrainClass::Grass,
    TerrainClass::Puddle,
    TerrainClass::Bush,
    TerrainClass::Person,
];

/// Aligned plain-text table: one header row
/// `Framework Tree Grass Puddle Bushes Person mean` and one value row with
/// IoU percentages. Absent classes render as `-`.
pub fn format_table(report: &IouReport, row_label: &str) -> String {
    let headers = ["Tree", "Grass", "Puddle", "Bushes", "Person", "mean"];
    let mut cells: Vec<String> = TABLE_ORDER
        .iter()
        .map(|&c| match report.class_iou(c) {
            Some(v) => format!("{:.2}", v * 100.0),
            None => "-".to_string(),
        })
        .collect();
    cells.push(format!("{:.2}", report.mean * 100.0));

    let label_width = "Framework".len().max(row_label.len());
    let mut out = format!("{:<label_width$}", "Framework");
    for (h, c) in headers.iter().zip(&cells) {
        let w = h.len().max(c.len()) + 2;
        out.push_str(&format!("{h:>w$}"));
    }
    out.push('\n');
    out.push_str(&format!("{row_label:<label_width$}"));
    for (h, c) in headers.iter().zip(&cells) {
        let w = h.len().max(c.len()) + 2;
        out.push_str(&format!("{c:>w$}"));
    }
    out.push('\n');
    out
}

/// Machine-readable key-value lines for the same report.
pub fn format_key_values(report: &IouReport) -> String {
    let mut out = String::new();
    for (class, value) in &report.per_class {
        match value {
            Some(v) => out.push_str(&format!("iou.{} = {v}\n", class.name())),
            None => out.push_str(&format!("iou.{} = absent\n", class.name())),
        }
    }
    out.push_str(&format!("miou = {}\n", report.mean));
    out.push_str(&format!("scored = {}\n", report.scored));
    out.push_str(&format!("void_ground_truth = {}\n", report.void_ground_truth));
    out.push_str(&format!("gated_skipped = {}\n", report.gated_skipped));
    out
}
