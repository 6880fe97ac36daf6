//! Scan, point, and label domain types plus bit-exact readers/writers for
//! the KITTI-style binary scan and label formats.
//!
//! Scan files are consecutive 16-byte records of four little-endian `f32`
//! values `x y z intensity`. Label files hold one little-endian `u32` per
//! point; the low 16 bits carry the semantic class id, the high 16 bits are
//! ignored. Values are held as `f64` in memory — every `f32` embeds exactly,
//! so write-then-read is the identity on file-sourced scans while synthetic
//! pipelines keep full precision.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::util::{atomic_write, read_bytes, read_to_string};

/// Bytes per point record in a scan file.
pub const SCAN_RECORD_BYTES: usize = 16;
/// Bytes per label record.
pub const LABEL_RECORD_BYTES: usize = 4;
/// Points closer than this to the sensor are treated as returns off the
/// sensor housing and excluded from every downstream statistic.
pub const SELF_RETURN_RANGE: f64 = 0.5;

/// Which intensity convention a scan carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensorKind {
    /// Raw backscatter counts (Ouster-style, uncompensated).
    OusterRaw,
    /// Factory range-compensated 8-bit intensity (Velodyne-style). Must be
    /// converted back to raw before calibration.
    VelodynePreprocessed,
}

impl SensorKind {
    pub fn name(self) -> &'static str {
        match self {
            SensorKind::OusterRaw => "ouster-raw",
            SensorKind::VelodynePreprocessed => "velodyne-preprocessed",
        }
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for SensorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ouster-raw" | "ouster" => Ok(SensorKind::OusterRaw),
            "velodyne-preprocessed" | "velodyne" => Ok(SensorKind::VelodynePreprocessed),
            other => Err(Error::Config(format!("unknown sensor kind `{other}`"))),
        }
    }
}

/// The six terrain classes scans are scored against. `Void` absorbs every
/// unmapped dataset class and marks abstentions; it is never scored.
///
/// The discriminant is the canonical class id; ordering (and classification
/// tie-breaks) follow it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u16)]
pub enum TerrainClass {
    Void = 0,
    Grass = 1,
    Tree = 2,
    Bush = 3,
    Puddle = 4,
    Person = 5,
}

impl TerrainClass {
    pub const ALL: [TerrainClass; 6] = [
        TerrainClass::Void,
        TerrainClass::Grass,
        TerrainClass::Tree,
        TerrainClass::Bush,
        TerrainClass::Puddle,
        TerrainClass::Person,
    ];

    /// Classes that participate in scoring (everything but `Void`).
    pub const SCORED: [TerrainClass; 5] = [
        TerrainClass::Grass,
        TerrainClass::Tree,
        TerrainClass::Bush,
        TerrainClass::Puddle,
        TerrainClass::Person,
    ];

    pub fn id(self) -> u16 {
        self as u16
    }

    pub fn from_id(id: u16) -> Option<TerrainClass> {
        TerrainClass::ALL.into_iter().find(|c| c.id() == id)
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainClass::Void => "void",
            TerrainClass::Grass => "grass",
            TerrainClass::Tree => "tree",
            TerrainClass::Bush => "bush",
            TerrainClass::Puddle => "puddle",
            TerrainClass::Person => "person",
        }
    }

    pub fn from_name(name: &str) -> Option<TerrainClass> {
        match name {
            "void" => Some(TerrainClass::Void),
            "grass" => Some(TerrainClass::Grass),
            "tree" => Some(TerrainClass::Tree),
            "bush" | "bushes" => Some(TerrainClass::Bush),
            "puddle" => Some(TerrainClass::Puddle),
            "person" => Some(TerrainClass::Person),
            _ => None,
        }
    }
}

impl fmt::Display for TerrainClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One LiDAR return: position in the sensor frame plus raw intensity.
///
/// Invariants (enforced at the I/O boundary): coordinates finite,
/// intensity finite and non-negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub intensity: f64,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64, intensity: f64) -> Point {
        Point { x, y, z, intensity }
    }

    /// Euclidean distance from the sensor origin.
    pub fn range(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

/// One LiDAR sweep: points in file order, an optional parallel label list,
/// and the sensor tag that decides which calibration path is legal.
///
/// Scans are immutable after construction and safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub points: Vec<Point>,
    pub labels: Option<Vec<TerrainClass>>,
    pub sensor: SensorKind,
}

impl Scan {
    pub fn new(points: Vec<Point>, sensor: SensorKind) -> Scan {
        Scan {
            points,
            labels: None,
            sensor,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Attach a label list; must have exactly one entry per point.
    pub fn with_labels(mut self, labels: Vec<TerrainClass>) -> Result<Scan> {
        if labels.len() != self.points.len() {
            return Err(Error::LabelCountMismatch {
                labels: labels.len(),
                points: self.points.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }
}

/// Total map from the dataset's 16-bit semantic ids onto [`TerrainClass`].
/// Ids absent from the map fall through to `Void`.
#[derive(Debug, Clone, Default)]
pub struct OntologyMap {
    map: BTreeMap<u16, TerrainClass>,
}

impl OntologyMap {
    /// Identity mapping for label files written by this tool: raw id n maps
    /// to the class with canonical id n, everything else to void.
    pub fn canonical() -> OntologyMap {
        let map = TerrainClass::ALL.iter().map(|&c| (c.id(), c)).collect();
        OntologyMap { map }
    }

    pub fn insert(&mut self, raw_id: u16, class: TerrainClass) {
        self.map.insert(raw_id, class);
    }

    /// Look up a raw semantic id. Returns the class and whether the id was
    /// explicitly mapped (false means it fell through to void).
    pub fn lookup(&self, raw_id: u16) -> (TerrainClass, bool) {
        match self.map.get(&raw_id) {
            Some(&c) => (c, true),
            None => (TerrainClass::Void, false),
        }
    }

    /// Parse a map file: one `<raw_id> <class_name>` pair per line, `#`
    /// comments and blank lines ignored. Duplicate ids are an error.
    pub fn from_file(path: &Path) -> Result<OntologyMap> {
        let text = read_to_string(path)?;
        let mut map = OntologyMap::default();
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |detail: String| Error::Ontology {
                path: path.to_path_buf(),
                line: lineno + 1,
                detail,
            };
            let mut parts = line.split_whitespace();
            let (id_tok, name_tok) = match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => return Err(err(format!("expected `<raw_id> <class_name>`, got `{line}`"))),
            };
            let raw_id: u16 = id_tok
                .parse()
                .map_err(|_| err(format!("bad raw id `{id_tok}`")))?;
            let class = TerrainClass::from_name(name_tok)
                .ok_or_else(|| err(format!("unknown class name `{name_tok}`")))?;
            if map.map.insert(raw_id, class).is_some() {
                return Err(err(format!("duplicate raw id {raw_id}")));
            }
        }
        Ok(map)
    }
}

/// Read a binary scan file. Points come back in file order with no labels.
pub fn read_scan(path: &Path, sensor: SensorKind) -> Result<Scan> {
    let bytes = read_bytes(path)?;
    let format_err = |detail: String| Error::Format {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() % SCAN_RECORD_BYTES != 0 {
        let offset = bytes.len() - bytes.len() % SCAN_RECORD_BYTES;
        return Err(format_err(format!(
            "truncated record at byte offset {offset} (file length {} not a multiple of {SCAN_RECORD_BYTES})",
            bytes.len()
        )));
    }
    let mut points = Vec::with_capacity(bytes.len() / SCAN_RECORD_BYTES);
    for (idx, rec) in bytes.chunks_exact(SCAN_RECORD_BYTES).enumerate() {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap());
        let (x, y, z, intensity) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite() && intensity.is_finite()) {
            return Err(format_err(format!("non-finite value at point index {idx}")));
        }
        if intensity < 0.0 {
            // Rejected rather than clamped: silent clamping would bias
            // calibration statistics.
            return Err(format_err(format!(
                "negative intensity {intensity} at point index {idx}"
            )));
        }
        points.push(Point::new(x as f64, y as f64, z as f64, intensity as f64));
    }
    Ok(Scan::new(points, sensor))
}

/// Write a scan in the binary format. Values are stored as `f32`; scans
/// whose values originated from a scan file round-trip bit-exactly.
pub fn write_scan(scan: &Scan, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(scan.len() * SCAN_RECORD_BYTES);
    for p in &scan.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

/// Counts reported by [`read_labels`] for ids that fell through to void.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelWarnings {
    pub unmapped: usize,
}

/// Read a label file and attach the (ontology-mapped) labels to `scan`.
/// Raw ids missing from the map go to void and are tallied, not guessed.
pub fn read_labels(
    path: &Path,
    scan: Scan,
    ontology: &OntologyMap,
) -> Result<(Scan, LabelWarnings)> {
    let bytes = read_bytes(path)?;
    if bytes.len() % LABEL_RECORD_BYTES != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!(
                "label file length {} not a multiple of {LABEL_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    let count = bytes.len() / LABEL_RECORD_BYTES;
    if count != scan.len() {
        return Err(Error::LabelCountMismatch {
            labels: count,
            points: scan.len(),
        });
    }
    let mut warnings = LabelWarnings::default();
    let mut labels = Vec::with_capacity(count);
    for rec in bytes.chunks_exact(LABEL_RECORD_BYTES) {
        let raw = u32::from_le_bytes(rec.try_into().unwrap());
        let semantic = (raw & 0xffff) as u16;
        let (class, known) = ontology.lookup(semantic);
        if !known {
            warnings.unmapped += 1;
        }
        labels.push(class);
    }
    if warnings.unmapped > 0 {
        log::warn!(
            "{}: {} label(s) had raw ids missing from the ontology map; mapped to void",
            path.display(),
            warnings.unmapped
        );
    }
    Ok((scan.with_labels(labels)?, warnings))
}

/// Read the raw 16-bit semantic ids of a label file without a scan (the
/// high 16 bits of each record are dropped).
pub fn read_label_ids(path: &Path) -> Result<Vec<u16>> {
    let bytes = read_bytes(path)?;
    if bytes.len() % LABEL_RECORD_BYTES != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: format!(
                "label file length {} not a multiple of {LABEL_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(LABEL_RECORD_BYTES)
        .map(|rec| (u32::from_le_bytes(rec.try_into().unwrap()) & 0xffff) as u16)
        .collect())
}

/// Write labels as one little-endian `u32` per point (canonical class id in
/// the low 16 bits, high bits zero).
pub fn write_labels(labels: &[TerrainClass], path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(labels.len() * LABEL_RECORD_BYTES);
    for &label in labels {
        bytes.extend_from_slice(&(label.id() as u32).to_le_bytes());
    }
    atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    fn write_raw(path: &Path, bytes: &[u8]) {
        std::fs::write(path, bytes).unwrap();
    }

    fn le_floats(vals: &[f32]) -> Vec<u8> {
        vals.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    #[test]
    fn read_single_point_record() {
        let dir = tmp();
        let path = dir.path().join("one.bin");
        write_raw(&path, &le_floats(&[1.0, 2.0, 2.0, 5.0]));
        let scan = read_scan(&path, SensorKind::OusterRaw).unwrap();
        assert_eq!(scan.len(), 1);
        let p = scan.points[0];
        assert_eq!(p.range(), 3.0);
        assert_eq!(p.intensity, 5.0);
    }

    #[test]
    fn read_empty_file_is_empty_scan() {
        let dir = tmp();
        let path = dir.path().join("empty.bin");
        write_raw(&path, &[]);
        let scan = read_scan(&path, SensorKind::OusterRaw).unwrap();
        assert!(scan.is_empty());
    }

    #[test]
    fn truncated_record_reports_offset() {
        let dir = tmp();
        let path = dir.path().join("trunc.bin");
        write_raw(&path, &[0u8; 24]);
        let err = read_scan(&path, SensorKind::OusterRaw).unwrap_err();
        match err {
            Error::Format { detail, .. } => assert!(detail.contains("offset 16"), "{detail}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_reports_point_index() {
        let dir = tmp();
        let path = dir.path().join("nan.bin");
        let mut bytes = le_floats(&[1.0, 0.0, 0.0, 1.0]);
        bytes.extend(le_floats(&[f32::NAN, 0.0, 0.0, 1.0]));
        write_raw(&path, &bytes);
        let err = read_scan(&path, SensorKind::OusterRaw).unwrap_err();
        match err {
            Error::Format { detail, .. } => assert!(detail.contains("index 1"), "{detail}"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn negative_intensity_rejected() {
        let dir = tmp();
        let path = dir.path().join("neg.bin");
        write_raw(&path, &le_floats(&[1.0, 0.0, 0.0, -0.5]));
        assert!(read_scan(&path, SensorKind::OusterRaw).is_err());
    }

    #[test]
    fn scan_round_trip_single_point() {
        let dir = tmp();
        let src = dir.path().join("a.bin");
        let dst = dir.path().join("b.bin");
        write_raw(&src, &le_floats(&[1.5, -2.25, 0.125, 7.0]));
        let scan = read_scan(&src, SensorKind::OusterRaw).unwrap();
        write_scan(&scan, &dst).unwrap();
        assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&dst).unwrap());
    }

    #[test]
    fn write_to_unwritable_path_is_io_error() {
        let scan = Scan::new(vec![Point::new(1.0, 0.0, 0.0, 1.0)], SensorKind::OusterRaw);
        let err = write_scan(&scan, Path::new("/nonexistent-dir/out.bin")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn labels_map_through_ontology() {
        let dir = tmp();
        let scan_path = dir.path().join("s.bin");
        let label_path = dir.path().join("s.label");
        write_raw(
            &scan_path,
            &[
                le_floats(&[1.0, 0.0, 0.0, 1.0]),
                le_floats(&[2.0, 0.0, 0.0, 1.0]),
                le_floats(&[3.0, 0.0, 0.0, 1.0]),
                le_floats(&[4.0, 0.0, 0.0, 1.0]),
            ]
            .concat(),
        );
        write_raw(
            &label_path,
            &[3u32, 3, 3, 3]
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect::<Vec<_>>(),
        );
        let mut ontology = OntologyMap::default();
        ontology.insert(3, TerrainClass::Grass);
        let scan = read_scan(&scan_path, SensorKind::OusterRaw).unwrap();
        let (scan, warnings) = read_labels(&label_path, scan, &ontology).unwrap();
        assert_eq!(warnings.unmapped, 0);
        assert_eq!(
            scan.labels.unwrap(),
            vec![TerrainClass::Grass; 4]
        );
    }

    #[test]
    fn label_count_mismatch_reports_both_counts() {
        let dir = tmp();
        let scan_path = dir.path().join("s.bin");
        let label_path = dir.path().join("s.label");
        write_raw(
            &scan_path,
            &[
                le_floats(&[1.0, 0.0, 0.0, 1.0]),
                le_floats(&[2.0, 0.0, 0.0, 1.0]),
                le_floats(&[3.0, 0.0, 0.0, 1.0]),
                le_floats(&[4.0, 0.0, 0.0, 1.0]),
            ]
            .concat(),
        );
        write_raw(&label_path, &[0u8; 12]); // 3 labels for 4 points
        let scan = read_scan(&scan_path, SensorKind::OusterRaw).unwrap();
        let err = read_labels(&label_path, scan, &OntologyMap::canonical()).unwrap_err();
        match err {
            Error::LabelCountMismatch { labels, points } => {
                assert_eq!((labels, points), (3, 4));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn high_label_bits_dropped() {
        // Oracle: the on-disk u32 masked with 0xffff must select the class.
        let raw: u32 = 0x0001_0007;
        assert_eq!(raw & 0xffff, 7);

        let dir = tmp();
        let scan_path = dir.path().join("s.bin");
        let label_path = dir.path().join("s.label");
        write_raw(&scan_path, &le_floats(&[1.0, 0.0, 0.0, 1.0]));
        write_raw(&label_path, &raw.to_le_bytes());
        let mut ontology = OntologyMap::default();
        ontology.insert(7, TerrainClass::Tree);
        let scan = read_scan(&scan_path, SensorKind::OusterRaw).unwrap();
        let (scan, warnings) = read_labels(&label_path, scan, &ontology).unwrap();
        assert_eq!(scan.labels.unwrap()[0], TerrainClass::Tree);
        assert_eq!(warnings.unmapped, 0);
    }

    #[test]
    fn unmapped_ids_tally_and_fall_to_void() {
        let dir = tmp();
        let scan_path = dir.path().join("s.bin");
        let label_path = dir.path().join("s.label");
        write_raw(&scan_path, &le_floats(&[1.0, 0.0, 0.0, 1.0]));
        write_raw(&label_path, &999u32.to_le_bytes());
        let scan = read_scan(&scan_path, SensorKind::OusterRaw).unwrap();
        let (scan, warnings) = read_labels(&label_path, scan, &OntologyMap::canonical()).unwrap();
        assert_eq!(scan.labels.unwrap()[0], TerrainClass::Void);
        assert_eq!(warnings.unmapped, 1);
    }

    #[test]
    fn ontology_rejects_duplicates_and_bad_names() {
        let dir = tmp();
        let path = dir.path().join("map.txt");
        std::fs::write(&path, "3 grass\n3 tree\n").unwrap();
        assert!(OntologyMap::from_file(&path).is_err());
        std::fs::write(&path, "3 lawn\n").unwrap();
        assert!(OntologyMap::from_file(&path).is_err());
        std::fs::write(&path, "# comment\n3 grass\n4 tree\n\n19 bush\n").unwrap();
        let map = OntologyMap::from_file(&path).unwrap();
        assert_eq!(map.lookup(3), (TerrainClass::Grass, true));
        assert_eq!(map.lookup(19), (TerrainClass::Bush, true));
        assert_eq!(map.lookup(500), (TerrainClass::Void, false));
    }

    #[test]
    fn class_ids_are_stable_and_total() {
        for class in TerrainClass::ALL {
            assert_eq!(TerrainClass::from_id(class.id()), Some(class));
            assert_eq!(TerrainClass::from_name(class.name()), Some(class));
        }
        // Every 16-bit id maps somewhere under any ontology (void fallback).
        let map = OntologyMap::canonical();
        assert_eq!(map.lookup(u16::MAX).0, TerrainClass::Void);
    }
}
