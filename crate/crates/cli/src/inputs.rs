//! Input collection: expanding scan/label arguments into ordered file
//! lists and pairing labels with scans.

use std::path::{Path, PathBuf};

use lidar_reflect::config::PipelineConfig;
use lidar_reflect::scan::{self, OntologyMap, Scan, SensorKind};

use crate::CliError;

/// Expand files/directories into a sorted list of files with `extension`.
pub fn collect_files(paths: &[PathBuf], extension: &str) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for path in paths {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| CliError::usage(format!("cannot read directory {}: {e}", path.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(extension))
                .collect();
            entries.sort();
            out.extend(entries);
        } else if path.is_file() {
            out.push(path.clone());
        } else {
            return Err(CliError::usage(format!("no such file: {}", path.display())));
        }
    }
    if out.is_empty() {
        return Err(CliError::usage(format!(
            "no .{extension} files found under the given paths"
        )));
    }
    Ok(out)
}

/// Find the label file belonging to a scan: same stem inside a label
/// directory, or the positionally paired file from an explicit list.
pub fn pair_labels(
    scan_files: &[PathBuf],
    label_args: &[PathBuf],
) -> Result<Vec<PathBuf>, CliError> {
    if label_args.len() == 1 && label_args[0].is_dir() {
        let dir = &label_args[0];
        scan_files
            .iter()
            .map(|scan| {
                let stem = scan
                    .file_stem()
                    .ok_or_else(|| CliError::usage(format!("bad scan path {}", scan.display())))?;
                let candidate = dir.join(stem).with_extension("label");
                if candidate.is_file() {
                    Ok(candidate)
                } else {
                    Err(CliError::usage(format!(
                        "no label file for {} (expected {})",
                        scan.display(),
                        candidate.display()
                    )))
                }
            })
            .collect()
    } else {
        let labels = collect_files(label_args, "label")?;
        if labels.len() != scan_files.len() {
            return Err(CliError::usage(format!(
                "{} scan file(s) but {} label file(s)",
                scan_files.len(),
                labels.len()
            )));
        }
        Ok(labels)
    }
}

pub fn load_ontology(config: &PipelineConfig) -> Result<OntologyMap, CliError> {
    match &config.ontology {
        Some(path) => Ok(OntologyMap::from_file(Path::new(path))?),
        None => Ok(OntologyMap::canonical()),
    }
}

/// Read a scan plus its labels, mapped through the ontology.
pub fn read_labeled_scan(
    scan_path: &Path,
    label_path: &Path,
    sensor: SensorKind,
    ontology: &OntologyMap,
) -> Result<Scan, CliError> {
    let scan = scan::read_scan(scan_path, sensor)?;
    let (scan, _) = scan::read_labels(label_path, scan, ontology)?;
    Ok(scan)
}

pub fn file_stem(path: &Path) -> Result<String, CliError> {
    Ok(path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| CliError::usage(format!("bad path {}", path.display())))?
        .to_string())
}
