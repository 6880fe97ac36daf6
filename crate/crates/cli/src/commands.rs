//! The six subcommands, wired over the library pipeline.

use std::path::{Path, PathBuf};

use lidar_reflect::calibration::{self, AlphaSource};
use lidar_reflect::config::{AlphaSourceKind, PipelineConfig};
use lidar_reflect::evaluation::{self, ConfusionMatrix, ScoringMode};
use lidar_reflect::geometry::{self, SpatialIndex};
use lidar_reflect::profiles;
use lidar_reflect::regressor::{self, FeatureVector, MlpModel};
use lidar_reflect::scan::{self, Scan, SensorKind, TerrainClass};
use lidar_reflect::synth;
use lidar_reflect::transfer::{self, TransferCurve};
use lidar_reflect::util::atomic_write;

use crate::args::*;
use crate::inputs;
use crate::CliError;

/// Incidence-angle source resolved from the config (loads the regressor
/// model when configured).
enum AlphaSourceHolder {
    Analytic,
    Regressor(MlpModel),
}

impl AlphaSourceHolder {
    fn from_config(config: &PipelineConfig) -> Result<AlphaSourceHolder, CliError> {
        match config.alpha_source {
            AlphaSourceKind::Analytic => Ok(AlphaSourceHolder::Analytic),
            AlphaSourceKind::Regressor => {
                let path = config.alpha_model.as_ref().expect("validated");
                Ok(AlphaSourceHolder::Regressor(MlpModel::load(Path::new(
                    path,
                ))?))
            }
        }
    }

    fn as_source(&self) -> AlphaSource<'_> {
        match self {
            AlphaSourceHolder::Analytic => AlphaSource::Analytic,
            AlphaSourceHolder::Regressor(model) => AlphaSource::Regressor(model),
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_run_config(dir: &Path, config: &PipelineConfig) -> Result<(), CliError> {
    atomic_write(&dir.join("run_config.txt"), config.header_block().as_bytes())?;
    Ok(())
}

// ── synth ────────────────────────────────────────────────────────────────

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let text = std::fs::read_to_string(&args.scene)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.scene.display())))?;
    let mut spec = synth::parse_scene_spec(&text)?;
    if let Some(seed) = args.override_seed {
        spec.config.seed = seed;
    }
    let (scan, truth) = synth::generate_scan(&spec.surfaces, &spec.config)?;

    ensure_out_dir(&args.out_dir)?;
    let base = args.out_dir.join(&args.name);
    scan::write_scan(&scan, &base.with_extension("bin"))?;
    scan::write_labels(scan.labels.as_ref().expect("synth scans are labeled"), &base.with_extension("label"))?;

    // Ground-truth sidecar with the full config header.
    let mut sidecar = config.header_block();
    sidecar.push_str(&format!("# scene_seed = {}\n", spec.config.seed));
    let mut body = Vec::new();
    synth::write_ground_truth(&truth, &base.with_extension("truth"))?;
    body.extend_from_slice(sidecar.as_bytes());
    body.extend_from_slice(&std::fs::read(base.with_extension("truth")).map_err(|e| {
        CliError::usage(format!("cannot reread sidecar: {e}"))
    })?);
    atomic_write(&base.with_extension("truth"), &body)?;

    println!(
        "synth: {} points ({} rays) -> {}.bin/.label/.truth",
        scan.len(),
        spec.config.grid.ray_count(),
        base.display()
    );
    Ok(())
}

// ── fit-alpha ────────────────────────────────────────────────────────────

struct LoadedScan {
    scan: Scan,
    normals: Vec<geometry::NormalEstimate>,
}

fn load_scans_with_normals(
    scan_args: &[PathBuf],
    label_args: &[PathBuf],
    sensor: SensorKind,
    config: &PipelineConfig,
) -> Result<Vec<LoadedScan>, CliError> {
    let ontology = inputs::load_ontology(config)?;
    let scan_files = inputs::collect_files(scan_args, "bin")?;
    let label_files = inputs::pair_labels(&scan_files, label_args)?;
    let mut out = Vec::new();
    for (scan_path, label_path) in scan_files.iter().zip(&label_files) {
        let scan = inputs::read_labeled_scan(scan_path, label_path, sensor, &ontology)?;
        if scan.is_empty() {
            continue;
        }
        let index = SpatialIndex::build(&scan)?;
        let normals = geometry::estimate_normals(&index, config.ball_radius, config.min_neighbors);
        out.push(LoadedScan { scan, normals });
    }
    if out.is_empty() {
        return Err(CliError::usage("every input scan was empty".into()));
    }
    Ok(out)
}

pub fn cmd_fit_alpha(args: &FitAlphaArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let gate = config.gate()?;
    let loaded = load_scans_with_normals(&args.scans, &args.labels, SensorKind::OusterRaw, &config)?;

    // Per class: per-range-bin maxima give the ground-truth angle; pair it
    // with the normal ⊕ beam features of the same points.
    let mut dataset: Vec<(FeatureVector, f64)> = Vec::new();
    let mut bin_tables: Vec<(TerrainClass, calibration::AlphaBinTable)> = Vec::new();
    for class in TerrainClass::SCORED {
        let mut samples: Vec<(f64, f64)> = Vec::new();
        let mut provenance: Vec<(usize, usize)> = Vec::new();
        for (scan_idx, ls) in loaded.iter().enumerate() {
            let labels = ls.scan.labels.as_ref().expect("labeled");
            for (point_idx, (p, &label)) in ls.scan.points.iter().zip(labels).enumerate() {
                if label != class || !gate.contains(p.range()) {
                    continue;
                }
                if ls.normals[point_idx].is_degenerate() {
                    continue;
                }
                samples.push((p.range(), p.intensity));
                provenance.push((scan_idx, point_idx));
            }
        }
        if samples.is_empty() {
            continue;
        }
        let (alphas, table) = calibration::extract_alpha_ground_truth(
            &samples,
            &gate,
            config.alpha_bin_width,
            config.robust_percentile,
            config.min_bin_count,
        )?;
        bin_tables.push((class, table));
        for (alpha, &(scan_idx, point_idx)) in alphas.iter().zip(&provenance) {
            let Some(alpha) = alpha else { continue };
            let ls = &loaded[scan_idx];
            let beam = geometry::beam_direction(&ls.scan.points[point_idx])?;
            dataset.push((
                FeatureVector::from_vectors(&ls.normals[point_idx].normal, &beam),
                *alpha,
            ));
        }
    }

    let (model, report) = regressor::train(&dataset, &regressor::DEFAULT_DIMS, &config.train_config())?;
    model.save(&args.out)?;
    println!(
        "fit-alpha: {} pairs, validation MAE {:.4} rad ({:.2} deg) -> {}",
        dataset.len(),
        report.validation_mae,
        report.validation_mae.to_degrees(),
        args.out.display()
    );

    if let Some(report_path) = &args.report {
        let mut text = config.header_block();
        text.push_str(&format!("pairs = {}\n", dataset.len()));
        text.push_str(&format!("train_count = {}\n", report.train_count));
        text.push_str(&format!("validation_count = {}\n", report.validation_count));
        text.push_str(&format!("validation_mae = {}\n", report.validation_mae));
        for (epoch, loss) in report.epoch_losses.iter().enumerate() {
            text.push_str(&format!("epoch {epoch} loss {loss}\n"));
        }
        for (class, table) in &bin_tables {
            text.push_str(&format!("[bins {class}]\n"));
            text.push_str(&table.to_table_string());
        }
        atomic_write(report_path, text.as_bytes())?;
    }
    Ok(())
}

// ── profile ──────────────────────────────────────────────────────────────

fn calibrated_class_values(
    loaded: &[LoadedScan],
    config: &PipelineConfig,
    alpha: &AlphaSourceHolder,
) -> Result<Vec<(TerrainClass, f64)>, CliError> {
    let settings = config.calibration_settings()?;
    let mut values = Vec::new();
    for ls in loaded {
        let cal = calibration::calibrate_scan(&ls.scan, &ls.normals, &settings, alpha.as_source())?;
        let labels = ls.scan.labels.as_ref().expect("labeled");
        values.extend(
            cal.points
                .iter()
                .map(|cp| (labels[cp.index], cp.calibrated_intensity)),
        );
    }
    Ok(values)
}

pub fn cmd_profile(args: &ProfileArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let alpha = AlphaSourceHolder::from_config(&config)?;
    let loaded = load_scans_with_normals(&args.scans, &args.labels, SensorKind::OusterRaw, &config)?;
    let values = calibrated_class_values(&loaded, &config, &alpha)?;
    let set = profiles::build_profiles(&values, config.min_support, &config)?;
    atomic_write(&args.out, profiles::profiles_to_document(&set).as_bytes())?;
    for p in &set.profiles {
        println!(
            "profile: {} mode {:.3} support {} iqr {:.3}",
            p.class, p.mode, p.support, p.spread
        );
    }
    for (class, count) in &set.excluded {
        println!("profile: {class} excluded ({count} points < min_support {})", config.min_support);
    }
    println!("profile: wrote {}", args.out.display());
    Ok(())
}

// ── segment ──────────────────────────────────────────────────────────────

pub fn cmd_segment(args: &SegmentArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let alpha = AlphaSourceHolder::from_config(&config)?;
    let sensor: SensorKind = args.sensor.parse()?;

    let doc = std::fs::read_to_string(&args.profiles)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", args.profiles.display())))?;
    let profile_set = profiles::profiles_from_document(&doc)?;

    let curve = match (&args.curve, sensor) {
        (Some(path), _) => Some(TransferCurve::load(path)?),
        (None, SensorKind::VelodynePreprocessed) => {
            return Err(CliError::usage(
                "preprocessed (velodyne) scans need a transfer curve: run `lidar-reflect \
                 convert-velodyne` first or pass --curve"
                    .into(),
            ));
        }
        (None, SensorKind::OusterRaw) => None,
    };

    let scan_files = inputs::collect_files(&args.scans, "bin")?;
    ensure_out_dir(&args.out_dir)?;
    write_run_config(&args.out_dir, &config)?;

    let mut written = 0usize;
    for scan_path in &scan_files {
        let scan = scan::read_scan(scan_path, sensor)?;
        let n = scan.len();
        let labels = if n == 0 {
            Vec::new()
        } else {
            match (&curve, sensor) {
                (Some(curve), SensorKind::VelodynePreprocessed) => {
                    let survivors: Vec<usize> = scan
                        .points
                        .iter()
                        .enumerate()
                        .filter(|(_, p)| (curve.domain.0..=curve.domain.1).contains(&p.range()))
                        .map(|(i, _)| i)
                        .collect();
                    let converted = transfer::convert_velodyne(&scan, curve)?;
                    let prediction = profiles::classify_scan(
                        &converted.scan,
                        &profile_set,
                        &config,
                        alpha.as_source(),
                    )?;
                    let mut full = vec![TerrainClass::Void; n];
                    for (label, idx) in prediction.labels.iter().zip(&survivors) {
                        full[*idx] = *label;
                    }
                    full
                }
                _ => {
                    profiles::classify_scan(&scan, &profile_set, &config, alpha.as_source())?
                        .labels
                }
            }
        };
        let out = args.out_dir.join(inputs::file_stem(scan_path)?).with_extension("label");
        scan::write_labels(&labels, &out)?;
        written += 1;
    }
    println!("segment: wrote {written} label file(s) to {}", args.out_dir.display());
    Ok(())
}

// ── convert-velodyne ─────────────────────────────────────────────────────

fn fit_curve_from_pairs(args: &ConvertArgs, config: &PipelineConfig) -> Result<TransferCurve, CliError> {
    if args.ouster_scans.is_empty() || args.ouster_labels.is_empty() || args.velodyne_labels.is_empty()
    {
        return Err(CliError::usage(
            "fitting a transfer curve needs labeled scan sets from both sensors \
             (--ouster-scans/--ouster-labels/--velodyne-labels) or a saved --curve"
                .into(),
        ));
    }
    let gate = config.gate()?;
    let ontology = inputs::load_ontology(config)?;

    let read_set = |scan_args: &[PathBuf], label_args: &[PathBuf], sensor| -> Result<Vec<Scan>, CliError> {
        let scan_files = inputs::collect_files(scan_args, "bin")?;
        let label_files = inputs::pair_labels(&scan_files, label_args)?;
        scan_files
            .iter()
            .zip(&label_files)
            .map(|(s, l)| inputs::read_labeled_scan(s, l, sensor, &ontology))
            .collect()
    };
    let ouster = read_set(&args.ouster_scans, &args.ouster_labels, SensorKind::OusterRaw)?;
    let velodyne = read_set(
        &args.velodyne_scans,
        &args.velodyne_labels,
        SensorKind::VelodynePreprocessed,
    )?;

    let mut q_series = Vec::new();
    for class in TerrainClass::SCORED {
        let o_curve = transfer::build_max_curve(
            &ouster,
            class,
            &gate,
            config.transfer_bin_width,
            config.robust_percentile,
            config.min_bin_count,
        );
        let v_curve = transfer::build_max_curve(
            &velodyne,
            class,
            &gate,
            config.transfer_bin_width,
            config.robust_percentile,
            config.min_bin_count,
        );
        match (o_curve, v_curve) {
            (Ok(o), Ok(v)) => q_series.push(transfer::compute_q(&o, &v)?),
            (Err(lidar_reflect::Error::InsufficientData(_)), _)
            | (_, Err(lidar_reflect::Error::InsufficientData(_))) => continue,
            (Err(e), _) | (_, Err(e)) => return Err(e.into()),
        }
    }
    if q_series.is_empty() {
        return Err(CliError::from(lidar_reflect::Error::InsufficientData(
            "no class yields usable max-intensity curves on both sensors".into(),
        )));
    }
    if q_series.len() >= 2 {
        for pair in transfer::check_class_independence(&q_series)? {
            println!(
                "convert-velodyne: Q ratio {}/{}: mean {:.4}, max |dev| {:.4} over {} bins",
                pair.class_a, pair.class_b, pair.mean_ratio, pair.max_abs_deviation, pair.shared_bins
            );
        }
    }
    // Curve domain = actual data coverage: anchors sit at bin low edges,
    // so the last bin's data extends one bin width past the last anchor.
    // Declaring the whole gate instead would let the positivity check and
    // conversion wander into ranges no sample constrains.
    let pooled = transfer::pool_q(&q_series);
    let lo = pooled
        .samples
        .iter()
        .map(|s| s.range)
        .fold(f64::INFINITY, f64::min);
    let hi = pooled
        .samples
        .iter()
        .map(|s| s.range)
        .fold(f64::NEG_INFINITY, f64::max)
        + config.transfer_bin_width;
    let curve = transfer::fit_transfer_over(&pooled, config.transfer_degree, Some((lo, hi)))?;
    println!(
        "convert-velodyne: fitted degree-{} curve, relative residual RMS {:.4}",
        curve.degree, curve.residual_rms
    );
    Ok(curve)
}

pub fn cmd_convert_velodyne(args: &ConvertArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    ensure_out_dir(&args.out_dir)?;

    let curve = match &args.curve {
        Some(path) => TransferCurve::load(path)?,
        None => {
            let curve = fit_curve_from_pairs(args, &config)?;
            let out = args
                .curve_out
                .clone()
                .unwrap_or_else(|| args.out_dir.join("transfer-curve.txt"));
            curve.save(&out, &config.header_block())?;
            println!("convert-velodyne: wrote curve to {}", out.display());
            curve
        }
    };

    let scan_files = inputs::collect_files(&args.velodyne_scans, "bin")?;
    let label_files = if args.velodyne_labels.is_empty() {
        None
    } else {
        Some(inputs::pair_labels(&scan_files, &args.velodyne_labels)?)
    };
    write_run_config(&args.out_dir, &config)?;

    let ontology = inputs::load_ontology(&config)?;
    let mut dropped_total = 0usize;
    for (i, scan_path) in scan_files.iter().enumerate() {
        let scan = match &label_files {
            Some(labels) => inputs::read_labeled_scan(
                scan_path,
                &labels[i],
                SensorKind::VelodynePreprocessed,
                &ontology,
            )?,
            None => scan::read_scan(scan_path, SensorKind::VelodynePreprocessed)?,
        };
        let converted = transfer::convert_velodyne(&scan, &curve)?;
        dropped_total += converted.dropped_out_of_domain;
        let stem = inputs::file_stem(scan_path)?;
        scan::write_scan(&converted.scan, &args.out_dir.join(&stem).with_extension("bin"))?;
        if let Some(labels) = &converted.scan.labels {
            scan::write_labels(labels, &args.out_dir.join(&stem).with_extension("label"))?;
        }
    }
    println!(
        "convert-velodyne: converted {} scan(s) ({dropped_total} point(s) outside the curve domain dropped)",
        scan_files.len()
    );
    Ok(())
}

// ── evaluate ─────────────────────────────────────────────────────────────

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let config = args.config.resolve()?;
    let mode = match args.scoring.as_str() {
        "penalize-abstention" => ScoringMode::PenalizeAbstention,
        "in-gate-only" => ScoringMode::InGateOnly,
        other => {
            return Err(CliError::usage(format!(
                "unknown scoring mode `{other}` (use penalize-abstention or in-gate-only)"
            )))
        }
    };
    let gt_files = inputs::collect_files(&args.gt_labels, "label")?;
    let pred_files = inputs::collect_files(&args.pred_labels, "label")?;
    if gt_files.len() != pred_files.len() {
        return Err(CliError::usage(format!(
            "{} ground-truth file(s) vs {} prediction file(s)",
            gt_files.len(),
            pred_files.len()
        )));
    }

    let gt_ontology = inputs::load_ontology(&config)?;
    let pred_ontology = match &args.pred_ontology {
        Some(path) => scan::OntologyMap::from_file(path)?,
        None => scan::OntologyMap::canonical(),
    };

    let mut cm = ConfusionMatrix::new(mode);
    for (gt_path, pred_path) in gt_files.iter().zip(&pred_files) {
        let gt: Vec<TerrainClass> = scan::read_label_ids(gt_path)?
            .into_iter()
            .map(|id| gt_ontology.lookup(id).0)
            .collect();
        let pred: Vec<TerrainClass> = scan::read_label_ids(pred_path)?
            .into_iter()
            .map(|id| pred_ontology.lookup(id).0)
            .collect();
        cm.accumulate(&gt, &pred)?;
    }

    let report = evaluation::iou(&cm)?;
    let table = evaluation::format_table(&report, "calibrated-intensity");
    print!("{table}");
    println!(
        "scored {} | void ground truth {} | gated skipped {}",
        report.scored, report.void_ground_truth, report.gated_skipped
    );

    if let Some(out) = &args.out {
        let mut text = table;
        text.push('\n');
        text.push_str("[values]\n");
        text.push_str(&evaluation::format_key_values(&report));
        text.push_str(&config.header_block());
        atomic_write(out, text.as_bytes())?;
        println!("evaluate: wrote {}", out.display());
    }
    Ok(())
}
