//! End-to-end experiment driver: cohort generation, four-start-angle
//! simulation, reference dose extraction, scout rendering, k-fold
//! cross-validation, and report emission.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dosimetry::{
    apply_body_mask, average_dose_maps, error_metrics, organ_dose_vector, water_equivalent_diameter,
    ErrorReport, OrganDoseVector,
};
use crate::error::{Error, Result};
use crate::io;
use crate::phantom::{
    generate_synthetic_phantom, torso_z_interval, CohortSpec, OrganLabel, T_AIR,
};
use crate::predictor::{
    predict, train, training_log_csv, ChannelSelection, DoseBounds, PredictorConfig, TrainConfig,
};
use crate::rng::{derive_seed, rng_for};
use crate::scout::{
    compose_input, render_scout, scan_range_channel, ModelInput, ScoutLayout, ScoutNormBounds,
    ScoutView,
};
use crate::source::{ScannerGeometry, SourceModel};
use crate::stats::r_squared_identity;
use crate::transport::{
    calibrate_dose, simulate_scan, TransportOptions, CALIBRATION_MGY_PER_RAW_100MAS,
};

/// Bump when the on-disk artifact layout changes; part of the resume hash.
const DATA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationSection {
    pub histories_per_angle: u64,
    pub start_angles_deg: Vec<f64>,
    pub rayleigh: bool,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            histories_per_angle: 2_000_000,
            start_angles_deg: vec![0.0, 90.0, 180.0, 270.0],
            rayleigh: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub folds: usize,
    pub seed: u64,
    pub augment: bool,
    /// Also train the lateral-only and frontal-only single-view baselines.
    pub ablations: bool,
    pub squared_loss: bool,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            learning_rate: 2e-4,
            epochs: 150,
            minibatch: 16,
            folds: 5,
            seed: 0,
            augment: true,
            ablations: true,
            squared_loss: false,
        }
    }
}

/// Full experiment description, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cohort: CohortSpec,
    pub geometry: ScannerGeometry,
    pub simulation: SimulationSection,
    pub training: TrainingSection,
    pub output_dir: PathBuf,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cohort: CohortSpec::default(),
            geometry: ScannerGeometry::default(),
            simulation: SimulationSection::default(),
            training: TrainingSection::default(),
            output_dir: PathBuf::from("voxeldose-out"),
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.cohort.validate()?;
        self.geometry.validate()?;
        if self.simulation.histories_per_angle == 0 {
            return Err(Error::Config("histories_per_angle must be >= 1".into()));
        }
        let angles = &self.simulation.start_angles_deg;
        if angles.is_empty() {
            return Err(Error::Config("need at least one start angle".into()));
        }
        for (i, a) in angles.iter().enumerate() {
            if !(0.0..360.0).contains(a) {
                return Err(Error::Config(format!("start angle {a} outside [0, 360)")));
            }
            if angles[..i].iter().any(|b| (b - a).abs() < 1e-9) {
                return Err(Error::Config(format!("duplicate start angle {a}")));
            }
        }
        if self.training.folds < 2 {
            return Err(Error::Config("fold count must be >= 2".into()));
        }
        if self.cohort.count < self.training.folds {
            return Err(Error::Config(
                "cohort smaller than the fold count".into(),
            ));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Hash of everything that determines patient `index`'s artifacts.
    fn record_hash(&self, index: usize) -> String {
        let mut h = Sha256::new();
        h.update(DATA_VERSION.to_le_bytes());
        h.update(serde_json::to_vec(&self.cohort).expect("serializable"));
        h.update(serde_json::to_vec(&self.geometry).expect("serializable"));
        h.update(serde_json::to_vec(&self.simulation).expect("serializable"));
        h.update((index as u64).to_le_bytes());
        hex(&h.finalize())
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// One dataset row binding a phantom's artifacts to its reference doses.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReferenceRecord {
    pub id: String,
    pub index: usize,
    pub status: String,
    pub hash: String,
    pub phantom: String,
    pub masks_dir: String,
    pub scout_lateral: String,
    pub scout_frontal: String,
    pub dose: String,
    pub scan_range_mm: (f64, f64),
    pub doses: OrganDoseVector,
    pub dose_sem: [f64; 7],
    pub d_w_cm: f64,
}

impl ReferenceRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct BuildStats {
    pub computed: usize,
    pub skipped: usize,
    pub failed: usize,
}

fn manifest_path(out_dir: &Path) -> PathBuf {
    out_dir.join("manifest.jsonl")
}

fn load_manifest(path: &Path) -> Result<Vec<ReferenceRecord>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = io::read_text(path)?;
    let mut records = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ReferenceRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(path, format!("manifest line: {e}")))?;
        records.push(r);
    }
    Ok(records)
}

fn write_manifest(path: &Path, records: &[ReferenceRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Numeric(format!("manifest: {e}")))?,
        );
        text.push('\n');
    }
    io::write_text(path, &text)
}

/// All artifacts for one patient, simulated, reduced, and written to disk.
fn build_one_record(cfg: &ExperimentConfig, index: usize) -> Result<ReferenceRecord> {
    let id = format!("p{index:04}");
    let out = &cfg.output_dir;
    let (phantom, masks) = generate_synthetic_phantom(&cfg.cohort, index)?;

    // scan range: the torso extent plus random end margins
    let (ez_lo, ez_hi) = torso_z_interval(&phantom);
    let (_, _, ez) = phantom.extent_mm();
    let mut range_rng = rng_for(cfg.cohort.seed, "scan-range", index as u64);
    use rand::Rng;
    let z_start = (ez_lo - range_rng.gen_range(2.0..14.0)).max(0.0);
    let z_end = (ez_hi + range_rng.gen_range(2.0..14.0)).min(ez);

    // one raw map per start angle, then the reference chain:
    // average -> calibrate -> mask -> per-organ means
    let source = SourceModel::default_for(&cfg.geometry)?;
    let options = TransportOptions {
        rayleigh: cfg.simulation.rayleigh,
        ..TransportOptions::default()
    };
    let mut raw_maps = Vec::with_capacity(cfg.simulation.start_angles_deg.len());
    for (ai, &angle) in cfg.simulation.start_angles_deg.iter().enumerate() {
        let mut geometry = cfg.geometry.clone();
        geometry.start_angle_deg = angle;
        let seed = derive_seed(cfg.cohort.seed, "scan", ((index as u64) << 8) | ai as u64);
        let (map, stats) = simulate_scan(
            &phantom,
            &geometry,
            &source,
            Some((z_start, z_end)),
            cfg.simulation.histories_per_angle,
            seed,
            &options,
        )?;
        if stats.conservation_error() > 1e-9 {
            return Err(Error::Invariant(format!(
                "energy conservation violated for {id} at angle {angle}: {}",
                stats.conservation_error()
            )));
        }
        raw_maps.push(map);
    }
    let averaged = average_dose_maps(&raw_maps)?;
    let calibrated = calibrate_dose(
        &averaged,
        CALIBRATION_MGY_PER_RAW_100MAS,
        cfg.geometry.tube_current_mas,
    )?;
    let masked = apply_body_mask(&calibrated, &phantom, T_AIR)?;
    let (doses, dose_sem) = organ_dose_vector(&masked, &masks, &phantom)?;
    let d_w_cm = water_equivalent_diameter(&phantom, Some((z_start, z_end)))?;

    // scouts
    let layout = ScoutLayout::standard_for(&phantom)?;
    let lateral = render_scout(&phantom, ScoutView::Lateral, &layout)?;
    let frontal = render_scout(&phantom, ScoutView::Frontal, &layout)?;

    // artifacts
    let phantom_rel = format!("phantoms/{id}.vox");
    let masks_rel = format!("masks/{id}");
    let lateral_rel = format!("scouts/{id}_lateral.img");
    let frontal_rel = format!("scouts/{id}_frontal.img");
    let dose_rel = format!("doses/{id}.dose");
    io::write_phantom(&out.join(&phantom_rel), &phantom)?;
    for label in OrganLabel::ALL {
        io::write_mask(
            &out.join(&masks_rel).join(format!("{}.mask", label.name())),
            masks.get(label),
            phantom.spacing,
            label.name(),
        )?;
    }
    io::write_mask(
        &out.join(&masks_rel).join("body.mask"),
        &masks.body,
        phantom.spacing,
        "body",
    )?;
    io::write_scout(&out.join(&lateral_rel), &lateral)?;
    io::write_scout(&out.join(&frontal_rel), &frontal)?;
    io::write_dose(&out.join(&dose_rel), &masked)?;

    Ok(ReferenceRecord {
        id,
        index,
        status: "ok".into(),
        hash: cfg.record_hash(index),
        phantom: phantom_rel,
        masks_dir: masks_rel,
        scout_lateral: lateral_rel,
        scout_frontal: frontal_rel,
        dose: dose_rel,
        scan_range_mm: (z_start, z_end),
        doses,
        dose_sem,
        d_w_cm,
    })
}

fn record_files_exist(out: &Path, r: &ReferenceRecord) -> bool {
    out.join(&r.phantom).exists()
        && out.join(&r.scout_lateral).exists()
        && out.join(&r.scout_frontal).exists()
        && out.join(&r.dose).exists()
        && out.join(&r.masks_dir).join("body.mask").exists()
}

/// Build (or resume) the reference dataset. Completed records whose hash and
/// files are intact are skipped; failures are recorded and the build
/// continues.
pub fn build_reference_dataset(
    cfg: &ExperimentConfig,
) -> Result<(Vec<ReferenceRecord>, BuildStats)> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let manifest = manifest_path(&cfg.output_dir);
    let existing = load_manifest(&manifest)?;
    let mut stats = BuildStats::default();

    let todo: Vec<usize> = (0..cfg.cohort.count)
        .filter(|&i| {
            let keep = existing.iter().any(|r| {
                r.index == i
                    && r.is_ok()
                    && r.hash == cfg.record_hash(i)
                    && record_files_exist(&cfg.output_dir, r)
            });
            if keep {
                stats.skipped += 1;
            }
            !keep
        })
        .collect();

    let built: Vec<(usize, Result<ReferenceRecord>)> = todo
        .par_iter()
        .map(|&i| (i, build_one_record(cfg, i)))
        .collect();

    let mut records: Vec<ReferenceRecord> = Vec::with_capacity(cfg.cohort.count);
    for i in 0..cfg.cohort.count {
        if let Some(r) = existing.iter().find(|r| {
            r.index == i
                && r.is_ok()
                && r.hash == cfg.record_hash(i)
                && record_files_exist(&cfg.output_dir, r)
        }) {
            records.push(r.clone());
            continue;
        }
        let (_, result) = built
            .iter()
            .find(|(j, _)| *j == i)
            .expect("every index is either kept or rebuilt");
        match result {
            Ok(r) => {
                stats.computed += 1;
                records.push(r.clone());
            }
            Err(e) => {
                stats.failed += 1;
                records.push(ReferenceRecord {
                    id: format!("p{i:04}"),
                    index: i,
                    status: format!("failed: {e}"),
                    hash: cfg.record_hash(i),
                    phantom: String::new(),
                    masks_dir: String::new(),
                    scout_lateral: String::new(),
                    scout_frontal: String::new(),
                    dose: String::new(),
                    scan_range_mm: (0.0, 0.0),
                    doses: OrganDoseVector { values: [0.0; 7] },
                    dose_sem: [0.0; 7],
                    d_w_cm: 0.0,
                });
            }
        }
    }
    write_manifest(&manifest, &records)?;
    Ok((records, stats))
}

/// Cross-validation outcome for one channel-selection variant.
#[derive(Debug, Serialize)]
pub struct VariantOutcome {
    pub name: String,
    pub report: ErrorReport,
    /// R-squared against the identity line per label.
    pub r2: [f64; 7],
    /// (patient id, reference, prediction), in record order.
    pub predictions: Vec<(String, OrganDoseVector, OrganDoseVector)>,
    /// Per-fold dose normalization bounds (train split only).
    pub fold_bounds: Vec<DoseBounds>,
    pub mean_inference_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct CvOutcome {
    pub variants: Vec<VariantOutcome>,
}

impl CvOutcome {
    pub fn primary(&self) -> &VariantOutcome {
        &self.variants[0]
    }
}

/// Cross-validate on in-memory inputs. `fold_of[i]` assigns each sample to a
/// held-out fold; for each fold a model is trained on the remaining samples
/// (dose bounds from that training split only) and evaluated on the fold.
#[allow(clippy::too_many_arguments)]
pub fn cv_on_inputs(
    ids: &[String],
    inputs: &[ModelInput],
    targets: &[OrganDoseVector],
    fold_of: &[usize],
    k_folds: usize,
    model_config: &PredictorConfig,
    training: &TrainingSection,
    variant: ChannelSelection,
    artifacts_dir: Option<&Path>,
) -> Result<VariantOutcome> {
    let n = inputs.len();
    if n == 0 || targets.len() != n || fold_of.len() != n || ids.len() != n {
        return Err(Error::Config("cross-validation inputs mismatch".into()));
    }
    for t in targets {
        t.validate().map_err(|e| {
            Error::Config(format!("fold has missing or invalid labels: {e}"))
        })?;
    }
    let mut predictions: Vec<Option<OrganDoseVector>> = vec![None; n];
    let mut fold_bounds = Vec::with_capacity(k_folds);
    let mut inference_ms = Vec::new();
    let variant_idx = match variant {
        ChannelSelection::All => 0u64,
        ChannelSelection::LateralOnly => 1,
        ChannelSelection::FrontalOnly => 2,
    };
    for fold in 0..k_folds {
        let train_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let test_idx: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::Config(format!("fold {fold} is empty")));
        }
        let train_inputs: Vec<ModelInput> = train_idx.iter().map(|&i| inputs[i].clone()).collect();
        let train_targets: Vec<OrganDoseVector> = train_idx.iter().map(|&i| targets[i]).collect();
        let cfg = TrainConfig {
            learning_rate: training.learning_rate,
            epochs: training.epochs,
            minibatch: training.minibatch,
            augment: training.augment,
            squared_loss: training.squared_loss,
            seed: derive_seed(training.seed, "fold", variant_idx << 32 | fold as u64),
            channels: variant,
            ..TrainConfig::default()
        };
        let mut model_cfg = model_config.clone();
        model_cfg.channels = variant;
        let val_inputs: Vec<ModelInput> = test_idx.iter().map(|&i| inputs[i].clone()).collect();
        let val_targets: Vec<OrganDoseVector> = test_idx.iter().map(|&i| targets[i]).collect();
        let (model, logs) = train(
            &train_inputs,
            &train_targets,
            model_cfg,
            &cfg,
            Some((&val_inputs, &val_targets)),
        )?;
        fold_bounds.push(model.dose_bounds.expect("set by training"));
        for &i in &test_idx {
            let (pred, took) = predict(&model, &inputs[i])?;
            predictions[i] = Some(pred);
            inference_ms.push(took.as_secs_f64() * 1e3);
        }
        if let Some(dir) = artifacts_dir {
            let tag = format!("{}_fold{fold}", variant.tag());
            model.save(&dir.join(format!("model_{tag}.ckpt")))?;
            io::write_text(&dir.join(format!("train_log_{tag}.csv")), &training_log_csv(&logs))?;
        }
    }
    let predictions: Vec<OrganDoseVector> = predictions
        .into_iter()
        .map(|p| p.expect("every sample predicted exactly once"))
        .collect();
    let report = error_metrics(targets, &predictions)?;
    let mut r2 = [0.0; 7];
    for k in 0..7 {
        let refs: Vec<f64> = targets.iter().map(|t| t.values[k]).collect();
        let preds: Vec<f64> = predictions.iter().map(|p| p.values[k]).collect();
        r2[k] = r_squared_identity(&refs, &preds);
    }
    Ok(VariantOutcome {
        name: variant.tag().to_string(),
        report,
        r2,
        predictions: ids
            .iter()
            .cloned()
            .zip(targets.iter().copied())
            .zip(predictions)
            .map(|((id, r), p)| (id, r, p))
            .collect(),
        fold_bounds,
        mean_inference_ms: if inference_ms.is_empty() {
            0.0
        } else {
            inference_ms.iter().sum::<f64>() / inference_ms.len() as f64
        },
    })
}

/// Compose the model inputs for a record set: loads scouts, derives
/// cohort-level scout normalization bounds, and builds the range channel from
/// each record's scan range.
pub fn compose_dataset(
    out_dir: &Path,
    records: &[ReferenceRecord],
) -> Result<(Vec<String>, Vec<ModelInput>, Vec<OrganDoseVector>)> {
    let ok: Vec<&ReferenceRecord> = records.iter().filter(|r| r.is_ok()).collect();
    if ok.is_empty() {
        return Err(Error::Config("no successful records to train on".into()));
    }
    let mut laterals = Vec::with_capacity(ok.len());
    let mut frontals = Vec::with_capacity(ok.len());
    for r in &ok {
        laterals.push(io::read_scout(&out_dir.join(&r.scout_lateral))?);
        frontals.push(io::read_scout(&out_dir.join(&r.scout_frontal))?);
    }
    let bounds = ScoutNormBounds::from_images(laterals.iter().chain(frontals.iter()))?;
    let mut ids = Vec::with_capacity(ok.len());
    let mut inputs = Vec::with_capacity(ok.len());
    let mut targets = Vec::with_capacity(ok.len());
    for (i, r) in ok.iter().enumerate() {
        let layout = laterals[i].layout;
        let range = scan_range_channel(r.scan_range_mm.0, r.scan_range_mm.1, &layout)?;
        inputs.push(compose_input(&laterals[i], &frontals[i], &range, bounds)?);
        ids.push(r.id.clone());
        targets.push(r.doses);
    }
    Ok((ids, inputs, targets))
}

/// Deterministic fold assignment: seeded shuffle striped across `k` folds.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, "fold-shuffle", 0);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let mut fold_of = vec![0usize; n];
    for (pos, &idx) in order.iter().enumerate() {
        fold_of[idx] = pos % k;
    }
    fold_of
}

/// Run k-fold cross-validation over the record set, including single-view
/// ablations when enabled.
pub fn cross_validate(
    cfg: &ExperimentConfig,
    records: &[ReferenceRecord],
) -> Result<CvOutcome> {
    let (ids, inputs, targets) = compose_dataset(&cfg.output_dir, records)?;
    let n = inputs.len();
    if n < cfg.training.folds {
        return Err(Error::Config("fewer records than folds".into()));
    }
    let fold_of = assign_folds(n, cfg.training.folds, cfg.training.seed);
    let model_config = PredictorConfig {
        input_rows: inputs[0].rows,
        input_cols: inputs[0].cols,
        ..PredictorConfig::default()
    };
    let models_dir = cfg.output_dir.join("models");
    let mut variants = vec![ChannelSelection::All];
    if cfg.training.ablations {
        variants.push(ChannelSelection::LateralOnly);
        variants.push(ChannelSelection::FrontalOnly);
    }
    let mut outcomes = Vec::new();
    for v in variants {
        outcomes.push(cv_on_inputs(
            &ids,
            &inputs,
            &targets,
            &fold_of,
            cfg.training.folds,
            &model_config,
            &cfg.training,
            v,
            Some(&models_dir),
        )?);
    }
    Ok(CvOutcome { variants: outcomes })
}

/// Write the evaluation reports: JSON summary, reference/prediction CSVs, and
/// per-label scatter SVGs with the identity line and R-squared annotation.
pub fn emit_report(cfg: &ExperimentConfig, cv: &CvOutcome) -> Result<()> {
    let dir = cfg.output_dir.join("report");
    let json = serde_json::to_string_pretty(cv)
        .map_err(|e| Error::Numeric(format!("report json: {e}")))?;
    io::write_text(&dir.join("report.json"), &json)?;

    for v in &cv.variants {
        let refs: Vec<(String, OrganDoseVector)> = v
            .predictions
            .iter()
            .map(|(id, r, _)| (id.clone(), *r))
            .collect();
        let preds: Vec<(String, OrganDoseVector)> = v
            .predictions
            .iter()
            .map(|(id, _, p)| (id.clone(), *p))
            .collect();
        io::write_organ_dose_csv(&dir.join(format!("references_{}.csv", v.name)), &refs)?;
        io::write_organ_dose_csv(&dir.join(format!("predictions_{}.csv", v.name)), &preds)?;
    }

    let primary = cv.primary();
    for (k, label) in crate::phantom::LABEL_NAMES.iter().enumerate() {
        let points: Vec<(f64, f64)> = primary
            .predictions
            .iter()
            .map(|(_, r, p)| (r.values[k], p.values[k]))
            .collect();
        let svg = scatter_svg(&points, label, primary.r2[k]);
        io::write_text(&dir.join(format!("scatter_{label}.svg")), &svg)?;
    }
    Ok(())
}

/// Minimal scatter plot: points, identity line, R-squared annotation.
pub fn scatter_svg(points: &[(f64, f64)], label: &str, r2: f64) -> String {
    let (w, h, m) = (420.0, 420.0, 50.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &(x, y) in points {
        lo = lo.min(x).min(y);
        hi = hi.max(x).max(y);
    }
    if !lo.is_finite() || !(hi > lo) {
        lo = 0.0;
        hi = 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| m + (v - lo) / (hi - lo) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (v - lo) / (hi - lo) * (h - 2.0 * m);
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
    s.push_str(&format!(
        "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - m,
        w - m,
        h - m
    ));
    s.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - m
    ));
    // identity line
    s.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n",
        sx(lo),
        sy(lo),
        sx(hi),
        sy(hi)
    ));
    for &(x, y) in points {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\" fill-opacity=\"0.7\"/>\n",
            sx(x),
            sy(y)
        ));
    }
    s.push_str(&format!(
        "<text x=\"{m}\" y=\"28\" font-family=\"sans-serif\" font-size=\"15\">{label}: R&#178; = {r2:.3}</text>\n"
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\">reference dose (mGy)</text>\n",
        w / 2.0 - 60.0,
        h - 12.0
    ));
    s.push_str("</svg>\n");
    s
}

/// Summary of a full experiment run.
#[derive(Debug, Serialize)]
pub struct ExperimentSummary {
    pub build: BuildStats,
    pub records: usize,
    pub failed: usize,
}

/// Build the dataset, cross-validate, and emit reports. Returns the summary
/// plus the CV outcome; a nonzero `failed` count signals a partial dataset.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(ExperimentSummary, CvOutcome)> {
    cfg.validate()?;
    let (records, build) = build_reference_dataset(cfg)?;
    let failed = records.iter().filter(|r| !r.is_ok()).count();
    let cv = cross_validate(cfg, &records)?;
    emit_report(cfg, &cv)?;
    Ok((
        ExperimentSummary {
            build,
            records: records.len(),
            failed,
        },
        cv,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::tests::{tiny_config, tiny_input};

    fn small_experiment(dir: &Path, count: usize, histories: u64) -> ExperimentConfig {
        ExperimentConfig {
            cohort: CohortSpec {
                count,
                size_range_cm: (21.0, 28.0),
                shape_jitter: 1.0,
                seed: 404,
            },
            simulation: SimulationSection {
                histories_per_angle: histories,
                ..SimulationSection::default()
            },
            training: TrainingSection {
                folds: 2,
                epochs: 2,
                ablations: false,
                ..TrainingSection::default()
            },
            output_dir: dir.to_path_buf(),
            threads: 0,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn manifest_structure_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_experiment(dir.path(), 2, 20_000);
        cfg.training.folds = 2;
        let (records, stats) = build_reference_dataset(&cfg).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(stats.computed, 2);
        assert_eq!(stats.failed, 0);
        for r in &records {
            assert!(r.is_ok());
            assert!(r.doses.values.iter().all(|&v| v > 0.0));
            assert!(record_files_exist(dir.path(), r));
        }
        // rerun without changes: zero recomputation
        let manifest_before = io::read_text(&manifest_path(dir.path())).unwrap();
        let (_, stats2) = build_reference_dataset(&cfg).unwrap();
        assert_eq!(stats2.computed, 0);
        assert_eq!(stats2.skipped, 2);
        let manifest_after = io::read_text(&manifest_path(dir.path())).unwrap();
        for (a, b) in manifest_before.lines().zip(manifest_after.lines()) {
            assert_eq!(a, b);
        }
        assert_eq!(manifest_before, manifest_after);

        // resume after an interrupted build reproduces the same manifest
        let truncated: String = manifest_before.lines().take(1).map(|l| format!("{l}\n")).collect();
        io::write_text(&manifest_path(dir.path()), &truncated).unwrap();
        let (records3, stats3) = build_reference_dataset(&cfg).unwrap();
        assert_eq!(stats3.skipped, 1);
        assert_eq!(stats3.computed, 1);
        assert_eq!(records3, records);
        let manifest_resumed = io::read_text(&manifest_path(dir.path())).unwrap();
        assert_eq!(manifest_resumed, manifest_before);
    }

    #[test]
    fn organ_doses_lie_within_masked_map_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_experiment(dir.path(), 2, 20_000);
        let (records, _) = build_reference_dataset(&cfg).unwrap();
        let r = &records[0];
        let dose = io::read_dose(&dir.path().join(&r.dose)).unwrap();
        for (k, label) in OrganLabel::ALL.iter().enumerate() {
            let (mask, _) = io::read_mask(
                &dir.path().join(&r.masks_dir).join(format!("{}.mask", label.name())),
            )
            .unwrap();
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (i, &m) in mask.as_slice().iter().enumerate() {
                if m != 0 {
                    lo = lo.min(dose.dose[i]);
                    hi = hi.max(dose.dose[i]);
                }
            }
            let v = r.doses.values[k];
            assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{label:?}: {v} not in [{lo}, {hi}]");
        }
    }

    #[test]
    fn fold_assignment_partitions_evenly() {
        let folds = assign_folds(10, 3, 7);
        assert_eq!(folds.len(), 10);
        let mut counts = [0usize; 3];
        for &f in &folds {
            counts[f] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 10);
        assert!(counts.iter().all(|&c| c >= 3));
        // deterministic
        assert_eq!(folds, assign_folds(10, 3, 7));
    }

    fn toy_cv_data(n: usize) -> (Vec<String>, Vec<ModelInput>, Vec<OrganDoseVector>) {
        let ids = (0..n).map(|i| format!("t{i}")).collect();
        let inputs: Vec<ModelInput> = (0..n as u64).map(tiny_input).collect();
        let targets = inputs
            .iter()
            .map(|x| {
                let mean: f32 = x.channels[0].iter().sum::<f32>() / x.channels[0].len() as f32;
                OrganDoseVector {
                    values: std::array::from_fn(|k| 4.0 + k as f64 + 3.0 * mean as f64),
                }
            })
            .collect();
        (ids, inputs, targets)
    }

    #[test]
    fn every_sample_predicted_exactly_once() {
        let (ids, inputs, targets) = toy_cv_data(4);
        let fold_of = assign_folds(4, 2, 1);
        let training = TrainingSection {
            epochs: 3,
            minibatch: 2,
            augment: false,
            ..TrainingSection::default()
        };
        let out = cv_on_inputs(
            &ids,
            &inputs,
            &targets,
            &fold_of,
            2,
            &tiny_config(),
            &training,
            ChannelSelection::All,
            None,
        )
        .unwrap();
        assert_eq!(out.predictions.len(), 4);
        let mut seen: Vec<&str> = out.predictions.iter().map(|(id, _, _)| id.as_str()).collect();
        seen.sort_unstable();
        assert_eq!(seen, vec!["t0", "t1", "t2", "t3"]);
        assert_eq!(out.fold_bounds.len(), 2);
    }

    #[test]
    fn deliberate_leak_reaches_near_zero_error() {
        // duplicate every sample so each held-out input also sits in the
        // training split; a memorizing model must then predict it almost
        // exactly
        let (_, inputs, targets) = toy_cv_data(2);
        let ids = vec!["a".into(), "a2".into(), "b".into(), "b2".into()];
        let inputs = vec![inputs[0].clone(), inputs[0].clone(), inputs[1].clone(), inputs[1].clone()];
        let targets = vec![targets[0], targets[0], targets[1], targets[1]];
        let fold_of = vec![0, 1, 0, 1];
        let training = TrainingSection {
            epochs: 400,
            minibatch: 2,
            learning_rate: 3e-3,
            augment: false,
            ..TrainingSection::default()
        };
        let out = cv_on_inputs(
            &ids,
            &inputs,
            &targets,
            &fold_of,
            2,
            &tiny_config(),
            &training,
            ChannelSelection::All,
            None,
        )
        .unwrap();
        let mean_pe = out.report.mean_pe_over_labels();
        assert!(mean_pe < 3.0, "leaked CV should memorize, PE = {mean_pe}%");
    }

    #[test]
    fn fold_bounds_come_from_training_split_only() {
        let (ids, inputs, targets) = toy_cv_data(6);
        let fold_of = assign_folds(6, 2, 3);
        let training = TrainingSection {
            epochs: 2,
            minibatch: 2,
            augment: false,
            ..TrainingSection::default()
        };
        let out = cv_on_inputs(
            &ids,
            &inputs,
            &targets,
            &fold_of,
            2,
            &tiny_config(),
            &training,
            ChannelSelection::All,
            None,
        )
        .unwrap();
        for fold in 0..2 {
            let train_targets: Vec<OrganDoseVector> = (0..6)
                .filter(|&i| fold_of[i] != fold)
                .map(|i| targets[i])
                .collect();
            let expect = DoseBounds::from_training_doses(&train_targets).unwrap();
            assert_eq!(out.fold_bounds[fold], expect);
        }
    }

    #[test]
    fn report_emission_reference_cases() {
        // perfect predictions give R^2 = 1 per label
        let (ids, _, targets) = toy_cv_data(5);
        let predictions: Vec<(String, OrganDoseVector, OrganDoseVector)> = ids
            .iter()
            .cloned()
            .zip(targets.iter().copied())
            .map(|(id, t)| (id, t, t))
            .collect();
        let report = error_metrics(&targets, &targets).unwrap();
        let mut r2 = [0.0; 7];
        for k in 0..7 {
            let refs: Vec<f64> = targets.iter().map(|t| t.values[k]).collect();
            r2[k] = r_squared_identity(&refs, &refs);
        }
        assert!(r2.iter().all(|&v| v == 1.0));
        let outcome = CvOutcome {
            variants: vec![VariantOutcome {
                name: "3-channel".into(),
                report,
                r2,
                predictions,
                fold_bounds: vec![],
                mean_inference_ms: 1.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        emit_report(&cfg, &outcome).unwrap();
        let csv = io::read_text(&dir.path().join("report/predictions_3-channel.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 5); // header + dataset size
        let svg = io::read_text(&dir.path().join("report/scatter_body.svg")).unwrap();
        assert!(svg.contains("R&#178; = 1.000"));

        // constant predictor at the mean scores R^2 <= 0 against identity
        let refs: Vec<f64> = targets.iter().map(|t| t.values[0]).collect();
        let mean = refs.iter().sum::<f64>() / refs.len() as f64;
        let preds = vec![mean; refs.len()];
        assert!(r_squared_identity(&refs, &preds) <= 1e-12);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        cfg.simulation.start_angles_deg = vec![0.0, 0.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.training.folds = 1;
        assert!(cfg.validate().is_err());
        // toml round trip
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let parsed = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(parsed.cohort.count, cfg.cohort.count);
    }
}
