use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use voxeldose::dosimetry::{organ_dose_vector, water_equivalent_diameter};
use voxeldose::io;
use voxeldose::phantom::{generate_synthetic_phantom, CohortSpec, OrganLabel, OrganMaskSet};
use voxeldose::pipeline::{run_experiment, ExperimentConfig};
use voxeldose::predictor::{predict, train, training_log_csv, DosePredictor, PredictorConfig};
use voxeldose::scout::{compose_input, render_scout, scan_range_channel, ScoutLayout, ScoutView};
use voxeldose::source::{ScannerGeometry, SourceModel};
use voxeldose::transport::{
    calibrate_dose, simulate_scan, DoseUnits, TransportOptions, CALIBRATION_MGY_PER_RAW_100MAS,
};

#[derive(Parser)]
#[command(name = "voxeldose", version, about = "CT organ dosimetry toolkit: Monte Carlo reference doses and scout-based dose prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Phantom utilities
    Phantom {
        #[command(subcommand)]
        command: PhantomCommand,
    },
    /// Simulate a helical scan over a phantom and write the raw dose map
    Simulate(SimulateArgs),
    /// Mean organ doses from a dose map, organ masks, and a phantom
    OrganDose(OrganDoseArgs),
    /// Scout rendering
    Scout {
        #[command(subcommand)]
        command: ScoutCommand,
    },
    /// Train a dose predictor on a reference dataset directory
    Train(TrainArgs),
    /// Predict organ doses from a pair of scouts and a scan range
    Predict(PredictArgs),
    /// Run the full experiment pipeline from a config file
    Run(RunArgs),
}

#[derive(Subcommand)]
enum PhantomCommand {
    /// Generate a synthetic cohort of phantoms with exact organ masks
    Gen {
        /// Cohort spec TOML (count, size_range_cm, shape_jitter, seed)
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScoutCommand {
    /// Render frontal and lateral scouts for a phantom
    Render {
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    phantom: PathBuf,
    /// Geometry TOML (defaults to the built-in scanner)
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    histories: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gantry start angle in degrees (overrides the geometry file)
    #[arg(long)]
    start_angle: Option<f64>,
    /// Scan range as z0:z1 in mm (defaults to the full phantom extent)
    #[arg(long)]
    scan_range: Option<String>,
    /// Disable coherent (Rayleigh) scattering
    #[arg(long)]
    no_rayleigh: bool,
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OrganDoseArgs {
    #[arg(long)]
    dose: PathBuf,
    /// Directory with <organ>.mask files plus body.mask
    #[arg(long)]
    masks: PathBuf,
    #[arg(long)]
    phantom: PathBuf,
    /// Calibration factor, mGy per (eV/g/photon) per 100 mAs, applied when
    /// the dose map is still in raw units
    #[arg(long, default_value_t = CALIBRATION_MGY_PER_RAW_100MAS)]
    factor: f64,
    /// Tube current in mAs for raw-map calibration
    #[arg(long, default_value_t = 100.0)]
    mas: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Reference dataset directory (contains manifest.jsonl)
    #[arg(long)]
    data: PathBuf,
    /// Experiment config TOML supplying the [training] section
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Directory containing one *lateral.img and one *frontal.img scout
    #[arg(long)]
    scouts: PathBuf,
    /// Scan range as z0:z1 in mm
    #[arg(long)]
    range: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    /// Keep completed records from a previous run (content-hash skip)
    #[arg(long)]
    resume: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Phantom { command } => match command {
            PhantomCommand::Gen { spec, out } => phantom_gen(&spec, &out),
        },
        Command::Simulate(args) => simulate(args),
        Command::OrganDose(args) => organ_dose(args),
        Command::Scout { command } => match command {
            ScoutCommand::Render { phantom, out } => scout_render(&phantom, &out),
        },
        Command::Train(args) => train_cmd(args),
        Command::Predict(args) => predict_cmd(args),
        Command::Run(args) => run_cmd(args),
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn phantom_gen(spec_path: &Path, out: &Path) -> Result<()> {
    let text = io::read_text(spec_path)?;
    let spec: CohortSpec = toml::from_str(&text).context("parsing cohort spec")?;
    spec.validate()?;
    for index in 0..spec.count {
        let (phantom, masks) = generate_synthetic_phantom(&spec, index)?;
        let id = format!("p{index:04}");
        io::write_phantom(&out.join(format!("phantoms/{id}.vox")), &phantom)?;
        write_masks(&out.join(format!("masks/{id}")), &masks, &phantom)?;
        let dw = water_equivalent_diameter(&phantom, None)?;
        println!("{id}: dims {:?} D_w {dw:.1} cm", phantom.dims);
    }
    println!("wrote {} phantoms under {}", spec.count, out.display());
    Ok(())
}

fn write_masks(dir: &Path, masks: &OrganMaskSet, phantom: &voxeldose::phantom::Phantom) -> Result<()> {
    for label in OrganLabel::ALL {
        io::write_mask(
            &dir.join(format!("{}.mask", label.name())),
            masks.get(label),
            phantom.spacing,
            label.name(),
        )?;
    }
    io::write_mask(&dir.join("body.mask"), &masks.body, phantom.spacing, "body")?;
    Ok(())
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let (a, b) = text
        .split_once(':')
        .context("range must be z0:z1 in mm")?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    init_threads(args.threads);
    let phantom = io::read_phantom(&args.phantom)?;
    let mut geometry = match &args.geometry {
        Some(path) => ScannerGeometry::from_toml_str(&io::read_text(path)?)?,
        None => ScannerGeometry::default(),
    };
    if let Some(a) = args.start_angle {
        geometry.start_angle_deg = a;
    }
    let scan_range = args.scan_range.as_deref().map(parse_range).transpose()?;
    let source = SourceModel::default_for(&geometry)?;
    let options = TransportOptions {
        rayleigh: !args.no_rayleigh,
        ..TransportOptions::default()
    };
    let started = std::time::Instant::now();
    let (map, stats) = simulate_scan(
        &phantom,
        &geometry,
        &source,
        scan_range,
        args.histories,
        args.seed,
        &options,
    )?;
    let elapsed = started.elapsed().as_secs_f64();
    io::write_dose(&args.out, &map)?;
    println!(
        "histories {}  conservation {:.2e}  redirects {}  clamps {}  {:.1} s",
        stats.histories,
        stats.conservation_error(),
        stats.redirected_deposits,
        stats.energy_clamps,
        elapsed
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

fn organ_dose(args: OrganDoseArgs) -> Result<()> {
    let phantom = io::read_phantom(&args.phantom)?;
    let mut dose = io::read_dose(&args.dose)?;
    if dose.units == DoseUnits::EvPerGramPerPhoton {
        dose = calibrate_dose(&dose, args.factor, args.mas)?;
        println!("calibrated raw map: factor {} at {} mAs", args.factor, args.mas);
    }
    let mut organs = Vec::new();
    for label in OrganLabel::ALL {
        let path = args.masks.join(format!("{}.mask", label.name()));
        let (mask, _) = io::read_mask(&path)?;
        organs.push(mask);
    }
    let (body, _) = io::read_mask(&args.masks.join("body.mask"))?;
    let masks = OrganMaskSet {
        organs: organs.try_into().expect("six organ masks"),
        body,
    };
    let (doses, sems) = organ_dose_vector(&dose, &masks, &phantom)?;
    io::write_organ_dose_csv(&args.out, &[("patient".to_string(), doses)])?;
    for (k, name) in voxeldose::phantom::LABEL_NAMES.iter().enumerate() {
        println!("{name:>9}: {:.4} mGy (SEM {:.4})", doses.values[k], sems[k]);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn scout_render(phantom_path: &Path, out: &Path) -> Result<()> {
    let phantom = io::read_phantom(phantom_path)?;
    let layout = ScoutLayout::standard_for(&phantom)?;
    for view in [ScoutView::Frontal, ScoutView::Lateral] {
        let img = render_scout(&phantom, view, &layout)?;
        let path = out.join(format!("{}.img", view.tag()));
        io::write_scout(&path, &img)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let training = match &args.config {
        Some(path) => ExperimentConfig::from_toml_str(&io::read_text(path)?)?.training,
        None => Default::default(),
    };
    let manifest = args.data.join("manifest.jsonl");
    let text = io::read_text(&manifest)?;
    let records: Vec<voxeldose::pipeline::ReferenceRecord> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()
        .context("parsing manifest")?;
    let (ids, inputs, targets) = voxeldose::pipeline::compose_dataset(&args.data, &records)?;
    println!("training on {} records", ids.len());
    let config = PredictorConfig {
        input_rows: inputs[0].rows,
        input_cols: inputs[0].cols,
        ..PredictorConfig::default()
    };
    let cfg = voxeldose::predictor::TrainConfig {
        learning_rate: training.learning_rate,
        epochs: training.epochs,
        minibatch: training.minibatch,
        augment: training.augment,
        squared_loss: training.squared_loss,
        seed: training.seed,
        ..Default::default()
    };
    let (model, logs) = train(&inputs, &targets, config, &cfg, None)?;
    model.save(&args.out)?;
    let log_path = args.out.with_extension("log.csv");
    io::write_text(&log_path, &training_log_csv(&logs))?;
    println!(
        "final train loss {:.6}; wrote {} and {}",
        logs.last().map(|l| l.train_loss).unwrap_or(f64::NAN),
        args.out.display(),
        log_path.display()
    );
    Ok(())
}

fn find_scout(dir: &Path, suffix: &str) -> Result<PathBuf> {
    let mut hits = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
            if name.ends_with(suffix) {
                hits.push(path);
            }
        }
    }
    match hits.len() {
        1 => Ok(hits.pop().expect("one hit")),
        0 => bail!("no file ending with {suffix} in {}", dir.display()),
        _ => bail!("multiple files ending with {suffix} in {}", dir.display()),
    }
}

fn predict_cmd(args: PredictArgs) -> Result<()> {
    let model = DosePredictor::load(&args.ckpt)?;
    let lateral = io::read_scout(&find_scout(&args.scouts, "lateral.img")?)?;
    let frontal = io::read_scout(&find_scout(&args.scouts, "frontal.img")?)?;
    let bounds = model
        .input_bounds
        .context("checkpoint has no input normalization bounds")?;
    let (z0, z1) = parse_range(&args.range)?;
    let range = scan_range_channel(z0, z1, &lateral.layout)?;
    let input = compose_input(&lateral, &frontal, &range, bounds)?;
    let (doses, took) = predict(&model, &input)?;
    io::write_organ_dose_csv(&args.out, &[("scan".to_string(), doses)])?;
    for (k, name) in voxeldose::phantom::LABEL_NAMES.iter().enumerate() {
        println!("{name:>9}: {:.4} mGy", doses.values[k]);
    }
    println!("inference {:.1} ms; wrote {}", took.as_secs_f64() * 1e3, args.out.display());
    Ok(())
}

fn run_cmd(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_toml_str(&io::read_text(&args.config)?)?;
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    init_threads(cfg.threads);
    if !args.resume {
        let manifest = cfg.output_dir.join("manifest.jsonl");
        if manifest.exists() {
            std::fs::remove_file(&manifest)
                .with_context(|| format!("clearing {}", manifest.display()))?;
        }
    }
    let started = std::time::Instant::now();
    let (summary, cv) = run_experiment(&cfg)?;
    println!(
        "dataset: {} records ({} computed, {} skipped, {} failed) in {:.0} s",
        summary.records,
        summary.build.computed,
        summary.build.skipped,
        summary.build.failed,
        started.elapsed().as_secs_f64()
    );
    for v in &cv.variants {
        println!(
            "{:>13}: mean PE {:.2}%  mean RMSE {:.3} mGy  inference {:.1} ms",
            v.name,
            v.report.mean_pe_over_labels(),
            v.report.mean_rmse_over_labels(),
            v.mean_inference_ms
        );
        for (k, label) in voxeldose::phantom::LABEL_NAMES.iter().enumerate() {
            println!(
                "    {label:>9}: PE {:6.2} +- {:5.2} %   RMSE {:6.3} +- {:5.3} mGy   R2 {:.3}",
                v.report.pe_mean[k],
                v.report.pe_std[k],
                v.report.rmse_mean[k],
                v.report.rmse_std[k],
                v.r2[k]
            );
        }
    }
    println!("reports under {}", cfg.output_dir.join("report").display());
    if summary.failed > 0 {
        bail!("{} record(s) failed", summary.failed);
    }
    Ok(())
}
