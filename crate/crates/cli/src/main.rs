//! `meltpool`: generate, preprocess, train, eval and infer from the shell.
//!
//! Every failure ends with one line on stderr of the form
//! `error: kind=<kind> msg="<message>"` and a kind-specific exit status.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use meltpool::dataset::{
    build_dataset, read_dataset, write_dataset, ClipMax, CropSpec, PreprocessOptions, ProcessPoint, Split,
    DEFAULT_TRAIN_FRACTION,
};
use meltpool::eval::{build_report, emit_slice_image, evaluate, write_report, Axis, ReportRow};
use meltpool::physics::{read_case, run_cases, write_case, AbsorptivityModel, MaterialProperties, SimulationConfig};
use meltpool::surrogate::{
    infer_field, masker_init, mt_setup, predict_composite, MaskSource, Role, Surrogate, SurrogateConfig, Trainer,
};
use meltpool::tensor::Network;
use meltpool::{blob, Error};

/// Tag of the single-field blob written by `infer`.
const FIELD_TAG: [u8; 4] = *b"MPIF";
const WORKERS_ENV: &str = "MELTPOOL_WORKERS";

#[derive(Parser)]
#[command(name = "meltpool", version, about = "Melt pool thermal-field surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a grid of (power, velocity) cases.
    Generate(GenerateArgs),
    /// Normalize, crop and split simulated cases into a dataset.
    Preprocess(PreprocessArgs),
    /// Train one network.
    Train(TrainArgs),
    /// Score composite predictions against a dataset.
    Eval(EvalArgs),
    /// Predict one thermal field.
    Infer(InferArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// ti64 or ss316l.
    #[arg(long, default_value = "ti64")]
    material: String,
    /// Laser powers in W, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    powers: Vec<f64>,
    /// Scan velocities in mm/s, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    velocities: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Cells along x, y, z.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<usize>>,
    /// Cell size in m.
    #[arg(long)]
    cell_size: Option<f64>,
    /// Beam radius in m.
    #[arg(long)]
    beam_radius: Option<f64>,
    #[arg(long)]
    frames: Option<usize>,
    /// Time between frames in s.
    #[arg(long)]
    interval: Option<f64>,
    /// Beam centre at t = 0, in cells along x and y.
    #[arg(long, value_delimiter = ',')]
    beam_start: Option<Vec<f64>>,
    /// normalized, as-printed, or a fixed value in (0, 1].
    #[arg(long, default_value = "normalized")]
    absorptivity: String,
    #[arg(long)]
    no_carving: bool,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Crop window along x, y, z.
    #[arg(long, value_delimiter = ',', default_value = "64,32,32")]
    crop: Vec<usize>,
    /// Clip temperature in K, or `auto` for the percentile of molten cells.
    #[arg(long, default_value = "6500")]
    tmax: String,
    /// Fraction of cases used for training; 1 keeps every case.
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// t, m or mt.
    #[arg(long)]
    role: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with network and optimizer settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trained T checkpoint; initializes M and MT.
    #[arg(long)]
    t_checkpoint: Option<PathBuf>,
    /// Trained M checkpoint; required for MT.
    #[arg(long)]
    m_checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Train MT against thresholded M predictions instead of true masks.
    #[arg(long)]
    predicted_masks: bool,
    /// Per-epoch metrics log (JSON lines). Defaults next to the checkpoint.
    #[arg(long)]
    metrics: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Directory holding m.ckpt and mt.ckpt.
    #[arg(long)]
    checkpoints: PathBuf,
    /// CSV report to write.
    #[arg(long)]
    report: PathBuf,
    /// train, val or all.
    #[arg(long, default_value = "all")]
    split: String,
    /// Directory for greyscale slices of predictions and truth.
    #[arg(long)]
    slices: Option<PathBuf>,
    /// JSON file for the aggregated tables.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct InferArgs {
    /// Power in W.
    #[arg(long)]
    p: f64,
    /// Velocity in mm/s.
    #[arg(long)]
    v: f64,
    /// Time in µs.
    #[arg(long)]
    t: f64,
    #[arg(long)]
    checkpoints: PathBuf,
    /// Field blob to write; a JSON sidecar goes next to it.
    #[arg(long)]
    out: PathBuf,
}

/// Failures the CLI reports, each with its own exit status.
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Lib(e) => e.kind(),
        }
    }

    fn code(&self) -> u8 {
        match self.kind() {
            "usage" => 2,
            "io" => 3,
            "config" => 4,
            "numeric" => 5,
            "format" => 6,
            _ => 70,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Lib(e) => e.to_string(),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn config_err(msg: impl Into<String>) -> Failure {
    Failure::Lib(Error::Config(msg.into()))
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Lib(Error::Io {
        path: path.into(),
        source: e,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(Failure::Usage(first_line(&e.to_string()))),
    };
    if let Err(f) = configure_workers().and_then(|_| dispatch(cli.command)) {
        return report(f);
    }
    ExitCode::SUCCESS
}

/// First paragraph of a clap error, flattened onto one line.
fn first_line(s: &str) -> String {
    let para: Vec<&str> = s.lines().take_while(|l| !l.trim().is_empty()).map(str::trim).collect();
    let joined = para.join(" ");
    joined.strip_prefix("error: ").unwrap_or(&joined).to_string()
}

fn triple(name: &str, v: &[usize]) -> CliResult<[usize; 3]> {
    <[usize; 3]>::try_from(v).map_err(|_| Failure::Usage(format!("--{name} takes three comma-separated values")))
}

fn report(f: Failure) -> ExitCode {
    let msg = serde_json::to_string(&f.message()).expect("string serializes");
    eprintln!("error: kind={} msg={}", f.kind(), msg);
    ExitCode::from(f.code())
}

fn configure_workers() -> CliResult {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_err(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_err(format!("cannot start {n} workers: {e}")))
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
    }
}

fn parse_absorptivity(s: &str) -> CliResult<AbsorptivityModel> {
    match s {
        "normalized" => Ok(AbsorptivityModel::NormalizedEnthalpy),
        "as-printed" => Ok(AbsorptivityModel::AsPrinted),
        other => other
            .parse::<f64>()
            .ok()
            .filter(|v| *v > 0.0 && *v <= 1.0)
            .map(|value| AbsorptivityModel::Fixed { value })
            .ok_or_else(|| Failure::Usage(format!("unknown absorptivity {other:?}"))),
    }
}

fn case_id(power: f64, velocity_mm_s: f64) -> String {
    format!("P{power}_V{velocity_mm_s}")
}

fn generate(a: GenerateArgs) -> CliResult {
    let material = MaterialProperties::by_name(&a.material)
        .ok_or_else(|| config_err(format!("unknown material {:?} (expected ti64 or ss316l)", a.material)))?;
    let absorptivity = parse_absorptivity(&a.absorptivity)?;
    let base = SimulationConfig::default();
    let mut configs = Vec::new();
    for &p in &a.powers {
        for &v in &a.velocities {
            let mut c = SimulationConfig {
                case_id: case_id(p, v),
                power: p,
                velocity: v * 1e-3,
                absorptivity,
                carving: !a.no_carving,
                ..base.clone()
            };
            if let Some(g) = &a.grid {
                c.grid = triple("grid", g)?;
            }
            if let Some(b) = &a.beam_start {
                c.beam_start = <[f64; 2]>::try_from(b.as_slice())
                    .map_err(|_| Failure::Usage("--beam-start takes two comma-separated values".into()))?;
            }
            c.cell_size = a.cell_size.unwrap_or(c.cell_size);
            c.beam_radius = a.beam_radius.unwrap_or(c.beam_radius);
            c.frame_count = a.frames.unwrap_or(c.frame_count);
            c.frame_interval = a.interval.unwrap_or(c.frame_interval);
            c.validate()?;
            configs.push(c);
        }
    }
    log::info!("simulating {} cases", configs.len());
    let cases = run_cases(&configs, &material)?;
    for case in &cases {
        write_case(&a.out.join(&case.meta.config.case_id), case)?;
    }
    println!("wrote {} cases to {}", cases.len(), a.out.display());
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> CliResult {
    let t_max = match a.tmax.as_str() {
        "auto" => ClipMax::FromData,
        s => ClipMax::Fixed(
            s.parse()
                .map_err(|_| Failure::Usage(format!("--tmax must be a number or `auto`, got {s:?}")))?,
        ),
    };
    let crop = triple("crop", &a.crop)?;
    let mut dirs: Vec<PathBuf> = fs::read_dir(&a.input)
        .map_err(|e| io_err(&a.input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(config_err(format!("no case directories under {}", a.input.display())));
    }
    let cases = dirs.iter().map(|d| read_case(d)).collect::<Result<Vec<_>, _>>()?;
    let opts = PreprocessOptions {
        crop: CropSpec {
            window: crop,
        },
        t_max,
        train_fraction: a.train_fraction,
        seed: a.seed,
    };
    let ds = build_dataset(&cases, &opts)?;
    write_dataset(&a.out, &ds)?;
    println!(
        "wrote {} samples from {} cases (T_max = {:.1} K) to {}",
        ds.records.len(),
        ds.manifest.cases.len(),
        ds.manifest.normalization.t_max,
        a.out.display()
    );
    Ok(())
}

fn load_config(path: Option<&Path>, crop: &CropSpec) -> CliResult<SurrogateConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| {
                Failure::Lib(Error::Malformed {
                    path: p.into(),
                    what: "training config",
                    detail: e.to_string(),
                })
            })
        }
        None => {
            let stages = SurrogateConfig::default().stages;
            Ok(SurrogateConfig::for_crop(crop.window, stages)?)
        }
    }
}

/// Write through a temporary file so a crash never leaves a torn checkpoint.
fn save_atomic(s: &Surrogate, path: &Path) -> CliResult {
    let tmp = path.with_extension("ckpt.tmp");
    s.save(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn train(a: TrainArgs) -> CliResult {
    let role = Role::from_tag(&a.role).ok_or_else(|| Failure::Usage(format!("unknown role {:?}", a.role)))?;
    let m = match (role, &a.m_checkpoint) {
        (Role::Mt, None) => return Err(config_err("training MT needs an M checkpoint (--m-checkpoint)")),
        (Role::Mt, Some(p)) => Some(Surrogate::load_role(p, Role::M)?),
        _ => None,
    };
    let t = a.t_checkpoint.as_deref().map(|p| Surrogate::load_role(p, Role::T)).transpose()?;
    let ds = read_dataset(&a.dataset)?;
    let mut config = load_config(a.config.as_deref(), &ds.manifest.crop)?;
    config.seed = a.seed;
    if let Some(e) = a.epochs {
        config.max_epochs = e;
    }
    if a.predicted_masks {
        config.mt_masks = MaskSource::Predicted;
    }

    let (net, masks) = match role {
        Role::T => (Network::init(meltpool::surrogate::build_network(&config, Role::T)?, config.seed)?, None),
        Role::M => match &t {
            Some(t) => (masker_init(&config, t)?, None),
            None => {
                log::warn!("no T checkpoint given; M starts from random weights");
                let cfg = SurrogateConfig {
                    transfer_weights: false,
                    ..config.clone()
                };
                (Network::init(meltpool::surrogate::build_network(&cfg, Role::M)?, cfg.seed)?, None)
            }
        },
        Role::Mt => mt_setup(&ds, &config, m.as_ref().expect("checked above"), t.as_ref())?,
    };

    let metrics_path = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("metrics.jsonl"));
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut log = fs::File::create(&metrics_path).map_err(|e| io_err(&metrics_path, e))?;
    let mut log_err = None;
    let mut trainer = Trainer::new(&ds, &config, role, net, masks)?;
    let outcome = trainer.run(|r| {
        log::info!("{} epoch {} loss {:.6e} lr {:.1e}", role.tag(), r.epoch, r.mean_loss, r.learning_rate);
        let line = serde_json::to_string(r).expect("record serializes");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            log_err.get_or_insert(e);
        }
    });
    // The trainer always holds the last good weights, diverged or not.
    save_atomic(&trainer.surrogate(), &a.out)?;
    if let Some(e) = log_err {
        return Err(io_err(&metrics_path, e));
    }
    outcome?;
    let last = trainer.history().last();
    println!(
        "trained {} for {} epochs, final loss {:.6e}; wrote {}",
        role.tag(),
        trainer.history().len(),
        last.map_or(f64::NAN, |r| r.mean_loss),
        a.out.display()
    );
    Ok(())
}

fn load_pair(dir: &Path) -> CliResult<(Surrogate, Surrogate)> {
    let m = Surrogate::load_role(&dir.join(Role::M.checkpoint_name()), Role::M)?;
    let mt = Surrogate::load_role(&dir.join(Role::Mt.checkpoint_name()), Role::Mt)?;
    Ok((mt, m))
}

fn eval(a: EvalArgs) -> CliResult {
    let ds = read_dataset(&a.dataset)?;
    let (mt, m) = load_pair(&a.checkpoints)?;
    let splits: Vec<Split> = match a.split.as_str() {
        "train" => vec![Split::Train],
        "val" => vec![Split::Val],
        "all" => vec![Split::Train, Split::Val],
        s => return Err(Failure::Usage(format!("unknown split {s:?}"))),
    };
    let mut records = Vec::new();
    for s in splits {
        records.extend(evaluate(&ds, s, &mt, &m)?);
    }
    records.sort_by(|a, b| (&a.row.case_id, a.row.frame).cmp(&(&b.row.case_id, b.row.frame)));
    let rows: Vec<ReportRow> = records.iter().map(|r| r.row.clone()).collect();
    write_report(&rows, &a.report)?;
    let table = build_report(&rows);
    if let Some(p) = &a.summary {
        let json = serde_json::to_string_pretty(&table).expect("table serializes");
        fs::write(p, json).map_err(|e| io_err(p, e))?;
    }
    if let Some(dir) = &a.slices {
        write_slices(dir, &ds, &mt, &m)?;
    }
    println!(
        "records={} rmse_pct={:.3}±{:.3} iou_pct={:.2}±{:.2}",
        table.records, table.rmse.mean, table.rmse.std, table.iou.mean, table.iou.std
    );
    Ok(())
}

/// Top-surface (xy) and mid-plane (xz) slices of prediction and truth.
fn write_slices(dir: &Path, ds: &meltpool::dataset::Dataset, mt: &Surrogate, m: &Surrogate) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let dims = ds.manifest.crop.window;
    let points: Vec<ProcessPoint> = ds.records.iter().map(|r| r.meta.point).collect();
    let preds = predict_composite(&points, mt, m)?;
    for (r, pred) in ds.records.iter().zip(&preds) {
        let truth: Vec<f64> = r.field.iter().map(|&v| f64::from(v)).collect();
        let stem = format!("{}_f{:03}", r.meta.case_id, r.meta.frame);
        for (name, field) in [("pred", pred), ("truth", &truth)] {
            emit_slice_image(field, dims, Axis::Z, 0, &dir.join(format!("{stem}_{name}_xy.pgm")))?;
            emit_slice_image(field, dims, Axis::Y, dims[1] / 2, &dir.join(format!("{stem}_{name}_xz.pgm")))?;
        }
    }
    Ok(())
}

fn infer(a: InferArgs) -> CliResult {
    let (mt, m) = load_pair(&a.checkpoints)?;
    let point = ProcessPoint {
        power: a.p,
        velocity: a.v,
        time: a.t,
    };
    let inf = infer_field(point, &mt, &m)?;
    for w in &inf.warnings {
        log::warn!("{w}");
    }
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    blob::write_f32(&a.out, FIELD_TAG, &inf.field)?;
    let side = a.out.with_extension("json");
    fs::write(&side, serde_json::to_string_pretty(&inf).expect("inference serializes")).map_err(|e| io_err(&side, e))?;
    println!("min_temperature={:.3} max_temperature={:.3}", inf.min_temperature, inf.max_temperature);
    Ok(())
}
