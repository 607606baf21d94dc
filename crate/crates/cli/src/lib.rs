//! Command-line front end: `train`, `predict`, `evaluate`, `render-map`,
//! `synth` and `gpd-fit`.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

pub mod pipeline;
pub mod render;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use owhsi::data_io::{synth_cube, HyperCube, LabelRaster, SplitSpec, SynthSpec};
use owhsi::evt::{fit_gpd, tail_size, EvtMode, EvtModels};
use owhsi::metrics::{confusion, report};
use owhsi::network::{load_weights, save_weights, LossWeights, TrainConfig};
use owhsi::{Error, Result};

use pipeline::{
    all_pixels, labeled_pixels, predict_scene_with, train_scene, PredictMode, TailSource,
};

/// Scene recipe used when `synth` gets no `--spec`.
pub const DEFAULT_SYNTH_SPEC: &str = include_str!("../fixtures/synthetic.spec");

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "owhsi",
    version,
    about = "Open-set hyperspectral classification"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the network and fit tail models.
    Train(TrainArgs),
    /// Classify pixels and write closed/open/loss/score rasters.
    Predict(PredictArgs),
    /// Compare a prediction raster with ground truth.
    Evaluate(EvaluateArgs),
    /// Render a label raster as a binary PPM image.
    RenderMap(RenderArgs),
    /// Generate a synthetic cube and label raster.
    Synth(SynthArgs),
    /// Fit a tail model to a whitespace-separated loss file.
    GpdFit(GpdFitArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Number of known classes C.
    #[arg(long)]
    classes: usize,
    /// Training pixels to use instead of drawing a split.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Where to write the drawn split.
    #[arg(long)]
    split_out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    nos: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    lambda_c: f32,
    #[arg(long, default_value_t = 0.5)]
    lambda_r: f32,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 170)]
    epochs1: usize,
    #[arg(long, default_value_t = 30)]
    epochs2: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    gpd: PathBuf,
    /// Training report (JSON).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    gpd: Option<PathBuf>,
    /// Ground truth; selects the labeled pixels unless `--all-pixels`.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Training split whose pixels are left out.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PredictMode::Mdl4ow)]
    mode: PredictMode,
    #[arg(long, default_value_t = 0.5)]
    z: f64,
    #[arg(long)]
    all_pixels: bool,
    /// Refit the tail models on the predicted pixels' losses, keeping the
    /// training tail sizes.
    #[arg(long)]
    fit_on_prediction: bool,
    /// Output directory for closed.hsil, open.hsil, loss.hsic and score.hsic.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Open-label raster from `predict`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    classes: usize,
    /// Classes present at test time; defaults to C+1 when the ground truth
    /// contains unknown pixels, C otherwise.
    #[arg(long)]
    test_classes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    palette: PathBuf,
    /// Lets code C+1 default to black.
    #[arg(long)]
    classes: Option<u16>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Scene recipe; the bundled fixture when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args, Debug)]
struct GpdFitArgs {
    #[arg(long)]
    losses: PathBuf,
    /// Tail size; derived from `--nos` and `--classes` when omitted.
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long, default_value_t = 20)]
    nos: usize,
    #[arg(long, default_value_t = 1)]
    classes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Expands `--config FILE` into flags placed right after the subcommand, so
/// flags given on the command line win.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let path = it
                .next()
                .ok_or_else(|| Error::InvalidInput("--config needs a path".into()))?;
            config = Some(PathBuf::from(path));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = read_text(&path)?;
    let mut flags = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!(
                "{}:{}: expected key = value",
                path.display(),
                i + 1
            ))
        })?;
        let flag = format!("--{}", key.trim().replace('_', "-"));
        match value.trim() {
            "true" => flags.push(OsString::from(flag)),
            "false" => {}
            v => {
                flags.push(OsString::from(flag));
                flags.push(OsString::from(v));
            }
        }
    }
    // program name and subcommand come first
    let split_at = rest.len().min(2);
    let mut out: Vec<OsString> = rest[..split_at].to_vec();
    out.extend(flags);
    out.extend(rest[split_at..].iter().cloned());
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidInput(format!("cannot read {}: {e}", path.display())))
}

fn read_cube(path: &Path) -> Result<HyperCube> {
    HyperCube::read(path).map_err(|e| with_path(e, path))
}

fn read_labels(path: &Path) -> Result<LabelRaster> {
    LabelRaster::read(path).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io(io) => Error::InvalidInput(format!("{}: {io}", path.display())),
        other => other,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)
        .map_err(|e| Error::InvalidInput(format!("cannot write {}: {e}", path.display())))
}

fn warn(msg: &str) {
    eprintln!("warning: {msg}");
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cube = read_cube(&a.cube)?;
    let labels = read_labels(&a.labels)?;
    let split = a
        .split
        .as_deref()
        .map(|p| SplitSpec::from_text(&read_text(p)?))
        .transpose()?;
    let config = TrainConfig {
        nos: split.as_ref().map_or(a.nos, |s| s.nos),
        batch_size: a.batch_size,
        phase1_epochs: a.epochs1,
        phase2_epochs: a.epochs2,
        patience: a.patience,
        loss_weights: LossWeights::new(a.lambda_c, a.lambda_r)?,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = train_scene(&cube, &labels, a.classes, split, &config)?;
    for w in &outcome.warnings {
        warn(w);
    }
    save_weights(&outcome.net, &a.weights).map_err(|e| with_path(e, &a.weights))?;
    write_file(&a.gpd, outcome.evt.to_text().as_bytes())?;
    if let Some(p) = &a.split_out {
        write_file(p, outcome.split.to_text().as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes");
    match &a.out {
        Some(p) => write_file(p, json.as_bytes())?,
        None => println!("{json}"),
    }
    eprintln!(
        "trained {} + {} epochs in {:.1}s",
        outcome.report.phase1_epochs,
        outcome.report.phase2_epochs,
        outcome.report.wall_clock_seconds
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let cube = read_cube(&a.cube)?;
    let net = load_weights(&a.weights).map_err(|e| with_path(e, &a.weights))?;
    let evt = match (&a.gpd, a.mode) {
        (Some(p), _) => Some(EvtModels::from_text(
            &read_text(p)?,
            Some(net.num_classes() as u16),
        )?),
        (None, PredictMode::Mdl4ow | PredictMode::Mdl4owC) => {
            return Err(Error::InvalidInput(
                "--gpd is required for modes mdl4ow and mdl4ow-c".into(),
            ))
        }
        (None, _) => None,
    };
    let pixels = if a.all_pixels {
        all_pixels(cube.height(), cube.width())
    } else {
        let path = a.labels.as_deref().ok_or_else(|| {
            Error::InvalidInput("--labels is required unless --all-pixels is set".into())
        })?;
        let labels = read_labels(path)?;
        labels.matches(&cube)?;
        let split = a
            .split
            .as_deref()
            .map(|p| SplitSpec::from_text(&read_text(p)?))
            .transpose()?;
        labeled_pixels(&labels, split.as_ref())
    };
    let tails = if a.fit_on_prediction {
        TailSource::Prediction
    } else {
        TailSource::Training
    };
    let pred = predict_scene_with(&net, evt.as_ref(), &cube, &pixels, a.mode, a.z, tails)?;
    fs::create_dir_all(&a.out)
        .map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", a.out.display())))?;
    let (h, w) = (pred.height, pred.width);
    LabelRaster::new(h, w, pred.closed)?.write(&a.out.join("closed.hsil"))?;
    LabelRaster::new(h, w, pred.open)?.write(&a.out.join("open.hsil"))?;
    HyperCube::new(h, w, 1, pred.loss)?.write(&a.out.join("loss.hsic"))?;
    HyperCube::new(h, w, 1, pred.score)?.write(&a.out.join("score.hsic"))?;
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let pred = read_labels(&a.pred)?;
    let truth = read_labels(&a.labels)?;
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::Shape(format!(
            "prediction is {}×{}, ground truth {}×{}",
            pred.height(),
            pred.width(),
            truth.height(),
            truth.width()
        )));
    }
    // pixels the prediction skipped carry code 0 and are not scored
    let (p, t): (Vec<u16>, Vec<u16>) = pred
        .codes()
        .iter()
        .zip(truth.codes())
        .filter(|(&p, _)| p != 0)
        .map(|(&p, &t)| (p, t))
        .unzip();
    let cm = confusion(&p, &t, a.classes)?;
    let unknown = a.classes as u16 + 1;
    let test_classes = a
        .test_classes
        .unwrap_or(if truth.codes().contains(&unknown) {
            a.classes + 1
        } else {
            a.classes
        });
    let json = report(&cm, a.classes, test_classes)?.to_json();
    println!("{json}");
    if let Some(path) = &a.out {
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let raster = read_labels(&a.pred)?;
    let palette = render::parse_palette(&read_text(&a.palette)?)?;
    let img = render::render_ppm(&raster, &palette, a.classes)?;
    write_file(&a.out, &img)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let text = match &a.spec {
        Some(p) => read_text(p)?,
        None => DEFAULT_SYNTH_SPEC.to_owned(),
    };
    let spec = SynthSpec::parse(&text)?;
    let (cube, labels) = synth_cube(&spec, a.seed)?;
    cube.write(&a.cube).map_err(|e| with_path(e, &a.cube))?;
    labels
        .write(&a.labels)
        .map_err(|e| with_path(e, &a.labels))?;
    Ok(())
}

fn cmd_gpd_fit(a: GpdFitArgs) -> Result<()> {
    let text = read_text(&a.losses)?;
    let losses = text
        .split_whitespace()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Format(format!("bad loss value {s:?}")))
        })
        .collect::<Result<Vec<f64>>>()?;
    let tau = a
        .tau
        .unwrap_or_else(|| tail_size(a.nos, a.classes, EvtMode::Global));
    let tau = if tau > losses.len() {
        warn(&format!(
            "tail size {tau} exceeds {} losses, using all",
            losses.len()
        ));
        losses.len()
    } else {
        tau
    };
    let model = fit_gpd(&losses, tau)?;
    let line = format!(
        "global {:.8e} {:.8e} {:.8e} {}\n",
        model.xi, model.mu, model.w, model.tau
    );
    print!("{line}");
    if let Some(p) = &a.out {
        write_file(p, line.as_bytes())?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Size of the worker pool from `OWHSI_THREADS`, if set.
fn thread_cap() -> Option<usize> {
    std::env::var("OWHSI_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_INPUT;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return EXIT_INPUT;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::RenderMap(a) => cmd_render(a),
        Command::Synth(a) => cmd_synth(a),
        Command::GpdFit(a) => cmd_gpd_fit(a),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
