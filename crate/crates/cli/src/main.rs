use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use ptychodip::bench::{
    emit_images, run_benchmark, run_training, write_report, DatasetSource, ExperimentConfig,
    Geometry, MethodSpec,
};
use ptychodip::data::{load_image_file, write_pgm};
use ptychodip::dip::model_io::load_model;
use ptychodip::grid::{read_ptg4, write_ptg4, ComplexGrid4D, RealGrid4D};
use ptychodip::noise::NoiseSpec;
use ptychodip::projections::DmConfig;
use ptychodip::recon::{
    run_reconstruction, write_trajectory_csv, GroundTruth, Method, ReconRequest,
};
use ptychodip::{Error, Result};

#[derive(Parser)]
#[command(
    name = "ptychodip",
    version,
    about = "Ptychographic phase retrieval with AP, DM and a learned refiner"
)]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record the amplitude ptychograph of one dataset image.
    Simulate(SimulateArgs),
    /// Train a refiner model.
    Train(TrainArgs),
    /// Reconstruct an object from recorded amplitudes.
    Reconstruct(ReconstructArgs),
    /// Run a full benchmark over images, seeds and methods.
    Bench(BenchArgs),
    /// Recompute curves and summary from a runs.csv file.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct GeometryArgs {
    #[arg(long)]
    probe_size: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    shift: Option<usize>,
    #[arg(long)]
    padding: Option<usize>,
}

impl GeometryArgs {
    fn apply(&self, g: &mut Geometry) {
        if let Some(v) = self.probe_size {
            g.probe_size = v;
        }
        if let Some(v) = self.sigma {
            g.sigma = v;
        }
        if let Some(v) = self.shift {
            g.shift = v;
        }
        if self.padding.is_some() {
            g.padding = self.padding;
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// IDX file or image directory.
    #[arg(long)]
    data: PathBuf,
    /// Resize target when `data` is a directory.
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Output amplitude file (PTG4); a `.json` sidecar and `.truth.pgm` are written next to it.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON experiment configuration; its `training` section is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training IDX file or image directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    /// Number of training images.
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    validation_images: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// `vm` (von Mises phase) or `cg` (complex Gaussian).
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    hidden_channels: Option<usize>,
    /// Kernel taps as `a,b,c,d`.
    #[arg(long)]
    taps: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Amplitude file written by `simulate`.
    #[arg(long)]
    amplitudes: PathBuf,
    #[arg(long, default_value = "DM")]
    method: String,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    switch_at: Option<usize>,
    /// Ground-truth image for E0/PSNR; defaults to the simulate sidecar.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Iterations at which object images are written.
    #[arg(long, value_delimiter = ',')]
    snapshots: Vec<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Test IDX file or image directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    /// `METHOD`, `METHOD:MODEL` or `LABEL=METHOD[:MODEL]`; repeatable.
    #[arg(long = "method")]
    methods: Vec<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    master_seed: Option<u64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[command(flatten)]
    geometry: GeometryArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Defaults to the directory holding `runs`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Written next to simulated amplitudes so that reconstruction can rebuild
/// the operator and locate the image on the padded canvas.
#[derive(Serialize, Deserialize)]
struct SimulationInfo {
    geometry: Geometry,
    image_dims: (usize, usize),
    source: String,
    index: usize,
}

fn dataset_for(path: &Path, size: Option<usize>) -> DatasetSource {
    if path.is_dir() {
        DatasetSource::Dir {
            path: path.to_path_buf(),
            size: size.unwrap_or(64),
        }
    } else {
        DatasetSource::Idx {
            path: path.to_path_buf(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let set = dataset_for(&args.data, Some(args.size)).load()?;
    let image = set.images.get(args.index).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "index {} is outside a set of {}",
            args.index,
            set.len()
        ))
    })?;
    let mut geometry = Geometry::default();
    args.geometry.apply(&mut geometry);
    let setup = geometry.setup(image.height, image.width)?;
    let truth = setup.embed(image)?;
    let amplitudes = setup.op.amplitudes(&truth.object)?;
    write_ptg4(
        &amplitudes.to_complex(),
        BufWriter::new(File::create(&args.out)?),
    )?;
    write_pgm(
        sidecar(&args.out, ".truth.pgm"),
        image.height,
        image.width,
        &image.pixels,
    )?;
    let info = SimulationInfo {
        geometry,
        image_dims: (image.height, image.width),
        source: set.source,
        index: args.index,
    };
    fs::write(
        sidecar(&args.out, ".json"),
        serde_json::to_string_pretty(&info)?,
    )?;
    info!(
        "wrote {:?} amplitudes to {}",
        amplitudes.dims(),
        args.out.display()
    );
    Ok(())
}

fn parse_taps(text: &str) -> Result<[usize; 4]> {
    let v: Vec<usize> = text
        .split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::InvalidParameter(format!("bad tap count {t:?}")))
        })
        .collect::<Result<_>>()?;
    v.try_into()
        .map_err(|_| Error::InvalidParameter(format!("expected four tap counts, got {text:?}")))
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    args.geometry.apply(&mut cfg.geometry);
    let t = &mut cfg.training;
    if let Some(p) = &args.data {
        t.dataset = dataset_for(p, args.size);
    }
    if args.images.is_some() {
        t.images = args.images;
    }
    if let Some(v) = args.validation_images {
        t.validation_images = v;
    }
    if let Some(v) = args.epochs {
        t.config.epochs = v;
    }
    if let Some(v) = args.lr {
        t.config.adam.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        t.config.batch_size = v;
    }
    if let Some(v) = args.seed {
        t.config.seed = v;
    }
    if let Some(v) = args.hidden_channels {
        t.config.arch.hidden_channels = v;
    }
    if let Some(v) = &args.taps {
        t.config.arch.taps = parse_taps(v)?;
    }
    if let Some(n) = &args.noise {
        t.config.noise = match n.as_str() {
            "vm" => NoiseSpec::von_mises_default(),
            "cg" => NoiseSpec::complex_gaussian_default(),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown noise {other:?}, expected vm or cg"
                )))
            }
        };
    }
    if let Some(p) = args.out {
        t.model_out = p;
    }
    let outcome = run_training(&cfg)?;
    fs::write(
        cfg.training.model_out.with_extension("config.json"),
        cfg.to_json()?,
    )?;
    if let Some(last) = outcome.log.last() {
        info!(
            "final train loss {:.6e}, validation {:?}",
            last.train_loss, last.validation_loss
        );
    }
    info!("model written to {}", cfg.training.model_out.display());
    Ok(())
}

fn reconstruct(args: ReconstructArgs) -> Result<()> {
    let x = read_ptg4(BufReader::new(File::open(&args.amplitudes)?))?;
    if x.as_slice().iter().any(|z| z.im != 0.0) {
        return Err(Error::Format("amplitude file holds complex values".into()));
    }
    let a = RealGrid4D::new(x.dims(), x.as_slice().iter().map(|z| z.re).collect())?;
    let info: SimulationInfo =
        serde_json::from_str(&fs::read_to_string(sidecar(&args.amplitudes, ".json"))?)?;
    let setup = info.geometry.setup(info.image_dims.0, info.image_dims.1)?;
    a.check_dims(setup.op.ptychograph_dims())?;

    let method: Method = args.method.parse()?;
    let model = match (&args.model, method.needs_model()) {
        (Some(p), true) => Some(load_model(p)?),
        (None, true) => return Err(Error::MissingModel(method.to_string())),
        _ => None,
    };
    let mut config = ExperimentConfig::default().recon;
    if let Some(b) = args.beta {
        config.dm = DmConfig::new(b)?;
    }
    if let Some(s) = args.switch_at {
        config.switch_at = s;
    }
    let truth_path = args
        .truth
        .clone()
        .unwrap_or_else(|| sidecar(&args.amplitudes, ".truth.pgm"));
    let truth = if truth_path.is_file() {
        let img = load_image_file(&truth_path, None)?;
        Some(setup.embed(&img)?)
    } else {
        None
    };
    let placement = GroundTruth {
        object: ptychodip::ComplexGrid2D::zeros(setup.op.object_dims().0, setup.op.object_dims().1),
        roi: (
            setup.before[0],
            setup.before[1],
            info.image_dims.0,
            info.image_dims.1,
        ),
    };
    let req = ReconRequest {
        amplitudes: &a,
        op: &setup.op,
        method,
        iterations: args.iterations,
        seed: args.seed,
        config,
        model: model.as_ref(),
        truth: truth.as_ref(),
        image_id: info.index,
        snapshot_iterations: &args.snapshots,
    };
    let traj = run_reconstruction(&req)?;
    fs::create_dir_all(&args.out_dir)?;
    write_trajectory_csv(
        &traj,
        BufWriter::new(File::create(args.out_dir.join("trajectory.csv"))?),
    )?;
    let cropped = placement.cropped(&traj.final_object)?;
    write_pgm(
        args.out_dir.join("object.pgm"),
        cropped.height(),
        cropped.width(),
        &cropped.amplitudes(),
    )?;
    let (h, w) = traj.final_object.dims();
    let full = ComplexGrid4D::new([1, 1, h, w], traj.final_object.as_slice().to_vec())?;
    write_ptg4(
        &full,
        BufWriter::new(File::create(args.out_dir.join("object.ptg4"))?),
    )?;
    emit_images(
        &traj.snapshots,
        &placement,
        method.as_str(),
        info.index,
        args.out_dir.join("images"),
    )?;
    let last = traj.records.last().expect("iteration 0 is always recorded");
    match last.e0 {
        Some(e0) => info!(
            "{method}: {} iterations, E0 {e0:.4}, PSNR {:.2} dB",
            last.iteration,
            last.psnr_db.unwrap_or(f64::NAN)
        ),
        None => info!(
            "{method}: {} iterations, amplitude mismatch {:.4e}",
            last.iteration, last.amp_mismatch
        ),
    }
    Ok(())
}

fn parse_method_spec(text: &str) -> Result<MethodSpec> {
    let (label, rest) = match text.split_once('=') {
        Some((l, r)) => (Some(l.to_string()), r),
        None => (None, text),
    };
    let (method, model) = match rest.split_once(':') {
        Some((m, p)) => (m, Some(PathBuf::from(p))),
        None => (rest, None),
    };
    Ok(MethodSpec {
        method: method.parse()?,
        label,
        model,
        iterations: None,
    })
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    args.geometry.apply(&mut cfg.geometry);
    if let Some(p) = &args.data {
        cfg.dataset = dataset_for(p, args.size);
    }
    if !args.methods.is_empty() {
        cfg.methods = args
            .methods
            .iter()
            .map(|m| parse_method_spec(m))
            .collect::<Result<_>>()?;
    }
    if let Some(v) = args.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = args.images {
        cfg.images = v;
    }
    if let Some(v) = args.seeds {
        cfg.seeds = v;
    }
    if let Some(v) = args.master_seed {
        cfg.master_seed = v;
    }
    if let Some(v) = args.threshold {
        cfg.threshold = v;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    if let Some(v) = args.output_dir {
        cfg.output_dir = v;
    }
    let outcome = run_benchmark(&cfg)?;
    print_summary(&outcome.aggregate);
    if !outcome.failures.is_empty() {
        log::warn!("{} runs failed; see failures.csv", outcome.failures.len());
    }
    Ok(())
}

fn print_summary(agg: &ptychodip::bench::Aggregate) {
    println!(
        "{:<14} {:>6} {:>10} {:>10} {:>9} {:>10} {:>10}",
        "method", "runs", "iters<=thr", "censored", "reached", "final E0", "final PSNR"
    );
    for s in &agg.summary {
        let crossing = s
            .mean_curve_crossing
            .map(|c| c.to_string())
            .unwrap_or_else(|| format!(">{}", s.iterations));
        println!(
            "{:<14} {:>6} {:>10} {:>10.1} {:>9} {:>10.4} {:>10.2}",
            s.label,
            s.runs,
            crossing,
            s.censored_mean_crossing,
            s.runs_reached,
            s.final_e0.map(|v| v.0).unwrap_or(f64::NAN),
            s.final_psnr.map(|v| v.0).unwrap_or(f64::NAN)
        );
    }
}

fn report(args: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&args.runs)?;
    let dir = args.out_dir.clone().unwrap_or_else(|| {
        args.runs
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    });
    let agg = write_report(&text, args.threshold, &dir)?;
    print_summary(&agg);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp_secs()
        .init();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train_cmd(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Bench(a) => bench(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
