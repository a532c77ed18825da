//! Experiment orchestration: image selection, per-run reconstructions for
//! every method and seed, aggregate curves and summaries, PGM dumps, and
//! training jobs driven by the same configuration tree.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{load_idx, load_image_dir, write_pgm, Image, ImageSet};
use crate::dip::model_io::{load_model, save_model};
use crate::dip::train::{fixed_samples, train, EpochLog, TrainConfig, TrainOutcome};
use crate::dip::DipParams;
use crate::error::{Error, Result};
use crate::forward::{coverage_extension, make_gaussian_probe, make_scan_grid, Ptychography};
use crate::grid::{pad_object_asymmetric, ComplexGrid2D};
use crate::recon::{
    first_crossing, run_reconstruction, GroundTruth, Method, ReconConfig, ReconRequest, Trajectory,
    TRAJECTORY_HEADER,
};
use crate::seed::derive_seed;

/// Probe, scan step and zero padding around each image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    pub probe_size: usize,
    pub sigma: f64,
    pub shift: usize,
    /// Zero padding on every side; defaults to the probe width.
    pub padding: Option<usize>,
}

impl Default for Geometry {
    fn default() -> Self {
        Self {
            probe_size: 9,
            sigma: 1.5,
            shift: 2,
            padding: None,
        }
    }
}

/// Operator plus the placement of an `h x w` image on its padded canvas.
#[derive(Clone, Debug)]
pub struct Setup {
    pub op: Ptychography,
    pub image_dims: (usize, usize),
    pub before: [usize; 2],
    pub after: [usize; 2],
}

impl Setup {
    pub fn embed(&self, image: &Image) -> Result<GroundTruth> {
        if (image.height, image.width) != self.image_dims {
            return Err(Error::Shape(format!(
                "image is {}x{}, geometry was built for {:?}",
                image.height, image.width, self.image_dims
            )));
        }
        Ok(GroundTruth {
            object: pad_object_asymmetric(&image.to_object(), self.before, self.after),
            roi: (
                self.before[0],
                self.before[1],
                self.image_dims.0,
                self.image_dims.1,
            ),
        })
    }
}

impl Geometry {
    pub fn padding(&self) -> usize {
        self.padding.unwrap_or(self.probe_size)
    }

    /// Builds the operator for `h x w` images. When the scan cannot end
    /// flush with the padded canvas, trailing zero rows/columns are added.
    pub fn setup(&self, h: usize, w: usize) -> Result<Setup> {
        let pad = self.padding();
        let probe = make_gaussian_probe(self.probe_size, self.sigma)?;
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if ph < self.probe_size || pw < self.probe_size {
            return Err(Error::Shape(format!(
                "padded canvas {ph}x{pw} is smaller than the probe"
            )));
        }
        if self.shift == 0 {
            return Err(Error::InvalidParameter(
                "scan shift must be positive".into(),
            ));
        }
        let ext = coverage_extension(ph, pw, self.probe_size, self.shift);
        let (ch, cw) = (ph + ext[0], pw + ext[1]);
        let scan = make_scan_grid(ch, cw, &probe, self.shift, true)?;
        let op = Ptychography::new((ch, cw), probe, scan)?;
        Ok(Setup {
            op,
            image_dims: (h, w),
            before: [pad, pad],
            after: [pad + ext[0], pad + ext[1]],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Idx {
        path: PathBuf,
    },
    /// PNG/PGM directory, centre-cropped and resized to `size x size`.
    Dir {
        path: PathBuf,
        size: usize,
    },
}

impl DatasetSource {
    pub fn load(&self) -> Result<ImageSet> {
        match self {
            Self::Idx { path } => load_idx(path),
            Self::Dir { path, size } => load_image_dir(path, *size),
        }
    }
}

impl Default for DatasetSource {
    fn default() -> Self {
        Self::Idx {
            path: PathBuf::from("data/mnist-test-images-idx3-ubyte"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub method: Method,
    /// Name used in every output; defaults to the method name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Overrides the experiment-wide iteration count.
    #[serde(default)]
    pub iterations: Option<usize>,
}

impl MethodSpec {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            label: None,
            model: None,
            iterations: None,
        }
    }

    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| self.method.to_string())
    }
}

/// Training section of the configuration tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSetup {
    pub config: TrainConfig,
    pub dataset: DatasetSource,
    /// Use only the first `images` training images.
    pub images: Option<usize>,
    /// Images held back from the end of the training set for validation.
    pub validation_images: usize,
    pub model_out: PathBuf,
}

impl Default for TrainingSetup {
    fn default() -> Self {
        Self {
            config: TrainConfig::default(),
            dataset: DatasetSource::Idx {
                path: PathBuf::from("data/mnist-train-images-idx3-ubyte"),
            },
            images: None,
            validation_images: 8,
            model_out: PathBuf::from("dip.dipm"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub geometry: Geometry,
    pub dataset: DatasetSource,
    pub methods: Vec<MethodSpec>,
    pub iterations: usize,
    /// Number of images drawn from the dataset.
    pub images: usize,
    /// Explicit dataset indices; replaces the seeded draw.
    pub image_ids: Option<Vec<usize>>,
    pub seeds: usize,
    pub master_seed: u64,
    pub threshold: f64,
    pub recon: ReconConfig,
    pub snapshot_iterations: Vec<usize>,
    pub output_dir: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    pub threads: Option<usize>,
    pub training: TrainingSetup,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: Geometry::default(),
            dataset: DatasetSource::default(),
            methods: vec![MethodSpec::new(Method::Ap), MethodSpec::new(Method::Dm)],
            iterations: 100,
            images: 16,
            image_ids: None,
            seeds: 5,
            master_seed: 0,
            threshold: 0.1,
            recon: ReconConfig::default(),
            snapshot_iterations: vec![0, 5, 10, 20, 50, 100],
            output_dir: PathBuf::from("results"),
            threads: None,
            training: TrainingSetup::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("no methods configured".into()));
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.methods.len() {
            return Err(Error::InvalidParameter(
                "method labels must be unique".into(),
            ));
        }
        for spec in &self.methods {
            if spec.label().contains([',', '/', '\n']) {
                return Err(Error::InvalidParameter(format!(
                    "label {:?} may not contain ',' '/' or newlines",
                    spec.label()
                )));
            }
            if spec.method.needs_model() {
                match &spec.model {
                    None => return Err(Error::MissingModel(spec.label())),
                    Some(p) if !p.is_file() => {
                        return Err(Error::MissingModel(format!(
                            "{}: {} does not exist",
                            spec.label(),
                            p.display()
                        )))
                    }
                    Some(_) => {}
                }
            }
        }
        if self.seeds == 0 {
            return Err(Error::InvalidParameter(
                "at least one seed is required".into(),
            ));
        }
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must be positive, got {}",
                self.threshold
            )));
        }
        if self.image_ids.is_none() && self.images == 0 {
            return Err(Error::InvalidParameter(
                "at least one image is required".into(),
            ));
        }
        Ok(())
    }
}

/// Seeded draw of `count` distinct indices below `available`.
pub fn select_images(available: usize, count: usize, master_seed: u64) -> Result<Vec<usize>> {
    if count > available {
        return Err(Error::InvalidParameter(format!(
            "requested {count} images from a set of {available}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master_seed, &[0x1a6e]));
    Ok(rand::seq::index::sample(&mut rng, available, count).into_vec())
}

/// Initial-phase seed for one (image, seed index) pair, shared by every method.
pub fn run_seed(master_seed: u64, image_id: usize, seed_index: usize) -> u64 {
    derive_seed(master_seed, &[image_id as u64, seed_index as u64])
}

/// One row of the per-run trajectory CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub label: String,
    pub image_id: usize,
    pub seed: u64,
    pub iteration: usize,
    pub e0: Option<f64>,
    pub psnr: Option<f64>,
    pub amp_mismatch: f64,
}

fn fmt_value(v: f64) -> String {
    format!("{v:.12e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_value).unwrap_or_default()
}

pub fn trajectory_rows(traj: &Trajectory, label: &str) -> Vec<RunRow> {
    traj.records
        .iter()
        .map(|r| RunRow {
            label: label.to_string(),
            image_id: traj.image_id,
            seed: traj.seed,
            iteration: r.iteration,
            e0: r.e0,
            psnr: r.psnr_db,
            amp_mismatch: r.amp_mismatch,
        })
        .collect()
}

pub fn format_runs_csv(rows: &[RunRow]) -> String {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label,
            r.image_id,
            r.seed,
            r.iteration,
            fmt_opt(r.e0),
            fmt_opt(r.psnr),
            fmt_value(r.amp_mismatch)
        );
    }
    out
}

pub fn parse_runs_csv(text: &str) -> Result<Vec<RunRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRAJECTORY_HEADER => {}
        other => return Err(Error::Format(format!("unexpected runs header {other:?}"))),
    }
    let bad = |n: usize, what: &str| Error::Format(format!("runs line {}: {what}", n + 2));
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(n, "expected 7 fields"));
        }
        let opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(n, "bad number"))
            }
        };
        rows.push(RunRow {
            label: f[0].to_string(),
            image_id: f[1].parse().map_err(|_| bad(n, "bad image id"))?,
            seed: f[2].parse().map_err(|_| bad(n, "bad seed"))?,
            iteration: f[3].parse().map_err(|_| bad(n, "bad iteration"))?,
            e0: opt(f[4])?,
            psnr: opt(f[5])?,
            amp_mismatch: f[6].parse().map_err(|_| bad(n, "bad amplitude mismatch"))?,
        });
    }
    Ok(rows)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub label: String,
    pub iteration: usize,
    pub runs: usize,
    pub e0: Option<(f64, f64)>,
    pub psnr: Option<(f64, f64)>,
    pub amp_mismatch: (f64, f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub runs: usize,
    pub iterations: usize,
    pub threshold: f64,
    /// First iteration at which the mean E0 curve is at or below the
    /// threshold; `None` when it never gets there.
    pub mean_curve_crossing: Option<usize>,
    /// Mean of per-run first crossings, unreached runs counted as
    /// `iterations + 1`.
    pub censored_mean_crossing: f64,
    pub runs_reached: usize,
    pub final_e0: Option<(f64, f64)>,
    pub final_psnr: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub curves: Vec<CurvePoint>,
    pub summary: Vec<SummaryRow>,
}

impl Aggregate {
    pub fn summary_for(&self, label: &str) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.label == label)
    }

    pub fn mean_e0_curve(&self, label: &str) -> Vec<f64> {
        self.curves
            .iter()
            .filter(|c| c.label == label)
            .map(|c| c.e0.map(|e| e.0).unwrap_or(f64::NAN))
            .collect()
    }
}

/// Aggregates per-run rows by label, keeping labels in first-seen order.
pub fn aggregate(rows: &[RunRow], threshold: f64) -> Aggregate {
    let mut order: Vec<&str> = Vec::new();
    let mut by_label: BTreeMap<&str, BTreeMap<(usize, u64), Vec<&RunRow>>> = BTreeMap::new();
    for r in rows {
        if !order.contains(&r.label.as_str()) {
            order.push(&r.label);
        }
        by_label
            .entry(&r.label)
            .or_default()
            .entry((r.image_id, r.seed))
            .or_default()
            .push(r);
    }
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for label in order {
        let runs = &by_label[label];
        let iterations = runs
            .values()
            .flat_map(|rs| rs.iter().map(|r| r.iteration))
            .max()
            .unwrap_or(0);
        let mut per_iter: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> =
            vec![Default::default(); iterations + 1];
        for rs in runs.values() {
            for r in rs {
                let slot = &mut per_iter[r.iteration];
                slot.0.extend(r.e0);
                slot.1.extend(r.psnr);
                slot.2.push(r.amp_mismatch);
            }
        }
        let mut mean_curve = Vec::with_capacity(iterations + 1);
        for (iteration, (e0, psnr, amp)) in per_iter.iter().enumerate() {
            let e0s = mean_std(e0);
            mean_curve.push(e0s.map(|e| e.0).unwrap_or(f64::INFINITY));
            curves.push(CurvePoint {
                label: label.to_string(),
                iteration,
                runs: amp.len(),
                e0: e0s,
                psnr: mean_std(psnr),
                amp_mismatch: mean_std(amp).unwrap_or((f64::NAN, f64::NAN)),
            });
        }
        let mut crossings = Vec::new();
        let mut finals_e0 = Vec::new();
        let mut finals_psnr = Vec::new();
        for rs in runs.values() {
            let mut sorted = rs.clone();
            sorted.sort_by_key(|r| r.iteration);
            let e0: Vec<f64> = sorted
                .iter()
                .map(|r| r.e0.unwrap_or(f64::INFINITY))
                .collect();
            crossings.push(first_crossing(&e0, threshold).map(|i| sorted[i].iteration));
            if let Some(last) = sorted.last() {
                finals_e0.extend(last.e0);
                finals_psnr.extend(last.psnr);
            }
        }
        let censored: Vec<f64> = crossings
            .iter()
            .map(|c| c.unwrap_or(iterations + 1) as f64)
            .collect();
        summary.push(SummaryRow {
            label: label.to_string(),
            runs: runs.len(),
            iterations,
            threshold,
            mean_curve_crossing: first_crossing(&mean_curve, threshold),
            censored_mean_crossing: mean_std(&censored).map(|m| m.0).unwrap_or(f64::NAN),
            runs_reached: crossings.iter().filter(|c| c.is_some()).count(),
            final_e0: mean_std(&finals_e0),
            final_psnr: mean_std(&finals_psnr),
        });
    }
    Aggregate { curves, summary }
}

pub const CURVES_HEADER: &str =
    "method,iteration,runs,E0_mean,E0_std,PSNR_mean,PSNR_std,amp_mismatch_mean,amp_mismatch_std";
pub const SUMMARY_HEADER: &str = "method,runs,iterations,threshold,iters_to_threshold,censored_mean_iters,runs_reached,final_E0_mean,final_E0_std,final_PSNR_mean,final_PSNR_std";

fn fmt_pair(v: Option<(f64, f64)>) -> String {
    match v {
        Some((m, s)) => format!("{},{}", fmt_value(m), fmt_value(s)),
        None => ",".into(),
    }
}

pub fn format_curves_csv(agg: &Aggregate) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for c in &agg.curves {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.label,
            c.iteration,
            c.runs,
            fmt_pair(c.e0),
            fmt_pair(c.psnr),
            fmt_pair(Some(c.amp_mismatch))
        );
    }
    out
}

pub fn format_summary_csv(agg: &Aggregate) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for s in &agg.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.label,
            s.runs,
            s.iterations,
            s.threshold,
            s.mean_curve_crossing
                .map(|c| c.to_string())
                .unwrap_or_default(),
            fmt_value(s.censored_mean_crossing),
            s.runs_reached,
            fmt_pair(s.final_e0),
            fmt_pair(s.final_psnr)
        );
    }
    out
}

/// Writes `curves.csv` and `summary.csv` for the rows of a `runs.csv`.
pub fn write_report(runs_csv: &str, threshold: f64, dir: impl AsRef<Path>) -> Result<Aggregate> {
    let dir = dir.as_ref();
    let agg = aggregate(&parse_runs_csv(runs_csv)?, threshold);
    fs::create_dir_all(dir)?;
    fs::write(dir.join("curves.csv"), format_curves_csv(&agg))?;
    fs::write(dir.join("summary.csv"), format_summary_csv(&agg))?;
    Ok(agg)
}

/// Writes cropped object amplitudes as `{label}_{image}_{iter}.pgm`.
pub fn emit_images(
    snapshots: &[(usize, ComplexGrid2D)],
    truth: &GroundTruth,
    label: &str,
    image_id: usize,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut written = Vec::with_capacity(snapshots.len());
    for (iteration, object) in snapshots {
        let cropped = truth.cropped(object)?;
        let path = dir.join(format!("{label}_{image_id}_{iteration}.pgm"));
        write_pgm(
            &path,
            cropped.height(),
            cropped.width(),
            &cropped.amplitudes(),
        )?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Clone, Debug)]
pub struct Failure {
    pub label: String,
    pub image_id: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct RunTiming {
    pub label: String,
    pub image_id: usize,
    pub seed: u64,
    pub reconstruction_s: f64,
    pub time_to_threshold_s: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub image_ids: Vec<usize>,
    pub rows: Vec<RunRow>,
    pub aggregate: Aggregate,
    pub failures: Vec<Failure>,
    pub timings: Vec<RunTiming>,
}

struct Job {
    image_slot: usize,
    seed_index: usize,
    method_index: usize,
}

enum JobResult {
    Done {
        rows: Vec<RunRow>,
        timing: RunTiming,
    },
    Failed(Failure),
}

/// Runs every (image, seed, method) reconstruction and writes `runs.csv`,
/// `curves.csv`, `summary.csv`, `failures.csv`, `timing.csv`,
/// `resolved_config.json` and snapshot images under `output_dir`.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<BenchOutcome> {
    cfg.validate()?;
    let set = cfg.dataset.load()?;
    let (h, w) = set
        .dims()
        .ok_or_else(|| Error::InvalidParameter("dataset is empty".into()))?;
    let image_ids = match &cfg.image_ids {
        Some(ids) => {
            if let Some(bad) = ids.iter().find(|&&i| i >= set.len()) {
                return Err(Error::InvalidParameter(format!(
                    "image id {bad} is outside a set of {}",
                    set.len()
                )));
            }
            ids.clone()
        }
        None => select_images(set.len(), cfg.images, cfg.master_seed)?,
    };
    let setup = cfg.geometry.setup(h, w)?;
    let truths: Vec<GroundTruth> = image_ids
        .iter()
        .map(|&i| setup.embed(&set.images[i]))
        .collect::<Result<_>>()?;
    let amplitudes: Vec<_> = truths
        .iter()
        .map(|t| setup.op.amplitudes(&t.object))
        .collect::<Result<_>>()?;
    let mut models: Vec<Option<DipParams>> = Vec::with_capacity(cfg.methods.len());
    for spec in &cfg.methods {
        models.push(match (&spec.model, spec.method.needs_model()) {
            (Some(path), true) => Some(load_model(path)?),
            _ => None,
        });
    }

    let out_dir = &cfg.output_dir;
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir)?;
    let resolved = ExperimentConfig {
        image_ids: Some(image_ids.clone()),
        ..cfg.clone()
    };
    fs::write(out_dir.join("resolved_config.json"), resolved.to_json()?)?;
    for (t, &id) in truths.iter().zip(&image_ids) {
        let truth_img = t.cropped(&t.object)?;
        write_pgm(
            image_dir.join(format!("truth_{id}.pgm")),
            truth_img.height(),
            truth_img.width(),
            &truth_img.amplitudes(),
        )?;
    }

    let mut jobs = Vec::new();
    for image_slot in 0..image_ids.len() {
        for seed_index in 0..cfg.seeds {
            for method_index in 0..cfg.methods.len() {
                jobs.push(Job {
                    image_slot,
                    seed_index,
                    method_index,
                });
            }
        }
    }
    let results: Vec<Mutex<Option<JobResult>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let threads = cfg
        .threads
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1);
    let started = Instant::now();
    info!("benchmark: {} runs on {threads} thread(s)", jobs.len());

    let worker = || loop {
        let j = next.fetch_add(1, Ordering::Relaxed);
        let Some(job) = jobs.get(j) else { break };
        let spec = &cfg.methods[job.method_index];
        let label = spec.label();
        let image_id = image_ids[job.image_slot];
        let seed = run_seed(cfg.master_seed, image_id, job.seed_index);
        let req = ReconRequest {
            amplitudes: &amplitudes[job.image_slot],
            op: &setup.op,
            method: spec.method,
            iterations: spec.iterations.unwrap_or(cfg.iterations),
            seed,
            config: cfg.recon,
            model: models[job.method_index].as_ref(),
            truth: Some(&truths[job.image_slot]),
            image_id,
            snapshot_iterations: &cfg.snapshot_iterations,
        };
        let result = run_reconstruction(&req).and_then(|traj| {
            // snapshots are written for the first seed only
            if job.seed_index == 0 {
                emit_images(
                    &traj.snapshots,
                    &truths[job.image_slot],
                    &label,
                    image_id,
                    &image_dir,
                )?;
            }
            let reconstruction_s = traj.records.last().map(|r| r.elapsed_s).unwrap_or(0.0);
            let time_to_threshold_s = traj
                .first_crossing(cfg.threshold)
                .and_then(|it| traj.records.iter().find(|r| r.iteration == it))
                .map(|r| r.elapsed_s);
            Ok(JobResult::Done {
                rows: trajectory_rows(&traj, &label),
                timing: RunTiming {
                    label: label.clone(),
                    image_id,
                    seed,
                    reconstruction_s,
                    time_to_threshold_s,
                },
            })
        });
        let result = result.unwrap_or_else(|e| {
            warn!("{label} on image {image_id} seed {seed} failed: {e}");
            JobResult::Failed(Failure {
                label,
                image_id,
                seed,
                message: e.to_string(),
            })
        });
        *results[j].lock().expect("result slot") = Some(result);
        if (j + 1) % 20 == 0 {
            info!(
                "{} / {} runs started, {:.1} s",
                j + 1,
                jobs.len(),
                started.elapsed().as_secs_f64()
            );
        }
    };
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(worker);
        }
    });

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    // group rows by method so runs.csv lists each method as one block
    let mut ordered: Vec<(usize, usize)> = jobs
        .iter()
        .enumerate()
        .map(|(j, job)| (job.method_index, j))
        .collect();
    ordered.sort();
    for (_, j) in ordered {
        match results[j].lock().expect("result slot").take() {
            Some(JobResult::Done { rows: r, timing }) => {
                rows.extend(r);
                timings.push(timing);
            }
            Some(JobResult::Failed(f)) => failures.push(f),
            None => unreachable!("every job stores a result"),
        }
    }

    let runs_csv = format_runs_csv(&rows);
    fs::write(out_dir.join("runs.csv"), &runs_csv)?;
    let aggregate = write_report(&runs_csv, cfg.threshold, out_dir)?;
    let mut fail_csv = String::from("method,image_id,seed,error\n");
    for f in &failures {
        let _ = writeln!(
            fail_csv,
            "{},{},{},\"{}\"",
            f.label,
            f.image_id,
            f.seed,
            f.message.replace('"', "'")
        );
    }
    fs::write(out_dir.join("failures.csv"), fail_csv)?;
    let mut timing_csv =
        String::from("method,image_id,seed,reconstruction_s,time_to_threshold_s\n");
    for t in &timings {
        let _ = writeln!(
            timing_csv,
            "{},{},{},{:.6},{}",
            t.label,
            t.image_id,
            t.seed,
            t.reconstruction_s,
            t.time_to_threshold_s
                .map(|v| format!("{v:.6}"))
                .unwrap_or_default()
        );
    }
    fs::write(out_dir.join("timing.csv"), timing_csv)?;
    info!(
        "benchmark finished in {:.1} s",
        started.elapsed().as_secs_f64()
    );
    Ok(BenchOutcome {
        image_ids,
        rows,
        aggregate,
        failures,
        timings,
    })
}

/// Trains a refiner as described by the `training` section, saves it to
/// `model_out` and writes `training_log.csv` next to it.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    let t = &cfg.training;
    t.config.validate()?;
    let set = t.dataset.load()?;
    let (h, w) = set
        .dims()
        .ok_or_else(|| Error::InvalidParameter("training set is empty".into()))?;
    if set.len() <= t.validation_images {
        return Err(Error::InvalidParameter(format!(
            "{} images cannot cover {} validation images and a training set",
            set.len(),
            t.validation_images
        )));
    }
    let setup = cfg.geometry.setup(h, w)?;
    let split = set.len() - t.validation_images;
    let count = t.images.unwrap_or(split).min(split);
    let embed = |im: &Image| setup.embed(im).map(|g| g.object);
    let objects: Vec<ComplexGrid2D> = set.images[..count]
        .iter()
        .map(embed)
        .collect::<Result<_>>()?;
    let val_objects: Vec<ComplexGrid2D> = set.images[split..]
        .iter()
        .map(embed)
        .collect::<Result<_>>()?;
    let validation = fixed_samples(
        &val_objects,
        &setup.op,
        &t.config,
        derive_seed(t.config.seed, &[0x7a1]),
    )?;
    info!(
        "training on {} images, validating on {}",
        objects.len(),
        validation.len()
    );
    let outcome = train(&objects, &setup.op, &t.config, &validation)?;
    if let Some(parent) = t.model_out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_model(&outcome.params, &t.model_out)?;
    fs::write(
        t.model_out.with_extension("log.csv"),
        format_training_log(&outcome.log),
    )?;
    Ok(outcome)
}

pub fn format_training_log(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    for e in log {
        let _ = writeln!(
            out,
            "{},{},{}",
            e.epoch,
            fmt_value(e.train_loss),
            fmt_opt(e.validation_loss)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(label: &str, image_id: usize, seed: u64, iteration: usize, e0: f64) -> RunRow {
        RunRow {
            label: label.into(),
            image_id,
            seed,
            iteration,
            e0: Some(e0),
            psnr: Some(10.0),
            amp_mismatch: 1.0,
        }
    }

    #[test]
    fn mnist_geometry_gets_one_extra_row_and_column() {
        let s = Geometry::default().setup(28, 28).unwrap();
        assert_eq!(s.op.object_dims(), (47, 47));
        assert_eq!(s.op.ptychograph_dims(), [20, 20, 9, 9]);
        assert_eq!((s.before, s.after), ([9, 9], [10, 10]));
    }

    #[test]
    fn selection_is_seeded_and_distinct() {
        let a = select_images(100, 16, 3).unwrap();
        assert_eq!(a, select_images(100, 16, 3).unwrap());
        let mut d = a.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 16);
        assert!(select_images(5, 6, 0).is_err());
    }

    #[test]
    fn runs_csv_round_trips() {
        let mut rows = vec![row("AP", 3, 7, 0, 0.5), row("AP", 3, 7, 1, 0.25)];
        rows[1].psnr = None;
        assert_eq!(parse_runs_csv(&format_runs_csv(&rows)).unwrap(), rows);
        assert!(parse_runs_csv("a,b\n").is_err());
    }

    #[test]
    fn summary_uses_the_mean_curve() {
        let rows = vec![
            row("DM", 0, 0, 0, 0.5),
            row("DM", 0, 0, 1, 0.2),
            row("DM", 0, 0, 2, 0.05),
            row("DM", 1, 0, 0, 0.5),
            row("DM", 1, 0, 1, 0.3),
            row("DM", 1, 0, 2, 0.2),
        ];
        let agg = aggregate(&rows, 0.1);
        let s = agg.summary_for("DM").unwrap();
        assert_eq!(s.mean_curve_crossing, None);
        assert_eq!(s.runs_reached, 1);
        assert_eq!(s.censored_mean_crossing, 2.5);
        assert_eq!(agg.mean_e0_curve("DM"), vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!((cfg.iterations, cfg.images, cfg.seeds), (100, 16, 5));
        assert_eq!(
            ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(),
            cfg
        );
        let mut bad = cfg.clone();
        bad.methods = vec![MethodSpec::new(Method::Dip)];
        assert!(matches!(bad.validate(), Err(Error::MissingModel(_))));
        bad.methods.clear();
        assert!(bad.validate().is_err());
    }
}
