//! Reconstruction scheduler: random-phase start, initial alternating
//! projections step, then the chosen iteration with per-iteration metrics.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dip::{dip_iterate, DipParams, Precision};
use crate::error::{Error, Result};
use crate::forward::Ptychography;
use crate::grid::{crop, ComplexGrid2D, ComplexGrid4D, RealGrid4D};
use crate::metrics::evaluate;
use crate::projections::{
    amplitude_mismatch, ap_step, dm_step, random_phase_init, DmConfig, ProjectionConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "DM")]
    Dm,
    #[serde(rename = "DIP")]
    Dip,
    #[serde(rename = "DIP_then_DM")]
    DipThenDm,
}

impl Method {
    pub fn needs_model(self) -> bool {
        matches!(self, Method::Dip | Method::DipThenDm)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ap => "AP",
            Method::Dm => "DM",
            Method::Dip => "DIP",
            Method::DipThenDm => "DIP_then_DM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "AP" => Ok(Method::Ap),
            "DM" => Ok(Method::Dm),
            "DIP" => Ok(Method::Dip),
            "DIP_THEN_DM" | "DIPDM" => Ok(Method::DipThenDm),
            _ => Err(Error::InvalidParameter(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub projection: ProjectionConfig,
    pub dm: DmConfig,
    /// Number of refiner iterations before `DIP_then_DM` hands over to DM.
    pub switch_at: usize,
    /// Apply one alternating-projections step to the random start.
    pub initial_ap: bool,
    /// Activation precision of the refiner.
    pub precision: Precision,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            projection: ProjectionConfig::default(),
            dm: DmConfig::default(),
            switch_at: 5,
            initial_ap: true,
            precision: Precision::F64,
        }
    }
}

/// Reference object used to score iterates. Metrics are taken on the
/// `roi = (top, left, height, width)` window of the padded canvas.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub object: ComplexGrid2D,
    pub roi: (usize, usize, usize, usize),
}

impl GroundTruth {
    pub fn cropped(&self, estimate: &ComplexGrid2D) -> Result<ComplexGrid2D> {
        let (t, l, h, w) = self.roi;
        crop(estimate, t, l, h, w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub e0: Option<f64>,
    pub psnr_db: Option<f64>,
    pub amp_mismatch: f64,
    /// Reconstruction wall time up to and including this iteration.
    pub elapsed_s: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub method: Method,
    pub image_id: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub final_object: ComplexGrid2D,
    pub final_ptychograph: ComplexGrid4D,
    /// Object estimates kept at the requested iterations.
    pub snapshots: Vec<(usize, ComplexGrid2D)>,
}

impl Trajectory {
    pub fn e0_curve(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.e0).collect()
    }

    /// First iteration whose E0 is at or below `threshold`.
    pub fn first_crossing(&self, threshold: f64) -> Option<usize> {
        first_crossing(
            &self
                .records
                .iter()
                .map(|r| r.e0.unwrap_or(f64::INFINITY))
                .collect::<Vec<_>>(),
            threshold,
        )
        .map(|i| self.records[i].iteration)
    }
}

/// Index of the first value `<= threshold`.
pub fn first_crossing(values: &[f64], threshold: f64) -> Option<usize> {
    values.iter().position(|&v| v <= threshold)
}

#[derive(Clone, Debug)]
pub struct ReconRequest<'a> {
    pub amplitudes: &'a RealGrid4D,
    pub op: &'a Ptychography,
    pub method: Method,
    pub iterations: usize,
    pub seed: u64,
    pub config: ReconConfig,
    pub model: Option<&'a DipParams>,
    pub truth: Option<&'a GroundTruth>,
    pub image_id: usize,
    pub snapshot_iterations: &'a [usize],
}

pub fn run_reconstruction(req: &ReconRequest<'_>) -> Result<Trajectory> {
    let a = req.amplitudes;
    a.check_dims(req.op.ptychograph_dims())?;
    if req.method.needs_model() && req.model.is_none() {
        return Err(Error::MissingModel(req.method.to_string()));
    }
    let cfg = &req.config;
    let mut clock = 0.0;

    let start = Instant::now();
    let mut x = random_phase_init(a, req.seed);
    if cfg.initial_ap {
        x = ap_step(&x, a, req.op, &cfg.projection)?;
    }
    clock += start.elapsed().as_secs_f64();

    let mut records = Vec::with_capacity(req.iterations + 1);
    let mut snapshots = Vec::new();
    let mut object = req.op.inverse(&x)?;
    record(req, &x, &object, 0, clock, &mut records, &mut snapshots)?;

    for m in 1..=req.iterations {
        let start = Instant::now();
        let use_dip = match req.method {
            Method::Dip => true,
            Method::DipThenDm => m <= cfg.switch_at,
            Method::Ap | Method::Dm => false,
        };
        x = if use_dip {
            dip_iterate(
                &x,
                a,
                req.op,
                req.model.expect("checked above"),
                &cfg.projection,
                cfg.precision,
            )?
        } else if matches!(req.method, Method::Ap) {
            ap_step(&x, a, req.op, &cfg.projection)?
        } else {
            dm_step(&x, a, req.op, &cfg.projection, &cfg.dm)?
        };
        clock += start.elapsed().as_secs_f64();
        x.check_finite()?;
        object = req.op.inverse(&x)?;
        record(req, &x, &object, m, clock, &mut records, &mut snapshots)?;
    }

    Ok(Trajectory {
        method: req.method,
        image_id: req.image_id,
        seed: req.seed,
        records,
        final_object: object,
        final_ptychograph: x,
        snapshots,
    })
}

fn record(
    req: &ReconRequest<'_>,
    x: &ComplexGrid4D,
    object: &ComplexGrid2D,
    iteration: usize,
    elapsed_s: f64,
    records: &mut Vec<IterationRecord>,
    snapshots: &mut Vec<(usize, ComplexGrid2D)>,
) -> Result<()> {
    let amp_mismatch = amplitude_mismatch(x, req.amplitudes)?;
    let (e0, psnr_db) = match req.truth {
        Some(truth) => {
            let report = evaluate(&truth.cropped(&truth.object)?, &truth.cropped(object)?)?;
            (Some(report.e0), Some(report.psnr_db))
        }
        None => (None, None),
    };
    records.push(IterationRecord {
        iteration,
        e0,
        psnr_db,
        amp_mismatch,
        elapsed_s,
    });
    if req.snapshot_iterations.contains(&iteration) {
        snapshots.push((iteration, object.clone()));
    }
    Ok(())
}

pub const TRAJECTORY_HEADER: &str = "method,image_id,seed,iteration,E0,PSNR,amp_mismatch";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.12e}")).unwrap_or_default()
}

/// Appends the trajectory's rows (no header) in the trajectory CSV schema.
pub fn write_trajectory_rows<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    for r in &traj.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{:.12e}",
            traj.method,
            traj.image_id,
            traj.seed,
            r.iteration,
            fmt_opt(r.e0),
            fmt_opt(r.psnr_db),
            r.amp_mismatch
        )?;
    }
    Ok(())
}

pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    write_trajectory_rows(traj, out)
}
