//! Amplitude and consistency projections and the classical solvers built from
//! them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::Ptychography;
use crate::grid::{ComplexGrid4D, RealGrid4D, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Added to `|x|` in the amplitude projection.
    pub delta: f64,
}

impl ProjectionConfig {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 1e-6) {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1e-6], got {delta}"
            )));
        }
        Ok(Self { delta })
    }
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self { delta: 1e-12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DmConfig {
    pub beta: f64,
}

impl DmConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "difference map beta must lie in (0, 1], got {beta}"
            )));
        }
        Ok(Self { beta })
    }
}

impl Default for DmConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

/// `a * x / (|x| + delta)`, elementwise. Bins with `x = 0` map to zero.
pub fn proj_amplitude(
    x: &ComplexGrid4D,
    a: &RealGrid4D,
    cfg: &ProjectionConfig,
) -> Result<ComplexGrid4D> {
    x.expect_same_dims(a.dims())?;
    let data = x
        .as_slice()
        .iter()
        .zip(a.as_slice())
        .map(|(&z, &amp)| z * (amp / (z.norm() + cfg.delta)))
        .collect();
    ComplexGrid4D::new(x.dims(), data)
}

/// Projection onto the range of the forward transform.
pub fn proj_consistency(x: &ComplexGrid4D, op: &Ptychography) -> Result<ComplexGrid4D> {
    op.forward(&op.inverse(x)?)
}

/// One alternating-projections iteration, `P_C(P_A(x))`.
pub fn ap_step(
    x: &ComplexGrid4D,
    a: &RealGrid4D,
    op: &Ptychography,
    cfg: &ProjectionConfig,
) -> Result<ComplexGrid4D> {
    proj_consistency(&proj_amplitude(x, a, cfg)?, op)
}

/// One difference-map iteration with relaxation `dm.beta`.
pub fn dm_step(
    x: &ComplexGrid4D,
    a: &RealGrid4D,
    op: &Ptychography,
    cfg: &ProjectionConfig,
    dm: &DmConfig,
) -> Result<ComplexGrid4D> {
    let beta = dm.beta;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "difference map beta must lie in (0, 1], got {beta}"
        )));
    }
    let inv_beta = 1.0 / beta;
    let pa = proj_amplitude(x, a, cfg)?;
    let pc = proj_consistency(x, op)?;

    // f_A = P_A - (P_A - x) / beta, f_C = P_C + (P_C - x) / beta
    let f_a = combine(&pa, x, |p, z| p - (p - z) * inv_beta);
    let f_c = combine(&pc, x, |p, z| p + (p - z) * inv_beta);

    let pa_fc = proj_amplitude(&f_c, a, cfg)?;
    let pc_fa = proj_consistency(&f_a, op)?;
    let data = x
        .as_slice()
        .iter()
        .zip(pa_fc.as_slice())
        .zip(pc_fa.as_slice())
        .map(|((&z, &u), &v)| z + (u - v) * beta)
        .collect();
    ComplexGrid4D::new(x.dims(), data)
}

fn combine(p: &ComplexGrid4D, x: &ComplexGrid4D, f: impl Fn(C64, C64) -> C64) -> ComplexGrid4D {
    let data = p
        .as_slice()
        .iter()
        .zip(x.as_slice())
        .map(|(&u, &z)| f(u, z))
        .collect();
    ComplexGrid4D::new(p.dims(), data).expect("dims already validated")
}

/// `a * exp(i theta)` with i.i.d. uniform phases drawn from a seeded stream.
pub fn random_phase_init(a: &RealGrid4D, seed: u64) -> ComplexGrid4D {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = a
        .as_slice()
        .iter()
        .map(|&amp| {
            let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            C64::from_polar(amp, theta)
        })
        .collect();
    ComplexGrid4D::new(a.dims(), data).expect("dims come from a valid grid")
}

/// Frobenius norm of `|x| - a`.
pub fn amplitude_mismatch(x: &ComplexGrid4D, a: &RealGrid4D) -> Result<f64> {
    x.expect_same_dims(a.dims())?;
    Ok(x.as_slice()
        .iter()
        .zip(a.as_slice())
        .map(|(z, &amp)| (z.norm() - amp).powi(2))
        .sum::<f64>()
        .sqrt())
}
