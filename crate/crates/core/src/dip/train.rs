//! Denoising training loop for the residual network.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::net::{
    dip_backward_in, dip_forward_in, dip_loss, Architecture, DipInputs, DipParams, Precision,
};
use crate::error::{Error, Result};
use crate::forward::Ptychography;
use crate::grid::{ComplexGrid2D, ComplexGrid4D, RealGrid4D};
use crate::noise::{sample_corruption, NoiseSpec};
use crate::projections::{proj_amplitude, proj_consistency, ProjectionConfig};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub noise: NoiseSpec,
    pub arch: Architecture,
    pub seed: u64,
    pub projection: ProjectionConfig,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 16,
            adam: AdamConfig::default(),
            noise: NoiseSpec::default(),
            arch: Architecture::default(),
            seed: 0,
            projection: ProjectionConfig::default(),
            precision: Precision::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidParameter(
                "training needs at least one epoch".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter(
                "batch size must be positive".into(),
            ));
        }
        if !(self.adam.learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be positive, got {}",
                self.adam.learning_rate
            )));
        }
        self.noise.validate()
    }
}

/// Network inputs and regression target derived from one clean object.
#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub x: ComplexGrid4D,
    pub y: ComplexGrid4D,
    pub z: ComplexGrid4D,
    pub a: RealGrid4D,
    /// `Z - X*`: what the network should subtract from `Z`.
    pub target: ComplexGrid4D,
    /// Drawn SNR (dB) or kappa.
    pub noise_parameter: f64,
}

impl TrainingSample {
    pub fn inputs(&self) -> DipInputs<'_> {
        DipInputs {
            x: &self.x,
            y: &self.y,
            z: &self.z,
            a: &self.a,
        }
    }
}

pub fn make_training_sample(
    object: &ComplexGrid2D,
    op: &Ptychography,
    noise: &NoiseSpec,
    projection: &ProjectionConfig,
    seed: u64,
) -> Result<TrainingSample> {
    let clean = op.forward(object)?;
    let a = clean.abs();
    let (x, noise_parameter) = sample_corruption(noise, &clean, seed)?;
    let y = proj_amplitude(&x, &a, projection)?;
    let z = proj_consistency(&y, op)?;
    let target = z.sub(&clean)?;
    Ok(TrainingSample {
        x,
        y,
        z,
        a,
        target,
        noise_parameter,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's updates.
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: DipParams,
    pub log: Vec<EpochLog>,
}

/// Mean loss of `params` over a fixed set of samples.
pub fn evaluate_loss(
    samples: &[TrainingSample],
    params: &DipParams,
    precision: Precision,
) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += dip_loss(&dip_forward_in(&s.inputs(), params, precision)?, &s.target)?;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Corrupted samples with seeds fixed by `seed`, for validation curves.
pub fn fixed_samples(
    objects: &[ComplexGrid2D],
    op: &Ptychography,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<TrainingSample>> {
    objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            make_training_sample(
                o,
                op,
                &cfg.noise,
                &cfg.projection,
                derive_seed(seed, &[i as u64]),
            )
        })
        .collect()
}

/// Trains from a fresh initialization.
pub fn train(
    objects: &[ComplexGrid2D],
    op: &Ptychography,
    cfg: &TrainConfig,
    validation: &[TrainingSample],
) -> Result<TrainOutcome> {
    let params = DipParams::init(cfg.arch, derive_seed(cfg.seed, &[0x1417]))?;
    train_from(params, objects, op, cfg, validation)
}

/// Continues training `params`. Every epoch draws fresh corruptions.
pub fn train_from(
    mut params: DipParams,
    objects: &[ComplexGrid2D],
    op: &Ptychography,
    cfg: &TrainConfig,
    validation: &[TrainingSample],
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if objects.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    let mut adam = AdamState::new(cfg.adam, &params)?;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..objects.len()).collect();

    if !validation.is_empty() {
        let v = evaluate_loss(validation, &params, cfg.precision)?;
        info!("initial validation loss {v:.6e}");
    }

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch_index, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = DipParams::zeros(params.arch)?;
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample_seed = derive_seed(cfg.seed, &[2, epoch as u64, i as u64]);
                let sample = make_training_sample(
                    &objects[i],
                    op,
                    &cfg.noise,
                    &cfg.projection,
                    sample_seed,
                )?;
                let (loss, g) =
                    dip_backward_in(&sample.inputs(), &sample.target, &params, cfg.precision)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        sample: i,
                        loss,
                    });
                }
                epoch_loss += loss;
                grads.add_scaled(scale, &g);
            }
            adam.update(&mut params, &grads)?;
            if !params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    sample: batch_index,
                    loss: f64::NAN,
                });
            }
        }
        let train_loss = epoch_loss / objects.len() as f64;
        let validation_loss = if validation.is_empty() {
            None
        } else {
            Some(evaluate_loss(validation, &params, cfg.precision)?)
        };
        info!("epoch {epoch}: train loss {train_loss:.6e}, validation {validation_loss:?}");
        log.push(EpochLog {
            epoch,
            train_loss,
            validation_loss,
        });
    }
    Ok(TrainOutcome { params, log })
}
