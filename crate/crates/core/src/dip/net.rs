//! The residual-estimating network: an amplitude-gated complex lift layer,
//! gated inner layers and a bias-free 1x1 complex head.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::conv::{
    complex_conv4d, complex_conv4d_backward, real_conv4d, real_conv4d_backward, ComplexKernel4D,
    FeatureMap, RealKernel4D, Scalar,
};
use crate::error::{Error, Result};
use crate::forward::Ptychography;
use crate::grid::{ComplexGrid4D, RealGrid4D};
use crate::projections::{proj_amplitude, proj_consistency, ProjectionConfig};

/// Network inputs: current estimate, its amplitude projection, the
/// consistency projection of that, and the measured amplitudes.
pub const INPUT_CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden_channels: usize,
    pub inner_layers: usize,
    pub taps: [usize; 4],
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden_channels: 16,
            inner_layers: 2,
            taps: [5, 5, 3, 3],
        }
    }
}

/// Storage precision of the network's activations. Parameters, gradients
/// and everything outside the network stay in `f64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Complex convolution scaled elementwise by `logistic(real_conv(|input|))`.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedLayer {
    pub weights: ComplexKernel4D,
    pub gate: RealKernel4D,
}

impl GatedLayer {
    pub fn zeros(taps: [usize; 4], in_channels: usize, out_channels: usize) -> Result<Self> {
        Ok(Self {
            weights: ComplexKernel4D::zeros(taps, in_channels, out_channels)?,
            gate: RealKernel4D::zeros(taps, in_channels, out_channels)?,
        })
    }

    pub fn forward<T: Scalar>(&self, input: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        Ok(self.forward_cached(input)?.output)
    }

    fn forward_cached<T: Scalar>(&self, input: &FeatureMap<T>) -> Result<LayerCache<T>> {
        let v = complex_conv4d(input, &self.weights)?;
        let amp = input.amplitudes();
        let pre = real_conv4d(&amp, input.dims, &self.gate)?;
        let gate: Vec<T> = pre.iter().map(|&s| s.logistic()).collect();
        let c = v.channels;
        let mut output = v.clone();
        for (block, g) in output
            .data
            .chunks_exact_mut(2 * c)
            .zip(gate.chunks_exact(c))
        {
            let (re, im) = block.split_at_mut(c);
            for ((r, i), &g) in re.iter_mut().zip(im.iter_mut()).zip(g) {
                *r = *r * g;
                *i = *i * g;
            }
        }
        Ok(LayerCache {
            amp,
            v,
            gate,
            output,
        })
    }

    fn backward<T: Scalar>(
        &self,
        input: &FeatureMap<T>,
        cache: &LayerCache<T>,
        grad_out: &FeatureMap<T>,
        want_input: bool,
    ) -> Result<(GatedLayer, Option<FeatureMap<T>>)> {
        let c = cache.v.channels;
        let mut grad_v = grad_out.clone();
        let mut grad_pre = vec![T::ZERO; cache.gate.len()];
        for p in 0..cache.v.positions() {
            for o in 0..c {
                let j = p * c + o;
                let (jr, ji) = (2 * p * c + o, 2 * p * c + c + o);
                let g = cache.gate[j];
                let (gr, gi) = (grad_out.data[jr], grad_out.data[ji]);
                grad_v.data[jr] = g * gr;
                grad_v.data[ji] = g * gi;
                grad_pre[j] = (gr * cache.v.data[jr] + gi * cache.v.data[ji]) * g * (T::ONE - g);
            }
        }
        let (grad_w, grad_in_conv) =
            complex_conv4d_backward(input, &self.weights, &grad_v, want_input)?;
        let (grad_g, grad_amp) =
            real_conv4d_backward(&cache.amp, input.dims, &self.gate, &grad_pre, want_input)?;
        let grad_in = grad_in_conv.map(|mut gin| {
            let grad_amp = grad_amp.expect("requested together");
            let ci = input.channels;
            for p in 0..input.positions() {
                for i in 0..ci {
                    let a = cache.amp[p * ci + i];
                    if a > T::ZERO {
                        let scale = grad_amp[p * ci + i] * a.recip();
                        let (jr, ji) = (2 * p * ci + i, 2 * p * ci + ci + i);
                        gin.data[jr] += scale * input.data[jr];
                        gin.data[ji] += scale * input.data[ji];
                    }
                }
            }
            gin
        });
        Ok((
            GatedLayer {
                weights: grad_w,
                gate: grad_g,
            },
            grad_in,
        ))
    }
}

struct LayerCache<T> {
    amp: Vec<T>,
    v: FeatureMap<T>,
    gate: Vec<T>,
    output: FeatureMap<T>,
}

/// Network parameters. The same type doubles as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct DipParams {
    pub arch: Architecture,
    pub layers: Vec<GatedLayer>,
    pub head: ComplexKernel4D,
}

impl DipParams {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        if arch.hidden_channels == 0 {
            return Err(Error::InvalidParameter(
                "hidden channel count must be positive".into(),
            ));
        }
        let mut layers = vec![GatedLayer::zeros(
            arch.taps,
            INPUT_CHANNELS,
            arch.hidden_channels,
        )?];
        for _ in 0..arch.inner_layers {
            layers.push(GatedLayer::zeros(
                arch.taps,
                arch.hidden_channels,
                arch.hidden_channels,
            )?);
        }
        let head = ComplexKernel4D::zeros([1, 1, 1, 1], arch.hidden_channels, 1)?;
        Ok(Self { arch, layers, head })
    }

    /// Gaussian initialization of the complex kernels scaled by fan-in; gate
    /// kernels start at zero (gate 1/2) and the head starts at zero so the
    /// untrained network reproduces plain alternating projections.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut params.layers {
            let fan_in = (layer.weights.tap_count() * layer.weights.in_channels) as f64;
            // gate of 1/2 halves the forward signal
            let sd = (2.0 / fan_in).sqrt();
            for (r, i) in layer.weights.re.iter_mut().zip(layer.weights.im.iter_mut()) {
                *r = sd * rng.sample::<f64, _>(StandardNormal);
                *i = sd * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Ok(params)
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            out.push(&layer.weights.re);
            out.push(&layer.weights.im);
            out.push(&layer.gate.values);
        }
        out.push(&self.head.re);
        out.push(&self.head.im);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.layers {
            out.push(&mut layer.weights.re);
            out.push(&mut layer.weights.im);
            out.push(&mut layer.gate.values);
        }
        out.push(&mut self.head.re);
        out.push(&mut self.head.im);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices()
            .iter()
            .all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Elementwise `self += factor * other`, used to accumulate gradients.
    pub fn add_scaled(&mut self, factor: f64, other: &DipParams) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += factor * s;
            }
        }
    }
}

/// One training or inference example for the network.
#[derive(Clone, Debug)]
pub struct DipInputs<'a> {
    pub x: &'a ComplexGrid4D,
    pub y: &'a ComplexGrid4D,
    pub z: &'a ComplexGrid4D,
    pub a: &'a RealGrid4D,
}

fn stack_inputs<T: Scalar>(inputs: &DipInputs<'_>) -> Result<FeatureMap<T>> {
    let a = inputs.a.to_complex();
    FeatureMap::stack(&[inputs.x, inputs.y, inputs.z, &a])
}

/// Estimated residual for the given iterate.
pub fn dip_forward(inputs: &DipInputs<'_>, params: &DipParams) -> Result<ComplexGrid4D> {
    dip_forward_in(inputs, params, Precision::F64)
}

pub fn dip_forward_in(
    inputs: &DipInputs<'_>,
    params: &DipParams,
    precision: Precision,
) -> Result<ComplexGrid4D> {
    if !params.is_finite() {
        return Err(Error::InvalidParameter(
            "network parameters contain non-finite values".into(),
        ));
    }
    match precision {
        Precision::F64 => forward_impl::<f64>(inputs, params),
        Precision::F32 => forward_impl::<f32>(inputs, params),
    }
}

fn forward_impl<T: Scalar>(inputs: &DipInputs<'_>, params: &DipParams) -> Result<ComplexGrid4D> {
    let mut h = stack_inputs::<T>(inputs)?;
    for layer in &params.layers {
        h = layer.forward(&h)?;
    }
    Ok(complex_conv4d(&h, &params.head)?.channel(0))
}

/// `sum |target - predicted|^2` over every bin.
pub fn dip_loss(predicted: &ComplexGrid4D, target: &ComplexGrid4D) -> Result<f64> {
    predicted.expect_same_dims(target.dims())?;
    Ok(predicted
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(p, t)| (t - p).norm_sqr())
        .sum())
}

/// Loss and exact parameter gradients for one example.
pub fn dip_backward(
    inputs: &DipInputs<'_>,
    target: &ComplexGrid4D,
    params: &DipParams,
) -> Result<(f64, DipParams)> {
    dip_backward_in(inputs, target, params, Precision::F64)
}

pub fn dip_backward_in(
    inputs: &DipInputs<'_>,
    target: &ComplexGrid4D,
    params: &DipParams,
    precision: Precision,
) -> Result<(f64, DipParams)> {
    match precision {
        Precision::F64 => backward_impl::<f64>(inputs, target, params),
        Precision::F32 => backward_impl::<f32>(inputs, target, params),
    }
}

fn backward_impl<T: Scalar>(
    inputs: &DipInputs<'_>,
    target: &ComplexGrid4D,
    params: &DipParams,
) -> Result<(f64, DipParams)> {
    let stacked = stack_inputs::<T>(inputs)?;
    target.expect_same_dims(stacked.dims)?;
    let mut activations = vec![stacked];
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let cache = layer.forward_cached(activations.last().expect("nonempty"))?;
        activations.push(cache.output.clone());
        caches.push(cache);
    }
    let last = activations.last().expect("nonempty");
    let predicted = complex_conv4d(last, &params.head)?;

    let mut loss = 0.0;
    let mut grad_pred = FeatureMap::<T>::zeros(predicted.dims, 1);
    for (j, t) in target.as_slice().iter().enumerate() {
        let diff = predicted.get(j, 0) - t;
        loss += diff.norm_sqr();
        grad_pred.set(j, 0, diff * 2.0);
    }

    let mut grads = DipParams::zeros(params.arch)?;
    let (grad_head, grad_h) = complex_conv4d_backward(last, &params.head, &grad_pred, true)?;
    grads.head = grad_head;
    let mut grad_h = grad_h.expect("requested");
    for idx in (0..params.layers.len()).rev() {
        let want_input = idx > 0;
        let (g, gin) =
            params.layers[idx].backward(&activations[idx], &caches[idx], &grad_h, want_input)?;
        grads.layers[idx] = g;
        if let Some(gin) = gin {
            grad_h = gin;
        }
    }
    Ok((loss, grads))
}

/// One refined iteration: `Z - dip_forward(X, Y, Z, A)` with `Y = P_A(X)`
/// and `Z = P_C(Y)`.
pub fn dip_iterate(
    x: &ComplexGrid4D,
    a: &RealGrid4D,
    op: &Ptychography,
    params: &DipParams,
    cfg: &ProjectionConfig,
    precision: Precision,
) -> Result<ComplexGrid4D> {
    let y = proj_amplitude(x, a, cfg)?;
    let z = proj_consistency(&y, op)?;
    let residual = dip_forward_in(&DipInputs { x, y: &y, z: &z, a }, params, precision)?;
    z.sub(&residual)
}
