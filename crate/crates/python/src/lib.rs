use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ptychodip::bench::{Geometry, Setup};
use ptychodip::data::Image;
use ptychodip::dip::model_io;
use ptychodip::dip::{DipParams, Precision};
use ptychodip::projections::DmConfig;
use ptychodip::recon::{GroundTruth, IterationRecord};
use ptychodip::{
    metrics, noise, ComplexGrid2D, ComplexGrid4D, Error, Method, ReconConfig, ReconRequest,
    RealGrid4D, C64,
};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn flat_grid4(values: Vec<C64>) -> PyResult<ComplexGrid4D> {
    let n = values.len();
    ComplexGrid4D::new([1, 1, 1, n], values).map_err(err)
}

/// Ptychography operator for `height x width` images, padded and scanned
/// with a Gaussian probe.
#[pyclass(module = "pyptychodip", frozen)]
struct Operator {
    setup: Setup,
}

#[pymethods]
impl Operator {
    #[new]
    #[pyo3(signature = (height, width, probe_size = 9, sigma = 1.5, shift = 2, padding = None))]
    fn new(
        height: usize,
        width: usize,
        probe_size: usize,
        sigma: f64,
        shift: usize,
        padding: Option<usize>,
    ) -> PyResult<Self> {
        let geometry = Geometry {
            probe_size,
            sigma,
            shift,
            padding,
        };
        Ok(Self {
            setup: geometry.setup(height, width).map_err(err)?,
        })
    }

    #[getter]
    fn image_dims(&self) -> (usize, usize) {
        self.setup.image_dims
    }

    #[getter]
    fn object_dims(&self) -> (usize, usize) {
        self.setup.op.object_dims()
    }

    #[getter]
    fn ptychograph_dims(&self) -> (usize, usize, usize, usize) {
        let [k, l, m, n] = self.setup.op.ptychograph_dims();
        (k, l, m, n)
    }

    /// (top, left, height, width) of the image on the padded canvas.
    #[getter]
    fn roi(&self) -> (usize, usize, usize, usize) {
        let (h, w) = self.setup.image_dims;
        (self.setup.before[0], self.setup.before[1], h, w)
    }

    fn probe(&self) -> Vec<C64> {
        self.setup.op.probe().values().to_vec()
    }

    /// Places a row-major image on the padded canvas.
    fn embed(&self, pixels: Vec<f64>) -> PyResult<Vec<C64>> {
        Ok(self.truth(pixels)?.object.into_vec())
    }

    /// Cuts the image window back out of a padded object.
    fn crop(&self, object: Vec<C64>) -> PyResult<Vec<C64>> {
        let obj = self.object(object)?;
        let (top, left) = (self.setup.before[0], self.setup.before[1]);
        let (h, w) = self.setup.image_dims;
        let mut out = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                out.push(obj.get(top + r, left + c));
            }
        }
        Ok(out)
    }

    fn forward(&self, object: Vec<C64>) -> PyResult<Vec<C64>> {
        let obj = self.object(object)?;
        Ok(self.setup.op.forward(&obj).map_err(err)?.into_vec())
    }

    fn inverse(&self, ptychograph: Vec<C64>) -> PyResult<Vec<C64>> {
        let x = self.ptychograph(ptychograph)?;
        Ok(self.setup.op.inverse(&x).map_err(err)?.into_vec())
    }

    /// Measured magnitudes of an image.
    fn amplitudes(&self, pixels: Vec<f64>) -> PyResult<Vec<f64>> {
        let truth = self.truth(pixels)?;
        let a = self.setup.op.amplitudes(&truth.object).map_err(err)?;
        Ok(a.as_slice().to_vec())
    }

    #[pyo3(signature = (
        amplitudes,
        method = "DM",
        iterations = 100,
        seed = 0,
        model = None,
        truth = None,
        beta = 1.0,
        switch_at = 5,
        precision = "f64",
    ))]
    #[allow(clippy::too_many_arguments)]
    fn reconstruct(
        &self,
        py: Python<'_>,
        amplitudes: Vec<f64>,
        method: &str,
        iterations: usize,
        seed: u64,
        model: Option<PyRef<'_, Model>>,
        truth: Option<Vec<f64>>,
        beta: f64,
        switch_at: usize,
        precision: &str,
    ) -> PyResult<Reconstruction> {
        let method: Method = method.parse().map_err(err)?;
        let precision = match precision.to_ascii_lowercase().as_str() {
            "f64" => Precision::F64,
            "f32" => Precision::F32,
            other => return Err(PyValueError::new_err(format!("unknown precision {other:?}"))),
        };
        let a = RealGrid4D::new(self.setup.op.ptychograph_dims(), amplitudes).map_err(err)?;
        let truth = truth.map(|t| self.truth(t)).transpose()?;
        let config = ReconConfig {
            dm: DmConfig::new(beta).map_err(err)?,
            switch_at,
            precision,
            ..ReconConfig::default()
        };
        let params = model.as_ref().map(|m| &m.params);
        let traj = py
            .detach(|| {
                ptychodip::run_reconstruction(&ReconRequest {
                    amplitudes: &a,
                    op: &self.setup.op,
                    method,
                    iterations,
                    seed,
                    config,
                    model: params,
                    truth: truth.as_ref(),
                    image_id: 0,
                    snapshot_iterations: &[],
                })
            })
            .map_err(err)?;
        Ok(Reconstruction {
            method: traj.method.to_string(),
            records: traj.records,
            object: traj.final_object.into_vec(),
            ptychograph: traj.final_ptychograph.into_vec(),
        })
    }

    fn __repr__(&self) -> String {
        let (h, w) = self.setup.image_dims;
        let [k, l, m, n] = self.setup.op.ptychograph_dims();
        format!("Operator(image={h}x{w}, ptychograph=[{k}, {l}, {m}, {n}])")
    }
}

impl Operator {
    fn object(&self, values: Vec<C64>) -> PyResult<ComplexGrid2D> {
        let (h, w) = self.setup.op.object_dims();
        ComplexGrid2D::new(h, w, values).map_err(err)
    }

    fn ptychograph(&self, values: Vec<C64>) -> PyResult<ComplexGrid4D> {
        ComplexGrid4D::new(self.setup.op.ptychograph_dims(), values).map_err(err)
    }

    fn truth(&self, pixels: Vec<f64>) -> PyResult<GroundTruth> {
        let (h, w) = self.setup.image_dims;
        let image = Image::new(h, w, pixels).map_err(err)?;
        self.setup.embed(&image).map_err(err)
    }
}

/// Result of one reconstruction run.
#[pyclass(module = "pyptychodip", frozen)]
struct Reconstruction {
    #[pyo3(get)]
    method: String,
    records: Vec<IterationRecord>,
    /// Final object estimate on the padded canvas.
    #[pyo3(get)]
    object: Vec<C64>,
    #[pyo3(get)]
    ptychograph: Vec<C64>,
}

#[pymethods]
impl Reconstruction {
    #[getter]
    fn iterations(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.iteration).collect()
    }

    #[getter]
    fn e0(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.e0).collect()
    }

    #[getter]
    fn psnr(&self) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r.psnr_db).collect()
    }

    #[getter]
    fn amp_mismatch(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.amp_mismatch).collect()
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }
}

/// Trained refiner weights.
#[pyclass(module = "pyptychodip", frozen)]
struct Model {
    params: DipParams,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            params: model_io::load_model(path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model_io::save_model(&self.params, path).map_err(err)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }

    #[getter]
    fn hidden_channels(&self) -> usize {
        self.params.arch.hidden_channels
    }

    #[getter]
    fn inner_layers(&self) -> usize {
        self.params.arch.inner_layers
    }

    #[getter]
    fn taps(&self) -> (usize, usize, usize, usize) {
        let [a, b, c, d] = self.params.arch.taps;
        (a, b, c, d)
    }
}

/// E0 between two `height x width` objects; returns (value, gamma).
#[pyfunction]
fn e0(truth: Vec<C64>, estimate: Vec<C64>, height: usize, width: usize) -> PyResult<(f64, C64)> {
    let t = ComplexGrid2D::new(height, width, truth).map_err(err)?;
    let e = ComplexGrid2D::new(height, width, estimate).map_err(err)?;
    let r = metrics::e0(&t, &e).map_err(err)?;
    Ok((r.value, r.gamma))
}

#[pyfunction]
fn psnr(truth: Vec<f64>, estimate: Vec<f64>, peak: f64) -> PyResult<f64> {
    metrics::psnr(&truth, &estimate, peak).map_err(err)
}

#[pyfunction]
fn bessel_i0(x: f64) -> PyResult<f64> {
    noise::bessel_i0(x).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (kappa, mu = 0.0, count = 1, seed = 0))]
fn sample_von_mises(kappa: f64, mu: f64, count: usize, seed: u64) -> PyResult<Vec<f64>> {
    noise::sample_von_mises(kappa, mu, count, seed).map_err(err)
}

/// Multiplies every entry by an independent von Mises phase.
#[pyfunction]
#[pyo3(signature = (values, kappa, seed = 0))]
fn add_phase_noise(values: Vec<C64>, kappa: f64, seed: u64) -> PyResult<Vec<C64>> {
    let x = flat_grid4(values)?;
    Ok(noise::add_phase_noise(&x, kappa, seed)
        .map_err(err)?
        .into_vec())
}

#[pyfunction]
#[pyo3(signature = (values, snr_db, seed = 0))]
fn add_complex_gaussian(values: Vec<C64>, snr_db: f64, seed: u64) -> PyResult<Vec<C64>> {
    let x = flat_grid4(values)?;
    Ok(noise::add_complex_gaussian(&x, snr_db, seed)
        .map_err(err)?
        .into_vec())
}

#[pyfunction]
fn gaussian_probe(size: usize, sigma: f64) -> PyResult<Vec<C64>> {
    Ok(ptychodip::make_gaussian_probe(size, sigma)
        .map_err(err)?
        .values()
        .to_vec())
}

/// Reads an IDX image file; returns ((height, width), [pixels, ...]) with
/// pixels scaled to [0, 1].
#[pyfunction]
fn load_idx(path: PathBuf) -> PyResult<((usize, usize), Vec<Vec<f64>>)> {
    let set = ptychodip::data::load_idx(path).map_err(err)?;
    let dims = set.dims().unwrap_or((0, 0));
    Ok((dims, set.images.into_iter().map(|img| img.pixels).collect()))
}

#[pymodule]
fn pyptychodip(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Operator>()?;
    m.add_class::<Reconstruction>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(e0, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(bessel_i0, m)?)?;
    m.add_function(wrap_pyfunction!(sample_von_mises, m)?)?;
    m.add_function(wrap_pyfunction!(add_phase_noise, m)?)?;
    m.add_function(wrap_pyfunction!(add_complex_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_probe, m)?)?;
    m.add_function(wrap_pyfunction!(load_idx, m)?)?;
    m.add("METHODS", ["AP", "DM", "DIP", "DIP_then_DM"])?;
    Ok(())
}
