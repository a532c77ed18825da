//! Complex 2D/4D containers, per-segment unitary FFTs and the `PTG4` debug
//! dump format.
//!
//! Storage is row-major. A 4D grid with dims `(K, L, M, N)` stores value
//! `(k, l, m, n)` at flat index `((k * L + l) * M + m) * N + n`, so every
//! `(k, l)` segment is a contiguous `M * N` slice.

use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub type C64 = Complex64;

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid2D {
    height: usize,
    width: usize,
    data: Vec<C64>,
}

impl ComplexGrid2D {
    pub fn new(height: usize, width: usize, data: Vec<C64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "2D grid dims must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "expected {} values for a {height}x{width} grid, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![C64::new(0.0, 0.0); height * width],
        }
    }

    /// Builds a grid with zero imaginary part from row-major real values.
    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        Self::new(
            height,
            width,
            values.iter().map(|&v| C64::new(v, 0.0)).collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.data)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComplexGrid4D {
    dims: [usize; 4],
    data: Vec<C64>,
}

impl ComplexGrid4D {
    pub fn new(dims: [usize; 4], data: Vec<C64>) -> Result<Self> {
        validate_dims(dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "expected {len} values for dims {dims:?}, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![C64::new(0.0, 0.0); dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    #[inline]
    pub fn index(&self, k: usize, l: usize, m: usize, n: usize) -> usize {
        let [_, ld, md, nd] = self.dims;
        ((k * ld + l) * md + m) * nd + n
    }

    #[inline]
    pub fn get(&self, k: usize, l: usize, m: usize, n: usize) -> C64 {
        self.data[self.index(k, l, m, n)]
    }

    pub fn segment(&self, k: usize, l: usize) -> &[C64] {
        let len = self.segment_len();
        let start = (k * self.dims[1] + l) * len;
        &self.data[start..start + len]
    }

    pub fn segment_mut(&mut self, k: usize, l: usize) -> &mut [C64] {
        let len = self.segment_len();
        let start = (k * self.dims[1] + l) * len;
        &mut self.data[start..start + len]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn abs(&self) -> RealGrid4D {
        RealGrid4D {
            dims: self.dims,
            data: self.data.iter().map(|z| z.norm()).collect(),
        }
    }

    pub fn map(&self, mut f: impl FnMut(C64) -> C64) -> Self {
        Self {
            dims: self.dims,
            data: self.data.iter().map(|&z| f(z)).collect(),
        }
    }

    /// Elementwise `self + factor * other`.
    pub fn add_scaled(&self, factor: C64, other: &Self) -> Result<Self> {
        self.expect_same_dims(other.dims)?;
        Ok(Self {
            dims: self.dims,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + factor * b)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(C64::new(-1.0, 0.0), other)
    }

    /// Frobenius distance `||self - other||`.
    pub fn distance(&self, other: &Self) -> Result<f64> {
        self.expect_same_dims(other.dims)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt())
    }

    pub fn expect_same_dims(&self, dims: [usize; 4]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Shape(format!(
                "dims {:?} do not match {:?}",
                self.dims, dims
            )));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        check_finite(&self.data)
    }
}

/// Nonnegative real 4D grid, used for measured Fourier amplitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid4D {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl RealGrid4D {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        validate_dims(dims)?;
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::Shape(format!(
                "expected {len} values for dims {dims:?}, got {}",
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(index) = data.iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "amplitudes must be nonnegative, found {} at flat index {index}",
                data[index]
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn check_dims(&self, dims: [usize; 4]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Shape(format!(
                "dims {:?} do not match {:?}",
                self.dims, dims
            )));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Embeds the amplitudes as a complex grid with zero imaginary part.
    pub fn to_complex(&self) -> ComplexGrid4D {
        ComplexGrid4D {
            dims: self.dims,
            data: self.data.iter().map(|&v| C64::new(v, 0.0)).collect(),
        }
    }
}

fn validate_dims(dims: [usize; 4]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Shape(format!(
            "4D grid dims must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

fn check_finite(values: &[C64]) -> Result<()> {
    match values
        .iter()
        .position(|z| !(z.re.is_finite() && z.im.is_finite()))
    {
        Some(index) => Err(Error::NonFinite { index }),
        None => Ok(()),
    }
}

/// Cached unitary 2D FFT plans for `rows x cols` segments.
#[derive(Clone)]
pub struct SegmentFft {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl std::fmt::Debug for SegmentFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SegmentFft")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl SegmentFft {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
            scale: 1.0 / ((rows * cols) as f64).sqrt(),
        }
    }

    pub fn segment_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn forward(&self, segment: &mut [C64]) {
        self.transform(segment, &self.row_fwd, &self.col_fwd);
    }

    pub fn inverse(&self, segment: &mut [C64]) {
        self.transform(segment, &self.row_inv, &self.col_inv);
    }

    /// Transforms every consecutive segment in `data`.
    pub fn forward_all(&self, data: &mut [C64]) {
        for segment in data.chunks_exact_mut(self.segment_len()) {
            self.forward(segment);
        }
    }

    pub fn inverse_all(&self, data: &mut [C64]) {
        for segment in data.chunks_exact_mut(self.segment_len()) {
            self.inverse(segment);
        }
    }

    fn transform(&self, segment: &mut [C64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(segment.len(), self.segment_len());
        rows.process(segment);
        let mut column = vec![C64::new(0.0, 0.0); self.rows];
        for c in 0..self.cols {
            for r in 0..self.rows {
                column[r] = segment[r * self.cols + c];
            }
            cols.process(&mut column);
            for r in 0..self.rows {
                segment[r * self.cols + c] = column[r] * self.scale;
            }
        }
    }
}

/// Unitary 2D DFT over the last two axes of every `(k, l)` segment.
pub fn fft2_segments(x: &ComplexGrid4D) -> Result<ComplexGrid4D> {
    x.check_finite()?;
    let [_, _, m, n] = x.dims();
    let mut out = x.clone();
    SegmentFft::new(m, n).forward_all(out.as_mut_slice());
    Ok(out)
}

/// Inverse of [`fft2_segments`].
pub fn ifft2_segments(x: &ComplexGrid4D) -> Result<ComplexGrid4D> {
    x.check_finite()?;
    let [_, _, m, n] = x.dims();
    let mut out = x.clone();
    SegmentFft::new(m, n).inverse_all(out.as_mut_slice());
    Ok(out)
}

/// Surrounds `object` with `pad` zero pixels on every side.
pub fn pad_object(object: &ComplexGrid2D, pad: usize) -> ComplexGrid2D {
    pad_object_asymmetric(object, [pad, pad], [pad, pad])
}

/// Pads with `before = [top, left]` and `after = [bottom, right]` zero pixels.
pub fn pad_object_asymmetric(
    object: &ComplexGrid2D,
    before: [usize; 2],
    after: [usize; 2],
) -> ComplexGrid2D {
    let (h, w) = object.dims();
    let mut out = ComplexGrid2D::zeros(h + before[0] + after[0], w + before[1] + after[1]);
    let out_w = out.width();
    for r in 0..h {
        let dst = (r + before[0]) * out_w + before[1];
        out.data[dst..dst + w].copy_from_slice(&object.data[r * w..(r + 1) * w]);
    }
    out
}

/// Extracts the `height x width` window whose top-left corner is `(top, left)`.
pub fn crop(
    object: &ComplexGrid2D,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<ComplexGrid2D> {
    if height == 0 || width == 0 || top + height > object.height || left + width > object.width {
        return Err(Error::Shape(format!(
            "crop window {height}x{width} at ({top},{left}) exceeds {}x{} grid",
            object.height, object.width
        )));
    }
    let mut data = Vec::with_capacity(height * width);
    for r in top..top + height {
        let start = r * object.width + left;
        data.extend_from_slice(&object.data[start..start + width]);
    }
    ComplexGrid2D::new(height, width, data)
}

const PTG4_MAGIC: &[u8; 4] = b"PTG4";

/// Writes `grid` in the `PTG4` dump format: magic, four little-endian `u32`
/// dims, then interleaved little-endian `f64` (re, im) pairs.
pub fn write_ptg4<W: Write>(grid: &ComplexGrid4D, mut writer: W) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + grid.len() * 16);
    buf.extend_from_slice(PTG4_MAGIC);
    for d in grid.dims() {
        let d =
            u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for z in grid.as_slice() {
        buf.extend_from_slice(&z.re.to_le_bytes());
        buf.extend_from_slice(&z.im.to_le_bytes());
    }
    writer.write_all(&buf)?;
    Ok(())
}

pub fn read_ptg4<R: Read>(mut reader: R) -> Result<ComplexGrid4D> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || &bytes[..4] != PTG4_MAGIC {
        return Err(Error::Format("missing PTG4 header".into()));
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let raw: [u8; 4] = bytes[4 + 4 * i..8 + 4 * i]
            .try_into()
            .expect("4-byte slice");
        *d = u32::from_le_bytes(raw) as usize;
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|c| c.checked_mul(16))
        .ok_or_else(|| Error::Format(format!("dims {dims:?} overflow")))?;
    let payload = &bytes[20..];
    if payload.len() != count {
        return Err(Error::Format(format!(
            "expected {count} payload bytes, found {}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
            C64::new(re, im)
        })
        .collect();
    ComplexGrid4D::new(dims, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_grid(dims: [usize; 4], seed: u64) -> ComplexGrid4D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = dims.iter().product();
        let data = (0..len)
            .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ComplexGrid4D::new(dims, data).unwrap()
    }

    #[test]
    fn delta_transforms_to_flat_spectrum() {
        let mut x = ComplexGrid4D::zeros([1, 1, 4, 4]);
        x.as_mut_slice()[0] = C64::new(1.0, 0.0);
        let y = fft2_segments(&x).unwrap();
        for z in y.as_slice() {
            assert!((z - C64::new(0.25, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_transforms_to_dc() {
        let c = C64::new(0.3, -1.2);
        let x = ComplexGrid4D::new([1, 1, 4, 4], vec![c; 16]).unwrap();
        let y = fft2_segments(&x).unwrap();
        assert!((y.as_slice()[0] - 4.0 * c).norm() < 1e-14);
        assert!(y.as_slice()[1..].iter().all(|z| z.norm() < 1e-14));

        let back = ifft2_segments(&y).unwrap();
        assert!(back.as_slice().iter().all(|z| (z - c).norm() < 1e-14));
    }

    #[test]
    fn zero_grid_stays_zero() {
        let x = ComplexGrid4D::zeros([2, 3, 5, 4]);
        assert_eq!(ifft2_segments(&x).unwrap(), x);
    }

    #[test]
    fn transforms_are_unitary_and_inverse() {
        let x = random_grid([3, 2, 9, 7], 11);
        let y = fft2_segments(&x).unwrap();
        assert!((y.norm() - x.norm()).abs() <= 1e-12 * x.norm());
        let back = ifft2_segments(&y).unwrap();
        assert!(back.distance(&x).unwrap() <= 1e-12 * x.norm());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut x = ComplexGrid4D::zeros([1, 1, 2, 2]);
        x.as_mut_slice()[3] = C64::new(f64::NAN, 0.0);
        assert!(matches!(
            fft2_segments(&x),
            Err(Error::NonFinite { index: 3 })
        ));
    }

    #[test]
    fn padding_centres_the_object() {
        let values: Vec<f64> = (0..28 * 28).map(|i| (i % 17) as f64 / 16.0).collect();
        let o = ComplexGrid2D::from_real(28, 28, &values).unwrap();
        let p = pad_object(&o, 9);
        assert_eq!(p.dims(), (46, 46));
        assert_eq!(p.get(9, 9), o.get(0, 0));
        assert_eq!(p.get(36, 36), o.get(27, 27));
        for i in 0..46 {
            for j in 0..46 {
                if !(9..37).contains(&i) || !(9..37).contains(&j) {
                    assert_eq!(p.get(i, j), C64::new(0.0, 0.0));
                }
            }
        }
        assert_eq!(p.norm_sqr(), o.norm_sqr());
        assert_eq!(pad_object(&o, 0), o);
        assert_eq!(crop(&p, 9, 9, 28, 28).unwrap(), o);
    }

    #[test]
    fn ptg4_layout_is_fixed() {
        let x = random_grid([1, 2, 3, 2], 5);
        let mut buf = Vec::new();
        write_ptg4(&x, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PTG4");
        assert_eq!(&buf[4..8], &1u32.to_le_bytes());
        assert_eq!(&buf[8..12], &2u32.to_le_bytes());
        assert_eq!(&buf[20..28], &x.get(0, 0, 0, 0).re.to_le_bytes());
        assert_eq!(&buf[28..36], &x.get(0, 0, 0, 0).im.to_le_bytes());
        assert_eq!(buf.len(), 20 + 12 * 16);
        assert_eq!(read_ptg4(&buf[..]).unwrap(), x);
        assert!(read_ptg4(&buf[..buf.len() - 1]).is_err());
    }

    #[test]
    fn negative_amplitudes_are_rejected() {
        assert!(RealGrid4D::new([1, 1, 1, 2], vec![0.5, -0.1]).is_err());
        assert!(RealGrid4D::new([1, 1, 1, 2], vec![0.5, f64::INFINITY]).is_err());
    }
}
