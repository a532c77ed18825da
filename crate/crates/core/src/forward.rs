//! Far-field ptychographic forward transform on a regular grid scan, and its
//! conjugate-weighted overlap-add pseudoinverse.

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid2D, ComplexGrid4D, RealGrid4D, SegmentFft, C64};

/// Floor on the coverage weights in the pseudoinverse; only pixels the
/// probe (almost) never touches are affected.
pub const WEIGHT_DELTA: f64 = 1e-12;

/// Square illumination function applied to each object patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    size: usize,
    sigma: Option<f64>,
    values: Vec<C64>,
}

impl Probe {
    pub fn new(size: usize, values: Vec<C64>) -> Result<Self> {
        if size == 0 || values.len() != size * size {
            return Err(Error::Shape(format!(
                "probe of size {size} needs {} values, got {}",
                size * size,
                values.len()
            )));
        }
        if !values.iter().any(|z| z.norm() > 0.0) {
            return Err(Error::InvalidParameter(
                "probe must have at least one nonzero value".into(),
            ));
        }
        if values
            .iter()
            .any(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(Error::InvalidParameter(
                "probe values must be finite".into(),
            ));
        }
        Ok(Self {
            size,
            sigma: None,
            values,
        })
    }

    /// Uniform probe of ones.
    pub fn flat(size: usize) -> Result<Self> {
        Self::new(size, vec![C64::new(1.0, 0.0); size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Standard deviation, when the probe was built by [`make_gaussian_probe`].
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.values[row * self.size + col]
    }
}

/// Real Gaussian probe with unit peak at the centre pixel.
pub fn make_gaussian_probe(size: usize, sigma: f64) -> Result<Probe> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "probe size must be odd and positive, got {size}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "probe sigma must be positive, got {sigma}"
        )));
    }
    let c = (size - 1) as f64 / 2.0;
    let two_var = 2.0 * sigma * sigma;
    let mut values = Vec::with_capacity(size * size);
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            values.push(C64::new((-(di * di + dj * dj) / two_var).exp(), 0.0));
        }
    }
    let mut probe = Probe::new(size, values)?;
    probe.sigma = Some(sigma);
    Ok(probe)
}

/// Regular lattice of probe positions, `position(k, l) = (k * shift, l * shift)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanGrid {
    pub shift: usize,
    pub rows: usize,
    pub cols: usize,
    /// Trailing object rows and columns that no probe placement reaches.
    pub uncovered: [usize; 2],
}

impl ScanGrid {
    pub fn position(&self, k: usize, l: usize) -> (usize, usize) {
        (k * self.shift, l * self.shift)
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |k| (0..self.cols).map(move |l| self.position(k, l)))
    }

    pub fn is_fully_covering(&self) -> bool {
        self.uncovered == [0, 0]
    }
}

/// Lattice of all in-bounds placements of `probe` on an `object_h x object_w`
/// canvas. With `strict` set, any uncovered pixel is an error; otherwise the
/// shortfall is reported in [`ScanGrid::uncovered`].
pub fn make_scan_grid(
    object_h: usize,
    object_w: usize,
    probe: &Probe,
    shift: usize,
    strict: bool,
) -> Result<ScanGrid> {
    let p = probe.size();
    if shift == 0 {
        return Err(Error::InvalidParameter(
            "scan shift must be at least 1".into(),
        ));
    }
    if object_h < p || object_w < p {
        return Err(Error::Shape(format!(
            "object {object_h}x{object_w} is smaller than the {p}x{p} probe"
        )));
    }
    if shift > p && (object_h > p || object_w > p) {
        return Err(Error::Coverage(format!(
            "shift {shift} exceeds probe size {p}, leaving gaps between placements"
        )));
    }
    let rows = (object_h - p) / shift + 1;
    let cols = (object_w - p) / shift + 1;
    let uncovered = [(object_h - p) % shift, (object_w - p) % shift];
    let scan = ScanGrid {
        shift,
        rows,
        cols,
        uncovered,
    };
    if strict && !scan.is_fully_covering() {
        return Err(Error::Coverage(format!(
            "{} trailing rows and {} trailing columns are not covered; extend the padding",
            uncovered[0], uncovered[1]
        )));
    }
    Ok(scan)
}

/// Extra trailing padding needed so that a scan with this probe and shift
/// covers every pixel of a `height x width` object.
pub fn coverage_extension(
    height: usize,
    width: usize,
    probe_size: usize,
    shift: usize,
) -> [usize; 2] {
    let ext = |d: usize| {
        if d <= probe_size {
            probe_size - d
        } else {
            (shift - (d - probe_size) % shift) % shift
        }
    };
    [ext(height), ext(width)]
}

/// Forward/backward ptychographic operator for a fixed geometry.
#[derive(Clone, Debug)]
pub struct Ptychography {
    probe: Probe,
    scan: ScanGrid,
    object_dims: (usize, usize),
    weights: Vec<f64>,
    fft: SegmentFft,
}

impl Ptychography {
    pub fn new(object_dims: (usize, usize), probe: Probe, scan: ScanGrid) -> Result<Self> {
        let (h, w) = object_dims;
        let p = probe.size();
        if scan.rows == 0 || scan.cols == 0 {
            return Err(Error::Shape("scan grid has no positions".into()));
        }
        let (last_r, last_c) = scan.position(scan.rows - 1, scan.cols - 1);
        if last_r + p > h || last_c + p > w {
            return Err(Error::Shape(format!(
                "scan placements exceed the {h}x{w} object"
            )));
        }
        let mut weights = vec![0.0; h * w];
        for (r0, c0) in scan.positions() {
            for i in 0..p {
                for j in 0..p {
                    weights[(r0 + i) * w + c0 + j] += probe.get(i, j).norm_sqr();
                }
            }
        }
        Ok(Self {
            fft: SegmentFft::new(p, p),
            probe,
            scan,
            object_dims,
            weights,
        })
    }

    /// Builds the operator and rejects geometries that leave any pixel with
    /// zero coverage.
    pub fn new_strict(object_dims: (usize, usize), probe: Probe, scan: ScanGrid) -> Result<Self> {
        let op = Self::new(object_dims, probe, scan)?;
        if let Some(idx) = op.weights.iter().position(|&wt| wt == 0.0) {
            let w = object_dims.1;
            return Err(Error::Coverage(format!(
                "pixel ({}, {}) has zero probe coverage",
                idx / w,
                idx % w
            )));
        }
        Ok(op)
    }

    pub fn probe(&self) -> &Probe {
        &self.probe
    }

    pub fn scan(&self) -> &ScanGrid {
        &self.scan
    }

    pub fn object_dims(&self) -> (usize, usize) {
        self.object_dims
    }

    pub fn ptychograph_dims(&self) -> [usize; 4] {
        let p = self.probe.size();
        [self.scan.rows, self.scan.cols, p, p]
    }

    /// Per-pixel sum of `|probe|^2` over all covering placements.
    pub fn coverage_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn segment_fft(&self) -> &SegmentFft {
        &self.fft
    }

    pub fn forward(&self, object: &ComplexGrid2D) -> Result<ComplexGrid4D> {
        if object.dims() != self.object_dims {
            return Err(Error::Shape(format!(
                "object {:?} does not match geometry {:?}",
                object.dims(),
                self.object_dims
            )));
        }
        let p = self.probe.size();
        let w = self.object_dims.1;
        let src = object.as_slice();
        let mut out = ComplexGrid4D::zeros(self.ptychograph_dims());
        for k in 0..self.scan.rows {
            for l in 0..self.scan.cols {
                let (r0, c0) = self.scan.position(k, l);
                let segment = out.segment_mut(k, l);
                for i in 0..p {
                    let row = &src[(r0 + i) * w + c0..(r0 + i) * w + c0 + p];
                    let probe_row = &self.probe.values[i * p..(i + 1) * p];
                    for ((dst, &pv), &ov) in segment[i * p..(i + 1) * p]
                        .iter_mut()
                        .zip(probe_row)
                        .zip(row)
                    {
                        *dst = pv * ov;
                    }
                }
                self.fft.forward(segment);
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, x: &ComplexGrid4D) -> Result<ComplexGrid2D> {
        x.expect_same_dims(self.ptychograph_dims())?;
        let p = self.probe.size();
        let (h, w) = self.object_dims;
        let mut canvas = vec![C64::new(0.0, 0.0); h * w];
        let mut segment = vec![C64::new(0.0, 0.0); p * p];
        for k in 0..self.scan.rows {
            for l in 0..self.scan.cols {
                let (r0, c0) = self.scan.position(k, l);
                segment.copy_from_slice(x.segment(k, l));
                self.fft.inverse(&mut segment);
                for i in 0..p {
                    let dst = &mut canvas[(r0 + i) * w + c0..(r0 + i) * w + c0 + p];
                    let probe_row = &self.probe.values[i * p..(i + 1) * p];
                    for ((d, pv), s) in dst
                        .iter_mut()
                        .zip(probe_row)
                        .zip(&segment[i * p..(i + 1) * p])
                    {
                        *d += pv.conj() * s;
                    }
                }
            }
        }
        for (v, wt) in canvas.iter_mut().zip(&self.weights) {
            *v /= wt.max(WEIGHT_DELTA);
        }
        ComplexGrid2D::new(h, w, canvas)
    }

    pub fn amplitudes(&self, object: &ComplexGrid2D) -> Result<RealGrid4D> {
        Ok(self.forward(object)?.abs())
    }
}

pub fn pty_stft(object: &ComplexGrid2D, probe: &Probe, scan: &ScanGrid) -> Result<ComplexGrid4D> {
    Ptychography::new(object.dims(), probe.clone(), *scan)?.forward(object)
}

/// Overlap-add pseudoinverse of [`pty_stft`] onto an `object_dims` canvas.
pub fn pty_istft(
    x: &ComplexGrid4D,
    probe: &Probe,
    scan: &ScanGrid,
    object_dims: (usize, usize),
) -> Result<ComplexGrid2D> {
    Ptychography::new(object_dims, probe.clone(), *scan)?.inverse(x)
}

pub fn record_amplitudes(
    object: &ComplexGrid2D,
    probe: &Probe,
    scan: &ScanGrid,
) -> Result<RealGrid4D> {
    Ok(pty_stft(object, probe, scan)?.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_probe_closed_form() {
        let probe = make_gaussian_probe(9, 1.5).unwrap();
        assert_eq!(probe.get(4, 4), C64::new(1.0, 0.0));
        let ratio = probe.get(0, 0).re / probe.get(4, 4).re;
        assert!((ratio - (-32.0f64 / 4.5).exp()).abs() < 1e-15);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(probe.get(i, j), probe.get(j, i));
                assert_eq!(probe.get(i, j), probe.get(8 - i, j));
                assert_eq!(probe.get(i, j).im, 0.0);
                assert!(probe.get(i, j).re > 0.0);
            }
        }
    }

    #[test]
    fn even_probe_is_rejected() {
        assert!(make_gaussian_probe(8, 1.5).is_err());
        assert!(make_gaussian_probe(9, 0.0).is_err());
    }

    #[test]
    fn scan_grid_small_cases() {
        let probe = make_gaussian_probe(9, 1.5).unwrap();
        let single = make_scan_grid(9, 9, &probe, 5, true).unwrap();
        assert_eq!((single.rows, single.cols), (1, 1));
        assert_eq!(single.positions().collect::<Vec<_>>(), vec![(0, 0)]);

        let s1 = make_scan_grid(12, 12, &probe, 1, true).unwrap();
        assert_eq!(s1.rows, 4);
        let rows: Vec<usize> = (0..s1.rows).map(|k| s1.position(k, 0).0).collect();
        assert_eq!(rows, vec![0, 1, 2, 3]);
    }

    #[test]
    fn scan_grid_reports_and_rejects_shortfall() {
        let probe = make_gaussian_probe(9, 1.5).unwrap();
        let scan = make_scan_grid(46, 46, &probe, 2, false).unwrap();
        assert_eq!(scan.uncovered, [1, 1]);
        assert!(make_scan_grid(46, 46, &probe, 2, true).is_err());
        assert_eq!(coverage_extension(46, 46, 9, 2), [1, 1]);
        assert_eq!(coverage_extension(47, 47, 9, 2), [0, 0]);
        assert_eq!(coverage_extension(5, 9, 9, 2), [4, 0]);
        assert!(make_scan_grid(47, 47, &probe, 2, true)
            .unwrap()
            .is_fully_covering());
    }

    #[test]
    fn single_flat_position_inverse_is_plain_idft() {
        let probe = Probe::flat(4).unwrap();
        let scan = make_scan_grid(4, 4, &probe, 1, true).unwrap();
        let data: Vec<C64> = (0..16)
            .map(|i| C64::new(i as f64 * 0.1, 1.0 - i as f64 * 0.05))
            .collect();
        let x = ComplexGrid4D::new([1, 1, 4, 4], data).unwrap();
        let obj = pty_istft(&x, &probe, &scan, (4, 4)).unwrap();
        let plain = crate::grid::ifft2_segments(&x).unwrap();
        for (a, b) in obj.as_slice().iter().zip(plain.as_slice()) {
            assert!((a - b).norm() < 1e-11);
        }
    }

    #[test]
    fn strict_operator_rejects_zero_coverage() {
        let mut values = vec![C64::new(0.0, 0.0); 9];
        values[4] = C64::new(1.0, 0.0);
        let probe = Probe::new(3, values).unwrap();
        let scan = make_scan_grid(5, 5, &probe, 2, true).unwrap();
        assert!(Ptychography::new_strict((5, 5), probe.clone(), scan).is_err());
        assert!(Ptychography::new((5, 5), probe, scan).is_ok());
    }

    #[test]
    fn zero_object_gives_zero_ptychograph() {
        let probe = make_gaussian_probe(3, 1.0).unwrap();
        let scan = make_scan_grid(7, 7, &probe, 2, true).unwrap();
        let x = pty_stft(&ComplexGrid2D::zeros(7, 7), &probe, &scan).unwrap();
        assert!(x.as_slice().iter().all(|z| z.norm() == 0.0));
        assert!(
            record_amplitudes(&ComplexGrid2D::zeros(7, 7), &probe, &scan)
                .unwrap()
                .as_slice()
                .iter()
                .all(|&v| v == 0.0)
        );
        let o = pty_istft(&x, &probe, &scan, (7, 7)).unwrap();
        assert!(o.as_slice().iter().all(|z| z.norm() == 0.0));
    }
}
