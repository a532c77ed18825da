//! Zero-padded 4D cross-correlations over multi-channel feature maps, with
//! their reverse-mode derivatives.
//!
//! The two scan axes are handled by shifting whole segments; the two
//! frequency axes are unrolled per segment (im2col) so that every
//! (segment, scan tap) pair reduces to one dense matrix product. A complex
//! product is evaluated in real block form
//! `[x_re | x_im] [[W_re, W_im], [-W_im, W_re]] = [y_re | y_im]`.
//!
//! Complex gradients follow the convention `dL/dRe + i dL/dIm` for a real
//! loss `L`, which is exactly the gradient of the real block form.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid4D, C64};

/// Storage type of feature maps. Parameters and gradients stay in `f64`.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialEq
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + AddAssign
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn hypot(self, other: Self) -> Self;
    fn logistic(self) -> Self;
    fn recip(self) -> Self;

    /// `c = alpha a b + beta c` with explicit strides.
    ///
    /// # Safety
    /// The pointers and strides must address valid `m x k`, `k x n` and
    /// `m x n` matrices, and `c` must not alias `a` or `b`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn hypot(self, other: Self) -> Self {
                <$t>::hypot(self, other)
            }
            #[inline]
            fn logistic(self) -> Self {
                1.0 / (1.0 + (-self).exp())
            }
            #[inline]
            fn recip(self) -> Self {
                1.0 / self
            }
            unsafe fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, 1.0, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

/// Complex multi-channel 4D grid. Each position stores the real parts of all
/// channels followed by their imaginary parts:
/// `data[pos * 2C + c]` is `Re(c)` and `data[pos * 2C + C + c]` is `Im(c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T = f64> {
    pub dims: [usize; 4],
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> FeatureMap<T> {
    pub fn zeros(dims: [usize; 4], channels: usize) -> Self {
        Self {
            dims,
            channels,
            data: vec![T::ZERO; dims.iter().product::<usize>() * 2 * channels],
        }
    }

    pub fn positions(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn get(&self, pos: usize, c: usize) -> C64 {
        let base = pos * 2 * self.channels;
        C64::new(
            self.data[base + c].to_f64(),
            self.data[base + self.channels + c].to_f64(),
        )
    }

    #[inline]
    pub fn set(&mut self, pos: usize, c: usize, value: C64) {
        let base = pos * 2 * self.channels;
        self.data[base + c] = T::from_f64(value.re);
        self.data[base + self.channels + c] = T::from_f64(value.im);
    }

    /// Interleaves single-channel grids into one feature map.
    pub fn stack(grids: &[&ComplexGrid4D]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero channels".into()))?;
        let dims = first.dims();
        let mut map = Self::zeros(dims, grids.len());
        for (c, g) in grids.iter().enumerate() {
            g.expect_same_dims(dims)?;
            for (p, &z) in g.as_slice().iter().enumerate() {
                map.set(p, c, z);
            }
        }
        Ok(map)
    }

    pub fn channel(&self, c: usize) -> ComplexGrid4D {
        let data = (0..self.positions()).map(|p| self.get(p, c)).collect();
        ComplexGrid4D::new(self.dims, data).expect("feature map dims are valid")
    }

    /// Channel-last magnitudes, `positions x channels`.
    pub fn amplitudes(&self) -> Vec<T> {
        let c = self.channels;
        let mut out = Vec::with_capacity(self.positions() * c);
        for block in self.data.chunks_exact(2 * c) {
            let (re, im) = block.split_at(c);
            out.extend(re.iter().zip(im).map(|(&r, &i)| r.hypot(i)));
        }
        out
    }
}

/// Complex kernel stored as `[tap][in][out]` with planar parts, where
/// `tap` is the row-major index over the four tap axes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexKernel4D {
    pub taps: [usize; 4],
    pub in_channels: usize,
    pub out_channels: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexKernel4D {
    pub fn zeros(taps: [usize; 4], in_channels: usize, out_channels: usize) -> Result<Self> {
        if taps.iter().any(|&t| t == 0 || t % 2 == 0) {
            return Err(Error::Shape(format!(
                "kernel taps must be odd in every axis, got {taps:?}"
            )));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape(
                "kernel channel counts must be positive".into(),
            ));
        }
        let len = taps.iter().product::<usize>() * in_channels * out_channels;
        Ok(Self {
            taps,
            in_channels,
            out_channels,
            re: vec![0.0; len],
            im: vec![0.0; len],
        })
    }

    pub fn tap_count(&self) -> usize {
        self.taps.iter().product()
    }

    #[inline]
    pub fn index(&self, tap: usize, input: usize, output: usize) -> usize {
        (tap * self.in_channels + input) * self.out_channels + output
    }

    pub fn get(&self, tap: usize, input: usize, output: usize) -> C64 {
        let i = self.index(tap, input, output);
        C64::new(self.re[i], self.im[i])
    }

    pub fn set(&mut self, tap: usize, input: usize, output: usize, value: C64) {
        let i = self.index(tap, input, output);
        self.re[i] = value.re;
        self.im[i] = value.im;
    }

    /// Flat tap index of the kernel centre.
    pub fn centre_tap(&self) -> usize {
        let [a, b, c, d] = self.taps;
        ((a / 2 * b + b / 2) * c + c / 2) * d + d / 2
    }

    /// Per scan tap, the `(2 F Cin) x (2 Cout)` real block matrix.
    fn block_weights<T: Scalar>(&self) -> Vec<T> {
        let (ci, co) = (self.in_channels, self.out_channels);
        let f = self.taps[2] * self.taps[3];
        let rows = 2 * f * ci;
        let cols = 2 * co;
        let scan_taps = self.taps[0] * self.taps[1];
        let mut out = vec![T::ZERO; scan_taps * rows * cols];
        for s in 0..scan_taps {
            let block = &mut out[s * rows * cols..(s + 1) * rows * cols];
            for ft in 0..f {
                for i in 0..ci {
                    for o in 0..co {
                        let idx = self.index(s * f + ft, i, o);
                        let (wr, wi) = (T::from_f64(self.re[idx]), T::from_f64(self.im[idx]));
                        let top = (ft * ci + i) * cols;
                        let bottom = (f * ci + ft * ci + i) * cols;
                        block[top + o] = wr;
                        block[top + co + o] = wi;
                        block[bottom + o] = -wi;
                        block[bottom + co + o] = wr;
                    }
                }
            }
        }
        out
    }

    /// Folds block-form gradients back onto the tied real/imaginary parts.
    fn accumulate_block_grad<T: Scalar>(&mut self, block_grad: &[T]) {
        let (ci, co) = (self.in_channels, self.out_channels);
        let f = self.taps[2] * self.taps[3];
        let rows = 2 * f * ci;
        let cols = 2 * co;
        for s in 0..self.taps[0] * self.taps[1] {
            let block = &block_grad[s * rows * cols..(s + 1) * rows * cols];
            for ft in 0..f {
                for i in 0..ci {
                    for o in 0..co {
                        let idx = self.index(s * f + ft, i, o);
                        let top = (ft * ci + i) * cols;
                        let bottom = (f * ci + ft * ci + i) * cols;
                        self.re[idx] += block[top + o].to_f64() + block[bottom + co + o].to_f64();
                        self.im[idx] += block[top + co + o].to_f64() - block[bottom + o].to_f64();
                    }
                }
            }
        }
    }
}

/// Real kernel with the same `[tap][in][out]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct RealKernel4D {
    pub taps: [usize; 4],
    pub in_channels: usize,
    pub out_channels: usize,
    pub values: Vec<f64>,
}

impl RealKernel4D {
    pub fn zeros(taps: [usize; 4], in_channels: usize, out_channels: usize) -> Result<Self> {
        let shape = ComplexKernel4D::zeros(taps, in_channels, out_channels)?;
        Ok(Self {
            taps,
            in_channels,
            out_channels,
            values: shape.re,
        })
    }
}

/// Shape bookkeeping shared by the real and complex paths. `width` is the
/// number of reals stored per position and channel (1 real, 2 complex).
#[derive(Clone, Copy)]
struct Layout {
    dims: [usize; 4],
    taps: [usize; 4],
    ci: usize,
    width: usize,
}

impl Layout {
    fn seg_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    fn freq_taps(&self) -> usize {
        self.taps[2] * self.taps[3]
    }

    /// Columns of one unrolled row: `width * F * Cin`.
    fn col_width(&self) -> usize {
        self.width * self.freq_taps() * self.ci
    }

    fn segments(&self) -> usize {
        self.dims[0] * self.dims[1]
    }

    /// For each frequency position and frequency tap, the source position
    /// inside the segment (or `None` outside).
    fn freq_sources(&self) -> Vec<Option<usize>> {
        let [_, _, md, nd] = self.dims;
        let [_, _, tc, td] = self.taps;
        let (cc, cd) = (tc / 2, td / 2);
        let mut out = Vec::with_capacity(md * nd * tc * td);
        for m in 0..md {
            for n in 0..nd {
                for a in 0..tc {
                    for b in 0..td {
                        let sm = (m + a).checked_sub(cc).filter(|&v| v < md);
                        let sn = (n + b).checked_sub(cd).filter(|&v| v < nd);
                        out.push(sm.zip(sn).map(|(sm, sn)| sm * nd + sn));
                    }
                }
            }
        }
        out
    }

    /// Calls `f(out_segment, scan_tap, in_segment)` for all valid pairs.
    fn for_each_scan_pair(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [kd, ld, _, _] = self.dims;
        let [ta, tb, _, _] = self.taps;
        let (ca, cb) = (ta / 2, tb / 2);
        for k in 0..kd {
            for l in 0..ld {
                for a in 0..ta {
                    let Some(sk) = (k + a).checked_sub(ca).filter(|&v| v < kd) else {
                        continue;
                    };
                    for b in 0..tb {
                        let Some(sl) = (l + b).checked_sub(cb).filter(|&v| v < ld) else {
                            continue;
                        };
                        f(k * ld + l, a * tb + b, sk * ld + sl);
                    }
                }
            }
        }
    }

    /// Unrolls every segment of `data` (`positions x width*Cin`, with the
    /// `width` parts stored as consecutive `Cin` blocks) into
    /// `segments x seg_len x col_width`.
    fn im2col<T: Scalar>(&self, data: &[T]) -> Vec<T> {
        let (seg_len, f, ci, w) = (self.seg_len(), self.freq_taps(), self.ci, self.width);
        let cw = self.col_width();
        let sources = self.freq_sources();
        let mut col = vec![T::ZERO; self.segments() * seg_len * cw];
        for s in 0..self.segments() {
            for p in 0..seg_len {
                let row = &mut col[(s * seg_len + p) * cw..(s * seg_len + p + 1) * cw];
                for ft in 0..f {
                    if let Some(q) = sources[p * f + ft] {
                        let src = &data[(s * seg_len + q) * w * ci..(s * seg_len + q + 1) * w * ci];
                        for part in 0..w {
                            let dst = part * f * ci + ft * ci;
                            row[dst..dst + ci].copy_from_slice(&src[part * ci..(part + 1) * ci]);
                        }
                    }
                }
            }
        }
        col
    }

    /// Adjoint of [`Layout::im2col`]: scatters column gradients back.
    fn col2im<T: Scalar>(&self, col: &[T]) -> Vec<T> {
        let (seg_len, f, ci, w) = (self.seg_len(), self.freq_taps(), self.ci, self.width);
        let cw = self.col_width();
        let sources = self.freq_sources();
        let mut data = vec![T::ZERO; self.segments() * seg_len * w * ci];
        for s in 0..self.segments() {
            for p in 0..seg_len {
                let row = &col[(s * seg_len + p) * cw..(s * seg_len + p + 1) * cw];
                for ft in 0..f {
                    if let Some(q) = sources[p * f + ft] {
                        let dst =
                            &mut data[(s * seg_len + q) * w * ci..(s * seg_len + q + 1) * w * ci];
                        for part in 0..w {
                            let src = part * f * ci + ft * ci;
                            for (d, &v) in dst[part * ci..(part + 1) * ci]
                                .iter_mut()
                                .zip(&row[src..src + ci])
                            {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
        data
    }
}

/// `c += a * b` for row-major `a (m x k)`, `b (k x n)`, `c (m x n)`.
#[inline]
fn gemm_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slice lengths cover every element addressed by the
    // row-major strides passed below.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c += a^T * b` for row-major `a (k x m)`, `b (k x n)`, `c (m x n)`.
#[inline]
fn gemm_at_b_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as in `gemm_acc`, with `a` read through transposed strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.as_ptr(),
            1,
            m as isize,
            b.as_ptr(),
            n as isize,
            1,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// `c += a * b^T` for row-major `a (m x k)`, `b (n x k)`, `c (m x n)`.
#[inline]
fn gemm_a_bt_acc<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as in `gemm_acc`, with `b` read through transposed strides.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Lays per-tap `(cw x oc)` blocks side by side as one `cw x (S oc)` matrix.
fn widen_blocks<T: Scalar>(blocks: &[T], scan_taps: usize, cw: usize, oc: usize) -> Vec<T> {
    let mut wide = vec![T::ZERO; cw * scan_taps * oc];
    for t in 0..scan_taps {
        for r in 0..cw {
            let src = &blocks[(t * cw + r) * oc..(t * cw + r + 1) * oc];
            wide[(r * scan_taps + t) * oc..(r * scan_taps + t + 1) * oc].copy_from_slice(src);
        }
    }
    wide
}

fn narrow_blocks<T: Scalar>(wide: &[T], scan_taps: usize, cw: usize, oc: usize) -> Vec<T> {
    let mut blocks = vec![T::ZERO; wide.len()];
    for t in 0..scan_taps {
        for r in 0..cw {
            let src = &wide[(r * scan_taps + t) * oc..(r * scan_taps + t + 1) * oc];
            blocks[(t * cw + r) * oc..(t * cw + r + 1) * oc].copy_from_slice(src);
        }
    }
    blocks
}

/// For every input segment, the `(scan_tap, out_segment)` pairs it feeds.
fn pairs_by_source(layout: &Layout) -> Vec<Vec<(usize, usize)>> {
    let mut by_src = vec![Vec::new(); layout.segments()];
    layout.for_each_scan_pair(|dst, tap, src| by_src[src].push((tap, dst)));
    by_src
}

/// Core of both convolution kinds: `out[dst] += col[src] * block[tap]`,
/// evaluated as one wide product per source segment.
fn conv_blocks<T: Scalar>(layout: &Layout, col: &[T], blocks: &[T], oc: usize) -> Vec<T> {
    let seg_len = layout.seg_len();
    let cw = layout.col_width();
    let scan_taps = layout.taps[0] * layout.taps[1];
    let wide = widen_blocks(blocks, scan_taps, cw, oc);
    let wn = scan_taps * oc;
    let mut buf = vec![T::ZERO; seg_len * wn];
    let mut out = vec![T::ZERO; layout.segments() * seg_len * oc];
    for (src, pairs) in pairs_by_source(layout).iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = T::ZERO);
        gemm_acc(
            seg_len,
            cw,
            wn,
            &col[src * seg_len * cw..(src + 1) * seg_len * cw],
            &wide,
            &mut buf,
        );
        for &(tap, dst) in pairs {
            let dst_seg = &mut out[dst * seg_len * oc..(dst + 1) * seg_len * oc];
            for p in 0..seg_len {
                let from = &buf[p * wn + tap * oc..p * wn + (tap + 1) * oc];
                for (d, &v) in dst_seg[p * oc..(p + 1) * oc].iter_mut().zip(from) {
                    *d += v;
                }
            }
        }
    }
    out
}

/// Block-weight gradient and (optionally) input-column gradient.
fn conv_blocks_backward<T: Scalar>(
    layout: &Layout,
    col: &[T],
    blocks: &[T],
    grad_out: &[T],
    oc: usize,
    want_input: bool,
) -> (Vec<T>, Option<Vec<T>>) {
    let seg_len = layout.seg_len();
    let cw = layout.col_width();
    let scan_taps = layout.taps[0] * layout.taps[1];
    let wide = widen_blocks(blocks, scan_taps, cw, oc);
    let wn = scan_taps * oc;
    let mut grad_wide = vec![T::ZERO; wide.len()];
    let mut grad_col = want_input.then(|| vec![T::ZERO; col.len()]);
    let mut buf = vec![T::ZERO; seg_len * wn];
    for (src, pairs) in pairs_by_source(layout).iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = T::ZERO);
        for &(tap, dst) in pairs {
            let g = &grad_out[dst * seg_len * oc..(dst + 1) * seg_len * oc];
            for p in 0..seg_len {
                buf[p * wn + tap * oc..p * wn + (tap + 1) * oc]
                    .copy_from_slice(&g[p * oc..(p + 1) * oc]);
            }
        }
        let c = &col[src * seg_len * cw..(src + 1) * seg_len * cw];
        gemm_at_b_acc(cw, seg_len, wn, c, &buf, &mut grad_wide);
        if let Some(gc) = grad_col.as_mut() {
            gemm_a_bt_acc(
                seg_len,
                wn,
                cw,
                &buf,
                &wide,
                &mut gc[src * seg_len * cw..(src + 1) * seg_len * cw],
            );
        }
    }
    (narrow_blocks(&grad_wide, scan_taps, cw, oc), grad_col)
}

fn complex_layout<T: Scalar>(input: &FeatureMap<T>, kernel: &ComplexKernel4D) -> Result<Layout> {
    if input.channels != kernel.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, kernel expects {}",
            input.channels, kernel.in_channels
        )));
    }
    Ok(Layout {
        dims: input.dims,
        taps: kernel.taps,
        ci: kernel.in_channels,
        width: 2,
    })
}

/// `out[o] = sum_i W[o, i] (*) x[i]` with zero padding; output dims equal
/// input dims.
pub fn complex_conv4d<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &ComplexKernel4D,
) -> Result<FeatureMap<T>> {
    let layout = complex_layout(input, kernel)?;
    let col = layout.im2col(&input.data);
    let data = conv_blocks(
        &layout,
        &col,
        &kernel.block_weights::<T>(),
        2 * kernel.out_channels,
    );
    Ok(FeatureMap {
        dims: input.dims,
        channels: kernel.out_channels,
        data,
    })
}

/// Gradients of [`complex_conv4d`] with respect to the kernel and, when
/// `want_input` is set, the input.
pub fn complex_conv4d_backward<T: Scalar>(
    input: &FeatureMap<T>,
    kernel: &ComplexKernel4D,
    grad_out: &FeatureMap<T>,
    want_input: bool,
) -> Result<(ComplexKernel4D, Option<FeatureMap<T>>)> {
    let layout = complex_layout(input, kernel)?;
    if grad_out.dims != input.dims || grad_out.channels != kernel.out_channels {
        return Err(Error::Shape(
            "output gradient does not match the convolution output".into(),
        ));
    }
    let col = layout.im2col(&input.data);
    let blocks = kernel.block_weights::<T>();
    let (grad_blocks, grad_col) = conv_blocks_backward(
        &layout,
        &col,
        &blocks,
        &grad_out.data,
        2 * kernel.out_channels,
        want_input,
    );
    let mut grad_k = ComplexKernel4D::zeros(kernel.taps, kernel.in_channels, kernel.out_channels)?;
    grad_k.accumulate_block_grad(&grad_blocks);
    let grad_in = grad_col.map(|gc| FeatureMap {
        dims: input.dims,
        channels: input.channels,
        data: layout.col2im(&gc),
    });
    Ok((grad_k, grad_in))
}

fn real_layout(input_len: usize, dims: [usize; 4], kernel: &RealKernel4D) -> Result<Layout> {
    let ci = kernel.in_channels;
    if input_len != dims.iter().product::<usize>() * ci {
        return Err(Error::Shape(format!(
            "real input of length {input_len} does not hold {ci} channels of {dims:?}"
        )));
    }
    Ok(Layout {
        dims,
        taps: kernel.taps,
        ci,
        width: 1,
    })
}

/// Real-valued counterpart of [`complex_conv4d`] over channel-last data.
pub fn real_conv4d<T: Scalar>(
    input: &[T],
    dims: [usize; 4],
    kernel: &RealKernel4D,
) -> Result<Vec<T>> {
    let layout = real_layout(input.len(), dims, kernel)?;
    let col = layout.im2col(input);
    // [tap][in][out] with tap = scan_tap * F + freq_tap already matches the
    // per-scan-tap (F Cin) x Cout block layout
    let blocks: Vec<T> = kernel.values.iter().map(|&v| T::from_f64(v)).collect();
    Ok(conv_blocks(&layout, &col, &blocks, kernel.out_channels))
}

pub fn real_conv4d_backward<T: Scalar>(
    input: &[T],
    dims: [usize; 4],
    kernel: &RealKernel4D,
    grad_out: &[T],
    want_input: bool,
) -> Result<(RealKernel4D, Option<Vec<T>>)> {
    let layout = real_layout(input.len(), dims, kernel)?;
    let col = layout.im2col(input);
    let blocks: Vec<T> = kernel.values.iter().map(|&v| T::from_f64(v)).collect();
    let (grad, grad_col) = conv_blocks_backward(
        &layout,
        &col,
        &blocks,
        grad_out,
        kernel.out_channels,
        want_input,
    );
    let grad_in = grad_col.map(|gc| layout.col2im(&gc));
    let values = grad.iter().map(|v| v.to_f64()).collect();
    Ok((
        RealKernel4D {
            values,
            ..kernel.clone()
        },
        grad_in,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_map(dims: [usize; 4], channels: usize) -> FeatureMap<f64> {
        let mut map = FeatureMap::zeros(dims, channels);
        for (i, v) in map.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin();
        }
        map
    }

    #[test]
    fn centred_delta_kernel_is_identity() {
        let input = ramp_map([3, 4, 3, 3], 1);
        let mut kernel = ComplexKernel4D::zeros([5, 5, 3, 3], 1, 1).unwrap();
        let c = kernel.centre_tap();
        kernel.set(c, 0, 0, C64::new(1.0, 0.0));
        assert_eq!(complex_conv4d(&input, &kernel).unwrap(), input);
    }

    #[test]
    fn one_by_one_kernel_scales() {
        let input = ramp_map([2, 2, 3, 3], 1);
        let mut kernel = ComplexKernel4D::zeros([1, 1, 1, 1], 1, 1).unwrap();
        let w = C64::new(0.5, -2.0);
        kernel.set(0, 0, 0, w);
        let out = complex_conv4d(&input, &kernel).unwrap();
        for p in 0..input.positions() {
            assert!((out.get(p, 0) - w * input.get(p, 0)).norm() < 1e-15);
        }
    }

    #[test]
    fn even_taps_and_channel_mismatch_are_rejected() {
        assert!(ComplexKernel4D::zeros([4, 5, 3, 3], 1, 1).is_err());
        let kernel = ComplexKernel4D::zeros([3, 3, 3, 3], 2, 1).unwrap();
        assert!(complex_conv4d(&ramp_map([2, 2, 2, 2], 1), &kernel).is_err());
    }

    #[test]
    fn stack_and_channel_round_trip() {
        let a = ComplexGrid4D::new(
            [1, 1, 2, 2],
            (0..4).map(|i| C64::new(i as f64, 1.0)).collect(),
        )
        .unwrap();
        let b = a.map(|z| z * 2.0);
        let map = FeatureMap::<f64>::stack(&[&a, &b]).unwrap();
        assert_eq!(map.channel(0), a);
        assert_eq!(map.channel(1), b);
        assert_eq!(map.amplitudes()[1], b.as_slice()[0].norm());
    }

    #[test]
    fn im2col_and_col2im_are_adjoint() {
        let layout = Layout {
            dims: [2, 3, 4, 3],
            taps: [3, 3, 3, 3],
            ci: 2,
            width: 2,
        };
        let x = ramp_map([2, 3, 4, 3], 2).data;
        let col_len = layout.segments() * layout.seg_len() * layout.col_width();
        let y: Vec<f64> = (0..col_len).map(|i| (i as f64 * 0.91).cos()).collect();
        let lhs: f64 = layout.im2col(&x).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&layout.col2im(&y)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
