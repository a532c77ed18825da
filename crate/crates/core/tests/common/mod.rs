// Independent brute-force references. Nothing here calls into the
// transform or convolution code under test.
#![allow(dead_code)]

use std::f64::consts::TAU;

use ptychodip::dip::ComplexKernel4D;
use ptychodip::{ComplexGrid2D, ComplexGrid4D, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_c64(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

pub fn random_grid4(dims: [usize; 4], rng: &mut ChaCha8Rng) -> ComplexGrid4D {
    let n = dims.iter().product();
    ComplexGrid4D::new(dims, (0..n).map(|_| random_c64(rng)).collect()).unwrap()
}

pub fn random_object(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ComplexGrid2D {
    ComplexGrid2D::new(h, w, (0..h * w).map(|_| random_c64(rng)).collect()).unwrap()
}

pub fn rel_diff(a: &[C64], b: &[C64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

/// Unitary 2D DFT by direct summation. `sign = -1` forward, `+1` inverse.
pub fn dft2(x: &[C64], rows: usize, cols: usize, sign: f64) -> Vec<C64> {
    let scale = 1.0 / ((rows * cols) as f64).sqrt();
    let mut out = vec![C64::new(0.0, 0.0); rows * cols];
    for u in 0..rows {
        for v in 0..cols {
            let mut acc = C64::new(0.0, 0.0);
            for m in 0..rows {
                for n in 0..cols {
                    let phase =
                        sign * TAU * ((u * m) as f64 / rows as f64 + (v * n) as f64 / cols as f64);
                    acc += x[m * cols + n] * C64::from_polar(1.0, phase);
                }
            }
            out[u * cols + v] = acc * scale;
        }
    }
    out
}

pub fn gaussian_probe(p: usize, sigma: f64) -> Vec<C64> {
    let c = (p / 2) as f64;
    let mut v = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            let r2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            v.push(C64::new((-r2 / (2.0 * sigma * sigma)).exp(), 0.0));
        }
    }
    v
}

pub struct BruteGeometry {
    pub height: usize,
    pub width: usize,
    pub probe: Vec<C64>,
    pub p: usize,
    pub shift: usize,
}

impl BruteGeometry {
    pub fn scan(&self) -> (usize, usize) {
        (
            (self.height - self.p) / self.shift + 1,
            (self.width - self.p) / self.shift + 1,
        )
    }

    pub fn stft(&self, obj: &[C64]) -> Vec<C64> {
        let (rows, cols) = self.scan();
        let p = self.p;
        let mut out = Vec::with_capacity(rows * cols * p * p);
        for k in 0..rows {
            for l in 0..cols {
                let mut seg = vec![C64::new(0.0, 0.0); p * p];
                for i in 0..p {
                    for j in 0..p {
                        seg[i * p + j] = self.probe[i * p + j]
                            * obj[(k * self.shift + i) * self.width + l * self.shift + j];
                    }
                }
                out.extend(dft2(&seg, p, p, -1.0));
            }
        }
        out
    }

    pub fn istft(&self, x: &[C64]) -> Vec<C64> {
        let (rows, cols) = self.scan();
        let p = self.p;
        let mut canvas = vec![C64::new(0.0, 0.0); self.height * self.width];
        let mut weight = vec![0.0; self.height * self.width];
        for k in 0..rows {
            for l in 0..cols {
                let start = (k * cols + l) * p * p;
                let seg = dft2(&x[start..start + p * p], p, p, 1.0);
                for i in 0..p {
                    for j in 0..p {
                        let idx = (k * self.shift + i) * self.width + l * self.shift + j;
                        canvas[idx] += self.probe[i * p + j].conj() * seg[i * p + j];
                        weight[idx] += self.probe[i * p + j].norm_sqr();
                    }
                }
            }
        }
        canvas
            .iter()
            .zip(&weight)
            .map(|(c, &w)| if w > 1e-12 { c / w } else { c / 1e-12 })
            .collect()
    }

    pub fn consistency(&self, x: &[C64]) -> Vec<C64> {
        self.stft(&self.istft(x))
    }
}

/// Zero-padded 4D cross-correlation by direct summation.
/// `input[c]` is one channel laid out like a `ComplexGrid4D` with `dims`.
pub fn conv4d(input: &[Vec<C64>], dims: [usize; 4], kernel: &ComplexKernel4D) -> Vec<Vec<C64>> {
    let [kd, ld, md, nd] = dims;
    let [ta, tb, tc, td] = kernel.taps;
    let mut out = vec![vec![C64::new(0.0, 0.0); kd * ld * md * nd]; kernel.out_channels];
    for o in 0..kernel.out_channels {
        for k in 0..kd {
            for l in 0..ld {
                for m in 0..md {
                    for n in 0..nd {
                        let mut acc = C64::new(0.0, 0.0);
                        for a in 0..ta {
                            for b in 0..tb {
                                for c in 0..tc {
                                    for d in 0..td {
                                        let (sk, sl, sm, sn) = (
                                            (k + a) as isize - (ta / 2) as isize,
                                            (l + b) as isize - (tb / 2) as isize,
                                            (m + c) as isize - (tc / 2) as isize,
                                            (n + d) as isize - (td / 2) as isize,
                                        );
                                        if sk < 0 || sl < 0 || sm < 0 || sn < 0 {
                                            continue;
                                        }
                                        let (sk, sl, sm, sn) =
                                            (sk as usize, sl as usize, sm as usize, sn as usize);
                                        if sk >= kd || sl >= ld || sm >= md || sn >= nd {
                                            continue;
                                        }
                                        let tap = ((a * tb + b) * tc + c) * td + d;
                                        let src = ((sk * ld + sl) * md + sm) * nd + sn;
                                        for (i, ch) in input.iter().enumerate() {
                                            acc += ch[src] * kernel.get(tap, i, o);
                                        }
                                    }
                                }
                            }
                        }
                        out[o][((k * ld + l) * md + m) * nd + n] = acc;
                    }
                }
            }
        }
    }
    out
}

/// I0 by plain power series, `terms` terms.
pub fn i0_series(x: f64, terms: usize) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..terms {
        term *= q / (k as f64 * k as f64);
        sum += term;
    }
    sum
}

/// `∫ f` over `[lo, hi]` by composite Simpson with `n` (even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}
