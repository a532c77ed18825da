//! Training-time corruption: von Mises phase noise and complex Gaussian
//! noise at a target SNR.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexGrid4D, C64};

/// Modified Bessel function of the first kind, order zero.
pub fn bessel_i0(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "I0 is only defined here for x >= 0, got {x}"
        )));
    }
    if x < 15.0 {
        // sum_k (x^2/4)^k / (k!)^2
        let q = x * x / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k: f64 = 1.0;
        while term > sum * 1e-17 {
            term *= q / (k * k);
            sum += term;
            k += 1.0;
        }
        Ok(sum)
    } else {
        // e^x / sqrt(2 pi x) * sum_k ((2k-1)!!)^2 / (k! (8x)^k), truncated at the smallest term
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut k: f64 = 1.0;
        loop {
            let next = term * (2.0 * k - 1.0).powi(2) / (k * 8.0 * x);
            if next >= term || next < sum * 1e-17 {
                break;
            }
            term = next;
            sum += term;
            k += 1.0;
        }
        Ok(x.exp() / (2.0 * PI * x).sqrt() * sum)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Best-Fisher sampler for the von Mises distribution with a wrapped
/// Cauchy envelope.
#[derive(Clone, Copy, Debug)]
pub struct VonMises {
    kappa: f64,
    mu: f64,
    s: f64,
}

impl VonMises {
    pub fn new(kappa: f64, mu: f64) -> Result<Self> {
        if !(kappa >= 0.0) || !kappa.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "von Mises kappa must be finite and >= 0, got {kappa}"
            )));
        }
        let s = if kappa < 1e-8 {
            f64::INFINITY
        } else {
            let root = (1.0 + 4.0 * kappa * kappa).sqrt();
            let tau = 1.0 + root;
            // (tau - sqrt(2 tau)) / (2 kappa) rewritten without cancellation
            let rho = 2.0 * kappa * tau / ((root + 1.0) * (tau + (2.0 * tau).sqrt()));
            (1.0 + rho * rho) / (2.0 * rho)
        };
        Ok(Self { kappa, mu, s })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.s.is_infinite() {
            return wrap_angle(self.mu + rng.random_range(-PI..PI));
        }
        let s = self.s;
        let w = loop {
            let z = (PI * rng.random::<f64>()).cos();
            let w = (1.0 + s * z) / (s + z);
            let y = self.kappa * (s - w);
            let v: f64 = rng.random();
            if y * (2.0 - y) - v >= 0.0 || (y / v).ln() + 1.0 - y >= 0.0 {
                break w;
            }
        };
        let theta = w.clamp(-1.0, 1.0).acos();
        let signed = if rng.random::<f64>() < 0.5 {
            -theta
        } else {
            theta
        };
        wrap_angle(self.mu + signed)
    }
}

pub fn sample_von_mises(kappa: f64, mu: f64, count: usize, seed: u64) -> Result<Vec<f64>> {
    let dist = VonMises::new(kappa, mu)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
}

/// Multiplies every bin by `exp(i eps)` with `eps ~ VonMises(0, kappa)`.
pub fn add_phase_noise(x: &ComplexGrid4D, kappa: f64, seed: u64) -> Result<ComplexGrid4D> {
    let dist = VonMises::new(kappa, 0.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(x.map(|z| z * C64::from_polar(1.0, dist.sample(&mut rng))))
}

/// Adds circular complex Gaussian noise whose expected power sits `snr_db`
/// below the power of the whole grid.
pub fn add_complex_gaussian(x: &ComplexGrid4D, snr_db: f64, seed: u64) -> Result<ComplexGrid4D> {
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "SNR must be finite, got {snr_db}"
        )));
    }
    let signal = x.norm_sqr();
    if signal == 0.0 {
        return Err(Error::InvalidParameter(
            "cannot set an SNR relative to a zero signal".into(),
        ));
    }
    let noise_power = signal / 10f64.powf(snr_db / 10.0);
    let sd = (noise_power / x.len() as f64 / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(x.map(|z| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        z + C64::new(sd * re, sd * im)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum NoiseSpec {
    /// Additive complex Gaussian noise, SNR drawn uniformly in dB.
    ComplexGaussian { snr_db_range: (f64, f64) },
    /// Phase-only von Mises noise with `mu = 0`, `kappa` drawn uniformly.
    VonMisesPhase { kappa_range: (f64, f64) },
}

impl NoiseSpec {
    pub fn complex_gaussian_default() -> Self {
        Self::ComplexGaussian {
            snr_db_range: (-24.0, 0.0),
        }
    }

    pub fn von_mises_default() -> Self {
        Self::VonMisesPhase {
            kappa_range: (0.01, 3.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::ComplexGaussian {
                snr_db_range: (lo, hi),
            } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidParameter(format!(
                        "invalid SNR range [{lo}, {hi}]"
                    )));
                }
            }
            Self::VonMisesPhase {
                kappa_range: (lo, hi),
            } => {
                if !(lo > 0.0 && hi.is_finite() && lo <= hi) {
                    return Err(Error::InvalidParameter(format!(
                        "invalid kappa range [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::ComplexGaussian { .. } => "cg",
            Self::VonMisesPhase { .. } => "vm",
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::von_mises_default()
    }
}

/// Draws the corruption parameter from its configured range and applies it.
/// Returns the corrupted grid together with the drawn SNR (dB) or kappa.
pub fn sample_corruption(
    spec: &NoiseSpec,
    x: &ComplexGrid4D,
    seed: u64,
) -> Result<(ComplexGrid4D, f64)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let noise_seed: u64 = rng.random();
    match *spec {
        NoiseSpec::ComplexGaussian { snr_db_range } => {
            let snr = draw(&mut rng, snr_db_range);
            Ok((add_complex_gaussian(x, snr, noise_seed)?, snr))
        }
        NoiseSpec::VonMisesPhase { kappa_range } => {
            let kappa = draw(&mut rng, kappa_range);
            Ok((add_phase_noise(x, kappa, noise_seed)?, kappa))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_basics() {
        assert_eq!(bessel_i0(0.0).unwrap(), 1.0);
        assert!(bessel_i0(-1.0).is_err());
        let xs = [0.0, 0.5, 1.0, 2.0, 4.0];
        let vals: Vec<f64> = xs.iter().map(|&x| bessel_i0(x).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn i0_branches_agree_at_the_switch() {
        // the series is accurate well past 15 in double precision
        let series = {
            let q: f64 = 15.0 * 15.0 / 4.0;
            let (mut term, mut sum) = (1.0f64, 1.0f64);
            for k in 1..200 {
                term *= q / (k as f64 * k as f64);
                sum += term;
            }
            sum
        };
        let asym = bessel_i0(15.0).unwrap();
        assert!((asym - series).abs() / series < 1e-12, "{asym} vs {series}");
    }

    #[test]
    fn wrap_angle_range() {
        assert!((wrap_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampler_is_seeded() {
        let a = sample_von_mises(1.0, 0.0, 100, 42).unwrap();
        assert_eq!(a, sample_von_mises(1.0, 0.0, 100, 42).unwrap());
        assert_ne!(a, sample_von_mises(1.0, 0.0, 100, 43).unwrap());
        assert!(a.iter().all(|&t| t > -PI && t <= PI));
        assert!(sample_von_mises(-1.0, 0.0, 1, 0).is_err());
    }

    #[test]
    fn gaussian_rejects_zero_signal() {
        assert!(add_complex_gaussian(&ComplexGrid4D::zeros([1, 1, 2, 2]), 0.0, 1).is_err());
    }

    #[test]
    fn corruption_parameters_stay_in_range() {
        let x = ComplexGrid4D::new([1, 1, 2, 2], vec![C64::new(1.0, 0.5); 4]).unwrap();
        for seed in 0..200 {
            let (_, kappa) = sample_corruption(&NoiseSpec::von_mises_default(), &x, seed).unwrap();
            assert!((0.01..=3.0).contains(&kappa));
            let (_, snr) =
                sample_corruption(&NoiseSpec::complex_gaussian_default(), &x, seed).unwrap();
            assert!((-24.0..=0.0).contains(&snr));
        }
        let fixed = NoiseSpec::VonMisesPhase {
            kappa_range: (2.0, 2.0),
        };
        assert_eq!(sample_corruption(&fixed, &x, 9).unwrap().1, 2.0);
        let bad = NoiseSpec::VonMisesPhase {
            kappa_range: (0.0, 1.0),
        };
        assert!(sample_corruption(&bad, &x, 9).is_err());
    }
}
