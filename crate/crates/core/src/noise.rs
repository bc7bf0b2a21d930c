//! Heavy-tailed gradient noise.
//!
//! The heavy families are parameterized by a tail index `alpha` in (1, 2):
//! the `alpha`-th absolute moment is finite while the variance is not.

use rand::Rng;
use rand_distr::{Distribution, Normal, Pareto, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::norm;

/// Gap between the requested tail index and the tail exponent actually
/// sampled, so the `alpha`-th moment stays finite.
pub const TAIL_MARGIN: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseKind {
    ParetoSymmetric,
    StudentT,
    Gaussian,
    Zero,
}

impl NoiseKind {
    pub fn is_heavy(self) -> bool {
        matches!(self, NoiseKind::ParetoSymmetric | NoiseKind::StudentT)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    #[serde(default = "default_tail_index")]
    pub tail_index: f64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    pub dim: usize,
}

fn default_tail_index() -> f64 {
    1.5
}

fn default_scale() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, tail_index: f64, scale: f64, dim: usize) -> Self {
        NoiseSpec {
            kind,
            tail_index,
            scale,
            dim,
        }
    }

    pub fn zero(dim: usize) -> Self {
        NoiseSpec::new(NoiseKind::Zero, default_tail_index(), 1.0, dim)
    }

    pub fn gaussian(scale: f64, dim: usize) -> Self {
        NoiseSpec::new(NoiseKind::Gaussian, default_tail_index(), scale, dim)
    }

    pub fn pareto(tail_index: f64, scale: f64, dim: usize) -> Self {
        NoiseSpec::new(NoiseKind::ParetoSymmetric, tail_index, scale, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::config("noise dim must be at least 1"));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::config(format!(
                "noise scale must be positive and finite, got {}",
                self.scale
            )));
        }
        if self.kind.is_heavy() && !(self.tail_index > 1.0 && self.tail_index < 2.0) {
            return Err(Error::config(format!(
                "tail_index must lie in (1, 2) for {:?} noise, got {}",
                self.kind, self.tail_index
            )));
        }
        Ok(())
    }

    /// Tail exponent of the sampled law (`tail_index + TAIL_MARGIN`).
    pub fn sampled_tail_exponent(&self) -> f64 {
        self.tail_index + TAIL_MARGIN
    }

    /// Builds a reusable sampler after validating the spec.
    pub fn sampler(&self) -> Result<NoiseSampler> {
        self.validate()?;
        let law = match self.kind {
            NoiseKind::Zero => Law::Zero,
            NoiseKind::Gaussian => Law::Gaussian(Normal::new(0.0, self.scale).expect("scale > 0")),
            NoiseKind::ParetoSymmetric => {
                let a = self.sampled_tail_exponent();
                // E|X| = a x_m / (a - 1) for a Pareto(x_m, a) magnitude.
                let x_min = self.scale * (a - 1.0) / a;
                Law::Pareto(Pareto::new(x_min, a).expect("x_min > 0, a > 0"))
            }
            NoiseKind::StudentT => Law::StudentT(
                StudentT::new(self.sampled_tail_exponent()).expect("dof > 0"),
                self.scale,
            ),
        };
        Ok(NoiseSampler {
            law,
            dim: self.dim,
        })
    }
}

#[derive(Clone, Debug)]
enum Law {
    Zero,
    Gaussian(Normal<f64>),
    Pareto(Pareto<f64>),
    StudentT(StudentT<f64>, f64),
}

#[derive(Clone, Debug)]
pub struct NoiseSampler {
    law: Law,
    dim: usize,
}

impl NoiseSampler {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.law {
            Law::Zero => out.fill(0.0),
            Law::Gaussian(n) => out.iter_mut().for_each(|v| *v = n.sample(rng)),
            Law::Pareto(p) => out.iter_mut().for_each(|v| {
                let magnitude = p.sample(rng);
                *v = if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                };
            }),
            Law::StudentT(t, scale) => out.iter_mut().for_each(|v| *v = scale * t.sample(rng)),
        }
    }
}

/// Draws one noise vector.
pub fn sample_noise<R: Rng + ?Sized>(spec: &NoiseSpec, rng: &mut R) -> Result<Vec<f64>> {
    Ok(spec.sampler()?.sample(rng))
}

/// `(1/n) * sum_i ||xi_i||^alpha` over the given samples.
pub fn empirical_alpha_moment<V: AsRef<[f64]>>(samples: &[V], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("empirical_alpha_moment needs at least one sample"));
    }
    if !(alpha > 0.0) {
        return Err(Error::arg(format!("alpha must be positive, got {alpha}")));
    }
    let total: f64 = samples.iter().map(|s| norm(s.as_ref()).powf(alpha)).sum();
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn scalar_draws(spec: &NoiseSpec, seed: u64, n: usize) -> Vec<f64> {
        let s = spec.sampler().unwrap();
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| s.sample(&mut rng)[0]).collect()
    }

    fn abs_moment(xs: &[f64], p: f64) -> f64 {
        xs.iter().map(|x| x.abs().powf(p)).sum::<f64>() / xs.len() as f64
    }

    #[test]
    fn zero_noise_is_zero() {
        let mut rng = rng_from_seed(1);
        assert_eq!(sample_noise(&NoiseSpec::zero(3), &mut rng).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn gaussian_mean_near_zero() {
        let mut rng = rng_from_seed(2024);
        let v = sample_noise(&NoiseSpec::gaussian(1.0, 100_000), &mut rng).unwrap();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn rejects_tail_index_outside_unit_interval() {
        for alpha in [1.0, 2.0, 0.5, 2.5] {
            assert!(matches!(
                NoiseSpec::pareto(alpha, 1.0, 2).validate(),
                Err(Error::Config(_))
            ));
        }
        // light families ignore the tail index
        assert!(NoiseSpec::new(NoiseKind::Gaussian, 3.0, 1.0, 2).validate().is_ok());
        assert!(NoiseSpec::pareto(1.5, 0.0, 2).validate().is_err());
        assert!(NoiseSpec::pareto(1.5, 1.0, 0).validate().is_err());
    }

    #[test]
    fn pareto_is_sign_symmetric() {
        let xs = scalar_draws(&NoiseSpec::pareto(1.5, 1.0, 1), 11, 100_000);
        let pos = xs.iter().filter(|x| **x > 0.0).count() as f64 / xs.len() as f64;
        assert!((pos - 0.5).abs() <= 0.01, "positive fraction {pos}");
    }

    #[test]
    fn pareto_scale_sets_mean_magnitude() {
        // E|xi| = scale; the magnitude has finite mean and infinite variance,
        // so only a loose band is meaningful at this sample size.
        let xs = scalar_draws(&NoiseSpec::pareto(1.5, 2.0, 1), 5, 200_000);
        let m = abs_moment(&xs, 1.0);
        assert!((m - 2.0).abs() < 0.3, "mean magnitude {m}");
    }

    #[test]
    fn student_t_is_finite_and_deterministic() {
        let spec = NoiseSpec::new(NoiseKind::StudentT, 1.5, 1.0, 64);
        let a = sample_noise(&spec, &mut rng_from_seed(9)).unwrap();
        let b = sample_noise(&spec, &mut rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn alpha_moment_examples() {
        let z = [vec![0.0, 0.0], vec![0.0, 0.0]];
        assert_eq!(empirical_alpha_moment(&z, 1.5).unwrap(), 0.0);
        assert_eq!(empirical_alpha_moment(&[vec![3.0, 4.0]], 2.0).unwrap(), 25.0);
        let v = empirical_alpha_moment(&[vec![1.0, 0.0], vec![0.0, 2.0]], 1.5).unwrap();
        assert!((v - (1.0 + 2f64.powf(1.5)) / 2.0).abs() < 1e-12);
        assert!((v - 1.9142).abs() < 1e-4);
        let empty: [Vec<f64>; 0] = [];
        assert!(matches!(
            empirical_alpha_moment(&empty, 1.5),
            Err(Error::Argument(_))
        ));
        assert!(empirical_alpha_moment(&[vec![1.0]], 0.0).is_err());
    }
}
