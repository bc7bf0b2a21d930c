//! Synthetic objectives with exact gradients and a stochastic gradient
//! oracle `g = grad F(x) + xi` with additive noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseSampler;
use crate::rng::SimRng;
use crate::vector::{check_dim, dot, norm, ModelVector};

/// Serializable description of a problem; the data itself is regenerated
/// from the run seed and never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum ProblemSpec {
    /// `F(x) = 1/2 sum_i h_i (x_i - x*_i)^2`, `h_i ~ U[curvature_min, curvature_max]`,
    /// `x*_i ~ optimum_scale * U[-1, 1]`.
    QuadraticDiag {
        dim: usize,
        #[serde(default = "one")]
        curvature_min: f64,
        #[serde(default = "one")]
        curvature_max: f64,
        #[serde(default)]
        optimum_scale: f64,
    },
    /// L2-regularized logistic regression on data labelled by a planted model.
    LogisticSynthetic {
        dim: usize,
        #[serde(default = "default_samples")]
        samples: usize,
        #[serde(default = "default_l2")]
        l2: f64,
    },
    /// Sum of per-coordinate sigmoid wells; bounded gradient, nonconvex.
    NonconvexSmoothTest {
        dim: usize,
        #[serde(default)]
        optimum_scale: f64,
    },
}

fn one() -> f64 {
    1.0
}
fn default_samples() -> usize {
    256
}
fn default_l2() -> f64 {
    1e-2
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        match self {
            ProblemSpec::QuadraticDiag { dim, .. }
            | ProblemSpec::LogisticSynthetic { dim, .. }
            | ProblemSpec::NonconvexSmoothTest { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::config("problem dim must be at least 1"));
        }
        match *self {
            ProblemSpec::QuadraticDiag {
                curvature_min,
                curvature_max,
                optimum_scale,
                ..
            } => {
                if !(curvature_min > 0.0 && curvature_max >= curvature_min && curvature_max.is_finite()) {
                    return Err(Error::config(format!(
                        "QuadraticDiag needs 0 < curvature_min <= curvature_max < inf, got [{curvature_min}, {curvature_max}]"
                    )));
                }
                if !optimum_scale.is_finite() {
                    return Err(Error::config("optimum_scale must be finite"));
                }
            }
            ProblemSpec::LogisticSynthetic { samples, l2, .. } => {
                if samples == 0 {
                    return Err(Error::config("LogisticSynthetic needs at least one sample"));
                }
                if !(l2 >= 0.0 && l2.is_finite()) {
                    return Err(Error::config("l2 must be finite and non-negative"));
                }
            }
            ProblemSpec::NonconvexSmoothTest { optimum_scale, .. } => {
                if !optimum_scale.is_finite() {
                    return Err(Error::config("optimum_scale must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Materializes the problem from a data-generation stream.
    pub fn build(&self, rng: &mut SimRng) -> Result<Problem> {
        self.validate()?;
        let problem = match *self {
            ProblemSpec::QuadraticDiag {
                dim,
                curvature_min,
                curvature_max,
                optimum_scale,
            } => {
                let curvature = (0..dim)
                    .map(|_| {
                        if curvature_max > curvature_min {
                            rng.random_range(curvature_min..=curvature_max)
                        } else {
                            curvature_min
                        }
                    })
                    .collect();
                let optimum = (0..dim)
                    .map(|_| optimum_scale * rng.random_range(-1.0..=1.0))
                    .collect();
                Problem::quadratic(curvature, optimum)?
            }
            ProblemSpec::LogisticSynthetic { dim, samples, l2 } => {
                let planted: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                let mut features = Vec::with_capacity(samples * dim);
                let mut labels = Vec::with_capacity(samples);
                for _ in 0..samples {
                    let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
                    let p = sigmoid(dot(&row, &planted));
                    labels.push(if rng.random::<f64>() < p { 1.0 } else { -1.0 });
                    features.extend(row);
                }
                Problem::Logistic(Logistic {
                    dim,
                    features,
                    labels,
                    l2,
                })
            }
            ProblemSpec::NonconvexSmoothTest { dim, optimum_scale } => {
                let mut weight = Vec::with_capacity(dim);
                let mut width = Vec::with_capacity(dim);
                let mut optimum = Vec::with_capacity(dim);
                for _ in 0..dim {
                    weight.push(rng.random_range(0.5..=2.0));
                    width.push(rng.random_range(0.5..=2.0));
                    optimum.push(optimum_scale * rng.random_range(-1.0..=1.0));
                }
                Problem::SigmoidWells(SigmoidWells {
                    weight,
                    width,
                    offset: WELL_OFFSET,
                    optimum,
                })
            }
        };
        Ok(problem)
    }
}

/// Shift `b` of each well `sigma(z - b) + sigma(-z - b)`.
pub const WELL_OFFSET: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    pub curvature: Vec<f64>,
    pub optimum: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Logistic {
    pub dim: usize,
    /// Row-major `samples x dim`.
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub l2: f64,
}

/// `F(x) = sum_i w_i [sigma(z_i - b) + sigma(-z_i - b)]`, `z_i = (x_i - x*_i) / s_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SigmoidWells {
    pub weight: Vec<f64>,
    pub width: Vec<f64>,
    pub offset: f64,
    pub optimum: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    Quadratic(Quadratic),
    Logistic(Logistic),
    SigmoidWells(SigmoidWells),
}

/// One stochastic gradient draw; `grad == clean_grad + noise` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticGradientSample {
    pub grad: Vec<f64>,
    pub clean_grad: Vec<f64>,
    pub noise: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Problem {
    pub fn quadratic(curvature: Vec<f64>, optimum: Vec<f64>) -> Result<Self> {
        check_dim(curvature.len(), optimum.len())?;
        if curvature.is_empty() {
            return Err(Error::arg("quadratic needs dim >= 1"));
        }
        if let Some(h) = curvature.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
            return Err(Error::arg(format!("curvatures must be positive and finite, got {h}")));
        }
        Ok(Problem::Quadratic(Quadratic { curvature, optimum }))
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.curvature.len(),
            Problem::Logistic(l) => l.dim,
            Problem::SigmoidWells(w) => w.weight.len(),
        }
    }

    /// Known minimizer, when the objective has one in closed form.
    pub fn optimum(&self) -> Option<&[f64]> {
        match self {
            Problem::Quadratic(q) => Some(&q.optimum),
            Problem::SigmoidWells(w) => Some(&w.optimum),
            Problem::Logistic(_) => None,
        }
    }

    /// Smoothness constant `L`.
    pub fn smoothness(&self) -> f64 {
        match self {
            Problem::Quadratic(q) => q.curvature.iter().cloned().fold(0.0, f64::max),
            Problem::Logistic(l) => {
                let n = l.labels.len() as f64;
                let sq: f64 = l.features.iter().map(|v| v * v).sum();
                0.25 * sq / n + l.l2
            }
            // |w''| <= 2 * max|sigma''| * w / s^2 = w / (3 sqrt(3) s^2)
            Problem::SigmoidWells(w) => w
                .weight
                .iter()
                .zip(&w.width)
                .map(|(a, s)| a / (3.0 * 3f64.sqrt() * s * s))
                .fold(0.0, f64::max),
        }
    }

    /// Strong convexity constant `mu` (quadratics only).
    pub fn strong_convexity(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(q) => Some(q.curvature.iter().cloned().fold(f64::INFINITY, f64::min)),
            _ => None,
        }
    }

    pub fn eval_loss(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(match self {
            Problem::Quadratic(q) => {
                0.5 * q
                    .curvature
                    .iter()
                    .zip(&q.optimum)
                    .zip(x)
                    .map(|((h, o), v)| h * (v - o) * (v - o))
                    .sum::<f64>()
            }
            Problem::Logistic(l) => {
                let n = l.labels.len();
                let data: f64 = l
                    .features
                    .chunks_exact(l.dim)
                    .zip(&l.labels)
                    .map(|(row, y)| softplus(-y * dot(row, x)))
                    .sum();
                data / n as f64 + 0.5 * l.l2 * dot(x, x)
            }
            Problem::SigmoidWells(w) => (0..x.len())
                .map(|i| {
                    let z = (x[i] - w.optimum[i]) / w.width[i];
                    w.weight[i] * (sigmoid(z - w.offset) + sigmoid(-z - w.offset))
                })
                .sum(),
        })
    }

    pub fn clean_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.clean_grad_into(x, &mut out)?;
        Ok(out)
    }

    pub fn clean_grad_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), out.len())?;
        match self {
            Problem::Quadratic(q) => {
                for i in 0..x.len() {
                    out[i] = q.curvature[i] * (x[i] - q.optimum[i]);
                }
            }
            Problem::Logistic(l) => {
                out.fill(0.0);
                for (row, y) in l.features.chunks_exact(l.dim).zip(&l.labels) {
                    // d/dx softplus(-y a.x) = -y sigma(-y a.x) a
                    let c = -y * sigmoid(-y * dot(row, x));
                    for (o, a) in out.iter_mut().zip(row) {
                        *o += c * a;
                    }
                }
                let n = l.labels.len() as f64;
                for (o, v) in out.iter_mut().zip(x) {
                    *o = *o / n + l.l2 * v;
                }
            }
            Problem::SigmoidWells(w) => {
                for i in 0..x.len() {
                    let s = w.width[i];
                    let z = (x[i] - w.optimum[i]) / s;
                    let d = |t: f64| {
                        let p = sigmoid(t);
                        p * (1.0 - p)
                    };
                    out[i] = w.weight[i] * (d(z - w.offset) - d(-z - w.offset)) / s;
                }
            }
        }
        Ok(())
    }

    /// `grad F(x) + xi` with `xi` drawn from `noise`.
    pub fn stochastic_grad(
        &self,
        x: &[f64],
        noise: &NoiseSampler,
        rng: &mut SimRng,
    ) -> Result<StochasticGradientSample> {
        check_dim(self.dim(), noise.dim())?;
        let clean_grad = self.clean_grad(x)?;
        let noise = noise.sample(rng);
        let grad = clean_grad.iter().zip(&noise).map(|(g, n)| g + n).collect();
        Ok(StochasticGradientSample {
            grad,
            clean_grad,
            noise,
        })
    }

    /// Bound `G` on `||grad F||` over the ball of `radius` around the
    /// problem's reference point (the optimum, or the origin for logistic).
    pub fn grad_bound(&self, radius: f64) -> f64 {
        match self {
            Problem::Quadratic(_) => self.smoothness() * radius,
            Problem::Logistic(l) => {
                let n = l.labels.len() as f64;
                let mean_row_norm: f64 =
                    l.features.chunks_exact(l.dim).map(norm).sum::<f64>() / n;
                mean_row_norm + l.l2 * radius
            }
            // |sigma'(t)| <= 1/4 and the two terms have opposite signs.
            Problem::SigmoidWells(w) => w
                .weight
                .iter()
                .zip(&w.width)
                .map(|(a, s)| (a / (4.0 * s)).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Starting point `x0`: the optimum shifted by `init` in every coordinate
    /// (the origin for logistic).
    pub fn initial_point(&self, init: f64) -> ModelVector {
        match self.optimum() {
            Some(o) => o.iter().map(|v| v + init).collect::<Vec<_>>().into(),
            None => ModelVector::filled(self.dim(), init),
        }
    }
}
