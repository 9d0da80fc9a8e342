//! Innovation laws.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

const PROB_TOL: f64 = 1e-12;

fn one() -> f64 {
    1.0
}

/// Law of a real-valued innovation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `±scale` with probability 1/2 each.
    TwoPoint {
        #[serde(default = "one")]
        scale: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
    Gaussian {
        #[serde(default = "one")]
        sd: f64,
    },
    /// User table of atoms.
    Finite {
        values: Vec<f64>,
        probabilities: Vec<f64>,
    },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseSpec::TwoPoint { scale } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return Err(Error::InvalidNoise(format!(
                        "two-point scale {scale} must be positive"
                    )));
                }
            }
            NoiseSpec::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::InvalidNoise(format!(
                        "uniform bounds [{low}, {high}] invalid"
                    )));
                }
            }
            NoiseSpec::Gaussian { sd } => {
                if !(sd.is_finite() && *sd > 0.0) {
                    return Err(Error::InvalidNoise(format!(
                        "gaussian sd {sd} must be positive"
                    )));
                }
            }
            NoiseSpec::Finite {
                values,
                probabilities,
            } => {
                if values.len() != probabilities.len() || values.is_empty() {
                    return Err(Error::InvalidNoise(
                        "values and probabilities must be non-empty and of equal length".into(),
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidNoise("non-finite atom".into()));
                }
                for i in 0..values.len() {
                    for j in 0..i {
                        if values[i] == values[j] {
                            return Err(Error::InvalidNoise(format!(
                                "duplicate atom {}",
                                values[i]
                            )));
                        }
                    }
                }
                Categorical::new(probabilities)?;
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseSpec::TwoPoint { scale } => {
                if rng.random::<bool>() {
                    *scale
                } else {
                    -*scale
                }
            }
            NoiseSpec::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            NoiseSpec::Gaussian { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            }
            NoiseSpec::Finite {
                values,
                probabilities,
            } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probabilities) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated non-empty")
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            NoiseSpec::TwoPoint { .. } | NoiseSpec::Gaussian { .. } => 0.0,
            NoiseSpec::Uniform { low, high } => 0.5 * (low + high),
            NoiseSpec::Finite {
                values,
                probabilities,
            } => values.iter().zip(probabilities).map(|(v, p)| v * p).sum(),
        }
    }

    /// `E|ε|^p`.
    pub fn abs_moment(&self, p: f64) -> f64 {
        match self {
            NoiseSpec::TwoPoint { scale } => scale.powf(p),
            NoiseSpec::Uniform { low, high } => {
                let f = |x: f64| x.signum() * x.abs().powf(p + 1.0) / (p + 1.0);
                (f(*high) - f(*low)) / (high - low)
            }
            NoiseSpec::Gaussian { sd } => {
                let density = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let half = quadrature::integrate_pieces(
                    |x| x.powf(p) * density(x),
                    &[0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 40.0],
                    1e-13,
                )
                .unwrap_or(f64::NAN);
                2.0 * half * sd.powf(p)
            }
            NoiseSpec::Finite {
                values,
                probabilities,
            } => values
                .iter()
                .zip(probabilities)
                .map(|(v, q)| q * v.abs().powf(p))
                .sum(),
        }
    }

    /// `‖ε‖_p`.
    pub fn norm(&self, p: f64) -> f64 {
        self.abs_moment(p).powf(1.0 / p)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        match self {
            NoiseSpec::Finite {
                values,
                probabilities,
            } => values
                .iter()
                .zip(probabilities)
                .map(|(v, q)| q * (v - m) * (v - m))
                .sum(),
            _ => self.abs_moment(2.0) - m * m,
        }
    }
}

/// Sampler for a finite alphabet `{0, .., K-1}` with given probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probabilities: Vec<f64>,
    cdf: Vec<f64>,
}

impl Categorical {
    pub fn new(probabilities: &[f64]) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidNoise("empty alphabet".into()));
        }
        if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidNoise(format!(
                "probability {p} must be positive"
            )));
        }
        let total: f64 = crate::stats::compensated_sum(probabilities.iter().copied());
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidNoise(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        let mut acc = 0.0;
        let cdf = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            probabilities: probabilities.to_vec(),
            cdf,
        })
    }

    pub fn uniform(k: usize) -> Self {
        let p = vec![1.0 / k as f64; k];
        let cdf = (1..=k).map(|i| i as f64 / k as f64).collect();
        Self {
            probabilities: p,
            cdf,
        }
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cdf
            .partition_point(|c| *c <= u)
            .min(self.cdf.len() - 1)
    }
}
