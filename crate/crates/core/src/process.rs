//! A family paired with an observable, path simulation and centering.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{Family, Innovation, NoisePath};
use crate::observable::{reduce, Domain, Observable};
use crate::par;
use crate::quadrature;
use crate::rng::{tag, SeedDomain};
use crate::stats::{batch_means, Estimate};

/// Samples used when the invariant mean has no closed form.
pub const MEAN_MC_SAMPLES: usize = 1 << 17;

/// Default tolerance for forward-series truncation.
pub const FORWARD_TOL: f64 = 1e-12;

/// Process `X_n = h(W_n) - π(h)` (or `g(Σ a_i ε_{n-i})` for linear families).
#[derive(Debug, Clone)]
pub struct Process {
    family: Family,
    observable: Observable,
    mean: Estimate,
    centered: bool,
}

impl Process {
    /// Uncentered process; validates the observable against the family.
    pub fn new(family: Family, observable: Observable) -> Result<Self> {
        observable.validate_for(family.domain())?;
        Ok(Self {
            family,
            observable,
            mean: Estimate::exact(0.0),
            centered: false,
        })
    }

    /// Process centered by its invariant mean.
    pub fn centered(family: Family, observable: Observable, seed: u64) -> Result<Self> {
        let p = Self::new(family, observable)?;
        let mean = invariant_mean(&p.family, &p.observable, seed)?;
        Ok(p.with_mean(mean))
    }

    /// Centers with a given mean estimate.
    pub fn with_mean(mut self, mean: Estimate) -> Self {
        self.mean = mean;
        self.centered = true;
        self
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn observable(&self) -> &Observable {
        &self.observable
    }

    pub fn is_centered(&self) -> bool {
        self.centered
    }

    /// The centering constant (zero when uncentered).
    pub fn mean(&self) -> f64 {
        if self.centered {
            self.mean.mean
        } else {
            0.0
        }
    }

    pub fn mean_estimate(&self) -> Estimate {
        self.mean
    }

    /// True when the centering constant is exact.
    pub fn mean_is_exact(&self) -> bool {
        self.mean.samples == 0
    }

    pub fn domain(&self) -> Domain {
        self.family.domain()
    }

    /// Observable before centering at a state.
    #[inline]
    pub fn raw(&self, w: &[f64]) -> f64 {
        match &self.family {
            Family::Linear(l) => self.observable.eval1(l.combine(w), Domain::Line),
            _ => self.observable.eval(w, self.family.domain()),
        }
    }

    /// `X` at a state.
    #[inline]
    pub fn value(&self, w: &[f64]) -> f64 {
        self.raw(w) - self.mean()
    }

    /// Concave modulus of the observable on the line (linear families).
    pub fn line_modulus(&self, u: f64) -> Option<f64> {
        match &self.observable {
            Observable::Builtin { function } => Some(function.modulus(u)),
            Observable::Lipschitz(l) => Some(l.lipschitz * u),
            _ => None,
        }
    }

    /// Runs the recursion from `w0` along `noise`.
    pub fn simulate_chain(&self, w0: &[f64], noise: &NoisePath) -> Result<PathBundle> {
        self.family.check_state(w0)?;
        let mut w = w0.to_vec();
        let mut states = Vec::with_capacity(noise.len() + 1);
        let mut values = Vec::with_capacity(noise.len());
        states.push(w.clone());
        for i in 0..noise.len() {
            self.family.step(&mut w, noise.get(i), i + 1)?;
            let x = self.value(&w);
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("observable at step {}", i + 1)));
            }
            states.push(w.clone());
            values.push(x);
        }
        Ok(PathBundle {
            noise: noise.clone(),
            states,
            values,
            centered: self.centered,
            mean: self.mean(),
        })
    }

    /// Values only, without storing states.
    pub fn simulate_values(&self, w0: &[f64], noise: &NoisePath) -> Result<Vec<f64>> {
        let mut w = w0.to_vec();
        let mut values = Vec::with_capacity(noise.len());
        for i in 0..noise.len() {
            self.family.step(&mut w, noise.get(i), i + 1)?;
            values.push(self.value(&w));
        }
        Ok(values)
    }

    /// Truncated forward representation `X_n = f(ε_n, ε_{n+1}, ...)` with a
    /// certified bound on the truncation error of every value.
    ///
    /// For torus and piecewise affine families value `n` uses
    /// `noise[n..=n+depth]`; for linear families it uses `noise[n-depth..=n]`.
    pub fn simulate_forward(
        &self,
        noise: &NoisePath,
        depth: usize,
        tolerance: f64,
    ) -> Result<ForwardBundle> {
        let state_bound = forward_state_tail(&self.family, depth)?;
        let bound = match &self.family {
            Family::Linear(_) => self.line_modulus(state_bound).ok_or_else(|| {
                Error::InvalidObservable("linear forward bound needs a modulus".into())
            })?,
            _ => state_bound,
        };
        if bound > tolerance {
            let mut required = depth + 1;
            while required < 1_000_000 {
                let b = forward_state_tail(&self.family, required)?;
                let b = match &self.family {
                    Family::Linear(_) => self.line_modulus(b).unwrap_or(f64::INFINITY),
                    _ => b,
                };
                if b <= tolerance {
                    break;
                }
                required = (required * 2).max(required + 1);
            }
            return Err(Error::TruncationTooShallow {
                bound,
                tolerance,
                required_depth: required,
            });
        }
        let len = noise.len();
        if len <= depth {
            return Err(Error::OutOfRange(format!(
                "forward simulation needs more than {depth} innovations, got {len}"
            )));
        }
        let count = len - depth;
        let mut states = Vec::with_capacity(count);
        match &self.family {
            Family::Torus(t) => {
                let syms = noise.symbols().ok_or(Error::InnovationKind)?;
                for n in 0..count {
                    let mut w = vec![0.0; t.dim()];
                    for j in (n..=n + depth).rev() {
                        check_symbol(syms[j], t.alphabet_size())?;
                        t.step(&mut w, syms[j]);
                    }
                    states.push(w);
                }
            }
            Family::PiecewiseAffine(pa) => {
                let syms = noise.symbols().ok_or(Error::InnovationKind)?;
                for n in 0..count {
                    let mut x = 0.0;
                    for j in (n..=n + depth).rev() {
                        check_symbol(syms[j], pa.alphabet_size())?;
                        let (a, b) = pa.branch(syms[j]);
                        x = a * x + b;
                    }
                    states.push(vec![x]);
                }
            }
            Family::Linear(l) => {
                let e = noise.reals().ok_or(Error::InnovationKind)?;
                if depth != l.depth() {
                    return Err(Error::OutOfRange(format!(
                        "linear forward depth must equal the family depth {}",
                        l.depth()
                    )));
                }
                for n in depth..len {
                    let past: Vec<f64> = (0..=depth).map(|i| e[n - i]).collect();
                    states.push(past);
                }
            }
            Family::Irf(_) => {
                return Err(Error::Unsupported {
                    op: "simulate_forward",
                    family: "irf",
                    hint: "; use simulate_chain from a stationary start",
                })
            }
        }
        let values = states.iter().map(|w| self.value(w)).collect();
        let reported = match &self.family {
            Family::Linear(_) => states
                .into_iter()
                .map(|w| vec![self.family_linear_sum(&w)])
                .collect(),
            _ => states,
        };
        Ok(ForwardBundle {
            states: reported,
            values,
            state_tail_bound: state_bound,
            value_tail_bound: match (&self.family, self.observable.lipschitz_bound(self.domain())) {
                (Family::Linear(_), _) => bound,
                (_, Some(l)) => l * bound,
                _ => f64::INFINITY,
            },
            depth,
        })
    }

    fn family_linear_sum(&self, w: &[f64]) -> f64 {
        match &self.family {
            Family::Linear(l) => l.combine(w),
            _ => f64::NAN,
        }
    }
}

fn check_symbol(s: usize, size: usize) -> Result<()> {
    if s >= size {
        Err(Error::SymbolOutOfRange { symbol: s, size })
    } else {
        Ok(())
    }
}

/// Bound on the state error of a depth-`D` forward truncation.
pub fn forward_state_tail(family: &Family, depth: usize) -> Result<f64> {
    match family {
        Family::Torus(t) => {
            let m = t.dim();
            let inv = DMatrix::from_row_slice(m, m, t.inverse());
            let gmax = t
                .gamma()
                .iter()
                .map(|g| g.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            // Σ_{j > D} ‖A^{-j-1}‖ |γ|, via a block q with ‖A^{-q}‖ < 1
            let norm = |mat: &DMatrix<f64>| mat.clone().svd(false, false).singular_values.max();
            let mut power = DMatrix::<f64>::identity(m, m);
            let mut norms = Vec::new();
            let mut q = 0usize;
            for k in 1..=512 {
                power = &power * &inv;
                norms.push(norm(&power));
                if norms[k - 1] < 1.0 {
                    q = k;
                    break;
                }
            }
            if q == 0 {
                return Err(Error::NotDilating { moduli: vec![] });
            }
            let rq = norms[q - 1];
            // ‖A^{-(D+2+r)}‖ <= ‖A^{-(D+2)}‖ ... computed directly for the first block
            let mut start = DMatrix::<f64>::identity(m, m);
            for _ in 0..depth + 2 {
                start = &start * &inv;
            }
            let mut block = 0.0;
            let mut cur = start;
            for _ in 0..q {
                block += norm(&cur);
                cur = &cur * &inv;
            }
            Ok(gmax * block / (1.0 - rq))
        }
        Family::PiecewiseAffine(pa) => Ok(pa.alpha_bar().powi(depth as i32 + 1)),
        Family::Linear(l) => {
            let law = l.law();
            let sd = l.noise().abs_moment(2.0).sqrt();
            let mean = l.noise().mean().abs();
            Ok(sd * law.tail_sq(depth + 1).sqrt() + mean * law.tail_abs(depth + 1))
        }
        Family::Irf(_) => Err(Error::Unsupported {
            op: "simulate_forward",
            family: "irf",
            hint: "",
        }),
    }
}

/// A simulated backward-chain path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathBundle {
    pub noise: NoisePath,
    /// `W_0..W_n`.
    pub states: Vec<Vec<f64>>,
    /// `X_1..X_n`.
    pub values: Vec<f64>,
    pub centered: bool,
    pub mean: f64,
}

impl PathBundle {
    /// Largest discrepancy when re-applying the recursion at every index
    /// (torus states compared modulo one).
    pub fn recheck(&self, process: &Process) -> Result<f64> {
        let fam = process.family();
        let mut worst: f64 = 0.0;
        for j in 1..self.states.len() {
            let mut w = self.states[j - 1].clone();
            fam.step(&mut w, self.noise.get(j - 1), j)?;
            for (a, b) in w.iter().zip(&self.states[j]) {
                let d = match fam {
                    Family::Torus(_) => {
                        let r = reduce(a - b);
                        r.min(1.0 - r)
                    }
                    _ => (a - b).abs(),
                };
                worst = worst.max(d);
            }
            worst = worst.max((process.value(&self.states[j]) - self.values[j - 1]).abs());
        }
        Ok(worst)
    }

    /// Partial sums `S_1..S_n`.
    pub fn partial_sums(&self) -> Vec<f64> {
        let mut acc = crate::stats::CompensatedSum::new();
        self.values
            .iter()
            .map(|x| {
                acc.add(*x);
                acc.value()
            })
            .collect()
    }
}

/// Forward-series values with their certified truncation bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardBundle {
    /// `Z_n` (or the truncated linear sum for linear families).
    pub states: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub state_tail_bound: f64,
    /// Bound on the observable error (infinite without a Lipschitz bound).
    pub value_tail_bound: f64,
    pub depth: usize,
}

/// `E_π h`: closed form when available, quadrature for one-dimensional
/// callables, batch-means Monte Carlo otherwise.
pub fn invariant_mean(family: &Family, observable: &Observable, seed: u64) -> Result<Estimate> {
    observable.validate_for(family.domain())?;
    match family {
        Family::Torus(_) | Family::PiecewiseAffine(_) => {
            if let Some(m) = observable.lebesgue_mean(family.domain())? {
                return Ok(Estimate::exact(m));
            }
            if let (Observable::Lipschitz(l), Domain::Torus(2)) = (observable, family.domain()) {
                let inner = |y: f64| {
                    quadrature::integrate_adaptive(|x| (l.f)(&[x, y]), 0.0, 1.0, 1e-12)
                        .unwrap_or(f64::NAN)
                };
                let v = quadrature::integrate_adaptive(inner, 0.0, 1.0, quadrature::DEFAULT_TOL)?;
                if v.is_finite() {
                    return Ok(Estimate::exact(v));
                }
            }
        }
        Family::Linear(l) => {
            if let Observable::Builtin {
                function: crate::observable::Builtin::Identity,
            } = observable
            {
                let sum: f64 = l.coefficients().iter().sum();
                return Ok(Estimate::exact(l.noise().mean() * sum));
            }
        }
        Family::Irf(_) => {}
    }
    let process = Process::new(family.clone(), observable.clone())?;
    let dom = SeedDomain::new(seed).derive(tag("invariant_mean"));
    let samples = par::map_streams(dom, MEAN_MC_SAMPLES, |_, rng| {
        let w = family.sample_stationary(rng);
        process.raw(&w)
    });
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("invariant mean sample".into()));
    }
    Ok(batch_means(&samples))
}

/// Draws `(W_0, ε_1..ε_n)` and returns the resulting path.
pub fn sample_path<R: rand::Rng + ?Sized>(
    process: &Process,
    n: usize,
    rng: &mut R,
) -> Result<PathBundle> {
    let w0 = process.family().sample_stationary(rng);
    let noise = process.family().sample_noise(n, rng);
    process.simulate_chain(&w0, &noise)
}

/// Innovation helper for tests and callers building noise by hand.
pub fn symbols(v: &[usize]) -> NoisePath {
    NoisePath::Symbols(v.to_vec())
}

#[doc(hidden)]
pub fn innovation_symbol(e: Innovation) -> Option<usize> {
    match e {
        Innovation::Symbol(s) => Some(s),
        Innovation::Real(_) => None,
    }
}
