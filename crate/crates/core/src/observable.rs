//! Observables `h` applied to the state of a chain.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;

/// Where the state of a family lives; decides how observables are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    /// `R^m / Z^m`, states stored in `[0, 1)^m`.
    Torus(usize),
    /// `[0, 1]`.
    Interval,
    /// `R`.
    Line,
}

impl Domain {
    pub fn dim(&self) -> usize {
        match self {
            Domain::Torus(m) => *m,
            Domain::Interval | Domain::Line => 1,
        }
    }
}

/// `cos * cos(2π<k, x>) + sin * sin(2π<k, x>)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigTerm {
    pub freq: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

impl TrigTerm {
    pub fn amplitude(&self) -> f64 {
        self.cos.hypot(self.sin)
    }

    pub fn freq_norm(&self) -> f64 {
        self.freq
            .iter()
            .map(|&k| (k * k) as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// Real trigonometric polynomial on the torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPolynomial {
    pub terms: Vec<TrigTerm>,
    #[serde(default)]
    pub constant: f64,
}

impl TrigPolynomial {
    pub fn new(terms: Vec<TrigTerm>, constant: f64) -> Self {
        Self { terms, constant }
    }

    /// `cos(2π k x)` in dimension one.
    pub fn cosine(k: i64) -> Self {
        Self::new(
            vec![TrigTerm {
                freq: vec![k],
                cos: 1.0,
                sin: 0.0,
            }],
            0.0,
        )
    }

    pub fn dim(&self) -> Option<usize> {
        self.terms.first().map(|t| t.freq.len())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut s = self.constant;
        for t in &self.terms {
            let phase: f64 = t.freq.iter().zip(x).map(|(&k, &xi)| k as f64 * xi).sum();
            let theta = 2.0 * std::f64::consts::PI * phase;
            s += t.cos * theta.cos() + t.sin * theta.sin();
        }
        s
    }

    /// `∫ h dλ`: the zero-frequency part.
    pub fn mean(&self) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .filter(|t| t.freq.iter().all(|&k| k == 0))
                .map(|t| t.cos)
                .sum::<f64>()
    }

    /// Terms merged by frequency up to sign, as complex coefficients `c_k` of
    /// `Re(c_k e^{2πi<k,x>})`, zero frequency dropped.
    pub fn merged(&self) -> Vec<(Vec<i64>, f64, f64)> {
        let mut out: Vec<(Vec<i64>, f64, f64)> = Vec::new();
        for t in &self.terms {
            if t.freq.iter().all(|&k| k == 0) {
                continue;
            }
            // a cos θ + b sin θ = Re((a - i b) e^{iθ}); for -k: Re((a + i b) e^{iθ'}) with θ' = <k,x>.
            let neg: Vec<i64> = t.freq.iter().map(|k| -k).collect();
            if let Some(e) = out.iter_mut().find(|e| e.0 == t.freq) {
                e.1 += t.cos;
                e.2 -= t.sin;
            } else if let Some(e) = out.iter_mut().find(|e| e.0 == neg) {
                e.1 += t.cos;
                e.2 += t.sin;
            } else {
                out.push((t.freq.clone(), t.cos, -t.sin));
            }
        }
        out
    }
}

/// Piecewise polynomial on `[0, 1]`; piece `i` lives on
/// `[breakpoints[i], breakpoints[i+1]]` with coefficients in the local
/// coordinate `t = x - breakpoints[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewisePolynomial {
    pub breakpoints: Vec<f64>,
    pub pieces: Vec<Vec<f64>>,
}

impl PiecewisePolynomial {
    pub fn new(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        let p = Self {
            breakpoints,
            pieces,
        };
        p.validate()?;
        Ok(p)
    }

    /// Single polynomial on `[0, 1]` with coefficients of `x^j`.
    pub fn polynomial(coefficients: Vec<f64>) -> Self {
        Self {
            breakpoints: vec![0.0, 1.0],
            pieces: vec![coefficients],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.breakpoints;
        if b.len() < 2 || self.pieces.len() != b.len() - 1 {
            return Err(Error::InvalidObservable(
                "need at least two breakpoints and one piece per interval".into(),
            ));
        }
        if b[0] != 0.0 || *b.last().unwrap() != 1.0 {
            return Err(Error::InvalidObservable(
                "breakpoints must start at 0 and end at 1".into(),
            ));
        }
        if b.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidObservable(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        if self
            .pieces
            .iter()
            .any(|c| c.is_empty() || c.len() > 32 || c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidObservable(
                "each piece needs 1..=32 finite coefficients".into(),
            ));
        }
        Ok(())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.pieces[i].len() - 1
    }

    pub fn max_degree(&self) -> usize {
        (0..self.pieces.len())
            .map(|i| self.degree(i))
            .max()
            .unwrap_or(0)
    }

    /// Index of the piece containing `x ∈ [0, 1]`; right-continuous except at 1.
    pub fn piece_of(&self, x: f64) -> usize {
        let n = self.pieces.len();
        let i = self.breakpoints.partition_point(|b| *b <= x);
        i.clamp(1, n) - 1
    }

    #[inline]
    pub fn eval_piece(&self, i: usize, x: f64) -> f64 {
        let t = x - self.breakpoints[i];
        self.pieces[i].iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.eval_piece(self.piece_of(x), x)
    }

    pub fn width(&self, i: usize) -> f64 {
        self.breakpoints[i + 1] - self.breakpoints[i]
    }

    /// Exact `∫_0^1 h`.
    pub fn integral(&self) -> f64 {
        (0..self.pieces.len())
            .map(|i| {
                let w = self.width(i);
                self.pieces[i]
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * w.powi(j as i32 + 1) / (j as f64 + 1.0))
                    .sum::<f64>()
            })
            .sum()
    }

    /// Bound on `sup |h - shift|` from coefficient magnitudes.
    pub fn sup_bound(&self, shift: f64) -> f64 {
        (0..self.pieces.len())
            .map(|i| {
                let w = self.width(i);
                let c = &self.pieces[i];
                (c[0] - shift).abs()
                    + c.iter()
                        .enumerate()
                        .skip(1)
                        .map(|(j, v)| v.abs() * w.powi(j as i32))
                        .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Bound on `sup |h'|` over all pieces.
    pub fn derivative_bound(&self) -> f64 {
        (0..self.pieces.len())
            .map(|i| {
                let w = self.width(i);
                self.pieces[i]
                    .iter()
                    .enumerate()
                    .skip(1)
                    .map(|(j, v)| j as f64 * v.abs() * w.powi(j as i32 - 1))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Largest jump at an interior breakpoint, or across `1 ≡ 0` when periodic.
    pub fn max_jump(&self, periodic: bool) -> f64 {
        let n = self.pieces.len();
        let mut j: f64 = 0.0;
        for i in 1..n {
            let b = self.breakpoints[i];
            j = j.max((self.eval_piece(i - 1, b) - self.eval_piece(i, b)).abs());
        }
        if periodic {
            j = j.max((self.eval_piece(n - 1, 1.0) - self.eval_piece(0, 0.0)).abs());
        }
        j
    }
}

/// Closed-form observables on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum Builtin {
    Identity,
    Abs,
    /// `|x|^beta` with `0 < beta <= 1`.
    Power {
        beta: f64,
    },
}

impl Builtin {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Builtin::Identity => x,
            Builtin::Abs => x.abs(),
            Builtin::Power { beta } => x.abs().powf(*beta),
        }
    }

    /// Concave modulus `c` with `|g(x) - g(y)| <= c(|x - y|)`.
    pub fn modulus(&self, u: f64) -> f64 {
        match self {
            Builtin::Identity | Builtin::Abs => u,
            Builtin::Power { beta } => u.powf(*beta),
        }
    }

    pub fn holder_exponent(&self) -> f64 {
        match self {
            Builtin::Identity | Builtin::Abs => 1.0,
            Builtin::Power { beta } => *beta,
        }
    }
}

pub type SharedFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Black-box observable with a known Lipschitz constant.
#[derive(Clone)]
pub struct LipschitzFn {
    pub f: SharedFn,
    pub lipschitz: f64,
    pub dim: usize,
}

impl fmt::Debug for LipschitzFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LipschitzFn")
            .field("lipschitz", &self.lipschitz)
            .field("dim", &self.dim)
            .finish()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Trig(TrigPolynomial),
    Piecewise(PiecewisePolynomial),
    Builtin {
        function: Builtin,
    },
    #[serde(skip)]
    Lipschitz(LipschitzFn),
}

impl Observable {
    pub fn cosine() -> Self {
        Observable::Trig(TrigPolynomial::cosine(1))
    }

    pub fn builtin(b: Builtin) -> Self {
        Observable::Builtin { function: b }
    }

    pub fn lipschitz<F>(f: F, lipschitz: f64) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Observable::Lipschitz(LipschitzFn {
            f: Arc::new(f),
            lipschitz,
            dim: 1,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Observable::Trig(_) => "trig",
            Observable::Piecewise(_) => "piecewise",
            Observable::Builtin { .. } => "builtin",
            Observable::Lipschitz(_) => "lipschitz",
        }
    }

    /// Checks the observable against the state domain of a family.
    pub fn validate_for(&self, domain: Domain) -> Result<()> {
        match (self, domain) {
            (Observable::Trig(t), Domain::Torus(m)) => {
                if t.terms.iter().any(|term| term.freq.len() != m) {
                    return Err(Error::InvalidObservable(format!(
                        "trig frequencies must have dimension {m}"
                    )));
                }
            }
            (Observable::Trig(t), Domain::Interval) => {
                if t.terms.iter().any(|term| term.freq.len() != 1) {
                    return Err(Error::InvalidObservable(
                        "trig frequencies must be scalars on [0,1]".into(),
                    ));
                }
            }
            (Observable::Piecewise(p), Domain::Torus(1) | Domain::Interval) => p.validate()?,
            (Observable::Builtin { function }, Domain::Interval | Domain::Line) => {
                if let Builtin::Power { beta } = function {
                    if !(*beta > 0.0 && *beta <= 1.0) {
                        return Err(Error::InvalidObservable(format!(
                            "power exponent {beta} not in (0, 1]"
                        )));
                    }
                }
            }
            (Observable::Lipschitz(l), d) => {
                if l.dim != d.dim() || !(l.lipschitz >= 0.0) {
                    return Err(Error::InvalidObservable(
                        "callable dimension or Lipschitz constant invalid".into(),
                    ));
                }
            }
            (o, d) => {
                return Err(Error::InvalidObservable(format!(
                    "{} observable not supported on domain {d:?}",
                    o.name()
                )))
            }
        }
        if let Observable::Trig(t) = self {
            if t.terms
                .iter()
                .any(|x| !(x.cos.is_finite() && x.sin.is_finite()))
                || !t.constant.is_finite()
            {
                return Err(Error::InvalidObservable(
                    "non-finite trig coefficient".into(),
                ));
            }
        }
        Ok(())
    }

    /// `h(x)`; torus states are reduced modulo one first.
    pub fn eval(&self, x: &[f64], domain: Domain) -> f64 {
        match self {
            Observable::Trig(t) => t.eval(x),
            Observable::Piecewise(p) => {
                let v = match domain {
                    Domain::Torus(_) => reduce(x[0]),
                    _ => x[0].clamp(0.0, 1.0),
                };
                p.eval(v)
            }
            Observable::Builtin { function } => function.eval(x[0]),
            Observable::Lipschitz(l) => (l.f)(x),
        }
    }

    #[inline]
    pub fn eval1(&self, x: f64, domain: Domain) -> f64 {
        self.eval(std::slice::from_ref(&x), domain)
    }

    /// `∫ h dλ` under Haar/Lebesgue measure when available in closed form
    /// (or by quadrature for one-dimensional callables).
    pub fn lebesgue_mean(&self, domain: Domain) -> Result<Option<f64>> {
        Ok(match (self, domain) {
            (Observable::Trig(t), _) => Some(t.mean()),
            (Observable::Piecewise(p), _) => Some(p.integral()),
            (Observable::Builtin { function }, Domain::Interval) => Some(match function {
                Builtin::Identity | Builtin::Abs => 0.5,
                Builtin::Power { beta } => 1.0 / (beta + 1.0),
            }),
            (Observable::Lipschitz(l), Domain::Interval | Domain::Torus(1)) => Some(
                quadrature::integrate_adaptive(|x| (l.f)(&[x]), 0.0, 1.0, quadrature::DEFAULT_TOL)?,
            ),
            _ => None,
        })
    }

    /// Bound on `sup |h - shift|` over the domain (infinite when unknown).
    pub fn sup_bound(&self, shift: f64, domain: Domain) -> f64 {
        match (self, domain) {
            (Observable::Trig(t), _) => {
                (t.mean() - shift).abs()
                    + t.terms
                        .iter()
                        .filter(|x| x.freq.iter().any(|&k| k != 0))
                        .map(TrigTerm::amplitude)
                        .sum::<f64>()
            }
            (Observable::Piecewise(p), _) => p.sup_bound(shift),
            (Observable::Builtin { function }, Domain::Interval) => (function.eval(0.0) - shift)
                .abs()
                .max((function.eval(1.0) - shift).abs()),
            (Observable::Lipschitz(l), Domain::Interval | Domain::Torus(1)) => {
                (((l.f)(&[0.0]) - shift).abs()) + l.lipschitz
            }
            _ => f64::INFINITY,
        }
    }

    /// Lipschitz constant (Euclidean metric, periodic distance on the torus).
    pub fn lipschitz_bound(&self, domain: Domain) -> Option<f64> {
        match self {
            Observable::Trig(t) => Some(
                t.terms
                    .iter()
                    .map(|x| 2.0 * std::f64::consts::PI * x.freq_norm() * x.amplitude())
                    .sum(),
            ),
            Observable::Piecewise(p) => {
                let periodic = matches!(domain, Domain::Torus(_));
                if p.max_jump(periodic) > 1e-12 {
                    None
                } else {
                    Some(p.derivative_bound())
                }
            }
            Observable::Builtin { function } => match function {
                Builtin::Identity | Builtin::Abs => Some(1.0),
                Builtin::Power { beta } if *beta == 1.0 => Some(1.0),
                Builtin::Power { .. } => None,
            },
            Observable::Lipschitz(l) => Some(l.lipschitz),
        }
    }
}

/// Representative of `x` modulo one in `[0, 1)`.
#[inline]
pub fn reduce(x: f64) -> f64 {
    let r = x - x.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trig_means() {
        assert_eq!(TrigPolynomial::cosine(1).mean(), 0.0);
        let t = TrigPolynomial::new(
            vec![
                TrigTerm {
                    freq: vec![1],
                    cos: 1.0,
                    sin: 0.0,
                },
                TrigTerm {
                    freq: vec![2],
                    cos: 1.0,
                    sin: 0.0,
                },
            ],
            0.0,
        );
        assert_eq!(t.mean(), 0.0);
    }

    #[test]
    fn piecewise_eval_and_integral() {
        let sq = PiecewisePolynomial::polynomial(vec![0.0, 0.0, 1.0]);
        assert!((sq.integral() - 1.0 / 3.0).abs() < 1e-15);
        let tent =
            PiecewisePolynomial::new(vec![0.0, 0.5, 1.0], vec![vec![0.0, 1.0], vec![0.5, -1.0]])
                .unwrap();
        assert!((tent.eval(0.25) - 0.25).abs() < 1e-15);
        assert!((tent.eval(0.75) - 0.25).abs() < 1e-15);
        assert_eq!(tent.max_jump(true), 0.0);
        assert!((tent.integral() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn breakpoints_must_increase() {
        assert!(PiecewisePolynomial::new(vec![0.0, 0.5, 0.5, 1.0], vec![vec![0.0]; 3]).is_err());
        assert!(PiecewisePolynomial::new(vec![0.0, 1.2], vec![vec![0.0]]).is_err());
    }

    #[test]
    fn merged_terms_combine_conjugates() {
        let t = TrigPolynomial::new(
            vec![
                TrigTerm {
                    freq: vec![1],
                    cos: 1.0,
                    sin: 0.0,
                },
                TrigTerm {
                    freq: vec![-1],
                    cos: 1.0,
                    sin: 0.0,
                },
            ],
            0.0,
        );
        let m = t.merged();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].1, 2.0);
    }

    #[test]
    fn observable_serde_roundtrip() {
        let o = Observable::cosine();
        let s = serde_json::to_string(&o).unwrap();
        let back: Observable = serde_json::from_str(&s).unwrap();
        assert!(matches!(back, Observable::Trig(_)));
        let b: Observable =
            serde_json::from_str(r#"{"kind":"builtin","function":{"name":"power","beta":0.5}}"#)
                .unwrap();
        assert!(matches!(
            b,
            Observable::Builtin {
                function: Builtin::Power { .. }
            }
        ));
    }
}
