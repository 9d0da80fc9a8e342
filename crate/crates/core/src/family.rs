//! The four generative families and their noise alphabets.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::affine::AffineState;
use crate::error::{Error, Result};
use crate::noise::{Categorical, NoiseSpec};
use crate::observable::{reduce, Domain};

const DOMAIN_TOL: f64 = 1e-12;
const INTEGER_TOL: f64 = 1e-9;

/// One innovation: a symbol of a finite alphabet or a real number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Innovation {
    Symbol(usize),
    Real(f64),
}

/// A realized innovation sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePath {
    Symbols(Vec<usize>),
    Reals(Vec<f64>),
}

impl NoisePath {
    pub fn len(&self) -> usize {
        match self {
            NoisePath::Symbols(v) => v.len(),
            NoisePath::Reals(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Innovation {
        match self {
            NoisePath::Symbols(v) => Innovation::Symbol(v[i]),
            NoisePath::Reals(v) => Innovation::Real(v[i]),
        }
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> NoisePath {
        match self {
            NoisePath::Symbols(v) => NoisePath::Symbols(v[range].to_vec()),
            NoisePath::Reals(v) => NoisePath::Reals(v[range].to_vec()),
        }
    }

    pub fn symbols(&self) -> Option<&[usize]> {
        match self {
            NoisePath::Symbols(v) => Some(v),
            NoisePath::Reals(_) => None,
        }
    }

    pub fn reals(&self) -> Option<&[f64]> {
        match self {
            NoisePath::Reals(v) => Some(v),
            NoisePath::Symbols(_) => None,
        }
    }
}

// ---------------------------------------------------------------------------
// Torus endomorphisms

/// Dilating integer matrix acting on the torus, realized through the
/// backward chain `W_n = A^{-1}(W_{n-1} + γ_{ε_n}) mod 1`.
#[derive(Debug, Clone)]
pub struct Torus {
    m: usize,
    matrix: Vec<Vec<i64>>,
    gamma: Vec<Vec<i64>>,
    det: i64,
    inv: Vec<f64>,
    shifts: Vec<Vec<f64>>,
    wrap_free: bool,
}

fn to_dmatrix(matrix: &[Vec<i64>]) -> Result<DMatrix<f64>> {
    let m = matrix.len();
    if m == 0 || matrix.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidFamily(
            "matrix must be square and non-empty".into(),
        ));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| matrix[i][j] as f64))
}

/// Moduli of the eigenvalues of an integer matrix.
pub fn eigen_moduli(matrix: &[Vec<i64>]) -> Result<Vec<f64>> {
    let a = to_dmatrix(matrix)?;
    let mut moduli: Vec<f64> = a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(f64::total_cmp);
    Ok(moduli)
}

fn check_dilating(matrix: &[Vec<i64>]) -> Result<()> {
    let moduli = eigen_moduli(matrix)?;
    if moduli.iter().any(|&r| r <= 1.0 + 1e-12) {
        return Err(Error::NotDilating { moduli });
    }
    Ok(())
}

fn integer_det(matrix: &[Vec<i64>]) -> Result<i64> {
    let d = to_dmatrix(matrix)?.determinant();
    if d.abs() < 0.5 {
        return Err(Error::SingularMatrix);
    }
    Ok(d.round() as i64)
}

fn inverse(matrix: &[Vec<i64>]) -> Result<DMatrix<f64>> {
    to_dmatrix(matrix)?
        .try_inverse()
        .ok_or(Error::SingularMatrix)
}

/// Checks that `gamma` is a system of representatives of `Z^m / A Z^m`.
pub fn validate_gamma(matrix: &[Vec<i64>], gamma: &[Vec<i64>]) -> Result<()> {
    check_dilating(matrix)?;
    let m = matrix.len();
    let det = integer_det(matrix)?;
    if gamma.len() as i64 != det.abs() {
        return Err(Error::InvalidGamma(format!(
            "|Γ| = {} but |det A| = {}",
            gamma.len(),
            det.abs()
        )));
    }
    if gamma.iter().any(|g| g.len() != m) {
        return Err(Error::InvalidGamma(format!(
            "representatives must have dimension {m}"
        )));
    }
    let inv = inverse(matrix)?;
    for i in 0..gamma.len() {
        for j in 0..i {
            let diff = nalgebra::DVector::from_fn(m, |r, _| (gamma[i][r] - gamma[j][r]) as f64);
            let y = &inv * diff;
            if y.iter().all(|v| (v - v.round()).abs() < INTEGER_TOL) {
                return Err(Error::InvalidGamma(format!(
                    "{:?} and {:?} are congruent modulo A Z^m",
                    gamma[i], gamma[j]
                )));
            }
        }
    }
    Ok(())
}

/// Integer points of `A [0,1)^m` (dimension one or two).
pub fn enumerate_gamma(matrix: &[Vec<i64>]) -> Result<Vec<Vec<i64>>> {
    let m = matrix.len();
    let det = integer_det(matrix)?;
    match m {
        1 => Ok((0..det.abs())
            .map(|k| vec![if det > 0 { k } else { -k }])
            .collect()),
        2 => {
            let (a, b, c, d) = (matrix[0][0], matrix[0][1], matrix[1][0], matrix[1][1]);
            // A^{-1} z = adj(A) z / det with adj = [[d, -b], [-c, a]].
            let corners = [(0, 0), (a, c), (b, d), (a + b, c + d)];
            let (x0, x1) = (
                corners.iter().map(|p| p.0).min().unwrap(),
                corners.iter().map(|p| p.0).max().unwrap(),
            );
            let (y0, y1) = (
                corners.iter().map(|p| p.1).min().unwrap(),
                corners.iter().map(|p| p.1).max().unwrap(),
            );
            let inside = |num: i64| {
                if det > 0 {
                    num >= 0 && num < det
                } else {
                    num <= 0 && num > det
                }
            };
            let mut out = Vec::new();
            for x in x0..=x1 {
                for y in y0..=y1 {
                    if inside(d * x - b * y) && inside(-c * x + a * y) {
                        out.push(vec![x, y]);
                    }
                }
            }
            Ok(out)
        }
        _ => Err(Error::Unsupported {
            op: "enumerate_gamma",
            family: "torus",
            hint: "; supply Γ explicitly when m > 2",
        }),
    }
}

impl Torus {
    /// Validated torus family; `gamma = None` enumerates `A[0,1)^m ∩ Z^m`.
    pub fn new(matrix: Vec<Vec<i64>>, gamma: Option<Vec<Vec<i64>>>) -> Result<Self> {
        check_dilating(&matrix)?;
        let gamma = match gamma {
            Some(g) => g,
            None => enumerate_gamma(&matrix)?,
        };
        validate_gamma(&matrix, &gamma)?;
        let m = matrix.len();
        let det = integer_det(&matrix)?;
        let inv_m = inverse(&matrix)?;
        let inv: Vec<f64> = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| inv_m[(i, j)])
            .collect();
        let shifts: Vec<Vec<f64>> = gamma
            .iter()
            .map(|g| {
                (0..m)
                    .map(|i| (0..m).map(|j| inv[i * m + j] * g[j] as f64).sum())
                    .collect()
            })
            .collect();
        let mut t = Self {
            m,
            matrix,
            gamma,
            det,
            inv,
            shifts,
            wrap_free: false,
        };
        t.wrap_free = t.check_wrap_free();
        Ok(t)
    }

    /// Every branch `u -> A^{-1}(u + γ)` maps `[0,1]^m` into itself.
    fn check_wrap_free(&self) -> bool {
        let m = self.m;
        for mask in 0..(1u32 << m) {
            let v: Vec<f64> = (0..m).map(|i| ((mask >> i) & 1) as f64).collect();
            for s in &self.shifts {
                for (i, si) in s.iter().enumerate() {
                    let x = si + (0..m).map(|j| self.inv[i * m + j] * v[j]).sum::<f64>();
                    if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&x) {
                        return false;
                    }
                }
            }
        }
        true
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn matrix(&self) -> &[Vec<i64>] {
        &self.matrix
    }

    pub fn gamma(&self) -> &[Vec<i64>] {
        &self.gamma
    }

    pub fn det(&self) -> i64 {
        self.det
    }

    /// Row-major `A^{-1}`.
    pub fn inverse(&self) -> &[f64] {
        &self.inv
    }

    /// `A^{-1} γ_s`.
    pub fn shift(&self, s: usize) -> &[f64] {
        &self.shifts[s]
    }

    pub fn alphabet_size(&self) -> usize {
        self.gamma.len()
    }

    /// No branch of the backward chain crosses the boundary of the unit cube,
    /// so exact affine propagation is available.
    pub fn is_wrap_free(&self) -> bool {
        self.wrap_free
    }

    pub fn step(&self, w: &mut [f64], s: usize) {
        let m = self.m;
        if m == 1 {
            w[0] = reduce(self.inv[0] * w[0] + self.shifts[s][0]);
            return;
        }
        let next: Vec<f64> = (0..m)
            .map(|i| {
                reduce(self.shifts[s][i] + (0..m).map(|j| self.inv[i * m + j] * w[j]).sum::<f64>())
            })
            .collect();
        w.copy_from_slice(&next);
    }
}

// ---------------------------------------------------------------------------
// Piecewise affine maps

/// Inverse branches `s_k(x) = α_k x + β_k` of a piecewise affine expanding map.
#[derive(Debug, Clone)]
pub struct PiecewiseAffine {
    slopes: Vec<f64>,
    intercepts: Vec<f64>,
    branch_law: Categorical,
    alpha_bar: f64,
}

impl PiecewiseAffine {
    pub fn new(slopes: Vec<f64>, intercepts: Vec<f64>) -> Result<Self> {
        if slopes.len() < 2 || slopes.len() != intercepts.len() {
            return Err(Error::InvalidFamily(
                "need at least two branches with one intercept each".into(),
            ));
        }
        if let Some(a) = slopes.iter().find(|a| !(a.abs() > 0.0 && a.abs() < 1.0)) {
            return Err(Error::InvalidFamily(format!(
                "slope {a} must satisfy 0 < |α| < 1"
            )));
        }
        let total: f64 = slopes.iter().map(|a| a.abs()).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidFamily(format!(
                "Σ|α_k| = {total}, expected 1"
            )));
        }
        let mut images: Vec<(f64, f64)> = Vec::new();
        for (a, b) in slopes.iter().zip(&intercepts) {
            let (lo, hi) = if *a > 0.0 { (*b, a + b) } else { (a + b, *b) };
            if lo < -DOMAIN_TOL || hi > 1.0 + DOMAIN_TOL {
                return Err(Error::InvalidFamily(format!(
                    "branch image [{lo}, {hi}] leaves [0, 1]"
                )));
            }
            images.push((lo, hi));
        }
        images.sort_by(|x, y| x.0.total_cmp(&y.0));
        if images.windows(2).any(|w| w[1].0 < w[0].1 - DOMAIN_TOL) {
            return Err(Error::InvalidFamily("branch images overlap".into()));
        }
        let probs: Vec<f64> = slopes.iter().map(|a| a.abs()).collect();
        let branch_law = Categorical::new(&probs)
            .map_err(|e| Error::InvalidFamily(format!("branch law: {e}")))?;
        let alpha_bar = probs.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            slopes,
            intercepts,
            branch_law,
            alpha_bar,
        })
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    pub fn branch(&self, k: usize) -> (f64, f64) {
        (self.slopes[k], self.intercepts[k])
    }

    pub fn alphabet_size(&self) -> usize {
        self.slopes.len()
    }
}

// ---------------------------------------------------------------------------
// Linear processes

/// Coefficient sequence `a_i, i >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `a_i = scale * ratio^i`.
    Geometric { scale: f64, ratio: f64 },
    /// `a_i = scale * (1 + i)^{-exponent}`.
    PowerLaw { scale: f64, exponent: f64 },
    /// Explicit finite list; `a_i = 0` beyond it.
    List { values: Vec<f64> },
}

impl CoefficientSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CoefficientSpec::Geometric { scale, ratio } => {
                if !(scale.is_finite() && ratio.abs() < 1.0) {
                    return Err(Error::InvalidFamily(format!(
                        "geometric ratio {ratio} must satisfy |r| < 1"
                    )));
                }
            }
            CoefficientSpec::PowerLaw { scale, exponent } => {
                if !(scale.is_finite() && *exponent > 1.0) {
                    return Err(Error::InvalidFamily(format!(
                        "power-law exponent {exponent} must exceed 1 for summability"
                    )));
                }
            }
            CoefficientSpec::List { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidFamily(
                        "coefficient list must be non-empty and finite".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn coefficient(&self, i: usize) -> f64 {
        match self {
            CoefficientSpec::Geometric { scale, ratio } => scale * ratio.powi(i as i32),
            CoefficientSpec::PowerLaw { scale, exponent } => {
                scale * (1.0 + i as f64).powf(-exponent)
            }
            CoefficientSpec::List { values } => values.get(i).copied().unwrap_or(0.0),
        }
    }

    /// Upper bound on `Σ_{i >= n} a_i²`.
    pub fn tail_sq(&self, n: usize) -> f64 {
        match self {
            CoefficientSpec::Geometric { scale, ratio } => {
                scale * scale * ratio.powi(2 * n as i32) / (1.0 - ratio * ratio)
            }
            CoefficientSpec::PowerLaw { scale, exponent } => {
                // (1+n)^{-2a} + ∫_{1+n}^∞ x^{-2a} dx
                let x = 1.0 + n as f64;
                scale
                    * scale
                    * (x.powf(-2.0 * exponent)
                        + x.powf(1.0 - 2.0 * exponent) / (2.0 * exponent - 1.0))
            }
            CoefficientSpec::List { values } => values.iter().skip(n).map(|v| v * v).sum(),
        }
    }

    /// Upper bound on `Σ_{i >= n} |a_i|`.
    pub fn tail_abs(&self, n: usize) -> f64 {
        match self {
            CoefficientSpec::Geometric { scale, ratio } => {
                scale.abs() * ratio.abs().powi(n as i32) / (1.0 - ratio.abs())
            }
            CoefficientSpec::PowerLaw { scale, exponent } => {
                let x = 1.0 + n as f64;
                scale.abs() * (x.powf(-exponent) + x.powf(1.0 - exponent) / (exponent - 1.0))
            }
            CoefficientSpec::List { values } => values.iter().skip(n).map(|v| v.abs()).sum(),
        }
    }

    /// Depth of the explicit list, if any.
    pub fn natural_depth(&self) -> Option<usize> {
        match self {
            CoefficientSpec::List { values } => Some(values.len() - 1),
            _ => None,
        }
    }
}

/// `X_n = g(Σ_{i=0}^{D} a_i ε_{n-i})`.
#[derive(Debug, Clone)]
pub struct Linear {
    law: CoefficientSpec,
    coefficients: Vec<f64>,
    noise: NoiseSpec,
}

/// Default truncation depth for closed-form coefficient laws.
pub const DEFAULT_LINEAR_DEPTH: usize = 1024;

impl Linear {
    pub fn new(law: CoefficientSpec, noise: NoiseSpec, depth: Option<usize>) -> Result<Self> {
        law.validate()?;
        noise.validate()?;
        let depth = match (law.natural_depth(), depth) {
            (Some(d), None) => d,
            (_, Some(d)) => d,
            (None, None) => match &law {
                CoefficientSpec::Geometric { ratio, .. } => {
                    // first depth whose squared tail is below 1e-30
                    let mut d = 0;
                    while law.tail_sq(d + 1) > 1e-30 && d < 100_000 {
                        d += 1;
                    }
                    let _ = ratio;
                    d
                }
                _ => DEFAULT_LINEAR_DEPTH,
            },
        };
        if depth > 1_000_000 {
            return Err(Error::ResourceGuard(format!(
                "linear depth {depth} too large"
            )));
        }
        let coefficients = (0..=depth).map(|i| law.coefficient(i)).collect();
        Ok(Self {
            law,
            coefficients,
            noise,
        })
    }

    pub fn depth(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn law(&self) -> &CoefficientSpec {
        &self.law
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// `a_i` for any `i` (zero beyond an explicit list).
    pub fn coefficient(&self, i: usize) -> f64 {
        self.law.coefficient(i)
    }

    /// Bound on `Σ_{i > D} a_i²` dropped by truncation.
    pub fn truncation_tail_sq(&self) -> f64 {
        self.law.tail_sq(self.depth() + 1)
    }

    /// `Σ_i a_i y_i` with `y_0` the most recent innovation.
    #[inline]
    pub fn combine(&self, recent_first: &[f64]) -> f64 {
        self.coefficients
            .iter()
            .zip(recent_first)
            .map(|(a, e)| a * e)
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Iterated random functions

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum IrfMap {
    /// `F(ε, x) = a x + ε`.
    Affine { a: f64 },
    /// `F(ε, x) = a tanh(x) + ε`.
    Tanh { a: f64 },
}

impl IrfMap {
    #[inline]
    pub fn apply(&self, e: f64, x: f64) -> f64 {
        match self {
            IrfMap::Affine { a } => a * x + e,
            IrfMap::Tanh { a } => a * x.tanh() + e,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            IrfMap::Affine { a } | IrfMap::Tanh { a } => a.abs(),
        }
    }
}

/// `(C, ρ, α)` with `E d(W_{n,x}, W_{n,y})^α <= C ρ^n d(x, y)^α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionParams {
    pub c: f64,
    pub rho: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

/// Target accuracy of the burn-in used to draw approximately stationary starts.
pub const BURN_IN_ACCURACY: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Irf {
    map: IrfMap,
    noise: NoiseSpec,
    x0: f64,
    contraction: ContractionParams,
    burn_in: usize,
    burn_in_error: f64,
}

impl Irf {
    pub fn new(
        map: IrfMap,
        noise: NoiseSpec,
        x0: f64,
        contraction: ContractionParams,
    ) -> Result<Self> {
        noise.validate()?;
        let ContractionParams { c, rho, alpha } = contraction;
        if !(c > 0.0 && rho > 0.0 && rho < 1.0 && alpha >= 1.0) || !x0.is_finite() {
            return Err(Error::InvalidFamily(format!(
                "contraction parameters need C > 0, 0 < ρ < 1, α >= 1 (got C={c}, ρ={rho}, α={alpha})"
            )));
        }
        let proxy = 1.0 + x0.abs() + noise.abs_moment(1.0) / (1.0 - rho);
        let mut burn_in = 0usize;
        while c * rho.powi(burn_in as i32) * proxy >= BURN_IN_ACCURACY && burn_in < 100_000 {
            burn_in += 1;
        }
        let burn_in_error = c * rho.powi(burn_in as i32) * proxy;
        Ok(Self {
            map,
            noise,
            x0,
            contraction,
            burn_in,
            burn_in_error,
        })
    }

    pub fn map(&self) -> IrfMap {
        self.map
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn contraction(&self) -> ContractionParams {
        self.contraction
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// `C ρ^B (1 + |x0| + E|ε|/(1-ρ))` for the chosen burn-in `B`.
    pub fn burn_in_error(&self) -> f64 {
        self.burn_in_error
    }
}

// ---------------------------------------------------------------------------

/// Declarative form of a family, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    Torus {
        matrix: Vec<Vec<i64>>,
        #[serde(default)]
        gamma: Option<Vec<Vec<i64>>>,
    },
    PiecewiseAffine {
        slopes: Vec<f64>,
        intercepts: Vec<f64>,
    },
    Linear {
        coefficients: CoefficientSpec,
        noise: NoiseSpec,
        #[serde(default)]
        depth: Option<usize>,
    },
    Irf {
        map: IrfMap,
        noise: NoiseSpec,
        #[serde(default)]
        x0: f64,
        contraction: ContractionParams,
    },
}

#[derive(Debug, Clone)]
pub enum Family {
    Linear(Linear),
    Irf(Irf),
    Torus(Torus),
    PiecewiseAffine(PiecewiseAffine),
}

impl Family {
    pub fn from_spec(spec: &FamilySpec) -> Result<Self> {
        Ok(match spec {
            FamilySpec::Torus { matrix, gamma } => {
                Family::Torus(Torus::new(matrix.clone(), gamma.clone())?)
            }
            FamilySpec::PiecewiseAffine { slopes, intercepts } => {
                Family::PiecewiseAffine(PiecewiseAffine::new(slopes.clone(), intercepts.clone())?)
            }
            FamilySpec::Linear {
                coefficients,
                noise,
                depth,
            } => Family::Linear(Linear::new(coefficients.clone(), noise.clone(), *depth)?),
            FamilySpec::Irf {
                map,
                noise,
                x0,
                contraction,
            } => Family::Irf(Irf::new(*map, noise.clone(), *x0, *contraction)?),
        })
    }

    /// Doubling map `A = (2)`, `Γ = {0, 1}`.
    pub fn doubling() -> Self {
        Family::Torus(Torus::new(vec![vec![2]], Some(vec![vec![0], vec![1]])).expect("valid"))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Linear(_) => "linear",
            Family::Irf(_) => "irf",
            Family::Torus(_) => "torus",
            Family::PiecewiseAffine(_) => "piecewise_affine",
        }
    }

    pub fn domain(&self) -> Domain {
        match self {
            Family::Torus(t) => Domain::Torus(t.dim()),
            Family::PiecewiseAffine(_) => Domain::Interval,
            Family::Linear(_) | Family::Irf(_) => Domain::Line,
        }
    }

    /// Length of the state vector: the chain state, or for a linear process
    /// the `D + 1` most recent innovations (most recent first).
    pub fn state_len(&self) -> usize {
        match self {
            Family::Torus(t) => t.dim(),
            Family::PiecewiseAffine(_) | Family::Irf(_) => 1,
            Family::Linear(l) => l.depth() + 1,
        }
    }

    pub fn is_markov_affine(&self) -> bool {
        matches!(self, Family::Torus(_) | Family::PiecewiseAffine(_))
    }

    pub fn alphabet_size(&self) -> Option<usize> {
        match self {
            Family::Torus(t) => Some(t.alphabet_size()),
            Family::PiecewiseAffine(pa) => Some(pa.alphabet_size()),
            _ => None,
        }
    }

    pub fn sample_innovation<R: Rng + ?Sized>(&self, rng: &mut R) -> Innovation {
        match self {
            Family::Torus(t) => Innovation::Symbol(rng.random_range(0..t.alphabet_size())),
            Family::PiecewiseAffine(pa) => Innovation::Symbol(pa.branch_law.sample(rng)),
            Family::Linear(l) => Innovation::Real(l.noise.sample(rng)),
            Family::Irf(f) => Innovation::Real(f.noise.sample(rng)),
        }
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> NoisePath {
        match self {
            Family::Torus(_) | Family::PiecewiseAffine(_) => NoisePath::Symbols(
                (0..n)
                    .map(|_| match self.sample_innovation(rng) {
                        Innovation::Symbol(s) => s,
                        Innovation::Real(_) => unreachable!(),
                    })
                    .collect(),
            ),
            Family::Linear(_) | Family::Irf(_) => NoisePath::Reals(
                (0..n)
                    .map(|_| match self.sample_innovation(rng) {
                        Innovation::Real(x) => x,
                        Innovation::Symbol(_) => unreachable!(),
                    })
                    .collect(),
            ),
        }
    }

    /// A draw from the stationary law of the state (after burn-in for IRF).
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Family::Torus(t) => (0..t.dim()).map(|_| rng.random::<f64>()).collect(),
            Family::PiecewiseAffine(_) => vec![rng.random::<f64>()],
            Family::Linear(l) => (0..=l.depth()).map(|_| l.noise.sample(rng)).collect(),
            Family::Irf(f) => {
                let mut x = f.x0;
                for _ in 0..f.burn_in {
                    x = f.map.apply(f.noise.sample(rng), x);
                }
                vec![x]
            }
        }
    }

    /// Validates that `w` is a legal state.
    pub fn check_state(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.state_len() {
            return Err(Error::OutOfRange(format!(
                "state has length {}, expected {}",
                w.len(),
                self.state_len()
            )));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state".into()));
        }
        match self {
            Family::PiecewiseAffine(_) if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&w[0]) => {
                Err(Error::StateOutOfDomain {
                    step: 0,
                    value: w[0],
                })
            }
            _ => Ok(()),
        }
    }

    /// One step of the recursion, in place.
    pub fn step(&self, w: &mut [f64], e: Innovation, step: usize) -> Result<()> {
        match (self, e) {
            (Family::Torus(t), Innovation::Symbol(s)) => {
                if s >= t.alphabet_size() {
                    return Err(Error::SymbolOutOfRange {
                        symbol: s,
                        size: t.alphabet_size(),
                    });
                }
                t.step(w, s);
            }
            (Family::PiecewiseAffine(pa), Innovation::Symbol(s)) => {
                if s >= pa.alphabet_size() {
                    return Err(Error::SymbolOutOfRange {
                        symbol: s,
                        size: pa.alphabet_size(),
                    });
                }
                let (a, b) = pa.branch(s);
                let x = a * w[0] + b;
                if !(-DOMAIN_TOL..=1.0 + DOMAIN_TOL).contains(&x) {
                    return Err(Error::StateOutOfDomain { step, value: x });
                }
                w[0] = x.clamp(0.0, 1.0);
            }
            (Family::Linear(_), Innovation::Real(x)) => {
                w.rotate_right(1);
                w[0] = x;
            }
            (Family::Irf(f), Innovation::Real(x)) => {
                w[0] = f.map.apply(x, w[0]);
            }
            _ => return Err(Error::InnovationKind),
        }
        Ok(())
    }

    /// Affine map `u -> L u + b` of one step from symbol `s`.
    pub fn affine_step(&self, s: usize) -> Result<AffineState> {
        match self {
            Family::Torus(t) => {
                if s >= t.alphabet_size() {
                    return Err(Error::SymbolOutOfRange {
                        symbol: s,
                        size: t.alphabet_size(),
                    });
                }
                Ok(AffineState {
                    dim: t.dim(),
                    lin: t.inverse().to_vec(),
                    off: t.shift(s).to_vec(),
                })
            }
            Family::PiecewiseAffine(pa) => {
                if s >= pa.alphabet_size() {
                    return Err(Error::SymbolOutOfRange {
                        symbol: s,
                        size: pa.alphabet_size(),
                    });
                }
                let (a, b) = pa.branch(s);
                Ok(AffineState::scalar(a, b))
            }
            _ => Err(Error::Unsupported {
                op: "affine_propagation",
                family: self.name(),
                hint: "",
            }),
        }
    }

    /// Composite affine map of a window of symbols, oldest first.
    pub fn affine_propagation(&self, window: &[usize]) -> Result<AffineState> {
        if let Family::Torus(t) = self {
            if !t.is_wrap_free() {
                return Err(Error::Unsupported {
                    op: "affine_propagation",
                    family: "torus (with wrap-around branches)",
                    hint: "; use the Monte Carlo conditional expectation",
                });
            }
        }
        let mut state = AffineState::identity(self.state_len());
        for &s in window {
            let st = self.affine_step(s)?;
            state.push(&st.lin, &st.off);
        }
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_gamma() {
        assert!(validate_gamma(&[vec![2]], &[vec![0], vec![1]]).is_ok());
        assert!(matches!(
            validate_gamma(&[vec![2]], &[vec![0], vec![2]]),
            Err(Error::InvalidGamma(_))
        ));
        assert!(matches!(
            validate_gamma(&[vec![2]], &[vec![0]]),
            Err(Error::InvalidGamma(_))
        ));
    }

    #[test]
    fn non_dilating_rejected() {
        let e = validate_gamma(&[vec![1, 1], vec![0, 1]], &[vec![0, 0]]).unwrap_err();
        assert!(matches!(e, Error::NotDilating { .. }));
    }

    #[test]
    fn enumerate_two_identity() {
        let g = enumerate_gamma(&[vec![2, 0], vec![0, 2]]).unwrap();
        assert_eq!(g, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        let g = enumerate_gamma(&[vec![2, 1], vec![0, 2]]).unwrap();
        assert_eq!(g.len(), 4);
        assert!(validate_gamma(&[vec![2, 1], vec![0, 2]], &g).is_ok());
    }

    #[test]
    fn wrap_free_detection() {
        let Family::Torus(t) = Family::doubling() else {
            unreachable!()
        };
        assert!(t.is_wrap_free());
        let t = Torus::new(vec![vec![2, 0], vec![0, 2]], None).unwrap();
        assert!(t.is_wrap_free());
        let t = Torus::new(vec![vec![2]], Some(vec![vec![0], vec![3]])).unwrap();
        assert!(!t.is_wrap_free());
    }

    #[test]
    fn affine_family_validation() {
        assert!(PiecewiseAffine::new(vec![0.5, 0.5], vec![0.0, 0.5]).is_ok());
        assert!(PiecewiseAffine::new(vec![0.5, 0.4], vec![0.0, 0.5]).is_err());
        assert!(PiecewiseAffine::new(vec![0.5, 0.5], vec![0.0, 0.25]).is_err());
        assert!(PiecewiseAffine::new(vec![1.0], vec![0.0]).is_err());
        assert!(PiecewiseAffine::new(vec![0.5, -0.25, 0.25], vec![0.0, 0.75, 0.75]).is_ok());
    }

    #[test]
    fn family_spec_json() {
        let s = r#"{"kind":"torus","matrix":[[2]],"gamma":[[0],[1]]}"#;
        let spec: FamilySpec = serde_json::from_str(s).unwrap();
        assert!(Family::from_spec(&spec).is_ok());
        let s = r#"{"kind":"linear","coefficients":{"law":"geometric","scale":1.0,"ratio":0.5},"noise":{"kind":"two_point"}}"#;
        let spec: FamilySpec = serde_json::from_str(s).unwrap();
        let Family::Linear(l) = Family::from_spec(&spec).unwrap() else {
            unreachable!()
        };
        assert!(l.truncation_tail_sq() <= 1e-30);
    }

    #[test]
    fn power_law_tail_bound_dominates_partial_sums() {
        let law = CoefficientSpec::PowerLaw {
            scale: 1.0,
            exponent: 1.5,
        };
        for n in [0usize, 1, 5, 40] {
            let direct: f64 = (n..200_000).map(|i| law.coefficient(i).powi(2)).sum();
            assert!(law.tail_sq(n) >= direct);
        }
    }
}
