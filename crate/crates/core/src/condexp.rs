//! Conditional expectations `E(X_j | ε_s, .., ε_j)`.
//!
//! Given the window, the remaining randomness of a torus or piecewise affine
//! chain is the state `W_{s-1}`, which is uniform and independent of the
//! window. The conditional expectation is therefore the average of
//! `h(L u + b)` over the unit cube, where `(L, b)` propagates the window.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::affine::AffineState;
use crate::error::{Error, Result};
use crate::family::{Family, NoisePath};
use crate::observable::{reduce, Builtin, Domain, Observable, PiecewisePolynomial, TrigPolynomial};
use crate::par;
use crate::process::Process;
use crate::quadrature::{self, small_rule};
use crate::rng::{tag, SeedDomain};
use crate::stats::{batch_means, Estimate};

/// Tolerance of every quadrature used for conditional expectations.
pub const COND_TOL: f64 = 1e-10;

/// Minimum Monte Carlo budget.
pub const MIN_BUDGET: usize = 1000;

const INTEGER_TOL: f64 = 1e-9;

/// The σ-algebra `σ(ε_start, .., ε_end)`, optionally joined with `W_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningWindow {
    pub start: usize,
    pub end: usize,
    /// `ε_start..=ε_end`.
    pub noise: NoisePath,
    /// `W_0`; only meaningful when `start == 1`.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

impl ConditioningWindow {
    pub fn new(start: usize, end: usize, noise: NoisePath) -> Result<Self> {
        let w = Self {
            start,
            end,
            noise,
            initial: None,
        };
        w.validate()?;
        Ok(w)
    }

    /// Window `ε_1..ε_end` together with the initial state.
    pub fn full(initial: Vec<f64>, noise: NoisePath) -> Result<Self> {
        let end = noise.len();
        let w = Self {
            start: 1,
            end,
            noise,
            initial: Some(initial),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start == 0 || self.start > self.end + 1 {
            return Err(Error::OutOfRange(format!(
                "window [{}, {}] must satisfy 1 <= start <= end + 1",
                self.start, self.end
            )));
        }
        if self.noise.len() != self.end + 1 - self.start {
            return Err(Error::OutOfRange(format!(
                "window [{}, {}] needs {} innovations, got {}",
                self.start,
                self.end,
                self.end + 1 - self.start,
                self.noise.len()
            )));
        }
        if self.initial.is_some() && self.start != 1 {
            return Err(Error::OutOfRange(
                "the initial state can only join a window starting at 1".into(),
            ));
        }
        Ok(())
    }

    pub fn includes_initial(&self) -> bool {
        self.initial.is_some()
    }
}

/// `φ(λ) = ∫_0^1 e^{2πiλu} du = e^{iπλ} sin(πλ)/(πλ)` as `(re, im)`.
fn phi(lambda: f64) -> (f64, f64) {
    let r = lambda.round();
    if r != 0.0 && (lambda - r).abs() < INTEGER_TOL {
        return (0.0, 0.0);
    }
    let x = PI * lambda;
    let sinc = if x.abs() < 1e-4 {
        1.0 - x * x / 6.0 + x.powi(4) / 120.0
    } else {
        x.sin() / x
    };
    (x.cos() * sinc, x.sin() * sinc)
}

/// `∫ t(L u + b) du` over the unit cube, in closed form.
pub fn trig_average(t: &TrigPolynomial, state: &AffineState) -> f64 {
    let mut total = t.mean();
    for (k, re, im) in t.merged() {
        let lam = state.transpose_apply(&k);
        let phase: f64 = k
            .iter()
            .zip(&state.off)
            .map(|(&ki, &bi)| ki as f64 * bi)
            .sum();
        let theta = 2.0 * PI * reduce(phase);
        // c e^{iθ} Π φ(λ_i), real part
        let (mut zr, mut zi) = (
            re * theta.cos() - im * theta.sin(),
            re * theta.sin() + im * theta.cos(),
        );
        for l in lam {
            let (pr, pi) = phi(l);
            let nr = zr * pr - zi * pi;
            zi = zr * pi + zi * pr;
            zr = nr;
        }
        total += zr;
    }
    total
}

/// Average of a polynomial piece over `[lo, hi]` with an exact Gauss rule.
fn piece_average(p: &PiecewisePolynomial, i: usize, lo: f64, hi: f64) -> f64 {
    let rule = small_rule(p.degree(i) / 2 + 1);
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    0.5 * rule
        .nodes()
        .iter()
        .zip(rule.weights())
        .map(|(x, w)| w * p.eval_piece(i, mid + half * x))
        .sum::<f64>()
}

/// `∫_lo^hi f` over a sub-interval of `[0, 1]` split at the breakpoints,
/// using `local(i, a, b)` for the average of piece `i` over `[a, b]`.
fn split_pieces<F: FnMut(usize, f64, f64) -> f64>(
    p: &PiecewisePolynomial,
    lo: f64,
    hi: f64,
    mut local: F,
) -> f64 {
    let mut acc = crate::stats::CompensatedSum::new();
    let first = p.piece_of(lo);
    for i in first..p.pieces.len() {
        let a = lo.max(p.breakpoints[i]);
        let b = hi.min(p.breakpoints[i + 1]);
        if b > a {
            acc.add((b - a) * local(i, a, b));
        }
        if p.breakpoints[i + 1] >= hi {
            break;
        }
    }
    acc.value()
}

/// Splits `[lo, hi]` at integers, yielding representatives in `[0, 1]`.
fn unit_segments(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut a = lo;
    while a < hi {
        let base = a.floor();
        let b = hi.min(base + 1.0);
        let (ra, rb) = (a - base, b - base);
        if rb > ra {
            out.push((ra, rb));
        }
        a = b;
    }
    out
}

fn image_interval(state: &AffineState) -> (f64, f64) {
    let (a, b) = (state.lin[0], state.off[0]);
    if a >= 0.0 {
        (b, a + b)
    } else {
        (a + b, b)
    }
}

/// Average of `f(y)` for `y` uniform on the image of `[0, 1]` under a scalar
/// state, with `segment(a, b)` returning `∫_a^b f` for `0 <= a < b <= 1`.
fn scalar_average<F: FnMut(f64, f64) -> Result<f64>>(
    state: &AffineState,
    domain: Domain,
    point: impl Fn(f64) -> f64,
    mut segment: F,
) -> Result<f64> {
    let (lo, hi) = image_interval(state);
    let width = hi - lo;
    if width == 0.0 {
        return Ok(point(lo));
    }
    let segs = match domain {
        Domain::Torus(_) => unit_segments(lo, hi),
        _ => vec![(lo.clamp(0.0, 1.0), hi.clamp(0.0, 1.0))],
    };
    let mut acc = crate::stats::CompensatedSum::new();
    for (a, b) in segs {
        acc.add(segment(a, b)?);
    }
    Ok(acc.value() / width)
}

fn check_affine(process: &Process, state: &AffineState) -> Result<()> {
    match process.family() {
        Family::Torus(t) => {
            if !t.is_wrap_free() {
                return Err(Error::Unsupported {
                    op: "cond_exp",
                    family: "torus (with wrap-around branches)",
                    hint: "; use cond_exp_mc",
                });
            }
        }
        Family::PiecewiseAffine(_) => {}
        f => {
            return Err(Error::Unsupported {
                op: "cond_exp",
                family: f.name(),
                hint: "; use cond_exp_mc",
            })
        }
    }
    if state.dim != process.family().state_len() {
        return Err(Error::OutOfRange("affine state dimension mismatch".into()));
    }
    Ok(())
}

/// `∫ X(L u + b) dλ(u)`: the centered observable averaged over a uniform
/// start pushed through `state`.
pub fn window_average(process: &Process, state: &AffineState) -> Result<f64> {
    check_affine(process, state)?;
    let domain = process.domain();
    let raw = match process.observable() {
        Observable::Trig(t) => trig_average(t, state),
        Observable::Piecewise(p) => scalar_average(
            state,
            domain,
            |y| p.eval(y),
            |a, b| Ok(split_pieces(p, a, b, |i, x, y| piece_average(p, i, x, y))),
        )?,
        Observable::Builtin { function } => scalar_average(
            state,
            domain,
            |y| function.eval(y),
            |a, b| builtin_integral(*function, a, b),
        )?,
        Observable::Lipschitz(l) => callable_average(state, domain, |y| (l.f)(y))?,
    };
    Ok(raw - process.mean())
}

fn builtin_integral(f: Builtin, a: f64, b: f64) -> Result<f64> {
    Ok(match f {
        Builtin::Identity | Builtin::Abs => 0.5 * (b * b - a * a),
        Builtin::Power { beta } => {
            quadrature::integrate_adaptive(|x| x.powf(beta), a, b, COND_TOL * (b - a))?
        }
    })
}

fn callable_average<F: Fn(&[f64]) -> f64>(
    state: &AffineState,
    domain: Domain,
    f: F,
) -> Result<f64> {
    let eval = |u: &[f64]| {
        let y = state.apply(u);
        match domain {
            Domain::Torus(_) => f(&y.iter().map(|v| reduce(*v)).collect::<Vec<_>>()),
            _ => f(&[y[0].clamp(0.0, 1.0)]),
        }
    };
    integrate_cube(&eval, state.dim)
}

fn integrate_cube<F: Fn(&[f64]) -> f64>(f: &F, dim: usize) -> Result<f64> {
    match dim {
        1 => quadrature::integrate_adaptive(|u| f(&[u]), 0.0, 1.0, COND_TOL),
        2 => {
            let mut failed = None;
            let v = quadrature::integrate_adaptive(
                |v| match quadrature::integrate_adaptive(|u| f(&[u, v]), 0.0, 1.0, COND_TOL) {
                    Ok(x) => x,
                    Err(e) => {
                        failed = Some(e);
                        0.0
                    }
                },
                0.0,
                1.0,
                COND_TOL,
            )?;
            match failed {
                Some(e) => Err(e),
                None => Ok(v),
            }
        }
        _ => Err(Error::Unsupported {
            op: "cond_exp quadrature",
            family: "torus with m > 2",
            hint: "; use cond_exp_mc",
        }),
    }
}

/// Clipped average `∫ φ_M(X(L u + b)) dλ(u)`.
pub fn window_average_clipped(process: &Process, state: &AffineState, m: f64) -> Result<f64> {
    check_affine(process, state)?;
    if !(m > 0.0) {
        return Err(Error::OutOfRange(format!(
            "truncation level {m} must be positive"
        )));
    }
    let shift = process.mean();
    let domain = process.domain();
    let clip = |x: f64| x.clamp(-m, m);
    if process.observable().sup_bound(shift, domain) <= m {
        return window_average(process, state);
    }
    match process.observable() {
        Observable::Piecewise(p) => scalar_average(
            state,
            domain,
            |y| clip(p.eval(y) - shift),
            |a, b| {
                Ok(split_pieces(p, a, b, |i, x, y| {
                    clipped_piece_average(p, i, x, y, shift, m)
                }))
            },
        ),
        Observable::Builtin { function } => scalar_average(
            state,
            domain,
            |y| clip(function.eval(y) - shift),
            |a, b| {
                quadrature::integrate_adaptive(
                    |y| clip(function.eval(y) - shift),
                    a,
                    b,
                    COND_TOL * (b - a),
                )
            },
        ),
        Observable::Trig(t) => callable_average(state, domain, |y| clip(t.eval(y) - shift)),
        Observable::Lipschitz(l) => callable_average(state, domain, |y| clip((l.f)(y) - shift)),
    }
}

/// Average over `[lo, hi]` of `φ_M(q - shift)` for polynomial piece `i`:
/// split at the crossings of `±M`, then integrate exactly.
fn clipped_piece_average(
    p: &PiecewisePolynomial,
    i: usize,
    lo: f64,
    hi: f64,
    shift: f64,
    m: f64,
) -> f64 {
    let f = |x: f64| p.eval_piece(i, x) - shift;
    let mut cuts = vec![lo];
    let grid = 32 * (p.degree(i) + 1);
    for level in [m, -m] {
        let g = |x: f64| f(x) - level;
        let mut xa = lo;
        let mut ga = g(xa);
        for s in 1..=grid {
            let xb = lo + (hi - lo) * s as f64 / grid as f64;
            let gb = g(xb);
            if ga == 0.0 {
                cuts.push(xa);
            } else if ga * gb < 0.0 {
                let (mut a, mut b) = (xa, xb);
                let sa = ga.signum();
                for _ in 0..100 {
                    let c = 0.5 * (a + b);
                    if g(c).signum() == sa {
                        a = c;
                    } else {
                        b = c;
                    }
                    if b - a <= f64::EPSILON * (1.0 + a.abs()) {
                        break;
                    }
                }
                cuts.push(0.5 * (a + b));
            }
            xa = xb;
            ga = gb;
        }
    }
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    let rule = small_rule(p.degree(i) / 2 + 1);
    let mut acc = crate::stats::CompensatedSum::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let mid = 0.5 * (a + b);
        let v = f(mid);
        let avg = if v > m {
            m
        } else if v < -m {
            -m
        } else {
            let half = 0.5 * (b - a);
            0.5 * rule
                .nodes()
                .iter()
                .zip(rule.weights())
                .map(|(x, wt)| wt * f(mid + half * x).clamp(-m, m))
                .sum::<f64>()
        };
        acc.add((b - a) * avg);
    }
    acc.value() / (hi - lo)
}

fn window_symbols(window: &ConditioningWindow) -> Result<&[usize]> {
    window.noise.symbols().ok_or(Error::InnovationKind)
}

/// `E(X_j | window)` exactly.
pub fn cond_exp(process: &Process, window: &ConditioningWindow) -> Result<f64> {
    window.validate()?;
    if let Some(w0) = &window.initial {
        let path = process.simulate_values(w0, &window.noise)?;
        return Ok(path.last().copied().unwrap_or_else(|| process.value(w0)));
    }
    if let Family::Linear(l) = process.family() {
        return linear_cond_exp(process, l, window);
    }
    let syms = window_symbols(window)?;
    let state = process.family().affine_propagation(syms)?;
    window_average(process, &state)
}

fn linear_cond_exp(
    process: &Process,
    l: &crate::family::Linear,
    window: &ConditioningWindow,
) -> Result<f64> {
    if !matches!(
        process.observable(),
        Observable::Builtin {
            function: Builtin::Identity
        }
    ) {
        return Err(Error::Unsupported {
            op: "cond_exp",
            family: "linear (non-identity observable)",
            hint: "; use cond_exp_mc",
        });
    }
    let e = window.noise.reals().ok_or(Error::InnovationKind)?;
    let mu = l.noise().mean();
    let mut acc = crate::stats::CompensatedSum::new();
    for (i, a) in l.coefficients().iter().enumerate() {
        // innovation ε_{j-i} is known iff j - i >= start
        if i < e.len() {
            acc.add(a * e[e.len() - 1 - i]);
        } else {
            acc.add(a * mu);
        }
    }
    Ok(acc.value() - process.mean())
}

/// `E(φ_M(X_j) | window)` exactly.
pub fn cond_exp_truncated(process: &Process, m: f64, window: &ConditioningWindow) -> Result<f64> {
    window.validate()?;
    if !(m > 0.0) {
        return Err(Error::OutOfRange(format!(
            "truncation level {m} must be positive"
        )));
    }
    if let Some(w0) = &window.initial {
        let path = process.simulate_values(w0, &window.noise)?;
        let x = path.last().copied().unwrap_or_else(|| process.value(w0));
        return Ok(x.clamp(-m, m));
    }
    let syms = window_symbols(window)?;
    let state = process.family().affine_propagation(syms)?;
    window_average_clipped(process, &state, m)
}

/// Monte Carlo `E(X_j | window)`: the window is held fixed and the state
/// before it is redrawn from the stationary law (for linear families, the
/// innovations older than the window).
pub fn cond_exp_mc(
    process: &Process,
    window: &ConditioningWindow,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    cond_exp_mc_with(process, window, budget, seed, |x| x)
}

/// Monte Carlo `E(φ_M(X_j) | window)`.
pub fn cond_exp_truncated_mc(
    process: &Process,
    m: f64,
    window: &ConditioningWindow,
    budget: usize,
    seed: u64,
) -> Result<Estimate> {
    cond_exp_mc_with(process, window, budget, seed, |x| x.clamp(-m, m))
}

fn cond_exp_mc_with<G: Fn(f64) -> f64 + Sync>(
    process: &Process,
    window: &ConditioningWindow,
    budget: usize,
    seed: u64,
    g: G,
) -> Result<Estimate> {
    window.validate()?;
    if budget < MIN_BUDGET {
        return Err(Error::BudgetTooSmall {
            budget,
            minimum: MIN_BUDGET,
        });
    }
    if let Some(w0) = &window.initial {
        let path = process.simulate_values(w0, &window.noise)?;
        return Ok(Estimate::exact(g(path
            .last()
            .copied()
            .unwrap_or_else(|| process.value(w0)))));
    }
    if let Some(c) = constant_value(process) {
        return Ok(Estimate::exact(g(c - process.mean())));
    }
    let family = process.family();
    let dom = SeedDomain::new(seed).derive(tag("cond_exp_mc"));
    let samples: Vec<Result<f64>> = par::map_streams(dom, budget, |_, rng| {
        let mut w = match family {
            Family::Linear(l) => {
                // innovations older than the window are resampled
                (0..=l.depth()).map(|_| l.noise().sample(rng)).collect()
            }
            _ => family.sample_stationary(rng),
        };
        for i in 0..window.noise.len() {
            family.step(&mut w, window.noise.get(i), window.start + i)?;
        }
        Ok(g(process.value(&w)))
    });
    let samples: Vec<f64> = samples.into_iter().collect::<Result<_>>()?;
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("conditional expectation sample".into()));
    }
    Ok(batch_means(&samples))
}

/// The value of a constant observable.
fn constant_value(process: &Process) -> Option<f64> {
    let m = process
        .observable()
        .lebesgue_mean(process.domain())
        .ok()
        .flatten()?;
    (process.observable().sup_bound(m, process.domain()) == 0.0).then_some(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::PiecewiseAffine;
    use crate::process::symbols;

    fn doubling_cos() -> Process {
        Process::centered(Family::doubling(), Observable::cosine(), 0).unwrap()
    }

    fn riemann<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
        (0..n).map(|i| f((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64
    }

    #[test]
    fn single_symbol_windows() {
        let p = doubling_cos();
        for s in 0..2 {
            let w = ConditioningWindow::new(5, 5, symbols(&[s])).unwrap();
            let v = cond_exp(&p, &w).unwrap();
            let oracle = riemann(|u| (2.0 * PI * (u + s as f64) / 2.0).cos(), 1_000_000);
            assert!((v - oracle).abs() < 1e-9, "{v} vs {oracle}");
        }
        let w = ConditioningWindow::new(4, 5, symbols(&[0, 1])).unwrap();
        let v = cond_exp(&p, &w).unwrap();
        assert!((v + 2.0 / PI).abs() < 1e-12);
    }

    #[test]
    fn constant_observable_centered_is_zero() {
        let obs = Observable::Trig(TrigPolynomial::new(vec![], 3.0));
        let p = Process::centered(Family::doubling(), obs, 0).unwrap();
        let w = ConditioningWindow::new(1, 2, symbols(&[1, 0])).unwrap();
        assert_eq!(cond_exp(&p, &w).unwrap(), 0.0);
        let mc = cond_exp_mc(&p, &w, 1000, 1).unwrap();
        assert_eq!((mc.mean, mc.ci95), (0.0, 0.0));
    }

    #[test]
    fn full_window_is_measurable() {
        let p = doubling_cos();
        let noise = symbols(&[1, 0, 1, 1]);
        let w = ConditioningWindow::full(vec![0.3], noise.clone()).unwrap();
        let path = p.simulate_chain(&[0.3], &noise).unwrap();
        assert_eq!(cond_exp(&p, &w).unwrap(), *path.values.last().unwrap());
        let mc = cond_exp_mc(&p, &w, 1000, 3).unwrap();
        assert_eq!(mc.ci95, 0.0);
    }

    #[test]
    fn empty_window_centered() {
        let p = doubling_cos();
        let w = ConditioningWindow::new(3, 2, symbols(&[])).unwrap();
        assert!(cond_exp(&p, &w).unwrap().abs() < 1e-15);
    }

    #[test]
    fn tower_property_on_affine_family() {
        let fam = Family::PiecewiseAffine(
            PiecewiseAffine::new(vec![0.5, -0.25, 0.25], vec![0.0, 0.75, 0.75]).unwrap(),
        );
        let obs = Observable::Piecewise(
            PiecewisePolynomial::new(vec![0.0, 0.3, 1.0], vec![vec![0.0, 2.0], vec![0.6, -0.5]])
                .unwrap(),
        );
        let p = Process::centered(fam, obs, 0).unwrap();
        let probs = [0.5, 0.25, 0.25];
        let inner = [2usize, 0, 1];
        let small = cond_exp(&p, &ConditioningWindow::new(4, 6, symbols(&inner)).unwrap()).unwrap();
        let mut big = 0.0;
        for (s, q) in probs.iter().enumerate() {
            let mut win = vec![s];
            win.extend_from_slice(&inner);
            big +=
                q * cond_exp(&p, &ConditioningWindow::new(3, 6, symbols(&win)).unwrap()).unwrap();
        }
        assert!((small - big).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_exact() {
        let p = doubling_cos();
        let w = ConditioningWindow::new(2, 3, symbols(&[0, 1])).unwrap();
        let exact = cond_exp(&p, &w).unwrap();
        let mc = cond_exp_mc(&p, &w, 20_000, 7).unwrap();
        assert!((mc.mean - exact).abs() <= 4.0 * mc.se + 1e-12);
        assert!(matches!(
            cond_exp_mc(&p, &w, 999, 7),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn truncated_limits() {
        let p = doubling_cos();
        let w = ConditioningWindow::new(2, 3, symbols(&[0, 1])).unwrap();
        let plain = cond_exp(&p, &w).unwrap();
        assert_eq!(cond_exp_truncated(&p, 1.0, &w).unwrap(), plain);
        let tiny = cond_exp_truncated(&p, 1e-8, &w).unwrap();
        assert!(tiny.abs() <= 1e-8);
        let empty = ConditioningWindow::new(1, 0, symbols(&[])).unwrap();
        assert!(cond_exp_truncated(&p, 0.5, &empty).unwrap().abs() < 1e-10);
    }

    #[test]
    fn clipped_piecewise_matches_quadrature() {
        let obs = Observable::Piecewise(PiecewisePolynomial::polynomial(vec![
            0.0, 0.0, 0.0, 0.0, 10.0,
        ]));
        let p = Process::centered(Family::doubling(), obs, 0).unwrap();
        let w = ConditioningWindow::new(1, 1, symbols(&[1])).unwrap();
        let exact = cond_exp_truncated(&p, 2.0, &w).unwrap();
        let oracle = riemann(
            |u| {
                let y = (u + 1.0) / 2.0;
                (10.0 * y.powi(4) - 2.0).clamp(-2.0, 2.0)
            },
            1_000_000,
        );
        assert!((exact - oracle).abs() < 1e-9, "{exact} vs {oracle}");
    }

    #[test]
    fn unsupported_families_point_to_monte_carlo() {
        let fam = Family::Torus(
            crate::family::Torus::new(vec![vec![2]], Some(vec![vec![0], vec![3]])).unwrap(),
        );
        let p = Process::new(fam, Observable::cosine()).unwrap();
        let w = ConditioningWindow::new(1, 1, symbols(&[1])).unwrap();
        assert!(matches!(cond_exp(&p, &w), Err(Error::Unsupported { .. })));
    }
}
