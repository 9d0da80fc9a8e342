//! Couplings, Monte Carlo coefficient estimates and analytic bounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::family::{Family, Linear};
use crate::modulus::{self, ModulusValue};
use crate::observable::{reduce, Domain, Observable};
use crate::par;
use crate::process::Process;
use crate::quadrature;
use crate::rng::{tag, SeedDomain, Stream};
use crate::stats::{batch_means, linear_fit, lp_norm_from_powers, Estimate, NormEstimate};

/// Minimum number of coupled pairs per estimate.
pub const MIN_PAIRS: usize = 1000;

/// Which coupling coefficient is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKind {
    /// `‖X_n - X̃_n‖_p` with only `ε_0` replaced.
    Wu,
    /// `‖X_n - X_n^*‖_p` with the whole past replaced.
    Star,
    /// Upper estimate `2 ‖X_n - X_n^*‖_p` of `sup_{k>=n} ‖X_k - X_k^*‖_p`.
    MarkovDeltaPrime,
    /// `sup_{x,y} E|X_{n,x} - X_{n,y}|` over sampled pairs of starts.
    SupDeltaInf,
}

impl CouplingKind {
    pub fn label(&self) -> &'static str {
        match self {
            CouplingKind::Wu => "wu",
            CouplingKind::Star => "star",
            CouplingKind::MarkovDeltaPrime => "markov_delta_prime",
            CouplingKind::SupDeltaInf => "sup_delta_inf",
        }
    }
}

/// An analytic bound together with its name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticBound {
    pub value: f64,
    pub name: String,
}

impl AnalyticBound {
    fn new(value: f64, name: &str) -> Self {
        Self {
            value,
            name: name.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientEstimate {
    pub kind: CouplingKind,
    pub n: usize,
    pub p: f64,
    pub estimate: f64,
    pub ci95: f64,
    pub se: f64,
    pub samples: usize,
    /// `false` for sampled suprema, which only bound from below.
    pub upper_estimate: bool,
    pub analytic_bound: Option<AnalyticBound>,
    pub seed: u64,
}

impl CoefficientEstimate {
    pub const CSV_HEADER: &'static str =
        "kind,n,p,estimate,ci,analytic_bound,bound_name,samples,seed";

    pub fn csv_row(&self) -> String {
        let (b, name) = match &self.analytic_bound {
            Some(a) => (format!("{:.16e}", a.value), a.name.clone()),
            None => (String::new(), String::new()),
        };
        format!(
            "{},{},{:.16e},{:.16e},{:.16e},{},{},{},{}",
            self.kind.label(),
            self.n,
            self.p,
            self.estimate,
            self.ci95,
            b,
            name,
            self.samples,
            self.seed
        )
    }
}

/// `β(u) = coef * u^exponent`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerModulus {
    pub coef: f64,
    pub exponent: f64,
}

impl PowerModulus {
    pub fn eval(&self, u: f64) -> f64 {
        self.coef * u.powf(self.exponent)
    }
}

/// Inputs of the contraction bound `δ'_p(n) <= C(β(ω_1^n) + ω_2^n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum IrfBoundSpec {
    Explicit {
        beta: PowerModulus,
        omega1: f64,
        omega2: f64,
        c: f64,
    },
    /// Raw hypotheses; `(ω_1, ω_2)` follow from balancing the two error terms.
    Raw {
        alpha: f64,
        rho: f64,
        /// Decay rate of the stationary contraction integral.
        rho_alpha: f64,
        c_alpha: f64,
        s: f64,
        t: f64,
        p: f64,
        beta: PowerModulus,
        /// `∫ η^p dμ`.
        eta_p: f64,
        /// `∫ η̃^p dμ`.
        eta_tilde_p: f64,
        /// `∫ χ^{pt} dν`.
        chi_pt: f64,
        /// `∫ χ^α dν`.
        chi_alpha: f64,
    },
}

/// Evaluated contraction bound with every derived constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrfBound {
    pub n: usize,
    pub value: f64,
    pub omega1: f64,
    pub omega2: f64,
    /// Coefficients of `β(ω_1^·)` and `ω_2^·`.
    pub c1: f64,
    pub c2: f64,
    /// Exponent shift: the bound uses `n - shift`.
    pub shift: usize,
    /// Balancing parameter (raw form only).
    pub epsilon: Option<f64>,
}

/// `C(β(ω_1^n) + ω_2^n)`, or the raw-parameter form
/// `c_1 β(ω_1^{n-1}) + c_2 ω_2^{n-1}` with `ε` at the midpoint of its range.
pub fn bound_irf(spec: &IrfBoundSpec, n: usize) -> Result<IrfBound> {
    match spec {
        IrfBoundSpec::Explicit {
            beta,
            omega1,
            omega2,
            c,
        } => {
            for (name, w) in [("ω_1", omega1), ("ω_2", omega2)] {
                if !(*w > 0.0 && *w < 1.0) {
                    return Err(Error::OutOfRange(format!(
                        "{name} = {w} must lie in (0, 1)"
                    )));
                }
            }
            let value = c * (beta.eval(omega1.powi(n as i32)) + omega2.powi(n as i32));
            Ok(IrfBound {
                n,
                value,
                omega1: *omega1,
                omega2: *omega2,
                c1: *c,
                c2: *c,
                shift: 0,
                epsilon: None,
            })
        }
        IrfBoundSpec::Raw {
            alpha,
            rho,
            rho_alpha,
            c_alpha,
            s,
            t,
            p,
            beta,
            eta_p,
            eta_tilde_p,
            chi_pt,
            chi_alpha,
        } => {
            let (alpha, p) = (*alpha, *p);
            if !(*s >= 0.0 && *s < alpha / p) {
                return Err(Error::Hypothesis(format!(
                    "s = {s} must satisfy 0 <= s < α/p = {}",
                    alpha / p
                )));
            }
            if !(*t >= 0.0 && *t <= alpha / p) {
                return Err(Error::Hypothesis(format!(
                    "t = {t} must satisfy 0 <= t <= α/p = {}",
                    alpha / p
                )));
            }
            if !(*rho > 0.0
                && *rho < 1.0
                && *rho_alpha > 0.0
                && *rho_alpha < 1.0
                && alpha >= 1.0
                && p >= 1.0)
            {
                return Err(Error::Hypothesis(
                    "need 0 < ρ, ρ(α) < 1, α >= 1, p >= 1".into(),
                ));
            }
            let eps_max = rho_alpha.ln() / (alpha * rho.ln());
            let epsilon = 0.5 * eps_max;
            let omega1 = rho.powf(epsilon);
            let omega2 = (rho_alpha.powf(1.0 / alpha) / omega1).powf((alpha - s * p) / p);
            let c1 = (eta_tilde_p * chi_pt).powf(1.0 / p);
            let c2 = (2f64.powf(p)
                * eta_p
                * chi_alpha.powf(s * p / alpha)
                * c_alpha.powf(1.0 - s * p / alpha))
            .powf(1.0 / p);
            let k = n.saturating_sub(1) as i32;
            let value = c1 * beta.eval(omega1.powi(k)) + c2 * omega2.powi(k);
            Ok(IrfBound {
                n,
                value,
                omega1,
                omega2,
                c1,
                c2,
                shift: 1,
                epsilon: Some(epsilon),
            })
        }
    }
}

/// Bounds for a linear process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearBounds {
    /// `c(2 ‖ε‖_p |a_n|)`.
    pub wu: f64,
    /// `c(C ‖ε‖_p (Σ_{i>=n} a_i²)^{1/2})`, for `p >= 2`.
    pub star: Option<f64>,
    pub burkholder: f64,
}

/// Default constant of the square-function bound in the star estimate.
pub fn default_burkholder(p: f64) -> f64 {
    p - 1.0
}

fn linear_of(process: &Process) -> Result<&Linear> {
    match process.family() {
        Family::Linear(l) => Ok(l),
        f => Err(Error::Unsupported {
            op: "linear coupling",
            family: f.name(),
            hint: "",
        }),
    }
}

pub fn bound_linear(
    process: &Process,
    n: usize,
    p: f64,
    burkholder: Option<f64>,
) -> Result<LinearBounds> {
    let l = linear_of(process)?;
    let c = |u: f64| {
        process
            .line_modulus(u)
            .ok_or_else(|| Error::InvalidObservable("linear bounds need a concave modulus".into()))
    };
    let norm = l.noise().norm(p);
    let cb = burkholder.unwrap_or_else(|| default_burkholder(p));
    let wu = c(2.0 * norm * l.coefficient(n).abs())?;
    let star = if p >= 2.0 {
        Some(c(cb * norm * l.law().tail_sq(n).sqrt())?)
    } else {
        None
    };
    Ok(LinearBounds {
        wu,
        star,
        burkholder: cb,
    })
}

fn modulus_at(process: &Process, order: Option<f64>, delta: f64) -> Result<ModulusValue> {
    let obs = process.observable();
    let domain = process.domain();
    if let Observable::Trig(t) = obs {
        // closed forms saturate by themselves
        let inf = modulus::trig_omega_inf(t, delta);
        let v = match order {
            None => inf,
            Some(p) => modulus::interpolate_p(p, modulus::trig_omega_2(t, delta), inf),
        };
        return Ok(ModulusValue {
            value: v,
            certified: true,
            method: modulus::ModulusMethod::ClosedForm,
            error: 0.0,
        });
    }
    // on the circle or square, shifts of length 1 already reach every residue
    let d = if domain.dim() <= 3 {
        delta.min(1.0)
    } else {
        delta
    };
    if d > 1.0 {
        return Ok(ModulusValue {
            value: 2.0 * obs.sup_bound(process.mean(), domain),
            certified: true,
            method: modulus::ModulusMethod::ClosedForm,
            error: 0.0,
        });
    }
    match order {
        None => modulus::omega_inf(obs, domain, d),
        Some(p) => modulus::omega_p(obs, domain, p, d),
    }
}

/// `2^{m/p+1} ω_{p,h}(Δ(A^{-n}[0,1]^m))`.
pub fn bound_torus(process: &Process, n: usize, p: f64) -> Result<f64> {
    let Family::Torus(t) = process.family() else {
        return Err(Error::Unsupported {
            op: "bound_torus",
            family: process.family().name(),
            hint: "",
        });
    };
    let delta = modulus::cube_diameter(t.matrix(), n)?;
    let m = t.dim() as f64;
    Ok(2f64.powf(m / p + 1.0) * modulus_at(process, Some(p), delta)?.value)
}

/// `2 ω_{∞,h}(ᾱ^n)`.
pub fn bound_affine(process: &Process, n: usize) -> Result<f64> {
    let Family::PiecewiseAffine(pa) = process.family() else {
        return Err(Error::Unsupported {
            op: "bound_affine",
            family: process.family().name(),
            hint: "",
        });
    };
    Ok(2.0 * modulus_at(process, None, pa.alpha_bar().powi(n as i32))?.value)
}

/// Pathwise bound `sup |X_{n,x} - X_{n,y}|` for the affine families.
pub fn pathwise_bound(process: &Process, n: usize) -> Result<Option<f64>> {
    let contraction = match process.family() {
        Family::Torus(t) if t.is_wrap_free() => modulus::cube_diameter(t.matrix(), n)?,
        Family::PiecewiseAffine(pa) => pa.alpha_bar().powi(n as i32),
        _ => return Ok(None),
    };
    let v = modulus_at(process, None, contraction)?;
    Ok(v.certified.then_some(v.value))
}

/// Options for the analytic side of coefficient estimates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    #[serde(default)]
    pub burkholder: Option<f64>,
    #[serde(default)]
    pub irf: Option<IrfBoundSpec>,
}

/// Tightest available analytic bound on `δ'_p(n)` for `n >= 1`, and on
/// `‖X_1‖_p` for `n = 0`.
pub fn analytic_delta_prime(
    process: &Process,
    n: usize,
    p: f64,
    opts: &BoundOptions,
) -> Result<Option<AnalyticBound>> {
    if n == 0 {
        let s = process
            .observable()
            .sup_bound(process.mean(), process.domain());
        return Ok(s.is_finite().then(|| AnalyticBound::new(s, "sup_norm")));
    }
    let mut best: Option<AnalyticBound> = None;
    let mut offer = |v: f64, name: &str| {
        if v.is_finite() && best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(AnalyticBound::new(v, name));
        }
    };
    match process.family() {
        Family::Torus(t) => {
            if t.is_wrap_free() {
                offer(bound_torus(process, n, p)?, "torus_cube_diameter");
            }
        }
        Family::PiecewiseAffine(_) => offer(bound_affine(process, n)?, "affine_contraction"),
        Family::Linear(_) => {
            if let Some(s) = bound_linear(process, n, p, opts.burkholder)?.star {
                offer(s, "linear_square_function");
            }
        }
        Family::Irf(_) => {
            if let Some(spec) = &opts.irf {
                offer(bound_irf(spec, n)?.value, "irf_contraction");
            }
        }
    }
    if let Some(pw) = pathwise_bound(process, n)? {
        offer(pw, "pathwise_modulus");
    }
    Ok(best)
}

/// Star coupling: two chains from independent stationary starts sharing
/// `ε_1..ε_n`. Returns `(X_1..X_n, X*_1..X*_n)`.
pub fn star_pair<R: Rng + ?Sized>(
    process: &Process,
    n: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let fam = process.family();
    let mut w = fam.sample_stationary(rng);
    let mut ws = fam.sample_stationary(rng);
    let (mut x, mut xs) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 1..=n {
        let e = fam.sample_innovation(rng);
        fam.step(&mut w, e, i)?;
        fam.step(&mut ws, e, i)?;
        x.push(process.value(&w));
        xs.push(process.value(&ws));
    }
    Ok((x, xs))
}

/// Pair of paths under the star coupling, drawn from one seed.
pub fn simulate_star_pair(process: &Process, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    star_pair(process, n, &mut SeedDomain::new(seed).stream(0))
}

/// `X_n - X_n^*`, with `X_0` meaning `X_1 - X_1'` for independent copies
/// when `n = 0`.
fn star_difference(process: &Process, n: usize, rng: &mut Stream) -> Result<f64> {
    if let Family::Linear(l) = process.family() {
        let d = l.depth();
        let a = l.coefficients();
        let noise = l.noise();
        let mut shared = 0.0;
        for ai in a.iter().take(n.min(d + 1)) {
            shared += ai * noise.sample(rng);
        }
        let (mut past, mut past_star) = (0.0, 0.0);
        for ai in a.iter().skip(n) {
            past += ai * noise.sample(rng);
            past_star += ai * noise.sample(rng);
        }
        let g = |y: f64| process.observable().eval1(y, Domain::Line);
        return Ok(g(shared + past) - g(shared + past_star));
    }
    if n == 0 {
        let fam = process.family();
        let w = fam.sample_stationary(rng);
        let ws = fam.sample_stationary(rng);
        return Ok(process.value(&w) - process.value(&ws));
    }
    let (x, xs) = star_pair(process, n, rng)?;
    Ok(x[n - 1] - xs[n - 1])
}

/// Wu coupling for linear processes: paths `X_1..X_n` and `X̃_1..X̃_n`
/// sharing all innovations except `ε_0`.
pub fn simulate_wu_pair(process: &Process, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let l = linear_of(process)?;
    let d = l.depth();
    let mut rng = SeedDomain::new(seed).stream(0);
    // e[t + d] = ε_t for t in -d..=n
    let e: Vec<f64> = (0..=n + d).map(|_| l.noise().sample(&mut rng)).collect();
    let mut e_alt = e.clone();
    e_alt[d] = l.noise().sample(&mut rng);
    let path = |buf: &[f64]| -> Vec<f64> {
        (1..=n)
            .map(|k| {
                let y: f64 = (0..=d)
                    .filter(|i| k + d >= *i)
                    .map(|i| l.coefficients()[i] * buf[k + d - i])
                    .sum();
                process.observable().eval1(y, Domain::Line) - process.mean()
            })
            .collect()
    };
    Ok((path(&e), path(&e_alt)))
}

fn wu_difference(process: &Process, l: &Linear, n: usize, rng: &mut Stream) -> f64 {
    let noise = l.noise();
    let mut y = 0.0;
    for (i, ai) in l.coefficients().iter().enumerate() {
        if i != n {
            y += ai * noise.sample(rng);
        }
    }
    let an = l.coefficients().get(n).copied().unwrap_or(0.0);
    let (e0, e1) = (noise.sample(rng), noise.sample(rng));
    let g = |v: f64| process.observable().eval1(v, Domain::Line);
    g(y + an * e0) - g(y + an * e1)
}

/// Coupled differences at lag `n` for `budget` pairs.
pub fn coupled_differences(
    process: &Process,
    kind: CouplingKind,
    n: usize,
    budget: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if budget < MIN_PAIRS {
        return Err(Error::BudgetTooSmall {
            budget,
            minimum: MIN_PAIRS,
        });
    }
    let dom = SeedDomain::new(seed).derive(tag(&format!("coupling/{}/{n}", kind.label())));
    let out: Vec<Result<f64>> = match kind {
        CouplingKind::Wu => {
            let l = linear_of(process)?;
            par::map_streams(dom, budget, |_, rng| Ok(wu_difference(process, l, n, rng)))
        }
        CouplingKind::Star | CouplingKind::MarkovDeltaPrime => {
            par::map_streams(dom, budget, |_, rng| star_difference(process, n, rng))
        }
        CouplingKind::SupDeltaInf => {
            return Err(Error::OutOfRange(
                "sup coefficient has no pairwise differences".into(),
            ))
        }
    };
    let diffs: Vec<f64> = out.into_iter().collect::<Result<_>>()?;
    if let Some(i) = diffs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "coupled difference at pair {i}, lag {n}"
        )));
    }
    Ok(diffs)
}

/// `‖X_1‖_p` under the stationary law: quadrature on one- and
/// two-dimensional Lebesgue domains, Monte Carlo otherwise.
pub fn stationary_norm(process: &Process, p: f64, seed: u64) -> Result<NormEstimate> {
    let exact = |v: f64| NormEstimate {
        value: v.max(0.0).powf(1.0 / p),
        ci95: 0.0,
        se: 0.0,
        samples: 0,
    };
    let shift = process.mean();
    let obs = process.observable();
    let fam = process.family();
    let f1 = |x: f64| (process.value(&[x])).abs().powf(p);
    match (fam, process.domain(), obs) {
        (Family::Torus(_) | Family::PiecewiseAffine(_), Domain::Torus(1) | Domain::Interval, _) => {
            let mut breaks: Vec<f64> = match obs {
                Observable::Piecewise(pp) => pp.breakpoints.clone(),
                _ => (0..=16).map(|i| i as f64 / 16.0).collect(),
            };
            breaks.dedup();
            let v = quadrature::integrate_pieces(f1, &breaks, 1e-12)?;
            let _ = shift;
            return Ok(exact(v));
        }
        (Family::Torus(_), Domain::Torus(2), Observable::Trig(_)) => {
            let grid: Vec<f64> = (0..=8).map(|i| i as f64 / 8.0).collect();
            let inner = |y: f64| {
                quadrature::integrate_pieces(|x| process.value(&[x, y]).abs().powf(p), &grid, 1e-12)
                    .unwrap_or(f64::NAN)
            };
            let v = quadrature::integrate_pieces(inner, &grid, 1e-10)?;
            if v.is_finite() {
                return Ok(exact(v));
            }
        }
        _ => {}
    }
    let dom = SeedDomain::new(seed).derive(tag("stationary_norm"));
    let powers = par::map_streams(dom, crate::process::MEAN_MC_SAMPLES, |_, rng| {
        let w = fam.sample_stationary(rng);
        process.value(&w).abs().powf(p)
    });
    Ok(lp_norm_from_powers(&powers, p))
}

/// Monte Carlo estimate of a coupling coefficient with the tightest
/// applicable analytic bound attached.
pub fn estimate_coefficient(
    process: &Process,
    n: usize,
    p: f64,
    kind: CouplingKind,
    budget: usize,
    seed: u64,
    opts: &BoundOptions,
) -> Result<CoefficientEstimate> {
    if !(p >= 1.0) {
        return Err(Error::OutOfRange(format!("p = {p} must be at least 1")));
    }
    if budget < MIN_PAIRS {
        return Err(Error::BudgetTooSmall {
            budget,
            minimum: MIN_PAIRS,
        });
    }
    let base = CoefficientEstimate {
        kind,
        n,
        p,
        estimate: 0.0,
        ci95: 0.0,
        se: 0.0,
        samples: budget,
        upper_estimate: true,
        analytic_bound: None,
        seed,
    };
    match kind {
        CouplingKind::Wu => {
            let diffs = coupled_differences(process, kind, n, budget, seed)?;
            let est = norm_of(&diffs, p);
            let b = bound_linear(process, n, p, opts.burkholder)?;
            Ok(CoefficientEstimate {
                estimate: est.value,
                ci95: est.ci95,
                se: est.se,
                analytic_bound: Some(AnalyticBound::new(b.wu, "linear_single_coordinate")),
                ..base
            })
        }
        CouplingKind::Star => {
            let diffs = coupled_differences(process, kind, n, budget, seed)?;
            let est = norm_of(&diffs, p);
            let bound = match process.family() {
                Family::Linear(_) => bound_linear(process, n, p, opts.burkholder)?
                    .star
                    .map(|v| AnalyticBound::new(v, "linear_square_function")),
                _ if n >= 1 => {
                    pathwise_bound(process, n)?.map(|v| AnalyticBound::new(v, "pathwise_modulus"))
                }
                _ => None,
            };
            Ok(CoefficientEstimate {
                estimate: est.value,
                ci95: est.ci95,
                se: est.se,
                analytic_bound: bound,
                ..base
            })
        }
        CouplingKind::MarkovDeltaPrime => {
            let bound = analytic_delta_prime(process, n, p, opts)?;
            if n == 0 {
                let est = stationary_norm(process, p, seed)?;
                return Ok(CoefficientEstimate {
                    estimate: est.value,
                    ci95: est.ci95,
                    se: est.se,
                    samples: est.samples,
                    analytic_bound: bound,
                    ..base
                });
            }
            let diffs = coupled_differences(process, kind, n, budget, seed)?;
            let est = norm_of(&diffs, p);
            Ok(CoefficientEstimate {
                estimate: 2.0 * est.value,
                ci95: 2.0 * est.ci95,
                se: 2.0 * est.se,
                analytic_bound: bound,
                ..base
            })
        }
        CouplingKind::SupDeltaInf => {
            let est = sup_delta_inf(process, n, budget, seed)?;
            let bound = match process.family() {
                Family::PiecewiseAffine(_) => Some(AnalyticBound::new(
                    bound_affine(process, n)?,
                    "affine_contraction",
                )),
                _ => pathwise_bound(process, n)?.map(|v| AnalyticBound::new(v, "pathwise_modulus")),
            };
            Ok(CoefficientEstimate {
                estimate: est.mean,
                ci95: est.ci95,
                se: est.se,
                upper_estimate: false,
                analytic_bound: bound,
                ..base
            })
        }
    }
}

fn norm_of(diffs: &[f64], p: f64) -> NormEstimate {
    let powers: Vec<f64> = diffs.iter().map(|d| d.abs().powf(p)).collect();
    lp_norm_from_powers(&powers, p)
}

/// Number of start pairs examined by the sampled supremum.
const SUP_PAIRS: usize = 32;

/// Largest `E|X_{n,x} - X_{n,y}|` over sampled start pairs (a lower
/// estimate of the supremum); the interval endpoints are always included
/// for interval families.
fn sup_delta_inf(process: &Process, n: usize, budget: usize, seed: u64) -> Result<Estimate> {
    let fam = process.family();
    if matches!(fam, Family::Linear(_)) {
        return Err(Error::Unsupported {
            op: "sup_delta_inf",
            family: "linear",
            hint: "; the supremum is over Markov starting points",
        });
    }
    let dom = SeedDomain::new(seed).derive(tag(&format!("coupling/sup/{n}")));
    let per_pair = (budget / SUP_PAIRS).max(MIN_PAIRS / SUP_PAIRS);
    let estimates: Vec<Result<Estimate>> = par::map_indexed(SUP_PAIRS, |k| {
        let mut rng = dom.stream(k as u64);
        let (x, y) = if k == 0 && matches!(fam.domain(), Domain::Interval) {
            (vec![0.0], vec![1.0])
        } else {
            (
                fam.sample_stationary(&mut rng),
                fam.sample_stationary(&mut rng),
            )
        };
        let mut samples = Vec::with_capacity(per_pair);
        for _ in 0..per_pair {
            let (mut a, mut b) = (x.clone(), y.clone());
            for i in 1..=n {
                let e = fam.sample_innovation(&mut rng);
                fam.step(&mut a, e, i)?;
                fam.step(&mut b, e, i)?;
            }
            samples.push((process.value(&a) - process.value(&b)).abs());
        }
        Ok(batch_means(&samples))
    });
    let estimates: Vec<Estimate> = estimates.into_iter().collect::<Result<_>>()?;
    Ok(estimates
        .into_iter()
        .fold(None::<Estimate>, |acc, e| match acc {
            Some(a) if a.mean >= e.mean => Some(a),
            _ => Some(e),
        })
        .map(|e| Estimate {
            samples: per_pair * SUP_PAIRS,
            ..e
        })
        .expect("at least one pair"))
}

/// Decay of `E d(W_{n,x}, W_{n,y})^α` and its fitted rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionEstimate {
    pub alpha: f64,
    /// Index `i` holds lag `i + 1`.
    pub decay: Vec<Estimate>,
    pub rho_hat: f64,
    pub residual: f64,
    /// Set when the estimates do not decay.
    pub warning: bool,
}

fn state_distance(domain: Domain, a: &[f64], b: &[f64]) -> f64 {
    match domain {
        Domain::Torus(_) => a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let r = reduce(x - y);
                let d = r.min(1.0 - r);
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        _ => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
    }
}

/// Fits `ρ̂` from `log E d(W_{n,x}, W_{n,y})^α ≈ c + n log ρ̂` over pairs of
/// stationary starts driven by common noise.
pub fn estimate_contraction(
    process: &Process,
    alpha: f64,
    horizon: usize,
    budget: usize,
    seed: u64,
) -> Result<ContractionEstimate> {
    if !(alpha >= 1.0) {
        return Err(Error::OutOfRange(format!("α = {alpha} must be at least 1")));
    }
    if budget < MIN_PAIRS {
        return Err(Error::BudgetTooSmall {
            budget,
            minimum: MIN_PAIRS,
        });
    }
    if horizon < 2 {
        return Err(Error::OutOfRange("horizon must be at least 2".into()));
    }
    let fam = process.family();
    if matches!(fam, Family::Linear(_)) {
        return Err(Error::Unsupported {
            op: "estimate_contraction",
            family: "linear",
            hint: "",
        });
    }
    let domain = fam.domain();
    let dom = SeedDomain::new(seed).derive(tag("contraction"));
    let paths: Vec<Result<Vec<f64>>> = par::map_streams(dom, budget, |_, rng| {
        let mut a = fam.sample_stationary(rng);
        let mut b = fam.sample_stationary(rng);
        let mut out = Vec::with_capacity(horizon);
        for i in 1..=horizon {
            let e = fam.sample_innovation(rng);
            fam.step(&mut a, e, i)?;
            fam.step(&mut b, e, i)?;
            out.push(state_distance(domain, &a, &b).powf(alpha));
        }
        Ok(out)
    });
    let paths: Vec<Vec<f64>> = paths.into_iter().collect::<Result<_>>()?;
    let decay: Vec<Estimate> = (0..horizon)
        .map(|i| batch_means(&paths.iter().map(|p| p[i]).collect::<Vec<_>>()))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = decay
        .iter()
        .enumerate()
        .filter(|(_, e)| e.mean > 0.0)
        .map(|(i, e)| ((i + 1) as f64, e.mean.ln()))
        .unzip();
    let (rho_hat, residual) = match linear_fit(&xs, &ys) {
        Some((slope, _, rms)) => (slope.exp(), rms),
        None => (0.0, 0.0),
    };
    let warning = rho_hat >= 1.0 - 1e-9;
    Ok(ContractionEstimate {
        alpha,
        decay,
        rho_hat,
        residual,
        warning,
    })
}

/// One row of the single-coordinate versus star comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WuStarRow {
    pub n: usize,
    pub p: f64,
    pub wu: NormEstimate,
    pub star: NormEstimate,
    /// `3 sqrt(se_wu² + (2 se_star)²)`.
    pub slack: f64,
    pub holds: bool,
}

/// Checks `δ_p(n) <= 2 δ̃_p(n)` within three combined standard errors.
pub fn check_wu_vs_star(
    process: &Process,
    ns: &[usize],
    p: f64,
    budget: usize,
    seed: u64,
) -> Result<Vec<WuStarRow>> {
    linear_of(process)?;
    ns.iter()
        .map(|&n| {
            let wu = norm_of(
                &coupled_differences(process, CouplingKind::Wu, n, budget, seed)?,
                p,
            );
            let star = norm_of(
                &coupled_differences(process, CouplingKind::Star, n, budget, seed)?,
                p,
            );
            let slack = 3.0 * (wu.se * wu.se + 4.0 * star.se * star.se).sqrt();
            Ok(WuStarRow {
                n,
                p,
                wu,
                star,
                slack,
                holds: wu.value <= 2.0 * star.value + slack,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::{CoefficientSpec, ContractionParams, Irf, IrfMap, PiecewiseAffine};
    use crate::noise::NoiseSpec;
    use crate::observable::{Builtin, PiecewisePolynomial};

    fn linear(values: Option<Vec<f64>>, obs: Builtin) -> Process {
        let law = match values {
            Some(v) => CoefficientSpec::List { values: v },
            None => CoefficientSpec::Geometric {
                scale: 1.0,
                ratio: 0.5,
            },
        };
        let l = Linear::new(law, NoiseSpec::TwoPoint { scale: 1.0 }, None).unwrap();
        Process::centered(Family::Linear(l), Observable::builtin(obs), 0).unwrap()
    }

    #[test]
    fn irf_explicit_examples() {
        let b = bound_irf(
            &IrfBoundSpec::Explicit {
                beta: PowerModulus {
                    coef: 1.0,
                    exponent: 1.0,
                },
                omega1: 0.5,
                omega2: 0.5,
                c: 1.0,
            },
            4,
        )
        .unwrap();
        assert!((b.value - 0.125).abs() < 1e-15);
        let b = bound_irf(
            &IrfBoundSpec::Explicit {
                beta: PowerModulus {
                    coef: 1.0,
                    exponent: 0.5,
                },
                omega1: 0.25,
                omega2: 0.5,
                c: 3.0,
            },
            2,
        )
        .unwrap();
        assert!((b.value - 1.5).abs() < 1e-15);
    }

    #[test]
    fn irf_raw_hypotheses() {
        let raw = |s: f64, t: f64| IrfBoundSpec::Raw {
            alpha: 2.0,
            rho: 0.5,
            rho_alpha: 0.25,
            c_alpha: 1.0,
            s,
            t,
            p: 2.0,
            beta: PowerModulus {
                coef: 1.0,
                exponent: 1.0,
            },
            eta_p: 1.0,
            eta_tilde_p: 1.0,
            chi_pt: 1.0,
            chi_alpha: 1.0,
        };
        assert!(matches!(
            bound_irf(&raw(1.0, 0.0), 3),
            Err(Error::Hypothesis(_))
        ));
        assert!(matches!(
            bound_irf(&raw(0.0, 1.5), 3),
            Err(Error::Hypothesis(_))
        ));
        let b = bound_irf(&raw(0.5, 1.0), 3).unwrap();
        assert!(b.omega1 < 1.0 && b.omega2 < 1.0);
        // ε_max = ln(1/4) / (2 ln(1/2)) = 1
        assert!((b.epsilon.unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn linear_bound_examples() {
        let p = linear(None, Builtin::Identity);
        let b = bound_linear(&p, 3, 3.0, None).unwrap();
        assert!((b.wu - 0.25).abs() < 1e-15);
        assert!((b.star.unwrap() - 0.2887).abs() < 1e-4);
        assert!(bound_linear(&p, 3, 1.5, None).unwrap().star.is_none());
    }

    #[test]
    fn affine_bound_examples() {
        let fam =
            Family::PiecewiseAffine(PiecewiseAffine::new(vec![0.5, 0.5], vec![0.0, 0.5]).unwrap());
        let p = Process::new(fam.clone(), Observable::builtin(Builtin::Identity)).unwrap();
        assert!((bound_affine(&p, 3).unwrap() - 0.25).abs() < 1e-15);
        let c = Process::new(fam.clone(), Observable::cosine()).unwrap();
        assert!((bound_affine(&c, 2).unwrap() - 4.0 * (PI_4).sin()).abs() < 1e-12);
        let k = Process::new(
            fam,
            Observable::Piecewise(PiecewisePolynomial::polynomial(vec![2.0])),
        )
        .unwrap();
        assert_eq!(bound_affine(&k, 5).unwrap(), 0.0);
    }

    const PI_4: f64 = std::f64::consts::FRAC_PI_4;

    #[test]
    fn torus_bound_cosine() {
        let p = Process::new(Family::doubling(), Observable::cosine()).unwrap();
        for n in 1..6 {
            let b = bound_torus(&p, n, 2.0).unwrap();
            let expect = 4.0 * (std::f64::consts::PI * 0.5f64.powi(n as i32)).sin();
            assert!((b - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn wu_pair_shares_all_but_time_zero() {
        let p = linear(Some(vec![1.0]), Builtin::Identity);
        let (x, y) = simulate_wu_pair(&p, 5, 3).unwrap();
        assert_eq!(x, y);
        let q = linear(None, Builtin::Identity);
        let (x, y) = simulate_wu_pair(&q, 6, 3).unwrap();
        for n in 1..=6 {
            let d = (x[n - 1] - y[n - 1]).abs();
            // |ε_0 - ε_0'| ∈ {0, 2}
            assert!(d == 0.0 || (d - 2.0 * 0.5f64.powi(n as i32)).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_paths_give_zero() {
        let fam = Family::Irf(
            Irf::new(
                IrfMap::Affine { a: 0.5 },
                NoiseSpec::Gaussian { sd: 1.0 },
                0.0,
                ContractionParams {
                    c: 1.0,
                    rho: 0.5,
                    alpha: 1.0,
                },
            )
            .unwrap(),
        );
        let obs = Observable::Trig(crate::observable::TrigPolynomial::new(vec![], 1.0));
        let _ = obs;
        let p = Process::new(fam, Observable::builtin(Builtin::Identity)).unwrap();
        let c = estimate_contraction(&p, 1.0, 8, 2000, 1).unwrap();
        assert!((c.rho_hat - 0.5).abs() < 1e-9);
        assert!(!c.warning);
    }

    #[test]
    fn non_contracting_map_warns() {
        let fam = Family::Irf(
            Irf::new(
                IrfMap::Affine { a: 1.0 },
                NoiseSpec::Gaussian { sd: 1.0 },
                0.0,
                ContractionParams {
                    c: 1.0,
                    rho: 0.5,
                    alpha: 1.0,
                },
            )
            .unwrap(),
        );
        let p = Process::new(fam, Observable::builtin(Builtin::Identity)).unwrap();
        let c = estimate_contraction(&p, 1.0, 8, 1000, 1).unwrap();
        assert!(c.warning);
    }

    #[test]
    fn budget_guard() {
        let p = linear(None, Builtin::Identity);
        assert!(matches!(
            estimate_coefficient(
                &p,
                1,
                2.0,
                CouplingKind::Star,
                10,
                0,
                &BoundOptions::default()
            ),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn wu_unsupported_for_markov() {
        let p = Process::new(Family::doubling(), Observable::cosine()).unwrap();
        assert!(simulate_wu_pair(&p, 3, 0).is_err());
    }
}
