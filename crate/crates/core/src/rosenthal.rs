//! Dyadic block decomposition of partial sums and the maximal moment
//! inequality built on it.

use serde::{Deserialize, Serialize};

use crate::affine::AffineState;
use crate::condexp::{cond_exp, cond_exp_mc, window_average, ConditioningWindow};
use crate::coupling::{
    analytic_delta_prime, estimate_coefficient, stationary_norm, BoundOptions, CouplingKind,
};
use crate::error::{Error, Result};
use crate::family::{Family, NoisePath};
use crate::par;
use crate::process::Process;
use crate::rng::{tag, SeedDomain};
use crate::stats::{lp_norm_from_powers, NormEstimate};

/// Largest supported depth.
pub const MAX_DEPTH: usize = 12;
/// Slack for inequalities between exactly computed quantities.
pub const EXACT_SLACK: f64 = 1e-9;

/// How the conditional expectations of a decomposition were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Exact,
    MonteCarlo,
    Analytic,
}

/// Decomposition of one path of length `2^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDecomposition {
    pub values: Vec<f64>,
    /// `S_1..S_{2^d}`.
    pub partial_sums: Vec<f64>,
    /// `u[k][ℓ-1] = U_{k,ℓ}`.
    pub u: Vec<Vec<f64>>,
    /// `t[k][ℓ-1] = T_{k,ℓ}`.
    pub t: Vec<Vec<f64>>,
    /// Sum of the 95% half-widths of all Monte Carlo conditional expectations.
    pub ce_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicDecomposition {
    pub depth: usize,
    pub provenance: Provenance,
    pub paths: Vec<PathDecomposition>,
}

/// Monte Carlo budget per conditional expectation, used only when no
/// exact evaluation exists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecompositionOptions {
    pub mc_budget: Option<usize>,
}

enum Engine {
    Affine(Vec<AffineState>),
    Window,
}

fn engine(process: &Process) -> Result<Engine> {
    let fam = process.family();
    match fam {
        Family::Torus(t) if t.is_wrap_free() => {}
        Family::PiecewiseAffine(_) => {}
        _ => return Ok(Engine::Window),
    }
    let steps = (0..fam.alphabet_size().unwrap_or(0))
        .map(|s| fam.affine_step(s))
        .collect::<Result<Vec<_>>>()?;
    // probe the observable once so unsupported combinations fall back
    match window_average(process, &AffineState::identity(fam.state_len())) {
        Ok(_) => Ok(Engine::Affine(steps)),
        Err(Error::Unsupported { .. }) => Ok(Engine::Window),
        Err(e) => Err(e),
    }
}

/// `ce[k][j-1] = E(X_j | η_s, .., η_j)` with `s` the start of the level-`k`
/// block holding `j`.
fn conditional_table(
    process: &Process,
    engine: &Engine,
    noise: &NoisePath,
    d: usize,
    opts: &DecompositionOptions,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, f64, bool)> {
    let n = 1usize << d;
    let mut table = vec![vec![0.0; n]; d + 1];
    let mut err = 0.0;
    let mut used_mc = false;
    for (k, row) in table.iter_mut().enumerate() {
        let b = 1usize << k;
        for start in (1..=n).step_by(b) {
            let mut state = AffineState::identity(process.family().state_len());
            for j in start..start + b {
                row[j - 1] = match engine {
                    Engine::Affine(steps) => {
                        let s = noise.symbols().ok_or(Error::InnovationKind)?[j - 1];
                        let st = &steps[s];
                        if st.dim == 1 {
                            state.push_scalar(st.lin[0], st.off[0]);
                        } else {
                            state.push(&st.lin, &st.off);
                        }
                        window_average(process, &state)?
                    }
                    Engine::Window => {
                        let w = ConditioningWindow::new(start, j, noise.slice(start - 1..j))?;
                        match (cond_exp(process, &w), opts.mc_budget) {
                            (Ok(v), _) => v,
                            (Err(Error::Unsupported { .. }), Some(budget)) => {
                                used_mc = true;
                                let sub = SeedDomain::new(seed)
                                    .derive(tag(&format!("ce/{k}/{j}")))
                                    .master();
                                let e = cond_exp_mc(process, &w, budget, sub)?;
                                err += e.ci95;
                                e.mean
                            }
                            (Err(e), _) => return Err(e),
                        }
                    }
                };
            }
        }
    }
    Ok((table, err, used_mc))
}

fn decompose(values: &[f64], ce: &[Vec<f64>], d: usize, ce_error: f64) -> PathDecomposition {
    let n = 1usize << d;
    let mut u = Vec::with_capacity(d + 1);
    let mut t = Vec::with_capacity(d + 1);
    for k in 0..=d {
        let b = 1usize << k;
        let blocks = n / b;
        let mut uk = Vec::with_capacity(blocks);
        let mut tk = Vec::with_capacity(blocks);
        for l in 0..blocks {
            let range = l * b..(l + 1) * b;
            uk.push(range.clone().map(|j| values[j] - ce[k][j]).sum());
            tk.push(if k == 0 {
                ce[0][l]
            } else {
                range.map(|j| ce[k][j] - ce[k - 1][j]).sum()
            });
        }
        u.push(uk);
        t.push(tk);
    }
    let mut acc = 0.0;
    let partial_sums = values
        .iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect();
    PathDecomposition {
        values: values.to_vec(),
        partial_sums,
        u,
        t,
        ce_error,
    }
}

/// Builds `paths` independent decompositions of depth `d` from stationary
/// starts. `η_0` is the initial state and `η_j = ε_j`.
pub fn build_decomposition(
    process: &Process,
    d: usize,
    paths: usize,
    seed: u64,
    opts: &DecompositionOptions,
) -> Result<DyadicDecomposition> {
    if d > MAX_DEPTH {
        return Err(Error::ResourceGuard(format!(
            "depth {d} exceeds {MAX_DEPTH}"
        )));
    }
    if !process.is_centered() {
        return Err(Error::NotCentered {
            mean: process.mean(),
        });
    }
    let engine = engine(process)?;
    let n = 1usize << d;
    let dom = SeedDomain::new(seed).derive(tag("rosenthal/paths"));
    let fam = process.family();
    let built: Vec<Result<(PathDecomposition, bool)>> = par::map_streams(dom, paths, |i, rng| {
        let w0 = fam.sample_stationary(rng);
        let noise = fam.sample_noise(n, rng);
        let values = process.simulate_values(&w0, &noise)?;
        let sub = dom.derive(i as u64).master();
        let (ce, err, mc) = conditional_table(process, &engine, &noise, d, opts, sub)?;
        Ok((decompose(&values, &ce, d, err), mc))
    });
    let mut out = Vec::with_capacity(paths);
    let mut any_mc = false;
    for b in built {
        let (p, mc) = b?;
        any_mc |= mc;
        out.push(p);
    }
    Ok(DyadicDecomposition {
        depth: d,
        provenance: if any_mc {
            Provenance::MonteCarlo
        } else {
            Provenance::Exact
        },
        paths: out,
    })
}

fn max_abs_prefix(xs: &[f64]) -> f64 {
    let mut acc = 0.0f64;
    let mut best = 0.0f64;
    for x in xs {
        acc += x;
        best = best.max(acc.abs());
    }
    best
}

impl PathDecomposition {
    pub fn max_partial_sum(&self) -> f64 {
        self.partial_sums.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Right side of the pointwise maximal inequality.
    pub fn pointwise_rhs(&self) -> f64 {
        let us: f64 = self
            .u
            .iter()
            .map(|uk| uk.iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .sum();
        let ts: f64 = self.t.iter().map(|tk| max_abs_prefix(tk)).sum();
        us + ts
    }

    /// `S_{2^d} - (U_{d,1} + Σ_k Σ_ℓ T_{k,ℓ})`.
    pub fn telescoping_defect(&self) -> f64 {
        let d = self.u.len() - 1;
        let total: f64 = self.t.iter().flatten().sum();
        self.partial_sums.last().copied().unwrap_or(0.0) - (self.u[d][0] + total)
    }
}

/// Per-path outcome of the pointwise checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathVerdict {
    pub path_id: usize,
    pub margin_pointwise: f64,
    pub margin_telescoping: f64,
    pub slack: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseReport {
    pub verdicts: Vec<PathVerdict>,
    pub min_margin: f64,
    pub failures: Vec<usize>,
}

impl PointwiseReport {
    pub fn all_hold(&self) -> bool {
        self.failures.is_empty()
    }
}

fn slack_for(p: &PathDecomposition) -> f64 {
    EXACT_SLACK + 6.0 * p.ce_error
}

fn report(
    dec: &DyadicDecomposition,
    margin: impl Fn(&PathDecomposition) -> f64,
    pointwise: bool,
) -> PointwiseReport {
    let verdicts: Vec<PathVerdict> = dec
        .paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let m = margin(p);
            let slack = slack_for(p);
            let tele = p.telescoping_defect().abs();
            PathVerdict {
                path_id: i,
                margin_pointwise: p.pointwise_rhs() - p.max_partial_sum(),
                margin_telescoping: tele,
                slack,
                holds: if pointwise { m >= -slack } else { m <= slack },
            }
        })
        .collect();
    let min_margin = dec.paths.iter().map(&margin).fold(f64::INFINITY, f64::min);
    let failures = verdicts
        .iter()
        .filter(|v| !v.holds)
        .map(|v| v.path_id)
        .collect();
    PointwiseReport {
        verdicts,
        min_margin,
        failures,
    }
}

/// Checks `max_n |S_n| <= Σ_k max_ℓ |U_{k,ℓ}| + Σ_k max_m |Σ_{ℓ<=m} T_{k,ℓ}|`
/// on every path.
pub fn verify_pointwise(dec: &DyadicDecomposition) -> PointwiseReport {
    report(dec, |p| p.pointwise_rhs() - p.max_partial_sum(), true)
}

/// Checks `S_{2^d} = U_{d,1} + Σ_k Σ_ℓ T_{k,ℓ}` on every path; `min_margin`
/// holds the largest absolute defect.
pub fn verify_telescoping(dec: &DyadicDecomposition) -> PointwiseReport {
    let mut r = report(dec, |p| p.telescoping_defect().abs(), false);
    r.min_margin = dec
        .paths
        .iter()
        .map(|p| p.telescoping_defect().abs())
        .fold(0.0, f64::max);
    r
}

/// Upper bounds on `δ*_p(n)` for `n = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaStarTable {
    pub p: f64,
    pub values: Vec<f64>,
    pub provenance: Vec<Provenance>,
    /// Bound names, or the coupling kind for estimates.
    pub sources: Vec<String>,
}

impl DeltaStarTable {
    pub fn get(&self, n: usize) -> Result<f64> {
        self.values.get(n).copied().ok_or_else(|| {
            Error::MissingEntry(format!(
                "δ*_{}({n}) beyond table of length {}",
                self.p,
                self.values.len()
            ))
        })
    }

    /// Table with every entry replaced by `max(self, other)`.
    pub fn pointwise_max(&self, other: &DeltaStarTable) -> DeltaStarTable {
        let mut t = self.clone();
        for (a, b) in t.values.iter_mut().zip(&other.values) {
            *a = a.max(*b);
        }
        t
    }
}

/// `δ*_p(0) = ‖X_1‖_p`, and `δ*_p(n) = sup_{k>=n} ‖X_k - X_k^*‖_p` for a
/// stationary Markov chain; entries are the analytic bounds.
pub fn analytic_delta_star(
    process: &Process,
    n_max: usize,
    p: f64,
    opts: &BoundOptions,
) -> Result<DeltaStarTable> {
    let mut values = Vec::with_capacity(n_max + 1);
    let mut provenance = Vec::with_capacity(n_max + 1);
    let mut sources = Vec::with_capacity(n_max + 1);
    let zero = stationary_norm(process, p, 0)?;
    if zero.samples == 0 {
        values.push(zero.value);
        provenance.push(Provenance::Exact);
        sources.push("stationary_norm".to_string());
    } else {
        let b = analytic_delta_prime(process, 0, p, opts)?
            .ok_or_else(|| Error::MissingEntry(format!("no analytic bound on δ*_{p}(0)")))?;
        values.push(b.value);
        provenance.push(Provenance::Analytic);
        sources.push(b.name);
    }
    for n in 1..=n_max {
        let b = analytic_delta_prime(process, n, p, opts)?
            .ok_or_else(|| Error::MissingEntry(format!("no analytic bound on δ*_{p}({n})")))?;
        values.push(b.value);
        provenance.push(Provenance::Analytic);
        sources.push(b.name);
    }
    Ok(DeltaStarTable {
        p,
        values,
        provenance,
        sources,
    })
}

/// Entries from `2 ‖X_n - X_n^*‖_p` estimates or analytic bounds,
/// whichever is smaller.
pub fn estimate_delta_star(
    process: &Process,
    n_max: usize,
    p: f64,
    budget: usize,
    seed: u64,
    opts: &BoundOptions,
) -> Result<DeltaStarTable> {
    let mut values = Vec::with_capacity(n_max + 1);
    let mut provenance = Vec::with_capacity(n_max + 1);
    let mut sources = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let est = estimate_coefficient(
            process,
            n,
            p,
            CouplingKind::MarkovDeltaPrime,
            budget,
            seed,
            opts,
        )?;
        let (v, prov, src) = match &est.analytic_bound {
            Some(b) if b.value <= est.estimate => (b.value, Provenance::Analytic, b.name.clone()),
            _ if n == 0 && est.se == 0.0 => (
                est.estimate,
                Provenance::Exact,
                "stationary_norm".to_string(),
            ),
            _ => (
                est.estimate,
                Provenance::MonteCarlo,
                est.kind.label().to_string(),
            ),
        };
        values.push(v);
        provenance.push(prov);
        sources.push(src);
    }
    Ok(DeltaStarTable {
        p,
        values,
        provenance,
        sources,
    })
}

/// Constant used for the independent-sum moment inequality.
pub fn default_rosenthal_constant(p: f64) -> f64 {
    7.35 * p / p.max(std::f64::consts::E).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantMode {
    /// Constant applied as stated.
    Plain,
    /// T-terms also carry the maximal factor `p/(p-1)`.
    Strict,
}

impl ConstantMode {
    pub fn label(&self) -> &'static str {
        match self {
            ConstantMode::Plain => "plain",
            ConstantMode::Strict => "strict",
        }
    }
}

/// Effective constant in front of the T-terms.
pub fn effective_constant(c_p: f64, p: f64, mode: ConstantMode) -> f64 {
    match mode {
        ConstantMode::Plain => c_p,
        ConstantMode::Strict => c_p * p / (p - 1.0),
    }
}

/// `C'_p = C_p 2^{3/2} / (√2 - 1)`.
pub fn c_prime(c: f64) -> f64 {
    c * 2f64.powf(1.5) / (2f64.sqrt() - 1.0)
}

/// `C''_p = 2^{1+1/p}(C_p + 1) / (2^{1/p} - 1)`.
pub fn c_double_prime(c: f64, p: f64) -> f64 {
    2f64.powf(1.0 + 1.0 / p) * (c + 1.0) / (2f64.powf(1.0 / p) - 1.0)
}

/// Right sides built from δ* tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaRhs {
    /// Weighted-series form.
    pub series: f64,
    /// Level-sum form.
    pub levels: f64,
}

/// The two δ*-based right sides for depth `d`, with `c` the effective
/// constant.
pub fn moment_rhs(
    delta2: &DeltaStarTable,
    deltap: &DeltaStarTable,
    d: usize,
    p: f64,
    c: f64,
) -> Result<DeltaRhs> {
    let n = 1usize << d;
    let d2 = |j: usize| delta2.get(j);
    let dp = |j: usize| deltap.get(j);
    let df = d as f64;
    let mut s2 = 0.0;
    let mut sp = 0.0;
    for j in 0..=n {
        s2 += d2(j)? / ((j + 1) as f64).sqrt();
        sp += dp(j)? / ((j + 1) as f64).powf(1.0 / p);
    }
    let series =
        c_prime(c) * 2f64.powf(df / 2.0) * s2 + c_double_prime(c, p) * 2f64.powf(df / p) * sp;

    let mut a = 0.0;
    let mut b = 0.0;
    for k in 0..=d {
        let half = if k == 0 { 0 } else { 1usize << (k - 1) };
        let s: f64 = (0..=half).map(d2).sum::<Result<f64>>()?;
        a += 2f64.powf((df - k as f64) / 2.0) * s;
        let s: f64 = (1..=1usize << k).map(dp).sum::<Result<f64>>()?;
        b += 2f64.powf((df - k as f64) / p) * s;
    }
    let levels = 2.0 * c * a + c * 2f64.powf(df / p) * dp(0)? + (2.0 * c + 1.0) * b;
    Ok(DeltaRhs { series, levels })
}

/// Right side built from ensemble norms of `U_{k,ℓ}` and `T_{k,ℓ}`.
pub fn norm_rhs(dec: &DyadicDecomposition, p: f64, c: f64) -> f64 {
    let paths = dec.paths.len() as f64;
    let norm = |pick: &dyn Fn(&PathDecomposition) -> f64, q: f64| -> f64 {
        (dec.paths.iter().map(|x| pick(x).abs().powf(q)).sum::<f64>() / paths).powf(1.0 / q)
    };
    let mut total = 0.0;
    for k in 0..=dec.depth {
        let blocks = 1usize << (dec.depth - k);
        let mut up = 0.0;
        let mut t2 = 0.0;
        let mut tp = 0.0;
        for l in 0..blocks {
            up += norm(&|x| x.u[k][l], p).powf(p);
            t2 += norm(&|x| x.t[k][l], 2.0).powi(2);
            tp += norm(&|x| x.t[k][l], p).powf(p);
        }
        total += up.powf(1.0 / p) + c * (t2.sqrt() + tp.powf(1.0 / p));
    }
    total
}

/// Ensemble estimate of `‖max_{n<=2^d} |S_n|‖_p`.
pub fn maximal_norm(dec: &DyadicDecomposition, p: f64) -> NormEstimate {
    let powers: Vec<f64> = dec
        .paths
        .iter()
        .map(|x| x.max_partial_sum().powf(p))
        .collect();
    lp_norm_from_powers(&powers, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub d: usize,
    pub p: f64,
    pub c_p: f64,
    pub mode: ConstantMode,
    pub lhs: NormEstimate,
    pub rhs_norms: f64,
    pub rhs_series: f64,
    pub rhs_levels: f64,
    /// `(rhs_series - lhs) / se`.
    pub margin_se: f64,
    pub holds: bool,
}

/// Compares the ensemble maximal norm with the δ*-series right side.
pub fn verify_moment_bound(
    dec: &DyadicDecomposition,
    delta2: &DeltaStarTable,
    deltap: &DeltaStarTable,
    p: f64,
    c_p: f64,
    mode: ConstantMode,
) -> Result<MomentReport> {
    if !(p >= 2.0) {
        return Err(Error::OutOfRange(format!("p = {p} must be at least 2")));
    }
    let c = effective_constant(c_p, p, mode);
    let lhs = maximal_norm(dec, p);
    let rhs = moment_rhs(delta2, deltap, dec.depth, p, c)?;
    let rhs_norms = norm_rhs(dec, p, c);
    let margin_se = if lhs.se > 0.0 {
        (rhs.series - lhs.value) / lhs.se
    } else if rhs.series >= lhs.value {
        f64::INFINITY
    } else {
        f64::NEG_INFINITY
    };
    Ok(MomentReport {
        d: dec.depth,
        p,
        c_p,
        mode,
        holds: lhs.value <= rhs.series + 4.0 * lhs.se,
        lhs,
        rhs_norms,
        rhs_series: rhs.series,
        rhs_levels: rhs.levels,
        margin_se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::PiecewiseAffine;
    use crate::observable::{Observable, PiecewisePolynomial};
    use crate::process::symbols;

    fn doubling_cos() -> Process {
        Process::centered(Family::doubling(), Observable::cosine(), 0).unwrap()
    }

    fn digit_process() -> Process {
        // h(x) = 1{x >= 1/2} - 1/2 reads off the most recent symbol
        let obs =
            PiecewisePolynomial::new(vec![0.0, 0.5, 1.0], vec![vec![-0.5], vec![0.5]]).unwrap();
        Process::centered(Family::doubling(), Observable::Piecewise(obs), 0).unwrap()
    }

    #[test]
    fn depth_zero_matches_definition() {
        let p = doubling_cos();
        let dec = build_decomposition(&p, 0, 50, 1, &DecompositionOptions::default()).unwrap();
        for path in &dec.paths {
            assert!((path.values[0] - (path.u[0][0] + path.t[0][0])).abs() < 1e-12);
        }
    }

    #[test]
    fn depth_one_unrolls() {
        let p = doubling_cos();
        let dec = build_decomposition(&p, 1, 50, 2, &DecompositionOptions::default()).unwrap();
        for x in &dec.paths {
            let rhs = x.u[1][0] + x.t[1][0] + x.t[0][0] + x.t[0][1];
            assert!((x.partial_sums[1] - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_digits_have_no_residual() {
        let p = digit_process();
        let dec = build_decomposition(&p, 3, 40, 3, &DecompositionOptions::default()).unwrap();
        for x in &dec.paths {
            for uk in &x.u {
                assert!(uk.iter().all(|v| v.abs() < 1e-12));
            }
            for (t, v) in x.t[0].iter().zip(&x.values) {
                assert!((t - v).abs() < 1e-12);
            }
            let sum: f64 = x.t[0].iter().sum();
            assert!((x.partial_sums[7] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn pointwise_and_telescoping_on_affine() {
        let fam = Family::PiecewiseAffine(
            PiecewiseAffine::new(vec![0.5, -0.25, 0.25], vec![0.0, 0.75, 0.75]).unwrap(),
        );
        let obs =
            PiecewisePolynomial::new(vec![0.0, 0.5, 1.0], vec![vec![0.0, 1.0], vec![1.0, -1.0]])
                .unwrap();
        let p = Process::centered(fam, Observable::Piecewise(obs), 0).unwrap();
        let dec = build_decomposition(&p, 4, 100, 4, &DecompositionOptions::default()).unwrap();
        assert_eq!(dec.provenance, Provenance::Exact);
        assert!(verify_pointwise(&dec).all_hold());
        assert!(verify_telescoping(&dec).all_hold());
    }

    #[test]
    fn guards() {
        let p = doubling_cos();
        assert!(matches!(
            build_decomposition(&p, 13, 1, 0, &DecompositionOptions::default()),
            Err(Error::ResourceGuard(_))
        ));
        let uncentered = Process::new(
            Family::doubling(),
            Observable::Piecewise(PiecewisePolynomial::polynomial(vec![0.0, 1.0])),
        )
        .unwrap();
        assert!(matches!(
            build_decomposition(&uncentered, 2, 1, 0, &DecompositionOptions::default()),
            Err(Error::NotCentered { .. })
        ));
    }

    #[test]
    fn constants() {
        assert!((c_prime(1.0) - 6.828427).abs() < 1e-6);
        assert!((default_rosenthal_constant(2.0) - 14.7).abs() < 1e-12);
    }

    #[test]
    fn zero_tail_table() {
        let t = |v0: f64, p: f64| DeltaStarTable {
            p,
            values: (0..=8).map(|j| if j == 0 { v0 } else { 0.0 }).collect(),
            provenance: vec![Provenance::Analytic; 9],
            sources: vec![String::new(); 9],
        };
        let (d, p, c) = (3usize, 3.0, 2.0);
        let r = moment_rhs(&t(1.0, 2.0), &t(1.0, p), d, p, c).unwrap();
        let geometric: f64 = (0..=d).map(|k| 2f64.powf((d - k) as f64 / 2.0)).sum();
        let direct = 2.0 * c * geometric + c * 2f64.powf(d as f64 / p);
        assert!((r.levels - direct).abs() < 1e-12);
        let series = c_prime(c) * 2f64.powf(1.5) + c_double_prime(c, p) * 2f64.powf(1.0);
        assert!((r.series - series).abs() < 1e-12);
        assert!(matches!(
            moment_rhs(&t(1.0, 2.0), &t(1.0, p), 4, p, c),
            Err(Error::MissingEntry(_))
        ));
    }

    #[test]
    fn zero_observable_gives_zero_margins() {
        let zero = Process::centered(
            Family::doubling(),
            Observable::Piecewise(PiecewisePolynomial::polynomial(vec![0.0])),
            0,
        )
        .unwrap();
        let dec = build_decomposition(&zero, 3, 10, 0, &DecompositionOptions::default()).unwrap();
        for x in &dec.paths {
            assert_eq!(x.max_partial_sum(), 0.0);
            assert_eq!(x.pointwise_rhs(), 0.0);
        }
        let _ = symbols(&[0]);
    }
}
