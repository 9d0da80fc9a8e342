//! Truncation and block schedules, m-dependent approximations, block
//! variances and the condition checkers of the strong approximation.

use serde::{Deserialize, Serialize};

use crate::affine::AffineState;
use crate::condexp::{
    cond_exp, cond_exp_mc, cond_exp_truncated_mc, window_average, window_average_clipped,
    ConditioningWindow,
};
use crate::coupling::{
    analytic_delta_prime, coupled_differences, stationary_norm, BoundOptions, CouplingKind,
};
use crate::error::{Error, Result};
use crate::family::{Family, NoisePath};
use crate::observable::Domain;
use crate::par;
use crate::process::{Process, MEAN_MC_SAMPLES};
use crate::quadrature;
use crate::rng::{tag, SeedDomain};
use crate::stats::{batch_means, linear_fit, lp_norm_from_powers, Estimate, NormEstimate};

/// Largest supported window `3^k`.
pub const MAX_LEVEL: usize = 10;

/// `(φ_M(x), g_M(x))` with `φ_M(x) = (x ∧ M) ∨ (-M)` and `g_M = x - φ_M`.
pub fn clip(x: f64, m: f64) -> (f64, f64) {
    let phi = x.clamp(-m, m);
    (phi, x - phi)
}

/// `M_k = 3^{k/p}` and `m_k = round(3^{kβ/p})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KmtSchedule {
    pub p: f64,
    pub beta_blk: f64,
    pub k_max: usize,
}

impl KmtSchedule {
    pub fn new(p: f64, beta_blk: f64, k_max: usize) -> Result<Self> {
        let s = Self { p, beta_blk, k_max };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 2.0) {
            return Err(Error::OutOfRange(format!("p = {} must exceed 2", self.p)));
        }
        if !(self.beta_blk > 0.0 && self.beta_blk <= 2.0) {
            return Err(Error::OutOfRange(format!(
                "β_blk = {} must lie in (0, 2]",
                self.beta_blk
            )));
        }
        if self.k_max > MAX_LEVEL {
            return Err(Error::ResourceGuard(format!(
                "k_max = {} exceeds {MAX_LEVEL}",
                self.k_max
            )));
        }
        Ok(())
    }

    pub fn truncation(&self, k: usize) -> f64 {
        3f64.powf(k as f64 / self.p)
    }

    pub fn block(&self, k: usize) -> usize {
        (3f64.powf(k as f64 * self.beta_blk / self.p).round() as usize).max(1)
    }

    /// First `k >= 1` with `m_k <= 3^{k-2}/2`.
    pub fn k0(&self) -> Option<usize> {
        (1..=64).find(|&k| self.block(k) as f64 <= 0.5 * 3f64.powi(k as i32 - 2))
    }

    /// `m_k k / 3^{2k/p}` for `k = 1..=k_max`; tends to zero when
    /// `m_k = o(3^{2k/p}/k)`.
    pub fn growth_ratios(&self) -> Vec<f64> {
        (1..=self.k_max)
            .map(|k| self.block(k) as f64 * k as f64 / 3f64.powf(2.0 * k as f64 / self.p))
            .collect()
    }
}

/// Level-`k` blocks over `j = 1 + 3^{k-1} .. 3^{k-1} + len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmtBlocks {
    pub k: usize,
    pub m: usize,
    pub truncation: f64,
    pub len: usize,
    /// `E φ_k(X_1)`.
    pub clip_mean: Estimate,
    /// `x[path][i] = X_{k, 3^{k-1} + 1 + i}`.
    pub x: Vec<Vec<f64>>,
    pub x_tilde: Vec<Vec<f64>>,
    pub exact: bool,
}

impl KmtBlocks {
    fn sums(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let mut acc = 0.0;
                r.iter()
                    .map(|v| {
                        acc += v;
                        acc
                    })
                    .collect()
            })
            .collect()
    }

    /// `w[path][ℓ-1] = W_{k,ℓ}`.
    pub fn w(&self) -> Vec<Vec<f64>> {
        Self::sums(&self.x)
    }

    pub fn w_tilde(&self) -> Vec<Vec<f64>> {
        Self::sums(&self.x_tilde)
    }
}

/// `E φ_M(X_1)` under the stationary law.
pub fn clip_mean(process: &Process, m: f64, seed: u64) -> Result<Estimate> {
    clipped_moment(process, seed, |x| clip(x, m).0)
}

fn clipped_moment<G: Fn(f64) -> f64 + Sync>(
    process: &Process,
    seed: u64,
    g: G,
) -> Result<Estimate> {
    let fam = process.family();
    if matches!(fam, Family::Torus(_) | Family::PiecewiseAffine(_))
        && matches!(process.domain(), Domain::Torus(1) | Domain::Interval)
    {
        let breaks: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        return Ok(Estimate::exact(quadrature::integrate_pieces(
            |x| g(process.value(&[x])),
            &breaks,
            1e-12,
        )?));
    }
    let dom = SeedDomain::new(seed).derive(tag("kmt/moment"));
    let xs = par::map_streams(dom, MEAN_MC_SAMPLES, |_, rng| {
        g(process.value(&fam.sample_stationary(rng)))
    });
    Ok(batch_means(&xs))
}

/// Monte Carlo budget for conditional expectations without exact forms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BlockOptions {
    pub mc_budget: Option<usize>,
}

fn affine_steps(process: &Process) -> Option<Vec<AffineState>> {
    let fam = process.family();
    match fam {
        Family::Torus(t) if t.is_wrap_free() => {}
        Family::PiecewiseAffine(_) => {}
        _ => return None,
    }
    let steps: Vec<AffineState> = (0..fam.alphabet_size()?)
        .map(|s| fam.affine_step(s))
        .collect::<Result<_>>()
        .ok()?;
    window_average(process, &AffineState::identity(fam.state_len())).ok()?;
    Some(steps)
}

/// `E(φ_M(X_j) | ε_{j-m}, .., ε_j)` from the window alone, with a flag
/// telling whether it was exact.
fn window_mean(
    process: &Process,
    steps: Option<&[AffineState]>,
    big_m: f64,
    inactive: bool,
    window: &NoisePath,
    mc: Option<(usize, u64)>,
) -> Result<(f64, bool)> {
    if let Some(steps) = steps {
        let syms = window.symbols().ok_or(Error::InnovationKind)?;
        let mut st = AffineState::identity(process.family().state_len());
        for &s in syms {
            let a = &steps[s];
            if a.dim == 1 {
                st.push_scalar(a.lin[0], a.off[0]);
            } else {
                st.push(&a.lin, &a.off);
            }
        }
        return Ok((window_average_clipped(process, &st, big_m)?, true));
    }
    let w = ConditioningWindow::new(1, window.len(), window.clone())?;
    if inactive {
        match cond_exp(process, &w) {
            Ok(v) => return Ok((v, true)),
            Err(Error::Unsupported { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let (budget, seed) = mc.ok_or(Error::Unsupported {
        op: "m-dependent approximation",
        family: process.family().name(),
        hint: "; set a Monte Carlo budget",
    })?;
    let est = if inactive {
        cond_exp_mc(process, &w, budget, seed)?
    } else {
        cond_exp_truncated_mc(process, big_m, &w, budget, seed)?
    };
    Ok((est.mean, false))
}

/// `E(φ_M(X_j) | window)` for a window `ε_{j-m}, .., ε_j`, uncentered.
pub fn m_dependent_value(
    process: &Process,
    big_m: f64,
    window: &NoisePath,
    opts: &BlockOptions,
    seed: u64,
) -> Result<f64> {
    let steps = affine_steps(process);
    let inactive = process
        .observable()
        .sup_bound(process.mean(), process.domain())
        <= big_m;
    Ok(window_mean(
        process,
        steps.as_deref(),
        big_m,
        inactive,
        window,
        opts.mc_budget.map(|b| (b, seed)),
    )?
    .0)
}

/// Builds `X_{k,j}` and `X̃_{k,j}` on `ensemble` paths. The state at time
/// `3^{k-1} - m_k` is drawn from the stationary law.
pub fn build_blocks(
    process: &Process,
    schedule: &KmtSchedule,
    k: usize,
    ensemble: usize,
    len: Option<usize>,
    seed: u64,
    opts: &BlockOptions,
) -> Result<KmtBlocks> {
    schedule.validate()?;
    if k == 0 || k > MAX_LEVEL {
        return Err(Error::ResourceGuard(format!(
            "level k = {k} must lie in 1..={MAX_LEVEL}"
        )));
    }
    let full = 2 * 3usize.pow(k as u32 - 1);
    let len = len.unwrap_or(full).min(full);
    let m = schedule.block(k);
    if m > 3usize.pow(k as u32 - 1) {
        return Err(Error::OutOfRange(format!(
            "m_{k} = {m} exceeds 3^(k-1); use k >= k0"
        )));
    }
    let big_m = schedule.truncation(k);
    let mean = clip_mean(process, big_m, seed)?;
    let fam = process.family();
    let steps = affine_steps(process);
    let inactive = process
        .observable()
        .sup_bound(process.mean(), process.domain())
        <= big_m;
    // one stream per path for every k: common random numbers across levels
    let dom = SeedDomain::new(seed).derive(tag("kmt/blocks"));
    type Row = (Vec<f64>, Vec<f64>, bool);
    let rows: Vec<Result<Row>> = par::map_streams(dom, ensemble, |path, rng| {
        let w0 = fam.sample_stationary(rng);
        let noise = fam.sample_noise(m + len, rng);
        let values = process.simulate_values(&w0, &noise)?;
        let mut x = Vec::with_capacity(len);
        let mut xt = Vec::with_capacity(len);
        let mut exact = true;
        for i in 1..=len {
            // local time of X_{k, 3^{k-1} + i} is m + i; window ε_{i..=m+i}
            let j = m + i;
            x.push(clip(values[j - 1], big_m).0 - mean.mean);
            let window = noise.slice(i - 1..j);
            let sub = dom.derive(path as u64).derive(i as u64).master();
            let (ce, e) = window_mean(
                process,
                steps.as_deref(),
                big_m,
                inactive,
                &window,
                opts.mc_budget.map(|b| (b, sub)),
            )?;
            exact &= e;
            xt.push(ce - mean.mean);
        }
        Ok((x, xt, exact))
    });
    let mut x = Vec::with_capacity(ensemble);
    let mut x_tilde = Vec::with_capacity(ensemble);
    let mut exact = true;
    for r in rows {
        let (a, b, e) = r?;
        x.push(a);
        x_tilde.push(b);
        exact &= e;
    }
    Ok(KmtBlocks {
        k,
        m,
        truncation: big_m,
        len,
        clip_mean: mean,
        x,
        x_tilde,
        exact,
    })
}

/// `ν_k = m_k^{-1} {E W̃²_{k,m} + 2 E W̃_{k,m}(W̃_{k,2m} - W̃_{k,m})}`.
pub fn nu_k(blocks: &KmtBlocks) -> Result<Estimate> {
    let m = blocks.m;
    if blocks.len < 2 * m {
        return Err(Error::OutOfRange(format!(
            "blocks of length {} cannot hold 2 m_k = {}",
            blocks.len,
            2 * m
        )));
    }
    let q: Vec<f64> = blocks
        .x_tilde
        .iter()
        .map(|r| {
            let a: f64 = r[..m].iter().sum();
            let b: f64 = r[m..2 * m].iter().sum();
            (a * a + 2.0 * a * b) / m as f64
        })
        .collect();
    Ok(batch_means(&q))
}

/// Long-run variance by the truncated covariance series and by batch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sigma2Estimate {
    pub lag: usize,
    pub batch_len: usize,
    /// `Var(X_1) + 2 Σ_{i<=L} Cov(X_1, X_{1+i})`.
    pub series: Estimate,
    /// `E S_b² / b`.
    pub batch: Estimate,
    /// Bound on the neglected covariances `2 Σ_{i>L} |Cov(X_1, X_{1+i})|`.
    pub tail_bound: Option<f64>,
    /// `|series - batch|` in combined standard errors.
    pub disagreement_se: f64,
    pub flagged: bool,
}

pub const SIGMA2_FLAG_SE: f64 = 6.0;

pub fn sigma2(
    process: &Process,
    lag: usize,
    batch_len: usize,
    ensemble: usize,
    seed: u64,
) -> Result<Sigma2Estimate> {
    if !process.is_centered() {
        return Err(Error::NotCentered {
            mean: process.mean(),
        });
    }
    if batch_len == 0 {
        return Err(Error::OutOfRange("batch length must be positive".into()));
    }
    let fam = process.family();
    let len = (lag + 1).max(batch_len);
    let dom = SeedDomain::new(seed).derive(tag("kmt/sigma2"));
    let rows: Vec<Result<(f64, f64)>> = par::map_streams(dom, ensemble, |_, rng| {
        let w0 = fam.sample_stationary(rng);
        let noise = fam.sample_noise(len, rng);
        let v = process.simulate_values(&w0, &noise)?;
        let tail: f64 = v[1..=lag].iter().sum();
        let s: f64 = v[..batch_len].iter().sum();
        Ok((v[0] * (v[0] + 2.0 * tail), s * s / batch_len as f64))
    });
    let rows: Vec<(f64, f64)> = rows.into_iter().collect::<Result<_>>()?;
    let series = batch_means(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let batch = batch_means(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    let se = (series.se * series.se + batch.se * batch.se).sqrt();
    let diff = (series.mean - batch.mean).abs();
    let disagreement_se = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(Sigma2Estimate {
        lag,
        batch_len,
        series,
        batch,
        tail_bound: covariance_tail(process, lag, seed)?,
        disagreement_se,
        flagged: disagreement_se > SIGMA2_FLAG_SE,
    })
}

/// `2 ‖X_1‖_2 Σ_{i>L} δ'_2(i)` from analytic bounds, when they decay.
fn covariance_tail(process: &Process, lag: usize, seed: u64) -> Result<Option<f64>> {
    let norm = stationary_norm(process, 2.0, seed)?;
    let opts = BoundOptions::default();
    let mut sum = 0.0;
    for i in lag + 1..=lag + 512 {
        let Some(b) = analytic_delta_prime(process, i, 2.0, &opts)? else {
            return Ok(None);
        };
        sum += b.value;
        if b.value <= 1e-17 * sum.max(1e-300) || b.value == 0.0 {
            return Ok(Some(2.0 * (norm.value + norm.ci95) * sum));
        }
    }
    Ok(None)
}

/// One summand of a condition series at level `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub k: usize,
    pub summand: f64,
    pub cumulative: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Convergent,
    Divergent,
    /// Every summand vanished or was unresolved by the ensemble.
    IdenticallyZero,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionTable {
    pub name: String,
    pub rows: Vec<ConditionRow>,
    /// Least-squares slope of `ln summand` against `k`.
    pub slope: Option<f64>,
    pub verdict: Verdict,
    /// `"finite-k diagnostic"` or `"rigorous for power-law inputs"`.
    pub label: String,
}

impl ConditionTable {
    pub const CSV_HEADER: &'static str = "k,summand,cumulative,slope,verdict";

    pub fn csv_rows(&self) -> Vec<String> {
        let slope = self.slope.map(|s| format!("{s:.16e}")).unwrap_or_default();
        self.rows
            .iter()
            .map(|r| {
                format!(
                    "{},{:.16e},{:.16e},{},{}",
                    r.k,
                    r.summand,
                    r.cumulative,
                    slope,
                    serde_json::to_value(self.verdict)
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default()
                )
            })
            .collect()
    }
}

const DIAGNOSTIC: &str = "finite-k diagnostic, not a proof";
const RIGOROUS: &str = "rigorous for power-law inputs";

fn diagnostic_table(name: &str, rows: Vec<ConditionRow>) -> ConditionTable {
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.summand > 0.0)
        .map(|r| (r.k as f64, r.summand.ln()))
        .unzip();
    let slope = linear_fit(&xs, &ys).map(|f| f.0);
    let verdict = if xs.is_empty() {
        Verdict::IdenticallyZero
    } else {
        match slope {
            Some(s) if s < 0.0 => Verdict::Convergent,
            Some(_) => Verdict::Divergent,
            None => Verdict::Inconclusive,
        }
    };
    ConditionTable {
        name: name.to_string(),
        rows,
        slope,
        verdict,
        label: DIAGNOSTIC.to_string(),
    }
}

fn with_cumulative(mut rows: Vec<ConditionRow>) -> Vec<ConditionRow> {
    let mut acc = 0.0;
    for r in rows.iter_mut() {
        acc += r.summand;
        r.cumulative = acc;
    }
    rows
}

/// Settings of the finite-k checker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlwOptions {
    /// Moment order of the m-dependence condition; defaults to `p`.
    pub alpha: Option<f64>,
    pub r: f64,
    pub ensemble: usize,
    /// Long-run standard deviation `σ` with its standard error.
    pub sigma: Option<(f64, f64)>,
    pub blocks: BlockOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlwReport {
    pub schedule: KmtSchedule,
    pub k0: Option<usize>,
    pub alpha: f64,
    pub r: f64,
    pub truncation: ConditionTable,
    pub m_dependence: ConditionTable,
    pub sakhanenko: ConditionTable,
    pub variance: ConditionTable,
    pub notes: Vec<String>,
}

impl BlwReport {
    pub fn tables(&self) -> [&ConditionTable; 4] {
        [
            &self.truncation,
            &self.m_dependence,
            &self.sakhanenko,
            &self.variance,
        ]
    }
}

/// Evaluates the four summands for `k <= k_max` and fits their decay.
pub fn check_blw_conditions(
    process: &Process,
    schedule: &KmtSchedule,
    opts: &BlwOptions,
    seed: u64,
) -> Result<BlwReport> {
    schedule.validate()?;
    let p = schedule.p;
    let alpha = opts.alpha.unwrap_or(p);
    if !(alpha >= 1.0) || !(opts.r > 2.0) {
        return Err(Error::OutOfRange("need α >= 1 and r > 2".into()));
    }
    let k0 = schedule.k0();
    let mut notes = Vec::new();
    let mut trunc = Vec::new();
    for k in 1..=schedule.k_max {
        let big_m = schedule.truncation(k);
        let e = clipped_moment(process, seed, |x| clip(x, big_m).1.abs())?;
        let scale = 3f64.powf(k as f64 * (p - 1.0) / p);
        trunc.push(ConditionRow {
            k,
            summand: scale * e.mean,
            cumulative: 0.0,
            ci95: scale * e.ci95,
        });
    }
    let mut mdep = Vec::new();
    let mut sak = Vec::new();
    let mut var = Vec::new();
    let start = k0.unwrap_or(schedule.k_max + 1).max(2);
    for k in start..=schedule.k_max {
        let blocks = build_blocks(
            process,
            schedule,
            k,
            opts.ensemble,
            None,
            seed,
            &opts.blocks,
        )?;
        let w = blocks.w();
        let wt = blocks.w_tilde();
        let dev: Vec<f64> = w
            .iter()
            .zip(&wt)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
                    .powf(alpha)
            })
            .collect();
        let e = batch_means(&dev);
        let scale = 3f64.powf(-alpha * k as f64 / p);
        mdep.push(ConditionRow {
            k,
            summand: scale * e.mean,
            cumulative: 0.0,
            ci95: scale * e.ci95,
        });

        let m = blocks.m;
        let span = (3 * m).min(blocks.len);
        let maxes: Vec<f64> = wt
            .iter()
            .map(|r| {
                r[..span]
                    .iter()
                    .fold(0.0f64, |a, v| a.max(v.abs()))
                    .powf(opts.r)
            })
            .collect();
        let e = batch_means(&maxes);
        let scale = 3f64.powf(k as f64) / (3f64.powf(k as f64 * opts.r / p) * m as f64);
        sak.push(ConditionRow {
            k,
            summand: scale * e.mean,
            cumulative: 0.0,
            ci95: scale * e.ci95,
        });

        match opts.sigma {
            Some((sigma, sigma_se)) if sigma > 2.0 * sigma_se => {
                let nu = nu_k(&blocks)?;
                let root = nu.mean.max(0.0).sqrt();
                // standard error of √ν by the delta method
                let root_se = if root > 0.0 {
                    nu.se / (2.0 * root)
                } else {
                    nu.se.sqrt()
                };
                let resolved = ((root - sigma).abs()
                    - 2.0 * (root_se * root_se + sigma_se * sigma_se).sqrt())
                .max(0.0);
                let scale = 3f64.powf(k as f64) * (k as f64).ln() / 3f64.powf(2.0 * k as f64 / p);
                var.push(ConditionRow {
                    k,
                    summand: scale * resolved * resolved,
                    cumulative: 0.0,
                    ci95: 0.0,
                });
            }
            _ => {}
        }
    }
    if opts.sigma.is_none_or(|(s, se)| s <= 2.0 * se) {
        notes.push("σ≈0: variance condition skipped".into());
    }
    notes.push(
        "variance summands use the part of |√ν_k - σ| exceeding two combined standard errors"
            .into(),
    );
    notes.push("ν_k and the block conditions share one noise ensemble per level".into());
    let mut variance = diagnostic_table("variance_matching", with_cumulative(var));
    if variance.rows.is_empty() {
        variance.verdict = Verdict::Inconclusive;
    }
    Ok(BlwReport {
        schedule: *schedule,
        k0,
        alpha,
        r: opts.r,
        truncation: diagnostic_table("truncation", with_cumulative(trunc)),
        m_dependence: diagnostic_table("m_dependence", with_cumulative(mdep)),
        sakhanenko: diagnostic_table("sakhanenko", with_cumulative(sak)),
        variance,
        notes,
    })
}

/// Decay model for `δ'_q(n)`, shared by `q = 2` and `q = p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum DecayModel {
    /// `δ'(n) <= c n^{-γ}`.
    PowerLaw { c: f64, gamma: f64 },
    /// Tabulated values for `n = 0, 1, ..`; later entries repeat the last.
    Table { values: Vec<f64> },
}

impl DecayModel {
    pub fn eval(&self, n: usize) -> f64 {
        match self {
            DecayModel::PowerLaw { c, gamma } => {
                if n == 0 {
                    *c
                } else {
                    c * (n as f64).powf(-gamma)
                }
            }
            DecayModel::Table { values } => values.get(n).or(values.last()).copied().unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPrimeReport {
    pub first_l2: ConditionTable,
    pub first_lp: ConditionTable,
    pub fourth: ConditionTable,
    pub second: ConditionTable,
    pub third: ConditionTable,
}

impl DeltaPrimeReport {
    pub fn tables(&self) -> [&ConditionTable; 5] {
        [
            &self.first_l2,
            &self.first_lp,
            &self.fourth,
            &self.second,
            &self.third,
        ]
    }

    pub fn all_convergent(&self) -> bool {
        self.tables()
            .iter()
            .all(|t| matches!(t.verdict, Verdict::Convergent | Verdict::IdenticallyZero))
    }
}

fn exponent_table(
    name: &str,
    rows: Vec<ConditionRow>,
    exponent: Option<f64>,
    zero: bool,
) -> ConditionTable {
    let verdict = if zero {
        Verdict::IdenticallyZero
    } else {
        match exponent {
            Some(e) if e < 0.0 => Verdict::Convergent,
            Some(_) => Verdict::Divergent,
            None => Verdict::Inconclusive,
        }
    };
    let mut t = diagnostic_table(name, rows);
    t.verdict = verdict;
    t.slope = exponent;
    t.label = RIGOROUS.to_string();
    t
}

/// Evaluates the four δ'-conditions on the schedule. For power-law decay
/// every verdict follows from the geometric exponent in `k`; the `slope`
/// field then holds that exponent (per unit of `ln 3`).
pub fn check_delta_prime_conditions(
    decay: &DecayModel,
    schedule: &KmtSchedule,
    r: f64,
) -> Result<DeltaPrimeReport> {
    schedule.validate()?;
    let p = schedule.p;
    if !(r > p) {
        return Err(Error::OutOfRange(format!("r = {r} must exceed p = {p}")));
    }
    let b = schedule.beta_blk;
    let k0 = schedule.k0().unwrap_or(1);
    let m = |k: usize| schedule.block(k) as f64;
    let d = |n: f64| decay.eval(n.round() as usize);
    // inner tails Σ_{ℓ>=k} δ'(m_ℓ) m_{ℓ+1}^e, truncated where terms stop mattering
    let tail = |k: usize, e: f64| -> f64 { (k..k + 400).map(|l| d(m(l)) * m(l + 1).powf(e)).sum() };
    let ks: Vec<usize> = (k0..=schedule.k_max.max(k0)).collect();
    let rows = |f: &dyn Fn(usize) -> f64| {
        with_cumulative(
            ks.iter()
                .map(|&k| ConditionRow {
                    k,
                    summand: f(k),
                    cumulative: 0.0,
                    ci95: 0.0,
                })
                .collect(),
        )
    };
    let r1 = rows(&|k| 3f64.powf(k as f64 * (p - 2.0) / 2.0) * tail(k, 0.5).powf(p));
    let r1p = rows(&|k| tail(k, 1.0 - 1.0 / p).powf(p));
    let r4 = rows(&|k| {
        tail(k, 0.5) * (k as f64).ln().max(1e-300).sqrt()
            / 3f64.powf(k as f64 * (2.0 - p) / (2.0 * p))
    });
    let r2 = rows(&|k| 3f64.powf(k as f64 * (p - r) / p) * m(k).powf((r - 2.0) / 2.0));
    let js: Vec<usize> = (1..=3usize.pow(schedule.k_max.min(MAX_LEVEL) as u32)).collect();
    let r3 = with_cumulative(
        js.iter()
            .map(|&j| ConditionRow {
                k: j,
                summand: d(j as f64).powf(p / r) / (j as f64).powf(1.0 / r),
                cumulative: 0.0,
                ci95: 0.0,
            })
            .collect(),
    );
    let second_exp = (p - r) / p + b * (r - 2.0) / (2.0 * p);
    match decay {
        DecayModel::PowerLaw { c, gamma } => {
            let zero = *c == 0.0;
            let g = *gamma;
            // inner tails converge only when the geometric ratio is below one
            let inner2 = b * (0.5 - g) / p;
            let innerp = b * (1.0 - 1.0 / p - g) / p;
            let e1 = if inner2 < 0.0 {
                Some((p - 2.0) / 2.0 + p * inner2)
            } else {
                Some(1.0)
            };
            let e1p = if innerp < 0.0 {
                Some(p * innerp)
            } else {
                Some(1.0)
            };
            let e4 = if inner2 < 0.0 {
                Some(inner2 - (2.0 - p) / (2.0 * p))
            } else {
                Some(1.0)
            };
            // Σ_j j^{-(γp+1)/r} converges iff (γp + 1)/r > 1
            let e3 = Some(1.0 - (g * p + 1.0) / r);
            Ok(DeltaPrimeReport {
                first_l2: exponent_table("first_l2", r1, e1, zero),
                first_lp: exponent_table("first_lp", r1p, e1p, zero),
                fourth: exponent_table("fourth", r4, e4, zero),
                second: exponent_table("second", r2, Some(second_exp), false),
                third: exponent_table("third", r3, e3, zero),
            })
        }
        DecayModel::Table { .. } => Ok(DeltaPrimeReport {
            first_l2: diagnostic_table("first_l2", r1),
            first_lp: diagnostic_table("first_lp", r1p),
            fourth: diagnostic_table("fourth", r4),
            second: exponent_table("second", r2, Some(second_exp), false),
            third: diagnostic_table("third", r3),
        }),
    }
}

/// Explicit form of the truncated-projection inequality at lag `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmReport {
    pub n: usize,
    pub m: f64,
    pub p: f64,
    /// `‖E(g_M(X_n)|V_0) - E g_M(X_n)‖_2²`, computed exactly.
    pub lhs: f64,
    /// `E|X_1|^p`.
    pub moment: f64,
    /// `‖X_n - X_n^*‖_p`.
    pub star: NormEstimate,
    /// Right side with the coupled norm in place of `δ'_p(n)` (valid for
    /// any `ε > 0`), at its upper confidence limit.
    pub rhs_coupled: f64,
    /// Right side with the upper estimate `2 ‖X_n - X_n^*‖_p` of `δ'_p(n)`.
    pub rhs_delta_prime: f64,
    pub epsilon: f64,
    pub holds: bool,
}

/// `4 ε M^{1-p} E|X_1|^p + 2^{p+1} ε^{2-p} D^p` at `ε = M D^{p/(p-1)}`.
pub fn gm_rhs(m: f64, p: f64, moment: f64, d: f64) -> (f64, f64) {
    if d == 0.0 {
        return (0.0, 0.0);
    }
    let eps = m * d.powf(p / (p - 1.0));
    (
        4.0 * eps * m.powf(1.0 - p) * moment + 2f64.powf(p + 1.0) * eps.powf(2.0 - p) * d.powf(p),
        eps,
    )
}

/// Largest number of noise words enumerated exactly.
const MAX_WORDS: usize = 1 << 16;

/// Checks the truncated-projection bound on a one-dimensional affine chain;
/// the conditional mean given `W_0 = x` is summed over every noise word.
pub fn gm_projection_check(
    process: &Process,
    n: usize,
    m: f64,
    p: f64,
    budget: usize,
    seed: u64,
) -> Result<GmReport> {
    if !(p > 2.0 && m > 0.0) {
        return Err(Error::OutOfRange("need p > 2 and M > 0".into()));
    }
    let fam = process.family();
    let (alphabet, probs): (usize, Vec<f64>) = match fam {
        Family::Torus(t) if t.dim() == 1 && t.is_wrap_free() => (
            t.alphabet_size(),
            vec![1.0 / t.alphabet_size() as f64; t.alphabet_size()],
        ),
        Family::PiecewiseAffine(pa) => (
            pa.alphabet_size(),
            pa.slopes().iter().map(|a| a.abs()).collect(),
        ),
        f => {
            return Err(Error::Unsupported {
                op: "gm_projection_check",
                family: f.name(),
                hint: "; exact enumeration needs a one-dimensional affine chain",
            })
        }
    };
    let words = (alphabet as f64).powi(n as i32);
    if words > MAX_WORDS as f64 {
        return Err(Error::ResourceGuard(format!(
            "{alphabet}^{n} noise words exceed {MAX_WORDS}"
        )));
    }
    let steps: Vec<AffineState> = (0..alphabet)
        .map(|s| fam.affine_step(s))
        .collect::<Result<_>>()?;
    let mut maps: Vec<(f64, f64, f64)> = vec![(1.0, 0.0, 1.0)];
    for _ in 0..n {
        let mut next = Vec::with_capacity(maps.len() * alphabet);
        for &(a, b, w) in &maps {
            for (s, st) in steps.iter().enumerate() {
                next.push((st.lin[0] * a, st.lin[0] * b + st.off[0], w * probs[s]));
            }
        }
        maps = next;
    }
    let g = |x: f64| clip(x, m).1;
    let gm_mean = clipped_moment(process, seed, g)?.mean;
    let cond = |x: f64| -> f64 {
        maps.iter()
            .map(|&(a, b, w)| w * g(process.value(&[(a * x + b).clamp(0.0, 1.0)])))
            .sum::<f64>()
            - gm_mean
    };
    let breaks: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
    let lhs = quadrature::integrate_pieces(|x| cond(x).powi(2), &breaks, 1e-12)?;
    let moment = stationary_norm(process, p, seed)?.value.powf(p);
    let diffs = coupled_differences(process, CouplingKind::Star, n, budget, seed)?;
    let powers: Vec<f64> = diffs.iter().map(|d| d.abs().powf(p)).collect();
    let star = lp_norm_from_powers(&powers, p);
    let (rhs_coupled, epsilon) = gm_rhs(m, p, moment, star.value + star.ci95);
    let (rhs_delta_prime, _) = gm_rhs(m, p, moment, 2.0 * star.value);
    Ok(GmReport {
        n,
        m,
        p,
        lhs,
        moment,
        star,
        rhs_coupled,
        rhs_delta_prime,
        epsilon,
        holds: lhs <= rhs_coupled + 1e-12,
    })
}

/// `ℓ_k = 3^{k(p-2)/(2p)} (log k)^{-1/2}`, defined for `k >= 2`.
pub fn ell_k(k: usize, p: f64) -> Result<f64> {
    if k < 2 || !(p > 2.0) {
        return Err(Error::Domain(format!(
            "ℓ_k needs k >= 2 and p > 2, got k = {k}, p = {p}"
        )));
    }
    Ok(3f64.powf(k as f64 * (p - 2.0) / (2.0 * p)) / (k as f64).ln().sqrt())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovTruncationReport {
    pub truncation: f64,
    pub lag: usize,
    /// `Σ_{|i|<=L} c_|i| - Σ_{|i|<=L} ĉ_{k,|i|}`.
    pub diff: Estimate,
    /// `(2L + 1)(2 ‖g_M‖₂ ‖X‖₂ + (E g_M)²)` with `g_M = x - φ_M(x)`.
    pub bound: f64,
    pub holds: bool,
}

/// Compares the covariance sums of `X` and of `φ_M(X)` up to lag `L`.
pub fn covariance_truncation_check(
    process: &Process,
    big_m: f64,
    lag: usize,
    ensemble: usize,
    seed: u64,
) -> Result<CovTruncationReport> {
    if !(big_m > 0.0) {
        return Err(Error::Domain(format!(
            "truncation level {big_m} must be positive"
        )));
    }
    if ensemble < 64 {
        return Err(Error::OutOfRange(format!(
            "ensemble {ensemble} is below 64"
        )));
    }
    let phi_mean = clip_mean(process, big_m, seed)?.mean;
    let g_mean = clipped_moment(process, seed, |x| clip(x, big_m).1)?.mean;
    let g_l2 = clipped_moment(process, seed, |x| clip(x, big_m).1.powi(2))?
        .mean
        .max(0.0)
        .sqrt();
    let x_l2 = clipped_moment(process, seed, |x| x * x)?
        .mean
        .max(0.0)
        .sqrt();
    let fam = process.family();
    let dom = SeedDomain::new(seed).derive(tag("kmt/cov-truncation"));
    let rows: Vec<Result<f64>> = par::map_streams(dom, ensemble, |_, rng| {
        let w0 = fam.sample_stationary(rng);
        let noise = fam.sample_noise(lag, rng);
        let mut xs = vec![process.value(&w0)];
        xs.extend(process.simulate_values(&w0, &noise)?);
        let f: Vec<f64> = xs.iter().map(|&x| clip(x, big_m).0).collect();
        let mut q = xs[0] * xs[0] - f[0] * f[0];
        for i in 1..=lag {
            q += 2.0 * (xs[0] * xs[i] - f[0] * f[i]);
        }
        Ok(q)
    });
    let q = rows.into_iter().collect::<Result<Vec<f64>>>()?;
    let mut diff = batch_means(&q);
    // ĉ subtracts (E φ_M)², c subtracts nothing since E X = 0
    diff.mean += (2 * lag + 1) as f64 * phi_mean * phi_mean;
    let bound = (2 * lag + 1) as f64 * (2.0 * g_l2 * x_l2 + g_mean * g_mean);
    Ok(CovTruncationReport {
        truncation: big_m,
        lag,
        holds: diff.mean.abs() <= bound + 6.0 * diff.se + 1e-12,
        diff,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::observable::{Observable, PiecewisePolynomial, TrigPolynomial, TrigTerm};

    fn doubling(obs: Observable) -> Process {
        Process::centered(Family::doubling(), obs, 0).unwrap()
    }

    fn digit() -> Process {
        let obs =
            PiecewisePolynomial::new(vec![0.0, 0.5, 1.0], vec![vec![-1.0], vec![1.0]]).unwrap();
        doubling(Observable::Piecewise(obs))
    }

    #[test]
    fn clip_examples() {
        assert_eq!(clip(2.0, 1.0), (1.0, 1.0));
        assert_eq!(clip(0.5, 1.0), (0.5, 0.0));
        assert_eq!(clip(-3.0, 2.0), (-2.0, -1.0));
    }

    #[test]
    fn schedule_shape() {
        let s = KmtSchedule::new(3.0, 1.0, 8).unwrap();
        assert_eq!(s.block(7), 13);
        assert_eq!(s.block(8), 19);
        assert_eq!(s.k0(), Some(4));
        let k0 = s.k0().unwrap();
        assert!(s.block(k0) as f64 <= 0.5 * 3f64.powi(k0 as i32 - 2));
        assert!(s.block(k0 - 1) as f64 > 0.5 * 3f64.powi(k0 as i32 - 3));
        assert!((1..8).all(|k| s.block(k) <= s.block(k + 1)));
        assert!(KmtSchedule::new(3.0, 1.0, 11).is_err());
    }

    #[test]
    fn independent_observable_has_no_approximation_error() {
        let p = digit();
        let s = KmtSchedule::new(3.0, 1.0, 5).unwrap();
        let b = build_blocks(&p, &s, 5, 20, Some(40), 1, &BlockOptions::default()).unwrap();
        assert!(b.exact);
        for (x, xt) in b.x.iter().zip(&b.x_tilde) {
            for (u, v) in x.iter().zip(xt) {
                assert!((u - v).abs() < 1e-12);
            }
        }
        let nu =
            nu_k(&build_blocks(&p, &s, 5, 4000, Some(20), 2, &BlockOptions::default()).unwrap())
                .unwrap();
        assert!((nu.mean - 1.0).abs() < 4.0 * nu.se + 1e-12);
    }

    #[test]
    fn bounded_observable_is_not_clipped() {
        let p = doubling(Observable::cosine());
        let s = KmtSchedule::new(3.0, 1.0, 5).unwrap();
        let b = build_blocks(&p, &s, 4, 5, Some(10), 3, &BlockOptions::default()).unwrap();
        assert!(b.clip_mean.mean.abs() < 1e-12);
        assert!(b.x.iter().flatten().all(|x| x.abs() <= 1.0 + 1e-12));
    }

    #[test]
    fn constant_observable_has_zero_nu() {
        let p = doubling(Observable::Piecewise(PiecewisePolynomial::polynomial(
            vec![3.0],
        )));
        let s = KmtSchedule::new(3.0, 1.0, 5).unwrap();
        let b = build_blocks(&p, &s, 5, 50, Some(20), 4, &BlockOptions::default()).unwrap();
        assert_eq!(nu_k(&b).unwrap().mean, 0.0);
    }

    #[test]
    fn sigma2_second_fixture_overlap() {
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
        let p = doubling(Observable::Trig(t));
        let s = sigma2(&p, 8, 64, 20000, 5).unwrap();
        assert!(
            (s.series.mean - 2.0).abs() < 4.0 * s.series.se,
            "{:?}",
            s.series
        );
        let tail = s.tail_bound.unwrap();
        assert!(tail > 0.0 && tail < 0.2, "{tail}");
    }

    #[test]
    fn delta_prime_examples() {
        let s = KmtSchedule::new(4.0, 1.05, 8).unwrap();
        let r = check_delta_prime_conditions(&DecayModel::PowerLaw { c: 1.0, gamma: 1.5 }, &s, 6.5)
            .unwrap();
        assert!(
            r.all_convergent(),
            "{:?}",
            r.tables().map(|t| (t.name.clone(), t.slope))
        );
        let s2 = KmtSchedule::new(4.0, 2.0, 8).unwrap();
        let r =
            check_delta_prime_conditions(&DecayModel::PowerLaw { c: 1.0, gamma: 1.0 }, &s2, 6.5)
                .unwrap();
        assert_eq!(r.first_l2.verdict, Verdict::Divergent);
        let r = check_delta_prime_conditions(&DecayModel::PowerLaw { c: 0.0, gamma: 1.0 }, &s, 6.5)
            .unwrap();
        assert!(r
            .tables()
            .iter()
            .filter(|t| t.name != "second")
            .all(|t| t.verdict == Verdict::IdenticallyZero));
    }

    #[test]
    fn gm_trivial_cases() {
        let p = doubling(Observable::cosine());
        let r = gm_projection_check(&p, 3, 2.0, 3.0, 1000, 0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
        let d = gm_projection_check(&digit(), 2, 0.5, 3.0, 1000, 0).unwrap();
        assert!(d.lhs.abs() < 1e-20 && d.star.value == 0.0);
    }
}
