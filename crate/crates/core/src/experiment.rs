//! Experiment configs, dispatch to the module operations and artifacts.
//!
//! `run` is pure given the config: it returns every artifact in memory and
//! `write_artifacts` persists them. Validation happens before any simulation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coupling::{
    analytic_delta_prime, check_wu_vs_star, estimate_coefficient, BoundOptions,
    CoefficientEstimate, CouplingKind, MIN_PAIRS,
};
use crate::error::{Error, Result};
use crate::family::{Family, FamilySpec};
use crate::kmt::{
    build_blocks, check_blw_conditions, check_delta_prime_conditions, covariance_truncation_check,
    ell_k, nu_k, sigma2, BlockOptions, BlwOptions, ConditionTable, DecayModel, KmtSchedule,
};
use crate::observable::Observable;
use crate::par;
use crate::process::Process;
use crate::rates::{feasibility, linear_thresholds, sigma_zero_check};
use crate::rosenthal::{
    analytic_delta_star, build_decomposition, default_rosenthal_constant, estimate_delta_star,
    verify_moment_bound, verify_pointwise, verify_telescoping, ConstantMode, DecompositionOptions,
    DeltaStarTable, Provenance, EXACT_SLACK,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub family: FamilySpec,
    pub observable: Observable,
}

impl ProcessSpec {
    pub fn build(&self, seed: u64) -> Result<Process> {
        Process::centered(
            Family::from_spec(&self.family)?,
            self.observable.clone(),
            seed,
        )
    }
}

fn default_kinds() -> Vec<CouplingKind> {
    vec![CouplingKind::Star]
}

fn default_modes() -> Vec<ConstantMode> {
    vec![ConstantMode::Plain, ConstantMode::Strict]
}

fn default_r() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Experiment {
    Coeffs {
        ns: Vec<usize>,
        p: f64,
        #[serde(default = "default_kinds")]
        kinds: Vec<CouplingKind>,
        budget: usize,
        #[serde(default)]
        bounds: BoundOptions,
    },
    RosenthalCheck {
        depths: Vec<usize>,
        paths: usize,
        #[serde(default)]
        p_values: Vec<f64>,
        #[serde(default = "default_modes")]
        modes: Vec<ConstantMode>,
        #[serde(default)]
        rosenthal_constant: Option<f64>,
        /// Monte Carlo budget for conditional expectations and δ* estimates.
        #[serde(default)]
        mc_budget: Option<usize>,
        #[serde(default)]
        bounds: BoundOptions,
    },
    KmtPipeline {
        p: f64,
        beta_blk: f64,
        k_max: usize,
        ensemble: usize,
        #[serde(default = "default_r")]
        r: f64,
        #[serde(default)]
        alpha: Option<f64>,
        /// Long-run variance `(lag, batch_len, ensemble)`; skipped when absent.
        #[serde(default)]
        sigma2: Option<Sigma2Params>,
        #[serde(default)]
        decay: Option<DecayModel>,
        #[serde(default)]
        mc_budget: Option<usize>,
    },
    Rates {
        p: f64,
        gamma: f64,
        #[serde(default)]
        beta_mod: Option<f64>,
    },
    Sigma2 {
        lag: usize,
        batch_len: usize,
        ensemble: usize,
        /// Expected value and tolerance in combined standard errors.
        #[serde(default)]
        expected: Option<(f64, f64)>,
    },
    BoundsCompare {
        ns: Vec<usize>,
        p: f64,
        budget: usize,
        #[serde(default)]
        bounds: BoundOptions,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sigma2Params {
    pub lag: usize,
    pub batch_len: usize,
    pub ensemble: usize,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Coeffs { .. } => "coeffs",
            Experiment::RosenthalCheck { .. } => "rosenthal-check",
            Experiment::KmtPipeline { .. } => "kmt-pipeline",
            Experiment::Rates { .. } => "rates",
            Experiment::Sigma2 { .. } => "sigma2",
            Experiment::BoundsCompare { .. } => "bounds-compare",
        }
    }

    /// CLI subcommand running this experiment.
    pub fn subcommand(&self) -> &'static str {
        match self {
            Experiment::Coeffs { .. } => "coeffs",
            Experiment::RosenthalCheck { .. } => "rosenthal",
            Experiment::KmtPipeline { .. } => "kmt",
            Experiment::Rates { .. } => "rates",
            Experiment::Sigma2 { .. } => "sigma2",
            Experiment::BoundsCompare { .. } => "compare-bounds",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default)]
    pub process: Option<ProcessSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Thread count hint; never affects results.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Parses a config; top-level keys outside the schema are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let config: Self =
            serde_json::from_value(raw.clone()).map_err(|e| Error::Config(e.to_string()))?;
        let known = serde_json::to_value(&config)?;
        if let (Some(raw), Some(known)) = (raw.as_object(), known.as_object()) {
            if let Some(k) = raw.keys().find(|k| !known.contains_key(*k)) {
                return Err(Error::Config(format!("unknown field `{k}`")));
            }
        }
        Ok(config)
    }

    /// SHA-256 of the canonical JSON form without the worker hint.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.workers = None;
        let text = serde_json::to_string(&c).unwrap_or_default();
        Sha256::digest(text.as_bytes())
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }

    /// Checks every precondition and builds the process.
    pub fn validate(&self) -> Result<Option<Process>> {
        let needs_process = !matches!(self.experiment, Experiment::Rates { .. });
        let process = match (&self.process, needs_process) {
            (Some(spec), _) => Some(spec.build(self.seed)?),
            (None, true) => {
                return Err(Error::Config(format!(
                    "experiment {} needs a process",
                    self.experiment.name()
                )))
            }
            (None, false) => None,
        };
        let budget_ok = |b: usize| {
            if b < MIN_PAIRS {
                Err(Error::BudgetTooSmall {
                    budget: b,
                    minimum: MIN_PAIRS,
                })
            } else {
                Ok(())
            }
        };
        match &self.experiment {
            Experiment::Coeffs {
                ns,
                p,
                kinds,
                budget,
                ..
            } => {
                budget_ok(*budget)?;
                check_p(*p, 1.0)?;
                nonempty(ns.len(), "ns")?;
                let linear = matches!(
                    process.as_ref().map(|p| p.family()),
                    Some(Family::Linear(_))
                );
                if kinds.contains(&CouplingKind::Wu) && !linear {
                    return Err(Error::Config(
                        "the wu coupling needs a linear family".into(),
                    ));
                }
            }
            Experiment::RosenthalCheck {
                depths,
                paths,
                p_values,
                ..
            } => {
                nonempty(depths.len(), "depths")?;
                nonempty(*paths, "paths")?;
                if let Some(d) = depths.iter().find(|&&d| d > crate::rosenthal::MAX_DEPTH) {
                    return Err(Error::ResourceGuard(format!(
                        "depth {d} exceeds {}",
                        crate::rosenthal::MAX_DEPTH
                    )));
                }
                for p in p_values {
                    check_p(*p, 2.0)?;
                }
            }
            Experiment::KmtPipeline {
                p,
                beta_blk,
                k_max,
                ensemble,
                r,
                ..
            } => {
                KmtSchedule::new(*p, *beta_blk, *k_max)?;
                nonempty(*ensemble, "ensemble")?;
                if !(*r > *p) {
                    return Err(Error::Config(format!("r = {r} must exceed p = {p}")));
                }
            }
            Experiment::Rates { p, gamma, beta_mod } => {
                feasibility(*p, *gamma)?;
                if let Some(b) = beta_mod {
                    linear_thresholds(*p, *b)?;
                }
            }
            Experiment::Sigma2 {
                ensemble,
                batch_len,
                ..
            } => {
                nonempty(*ensemble, "ensemble")?;
                nonempty(*batch_len, "batch_len")?;
            }
            Experiment::BoundsCompare { ns, p, budget, .. } => {
                budget_ok(*budget)?;
                check_p(*p, 1.0)?;
                nonempty(ns.len(), "ns")?;
            }
        }
        Ok(process)
    }
}

fn check_p(p: f64, min: f64) -> Result<()> {
    if p >= min && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("p = {p} must be at least {min}")))
    }
}

fn nonempty(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        Err(Error::Config(format!("{what} must be nonempty")))
    } else {
        Ok(())
    }
}

/// A named file produced by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

/// One verdict with the artifact record that decides it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub name: String,
    pub holds: bool,
    /// `file:line` of the deciding record (first failure when failing).
    pub record: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub generator: String,
    pub verdicts: Vec<VerdictRecord>,
    /// Provenance of each numeric claim, keyed by artifact.
    pub provenance: Vec<(String, String)>,
    pub samples: usize,
    pub outputs: serde_json::Value,
    pub artifacts: Vec<String>,
}

impl RunReport {
    pub fn all_hold(&self) -> bool {
        self.verdicts.iter().all(|v| v.holds)
    }

    pub fn first_failure(&self) -> Option<&VerdictRecord> {
        self.verdicts.iter().find(|v| !v.holds)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).unwrap_or_default() + "\n"
    }
}

struct Builder {
    artifacts: Vec<Artifact>,
    verdicts: Vec<VerdictRecord>,
    provenance: Vec<(String, String)>,
    samples: usize,
}

impl Builder {
    fn csv(&mut self, name: &str, header: &str, rows: &[String]) {
        let mut s = String::with_capacity(64 * (rows.len() + 1));
        s.push_str(header);
        s.push('\n');
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        self.artifacts.push(Artifact {
            name: name.to_string(),
            contents: s,
        });
    }

    fn jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(it)?);
            s.push('\n');
        }
        self.artifacts.push(Artifact {
            name: name.to_string(),
            contents: s,
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<()> {
        self.artifacts.push(Artifact {
            name: name.to_string(),
            contents: serde_json::to_string_pretty(v)? + "\n",
        });
        Ok(())
    }

    /// `flags[i]` belongs to data line `i` (line `i + 2` of a CSV).
    fn verdict(&mut self, name: &str, file: &str, flags: &[bool], header_lines: usize) {
        let fail = flags.iter().position(|h| !h);
        let line = fail.unwrap_or(0) + 1 + header_lines;
        self.verdicts.push(VerdictRecord {
            name: name.to_string(),
            holds: fail.is_none(),
            record: format!("{file}:{line}"),
        });
    }
}

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Validates, then runs the experiment on at most `workers` threads.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    let process = config.validate()?;
    par::with_workers(config.workers, || run_validated(config, process.as_ref()))
}

fn run_validated(config: &ExperimentConfig, process: Option<&Process>) -> Result<RunOutput> {
    let seed = config.seed;
    let mut b = Builder {
        artifacts: Vec::new(),
        verdicts: Vec::new(),
        provenance: Vec::new(),
        samples: 0,
    };
    let need = || process.ok_or_else(|| Error::Config("missing process".into()));
    let outputs = match &config.experiment {
        Experiment::Coeffs {
            ns,
            p,
            kinds,
            budget,
            bounds,
        } => {
            let process = need()?;
            let mut rows = Vec::new();
            let mut flags = Vec::new();
            for kind in kinds {
                for &n in ns {
                    let e = estimate_coefficient(process, n, *p, *kind, *budget, seed, bounds)?;
                    flags.push(coefficient_consistent(&e));
                    b.samples += e.samples;
                    rows.push(e);
                }
            }
            let lines: Vec<String> = rows.iter().map(CoefficientEstimate::csv_row).collect();
            b.csv("coefficients.csv", CoefficientEstimate::CSV_HEADER, &lines);
            b.verdict(
                "estimates_below_analytic_bounds",
                "coefficients.csv",
                &flags,
                1,
            );
            b.provenance.push((
                "coefficients.csv".into(),
                "monte_carlo estimates, analytic bounds".into(),
            ));
            serde_json::json!({ "rows": rows.len() })
        }
        Experiment::BoundsCompare {
            ns,
            p,
            budget,
            bounds,
        } => {
            let process = need()?;
            let mut rows = Vec::new();
            let mut flags = Vec::new();
            for kind in [CouplingKind::Star, CouplingKind::MarkovDeltaPrime] {
                for &n in ns {
                    let e = estimate_coefficient(process, n, *p, kind, *budget, seed, bounds)?;
                    flags.push(coefficient_consistent(&e));
                    b.samples += e.samples;
                    rows.push(e.csv_row());
                }
            }
            b.csv("bounds.csv", CoefficientEstimate::CSV_HEADER, &rows);
            b.verdict("estimates_below_analytic_bounds", "bounds.csv", &flags, 1);
            if matches!(process.family(), Family::Linear(_)) {
                let wu = check_wu_vs_star(process, ns, *p, *budget, seed)?;
                let lines: Vec<String> = wu
                    .iter()
                    .map(|r| {
                        format!(
                            "{},{},{},{},{},{}",
                            r.n,
                            f(r.p),
                            f(r.wu.value),
                            f(r.star.value),
                            f(r.slack),
                            r.holds
                        )
                    })
                    .collect();
                b.csv("wu_vs_star.csv", "n,p,wu,star,slack,holds", &lines);
                b.verdict(
                    "wu_below_twice_star",
                    "wu_vs_star.csv",
                    &wu.iter().map(|r| r.holds).collect::<Vec<_>>(),
                    1,
                );
            }
            b.provenance.push((
                "bounds.csv".into(),
                "monte_carlo estimates, analytic bounds".into(),
            ));
            serde_json::json!({ "rows": 2 * ns.len() })
        }
        Experiment::RosenthalCheck {
            depths,
            paths,
            p_values,
            modes,
            rosenthal_constant,
            mc_budget,
            bounds,
        } => {
            let process = need()?;
            let opts = DecompositionOptions {
                mc_budget: *mc_budget,
            };
            let mut point_rows = Vec::new();
            let mut point_flags = Vec::new();
            let mut path_records = Vec::new();
            let mut moment_rows = Vec::new();
            let mut moment_flags = Vec::new();
            let mut provenance = Provenance::Exact;
            for &d in depths {
                let dec = build_decomposition(process, d, *paths, seed, &opts)?;
                if dec.provenance != Provenance::Exact {
                    provenance = dec.provenance;
                }
                b.samples += *paths;
                let pw = verify_pointwise(&dec);
                let tel = verify_telescoping(&dec);
                for (v, t) in pw.verdicts.iter().zip(&tel.verdicts) {
                    let holds = v.holds && t.holds;
                    point_rows.push(format!(
                        "{d},{},{},{},{}",
                        v.path_id,
                        f(v.margin_pointwise),
                        f(t.margin_telescoping),
                        holds
                    ));
                    point_flags.push(holds);
                }
                for (i, path) in dec.paths.iter().enumerate() {
                    path_records.push(serde_json::json!({
                        "d": d,
                        "path": i,
                        "max_partial_sum": path.max_partial_sum(),
                        "pointwise_rhs": path.pointwise_rhs(),
                        "telescoping_defect": path.telescoping_defect(),
                    }));
                }
                let n_max = 1usize << d;
                for &p in p_values {
                    let (d2, dp) = delta_tables(process, n_max, p, *mc_budget, seed, bounds)?;
                    let c_p = rosenthal_constant.unwrap_or_else(|| default_rosenthal_constant(p));
                    for &mode in modes {
                        let r = verify_moment_bound(&dec, &d2, &dp, p, c_p, mode)?;
                        moment_rows.push(format!(
                            "{d},{},{},{},{},{},{},{},{},{}",
                            f(p),
                            mode.label(),
                            f(r.c_p),
                            f(r.lhs.value),
                            f(r.lhs.se),
                            f(r.rhs_series),
                            f(r.rhs_levels),
                            f(r.margin_se),
                            r.holds
                        ));
                        moment_flags.push(r.holds);
                    }
                }
            }
            b.csv(
                "pointwise.csv",
                "d,path,margin_pointwise,defect_telescoping,holds",
                &point_rows,
            );
            b.verdict(
                "pointwise_and_telescoping",
                "pointwise.csv",
                &point_flags,
                1,
            );
            b.jsonl("paths.jsonl", &path_records)?;
            if !p_values.is_empty() {
                b.csv(
                    "moment.csv",
                    "d,p,mode,c_p,lhs,lhs_se,rhs_series,rhs_levels,margin_se,holds",
                    &moment_rows,
                );
                b.verdict("moment_bound", "moment.csv", &moment_flags, 1);
            }
            b.provenance.push((
                "pointwise.csv".into(),
                serde_json::to_value(provenance)?
                    .as_str()
                    .unwrap_or("")
                    .to_string(),
            ));
            serde_json::json!({ "paths": paths, "slack": EXACT_SLACK })
        }
        Experiment::KmtPipeline {
            p,
            beta_blk,
            k_max,
            ensemble,
            r,
            alpha,
            sigma2: s2,
            decay,
            mc_budget,
        } => {
            let process = need()?;
            let schedule = KmtSchedule::new(*p, *beta_blk, *k_max)?;
            let block_opts = BlockOptions {
                mc_budget: *mc_budget,
            };
            let sigma = match s2 {
                Some(s) => {
                    let est = sigma2(process, s.lag, s.batch_len, s.ensemble, seed)?;
                    b.samples += s.ensemble;
                    b.json("sigma2.json", &est)?;
                    let v = est.series.mean.max(0.0).sqrt();
                    let se = if v > 0.0 {
                        est.series.se / (2.0 * v)
                    } else {
                        est.series.se.sqrt()
                    };
                    Some((v, se))
                }
                None => None,
            };
            let schedule_rows: Vec<String> = (1..=*k_max)
                .map(|k| format!("{k},{},{}", f(schedule.truncation(k)), schedule.block(k)))
                .collect();
            b.csv("schedule.csv", "k,truncation,block", &schedule_rows);
            let mut nu_rows = Vec::new();
            let mut cov_flags = Vec::new();
            if let Some(k0) = schedule.k0() {
                for k in k0.max(2)..=*k_max {
                    let m = schedule.block(k);
                    let blocks = build_blocks(
                        process,
                        &schedule,
                        k,
                        *ensemble,
                        Some(2 * m),
                        seed,
                        &block_opts,
                    )?;
                    let nu = nu_k(&blocks)?;
                    let cov = covariance_truncation_check(
                        process,
                        schedule.truncation(k),
                        m,
                        *ensemble,
                        seed,
                    )?;
                    cov_flags.push(cov.holds);
                    nu_rows.push(format!(
                        "{k},{m},{},{},{},{},{},{},{}",
                        f(nu.mean),
                        f(nu.se),
                        f(nu.ci95),
                        f(ell_k(k, *p)?),
                        f(cov.diff.mean),
                        f(cov.diff.se),
                        f(cov.bound)
                    ));
                }
            }
            b.csv(
                "nu.csv",
                "k,m,nu,se,ci95,ell,cov_trunc_diff,cov_trunc_se,cov_trunc_bound",
                &nu_rows,
            );
            b.verdict("covariance_truncation", "nu.csv", &cov_flags, 1);
            let blw = check_blw_conditions(
                process,
                &schedule,
                &BlwOptions {
                    alpha: *alpha,
                    r: *r,
                    ensemble: *ensemble,
                    sigma,
                    blocks: block_opts,
                },
                seed,
            )?;
            b.samples += *ensemble * (*k_max);
            b.csv(
                "conditions.csv",
                &format!("condition,{}", ConditionTable::CSV_HEADER),
                &condition_rows(&blw.tables()),
            );
            b.provenance
                .push(("conditions.csv".into(), "finite-k diagnostic".into()));
            let mut out = serde_json::json!({ "k0": blw.k0, "notes": blw.notes, "verdicts": blw.tables().map(|t| (t.name.clone(), t.verdict)) });
            if let Some(decay) = decay {
                let rep = check_delta_prime_conditions(decay, &schedule, *r)?;
                b.csv(
                    "delta_prime_conditions.csv",
                    &format!("condition,{}", ConditionTable::CSV_HEADER),
                    &condition_rows(&rep.tables()),
                );
                let flags: Vec<bool> = rep
                    .tables()
                    .iter()
                    .map(|t| {
                        matches!(
                            t.verdict,
                            crate::kmt::Verdict::Convergent | crate::kmt::Verdict::IdenticallyZero
                        )
                    })
                    .collect();
                b.verdicts.push(VerdictRecord {
                    name: "delta_prime_conditions".into(),
                    holds: flags.iter().all(|x| *x),
                    record: "delta_prime_conditions.csv:2".into(),
                });
                out["delta_prime"] = serde_json::to_value(
                    rep.tables()
                        .map(|t| (t.name.clone(), t.verdict, t.label.clone())),
                )?;
            }
            out
        }
        Experiment::Rates { p, gamma, beta_mod } => {
            let cert = feasibility(*p, *gamma)?;
            b.json("certificate.json", &cert)?;
            let sz = sigma_zero_check(*p, *gamma)?;
            let thresholds = beta_mod.map(|bm| linear_thresholds(*p, bm)).transpose()?;
            b.provenance
                .push(("certificate.json".into(), "exact".into()));
            serde_json::json!({ "certificate": cert, "sigma_zero": sz, "thresholds": thresholds })
        }
        Experiment::Sigma2 {
            lag,
            batch_len,
            ensemble,
            expected,
        } => {
            let process = need()?;
            let est = sigma2(process, *lag, *batch_len, *ensemble, seed)?;
            b.samples += *ensemble;
            b.json("sigma2.json", &est)?;
            b.verdicts.push(VerdictRecord {
                name: "estimators_agree".into(),
                holds: !est.flagged,
                record: "sigma2.json:1".into(),
            });
            if let Some((value, tol)) = expected {
                let se = (est.series.se.powi(2) + est.batch.se.powi(2))
                    .sqrt()
                    .max(est.series.se);
                b.verdicts.push(VerdictRecord {
                    name: "matches_expected".into(),
                    holds: (est.series.mean - value).abs() <= tol * se,
                    record: "sigma2.json:1".into(),
                });
            }
            b.provenance
                .push(("sigma2.json".into(), "monte_carlo".into()));
            serde_json::to_value(&est)?
        }
    };
    let report = RunReport {
        experiment: config.experiment.name().to_string(),
        config_hash: config.hash(),
        seed,
        generator: crate::rng::GENERATOR_NAME.to_string(),
        verdicts: b.verdicts,
        provenance: b.provenance,
        samples: b.samples,
        outputs,
        artifacts: b.artifacts.iter().map(|a| a.name.clone()).collect(),
    };
    Ok(RunOutput {
        report,
        artifacts: b.artifacts,
    })
}

/// A direct estimate is consistent when its lower confidence limit stays
/// below the analytic bound. `2 ‖X_n - X_n^*‖_p` only bounds `δ'_p(n)` from
/// above, so it is never tested.
fn coefficient_consistent(e: &CoefficientEstimate) -> bool {
    if e.kind == CouplingKind::MarkovDeltaPrime && e.n >= 1 {
        return true;
    }
    match &e.analytic_bound {
        Some(bound) => e.estimate - e.ci95 <= bound.value * (1.0 + 1e-12) + 1e-15,
        None => true,
    }
}

fn delta_tables(
    process: &Process,
    n_max: usize,
    p: f64,
    mc_budget: Option<usize>,
    seed: u64,
    bounds: &BoundOptions,
) -> Result<(DeltaStarTable, DeltaStarTable)> {
    let analytic = analytic_delta_star(process, n_max, 2.0, bounds)
        .and_then(|a| Ok((a, analytic_delta_star(process, n_max, p, bounds)?)));
    match (analytic, mc_budget) {
        (Ok(t), _) => Ok(t),
        (Err(Error::MissingEntry(_)), Some(budget)) => Ok((
            estimate_delta_star(process, n_max, 2.0, budget, seed, bounds)?,
            estimate_delta_star(process, n_max, p, budget, seed, bounds)?,
        )),
        (Err(e), _) => Err(e),
    }
}

fn condition_rows(tables: &[&ConditionTable]) -> Vec<String> {
    tables
        .iter()
        .flat_map(|t| {
            t.csv_rows()
                .into_iter()
                .map(move |r| format!("{},{r}", t.name))
        })
        .collect()
}

/// Writes `summary.json` and every artifact into `dir`.
pub fn write_artifacts(out: &RunOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for a in &out.artifacts {
        std::fs::write(dir.join(&a.name), &a.contents)?;
    }
    std::fs::write(dir.join("summary.json"), out.summary_json())?;
    Ok(())
}

/// Analytic δ' bound at lag `n`, for reporting.
pub fn analytic_bound_at(process: &Process, n: usize, p: f64) -> Result<Option<f64>> {
    Ok(analytic_delta_prime(process, n, p, &BoundOptions::default())?.map(|b| b.value))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROSENTHAL: &str = r#"{
        "experiment": "rosenthal-check",
        "depths": [3],
        "paths": 20,
        "p_values": [3.0],
        "process": {
            "family": {"kind": "torus", "matrix": [[2]], "gamma": [[0], [1]]},
            "observable": {"kind": "trig", "terms": [{"freq": [1], "cos": 1.0}]}
        },
        "seed": 42
    }"#;

    #[test]
    fn rates_certificate() {
        let c = ExperimentConfig::from_json(r#"{"experiment": "rates", "p": 4.0, "gamma": 1.5}"#)
            .unwrap();
        let out = run(&c).unwrap();
        assert!(out.report.all_hold());
        assert_eq!(
            out.report.outputs["certificate"]["feasible"],
            serde_json::Value::Bool(true)
        );
    }

    #[test]
    fn rosenthal_config_runs() {
        let c = ExperimentConfig::from_json(ROSENTHAL).unwrap();
        let out = run(&c).unwrap();
        assert!(out.report.all_hold(), "{:?}", out.report.verdicts);
        let csv = &out
            .artifacts
            .iter()
            .find(|a| a.name == "pointwise.csv")
            .unwrap()
            .contents;
        assert_eq!(csv.lines().count(), 21);
    }

    #[test]
    fn hash_ignores_workers() {
        let mut c = ExperimentConfig::from_json(ROSENTHAL).unwrap();
        let h = c.hash();
        c.workers = Some(8);
        assert_eq!(h, c.hash());
        c.seed = 43;
        assert_ne!(h, c.hash());
    }

    #[test]
    fn schema_lists_every_experiment() {
        let schema: serde_json::Value = serde_json::from_str(include_str!(
            "../../../schema/experiment-config.schema.json"
        ))
        .unwrap();
        let names = schema["properties"]["experiment"]["enum"]
            .as_array()
            .unwrap();
        for e in [
            r#"{"experiment": "rates", "p": 3.0, "gamma": 1.0}"#,
            ROSENTHAL,
        ] {
            let c = ExperimentConfig::from_json(e).unwrap();
            assert!(names.iter().any(|n| n == c.experiment.name()));
        }
        assert_eq!(names.len(), 6);
    }

    #[test]
    fn malformed_family_is_rejected() {
        let bad = ROSENTHAL.replace(
            r#"{"kind": "torus", "matrix": [[2]], "gamma": [[0], [1]]}"#,
            r#"{"kind": "piecewise_affine", "slopes": [0.5, 0.4], "intercepts": [0.0, 0.5]}"#,
        );
        let c = ExperimentConfig::from_json(&bad).unwrap();
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::from_json(r#"{"experiment": "rates", "p": 4.0}"#).is_err());
        assert!(ExperimentConfig::from_json(
            r#"{"experiment": "rates", "p": 4.0, "gamma": 1.5, "sede": 1}"#
        )
        .is_err());
    }
}
