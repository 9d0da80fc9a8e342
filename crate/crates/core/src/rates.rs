//! Exponent thresholds and the feasibility of the block-size system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimal slack the witness must leave in every strict inequality.
pub const WITNESS_MARGIN: f64 = 1e-9;

fn check_p(p: f64) -> Result<()> {
    if p > 2.0 && p.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("p = {p} must exceed 2")))
    }
}

/// `κ(p) = ((p-2)√(p²+12p+4) + p² + 4p - 4) / (8p)`.
pub fn kappa(p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(((p - 2.0) * (p * p + 12.0 * p + 4.0).sqrt() + p * p + 4.0 * p - 4.0) / (8.0 * p))
}

/// `τ(p) = ((p-2)√(p²+20p+4) + p² - 4) / (8p)`.
pub fn tau(p: f64) -> Result<f64> {
    check_p(p)?;
    Ok(((p - 2.0) * (p * p + 20.0 * p + 4.0).sqrt() + p * p - 4.0) / (8.0 * p))
}

/// `4pγ² - (p² + 4p - 4)γ + 3p - 4`.
pub fn quadratic(p: f64, gamma: f64) -> f64 {
    4.0 * p * gamma * gamma - (p * p + 4.0 * p - 4.0) * gamma + 3.0 * p - 4.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasibility {
    QuadraticNonPositive,
    SideCondition,
    IntervalEmpty,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub beta: f64,
    pub r: f64,
}

/// Margins of `(β(2γ-1) - (p-2), 1 + γp - r, 2(r-p) - β(r-2), r - p, 2 - β)`.
pub fn condition_margins(p: f64, gamma: f64, w: Witness) -> [f64; 5] {
    [
        w.beta * (2.0 * gamma - 1.0) - (p - 2.0),
        1.0 + gamma * p - w.r,
        2.0 * (w.r - p) - w.beta * (w.r - 2.0),
        w.r - p,
        2.0 - w.beta,
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub p: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub tau: f64,
    pub feasible: bool,
    pub witness: Option<Witness>,
    pub reason: Option<Infeasibility>,
    pub quadratic: f64,
}

/// Decides whether some `β ∈ (0, 2]` and `r > p` satisfy
/// `p - 2 < β(2γ - 1)`, `r < 1 + γp` and `β(r - 2) < 2(r - p)`, and returns
/// the midpoint witness when they do.
pub fn feasibility(p: f64, gamma: f64) -> Result<RateCertificate> {
    check_p(p)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("γ = {gamma} must be positive")));
    }
    let q = quadratic(p, gamma);
    let mut cert = RateCertificate {
        p,
        gamma,
        kappa: kappa(p)?,
        tau: tau(p)?,
        feasible: false,
        witness: None,
        reason: None,
        quadratic: q,
    };
    if !(4.0 * gamma > p) {
        cert.reason = Some(Infeasibility::SideCondition);
        return Ok(cert);
    }
    if !(q > 0.0) {
        cert.reason = Some(Infeasibility::QuadraticNonPositive);
        return Ok(cert);
    }
    let r_lo = p.max((4.0 * p * gamma - 4.0 * p + 4.0) / (4.0 * gamma - p));
    let r_hi = 1.0 + gamma * p;
    let r = 0.5 * (r_lo + r_hi);
    let beta_lo = (p - 2.0) / (2.0 * gamma - 1.0);
    let beta_hi = (2.0 * (r - p) / (r - 2.0)).min(2.0);
    let w = Witness {
        beta: 0.5 * (beta_lo + beta_hi),
        r,
    };
    let ok = r_lo < r_hi
        && beta_lo > 0.0
        && condition_margins(p, gamma, w)
            .iter()
            .all(|m| *m >= WITNESS_MARGIN);
    if ok {
        cert.feasible = true;
        cert.witness = Some(w);
    } else {
        cert.reason = Some(Infeasibility::IntervalEmpty);
    }
    Ok(cert)
}

/// Thresholds on the coefficient decay exponent of a linear process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearThresholds {
    pub p: f64,
    pub beta_mod: f64,
    /// `2/β`, the single-coordinate condition for `p <= 4`.
    pub blw_small_p: f64,
    /// `(τ(p) + 1)/β`, the single-coordinate condition for `p > 4`.
    pub blw_large_p: f64,
    /// The one that applies at this `p`.
    pub blw: f64,
    /// `κ(p)/β + 1/2`.
    pub new_threshold: f64,
    pub new_below_blw: bool,
}

pub fn linear_thresholds(p: f64, beta_mod: f64) -> Result<LinearThresholds> {
    check_p(p)?;
    if !(beta_mod > 0.0 && beta_mod <= 1.0) {
        return Err(Error::Domain(format!(
            "Hölder exponent {beta_mod} must lie in (0, 1]"
        )));
    }
    let small = 2.0 / beta_mod;
    let large = (tau(p)? + 1.0) / beta_mod;
    let blw = if p <= 4.0 { small } else { large };
    let new_threshold = kappa(p)? / beta_mod + 0.5;
    Ok(LinearThresholds {
        p,
        beta_mod,
        blw_small_p: small,
        blw_large_p: large,
        blw,
        new_threshold,
        new_below_blw: new_threshold < blw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaZeroCheck {
    pub p: f64,
    pub gamma: f64,
    /// `γ + 2/p² > 1`.
    pub summable: bool,
    /// `p√(p² + 12p + 4) > -(p² - 2p - 8)`.
    pub inequality_holds: bool,
    pub inequality_lhs: f64,
    pub inequality_rhs: f64,
}

pub fn sigma_zero_check(p: f64, gamma: f64) -> Result<SigmaZeroCheck> {
    check_p(p)?;
    let lhs = p * (p * p + 12.0 * p + 4.0).sqrt();
    let rhs = -(p * p - 2.0 * p - 8.0);
    Ok(SigmaZeroCheck {
        p,
        gamma,
        summable: gamma + 2.0 / (p * p) > 1.0,
        inequality_holds: lhs > rhs,
        inequality_lhs: lhs,
        inequality_rhs: rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_values() {
        assert!((kappa(3.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((tau(4.0).unwrap() - 1.0).abs() < 1e-12);
        let k4 = kappa(4.0).unwrap();
        assert!(k4 > 1.390 && k4 < 1.400);
        let k = kappa(2.001).unwrap();
        assert!(k > 0.5 && k < 0.501);
        assert!(matches!(kappa(2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn feasibility_examples() {
        let c = feasibility(4.0, 1.5).unwrap();
        assert!(c.feasible);
        let w = c.witness.unwrap();
        assert!(w.r > 6.0 && w.r < 7.0);
        assert!(condition_margins(4.0, 1.5, Witness { beta: 1.05, r: 6.5 })
            .iter()
            .all(|m| *m > 0.0));

        let c = feasibility(4.0, 1.3).unwrap();
        assert!(!c.feasible);
        // 16 * 1.69 - 28 * 1.3 + 8
        assert!((c.quadratic + 1.36).abs() < 1e-12);
        assert_eq!(c.reason, Some(Infeasibility::QuadraticNonPositive));

        let c = feasibility(3.0, 1.0).unwrap();
        assert!(!c.feasible);
        assert!(c.quadratic.abs() < 1e-12);
    }

    #[test]
    fn threshold_examples() {
        let t = linear_thresholds(3.0, 1.0).unwrap();
        assert!((t.blw - 2.0).abs() < 1e-15 && (t.new_threshold - 1.5).abs() < 1e-12);
        let t = linear_thresholds(4.0, 0.5).unwrap();
        assert!((t.blw - 4.0).abs() < 1e-15);
        assert!((t.new_threshold - 3.28).abs() < 0.01);
        let t = linear_thresholds(6.0, 1.0).unwrap();
        assert!((t.blw - tau(6.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(t.new_below_blw);
    }

    #[test]
    fn sigma_zero_examples() {
        assert!(!sigma_zero_check(3.0, 0.7).unwrap().summable);
        // -(p² - 2p - 8) = -(p - 4)(p + 2) vanishes at p = 4
        let s = sigma_zero_check(4.0, 1.0).unwrap();
        assert!(s.inequality_rhs.abs() < 1e-12 && s.inequality_holds);
        let s = sigma_zero_check(1.0 + 2.0 * 2f64.sqrt(), 1.0).unwrap();
        assert!((s.inequality_rhs - 1.0).abs() < 1e-12 && s.inequality_holds);
        for i in 1..=180 {
            let p = 2.0 + i as f64 * 0.1;
            let s = sigma_zero_check(p, kappa(p).unwrap()).unwrap();
            assert!(s.summable && s.inequality_holds, "p = {p}");
        }
    }

    proptest! {
        #[test]
        fn kappa_is_larger_root(p in 2.01f64..20.0) {
            let k = kappa(p).unwrap();
            let a = 4.0 * p;
            let b = -(p * p + 4.0 * p - 4.0);
            let c = 3.0 * p - 4.0;
            let root = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
            prop_assert!((k - root).abs() < 1e-12);
        }

        #[test]
        fn kappa_increasing(p in 2.01f64..20.0, h in 0.001f64..1.0) {
            prop_assert!(kappa(p + h).unwrap() > kappa(p).unwrap());
        }

        #[test]
        fn witnesses_are_valid(p in 2.01f64..12.0, gamma in 0.01f64..4.0) {
            let c = feasibility(p, gamma).unwrap();
            if let Some(w) = c.witness {
                prop_assert!(condition_margins(p, gamma, w).iter().all(|m| *m >= WITNESS_MARGIN));
                prop_assert!(gamma > c.kappa);
            }
        }
    }
}
