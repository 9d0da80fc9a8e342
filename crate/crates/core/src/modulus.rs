//! Moduli of continuity `ω_{p,f}`, `ω_{∞,f}` and diameters of contracted cubes.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::RwLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observable::{reduce, Builtin, Domain, Observable, PiecewisePolynomial, TrigPolynomial};

/// Grid size of the sup-norm modulus search.
pub const GRID_POINTS: usize = 1 << 14;

/// Points of the translation-difference quadrature.
pub const QUADRATURE_POINTS: usize = 1 << 12;

/// Shifts examined by the translation-difference quadrature.
const SHIFT_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModulusMethod {
    ClosedForm,
    GridSupremum,
    Quadrature,
    Lipschitz,
}

/// One evaluation of a modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusValue {
    pub value: f64,
    /// `false` when `value` is only a lower estimate of the supremum.
    pub certified: bool,
    pub method: ModulusMethod,
    /// Quadrature error estimate (zero for closed forms).
    pub error: f64,
}

impl ModulusValue {
    fn exact(value: f64, method: ModulusMethod) -> Self {
        Self {
            value,
            certified: true,
            method,
            error: 0.0,
        }
    }
}

/// Order of a modulus: `Some(p)` or `None` for the sup norm.
pub type Order = Option<f64>;

fn check_delta(delta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::OutOfRange(format!("δ = {delta} outside [0, 1]")));
    }
    Ok(())
}

/// Per-frequency bound `Σ 2|c_k| sin(π min(|k|δ, 1/2))`; exact for one term.
pub fn trig_omega_inf(t: &TrigPolynomial, delta: f64) -> f64 {
    t.merged()
        .iter()
        .map(|(k, re, im)| {
            let norm = k.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            2.0 * re.hypot(*im) * (PI * (norm * delta).min(0.5)).sin()
        })
        .sum()
}

/// `sup_{|x|<=δ} ‖f(·+x) - f‖_2` bound from Parseval.
pub fn trig_omega_2(t: &TrigPolynomial, delta: f64) -> f64 {
    t.merged()
        .iter()
        .map(|(k, re, im)| {
            let norm = k.iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            let s = (PI * (norm * delta).min(0.5)).sin();
            2.0 * (re * re + im * im) * s * s
        })
        .sum::<f64>()
        .sqrt()
}

/// `ω_p` from `ω_2` and `ω_∞` by Hölder interpolation.
pub fn interpolate_p(p: f64, omega_2: f64, omega_inf: f64) -> f64 {
    if p <= 2.0 {
        omega_2
    } else {
        omega_inf.min(omega_2.powf(2.0 / p) * omega_inf.powf(1.0 - 2.0 / p))
    }
}

/// Sliding-window supremum of `|f(x) - f(y)|` over grid pairs at most `w`
/// apart, periodic or not.
fn window_oscillation(values: &[f64], w: usize, periodic: bool) -> f64 {
    use std::collections::VecDeque;
    let n = values.len();
    if w == 0 || n == 0 {
        return 0.0;
    }
    let ext: Vec<f64> = if periodic {
        // values[0..n] covers [0, 1); wrap the first w points
        values
            .iter()
            .chain(values.iter().take(w.min(n)))
            .copied()
            .collect()
    } else {
        values.to_vec()
    };
    let mut best: f64 = 0.0;
    let mut maxq: VecDeque<usize> = VecDeque::new();
    let mut minq: VecDeque<usize> = VecDeque::new();
    for (i, &v) in ext.iter().enumerate() {
        while maxq.back().is_some_and(|&j| ext[j] <= v) {
            maxq.pop_back();
        }
        maxq.push_back(i);
        while minq.back().is_some_and(|&j| ext[j] >= v) {
            minq.pop_back();
        }
        minq.push_back(i);
        while maxq.front().is_some_and(|&j| j + w < i) {
            maxq.pop_front();
        }
        while minq.front().is_some_and(|&j| j + w < i) {
            minq.pop_front();
        }
        best = best.max(ext[*maxq.front().unwrap()] - ext[*minq.front().unwrap()]);
    }
    best
}

/// Grid supremum of a one-dimensional function, with a Lipschitz certificate
/// when a constant is known.
pub fn grid_omega_inf<F: Fn(f64) -> f64>(
    f: F,
    delta: f64,
    periodic: bool,
    lipschitz: Option<f64>,
) -> ModulusValue {
    if delta == 0.0 {
        return ModulusValue::exact(0.0, ModulusMethod::GridSupremum);
    }
    let n = GRID_POINTS;
    let s = 1.0 / n as f64;
    let values: Vec<f64> = if periodic {
        (0..n).map(|i| f(i as f64 * s)).collect()
    } else {
        (0..=n).map(|i| f(i as f64 * s)).collect()
    };
    let w = ((delta / s).floor() as usize + 2).min(n);
    let grid = window_oscillation(&values, w, periodic);
    match lipschitz {
        Some(l) => ModulusValue {
            value: (grid + 2.0 * l * s).min(l * delta),
            certified: true,
            method: if l * delta <= grid + 2.0 * l * s {
                ModulusMethod::Lipschitz
            } else {
                ModulusMethod::GridSupremum
            },
            error: 0.0,
        },
        None => ModulusValue {
            value: window_oscillation(&values, (delta / s).floor() as usize, periodic),
            certified: false,
            method: ModulusMethod::GridSupremum,
            error: 0.0,
        },
    }
}

/// `sup_{0<=t<=δ} (∫_0^1 |f(x+t) - f(x)|^p dx)^{1/p}` on the circle by the
/// midpoint rule, with the difference to the half-resolution rule as error.
pub fn quadrature_omega_p<F: Fn(f64) -> f64>(f: F, p: f64, delta: f64) -> ModulusValue {
    if delta == 0.0 {
        return ModulusValue::exact(0.0, ModulusMethod::Quadrature);
    }
    let norm = |t: f64, n: usize| -> f64 {
        let h = 1.0 / n as f64;
        let mut acc = crate::stats::CompensatedSum::new();
        for i in 0..n {
            let x = (i as f64 + 0.5) * h;
            acc.add((f(reduce(x + t)) - f(x)).abs().powf(p));
        }
        (acc.value() * h).powf(1.0 / p)
    };
    let mut best: f64 = 0.0;
    let mut err: f64 = 0.0;
    for k in 1..=SHIFT_POINTS {
        let t = delta * k as f64 / SHIFT_POINTS as f64;
        let fine = norm(t, QUADRATURE_POINTS);
        let coarse = norm(t, QUADRATURE_POINTS / 2);
        if fine > best {
            best = fine;
            err = (fine - coarse).abs() / 3.0;
        }
    }
    ModulusValue {
        value: best,
        certified: false,
        method: ModulusMethod::Quadrature,
        error: err,
    }
}

fn piecewise_omega_inf(p: &PiecewisePolynomial, delta: f64, periodic: bool) -> ModulusValue {
    let lip = if p.max_jump(periodic) <= 1e-12 {
        Some(p.derivative_bound())
    } else {
        None
    };
    grid_omega_inf(|x| p.eval(x), delta, periodic, lip)
}

/// `ω_{∞,h}(δ)` (certified upper value where possible).
pub fn omega_inf(observable: &Observable, domain: Domain, delta: f64) -> Result<ModulusValue> {
    check_delta(delta)?;
    let periodic = matches!(domain, Domain::Torus(_));
    Ok(match observable {
        Observable::Trig(t) => {
            let v = trig_omega_inf(t, delta);
            ModulusValue {
                value: v,
                certified: true,
                method: ModulusMethod::ClosedForm,
                error: 0.0,
            }
        }
        Observable::Piecewise(p) => piecewise_omega_inf(p, delta, periodic),
        Observable::Builtin { function } => match function {
            Builtin::Identity | Builtin::Abs => {
                ModulusValue::exact(delta, ModulusMethod::ClosedForm)
            }
            Builtin::Power { beta } => {
                ModulusValue::exact(delta.powf(*beta), ModulusMethod::ClosedForm)
            }
        },
        Observable::Lipschitz(l) => {
            if l.dim == 1 {
                grid_omega_inf(|x| (l.f)(&[x]), delta, periodic, Some(l.lipschitz))
            } else {
                ModulusValue::exact(l.lipschitz * delta, ModulusMethod::Lipschitz)
            }
        }
    })
}

/// `ω_{p,h}(δ)` on the torus.
pub fn omega_p(
    observable: &Observable,
    domain: Domain,
    p: f64,
    delta: f64,
) -> Result<ModulusValue> {
    check_delta(delta)?;
    if !(p >= 1.0) {
        return Err(Error::OutOfRange(format!("p = {p} must be at least 1")));
    }
    let inf = omega_inf(observable, domain, delta)?;
    match observable {
        Observable::Trig(t) => Ok(ModulusValue {
            value: interpolate_p(p, trig_omega_2(t, delta), inf.value),
            certified: true,
            method: ModulusMethod::ClosedForm,
            error: 0.0,
        }),
        Observable::Piecewise(pp) if domain.dim() == 1 => {
            let q = quadrature_omega_p(|x| pp.eval(x), p, delta);
            // the sup-norm value dominates when certified
            if inf.certified && inf.value <= q.value {
                Ok(inf)
            } else {
                Ok(q)
            }
        }
        Observable::Lipschitz(l) if l.dim == 1 => {
            let q = quadrature_omega_p(|x| (l.f)(&[x]), p, delta);
            Ok(if inf.value <= q.value + q.error {
                inf
            } else {
                q
            })
        }
        _ => Ok(inf),
    }
}

/// Cached modulus evaluator for one observable and order.
#[derive(Debug)]
pub struct ModulusEvaluator {
    observable: Observable,
    domain: Domain,
    order: Order,
    cache: RwLock<HashMap<u64, ModulusValue>>,
}

impl ModulusEvaluator {
    pub fn new(observable: Observable, domain: Domain, order: Order) -> Self {
        Self {
            observable,
            domain,
            order,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn order(&self) -> Order {
        self.order
    }

    pub fn omega(&self, delta: f64) -> Result<ModulusValue> {
        check_delta(delta)?;
        let key = delta.to_bits();
        if let Some(v) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let v = match self.order {
            None => omega_inf(&self.observable, self.domain, delta)?,
            Some(p) => omega_p(&self.observable, self.domain, p, delta)?,
        };
        self.cache.write().expect("cache lock").insert(key, v);
        Ok(v)
    }

    /// Bound for arguments beyond one: the modulus saturates at `ω(1)`
    /// on the torus and the interval.
    pub fn omega_clamped(&self, delta: f64) -> Result<ModulusValue> {
        self.omega(delta.clamp(0.0, 1.0))
    }
}

/// Diameter of `A^{-n}[0,1]^m`, by enumerating `A^{-n} w` over `w ∈ {±1}^m`.
pub fn cube_diameter(matrix: &[Vec<i64>], n: usize) -> Result<f64> {
    let m = matrix.len();
    if m == 0 || matrix.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidFamily("matrix must be square".into()));
    }
    if m > 20 {
        return Err(Error::ResourceGuard(format!(
            "cube diameter enumerates 2^{m} vertices"
        )));
    }
    let a = DMatrix::from_fn(m, m, |i, j| matrix[i][j] as f64);
    let inv = a.try_inverse().ok_or(Error::SingularMatrix)?;
    let mut power = DMatrix::<f64>::identity(m, m);
    for _ in 0..n {
        power = &power * &inv;
    }
    let mut best: f64 = 0.0;
    // w and -w give the same norm
    for mask in 0..(1u64 << (m - 1)) {
        let w = nalgebra::DVector::from_fn(m, |i, _| if (mask >> i) & 1 == 1 { -1.0 } else { 1.0 });
        best = best.max((&power * w).norm());
    }
    Ok(best)
}

/// Certified transfer of `β(2^{-n}) <= C n^{-γ}` to base `a`:
/// returns `(C (2ℓ)^γ, ℓ)` with `ℓ = min{ℓ >= 1 : a^ℓ <= 1/2}`, so that
/// `β(a^n) <= C (2ℓ)^γ n^{-γ}` for `n >= 2ℓ`.
pub fn decay_transfer(gamma: f64, a: f64, c: f64) -> Result<(f64, usize)> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::OutOfRange(format!(
            "base a = {a} must lie in (0, 1)"
        )));
    }
    let mut ell = 1usize;
    let mut pow = a;
    while pow > 0.5 {
        ell += 1;
        pow *= a;
    }
    Ok((c * (2.0 * ell as f64).powf(gamma), ell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_sup_modulus() {
        let c = Observable::cosine();
        for &d in &[0.0, 0.01, 0.1, 0.25, 0.5] {
            let v = omega_inf(&c, Domain::Torus(1), d).unwrap().value;
            assert!((v - 2.0 * (PI * d).sin()).abs() < 1e-15);
        }
    }

    #[test]
    fn cube_diameters() {
        assert!((cube_diameter(&[vec![2]], 3).unwrap() - 0.125).abs() < 1e-15);
        let d = cube_diameter(&[vec![2, 0], vec![0, 2]], 2).unwrap();
        assert!((d - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert!(cube_diameter(&[vec![1, 1], vec![1, 1]], 1).is_err());
    }

    #[test]
    fn decay_transfer_lengths() {
        assert_eq!(decay_transfer(1.0, 0.5, 1.0).unwrap(), (2.0, 1));
        assert_eq!(decay_transfer(1.0, 0.9, 1.0).unwrap().1, 7);
        assert_eq!(decay_transfer(1.0, 0.25, 1.0).unwrap().1, 1);
        assert!(decay_transfer(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn delta_outside_unit_interval() {
        assert!(omega_inf(&Observable::cosine(), Domain::Torus(1), 1.5).is_err());
    }

    #[test]
    fn evaluator_caches_identically() {
        let e = ModulusEvaluator::new(Observable::cosine(), Domain::Torus(1), Some(3.0));
        let a = e.omega(0.1).unwrap();
        let b = e.omega(0.1).unwrap();
        assert_eq!(a, b);
        assert_eq!(e.omega(0.0).unwrap().value, 0.0);
    }

    #[test]
    fn tent_grid_modulus_is_lipschitz() {
        let tent =
            PiecewisePolynomial::new(vec![0.0, 0.5, 1.0], vec![vec![0.0, 1.0], vec![0.5, -1.0]])
                .unwrap();
        let o = Observable::Piecewise(tent);
        let v = omega_inf(&o, Domain::Interval, 0.1).unwrap();
        assert!(v.certified && v.value <= 0.1 + 1e-15 && v.value >= 0.1 - 1e-3);
    }

    proptest! {
        #[test]
        fn sup_modulus_monotone_and_subadditive(d1 in 0.0f64..0.5, d2 in 0.0f64..0.5) {
            let t = TrigPolynomial::new(
                vec![
                    crate::observable::TrigTerm { freq: vec![1], cos: 1.0, sin: 0.3 },
                    crate::observable::TrigTerm { freq: vec![3], cos: -0.5, sin: 0.0 },
                ],
                0.0,
            );
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(trig_omega_inf(&t, lo) <= trig_omega_inf(&t, hi) + 1e-15);
            prop_assert!(trig_omega_inf(&t, d1 + d2) <= trig_omega_inf(&t, d1) + trig_omega_inf(&t, d2) + 1e-12);
            prop_assert!(trig_omega_2(&t, d1) <= trig_omega_inf(&t, d1) + 1e-15);
        }
    }
}
