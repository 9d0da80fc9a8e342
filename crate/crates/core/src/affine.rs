//! Affine maps `u -> L u + b` used for exact propagation of windows.

use serde::{Deserialize, Serialize};

/// `u -> lin * u + off` in dimension `dim` (row-major `lin`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineState {
    pub dim: usize,
    pub lin: Vec<f64>,
    pub off: Vec<f64>,
}

impl AffineState {
    pub fn identity(dim: usize) -> Self {
        let mut lin = vec![0.0; dim * dim];
        for i in 0..dim {
            lin[i * dim + i] = 1.0;
        }
        Self {
            dim,
            lin,
            off: vec![0.0; dim],
        }
    }

    pub fn scalar(a: f64, b: f64) -> Self {
        Self {
            dim: 1,
            lin: vec![a],
            off: vec![b],
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| self.off[i] + (0..d).map(|j| self.lin[i * d + j] * u[j]).sum::<f64>())
            .collect()
    }

    /// `self ∘ inner`: `(A₂, B₂) ∘ (A₁, B₁) = (A₂A₁, A₂B₁ + B₂)`.
    pub fn compose(&self, inner: &AffineState) -> AffineState {
        let d = self.dim;
        assert_eq!(d, inner.dim);
        let mut lin = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                lin[i * d + j] = (0..d)
                    .map(|k| self.lin[i * d + k] * inner.lin[k * d + j])
                    .sum();
            }
        }
        let off = (0..d)
            .map(|i| {
                self.off[i]
                    + (0..d)
                        .map(|k| self.lin[i * d + k] * inner.off[k])
                        .sum::<f64>()
            })
            .collect();
        AffineState { dim: d, lin, off }
    }

    /// Left-multiplies by `(m, shift)`: the state becomes `m (L u + b) + shift`.
    pub fn push(&mut self, m: &[f64], shift: &[f64]) {
        let d = self.dim;
        let mut lin = vec![0.0; d * d];
        let mut off = vec![0.0; d];
        for i in 0..d {
            for j in 0..d {
                lin[i * d + j] = (0..d).map(|k| m[i * d + k] * self.lin[k * d + j]).sum();
            }
            off[i] = shift[i] + (0..d).map(|k| m[i * d + k] * self.off[k]).sum::<f64>();
        }
        self.lin = lin;
        self.off = off;
    }

    /// Scalar fast path of [`push`](Self::push).
    #[inline]
    pub fn push_scalar(&mut self, a: f64, b: f64) {
        self.lin[0] *= a;
        self.off[0] = a * self.off[0] + b;
    }

    /// `Lᵀ k` for an integer frequency vector.
    pub fn transpose_apply(&self, k: &[i64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|j| (0..d).map(|i| self.lin[i * d + j] * k[i] as f64).sum())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn composition_matches_sequential_application(
            a1 in proptest::collection::vec(-2.0f64..2.0, 4),
            b1 in proptest::collection::vec(-2.0f64..2.0, 2),
            a2 in proptest::collection::vec(-2.0f64..2.0, 4),
            b2 in proptest::collection::vec(-2.0f64..2.0, 2),
            u in proptest::collection::vec(-1.0f64..1.0, 2),
        ) {
            let s1 = AffineState { dim: 2, lin: a1, off: b1 };
            let s2 = AffineState { dim: 2, lin: a2, off: b2 };
            let direct = s2.apply(&s1.apply(&u));
            let composed = s2.compose(&s1).apply(&u);
            for (x, y) in direct.iter().zip(&composed) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let mut pushed = s1.clone();
            pushed.push(&s2.lin, &s2.off);
            prop_assert_eq!(pushed.apply(&u).len(), 2);
            for (x, y) in pushed.apply(&u).iter().zip(&composed) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_push() {
        let mut s = AffineState::identity(1);
        s.push_scalar(0.5, 0.5);
        s.push_scalar(0.5, 0.0);
        assert_eq!(s, AffineState::scalar(0.25, 0.25));
    }
}
