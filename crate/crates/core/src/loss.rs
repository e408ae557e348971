//! Pairwise co-membership loss between an embedding and a partition.
//!
//! For a partition with one-hot factor `S` (so `H = S·Sᵀ`) and embedding `X`,
//!
//! ```text
//! loss = ‖H − X·Xᵀ‖²_F / n²
//!      = (Σ_c |C_c|² − 2‖Sᵀ·X‖²_F + ‖Xᵀ·X‖²_F) / n²
//! grad = 4 (X·(Xᵀ·X) − S·(Sᵀ·X)) / n²
//! ```
//!
//! None of the n×n matrices is ever formed.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Partition;
use crate::par;

/// A partition used as a pairwise training target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseTarget {
    partition: Partition,
    sq_sizes: f64,
}

impl PairwiseTarget {
    pub fn new(partition: Partition) -> Self {
        let sq_sizes = partition.sizes().iter().map(|&s| (s * s) as f64).sum();
        PairwiseTarget { partition, sq_sizes }
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn n(&self) -> usize {
        self.partition.len()
    }

    /// `‖H‖²_F`.
    pub fn h_norm_sq(&self) -> f64 {
        self.sq_sizes
    }

    /// `Sᵀ·X`: per-community row sums of `x`.
    fn community_sums(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.partition.k(), x.ncols()));
        for (i, row) in x.rows().into_iter().enumerate() {
            let mut acc = out.row_mut(self.partition.community_of(i));
            acc += &row;
        }
        out
    }

    /// Dense `H`, for tests and small inputs.
    pub fn dense(&self) -> Array2<f64> {
        let n = self.n();
        Array2::from_shape_fn((n, n), |(i, j)| {
            f64::from(self.partition.community_of(i) == self.partition.community_of(j))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub mu: f64,
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be finite and >= 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the embedding.
#[derive(Debug, Clone)]
pub struct LossEval {
    pub value: f64,
    pub grad: Array2<f64>,
}

pub fn pairwise_loss(target: &PairwiseTarget, x: ArrayView2<'_, f64>) -> Result<LossEval> {
    let n = target.n();
    if x.nrows() != n {
        return Err(Error::Shape(format!(
            "embedding has {} rows, target covers {n} nodes",
            x.nrows()
        )));
    }
    if n == 0 {
        return Ok(LossEval { value: 0.0, grad: Array2::zeros(x.raw_dim()) });
    }
    let gram = par::matmul_tn(x, x);
    let sx = target.community_sums(x);
    let scale = 1.0 / (n as f64 * n as f64);
    let gram_sq: f64 = gram.iter().map(|v| v * v).sum();
    let sx_sq: f64 = sx.iter().map(|v| v * v).sum();
    let value = ((target.h_norm_sq() - 2.0 * sx_sq + gram_sq) * scale).max(0.0);

    let mut grad = par::matmul(x, gram.view());
    let part = target.partition();
    for (i, mut row) in grad.rows_mut().into_iter().enumerate() {
        row -= &sx.row(part.community_of(i));
    }
    grad *= 4.0 * scale;
    Ok(LossEval { value, grad })
}

/// `L_M + μ·L_R`. With `hl` absent only the label term is used, and with
/// `hr` absent only the modularity term.
pub fn total_loss(
    hl: Option<&PairwiseTarget>,
    hr: Option<&PairwiseTarget>,
    x: ArrayView2<'_, f64>,
    cfg: &LossConfig,
) -> Result<LossEval> {
    let mut value = 0.0;
    let mut grad = Array2::zeros(x.raw_dim());
    if let Some(hl) = hl {
        let lm = pairwise_loss(hl, x)?;
        value += lm.value;
        grad += &lm.grad;
    }
    if let Some(hr) = hr {
        if cfg.mu != 0.0 {
            let lr = pairwise_loss(hr, x)?;
            value += cfg.mu * lr.value;
            Zip::from(&mut grad).and(&lr.grad).for_each(|g, &d| *g += cfg.mu * d);
        } else if hr.n() != x.nrows() {
            return Err(Error::Shape("label target size differs from embedding".into()));
        }
    }
    Ok(LossEval { value, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array;
    use rand::Rng;

    fn naive(target: &PairwiseTarget, x: &Array2<f64>) -> (f64, Array2<f64>) {
        let n = x.nrows() as f64;
        let diff = target.dense() - x.dot(&x.t());
        let value = diff.iter().map(|v| v * v).sum::<f64>() / (n * n);
        let grad = diff.dot(x) * (-4.0 / (n * n));
        (value, grad)
    }

    fn random_case(seed: u64, n: usize, k: usize, d: usize) -> (PairwiseTarget, Array2<f64>) {
        let mut rng = crate::seed::rng(seed);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let x = Array::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
        (PairwiseTarget::new(Partition::new(labels)), x)
    }

    #[test]
    fn perfect_embedding_zero_loss() {
        let p = Partition::new(vec![0, 0, 1, 2, 1]);
        let x = Array2::from_shape_fn((5, 3), |(i, j)| f64::from(p.community_of(i) == j));
        let t = PairwiseTarget::new(p);
        let e = pairwise_loss(&t, x.view()).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_embedding_closed_form() {
        let t = PairwiseTarget::new(Partition::new(vec![0, 0, 0, 1]));
        let e = pairwise_loss(&t, Array2::zeros((4, 2)).view()).unwrap();
        assert_abs_diff_eq!(e.value, 10.0 / 16.0, epsilon = 1e-15);
    }

    #[test]
    fn factored_matches_dense() {
        for seed in 0..20 {
            let (t, x) = random_case(seed, 10, 3, 4);
            let e = pairwise_loss(&t, x.view()).unwrap();
            let (v, g) = naive(&t, &x);
            assert_abs_diff_eq!(e.value, v, epsilon = 1e-10);
            assert_abs_diff_eq!(e.grad, g, epsilon = 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (t, x) = random_case(3, 7, 2, 3);
        let e = pairwise_loss(&t, x.view()).unwrap();
        let h = 1e-6;
        for i in 0..7 {
            for j in 0..3 {
                let mut xp = x.clone();
                xp[[i, j]] += h;
                let mut xm = x.clone();
                xm[[i, j]] -= h;
                let fd = (pairwise_loss(&t, xp.view()).unwrap().value
                    - pairwise_loss(&t, xm.view()).unwrap().value)
                    / (2.0 * h);
                let rel = (fd - e.grad[[i, j]]).abs() / fd.abs().max(e.grad[[i, j]].abs()).max(1e-8);
                assert!(rel < 1e-5, "entry ({i},{j}): fd {fd} vs {}", e.grad[[i, j]]);
            }
        }
    }

    #[test]
    fn total_loss_combinations() {
        let (hl, x) = random_case(5, 12, 3, 4);
        let (hr, _) = random_case(6, 12, 4, 4);
        let lm = pairwise_loss(&hl, x.view()).unwrap();
        let lr = pairwise_loss(&hr, x.view()).unwrap();

        let mu0 = total_loss(Some(&hl), Some(&hr), x.view(), &LossConfig { mu: 0.0 }).unwrap();
        assert_eq!(mu0.value, lm.value);

        let same = total_loss(Some(&hl), Some(&hl), x.view(), &LossConfig { mu: 1.0 }).unwrap();
        assert_eq!(same.value, 2.0 * lm.value);

        let half = total_loss(Some(&hl), Some(&hr), x.view(), &LossConfig { mu: 0.5 }).unwrap();
        assert_abs_diff_eq!(half.value, lm.value + 0.5 * lr.value, epsilon = 1e-15);
        assert_abs_diff_eq!(half.grad, &lm.grad + &(&lr.grad * 0.5), epsilon = 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t = PairwiseTarget::new(Partition::single(3));
        assert!(pairwise_loss(&t, Array2::zeros((4, 2)).view()).is_err());
        assert!(LossConfig { mu: -1.0 }.validate().is_err());
    }
}
