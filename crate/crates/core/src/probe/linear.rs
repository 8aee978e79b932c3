use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multinomial logistic-regression parameters: one weight row per tag.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbe {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Subgradient of `|x|` with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable `ln(sum(exp(row)))`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    lse(ArrayView1::from(row))
}

fn lse(row: ArrayView1<f64>) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    arg_max(ArrayView1::from(row))
}

fn arg_max(row: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl LinearProbe {
    pub fn zeros(n_tags: usize, input_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((n_tags, input_dim)),
            bias: Array1::zeros(n_tags),
        }
    }

    pub fn n_tags(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// `x · Wᵀ + b`, shape `[n, T]`.
    pub fn logits(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    /// Row-wise softmax of the logits.
    pub fn probabilities(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = self.logits(x);
        for mut row in z.axis_iter_mut(Axis(0)) {
            let lse = lse(row.view());
            row.mapv_inplace(|v| (v - lse).exp());
        }
        z
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<u32> {
        self.logits(x)
            .axis_iter(Axis(0))
            .map(|row| arg_max(row) as u32)
            .collect()
    }

    /// `λ₁ Σ|θ| + λ₂ Σθ²` over the weights; the bias is not penalized.
    pub fn penalty(&self, lambda1: f64, lambda2: f64) -> f64 {
        let (l1, l2) = self
            .weights
            .iter()
            .fold((0.0, 0.0), |(a, b), &w| (a + w.abs(), b + w * w));
        lambda1 * l1 + lambda2 * l2
    }

    fn check_batch(&self, x: &ArrayView2<f64>, tags: &[u32]) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        if x.nrows() != tags.len() {
            return Err(Error::Shape(format!(
                "{} rows but {} tags",
                x.nrows(),
                tags.len()
            )));
        }
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch width {} but probe expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if let Some(&t) = tags.iter().find(|&&t| t as usize >= self.n_tags()) {
            return Err(Error::Shape(format!(
                "tag id {t} but probe has {} tags",
                self.n_tags()
            )));
        }
        Ok(())
    }

    /// Summed negative log-likelihood over the rows.
    pub(crate) fn nll_sum(&self, x: ArrayView2<f64>, tags: &[u32]) -> f64 {
        let z = self.logits(x);
        z.axis_iter(Axis(0))
            .zip(tags)
            .map(|(row, &t)| lse(row) - row[t as usize])
            .sum()
    }

    /// Mean negative log-likelihood over the batch plus the elastic-net
    /// penalty.
    pub fn loss(&self, x: ArrayView2<f64>, tags: &[u32], lambda1: f64, lambda2: f64) -> Result<f64> {
        self.check_batch(&x, tags)?;
        Ok(self.nll_sum(x, tags) / tags.len() as f64 + self.penalty(lambda1, lambda2))
    }

    pub fn gradient(
        &self,
        x: ArrayView2<f64>,
        tags: &[u32],
        lambda1: f64,
        lambda2: f64,
    ) -> Result<ProbeGradient> {
        self.loss_and_gradient(x, tags, lambda1, lambda2).map(|(_, g)| g)
    }

    pub fn loss_and_gradient(
        &self,
        x: ArrayView2<f64>,
        tags: &[u32],
        lambda1: f64,
        lambda2: f64,
    ) -> Result<(f64, ProbeGradient)> {
        self.check_batch(&x, tags)?;
        let n = tags.len() as f64;
        // residual = softmax - onehot, scaled by 1/n
        let mut residual = self.logits(x.view());
        let mut nll = 0.0;
        for (mut row, &t) in residual.axis_iter_mut(Axis(0)).zip(tags) {
            let lse = lse(row.view());
            nll += lse - row[t as usize];
            row.mapv_inplace(|v| (v - lse).exp() / n);
            row[t as usize] -= 1.0 / n;
        }

        let mut gw = residual.t().dot(&x);
        if lambda1 != 0.0 || lambda2 != 0.0 {
            gw.zip_mut_with(&self.weights, |g, &w| {
                *g += lambda1 * sign(w) + 2.0 * lambda2 * w
            });
        }
        let gb = residual.sum_axis(Axis(0));
        let loss = nll / n + self.penalty(lambda1, lambda2);
        Ok((loss, ProbeGradient { weights: gw, bias: gb }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_model_loss_is_ln_t() {
        for t in [2usize, 4, 44] {
            let probe = LinearProbe::zeros(t, 3);
            let x = array![[1.0, -2.0, 0.5], [0.0, 3.0, 1.0]];
            let loss = probe.loss(x.view(), &[0, 1], 0.0, 0.0).unwrap();
            assert!((loss - (t as f64).ln()).abs() < 1e-12);
            // zero weights carry no penalty
            let loss = probe.loss(x.view(), &[0, 1], 0.5, 0.5).unwrap();
            assert!((loss - (t as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn margin_of_ten() {
        // correct logit exceeds the other three by 10
        let mut probe = LinearProbe::zeros(4, 1);
        probe.weights[[2, 0]] = 10.0;
        let x = array![[1.0]];
        let loss = probe.loss(x.view(), &[2], 0.0, 0.0).unwrap();
        // ln(1 + 3e^-10), written via ln_1p to stay exact at this scale
        let expected = (3.0 * (-10.0f64).exp()).ln_1p();
        assert!((loss - expected).abs() < 1e-15, "{loss} vs {expected}");
        assert!((loss - 1.3620e-4).abs() < 1e-7);
    }

    #[test]
    fn symmetric_batch_has_zero_bias_gradient() {
        let probe = LinearProbe::zeros(2, 2);
        let x = array![[1.0, 2.0], [-1.0, -2.0]];
        let g = probe.gradient(x.view(), &[0, 1], 0.0, 0.0).unwrap();
        assert!(g.bias.iter().all(|&b| b.abs() < 1e-15));
    }

    #[test]
    fn penalty_gradient_linear_in_lambda2() {
        let mut probe = LinearProbe::zeros(3, 2);
        probe.weights = array![[0.3, -0.2], [0.0, 1.5], [-0.7, 0.1]];
        let x = array![[1.0, 0.5], [0.2, -0.4]];
        let tags = [2, 0];
        let base = probe.gradient(x.view(), &tags, 0.1, 0.0).unwrap();
        let one = probe.gradient(x.view(), &tags, 0.1, 0.25).unwrap();
        let two = probe.gradient(x.view(), &tags, 0.1, 0.5).unwrap();
        let p1 = &one.weights - &base.weights;
        let p2 = &two.weights - &base.weights;
        for (a, b) in p1.iter().zip(p2.iter()) {
            assert!((2.0 * a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let probe = LinearProbe::zeros(2, 1);
        let x = array![[0.0], [0.0]];
        let g = probe.gradient(x.view(), &[0, 1], 3.0, 0.0).unwrap();
        assert_eq!(g.weights[[0, 0]], 0.0);
    }

    #[test]
    fn shape_errors() {
        let probe = LinearProbe::zeros(2, 3);
        let x = array![[1.0, 2.0]];
        assert!(matches!(probe.loss(x.view(), &[0], 0.0, 0.0), Err(Error::Shape(_))));
        let x = array![[1.0, 2.0, 3.0]];
        assert!(matches!(probe.loss(x.view(), &[0, 1], 0.0, 0.0), Err(Error::Shape(_))));
        assert!(matches!(probe.loss(x.view(), &[5], 0.0, 0.0), Err(Error::Shape(_))));
        let empty = Array2::<f64>::zeros((0, 3));
        assert!(matches!(probe.loss(empty.view(), &[], 0.0, 0.0), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
