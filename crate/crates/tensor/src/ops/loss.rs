use crate::error::{dim_err, Result, TensorError};
use crate::tape::{expect_rank, Tape, Var};
use crate::tensor::Tensor;

/// Row-wise log-softmax in f64 with max subtraction.
fn log_softmax_row(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&v| v as f64 - lse).collect()
}

impl Tape {
    /// Mean over rows of `−log softmax(row)[target]` for `logits[n×c]`.
    pub fn softmax_cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        expect_rank(vl, 2, "softmax_cross_entropy_rows")?;
        let [n, c] = vl.shape()[..] else { unreachable!() };
        if n == 0 || c == 0 {
            return Err(TensorError::Domain("cross-entropy over an empty batch".into()));
        }
        if targets.len() != n {
            return dim_err(format!("{} targets for {n} rows", targets.len()));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::Domain(format!("target {bad} outside [0, {c})")));
        }
        let mut probs = vec![0.0f32; n * c];
        let mut total = 0.0f64;
        for (r, row) in vl.data().chunks(c).enumerate() {
            let lp = log_softmax_row(row);
            total -= lp[targets[r]];
            for (p, l) in probs[r * c..(r + 1) * c].iter_mut().zip(&lp) {
                *p = l.exp() as f32;
            }
        }
        let loss = (total / n as f64) as f32;
        let targets = targets.to_vec();
        Ok(self.push_op(
            Tensor::scalar(loss),
            &[logits],
            Box::new(move |g, _, sink| {
                let scale = g.item() / n as f32;
                let Some(dl) = sink.slot(logits) else { return };
                for r in 0..n {
                    for j in 0..c {
                        let onehot = if j == targets[r] { 1.0 } else { 0.0 };
                        dl[r * c + j] += scale * (probs[r * c + j] - onehot);
                    }
                }
            }),
        ))
    }

    /// Mean squared error between `pred` and a constant target of the same shape.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let vp = self.value(pred);
        if vp.shape() != target.shape() {
            return dim_err(format!("mse: {:?} vs {:?}", vp.shape(), target.shape()));
        }
        let n = vp.numel();
        if n == 0 {
            return Err(TensorError::Domain("mse over an empty tensor".into()));
        }
        let diff: Vec<f32> = vp.data().iter().zip(target.data()).map(|(p, t)| p - t).collect();
        let loss = diff.iter().map(|&d| (d as f64).powi(2)).sum::<f64>() / n as f64;
        Ok(self.push_op(
            Tensor::scalar(loss as f32),
            &[pred],
            Box::new(move |g, _, sink| {
                let scale = 2.0 * g.item() / n as f32;
                if let Some(dp) = sink.slot(pred) {
                    for (o, d) in dp.iter_mut().zip(&diff) {
                        *o += scale * d;
                    }
                }
            }),
        ))
    }
}
