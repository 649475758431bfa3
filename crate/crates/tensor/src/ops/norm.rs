use crate::error::{dim_err, Result};
use crate::tape::{expect_rank, Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNormConfig {
    pub eps: f32,
    pub momentum: f32,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

impl Tape {
    /// Per-channel batch normalization of `x[b×c×h×w]` with affine `gamma`, `beta`.
    ///
    /// In training mode the batch statistics normalize the input and are folded
    /// into the running buffers (unbiased variance). In eval mode the running
    /// buffers are used and left untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [f32],
        running_var: &mut [f32],
        config: BatchNormConfig,
        training: bool,
    ) -> Result<Var> {
        let vx = self.value(x);
        expect_rank(vx, 4, "batch_norm2d")?;
        let [b, c, h, w] = vx.shape()[..] else { unreachable!() };
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.numel() != c || vb.numel() != c || running_mean.len() != c || running_var.len() != c {
            return dim_err(format!("batch_norm2d: parameters do not match {c} channels"));
        }
        let hw = h * w;
        let count = b * hw;
        if count == 0 {
            return dim_err("batch_norm2d on an empty batch");
        }
        let xd = vx.data();
        let mut inv_std = vec![0.0f32; c];
        let mut mean = vec![0.0f32; c];
        for ch in 0..c {
            let (m, v) = if training {
                let mut s = 0.0f64;
                for n in 0..b {
                    s += xd[(n * c + ch) * hw..][..hw].iter().map(|&v| v as f64).sum::<f64>();
                }
                let m = s / count as f64;
                let mut ss = 0.0f64;
                for n in 0..b {
                    ss += xd[(n * c + ch) * hw..][..hw]
                        .iter()
                        .map(|&v| (v as f64 - m).powi(2))
                        .sum::<f64>();
                }
                let var = ss / count as f64;
                let unbiased = if count > 1 { ss / (count - 1) as f64 } else { var };
                let mom = config.momentum as f64;
                running_mean[ch] = ((1.0 - mom) * running_mean[ch] as f64 + mom * m) as f32;
                running_var[ch] = ((1.0 - mom) * running_var[ch] as f64 + mom * unbiased) as f32;
                (m, var)
            } else {
                (running_mean[ch] as f64, running_var[ch] as f64)
            };
            mean[ch] = m as f32;
            inv_std[ch] = (1.0 / (v + config.eps as f64).sqrt()) as f32;
        }
        let gd = vg.data();
        let bd = vb.data();
        let mut xhat = vec![0.0f32; xd.len()];
        let mut out = vec![0.0f32; xd.len()];
        for n in 0..b {
            for ch in 0..c {
                let base = (n * c + ch) * hw;
                for i in base..base + hw {
                    let xn = (xd[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xn;
                    out[i] = gd[ch] * xn + bd[ch];
                }
            }
        }
        let out = Tensor::new(vec![b, c, h, w], out)?;
        Ok(self.push_op(
            out,
            &[x, gamma, beta],
            Box::new(move |g, vals, sink| {
                let gdat = g.data();
                let gamma_v = vals.get(gamma).data().to_vec();
                let mut sum_g = vec![0.0f64; c];
                let mut sum_gx = vec![0.0f64; c];
                for n in 0..b {
                    for ch in 0..c {
                        let base = (n * c + ch) * hw;
                        for i in base..base + hw {
                            sum_g[ch] += gdat[i] as f64;
                            sum_gx[ch] += gdat[i] as f64 * xhat[i] as f64;
                        }
                    }
                }
                if let Some(s) = sink.slot(gamma) {
                    for (s, v) in s.iter_mut().zip(&sum_gx) {
                        *s += *v as f32;
                    }
                }
                if let Some(s) = sink.slot(beta) {
                    for (s, v) in s.iter_mut().zip(&sum_g) {
                        *s += *v as f32;
                    }
                }
                if let Some(dx) = sink.slot(x) {
                    for ch in 0..c {
                        let scale = gamma_v[ch] * inv_std[ch];
                        let (mg, mgx) = if training {
                            ((sum_g[ch] / count as f64) as f32, (sum_gx[ch] / count as f64) as f32)
                        } else {
                            (0.0, 0.0)
                        };
                        for n in 0..b {
                            let base = (n * c + ch) * hw;
                            for i in base..base + hw {
                                dx[i] += scale * (gdat[i] - mg - xhat[i] * mgx);
                            }
                        }
                    }
                }
            }),
        ))
    }

    /// Scale each row of `x[n×d]` to unit L2 norm; rows with norm below `eps`
    /// are divided by `eps` instead.
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f32) -> Result<Var> {
        let vx = self.value(x);
        expect_rank(vx, 2, "l2_normalize_rows")?;
        let [n, d] = vx.shape()[..] else { unreachable!() };
        let mut norms = vec![0.0f32; n];
        let mut guarded = vec![false; n];
        let mut out = vec![0.0f32; n * d];
        for (r, row) in vx.data().chunks(d.max(1)).enumerate().take(n) {
            let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt() as f32;
            let denom = norm.max(eps);
            norms[r] = denom;
            guarded[r] = norm < eps;
            for (o, v) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = v / denom;
            }
        }
        let out = Tensor::new(vec![n, d], out)?;
        let y_copy = out.data().to_vec();
        Ok(self.push_op(
            out,
            &[x],
            Box::new(move |g, _, sink| {
                let Some(dx) = sink.slot(x) else { return };
                for r in 0..n {
                    let gr = &g.data()[r * d..(r + 1) * d];
                    let denom = norms[r];
                    let dst = &mut dx[r * d..(r + 1) * d];
                    if guarded[r] {
                        for (o, gv) in dst.iter_mut().zip(gr) {
                            *o += gv / denom;
                        }
                        continue;
                    }
                    let yr = &y_copy[r * d..(r + 1) * d];
                    let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a as f64 * b as f64).sum();
                    for ((o, gv), yv) in dst.iter_mut().zip(gr).zip(yr) {
                        *o += (gv - yv * dot as f32) / denom;
                    }
                }
            }),
        ))
    }
}
