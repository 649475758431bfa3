use crate::error::{dim_err, Result};
use crate::gemm::{gemm, MatRef};
use crate::tape::{expect_rank, Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    /// `a[m×k] · b[k×p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        expect_rank(va, 2, "matmul")?;
        expect_rank(vb, 2, "matmul")?;
        let (m, k) = (va.shape()[0], va.shape()[1]);
        let (k2, p) = (vb.shape()[0], vb.shape()[1]);
        if k != k2 {
            return dim_err(format!(
                "matmul inner dims differ: {:?} · {:?}",
                va.shape(),
                vb.shape()
            ));
        }
        let mut out = vec![0.0; m * p];
        gemm(MatRef::new(va.data(), m, k), MatRef::new(vb.data(), k, p), &mut out, 0.0);
        let out = Tensor::new(vec![m, p], out)?;
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(move |g, vals, sink| {
                let g = MatRef::new(g.data(), m, p);
                if let Some(s) = sink.slot(a) {
                    // dA = G · Bᵀ
                    gemm(g, MatRef::new(vals.get(b).data(), k, p).t(), s, 1.0);
                }
                if let Some(s) = sink.slot(b) {
                    // dB = Aᵀ · G
                    gemm(MatRef::new(vals.get(a).data(), m, k).t(), g, s, 1.0);
                }
            }),
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        expect_rank(va, 2, "transpose")?;
        let out = va.transpose()?;
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, _, sink| {
                if let Ok(gt) = g.transpose() {
                    sink.accumulate(a, gt.data());
                }
            }),
        ))
    }

    /// Add a length-`d` bias to every row of an `n × d` matrix.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        expect_rank(vx, 2, "add_bias")?;
        let d = vx.shape()[1];
        if vb.numel() != d {
            return dim_err(format!("add_bias: bias {:?} for rows of {d}", vb.shape()));
        }
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(d) {
            for (o, b) in row.iter_mut().zip(vb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(vx.shape().to_vec(), out)?;
        Ok(self.push_op(
            out,
            &[x, bias],
            Box::new(move |g, _, sink| {
                sink.accumulate(x, g.data());
                if let Some(s) = sink.slot(bias) {
                    let mut acc = vec![0.0f64; d];
                    for row in g.data().chunks(d) {
                        for (a, v) in acc.iter_mut().zip(row) {
                            *a += *v as f64;
                        }
                    }
                    for (s, a) in s.iter_mut().zip(acc) {
                        *s += a as f32;
                    }
                }
            }),
        ))
    }

    /// Fully connected layer `x · wᵀ + b` with `w` shaped `out × in`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(weight));
        expect_rank(vx, 2, "linear")?;
        expect_rank(vw, 2, "linear weight")?;
        let (n, fan_in) = (vx.shape()[0], vx.shape()[1]);
        let (fan_out, w_in) = (vw.shape()[0], vw.shape()[1]);
        if w_in != fan_in {
            return dim_err(format!(
                "linear: input {:?} vs weight {:?}",
                vx.shape(),
                vw.shape()
            ));
        }
        let mut out = vec![0.0; n * fan_out];
        gemm(
            MatRef::new(vx.data(), n, fan_in),
            MatRef::new(vw.data(), fan_out, fan_in).t(),
            &mut out,
            0.0,
        );
        let out = Tensor::new(vec![n, fan_out], out)?;
        let y = self.push_op(
            out,
            &[x, weight],
            Box::new(move |g, vals, sink| {
                let g = MatRef::new(g.data(), n, fan_out);
                if let Some(s) = sink.slot(x) {
                    gemm(g, MatRef::new(vals.get(weight).data(), fan_out, fan_in), s, 1.0);
                }
                if let Some(s) = sink.slot(weight) {
                    gemm(g.t(), MatRef::new(vals.get(x).data(), n, fan_in), s, 1.0);
                }
            }),
        );
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }
}
