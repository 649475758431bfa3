use crate::error::{dim_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return dim_err(format!("add: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(move |g, _, sink| {
                sink.accumulate(a, g.data());
                sink.accumulate(b, g.data());
            }),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return dim_err(format!("sub: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(move |g, _, sink| {
                sink.accumulate(a, g.data());
                if let Some(s) = sink.slot(b) {
                    for (s, x) in s.iter_mut().zip(g.data()) {
                        *s -= x;
                    }
                }
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return dim_err(format!("mul: {:?} vs {:?}", va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push_op(
            out,
            &[a, b],
            Box::new(move |g, vals, sink| {
                if let Some(s) = sink.slot(a) {
                    for ((s, gi), y) in s.iter_mut().zip(g.data()).zip(vals.get(b).data()) {
                        *s += gi * y;
                    }
                }
                if let Some(s) = sink.slot(b) {
                    for ((s, gi), x) in s.iter_mut().zip(g.data()).zip(vals.get(a).data()) {
                        *s += gi * x;
                    }
                }
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var> {
        let va = self.value(a);
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().map(|x| x * factor).collect(),
        )?;
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, _, sink| {
                if let Some(s) = sink.slot(a) {
                    for (s, gi) in s.iter_mut().zip(g.data()) {
                        *s += gi * factor;
                    }
                }
            }),
        ))
    }

    /// Divide every entry of `a` by the single value held in `divisor`.
    pub fn div_by(&mut self, a: Var, divisor: Var) -> Result<Var> {
        let d = self.value(divisor);
        if d.numel() != 1 {
            return dim_err(format!("div_by expects a scalar divisor, got {:?}", d.shape()));
        }
        let dv = d.item();
        let va = self.value(a);
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().map(|x| x / dv).collect(),
        )?;
        Ok(self.push_op(
            out,
            &[a, divisor],
            Box::new(move |g, vals, sink| {
                if let Some(s) = sink.slot(a) {
                    for (s, gi) in s.iter_mut().zip(g.data()) {
                        *s += gi / dv;
                    }
                }
                if sink.wants(divisor) {
                    // d(x/d)/dd = -x/d²
                    let acc: f64 = g
                        .data()
                        .iter()
                        .zip(vals.get(a).data())
                        .map(|(&gi, &x)| gi as f64 * x as f64)
                        .sum();
                    let dd = -(acc / (dv as f64 * dv as f64)) as f32;
                    sink.accumulate(divisor, &[dd]);
                }
            }),
        ))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let out = Tensor::new(
            va.shape().to_vec(),
            va.data().iter().map(|&x| x.max(0.0)).collect(),
        )?;
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, vals, sink| {
                if let Some(s) = sink.slot(a) {
                    for ((s, gi), x) in s.iter_mut().zip(g.data()).zip(vals.get(a).data()) {
                        if *x > 0.0 {
                            *s += gi;
                        }
                    }
                }
            }),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape.to_vec())?;
        Ok(self.push_op(
            out,
            &[a],
            Box::new(move |g, _, sink| sink.accumulate(a, g.data())),
        ))
    }

    /// Sum of all entries as a one-element tensor (f64 accumulation).
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).sum_f64() as f32;
        Ok(self.push_op(
            Tensor::scalar(total),
            &[a],
            Box::new(move |g, _, sink| {
                let gv = g.item();
                if let Some(s) = sink.slot(a) {
                    for s in s.iter_mut() {
                        *s += gv;
                    }
                }
            }),
        ))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let n = va.numel();
        if n == 0 {
            return dim_err("mean of an empty tensor");
        }
        let m = (va.sum_f64() / n as f64) as f32;
        Ok(self.push_op(
            Tensor::scalar(m),
            &[a],
            Box::new(move |g, _, sink| {
                let gv = g.item() / n as f32;
                if let Some(s) = sink.slot(a) {
                    for s in s.iter_mut() {
                        *s += gv;
                    }
                }
            }),
        ))
    }
}
