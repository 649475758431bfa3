//! Central finite differences, independent of the backward rules.

use pimc_tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f32 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Uniform values in `±[gap, hi]`, keeping clear of ReLU kinks.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.random_range(gap..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Scalar probe `Σ y ⊙ w` evaluated in f64 outside the tape.
fn probe(y: &Tensor, w: &Tensor) -> f64 {
    y.data()
        .iter()
        .zip(w.data())
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum()
}

/// Relative error with a magnitude floor, so entries near zero are judged
/// on absolute error at the floor's scale.
pub fn rel_err(a: f32, b: f32, floor: f32) -> f32 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub struct GradReport {
    pub max_rel: f32,
    pub checked: usize,
}

/// Compare analytic and numeric gradients of `Σ f(inputs) ⊙ w` for every
/// input flagged in `check`.
pub fn check_grads<F>(inputs: &[Tensor], check: &[bool], floor: f32, seed: u64, f: F) -> GradReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let forward = |vals: &[Tensor], grad: bool| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals
            .iter()
            .zip(check)
            .map(|(t, &c)| tape.leaf(t.clone(), grad && c))
            .collect();
        let y = f(&mut tape, &vars);
        (tape, vars, y)
    };

    let (tape, _, y) = forward(inputs, false);
    let mut wrng = rng(seed ^ 0x9e37_79b9);
    let w = random_tensor(&mut wrng, tape.value(y).shape(), -1.0, 1.0);

    let (mut tape, vars, y) = forward(inputs, true);
    let wv = tape.constant(w.clone());
    let prod = tape.mul(y, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut max_rel = 0.0f32;
    let mut checked = 0;
    for (i, input) in inputs.iter().enumerate() {
        if !check[i] {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[i], input);
        for j in 0..input.numel() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= H;
            let (tp, _, yp) = forward(&plus, false);
            let (tm, _, ym) = forward(&minus, false);
            let numeric = ((probe(tp.value(yp), &w) - probe(tm.value(ym), &w)) / (2.0 * H as f64)) as f32;
            max_rel = max_rel.max(rel_err(analytic.data()[j], numeric, floor));
            checked += 1;
        }
    }
    GradReport { max_rel, checked }
}
