//! Operation tape for reverse-mode differentiation.
//!
//! Every op pushes its output value together with a backward closure. The
//! closure receives the output gradient, read access to all recorded values,
//! and a sink that accumulates into the gradients of its inputs. `backward`
//! consumes the tape, so each forward supports exactly one backward pass.

use crate::error::{dim_err, Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) type BackwardFn = Box<dyn FnOnce(&Tensor, &Values<'_>, &mut GradSink<'_>)>;

/// Read-only view of the recorded values handed to backward closures.
pub struct Values<'a> {
    values: &'a [Tensor],
}

impl Values<'_> {
    pub fn get(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }
}

/// Gradient accumulator handed to backward closures.
pub struct GradSink<'a> {
    grads: &'a mut [Option<Vec<f32>>],
    requires: &'a [bool],
    sizes: &'a [usize],
}

impl GradSink<'_> {
    pub fn wants(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    /// Mutable gradient buffer for `v`, zero-initialized on first use.
    /// Returns `None` when `v` does not require a gradient.
    pub fn slot(&mut self, v: Var) -> Option<&mut [f32]> {
        if !self.requires[v.0] {
            return None;
        }
        let n = self.sizes[v.0];
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    pub fn accumulate(&mut self, v: Var, g: &[f32]) {
        if let Some(slot) = self.slot(v) {
            for (s, x) in slot.iter_mut().zip(g) {
                *s += x;
            }
        }
    }
}

#[derive(Default)]
pub struct Tape {
    values: Vec<Tensor>,
    requires: Vec<bool>,
    backward: Vec<Option<BackwardFn>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.values.push(value);
        self.requires.push(requires_grad);
        self.backward.push(None);
        Var(self.values.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.0]
    }

    pub(crate) fn any_requires(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.requires[v.0])
    }

    /// Record an op output. The closure is dropped when no input needs a gradient.
    pub(crate) fn push_op(&mut self, value: Tensor, inputs: &[Var], backward: BackwardFn) -> Var {
        let requires = self.any_requires(inputs);
        self.values.push(value);
        self.requires.push(requires);
        self.backward.push(if requires { Some(backward) } else { None });
        Var(self.values.len() - 1)
    }

    /// Run the reverse sweep from a scalar output, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let Tape {
            values,
            requires,
            mut backward,
        } = self;
        if values[loss.0].numel() != 1 {
            return dim_err(format!(
                "backward needs a scalar output, got shape {:?}",
                values[loss.0].shape()
            ));
        }
        let sizes: Vec<usize> = values.iter().map(Tensor::numel).collect();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; values.len()];
        if requires[loss.0] {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(f) = backward[i].take() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let g = Tensor::new(values[i].shape().to_vec(), g)?;
            let view = Values { values: &values };
            let mut sink = GradSink {
                grads: &mut grads,
                requires: &requires,
                sizes: &sizes,
            };
            f(&g, &view, &mut sink);
        }
        let grads = grads
            .into_iter()
            .zip(values.iter())
            .map(|(g, v)| g.map(|g| Tensor::new(v.shape().to_vec(), g)).transpose())
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients { grads })
    }
}

/// Gradients of leaf values after a backward pass.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Gradient for `v`, or zeros shaped like `like` when nothing flowed back.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape().to_vec()))
    }
}

pub(crate) fn expect_rank(t: &Tensor, rank: usize, op: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::Dimension(format!(
            "{op} expects rank {rank}, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}
