use super::tensor::{Scalar, Tensor};

/// Trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Scalar = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Whether coupled L2 weight decay applies (off for norm affine terms and biases).
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>, decay: bool) -> Self {
        let shape = value.shape().to_vec();
        Param {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }

    pub fn reset_moments(&mut self) {
        self.m.fill(T::zero());
        self.v.fill(T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        Param {
            value: self.value.cast(),
            grad: self.grad.cast(),
            m: self.m.cast(),
            v: self.v.cast(),
            decay: self.decay,
        }
    }
}

/// A named slot visited by [`Module::visit`].
pub enum Slot<'a, T: Scalar> {
    Param(&'a mut Param<T>),
    /// Non-trainable state that is still checkpointed (moving statistics).
    Buffer(&'a mut Tensor<T>),
}

/// Anything owning parameters or buffers, addressed by dotted names.
pub trait Module<T: Scalar> {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, Slot<'_, T>));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, s| {
            if let Slot::Param(p) = s {
                p.zero_grad()
            }
        });
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, s| {
            if let Slot::Param(p) = s {
                n += p.value.len()
            }
        });
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
