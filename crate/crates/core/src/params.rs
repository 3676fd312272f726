//! Uniform traversal of learnable parameters and persistent buffers.
//!
//! Gradients are stored in values of the same type as the weights they belong to, so a
//! weight structure and its gradient can be walked in lock-step.

use crate::tensor::Float;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight-decayed parameter (convolution and fully connected weights).
    Weight,
    /// Learnable but excluded from weight decay (biases, norm scales and shifts, view weights).
    NoDecay,
    /// Persistent state that is saved but never optimised (running statistics).
    Buffer,
}

pub struct ParamRef<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: &'a [T],
}

pub struct ParamMut<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub data: &'a mut [T],
}

pub trait Parameterized<T: Float> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>));

    /// Number of learnable scalars (buffers excluded).
    fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit("", &mut |p| {
            if p.kind != ParamKind::Buffer {
                total += p.data.len();
            }
        });
        total
    }

    /// Concatenation of every learnable value, in visiting order.
    fn flat_params(&self) -> Vec<T> {
        let mut out = Vec::new();
        self.visit("", &mut |p| {
            if p.kind != ParamKind::Buffer {
                out.extend_from_slice(p.data);
            }
        });
        out
    }

    /// Overwrite every learnable value from a flat buffer produced by [`flat_params`](Self::flat_params).
    fn set_flat_params(&mut self, values: &[T]) {
        let mut offset = 0;
        self.visit_mut("", &mut |p| {
            if p.kind != ParamKind::Buffer {
                let len = p.data.len();
                p.data.copy_from_slice(&values[offset..offset + len]);
                offset += len;
            }
        });
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn visit_one<T: Float>(
    f: &mut dyn FnMut(ParamRef<'_, T>),
    prefix: &str,
    name: &str,
    kind: ParamKind,
    shape: Vec<usize>,
    data: &[T],
) {
    f(ParamRef { name: join(prefix, name), kind, shape, data });
}

pub(crate) fn visit_one_mut<T: Float>(
    f: &mut dyn FnMut(ParamMut<'_, T>),
    prefix: &str,
    name: &str,
    kind: ParamKind,
    shape: Vec<usize>,
    data: &mut [T],
) {
    f(ParamMut { name: join(prefix, name), kind, shape, data });
}

mod impls {
    use super::*;
    use crate::ops::{BatchNorm, LinearWeights, PointwiseWeights, SpatialWeights};

    impl<T: Float> Parameterized<T> for PointwiseWeights<T> {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
            visit_one(f, prefix, "weight", ParamKind::Weight, vec![self.c_out, self.c_in], &self.weight);
            if let Some(b) = &self.bias {
                visit_one(f, prefix, "bias", ParamKind::NoDecay, vec![self.c_out], b);
            }
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
            let shape = vec![self.c_out, self.c_in];
            visit_one_mut(f, prefix, "weight", ParamKind::Weight, shape, &mut self.weight);
            if let Some(b) = &mut self.bias {
                visit_one_mut(f, prefix, "bias", ParamKind::NoDecay, vec![b.len()], b);
            }
        }
    }

    impl<T: Float> Parameterized<T> for SpatialWeights<T> {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
            visit_one(f, prefix, "weight", ParamKind::Weight, vec![self.c_out, self.c_in, 3, 3], &self.weight);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
            let shape = vec![self.c_out, self.c_in, 3, 3];
            visit_one_mut(f, prefix, "weight", ParamKind::Weight, shape, &mut self.weight);
        }
    }

    impl<T: Float> Parameterized<T> for BatchNorm<T> {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
            let c = vec![self.channels()];
            visit_one(f, prefix, "gamma", ParamKind::NoDecay, c.clone(), &self.gamma);
            visit_one(f, prefix, "beta", ParamKind::NoDecay, c.clone(), &self.beta);
            visit_one(f, prefix, "running_mean", ParamKind::Buffer, c.clone(), &self.running_mean);
            visit_one(f, prefix, "running_var", ParamKind::Buffer, c, &self.running_var);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
            let c = vec![self.channels()];
            visit_one_mut(f, prefix, "gamma", ParamKind::NoDecay, c.clone(), &mut self.gamma);
            visit_one_mut(f, prefix, "beta", ParamKind::NoDecay, c.clone(), &mut self.beta);
            visit_one_mut(f, prefix, "running_mean", ParamKind::Buffer, c.clone(), &mut self.running_mean);
            visit_one_mut(f, prefix, "running_var", ParamKind::Buffer, c, &mut self.running_var);
        }
    }

    impl<T: Float> Parameterized<T> for LinearWeights<T> {
        fn visit(&self, prefix: &str, f: &mut dyn FnMut(ParamRef<'_, T>)) {
            let shape = vec![self.out_features, self.in_features];
            visit_one(f, prefix, "weight", ParamKind::Weight, shape, &self.weight);
            visit_one(f, prefix, "bias", ParamKind::NoDecay, vec![self.out_features], &self.bias);
        }
        fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(ParamMut<'_, T>)) {
            let shape = vec![self.out_features, self.in_features];
            visit_one_mut(f, prefix, "weight", ParamKind::Weight, shape, &mut self.weight);
            visit_one_mut(f, prefix, "bias", ParamKind::NoDecay, vec![self.out_features], &mut self.bias);
        }
    }
}
