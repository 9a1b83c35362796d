use std::sync::atomic::{AtomicU64, Ordering};

use crate::scalar::Real;
use crate::tensor::Tensor;

static NEXT_KEY: AtomicU64 = AtomicU64::new(1);

/// Process-unique identity of a parameter, used to bind it to a tape leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamKey(u64);

/// A trainable tensor.
#[derive(Debug, Clone)]
pub struct Param<T> {
    key: ParamKey,
    value: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        Param {
            key: ParamKey(NEXT_KEY.fetch_add(1, Ordering::Relaxed)),
            value,
        }
    }

    pub fn key(&self) -> ParamKey {
        self.key
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Tensor<T> {
        &mut self.value
    }

    pub fn set(&mut self, value: Tensor<T>) {
        assert_eq!(value.shape(), self.value.shape(), "param shape is fixed");
        self.value = value;
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }
}

/// Anything that owns parameters. Visiting order must be deterministic: it
/// defines the layout of optimizer state and checkpoints.
pub trait Module<T: Real> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.value().numel());
        n
    }

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, p| out.push((name.to_string(), p.value().clone())));
        out
    }
}

/// Joins a module prefix and a field name with a dot.
pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
