use std::collections::HashMap;

use crate::error::{DiffError, Result};
use crate::param::{Param, ParamKey};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation recorded on the tape.
///
/// `backward` maps the gradient of the output to gradients of the inputs
/// (the vector-Jacobian product). `backward_graph` does the same but records
/// the computation on the tape so that it can itself be differentiated; only
/// operations that appear on double-backward paths implement it.
pub trait Op<T: Real>: Send {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Vec<Option<Tensor<T>>>;

    fn backward_graph(
        &self,
        _tape: &mut Tape<T>,
        _inputs: &[Var],
        _output: Var,
        _grad: Var,
        _needs: &[bool],
    ) -> Result<Vec<Option<Var>>> {
        Err(DiffError::NoGraphBackward(self.name()))
    }
}

struct Node<T: Real> {
    value: Tensor<T>,
    inputs: Vec<Var>,
    op: Option<Box<dyn Op<T>>>,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Every node's inputs have smaller indices than the node itself, so the
/// reverse index order is a valid topological order for the backward sweep.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamKey, Var>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape on which parameters are recorded as constants.
    pub fn inference() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            op: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Registers a parameter; repeated calls return the same leaf.
    pub fn param(&mut self, p: &Param<T>) -> Var {
        if let Some(&v) = self.params.get(&p.key()) {
            return v;
        }
        let v = self.leaf(p.value().clone(), self.grad_enabled);
        self.params.insert(p.key(), v);
        v
    }

    pub fn param_var(&self, p: &Param<T>) -> Option<Var> {
        self.params.get(&p.key()).copied()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records `op` applied to `inputs` producing `value`. When no input
    /// requires a gradient the node is stored as a constant and the op is
    /// dropped.
    pub fn push_op(&mut self, op: Box<dyn Op<T>>, inputs: &[Var], value: Tensor<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            inputs: if requires_grad { inputs.to_vec() } else { Vec::new() },
            op: if requires_grad { Some(op) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(DiffError::UnknownVar(v.0))
        }
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let shape = self.shape(loss);
        if shape.iter().product::<usize>() != 1 || !shape.iter().all(|&d| d == 1) {
            return Err(DiffError::NonScalarLoss(shape.to_vec()));
        }
        self.backward_from(loss, Tensor::ones(shape))
    }

    /// Reverse sweep seeded with an upstream gradient for `output`.
    ///
    /// Only leaf gradients are retained in the result.
    pub fn backward_from(&self, output: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.check(output)?;
        if seed.shape() != self.shape(output) {
            return Err(DiffError::ShapeMismatch {
                op: "backward seed",
                lhs: seed.shape().to_vec(),
                rhs: self.shape(output).to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            let op = match (&node.op, node.requires_grad) {
                (Some(op), true) => op,
                _ => continue,
            };
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&inputs, &node.value, &g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for ((v, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(gi.shape(), self.shape(*v), "grad shape from {}", op.name());
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Records the gradient of `sum(output)` with respect to `wrt` as new
    /// tape values, so that functions of these gradients (e.g. gradient
    /// penalties) can be differentiated in a later [`Tape::backward`].
    pub fn grad_graph(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check(output)?;
        for &w in wrt {
            self.check(w)?;
        }
        let n = output.0 + 1;
        let mut depends = vec![false; n];
        for &w in wrt {
            if w.0 < n {
                depends[w.0] = true;
            }
        }
        for i in 0..n {
            if !depends[i] && self.nodes[i].inputs.iter().any(|v| depends[v.0]) {
                depends[i] = true;
            }
        }
        let seed = Tensor::ones(self.shape(output));
        let mut gvars: HashMap<usize, Var> = HashMap::new();
        let seed_var = self.constant(seed);
        gvars.insert(output.0, seed_var);
        for i in (0..n).rev() {
            if !depends[i] || self.nodes[i].op.is_none() {
                continue;
            }
            let Some(&g) = gvars.get(&i) else { continue };
            let inputs = self.nodes[i].inputs.clone();
            let needs: Vec<bool> = inputs.iter().map(|v| depends[v.0]).collect();
            let op = self.nodes[i].op.take().expect("op present");
            let res = op.backward_graph(self, &inputs, Var(i), g, &needs);
            self.nodes[i].op = Some(op);
            for ((v, gi), need) in inputs.iter().zip(res?).zip(&needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                let merged = match gvars.get(&v.0) {
                    Some(&acc) => self.add(acc, gi)?,
                    None => gi,
                };
                gvars.insert(v.0, merged);
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match gvars.get(&w.0) {
                Some(&g) => g,
                None => {
                    let z = Tensor::zeros(self.shape(*w));
                    self.constant(z)
                }
            })
            .collect())
    }
}

/// Leaf gradients produced by a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient for a registered parameter, if it took part in the sweep.
    pub fn param(&self, tape: &Tape<T>, p: &Param<T>) -> Option<&Tensor<T>> {
        tape.param_var(p).and_then(|v| self.get(v))
    }
}
