use crate::error::{Result, TensorError};
use crate::ops::{backward_op, Op};
use crate::params::{GradMap, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node {
    pub value: Tensor,
    pub op: Op,
    pub requires_grad: bool,
}

/// Define-by-run computation graph. Build one per step and drop it afterwards.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record an input. Gradients are tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    /// Record a constant (never receives gradient).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t.with_requires_grad(false), Op::Leaf, false)
    }

    /// Record a named trainable parameter.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        let v = self.push(t.clone().with_requires_grad(true), Op::Leaf, true);
        self.params.push((name.to_string(), v));
        v
    }

    /// Register `name` from `store`; an existing registration is reused.
    pub fn param_from(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        Ok(self.param(name, t))
    }

    /// Copy of `v`'s value with no path back to its inputs (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape.to_vec()));
        }
        self.backward_with(loss, vec![1.0])
    }

    /// Vector-Jacobian product: propagate `seed` (shaped like `out`) backwards.
    pub fn backward_with(&self, out: Var, seed: Vec<f32>) -> Result<Gradients> {
        if seed.len() != self.value(out).numel() {
            return Err(TensorError::mismatch("backward", self.shape(out), &[seed.len()]));
        }
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[out.0].requires_grad {
            grads[out.0] = Some(seed);
        }
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !matches!(node.op, Op::Leaf) {
                backward_op(self, idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        let mut grads: Vec<Option<Tensor>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.filter(|_| self.nodes[i].requires_grad)
                    .map(|g| Tensor::raw(self.nodes[i].value.shape().to_vec(), g))
            })
            .collect();
        for (_, v) in &self.params {
            if grads[v.0].is_none() {
                grads[v.0] = Some(Tensor::zeros(self.shape(*v)));
            }
        }
        Ok(Gradients {
            grads,
            params: self.params.clone(),
        })
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient of `v`, if it requires grad and was reached.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.get(*v))
    }

    /// Gradients of all registered parameters (zeros where the loss does not reach).
    pub fn into_param_grads(mut self) -> GradMap {
        let mut out = GradMap::new();
        for (name, v) in &self.params {
            if let Some(g) = self.grads[v.0].take() {
                out.insert(name.clone(), g);
            }
        }
        out
    }
}
