use std::collections::HashMap;

use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Local derivative of one recorded op.
///
/// `inputs` are the op's input values in recording order, `output` its
/// forward value. Returns one gradient per input; `None` means the input
/// receives no gradient from this op.
pub(crate) trait BackwardOp: Send + Sync {
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn BackwardOp>>,
    requires_grad: bool,
}

/// Tape of tensor operations recorded in execution order.
///
/// Parameters are registered by name and deduplicated, so a model applied
/// twice inside one graph accumulates gradients into a single leaf.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
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

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Named trainable leaf; returns the existing node if `name` was seen.
    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let v = self.push_leaf(value.clone(), true);
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        v
    }

    pub fn params(&self) -> &[(String, Var)] {
        &self.params
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

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, inputs: Vec::new(), op: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push_op(&mut self, value: Tensor, inputs: Vec<Var>, op: Box<dyn BackwardOp>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { Some(op) } else { None };
        let inputs = if requires_grad { inputs } else { Vec::new() };
        self.nodes.push(Node { value, inputs, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep seeded with upstream gradients for one or more outputs.
    ///
    /// Gradients are retained only for leaves; interior gradients are freed
    /// as soon as they have been propagated.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            assert_eq!(
                self.nodes[v.0].value.shape(),
                g.shape(),
                "seed gradient shape does not match node value"
            );
            accumulate(&mut grads[v.0], g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(input_grads.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    if self.nodes[input.0].requires_grad {
                        debug_assert_eq!(g.shape(), self.nodes[input.0].value.shape());
                        accumulate(&mut grads[input.0], g);
                    }
                }
            }
        }
        Gradients { grads }
    }

    /// Convenience: backward from a scalar output with seed 1.
    pub fn backward_scalar(&self, out: Var) -> Gradients {
        let shape = self.shape(out).to_vec();
        assert_eq!(shape.iter().product::<usize>(), 1, "backward_scalar needs a one-element output");
        self.backward(&[(out, Tensor::ones(&shape))])
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradients of every named parameter of `graph`; parameters that did not
    /// influence the seeded outputs get an explicit zero tensor.
    pub fn named(&self, graph: &Graph) -> Vec<(String, Tensor)> {
        graph
            .params()
            .iter()
            .map(|(name, v)| {
                let g = self
                    .get(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(graph.value(*v).shape()));
                (name.clone(), g)
            })
            .collect()
    }
}
