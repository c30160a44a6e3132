use crate::graph::{BackwardOp, Graph, Var};
use crate::tensor::Tensor;

struct AddOp;

impl BackwardOp for AddOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone()), Some(grad.clone())]
    }
}

struct ScaleOp(f64);

impl BackwardOp for ScaleOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad.map(|g| g * self.0))]
    }
}

struct ReluOp;

impl BackwardOp for ReluOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(Tensor::new(grad.shape(), data))]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x)
}

struct GeluOp;

impl BackwardOp for GeluOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| g * gelu_grad(x))
            .collect();
        vec![Some(Tensor::new(grad.shape(), data))]
    }
}

struct ReshapeOp;

impl BackwardOp for ReshapeOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
        vec![Some(grad.clone().reshape(inputs[0].shape()))]
    }
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.shape(), vb.shape(), "add: shape mismatch");
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(va.shape(), data);
        self.push_op(out, vec![a, b], Box::new(AddOp))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).map(|x| x * alpha);
        self.push_op(out, vec![a], Box::new(ScaleOp(alpha)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_op(out, vec![a], Box::new(ReluOp))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(gelu);
        self.push_op(out, vec![a], Box::new(GeluOp))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshape(shape);
        self.push_op(out, vec![a], Box::new(ReshapeOp))
    }
}
