use std::sync::Arc;

use super::layers::{dense_backward, dense_forward};
use super::InitRule;
use crate::diff::{Layout, ParamVector, Real};

const HIDDEN: usize = 10;

/// The MRP value network, MLP(1, 10, 10, 1) with tanh hidden layers.
#[derive(Clone, Debug)]
pub struct MrpMlp {
    layout: Arc<Layout>,
}

/// Activations kept from a forward pass for the reverse sweep.
#[derive(Clone, Debug)]
pub struct MlpForward<T> {
    inputs: Vec<T>,
    h1: Vec<T>,
    h2: Vec<T>,
    pub outputs: Vec<T>,
}

impl Default for MrpMlp {
    fn default() -> Self {
        Self::new()
    }
}

impl MrpMlp {
    pub fn new() -> Self {
        let layout = Layout::new([
            ("l1.w", vec![1, HIDDEN]),
            ("l1.b", vec![HIDDEN]),
            ("l2.w", vec![HIDDEN, HIDDEN]),
            ("l2.b", vec![HIDDEN]),
            ("l3.w", vec![HIDDEN, 1]),
            ("l3.b", vec![1]),
        ]);
        MrpMlp { layout }
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub(crate) fn init_rules() -> Vec<InitRule> {
        vec![
            InitRule { weight: "l1.w", bias: "l1.b", fan_in: 1, scale: 1.0 },
            InitRule { weight: "l2.w", bias: "l2.b", fan_in: HIDDEN, scale: 1.0 },
            InitRule { weight: "l3.w", bias: "l3.b", fan_in: HIDDEN, scale: 1.0 },
        ]
    }

    fn seg<'a, T>(&self, theta: &'a [T], name: &str) -> &'a [T] {
        &theta[self.layout.segment(name).expect("known segment").range()]
    }

    pub fn forward<T: Real>(&self, theta: &[T], inputs: &[f64]) -> MlpForward<T> {
        let n = inputs.len();
        let x: Vec<T> = inputs.iter().map(|&v| T::cst(v)).collect();
        let mut h1 = vec![T::zero(); n * HIDDEN];
        dense_forward(self.seg(theta, "l1.w"), self.seg(theta, "l1.b"), &x, 1, HIDDEN, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut h2 = vec![T::zero(); n * HIDDEN];
        dense_forward(self.seg(theta, "l2.w"), self.seg(theta, "l2.b"), &h1, HIDDEN, HIDDEN, &mut h2);
        h2.iter_mut().for_each(|v| *v = v.tanh());
        let mut outputs = vec![T::zero(); n];
        dense_forward(self.seg(theta, "l3.w"), self.seg(theta, "l3.b"), &h2, HIDDEN, 1, &mut outputs);
        MlpForward { inputs: x, h1, h2, outputs }
    }

    /// Parameter gradient given `dL/d output` for every input of the forward pass.
    pub fn backward<T: Real>(&self, theta: &[T], fwd: &MlpForward<T>, d_out: &[T]) -> Vec<T> {
        let mut grad = vec![T::zero(); self.layout.len()];
        let range = |name: &str| self.layout.segment(name).expect("known segment").range();
        let n = fwd.outputs.len();

        let mut dh2 = vec![T::zero(); n * HIDDEN];
        {
            let (w, b) = split_pair(&mut grad, range("l3.w"), range("l3.b"));
            dense_backward(self.seg(theta, "l3.w"), &fwd.h2, d_out, HIDDEN, 1, w, b, Some(&mut dh2));
        }
        for (d, h) in dh2.iter_mut().zip(&fwd.h2) {
            *d *= T::one() - *h * *h;
        }
        let mut dh1 = vec![T::zero(); n * HIDDEN];
        {
            let (w, b) = split_pair(&mut grad, range("l2.w"), range("l2.b"));
            dense_backward(self.seg(theta, "l2.w"), &fwd.h1, &dh2, HIDDEN, HIDDEN, w, b, Some(&mut dh1));
        }
        for (d, h) in dh1.iter_mut().zip(&fwd.h1) {
            *d *= T::one() - *h * *h;
        }
        {
            let (w, b) = split_pair(&mut grad, range("l1.w"), range("l1.b"));
            dense_backward(self.seg(theta, "l1.w"), &fwd.inputs, &dh1, 1, HIDDEN, w, b, None);
        }
        grad
    }
}

/// Two disjoint mutable sub-slices; `a` must precede `b`.
pub(crate) fn split_pair<T>(
    v: &mut [T],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [T], &mut [T]) {
    debug_assert!(a.end <= b.start);
    let (left, right) = v.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

/// Value estimate for one state input.
pub fn mrp_value(theta: &ParamVector, state_input: f64) -> f64 {
    MrpMlp::new().forward::<f64>(theta.values(), &[state_input]).outputs[0]
}
