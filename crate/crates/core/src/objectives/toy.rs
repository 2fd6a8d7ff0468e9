//! Small closed-form losses for checking the differentiation machinery and
//! meta-gradient estimators against exact answers.

use std::sync::Arc;

use crate::diff::{Layout, Objective, Real};
use crate::error::{Error, Result};

/// `½ Σ a_i θ_i²`, optionally reading (and ignoring) `meta_dim` meta-parameters.
#[derive(Clone, Debug)]
pub struct DiagQuadratic {
    a: Vec<f64>,
    meta_dim: usize,
    layout: Arc<Layout>,
}

impl DiagQuadratic {
    pub fn new(a: Vec<f64>) -> Self {
        Self::with_dummy_meta(a, 0)
    }

    pub fn with_dummy_meta(a: Vec<f64>, meta_dim: usize) -> Self {
        let layout = Layout::flat(a.len());
        DiagQuadratic { a, meta_dim, layout }
    }
}

impl Objective for DiagQuadratic {
    type Batch = ();

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn meta_dim(&self) -> usize {
        self.meta_dim
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], _eta: &[T], _batch: &()) -> Result<(T, Vec<T>)> {
        let mut v = T::zero();
        let g: Vec<T> = theta
            .iter()
            .zip(&self.a)
            .map(|(&t, &a)| {
                v += (t * t).scale(0.5 * a);
                t.scale(a)
            })
            .collect();
        Ok((v, g))
    }
}

/// `½ Σ a_i (θ_i − η b_i − ξ_i)²` with a scalar raw meta-parameter `η` and an
/// optional per-batch noise vector `ξ` (empty means zero).
#[derive(Clone, Debug)]
pub struct ShiftedQuadratic {
    a: Vec<f64>,
    b: Vec<f64>,
    layout: Arc<Layout>,
}

impl ShiftedQuadratic {
    pub fn new(b: Vec<f64>) -> Self {
        Self::weighted(vec![1.0; b.len()], b)
    }

    pub fn weighted(a: Vec<f64>, b: Vec<f64>) -> Self {
        assert_eq!(a.len(), b.len(), "curvature and shift lengths differ");
        let layout = Layout::flat(b.len());
        ShiftedQuadratic { a, b, layout }
    }

    pub fn curvature(&self) -> &[f64] {
        &self.a
    }

    pub fn shift(&self) -> &[f64] {
        &self.b
    }
}

impl Objective for ShiftedQuadratic {
    type Batch = Vec<f64>;

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn meta_dim(&self) -> usize {
        1
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], eta: &[T], noise: &Vec<f64>) -> Result<(T, Vec<T>)> {
        if !noise.is_empty() && noise.len() != theta.len() {
            return Err(Error::config("noise length does not match parameters"));
        }
        let mut v = T::zero();
        let g = (0..theta.len())
            .map(|i| {
                let xi = noise.get(i).copied().unwrap_or(0.0);
                let r = theta[i] - eta[0].scale(self.b[i]) - T::cst(xi);
                v += (r * r).scale(0.5 * self.a[i]);
                r.scale(self.a[i])
            })
            .collect();
        Ok((v, g))
    }
}

/// `−Σ (η b_i + ξ_i) θ_i`: a gradient that does not depend on θ.
#[derive(Clone, Debug)]
pub struct LinearTilt {
    b: Vec<f64>,
    layout: Arc<Layout>,
}

impl LinearTilt {
    pub fn new(b: Vec<f64>) -> Self {
        let layout = Layout::flat(b.len());
        LinearTilt { b, layout }
    }
}

impl Objective for LinearTilt {
    type Batch = Vec<f64>;

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn meta_dim(&self) -> usize {
        1
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], eta: &[T], noise: &Vec<f64>) -> Result<(T, Vec<T>)> {
        let mut v = T::zero();
        let g = (0..theta.len())
            .map(|i| {
                let slope = -(eta[0].scale(self.b[i]) + T::cst(noise.get(i).copied().unwrap_or(0.0)));
                v += slope * theta[i];
                slope
            })
            .collect();
        Ok((v, g))
    }
}

/// `½ θᵀAθ` for a dense symmetric `A`.
#[derive(Clone, Debug)]
pub struct SymmetricQuadratic {
    a: Vec<Vec<f64>>,
    layout: Arc<Layout>,
}

impl SymmetricQuadratic {
    pub fn new(a: Vec<Vec<f64>>) -> Result<Self> {
        let n = a.len();
        for (i, row) in a.iter().enumerate() {
            if row.len() != n {
                return Err(Error::config("matrix is not square"));
            }
            for j in 0..i {
                if (row[j] - a[j][i]).abs() > 1e-12 * (1.0 + row[j].abs()) {
                    return Err(Error::config("matrix is not symmetric"));
                }
            }
        }
        Ok(SymmetricQuadratic { a, layout: Layout::flat(n) })
    }
}

impl Objective for SymmetricQuadratic {
    type Batch = ();

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn meta_dim(&self) -> usize {
        0
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], _eta: &[T], _batch: &()) -> Result<(T, Vec<T>)> {
        let g: Vec<T> = self
            .a
            .iter()
            .map(|row| {
                let mut s = T::zero();
                for (&aij, &tj) in row.iter().zip(theta) {
                    s += tj.scale(aij);
                }
                s
            })
            .collect();
        let mut v = T::zero();
        for (&t, &gi) in theta.iter().zip(&g) {
            v += (t * gi).scale(0.5);
        }
        Ok((v, g))
    }
}

/// `½ ‖θ − c‖²`, with no meta-parameters.
#[derive(Clone, Debug)]
pub struct TargetQuadratic {
    c: Vec<f64>,
    layout: Arc<Layout>,
}

impl TargetQuadratic {
    pub fn new(c: Vec<f64>) -> Self {
        let layout = Layout::flat(c.len());
        TargetQuadratic { c, layout }
    }
}

impl Objective for TargetQuadratic {
    type Batch = Vec<f64>;

    fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    fn meta_dim(&self) -> usize {
        0
    }

    fn value_and_grad<T: Real>(&self, theta: &[T], _eta: &[T], _batch: &Vec<f64>) -> Result<(T, Vec<T>)> {
        let mut v = T::zero();
        let g = theta
            .iter()
            .zip(&self.c)
            .map(|(&t, &c)| {
                let r = t - T::cst(c);
                v += (r * r).scale(0.5);
                r
            })
            .collect();
        Ok((v, g))
    }
}
