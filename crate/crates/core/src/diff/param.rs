use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered (name, shape) segments describing how a flat vector maps onto
/// network tensors. Immutable once built.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

impl Layout {
    pub fn new<S: Into<String>>(segments: impl IntoIterator<Item = (S, Vec<usize>)>) -> Arc<Self> {
        let mut offset = 0;
        let segments = segments
            .into_iter()
            .map(|(name, shape)| {
                let seg = Segment { name: name.into(), shape, offset };
                offset += seg.len();
                seg
            })
            .collect();
        Arc::new(Layout { segments, total: offset })
    }

    /// A single anonymous segment of `n` values.
    pub fn flat(n: usize) -> Arc<Self> {
        Layout::new([("theta", vec![n])])
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }
}

/// Flattened agent parameters together with their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::config(format!(
                "parameter vector has {} entries but layout describes {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        ParamVector { values: vec![0.0; layout.len()], layout }
    }

    pub fn from_fn(layout: Arc<Layout>, f: impl FnMut(usize) -> f64) -> Self {
        let values = (0..layout.len()).map(f).collect();
        ParamVector { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn segment(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    /// A vector with the same layout and new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        ParamVector::new(values, self.layout.clone())
    }

    pub fn check_layout(&self, other: &Layout) -> Result<()> {
        if *self.layout != *other {
            return Err(Error::config("parameter layout does not match the network layout"));
        }
        Ok(())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(&other.layout)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Ok(ParamVector { values, layout: self.layout.clone() })
    }

    /// `self + k·other`
    pub fn axpy(&self, k: f64, other: &ParamVector) -> Result<ParamVector> {
        self.check_layout(&other.layout)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + k * b).collect();
        Ok(ParamVector { values, layout: self.layout.clone() })
    }

    pub fn dot(&self, other: &ParamVector) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
