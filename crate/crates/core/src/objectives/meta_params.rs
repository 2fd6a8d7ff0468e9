use crate::diff::Real;
use crate::error::{Error, Result};

/// Map from the unconstrained optimisation coordinate to the constrained value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// Logistic: `(0, 1)`.
    Unit,
    /// Exponential: `(0, ∞)`.
    Positive,
}

impl Constraint {
    pub fn squash<T: Real>(self, u: T) -> T {
        match self {
            Constraint::Unit => T::one() / (T::one() + (-u).exp()),
            Constraint::Positive => u.exp(),
        }
    }

    pub fn unsquash(self, c: f64) -> Result<f64> {
        match self {
            Constraint::Unit if c > 0.0 && c < 1.0 => Ok((c / (1.0 - c)).ln()),
            Constraint::Positive if c > 0.0 => Ok(c.ln()),
            _ => Err(Error::config(format!("value {c} is outside the domain of {self:?}"))),
        }
    }
}

/// Meta-parameters η, stored in the unconstrained space where they are
/// optimised, with named constrained views.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaParams {
    names: Vec<String>,
    constraints: Vec<Constraint>,
    raw: Vec<f64>,
}

impl MetaParams {
    pub fn new(entries: impl IntoIterator<Item = (String, Constraint, f64)>) -> Result<Self> {
        let mut names = Vec::new();
        let mut constraints = Vec::new();
        let mut raw = Vec::new();
        for (name, c, value) in entries {
            raw.push(c.unsquash(value).map_err(|e| match e {
                Error::Config(m) => Error::config(format!("{name}: {m}")),
                e => e,
            })?);
            names.push(name);
            constraints.push(c);
        }
        Ok(MetaParams { names, constraints, raw })
    }

    /// Per-state discounts `γ_0..γ_9`, all starting at `init`.
    pub fn mrp(init: f64) -> Result<Self> {
        Self::new((0..crate::env::MRP_STATES).map(|i| (format!("gamma_{i}"), Constraint::Unit, init)))
    }

    /// `{γ, λ, c_crit, c_entr}` in that order.
    pub fn snake(gamma: f64, lambda: f64, c_crit: f64, c_entr: f64) -> Result<Self> {
        Self::new([
            ("gamma".to_string(), Constraint::Unit, gamma),
            ("lambda".to_string(), Constraint::Unit, lambda),
            ("c_crit".to_string(), Constraint::Positive, c_crit),
            ("c_entr".to_string(), Constraint::Positive, c_entr),
        ])
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    /// Unconstrained coordinates.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn with_raw(&self, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != self.raw.len() {
            return Err(Error::config("meta-parameter dimension mismatch"));
        }
        Ok(MetaParams { raw, ..self.clone() })
    }

    pub fn constrained(&self) -> Vec<f64> {
        self.raw.iter().zip(&self.constraints).map(|(&u, c)| c.squash(u)).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.constraints[i].squash(self.raw[i]))
    }
}

/// Fixed outer hyper-parameters η′.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterParams {
    pub gamma: f64,
    pub lambda: f64,
}
