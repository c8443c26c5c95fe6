//! Scalar activation functions with analytic derivatives.
//!
//! Besides the usual baselines (ReLU, ELU, sigmoid, tanh, softplus) the catalog
//! carries the logarithmic-growth family
//!
//! * `g1(x) = log(1 + |x|^a)` (even),
//! * `g2(x) = sign(x) log(1 + |x|^a)` (odd),
//! * `g3(x) = log(1 + x^a)` for `x > 0`, else `0`,
//!
//! for `a` in `[1, 2]`, and its two named members: *seagull* `log(1 + x^2)`
//! (`g1` with `a = 2`) and *LLU* `sign(x) log(1 + |x|)` (`g2` with `a = 1`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

/// Names accepted by [`catalog_get`].
pub const CATALOG: [&str; 10] = [
    "relu", "elu", "sigmoid", "tanh", "softplus", "seagull", "llu", "g1", "g2", "g3",
];

/// The five baselines used in the substitution experiments.
pub const BASELINES: [&str; 5] = ["relu", "elu", "sigmoid", "tanh", "softplus"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActivationError {
    #[error("unknown activation {0:?}")]
    Unknown(String),
    #[error("activation {name} requires alpha in [1, 2]")]
    MissingAlpha { name: String },
    #[error("alpha {alpha} out of range [1, 2] for {name}")]
    AlphaOutOfRange { name: String, alpha: f64 },
    #[error("activation {name} takes no alpha parameter")]
    UnexpectedAlpha { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    C0,
    C1,
    CInfinity,
    Piecewise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Growth {
    Bounded,
    Logarithmic,
    Linear,
    Polynomial,
}

/// Which function an [`ActivationSpec`] evaluates.
///
/// `Identity` is reserved for output layers and `Power` (`t^p`) exists for the
/// polynomial rank experiments; neither is reachable through [`catalog_get`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ActivationKind {
    Identity,
    Relu,
    Elu,
    Sigmoid,
    Tanh,
    Softplus,
    Seagull,
    Llu,
    G1 { alpha: f64 },
    G2 { alpha: f64 },
    G3 { alpha: f64 },
    Power { degree: u32 },
}

/// An activation together with its declared properties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "ActivationKind", into = "ActivationKind")]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub is_even: bool,
    pub smoothness: Smoothness,
    pub growth: Growth,
}

impl From<ActivationKind> for ActivationSpec {
    fn from(kind: ActivationKind) -> Self {
        use ActivationKind::*;
        let (is_even, smoothness, growth) = match kind {
            Identity => (false, Smoothness::CInfinity, Growth::Linear),
            Relu => (false, Smoothness::Piecewise, Growth::Linear),
            Elu => (false, Smoothness::C1, Growth::Linear),
            Sigmoid | Tanh => (false, Smoothness::CInfinity, Growth::Bounded),
            Softplus => (false, Smoothness::CInfinity, Growth::Linear),
            Seagull => (true, Smoothness::CInfinity, Growth::Logarithmic),
            Llu => (false, Smoothness::C1, Growth::Logarithmic),
            G1 { alpha } => (
                true,
                if alpha == 2.0 {
                    Smoothness::CInfinity
                } else if alpha > 1.0 {
                    Smoothness::C1
                } else {
                    Smoothness::C0
                },
                Growth::Logarithmic,
            ),
            G2 { .. } => (false, Smoothness::C1, Growth::Logarithmic),
            G3 { alpha } => (
                false,
                if alpha > 1.0 { Smoothness::C1 } else { Smoothness::C0 },
                Growth::Logarithmic,
            ),
            Power { degree } => (degree % 2 == 0, Smoothness::CInfinity, Growth::Polynomial),
        };
        Self {
            kind,
            is_even,
            smoothness,
            growth,
        }
    }
}

impl From<ActivationSpec> for ActivationKind {
    fn from(spec: ActivationSpec) -> Self {
        spec.kind
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl ActivationSpec {
    pub fn identity() -> Self {
        ActivationKind::Identity.into()
    }

    /// `t^degree`, used for polynomial rank bounds.
    pub fn power(degree: u32) -> Self {
        ActivationKind::Power { degree }.into()
    }

    pub fn seagull() -> Self {
        ActivationKind::Seagull.into()
    }

    pub fn relu() -> Self {
        ActivationKind::Relu.into()
    }

    pub fn name(&self) -> &'static str {
        use ActivationKind::*;
        match self.kind {
            Identity => "identity",
            Relu => "relu",
            Elu => "elu",
            Sigmoid => "sigmoid",
            Tanh => "tanh",
            Softplus => "softplus",
            Seagull => "seagull",
            Llu => "llu",
            G1 { .. } => "g1",
            G2 { .. } => "g2",
            G3 { .. } => "g3",
            Power { .. } => "power",
        }
    }

    /// Name with parameter, e.g. `g1(1.5)`; plain name otherwise.
    pub fn label(&self) -> String {
        match (self.kind, self.alpha()) {
            (ActivationKind::Power { degree }, _) => format!("power({degree})"),
            (_, Some(a)) => format!("{}({a})", self.name()),
            _ => self.name().to_string(),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self.kind {
            ActivationKind::G1 { alpha }
            | ActivationKind::G2 { alpha }
            | ActivationKind::G3 { alpha } => Some(alpha),
            _ => None,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.kind == ActivationKind::Identity
    }

    /// Points where the function is not twice continuously differentiable.
    pub fn kinks(&self) -> &'static [f64] {
        use ActivationKind::*;
        match self.kind {
            Relu | Elu | Llu | G2 { .. } | G3 { .. } => &[0.0],
            G1 { alpha } if alpha < 2.0 => &[0.0],
            _ => &[],
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        use ActivationKind::*;
        match self.kind {
            Identity => x,
            Relu => x.max(0.0),
            Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Sigmoid => sigmoid(x),
            Tanh => x.tanh(),
            Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Seagull => (x * x).ln_1p(),
            Llu => sign(x) * x.abs().ln_1p(),
            G1 { alpha } => x.abs().powf(alpha).ln_1p(),
            G2 { alpha } => sign(x) * x.abs().powf(alpha).ln_1p(),
            G3 { alpha } => {
                if x > 0.0 {
                    x.powf(alpha).ln_1p()
                } else {
                    0.0
                }
            }
            Power { degree } => x.powi(degree as i32),
        }
    }

    /// Derivative at `x` given `value = self.eval(x)`. Activations whose
    /// derivative is a cheap function of their value avoid a second
    /// transcendental call; the rest defer to [`Self::deriv`].
    #[inline]
    pub fn deriv_with_value(&self, x: f64, value: f64) -> f64 {
        use ActivationKind::*;
        match self.kind {
            Elu if x <= 0.0 => value + 1.0,
            Sigmoid => value * (1.0 - value),
            Tanh => 1.0 - value * value,
            Softplus => 1.0 - (-value).exp(),
            _ => self.deriv(x),
        }
    }

    /// Analytic derivative. At kinks the right-continuous or zero choice is
    /// used: `relu'(0) = 0`, `elu'(0) = 1`, `g1'(0) = 0`, `g3'(0) = 0`.
    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        use ActivationKind::*;
        match self.kind {
            Identity => 1.0,
            Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
            Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Softplus => sigmoid(x),
            Seagull => 2.0 * x / (1.0 + x * x),
            Llu => 1.0 / (1.0 + x.abs()),
            G1 { alpha } => {
                let a = x.abs();
                sign(x) * alpha * a.powf(alpha - 1.0) / (1.0 + a.powf(alpha))
            }
            G2 { alpha } => {
                let a = x.abs();
                alpha * a.powf(alpha - 1.0) / (1.0 + a.powf(alpha))
            }
            G3 { alpha } => {
                if x > 0.0 {
                    alpha * x.powf(alpha - 1.0) / (1.0 + x.powf(alpha))
                } else {
                    0.0
                }
            }
            Power { degree } => {
                if degree == 0 {
                    0.0
                } else {
                    f64::from(degree) * x.powi(degree as i32 - 1)
                }
            }
        }
    }
}

/// Look up a catalog activation. `alpha` is required (and must lie in
/// `[1, 2]`) for `g1`, `g2`, `g3`, and rejected for every other name.
pub fn catalog_get(name: &str, alpha: Option<f64>) -> Result<ActivationSpec, ActivationError> {
    use ActivationKind::*;
    let name_owned = || name.to_string();
    let parametric = |f: fn(f64) -> ActivationKind| match alpha {
        None => Err(ActivationError::MissingAlpha { name: name_owned() }),
        Some(a) if !(1.0..=2.0).contains(&a) => Err(ActivationError::AlphaOutOfRange {
            name: name_owned(),
            alpha: a,
        }),
        Some(a) => Ok(f(a)),
    };
    let kind = match name {
        "g1" => parametric(|alpha| G1 { alpha })?,
        "g2" => parametric(|alpha| G2 { alpha })?,
        "g3" => parametric(|alpha| G3 { alpha })?,
        _ => {
            let kind = match name {
                "relu" => Relu,
                "elu" => Elu,
                "sigmoid" => Sigmoid,
                "tanh" => Tanh,
                "softplus" => Softplus,
                "seagull" => Seagull,
                "llu" => Llu,
                _ => return Err(ActivationError::Unknown(name_owned())),
            };
            if alpha.is_some() {
                return Err(ActivationError::UnexpectedAlpha { name: name_owned() });
            }
            kind
        }
    };
    Ok(kind.into())
}

/// Every catalog entry, with `alpha` used for the parametric families.
pub fn catalog_all(alpha: f64) -> Vec<ActivationSpec> {
    CATALOG
        .iter()
        .map(|name| {
            let a = name.starts_with('g').then_some(alpha);
            catalog_get(name, a).expect("catalog names are valid")
        })
        .collect()
}

pub fn apply_elementwise(spec: &ActivationSpec, m: &Matrix) -> Matrix {
    m.map(|x| spec.eval(x))
}

pub fn derivative_elementwise(spec: &ActivationSpec, m: &Matrix) -> Matrix {
    m.map(|x| spec.deriv(x))
}
