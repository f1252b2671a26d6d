//! Concave sparsity surrogates of the l0 "norm".
//!
//! Each surrogate `g` is nonnegative-valued near zero, nondecreasing and
//! concave on `x >= 0`. Replacing `|x|` by `g(x)` inside a group penalty turns
//! the convex l2,1 norm into the nonconvex l2,g penalty used by the solver.
//! Values, first and second derivatives are all closed form.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of a surrogate family, as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Lp,
    Geman,
    Laplace,
    Log,
    Logarithm,
    Etp,
    Identity,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 7] = [
        SurrogateKind::Lp,
        SurrogateKind::Geman,
        SurrogateKind::Laplace,
        SurrogateKind::Log,
        SurrogateKind::Logarithm,
        SurrogateKind::Etp,
        SurrogateKind::Identity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SurrogateKind::Lp => "lp",
            SurrogateKind::Geman => "geman",
            SurrogateKind::Laplace => "laplace",
            SurrogateKind::Log => "log",
            SurrogateKind::Logarithm => "logarithm",
            SurrogateKind::Etp => "etp",
            SurrogateKind::Identity => "identity",
        }
    }

    /// The parameter key this family expects, if any.
    pub fn param_name(self) -> Option<&'static str> {
        match self {
            SurrogateKind::Lp => Some("p"),
            SurrogateKind::Geman => Some("epsilon"),
            SurrogateKind::Laplace
            | SurrogateKind::Log
            | SurrogateKind::Logarithm
            | SurrogateKind::Etp => Some("gamma"),
            SurrogateKind::Identity => None,
        }
    }
}

impl fmt::Display for SurrogateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SurrogateKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown surrogate kind `{s}`")))
    }
}

/// A validated surrogate function with its parameter.
///
/// Construct through [`Surrogate::new`] or the per-family constructors so the
/// parameter-domain constraints (`0 < p < 1`, `epsilon > 0`, `gamma > 0`) hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SurrogateConfig", into = "SurrogateConfig")]
pub enum Surrogate {
    /// `x^p`
    Lp { p: f64 },
    /// `x / (x + epsilon)`
    Geman { epsilon: f64 },
    /// `1 - exp(-x / gamma)`
    Laplace { gamma: f64 },
    /// `log(gamma + x)`
    Log { gamma: f64 },
    /// `log(gamma x + 1) / log(gamma + 1)`
    Logarithm { gamma: f64 },
    /// `(1 - exp(-gamma x)) / (1 - exp(-gamma))`
    Etp { gamma: f64 },
    /// `x`; turns the l2,g penalty back into the convex l2,1 norm.
    Identity,
}

/// Serialized form `{"kind": "...", "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub kind: SurrogateKind,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl Surrogate {
    /// Builds a surrogate from a kind and named parameters, rejecting unknown
    /// keys and out-of-domain values.
    pub fn new(kind: SurrogateKind, params: &BTreeMap<String, f64>) -> Result<Self> {
        let expected = kind.param_name();
        if let Some(extra) = params.keys().find(|k| Some(k.as_str()) != expected) {
            return Err(Error::InvalidParameter(format!(
                "surrogate `{kind}` does not take parameter `{extra}`"
            )));
        }
        let param = |name: &str| {
            params.get(name).copied().ok_or_else(|| {
                Error::InvalidParameter(format!("surrogate `{kind}` requires parameter `{name}`"))
            })
        };
        match kind {
            SurrogateKind::Lp => Self::lp(param("p")?),
            SurrogateKind::Geman => Self::geman(param("epsilon")?),
            SurrogateKind::Laplace => Self::laplace(param("gamma")?),
            SurrogateKind::Log => Self::log(param("gamma")?),
            SurrogateKind::Logarithm => Self::logarithm(param("gamma")?),
            SurrogateKind::Etp => Self::etp(param("gamma")?),
            SurrogateKind::Identity => Ok(Surrogate::Identity),
        }
    }

    pub fn lp(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lp requires 0 < p < 1, got {p}"
            )));
        }
        Ok(Surrogate::Lp { p })
    }

    pub fn geman(epsilon: f64) -> Result<Self> {
        positive("epsilon", epsilon)?;
        Ok(Surrogate::Geman { epsilon })
    }

    pub fn laplace(gamma: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        Ok(Surrogate::Laplace { gamma })
    }

    pub fn log(gamma: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        Ok(Surrogate::Log { gamma })
    }

    pub fn logarithm(gamma: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        Ok(Surrogate::Logarithm { gamma })
    }

    pub fn etp(gamma: f64) -> Result<Self> {
        positive("gamma", gamma)?;
        Ok(Surrogate::Etp { gamma })
    }

    pub fn kind(&self) -> SurrogateKind {
        match self {
            Surrogate::Lp { .. } => SurrogateKind::Lp,
            Surrogate::Geman { .. } => SurrogateKind::Geman,
            Surrogate::Laplace { .. } => SurrogateKind::Laplace,
            Surrogate::Log { .. } => SurrogateKind::Log,
            Surrogate::Logarithm { .. } => SurrogateKind::Logarithm,
            Surrogate::Etp { .. } => SurrogateKind::Etp,
            Surrogate::Identity => SurrogateKind::Identity,
        }
    }

    pub fn params(&self) -> BTreeMap<String, f64> {
        let value = match *self {
            Surrogate::Lp { p } => Some(p),
            Surrogate::Geman { epsilon } => Some(epsilon),
            Surrogate::Laplace { gamma }
            | Surrogate::Log { gamma }
            | Surrogate::Logarithm { gamma }
            | Surrogate::Etp { gamma } => Some(gamma),
            Surrogate::Identity => None,
        };
        match (self.kind().param_name(), value) {
            (Some(name), Some(v)) => BTreeMap::from([(name.to_string(), v)]),
            _ => BTreeMap::new(),
        }
    }

    /// `g(x)` for `x >= 0`.
    pub fn value(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::Domain(format!("surrogate evaluated at x = {x} < 0")));
        }
        Ok(self.value_unchecked(x))
    }

    /// `g'(x)`. Requires `x > 0` for `Lp`, whose derivative is singular at 0;
    /// every other family accepts `x = 0`.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        self.check_derivative_domain(x)?;
        Ok(self.derivative_unchecked(x))
    }

    /// `g''(x)`, with the same domain as [`Surrogate::derivative`].
    pub fn second_derivative(&self, x: f64) -> Result<f64> {
        self.check_derivative_domain(x)?;
        Ok(self.second_derivative_unchecked(x))
    }

    fn check_derivative_domain(&self, x: f64) -> Result<()> {
        let ok = match self {
            Surrogate::Lp { .. } => x > 0.0,
            _ => x >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "derivative of `{}` undefined at x = {x}",
                self.kind()
            )))
        }
    }

    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        match *self {
            Surrogate::Lp { p } => x.powf(p),
            Surrogate::Geman { epsilon } => x / (x + epsilon),
            Surrogate::Laplace { gamma } => -(-x / gamma).exp_m1(),
            Surrogate::Log { gamma } => (gamma + x).ln(),
            Surrogate::Logarithm { gamma } => (gamma * x).ln_1p() / gamma.ln_1p(),
            Surrogate::Etp { gamma } => (-gamma * x).exp_m1() / (-gamma).exp_m1(),
            Surrogate::Identity => x,
        }
    }

    pub(crate) fn derivative_unchecked(&self, x: f64) -> f64 {
        match *self {
            Surrogate::Lp { p } => p * x.powf(p - 1.0),
            Surrogate::Geman { epsilon } => epsilon / ((x + epsilon) * (x + epsilon)),
            Surrogate::Laplace { gamma } => (-x / gamma).exp() / gamma,
            Surrogate::Log { gamma } => 1.0 / (gamma + x),
            Surrogate::Logarithm { gamma } => gamma / ((gamma * x + 1.0) * gamma.ln_1p()),
            Surrogate::Etp { gamma } => -gamma * (-gamma * x).exp() / (-gamma).exp_m1(),
            Surrogate::Identity => 1.0,
        }
    }

    pub(crate) fn second_derivative_unchecked(&self, x: f64) -> f64 {
        match *self {
            Surrogate::Lp { p } => p * (p - 1.0) * x.powf(p - 2.0),
            Surrogate::Geman { epsilon } => -2.0 * epsilon / (x + epsilon).powi(3),
            Surrogate::Laplace { gamma } => -(-x / gamma).exp() / (gamma * gamma),
            Surrogate::Log { gamma } => -1.0 / ((gamma + x) * (gamma + x)),
            Surrogate::Logarithm { gamma } => {
                let s = gamma * x + 1.0;
                -gamma * gamma / (s * s * gamma.ln_1p())
            }
            Surrogate::Etp { gamma } => gamma * gamma * (-gamma * x).exp() / (-gamma).exp_m1(),
            Surrogate::Identity => 0.0,
        }
    }

    /// `sum_j g(norms[j])`, the l2,g penalty of precomputed group norms.
    pub fn group_penalty(&self, norms: impl IntoIterator<Item = f64>) -> Result<f64> {
        norms.into_iter().map(|v| self.value(v)).sum()
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

impl TryFrom<SurrogateConfig> for Surrogate {
    type Error = Error;

    fn try_from(cfg: SurrogateConfig) -> Result<Self> {
        Surrogate::new(cfg.kind, &cfg.params)
    }
}

impl From<Surrogate> for SurrogateConfig {
    fn from(s: Surrogate) -> Self {
        SurrogateConfig {
            kind: s.kind(),
            params: s.params(),
        }
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind())?;
        for (k, v) in self.params() {
            write!(f, "({k}={v})")?;
        }
        Ok(())
    }
}
