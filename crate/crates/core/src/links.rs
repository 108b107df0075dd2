//! Link functions `h(μ) = η` with `dμ/dη` and `d²μ/dη²` expressed in `μ`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::specfun::{std_normal_cdf, std_normal_pdf, std_normal_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkSpec {
    Logit,
    Probit,
    Log,
    Identity,
    Reciprocal,
    SquareReciprocal,
    Sqrt,
    Cloglog,
    Tangent,
}

pub const LINK_IDS: [&str; 9] = [
    "logit",
    "probit",
    "log",
    "identity",
    "reciprocal",
    "square_reciprocal",
    "sqrt",
    "cloglog",
    "tangent",
];

pub fn make_link(id: &str) -> Result<LinkSpec> {
    LinkSpec::from_id(id)
}

impl LinkSpec {
    pub fn from_id(id: &str) -> Result<Self> {
        Ok(match id.trim() {
            "logit" => LinkSpec::Logit,
            "probit" => LinkSpec::Probit,
            "log" => LinkSpec::Log,
            "identity" => LinkSpec::Identity,
            "reciprocal" | "inverse" => LinkSpec::Reciprocal,
            "square_reciprocal" => LinkSpec::SquareReciprocal,
            "sqrt" => LinkSpec::Sqrt,
            "cloglog" => LinkSpec::Cloglog,
            "tangent" | "tan" => LinkSpec::Tangent,
            other => {
                return Err(Error::UnknownId {
                    kind: "link",
                    id: other.to_string(),
                    valid: LINK_IDS.join(", "),
                })
            }
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            LinkSpec::Logit => "logit",
            LinkSpec::Probit => "probit",
            LinkSpec::Log => "log",
            LinkSpec::Identity => "identity",
            LinkSpec::Reciprocal => "reciprocal",
            LinkSpec::SquareReciprocal => "square_reciprocal",
            LinkSpec::Sqrt => "sqrt",
            LinkSpec::Cloglog => "cloglog",
            LinkSpec::Tangent => "tangent",
        }
    }

    /// Open interval of `μ` on which `h` is defined and invertible.
    pub fn mu_domain(&self) -> (f64, f64) {
        match self {
            LinkSpec::Logit | LinkSpec::Probit | LinkSpec::Cloglog => (0.0, 1.0),
            LinkSpec::Log | LinkSpec::SquareReciprocal | LinkSpec::Sqrt => (0.0, f64::INFINITY),
            LinkSpec::Identity => (f64::NEG_INFINITY, f64::INFINITY),
            // both branches of 1/μ are usable; the family domain decides
            LinkSpec::Reciprocal => (f64::NEG_INFINITY, f64::INFINITY),
            LinkSpec::Tangent => (-FRAC_PI_2, FRAC_PI_2),
        }
    }

    pub fn eta_admissible(&self, eta: f64) -> bool {
        if !eta.is_finite() {
            return false;
        }
        match self {
            LinkSpec::Reciprocal => eta != 0.0,
            LinkSpec::SquareReciprocal | LinkSpec::Sqrt => eta > 0.0,
            _ => true,
        }
    }

    pub fn h(&self, mu: f64) -> f64 {
        match self {
            LinkSpec::Logit => (mu / (1.0 - mu)).ln(),
            LinkSpec::Probit => std_normal_quantile(mu).unwrap_or(f64::NAN),
            LinkSpec::Log => mu.ln(),
            LinkSpec::Identity => mu,
            LinkSpec::Reciprocal => 1.0 / mu,
            LinkSpec::SquareReciprocal => 1.0 / (mu * mu),
            LinkSpec::Sqrt => mu.sqrt(),
            LinkSpec::Cloglog => (-(-mu).ln_1p()).ln(),
            LinkSpec::Tangent => mu.tan(),
        }
    }

    pub fn hinv(&self, eta: f64) -> Result<f64> {
        if !self.eta_admissible(eta) {
            return Err(Error::domain(format!(
                "eta = {eta} outside the range of the {} link",
                self.id()
            )));
        }
        Ok(match self {
            LinkSpec::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
            LinkSpec::Probit => std_normal_cdf(eta),
            LinkSpec::Log => eta.exp(),
            LinkSpec::Identity => eta,
            LinkSpec::Reciprocal => 1.0 / eta,
            LinkSpec::SquareReciprocal => 1.0 / eta.sqrt(),
            LinkSpec::Sqrt => eta * eta,
            LinkSpec::Cloglog => -(-eta.exp()).exp_m1(),
            LinkSpec::Tangent => eta.atan(),
        })
    }

    pub fn dmu_deta(&self, mu: f64) -> f64 {
        match self {
            LinkSpec::Logit => mu * (1.0 - mu),
            LinkSpec::Probit => std_normal_pdf(self.h(mu)),
            LinkSpec::Log => mu,
            LinkSpec::Identity => 1.0,
            LinkSpec::Reciprocal => -mu * mu,
            LinkSpec::SquareReciprocal => -mu * mu * mu / 2.0,
            LinkSpec::Sqrt => 2.0 * mu.sqrt(),
            LinkSpec::Cloglog => {
                let l = (-mu).ln_1p();
                -l * (1.0 - mu)
            }
            LinkSpec::Tangent => mu.cos().powi(2),
        }
    }

    pub fn d2mu_deta2(&self, mu: f64) -> f64 {
        match self {
            LinkSpec::Logit => mu * (1.0 - mu) * (1.0 - 2.0 * mu),
            LinkSpec::Probit => {
                let z = self.h(mu);
                -z * std_normal_pdf(z)
            }
            LinkSpec::Log => mu,
            LinkSpec::Identity => 0.0,
            LinkSpec::Reciprocal => 2.0 * mu * mu * mu,
            LinkSpec::SquareReciprocal => 0.75 * mu.powi(5),
            LinkSpec::Sqrt => 2.0,
            LinkSpec::Cloglog => {
                let l = (-mu).ln_1p();
                -(1.0 - mu) * l * (1.0 + l)
            }
            // μ = atan η: d²μ/dη² = −2η/(1+η²)² = −2 sin μ cos³ μ
            LinkSpec::Tangent => -2.0 * mu.sin() * mu.cos().powi(3),
        }
    }
}
