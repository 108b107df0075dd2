//! Catalog of dispersion families `exp{φ t(y, μ) + a(φ, y)}`.
//!
//! Each family provides the kernel `t` with its first three μ-derivatives,
//! the expected derivatives `d₂ = E t''`, `d₃ = E t'''` and `d₂' = ∂d₂/∂μ`,
//! the maximum `sup_μ t(y, μ)` used by the deviance, and, where the
//! normalizing term has the form `a(φ, y) = φ c(y) + a₁(φ) + a₂(y)`, the
//! derivatives of `a₁` that drive inference on the precision parameter.
//!
//! Ids accepted by [`make_family`]:
//!
//! | id | support of y | μ domain | φ |
//! |----|--------------|----------|---|
//! | `normal` | ℝ | ℝ | estimated |
//! | `poisson` | y ≥ 0 | μ > 0 | fixed 1 |
//! | `binomial` | [0, 1] (proportion of one trial) | (0, 1) | fixed 1 |
//! | `gamma` | y > 0 | μ > 0 | estimated |
//! | `inverse_gaussian` | y > 0 | μ > 0 | estimated |
//! | `ghs` | ℝ | ℝ | unsupported |
//! | `negative_binomial` | y ≥ 0 | μ > 0 | fixed 1 (shape 1) |
//! | `tweedie(p)` | depends on p | μ > 0 (ℝ for p = 0) | only p ∈ {0, 2, 3} |
//! | `exp_variance(b)` | ℝ | ℝ | unsupported |
//! | `reciprocal_gamma` | y > 0 | μ > 0 | estimated |
//! | `log_gamma` | ℝ | ℝ | estimated |
//! | `reciprocal_inverse_gaussian` | y > 0 | μ > 0 | estimated |
//! | `von_mises` | angle | ℝ | estimated |
//! | `const_cv_normal(c)` | ℝ | μ > 0 | fixed 1 |
//! | `const_cv_ig(c)` | y > 0 | μ > 0 | fixed 1 |
//! | `const_cv_lognormal(c)` | y > 0 | μ > 0 | fixed 1 |
//! | `const_cv_weibull(c)` | y > 0 | μ > 0 | fixed 1 |

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::links::LinkSpec;
use crate::specfun::{bessel_ratio, digamma, log_bessel_i0, log_gamma, tetragamma, trigamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    Normal,
    Poisson,
    Binomial,
    Gamma,
    InverseGaussian,
    Ghs,
    NegativeBinomial,
    Tweedie { p: f64 },
    ExpVariance { b: f64 },
    ReciprocalGamma,
    LogGamma,
    ReciprocalInverseGaussian,
    VonMises,
    ConstCvNormal { c: f64 },
    ConstCvIg { c: f64 },
    ConstCvLognormal { c: f64 },
    ConstCvWeibull { c: f64 },
}

pub const FAMILY_IDS: [&str; 17] = [
    "normal",
    "poisson",
    "binomial",
    "gamma",
    "inverse_gaussian",
    "ghs",
    "negative_binomial",
    "tweedie(p)",
    "exp_variance(b)",
    "reciprocal_gamma",
    "log_gamma",
    "reciprocal_inverse_gaussian",
    "von_mises",
    "const_cv_normal(c)",
    "const_cv_ig(c)",
    "const_cv_lognormal(c)",
    "const_cv_weibull(c)",
];

/// Form of `a₁(φ)` for families whose precision can be estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum A1Form {
    /// `½ log φ`
    HalfLog,
    /// `φ log φ − log Γ(φ)`
    GammaType,
    /// `−log I₀(φ)`
    VonMises,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DQuantities {
    pub d2: f64,
    pub d3: f64,
    pub d2prime: f64,
}

/// `a₁'`, `a₁''`, `a₁'''` at one φ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct A1Derivatives {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaQuantities {
    pub alpha2: f64,
    pub alpha3: f64,
    pub alpha30: f64,
    pub alpha21: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub d_quantities: bool,
    pub phi_inference: bool,
    pub sampler: bool,
    pub closed_form_density: bool,
}

/// Per-observation `w`, `f`, `g`, `e`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalQuantities {
    pub w: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub e: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilySpec {
    kind: FamilyKind,
    // lognormal: log(1 + c²); Weibull: Γ(1 + 1/c)
    aux: f64,
}

/// Parses `name` or `name(value)`.
pub fn make_family(id: &str) -> Result<FamilySpec> {
    let id = id.trim();
    let (name, hyper) = match id.find('(') {
        Some(open) => {
            let close = id
                .strip_suffix(')')
                .ok_or_else(|| Error::invalid(format!("family id `{id}`: missing `)`")))?;
            let text = close[open + 1..].trim();
            let v: f64 = text
                .parse()
                .map_err(|_| Error::invalid(format!("family id `{id}`: bad hyperparameter `{text}`")))?;
            (id[..open].trim(), Some(v))
        }
        None => (id, None),
    };
    FamilySpec::new(name, hyper)
}

fn need(name: &str, hyper: Option<f64>) -> Result<f64> {
    let v = hyper.ok_or_else(|| Error::invalid(format!("family `{name}` needs a hyperparameter, e.g. `{name}(1.5)`")))?;
    if !v.is_finite() {
        return Err(Error::invalid(format!("family `{name}`: hyperparameter must be finite")));
    }
    Ok(v)
}

fn positive_cv(name: &str, hyper: Option<f64>) -> Result<f64> {
    let c = need(name, hyper)?;
    if c <= 0.0 {
        return Err(Error::invalid(format!("family `{name}`: c must be positive, got {c}")));
    }
    Ok(c)
}

impl FamilySpec {
    pub fn new(name: &str, hyper: Option<f64>) -> Result<Self> {
        let simple = |kind| {
            if hyper.is_some() {
                Err(Error::invalid(format!("family `{name}` takes no hyperparameter")))
            } else {
                Ok(kind)
            }
        };
        let kind = match name {
            "normal" => simple(FamilyKind::Normal)?,
            "poisson" => simple(FamilyKind::Poisson)?,
            "binomial" => simple(FamilyKind::Binomial)?,
            "gamma" => simple(FamilyKind::Gamma)?,
            "inverse_gaussian" => simple(FamilyKind::InverseGaussian)?,
            "ghs" => simple(FamilyKind::Ghs)?,
            "negative_binomial" => simple(FamilyKind::NegativeBinomial)?,
            "reciprocal_gamma" => simple(FamilyKind::ReciprocalGamma)?,
            "log_gamma" => simple(FamilyKind::LogGamma)?,
            "reciprocal_inverse_gaussian" => simple(FamilyKind::ReciprocalInverseGaussian)?,
            "von_mises" => simple(FamilyKind::VonMises)?,
            "tweedie" => {
                let p = need(name, hyper)?;
                if p > 0.0 && p < 1.0 {
                    return Err(Error::invalid(format!(
                        "tweedie power p = {p}: no Tweedie model exists for 0 < p < 1"
                    )));
                }
                FamilyKind::Tweedie { p }
            }
            "exp_variance" => {
                let b = need(name, hyper)?;
                if b == 0.0 {
                    return Err(Error::invalid("exp_variance needs b ≠ 0 (b = 0 is the normal family)"));
                }
                FamilyKind::ExpVariance { b }
            }
            "const_cv_normal" => FamilyKind::ConstCvNormal { c: positive_cv(name, hyper)? },
            "const_cv_ig" => FamilyKind::ConstCvIg { c: positive_cv(name, hyper)? },
            "const_cv_lognormal" => FamilyKind::ConstCvLognormal { c: positive_cv(name, hyper)? },
            "const_cv_weibull" => FamilyKind::ConstCvWeibull { c: positive_cv(name, hyper)? },
            other => {
                return Err(Error::UnknownId {
                    kind: "family",
                    id: other.to_string(),
                    valid: FAMILY_IDS.join(", "),
                })
            }
        };
        Ok(Self::from_kind(kind))
    }

    pub fn from_kind(kind: FamilyKind) -> Self {
        let aux = match kind {
            FamilyKind::ConstCvLognormal { c } => (c * c).ln_1p(),
            FamilyKind::ConstCvWeibull { c } => log_gamma(1.0 + 1.0 / c).map(f64::exp).unwrap_or(f64::NAN),
            _ => 0.0,
        };
        FamilySpec { kind, aux }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn id(&self) -> String {
        match self.kind {
            FamilyKind::Normal => "normal".into(),
            FamilyKind::Poisson => "poisson".into(),
            FamilyKind::Binomial => "binomial".into(),
            FamilyKind::Gamma => "gamma".into(),
            FamilyKind::InverseGaussian => "inverse_gaussian".into(),
            FamilyKind::Ghs => "ghs".into(),
            FamilyKind::NegativeBinomial => "negative_binomial".into(),
            FamilyKind::Tweedie { p } => format!("tweedie({p})"),
            FamilyKind::ExpVariance { b } => format!("exp_variance({b})"),
            FamilyKind::ReciprocalGamma => "reciprocal_gamma".into(),
            FamilyKind::LogGamma => "log_gamma".into(),
            FamilyKind::ReciprocalInverseGaussian => "reciprocal_inverse_gaussian".into(),
            FamilyKind::VonMises => "von_mises".into(),
            FamilyKind::ConstCvNormal { c } => format!("const_cv_normal({c})"),
            FamilyKind::ConstCvIg { c } => format!("const_cv_ig({c})"),
            FamilyKind::ConstCvLognormal { c } => format!("const_cv_lognormal({c})"),
            FamilyKind::ConstCvWeibull { c } => format!("const_cv_weibull({c})"),
        }
    }

    /// Tweedie members with a closed-form density are handled as the
    /// corresponding classical family.
    fn resolved(&self) -> FamilyKind {
        match self.kind {
            FamilyKind::Tweedie { p } if p == 0.0 => FamilyKind::Normal,
            FamilyKind::Tweedie { p } if p == 2.0 => FamilyKind::Gamma,
            FamilyKind::Tweedie { p } if p == 3.0 => FamilyKind::InverseGaussian,
            k => k,
        }
    }

    fn a1_form(&self) -> Option<A1Form> {
        match self.resolved() {
            FamilyKind::Normal | FamilyKind::InverseGaussian | FamilyKind::ReciprocalInverseGaussian => {
                Some(A1Form::HalfLog)
            }
            FamilyKind::Gamma | FamilyKind::ReciprocalGamma | FamilyKind::LogGamma => Some(A1Form::GammaType),
            FamilyKind::VonMises => Some(A1Form::VonMises),
            _ => None,
        }
    }

    /// Known precision for one-parameter members.
    pub fn phi_fixed(&self) -> Option<f64> {
        match self.kind {
            FamilyKind::Poisson
            | FamilyKind::Binomial
            | FamilyKind::NegativeBinomial
            | FamilyKind::ConstCvNormal { .. }
            | FamilyKind::ConstCvIg { .. }
            | FamilyKind::ConstCvLognormal { .. }
            | FamilyKind::ConstCvWeibull { .. } => Some(1.0),
            _ => None,
        }
    }

    pub fn has_a1(&self) -> bool {
        self.a1_form().is_some()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self.kind,
            FamilyKind::Poisson | FamilyKind::Binomial | FamilyKind::NegativeBinomial
        )
    }

    pub fn capabilities(&self) -> Capabilities {
        let sampler = !matches!(self.resolved(), FamilyKind::Ghs | FamilyKind::ExpVariance { .. } | FamilyKind::Tweedie { .. });
        Capabilities {
            d_quantities: true,
            phi_inference: self.has_a1() || self.phi_fixed().is_some(),
            sampler,
            closed_form_density: sampler,
        }
    }

    pub fn y_admissible(&self, y: f64) -> bool {
        if !y.is_finite() {
            return false;
        }
        match self.resolved() {
            FamilyKind::Normal
            | FamilyKind::Ghs
            | FamilyKind::ExpVariance { .. }
            | FamilyKind::LogGamma
            | FamilyKind::VonMises
            | FamilyKind::ConstCvNormal { .. } => true,
            FamilyKind::Poisson | FamilyKind::NegativeBinomial => y >= 0.0,
            FamilyKind::Binomial => (0.0..=1.0).contains(&y),
            FamilyKind::Tweedie { p } => {
                if p <= 0.0 {
                    true
                } else if p < 2.0 {
                    y >= 0.0
                } else {
                    y > 0.0
                }
            }
            FamilyKind::Gamma
            | FamilyKind::InverseGaussian
            | FamilyKind::ReciprocalGamma
            | FamilyKind::ReciprocalInverseGaussian
            | FamilyKind::ConstCvIg { .. }
            | FamilyKind::ConstCvLognormal { .. }
            | FamilyKind::ConstCvWeibull { .. } => y > 0.0,
        }
    }

    /// Open interval of admissible means.
    pub fn mu_domain(&self) -> (f64, f64) {
        match self.resolved() {
            FamilyKind::Normal
            | FamilyKind::Ghs
            | FamilyKind::ExpVariance { .. }
            | FamilyKind::LogGamma
            | FamilyKind::VonMises => (f64::NEG_INFINITY, f64::INFINITY),
            FamilyKind::Binomial => (0.0, 1.0),
            _ => (0.0, f64::INFINITY),
        }
    }

    pub fn mu_admissible(&self, mu: f64) -> bool {
        let (lo, hi) = self.mu_domain();
        mu.is_finite() && mu > lo && mu < hi
    }

    fn check(&self, y: f64, mu: f64) -> Result<()> {
        if !self.y_admissible(y) {
            return Err(Error::domain(format!("y = {y} outside the support of {}", self.id())));
        }
        if !self.mu_admissible(mu) {
            return Err(Error::domain(format!("mu = {mu} outside the mean domain of {}", self.id())));
        }
        Ok(())
    }

    /// Kernel `t(y, μ)`.
    pub fn t(&self, y: f64, mu: f64) -> Result<f64> {
        self.check(y, mu)?;
        Ok(match self.kind {
            FamilyKind::Normal => y * mu - 0.5 * mu * mu,
            FamilyKind::Poisson => xlogy(y, mu) - mu,
            FamilyKind::Binomial => xlogy(y, mu) + xlogy(1.0 - y, 1.0 - mu),
            FamilyKind::Gamma => -y / mu - mu.ln(),
            FamilyKind::InverseGaussian => -y / (2.0 * mu * mu) + 1.0 / mu,
            FamilyKind::Ghs => y * mu.atan() - 0.5 * mu.mul_add(mu, 1.0).ln(),
            FamilyKind::NegativeBinomial => xlogy(y, mu) - (y + 1.0) * mu.ln_1p(),
            FamilyKind::Tweedie { p } => {
                if p == 1.0 {
                    xlogy(y, mu) - mu
                } else if p == 2.0 {
                    -y / mu - mu.ln()
                } else {
                    y * mu.powf(1.0 - p) / (1.0 - p) - mu.powf(2.0 - p) / (2.0 - p)
                }
            }
            FamilyKind::ExpVariance { b } => (-b * mu).exp() * (mu - y + 1.0 / b) / b,
            FamilyKind::ReciprocalGamma => (mu / y).ln() - mu / y,
            FamilyKind::LogGamma => y - mu - (y - mu).exp(),
            FamilyKind::ReciprocalInverseGaussian => -(y - mu).powi(2) / (2.0 * y),
            FamilyKind::VonMises => (y - mu).cos(),
            FamilyKind::ConstCvNormal { c } => {
                let u = y / mu;
                -mu.ln() - (u - 1.0).powi(2) / (2.0 * c * c)
            }
            FamilyKind::ConstCvIg { c } => {
                let u = y / mu;
                0.5 * mu.ln() - (u - 2.0 + 1.0 / u) / (2.0 * c * c)
            }
            FamilyKind::ConstCvLognormal { .. } => {
                let s2 = self.aux;
                let z = y.ln() - mu.ln() + 0.5 * s2;
                -z * z / (2.0 * s2)
            }
            FamilyKind::ConstCvWeibull { c } => -c * mu.ln() - (y * self.aux / mu).powf(c),
        })
    }

    /// `∂t/∂μ`, `∂²t/∂μ²`, `∂³t/∂μ³`.
    pub fn t_derivatives(&self, y: f64, mu: f64) -> Result<(f64, f64, f64)> {
        self.check(y, mu)?;
        let m = mu;
        Ok(match self.kind {
            FamilyKind::Normal => (y - m, -1.0, 0.0),
            FamilyKind::Poisson => (y / m - 1.0, -y / (m * m), 2.0 * y / m.powi(3)),
            FamilyKind::Binomial => {
                let q = 1.0 - m;
                (
                    y / m - (1.0 - y) / q,
                    -y / (m * m) - (1.0 - y) / (q * q),
                    2.0 * y / m.powi(3) - 2.0 * (1.0 - y) / q.powi(3),
                )
            }
            FamilyKind::Gamma => (y / (m * m) - 1.0 / m, -2.0 * y / m.powi(3) + 1.0 / (m * m), 6.0 * y / m.powi(4) - 2.0 / m.powi(3)),
            FamilyKind::InverseGaussian => (
                y / m.powi(3) - 1.0 / (m * m),
                -3.0 * y / m.powi(4) + 2.0 / m.powi(3),
                12.0 * y / m.powi(5) - 6.0 / m.powi(4),
            ),
            FamilyKind::Ghs => {
                let v = 1.0 + m * m;
                (
                    (y - m) / v,
                    -1.0 / v - 2.0 * m * (y - m) / (v * v),
                    (6.0 * m - 2.0 * y) / (v * v) + 8.0 * m * m * (y - m) / v.powi(3),
                )
            }
            FamilyKind::NegativeBinomial => {
                let q = 1.0 + m;
                (
                    y / m - (y + 1.0) / q,
                    -y / (m * m) + (y + 1.0) / (q * q),
                    2.0 * y / m.powi(3) - 2.0 * (y + 1.0) / q.powi(3),
                )
            }
            FamilyKind::Tweedie { p } => {
                let r = y - m;
                (
                    r * m.powf(-p),
                    -m.powf(-p) - p * r * m.powf(-p - 1.0),
                    2.0 * p * m.powf(-p - 1.0) + p * (p + 1.0) * r * m.powf(-p - 2.0),
                )
            }
            FamilyKind::ExpVariance { b } => {
                let e = (-b * m).exp();
                let r = y - m;
                (r * e, -e - b * r * e, 2.0 * b * e + b * b * r * e)
            }
            FamilyKind::ReciprocalGamma => (1.0 / m - 1.0 / y, -1.0 / (m * m), 2.0 / m.powi(3)),
            FamilyKind::LogGamma => {
                let e = (y - m).exp();
                (e - 1.0, -e, e)
            }
            FamilyKind::ReciprocalInverseGaussian => ((y - m) / y, -1.0 / y, 0.0),
            FamilyKind::VonMises => {
                let (s, c) = (y - m).sin_cos();
                (s, -c, -s)
            }
            FamilyKind::ConstCvNormal { c } => {
                let (u, c2) = (y / m, c * c);
                (
                    -1.0 / m + (u - 1.0) * u / (c2 * m),
                    1.0 / (m * m) + (2.0 * u - 3.0 * u * u) / (c2 * m * m),
                    -2.0 / m.powi(3) + (12.0 * u * u - 6.0 * u) / (c2 * m.powi(3)),
                )
            }
            FamilyKind::ConstCvIg { c } => {
                let (u, c2) = (y / m, c * c);
                (
                    0.5 / m + (u - 1.0 / u) / (2.0 * c2 * m),
                    -0.5 / (m * m) - u / (c2 * m * m),
                    1.0 / m.powi(3) + 3.0 * u / (c2 * m.powi(3)),
                )
            }
            FamilyKind::ConstCvLognormal { .. } => {
                let s2 = self.aux;
                let z = y.ln() - m.ln() + 0.5 * s2;
                (
                    z / (s2 * m),
                    -(1.0 + z) / (s2 * m * m),
                    (3.0 + 2.0 * z) / (s2 * m.powi(3)),
                )
            }
            FamilyKind::ConstCvWeibull { c } => {
                let v = (y * self.aux / m).powf(c);
                (
                    c * (v - 1.0) / m,
                    (c - c * (c + 1.0) * v) / (m * m),
                    (-2.0 * c + c * (c + 1.0) * (c + 2.0) * v) / m.powi(3),
                )
            }
        })
    }

    pub fn t1(&self, y: f64, mu: f64) -> Result<f64> {
        Ok(self.t_derivatives(y, mu)?.0)
    }

    /// `sup_μ t(y, μ)`; boundary responses use `0 · log 0 = 0`.
    pub fn tmax(&self, y: f64) -> Result<f64> {
        if !self.y_admissible(y) {
            return Err(Error::domain(format!("y = {y} outside the support of {}", self.id())));
        }
        Ok(match self.kind {
            FamilyKind::Normal => 0.5 * y * y,
            FamilyKind::Poisson => xlogy(y, y) - y,
            FamilyKind::Binomial => xlogy(y, y) + xlogy(1.0 - y, 1.0 - y),
            FamilyKind::Gamma => -1.0 - y.ln(),
            FamilyKind::InverseGaussian => 1.0 / (2.0 * y),
            FamilyKind::Ghs => y * y.atan() - 0.5 * y.mul_add(y, 1.0).ln(),
            FamilyKind::NegativeBinomial => xlogy(y, y) - (y + 1.0) * y.ln_1p(),
            FamilyKind::Tweedie { p } => {
                if p == 1.0 {
                    xlogy(y, y) - y
                } else if p == 2.0 {
                    -1.0 - y.ln()
                } else if p == 0.0 {
                    0.5 * y * y
                } else if p < 0.0 && y <= 0.0 {
                    // sup over μ > 0 is approached as μ → 0
                    0.0
                } else {
                    y.powf(2.0 - p) / ((1.0 - p) * (2.0 - p))
                }
            }
            FamilyKind::ExpVariance { b } => (-b * y).exp() / (b * b),
            FamilyKind::ReciprocalGamma | FamilyKind::LogGamma => -1.0,
            FamilyKind::ReciprocalInverseGaussian => 0.0,
            FamilyKind::VonMises => 1.0,
            FamilyKind::ConstCvNormal { c } => {
                if y <= 0.0 {
                    return Err(Error::domain(format!(
                        "const_cv_normal: sup over μ > 0 is infinite for y = {y} ≤ 0"
                    )));
                }
                let mu = y * ((1.0 + 4.0 * c * c).sqrt() - 1.0) / (2.0 * c * c);
                self.t(y, mu)?
            }
            FamilyKind::ConstCvIg { c } => {
                let c2 = c * c;
                let mu = y * (c2 + (c2 * c2 + 4.0).sqrt()) / 2.0;
                self.t(y, mu)?
            }
            FamilyKind::ConstCvLognormal { .. } => 0.0,
            FamilyKind::ConstCvWeibull { c } => -c * (y * self.aux).ln() - 1.0,
        })
    }

    pub fn d_quantities(&self, mu: f64, phi: f64) -> Result<DQuantities> {
        if !self.mu_admissible(mu) {
            return Err(Error::domain(format!("mu = {mu} outside the mean domain of {}", self.id())));
        }
        let m = mu;
        let glm = |v: f64, v1: f64| DQuantities {
            d2: -1.0 / v,
            d3: 2.0 * v1 / (v * v),
            d2prime: v1 / (v * v),
        };
        let cv = |k2: f64, k3: f64| DQuantities {
            d2: -k2 / (m * m),
            d3: k3 / m.powi(3),
            d2prime: 2.0 * k2 / m.powi(3),
        };
        Ok(match self.kind {
            FamilyKind::Normal => glm(1.0, 0.0),
            FamilyKind::Poisson => glm(m, 1.0),
            FamilyKind::Binomial => glm(m * (1.0 - m), 1.0 - 2.0 * m),
            FamilyKind::Gamma => glm(m * m, 2.0 * m),
            FamilyKind::InverseGaussian => glm(m.powi(3), 3.0 * m * m),
            FamilyKind::Ghs => {
                let v = m * m + 1.0;
                DQuantities {
                    d2: -2.0 / (v * v),
                    d3: (2.0 * m.powi(3) + 10.0 * m) / v.powi(3),
                    d2prime: 8.0 * m / v.powi(3),
                }
            }
            FamilyKind::NegativeBinomial => DQuantities {
                d2: -1.0 / m + 1.0 / (1.0 + m),
                d3: 2.0 / (m * m) - 2.0 / (1.0 + m).powi(2),
                d2prime: 1.0 / (m * m) - 1.0 / (1.0 + m).powi(2),
            },
            FamilyKind::Tweedie { p } => DQuantities {
                d2: -m.powf(-p),
                d3: 2.0 * p * m.powf(-p - 1.0),
                d2prime: p * m.powf(-p - 1.0),
            },
            FamilyKind::ExpVariance { b } => {
                let e = (-b * m).exp();
                DQuantities {
                    d2: -e,
                    d3: 2.0 * b * e,
                    d2prime: b * e,
                }
            }
            FamilyKind::ReciprocalGamma => DQuantities {
                d2: -1.0 / (m * m),
                d3: 2.0 / m.powi(3),
                d2prime: 2.0 / m.powi(3),
            },
            FamilyKind::LogGamma => DQuantities {
                d2: -1.0,
                d3: 1.0,
                d2prime: 0.0,
            },
            FamilyKind::ReciprocalInverseGaussian => DQuantities {
                d2: -1.0 / m,
                d3: 0.0,
                d2prime: 1.0 / (m * m),
            },
            FamilyKind::VonMises => DQuantities {
                d2: -bessel_ratio(phi)?.r,
                d3: 0.0,
                d2prime: 0.0,
            },
            FamilyKind::ConstCvNormal { .. }
            | FamilyKind::ConstCvIg { .. }
            | FamilyKind::ConstCvLognormal { .. }
            | FamilyKind::ConstCvWeibull { .. } => {
                let (k2, k3) = self.cv_constants().expect("constant-CV family");
                cv(k2, k3)
            }
        })
    }

    /// `(k₂, k₃)` of the constant coefficient-of-variation members.
    pub fn cv_constants(&self) -> Option<(f64, f64)> {
        match self.kind {
            FamilyKind::ConstCvNormal { c } => {
                let c2 = c * c;
                Some(((1.0 + 2.0 * c2) / c2, (6.0 + 10.0 * c2) / c2))
            }
            FamilyKind::ConstCvIg { c } => {
                let c2 = c * c;
                Some(((2.0 + c2) / (2.0 * c2), (3.0 + c2) / c2))
            }
            FamilyKind::ConstCvLognormal { .. } => Some((1.0 / self.aux, 3.0 / self.aux)),
            FamilyKind::ConstCvWeibull { c } => Some((c * c, c * c * (c + 3.0))),
            _ => None,
        }
    }

    fn require_a1(&self) -> Result<A1Form> {
        self.a1_form().ok_or_else(|| {
            Error::unsupported(format!(
                "family {} has no closed-form a1(phi); precision inference is not available",
                self.id()
            ))
        })
    }

    pub fn a1(&self, phi: f64) -> Result<f64> {
        check_phi(phi)?;
        Ok(match self.require_a1()? {
            A1Form::HalfLog => 0.5 * phi.ln(),
            A1Form::GammaType => phi * phi.ln() - log_gamma(phi)?,
            A1Form::VonMises => -log_bessel_i0(phi)?,
        })
    }

    pub fn a1_derivatives(&self, phi: f64) -> Result<A1Derivatives> {
        check_phi(phi)?;
        Ok(match self.require_a1()? {
            A1Form::HalfLog => A1Derivatives {
                d1: 0.5 / phi,
                d2: -0.5 / (phi * phi),
                d3: 1.0 / phi.powi(3),
            },
            A1Form::GammaType => A1Derivatives {
                d1: phi.ln() + 1.0 - digamma(phi)?,
                d2: 1.0 / phi - trigamma(phi)?,
                d3: -1.0 / (phi * phi) - tetragamma(phi)?,
            },
            A1Form::VonMises => {
                let b = bessel_ratio(phi)?;
                A1Derivatives {
                    d1: -b.r,
                    d2: -b.r1,
                    d3: -b.r2,
                }
            }
        })
    }

    /// `c(y)` in `a(φ, y) = φ c(y) + a₁(φ) + a₂(y)`; zero for proper dispersion models.
    pub fn c_of_y(&self, y: f64) -> Result<f64> {
        self.require_a1()?;
        if !self.y_admissible(y) {
            return Err(Error::domain(format!("y = {y} outside the support of {}", self.id())));
        }
        Ok(match self.resolved() {
            FamilyKind::Normal => -0.5 * y * y,
            FamilyKind::Gamma => y.ln(),
            FamilyKind::InverseGaussian => -0.5 / y,
            _ => 0.0,
        })
    }

    /// `∂a(φ, y)/∂φ`.
    pub fn aphi(&self, phi: f64, y: f64) -> Result<f64> {
        Ok(self.c_of_y(y)? + self.a1_derivatives(phi)?.d1)
    }

    /// `a⁽²⁾(φ) = −E ∂²a/∂φ² = −a₁''(φ)`.
    pub fn a2nd(&self, phi: f64) -> Result<f64> {
        Ok(-self.a1_derivatives(phi)?.d2)
    }

    /// `φ t(y, μ) + a(φ, y)` for families with a closed-form density.
    pub fn log_density(&self, y: f64, mu: f64, phi: f64) -> Result<f64> {
        check_phi(phi)?;
        let t = self.t(y, mu)?;
        let unsupported = || Error::unsupported(format!("family {} has no closed-form density", self.id()));
        Ok(match self.resolved() {
            FamilyKind::Normal | FamilyKind::Gamma | FamilyKind::InverseGaussian => {
                let a2 = match self.resolved() {
                    FamilyKind::Normal => -0.5 * LN_2PI,
                    FamilyKind::Gamma => -y.ln(),
                    _ => -0.5 * (LN_2PI + 3.0 * y.ln()),
                };
                phi * t + phi * self.c_of_y(y)? + self.a1(phi)? + a2
            }
            FamilyKind::Poisson => t - log_gamma(y + 1.0)?,
            FamilyKind::Binomial | FamilyKind::NegativeBinomial => t,
            FamilyKind::ReciprocalGamma => phi * t + self.a1(phi)? - y.ln(),
            FamilyKind::LogGamma => phi * t + self.a1(phi)?,
            FamilyKind::ReciprocalInverseGaussian => phi * t + self.a1(phi)? - 0.5 * (LN_2PI + y.ln()),
            FamilyKind::VonMises => phi * t + self.a1(phi)? - (2.0 * PI).ln(),
            FamilyKind::ConstCvNormal { c } => t - c.ln() - 0.5 * LN_2PI,
            FamilyKind::ConstCvIg { c } => t - c.ln() - 0.5 * (LN_2PI + 3.0 * y.ln()),
            FamilyKind::ConstCvLognormal { .. } => t - y.ln() - 0.5 * (self.aux.ln() + LN_2PI),
            FamilyKind::ConstCvWeibull { c } => t + c.ln() + c * self.aux.ln() + (c - 1.0) * y.ln(),
            FamilyKind::Ghs | FamilyKind::ExpVariance { .. } | FamilyKind::Tweedie { .. } => {
                return Err(unsupported())
            }
        })
    }
}

impl fmt::Display for FamilySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

fn check_phi(phi: f64) -> Result<()> {
    if phi > 0.0 && phi.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("precision phi must be positive and finite, got {phi}")))
    }
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `D(y, μ) = 2 Σ [sup t(yᵢ, ·) − t(yᵢ, μᵢ)]`.
pub fn unit_deviance(family: &FamilySpec, y: &[f64], mu: &[f64]) -> Result<f64> {
    if y.len() != mu.len() {
        return Err(Error::invalid(format!(
            "y has {} entries but mu has {}",
            y.len(),
            mu.len()
        )));
    }
    let mut d = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        // rounding can push tmax − t a hair below zero at the maximizer
        d += (family.tmax(yi)? - family.t(yi, mi)?).max(0.0);
    }
    Ok(2.0 * d)
}

pub fn local_quantities(family: &FamilySpec, link: &LinkSpec, mu: &[f64], phi: f64) -> Result<LocalQuantities> {
    let n = mu.len();
    let mut q = LocalQuantities {
        w: vec![0.0; n],
        f: vec![0.0; n],
        g: vec![0.0; n],
        e: vec![0.0; n],
    };
    for (i, &m) in mu.iter().enumerate() {
        let d = family.d_quantities(m, phi)?;
        let m1 = link.dmu_deta(m);
        let m2 = link.d2mu_deta2(m);
        if !(m1.is_finite() && m2.is_finite()) {
            return Err(Error::domain(format!("mu = {m} outside the domain of the {} link", link.id())));
        }
        let m1c = m1 * m1 * m1;
        q.w[i] = -m1 * m1 * d.d2;
        q.g[i] = -m1 * m2 * d.d2;
        q.f[i] = q.g[i] - m1c * d.d3;
        q.e[i] = -m1c * d.d2prime;
    }
    Ok(q)
}

pub fn alpha_quantities(family: &FamilySpec, phi: f64, n: usize) -> Result<AlphaQuantities> {
    let a = family.a1_derivatives(phi)?;
    let n = n as f64;
    Ok(AlphaQuantities {
        alpha2: -n * a.d2,
        alpha3: -n * a.d3,
        alpha30: n * a.d3,
        alpha21: 0.0,
    })
}
