//! Second-order third cumulants and skewness of the maximum likelihood
//! estimators of `β`, `φ` and `σ² = 1/φ`.
//!
//! For the regression coefficients,
//!
//! ```text
//! κ₃(β̂) = φ⁻² [ M⁽³⁾ (f − 4g − 3e) − 3 (M ⊙ N) w ]
//! ```
//!
//! with `M = K⁻¹X̃ᵀ`, `K = X̃ᵀWX̃`, `M⁽³⁾` the elementwise cube of `M` and
//! `nₐᵢ = (K⁻¹ X̃ᵢ K⁻¹)ₐₐ`, where `X̃ᵢ` is the Hessian of `ηᵢ` in `β`.
//! `N` vanishes for predictors that are linear in `β`.
//!
//! For the precision, with `a(φ, y) = φ c(y) + a₁(φ) + a₂(y)`,
//! `κ₃(φ̂) = −2a₁'''/(n² a₁''³)`; the dispersion `σ²` follows through
//! `ξ(σ²) = a₁(1/σ²)`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{alpha_quantities, local_quantities, AlphaQuantities, FamilySpec, LocalQuantities};
use crate::fitting::{information_matrix, spd_inverse, FitResult};
use crate::links::LinkSpec;
use crate::predictor::PredictorModel;
use crate::specfun::std_normal_pdf;

/// Skewness summary at one parameter point.
///
/// Precision fields are `None` when `φ` is known or the family has no
/// closed-form `a₁(φ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewnessReport {
    pub parameter_names: Vec<String>,
    pub kappa3_beta: Vec<f64>,
    pub gamma1_beta: Vec<f64>,
    pub kappa3_phi: Option<f64>,
    pub gamma1_phi: Option<f64>,
    pub kappa3_sigma2: Option<f64>,
    pub gamma1_sigma2: Option<f64>,
    /// `p × n`, `M = K⁻¹X̃ᵀ`.
    #[serde(with = "crate::matrix_serde")]
    pub m_matrix: DMatrix<f64>,
    /// `p × n`, `nₐᵢ = (K⁻¹X̃ᵢK⁻¹)ₐₐ`.
    #[serde(with = "crate::matrix_serde")]
    pub n_matrix: DMatrix<f64>,
    pub locals: LocalQuantities,
}

/// Intermediate blocks of the `β` cumulant computation.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaCumulants {
    pub kappa3: Vec<f64>,
    /// `K⁻¹ = (X̃ᵀWX̃)⁻¹`, without the `1/φ` factor.
    pub k_inv: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub locals: LocalQuantities,
}

/// Builds `M`, `N` and the local quantities at `(β, φ)` and returns `κ₃(β̂)`.
pub fn beta_cumulants_at(
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
    beta: &[f64],
    phi: f64,
) -> Result<BetaCumulants> {
    let d = predictor.derivatives(x, beta)?;
    let n_obs = d.eta.len();
    let p = predictor.n_params();
    let mut mu = Vec::with_capacity(n_obs);
    for &e in d.eta.iter() {
        mu.push(link.hinv(e)?);
    }
    let locals = local_quantities(family, link, &mu, phi)?;
    let k = information_matrix(family, link, predictor, x, beta, phi)?;
    let k_inv = spd_inverse(&k)?;
    let m = &k_inv * d.jacobian.transpose();

    let mut nm = DMatrix::zeros(p, n_obs);
    for (i, h) in d.hessians.iter().enumerate() {
        if h.iter().all(|v| *v == 0.0) {
            continue;
        }
        let q = &k_inv * h * &k_inv;
        for a in 0..p {
            nm[(a, i)] = q[(a, a)];
        }
    }

    let mut kappa3 = vec![0.0; p];
    for (a, k3) in kappa3.iter_mut().enumerate() {
        let mut s = 0.0;
        for i in 0..n_obs {
            let mai = m[(a, i)];
            let bracket = locals.f[i] - 4.0 * locals.g[i] - 3.0 * locals.e[i];
            s += mai * mai * mai * bracket - 3.0 * mai * nm[(a, i)] * locals.w[i];
        }
        *k3 = s / (phi * phi);
    }
    Ok(BetaCumulants {
        kappa3,
        k_inv,
        m,
        n: nm,
        locals,
    })
}

/// `κ₃(β̂)` at the fitted values.
pub fn beta_third_cumulants(
    fit: &FitResult,
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
) -> Result<Vec<f64>> {
    Ok(beta_cumulants_at(family, link, predictor, x, &fit.beta_hat, fit.phi_hat)?.kappa3)
}

/// `γ₁(β̂ₐ) = κ₃(β̂ₐ) / Var(β̂ₐ)^{3/2}`.
pub fn beta_skewness(cov_beta: &DMatrix<f64>, kappa3: &[f64]) -> Result<Vec<f64>> {
    if cov_beta.nrows() != kappa3.len() {
        return Err(Error::invalid(format!(
            "covariance is {}×{} but kappa3 has {} entries",
            cov_beta.nrows(),
            cov_beta.ncols(),
            kappa3.len()
        )));
    }
    kappa3
        .iter()
        .enumerate()
        .map(|(a, k)| {
            let v = cov_beta[(a, a)];
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Numerical(format!("variance of coefficient {a} is {v}")));
            }
            Ok(k / v.powf(1.5))
        })
        .collect()
}

fn check_n(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("sample size must be positive"));
    }
    Ok(n as f64)
}

/// `(κ₃(φ̂), γ₁(φ̂))` from the derivatives of `a₁`.
pub fn phi_third_cumulant(family: &FamilySpec, n: usize, phi: f64) -> Result<(f64, f64)> {
    let nf = check_n(n)?;
    let a = family.a1_derivatives(phi)?;
    let kappa3 = -2.0 * a.d3 / (nf * nf * a.d2.powi(3));
    let gamma1 = 2.0 * a.d3 / (nf.sqrt() * (-a.d2).powf(1.5));
    Ok((kappa3, gamma1))
}

/// The same pair from the expected log-likelihood derivatives
/// `α⁽²⁾, α⁽³⁾, α₃,₀, α₂,₁`.
pub fn phi_third_cumulant_alpha(alpha: &AlphaQuantities) -> (f64, f64) {
    let num = alpha.alpha3 + 3.0 * alpha.alpha30 + 6.0 * alpha.alpha21;
    (num / alpha.alpha2.powi(3), num / alpha.alpha2.powf(1.5))
}

/// Convenience wrapper computing the `α` quantities first.
pub fn phi_third_cumulant_generic(family: &FamilySpec, n: usize, phi: f64) -> Result<(f64, f64)> {
    check_n(n)?;
    Ok(phi_third_cumulant_alpha(&alpha_quantities(family, phi, n)?))
}

/// `ξ', ξ'', ξ'''` of `ξ(v) = a₁(1/v)`.
pub fn xi_derivatives(family: &FamilySpec, sigma2: f64) -> Result<(f64, f64, f64)> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::domain(format!("sigma2 must be positive and finite, got {sigma2}")));
    }
    let v = sigma2;
    let a = family.a1_derivatives(1.0 / v)?;
    let x1 = -a.d1 / (v * v);
    let x2 = a.d2 / v.powi(4) + 2.0 * a.d1 / v.powi(3);
    let x3 = -a.d3 / v.powi(6) - 6.0 * a.d2 / v.powi(5) - 6.0 * a.d1 / v.powi(4);
    Ok((x1, x2, x3))
}

/// `(κ₃(σ̂²), γ₁(σ̂²))`; the variance is `Var(φ̂)/φ⁴`.
pub fn sigma2_third_cumulant(family: &FamilySpec, n: usize, sigma2: f64) -> Result<(f64, f64)> {
    let nf = check_n(n)?;
    let (x1, x2, x3) = xi_derivatives(family, sigma2)?;
    let v = sigma2;
    let kappa3 = -2.0 * v * v * (v * x3 + 3.0 * x2) / (nf * nf * (2.0 * x1 + v * x2).powi(3));
    let phi = 1.0 / v;
    let var = 1.0 / (nf * family.a2nd(phi)?) / phi.powi(4);
    Ok((kappa3, kappa3 / var.powf(1.5)))
}

/// Edgeworth-corrected density of a standardized estimate with skewness `gamma1`:
/// `ϕ(x) {1 + γ/6 H₃(x) + γ²/72 H₆(x)}`. Can be slightly negative in the tails.
pub fn edgeworth_pdf(gamma1: f64, x: f64) -> f64 {
    let x2 = x * x;
    let h3 = x * (x2 - 3.0);
    let h6 = ((x2 - 15.0) * x2 + 45.0) * x2 - 15.0;
    std_normal_pdf(x) * (1.0 + gamma1 / 6.0 * h3 + gamma1 * gamma1 / 72.0 * h6)
}

/// Full report at `(β, φ)`. `phi_estimated` controls the precision fields.
pub fn skewness_at(
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
    beta: &[f64],
    phi: f64,
    phi_estimated: bool,
) -> Result<SkewnessReport> {
    let b = beta_cumulants_at(family, link, predictor, x, beta, phi)?;
    let cov = &b.k_inv / phi;
    let gamma1_beta = beta_skewness(&cov, &b.kappa3)?;
    let n = x.nrows();
    let (phi_pair, sigma_pair) = if phi_estimated && family.has_a1() {
        (Some(phi_third_cumulant(family, n, phi)?), Some(sigma2_third_cumulant(family, n, 1.0 / phi)?))
    } else {
        (None, None)
    };
    Ok(SkewnessReport {
        parameter_names: predictor.parameter_names().to_vec(),
        kappa3_beta: b.kappa3,
        gamma1_beta,
        kappa3_phi: phi_pair.map(|p| p.0),
        gamma1_phi: phi_pair.map(|p| p.1),
        kappa3_sigma2: sigma_pair.map(|p| p.0),
        gamma1_sigma2: sigma_pair.map(|p| p.1),
        m_matrix: b.m,
        n_matrix: b.n,
        locals: b.locals,
    })
}

/// Report at the estimates of a fit.
pub fn skewness_report(
    fit: &FitResult,
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
) -> Result<SkewnessReport> {
    skewness_at(family, link, predictor, x, &fit.beta_hat, fit.phi_hat, fit.phi_estimated)
}
