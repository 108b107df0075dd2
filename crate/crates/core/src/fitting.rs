//! Maximum likelihood fitting.
//!
//! `β` is estimated by Fisher scoring on the deviance with step halving,
//! `φ` by solving its score equation `Σ t(yᵢ, μ̂ᵢ) + Σ ∂a(φ, yᵢ)/∂φ = 0`
//! with a Newton iteration kept inside a sign-change bracket.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{unit_deviance, FamilyKind, FamilySpec};
use crate::links::LinkSpec;
use crate::predictor::PredictorModel;

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Bound on `max |U| / n` for the β score `U`.
    pub tol_score: f64,
    /// Bound on `max |Δβᵣ| / (1 + |βᵣ|)`.
    pub tol_step: f64,
    pub beta_init: Option<Vec<f64>>,
    pub phi_bracket: (f64, f64),
    pub step_halving_max: usize,
    /// Known precision; skips estimation of φ when set.
    pub phi: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 100,
            tol_score: 1e-8,
            tol_step: 1e-10,
            beta_init: None,
            phi_bracket: (1e-6, 1e6),
            step_halving_max: 30,
            phi: None,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol_score > 0.0 && self.tol_step > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        let (lo, hi) = self.phi_bracket;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::invalid(format!("phi bracket [{lo}, {hi}] must satisfy 0 < lo < hi < inf")));
        }
        if let Some(phi) = self.phi {
            if !(phi > 0.0 && phi.is_finite()) {
                return Err(Error::invalid(format!("phi = {phi} must be positive")));
            }
        }
        Ok(())
    }
}

/// Outcome of the β iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaFit {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub mu: Vec<f64>,
    pub deviance: f64,
    pub initial_deviance: f64,
    /// `X̃ᵀWX̃` at the final β (with the profile φ for von Mises).
    pub k_beta: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub score_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiFit {
    pub phi: f64,
    /// `true` when the score equation is still positive at the upper bracket end.
    pub at_boundary: bool,
    /// `false` for known or supplied precision.
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: String,
    pub link: String,
    pub parameter_names: Vec<String>,
    pub beta_hat: Vec<f64>,
    pub phi_hat: f64,
    pub sigma2_hat: f64,
    pub phi_estimated: bool,
    pub phi_at_boundary: bool,
    pub mu_hat: Vec<f64>,
    pub eta_hat: Vec<f64>,
    pub deviance: f64,
    #[serde(with = "crate::matrix_serde")]
    pub k_beta: DMatrix<f64>,
    #[serde(with = "crate::matrix_serde")]
    pub cov_beta: DMatrix<f64>,
    pub var_phi: Option<f64>,
    pub var_sigma2: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub score_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariances {
    pub cov_beta: DMatrix<f64>,
    pub var_phi: Option<f64>,
    pub var_sigma2: Option<f64>,
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Cholesky factor of a symmetric positive definite matrix, with one
/// diagonal jitter retry for rounding-level indefiniteness.
pub(crate) fn spd_factor(k: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let p = k.nrows();
    if k.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { condition: f64::INFINITY });
    }
    let pivot_condition = |c: &Cholesky<f64, Dyn>| {
        let d = c.l_dirty().diagonal();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in d.iter() {
            lo = lo.min(v.abs());
            hi = hi.max(v.abs());
        }
        (hi / lo).powi(2)
    };
    if let Some(c) = Cholesky::new(k.clone()) {
        let cond = pivot_condition(&c);
        if cond > 1e13 {
            return Err(Error::Singular { condition: cond });
        }
        return Ok(c);
    }
    let jitter = 1e-10 * k.trace().abs().max(f64::MIN_POSITIVE) / p as f64;
    let mut kj = k.clone();
    for i in 0..p {
        kj[(i, i)] += jitter;
    }
    match Cholesky::new(kj) {
        Some(c) if pivot_condition(&c) <= 1e9 => Ok(c),
        _ => {
            let eig = k.clone().symmetric_eigen().eigenvalues;
            let hi = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let lo = eig.iter().fold(f64::INFINITY, |a, v| a.min(*v));
            let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            Err(Error::Singular { condition })
        }
    }
}

pub(crate) fn spd_inverse(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv = spd_factor(k)?.inverse();
    Ok(symmetrize(inv))
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    for i in 0..p {
        for j in i + 1..p {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// β
// ---------------------------------------------------------------------------

struct State {
    beta: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    deviance: f64,
}

fn check_data(family: &FamilySpec, predictor: &PredictorModel, x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "covariate matrix has {} rows, response has {} entries",
            x.nrows(),
            y.len()
        )));
    }
    if y.len() <= predictor.n_params() {
        return Err(Error::invalid(format!(
            "need n > p, got n = {} and p = {}",
            y.len(),
            predictor.n_params()
        )));
    }
    if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !family.y_admissible(**v)) {
        return Err(Error::domain(format!(
            "row {}: response {v} outside the support of {}",
            i + 1,
            family.id()
        )));
    }
    Ok(())
}

fn evaluate(
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
    y: &[f64],
    beta: &[f64],
) -> Result<State> {
    let eta = predictor.eval_eta(x, beta)?;
    let mut mu = Vec::with_capacity(eta.len());
    for (i, &e) in eta.iter().enumerate() {
        let m = link.hinv(e).map_err(|err| Error::domain(format!("row {}: {err}", i + 1)))?;
        if !family.mu_admissible(m) {
            return Err(Error::domain(format!(
                "row {}: fitted mean {m} outside the mean domain of {}",
                i + 1,
                family.id()
            )));
        }
        mu.push(m);
    }
    let deviance = unit_deviance(family, y, &mu)?;
    Ok(State {
        beta: beta.to_vec(),
        eta: eta.iter().copied().collect(),
        mu,
        deviance,
    })
}

/// Score `X̃ᵀ diag(dμ/dη) t'(y, μ)` and information `X̃ᵀWX̃`.
fn score_and_information(
    family: &FamilySpec,
    link: &LinkSpec,
    jac: &DMatrix<f64>,
    y: &[f64],
    mu: &[f64],
    phi_w: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, p) = jac.shape();
    let mut u = DVector::zeros(p);
    let mut k = DMatrix::zeros(p, p);
    for i in 0..n {
        let m1 = link.dmu_deta(mu[i]);
        let t1 = family.t1(y[i], mu[i])?;
        let w = -m1 * m1 * family.d_quantities(mu[i], phi_w)?.d2;
        let row = jac.row(i);
        for r in 0..p {
            u[r] += row[r] * m1 * t1;
            for s in r..p {
                k[(r, s)] += w * row[r] * row[s];
            }
        }
    }
    for r in 0..p {
        for s in 0..r {
            k[(r, s)] = k[(s, r)];
        }
    }
    Ok((u, k))
}

/// Response moved into the link and family domains so that `h(y)` is finite.
fn adjusted_response(family: &FamilySpec, link: &LinkSpec, y: &[f64]) -> Vec<f64> {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ok = |v: f64| {
        let (lo, hi) = link.mu_domain();
        v > lo && v < hi && family.mu_admissible(v) && link.h(v).is_finite()
    };
    y.iter()
        .map(|&v| {
            if ok(v) {
                v
            } else if ok(0.5 * (v + mean)) {
                0.5 * (v + mean)
            } else {
                mean
            }
        })
        .collect()
}

fn initial_beta(
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
    y: &[f64],
) -> Result<Vec<f64>> {
    let p = predictor.n_params();
    let seed = vec![1.0; p];
    let z: Vec<f64> = adjusted_response(family, link, y).iter().map(|&v| link.h(v)).collect();
    let attempt = || -> Result<Vec<f64>> {
        let (eta, jac) = predictor.eval_first_order(x, &seed)?;
        let resid = DVector::from_iterator(z.len(), z.iter().zip(eta.iter()).map(|(a, b)| a - b));
        let jtj = jac.transpose() * &jac;
        let delta = spd_factor(&jtj)?.solve(&(jac.transpose() * resid));
        let beta: Vec<f64> = seed.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
        evaluate(family, link, predictor, x, y, &beta)?;
        Ok(beta)
    };
    match attempt() {
        Ok(b) if z.iter().all(|v| v.is_finite()) => Ok(b),
        _ => Ok(seed),
    }
}

/// Profile precision used to scale the von Mises scoring step.
fn profile_phi(family: &FamilySpec, y: &[f64], mu: &[f64], opts: &FitOptions) -> f64 {
    if let Some(phi) = opts.phi {
        return phi;
    }
    match fit_phi(family, y, mu, opts) {
        Ok(f) => f.phi,
        Err(_) => 1.0,
    }
}

pub fn fit_beta(
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
    y: &[f64],
    opts: &FitOptions,
) -> Result<BetaFit> {
    opts.validate()?;
    check_data(family, predictor, x, y)?;
    let n = y.len() as f64;
    let phi_dependent_w = matches!(family.kind(), FamilyKind::VonMises);

    let beta0 = match &opts.beta_init {
        Some(b) => {
            if b.len() != predictor.n_params() {
                return Err(Error::invalid(format!(
                    "beta_init has {} entries, predictor has {} parameters",
                    b.len(),
                    predictor.n_params()
                )));
            }
            b.clone()
        }
        None => initial_beta(family, link, predictor, x, y)?,
    };
    let mut state = evaluate(family, link, predictor, x, y, &beta0)?;
    let initial_deviance = state.deviance;
    let mut last_step = f64::INFINITY;
    let mut iterations = 0;

    loop {
        let phi_w = if phi_dependent_w {
            profile_phi(family, y, &state.mu, opts)
        } else {
            1.0
        };
        let (_, jac) = predictor.eval_first_order(x, &state.beta)?;
        let (u, k) = score_and_information(family, link, &jac, y, &state.mu, phi_w)?;
        let score_max = u.amax() / n;
        let converged = score_max <= opts.tol_score && last_step <= opts.tol_step;
        let finish = |state: State, k: DMatrix<f64>, converged: bool, iterations: usize| BetaFit {
            beta: state.beta,
            eta: state.eta,
            mu: state.mu,
            deviance: state.deviance,
            initial_deviance,
            k_beta: k,
            iterations,
            converged,
            score_max,
        };
        if converged || iterations >= opts.max_iter {
            return Ok(finish(state, k, converged, iterations));
        }
        iterations += 1;

        let delta = spd_factor(&k)?.solve(&u);
        let mut lambda = 1.0;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..=opts.step_halving_max {
            let trial: Vec<f64> = state.beta.iter().zip(delta.iter()).map(|(b, d)| b + lambda * d).collect();
            match evaluate(family, link, predictor, x, y, &trial) {
                Ok(s) if s.deviance <= state.deviance => {
                    accepted = Some(s);
                    break;
                }
                Ok(_) => {}
                Err(e) => last_err = Some(e),
            }
            lambda *= 0.5;
        }
        match accepted {
            Some(s) => {
                last_step = s
                    .beta
                    .iter()
                    .zip(&state.beta)
                    .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
                    .fold(0.0, f64::max);
                state = s;
            }
            None => {
                // deviance flat to rounding: accept the current point if the score is tiny
                if score_max <= 100.0 * opts.tol_score {
                    return Ok(finish(state, k, true, iterations));
                }
                if let Some(e) = last_err {
                    return Err(Error::StepHalving(format!(
                        "iteration {iterations}: no admissible step after {} halvings ({e})",
                        opts.step_halving_max
                    )));
                }
                return Ok(finish(state, k, false, iterations));
            }
        }
    }
}

// ---------------------------------------------------------------------------
// φ
// ---------------------------------------------------------------------------

/// Left-hand side of the precision score equation, `Σ[t(yᵢ, μᵢ) + c(yᵢ)] + n a₁'(φ)`,
/// and its φ-derivative `n a₁''(φ)`.
pub fn phi_score(family: &FamilySpec, y: &[f64], mu: &[f64], phi: f64) -> Result<(f64, f64)> {
    let mut s = 0.0;
    for (&yi, &mi) in y.iter().zip(mu) {
        s += family.t(yi, mi)? + family.c_of_y(yi)?;
    }
    let a = family.a1_derivatives(phi)?;
    let n = y.len() as f64;
    Ok((s + n * a.d1, n * a.d2))
}

pub fn fit_phi(family: &FamilySpec, y: &[f64], mu: &[f64], opts: &FitOptions) -> Result<PhiFit> {
    opts.validate()?;
    if y.len() != mu.len() || y.is_empty() {
        return Err(Error::invalid("y and mu must be non-empty and of equal length"));
    }
    if let Some(phi) = opts.phi {
        return Ok(PhiFit {
            phi,
            at_boundary: false,
            estimated: false,
        });
    }
    if let Some(phi) = family.phi_fixed() {
        return Ok(PhiFit {
            phi,
            at_boundary: false,
            estimated: false,
        });
    }
    if !family.has_a1() {
        return Err(Error::unsupported(format!(
            "precision estimation is not available for {}; supply phi explicitly",
            family.id()
        )));
    }
    let n = y.len() as f64;
    let (mut lo, mut hi) = opts.phi_bracket;
    let s_lo = phi_score(family, y, mu, lo)?.0;
    let s_hi = phi_score(family, y, mu, hi)?.0;
    if s_hi >= 0.0 {
        return Ok(PhiFit {
            phi: hi,
            at_boundary: true,
            estimated: true,
        });
    }
    if s_lo <= 0.0 {
        return Err(Error::NoSignChange {
            lo,
            hi,
            f_lo: s_lo,
            f_hi: s_hi,
        });
    }
    let tol = 1e-10 * n;
    let mut phi = 1.0f64.clamp(lo, hi);
    for _ in 0..500 {
        let (s, ds) = phi_score(family, y, mu, phi)?;
        if s.abs() <= tol {
            return Ok(PhiFit {
                phi,
                at_boundary: false,
                estimated: true,
            });
        }
        if s > 0.0 {
            lo = phi;
        } else {
            hi = phi;
        }
        let newton = phi - s / ds;
        phi = if newton > lo && newton < hi && ds < 0.0 {
            newton
        } else {
            (lo * hi).sqrt()
        };
        if (hi - lo) <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    Ok(PhiFit {
        phi,
        at_boundary: false,
        estimated: true,
    })
}

pub fn asymptotic_covariance(fit: &FitResult, family: &FamilySpec, n: usize) -> Result<Covariances> {
    covariances(&fit.k_beta, fit.phi_hat, fit.phi_estimated, family, n)
}

fn covariances(k_beta: &DMatrix<f64>, phi: f64, estimated: bool, family: &FamilySpec, n: usize) -> Result<Covariances> {
    let cov_beta = spd_inverse(k_beta)? / phi;
    let (var_phi, var_sigma2) = if estimated {
        let v = 1.0 / (n as f64 * family.a2nd(phi)?);
        (Some(v), Some(v / phi.powi(4)))
    } else {
        (None, None)
    };
    Ok(Covariances {
        cov_beta,
        var_phi,
        var_sigma2,
    })
}

/// `X̃ᵀWX̃` at arbitrary `(β, φ)`.
pub fn information_matrix(
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
    beta: &[f64],
    phi: f64,
) -> Result<DMatrix<f64>> {
    let (eta, jac) = predictor.eval_first_order(x, beta)?;
    let mut mu = Vec::with_capacity(eta.len());
    for &e in eta.iter() {
        mu.push(link.hinv(e)?);
    }
    let mut k = DMatrix::zeros(jac.ncols(), jac.ncols());
    for i in 0..mu.len() {
        let m1 = link.dmu_deta(mu[i]);
        let w = -m1 * m1 * family.d_quantities(mu[i], phi)?.d2;
        let row = jac.row(i);
        k += w * row.transpose() * row;
    }
    Ok(symmetrize(k))
}

/// Fits β, then φ, and assembles first-order covariances.
pub fn fit(
    family: &FamilySpec,
    link: &LinkSpec,
    predictor: &PredictorModel,
    x: &DMatrix<f64>,
    y: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let b = fit_beta(family, link, predictor, x, y, opts)?;
    let phi = fit_phi(family, y, &b.mu, opts)?;
    // von Mises weights were built at a profile precision; rebuild at φ̂
    let k_beta = if matches!(family.kind(), FamilyKind::VonMises) {
        information_matrix(family, link, predictor, x, &b.beta, phi.phi)?
    } else {
        b.k_beta
    };
    let cov = covariances(&k_beta, phi.phi, phi.estimated, family, y.len())?;
    Ok(FitResult {
        family: family.id(),
        link: link.id().to_string(),
        parameter_names: predictor.parameter_names().to_vec(),
        beta_hat: b.beta,
        phi_hat: phi.phi,
        sigma2_hat: 1.0 / phi.phi,
        phi_estimated: phi.estimated,
        phi_at_boundary: phi.at_boundary,
        mu_hat: b.mu,
        eta_hat: b.eta,
        deviance: b.deviance,
        k_beta,
        cov_beta: cov.cov_beta,
        var_phi: cov.var_phi,
        var_sigma2: cov.var_sigma2,
        iterations: b.iterations,
        converged: b.converged,
        score_max: b.score_max,
    })
}
