//! Replicated simulation: draw responses at fixed covariates, refit, and
//! compare the average estimated skewness with the skewness at the true
//! parameters and with the sample skewness of the estimates.
//!
//! Every replication uses its own ChaCha20 stream of the study seed, so a
//! report depends only on the configuration, never on the worker count.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Normal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::{make_family, FamilyKind, FamilySpec};
use crate::fitting::{fit, FitOptions};
use crate::links::{make_link, LinkSpec};
use crate::predictor::PredictorModel;
use crate::skewness::skewness_at;

/// Stream index reserved for the covariate draw; replication `r` uses `r + 1`.
const COVARIATE_STREAM: u64 = 0;

/// Largest tolerated share of failed replications.
pub const MAX_FAILURE_RATE: f64 = 0.05;

fn gamma(shape: f64, scale: f64) -> Result<Gamma<f64>> {
    Gamma::new(shape, scale).map_err(|e| Error::domain(format!("gamma({shape}, {scale}): {e}")))
}

fn inverse_gaussian(mean: f64, shape: f64) -> Result<InverseGaussian<f64>> {
    InverseGaussian::new(mean, shape).map_err(|e| Error::domain(format!("inverse Gaussian({mean}, {shape}): {e}")))
}

fn poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<f64> {
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let d = Poisson::new(lambda).map_err(|e| Error::domain(format!("Poisson({lambda}): {e}")))?;
    Ok(d.sample(rng))
}

/// Best–Fisher rejection sampler for the von Mises angle about zero.
fn von_mises_offset<R: Rng + ?Sized>(kappa: f64, rng: &mut R) -> f64 {
    if kappa < 1e-8 {
        return PI * (2.0 * rng.random::<f64>() - 1.0);
    }
    let tau = 1.0 + (1.0 + 4.0 * kappa * kappa).sqrt();
    let rho = (tau - (2.0 * tau).sqrt()) / (2.0 * kappa);
    let r = (1.0 + rho * rho) / (2.0 * rho);
    loop {
        let u1: f64 = rng.random();
        let z = (PI * u1).cos();
        let f = (1.0 + r * z) / (r + z);
        let c = kappa * (r - f);
        let u2: f64 = rng.random();
        if c * (2.0 - c) - u2 > 0.0 || (c / u2).ln() + 1.0 - c >= 0.0 {
            let u3: f64 = rng.random();
            let theta = f.clamp(-1.0, 1.0).acos();
            return if u3 > 0.5 { theta } else { -theta };
        }
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// One exact draw from the family at `(μ, φ)`.
pub fn sample_response<R: Rng + ?Sized>(family: &FamilySpec, mu: f64, phi: f64, rng: &mut R) -> Result<f64> {
    if !family.mu_admissible(mu) {
        return Err(Error::domain(format!("mu = {mu} outside the mean domain of {}", family.id())));
    }
    if !(phi > 0.0 && phi.is_finite()) {
        return Err(Error::domain(format!("precision phi must be positive and finite, got {phi}")));
    }
    let resolved = match family.kind() {
        FamilyKind::Tweedie { p } if p == 0.0 => FamilyKind::Normal,
        FamilyKind::Tweedie { p } if p == 2.0 => FamilyKind::Gamma,
        FamilyKind::Tweedie { p } if p == 3.0 => FamilyKind::InverseGaussian,
        k => k,
    };
    Ok(match resolved {
        FamilyKind::Normal => mu + rng.sample::<f64, _>(StandardNormal) / phi.sqrt(),
        FamilyKind::Poisson => poisson(mu, rng)?,
        FamilyKind::Binomial => {
            if rng.random::<f64>() < mu {
                1.0
            } else {
                0.0
            }
        }
        FamilyKind::Gamma => gamma(phi, mu / phi)?.sample(rng),
        FamilyKind::InverseGaussian => inverse_gaussian(mu, phi)?.sample(rng),
        // geometric with mean μ as a gamma–Poisson mixture
        FamilyKind::NegativeBinomial => {
            let lambda = gamma(1.0, mu)?.sample(rng);
            poisson(lambda, rng)?
        }
        FamilyKind::ReciprocalGamma => 1.0 / gamma(phi, 1.0 / (phi * mu))?.sample(rng),
        FamilyKind::LogGamma => mu + (gamma(phi, 1.0 / phi)?.sample(rng)).ln(),
        FamilyKind::ReciprocalInverseGaussian => 1.0 / inverse_gaussian(1.0 / mu, phi)?.sample(rng),
        FamilyKind::VonMises => wrap_angle(mu + von_mises_offset(phi, rng)),
        FamilyKind::ConstCvNormal { c } => {
            let d = Normal::new(mu, c * mu).map_err(|e| Error::domain(e.to_string()))?;
            d.sample(rng)
        }
        FamilyKind::ConstCvIg { c } => inverse_gaussian(mu, mu / (c * c))?.sample(rng),
        FamilyKind::ConstCvLognormal { c } => {
            let s2 = (c * c).ln_1p();
            let z: f64 = rng.sample(StandardNormal);
            (mu.ln() - 0.5 * s2 + s2.sqrt() * z).exp()
        }
        FamilyKind::ConstCvWeibull { c } => {
            let scale = mu / libm::tgamma(1.0 + 1.0 / c);
            let u: f64 = rng.random();
            scale * (-(1.0 - u).ln()).powf(1.0 / c)
        }
        FamilyKind::Ghs | FamilyKind::ExpVariance { .. } | FamilyKind::Tweedie { .. } => {
            return Err(Error::unsupported(format!("no sampler for family {}", family.id())))
        }
    })
}

/// `m₃ / m₂^{3/2}` with central moments averaged over the values.
pub fn sample_skewness(values: &[f64]) -> Result<f64> {
    if values.len() < 3 {
        return Err(Error::invalid(format!("sample skewness needs at least 3 values, got {}", values.len())));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    if !(m2 > 0.0) {
        return Err(Error::invalid("sample skewness of constant values is undefined"));
    }
    Ok(m3 / m2.powf(1.5))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateSpec {
    /// Independent `U(a, b)` columns, drawn once per study.
    Uniform { bounds: Vec<(f64, f64)> },
    /// Explicit `n × q` matrix, stored by rows.
    Fixed { rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub family: String,
    pub link: String,
    pub predictor: String,
    pub covariate_names: Vec<String>,
    /// Parameter names in the order of `beta_true`; inferred from the
    /// predictor when empty.
    #[serde(default)]
    pub parameter_names: Vec<String>,
    pub beta_true: Vec<f64>,
    pub phi_true: f64,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub covariates: CovariateSpec,
    /// Start each fit at the true β instead of the data-driven start.
    #[serde(default = "default_true")]
    pub warm_start: bool,
}

fn default_true() -> bool {
    true
}

impl StudyConfig {
    /// Reciprocal gamma, sqrt link, `b0 + b1*x1 + x2^b2`, `β = (½, 1, 2)`,
    /// `φ = 4`, with `x₁ ~ U(0, 1)` and `x₂ ~ U(1, 2)`.
    pub fn power_model(n: usize, replications: usize, seed: u64) -> Self {
        StudyConfig {
            family: "reciprocal_gamma".into(),
            link: "sqrt".into(),
            predictor: "b0 + b1*x1 + x2^b2".into(),
            covariate_names: vec!["x1".into(), "x2".into()],
            parameter_names: vec!["b0".into(), "b1".into(), "b2".into()],
            beta_true: vec![0.5, 1.0, 2.0],
            phi_true: 4.0,
            n,
            replications,
            seed,
            covariates: CovariateSpec::Uniform {
                bounds: vec![(0.0, 1.0), (1.0, 2.0)],
            },
            warm_start: true,
        }
    }
}

/// Parsed, validated study ingredients.
#[derive(Debug, Clone)]
pub struct Study {
    pub config: StudyConfig,
    pub family: FamilySpec,
    pub link: LinkSpec,
    pub predictor: PredictorModel,
    pub x: DMatrix<f64>,
}

impl Study {
    pub fn new(config: StudyConfig) -> Result<Self> {
        let family = make_family(&config.family)?;
        let link = make_link(&config.link)?;
        let predictor = if config.parameter_names.is_empty() {
            PredictorModel::parse_with_inferred_parameters(&config.predictor, &config.covariate_names)?
        } else {
            PredictorModel::parse(&config.predictor, &config.covariate_names, &config.parameter_names)?
        };
        if config.beta_true.len() != predictor.n_params() {
            return Err(Error::invalid(format!(
                "beta_true has {} entries, the predictor has {} parameters",
                config.beta_true.len(),
                predictor.n_params()
            )));
        }
        if config.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        if config.n <= predictor.n_params() {
            return Err(Error::invalid(format!("need n > p, got n = {} and p = {}", config.n, predictor.n_params())));
        }
        if !family.capabilities().sampler {
            return Err(Error::unsupported(format!("no sampler for family {}", family.id())));
        }
        let q = predictor.n_covariates();
        let x = match &config.covariates {
            CovariateSpec::Uniform { bounds } => {
                if bounds.len() != q {
                    return Err(Error::invalid(format!("{} covariate bounds for {q} covariates", bounds.len())));
                }
                for &(a, b) in bounds {
                    if !(a.is_finite() && b.is_finite() && a < b) {
                        return Err(Error::invalid(format!("invalid uniform bounds ({a}, {b})")));
                    }
                }
                let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
                rng.set_stream(COVARIATE_STREAM);
                let mut x = DMatrix::zeros(config.n, q);
                for i in 0..config.n {
                    for (j, &(a, b)) in bounds.iter().enumerate() {
                        x[(i, j)] = a + (b - a) * rng.random::<f64>();
                    }
                }
                x
            }
            CovariateSpec::Fixed { rows } => {
                if rows.len() != config.n || rows.iter().any(|r| r.len() != q) {
                    return Err(Error::invalid(format!("fixed covariates must be {} × {q}", config.n)));
                }
                DMatrix::from_fn(config.n, q, |i, j| rows[i][j])
            }
        };
        Ok(Study {
            config,
            family,
            link,
            predictor,
            x,
        })
    }

    /// True means at `beta_true`.
    pub fn true_means(&self) -> Result<Vec<f64>> {
        let eta = self.predictor.eval_eta(&self.x, &self.config.beta_true)?;
        eta.iter().map(|&e| self.link.hinv(e)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub estimand: String,
    pub mean_estimated_gamma1: f64,
    pub true_gamma1: f64,
    /// `None` with fewer than three usable replications.
    pub sample_g3: Option<f64>,
    pub mean_estimate: f64,
    pub true_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
    pub replications: usize,
    pub used: usize,
    pub non_converged: usize,
    pub failed: usize,
}

/// Estimates followed by their estimated skewness.
struct Replicate {
    estimates: Vec<f64>,
    gamma1: Vec<f64>,
}

enum Outcome {
    Used(Replicate),
    NonConverged,
    Failed,
}

fn replicate(study: &Study, mu: &[f64], r: usize) -> Outcome {
    let cfg = &study.config;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r as u64 + 1);
    let mut y = Vec::with_capacity(mu.len());
    for &m in mu {
        match sample_response(&study.family, m, cfg.phi_true, &mut rng) {
            Ok(v) => y.push(v),
            Err(_) => return Outcome::Failed,
        }
    }
    let opts = FitOptions {
        beta_init: cfg.warm_start.then(|| cfg.beta_true.clone()),
        ..FitOptions::default()
    };
    let f = match fit(&study.family, &study.link, &study.predictor, &study.x, &y, &opts) {
        Ok(f) => f,
        Err(Error::StepHalving(_)) | Err(Error::NoSignChange { .. }) => return Outcome::NonConverged,
        Err(_) => return Outcome::Failed,
    };
    if !f.converged || f.phi_at_boundary {
        return Outcome::NonConverged;
    }
    let s = match skewness_at(&study.family, &study.link, &study.predictor, &study.x, &f.beta_hat, f.phi_hat, f.phi_estimated) {
        Ok(s) => s,
        Err(_) => return Outcome::Failed,
    };
    let mut estimates = f.beta_hat.clone();
    let mut gamma1 = s.gamma1_beta.clone();
    if let (Some(gp), Some(gs)) = (s.gamma1_phi, s.gamma1_sigma2) {
        estimates.extend([f.phi_hat, f.sigma2_hat]);
        gamma1.extend([gp, gs]);
    }
    Outcome::Used(Replicate { estimates, gamma1 })
}

/// Runs the study using the global rayon pool.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    let study = Study::new(config.clone())?;
    let mu = study.true_means()?;
    for &m in &mu {
        if !study.family.mu_admissible(m) {
            return Err(Error::domain(format!("true mean {m} outside the domain of {}", study.family.id())));
        }
    }
    let fam = &study.family;
    let truth = skewness_at(fam, &study.link, &study.predictor, &study.x, &config.beta_true, config.phi_true, fam.phi_fixed().is_none() && fam.has_a1())?;

    let outcomes: Vec<Outcome> = (0..config.replications).into_par_iter().map(|r| replicate(&study, &mu, r)).collect();

    let mut names = study.predictor.parameter_names().to_vec();
    let mut true_gamma1 = truth.gamma1_beta.clone();
    let mut true_values = config.beta_true.clone();
    if let (Some(gp), Some(gs)) = (truth.gamma1_phi, truth.gamma1_sigma2) {
        names.extend(["phi".to_string(), "sigma2".to_string()]);
        true_gamma1.extend([gp, gs]);
        true_values.extend([config.phi_true, 1.0 / config.phi_true]);
    }
    let k = names.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut gamma_sums = vec![0.0; k];
    let (mut non_converged, mut failed) = (0, 0);
    for o in outcomes {
        match o {
            Outcome::Used(rep) => {
                for j in 0..k {
                    columns[j].push(rep.estimates[j]);
                    gamma_sums[j] += rep.gamma1[j];
                }
            }
            Outcome::NonConverged => non_converged += 1,
            Outcome::Failed => failed += 1,
        }
    }
    let bad = non_converged + failed;
    if bad as f64 > MAX_FAILURE_RATE * config.replications as f64 {
        return Err(Error::NonConvergence {
            failed: bad,
            total: config.replications,
        });
    }
    let used = config.replications - bad;
    let rows = (0..k)
        .map(|j| StudyRow {
            estimand: names[j].clone(),
            mean_estimated_gamma1: gamma_sums[j] / used as f64,
            true_gamma1: true_gamma1[j],
            sample_g3: sample_skewness(&columns[j]).ok(),
            mean_estimate: columns[j].iter().sum::<f64>() / used as f64,
            true_value: true_values[j],
        })
        .collect();
    Ok(StudyReport {
        config: config.clone(),
        rows,
        replications: config.replications,
        used,
        non_converged,
        failed,
    })
}

/// Runs the study on a dedicated pool with `threads` workers.
pub fn run_study_with_threads(config: &StudyConfig, threads: usize) -> Result<StudyReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| run_study(config))
}

impl StudyReport {
    /// `estimand, mean_estimated_gamma1, true_gamma1, sample_g3`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Numerical(format!("csv: {e}"));
        w.write_record(["estimand", "mean_estimated_gamma1", "true_gamma1", "sample_g3"]).map_err(io)?;
        for r in &self.rows {
            let g3 = r.sample_g3.map_or_else(|| "NaN".to_string(), |v| format!("{v:.10}"));
            w.write_record([
                r.estimand.clone(),
                format!("{:.10}", r.mean_estimated_gamma1),
                format!("{:.10}", r.true_gamma1),
                g3,
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Numerical(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Numerical(e.to_string()))
    }
}
