//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! A criterion can fail for two reasons. A published closed form may
//! disagree with an independent oracle; the line then reads FAIL, the
//! detail names the disagreement, and the process still exits 0. An
//! implementation may disagree with its own oracles; that is recorded as a
//! hard failure and the process exits 1.

use std::fmt::Write as _;
use std::process::Command;
use std::time::{Duration, Instant};

use dispersion_skew::families::{make_family, unit_deviance, FamilySpec};
use dispersion_skew::fitting::{fit, FitOptions};
use dispersion_skew::links::LinkSpec;
use dispersion_skew::montecarlo::{run_study, sample_response, StudyConfig};
use dispersion_skew::predictor::PredictorModel;
use dispersion_skew::skewness::{
    beta_cumulants_at, edgeworth_pdf, phi_third_cumulant, phi_third_cumulant_generic, sigma2_third_cumulant,
};
use dispersion_skew::specfun::{bessel_ratio, digamma, std_normal_pdf, tetragamma, trigamma};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

#[derive(Default)]
struct Outcome {
    /// Published-form disagreements.
    soft: Vec<String>,
    /// Implementation disagreements.
    hard: Vec<String>,
    notes: Vec<String>,
}

impl Outcome {
    fn check(&mut self, hard: bool, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            if hard {
                self.hard.push(what());
            } else {
                self.soft.push(what());
            }
        }
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE) || a == b
}

fn fam(id: &str) -> FamilySpec {
    make_family(id).unwrap()
}

// ---------------------------------------------------------------------------
// 1
// ---------------------------------------------------------------------------

fn closed_forms() -> Outcome {
    let mut o = Outcome::default();
    for id in ["normal", "inverse_gaussian", "reciprocal_inverse_gaussian"] {
        let f = fam(id);
        for v in [0.5f64, 1.0, 4.0] {
            for n in [10usize, 32, 100] {
                let nf = n as f64;
                let (k, g) = phi_third_cumulant(&f, n, v).unwrap();
                let (kg, gg) = phi_third_cumulant_generic(&f, n, v).unwrap();
                let (ek, eg) = (16.0 * v.powi(3) / (nf * nf), 2f64.powf(2.5) / nf.sqrt());
                o.check(true, rel_close(k, ek, 1e-12) && rel_close(kg, ek, 1e-12), || format!("{id} kappa3(phi) {k} vs {ek}"));
                o.check(true, rel_close(g, eg, 1e-12) && rel_close(gg, eg, 1e-12), || format!("{id} gamma1(phi) {g} vs {eg}"));
                let (k, g) = sigma2_third_cumulant(&f, n, v).unwrap();
                let (ek, eg) = (8.0 * v.powi(3) / (nf * nf), 2f64.powf(1.5) / nf.sqrt());
                o.check(true, rel_close(k, ek, 1e-12), || format!("{id} kappa3(sigma2) {k} vs {ek}"));
                o.check(true, rel_close(g, eg, 1e-12), || format!("{id} gamma1(sigma2) {g} vs {eg}"));
            }
        }
    }
    o.notes.push("normal, inverse Gaussian and reciprocal inverse Gaussian rows over 27 points".into());
    o
}

// ---------------------------------------------------------------------------
// 2
// ---------------------------------------------------------------------------

fn polygamma_forms() -> Outcome {
    let mut o = Outcome::default();
    let n = 25usize;
    let nf = n as f64;
    for id in ["gamma", "reciprocal_gamma", "log_gamma"] {
        let f = fam(id);
        for phi in [0.5f64, 2.0, 4.0] {
            let (p1, p2) = (trigamma(phi).unwrap(), tetragamma(phi).unwrap());
            let k_phi = 2.0 * phi * (1.0 + phi * phi * p2) / (nf * nf * (1.0 - phi * p1).powi(3));
            let g_phi = -2.0 * (p2 + phi.powi(-2)) / (nf.sqrt() * (p1 - 1.0 / phi).powf(1.5));
            let (k, g) = phi_third_cumulant_generic(&f, n, phi).unwrap();
            o.check(true, rel_close(k, k_phi, 1e-10), || format!("{id} phi={phi}: kappa3(phi) {k} vs {k_phi}"));
            o.check(true, rel_close(g, g_phi, 1e-10), || format!("{id} phi={phi}: gamma1(phi) {g} vs {g_phi}"));

            let s = (1.0 / phi).sqrt();
            let num = p2 / s.powi(6) + 3.0 * p1 / s.powi(4) - 2.0 / (s * s);
            let k_s2 = -2.0 * num / (nf * nf * (s.powi(-4) - p1 / s.powi(6)).powi(3));
            let g_s2 = 2.0 * (p2 / s.powi(9) + 3.0 * p1 / s.powi(7) - 2.0 / s.powi(5))
                / (nf.sqrt() * (p1 / s.powi(6) - s.powi(-4)).powf(1.5));
            let (k, g) = sigma2_third_cumulant(&f, n, 1.0 / phi).unwrap();
            o.check(true, rel_close(k, k_s2, 1e-10), || format!("{id} phi={phi}: kappa3(sigma2) {k} vs {k_s2}"));
            o.check(true, rel_close(g, g_s2, 1e-10), || format!("{id} phi={phi}: gamma1(sigma2) {g} vs {g_s2}"));
        }
    }

    // von Mises: the tabulated dispersion row against the in-text form with 3σ²
    let f = fam("von_mises");
    for phi in [0.5f64, 2.0, 4.0] {
        let b = bessel_ratio(phi).unwrap();
        let s2 = 1.0 / phi;
        let in_text = 2.0 * s2.powi(6) * (3.0 * s2 * b.r1 + b.r2) / (nf * nf * b.r1.powi(3));
        let table = 2.0 * s2.powi(6) * (b.r1 * s2 + b.r2) / (nf * nf * b.r1.powi(3));
        let (k, _) = sigma2_third_cumulant(&f, n, s2).unwrap();
        o.check(true, rel_close(k, in_text, 1e-10), || format!("von_mises phi={phi}: kappa3(sigma2) {k} vs {in_text}"));
        if !rel_close(k, table, 1e-10) {
            o.notes.push(format!(
                "von Mises tabulated kappa3(sigma2) omits the factor 3 (phi={phi}: {table:.6e} vs {k:.6e})"
            ));
        }
    }
    o.notes.truncate(1);
    o.notes.insert(0, "gamma, reciprocal gamma and log-gamma at phi in {0.5, 2, 4}".into());
    o
}

// ---------------------------------------------------------------------------
// 3
// ---------------------------------------------------------------------------

type Variance = fn(f64) -> (f64, f64);

fn glm_variance(id: &str) -> Variance {
    match id {
        "normal" => |_| (1.0, 0.0),
        "poisson" => |m| (m, 1.0),
        "binomial" => |m| (m * (1.0 - m), 1.0 - 2.0 * m),
        "gamma" => |m| (m * m, 2.0 * m),
        "inverse_gaussian" => |m| (m.powi(3), 3.0 * m * m),
        _ => unreachable!(),
    }
}

struct Design {
    x: DMatrix<f64>,
    beta: Vec<f64>,
    phi: f64,
}

/// Random linear design with every mean inside `(lo, hi)` on the link scale.
fn linear_design(rng: &mut ChaCha20Rng, link: LinkSpec, p: usize, (lo, hi): (f64, f64), fixed_phi: bool) -> Design {
    let n = rng.random_range(p + 8..=50);
    let (a, b) = (link.h(lo), link.h(hi));
    let mid = 0.5 * (a + b);
    let spread = 0.4 * (b - a).abs() / (p - 1).max(1) as f64;
    let mut beta = vec![mid];
    for _ in 1..p {
        beta.push(rng.random_range(-spread..spread));
    }
    let x = DMatrix::from_fn(n, p - 1, |_, _| rng.random::<f64>());
    let phi = if fixed_phi { 1.0 } else { rng.random_range(0.5..5.0) };
    Design { x, beta, phi }
}

fn linear_predictor(p: usize) -> PredictorModel {
    let covs: Vec<String> = (1..p).map(|j| format!("x{j}")).collect();
    let params: Vec<String> = (0..p).map(|j| format!("b{j}")).collect();
    let mut src = "b0".to_string();
    for j in 1..p {
        let _ = write!(src, " + b{j}*x{j}");
    }
    PredictorModel::parse(&src, &covs, &params).unwrap()
}

struct Locals {
    mu: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

fn link_locals(pred: &PredictorModel, link: LinkSpec, d: &Design) -> Locals {
    let eta = pred.eval_eta(&d.x, &d.beta).unwrap();
    let mu: Vec<f64> = eta.iter().map(|&e| link.hinv(e).unwrap()).collect();
    let m1 = mu.iter().map(|&m| link.dmu_deta(m)).collect();
    let m2 = mu.iter().map(|&m| link.d2mu_deta2(m)).collect();
    Locals { mu, m1, m2 }
}

/// Bracket on `m³`, its magnitude before cancellation, and weight on `m·n`.
type Display<'a> = &'a dyn Fn(usize) -> (f64, f64, f64);

fn display_sum(m: &DMatrix<f64>, nm: &DMatrix<f64>, a: usize, phi: f64, cube: bool, term: Display) -> (f64, f64) {
    let (mut s, mut scale) = (0.0, 0.0);
    for i in 0..m.ncols() {
        let (br, size, wn) = term(i);
        let mai = m[(a, i)];
        let lead = if cube { mai.powi(3) } else { mai };
        let tail = -3.0 * mai * nm[(a, i)] * wn;
        s += lead * br + tail;
        scale += (lead * size).abs() + tail.abs();
    }
    (s / (phi * phi), scale / (phi * phi))
}

fn two(a: f64, b: f64, wn: f64) -> (f64, f64, f64) {
    (a + b, a.abs() + b.abs(), wn)
}

fn agree(engine: f64, (value, scale): (f64, f64)) -> bool {
    (engine - value).abs() <= 1e-10 * scale.max(engine.abs()).max(1e-300)
}

/// One-parameter cumulant formula for an exponential family.
fn scalar_oracle(v: Variance, link: LinkSpec, rows: &[(f64, f64, f64)], phi: f64) -> (f64, f64) {
    let (mut k111, mut k3d, mut k21, mut k11) = (0.0, 0.0, 0.0, 0.0);
    let mut size = 0.0;
    for &(e, e1, e2) in rows {
        let mu = link.hinv(e).unwrap();
        let (var, var1) = v(mu);
        let mu1 = link.dmu_deta(mu) * e1;
        let mu2 = link.d2mu_deta2(mu) * e1 * e1 + link.dmu_deta(mu) * e2;
        let q1 = mu1 / var;
        let q2 = mu2 / var - mu1 * mu1 * var1 / (var * var);
        k11 += phi * mu1 * q1;
        k3d += -phi * (2.0 * mu1 * q2 + mu2 * q1);
        k21 += phi * q2 * q1 * var;
        k111 += phi * q1.powi(3) * var * var1;
        size += phi * ((q1.powi(3) * var * var1).abs() + 3.0 * (2.0 * mu1 * q2 + mu2 * q1).abs() + 6.0 * (q2 * q1 * var).abs());
    }
    ((k111 + 3.0 * k3d + 6.0 * k21) / k11.powi(3), size / k11.powi(3).abs())
}

fn reductions() -> Outcome {
    let mut o = Outcome::default();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let glm = ["normal", "poisson", "binomial", "gamma", "inverse_gaussian"];
    let links = [LinkSpec::Identity, LinkSpec::Log, LinkSpec::Reciprocal];
    let mut printed_glm_fail = 0;
    let mut cases = 0;
    for id in glm {
        let family = fam(id);
        let v = glm_variance(id);
        let range = if id == "binomial" { (0.2, 0.8) } else { (0.5, 3.0) };
        for link in links {
            for _ in 0..20 {
                let p = rng.random_range(1..=4);
                let pred = linear_predictor(p);
                let d = linear_design(&mut rng, link, p, range, family.phi_fixed().is_some());
                let k = beta_cumulants_at(&family, &link, &pred, &d.x, &d.beta, d.phi).unwrap();
                let l = link_locals(&pred, link, &d);
                cases += 1;
                let mut printed_ok = true;
                for a in 0..p {
                    let corrected = display_sum(&k.m, &k.n, a, d.phi, true, &|i| {
                        let (vv, v1) = v(l.mu[i]);
                        two(-3.0 * l.m1[i] * l.m2[i] / vv, l.m1[i].powi(3) * v1 / (vv * vv), 0.0)
                    });
                    let printed = display_sum(&k.m, &k.n, a, d.phi, true, &|i| {
                        let (vv, v1) = v(l.mu[i]);
                        two(3.0 * l.m1[i] * l.m2[i] / vv, -2.0 * l.m1[i].powi(3) * v1 / (vv * vv), 0.0)
                    });
                    o.check(true, agree(k.kappa3[a], corrected), || {
                        format!("GLM {id}/{}: engine {} vs corrected sum {}", link.id(), k.kappa3[a], corrected.0)
                    });
                    printed_ok &= agree(k.kappa3[a], printed);
                }
                if !printed_ok {
                    printed_glm_fail += 1;
                }
            }
        }
    }
    if printed_glm_fail > 0 {
        o.soft.push(format!("GLM display: {printed_glm_fail}/{cases} designs disagree"));
    }

    // one-parameter nonlinear models against the scalar cumulant formula
    let pred = PredictorModel::parse("exp(b*x1)", &["x1"], &["b"]).unwrap();
    let x = DMatrix::from_fn(13, 1, |i, _| 0.1 + 0.07 * i as f64);
    let b = 0.6;
    let rows: Vec<_> = (0..13)
        .map(|i| {
            let xi = x[(i, 0)];
            let e = (b * xi).exp();
            (e, xi * e, xi * xi * e)
        })
        .collect();
    for id in ["poisson", "gamma", "inverse_gaussian"] {
        for link in [LinkSpec::Log, LinkSpec::Identity, LinkSpec::Sqrt] {
            let phi = if id == "poisson" { 1.0 } else { 2.0 };
            let e = beta_cumulants_at(&fam(id), &link, &pred, &x, &[b], phi).unwrap().kappa3[0];
            let oracle = scalar_oracle(glm_variance(id), link, &rows, phi);
            o.check(true, agree(e, oracle), || format!("scalar oracle {id}/{}: {e} vs {}", link.id(), oracle.0));
        }
    }

    // nonlinear exponential-family models
    let nl = PredictorModel::parse("b0 + b1*x1 + x2^b2", &["x1", "x2"], &["b0", "b1", "b2"]).unwrap();
    let mut printed_nl_fail = 0;
    let mut nl_cases = 0;
    for id in ["poisson", "gamma", "inverse_gaussian"] {
        let family = fam(id);
        let v = glm_variance(id);
        for link in [LinkSpec::Log, LinkSpec::Sqrt, LinkSpec::Identity] {
            for _ in 0..10 {
                let n = rng.random_range(15..=50);
                let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { rng.random::<f64>() } else { 1.0 + rng.random::<f64>() });
                let beta = vec![rng.random_range(0.3..0.8), rng.random_range(0.2..1.0), rng.random_range(1.2..2.5)];
                let phi = if family.phi_fixed().is_some() { 1.0 } else { rng.random_range(0.5..5.0) };
                let d = Design { x, beta, phi };
                let k = beta_cumulants_at(&family, &link, &nl, &d.x, &d.beta, d.phi).unwrap();
                let l = link_locals(&nl, link, &d);
                nl_cases += 1;
                let mut printed_ok = true;
                for a in 0..3 {
                    let corrected = display_sum(&k.m, &k.n, a, d.phi, true, &|i| {
                        let (vv, v1) = v(l.mu[i]);
                        two(-3.0 * l.m1[i] * l.m2[i] / vv, l.m1[i].powi(3) * v1 / (vv * vv), l.m1[i].powi(2) / vv)
                    });
                    let printed = display_sum(&k.m, &k.n, a, d.phi, true, &|i| {
                        let (vv, v1) = v(l.mu[i]);
                        two(3.0 * l.m1[i] * l.m2[i] / vv, -2.0 * l.m1[i].powi(3) * v1 / (vv * vv), l.m1[i] / vv)
                    });
                    o.check(true, agree(k.kappa3[a], corrected), || {
                        format!("EFNLM {id}/{}: engine {} vs corrected {}", link.id(), k.kappa3[a], corrected.0)
                    });
                    printed_ok &= agree(k.kappa3[a], printed);
                }
                if !printed_ok {
                    printed_nl_fail += 1;
                }
            }
        }
    }
    if printed_nl_fail > 0 {
        o.soft.push(format!("nonlinear exponential-family display: {printed_nl_fail}/{nl_cases} designs disagree"));
    }

    // constant coefficient of variation
    let table_k = |c: f64, id: &str| -> (f64, f64) {
        let c2 = c * c;
        match id {
            "const_cv_normal" => ((1.0 + 2.0 * c2) / c2, (6.0 + 10.0 * c2) / c2),
            "const_cv_ig" => (0.5 * (1.0 + c2) / c2, (3.0 + c2) / c2),
            "const_cv_lognormal" => (1.0 / c2.ln_1p(), 3.0 / c2.ln_1p()),
            _ => (c2, c2 * (c + 3.0)),
        }
    };
    let mut printed_cv_fail = 0;
    let mut cv_cases = 0;
    for (id, c) in [("const_cv_normal", 0.3), ("const_cv_ig", 0.4), ("const_cv_lognormal", 0.5), ("const_cv_weibull", 2.0)] {
        let family = fam(&format!("{id}({c})"));
        let (k2, k3) = family.cv_constants().unwrap();
        let (pk2, pk3) = table_k(c, id);
        for (pred, link) in [(&nl, LinkSpec::Log), (&nl, LinkSpec::Sqrt), (&linear_predictor(3), LinkSpec::Log)] {
            for _ in 0..5 {
                let n = rng.random_range(15..=50);
                let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { rng.random::<f64>() } else { 1.0 + rng.random::<f64>() });
                let beta = vec![rng.random_range(0.3..0.8), rng.random_range(0.2..1.0), rng.random_range(1.2..2.5)];
                let d = Design { x, beta, phi: 1.0 };
                let k = beta_cumulants_at(&family, &link, pred, &d.x, &d.beta, 1.0).unwrap();
                let l = link_locals(pred, link, &d);
                cv_cases += 1;
                let mut printed_ok = true;
                for a in 0..3 {
                    let bracket = |k2: f64, k3: f64, w: f64, i: usize| {
                        let (m, m1, m2) = (l.mu[i], l.m1[i], l.m2[i]);
                        two((6.0 * k2 - k3) * m1.powi(3) / m.powi(3), -3.0 * k2 * m1 * m2 / (m * m), w)
                    };
                    let corrected = display_sum(&k.m, &k.n, a, 1.0, true, &|i| bracket(k2, k3, k2 * (l.m1[i] / l.mu[i]).powi(2), i));
                    let printed = display_sum(&k.m, &k.n, a, 1.0, false, &|i| {
                        bracket(pk2, pk3, pk2 * (l.m1[i] / (l.mu[i] * l.mu[i])).powi(2), i)
                    });
                    o.check(true, agree(k.kappa3[a], corrected), || {
                        format!("{id}/{}: engine {} vs corrected {}", link.id(), k.kappa3[a], corrected.0)
                    });
                    printed_ok &= agree(k.kappa3[a], printed);
                }
                if !printed_ok {
                    printed_cv_fail += 1;
                }
            }
        }
    }
    if printed_cv_fail > 0 {
        o.soft.push(format!("constant-CV display: {printed_cv_fail}/{cv_cases} designs disagree"));
    }

    // von Mises
    let vm = fam("von_mises");
    let mut printed_vm_fail = 0;
    let mut vm_cases = 0;
    for link in [LinkSpec::Identity, LinkSpec::Tangent] {
        for _ in 0..10 {
            let n = rng.random_range(15..=50);
            let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { rng.random::<f64>() } else { 1.0 + rng.random::<f64>() });
            let beta = vec![rng.random_range(-0.6..-0.2), rng.random_range(0.1..0.4), rng.random_range(0.5..1.0)];
            let phi = rng.random_range(0.5..6.0);
            let d = Design { x, beta, phi };
            let k = beta_cumulants_at(&vm, &link, &nl, &d.x, &d.beta, phi).unwrap();
            let l = link_locals(&nl, link, &d);
            let r = bessel_ratio(phi).unwrap().r;
            for a in 0..3 {
                let corrected = display_sum(&k.m, &k.n, a, phi, true, &|i| two(-3.0 * l.m1[i] * l.m2[i] * r, 0.0, l.m1[i].powi(2) * r));
                o.check(true, agree(k.kappa3[a], corrected), || {
                    format!("von Mises/{}: engine {} vs corrected {}", link.id(), k.kappa3[a], corrected.0)
                });
            }
            if link == LinkSpec::Identity {
                vm_cases += 1;
                let mut printed_ok = true;
                for a in 0..3 {
                    let s: f64 = (0..n).map(|i| k.m[(a, i)] * k.n[(a, i)]).sum();
                    let scale: f64 = (0..n).map(|i| (k.m[(a, i)] * k.n[(a, i)]).abs()).sum::<f64>() * 3.0 * r / (phi * phi);
                    let printed = 3.0 * r / (phi * phi) * s;
                    printed_ok &= agree(k.kappa3[a], (printed, scale));
                    o.check(true, agree(k.kappa3[a], (-printed, scale)), || {
                        format!("von Mises identity: engine {} vs -3r/phi^2 sum m n {}", k.kappa3[a], -printed)
                    });
                }
                if !printed_ok {
                    printed_vm_fail += 1;
                }
            }
        }
    }
    if printed_vm_fail > 0 {
        o.soft.push(format!("von Mises nonlinear identity display (+3r/phi^2): {printed_vm_fail}/{vm_cases} designs disagree"));
    }

    // exact zeros
    for (id, phi) in [("von_mises", 2.0), ("normal", 1.5)] {
        for p in 1..=4 {
            let pred = linear_predictor(p);
            let d = linear_design(&mut rng, LinkSpec::Identity, p, (-0.5, 0.5), false);
            let k = beta_cumulants_at(&fam(id), &LinkSpec::Identity, &pred, &d.x, &d.beta, phi).unwrap();
            o.check(true, k.kappa3.iter().all(|v| *v == 0.0), || format!("{id} identity linear not zero: {:?}", k.kappa3));
        }
    }
    o.notes.push(format!(
        "engine matches corrected reductions and scalar oracle on {} designs",
        cases + nl_cases + cv_cases + 2 * vm_cases + 9
    ));
    o
}

// ---------------------------------------------------------------------------
// 4
// ---------------------------------------------------------------------------

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + k as f64 * h);
    }
    s * h / 3.0
}

/// `E[g(Y)]` for a continuous family by quadrature, with the total mass.
fn expectation(f: &FamilySpec, mu: f64, phi: f64, g: &dyn Fn(f64) -> f64) -> (f64, f64) {
    let dens = |y: f64| f.log_density(y, mu, phi).map(f64::exp).unwrap_or(0.0);
    let n = 200_000;
    if f.id() == "von_mises" {
        let m = simpson(|y| dens(y), mu - std::f64::consts::PI, mu + std::f64::consts::PI, n);
        return (simpson(|y| dens(y) * g(y), mu - std::f64::consts::PI, mu + std::f64::consts::PI, n), m);
    }
    if !f.y_admissible(-0.5) {
        let (a, b) = (mu.ln() - 14.0, mu.ln() + 8.0);
        let m = simpson(|u| dens(u.exp()) * u.exp(), a, b, n);
        (simpson(|u| dens(u.exp()) * u.exp() * g(u.exp()), a, b, n), m)
    } else {
        let (a, b) = (mu - 45.0, mu + 12.0);
        (simpson(|y| dens(y) * g(y), a, b, n), simpson(dens, a, b, n))
    }
}

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> Vec<f64> {
    let p = x0.len();
    let mut best = x0.to_vec();
    let mut fbest = f(&best);
    let mut step = step;
    for restart in 0..20 {
        let mut pts: Vec<Vec<f64>> = vec![best.clone()];
        for j in 0..p {
            let mut v = best.clone();
            v[j] += step;
            pts.push(v);
        }
        let mut vals: Vec<f64> = pts.iter().map(|v| f(v)).collect();
        for _ in 0..20_000 {
            let mut idx: Vec<usize> = (0..=p).collect();
            idx.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            pts = idx.iter().map(|&i| pts[i].clone()).collect();
            vals = idx.iter().map(|&i| vals[i]).collect();
            let size = (1..=p).map(|i| (0..p).map(|j| (pts[i][j] - pts[0][j]).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
            if size < 1e-13 {
                break;
            }
            let cen: Vec<f64> = (0..p).map(|j| pts[..p].iter().map(|v| v[j]).sum::<f64>() / p as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..p).map(|j| cen[j] + t * (pts[p][j] - cen[j])).collect() };
            let xr = along(-1.0);
            let fr = f(&xr);
            if fr < vals[0] {
                let xe = along(-2.0);
                let fe = f(&xe);
                if fe < fr {
                    pts[p] = xe;
                    vals[p] = fe;
                } else {
                    pts[p] = xr;
                    vals[p] = fr;
                }
            } else if fr < vals[p - 1] {
                pts[p] = xr;
                vals[p] = fr;
            } else {
                let xc = if fr < vals[p] { along(-0.5) } else { along(0.5) };
                let fc = f(&xc);
                if fc < vals[p].min(fr) {
                    pts[p] = xc;
                    vals[p] = fc;
                } else {
                    for i in 1..=p {
                        pts[i] = (0..p).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
                        vals[i] = f(&pts[i]);
                    }
                }
            }
        }
        let i = (0..=p).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        if vals[i] >= fbest && restart > 0 {
            step *= 0.1;
            if step < 1e-9 {
                break;
            }
        }
        if vals[i] <= fbest {
            fbest = vals[i];
            best = pts[i].clone();
        }
    }
    best
}

fn oracles() -> Outcome {
    let mut o = Outcome::default();

    // quadrature
    let cases: [(&str, f64, f64); 14] = [
        ("normal", 0.7, 2.0),
        ("gamma", 1.3, 2.5),
        ("inverse_gaussian", 1.3, 2.0),
        ("reciprocal_gamma", 1.3, 3.0),
        ("log_gamma", 0.4, 2.0),
        ("reciprocal_inverse_gaussian", 1.2, 2.0),
        ("von_mises", 0.5, 2.5),
        ("const_cv_normal(0.3)", 2.0, 1.0),
        ("const_cv_ig(0.4)", 2.0, 1.0),
        ("const_cv_lognormal(0.5)", 2.0, 1.0),
        ("const_cv_weibull(2)", 2.0, 1.0),
        ("tweedie(0)", 0.7, 2.0),
        ("tweedie(2)", 1.3, 2.5),
        ("tweedie(3)", 1.3, 2.0),
    ];
    for (id, mu, phi) in cases {
        let f = fam(id);
        let d = f.d_quantities(mu, phi).unwrap();
        let tder = |y: f64| f.t_derivatives(y, mu).unwrap_or((0.0, 0.0, 0.0));
        let (e1, mass) = expectation(&f, mu, phi, &|y| tder(y).0);
        let (e2, _) = expectation(&f, mu, phi, &|y| tder(y).1);
        let (e3, _) = expectation(&f, mu, phi, &|y| tder(y).2);
        o.check(true, (mass - 1.0).abs() < 1e-5, || format!("{id}: density mass {mass}"));
        o.check(true, e1.abs() < 1e-5, || format!("{id}: E t' = {e1}"));
        o.check(true, (e2 - d.d2).abs() < 1e-5 * d.d2.abs().max(1.0), || format!("{id}: E t'' = {e2} vs d2 {}", d.d2));
        o.check(true, (e3 - d.d3).abs() < 1e-5 * d.d3.abs().max(1.0), || format!("{id}: E t''' = {e3} vs d3 {}", d.d3));
    }

    // predictor derivatives
    let sources = [
        ("b0 + b1*x1 + x2^b2", vec![0.5, 1.0, 2.0]),
        ("exp(b0 + b1*x1) / (1 + b2*x2)", vec![0.2, -0.4, 0.3]),
        ("b0*log(x2 + b1) + sin(b2*x1)", vec![1.2, 0.7, 0.9]),
        ("sqrt(b0 + b1*x1*x2) - b2^2*x1", vec![1.5, 0.8, 0.6]),
    ];
    let x = DMatrix::from_fn(7, 2, |i, j| if j == 0 { 0.1 + 0.13 * i as f64 } else { 1.0 + 0.15 * i as f64 });
    for (src, beta) in &sources {
        let m = PredictorModel::parse(src, &["x1", "x2"], &["b0", "b1", "b2"]).unwrap();
        let d = m.derivatives(&x, beta).unwrap();
        let h = 1e-5;
        for r in 0..3 {
            let mut up = beta.clone();
            let mut dn = beta.clone();
            up[r] += h;
            dn[r] -= h;
            let (eu, ju) = m.eval_first_order(&x, &up).unwrap();
            let (ed, jd) = m.eval_first_order(&x, &dn).unwrap();
            for i in 0..7 {
                let fd = (eu[i] - ed[i]) / (2.0 * h);
                let an = d.jacobian[(i, r)];
                o.check(true, (fd - an).abs() <= 1e-6 * an.abs().max(1.0), || format!("{src}: jacobian ({i},{r}) {an} vs {fd}"));
                for s in 0..3 {
                    let fd = (ju[(i, s)] - jd[(i, s)]) / (2.0 * h);
                    let an = d.hessians[i][(s, r)];
                    o.check(true, (fd - an).abs() <= 1e-5 * an.abs().max(1.0), || format!("{src}: hessian {i} ({s},{r}) {an} vs {fd}"));
                }
            }
        }
    }

    // fit_beta against direct deviance minimization; fit_phi against bisection
    let family = fam("reciprocal_gamma");
    let link = LinkSpec::Sqrt;
    let pred = PredictorModel::parse("b0 + b1*x1 + x2^b2", &["x1", "x2"], &["b0", "b1", "b2"]).unwrap();
    let mut worst_beta = 0.0f64;
    let mut worst_phi = 0.0f64;
    for seed in 0..10u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(100 + seed);
        let n = 20;
        let x = DMatrix::from_fn(n, 2, |_, j| if j == 0 { rng.random::<f64>() } else { 1.0 + rng.random::<f64>() });
        let eta = pred.eval_eta(&x, &[0.5, 1.0, 2.0]).unwrap();
        let y: Vec<f64> = eta.iter().map(|&e| sample_response(&family, e * e, 4.0, &mut rng).unwrap()).collect();
        let fitted = match fit(&family, &link, &pred, &x, &y, &FitOptions::default()) {
            Ok(f) if f.converged => f,
            other => {
                o.hard.push(format!("seed {seed}: fit failed: {:?}", other.err()));
                continue;
            }
        };
        let dev = |b: &[f64]| -> f64 {
            let Ok(eta) = pred.eval_eta(&x, b) else { return f64::INFINITY };
            let mut mu = Vec::with_capacity(n);
            for &e in eta.iter() {
                match link.hinv(e) {
                    Ok(m) if m > 0.0 => mu.push(m),
                    _ => return f64::INFINITY,
                }
            }
            unit_deviance(&family, &y, &mu).unwrap_or(f64::INFINITY)
        };
        let nm = nelder_mead(&dev, &[0.5, 1.0, 2.0], 0.2);
        for r in 0..3 {
            let diff = (nm[r] - fitted.beta_hat[r]).abs();
            worst_beta = worst_beta.max(diff);
            o.check(true, diff <= 1e-5, || format!("seed {seed}: beta[{r}] {} vs deviance minimizer {}", fitted.beta_hat[r], nm[r]));
        }
        // Σ [log(μ/y) − μ/y] + n (log φ + 1 − ψ(φ)) is decreasing in φ
        let st: f64 = y.iter().zip(&fitted.mu_hat).map(|(y, m)| (m / y).ln() - m / y).sum();
        let score = |p: f64| st + n as f64 * (p.ln() + 1.0 - digamma(p).unwrap());
        let (mut lo, mut hi) = (1e-6f64, 1e6f64);
        for _ in 0..300 {
            let mid = (lo * hi).sqrt();
            if score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rel = (fitted.phi_hat - lo).abs() / lo;
        worst_phi = worst_phi.max(rel);
        o.check(true, rel <= 1e-9, || format!("seed {seed}: phi {} vs bisection {lo}", fitted.phi_hat));
    }
    o.notes.push(format!(
        "14 quadrature families, 4 predictors, worst |beta - minimizer| {worst_beta:.1e}, worst phi rel. error {worst_phi:.1e}"
    ));
    o
}

// ---------------------------------------------------------------------------
// 5
// ---------------------------------------------------------------------------

fn reproduction() -> Outcome {
    let mut o = Outcome::default();
    let sizes = [20usize, 40, 60];
    let mut reports = Vec::new();
    for &n in &sizes {
        // fresh covariates for every sample size
        let cfg = StudyConfig::power_model(n, 10_000, 20_260 + n as u64);
        match run_study(&cfg) {
            Ok(r) => reports.push(r),
            Err(e) => {
                o.hard.push(format!("n={n}: study failed: {e}"));
                return o;
            }
        }
    }
    let expected_sign = [-1.0, -1.0, 1.0, 1.0, 1.0];
    let names = ["b0", "b1", "b2", "phi", "sigma2"];
    let mut table = String::new();
    for (r, &n) in reports.iter().zip(&sizes) {
        let _ = write!(table, "n={n} (excluded {}):", r.replications - r.used);
        for row in &r.rows {
            let _ = write!(
                table,
                " {} {:+.3}/{:+.3}/{:+.3}",
                row.estimand,
                row.mean_estimated_gamma1,
                row.true_gamma1,
                row.sample_g3.unwrap_or(f64::NAN)
            );
        }
        table.push_str("; ");
    }
    o.notes.push(table.trim_end_matches("; ").to_string());

    // (a) sign pattern
    let mut wrong = Vec::new();
    for (r, &n) in reports.iter().zip(&sizes) {
        for (j, row) in r.rows.iter().enumerate() {
            let cols = [row.mean_estimated_gamma1, row.true_gamma1, row.sample_g3.unwrap_or(f64::NAN)];
            if cols.iter().any(|v| !(v * expected_sign[j] > 0.0)) {
                wrong.push(format!("{}@{n}", names[j]));
            }
        }
    }
    if !wrong.is_empty() {
        o.soft.push(format!("(a) sign pattern differs for {}", wrong.join(", ")));
    }

    // (b) true skewness decreasing in n
    let mut not_decreasing = Vec::new();
    for j in 0..names.len() {
        let t: Vec<f64> = reports.iter().map(|r| r.rows[j].true_gamma1.abs()).collect();
        if !(t[0] > t[1] && t[1] > t[2]) {
            not_decreasing.push(format!("{} {:.4}/{:.4}/{:.4}", names[j], t[0], t[1], t[2]));
        }
    }
    if !not_decreasing.is_empty() {
        o.soft.push(format!("(b) |true gamma1| not decreasing: {}", not_decreasing.join(", ")));
    }

    // (c) g₃ within a factor of 3 of the true skewness at n = 60
    let last = reports.last().unwrap();
    for row in &last.rows {
        let g3 = row.sample_g3.unwrap_or(f64::NAN);
        let ratio = g3 / row.true_gamma1;
        o.check(false, ratio > 1.0 / 3.0 && ratio < 3.0, || {
            format!("(c) {} at n=60: g3 {g3:.4} vs true {:.4}", row.estimand, row.true_gamma1)
        });
    }
    // the estimated and true columns must agree with the simulation in sign
    for (r, &n) in reports.iter().zip(&sizes) {
        for row in &r.rows {
            let g3 = row.sample_g3.unwrap_or(f64::NAN);
            if row.true_gamma1.abs() > 0.1 {
                o.check(true, row.true_gamma1 * g3 > 0.0 && row.mean_estimated_gamma1 * g3 > 0.0, || {
                    format!("{} at n={n}: true {:.4}, estimated {:.4}, sample {g3:.4}", row.estimand, row.true_gamma1, row.mean_estimated_gamma1)
                });
            }
        }
    }
    o
}

// ---------------------------------------------------------------------------
// 6
// ---------------------------------------------------------------------------

fn edgeworth() -> Outcome {
    let mut o = Outcome::default();
    for g in [0.0, 0.3, 1.0] {
        let mass = simpson(|x| edgeworth_pdf(g, x), -10.0, 10.0, 20_000);
        o.check(true, (mass - 1.0).abs() <= 1e-8, || format!("gamma1={g}: mass {mass}"));
    }
    for k in 0..=400 {
        let x = -10.0 + 0.05 * k as f64;
        o.check(true, edgeworth_pdf(0.0, x) == std_normal_pdf(x), || format!("gamma1=0 differs from normal at {x}"));
    }
    o.notes.push("mass over [-10, 10] for gamma1 in {0, 0.3, 1}".into());
    o
}

// ---------------------------------------------------------------------------
// 7
// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let mut o = Outcome::default();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    std::fs::write(
        &cfg,
        "# power model\nfamily = reciprocal_gamma\nlink = sqrt\npredictor = b0 + b1*x1 + x2^b2\n\
         covariates = x1, x2\nparameters = b0, b1, b2\nbeta = 0.5, 1, 2\nphi = 4\nn = 20\nreplications = 300\n\
         covariate.x1 = uniform(0, 1)\ncovariate.x2 = uniform(1, 2)\n",
    )
    .unwrap();
    let run = |tag: &str, threads: &str| -> Option<(Vec<u8>, Vec<u8>)> {
        let csv = dir.path().join(format!("{tag}.csv"));
        let json = dir.path().join(format!("{tag}.json"));
        let status = Command::new(env!("CARGO_BIN_EXE_dmskew"))
            .args(["simulate", "--config"])
            .arg(&cfg)
            .args(["--seed", "42", "--threads", threads, "--out"])
            .arg(&csv)
            .arg("--json")
            .arg(&json)
            .status()
            .ok()?;
        if !status.success() {
            return None;
        }
        Some((std::fs::read(csv).ok()?, std::fs::read(json).ok()?))
    };
    let runs: Vec<_> = [("a", "1"), ("b", "1"), ("c", "4"), ("d", "3")].iter().map(|(t, n)| run(t, n)).collect();
    if runs.iter().any(Option::is_none) {
        o.hard.push("simulate exited with an error".into());
        return o;
    }
    let first = runs[0].as_ref().unwrap();
    for (k, r) in runs.iter().enumerate().skip(1) {
        o.check(true, r.as_ref().unwrap() == first, || format!("run {k} differs from run 0"));
    }
    o.notes.push(format!("4 runs over 1, 3 and 4 threads; {} CSV bytes identical", first.0.len()));
    o
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 7] = [
        ("closed-form precision and dispersion skewness", closed_forms, Some(Duration::from_secs(1))),
        ("polygamma expressions", polygamma_forms, Some(Duration::from_secs(1))),
        ("reduction equivalences", reductions, Some(Duration::from_secs(30))),
        ("oracle checks", oracles, Some(Duration::from_secs(120))),
        ("simulation reproduction", reproduction, Some(Duration::from_secs(300))),
        ("Edgeworth density", edgeworth, None),
        ("simulate determinism", determinism, None),
    ];
    let mut hard = 0;
    for (k, (name, run, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let mut out = run();
        let dt = t.elapsed();
        if let Some(b) = budget {
            if dt > *b {
                out.soft.push(format!("runtime {dt:.1?} over budget {b:?}"));
            }
        }
        let pass = out.soft.is_empty() && out.hard.is_empty();
        let mut line = format!("criterion {}: {} {name} ({dt:.2?})", k + 1, if pass { "PASS" } else { "FAIL" });
        for n in &out.notes {
            let _ = write!(line, "\n    {n}");
        }
        for s in &out.soft {
            let _ = write!(line, "\n    published form: {s}");
        }
        for h in out.hard.iter().take(10) {
            let _ = write!(line, "\n    IMPLEMENTATION: {h}");
        }
        if out.hard.len() > 10 {
            let _ = write!(line, "\n    ... {} more", out.hard.len() - 10);
        }
        println!("{line}");
        hard += out.hard.len();
    }
    if hard > 0 {
        println!("{hard} implementation check(s) failed");
        std::process::exit(1);
    }
}
