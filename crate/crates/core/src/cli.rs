//! Command-line front end for the `dmskew` binary.
//!
//! Exit status: 0 success, 1 usage error, 2 data or domain error,
//! 3 non-convergence (diagnostics are still written).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::families::{make_family, FamilySpec, FAMILY_IDS};
use crate::fitting::{fit, FitOptions, FitResult};
use crate::links::{make_link, LinkSpec, LINK_IDS};
use crate::montecarlo::{run_study, run_study_with_threads, CovariateSpec, StudyConfig};
use crate::predictor::PredictorModel;
use crate::skewness::{edgeworth_pdf, skewness_at, skewness_report, SkewnessReport};
use crate::specfun::std_normal_pdf;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dmskew", version, about = "Dispersion-model regression and skewness of estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model to CSV data and write the fit as JSON.
    Fit(ModelArgs),
    /// Fit and write the skewness report as JSON.
    Skew(SkewArgs),
    /// Run a replicated simulation study.
    Simulate(SimulateArgs),
    /// Print Edgeworth density values for a standardized skewness.
    Edgeworth(EdgeworthArgs),
    /// List families, links and capabilities.
    Families,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    family: String,
    #[arg(long)]
    link: String,
    /// Predictor expression, e.g. "b0 + b1*x1 + x2^b2".
    #[arg(long)]
    predictor: String,
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Name of the response column; the other columns are covariates.
    #[arg(long)]
    response: String,
    /// Comma-separated parameter names; inferred from the predictor if omitted.
    #[arg(long, value_delimiter = ',')]
    params: Option<Vec<String>>,
    /// Comma-separated starting values for β.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    start: Option<Vec<f64>>,
    /// Known precision; skips its estimation.
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SkewArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// True β for an additional report at the truth.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    true_beta: Option<Vec<f64>>,
    /// True φ for the report at the truth.
    #[arg(long)]
    true_phi: Option<f64>,
    /// Write an SVG of the Edgeworth density against the normal density.
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Parameter plotted in the SVG; defaults to the first.
    #[arg(long)]
    svg_param: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// key=value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    /// CSV report path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EdgeworthArgs {
    /// Skewness of the standardized estimate.
    #[arg(long, allow_hyphen_values = true)]
    gamma1: f64,
    #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
    from: f64,
    #[arg(long, default_value_t = 4.0, allow_hyphen_values = true)]
    to: f64,
    #[arg(long, default_value_t = 81)]
    points: usize,
}

/// Output of `skew`: the report at the estimates, the fit, and optionally
/// the report at supplied true values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewOutput {
    #[serde(flatten)]
    pub estimated: SkewnessReport,
    pub at_truth: Option<SkewnessReport>,
    pub fit: FitResult,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    NonConvergence(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::NonConvergence(_) => EXIT_NONCONVERGENCE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NonConvergence(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::UnknownId { .. } | Error::Syntax { .. } | Error::UnknownIdentifier { .. } | Error::InvalidArgument(_) => {
                CliError::Usage(msg)
            }
            Error::NonConvergence { .. } | Error::StepHalving(_) | Error::NoSignChange { .. } => CliError::NonConvergence(msg),
            Error::Domain(_) | Error::Unsupported(_) | Error::Singular { .. } | Error::Numerical(_) => CliError::Data(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Runs the command line `args` (including the program name) and returns the exit status.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Skew(a) => cmd_skew(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Edgeworth(a) => cmd_edgeworth(&a),
        Command::Families => cmd_families(),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .map_err(|e| CliError::Data(format!("cannot write to stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Data(format!("json: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Response column and covariate matrix read from a headed CSV file.
struct Dataset {
    covariate_names: Vec<String>,
    x: DMatrix<f64>,
    y: Vec<f64>,
}

fn read_dataset(path: &Path, response: &str) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let yi = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| CliError::Usage(format!("response column `{response}` not found; columns: {}", headers.join(", "))))?;
    let covariate_names: Vec<String> = headers.iter().enumerate().filter(|(i, _)| *i != yi).map(|(_, h)| h.clone()).collect();
    let mut y = Vec::new();
    let mut cells = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Data(format!("{}: row {}, column `{}`: `{field}` is not a number", path.display(), r + 2, headers[c]))
            })?;
            if c == yi {
                y.push(v);
            } else {
                cells.push(v);
            }
        }
    }
    let q = covariate_names.len();
    let x = DMatrix::from_row_slice(y.len(), q, &cells);
    Ok(Dataset { covariate_names, x, y })
}

struct Model {
    family: FamilySpec,
    link: LinkSpec,
    predictor: PredictorModel,
    data: Dataset,
}

fn load_model(a: &ModelArgs) -> CliResult<Model> {
    let family = make_family(&a.family)?;
    let link = make_link(&a.link)?;
    let data = read_dataset(&a.data, &a.response)?;
    let predictor = match &a.params {
        Some(p) => PredictorModel::parse(&a.predictor, &data.covariate_names, p)?,
        None => PredictorModel::parse_with_inferred_parameters(&a.predictor, &data.covariate_names)?,
    };
    Ok(Model {
        family,
        link,
        predictor,
        data,
    })
}

fn fit_model(a: &ModelArgs, m: &Model) -> CliResult<FitResult> {
    let opts = FitOptions {
        max_iter: a.max_iter,
        beta_init: a.start.clone(),
        phi: a.phi,
        ..FitOptions::default()
    };
    Ok(fit(&m.family, &m.link, &m.predictor, &m.data.x, &m.data.y, &opts)?)
}

fn not_converged(f: &FitResult) -> CliError {
    CliError::NonConvergence(format!(
        "iteration stopped after {} steps with max |score|/n = {:.3e}",
        f.iterations, f.score_max
    ))
}

fn cmd_fit(a: &ModelArgs) -> CliResult<()> {
    let m = load_model(a)?;
    let f = fit_model(a, &m)?;
    write_output(a.out.as_deref(), &to_json(&f)?)?;
    if !f.converged {
        return Err(not_converged(&f));
    }
    Ok(())
}

fn cmd_skew(a: &SkewArgs) -> CliResult<()> {
    let m = load_model(&a.model)?;
    let f = fit_model(&a.model, &m)?;
    let estimated = skewness_report(&f, &m.family, &m.link, &m.predictor, &m.data.x)?;
    let at_truth = match &a.true_beta {
        Some(b) => {
            let phi = a.true_phi.or(m.family.phi_fixed()).unwrap_or(f.phi_hat);
            Some(skewness_at(&m.family, &m.link, &m.predictor, &m.data.x, b, phi, f.phi_estimated)?)
        }
        None => None,
    };
    if let Some(path) = &a.svg {
        let names = m.predictor.parameter_names();
        let idx = match &a.svg_param {
            Some(p) => names
                .iter()
                .position(|n| n == p)
                .ok_or_else(|| CliError::Usage(format!("unknown parameter `{p}`; parameters: {}", names.join(", "))))?,
            None => 0,
        };
        let svg = edgeworth_svg(&names[idx], estimated.gamma1_beta[idx]);
        fs::write(path, svg).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    }
    let converged = f.converged;
    let out = SkewOutput {
        estimated,
        at_truth,
        fit: f,
    };
    write_output(a.model.out.as_deref(), &to_json(&out)?)?;
    if !converged {
        return Err(not_converged(&out.fit));
    }
    Ok(())
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", no + 1))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(format!("line {}: empty key", no + 1));
        }
        if map.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(format!("line {}: duplicate key `{k}`", no + 1));
        }
    }
    Ok(map)
}

fn list<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Usage(format!("config `{key}`: cannot parse `{s}`"))))
        .collect()
}

fn scalar<T: std::str::FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.trim().parse().map_err(|_| CliError::Usage(format!("config `{key}`: cannot parse `{v}`")))
}

fn uniform_bounds(key: &str, v: &str) -> CliResult<(f64, f64)> {
    let inner = v
        .trim()
        .strip_prefix("uniform(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| CliError::Usage(format!("config `{key}`: expected uniform(a, b), got `{v}`")))?;
    let b: Vec<f64> = list(key, inner)?;
    match b[..] {
        [lo, hi] => Ok((lo, hi)),
        _ => Err(CliError::Usage(format!("config `{key}`: expected two bounds"))),
    }
}

/// Builds a study configuration from `key = value` entries.
///
/// Keys: `family`, `link`, `predictor`, `covariates` (names), `parameters`,
/// `beta`, `phi`, `n`, `replications`, `seed`, `warm_start`, and either one
/// `covariate.NAME = uniform(a, b)` per covariate or `covariates_file`
/// pointing to a headed CSV (relative to the config file).
fn study_config_from_map(map: &BTreeMap<String, String>, base: &Path) -> CliResult<StudyConfig> {
    const KNOWN: [&str; 12] = [
        "family",
        "link",
        "predictor",
        "covariates",
        "parameters",
        "beta",
        "phi",
        "n",
        "replications",
        "seed",
        "warm_start",
        "covariates_file",
    ];
    for k in map.keys() {
        if !KNOWN.contains(&k.as_str()) && !k.starts_with("covariate.") {
            return Err(CliError::Usage(format!("config: unknown key `{k}`")));
        }
    }
    let get = |k: &str| map.get(k).ok_or_else(|| CliError::Usage(format!("config: missing key `{k}`")));
    let covariate_names: Vec<String> = list("covariates", get("covariates")?)?;
    let parameter_names = match map.get("parameters") {
        Some(v) => list("parameters", v)?,
        None => Vec::new(),
    };
    let n = match map.get("n") {
        Some(v) => scalar("n", v)?,
        None => 0,
    };
    let covariates = match map.get("covariates_file") {
        Some(file) => {
            let path = base.join(file);
            let mut rdr = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(&path)
                .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
            let headers: Vec<String> = rdr
                .headers()
                .map_err(|e| CliError::Data(e.to_string()))?
                .iter()
                .map(str::to_string)
                .collect();
            let idx: Vec<usize> = covariate_names
                .iter()
                .map(|c| {
                    headers
                        .iter()
                        .position(|h| h == c)
                        .ok_or_else(|| CliError::Data(format!("{}: no column `{c}`", path.display())))
                })
                .collect::<CliResult<_>>()?;
            let mut rows = Vec::new();
            for rec in rdr.records() {
                let rec = rec.map_err(|e| CliError::Data(e.to_string()))?;
                let row = idx
                    .iter()
                    .map(|&i| {
                        rec[i]
                            .parse::<f64>()
                            .map_err(|_| CliError::Data(format!("{}: `{}` is not a number", path.display(), &rec[i])))
                    })
                    .collect::<CliResult<Vec<f64>>>()?;
                rows.push(row);
            }
            CovariateSpec::Fixed { rows }
        }
        None => {
            let bounds = covariate_names
                .iter()
                .map(|c| {
                    let key = format!("covariate.{c}");
                    uniform_bounds(&key, get(&key)?)
                })
                .collect::<CliResult<_>>()?;
            CovariateSpec::Uniform { bounds }
        }
    };
    Ok(StudyConfig {
        family: get("family")?.clone(),
        link: get("link")?.clone(),
        predictor: get("predictor")?.clone(),
        covariate_names,
        parameter_names,
        beta_true: list("beta", get("beta")?)?,
        phi_true: match map.get("phi") {
            Some(v) => scalar("phi", v)?,
            None => 1.0,
        },
        n,
        replications: match map.get("replications") {
            Some(v) => scalar("replications", v)?,
            None => 10_000,
        },
        seed: match map.get("seed") {
            Some(v) => scalar("seed", v)?,
            None => 0,
        },
        covariates,
        warm_start: match map.get("warm_start") {
            Some(v) => scalar("warm_start", v)?,
            None => true,
        },
    })
}

fn cmd_simulate(a: &SimulateArgs) -> CliResult<()> {
    let path = a
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("simulate requires --config".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let map = parse_key_values(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cfg = study_config_from_map(&map, base)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    if let Some(n) = a.n {
        cfg.n = n;
    }
    if cfg.n == 0 {
        if let CovariateSpec::Fixed { rows } = &cfg.covariates {
            cfg.n = rows.len();
        }
    }
    let report = match a.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(t) => run_study_with_threads(&cfg, t)?,
        None => run_study(&cfg)?,
    };
    write_output(a.out.as_deref(), &report.to_csv()?)?;
    if let Some(j) = &a.json {
        fs::write(j, to_json(&report)?).map_err(|e| CliError::Data(format!("cannot write {}: {e}", j.display())))?;
    }
    Ok(())
}

fn cmd_edgeworth(a: &EdgeworthArgs) -> CliResult<()> {
    if !(a.from.is_finite() && a.to.is_finite() && a.from < a.to && a.points >= 2 && a.gamma1.is_finite()) {
        return Err(CliError::Usage("edgeworth needs finite --from < --to, --points >= 2 and finite --gamma1".into()));
    }
    let mut s = String::from("x,edgeworth,normal\n");
    for k in 0..a.points {
        let x = a.from + (a.to - a.from) * k as f64 / (a.points - 1) as f64;
        let _ = writeln!(s, "{x:.6},{:.12e},{:.12e}", edgeworth_pdf(a.gamma1, x), std_normal_pdf(x));
    }
    write_output(None, &s)
}

fn cmd_families() -> CliResult<()> {
    let mut s = String::new();
    let _ = writeln!(s, "{:<30} {:>13} {:>13} {:>8} {:>9}", "family", "d_quantities", "phi_inference", "sampler", "density");
    let yes = |b: bool| if b { "yes" } else { "no" };
    for id in FAMILY_IDS {
        // parametrized entries are shown with a representative value
        let probe = id.replace("(p)", "(1.5)").replace("(b)", "(1)").replace("(c)", "(0.5)");
        let caps = make_family(&probe)?.capabilities();
        let _ = writeln!(
            s,
            "{:<30} {:>13} {:>13} {:>8} {:>9}",
            id,
            yes(caps.d_quantities),
            yes(caps.phi_inference),
            yes(caps.sampler),
            yes(caps.closed_form_density)
        );
    }
    let _ = writeln!(s, "\ntweedie(p) supports precision inference and sampling for p in {{0, 2, 3}}");
    let _ = writeln!(s, "\nlinks: {}", LINK_IDS.join(", "));
    write_output(None, &s)
}

/// Histogram bars of the Edgeworth density with the Edgeworth and normal
/// curves overlaid, on the standardized scale.
pub fn edgeworth_svg(label: &str, gamma1: f64) -> String {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let (lo, hi) = (-4.0, 4.0);
    let grid: Vec<f64> = (0..=200).map(|k| lo + (hi - lo) * k as f64 / 200.0).collect();
    let ymax = grid
        .iter()
        .map(|&x| edgeworth_pdf(gamma1, x).max(std_normal_pdf(x)))
        .fold(0.0f64, f64::max)
        * 1.1;
    let sx = |x: f64| pad + (x - lo) / (hi - lo) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y.max(0.0) / ymax * (h - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let bins = 32;
    let bw = (hi - lo) / bins as f64;
    for b in 0..bins {
        let x0 = lo + b as f64 * bw;
        // bin average by Simpson's rule
        let avg = (edgeworth_pdf(gamma1, x0) + 4.0 * edgeworth_pdf(gamma1, x0 + bw / 2.0) + edgeworth_pdf(gamma1, x0 + bw)) / 6.0;
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#c6dbef" stroke="#6baed6"/>"##,
            sx(x0),
            sy(avg),
            sx(x0 + bw) - sx(x0),
            sy(0.0) - sy(avg)
        );
    }
    let poly = |f: &dyn Fn(f64) -> f64| {
        grid.iter()
            .map(|&x| format!("{:.2},{:.2}", sx(x), sy(f(x))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#08519c" stroke-width="2" points="{}"/>"##,
        poly(&|x| edgeworth_pdf(gamma1, x))
    );
    let _ = writeln!(
        s,
        r##"<polyline fill="none" stroke="#a50f15" stroke-width="1.5" stroke-dasharray="6,4" points="{}"/>"##,
        poly(&std_normal_pdf)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        sy(0.0),
        w - pad,
        sy(0.0)
    );
    let esc = label.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let _ = writeln!(
        s,
        r#"<text x="{pad}" y="24" font-family="sans-serif" font-size="14">{esc}: gamma1 = {gamma1:.4} (solid: Edgeworth, dashed: normal)</text>"#
    );
    s.push_str("</svg>\n");
    s
}
