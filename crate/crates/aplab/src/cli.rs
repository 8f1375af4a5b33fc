//! Experiment orchestration behind the command-line front end: resolved
//! command specs, artifact writers, and the self-describing experiment
//! records written next to every primary output.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::count::APParams;
use crate::decomp::{sigma_table_cached, SigmaTable};
use crate::error::Result;
use crate::lattice::{
    build_lattice_model, l_alpha_contains, predicted_l_probability, IntervalFamily, LatticeModel,
    PmfPredictor,
};
use crate::selftest::run_selftest;
use crate::stats::{
    lclt_interval_prediction, lclt_scan, pearson, run_mc, ExperimentConfig, ScanReport,
};
use crate::theta::{extremal_ratio, f_direct, f_fourier, variance_lower_bound, ThetaEvaluator};

/// Directory for cached sigma tables, taken from this environment variable
/// when set.
pub const SIGMA_CACHE_ENV: &str = "APLAB_SIGMA_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subcommand {
    Sample,
    Decompose,
    Sigma,
    Lattice,
    Theta,
    Scan,
    Predict,
    Compare,
    Selftest,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Sample => "sample",
            Subcommand::Decompose => "decompose",
            Subcommand::Sigma => "sigma",
            Subcommand::Lattice => "lattice",
            Subcommand::Theta => "theta",
            Subcommand::Scan => "scan",
            Subcommand::Predict => "predict",
            Subcommand::Compare => "compare",
            Subcommand::Selftest => "selftest",
        }
    }

    /// Subcommands that need the multilinear decomposition and therefore
    /// refuse moduli with gcd(n, (k-1)!) != 1.
    fn needs_gcd(&self) -> bool {
        matches!(
            self,
            Subcommand::Decompose
                | Subcommand::Sigma
                | Subcommand::Lattice
                | Subcommand::Scan
                | Subcommand::Predict
                | Subcommand::Compare
        )
    }
}

/// Fully resolved invocation; every run records one of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommandSpec {
    pub subcommand: Subcommand,
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub samples: u64,
    pub seed: u64,
    pub shards: usize,
    pub out: PathBuf,
    pub format: OutputFormat,
    /// theta: profile parameter (defaults to the model's own delta elsewhere).
    pub delta: Option<f64>,
    /// theta: number of grid points over one period.
    pub grid: usize,
    /// scan/predict/compare: window halfwidth in units of sigma.
    pub window_sigmas: f64,
    /// Override of the num_samples * n^2 resource budget.
    pub budget: Option<u128>,
}

impl CommandSpec {
    pub fn new(subcommand: Subcommand) -> Self {
        CommandSpec {
            subcommand,
            n: 101,
            k: 3,
            p: 0.5,
            samples: 1_000_000,
            seed: 271_828,
            shards: 0,
            out: PathBuf::new(),
            format: OutputFormat::Csv,
            delta: None,
            grid: 1001,
            window_sigmas: 2.0,
            budget: None,
        }
    }

    fn out_prefix(&self) -> PathBuf {
        if self.out.as_os_str().is_empty() {
            PathBuf::from(self.subcommand.name())
        } else {
            self.out.clone()
        }
    }

    fn mc_config(&self, record_components: bool) -> ExperimentConfig {
        ExperimentConfig {
            n: self.n,
            k: self.k,
            p: self.p,
            num_samples: self.samples,
            seed: self.seed,
            shards: if self.shards == 0 {
                rayon::current_num_threads().max(1)
            } else {
                self.shards
            },
            record_components,
            budget: self.budget,
        }
    }
}

/// Provenance record written alongside every primary artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub command: String,
    pub config: CommandSpec,
    pub version: String,
    pub wall_time_secs: f64,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

fn sigma_cache_dir() -> Option<PathBuf> {
    std::env::var_os(SIGMA_CACHE_ENV).map(PathBuf::from)
}

fn load_sigma(spec: &CommandSpec) -> Result<SigmaTable> {
    let params = APParams::new(spec.n, spec.k)?;
    sigma_table_cached(&params, spec.p, sigma_cache_dir().as_deref())
}

fn load_model(spec: &CommandSpec) -> Result<LatticeModel> {
    let sigma = load_sigma(spec)?;
    build_lattice_model(spec.n, spec.k, spec.p, &sigma)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

fn config_comment(spec: &CommandSpec) -> Result<String> {
    Ok(format!("# config: {}", serde_json::to_string(spec)?))
}

#[derive(Debug, Serialize)]
struct JsonWrapped<'a, T: Serialize> {
    config: &'a CommandSpec,
    #[serde(flatten)]
    body: T,
}

/// Runs one resolved command, writing its artifacts and record. Returns the
/// record for callers that want the summary.
pub fn dispatch(spec: &CommandSpec) -> Result<ExperimentRecord> {
    let start = Instant::now();
    if spec.subcommand.needs_gcd() {
        APParams::new(spec.n, spec.k)?.require_gcd_ok()?;
    } else if !matches!(spec.subcommand, Subcommand::Theta | Subcommand::Selftest) {
        let params = APParams::new(spec.n, spec.k)?;
        if !params.gcd_ok {
            eprintln!(
                "warning: gcd(n, (k-1)!) != 1 for n={}, k={}; raw counting proceeds but \
                 decomposition-based subcommands will refuse these parameters",
                spec.n, spec.k
            );
        }
    }
    let (outputs, summary) = match spec.subcommand {
        Subcommand::Sample => run_sample(spec)?,
        Subcommand::Decompose => run_decompose(spec)?,
        Subcommand::Sigma => run_sigma(spec)?,
        Subcommand::Lattice => run_lattice(spec)?,
        Subcommand::Theta => run_theta(spec)?,
        Subcommand::Scan => run_scan(spec)?,
        Subcommand::Predict => run_predict(spec)?,
        Subcommand::Compare => run_compare(spec)?,
        Subcommand::Selftest => {
            let summary = run_selftest()?;
            (
                Vec::new(),
                serde_json::json!({ "checks": summary.total, "failed": summary.failed }),
            )
        }
    };

    let record = ExperimentRecord {
        command: spec.subcommand.name().to_string(),
        config: spec.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_secs: start.elapsed().as_secs_f64(),
        outputs: outputs.iter().map(|p: &PathBuf| p.display().to_string()).collect(),
        summary,
    };
    if spec.subcommand != Subcommand::Selftest {
        let record_path = spec.out_prefix().with_extension("record.json");
        write_json(&record_path, &record)?;
    }
    Ok(record)
}

fn run_sample(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let out = run_mc(&spec.mc_config(false))?;
    let prefix = spec.out_prefix();
    let path = match spec.format {
        OutputFormat::Csv => {
            let path = prefix.with_extension("csv");
            ensure_parent(&path)?;
            let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            out.histogram.write_csv(&mut file)?;
            file.flush()?;
            path
        }
        OutputFormat::Json => {
            let path = prefix.with_extension("json");
            let entries: Vec<[u64; 2]> =
                out.histogram.counts.iter().map(|(&v, &c)| [v, c]).collect();
            write_json(
                &path,
                &JsonWrapped { config: spec, body: serde_json::json!({ "histogram": entries }) },
            )?;
            path
        }
    };
    Ok((vec![path], serde_json::to_value(&out.summary)?))
}

fn run_decompose(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let out = run_mc(&spec.mc_config(true))?;
    let cs = out.components.expect("components recorded");
    let prefix = spec.out_prefix();
    let path = prefix.with_extension("csv");
    ensure_parent(&path)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(file, "{}", config_comment(spec)?)?;
    let header: Vec<String> = std::iter::once("sample".to_string())
        .chain(cs.degrees.iter().map(|d| format!("kapbar{d}")))
        .chain(std::iter::once("tail_norm".to_string()))
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for (i, (row, tail)) in cs.rows.iter().zip(&cs.tail_norm).enumerate() {
        let cells: Vec<String> = std::iter::once(i.to_string())
            .chain(row.iter().map(|v| v.to_string()))
            .chain(std::iter::once(tail.to_string()))
            .collect();
        writeln!(file, "{}", cells.join(","))?;
    }
    file.flush()?;
    Ok((vec![path], serde_json::to_value(&out.summary)?))
}

fn run_sigma(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let sigma = load_sigma(spec)?;
    let path = spec.out_prefix().with_extension("json");
    write_json(&path, &JsonWrapped { config: spec, body: &sigma })?;
    Ok((
        vec![path],
        serde_json::json!({
            "sigma_total": sigma.sigma_total,
            "sigma_y": sigma.sigma_y,
        }),
    ))
}

fn run_lattice(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let model = load_model(spec)?;
    let path = spec.out_prefix().with_extension("json");
    write_json(&path, &JsonWrapped { config: spec, body: &model })?;
    Ok((vec![path], serde_json::to_value(&model)?))
}

#[derive(Debug, Serialize)]
struct ThetaRecord {
    delta: f64,
    x_max: f64,
    x_min: f64,
    c: f64,
    f_max: f64,
    f_min: f64,
    mean: f64,
    parseval_series: f64,
    parseval_quadrature: f64,
}

fn run_theta(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let delta = spec.delta.unwrap_or(1.0 / 9.0);
    let ev = ThetaEvaluator::new(delta)?;
    let prefix = spec.out_prefix();

    let csv_path = prefix.with_extension("csv");
    ensure_parent(&csv_path)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(file, "{}", config_comment(spec)?)?;
    writeln!(file, "x,f_direct,f_fourier")?;
    for i in 0..spec.grid {
        let x = i as f64 / spec.grid as f64;
        writeln!(file, "{x},{},{}", f_direct(x, &ev), f_fourier(x, &ev))?;
    }
    file.flush()?;

    let ext = extremal_ratio(&ev);
    let vb = variance_lower_bound(&ev);
    let record = ThetaRecord {
        delta,
        x_max: ext.x_max,
        x_min: ext.x_min,
        c: ext.c,
        f_max: ext.f_max,
        f_min: ext.f_min,
        mean: (std::f64::consts::PI * delta).sqrt(),
        parseval_series: vb.series,
        parseval_quadrature: vb.quadrature,
    };
    let json_path = prefix.with_extension("json");
    write_json(&json_path, &JsonWrapped { config: spec, body: &record })?;
    let summary = serde_json::to_value(&record)?;
    Ok((vec![csv_path, json_path], summary))
}

fn run_scan(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let model = load_model(spec)?;
    let out = run_mc(&spec.mc_config(false))?;
    let report = lclt_scan(&out.histogram, &model, spec.window_sigmas * model.sigma_total)?;
    let path = spec.out_prefix().with_extension("json");
    write_json(&path, &JsonWrapped { config: spec, body: &report })?;
    let summary = serde_json::json!({
        "mc": out.summary,
        "pooled": report.pooled,
    });
    Ok((vec![path], summary))
}

fn run_predict(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let model = load_model(spec)?;
    let pred = PmfPredictor::new(&model)?;
    let lo = (model.mu - spec.window_sigmas * model.sigma_total).floor().max(0.0) as i64;
    let hi = (model.mu + spec.window_sigmas * model.sigma_total).ceil() as i64;
    let path = spec.out_prefix().with_extension("csv");
    ensure_parent(&path)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(file, "{}", config_comment(spec)?)?;
    writeln!(file, "x,predicted_pmf")?;
    let mut mass = 0.0;
    for x in lo..=hi {
        let p = pred.at(x);
        mass += p;
        writeln!(file, "{x},{p}")?;
    }
    file.flush()?;
    Ok((
        vec![path],
        serde_json::json!({ "window": [lo, hi], "window_mass": mass }),
    ))
}

/// Side-by-side comparison of the lattice-model prediction, the Monte Carlo
/// truth, and the constant-in-phase LCLT null.
#[derive(Debug, Serialize, Deserialize)]
pub struct CompareReport {
    pub pooled: crate::stats::PooledPhaseStats,
    pub alphas: Vec<f64>,
    pub empirical_l_probability: Vec<f64>,
    pub predicted_l_probability: Vec<f64>,
    /// |L_alpha| / (sqrt(2 pi) sigma): what a local CLT would predict,
    /// constant in alpha up to integer-rounding of the interval family.
    pub lclt_null_probability: Vec<f64>,
    pub prediction_extrapolated: bool,
    pub pearson_r: f64,
    pub empirical_max_min_ratio: f64,
    /// f_delta(0)/f_delta(1/2), the model's asymptotic contrast.
    pub lattice_contrast: f64,
    pub interval_half_width: f64,
    pub interval_count: u32,
    /// Total-variation distance between the heuristic pmf model and the
    /// empirical histogram over the scan window.
    pub tv_distance: f64,
}

fn run_compare(spec: &CommandSpec) -> Result<(Vec<PathBuf>, serde_json::Value)> {
    let model = load_model(spec)?;
    let out = run_mc(&spec.mc_config(false))?;
    let report = compare_report(spec, &model, &out.histogram)?;
    let path = spec.out_prefix().with_extension("json");
    write_json(&path, &JsonWrapped { config: spec, body: &report })?;
    let summary = serde_json::json!({
        "mc": out.summary,
        "pearson_r": report.pearson_r,
        "empirical_max_min_ratio": report.empirical_max_min_ratio,
        "lattice_contrast": report.lattice_contrast,
        "tv_distance": report.tv_distance,
    });
    Ok((vec![path], summary))
}

/// The alpha-profile contrast experiment on a finished histogram.
pub fn compare_report(
    spec: &CommandSpec,
    model: &LatticeModel,
    hist: &crate::stats::Histogram,
) -> Result<CompareReport> {
    let scan = lclt_scan(hist, model, spec.window_sigmas * model.sigma_total)?;
    let theta = model.theta()?;
    let fam_b = model.g / 8.0;
    let fam_s = 3u32;
    let eta = IntervalFamily::default_eta(model.n, model.k);
    let alphas: Vec<f64> = (0..10).map(|j| j as f64 / 10.0).collect();
    let mut empirical = Vec::new();
    let mut predicted = Vec::new();
    let mut null = Vec::new();
    let mut extrapolated = false;
    let total = hist.total as f64;
    let center = model.mu + model.x0;
    for &alpha in &alphas {
        let fam = IntervalFamily::new(alpha, fam_b, fam_s, eta)?;
        let mass: u64 = hist
            .counts
            .iter()
            .filter(|(&x, _)| {
                l_alpha_contains(model.g, alpha, fam_b, fam_s as i64, x as f64 - center)
            })
            .map(|(_, &c)| c)
            .sum();
        empirical.push(mass as f64 / total);
        let pred = predicted_l_probability(model, &fam, &theta)?;
        extrapolated |= pred.extrapolated;
        predicted.push(pred.value);
        // Integer count of L_alpha for the LCLT-null prediction.
        let lo = (center - (fam_s as f64 + 1.0) * model.g - fam_b).floor() as i64;
        let hi = (center + (fam_s as f64 + 1.0) * model.g + fam_b).ceil() as i64;
        let set_size = (lo..=hi)
            .filter(|&x| l_alpha_contains(model.g, alpha, fam_b, fam_s as i64, x as f64 - center))
            .count() as u64;
        null.push(lclt_interval_prediction(set_size, model.sigma_total));
    }
    let max = empirical.iter().cloned().fold(f64::MIN, f64::max);
    let min = empirical.iter().cloned().fold(f64::MAX, f64::min);
    let contrast = f_direct(0.0, &theta) / f_direct(0.5, &theta);
    let tv = tv_distance(hist, model, spec.window_sigmas)?;
    let pearson_r = pearson(&predicted, &empirical);
    Ok(CompareReport {
        pooled: scan.pooled,
        alphas,
        empirical_l_probability: empirical,
        predicted_l_probability: predicted,
        lclt_null_probability: null,
        prediction_extrapolated: extrapolated,
        pearson_r,
        empirical_max_min_ratio: max / min,
        lattice_contrast: contrast,
        interval_half_width: fam_b,
        interval_count: fam_s,
        tv_distance: tv,
    })
}

/// Total-variation distance 0.5 sum |empirical - predicted| over the
/// integers within window_sigmas of the mean (unnormalized tails ignored).
pub fn tv_distance(
    hist: &crate::stats::Histogram,
    model: &LatticeModel,
    window_sigmas: f64,
) -> Result<f64> {
    let pred = PmfPredictor::new(model)?;
    let lo = (model.mu - window_sigmas * model.sigma_total).floor().max(0.0) as i64;
    let hi = (model.mu + window_sigmas * model.sigma_total).ceil() as i64;
    let total = hist.total as f64;
    let mut tv = 0.0;
    for x in lo..=hi {
        let emp = *hist.counts.get(&(x as u64)).unwrap_or(&0) as f64 / total;
        tv += (emp - pred.at(x)).abs();
    }
    Ok(0.5 * tv)
}

/// Scan output type re-exported for binary callers.
pub type Scan = ScanReport;
