//! Subcommand implementations. Each returns the process exit code on
//! success paths and an [`Error`] otherwise.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mpse::data::{enforce_monotone_coding, LoadReport, RawTable};
use mpse::eif::{crossfit_estimate, signal_mean_gap, EifConfig, Functional};
use mpse::learners::LearnerSpec;
use mpse::oracle::{enumerate_value, exact_table, DiscreteLaw};
use mpse::rwr::{bootstrap_se, RwrConfig};
use mpse::sensitivity::{benchmark_confounder, make_grid, Target};
use mpse::simulation::{run_experiment, DgpSpec, ExperimentConfig};
use mpse::{DecompositionEstimate, Error, Result, SequentialDataset};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{MethodChoice, RunConfig, TargetKind};

/// Additivity tolerance for a report.
pub const IDENTITY_TOL: f64 = 1e-10;

fn write_output(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, bytes)?;
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(v)?;
    out.push(b'\n');
    Ok(out)
}

/// Loads the input under the configured schema and monotone policy.
/// Columns in `extra` are read alongside the data (rows missing them are
/// dropped) and returned separately.
fn load_data(cfg: &RunConfig, extra: &[String]) -> Result<(SequentialDataset, LoadReport, Vec<Vec<f64>>)> {
    let schema = cfg.require_schema()?;
    schema.check()?;
    let raw = RawTable::read(cfg.require_input()?)?;
    let mut wide = schema.clone();
    wide.baseline_columns.extend(extra.iter().cloned());
    let (data, report) = enforce_monotone_coding(&raw, &wide, cfg.monotone_policy)?;
    let p = schema.baseline_columns.len();
    let extras = (0..extra.len()).map(|j| data.x.column(p + j).to_vec()).collect();
    if extra.is_empty() {
        return Ok((data, report, extras));
    }
    let x = data.x.slice(ndarray::s![.., ..p]).to_owned();
    let narrow = SequentialDataset::new(x, data.a, data.z_blocks, data.m, data.y, Some(data.weights))?
        .with_schema(schema.clone())?;
    Ok((narrow, report, extras))
}

fn eif_config(cfg: &RunConfig) -> EifConfig {
    EifConfig { folds: cfg.folds, censor: cfg.censor_pair(), learner: cfg.learner.clone(), seed: cfg.seed }
}

fn rwr_config(cfg: &RunConfig) -> RwrConfig {
    RwrConfig { bootstrap: cfg.bootstrap, seed: cfg.seed, residualizer: cfg.residualizer.clone() }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub method: mpse::Method,
    pub additivity_gap: f64,
    /// DML only: largest gap between a signal mean and its estimate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_mean_gap: Option<f64>,
    pub pass: bool,
}

fn estimate_all(cfg: &RunConfig, data: &SequentialDataset) -> Result<(Vec<DecompositionEstimate>, Vec<IdentityCheck>)> {
    let mut estimates = Vec::new();
    let mut checks = Vec::new();
    if matches!(cfg.method, MethodChoice::Dml | MethodChoice::Both) {
        let (est, signals) = crossfit_estimate(data, &eif_config(cfg))?;
        let gap = est.additivity_gap();
        let sig = signal_mean_gap(&est, &signals);
        checks.push(IdentityCheck {
            method: est.method,
            additivity_gap: gap,
            signal_mean_gap: Some(sig),
            pass: gap < IDENTITY_TOL && sig < IDENTITY_TOL,
        });
        estimates.push(est);
    }
    if matches!(cfg.method, MethodChoice::Rwr | MethodChoice::Both) {
        let est = bootstrap_se(data, &rwr_config(cfg))?;
        let gap = est.additivity_gap();
        checks.push(IdentityCheck { method: est.method, additivity_gap: gap, signal_mean_gap: None, pass: gap < IDENTITY_TOL });
        estimates.push(est);
    }
    Ok((estimates, checks))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecomposeReport {
    pub config: RunConfig,
    pub load: LoadReport,
    pub estimates: Vec<DecompositionEstimate>,
    pub checks: Vec<IdentityCheck>,
}

pub fn decompose(cfg: &RunConfig) -> Result<i32> {
    let (data, load, _) = load_data(cfg, &[])?;
    let (estimates, checks) = estimate_all(cfg, &data)?;
    let report = DecomposeReport { config: cfg.clone(), load, estimates, checks };
    write_output(cfg.output.as_deref(), &pretty(&report)?)?;
    Ok(0)
}

/// Writes `<output>.csv` and `<output>.json`.
pub fn simulate(cfg: &RunConfig) -> Result<i32> {
    let s = &cfg.simulate;
    let exp = ExperimentConfig {
        n_grid: s.n_grid.clone(),
        reps: s.reps,
        modes: s.modes.clone(),
        estimators: s.estimators.clone(),
        dml: eif_config(cfg),
        rwr_bootstrap: s.rwr_bootstrap,
        ranges: s.ranges,
        mc_size: s.mc_size,
        seed: cfg.seed,
    };
    let mut table = run_experiment(&exp)?;
    let stem = cfg
        .output
        .clone()
        .ok_or_else(|| Error::InvalidArgument("simulate needs --output (a file stem)".into()))?;
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    write_output(Some(&with_ext(&stem, "csv")), &csv)?;
    if !s.dump_replicates {
        table.replicates.clear();
    }
    let json = pretty(&json!({ "config": cfg, "metrics": table }))?;
    write_output(Some(&with_ext(&stem, "json")), &json)?;
    Ok(0)
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes the contour CSV to `--output` and a JSON summary next to it.
pub fn sensitivity(cfg: &RunConfig) -> Result<i32> {
    let sc = &cfg.sensitivity;
    if sc.target == TargetKind::Delta && sc.k == 0 {
        return Err(Error::InvalidArgument("a delta target needs k ≥ 1 (it adjusts Δ_{k-1})".into()));
    }
    let needs_data = sc.estimate.is_none() || !sc.benchmarks.is_empty();
    let loaded = if needs_data { Some(load_data(cfg, &sc.benchmarks)?) } else { None };
    let (estimate, pi, source) = match sc.estimate {
        Some(e) => (e, sc.pi, None),
        None => {
            let (data, _, _) = loaded.as_ref().expect("loaded above");
            if sc.k > data.k() {
                return Err(Error::InvalidArgument(format!("k = {} exceeds K = {}", sc.k, data.k())));
            }
            let est = match cfg.method {
                MethodChoice::Rwr => bootstrap_se(data, &rwr_config(cfg))?,
                _ => crossfit_estimate(data, &eif_config(cfg))?.0,
            };
            let c = &est.components;
            let value = match sc.target {
                TargetKind::Tau => c.tau[sc.k],
                TargetKind::Delta => c.delta[sc.k - 1],
            };
            let pi = (sc.k >= 1).then(|| c.pi[sc.k - 1]);
            (value, pi, Some(est))
        }
    };
    let target = match sc.target {
        TargetKind::Tau => Target::Tau { k: sc.k },
        TargetKind::Delta => Target::Delta {
            k: sc.k,
            pi: pi.ok_or_else(|| Error::InvalidArgument("a delta target with a given estimate needs `pi`".into()))?,
        },
    };
    let mut grid = make_grid(
        estimate,
        target,
        (sc.alpha_range[0], sc.alpha_range[1]),
        (sc.beta_range[0], sc.beta_range[1]),
        (sc.resolution[0], sc.resolution[1]),
    )?;
    let mut bench = Vec::new();
    if let Some((data, _, extras)) = &loaded {
        for (name, col) in sc.benchmarks.iter().zip(extras) {
            let u = col
                .iter()
                .map(|&v| match v {
                    0.0 => Ok(0u8),
                    1.0 => Ok(1u8),
                    _ => Err(Error::Validation(format!("benchmark column `{name}` must be binary, found {v}"))),
                })
                .collect::<Result<Vec<u8>>>()?;
            let p = benchmark_confounder(data, &u, sc.k)?;
            grid.add_benchmark(name, &p);
            bench.push(json!({ "column": name, "params": p }));
        }
    }
    let path = cfg
        .output
        .clone()
        .ok_or_else(|| Error::InvalidArgument("sensitivity needs --output (contour CSV path)".into()))?;
    let mut csv = Vec::new();
    grid.write_csv(&mut csv)?;
    write_output(Some(&path), &csv)?;
    let summary = json!({
        "config": cfg,
        "target": target,
        "estimate": estimate,
        "zero_symmetric": grid.zero_symmetric,
        "benchmarks": bench,
        "source_estimate": source,
    });
    write_output(Some(&path.with_extension("json")), &pretty(&summary)?)?;
    Ok(0)
}

/// A discrete law together with its functional values computed by path
/// enumeration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleFixture {
    pub law: DiscreteLaw,
    /// `psi[k] = [ψ_{k,0}, ψ_{k,1}]`.
    pub psi: Vec<[f64; 2]>,
    pub phi: Vec<f64>,
}

impl OracleFixture {
    pub fn from_law(law: DiscreteLaw) -> Result<OracleFixture> {
        let k = law.k;
        let psi = (0..=k)
            .map(|j| {
                Ok([
                    enumerate_value(&law, Functional::Psi { k: j, m: 0 })?,
                    enumerate_value(&law, Functional::Psi { k: j, m: 1 })?,
                ])
            })
            .collect::<Result<_>>()?;
        let phi = (0..k).map(|j| enumerate_value(&law, Functional::Phi { k: j })).collect::<Result<_>>()?;
        Ok(OracleFixture { law, psi, phi })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
    /// Exit code this check contributes (0 when it passes).
    pub code: i32,
}

fn check(name: &str, r: Result<(bool, String)>) -> CheckResult {
    match r {
        Ok((pass, detail)) => CheckResult { name: name.into(), pass, detail, code: if pass { 0 } else { 1 } },
        Err(e) => CheckResult { name: name.into(), pass: false, detail: e.to_string(), code: e.exit_code() },
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Equivalence checks on a fixture law plus the simulated-law truth check.
pub fn oracle_checks(fx: &OracleFixture, mc_size: usize, seed: u64) -> Vec<CheckResult> {
    let law = &fx.law;
    let k = law.k;
    let mut out = vec![check("law_valid", law.validate(1e-3).map(|_| (true, format!("K = {k}"))))];
    let table = exact_table(law);
    let flat = |psi: &[[f64; 2]], phi: &[f64]| -> Vec<f64> {
        psi.iter().flat_map(|p| p.iter().copied()).chain(phi.iter().copied()).collect()
    };
    out.push(check(
        "fixture_values",
        table.as_ref().map_err(clone_err).and_then(|t| {
            if fx.psi.len() != k + 1 || fx.phi.len() != k {
                return Err(Error::Validation("fixture value tables do not match K".into()));
            }
            let d = max_abs_diff(&flat(&t.psi, &t.phi), &flat(&fx.psi, &fx.phi));
            Ok((d < 1e-10, format!("max |exact − fixture| = {d:.3e}")))
        }),
    ));
    out.push(check(
        "recursion_vs_enumeration",
        table.as_ref().map_err(clone_err).and_then(|t| {
            let e = OracleFixture::from_law(law.clone())?;
            let d = max_abs_diff(&flat(&t.psi, &t.phi), &flat(&e.psi, &e.phi));
            Ok((d < 1e-10, format!("max |recursion − enumeration| = {d:.3e}")))
        }),
    ));
    let plug = table.as_ref().map_err(clone_err).and_then(|t| {
        let data = law.population_dataset()?;
        let cfg = EifConfig { folds: 1, censor: None, learner: LearnerSpec::saturated(), seed };
        let (est, signals) = crossfit_estimate(&data, &cfg)?;
        let exact = mpse::estimate::Components::from_sets(&t.components(), &t.paths());
        Ok((max_abs_diff(&est.components.flat(), &exact.flat()), est, signals))
    });
    out.push(check(
        "population_plugin",
        plug.as_ref().map_err(clone_err).map(|(d, _, _)| (*d < 1e-8, format!("max |plug-in − exact| = {d:.3e}"))),
    ));
    out.push(check(
        "additivity",
        plug.as_ref().map_err(clone_err).map(|(_, est, signals)| {
            let gap = est.additivity_gap();
            let sig = signal_mean_gap(est, signals);
            (gap < IDENTITY_TOL && sig < IDENTITY_TOL, format!("additivity gap {gap:.3e}, signal-mean gap {sig:.3e}"))
        }),
    ));
    out.push(check(
        "simulated_truth",
        (|| {
            let dgp = DgpSpec::draw(&Default::default(), seed);
            let t = dgp.truth(mc_size, mpse::stats::derive_seed(seed, &[1]))?;
            let se = t.mc_se.as_ref().map_or(0.0, |s| s.eta[0]);
            let eta = t.components.eta[0];
            let gap = (t.components.tau[0] - t.paths.theta.iter().sum::<f64>()).abs();
            Ok((
                eta.abs() <= 4.0 * se + 1e-12 && gap < IDENTITY_TOL,
                format!("η₁ = {eta:.3e} (MC se {se:.3e}), additivity gap {gap:.3e}"),
            ))
        })(),
    ));
    out
}

/// `exact_table` errors are reported by every check that depends on it.
fn clone_err(e: &Error) -> Error {
    match e {
        Error::Positivity(m) => Error::Positivity(m.clone()),
        Error::InvalidArgument(m) => Error::InvalidArgument(m.clone()),
        other => Error::Validation(other.to_string()),
    }
}

pub fn oracle_check(cfg: &RunConfig) -> Result<i32> {
    let text = std::fs::read_to_string(cfg.require_input()?)?;
    let fx: OracleFixture = serde_json::from_str(&text).map_err(|e| Error::Validation(format!("fixture: {e}")))?;
    let results = oracle_checks(&fx, cfg.oracle.mc_size, cfg.seed);
    let mut stdout = BufWriter::new(std::io::stdout());
    for r in &results {
        writeln!(stdout, "{} {}: {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail)?;
    }
    stdout.flush()?;
    if let Some(p) = &cfg.output {
        let mut f = BufWriter::new(File::create(p)?);
        f.write_all(&pretty(&json!({ "config": cfg, "checks": results }))?)?;
    }
    Ok(results.iter().map(|r| r.code).max().unwrap_or(0))
}
