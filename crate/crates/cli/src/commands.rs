//! Subcommand drivers. Each returns `Ok(true)` when every check passed,
//! `Ok(false)` when a certificate row or report failed, and `Err` when the
//! run could not be set up.
//!
//! Output files are written atomically into the output directory. Every
//! command writes `config.json`, the config in canonical form with overrides
//! applied, plus:
//!
//! | command       | files                                                  |
//! |---------------|--------------------------------------------------------|
//! | `approximate` | `certificate.json`, `certificate.csv`                  |
//! | `mapop`       | `operator.json`, `amplification.json`, `stress.csv`    |
//! | `sobolev`     | `sobolev_p{p}.json`, `sobolev_p{p}.csv` per exponent   |
//! | `bv`          | `bv.json`, `bv.csv`                                    |
//! | `verify`      | `verify.json`, `verify.csv`                            |
//!
//! `certificate.csv` columns: `n, point, f_n, f, error, error_bound,
//! error_slack, slope, reference_slope, slope_slack, lip_estimate, lip_bound,
//! lip_slack, range_ok, pass`. Energy CSVs: `n, k, lp_distance, energy,
//! oracle, slope_distance, slack, pass`. Reals use 17 significant digits,
//! `.` as decimal separator and LF line endings.

use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use liplab_core::lipschitz::format_f64;
use liplab_core::map_operator::{integer_labels, net_amplification_certificate, BoundedSeq, MapOperator, OperatorRecord};
use liplab_core::pipeline::run_pipeline;
use liplab_core::sampling;
use liplab_core::sobolev_bv::{bv_density_check, sobolev_density_check, EnergyReport};
use liplab_core::verify::run_all;
use liplab_core::Error;
use rand::Rng;
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, StressSpec};

/// Failure to set up or complete a run, with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError { code: 2, message: e.0 }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { code: classify(&e), message: e.to_string() }
    }
}

/// Errors that trace back to the configuration exit with 2, the rest with 1.
fn classify(e: &Error) -> u8 {
    match e {
        Error::Context { source, .. } => classify(source),
        Error::DimensionMismatch { .. }
        | Error::InvalidNorm(_)
        | Error::InvalidArgument(_)
        | Error::BudgetExceeded(_)
        | Error::DuplicatePoints(..)
        | Error::LipschitzTooSmall { .. }
        | Error::IndexMismatch(_)
        | Error::NetPremise(_)
        | Error::MissingMetadata(_)
        | Error::OracleUnavailable(_) => 2,
        _ => 1,
    }
}

pub type Outcome = Result<bool, CliError>;

/// Where reports go and whether to print summaries.
pub struct Sink {
    pub dir: PathBuf,
    pub quiet: bool,
}

impl Sink {
    pub fn new(dir: PathBuf, quiet: bool) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError { code: 1, message: format!("{}: {e}", dir.display()) })?;
        Ok(Sink { dir, quiet })
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    /// Writes `name` through a temporary file in the same directory, then renames it.
    fn write(&self, name: &str, fill: impl FnOnce(&mut dyn Write) -> liplab_core::Result<()>) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError { code: 1, message: format!("writing {name}: {e}") };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        {
            let mut w = BufWriter::new(tmp.as_file_mut());
            fill(&mut w)?;
            w.flush().map_err(io)?;
        }
        tmp.persist(self.dir.join(name)).map_err(|e| io(e.error))?;
        Ok(())
    }

    /// Records the resolved config next to the reports.
    pub fn write_config(&self, cfg: &ExperimentConfig) -> Result<(), CliError> {
        self.write_lines("config.json", &[cfg.emit()])
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)
                .map_err(|e| Error::InvalidArgument(format!("serializing {name}: {e}")))?;
            w.write_all(b"\n")?;
            Ok(())
        })
    }

    fn write_lines(&self, name: &str, lines: &[String]) -> Result<(), CliError> {
        self.write(name, |w| {
            for l in lines {
                w.write_all(l.as_bytes())?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
    }
}

pub fn cmd_approximate(cfg: &ExperimentConfig, sink: &Sink) -> Outcome {
    let f = cfg.field()?;
    let exhaustion = cfg.exhaustion()?;
    let (_, cert) = run_pipeline(f, exhaustion, cfg.pipeline_config())?;
    sink.write("certificate.json", |w| cert.write_json(w))?;
    sink.write("certificate.csv", |w| cert.write_csv(w))?;
    let failing: Vec<_> = cert.failures().collect();
    for r in failing.iter().take(20) {
        eprintln!("row n={} point={} violates {}", r.n, r.point, r.violations().join(", "));
    }
    if failing.len() > 20 {
        eprintln!("... {} failing rows in total", failing.len());
    }
    sink.say(format!(
        "approximate: {} rows over n = 1..{}, {} failing; net size {}, distortion {}",
        cert.rows.len(),
        cert.max_index,
        failing.len(),
        cert.net_size,
        format_f64(cert.net_distortion)
    ));
    Ok(failing.is_empty())
}

#[derive(Serialize)]
struct OperatorFile {
    epsilon: f64,
    support: usize,
    rank: usize,
    operator: OperatorRecord,
}

struct StressRow {
    instance: usize,
    support: usize,
    net: usize,
    points: usize,
    epsilon: f64,
    rank: usize,
    worst_ratio: f64,
    pass: bool,
}

pub fn cmd_mapop(cfg: &ExperimentConfig, sink: &Sink) -> Outcome {
    let spec = &cfg.mapop;
    if spec.vectors.is_empty() && spec.stress.is_none() {
        return Err(ConfigError("mapop needs `mapop.vectors` or `mapop.stress`".into()).into());
    }
    let mut ok = true;
    if !spec.vectors.is_empty() {
        let labels = integer_labels(spec.vectors[0].len());
        let seq = |v: &Vec<f64>| BoundedSeq::new(labels.clone(), v.clone());
        let net = spec.vectors.iter().map(seq).collect::<Result<Vec<_>, _>>()?;
        let mut k = net.clone();
        for v in &spec.points {
            k.push(seq(v)?);
        }
        let op = MapOperator::partition_for_diameter(&net, cfg.epsilon)?;
        let cert = net_amplification_certificate(&k, &net, &op, cfg.epsilon)?;
        let file = OperatorFile { epsilon: cfg.epsilon, support: labels.len(), rank: op.rank(), operator: op.to_record() };
        sink.write_json("operator.json", &file)?;
        sink.write_json("amplification.json", &cert)?;
        for (i, r) in cert.ratios.iter().enumerate().filter(|(_, r)| **r > 3.0) {
            eprintln!("point {i}: ratio {} exceeds 3", format_f64(*r));
        }
        sink.say(format!(
            "mapop: rank {} of {}, worst ratio {} over {} points",
            op.rank(),
            labels.len(),
            format_f64(cert.worst_ratio),
            k.len()
        ));
        ok &= cert.pass;
    }
    if let Some(stress) = &spec.stress {
        let rows = stress_run(stress, cfg.seed)?;
        let mut lines = vec!["instance,support,net,points,epsilon,rank,worst_ratio,pass".to_string()];
        for r in &rows {
            lines.push(format!(
                "{},{},{},{},{},{},{},{}",
                r.instance,
                r.support,
                r.net,
                r.points,
                format_f64(r.epsilon),
                r.rank,
                format_f64(r.worst_ratio),
                r.pass
            ));
            if !r.pass {
                eprintln!("instance {}: ratio {} exceeds 3", r.instance, format_f64(r.worst_ratio));
            }
        }
        sink.write_lines("stress.csv", &lines)?;
        let worst = rows.iter().map(|r| r.worst_ratio).fold(0.0, f64::max);
        sink.say(format!("mapop stress: {} instances, worst ratio {}", rows.len(), format_f64(worst)));
        ok &= rows.iter().all(|r| r.pass);
    }
    Ok(ok)
}

/// Random nets on dyadic grids, so that every comparison is exact: values and
/// `ε` are multiples of 2⁻¹⁰, and each extra point of `K` moves a net vector by
/// at most `ε` per coordinate.
fn stress_run(spec: &StressSpec, seed: u64) -> Result<Vec<StressRow>, CliError> {
    let mut rng = sampling::rng(sampling::derive_seed(seed, 2));
    let unit = 1.0 / 1024.0;
    let mut rows = Vec::with_capacity(spec.instances);
    for instance in 0..spec.instances {
        let size = rng.random_range(1..=spec.max_support);
        let labels = integer_labels(size);
        let eps_units = rng.random_range(8..=256) as i64;
        let eps = eps_units as f64 * unit;
        let net_size = rng.random_range(1..=spec.max_net);
        let mut net = Vec::with_capacity(net_size);
        for _ in 0..net_size {
            let v = (0..size).map(|_| rng.random_range(-2048..=2048) as f64 * unit).collect();
            net.push(BoundedSeq::new(labels.clone(), v)?);
        }
        let op = MapOperator::partition_for_diameter(&net, eps)?;
        let mut k = net.clone();
        for _ in 0..rng.random_range(0..=spec.max_extra) {
            let f = &net[rng.random_range(0..net_size)];
            let v = f.values().iter().map(|x| x + rng.random_range(-eps_units..=eps_units) as f64 * unit).collect();
            k.push(BoundedSeq::new(labels.clone(), v)?);
        }
        let cert = net_amplification_certificate(&k, &net, &op, eps)?;
        rows.push(StressRow {
            instance,
            support: size,
            net: net_size,
            points: k.len(),
            epsilon: eps,
            rank: op.rank(),
            worst_ratio: cert.worst_ratio,
            pass: cert.pass,
        });
    }
    Ok(rows)
}

fn report_energy(sink: &Sink, stem: &str, report: &EnergyReport) -> Result<bool, CliError> {
    sink.write(&format!("{stem}.json"), |w| report.write_json(w))?;
    sink.write(&format!("{stem}.csv"), |w| report.write_csv(w))?;
    for f in &report.failures {
        eprintln!("{stem}: {f}");
    }
    let last = report.final_row();
    let opt = |x: Option<f64>| x.map(format_f64).unwrap_or_else(|| "-".into());
    sink.say(format!(
        "{stem}: final n={} k={} L^p distance {} (norm {}), energy {}, oracle {}: {}",
        last.n,
        last.k,
        format_f64(last.lp_distance),
        format_f64(report.norm_f),
        opt(last.energy),
        opt(last.oracle),
        if report.passed() { "pass" } else { "FAIL" }
    ));
    Ok(report.passed())
}

pub fn cmd_sobolev(cfg: &ExperimentConfig, sink: &Sink) -> Outcome {
    let f = cfg.field()?;
    let mu = cfg.measure()?;
    let density = cfg.density_config();
    let mut ok = true;
    for &p in &cfg.p {
        let report = sobolev_density_check(f.clone(), &mu, p, &density)?;
        ok &= report_energy(sink, &format!("sobolev_p{p}"), &report)?;
    }
    Ok(ok)
}

pub fn cmd_bv(cfg: &ExperimentConfig, sink: &Sink) -> Outcome {
    let source = cfg.bv_source()?;
    let mu = cfg.measure()?;
    let report = bv_density_check(&source, &mu, &cfg.density_config())?;
    if let Some(panel) = &report.panel {
        if let Some(d) = panel.discrepancies.last() {
            sink.say(format!("bv: panel discrepancy {} at the final index", format_f64(*d)));
        }
    }
    report_energy(sink, "bv", &report)
}

pub fn cmd_verify(cfg: &ExperimentConfig, sink: &Sink) -> Outcome {
    let reports = run_all(&cfg.verify_config())?;
    sink.write_json("verify.json", &reports)?;
    let mut lines = vec!["suite,checks,failures,pass".to_string()];
    for r in &reports {
        lines.push(format!("{},{},{},{}", r.suite, r.checks, r.failures.len(), r.passed()));
    }
    sink.write_lines("verify.csv", &lines)?;
    sink.say(format!("{:<14} {:>8} {:>9}", "suite", "checks", "failures"));
    for r in &reports {
        sink.say(format!("{:<14} {:>8} {:>9}", r.suite, r.checks, r.failures.len()));
    }
    let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).collect();
    if !failed.is_empty() {
        eprintln!("{:<14} failure", "suite");
        for r in failed {
            for f in &r.failures {
                eprintln!("{:<14} {f}", r.suite);
            }
        }
        return Ok(false);
    }
    Ok(true)
}

/// Output directory: `--out` wins over the config's `output`.
pub fn output_dir(cfg: &ExperimentConfig, flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf).unwrap_or_else(|| cfg.output.clone())
}
