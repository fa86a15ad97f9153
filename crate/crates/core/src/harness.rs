//! Experiment drivers behind the CLI: delay-bound validation, the finite
//! antenna power sweep and the required-resource sweep.
//!
//! Every CSV starts with `#` manifest lines (tool version, SHA-256 of the
//! normalized config, seed, command). Nothing time- or host-dependent is
//! written, so identical inputs give byte-identical files.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::allocator::required_resource_bounds;
use crate::config::{ConfigFile, Scenario};
use crate::effective_bandwidth::delay_violation_upper_bound;
use crate::mdone::delay_ccdf_curve;
use crate::queue_sim::{normalized_metrics, run_replicated, RunConfig, RunOutput};
use crate::scenario::UserLink;
use crate::{Error, Result};

pub const TOOL_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

/// Provenance written at the top of every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub config_sha256: String,
    pub seed: u64,
    pub command: String,
}

impl Manifest {
    pub fn new(file: &ConfigFile, command: &str) -> Self {
        let digest = Sha256::digest(file.to_toml().as_bytes());
        Self {
            tool: TOOL_VERSION.into(),
            config_sha256: hex::encode(digest),
            seed: file.experiment.seed,
            command: command.into(),
        }
    }

    fn write_header<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# tool: {}", self.tool)?;
        writeln!(out, "# config_sha256: {}", self.config_sha256)?;
        writeln!(out, "# seed: {}", self.seed)?;
        writeln!(out, "# command: {}", self.command)?;
        Ok(())
    }
}

/// A loaded config with its manifest.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub file: ConfigFile,
    pub scenario: Scenario,
}

impl Experiment {
    pub fn new(file: ConfigFile) -> Result<Self> {
        let scenario = file.resolve()?;
        Ok(Self { file, scenario })
    }

    pub fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(&self.file, command)
    }

    fn run_config(&self, thresholds: Vec<f64>) -> RunConfig {
        let e = &self.scenario.experiment;
        RunConfig {
            policy: e.mode.into(),
            frames: e.frames,
            seed: e.seed,
            thresholds,
            per_user: e.per_user,
            power_subsample: e.power_subsample,
        }
    }

    fn simulate(
        &self,
        users: &[UserLink],
        sc: &Scenario,
        thresholds: Vec<f64>,
    ) -> Result<RunOutput> {
        let out = run_replicated(
            users,
            &sc.system,
            sc.budget.reliability_loss,
            &self.run_config(thresholds),
            sc.experiment.replications,
        )?;
        for w in &out.warnings {
            eprintln!("warning: {w}");
        }
        Ok(out)
    }
}

fn sci(x: f64) -> String {
    format!("{x:e}")
}

fn csv_writer(path: &Path, manifest: &Manifest) -> Result<csv::Writer<fs::File>> {
    let mut f = fs::File::create(path)?;
    manifest.write_header(&mut f)?;
    Ok(csv::Writer::from_writer(f))
}

/// One threshold of the delay-bound comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRow {
    pub threshold: f64,
    pub empirical: f64,
    pub empirical_se: f64,
    pub mdone: f64,
    pub upper_bound: f64,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub rows: Vec<BoundRow>,
    pub utilization: f64,
    pub qos_exponent: f64,
    pub effective_bw: f64,
    pub samples: u64,
    pub run: RunOutput,
}

impl BoundReport {
    /// Points where the analytic bound falls below the M/D/1 curve, or
    /// below the simulated curve by more than three standard errors.
    pub fn dominance_violations(&self) -> Vec<BoundRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.mdone > r.upper_bound * (1.0 + 1e-12)
                    || r.empirical > r.upper_bound + 3.0 * r.empirical_se
            })
            .copied()
            .collect()
    }

    /// Points with `mdone >= min_prob` where the simulated CCDF lies outside
    /// the three-sigma binomial band around the M/D/1 curve.
    pub fn agreement_violations(&self, min_prob: f64) -> Vec<BoundRow> {
        let n = self.samples.max(1) as f64;
        self.rows
            .iter()
            .filter(|r| r.mdone >= min_prob)
            .filter(|r| {
                let sigma = (r.mdone * (1.0 - r.mdone) / n).sqrt();
                (r.empirical - r.mdone).abs() > 3.0 * sigma
            })
            .copied()
            .collect()
    }

    pub fn check(&self) -> Result<()> {
        let bad = self.dominance_violations();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Property(format!(
                "upper bound dominated at {} threshold(s), first at {} s",
                bad.len(),
                bad[0].threshold
            )))
        }
    }
}

/// Simulated CCDF, M/D/1 CCDF and the exponential bound on the grid
/// `l T_f / s`, `l = 0..`, up to the queueing delay bound.
pub fn validate_bound(exp: &Experiment) -> Result<BoundReport> {
    let sc = &exp.scenario;
    let users = sc.targets()?;
    let first = &users[0];
    for u in &users[1..] {
        if u.qos != first.qos || u.arrival_rate != first.arrival_rate {
            return Err(Error::config(
                "experiment.include_edge",
                "pooled users must share one QoS requirement; exclude edge users or lower experiment.targets",
            ));
        }
    }
    let tf = sc.system.frame_duration;
    let qos = &first.qos;
    let theta = qos
        .qos_exponent
        .ok_or_else(|| Error::config("topology.source_rate_pps", "no traffic to validate"))?;
    let s = qos.service_per_frame(tf);
    let gamma = first.arrival_rate / s;
    let step = tf / s;
    let l_max = (qos.delay_bound / step * (1.0 + 1e-12)).floor() as usize;
    let thresholds: Vec<f64> = (0..=l_max).map(|l| l as f64 * step).collect();
    let mdone = delay_ccdf_curve(gamma, l_max)?;
    let run = exp.simulate(&users, sc, thresholds.clone())?;
    let empirical = run.stats.pooled.ccdf();
    let se = run.stats.pooled.ccdf_se();
    let rows = thresholds
        .iter()
        .enumerate()
        .map(|(l, &t)| BoundRow {
            threshold: t,
            empirical: empirical[l],
            empirical_se: se[l],
            mdone: mdone[l],
            upper_bound: delay_violation_upper_bound(theta, qos.effective_bw, t),
        })
        .collect();
    Ok(BoundReport {
        rows,
        utilization: gamma,
        qos_exponent: theta,
        effective_bw: qos.effective_bw,
        samples: run.stats.pooled.samples,
        run,
    })
}

pub fn write_bound_csv(report: &BoundReport, manifest: &Manifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, manifest)?;
    w.write_record([
        "threshold_s",
        "empirical",
        "mdone",
        "upper_bound",
        "empirical_se",
    ])?;
    for r in &report.rows {
        w.write_record([
            sci(r.threshold),
            sci(r.empirical),
            sci(r.mdone),
            sci(r.upper_bound),
            sci(r.empirical_se),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-user CCDFs at the report's thresholds.
pub fn write_per_user_csv(report: &BoundReport, manifest: &Manifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, manifest)?;
    w.write_record(["user", "threshold_s", "empirical", "samples"])?;
    let stats = &report.run.stats;
    for (tally, id) in stats.per_user.iter().zip(0..) {
        for (t, p) in stats.thresholds.iter().zip(tally.ccdf()) {
            w.write_record([id.to_string(), sci(*t), sci(p), tally.samples.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Simulated power of one antenna configuration relative to its
/// large-antenna analytic values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub antennas: u32,
    pub power_ratio: f64,
    pub power_ratio_se: f64,
    pub p_req_ratio: f64,
    pub w_req_ratio: f64,
    pub mean_power: f64,
    pub power_bound: f64,
    pub max_transmit: f64,
    pub p_req_bound: f64,
    pub max_bandwidth: f64,
    pub w_req_bound: f64,
    pub energy_efficiency: f64,
    pub arrivals: u64,
    pub departures: u64,
    pub backlog_end: u64,
}

fn summarize(
    antennas: u32,
    sc: &Scenario,
    users: &[UserLink],
    run: &RunOutput,
) -> Result<SummaryRow> {
    let m = normalized_metrics(&run.stats, users, &sc.system, sc.budget.reliability_loss)?;
    let p = &run.stats.power;
    let t = &run.stats.pooled;
    Ok(SummaryRow {
        antennas,
        power_ratio: m.power_ratio,
        power_ratio_se: m.power_ratio_se,
        p_req_ratio: m.p_req_ratio,
        w_req_ratio: m.w_req_ratio,
        mean_power: p.mean_total,
        power_bound: m.power_bound,
        max_transmit: p.max_transmit,
        p_req_bound: m.p_req_bound,
        max_bandwidth: p.max_bandwidth,
        w_req_bound: m.w_req_bound,
        energy_efficiency: run.stats.energy_efficiency,
        arrivals: t.arrivals,
        departures: t.departures,
        backlog_end: t.backlog_end,
    })
}

/// Runs the configured policy once per entry of the antenna sweep. All
/// sweep points share the seed, so arrivals are common random numbers.
pub fn table2(exp: &Experiment) -> Result<Vec<SummaryRow>> {
    exp.scenario
        .experiment
        .antenna_sweep
        .iter()
        .map(|&n| {
            let sc = exp.scenario.with_antennas(n);
            let users = sc.targets()?;
            let run = exp.simulate(&users, &sc, Vec::new())?;
            summarize(n, &sc, &users, &run)
        })
        .collect()
}

pub fn write_summary_csv(rows: &[SummaryRow], manifest: &Manifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, manifest)?;
    w.write_record([
        "N_t",
        "power_ratio",
        "power_ratio_se",
        "p_req_ratio",
        "w_req_ratio",
        "mean_power_W",
        "power_bound_W",
        "max_transmit_W",
        "p_req_bound_W",
        "max_bandwidth_Hz",
        "w_req_bound_Hz",
        "ee_bits_per_J",
        "arrivals",
        "departures",
        "backlog_end",
    ])?;
    for r in rows {
        w.write_record([
            r.antennas.to_string(),
            sci(r.power_ratio),
            sci(r.power_ratio_se),
            sci(r.p_req_ratio),
            sci(r.w_req_ratio),
            sci(r.mean_power),
            sci(r.power_bound),
            sci(r.max_transmit),
            sci(r.p_req_bound),
            sci(r.max_bandwidth),
            sci(r.w_req_bound),
            sci(r.energy_efficiency),
            r.arrivals.to_string(),
            r.departures.to_string(),
            r.backlog_end.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceRow {
    pub reliability_loss: f64,
    pub antennas: u32,
    pub transmit_power: f64,
    pub bandwidth: f64,
}

/// Peak transmit power and bandwidth bounds over the reliability and
/// antenna sweeps.
pub fn required_resources(exp: &Experiment) -> Result<Vec<ResourceRow>> {
    let e = &exp.scenario.experiment;
    let mut rows = Vec::new();
    for &eps in &e.reliability_sweep {
        for &n in &e.antenna_sweep {
            let sc = exp.scenario.with_reliability(eps).with_antennas(n);
            let b = required_resource_bounds(&sc.targets()?, &sc.system)?;
            rows.push(ResourceRow {
                reliability_loss: eps,
                antennas: n,
                transmit_power: b.transmit_power,
                bandwidth: b.bandwidth,
            });
        }
    }
    Ok(rows)
}

pub fn write_resources_csv(rows: &[ResourceRow], manifest: &Manifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, manifest)?;
    w.write_record(["eps_D", "N_t", "P_bound_W", "W_bound_Hz"])?;
    for r in rows {
        w.write_record([
            sci(r.reliability_loss),
            r.antennas.to_string(),
            sci(r.transmit_power),
            sci(r.bandwidth),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_power_csv(run: &RunOutput, manifest: &Manifest, path: &Path) -> Result<()> {
    let mut w = csv_writer(path, manifest)?;
    w.write_record(["frame", "transmit_W", "bandwidth_Hz", "total_W"])?;
    for s in &run.power_trace {
        w.write_record([
            s.frame.to_string(),
            sci(s.transmit),
            sci(s.bandwidth),
            sci(s.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Coefficient of determination of the least-squares line through `(x, y)`.
pub fn affine_r2(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if syy == 0.0 {
        return 1.0;
    }
    sxy * sxy / (sxx * syy)
}

/// Output files produced by one CLI invocation.
#[derive(Debug, Default)]
pub struct Written(pub Vec<PathBuf>);

fn prepare(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

/// `validate-bound`: writes `ccdf.csv` (and per-user CCDFs when enabled),
/// then fails with a property error if the bound is dominated.
pub fn cmd_validate_bound(exp: &Experiment, out: &Path) -> Result<(BoundReport, Written)> {
    prepare(out)?;
    let manifest = exp.manifest("validate-bound");
    let report = validate_bound(exp)?;
    let mut written = vec![out.join("ccdf.csv")];
    write_bound_csv(&report, &manifest, &written[0])?;
    if exp.scenario.experiment.per_user {
        written.push(out.join("ccdf_per_user.csv"));
        write_per_user_csv(&report, &manifest, &written[1])?;
    }
    Ok((report, Written(written)))
}

pub fn cmd_table2(exp: &Experiment, out: &Path) -> Result<(Vec<SummaryRow>, Written)> {
    prepare(out)?;
    let rows = table2(exp)?;
    let path = out.join("summary.csv");
    write_summary_csv(&rows, &exp.manifest("table2"), &path)?;
    Ok((rows, Written(vec![path])))
}

pub fn cmd_required_resources(exp: &Experiment, out: &Path) -> Result<(Vec<ResourceRow>, Written)> {
    prepare(out)?;
    let rows = required_resources(exp)?;
    let path = out.join("fig4.csv");
    write_resources_csv(&rows, &exp.manifest("required-resources"), &path)?;
    Ok((rows, Written(vec![path])))
}

/// `run`: one simulation at the configured antenna count, writing
/// `ccdf.csv`, `power.csv`, `summary.csv` and `manifest.json`.
pub fn cmd_run(exp: &Experiment, out: &Path) -> Result<(BoundReport, Written)> {
    prepare(out)?;
    let manifest = exp.manifest("run");
    let report = validate_bound(exp)?;
    let sc = &exp.scenario;
    let users = sc.targets()?;
    let row = summarize(sc.system.antennas, sc, &users, &report.run)?;
    let paths: Vec<PathBuf> = ["ccdf.csv", "power.csv", "summary.csv", "manifest.json"]
        .iter()
        .map(|f| out.join(f))
        .collect();
    write_bound_csv(&report, &manifest, &paths[0])?;
    write_power_csv(&report.run, &manifest, &paths[1])?;
    write_summary_csv(&[row], &manifest, &paths[2])?;
    #[derive(Serialize)]
    struct Full<'a> {
        manifest: &'a Manifest,
        config: &'a ConfigFile,
        scenario: &'a Scenario,
        qos_exponent: f64,
        effective_bw_pps: f64,
        utilization: f64,
    }
    let json = serde_json::to_string_pretty(&Full {
        manifest: &manifest,
        config: &exp.file,
        scenario: sc,
        qos_exponent: report.qos_exponent,
        effective_bw_pps: report.effective_bw,
        utilization: report.utilization,
    })
    .map_err(|e| Error::domain(e.to_string()))?;
    fs::write(&paths[3], json + "\n")?;
    Ok((report, Written(paths)))
}
