//! Scenario loading, metric rows, CSV output and paired comparisons.

use crate::consensus::{Algo, ClusterConfig, NodeId};
use crate::sim::{
    parse_crash, run, CrashPlan, DelayModel, HeterogeneityProfile, LoadChange, Reconfiguration,
    SimConfig, SimError, DEFAULT_BASE_SERVICE_MS,
};
use crate::trace::ExecutionTrace;
use crate::verifier::{audit_trace, AuditViolation};
use crate::weight_scheme::max_threshold;
use crate::workload::OperationMix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_AUDIT: i32 = 3;
pub const EXIT_LIVELOCK: i32 = 4;

pub const SEED_ENV: &str = "CABINET_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            _ => 1,
        }
    }
}

fn config_err(e: impl fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// `t` as an absolute count or as a percentage of `n` (`f10%`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdArg {
    Count(usize),
    Text(String),
}

impl ThresholdArg {
    pub fn resolve(&self, n: usize) -> Result<usize, String> {
        match self {
            ThresholdArg::Count(t) => check_threshold(*t, n),
            ThresholdArg::Text(s) => parse_threshold(s, n),
        }
    }
}

fn check_threshold(t: usize, n: usize) -> Result<usize, String> {
    let max = max_threshold(n);
    if (1..=max).contains(&t) {
        Ok(t)
    } else {
        Err(format!("t={t} outside 1..={max} for n={n}"))
    }
}

/// Percent form: `t = max(1, round(x * n / 100))`, capped at `(n - 1) / 2`.
pub fn parse_threshold(text: &str, n: usize) -> Result<usize, String> {
    let s = text.trim();
    if let Some(pct) = s
        .strip_prefix(['f', 'F'])
        .and_then(|r| r.strip_suffix('%'))
    {
        let x: f64 = pct.parse().map_err(|_| format!("bad percentage in `{text}`"))?;
        if !(x.is_finite() && x > 0.0) {
            return Err(format!("percentage must be positive in `{text}`"));
        }
        let t = ((x * n as f64 / 100.0).round() as usize).max(1);
        return Ok(t.min(max_threshold(n).max(1)));
    }
    let t = s.parse().map_err(|_| format!("t must be an integer or fX%, got `{text}`"))?;
    check_threshold(t, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    fn items(&self) -> Vec<&str> {
        match self {
            OneOrMany::One(s) => vec![s.as_str()],
            OneOrMany::Many(v) => v.iter().map(String::as_str).collect(),
        }
    }
}

/// Experiment description. Every field is optional; see [`Scenario::merge`]
/// and [`Scenario::to_config`] for precedence and defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub algo: Option<Algo>,
    pub n: Option<usize>,
    pub t: Option<ThresholdArg>,
    pub batch: Option<usize>,
    pub rounds: Option<u64>,
    pub seed: Option<u64>,
    pub delay: Option<String>,
    pub crash: Option<OneOrMany>,
    /// `homogeneous` or `heterogeneous`.
    pub profile: Option<String>,
    pub base_service_ms: Option<f64>,
    pub workload: Option<String>,
    pub gap_ms: Option<f64>,
    pub grace_factor: Option<f64>,
    pub election_timeout_ms: Option<(f64, f64)>,
    pub time_cap_ms: Option<f64>,
    pub kind_weighted: Option<bool>,
    pub replications: Option<u64>,
    pub recover_after_ms: Option<f64>,
    #[serde(default)]
    pub reconfigure: Vec<Reconfiguration>,
    #[serde(default)]
    pub load: Vec<LoadChange>,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(config_err)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `over` replace ours.
    pub fn merge(&mut self, over: &Scenario) {
        macro_rules! take {
            ($($f:ident),*) => {$(
                if over.$f.is_some() {
                    self.$f = over.$f.clone();
                }
            )*};
        }
        take!(
            algo, n, t, batch, rounds, seed, delay, crash, profile, base_service_ms, workload,
            gap_ms, grace_factor, election_timeout_ms, time_cap_ms, kind_weighted, replications,
            recover_after_ms
        );
        if !over.reconfigure.is_empty() {
            self.reconfigure = over.reconfigure.clone();
        }
        if !over.load.is_empty() {
            self.load = over.load.clone();
        }
    }

    pub fn algo(&self) -> Algo {
        self.algo.unwrap_or(Algo::Cabinet)
    }

    pub fn replications(&self) -> u64 {
        self.replications.unwrap_or(1).max(1)
    }

    /// Seed order: scenario/flag, then `CABINET_SEED`, then 1.
    pub fn seed(&self) -> Result<u64, HarnessError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| config_err(format!("{SEED_ENV}=`{v}` is not an integer"))),
            Err(_) => Ok(1),
        }
    }

    pub fn to_config(&self) -> Result<SimConfig, HarnessError> {
        let algo = self.algo();
        let n = self.n.unwrap_or(7);
        if n < 3 {
            return Err(config_err(format!("n must be at least 3, got {n}")));
        }
        let t = self
            .t
            .clone()
            .unwrap_or(ThresholdArg::Text("f10%".into()))
            .resolve(n)
            .map_err(config_err)?;
        let mut cluster = ClusterConfig::new(algo, n, t).map_err(config_err)?;
        if let Some(range) = self.election_timeout_ms {
            cluster.election_timeout_range = range;
        }
        let mut cfg = SimConfig::new(cluster, self.seed()?, self.rounds.unwrap_or(100));
        let base = self.base_service_ms.unwrap_or(DEFAULT_BASE_SERVICE_MS);
        cfg.profile = match self.profile.as_deref().unwrap_or("homogeneous") {
            "homogeneous" | "homo" => HeterogeneityProfile::homogeneous(n, base),
            "heterogeneous" | "hetero" => HeterogeneityProfile::heterogeneous(n, base),
            other => return Err(config_err(format!("unknown profile `{other}`"))),
        };
        cfg.delays = DelayModel::parse(self.delay.as_deref().unwrap_or("none")).map_err(config_err)?;
        if let Some(c) = &self.crash {
            let mut plans = Vec::new();
            for item in c.items() {
                if let Some(mut plan) = parse_crash(item).map_err(config_err)? {
                    plan.recover_after_ms = self.recover_after_ms;
                    plans.push(plan);
                }
            }
            cfg.crashes = plans;
        }
        cfg.mix = OperationMix::named(self.workload.as_deref().unwrap_or("A")).map_err(config_err)?;
        cfg.batch_size = self.batch.unwrap_or(100);
        let o = &mut cfg.options;
        if let Some(g) = self.gap_ms {
            o.inter_round_gap_ms = g;
        }
        if let Some(g) = self.grace_factor {
            o.grace_factor = g;
        }
        o.time_cap_ms = self.time_cap_ms;
        o.kind_weighted_service = self.kind_weighted.unwrap_or(false);
        o.reconfigurations = self.reconfigure.clone();
        o.load_changes = self.load.clone();
        cfg.validate().map_err(config_err)?;
        Ok(cfg)
    }
}

/// One committed batch round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: u64,
    pub wclock: u64,
    pub algo: Algo,
    pub commit_latency_ms: f64,
    /// Batch size over the time since the previous commit.
    pub throughput_ops_per_s: f64,
    pub quorum_replies_counted: usize,
    /// Space separated.
    pub cabinet_ids: String,
    pub leader_id: NodeId,
    pub active_delay_regime: String,
    pub crashed_count: usize,
    pub seed: u64,
    pub t: usize,
}

pub const CSV_HEADER: &str = "round,wclock,algo,commit_latency_ms,throughput_ops_per_s,\
quorum_replies_counted,cabinet_ids,leader_id,active_delay_regime,crashed_count,seed,t";

pub fn metrics_rows(trace: &ExecutionTrace) -> Vec<MetricsRow> {
    trace
        .rounds
        .iter()
        .filter(|r| r.kind == "batch")
        .map(|r| {
            let wall = r.wall_ms();
            MetricsRow {
                round: r.round,
                wclock: r.wclock,
                algo: trace.algo,
                commit_latency_ms: r.latency_ms(),
                throughput_ops_per_s: if wall > 0.0 { r.ops as f64 * 1000.0 / wall } else { 0.0 },
                quorum_replies_counted: r.replies_counted,
                cabinet_ids: r
                    .cabinet
                    .iter()
                    .map(|id| id.to_string())
                    .collect::<Vec<_>>()
                    .join(" "),
                leader_id: r.leader,
                active_delay_regime: r.regime.clone(),
                crashed_count: r.crashed,
                seed: trace.seed,
                t: r.t,
            }
        })
        .collect()
}

/// Mean latency over a run of consecutive rows sharing one `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub t: usize,
    pub rounds: usize,
    pub mean_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub algo: Algo,
    pub n: usize,
    pub t: usize,
    pub runs: usize,
    pub rounds: usize,
    pub mean_latency_ms: f64,
    pub p99_latency_ms: f64,
    pub mean_throughput_ops_per_s: f64,
    /// Rounds whose cabinet differs from the previous round's.
    pub cabinet_churn: usize,
    pub livelocks: usize,
    pub audit_violations: usize,
    pub stages: Vec<Stage>,
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, k) = xs.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        0.0
    } else {
        sum / k as f64
    }
}

/// Nearest-rank percentile.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

impl Summary {
    fn from_rows(algo: Algo, n: usize, t: usize, runs: &[Vec<MetricsRow>]) -> Summary {
        let all: Vec<&MetricsRow> = runs.iter().flatten().collect();
        let lat: Vec<f64> = all.iter().map(|r| r.commit_latency_ms).collect();
        let mut churn = 0;
        for rows in runs {
            let sets: Vec<BTreeSet<&str>> = rows
                .iter()
                .map(|r| r.cabinet_ids.split(' ').collect())
                .collect();
            churn += sets.windows(2).filter(|w| w[0] != w[1]).count();
        }
        let mut stages: Vec<(usize, Vec<f64>)> = Vec::new();
        for r in runs.first().into_iter().flatten() {
            match stages.last_mut() {
                Some((t, v)) if *t == r.t => v.push(r.commit_latency_ms),
                _ => stages.push((r.t, vec![r.commit_latency_ms])),
            }
        }
        Summary {
            algo,
            n,
            t,
            runs: runs.len(),
            rounds: all.len(),
            mean_latency_ms: mean(lat.iter().copied()),
            p99_latency_ms: percentile(&lat, 99.0),
            mean_throughput_ops_per_s: mean(all.iter().map(|r| r.throughput_ops_per_s)),
            cabinet_churn: churn,
            livelocks: 0,
            audit_violations: 0,
            stages: stages
                .into_iter()
                .map(|(t, v)| Stage {
                    t,
                    rounds: v.len(),
                    mean_latency_ms: mean(v.into_iter()),
                })
                .collect(),
        }
    }

    pub fn write_block<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# algo: {}", self.algo)?;
        writeln!(out, "# n: {}", self.n)?;
        writeln!(out, "# t: {}", self.t)?;
        writeln!(out, "# runs: {}", self.runs)?;
        writeln!(out, "# rounds: {}", self.rounds)?;
        writeln!(out, "# mean_latency_ms: {:.3}", self.mean_latency_ms)?;
        writeln!(out, "# p99_latency_ms: {:.3}", self.p99_latency_ms)?;
        writeln!(out, "# mean_throughput_ops_per_s: {:.3}", self.mean_throughput_ops_per_s)?;
        writeln!(out, "# cabinet_churn: {}", self.cabinet_churn)?;
        writeln!(out, "# livelocks: {}", self.livelocks)?;
        writeln!(out, "# audit_violations: {}", self.audit_violations)?;
        if self.stages.len() > 1 {
            for s in &self.stages {
                writeln!(
                    out,
                    "# stage t={} rounds={} mean_latency_ms={:.3}",
                    s.t, s.rounds, s.mean_latency_ms
                )?;
            }
        }
        Ok(())
    }
}

/// Everything one `run` produced, across replications.
#[derive(Debug)]
pub struct Outcome {
    pub traces: Vec<ExecutionTrace>,
    pub rows: Vec<MetricsRow>,
    pub summary: Summary,
    pub violations: Vec<AuditViolation>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if !self.violations.is_empty() {
            EXIT_AUDIT
        } else if self.summary.livelocks > 0 {
            EXIT_LIVELOCK
        } else {
            EXIT_OK
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        write_csv(&self.rows, Some(&self.summary), out)
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

pub fn write_csv<W: Write>(
    rows: &[MetricsRow],
    summary: Option<&Summary>,
    mut out: W,
) -> Result<(), HarnessError> {
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut out);
        w.write_record(CSV_HEADER.split(','))?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    if let Some(s) = summary {
        s.write_block(&mut out)?;
    }
    Ok(())
}

/// Runs `replications` seeds starting at the config's seed, in parallel;
/// results come back in seed order.
pub fn run_replications(cfg: &SimConfig, replications: u64) -> Vec<Result<ExecutionTrace, SimError>> {
    (0..replications.max(1))
        .into_par_iter()
        .map(|k| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(k);
            run(&c)
        })
        .collect()
}

pub fn run_experiment(cfg: &SimConfig, replications: u64) -> Result<Outcome, HarnessError> {
    let results = run_replications(cfg, replications);
    let mut traces = Vec::new();
    let mut livelocks = 0;
    for r in results {
        match r {
            Ok(t) => traces.push(t),
            Err(SimError::Livelock { trace, .. }) => {
                livelocks += 1;
                traces.push(*trace);
            }
            Err(SimError::Config(e)) => return Err(HarnessError::Config(e)),
        }
    }
    let per_run: Vec<Vec<MetricsRow>> = traces.iter().map(metrics_rows).collect();
    let violations: Vec<AuditViolation> = traces.iter().flat_map(audit_trace).collect();
    let mut summary = Summary::from_rows(cfg.cluster.algo, cfg.cluster.n, cfg.cluster.t, &per_run);
    summary.livelocks = livelocks;
    summary.audit_violations = violations.len();
    Ok(Outcome {
        traces,
        rows: per_run.into_iter().flatten().collect(),
        summary,
        violations,
    })
}

/// Cabinet and baseline on the same seeds, delays and workload.
#[derive(Debug)]
pub struct Comparison {
    pub cabinet: Outcome,
    pub baseline: Outcome,
}

impl Comparison {
    /// Baseline mean latency over cabinet mean latency.
    pub fn latency_ratio(&self) -> f64 {
        self.baseline.summary.mean_latency_ms / self.cabinet.summary.mean_latency_ms
    }

    pub fn throughput_ratio(&self) -> f64 {
        self.cabinet.summary.mean_throughput_ops_per_s
            / self.baseline.summary.mean_throughput_ops_per_s
    }

    pub fn exit_code(&self) -> i32 {
        self.cabinet.exit_code().max(self.baseline.exit_code())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), HarnessError> {
        let rows: Vec<MetricsRow> = self
            .cabinet
            .rows
            .iter()
            .chain(&self.baseline.rows)
            .cloned()
            .collect();
        write_csv(&rows, None, &mut out)?;
        self.cabinet.summary.write_block(&mut out)?;
        self.baseline.summary.write_block(&mut out)?;
        writeln!(out, "# latency_ratio: {:.4}", self.latency_ratio())?;
        writeln!(out, "# throughput_ratio: {:.4}", self.throughput_ratio())?;
        Ok(())
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<9} {:>4} {:>3} {:>7} {:>12} {:>12} {:>14} {:>6}",
            "algo", "n", "t", "rounds", "mean_ms", "p99_ms", "ops_per_s", "churn"
        )?;
        for s in [&self.cabinet.summary, &self.baseline.summary] {
            writeln!(
                f,
                "{:<9} {:>4} {:>3} {:>7} {:>12.3} {:>12.3} {:>14.1} {:>6}",
                s.algo.to_string(),
                s.n,
                s.t,
                s.rounds,
                s.mean_latency_ms,
                s.p99_latency_ms,
                s.mean_throughput_ops_per_s,
                s.cabinet_churn
            )?;
        }
        write!(
            f,
            "latency ratio (baseline/cabinet) {:.3}, throughput ratio {:.3}",
            self.latency_ratio(),
            self.throughput_ratio()
        )
    }
}

pub fn compare(scenario: &Scenario) -> Result<Comparison, HarnessError> {
    let mut cab = scenario.clone();
    cab.algo = Some(Algo::Cabinet);
    let mut base = scenario.clone();
    base.algo = Some(Algo::MajorityBaseline);
    let reps = scenario.replications();
    Ok(Comparison {
        cabinet: run_experiment(&cab.to_config()?, reps)?,
        baseline: run_experiment(&base.to_config()?, reps)?,
    })
}

/// Crash plans parsed from CLI-style strings.
pub fn parse_crashes(items: &[String]) -> Result<Vec<CrashPlan>, HarnessError> {
    let mut out = Vec::new();
    for i in items {
        if let Some(p) = parse_crash(i).map_err(config_err)? {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_thresholds() {
        assert_eq!(parse_threshold("f10%", 50), Ok(5));
        assert_eq!(parse_threshold("f10%", 7), Ok(1));
        assert_eq!(parse_threshold("f20%", 11), Ok(2));
        assert_eq!(parse_threshold("f50%", 100), Ok(49));
        assert_eq!(parse_threshold("f1%", 3), Ok(1));
        assert_eq!(parse_threshold("3", 7), Ok(3));
        assert!(parse_threshold("4", 7).is_err());
        assert!(parse_threshold("f%", 7).is_err());
        assert!(parse_threshold("fx%", 7).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&v, 99.0), 99.0);
        assert_eq!(percentile(&v, 100.0), 100.0);
        assert_eq!(percentile(&[3.0], 99.0), 3.0);
        assert_eq!(percentile(&[], 50.0), 0.0);
    }

    #[test]
    fn scenario_toml_and_merge() {
        let mut s = Scenario::from_toml(
            r#"
            algo = "baseline"
            n = 11
            t = "f20%"
            delay = "d1:50"
            crash = ["strong:1@3", "weak:1@5"]
            [[reconfigure]]
            after_round = 4
            t = 1
            "#,
        )
        .unwrap();
        s.merge(&Scenario {
            algo: Some(Algo::Cabinet),
            rounds: Some(12),
            ..Default::default()
        });
        let cfg = s.to_config().unwrap();
        assert_eq!(cfg.cluster.algo, Algo::Cabinet);
        assert_eq!(cfg.cluster.t, 2);
        assert_eq!(cfg.rounds, 12);
        assert_eq!(cfg.crashes.len(), 2);
        assert_eq!(cfg.delays, DelayModel::d1(50.0));
        assert!(Scenario::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn header_matches_rows() {
        let cfg = Scenario {
            rounds: Some(3),
            seed: Some(1),
            ..Default::default()
        }
        .to_config()
        .unwrap();
        let out = run_experiment(&cfg, 1).unwrap();
        let text = out.csv_string();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let first = lines.next().unwrap();
        assert_eq!(first.split(',').count(), CSV_HEADER.split(',').count());
        assert!(first.starts_with("1,1,cabinet,"));
        assert!(text.contains("# mean_latency_ms: "));
        assert_eq!(out.exit_code(), EXIT_OK);
    }
}
