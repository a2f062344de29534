use cabinet::consensus::{Algo, NodeId};
use cabinet::harness::{
    compare, run_experiment, HarnessError, OneOrMany, Scenario, ThresholdArg, EXIT_AUDIT,
    EXIT_CONFIG, EXIT_OK,
};
use cabinet::trace::{read_jsonl, ExecutionTrace, RecordKind};
use cabinet::verifier::{audit_trace, exhaustive_scheme_check, MAX_EXHAUSTIVE_N};
use cabinet::weight_scheme::{generate_scheme, validate_scheme};
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cabinet", version, about = "Weighted consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one algorithm and write per-round metrics.
    Run(RunArgs),
    /// Simulate cabinet and baseline on identical seeds and delays.
    Compare(RunArgs),
    /// Generate or check a weight scheme.
    Scheme(SchemeArgs),
    /// Audit a JSONL trace.
    Audit {
        #[arg(long)]
        trace: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML scenario; flags given on the command line take precedence.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    algo: Option<Algo>,
    #[arg(long)]
    n: Option<usize>,
    /// Integer or fX% (percent of n).
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    rounds: Option<u64>,
    /// Falls back to CABINET_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// none | d1:<mean> | d2 | d3[:<period>] | d4
    #[arg(long)]
    delay: Option<String>,
    /// <strong|weak|random>:<x>@<round>, or none. Repeatable.
    #[arg(long)]
    crash: Vec<String>,
    /// homogeneous | heterogeneous
    #[arg(long)]
    profile: Option<String>,
    /// A-F or tpcc
    #[arg(long)]
    workload: Option<String>,
    #[arg(long)]
    gap_ms: Option<f64>,
    #[arg(long)]
    replications: Option<u64>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSONL trace destination.
    #[arg(long)]
    trace: Option<PathBuf>,
}

impl RunArgs {
    fn scenario(&self) -> Result<Scenario, HarnessError> {
        let mut s = match &self.scenario {
            Some(p) => Scenario::load(p)?,
            None => Scenario::default(),
        };
        s.merge(&Scenario {
            algo: self.algo,
            n: self.n,
            t: self.t.clone().map(ThresholdArg::Text),
            batch: self.batch,
            rounds: self.rounds,
            seed: self.seed,
            delay: self.delay.clone(),
            crash: (!self.crash.is_empty()).then(|| OneOrMany::Many(self.crash.clone())),
            profile: self.profile.clone(),
            workload: self.workload.clone(),
            gap_ms: self.gap_ms,
            replications: self.replications,
            ..Default::default()
        });
        Ok(s)
    }
}

#[derive(Args)]
struct SchemeArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    t: usize,
    /// Comma-separated weights to check instead of generating.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    /// Threshold for --weights; half the total when absent.
    #[arg(long)]
    ct: Option<f64>,
}

fn open_out(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn trace_path(base: &Path, seed: u64, many: bool) -> PathBuf {
    if !many {
        return base.to_path_buf();
    }
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    base.with_file_name(format!("{stem}.{seed}.jsonl"))
}

fn write_traces(base: Option<&Path>, traces: &[ExecutionTrace]) -> Result<(), HarnessError> {
    let Some(base) = base else { return Ok(()) };
    for t in traces {
        let mut w = BufWriter::new(File::create(trace_path(base, t.seed, traces.len() > 1))?);
        t.write_jsonl(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_run(args: &RunArgs) -> Result<i32, HarnessError> {
    let scenario = args.scenario()?;
    let cfg = scenario.to_config()?;
    let outcome = run_experiment(&cfg, scenario.replications())?;
    let mut out = open_out(args.out.as_deref())?;
    outcome.write_csv(&mut out)?;
    out.flush()?;
    write_traces(args.trace.as_deref(), &outcome.traces)?;
    for v in &outcome.violations {
        eprintln!("audit: {v}");
    }
    if outcome.summary.livelocks > 0 {
        eprintln!("livelock in {} of {} runs", outcome.summary.livelocks, outcome.summary.runs);
    }
    Ok(outcome.exit_code())
}

fn cmd_compare(args: &RunArgs) -> Result<i32, HarnessError> {
    let cmp = compare(&args.scenario()?)?;
    if let Some(p) = &args.out {
        let mut w = BufWriter::new(File::create(p)?);
        cmp.write_csv(&mut w)?;
        w.flush()?;
    }
    println!("{cmp}");
    for v in cmp.cabinet.violations.iter().chain(&cmp.baseline.violations) {
        eprintln!("audit: {v}");
    }
    Ok(cmp.exit_code())
}

fn cmd_scheme(args: &SchemeArgs) -> Result<i32, HarnessError> {
    let config = |e: String| HarnessError::Config(e);
    let (weights, ct) = if args.weights.is_empty() {
        let n = args.n.ok_or_else(|| config("--n or --weights is required".into()))?;
        let s = generate_scheme(n, args.t).map_err(|e| config(e.to_string()))?;
        println!("{}", s.to_json());
        (s.weights().to_vec(), s.ct())
    } else {
        let ct = args.ct.unwrap_or(args.weights.iter().sum::<f64>() / 2.0);
        (args.weights.clone(), ct)
    };
    let verdict = validate_scheme(&weights, ct, args.t);
    println!(
        "valid={} violated={} margins=({}, {})",
        verdict.valid, verdict.violated, verdict.margins.0, verdict.margins.1
    );
    let mut ok = verdict.valid;
    if weights.len() <= MAX_EXHAUSTIVE_N {
        let report = exhaustive_scheme_check(&weights, ct, args.t).map_err(|e| config(e.to_string()))?;
        println!(
            "exhaustive: survivors_quorate={} cabinet_dominates={} quorums_intersect={} subsets={}",
            report.survivors_quorate, report.cabinet_dominates, report.quorums_intersect, report.subsets
        );
        if let Some(w) = &report.liveness_witness {
            println!("  stalls when {w:?} fail");
        }
        if let Some((a, b)) = &report.safety_witness {
            println!("  disjoint quorums {a:?} and {b:?}");
        }
        ok &= report.holds();
    }
    Ok(if ok { EXIT_OK } else { EXIT_AUDIT })
}

fn cmd_audit(path: &Path) -> Result<i32, HarnessError> {
    let file = File::open(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    let records = read_jsonl(BufReader::new(file)).map_err(HarnessError::Config)?;
    let n = records
        .iter()
        .flat_map(|r| [r.from, r.to])
        .max()
        .unwrap_or(0) as usize;
    let algo = records
        .iter()
        .find(|r| r.kind == RecordKind::Scheme)
        .and_then(|r| r.note.as_deref()?.parse().ok())
        .unwrap_or(Algo::Cabinet);
    let trace = ExecutionTrace {
        n: n.max(records.iter().filter_map(|r| r.nodes.as_ref()).map(Vec::len).max().unwrap_or(0)),
        algo,
        seed: 0,
        end_time: records.last().map(|r| r.time).unwrap_or_default(),
        records,
        rounds: Vec::new(),
        livelock: false,
    };
    let violations = audit_trace(&trace);
    for v in &violations {
        println!("{v}");
    }
    let leaders: Vec<NodeId> = trace.of_kind(RecordKind::Leader).map(|r| r.from).collect();
    eprintln!(
        "{} records, {} leaders, {} violations",
        trace.records.len(),
        leaders.len(),
        violations.len()
    );
    Ok(if violations.is_empty() { EXIT_OK } else { EXIT_AUDIT })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Scheme(a) => cmd_scheme(a),
        Command::Audit { trace } => cmd_audit(trace),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.exit_code() == EXIT_CONFIG { EXIT_CONFIG as u8 } else { 1 })
        }
    }
}
