//! eqdet: reproduce the tables, run single scenarios, check certificates, simulate testers.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use eqdet::choi::{self, choi_pair, BoxAssignment, ChoiError};
use eqdet::numerics::{self, NumericsError};
use eqdet::sdp::dual::{self, DualCertificate};
use eqdet::sdp::{IpmOptions, SdpError};
use eqdet::tasks::{self, tables, Scenario, TaskError};
use eqdet::tester::{self, TesterChain, TesterError};

use output::{Format, Report};

const DEFAULT_MONTE_CARLO_TRIALS: usize = 100_000;

#[derive(Parser, Debug)]
#[command(name = "eqdet", version, about = "Equivalence determination of Haar-random SU(2) black boxes")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = tasks::DEFAULT_SEED)]
    seed: u64,
    /// Monte-Carlo sample or trial count.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Interior-point stopping tolerance.
    #[arg(long, global = true, default_value_t = 1e-9)]
    tol: f64,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Default output directory when --out is absent.
    #[arg(long, global = true, env = "EQDET_OUT_DIR", hide = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Record wall-clock runtime_ms (output then differs between runs).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Recompute every row of both summary tables.
    ReproduceTables,
    /// Run one scenario; `list` prints the scenario names.
    Scenario {
        name: String,
        /// parallel11 only: also solve the unreduced 64-dim SDP.
        #[arg(long)]
        full_space: bool,
    },
    /// Verify a dual certificate file against the exact Choi blocks.
    Certify {
        file: PathBuf,
        /// general11-target-last or general11-target-middle; defaults to the file's ordering.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Play the discrimination game with Haar-random references.
    Montecarlo {
        /// Tester JSON (a scenario witness file or a bare tester).
        #[arg(long, requires = "assignment", conflicts_with = "scenario")]
        tester: Option<PathBuf>,
        /// Slot labels for --tester, e.g. "R1 R2 T".
        #[arg(long)]
        assignment: Option<String>,
        /// Solve this scenario and simulate its optimal tester.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Dump the Haar-averaged Choi blocks of both hypotheses.
    Choi {
        /// Scenario whose slot assignment to use.
        scenario: Option<String>,
        #[arg(long, conflicts_with = "scenario")]
        assignment: Option<String>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Parse(String),
    Structure(String),
    Solver(String),
    Consistency(String),
    Table(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Io(_) => 3,
            Failure::Parse(_) => 4,
            Failure::Structure(_) => 5,
            Failure::Solver(_) => 6,
            Failure::Consistency(_) => 7,
            Failure::Table(_) => 8,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m)
            | Failure::Io(m)
            | Failure::Parse(m)
            | Failure::Structure(m)
            | Failure::Solver(m)
            | Failure::Consistency(m)
            | Failure::Table(m) => m,
        }
    }
}

impl From<NumericsError> for Failure {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::Dimension(_) => Failure::Structure(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

impl From<ChoiError> for Failure {
    fn from(e: ChoiError) -> Self {
        match e {
            ChoiError::Assignment(_) => Failure::Parse(e.to_string()),
            _ => Failure::Structure(e.to_string()),
        }
    }
}

impl From<TesterError> for Failure {
    fn from(e: TesterError) -> Self {
        match e {
            TesterError::NegativeProbability(_) => Failure::Solver(e.to_string()),
            TesterError::Numerics(n) => n.into(),
            _ => Failure::Structure(e.to_string()),
        }
    }
}

impl From<SdpError> for Failure {
    fn from(e: SdpError) -> Self {
        match e {
            SdpError::Numerical(_) | SdpError::Infeasible(_) | SdpError::NotConverged(_) => Failure::Solver(e.to_string()),
            SdpError::Numerics(n) => n.into(),
            SdpError::Choi(c) => c.into(),
            SdpError::Tester(t) => t.into(),
            _ => Failure::Structure(e.to_string()),
        }
    }
}

impl From<TaskError> for Failure {
    fn from(e: TaskError) -> Self {
        match e {
            TaskError::Scenario(_) => Failure::Parse(e.to_string()),
            TaskError::Consistency(_) | TaskError::Classification(_) => Failure::Consistency(e.to_string()),
            TaskError::Sdp(s) => s.into(),
            TaskError::Choi(c) => c.into(),
            TaskError::Tester(t) => t.into(),
            TaskError::Numerics(n) => n.into(),
            TaskError::Rep(_) => Failure::Structure(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

struct Ctx {
    seed: u64,
    samples: Option<usize>,
    opts: IpmOptions,
    timing: bool,
    format: Format,
    out: Option<PathBuf>,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Self> {
        if !(cli.tol.is_finite() && cli.tol > 0.0) {
            return Err(Failure::Usage(format!("--tol must be positive, got {}", cli.tol)));
        }
        if cli.samples == Some(0) {
            return Err(Failure::Usage("--samples must be at least 1".into()));
        }
        let out = cli.out.clone().or_else(|| {
            cli.out_dir.as_ref().map(|d| d.join(format!("{}.{}", default_stem(&cli.command), cli.format.extension())))
        });
        Ok(Ctx {
            seed: cli.seed,
            samples: cli.samples,
            opts: IpmOptions { tol: cli.tol, ..IpmOptions::default() },
            timing: cli.timing,
            format: cli.format,
            out,
        })
    }
}

fn default_stem(c: &Command) -> String {
    match c {
        Command::ReproduceTables => "tables".into(),
        Command::Scenario { name, .. } => format!("scenario-{name}"),
        Command::Certify { .. } => "certify".into(),
        Command::Montecarlo { .. } => "montecarlo".into(),
        Command::Choi { .. } => "choi".into(),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Parse(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(ctx: &Ctx, report: &Report) -> Result<()> {
    let text = report.render(ctx.format).map_err(|e| Failure::Io(e.to_string()))?;
    match &ctx.out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_scenario(name: &str) -> Result<Scenario> {
    Ok(name.parse::<Scenario>()?)
}

fn witness_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "result".into());
    out.with_file_name(format!("{stem}.witness.json"))
}

fn millis(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

fn cmd_reproduce_tables(ctx: &Ctx) -> Result<()> {
    let start = Instant::now();
    let samples = ctx.samples.unwrap_or(tasks::DEFAULT_MC_SAMPLES);
    let t = tables::reproduce_tables(&ctx.opts, samples, ctx.seed);
    let mut v = t.to_json();
    v["seed"] = json!(ctx.seed);
    v["samples"] = json!(samples);
    if ctx.timing {
        v["runtime_ms"] = json!(millis(start));
    }
    emit(ctx, &Report::Tables(v))?;
    if !t.all_pass() {
        let failed: Vec<&str> = t
            .table_i
            .iter()
            .chain(&t.fully_ordered)
            .chain(&t.table_ii)
            .filter(|r| !r.pass)
            .map(|r| r.name.as_str())
            .collect();
        let msg = if failed.is_empty() { "ordering chain is not strict".to_string() } else { format!("rows failed: {}", failed.join(", ")) };
        return Err(Failure::Table(msg));
    }
    Ok(())
}

fn cmd_scenario(ctx: &Ctx, name: &str, full_space: bool) -> Result<()> {
    if name == "list" {
        let names: Vec<String> = Scenario::all().iter().map(Scenario::name).collect();
        return emit(ctx, &Report::List(names));
    }
    let scenario = parse_scenario(name)?;
    if full_space && scenario != Scenario::Parallel11 {
        return Err(Failure::Usage("--full-space applies to parallel11 only".into()));
    }
    let start = Instant::now();
    let mut result = match scenario {
        Scenario::KnownBoth => {
            tasks::known_both(ctx.samples.unwrap_or(tasks::DEFAULT_MC_SAMPLES), ctx.seed)?
        }
        ref s => tasks::run(s, &ctx.opts)?,
    };
    if full_space {
        let s = tasks::full_space_parallel_11(&ctx.opts)?;
        if (s.primal_value - result.optimal_asp).abs() > tasks::CONSISTENCY_TOL {
            return Err(Failure::Consistency(format!("full-space SDP {} vs {}", s.primal_value, result.optimal_asp)));
        }
        result.diagnostics.insert("full_space_value".into(), json!(s.primal_value));
        result.diagnostics.insert("full_space_iterations".into(), json!(s.iterations));
    }
    let wpath = match (&ctx.out, &result.witness) {
        (Some(out), Some(w)) => {
            let p = witness_path(out);
            let text = serde_json::to_string(&w.to_json()).map_err(|e| Failure::Io(e.to_string()))?;
            write_file(&p, &text)?;
            Some(p.to_string_lossy().into_owned())
        }
        _ => None,
    };
    let mut v = result.to_json(wpath.as_deref());
    if ctx.timing {
        v["runtime_ms"] = json!(millis(start));
    }
    emit(ctx, &Report::Record(v))
}

fn cmd_certify(ctx: &Ctx, file: &Path, scenario: Option<&str>) -> Result<()> {
    let v = read_json(file)?;
    let cert = DualCertificate::from_json(&v).map_err(|e| Failure::Parse(format!("{}: {e}", file.display())))?;
    let scenario = match scenario {
        Some(s) => parse_scenario(s)?,
        None => parse_scenario(&format!("general11-{}", cert.ordering))?,
    };
    let Scenario::General11(ordering) = scenario else {
        return Err(Failure::Usage(format!("certificates apply to general11 scenarios, not {scenario}")));
    };
    let pair = choi_pair(&ordering.assignment())?;
    let report = dual::verify_certificate(&cert, &pair.blocks)?;
    let mut out = report.to_json();
    out["scenario"] = json!(scenario.name());
    out["certificate"] = json!(file.to_string_lossy());
    emit(ctx, &Report::Certificate(out))?;
    if !report.feasible {
        return Err(Failure::Consistency(format!("certificate infeasible, max violation {:e}", report.max_violation)));
    }
    Ok(())
}

fn load_tester(path: &Path) -> Result<TesterChain> {
    let v = read_json(path)?;
    let body = if v.get("kind").is_some() { &v["tester"] } else { &v };
    Ok(TesterChain::from_json(body)?)
}

fn cmd_montecarlo(ctx: &Ctx, tester: Option<&Path>, assignment: Option<&str>, scenario: Option<&str>) -> Result<()> {
    let n = ctx.samples.unwrap_or(DEFAULT_MONTE_CARLO_TRIALS);
    let (label, chain, assignment, reference) = match (tester, scenario) {
        (Some(path), None) => {
            let a = BoxAssignment::parse(assignment.unwrap_or_default())?;
            let t = load_tester(path)?;
            let pair = choi_pair(&a)?;
            let asp = t.asp(&pair.full[0], &pair.full[1])?;
            (path.to_string_lossy().into_owned(), t, a, asp)
        }
        (None, Some(name)) => {
            let s = parse_scenario(name)?;
            let a = s
                .assignment()
                .ok_or_else(|| Failure::Structure(format!("{s} has no Haar-random game to simulate")))?;
            let r = tasks::run(&s, &ctx.opts)?;
            let t = r.tester().cloned().ok_or_else(|| Failure::Structure(format!("{s} has no tester witness")))?;
            (s.name(), t, a, r.optimal_asp)
        }
        _ => return Err(Failure::Usage("pass --scenario NAME or --tester FILE --assignment LABELS".into())),
    };
    let start = Instant::now();
    let rep = tester::simulate_discrimination(&chain, &assignment, n, ctx.seed)?;
    let sigma = (reference * (1.0 - reference) / n as f64).sqrt();
    let mut v = json!({
        "source": label,
        "assignment": assignment.describe(),
        "trials": rep.trials,
        "seed": ctx.seed,
        "mean": rep.mean,
        "stderr": rep.stderr,
        "reference": reference,
        "ci_low": reference - 3.0 * sigma,
        "ci_high": reference + 3.0 * sigma,
        "within_3sigma": (rep.mean - reference).abs() <= 3.0 * sigma,
    });
    if ctx.timing {
        v["runtime_ms"] = json!(millis(start));
    }
    emit(ctx, &Report::Record(v))
}

fn cmd_choi(ctx: &Ctx, scenario: Option<&str>, assignment: Option<&str>) -> Result<()> {
    let (label, a) = match (scenario, assignment) {
        (Some(s), None) => {
            let s = parse_scenario(s)?;
            let a = s.assignment().ok_or_else(|| Failure::Structure(format!("{s} has no slot assignment")))?;
            (s.name(), a)
        }
        (None, Some(a)) => (a.to_string(), BoxAssignment::parse(a)?),
        _ => return Err(Failure::Usage("pass a scenario name or --assignment LABELS".into())),
    };
    let pair = choi_pair(&a)?;
    let mut candidates = Vec::new();
    for i in 0..2 {
        let mut c = json!({"candidate": i + 1, "operator": pair.blocks[i].to_json()});
        if let Some(n) = ctx.samples {
            let est = choi::monte_carlo_choi(&a, i + 1, n, ctx.seed)?;
            c["monte_carlo"] = json!({
                "samples": n,
                "seed": ctx.seed,
                "frobenius_distance": numerics::frobenius_distance(&est, &pair.full[i]),
            });
        }
        candidates.push(c);
    }
    let v = json!({"source": label, "assignment": a.describe(), "candidates": candidates});
    emit(ctx, &Report::Choi(v))
}

fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx::from_cli(cli)?;
    match &cli.command {
        Command::ReproduceTables => cmd_reproduce_tables(&ctx),
        Command::Scenario { name, full_space } => cmd_scenario(&ctx, name, *full_space),
        Command::Certify { file, scenario } => cmd_certify(&ctx, file, scenario.as_deref()),
        Command::Montecarlo { tester, assignment, scenario } => {
            cmd_montecarlo(&ctx, tester.as_deref(), assignment.as_deref(), scenario.as_deref())
        }
        Command::Choi { scenario, assignment } => cmd_choi(&ctx, scenario.as_deref(), assignment.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("eqdet: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
