//! `l4s`: check, run, explore and analyze lambda4s programs.
//!
//! Exit codes: 0 success, 1 type errors, 2 parse or usage errors, 3 IO
//! errors, 4 deadlock, 5 step limit, 6 a check failed (invariant, dynamic
//! type failure, ill-formed graph, bound violation, fuzz failure).

use std::fs;
use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lambda4s::explore::explore;
use lambda4s::fuzz::{fuzz, summary_text, FuzzConfig, FuzzSize};
use lambda4s::graph::CostGraph;
use lambda4s::interp::{run, Policy, RunOptions, RunOutcome, ScriptItem};
use lambda4s::lang::Program;
use lambda4s::parser::parse_program;
use lambda4s::sched::{check_bound, ScheduleReport};
use lambda4s::typeck::check_program;
use serde_json::json;

const OK: u8 = 0;
const TYPE_ERRORS: u8 = 1;
const PARSE_OR_USAGE: u8 = 2;
const IO: u8 = 3;
const DEADLOCK: u8 = 4;
const STEP_LIMIT: u8 = 5;
const CHECK_FAILED: u8 = 6;

#[derive(Parser)]
#[command(name = "l4s", version, about = "Priority-inversion checker and cost-graph tools for lambda4s programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Dot,
}

#[derive(Subcommand)]
enum Command {
    /// Type-check a program.
    Check {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Run a program and write its trace and cost graph.
    Run {
        file: PathBuf,
        /// Seed for the random scheduler.
        #[arg(long, default_value_t = 0, conflicts_with_all = ["script", "round_robin"])]
        seed: u64,
        /// Thread script, e.g. `a0*7,a1+,a0`.
        #[arg(long)]
        script: Option<String>,
        #[arg(long, conflicts_with = "script")]
        round_robin: bool,
        /// Step limit.
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// Signal wakes the highest-priority waiter instead of the oldest.
        #[arg(long)]
        signal_highest_first: bool,
        /// Skip the runtime invariant checks after each step (implied by --unsafe).
        #[arg(long)]
        no_invariants: bool,
        /// Run even if the program does not type-check.
        #[arg(long = "unsafe")]
        unsafe_run: bool,
        /// Directory for trace.txt, graph.dot and graph.json.
        #[arg(long, default_value = "l4s-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Enumerate interleavings and report the distinct cost graphs.
    Explore {
        file: PathBuf,
        /// Maximum number of steps per interleaving.
        #[arg(long, default_value_t = 2_000)]
        bound: usize,
        #[arg(long = "unsafe")]
        unsafe_run: bool,
        /// Directory for one graphN.json per distinct graph.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Convert a graph file and report its well-formedness.
    Graph {
        graph: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Dot)]
        format: Format,
    },
    /// Check the response-time bound on sampled prompt schedules.
    Analyze {
        graph: PathBuf,
        /// Thread to analyze; every non-empty thread if omitted.
        #[arg(long)]
        thread: Option<String>,
        /// Processor counts.
        #[arg(short = 'P', long = "processors", value_delimiter = ',', default_values_t = [1, 2, 3, 4])]
        processors: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Generate, run and check random well-typed programs.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long, default_value = "small")]
        size: FuzzSize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        /// Directory for minimized reproducers of failures.
        #[arg(long, default_value = "fuzz-failures")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

struct Style {
    color: bool,
}

impl Style {
    fn from_env() -> Style {
        let color = match std::env::var("L4S_COLOR").as_deref() {
            Ok("1" | "always" | "true") => true,
            Ok("0" | "never" | "false") => false,
            _ => std::io::stdout().is_terminal(),
        };
        Style { color }
    }

    fn paint(&self, code: &str, text: &str) -> String {
        if self.color {
            format!("\x1b[{code}m{text}\x1b[0m")
        } else {
            text.to_string()
        }
    }

    fn good(&self, text: &str) -> String {
        self.paint("32", text)
    }

    fn bad(&self, text: &str) -> String {
        self.paint("31", text)
    }
}

/// A failure that ends the command with an exit code.
struct Fail(u8, String);

type CmdResult = Result<u8, Fail>;

fn read(path: &Path) -> Result<String, Fail> {
    fs::read_to_string(path).map_err(|e| Fail(IO, format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Fail> {
    fs::write(path, text).map_err(|e| Fail(IO, format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), Fail> {
    fs::create_dir_all(path).map_err(|e| Fail(IO, format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<Program, Fail> {
    let text = read(path)?;
    parse_program(&text).map(|p| p.program).map_err(|e| Fail(PARSE_OR_USAGE, format!("{}:{e}", path.display())))
}

fn load_graph(path: &Path) -> Result<CostGraph, Fail> {
    let text = read(path)?;
    CostGraph::from_json(&text).map_err(|e| Fail(PARSE_OR_USAGE, format!("{}: {e}", path.display())))
}

/// Type-checks unless `unsafe_run`; type errors end the command.
fn require_typed(path: &Path, program: &Program, unsafe_run: bool, style: &Style) -> Result<(), Fail> {
    if unsafe_run {
        return Ok(());
    }
    let report = check_program(program);
    if report.ok {
        return Ok(());
    }
    for e in &report.errors {
        eprintln!("{}:{}", path.display(), style.bad(&e.to_string()));
    }
    Err(Fail(TYPE_ERRORS, "program does not type-check (use --unsafe to run anyway)".into()))
}

fn cmd_check(file: &Path, format: Format, style: &Style) -> CmdResult {
    let program = load_program(file)?;
    let report = check_program(&program);
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
        _ => {
            for e in &report.errors {
                println!("{}:{}", file.display(), style.bad(&e.to_string()));
            }
            if report.ok {
                println!("{}: {}", file.display(), style.good("ok"));
            }
        }
    }
    Ok(if report.ok { OK } else { TYPE_ERRORS })
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    file: &Path,
    policy: Policy,
    steps: usize,
    signal_highest_first: bool,
    check_invariants: bool,
    unsafe_run: bool,
    out: &Path,
    format: Format,
    style: &Style,
) -> CmdResult {
    let program = load_program(file)?;
    require_typed(file, &program, unsafe_run, style)?;
    let opts = RunOptions { policy, step_limit: steps, signal_highest_first, check_invariants };
    let result = run(&program, &opts);
    let graph = &result.machine.graph;
    create_dir(out)?;
    let trace: String = result.trace.iter().map(|t| format!("{t}\n")).collect();
    write(&out.join("trace.txt"), &trace)?;
    write(&out.join("graph.dot"), &graph.to_dot())?;
    write(&out.join("graph.json"), &graph.to_json())?;
    let well_formed = graph.is_well_formed();
    let code = match &result.outcome {
        RunOutcome::Completed => OK,
        RunOutcome::Deadlock(_) => DEADLOCK,
        RunOutcome::StepLimit => STEP_LIMIT,
        RunOutcome::DynamicTypeFailure(_) | RunOutcome::InvariantViolation(_) => CHECK_FAILED,
        RunOutcome::PolicyError(msg) => return Err(Fail(PARSE_OR_USAGE, msg.clone())),
    };
    if format == Format::Json {
        let doc = json!({
            "outcome": result.outcome,
            "steps": result.trace.len(),
            "threads": graph.threads.len(),
            "vertices": graph.vertex_count(),
            "wellFormed": well_formed.is_ok(),
            "wellFormedError": well_formed.as_ref().err().map(|e| e.to_string()),
            "out": out.display().to_string(),
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
        return Ok(code);
    }
    match &result.outcome {
        RunOutcome::Completed => println!("{} after {} steps", style.good("completed"), result.trace.len()),
        RunOutcome::Deadlock(cycle) => {
            println!("{} after {} steps", style.bad("deadlock"), result.trace.len());
            for (thread, on) in cycle {
                println!("  {thread} waits on {on}");
            }
        }
        RunOutcome::StepLimit => println!("{} ({steps} steps)", style.bad("step limit reached")),
        RunOutcome::DynamicTypeFailure(msg) => println!("{}: {msg}", style.bad("dynamic type failure")),
        RunOutcome::InvariantViolation(v) => println!("{}: {v}", style.bad("invariant violated")),
        RunOutcome::PolicyError(_) => {}
    }
    println!("graph: {} threads, {} vertices", graph.threads.len(), graph.vertex_count());
    match &well_formed {
        Ok(()) => println!("graph is {}", style.good("well-formed")),
        Err(e) => println!("{}", style.bad(&e.to_string())),
    }
    println!("wrote {}/{{trace.txt,graph.dot,graph.json}}", out.display());
    Ok(code)
}

fn cmd_explore(file: &Path, bound: usize, unsafe_run: bool, out: Option<&Path>, format: Format, style: &Style) -> CmdResult {
    let program = load_program(file)?;
    require_typed(file, &program, unsafe_run, style)?;
    let e = explore(&program, bound);
    let ill_formed = e.graphs.iter().filter(|g| g.is_well_formed().is_err()).count();
    if let Some(dir) = out {
        create_dir(dir)?;
        for (i, g) in e.graphs.iter().enumerate() {
            write(&dir.join(format!("graph{i}.json")), &g.to_json())?;
        }
    }
    if format == Format::Json {
        let doc = json!({
            "runs": e.runs,
            "graphs": e.graphs.len(),
            "deadlocked": e.deadlocked,
            "illFormed": ill_formed,
            "partial": e.partial,
            "failures": e.failures,
        });
        println!("{}", serde_json::to_string_pretty(&doc).expect("json"));
    } else {
        println!("{} interleavings, {} distinct graphs ({} deadlocked)", e.runs, e.graphs.len(), e.deadlocked);
        if e.partial {
            println!("{}", style.bad(&format!("some interleavings exceeded {bound} steps")));
        }
        if ill_formed > 0 {
            println!("{}", style.bad(&format!("{ill_formed} graphs are not well-formed")));
        }
        for f in &e.failures {
            println!("{}: {f}", style.bad("dynamic type failure"));
        }
    }
    Ok(if e.failures.is_empty() && ill_formed == 0 { OK } else { CHECK_FAILED })
}

fn cmd_graph(path: &Path, format: Format, style: &Style) -> CmdResult {
    let g = load_graph(path)?;
    let wf = g.is_well_formed();
    match format {
        Format::Dot => print!("{}", g.to_dot()),
        Format::Json => println!("{}", g.to_json()),
        Format::Text => {
            for t in &g.threads {
                println!("thread {} {} {:?}", t.name, g.order.name(t.prio), t.vertices);
            }
            for e in g.edges() {
                println!("{:?} {} -> {}", e.kind, e.from, e.to);
            }
        }
    }
    match wf {
        Ok(()) => {
            eprintln!("{}", style.good("well-formed"));
            Ok(OK)
        }
        Err(e) => {
            eprintln!("{}", style.bad(&e.to_string()));
            Ok(CHECK_FAILED)
        }
    }
}

fn cmd_analyze(path: &Path, thread: Option<&str>, processors: &[usize], samples: usize, format: Format, style: &Style) -> CmdResult {
    if processors.is_empty() || processors.contains(&0) {
        return Err(Fail(PARSE_OR_USAGE, "processor counts must be at least 1".into()));
    }
    let g = load_graph(path)?;
    if let Err(e) = g.is_well_formed() {
        if format == Format::Json {
            println!("{}", json!({ "wellFormed": false, "error": e.to_string() }));
        } else {
            println!("{}", style.bad(&e.to_string()));
        }
        return Ok(CHECK_FAILED);
    }
    let threads: Vec<String> = match thread {
        Some(a) => vec![a.to_string()],
        None => g.threads.iter().filter(|t| !t.vertices.is_empty()).map(|t| t.name.clone()).collect(),
    };
    let mut reports: Vec<ScheduleReport> = Vec::new();
    for a in &threads {
        for &p in processors {
            reports.push(check_bound(&g, a, p, samples).map_err(|e| Fail(PARSE_OR_USAGE, e.to_string()))?);
        }
    }
    let all = reports.iter().all(|r| r.satisfied);
    if format == Format::Json {
        println!("{}", serde_json::to_string_pretty(&reports).expect("json"));
    } else {
        for r in &reports {
            let verdict = if r.satisfied { style.good("ok") } else { style.bad("VIOLATED") };
            println!(
                "{} P={}: response {} <= ({} + {}*{})/{} = {} over {} schedules: {verdict}",
                r.thread,
                r.p,
                r.response_time,
                r.competitor_work,
                r.p - 1,
                r.a_span,
                r.p,
                r.bound,
                r.schedules
            );
        }
    }
    Ok(if all { OK } else { CHECK_FAILED })
}

#[allow(clippy::too_many_arguments)]
fn cmd_fuzz(count: usize, size: FuzzSize, seed: u64, runs: usize, samples: usize, out: &Path, format: Format, style: &Style) -> CmdResult {
    let cfg = FuzzConfig { count, size, seed, runs_per_program: runs, samples, ..Default::default() };
    let summary = fuzz(&cfg);
    let mut written = Vec::new();
    if !summary.failures.is_empty() {
        create_dir(out)?;
        for (i, f) in summary.failures.iter().enumerate() {
            let path = out.join(format!("failure{i}.l4s"));
            write(&path, &format!("// run seed {}: {}\n{}", f.run_seed, f.reason, f.program))?;
            written.push(path.display().to_string());
        }
    }
    if format == Format::Json {
        println!("{}", serde_json::to_string_pretty(&json!({ "summary": summary, "reproducers": written })).expect("json"));
    } else {
        print!("{}", summary_text(&summary));
        for w in &written {
            println!("reproducer: {w}");
        }
        let verdict = if summary.failures.is_empty() { style.good("no failures") } else { style.bad("failures found") };
        println!("{verdict}");
    }
    Ok(if summary.failures.is_empty() { OK } else { CHECK_FAILED })
}

fn dispatch(cli: Cli, style: &Style) -> CmdResult {
    match cli.command {
        Command::Check { file, format } => cmd_check(&file, format, style),
        Command::Run { file, seed, script, round_robin, steps, signal_highest_first, no_invariants, unsafe_run, out, format } => {
            let policy = match (script, round_robin) {
                (Some(s), _) => Policy::Script(ScriptItem::parse_list(&s).map_err(|e| Fail(PARSE_OR_USAGE, e))?),
                (None, true) => Policy::RoundRobin,
                (None, false) => Policy::Random(seed),
            };
            cmd_run(&file, policy, steps, signal_highest_first, !(no_invariants || unsafe_run), unsafe_run, &out, format, style)
        }
        Command::Explore { file, bound, unsafe_run, out, format } => {
            cmd_explore(&file, bound, unsafe_run, out.as_deref(), format, style)
        }
        Command::Graph { graph, format } => cmd_graph(&graph, format, style),
        Command::Analyze { graph, thread, processors, samples, format } => {
            cmd_analyze(&graph, thread.as_deref(), &processors, samples, format, style)
        }
        Command::Fuzz { count, size, seed, runs, samples, out, format } => {
            cmd_fuzz(count, size, seed, runs, samples, &out, format, style)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let style = Style::from_env();
    match dispatch(cli, &style) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("l4s: {msg}");
            ExitCode::from(code)
        }
    }
}
