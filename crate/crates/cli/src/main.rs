use std::collections::BTreeSet;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kflow::dsl;
use kflow::engine::{analyze, AnalyzeOptions, Report, Verdict};
use kflow::model::{build_universe, enumerate_bindings, Scenario, DEFAULT_MAX_UNIVERSE};
use kflow::protocols::{self, ProtocolSpec, BUILTINS};

/// Knowledge-flow analysis of security protocols.
///
/// Exit status: 0 secure or success, 1 attack found, 2 usage, parse or
/// analysis error. KFLOW_SEED is accepted and ignored; analysis is
/// deterministic.
#[derive(Parser, Debug)]
#[command(name = "kflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search every session binding for a violation of the theorem.
    Analyze(AnalyzeArgs),
    /// List the built-in protocols.
    List,
    /// Parse a protocol file and print its canonical form.
    Parse {
        file: PathBuf,
        /// Only report diagnostics.
        #[arg(long)]
        check: bool,
    },
    /// Print the union of the universes of every binding, one value per line.
    DumpUniverse(ScenarioArgs),
}

#[derive(Args, Debug)]
struct ScenarioArgs {
    /// Built-in name or path to a .kf file.
    #[arg(long)]
    protocol: String,
    /// Parallel sessions to consider.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    sessions: u64,
    /// Honest principals besides Oscar.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    honest: u64,
    /// Give up when a universe grows past this many values.
    #[arg(long, default_value_t = DEFAULT_MAX_UNIVERSE as u64, value_parser = clap::value_parser!(u64).range(1..))]
    max_universe: u64,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Write the JSON report to a file, or `-` for stdout.
    #[arg(long)]
    json: Option<String>,
    /// Write the attack trace as a Graphviz digraph.
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Also print the universe before the verdict.
    #[arg(long)]
    dump_universe: bool,
    /// Report binding count and timing on stderr.
    #[arg(short, long)]
    verbose: bool,
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

/// Writes to stdout; a closed pipe ends output quietly.
fn emit(text: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn lines(items: impl IntoIterator<Item = String>) -> String {
    items.into_iter().map(|l| l + "\n").collect()
}

fn load_file(path: &Path) -> Result<ProtocolSpec, Failure> {
    let name = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| Failure(format!("{name}: {e}")))?;
    dsl::parse_bytes(&bytes, &name)
        .map_err(|diags| Failure(diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")))
}

fn load(protocol: &str) -> Result<ProtocolSpec, Failure> {
    let path = Path::new(protocol);
    if protocol.ends_with(".kf") || path.is_file() {
        return load_file(path);
    }
    protocols::builtin(protocol)
        .ok_or_else(|| Failure(format!("unknown protocol `{protocol}` (built-ins: {})", BUILTINS.join(", "))))
}

fn scenario(a: &ScenarioArgs) -> Result<Scenario, Failure> {
    Ok(Scenario::new(load(&a.protocol)?, a.honest as usize, a.sessions as usize)?)
}

fn universe_lines(sc: &Scenario, cap: usize) -> Result<BTreeSet<String>, Failure> {
    let mut all = BTreeSet::new();
    for b in enumerate_bindings(sc) {
        all.extend(build_universe(sc, &b, cap)?.dump());
    }
    Ok(all)
}

fn summary(r: &Report) -> String {
    let mut out = format!("{}: {}; sessions {}\n", r.protocol, r.scenario, r.sessions);
    out += &format!("bindings explored: {}\nverdict: {}\n", r.bindings_explored, r.verdict);
    if let Some(t) = &r.trace {
        let sessions: Vec<String> = r.attack_bindings.iter().map(|s| format!("({})", s.join(","))).collect();
        out += &format!("attack sessions: {}\n", sessions.join(" "));
        let w: Vec<String> = t.witness.iter().map(|(k, v)| format!("{k}={v}")).collect();
        out += &format!("witness: {}\ntrace:\n", w.join(", "));
        for (i, s) in t.steps.iter().enumerate() {
            out += &format!("  {:>2}. {} <- {}({})\n", i + 1, s.value, s.rule, s.premises.join("; "));
        }
    }
    out
}

fn run_analyze(a: AnalyzeArgs) -> Result<ExitCode, Failure> {
    let sc = scenario(&a.scenario)?;
    let cap = a.scenario.max_universe as usize;
    if a.dump_universe {
        emit(&lines(universe_lines(&sc, cap)?))?;
    }
    let mut opts = AnalyzeOptions { max_universe: cap, ..AnalyzeOptions::default() };
    if let Some(j) = a.jobs {
        opts.jobs = j as usize;
    }
    if a.verbose {
        eprintln!("{} bindings, {} jobs", enumerate_bindings(&sc).len(), opts.jobs);
    }
    let report = analyze(&sc, opts)?;
    if a.verbose {
        eprintln!("{} ms", report.ms);
    }
    match a.json.as_deref() {
        Some("-") => emit(&(report.to_json() + "\n"))?,
        Some(path) => {
            std::fs::write(path, report.to_json() + "\n")?;
            emit(&summary(&report))?;
        }
        None => emit(&summary(&report))?,
    }
    if let Some(path) = &a.dot {
        std::fs::write(path, report.to_dot())?;
    }
    Ok(match report.verdict {
        Verdict::Secure(_) => ExitCode::SUCCESS,
        Verdict::Attack => ExitCode::from(1),
    })
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Analyze(a) => run_analyze(a),
        Command::List => {
            emit(&lines(BUILTINS.iter().map(|name| {
                let p = protocols::builtin(name).expect("listed built-in exists");
                format!("{name}\troles {}\ttheorem {}", p.roles.join(","), p.theorem.label)
            })))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Parse { file, check } => {
            let spec = load_file(&file)?;
            if check {
                emit(&format!("{}: ok\n", file.display()))?;
            } else {
                emit(&dsl::render(&spec))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::DumpUniverse(a) => {
            let sc = scenario(&a)?;
            emit(&lines(universe_lines(&sc, a.max_universe as usize)?))?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    run(cli).unwrap_or_else(|Failure(msg)| {
        eprintln!("error: {msg}");
        ExitCode::from(2)
    })
}
