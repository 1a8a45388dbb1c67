use clap::{Parser, Subcommand};
use formation_core::sim::{
    self, RunOutput, RunStatus, ScenarioError, ScenarioFile, Trace, TraceError,
};
use formation_core::verify::{check_error_dynamics, check_funnels, VerifyError};
use log::LevelFilter;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 2;
const EXIT_VIOLATION: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(
    name = "formation",
    version,
    about = "Funnel-constrained SE(3) formation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write trace.csv and summary.json.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long = "t-end")]
        t_end: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-check a recorded trace against the scenario's funnels and constraints.
    Verify { trace: PathBuf, scenario: PathBuf },
    /// Run the scenario for several seeds in parallel.
    Sweep {
        scenario: PathBuf,
        #[arg(long)]
        seeds: u64,
        #[arg(long = "first-seed", default_value_t = 1)]
        first_seed: u64,
        /// Write each run's trace and summary under DIR/seed_<n>/.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a summary.json as a table.
    Report { summary: PathBuf },
}

/// Failure carrying its exit code.
struct Fail(u8, String);

impl From<ScenarioError> for Fail {
    fn from(e: ScenarioError) -> Self {
        let code = match e {
            ScenarioError::Io { .. } => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Fail(code, e.to_string())
    }
}

impl From<TraceError> for Fail {
    fn from(e: TraceError) -> Self {
        let code = match e {
            TraceError::Io { .. } => EXIT_IO,
            TraceError::Csv(ref c) if c.is_io_error() => EXIT_IO,
            _ => EXIT_VALIDATION,
        };
        Fail(code, e.to_string())
    }
}

impl From<VerifyError> for Fail {
    fn from(e: VerifyError) -> Self {
        Fail(EXIT_VALIDATION, e.to_string())
    }
}

fn io_fail(path: &Path, e: impl std::fmt::Display) -> Fail {
    Fail(EXIT_IO, format!("{}: {e}", path.display()))
}

fn init_logging() {
    let level = match std::env::var("FORMATION_LOG").as_deref() {
        Ok("quiet") => LevelFilter::Off,
        Ok("debug") => LevelFilter::Debug,
        Ok("info") => LevelFilter::Info,
        _ => LevelFilter::Warn,
    };
    env_logger::Builder::new().filter_level(level).init();
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Fail> {
    let file = std::fs::File::create(path).map_err(|e| io_fail(path, e))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value).map_err(|e| io_fail(path, e))
}

fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), Fail> {
    std::fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    out.trace.write_csv_file(dir.join("trace.csv"))?;
    write_json(&dir.join("summary.json"), &out.summary)
}

fn run_cmd(
    scenario: &Path,
    out_dir: &Path,
    dt: Option<f64>,
    t_end: Option<f64>,
    seed: Option<u64>,
) -> Result<u8, Fail> {
    let mut file = ScenarioFile::from_path(scenario)?;
    if let Some(dt) = dt {
        file.integration.dt = dt;
    }
    if let Some(t_end) = t_end {
        file.integration.t_end = t_end;
    }
    if let Some(seed) = seed {
        file.seed = seed;
    }
    let sc = file.resolve()?;
    let out = sim::run(&sc);
    write_outputs(out_dir, &out)?;
    let s = &out.summary;
    println!(
        "{:?}: {} rows, t_final = {}, violations = {}, wall clock {:.3} s",
        s.status, s.rows, s.t_final, s.violation_count, s.wall_clock_s
    );
    if let Some(e) = &out.error {
        eprintln!("aborted: {e}");
    }
    Ok(match (s.status, s.violation_count) {
        (RunStatus::Completed, 0) => EXIT_OK,
        _ => EXIT_VIOLATION,
    })
}

fn verify_cmd(trace_path: &Path, scenario: &Path) -> Result<u8, Fail> {
    let sc = ScenarioFile::from_path(scenario)?.resolve()?;
    let trace = Trace::read_csv_file(trace_path, sc.n_agents(), sc.n_edges())?;
    let report = check_funnels(&trace, &sc)?;
    let dynamics = check_error_dynamics(&trace, &sc).ok();
    for v in &report.violations {
        let who = match (v.edge, v.agent) {
            (Some(k), _) => format!("edge {k}"),
            (_, Some(i)) => format!("agent {i}"),
            _ => String::new(),
        };
        eprintln!(
            "violation: row {} (t = {}), {who}, {:?}: observed {} vs bound {}",
            v.row, v.t, v.kind, v.observed, v.bound
        );
    }
    #[derive(Serialize)]
    struct Output<'a> {
        funnels: &'a formation_core::verify::ViolationReport,
        error_dynamics: Option<formation_core::verify::DynamicsResiduals>,
    }
    let json = serde_json::to_string_pretty(&Output {
        funnels: &report,
        error_dynamics: dynamics,
    })
    .expect("report serializes");
    println!("{json}");
    Ok(if report.passed() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    })
}

fn sweep_cmd(scenario: &Path, seeds: u64, first_seed: u64, out: Option<&Path>) -> Result<u8, Fail> {
    let file = ScenarioFile::from_path(scenario)?;
    let seed_list: Vec<u64> = (first_seed..first_seed + seeds).collect();
    let write_errors = std::sync::Mutex::new(Vec::new());
    let results = sim::sweep(&file, &seed_list, |seed, run| {
        if let Some(dir) = out {
            if let Err(Fail(_, msg)) = write_outputs(&dir.join(format!("seed_{seed}")), run) {
                write_errors.lock().expect("not poisoned").push(msg);
            }
        }
    });
    let mut passed = 0;
    for r in &results {
        let ok = r.status == RunStatus::Completed && r.violation_count == 0;
        passed += usize::from(ok);
        let detail = r.abort.as_deref().or(r.error.as_deref()).unwrap_or("");
        println!(
            "seed {:>6}  {:<16}  violations {}  {}",
            r.seed,
            format!("{:?}", r.status),
            r.violation_count,
            detail
        );
    }
    println!("{passed}/{} runs violation-free", results.len());
    let write_errors = write_errors.into_inner().expect("not poisoned");
    if let Some(msg) = write_errors.first() {
        return Err(Fail(EXIT_IO, msg.clone()));
    }
    if results.iter().any(|r| r.error.is_some()) {
        return Ok(EXIT_VALIDATION);
    }
    Ok(if passed == results.len() {
        EXIT_OK
    } else {
        EXIT_VIOLATION
    })
}

fn report_cmd(path: &Path) -> Result<u8, Fail> {
    let text = std::fs::read_to_string(path).map_err(|e| io_fail(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Fail(EXIT_VALIDATION, format!("{}: {e}", path.display())))?;
    let num = |v: &serde_json::Value| v.as_f64().map_or("-".to_string(), |x| format!("{x:.6}"));
    println!("status          {}", v["status"].as_str().unwrap_or("?"));
    println!("violations      {}", v["violation_count"]);
    println!("rows            {}", v["rows"]);
    println!("t_final         {}", num(&v["t_final"]));
    println!("wall clock [s]  {}", num(&v["wall_clock_s"]));
    println!(
        "max ‖RᵀR − I‖   {:e}",
        v["max_orthonormality_error"].as_f64().unwrap_or(f64::NAN)
    );
    println!(
        "scenario hash   {}",
        v["scenario_hash"].as_str().unwrap_or("?")
    );
    if let Some(abort) = v["abort"].as_str() {
        println!("abort           {abort}");
    }
    println!();
    println!(
        "{:<8} {:>10} {:>10} {:>12} {:>12} {:>10} {:>10} {:>10}",
        "edge",
        "min dist",
        "max dist",
        "final e",
        "final psi",
        "margin e",
        "margin psi",
        "margin d"
    );
    for e in v["edges"].as_array().into_iter().flatten() {
        let pair = &e["edge"];
        println!(
            "{:<8} {:>10} {:>10} {:>12} {:>12} {:>10} {:>10} {:>10}",
            format!("{}-{}", pair[0], pair[1]),
            num(&e["min_distance"]),
            num(&e["max_distance"]),
            num(&e["final_e"]),
            num(&e["final_psi"]),
            num(&e["min_margin_e"]),
            num(&e["min_margin_psi"]),
            num(&e["min_margin_distance"]),
        );
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            out,
            dt,
            t_end,
            seed,
        } => run_cmd(scenario, out, *dt, *t_end, *seed),
        Command::Verify { trace, scenario } => verify_cmd(trace, scenario),
        Command::Sweep {
            scenario,
            seeds,
            first_seed,
            out,
        } => sweep_cmd(scenario, *seeds, *first_seed, out.as_deref()),
        Command::Report { summary } => report_cmd(summary),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
