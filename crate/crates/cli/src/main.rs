use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use morphonet::circuit::load_circuit;
use morphonet::experiment::{run_experiment, verify_manifest, Experiment, ExperimentConfig, MANIFEST_FILE};
use morphonet::expr::Expr;
use morphonet::superposition::{superpose, CompositionSpec, OutputShape};
use morphonet::{Error, Grid, Result, SearchSettings};

#[derive(Parser)]
#[command(name = "morphonet", version, about = "Gene-circuit experiments: simulation, transpilation, pattern compilation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Meinhardt reaction-diffusion run with a left perturbation.
    SimulateRd(RunArgs),
    /// Fit the RD nonlinearities, assemble the gene circuit and compare runs.
    TranspileRd(RunArgs),
    /// Compile a target pattern into a gene circuit and verify it.
    CompilePattern {
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        dim: u8,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Direct against indirect cos(8t) networks.
    DemoCos8t(RunArgs),
    /// Jones residual against unit count.
    JonesRate(RunArgs),
    /// Compose saved circuits through a fitted hidden layer.
    Superpose(SuperposeArgs),
    /// Re-check the file digests of a run manifest.
    Verify {
        manifest: PathBuf,
        /// Re-run the recorded configuration into this directory and compare.
        #[arg(long)]
        rerun: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a field, e.g. `--set m=60` or `--set rd.points=121`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    Sigmoid,
    Linear,
}

#[derive(Args)]
struct SuperposeArgs {
    /// Member circuit files, in input order u1, u2, ….
    #[arg(long = "member", required = true)]
    members: Vec<PathBuf>,
    /// Composition in u1 … up.
    #[arg(long)]
    f: String,
    #[arg(long, default_value_t = 20)]
    m0: usize,
    #[arg(long, default_value_t = 200.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    t_end: f64,
    #[arg(long, value_enum, default_value_t = Shape::Sigmoid)]
    output: Shape,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 30.0)]
    a_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Grid points on [0, length].
    #[arg(long, default_value_t = 2)]
    points: usize,
    #[arg(long, default_value_t = 1.0)]
    length: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_numerical() {
        3
    } else if is_io(e) {
        1
    } else {
        2
    }
}

fn is_io(e: &Error) -> bool {
    match e {
        Error::Io { .. } => true,
        Error::Stage { source, .. } => is_io(source),
        _ => false,
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::SimulateRd(a) => run("rd-meinhardt", a),
        Command::TranspileRd(a) => run("transpile", a),
        Command::CompilePattern { dim, run: a } => run(if dim == 1 { "compile-1d" } else { "compile-2d" }, a),
        Command::DemoCos8t(a) => run("cos8t", a),
        Command::JonesRate(a) => run("jones-rate", a),
        Command::Superpose(a) => compose(a),
        Command::Verify { manifest, rerun } => {
            let outcome = verify_manifest(&manifest, rerun.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&outcome).expect("outcome serializes"));
            Ok(if outcome.ok() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Bare keys address the experiment block; `seed` and `output_dir` the top level.
fn qualify(set: &str) -> String {
    let key = set.split('=').next().unwrap_or("");
    if key == "seed" || key == "output_dir" || key.starts_with("experiment.") {
        set.to_string()
    } else {
        format!("experiment.{set}")
    }
}

fn run(kind: &str, args: RunArgs) -> Result<ExitCode> {
    let mut value = match &args.config {
        Some(path) => {
            let v: serde_json::Value = serde_json::from_str(&read(path)?).map_err(|e| Error::Schema {
                path: format!("{}: line {}", path.display(), e.line()),
                message: e.to_string(),
            })?;
            let found = v.pointer("/experiment/kind").and_then(|k| k.as_str()).unwrap_or("");
            if found != kind {
                return Err(Error::Invalid {
                    field: "experiment.kind".into(),
                    reason: format!("this command runs `{kind}`, the config has `{found}`"),
                });
            }
            v
        }
        None => ExperimentConfig::new(Experiment::default_of(kind)?).to_value(),
    };
    let mut sets: Vec<String> = args.sets.iter().map(|s| qualify(s)).collect();
    if let Some(seed) = args.seed {
        sets.push(format!("seed={seed}"));
    }
    if let Some(out) = &args.out {
        value["output_dir"] = serde_json::Value::String(out.display().to_string());
    }
    let cfg = ExperimentConfig::from_value(value, &sets)?;
    let manifest = run_experiment(&cfg)?;
    println!("{kind}: wrote {} files to {}", manifest.files.len(), cfg.output_dir.display());
    for f in &manifest.files {
        println!("  {}  {}", f.sha256, f.path);
    }
    println!("  manifest: {}", cfg.output_dir.join(MANIFEST_FILE).display());
    if !manifest.box_invariant {
        println!("warning: a saturating gene left its box");
    }
    Ok(ExitCode::SUCCESS)
}

fn compose(a: SuperposeArgs) -> Result<ExitCode> {
    let members = a.members.iter().map(load_circuit).collect::<Result<Vec<_>>>()?;
    let mut spec = CompositionSpec::new(members, Expr::parse(&a.f)?, a.m0, a.lambda, a.delta, a.t_end);
    spec.output = match a.output {
        Shape::Sigmoid => OutputShape::Sigmoid,
        Shape::Linear => OutputShape::Linear,
    };
    let grid = Grid::line(0.0, a.length, a.points)?;
    let search = SearchSettings {
        budget: a.budget,
        a_max: a.a_max,
    };
    let c = superpose(&spec, &grid, search, a.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.display().to_string(),
        source,
    })?;
    let write = |name: &str, body: String| -> Result<()> {
        let path = a.out.join(name);
        std::fs::write(&path, body).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    };
    write("circuit.json", c.circuit.to_json()?)?;
    let summary = serde_json::json!({
        "genes": c.circuit.m,
        "member_outputs": c.member_outputs,
        "normalization": c.normalization,
        "fit": c.fit,
        "report": c.report,
    });
    write("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    println!(
        "superpose: {} genes, sup error {:.3e} (fit {:.3e} + tracking {:.3e}), written to {}",
        c.circuit.m,
        c.report.sup_error,
        c.report.fit_sup,
        c.report.tracker_error,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
