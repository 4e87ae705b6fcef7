//! Command-line front end for the experiment harness.
//!
//! Every subcommand exits 0 on success. Failures print one JSON line
//! `{"error": KIND, "field": ..., "message": ...}` on stderr and exit 2.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use ldp_online::harness::{
    batch_select, render_svg, run_experiment, sweep, ExperimentConfig, PlotSpec, SweepAxis,
};
use ldp_online::instances::build_hard_instance;
use ldp_online::privacy::accountant_check;
use ldp_online::Error;

#[derive(Parser)]
#[command(name = "ldp-online", version, about = "Locally private online distribution learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replications of one configuration and write the risk traces.
    Simulate {
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment per value of an axis.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated ascending values.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        sim: SimFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the Hadamard two-point class as JSON.
    HardInstance {
        #[arg(long = "K")]
        k: usize,
        #[arg(long = "T")]
        t: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the composition budget of the dense release.
    Accountant {
        #[arg(long = "K")]
        k: usize,
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
    },
    /// Average and boost exp3-pure runs into one batch estimate.
    BatchSelect {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        boost: usize,
        #[command(flatten)]
        sim: SimFlags,
    },
    /// Draw a line chart from a trace CSV.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long)]
        group: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct SimFlags {
    /// JSON config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alg: Option<String>,
    /// random, hard or file:PATH
    #[arg(long)]
    instance: Option<String>,
    #[arg(long = "K")]
    k: Option<usize>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long = "T")]
    t: Option<usize>,
    /// A positive real or `inf`.
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    reps: Option<usize>,
    /// A hypothesis index or `scan`.
    #[arg(long)]
    truth: Option<String>,
}

enum CliError {
    Lib(Error),
    Usage(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn to_json(&self) -> Value {
        match self {
            CliError::Lib(Error::ConfigInvalid { field, message }) => {
                json!({"error": "ConfigInvalid", "field": field, "message": message})
            }
            CliError::Lib(e) => json!({"error": e.kind(), "message": e.to_string()}),
            CliError::Usage(m) => json!({"error": "Usage", "message": m}),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn read_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::config("config", "config file must hold a JSON object").into()),
        Err(e) => Err(Error::config("config", e.to_string()).into()),
    }
}

fn parse_real(field: &str, text: &str) -> CliResult<Value> {
    let v: f64 = text
        .parse()
        .map_err(|_| Error::config(field, format!("`{text}` is not a real")))?;
    Ok(if v.is_finite() { json!(v) } else { json!(text) })
}

/// Merges the config file (if any) with the flags; flags win.
fn build_config(sim: &SimFlags, default_alg: Option<&str>) -> CliResult<ExperimentConfig> {
    let mut map = match &sim.config {
        Some(p) => read_config_file(p)?,
        None => Map::new(),
    };
    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            map.insert(key.to_string(), v);
        }
    };
    set("algorithm", sim.alg.clone().map(Value::from));
    set("instance", sim.instance.clone().map(Value::from));
    set("K", sim.k.map(Value::from));
    set("M", sim.m.map(Value::from));
    set("T", sim.t.map(Value::from));
    set(
        "epsilon",
        sim.epsilon.as_deref().map(|e| parse_real("epsilon", e)).transpose()?,
    );
    set("delta", sim.delta.map(Value::from));
    set("gamma", sim.gamma.map(Value::from));
    set("seed", sim.seed.map(Value::from));
    set("reps", sim.reps.map(Value::from));
    set(
        "truth",
        sim.truth.as_deref().map(|t| match t.parse::<u64>() {
            Ok(i) => Value::from(i),
            Err(_) => Value::from(t),
        }),
    );
    if !map.contains_key("algorithm") {
        match default_alg {
            Some(a) => {
                map.insert("algorithm".into(), Value::from(a));
            }
            None => return Err(Error::config("algorithm", "required (--alg)").into()),
        }
    }
    if !map.contains_key("epsilon") {
        return Err(Error::config("epsilon", "required (--epsilon)").into());
    }
    if let Some(Value::String(a)) = map.get("algorithm") {
        a.parse::<ldp_online::harness::Algorithm>()?;
    }
    Ok(ExperimentConfig::from_value(Value::Object(map))?)
}

fn print_json(v: &impl serde::Serialize) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).map_err(Error::from)?;
    match writeln!(std::io::stdout(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::from(e).into()),
        _ => Ok(()),
    }
}

fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Simulate { sim, out } => {
            let cfg = build_config(&sim, None)?;
            let exp = run_experiment(&cfg)?;
            exp.write_csv(&out)?;
            print_json(&exp.report)
        }
        Command::Sweep {
            axis,
            values,
            sim,
            out,
        } => {
            let axis: SweepAxis = axis.parse()?;
            let values = ldp_online::harness::parse_values(&values)?;
            let cfg = build_config(&sim, None)?;
            let result = sweep(&cfg, axis, &values)?;
            result.write_csv(&out)?;
            print_json(&result.summary())
        }
        Command::HardInstance { k, t, epsilon, out } => {
            let inst = build_hard_instance(k, t, epsilon)?;
            inst.save(&out)?;
            print_json(&json!({
                "K": inst.k,
                "n": inst.n,
                "M": inst.labels(),
                "a": inst.a,
                "hypotheses": inst.class.len(),
                "out": out.display().to_string(),
            }))
        }
        Command::Accountant { k, epsilon, delta } => {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::config("delta", "must be in (0, 1)").into());
            }
            if !(epsilon > 0.0) || k == 0 {
                return Err(Error::config("epsilon", "needs epsilon > 0 and K >= 1").into());
            }
            print_json(&accountant_check(k, epsilon, delta))
        }
        Command::BatchSelect { alpha, boost, sim } => {
            let cfg = build_config(&sim, Some("exp3-pure"))?;
            print_json(&batch_select(&cfg, alpha, boost)?)
        }
        Command::Plot {
            input,
            x,
            y,
            group,
            out,
        } => {
            render_svg(&input, &PlotSpec { x, y, group }, &out)?;
            print_json(&json!({"out": out.display().to_string()}))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or("").trim().to_string();
            let msg = first.strip_prefix("error: ").unwrap_or(&first).to_string();
            eprintln!("{}", CliError::Usage(msg).to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
