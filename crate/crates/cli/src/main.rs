//! `lockout`: batch command-line surface over the Lockout library.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::LazyLock;

use clap::{Args, Parser, Subcommand};
use toml::Value;

use config::{parse_value, KEYS};
use error::{CliError, EXIT_CODES};

static AFTER_HELP: LazyLock<String> = LazyLock::new(|| {
    let width = KEYS.iter().map(|k| k.0.len()).max().unwrap_or(0);
    let mut s = String::from(
        "Configuration: --config FILE (TOML, one section per module), then flags,\n\
         then --set section.key=value in order. The effective config is written\n\
         next to the outputs as <run-id>.config.toml.\n\nConfig keys:\n",
    );
    for (key, doc) in KEYS {
        s.push_str(&format!("  {key:width$}  {doc}\n"));
    }
    s.push_str("\nEnvironment:\n  LOCKOUT_SEED  default for run.seed\n\nExit codes:\n");
    for (code, doc) in EXIT_CODES {
        s.push_str(&format!("  {code}  {doc}\n"));
    }
    s.push_str("\nErrors are printed to stderr as one JSON object {code, kind, message}.");
    s
});

#[derive(Parser, Debug)]
#[command(
    name = "lockout",
    version,
    about = "Sparsity-constrained training along regularization paths",
    after_help = AFTER_HELP.as_str()
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, `section.key=value` (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// run.seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output.dir
    #[arg(short = 'o', long = "out", global = true)]
    out: Option<PathBuf>,
    /// output.run_id
    #[arg(long, global = true)]
    run_id: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset: <run-id>.csv and <run-id>.meta.json
    Synth {
        /// synth.kind: one_node | friedman
        #[arg(long)]
        kind: Option<String>,
        /// synth.n
        #[arg(long)]
        n: Option<usize>,
        /// synth.p
        #[arg(long)]
        p: Option<usize>,
        /// synth.activation
        #[arg(long)]
        activation: Option<String>,
        /// synth.linear_terms
        #[arg(long)]
        linear_terms: bool,
        /// synth.snr
        #[arg(long)]
        snr: Option<f64>,
    },
    /// Train without a constraint: <run-id>.model.json and <run-id>.train.json
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        net: NetArgs,
        /// forward.mode: converge | early_stop
        #[arg(long)]
        mode: Option<String>,
    },
    /// Run a Lockout path: <run-id>.path.csv|json, .model.json, .importance.csv
    Path {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        net: NetArgs,
        /// lockout.init: from_unconstrained | from_early_stopping
        #[arg(long)]
        init: Option<String>,
        /// lockout.penalty: l1 | l2 | log
        #[arg(long)]
        penalty: Option<String>,
        /// lockout.beta
        #[arg(long)]
        beta: Option<f64>,
        /// lockout.delta_t
        #[arg(long)]
        delta_t: Option<f64>,
        /// Start from these parameters (a model file) instead of training first
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Run an oracle suite and print pass counts
    Verify {
        /// lp | step | grad | lasso
        #[arg(long)]
        suite: String,
        /// Instances (lp: total over penalty kinds; lasso: problems)
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Summarize the selections of a path log
    Report {
        /// A <run-id>.path.json or .path.csv file
        #[arg(long)]
        log: PathBuf,
        /// Sparse pick: validation slack
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
        /// Also write <run-id>.report.json to the output directory
        #[arg(long)]
        write: bool,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    /// data.path
    #[arg(long)]
    data: Option<PathBuf>,
    /// data.target
    #[arg(long)]
    target: Option<String>,
}

#[derive(Args, Debug)]
struct NetArgs {
    /// network.hidden, comma separated widths
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    /// network.activation
    #[arg(long)]
    activation: Option<String>,
    /// network.output_activation
    #[arg(long)]
    output_activation: Option<String>,
}

fn push<T: Into<Value>>(o: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        o.push((key.to_string(), v.into()));
    }
}

fn path_value(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.to_string_lossy().into_owned())
}

fn data_overrides(o: &mut Vec<(String, Value)>, d: DataArgs, n: NetArgs) {
    push(o, "data.path", path_value(d.data));
    push(o, "data.target", d.target);
    push(o, "network.hidden", n.hidden.map(|h| h.into_iter().map(|w| w as i64).collect::<Vec<_>>()));
    push(o, "network.activation", n.activation);
    push(o, "network.output_activation", n.output_activation);
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let g = cli.global;
    let mut o: Vec<(String, Value)> = Vec::new();
    push(&mut o, "run.seed", g.seed.map(|s| s as i64));
    push(&mut o, "output.dir", path_value(g.out));
    push(&mut o, "output.run_id", g.run_id);
    let action = match cli.command {
        Command::Synth {
            kind,
            n,
            p,
            activation,
            linear_terms,
            snr,
        } => {
            push(&mut o, "synth.kind", kind);
            push(&mut o, "synth.n", n.map(|v| v as i64));
            push(&mut o, "synth.p", p.map(|v| v as i64));
            push(&mut o, "synth.activation", activation);
            push(&mut o, "synth.linear_terms", linear_terms.then_some(true));
            push(&mut o, "synth.snr", snr);
            Action::Synth
        }
        Command::Train { data, net, mode } => {
            data_overrides(&mut o, data, net);
            push(&mut o, "forward.mode", mode);
            Action::Train
        }
        Command::Path {
            data,
            net,
            init,
            penalty,
            beta,
            delta_t,
            params: p,
        } => {
            data_overrides(&mut o, data, net);
            push(&mut o, "lockout.init", init);
            push(&mut o, "lockout.penalty", penalty);
            push(&mut o, "lockout.beta", beta);
            push(&mut o, "lockout.delta_t", delta_t);
            Action::Path(p)
        }
        Command::Verify { suite, instances } => Action::Verify(suite, instances),
        Command::Report {
            log,
            tolerance,
            write,
        } => Action::Report(log, tolerance, write),
    };
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--set `{kv}`: expected KEY=VALUE")))?;
        o.push((k.trim().to_string(), parse_value(v.trim())));
    }
    let env_seed = std::env::var("LOCKOUT_SEED").ok();
    let cfg = config::load(g.config.as_deref(), &o, env_seed.as_deref())?;
    cfg.validate()?;
    match action {
        Action::Synth => commands::synth(&cfg),
        Action::Train => commands::train(&cfg),
        Action::Path(p) => commands::path(&cfg, p.as_deref()),
        Action::Verify(suite, n) => commands::verify(&suite, n, cfg.seed()),
        Action::Report(log, tolerance, write) => commands::report(&cfg, &log, tolerance, write),
    }
}

enum Action {
    Synth,
    Train,
    Path(Option<PathBuf>),
    Verify(String, Option<usize>),
    Report(PathBuf, f64, bool),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.code as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.code as u8)
        }
    }
}
