use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ghcm::config::ExperimentConfig;
use ghcm::divergence::{choose_constants, it_threshold, ConstantsConfig, Regime};
use ghcm::harness::{evaluate, run_bench, run_sweep};
use ghcm::io::{read_instance, write_labeling, write_sample};
use ghcm::model::sample_ghcm;
use ghcm::oracle::{brute_force_map, random_micro_instance};
use ghcm::recovery::{full_recover, map_seed};
use ghcm::GhcmError;

#[derive(Parser)]
#[command(
    name = "ghcm",
    version,
    about = "Geometric hidden community model: thresholds, sampling and exact recovery"
)]
struct Cli {
    /// Worker threads (outputs do not depend on it).
    #[arg(long, global = true, env = "GHCM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the threshold report of a configuration as JSON.
    Divergence {
        #[arg(long)]
        config: PathBuf,
    },
    /// Sample one instance and write it to a file.
    Sample {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run two-phase recovery on an instance file.
    Recover(RecoverArgs),
    /// Compare the seed MAP against brute force on random micro-instances.
    OracleCheck {
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        max_vertices: usize,
    },
    /// Run a parameter sweep and write a CSV of trials.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add wall-clock columns (makes output run-dependent).
        #[arg(long)]
        timings: bool,
    },
    /// Time recovery at increasing n.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RecoverArgs {
    instance: PathBuf,
    /// Take constants overrides from this experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    chi: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    epsilon0: Option<f64>,
    #[arg(long)]
    safety: Option<f64>,
    #[arg(long)]
    delta_tilde: Option<f64>,
    /// Labeling output; the report still goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run even when the instance is below the exact-recovery threshold.
    #[arg(long)]
    force: bool,
    /// Emit the Phase I labeling instead of the refined one.
    #[arg(long)]
    phase1_only: bool,
    /// Include wall-clock timings in the outputs.
    #[arg(long)]
    timings: bool,
}

/// Error carrying a process exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        Failure {
            code,
            msg: msg.into(),
        }
    }
}

impl From<GhcmError> for Failure {
    fn from(e: GhcmError) -> Self {
        let code = match e {
            GhcmError::Config(_) => 2,
            GhcmError::Format(_) => 3,
            GhcmError::Infeasible { .. } => 4,
            _ => 1,
        };
        Failure::new(code, e.to_string())
    }
}

type CliResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let res = match cli.command {
        Command::Divergence { config } => cmd_divergence(&config),
        Command::Sample { config, seed, out } => cmd_sample(&config, seed, &out),
        Command::Recover(args) => cmd_recover(&args),
        Command::OracleCheck {
            trials,
            seed,
            max_vertices,
        } => cmd_oracle_check(trials, seed, max_vertices),
        Command::Sweep {
            config,
            trials,
            seed,
            out,
            timings,
        } => cmd_sweep(&config, trials, seed, out, timings),
        Command::Bench { config, out } => cmd_bench(&config, out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn create(path: &Path) -> std::result::Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(1, format!("cannot create {}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| Failure::new(1, e.to_string()))
        }
        None => stdout(text),
    }
}

// A closed pipe (e.g. `| head`) is not an error.
fn stdout(text: &str) -> CliResult {
    let mut w = std::io::stdout().lock();
    match w.write_all(text.as_bytes()).and_then(|_| w.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Failure::new(1, e.to_string())),
        _ => Ok(()),
    }
}

fn cmd_divergence(config: &Path) -> CliResult {
    let cfg = ExperimentConfig::load(config)?;
    let params = cfg.params()?;
    let report = it_threshold(&params)?;
    let out = json!({ "params": params, "report": report });
    stdout(&format!(
        "{}\n",
        serde_json::to_string_pretty(&out).expect("serializable")
    ))
}

fn cmd_sample(config: &Path, seed: Option<u64>, out: &Path) -> CliResult {
    let cfg = ExperimentConfig::load(config)?;
    let inst = sample_ghcm(&cfg.params()?, seed.unwrap_or(cfg.base_seed))?;
    let mut w = create(out)?;
    write_sample(&mut w, &inst)?;
    w.flush().map_err(|e| Failure::new(1, e.to_string()))
}

fn cmd_recover(args: &RecoverArgs) -> CliResult {
    let file = File::open(&args.instance)
        .map_err(|e| Failure::new(3, format!("cannot open {}: {e}", args.instance.display())))?;
    let loaded = read_instance(BufReader::new(file))?;
    let mut overrides = match &args.config {
        Some(path) => ExperimentConfig::load(path)?.constants,
        None => ConstantsConfig::default(),
    };
    overrides.chi = args.chi.or(overrides.chi);
    overrides.delta = args.delta.or(overrides.delta);
    overrides.epsilon0 = args.epsilon0.or(overrides.epsilon0);
    overrides.safety = args.safety.unwrap_or(overrides.safety);
    overrides.delta_tilde = args.delta_tilde.unwrap_or(overrides.delta_tilde);

    let params = &loaded.public.params;
    let threshold = it_threshold(params)?;
    let consts = choose_constants(params.lambda, params.d, &overrides).map_err(|e| match e {
        GhcmError::Infeasible { lambda_nu } => Failure::new(
            4,
            format!(
                "infeasible regime: lambda * nu_d = {lambda_nu} <= 1, no phase constants exist"
            ),
        ),
        other => other.into(),
    })?;
    if threshold.regime != Regime::Above && !args.force {
        return Err(Failure::new(
            4,
            format!(
                "instance is {} the exact-recovery threshold (ratio {}); pass --force to run anyway",
                if threshold.regime == Regime::Below { "below" } else { "at" },
                threshold.threshold_ratio
            ),
        ));
    }

    let rec = full_recover(&loaded.public, &consts)?;
    let labeling = if args.phase1_only {
        &rec.phase1.labeling
    } else {
        &rec.labeling
    };
    let mut meta = json!({
        "algorithm": "ghcm-two-phase",
        "version": env!("CARGO_PKG_VERSION"),
        "phase": if args.phase1_only { "phase1" } else { "final" },
        "constants": consts,
        "threshold": threshold,
        "phase1": rec.phase1.stats,
    });
    if args.timings {
        meta["timings"] = json!(rec.timings);
    }
    match &args.out {
        Some(p) => {
            let mut w = create(p)?;
            write_labeling(&mut w, labeling, &meta)?;
            w.flush().map_err(|e| Failure::new(1, e.to_string()))?;
        }
        None => {
            let mut w = std::io::stdout().lock();
            write_labeling(&mut w, labeling, &meta)?;
        }
    }

    if let Some(inst) = loaded.into_sample() {
        let ev = evaluate(&inst, &rec, &consts, &overrides)?;
        let report = json!({
            "regime": threshold.regime,
            "threshold_ratio": threshold.threshold_ratio,
            "phase1": ev.phase1,
            "final": ev.fin,
            "lambda_prime_cstar": ev.lambda_prime_cstar,
        });
        let text = serde_json::to_string_pretty(&report).expect("serializable");
        if args.out.is_some() {
            stdout(&format!("{text}\n"))?;
        } else {
            eprintln!("{text}");
        }
    }
    Ok(())
}

fn cmd_oracle_check(trials: u64, seed: u64, max_vertices: usize) -> CliResult {
    let mut mismatches = 0;
    for k in 0..trials {
        let s = seed.wrapping_add(k);
        let inst = random_micro_instance(s, max_vertices)?;
        let public = ghcm::model::strip_labels(&inst);
        let ids: Vec<u32> = (0..public.vertex_count() as u32).collect();
        let seeded = map_seed(public, &ids, public.params.pi, &public.params.kernel)?;
        let oracle = brute_force_map(public, max_vertices)?;
        if oracle.labeling.labels() != &seeded[..] {
            mismatches += 1;
            println!("mismatch at seed {s} ({} vertices)", ids.len());
        }
    }
    println!("oracle-check: {trials} instances, {mismatches} mismatches");
    if mismatches > 0 {
        Err(Failure::new(
            1,
            format!("{mismatches} of {trials} instances disagree"),
        ))
    } else {
        Ok(())
    }
}

fn cmd_sweep(
    config: &Path,
    trials: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    timings: bool,
) -> CliResult {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.base_seed = s;
    }
    let res = run_sweep(&cfg, timings)?;
    write_out(out.as_deref().or(cfg.output.as_deref()), &res.csv)?;
    match res.error_count() {
        0 => Ok(()),
        n => Err(Failure::new(
            1,
            format!("{n} trials failed; see the error column"),
        )),
    }
}

fn cmd_bench(config: &Path, out: Option<PathBuf>) -> CliResult {
    let cfg = ExperimentConfig::load(config)?;
    let report = run_bench(&cfg)?;
    write_out(out.as_deref(), &report.table())?;
    if report.near_linear() {
        Ok(())
    } else {
        Err(Failure::new(
            1,
            "time per edge varies by more than 2x across sizes",
        ))
    }
}
