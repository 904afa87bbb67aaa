//! `fedfair`: validate configs, run experiments, summarise and export results.

mod exit;
mod table;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fedfair::engine::{presets, run_experiment, threshold_check, ExperimentConfig, RunOptions, Verdict};
use fedfair::fairness::Notion;
use fedfair::par::{self, ExecMode};

use exit::{CliResult, Code, Failure};
use table::{Loaded, RunTable, ROUND_METRICS};

#[derive(Parser)]
#[command(name = "fedfair", version, about = "Federated learning simulator with fairness analytics")]
struct Cli {
    /// Suppress progress messages on stderr.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a config file (or preset name) and list every problem found.
    Validate { config: String },
    /// Run every seed of an experiment and write results plus an aggregate.
    Run {
        /// Config file (TOML, or JSON by extension) or preset name.
        config: String,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Comma-separated seeds replacing the configured ones.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Run N consecutive seeds starting at the first configured seed.
        #[arg(long)]
        repeats: Option<usize>,
        /// Overwrite existing result files.
        #[arg(long)]
        force: bool,
        /// Record wall-clock time per round (results are then not reproducible byte for byte).
        #[arg(long)]
        timing: bool,
        /// Worker threads; defaults to FEDFAIR_THREADS or all cores.
        #[arg(long)]
        threads: Option<usize>,
        /// Disable data parallelism entirely.
        #[arg(long)]
        sequential: bool,
    },
    /// Summary-window means per run from results JSON or exported rounds.csv.
    Summarize {
        #[arg(required = true)]
        inputs: Vec<String>,
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Flatten result files into long-format tables.
    Export {
        #[arg(required = true)]
        inputs: Vec<String>,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
        #[arg(long, default_value = "export")]
        out: PathBuf,
    },
    /// List presets, or print one as TOML.
    Presets { name: Option<String> },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let quiet = cli.quiet;
    let outcome = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run {
            config,
            out,
            seeds,
            repeats,
            force,
            timing,
            threads,
            sequential,
        } => {
            let opts = RunOptions {
                exec: if sequential { ExecMode::Sequential } else { ExecMode::Parallel },
                record_timing: timing,
                ..RunOptions::default()
            };
            let threads = threads.or_else(par::threads_from_env);
            run(&config, &out, seeds, repeats, force, opts, threads, quiet)
        }
        Command::Summarize { inputs, json } => summarize(&inputs, json, quiet),
        Command::Export { inputs, format, out } => export(&inputs, format, &out, quiet),
        Command::Presets { name } => list_presets(name.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}

fn load_config(arg: &str) -> CliResult<ExperimentConfig> {
    let path = Path::new(arg);
    if path.exists() {
        return ExperimentConfig::from_path(path).map_err(|e| {
            let code = match e {
                fedfair::Error::Config(_) => Code::InvalidConfig,
                _ => Code::Parse,
            };
            Failure::new(code, format!("failed to parse {arg}: {e}"))
        });
    }
    presets::preset(arg).ok_or_else(|| {
        Failure::new(
            Code::Parse,
            format!("{arg} is neither a readable file nor a preset name (see `fedfair presets`)"),
        )
    })
}

fn validate(arg: &str) -> CliResult {
    let cfg = load_config(arg)?;
    let problems = cfg.diagnostics();
    if problems.is_empty() {
        let _ = writeln!(std::io::stdout().lock(), "{arg}: valid");
        return Ok(());
    }
    let mut out = std::io::stdout().lock();
    for p in &problems {
        let _ = writeln!(out, "{arg}: {p}");
    }
    Err(Failure::new(
        Code::InvalidConfig,
        format!("{} problem(s) found in {arg}", problems.len()),
    ))
}

#[allow(clippy::too_many_arguments)]
fn run(
    arg: &str,
    out: &Path,
    seeds: Option<Vec<u64>>,
    repeats: Option<usize>,
    force: bool,
    opts: RunOptions,
    threads: Option<usize>,
    quiet: bool,
) -> CliResult {
    let mut cfg = load_config(arg)?;
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(n) = repeats {
        let first = cfg.seeds.first().copied().unwrap_or(0);
        cfg.seeds = (0..n as u64).map(|i| first + i).collect();
    }
    let problems = cfg.diagnostics();
    if !problems.is_empty() {
        return Err(Failure::new(Code::InvalidConfig, problems.join("\n")));
    }

    let runs_dir = out.join("runs");
    let targets: Vec<PathBuf> = cfg.seeds.iter().map(|s| runs_dir.join(format!("seed{s}.json"))).collect();
    let aggregate_path = out.join("aggregate.json");
    prepare_output(&runs_dir, targets.iter().chain([&aggregate_path]), force)?;

    if !quiet {
        eprintln!("running {} seed(s) of {}", cfg.seeds.len(), display_name(&cfg, arg));
    }
    let output = par::with_threads(threads, || run_experiment(&cfg, opts)).map_err(|e| {
        let code = match e {
            fedfair::Error::Config(_) => Code::InvalidConfig,
            _ => Code::Runtime,
        };
        Failure::new(code, format!("run failed: {e}"))
    })?;

    let mut files: Vec<(PathBuf, String)> = targets
        .into_iter()
        .zip(&output.runs)
        .map(|(p, r)| (p, r.to_json()))
        .collect();
    files.push((aggregate_path, output.aggregate.to_json()));
    write_all(&files)?;

    print_aggregate(&output.aggregate);
    Ok(())
}

fn display_name<'a>(cfg: &'a ExperimentConfig, arg: &'a str) -> &'a str {
    if cfg.name.is_empty() {
        arg
    } else {
        &cfg.name
    }
}

/// Creates the output tree and checks it is writable and free of results
/// that would be overwritten.
fn prepare_output<'a>(runs_dir: &Path, targets: impl Iterator<Item = &'a PathBuf>, force: bool) -> CliResult {
    fs::create_dir_all(runs_dir).map_err(|e| Failure::output(&format!("cannot create {}", runs_dir.display()), e))?;
    let probe = runs_dir.join(".fedfair-write-check");
    fs::write(&probe, b"").map_err(|e| Failure::output(&format!("cannot write to {}", runs_dir.display()), e))?;
    let _ = fs::remove_file(&probe);
    if !force {
        let existing: Vec<String> = targets.filter(|p| p.exists()).map(|p| p.display().to_string()).collect();
        if !existing.is_empty() {
            return Err(Failure::new(
                Code::Output,
                format!("refusing to overwrite {} (use --force)", existing.join(", ")),
            ));
        }
    }
    Ok(())
}

/// Writes every file or none: on failure the ones already written are removed.
fn write_all(files: &[(PathBuf, String)]) -> CliResult {
    for (i, (path, text)) in files.iter().enumerate() {
        if let Err(e) = fs::write(path, text) {
            for (p, _) in &files[..=i] {
                let _ = fs::remove_file(p);
            }
            return Err(Failure::output(&format!("cannot write {}", path.display()), e));
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into())
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Indeterminate => "indeterminate",
    }
}

fn print_aggregate(agg: &fedfair::engine::AggregateReport) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "{} | seeds {:?} | rounds {}-{} | threshold {}",
        agg.name, agg.seeds, agg.window.0, agg.window.1, agg.verdicts.threshold
    );
    let _ = writeln!(out, "{:<6} {:>8} {:>8} {:>4}  verdict", "notion", "mean", "std", "n");
    for n in Notion::ALL {
        let s = &agg.summary[&n];
        let _ = writeln!(
            out,
            "{:<6} {:>8} {:>8} {:>4}  {}",
            n.key(),
            fmt_opt(s.mean),
            fmt_opt(s.std),
            s.n,
            verdict_label(agg.verdicts.notions[&n])
        );
    }
    let _ = writeln!(out, "{:<6} {:>8} {:>8} {:>4}", "aux", fmt_opt(agg.aux_accuracy.mean), fmt_opt(agg.aux_accuracy.std), agg.aux_accuracy.n);
    let _ = writeln!(out, "overall (F_T): {}", verdict_label(agg.verdicts.overall));
}

fn load_tables(inputs: &[String], quiet: bool) -> CliResult<(Vec<RunTable>, Vec<fedfair::engine::RunResult>)> {
    let mut tables = Vec::new();
    let mut results = Vec::new();
    for path in table::expand(inputs)? {
        match table::load(&path)? {
            Loaded::Runs(t, r) => {
                tables.extend(t);
                results.extend(r);
            }
            Loaded::Skipped(why) => {
                if !quiet {
                    eprintln!("skipping {why}");
                }
            }
        }
    }
    if tables.is_empty() {
        return Err(Failure::new(Code::Parse, "no runs found in the inputs"));
    }
    Ok((tables, results))
}

fn summarize(inputs: &[String], json: bool, quiet: bool) -> CliResult {
    let (mut tables, _) = load_tables(inputs, quiet)?;
    tables.sort_by(|a, b| a.run.cmp(&b.run));
    let mut out = std::io::stdout().lock();
    if json {
        let rows: Vec<serde_json::Value> = tables.iter().map(summary_json).collect();
        let _ = writeln!(out, "{}", serde_json::to_string_pretty(&rows).expect("summary serialises"));
        return Ok(());
    }
    let _ = write!(out, "{:<32}", "run");
    for m in ROUND_METRICS {
        let _ = write!(out, " {m:>12}");
    }
    let _ = writeln!(out, "  F_T verdict");
    for t in &tables {
        let _ = write!(out, "{:<32}", t.run);
        for m in ROUND_METRICS {
            let _ = write!(out, " {:>12}", fmt_opt(t.window_mean(m).0));
        }
        let _ = writeln!(out, "  {}", verdict_label(verdicts(t).overall));
    }
    Ok(())
}

fn verdicts(t: &RunTable) -> fedfair::engine::ThresholdVerdicts {
    let means: BTreeMap<Notion, Option<f64>> = Notion::ALL.into_iter().map(|n| (n, t.window_mean(n.key()).0)).collect();
    threshold_check(&means, t.threshold)
}

fn summary_json(t: &RunTable) -> serde_json::Value {
    let metrics: serde_json::Map<String, serde_json::Value> = ROUND_METRICS
        .iter()
        .map(|m| {
            let (mean, n) = t.window_mean(m);
            (m.to_string(), serde_json::json!({ "mean": mean, "defined_rounds": n }))
        })
        .collect();
    let v = verdicts(t);
    serde_json::json!({
        "run": t.run,
        "seed": t.seed,
        "window": [t.window.0, t.window.1],
        "metrics": metrics,
        "verdicts": v,
    })
}

fn export(inputs: &[String], format: Format, out: &Path, quiet: bool) -> CliResult {
    let Format::Csv = format;
    let (_, results) = load_tables(inputs, quiet)?;
    if results.is_empty() {
        return Err(Failure::new(Code::Parse, "export needs results JSON files as input"));
    }
    let mut stdout = std::io::stdout().lock();
    for p in table::export_csv(&results, out)? {
        let _ = writeln!(stdout, "{}", p.display());
    }
    Ok(())
}

fn list_presets(name: Option<&str>) -> CliResult {
    match name {
        None => {
            let mut out = std::io::stdout().lock();
            for n in presets::names() {
                if writeln!(out, "{n}").is_err() {
                    break;
                }
            }
            Ok(())
        }
        Some(n) => {
            let cfg = presets::preset(n).ok_or_else(|| Failure::new(Code::Parse, format!("unknown preset '{n}'")))?;
            let _ = write!(std::io::stdout().lock(), "{}", cfg.to_toml());
            Ok(())
        }
    }
}
