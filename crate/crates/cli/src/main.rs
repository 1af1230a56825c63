//! `spatea`: dataset generation, training, evaluation, invariant checks,
//! kernel compression and the DMRG demo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spatea_core::harness::{
    self, compress_report, dmrg_row, evaluate, run_checks, train, CheckReport, DmrgRow, EvalSplit, RunConfig, Suite,
    DMRG_TOLERANCE,
};
use spatea_core::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, Variant};
use spatea_core::nbody::{generate_dataset, read_dataset, Field, GenConfig};
use spatea_core::{compress::chains_to_json, Error, Result};

#[derive(Parser)]
#[command(name = "spatea", version, about = "Equivariant tensor-network message passing")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate charged-particle trajectories into a JSONL dataset.
    GenData(GenArgs),
    /// Train a model from a TOML config; any `--key=value` overrides a config key.
    Train(TrainArgs),
    /// Mean squared error of a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Run invariant suites; exits 1 if any check fails.
    Check(CheckArgs),
    /// Truncate exported kernel chains and compare deviations with their bounds.
    Compress(CompressArgs),
    /// Transverse-field Ising ground state by DMRG.
    Dmrg(DmrgArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 1000)]
    n_traj: usize,
    #[arg(long, default_value_t = 5)]
    particles: usize,
    /// ES, G+ES or L+ES.
    #[arg(long, default_value = "L+ES")]
    field: Field,
    #[arg(long, default_value_t = spatea_core::nbody::DEFAULT_DT)]
    dt: f64,
    #[arg(long, default_value_t = spatea_core::nbody::DEFAULT_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// File name under the output directory; a `.gz` suffix compresses.
    #[arg(long, default_value = "dataset.jsonl")]
    name: String,
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Train the mean-field baseline at a matched parameter count.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// test, val, train or all.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: EvalSplit,
    #[arg(long, default_value = "eval")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CheckArgs {
    /// equivariance, permutation, gradient, oracle or all.
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "check")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// First trajectory whose initial graph is exported.
    #[arg(long, default_value_t = 0)]
    sample: usize,
    /// Number of consecutive trajectories.
    #[arg(long, default_value_t = 1)]
    samples: usize,
    /// Bond caps to test, comma separated; every bond below χ by default.
    #[arg(long, value_delimiter = ',')]
    max_bond: Vec<usize>,
    /// Layer to export; the last one by default.
    #[arg(long)]
    layer: Option<usize>,
    #[arg(long, default_value = "compress")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DmrgArgs {
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    j: f64,
    /// Transverse fields, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    h: Vec<f64>,
    #[arg(long, default_value_t = 16)]
    chi: usize,
    #[arg(long, default_value_t = 6)]
    sweeps: usize,
    /// Compare with exact diagonalization (N <= 12).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    exact: bool,
    #[arg(long, default_value = "dmrg")]
    out_dir: PathBuf,
}

fn parse_split(s: &str) -> std::result::Result<EvalSplit, String> {
    match s.to_ascii_lowercase().as_str() {
        "test" => Ok(EvalSplit::Test),
        "val" => Ok(EvalSplit::Val),
        "train" => Ok(EvalSplit::Train),
        "all" => Ok(EvalSplit::All),
        _ => Err(format!("unknown split {s:?}")),
    }
}

/// Pull `--key=value` config overrides out of a `train` command line,
/// leaving the flags clap knows about.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    const KNOWN: [&str; 3] = ["config", "out-dir", "baseline"];
    if args.get(1).map(String::as_str) != Some("train") {
        return (args, vec![]);
    }
    let mut kept = vec![];
    let mut overrides = vec![];
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((k, v)) if !KNOWN.contains(&k) => overrides.push((k.to_string(), v.to_string())),
            _ => kept.push(a),
        }
    }
    (kept, overrides)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let mut body = serde_json::to_string_pretty(value).expect("reports serialize");
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

fn gen_data(a: GenArgs) -> Result<ExitCode> {
    let cfg = GenConfig { n_traj: a.n_traj, n_particles: a.particles, field: a.field, dt: a.dt, steps: a.steps, seed: a.seed };
    let path = a.out_dir.join(&a.name);
    let n = generate_dataset(&cfg, &path)?;
    write_json(&a.out_dir, "gen.json", &cfg)?;
    println!("wrote {n} trajectories ({} particles, {}) to {}", cfg.n_particles, cfg.field, path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: TrainArgs, mut overrides: Vec<(String, String)>) -> Result<ExitCode> {
    if a.baseline {
        overrides.push(("model.variant".into(), "baseline".into()));
    }
    if let Some(dir) = &a.out_dir {
        overrides.push(("out_dir".into(), dir.display().to_string()));
    }
    let cfg = RunConfig::load(a.config.as_deref(), &overrides)?;
    let rep = train(&cfg)?;
    println!("variant      {}", rep.variant);
    println!("parameters   {}", rep.param_count);
    println!("trajectories {} train / {} val", rep.n_train, rep.n_val);
    println!("best epoch   {} (val mse {:.6e})", rep.best_epoch, rep.best_val_mse);
    println!("final        train mse {:.6e}, lr {:.2e}", rep.final_train_mse, rep.final_lr);
    println!("checkpoint   {}", rep.checkpoint.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> Result<ExitCode> {
    let rep = evaluate(&a.checkpoint, &a.dataset, a.split, Some(&a.out_dir))?;
    println!("{}", serde_json::to_string(&rep).expect("report serializes"));
    Ok(ExitCode::SUCCESS)
}

fn print_checks(rep: &CheckReport) {
    println!("{:<30} {:>7} {:>12} {:>10}  result", "check", "cases", "max error", "tol");
    for c in &rep.checks {
        let verdict = match (c.passed, c.expect_failure) {
            (true, false) => "pass",
            (true, true) => "pass (control failed as expected)",
            (false, false) => "FAIL",
            (false, true) => "FAIL (control did not fail)",
        };
        println!("{:<30} {:>7} {:>12.3e} {:>10.1e}  {verdict}", c.name, c.cases, c.max_error, c.tolerance);
    }
}

fn cmd_check(a: CheckArgs) -> Result<ExitCode> {
    let rep = run_checks(a.suite, a.seed)?;
    write_json(&a.out_dir, "check.json", &rep)?;
    print_checks(&rep);
    if rep.passed {
        return Ok(ExitCode::SUCCESS);
    }
    for c in rep.failed() {
        eprintln!("failed check: {}", c.name);
    }
    Ok(ExitCode::from(1))
}

fn cmd_compress(a: CompressArgs) -> Result<ExitCode> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let model = Model::new(ck.config.clone(), ck.params.clone())?;
    if model.config.variant != Variant::Spatea {
        return Err(Error::Argument("compress needs a tensor-network checkpoint, not the baseline".into()));
    }
    let samples = read_dataset(&a.dataset)?;
    let end = a.sample + a.samples.max(1);
    if end > samples.len() {
        return Err(Error::Argument(format!("samples {}..{end} exceed the {} in the dataset", a.sample, samples.len())));
    }
    let graphs = samples[a.sample..end].iter().map(|s| s.graph()).collect::<Result<Vec<_>>>()?;
    let refs: Vec<_> = graphs.iter().collect();
    let layer = a.layer.unwrap_or(model.config.layers - 1);
    let rep = compress_report(&model, &refs, layer, &a.max_bond)?;
    write_json(&a.out_dir, "compress.json", &rep)?;
    let chains = Checkpoint { config: ck.config, params: ck.params, extra: Some(chains_to_json(&rep.chains)) };
    save_checkpoint(&a.out_dir.join("chains.ckpt"), &chains)?;

    println!("{:>5} {:>4} {:>4} {:>5} {:>12} {:>12}  ok", "graph", "node", "deg", "bond", "bound", "measured");
    for n in &rep.nodes {
        for l in &n.levels {
            println!("{:>5} {:>4} {:>4} {:>5} {:>12.4e} {:>12.4e}  {}", n.graph, n.node, n.neighbors, l.max_bond, l.bound, l.measured, l.within);
        }
    }
    Ok(if rep.all_within { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn fmt_opt(v: Option<f64>, prec: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.prec$e}"))
}

fn cmd_dmrg(a: DmrgArgs) -> Result<ExitCode> {
    let rows = a.h.iter().map(|&h| dmrg_row(a.n, a.j, h, a.chi, a.sweeps, a.exact)).collect::<Result<Vec<DmrgRow>>>()?;
    write_json(&a.out_dir, "dmrg.json", &rows)?;
    println!("{:>3} {:>6} {:>6} {:>4} {:>20} {:>20} {:>10}", "N", "J", "h", "chi", "E_dmrg", "E_exact", "|Δ|");
    for r in &rows {
        let exact = r.e_exact.map_or("-".into(), |e| format!("{e:.12}"));
        println!("{:>3} {:>6} {:>6} {:>4} {:>20.12} {exact:>20} {:>10}", r.n, r.j, r.h, r.chi, r.e_dmrg, fmt_opt(r.delta, 2));
    }
    if rows.iter().all(|r| r.passed()) {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("energy gap above {DMRG_TOLERANCE:e}");
        Ok(ExitCode::from(1))
    }
}

fn run(cli: Cli, overrides: Vec<(String, String)>) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData(a) => gen_data(a),
        Cmd::Train(a) => cmd_train(a, overrides),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Compress(a) => cmd_compress(a),
        Cmd::Dmrg(a) => cmd_dmrg(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    // Only fails if a global pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(harness::thread_count()).build_global();
    match run(cli, overrides) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
