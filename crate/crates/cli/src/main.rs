use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mrm_net::data::{synth_generate, write_dataset, SynthConfig, Task};
use mrm_net::experiment::{
    cmd_ablate, cmd_eval, cmd_sweep, cmd_train, load_for, run_gradcheck, sort_sweep, write_eval, RunConfig, Split, SweepGrid,
};
use mrm_net::metrics::write_json;
use mrm_net::{Error, EvalBranch, VariantKind};
use mrm_tensor::OpKind;

#[derive(Parser)]
#[command(name = "mrm", version, about = "Train and evaluate MRM-Net on multi-label ECG data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on folds 1-8, validate on fold 9.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from <out>/checkpoints/last.
        #[arg(long)]
        resume: bool,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "ensemble")]
        eval_branch: String,
        /// Also write the report and per-class CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and compare architecture variants.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated variant names.
        #[arg(long, default_value = "mrm,f_addition,f_concat,low_rs,high_rs", value_delimiter = ',')]
        variants: Vec<String>,
        #[arg(long, default_value = "0", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Grid over mutual-loss weights and channel pairs.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// JSON file with `alpha`, `beta`, `gamma`, `channels` lists.
        #[arg(long)]
        grid: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        gammas: Vec<f64>,
        /// Pairs like `64:128,128:256`.
        #[arg(long, value_delimiter = ',')]
        channels: Vec<String>,
    },
    /// Finite-difference check of every op and a reduced full model.
    Gradcheck {
        /// Corrupt one op's backward rule (for testing the checker).
        #[arg(long)]
        inject_fault: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset (MRMT signals plus manifest.json).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 640)]
        records: usize,
        #[arg(long, default_value_t = 5)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        separability: f64,
        #[arg(long, default_value_t = 1000)]
        length: usize,
    },
}

/// A config file plus flag overrides.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    eval_branch: Option<String>,
    #[arg(long)]
    target_val_auc: Option<f64>,
    #[arg(long)]
    low_channels: Option<usize>,
    #[arg(long)]
    high_channels: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Comma-separated stem widths, e.g. `8,8,8,8`.
    #[arg(long, value_delimiter = ',')]
    stem_channels: Option<Vec<usize>>,
}

impl RunArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set! {
            seed => c.seed,
            out => c.out,
            epochs => c.epochs,
            batch_size => c.batch_size,
            lr => c.lr,
            low_channels => c.model.low_channels,
            high_channels => c.model.high_channels,
            alpha => c.model.alpha,
            beta => c.model.beta,
            gamma => c.model.gamma,
            dropout => c.model.dropout_p,
            stem_channels => c.model.stem_channels,
        }
        if let Some(m) = &self.manifest {
            c.manifest = Some(m.clone());
        }
        if let Some(t) = &self.task {
            c.task = Some(t.parse::<Task>()?);
        }
        if let Some(v) = &self.variant {
            c.variant = v.parse::<VariantKind>()?;
        }
        if let Some(b) = &self.eval_branch {
            c.eval_branch = b.parse::<EvalBranch>()?;
        }
        if self.target_val_auc.is_some() {
            c.target_val_auc = self.target_val_auc;
        }
        c.validate()?;
        Ok(c)
    }
}

fn parse_channels(pairs: &[String]) -> anyhow::Result<Vec<(usize, usize)>> {
    pairs
        .iter()
        .map(|p| {
            let (lo, hi) = p.split_once(':').with_context(|| format!("channel pair `{p}` is not LOW:HIGH"))?;
            Ok((lo.trim().parse()?, hi.trim().parse()?))
        })
        .collect()
}

fn echo_config(cfg: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cfg.out).with_context(|| cfg.out.display().to_string())?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    Ok(())
}

fn print_json<T: serde::Serialize>(v: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { run, resume } => {
            let cfg = run.resolve()?;
            let data = load_for(&cfg)?;
            let (_, summary) = cmd_train(&cfg, data, resume, &mut |_| {})?;
            print_json(&summary)?;
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
            eval_branch,
            out,
        } => {
            let split: Split = split.parse()?;
            let branch: EvalBranch = eval_branch.parse()?;
            let report = cmd_eval(&checkpoint, &manifest, split, branch)?;
            if let Some(dir) = out {
                let path = write_eval(&dir, split, branch, &report)?;
                log::info!("wrote {}", path.display());
            }
            print_json(&report)?;
        }
        Command::Ablate {
            run,
            variants,
            seeds,
            split,
        } => {
            let cfg = run.resolve()?;
            let kinds = variants.iter().map(|v| v.parse::<VariantKind>()).collect::<Result<Vec<_>, _>>()?;
            let split: Split = split.parse()?;
            let data = load_for(&cfg)?;
            let rows = cmd_ablate(&cfg, &data, &kinds, &seeds, split)?;
            echo_config(&cfg)?;
            println!("variant,AUC,Accuracy,F1");
            for r in &rows {
                let a = &r.aggregate;
                println!("{},{},{},{}", a.variant, a.macro_auc.cell(), a.accuracy.cell(), a.macro_f1.cell());
            }
        }
        Command::Sweep {
            run,
            grid,
            alphas,
            betas,
            gammas,
            channels,
        } => {
            let cfg = run.resolve()?;
            let mut g = match grid {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    serde_json::from_str::<SweepGrid>(&text).with_context(|| p.display().to_string())?
                }
                None => SweepGrid::default(),
            };
            for (axis, flag) in [(&mut g.alpha, alphas), (&mut g.beta, betas), (&mut g.gamma, gammas)] {
                if !flag.is_empty() {
                    *axis = flag;
                }
            }
            if !channels.is_empty() {
                g.channels = parse_channels(&channels)?;
            }
            let data = load_for(&cfg)?;
            let mut rows = cmd_sweep(&cfg, &data, &g)?;
            echo_config(&cfg)?;
            sort_sweep(&mut rows);
            if let Some(best) = rows.first() {
                print_json(best)?;
            }
        }
        Command::Gradcheck { inject_fault, seed } => {
            let fault = match inject_fault {
                Some(name) => match OpKind::from_name(&name) {
                    Some(k) => Some(k),
                    None => bail!(Error::Config(format!("unknown op `{name}`"))),
                },
                None => None,
            };
            let report = run_gradcheck(fault, seed)?;
            for r in &report.ops {
                println!(
                    "{:<20} {:>10.3e}  {}",
                    r.kind.name(),
                    r.max_err,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            let m = &report.model;
            println!(
                "{:<20} {:>10.3e}  {} ({} coordinates, worst at {})",
                "full model",
                m.max_err,
                if m.max_err < mrm_tensor::gradcheck::GRAD_TOL { "ok" } else { "FAIL" },
                m.checked,
                m.worst
            );
            if !report.passed() {
                eprintln!("gradient check failed: {}", report.failures().join(", "));
                return Err(anyhow::Error::msg("gradient check failed").context(GradcheckFailedMarker));
            }
        }
        Command::Synth {
            out,
            records,
            classes,
            seed,
            separability,
            length,
        } => {
            let ds = synth_generate(&SynthConfig {
                num_records: records,
                num_classes: classes,
                seed,
                separability,
                length,
            })?;
            let path = write_dataset(&ds, &out)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

/// Gradient check failures carry their own exit status.
#[derive(Debug)]
struct GradcheckFailedMarker;

impl std::fmt::Display for GradcheckFailedMarker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("numerical failure")
    }
}

/// 2 for NaNs and failed gradient checks, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<GradcheckFailedMarker>().is_some() {
        return 2;
    }
    match e.downcast_ref::<Error>() {
        Some(err) if err.is_numerical() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
