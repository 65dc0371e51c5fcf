use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ramgnn::pipeline::{
    configure_threads, read_report, run_stages, write_artifacts, Mode, PipelineConfig,
    PipelineError, RunReport, Stage,
};

#[derive(Parser)]
#[command(
    name = "ramgnn",
    version,
    about = "Attribute-graph pre-training and GNN fine-tuning for top-K recommendation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load the dataset, build attribute graphs and the split.
    Ingest(RunArgs),
    /// Ingest, then pre-train user and item embeddings.
    Pretrain(RunArgs),
    /// Everything up to fine-tuning; writes top-K lists.
    Finetune(RunArgs),
    /// Everything up to evaluation; writes metrics.
    Evaluate(RunArgs),
    /// All stages.
    Run(RunArgs),
    /// Print the summary of a finished run.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `runs/<mode>-seed<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `run.mode`.
    #[arg(long)]
    mode: Option<Mode>,
}

fn execute(args: &RunArgs, until: Stage) -> Result<(), PipelineError> {
    configure_threads()?;
    let mut cfg = PipelineConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(m) = args.mode {
        cfg.run.mode = m;
    }
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{}", cfg.run.mode, cfg.run.seed)));
    eprintln!(
        "{}: mode {} seed {} -> {}",
        until.name(),
        cfg.run.mode,
        cfg.run.seed,
        out.display()
    );
    let art = run_stages(&cfg, until)?;
    write_artifacts(&art, &out)?;
    print_summary(&art.report);
    Ok(())
}

fn print_summary(r: &RunReport) {
    let d = &r.dataset;
    println!(
        "dataset\tusers={} items={} interactions={} train={} test={}",
        d.users, d.items, d.interactions, d.train, d.test
    );
    if let Some(p) = &r.pretrain {
        for (side, s) in [("user", &p.user), ("item", &p.item)] {
            let ks: Vec<String> = s
                .relations
                .iter()
                .zip(&s.thresholds)
                .map(|(n, k)| format!("{n}={k}"))
                .collect();
            let last = s.losses.last().map_or(f64::NAN, |l| l.total);
            println!(
                "pretrain\t{side}\tepochs={} loss={last:.4} thresholds {}",
                s.losses.len(),
                ks.join(" ")
            );
        }
    }
    if let Some(f) = &r.finetune {
        println!(
            "finetune\tepochs={} best={} random_init={}",
            f.epochs.len(),
            f.best_epoch,
            r.random_init
        );
    }
    for (m, p) in r.metrics.iter().zip(&r.popularity) {
        println!(
            "metrics\t@{}\thr={:.4} mrr={:.4} ndcg={:.4}\tpopularity hr={:.4}",
            m.k, m.hr, m.mrr, m.ndcg, p.hr
        );
    }
    for t in &r.timings {
        println!("time\t{}\t{:.1}s", t.stage, t.seconds);
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(a) => execute(a, Stage::Ingest),
        Command::Pretrain(a) => execute(a, Stage::Pretrain),
        Command::Finetune(a) => execute(a, Stage::Finetune),
        Command::Evaluate(a) | Command::Run(a) => execute(a, Stage::Evaluate),
        Command::Report { out } => read_report(out).map(|r| print_summary(&r)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
