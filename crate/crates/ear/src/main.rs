use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use ear::config::RunConfig;
use ear::harness::{self, StageError, POLICY_PRETRAINED_CKPT};
use ear::service::{self, ServiceConfig};

#[derive(Debug, Parser)]
#[command(name = "ear", version, about = "Multi-round conversational recommender: training, simulation and serving")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the root seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for every artifact.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured dataset (synthetic or loaded) as TSV/JSON files.
    Synth(Common),
    /// Train the factorization machine; writes fm.ckpt.
    TrainFm(Common),
    /// Generate the rule-based imitation corpus; writes corpus.jsonl.
    GenCorpus(Common),
    /// Imitation pretraining; writes policy_pretrained.ckpt.
    PretrainPolicy(Common),
    /// REINFORCE fine-tuning; writes policy.ckpt.
    TrainPolicy(Common),
    /// Evaluate the configured agents; writes report.json and sr_curve.csv.
    Eval(Common),
    /// The whole pipeline.
    Run(Common),
    /// Start the HTTP session service on trained checkpoints.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Idle minutes before a session expires.
        #[arg(long, default_value_t = 30)]
        idle_minutes: u64,
        #[arg(long, default_value_t = 1024)]
        max_sessions: usize,
        /// Question and recommendation templates (TOML).
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&c.config).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        if w == 0 {
            return Err(Failure::Usage("--workers must be at least 1".into()));
        }
        // a second call fails harmlessly when the pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    Ok(cfg)
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Synth(c) => {
            let cfg = load_config(&c)?;
            let data = harness::cmd_synth(&cfg, &c.out_dir)?;
            eprintln!("wrote {} interactions to {}", data.all.len(), c.out_dir.display());
        }
        Command::TrainFm(c) => {
            let cfg = load_config(&c)?;
            let data = harness::prepare_data(&cfg)?;
            harness::cmd_train_fm(&cfg, &data, &c.out_dir)?;
        }
        Command::GenCorpus(c) => {
            let cfg = load_config(&c)?;
            let data = harness::prepare_data(&cfg)?;
            let (fm, _) = harness::load_fm(&cfg, &c.out_dir, "gen-corpus")?;
            harness::ensure_dir(&c.out_dir)?;
            harness::cmd_gen_corpus(&cfg, &data, &fm, &c.out_dir)?;
        }
        Command::PretrainPolicy(c) => {
            let cfg = load_config(&c)?;
            let data = harness::prepare_data(&cfg)?;
            let (examples, summary) = harness::load_corpus(&cfg, &c.out_dir)?;
            let (_, meta) = harness::cmd_pretrain(&cfg, &data, &examples, summary, &c.out_dir)?;
            eprintln!("held-out imitation accuracy {:.4}", meta.pretrain.heldout_accuracy);
        }
        Command::TrainPolicy(c) => {
            let cfg = load_config(&c)?;
            let data = harness::prepare_data(&cfg)?;
            let (fm, _) = harness::load_fm(&cfg, &c.out_dir, "train-policy")?;
            let (net, meta) = harness::load_policy(&cfg, &c.out_dir, POLICY_PRETRAINED_CKPT, "train-policy")?;
            harness::cmd_train_policy(&cfg, &data, &fm, &net, &meta, &c.out_dir)?;
        }
        Command::Eval(c) => {
            let cfg = load_config(&c)?;
            let data = harness::prepare_data(&cfg)?;
            let report = harness::cmd_eval(&cfg, &data, &c.out_dir)?;
            print_summary(&report, &c.out_dir);
        }
        Command::Run(c) => {
            let cfg = load_config(&c)?;
            let report = harness::run_experiment(&cfg, &c.out_dir)?;
            print_summary(&report, &c.out_dir);
        }
        Command::Serve { common, bind, idle_minutes, max_sessions, templates } => {
            let cfg = load_config(&common)?;
            let templates = match templates {
                Some(p) => service::Templates::load(&p).map_err(|e| Failure::Usage(e.to_string()))?,
                None => service::Templates::default(),
            };
            let data = harness::prepare_data(&cfg)?;
            let (fm, _) = harness::load_fm(&cfg, &common.out_dir, "serve")?;
            let (policy, _) = harness::load_policy(&cfg, &common.out_dir, harness::POLICY_CKPT, "serve")?;
            let svc = ServiceConfig {
                idle_timeout: std::time::Duration::from_secs(idle_minutes * 60),
                max_sessions,
                templates,
            };
            let state = service::AppState::new(cfg, Arc::new(data), fm, Arc::new(policy), svc);
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Runtime(e.to_string()))?;
            rt.block_on(service::serve(state, bind)).map_err(|e| Failure::Runtime(format!("serve on {bind}: {e}")))?;
        }
    }
    Ok(())
}

fn print_summary(report: &harness::ExperimentReport, out: &Path) {
    for (kind, a) in &report.agents {
        println!("{:<26} SR@{} {:.3}  AT {:.2}", kind.name(), report.config.sim.max_turns, a.sr_at_t, a.average_turns);
    }
    println!("report written to {}", out.join(harness::REPORT_FILE).display());
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("usage: ear <COMMAND> --config <FILE> [--seed N] [--out-dir DIR]");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
