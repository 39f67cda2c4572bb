//! The experiment pipeline: data → FM → rule corpus → imitation → REINFORCE
//! → paired evaluation of every configured agent.
//!
//! Each stage is a plain function so that the CLI subcommands and `run`
//! share code. Models are rounded through `f32` as soon as they are trained,
//! which makes an in-memory `run` and a chain of subcommands reading
//! checkpoints evaluate bit-identical weights.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ear_core::action::{pretrain_policy, ImitationConfig, reinforce_update, ImitationExample, PolicyNet, PretrainReport, SelectMode, StateVector};
use ear_core::agents::{AbsGreedyAgent, Agent, EarAgent, MaxEntropyAgent, RandomAgent, RuleBasedAgent};
use ear_core::datasets::{prune_users, split_interactions, synth_dataset, AttributeCatalog, InteractionLog, Taxonomy};
use ear_core::estimation::{init_model, train_multitask, FmModel, MultitaskReport, TrainingData};
use ear_core::eval::{
    average_turns, bad_update_histogram, bad_update_trend, build_auc_cases, mean_auc, paired_bootstrap, per_user_auc,
    success_curve, AucReport, AucTask, BadUpdateBucket, BootstrapCi,
};
use ear_core::reflection::ModelOverlay;
use ear_core::simulator::{
    generate_pretraining_corpus, run_session, session_rngs, CorpusConfig, Env, SessionStatus, SessionTranscript, SimUser,
};
use ear_core::{rng_from_seed, ItemId, Rng, UserId};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, quantize_fm, quantize_policy};
use crate::config::{AgentKind, DataSource, RunConfig, StageSeeds, TargetSplit};
use crate::formats::{self, Names};
use crate::stats::{paired_t_test, TTest};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const FM_CKPT: &str = "fm.ckpt";
pub const POLICY_PRETRAINED_CKPT: &str = "policy_pretrained.ckpt";
pub const POLICY_CKPT: &str = "policy.ckpt";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SR_CURVE_FILE: &str = "sr_curve.csv";

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
#[error("stage `{stage}` failed (seed {seed}): {source}")]
pub struct StageError {
    pub stage: &'static str,
    pub seed: u64,
    #[source]
    pub source: BoxError,
}

impl StageError {
    pub fn new(stage: &'static str, seed: u64, source: impl Into<BoxError>) -> Self {
        StageError { stage, seed, source: source.into() }
    }

    /// True when the failure is a checkpoint or corpus file that does not exist.
    pub fn is_missing_artifact(&self) -> bool {
        matches!(self.source.downcast_ref::<checkpoint::CheckpointError>(), Some(checkpoint::CheckpointError::Missing(_)))
            || self.source.downcast_ref::<MissingArtifact>().is_some()
    }
}

#[derive(Debug, thiserror::Error)]
#[error("required artifact {} not found", .0.display())]
pub struct MissingArtifact(pub PathBuf);

pub type Result<T, E = StageError> = std::result::Result<T, E>;

trait Stage<T> {
    fn stage(self, name: &'static str, seed: u64) -> Result<T>;
}

impl<T, E: Into<BoxError>> Stage<T> for std::result::Result<T, E> {
    fn stage(self, name: &'static str, seed: u64) -> Result<T> {
        self.map_err(|e| StageError::new(name, seed, e))
    }
}

/// Interactions split three ways over one catalog.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub all: InteractionLog,
    pub train: InteractionLog,
    pub valid: InteractionLog,
    pub test: InteractionLog,
    pub catalog: AttributeCatalog,
    pub taxonomy: Option<Taxonomy>,
    pub names: Names,
}

impl Dataset {
    pub fn env<'a>(&'a self, cfg: &RunConfig) -> Env<'a> {
        Env { catalog: &self.catalog, taxonomy: self.taxonomy.as_ref(), history: &self.train, sim: cfg.sim, rewards: cfg.rewards }
    }

    /// `(user, item)` pairs of `log` whose item can be described.
    pub fn session_pairs(&self, log: &InteractionLog) -> Vec<(UserId, ItemId)> {
        log.records()
            .iter()
            .copied()
            .filter(|&(_, v)| self.catalog.attrs_of(v).is_ok_and(|a| !a.is_empty()))
            .collect()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut m = formats::describe(&self.all, &self.catalog, self.taxonomy.as_ref());
        m.insert("train".into(), self.train.len());
        m.insert("valid".into(), self.valid.len());
        m.insert("test".into(), self.test.len());
        m
    }
}

pub fn prepare_data(cfg: &RunConfig) -> Result<Dataset> {
    let seeds = cfg.seeds();
    let cfg = cfg.seeded();
    let (log, catalog, taxonomy, names) = match cfg.data.source {
        DataSource::Synth => {
            let d = synth_dataset(&cfg.data.synth).stage("data", seeds.synth)?;
            let names = Names::sequential(d.log.n_users(), d.catalog.n_items(), d.catalog.n_attrs(), d.taxonomy.n_parents());
            (d.log, d.catalog, Some(d.taxonomy), names)
        }
        DataSource::Files => {
            let f = &cfg.data.files;
            let inter = f.interactions.as_deref().expect("validated");
            let format = f.format.unwrap_or_else(|| formats::InteractionFormat::from_path(inter));
            let d = formats::load_dataset(inter, format, f.item_attributes.as_deref().expect("validated"), f.taxonomy.as_deref())
                .stage("data", seeds.split)?;
            (d.log, d.catalog, d.taxonomy, d.names)
        }
    };
    let all = prune_users(&log, cfg.data.min_count);
    let (train, valid, test) = split_interactions(&all, &cfg.data.split).stage("data", seeds.split)?;
    if train.is_empty() {
        return Err(StageError::new("data", seeds.split, "training split is empty"));
    }
    Ok(Dataset { all, train, valid, test, catalog, taxonomy, names })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FmMeta {
    pub config: ear_core::estimation::TrainConfig,
    pub training: MultitaskReport,
    pub names: Names,
}

pub fn train_fm(cfg: &RunConfig, data: &Dataset) -> Result<(FmModel, FmMeta)> {
    let seeds = cfg.seeds();
    let fm_cfg = cfg.seeded().fm;
    let mut rng = rng_from_seed(seeds.fm);
    let td = TrainingData { log: &data.train, catalog: &data.catalog, contexts: None };
    let mut model = init_model(data.all.n_users(), &td, &fm_cfg, &mut rng);
    let training = train_multitask(&mut model, &td, &fm_cfg, &mut rng).stage("train-fm", seeds.fm)?;
    if !model.is_finite() {
        return Err(StageError::new("train-fm", seeds.fm, "non-finite weights after training"));
    }
    Ok((quantize_fm(&model), FmMeta { config: fm_cfg, training, names: data.names.clone() }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub sessions: usize,
    pub successes: usize,
    pub examples: usize,
    /// Highest greedy imitation accuracy any policy can reach on the corpus.
    pub teacher_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct CorpusHeader {
    schema_version: u32,
    #[serde(flatten)]
    summary: CorpusSummary,
}

pub fn gen_corpus(cfg: &RunConfig, data: &Dataset, fm: &Arc<FmModel>) -> Result<(Vec<ImitationExample>, CorpusSummary)> {
    let seeds = cfg.seeds();
    let corpus_cfg = CorpusConfig { seed: seeds.corpus, ..cfg.corpus };
    let pairs = data.session_pairs(&data.train);
    let c = generate_pretraining_corpus(&data.env(cfg), &ModelOverlay::new(fm.clone()), &pairs, &corpus_cfg)
        .stage("gen-corpus", seeds.corpus)?;
    let summary = CorpusSummary { sessions: c.sessions, successes: c.successes, examples: c.examples.len(), teacher_bound: c.teacher_bound };
    Ok((c.examples, summary))
}

pub fn write_corpus(path: &Path, examples: &[ImitationExample], summary: CorpusSummary) -> std::io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut w, &CorpusHeader { schema_version: REPORT_SCHEMA_VERSION, summary })?;
    w.write_all(b"\n")?;
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_corpus(path: &Path) -> Result<(Vec<ImitationExample>, CorpusSummary), BoxError> {
    if !path.exists() {
        return Err(Box::new(MissingArtifact(path.to_path_buf())));
    }
    let mut lines = BufReader::new(fs::File::open(path)?).lines();
    let head = lines.next().ok_or_else(|| format!("{}: empty corpus file", path.display()))??;
    let header: CorpusHeader = serde_json::from_str(&head).map_err(|e| format!("{}:1: {e}", path.display()))?;
    if header.schema_version != REPORT_SCHEMA_VERSION {
        return Err(format!("{}: corpus schema version {}, expected {REPORT_SCHEMA_VERSION}", path.display(), header.schema_version).into());
    }
    let mut out = Vec::with_capacity(header.summary.examples);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("{}:{}: {e}", path.display(), i + 2))?);
    }
    if out.len() != header.summary.examples {
        return Err(format!("{}: header announces {} examples, found {}", path.display(), header.summary.examples, out.len()).into());
    }
    Ok((out, header.summary))
}

/// Input width and action count of the policy for this configuration.
pub fn policy_shape(cfg: &RunConfig, data: &Dataset) -> Result<(usize, usize)> {
    let q = data.env(cfg).questions().stage("pretrain-policy", cfg.seeds().pretrain)?;
    Ok((StateVector::layout_len(q, cfg.sim.max_turns), q + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub hidden: usize,
    pub corpus: CorpusSummary,
    pub pretrain: PretrainReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reinforce: Option<RlSummary>,
}

pub fn pretrain(cfg: &RunConfig, data: &Dataset, examples: &[ImitationExample], corpus: CorpusSummary) -> Result<(PolicyNet, PolicyMeta)> {
    let seed = cfg.seeds().pretrain;
    let (input, actions) = policy_shape(cfg, data)?;
    if let Some(ex) = examples.iter().find(|e| e.state.len() != input || e.mask.len() != actions) {
        return Err(StageError::new(
            "pretrain-policy",
            seed,
            format!("corpus example of width {}/{} does not fit a {input}/{actions} policy", ex.state.len(), ex.mask.len()),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let p = cfg.pretrain;
    let mut net = PolicyNet::new(input, p.hidden, actions, &mut rng);
    let icfg = ImitationConfig { epochs: p.epochs, lr: p.lr, batch: p.batch, optimizer: p.optimizer };
    let report = pretrain_policy(&mut net, examples, &icfg, &mut rng).stage("pretrain-policy", seed)?;
    Ok((quantize_policy(&net), PolicyMeta { hidden: p.hidden, corpus, pretrain: report, reinforce: None }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlSummary {
    pub episodes: usize,
    /// Success rate of the sampled rollouts in consecutive tenths of training.
    pub success_by_decile: Vec<f64>,
    pub mean_return_first_decile: f64,
    pub mean_return_last_decile: f64,
}

fn ear_agent(policy: &Arc<PolicyNet>, fm: &Arc<FmModel>, cfg: &RunConfig, reflect: bool, select: SelectMode, rng: Rng) -> EarAgent {
    EarAgent::new(policy.clone(), ModelOverlay::new(fm.clone()), reflect.then_some(cfg.reflection), select, rng)
}

/// REINFORCE fine-tuning against the simulator. Rollouts of one round run in
/// parallel with a frozen policy; their updates are applied serially in
/// episode order, so the result does not depend on the worker count.
pub fn train_policy(cfg: &RunConfig, data: &Dataset, fm: &Arc<FmModel>, start: &PolicyNet) -> Result<(PolicyNet, RlSummary)> {
    let seed = cfg.seeds().policy;
    let env = data.env(cfg);
    let log = match cfg.policy.targets {
        TargetSplit::Train => &data.train,
        TargetSplit::Valid => &data.valid,
    };
    let mut pairs = data.session_pairs(log);
    if pairs.is_empty() {
        pairs = data.session_pairs(&data.train);
    }
    if pairs.is_empty() {
        return Err(StageError::new("train-policy", seed, "no episode targets"));
    }
    let mut net = start.clone();
    let n = cfg.policy.episodes;
    let mut successes = Vec::with_capacity(n);
    let mut returns = Vec::with_capacity(n);
    let mut i = 0usize;
    while i < n {
        let hi = (i + cfg.policy.rollout_batch).min(n);
        let frozen = Arc::new(net.clone());
        let rolled: Vec<_> = (i..hi)
            .into_par_iter()
            .map(|e| {
                let (mut user_rng, agent_rng) = session_rngs(seed, e as u64);
                let (u, v) = pairs[user_rng.gen_range(0..pairs.len())];
                let sim = SimUser::new(u, v, env.catalog)?;
                let session = sim.start(&env, &mut user_rng)?;
                let mut agent = ear_agent(&frozen, fm, cfg, cfg.policy.reflect, SelectMode::Sample, agent_rng).recording(true);
                let t = run_session(&mut agent, &sim, session, &env)?;
                Ok::<_, ear_core::Error>((t.status == SessionStatus::Success, agent.take_trajectory()))
            })
            .collect::<Vec<_>>();
        for (k, r) in rolled.into_iter().enumerate() {
            let (ok, traj) = r.map_err(|e| StageError::new("train-policy", seed, format!("episode {}: {e}", i + k)))?;
            reinforce_update(&mut net, &traj, &cfg.rewards).map_err(|e| StageError::new("train-policy", seed, format!("episode {}: {e}", i + k)))?;
            successes.push(f64::from(u8::from(ok)));
            returns.push(traj.returns(&cfg.rewards).first().copied().unwrap_or(0.0));
        }
        i = hi;
    }
    let decile = |v: &[f64], d: usize| -> f64 {
        let lo = v.len() * d / 10;
        let hi = (v.len() * (d + 1) / 10).max(lo + 1).min(v.len());
        if lo >= hi {
            return 0.0;
        }
        v[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
    };
    let summary = RlSummary {
        episodes: n,
        success_by_decile: if n == 0 { Vec::new() } else { (0..10).map(|d| decile(&successes, d)).collect() },
        mean_return_first_decile: if n == 0 { 0.0 } else { decile(&returns, 0) },
        mean_return_last_decile: if n == 0 { 0.0 } else { decile(&returns, 9) },
    };
    Ok((quantize_policy(&net), summary))
}

/// Shared, immutable models an evaluation draws agents from.
#[derive(Debug, Clone)]
pub struct Models {
    pub fm: Arc<FmModel>,
    pub policy: Option<Arc<PolicyNet>>,
}

pub fn build_agent(kind: AgentKind, models: &Models, cfg: &RunConfig, rng: Rng) -> Result<Box<dyn Agent + Send>, BoxError> {
    let overlay = || ModelOverlay::new(models.fm.clone());
    let policy = || models.policy.clone().ok_or_else(|| format!("agent `{}` needs a trained policy", kind.name()));
    Ok(match kind {
        AgentKind::Ear => Box::new(ear_agent(&policy()?, &models.fm, cfg, true, SelectMode::Greedy, rng)),
        AgentKind::EarNoReflection => Box::new(ear_agent(&policy()?, &models.fm, cfg, false, SelectMode::Greedy, rng)),
        AgentKind::MaxEntropy => Box::new(MaxEntropyAgent::new(overlay())),
        AgentKind::AbsGreedy => Box::new(AbsGreedyAgent::new(overlay(), Some(cfg.reflection), rng)),
        AgentKind::AbsGreedyNoReflection => Box::new(AbsGreedyAgent::new(overlay(), None, rng)),
        AgentKind::RuleBased => Box::new(RuleBasedAgent::new(overlay(), rng)),
        AgentKind::Random => Box::new(RandomAgent::new(rng)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub sessions: usize,
    pub successes: usize,
    /// SR@1 … SR@T.
    pub sr_curve: Vec<f64>,
    pub sr_at_t: f64,
    pub average_turns: f64,
    pub reflections: usize,
    pub bad_updates: usize,
    pub bad_update_buckets: Vec<BadUpdateBucket>,
    pub bad_update_trend: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: AgentKind,
    pub b: AgentKind,
    /// Paired bootstrap of per-session success at T, `a − b`.
    pub success: BootstrapCi,
    /// Paired bootstrap of per-session terminal turn, `a − b`.
    pub turns: BootstrapCi,
    pub success_t_test: Option<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub seeds: StageSeeds,
    pub config: RunConfig,
    pub dataset: BTreeMap<String, usize>,
    pub fm_training: MultitaskReport,
    pub auc: BTreeMap<AucTask, AucReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reinforce: Option<RlSummary>,
    pub agents: BTreeMap<AgentKind, AgentReport>,
    pub comparisons: Vec<Comparison>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// `turn,<agent>,…` rows for t = 1…T.
    pub fn sr_curve_csv(&self) -> String {
        let kinds: Vec<AgentKind> = self.config.eval.agents.iter().copied().filter(|k| self.agents.contains_key(k)).collect();
        let mut s = String::from("turn");
        for k in &kinds {
            s.push(',');
            s.push_str(k.name());
        }
        s.push('\n');
        for t in 0..self.config.sim.max_turns {
            s.push_str(&(t + 1).to_string());
            for k in &kinds {
                s.push(',');
                s.push_str(&format!("{:.6}", self.agents[k].sr_curve[t]));
            }
            s.push('\n');
        }
        s
    }
}

/// Plays `sessions` paired conversations of one agent kind on `pairs`.
/// Session `i` gets the same user, target and opening for every agent.
pub fn simulate(
    kind: AgentKind,
    models: &Models,
    cfg: &RunConfig,
    data: &Dataset,
    pairs: &[(UserId, ItemId)],
    seed: u64,
) -> Result<Vec<SessionTranscript>> {
    let env = data.env(cfg);
    (0..cfg.eval.sessions)
        .into_par_iter()
        .map(|i| {
            let (mut user_rng, agent_rng) = session_rngs(seed, i as u64);
            let fail = |e: BoxError| StageError::new("eval", seed, format!("agent {} session {i}: {e}", kind.name()));
            let (u, v) = pairs[user_rng.gen_range(0..pairs.len())];
            let sim = SimUser::new(u, v, env.catalog).map_err(|e| fail(e.into()))?;
            let session = sim.start(&env, &mut user_rng).map_err(|e| fail(e.into()))?;
            let mut agent = build_agent(kind, models, cfg, agent_rng).map_err(fail)?;
            run_session(&mut *agent, &sim, session, &env).map_err(|e| fail(e.into()))
        })
        .collect()
}

fn agent_report(transcripts: &[SessionTranscript], user_auc: &BTreeMap<UserId, f64>, cfg: &RunConfig) -> AgentReport {
    let t = cfg.sim.max_turns;
    let sr_curve = success_curve(transcripts, t);
    let buckets = bad_update_histogram(transcripts, user_auc, cfg.eval.buckets);
    let reflections = transcripts.iter().map(|s| s.reflections().count()).sum();
    let bad_updates = transcripts.iter().flat_map(|s| s.reflections()).filter(|r| r.is_bad_update()).count();
    AgentReport {
        sessions: transcripts.len(),
        successes: transcripts.iter().filter(|s| s.status == SessionStatus::Success).count(),
        sr_at_t: sr_curve.last().copied().unwrap_or(0.0),
        sr_curve,
        average_turns: average_turns(transcripts, t),
        reflections,
        bad_updates,
        bad_update_trend: bad_update_trend(&buckets),
        bad_update_buckets: buckets,
    }
}

/// Offline AUC of the base FM on the test split, plus per-user candidate AUC.
pub fn offline_auc(cfg: &RunConfig, data: &Dataset, fm: &FmModel) -> Result<(BTreeMap<AucTask, AucReport>, BTreeMap<UserId, f64>)> {
    let seed = cfg.seeds().auc;
    let heldout = if data.test.is_empty() { &data.valid } else { &data.test };
    let mut out = BTreeMap::new();
    let mut per_user = BTreeMap::new();
    for task in AucTask::ALL {
        let mut rng = rng_from_seed(seed ^ task as u64);
        let cases = build_auc_cases(task, heldout, &data.all, &data.catalog, &mut rng).stage("eval", seed)?;
        if cases.is_empty() {
            continue;
        }
        out.insert(task, mean_auc(fm, task, &cases).stage("eval", seed)?);
        if task == AucTask::ItemCandidate {
            per_user = per_user_auc(fm, task, &cases).stage("eval", seed)?;
        }
    }
    Ok((out, per_user))
}

/// Everything the report echoes from earlier stages.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub fm: FmMeta,
    pub policy: Option<PolicyMeta>,
}

pub fn evaluate(cfg: &RunConfig, data: &Dataset, models: &Models, prov: &Provenance) -> Result<ExperimentReport> {
    let seeds = cfg.seeds();
    let (auc, user_auc) = offline_auc(cfg, data, &models.fm)?;
    let mut pairs = data.session_pairs(&data.test);
    if pairs.is_empty() {
        pairs = data.session_pairs(&data.valid);
    }
    if pairs.is_empty() {
        return Err(StageError::new("eval", seeds.eval, "no evaluation targets in the test split"));
    }
    let mut transcripts = BTreeMap::new();
    let mut agents = BTreeMap::new();
    for &kind in &cfg.eval.agents {
        let ts = simulate(kind, models, cfg, data, &pairs, seeds.eval)?;
        agents.insert(kind, agent_report(&ts, &user_auc, cfg));
        transcripts.insert(kind, ts);
    }
    let mut comparisons = Vec::new();
    let kinds = &cfg.eval.agents;
    let t = cfg.sim.max_turns;
    for (x, &a) in kinds.iter().enumerate() {
        for &b in &kinds[x + 1..] {
            let succ = |k: AgentKind| -> Vec<f64> { transcripts[&k].iter().map(|s| f64::from(u8::from(s.status == SessionStatus::Success))).collect() };
            let turns = |k: AgentKind| -> Vec<f64> { transcripts[&k].iter().map(|s| s.terminal_turn(t) as f64).collect() };
            let (sa, sb) = (succ(a), succ(b));
            let mut rng = rng_from_seed(seeds.bootstrap ^ ((x as u64) << 32) ^ comparisons.len() as u64);
            let success = paired_bootstrap(&sa, &sb, cfg.eval.bootstrap.max(1), &mut rng).stage("eval", seeds.bootstrap)?;
            let turns_ci = paired_bootstrap(&turns(a), &turns(b), cfg.eval.bootstrap.max(1), &mut rng).stage("eval", seeds.bootstrap)?;
            comparisons.push(Comparison { a, b, success, turns: turns_ci, success_t_test: paired_t_test(&sa, &sb) });
        }
    }
    let needs_policy = cfg.needs_policy();
    let policy = prov.policy.as_ref().filter(|_| needs_policy);
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seeds,
        config: cfg.seeded(),
        dataset: data.counts(),
        fm_training: prov.fm.training.clone(),
        auc,
        corpus: policy.map(|p| p.corpus),
        pretrain: policy.map(|p| p.pretrain),
        reinforce: policy.and_then(|p| p.reinforce.clone()),
        agents,
        comparisons,
    })
}

fn write_text(path: &Path, text: &str, stage: &'static str, seed: u64) -> Result<()> {
    fs::write(path, text).map_err(|e| StageError::new(stage, seed, format!("{}: {e}", path.display())))
}

pub fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| StageError::new("setup", 0, format!("{}: {e}", out.display())))
}

// File-backed stages, one per subcommand.

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    ensure_dir(out)?;
    let seed = cfg.seeds().synth;
    let data = prepare_data(cfg)?;
    let io = |e: formats::FormatError| StageError::new("synth", seed, e);
    formats::write_interactions_tsv(&out.join("interactions.tsv"), &data.all, &data.names).map_err(io)?;
    formats::write_item_attributes(&out.join("item_attributes.json"), &data.catalog, &data.names).map_err(io)?;
    if let Some(t) = &data.taxonomy {
        formats::write_taxonomy(&out.join("taxonomy.json"), t, &data.names).map_err(io)?;
    }
    Ok(data)
}

pub fn cmd_train_fm(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<(Arc<FmModel>, FmMeta)> {
    ensure_dir(out)?;
    let (fm, meta) = train_fm(cfg, data)?;
    checkpoint::save_fm(&out.join(FM_CKPT), &fm, &meta).stage("train-fm", cfg.seeds().fm)?;
    Ok((Arc::new(fm), meta))
}

pub fn load_fm(cfg: &RunConfig, out: &Path, stage: &'static str) -> Result<(Arc<FmModel>, FmMeta)> {
    let (fm, meta) = checkpoint::load_fm::<FmMeta>(&out.join(FM_CKPT)).stage(stage, cfg.seeds().fm)?;
    Ok((Arc::new(fm), meta))
}

pub fn cmd_gen_corpus(cfg: &RunConfig, data: &Dataset, fm: &Arc<FmModel>, out: &Path) -> Result<(Vec<ImitationExample>, CorpusSummary)> {
    let (examples, summary) = gen_corpus(cfg, data, fm)?;
    let path = out.join(CORPUS_FILE);
    write_corpus(&path, &examples, summary).map_err(|e| StageError::new("gen-corpus", cfg.seeds().corpus, format!("{}: {e}", path.display())))?;
    Ok((examples, summary))
}

pub fn load_corpus(cfg: &RunConfig, out: &Path) -> Result<(Vec<ImitationExample>, CorpusSummary)> {
    read_corpus(&out.join(CORPUS_FILE)).map_err(|e| StageError::new("pretrain-policy", cfg.seeds().corpus, e))
}

pub fn cmd_pretrain(cfg: &RunConfig, data: &Dataset, examples: &[ImitationExample], corpus: CorpusSummary, out: &Path) -> Result<(PolicyNet, PolicyMeta)> {
    let (net, meta) = pretrain(cfg, data, examples, corpus)?;
    checkpoint::save_policy(&out.join(POLICY_PRETRAINED_CKPT), &net, &meta).stage("pretrain-policy", cfg.seeds().pretrain)?;
    Ok((net, meta))
}

pub fn load_policy(cfg: &RunConfig, out: &Path, file: &str, stage: &'static str) -> Result<(PolicyNet, PolicyMeta)> {
    checkpoint::load_policy::<PolicyMeta>(&out.join(file)).stage(stage, cfg.seeds().policy)
}

pub fn cmd_train_policy(cfg: &RunConfig, data: &Dataset, fm: &Arc<FmModel>, start: &PolicyNet, meta: &PolicyMeta, out: &Path) -> Result<(PolicyNet, PolicyMeta)> {
    let (net, summary) = train_policy(cfg, data, fm, start)?;
    let meta = PolicyMeta { reinforce: Some(summary), ..meta.clone() };
    checkpoint::save_policy(&out.join(POLICY_CKPT), &net, &meta).stage("train-policy", cfg.seeds().policy)?;
    Ok((net, meta))
}

pub fn write_report(report: &ExperimentReport, out: &Path) -> Result<()> {
    let seed = report.seeds.eval;
    write_text(&out.join(REPORT_FILE), &report.to_json(), "eval", seed)?;
    write_text(&out.join(SR_CURVE_FILE), &report.sr_curve_csv(), "eval", seed)
}

/// Evaluates from the checkpoints in `out`.
pub fn cmd_eval(cfg: &RunConfig, data: &Dataset, out: &Path) -> Result<ExperimentReport> {
    let (fm, fm_meta) = load_fm(cfg, out, "eval")?;
    let (policy, policy_meta) = if cfg.needs_policy() {
        let (p, m) = load_policy(cfg, out, POLICY_CKPT, "eval")?;
        (Some(Arc::new(p)), Some(m))
    } else {
        (None, None)
    };
    let report = evaluate(cfg, data, &Models { fm, policy }, &Provenance { fm: fm_meta, policy: policy_meta })?;
    write_report(&report, out)?;
    Ok(report)
}

/// The full pipeline; writes every artifact under `out`.
pub fn run_experiment(cfg: &RunConfig, out: &Path) -> Result<ExperimentReport> {
    ensure_dir(out)?;
    log::info!("preparing data (seed {})", cfg.seed);
    let data = prepare_data(cfg)?;
    log::info!("training FM on {} interactions", data.train.len());
    let (fm, fm_meta) = cmd_train_fm(cfg, &data, out)?;
    let (policy, policy_meta) = if cfg.needs_policy() {
        log::info!("generating rule-based corpus ({} sessions)", cfg.corpus.sessions);
        let (examples, summary) = cmd_gen_corpus(cfg, &data, &fm, out)?;
        log::info!("pretraining policy on {} examples", examples.len());
        let (net, meta) = cmd_pretrain(cfg, &data, &examples, summary, out)?;
        log::info!("imitation held-out accuracy {:.4}", meta.pretrain.heldout_accuracy);
        log::info!("REINFORCE fine-tuning ({} episodes)", cfg.policy.episodes);
        let (net, meta) = cmd_train_policy(cfg, &data, &fm, &net, &meta, out)?;
        (Some(Arc::new(net)), Some(meta))
    } else {
        (None, None)
    };
    log::info!("evaluating {} agents over {} sessions", cfg.eval.agents.len(), cfg.eval.sessions);
    let report = evaluate(cfg, &data, &Models { fm, policy }, &Provenance { fm: fm_meta, policy: policy_meta })?;
    write_report(&report, out)?;
    Ok(report)
}
