#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use ear::config::RunConfig;
use ear::ear_core::action::{PolicyNet, StateVector};
use ear::ear_core::estimation::FmModel;
use ear::harness::{self, Dataset};

/// A desk-top run small enough for debug builds.
pub const TINY: &str = r#"
seed = 7

[data.synth]
n_users = 30
n_items = 150
n_attrs = 10
attrs_per_item = 3
interactions_per_user = 12

[fm]
dim = 8
epochs_per_phase = 3

[corpus]
sessions = 40

[pretrain]
hidden = 16
epochs = 3

[policy]
episodes = 32

[eval]
sessions = 40
bootstrap = 50
agents = ["ear", "ear_no_reflection", "max_entropy", "abs_greedy"]
"#;

pub fn tiny() -> RunConfig {
    RunConfig::from_toml(TINY, Path::new("tiny.toml")).unwrap()
}

pub fn tiny_with(extra: &str) -> RunConfig {
    RunConfig::from_toml(&merge(TINY, extra), Path::new("tiny.toml")).unwrap()
}

/// Appends `extra` lines to the `[section]` they follow; new sections go last.
fn merge(base: &str, extra: &str) -> String {
    let mut doc: toml::Table = base.parse().unwrap();
    let add: toml::Table = extra.parse().unwrap();
    fn fold(dst: &mut toml::Table, src: toml::Table) {
        for (k, v) in src {
            match (dst.get_mut(&k), v) {
                (Some(toml::Value::Table(d)), toml::Value::Table(s)) => fold(d, s),
                (_, v) => {
                    dst.insert(k, v);
                }
            }
        }
    }
    fold(&mut doc, add);
    toml::to_string(&doc).unwrap()
}

pub fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn world(cfg: &RunConfig) -> (Dataset, Arc<FmModel>) {
    let data = harness::prepare_data(cfg).unwrap();
    let (fm, _) = harness::train_fm(cfg, &data).unwrap();
    (data, Arc::new(fm))
}

/// A policy that strongly prefers recommending (or asking, when `recommend` is false).
pub fn biased_policy(cfg: &RunConfig, data: &Dataset, recommend: bool) -> PolicyNet {
    let (input, actions) = harness::policy_shape(cfg, data).unwrap();
    assert_eq!(input, StateVector::layout_len(actions - 1, cfg.sim.max_turns));
    let mut net = PolicyNet::zeros(input, 4, actions);
    let last = net.params().len() - 1;
    net.params_mut()[last] = if recommend { 50.0 } else { -50.0 };
    net
}
