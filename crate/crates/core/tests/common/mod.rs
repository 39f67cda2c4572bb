#![allow(dead_code)]

use std::sync::Arc;

use ear_core::action::RewardConfig;
use ear_core::datasets::{synth_dataset, SynthDataset, SynthParams};
use ear_core::estimation::FmModel;
use ear_core::reflection::ModelOverlay;
use ear_core::simulator::{Env, SimConfig};
use ear_core::rng_from_seed;

pub struct World {
    pub data: SynthDataset,
    pub model: Arc<FmModel>,
}

impl World {
    pub fn new(seed: u64, n_items: usize, n_attrs: usize, attrs_per_item: usize) -> Self {
        let params = SynthParams {
            n_users: 20,
            n_items,
            n_attrs,
            attrs_per_item,
            interactions_per_user: 10,
            seed,
            ..SynthParams::default()
        };
        let data = synth_dataset(&params).unwrap();
        let model = FmModel::random(20, n_items, n_attrs, 4, 0.5, false, &mut rng_from_seed(seed + 1));
        World { data, model: Arc::new(model) }
    }

    pub fn small(seed: u64) -> Self {
        Self::new(seed, 120, 10, 3)
    }

    pub fn env(&self, sim: SimConfig) -> Env<'_> {
        Env {
            catalog: &self.data.catalog,
            taxonomy: Some(&self.data.taxonomy),
            history: &self.data.log,
            sim,
            rewards: RewardConfig::default(),
        }
    }

    pub fn overlay(&self) -> ModelOverlay {
        ModelOverlay::new(self.model.clone())
    }
}
