use std::collections::BTreeSet;

use ear_core::action::{policy_gradient, PolicyNet, Trajectory, TrajectoryStep};
use ear_core::estimation::{attr_pair_objective, item_pair_objective, EmbeddingsMut, FmModel, PairTriple, ParamRow, SparseGrad};
use ear_core::reflection::build_d4;
use ear_core::{rng_from_seed, AttrId, ItemId, Rng, UserId};
use rand::seq::SliceRandom;
use rand::Rng as _;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const INSTANCES: u64 = 25;

fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom < 1e-8 {
        (a - n).abs()
    } else {
        (a - n).abs() / denom
    }
}

fn random_model(rng: &mut Rng, bias: bool) -> FmModel {
    let dim = rng.gen_range(1..=4);
    FmModel::random(3, 6, 6, dim, 0.8, bias, rng)
}

fn all_rows(m: &FmModel) -> Vec<ParamRow> {
    let mut rows = vec![];
    rows.extend((0..m.n_users() as u32).map(|u| ParamRow::User(UserId(u))));
    rows.extend((0..m.n_items() as u32).map(|v| ParamRow::Item(ItemId(v))));
    rows.extend((0..m.n_attrs() as u32).map(|p| ParamRow::Attr(AttrId(p))));
    if m.item_biases().is_some() {
        rows.extend((0..m.n_items() as u32).map(|v| ParamRow::ItemBias(ItemId(v))));
        rows.extend((0..m.n_attrs() as u32).map(|p| ParamRow::AttrBias(AttrId(p))));
    }
    rows
}

/// Compares `grad` with central differences of `f` over every parameter.
fn check_fm(model: &FmModel, grad: &SparseGrad, f: &dyn Fn(&FmModel) -> f64, label: &str) {
    for row in all_rows(model) {
        let width = EmbeddingsMut::row(model, row).unwrap().len();
        for k in 0..width {
            let mut plus = model.clone();
            plus.row_mut(row).unwrap()[k] += H;
            let mut minus = model.clone();
            minus.row_mut(row).unwrap()[k] -= H;
            let numeric = (f(&plus) - f(&minus)) / (2.0 * H);
            let analytic = grad.get(row).map_or(0.0, |g| g[k]);
            let e = rel_err(analytic, numeric);
            assert!(e < TOL, "{label}: {row:?}[{k}] analytic {analytic} numeric {numeric} rel {e}");
        }
    }
}

fn random_context(rng: &mut Rng, exclude: &[u32]) -> BTreeSet<AttrId> {
    let pool: Vec<u32> = (0..6).filter(|a| !exclude.contains(a)).collect();
    let n = rng.gen_range(0..=3.min(pool.len()));
    pool.choose_multiple(rng, n).map(|&a| AttrId(a)).collect()
}

#[test]
fn item_loss_gradient() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(seed);
        let model = random_model(&mut rng, seed % 2 == 1);
        let pos = rng.gen_range(0..6u32);
        let neg = (pos + rng.gen_range(1..6)) % 6;
        let triple = PairTriple { user: UserId(rng.gen_range(0..3)), pos: ItemId(pos), neg: ItemId(neg), context: random_context(&mut rng, &[]) };
        let reg = if seed % 3 == 0 { 0.0 } else { 0.05 };
        let mut g = SparseGrad::new();
        item_pair_objective(&model, &triple, reg, Some((&mut g, 1.0))).unwrap();
        check_fm(&model, &g, &|m| item_pair_objective(m, &triple, reg, None).unwrap(), "L_item");
    }
}

#[test]
fn attribute_loss_gradient() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(100 + seed);
        let model = random_model(&mut rng, seed % 2 == 0);
        let pos = rng.gen_range(0..6u32);
        let neg = (pos + rng.gen_range(1..6)) % 6;
        let triple = PairTriple { user: UserId(rng.gen_range(0..3)), pos: AttrId(pos), neg: AttrId(neg), context: random_context(&mut rng, &[pos, neg]) };
        let reg = if seed % 3 == 0 { 0.0 } else { 0.05 };
        let mut g = SparseGrad::new();
        attr_pair_objective(&model, &triple, reg, Some((&mut g, 1.0))).unwrap();
        check_fm(&model, &g, &|m| attr_pair_objective(m, &triple, reg, None).unwrap(), "L_attr");
    }
}

#[test]
fn reflection_loss_gradient() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(200 + seed);
        let model = random_model(&mut rng, false);
        let user = UserId(rng.gen_range(0..3));
        let mut items: Vec<u32> = (0..6).collect();
        items.shuffle(&mut rng);
        let n_pos = rng.gen_range(1..=3);
        let n_rej = rng.gen_range(1..=2);
        let positives: Vec<ItemId> = items[..n_pos].iter().map(|&i| ItemId(i)).collect();
        let rejected: Vec<ItemId> = items[n_pos..n_pos + n_rej].iter().map(|&i| ItemId(i)).collect();
        let ctx = random_context(&mut rng, &[]);
        let d4 = build_d4(user, &rejected, &ctx, &positives);
        let scale = 1.0 / d4.len() as f64;
        let reg = 0.01;
        let mut g = SparseGrad::new();
        for t in &d4 {
            item_pair_objective(&model, t, reg, Some((&mut g, scale))).unwrap();
        }
        let loss = |m: &FmModel| d4.iter().map(|t| item_pair_objective(m, t, reg, None).unwrap()).sum::<f64>() * scale;
        check_fm(&model, &g, &loss, "L_ref");
    }
}

#[test]
fn reinforce_objective_gradient() {
    for seed in 0..INSTANCES {
        let mut rng = rng_from_seed(300 + seed);
        let input = rng.gen_range(1..=4);
        let actions = rng.gen_range(2..=4);
        let hidden = rng.gen_range(1..=4);
        let net = PolicyNet::new(input, hidden, actions, &mut rng);
        let steps: Vec<TrajectoryStep> = (0..rng.gen_range(1..=4))
            .map(|_| {
                let mut mask: Vec<bool> = (0..actions).map(|_| rng.gen_bool(0.7)).collect();
                let forced = rng.gen_range(0..actions);
                mask[forced] = true;
                let allowed: Vec<usize> = (0..actions).filter(|&a| mask[a]).collect();
                TrajectoryStep {
                    state: (0..input).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    action: *allowed.choose(&mut rng).unwrap(),
                    mask,
                    reward: rng.gen_range(-1.0..1.0),
                }
            })
            .collect();
        let traj = Trajectory { steps };
        let returns: Vec<f64> = (0..traj.steps.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grad = policy_gradient(&net, &traj, &returns).unwrap();
        let objective = |n: &PolicyNet| -> f64 {
            traj.steps
                .iter()
                .zip(&returns)
                .map(|(s, r)| r * n.distribution(&s.state, &s.mask).unwrap()[s.action].ln())
                .sum()
        };
        for k in 0..net.params().len() {
            let mut plus = net.clone();
            plus.params_mut()[k] += H;
            let mut minus = net.clone();
            minus.params_mut()[k] -= H;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * H);
            let e = rel_err(grad[k], numeric);
            assert!(e < TOL, "REINFORCE param {k}: analytic {} numeric {numeric} rel {e}", grad[k]);
        }
    }
}
