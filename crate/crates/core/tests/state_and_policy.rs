mod common;

use ear_core::action::{
    attribute_entropy, build_state, compute_returns, masked_softmax, select_action, PolicyNet, SelectMode, StateVector,
    LEN_BINS,
};
use ear_core::datasets::AttributeCatalog;
use ear_core::simulator::{session_rngs, Action, Feedback, QuestionMode, Session, SimConfig, SimUser};
use ear_core::{rng_from_seed, AttrId, ItemId, ItemSet, UserId};
use proptest::prelude::*;
use rand::Rng as _;

use common::World;

fn brute_entropy(cands: &[usize], attr: usize, item_attrs: &[Vec<usize>]) -> f64 {
    let with = cands.iter().filter(|&&v| item_attrs[v].contains(&attr)).count();
    let q = with as f64 / cands.len() as f64;
    if with == 0 || with == cands.len() {
        return 0.0;
    }
    -(q * q.log2() + (1.0 - q) * (1.0 - q).log2())
}

#[test]
fn entropy_matches_brute_force_on_random_pairs() {
    let mut rng = rng_from_seed(11);
    let n_attrs = 8;
    let n_items = 40;
    let mut item_attrs: Vec<Vec<usize>> = (0..n_items)
        .map(|_| (0..n_attrs).filter(|_| rng.gen_bool(0.4)).collect())
        .collect();
    // every attribute must be used once
    for (a, attrs) in item_attrs.iter_mut().take(n_attrs).enumerate() {
        if !attrs.contains(&a) {
            attrs.push(a);
            attrs.sort_unstable();
        }
    }
    let catalog = AttributeCatalog::new(
        n_attrs,
        item_attrs.iter().map(|a| a.iter().map(|&p| AttrId::new(p)).collect()).collect(),
    )
    .unwrap();
    for _ in 0..1000 {
        let mut cands: Vec<usize> = (0..n_items).filter(|_| rng.gen_bool(0.3)).collect();
        if cands.is_empty() {
            cands.push(rng.gen_range(0..n_items));
        }
        let attr = rng.gen_range(0..n_attrs);
        let set = ItemSet::from_items(n_items, cands.iter().map(|&v| ItemId::new(v)));
        let got = attribute_entropy(&set, AttrId::new(attr), &catalog).unwrap();
        let want = brute_entropy(&cands, attr, &item_attrs);
        assert!((got - want).abs() < 1e-9, "candidates {cands:?} attr {attr}: {got} vs {want}");
    }
}

#[test]
fn entropy_boundaries_are_exact_zero() {
    // item 0 {0}, item 1 {0, 1}
    let catalog = AttributeCatalog::new(2, vec![vec![AttrId(0)], vec![AttrId(0), AttrId(1)]]).unwrap();
    let all = ItemSet::full(2);
    assert_eq!(attribute_entropy(&all, AttrId(0), &catalog).unwrap(), 0.0);
    let only0 = ItemSet::from_items(2, [ItemId(0)]);
    assert_eq!(attribute_entropy(&only0, AttrId(1), &catalog).unwrap(), 0.0);
    assert!((attribute_entropy(&all, AttrId(1), &catalog).unwrap() - 1.0).abs() < 1e-12);
    assert!(attribute_entropy(&ItemSet::empty(2), AttrId(0), &catalog).is_err());
}

#[test]
fn three_candidates_one_carrier() {
    let catalog =
        AttributeCatalog::new(2, vec![vec![AttrId(0), AttrId(1)], vec![AttrId(0)], vec![AttrId(0)]]).unwrap();
    let h = attribute_entropy(&ItemSet::full(3), AttrId(1), &catalog).unwrap();
    assert!((h - 0.9183).abs() < 1e-4, "{h}");
}

#[test]
fn state_layout_over_a_live_session() {
    let w = World::small(3);
    for mode in [QuestionMode::Binary, QuestionMode::Enumerated] {
        let sim = SimConfig { mode, ..SimConfig::default() };
        let env = w.env(sim);
        let questions = env.questions().unwrap();
        let user = SimUser::new(UserId(0), ItemId(5), env.catalog).unwrap();
        let (mut urng, _) = session_rngs(0, 0);
        let mut s = user.start(&env, &mut urng).unwrap();
        let st = build_state(&s, &w.overlay(), env.catalog, env.taxonomy).unwrap();
        assert_eq!(st.len(), StateVector::layout_len(questions, 15));
        assert_eq!(st.len(), 2 * questions + 15 + LEN_BINS);
        assert!(st.s_his().iter().all(|&x| x == 0.0), "no feedback yet");
        assert_eq!(st.s_len().iter().sum::<f64>(), 1.0);
        let items: Vec<ItemId> = s.candidates().iter().filter(|&v| v != ItemId(5)).take(10).collect();
        s.apply(Action::Recommend(items), Feedback::Reject, &env.rewards, env.catalog, env.taxonomy).unwrap();
        let st = build_state(&s, &w.overlay(), env.catalog, env.taxonomy).unwrap();
        assert_eq!(st.s_his().iter().filter(|&&x| x != 0.0).count(), s.history().iter().filter(|&&c| c != 0).count());
    }
}

#[test]
fn single_candidate_is_bin_zero() {
    let catalog = AttributeCatalog::new(2, vec![vec![AttrId(0), AttrId(1)], vec![AttrId(0)]]).unwrap();
    let s = Session::start(UserId(0), ear_core::simulator::Opening::Attribute(AttrId(1)), &catalog, None, SimConfig::default())
        .unwrap();
    assert_eq!(s.candidates().len(), 1);
    let model = ear_core::estimation::FmModel::zeros(1, 2, 2, 2, false);
    let st = build_state(&s, &model, &catalog, None).unwrap();
    assert_eq!(st.s_len()[0], 1.0);
    assert_eq!(st.s_ent(), &[0.0, 0.0]);
}

#[test]
fn asked_attribute_is_masked_next_turn() {
    let w = World::small(4);
    let env = w.env(SimConfig::default());
    let user = SimUser::new(UserId(1), ItemId(7), env.catalog).unwrap();
    let mut s = user.start(&env, &mut rng_from_seed(0)).unwrap();
    let q = env.questions().unwrap();
    let open = s.action_mask(q).iter().position(|&m| m).unwrap();
    assert!(open < q);
    let fb = user.respond(&Action::Ask(AttrId::new(open)), None).unwrap();
    s.apply(Action::Ask(AttrId::new(open)), fb, &env.rewards, env.catalog, None).unwrap();
    assert!(!s.action_mask(q)[open]);
    assert!(s.action_mask(q)[q], "recommend is always allowed");
}

#[test]
fn sampling_frequency() {
    let mut rng = rng_from_seed(5);
    let n = 100_000;
    let zeros = (0..n).filter(|_| select_action(&[0.7, 0.3], SelectMode::Sample, &mut rng) == 0).count();
    assert!((zeros as f64 / n as f64 - 0.7).abs() < 0.01);
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(
        logits in prop::collection::vec(-30.0f64..30.0, 1..12),
        seed in any::<u64>(),
    ) {
        let mut rng = rng_from_seed(seed);
        let mut mask: Vec<bool> = logits.iter().map(|_| rng.gen_bool(0.6)).collect();
        let keep = rng.gen_range(0..mask.len());
        mask[keep] = true;
        let p = masked_softmax(&logits, &mask);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (pi, &m) in p.iter().zip(&mask) {
            prop_assert!(*pi >= 0.0);
            if !m {
                prop_assert_eq!(*pi, 0.0);
            }
        }
        let a = select_action(&p, SelectMode::Sample, &mut rng);
        prop_assert!(mask[a]);
    }

    #[test]
    fn policy_distribution_respects_mask(seed in any::<u64>(), actions in 2usize..8) {
        let mut rng = rng_from_seed(seed);
        let net = PolicyNet::new(5, 6, actions, &mut rng);
        let state: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut mask: Vec<bool> = (0..actions).map(|_| rng.gen_bool(0.5)).collect();
        mask[actions - 1] = true;
        let p = net.distribution(&state, &mask).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().zip(&mask).all(|(pi, &m)| m || *pi == 0.0));
    }

    #[test]
    fn returns_follow_the_recurrence(rewards in prop::collection::vec(-1.0f64..1.0, 0..20), gamma in 0.0f64..=1.0) {
        let r = compute_returns(&rewards, gamma);
        prop_assert_eq!(r.len(), rewards.len());
        for t in 0..rewards.len() {
            let next = if t + 1 < r.len() { r[t + 1] } else { 0.0 };
            prop_assert!((r[t] - (rewards[t] + gamma * next)).abs() < 1e-12);
            // closed form
            let direct: f64 = (t..rewards.len()).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
            prop_assert!((r[t] - direct).abs() < 1e-9);
        }
    }
}
