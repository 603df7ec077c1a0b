use std::collections::BTreeSet;

use proptest::prelude::*;
use respcast::datamodel::{Intensity, Polarity};
use respcast::embed::{embeddings_from_bytes, embeddings_to_bytes, EmbeddingTable};
use respcast::graph::{graph_from_json, graph_to_json, BeliefId, HeteroGraph, NodeRef};
use respcast::metrics::{macro_f1, micro_f1, pearson, spearman};
use respcast::persona::{LatentPersona, Stance, View};
use respcast::train::{lr_schedule, radam_step, OptimizerState, RAdamConfig};
use respcast::zeroshot::{format_answer, parse_answer};

fn polarity() -> impl Strategy<Value = Polarity> {
    (0usize..3).prop_map(|i| Polarity::from_index(i).unwrap())
}

fn belief() -> impl Strategy<Value = BeliefId> {
    (0usize..BeliefId::COUNT).prop_map(|i| BeliefId::from_index(i).unwrap())
}

fn paired(len: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    len.prop_flat_map(|n| {
        (
            prop::collection::vec(-1e3f64..1e3, n),
            prop::collection::vec(-1e3f64..1e3, n),
        )
    })
}

proptest! {
    #[test]
    fn spearman_ignores_monotone_transforms(
        xy in (2usize..60).prop_flat_map(|n| (
            prop::collection::vec(-1000i64..1000, n),
            prop::collection::vec(-50i64..50, n),
        ))
    ) {
        let (xi, yi) = xy;
        let x: Vec<f64> = xi.iter().map(|&v| v as f64).collect();
        let y: Vec<f64> = yi.iter().map(|&v| v as f64).collect();
        // Cubes of small integers are exact, so order and ties survive.
        let x3: Vec<f64> = xi.iter().map(|&v| (v * v * v + 7) as f64).collect();
        let a = spearman(&x, &y).unwrap();
        let b = spearman(&x3, &y).unwrap();
        prop_assert_eq!(a.degenerate, b.degenerate);
        prop_assert!((a.value - b.value).abs() < 1e-12);
    }

    #[test]
    fn pearson_is_affine_invariant(xy in paired(3..80), a in 0.1f64..10.0, b in -100f64..100.0, flip in any::<bool>()) {
        let (x, y) = xy;
        let s = if flip { -a } else { a };
        let z: Vec<f64> = x.iter().map(|v| s * v + b).collect();
        let r = pearson(&x, &y).unwrap();
        let q = pearson(&z, &y).unwrap();
        prop_assert!(!r.degenerate);
        let want = if flip { -r.value } else { r.value };
        prop_assert!((q.value - want).abs() < 1e-9, "{} vs {}", q.value, want);
    }

    #[test]
    fn correlations_stay_in_range(xy in paired(2..100)) {
        let (x, y) = xy;
        for c in [pearson(&x, &y).unwrap(), spearman(&x, &y).unwrap()] {
            prop_assert!((-1.0..=1.0).contains(&c.value));
        }
    }

    #[test]
    fn micro_f1_is_accuracy_and_order_free(
        tp in (1usize..200).prop_flat_map(|n| (
            prop::collection::vec(polarity(), n),
            prop::collection::vec(polarity(), n),
        )),
        rot in 0usize..200,
    ) {
        let (t, p) = tp;
        let hits = t.iter().zip(&p).filter(|(a, b)| a == b).count();
        let mi = micro_f1(&t, &p).unwrap();
        prop_assert_eq!(mi, hits as f64 / t.len() as f64);
        let k = rot % t.len();
        let (mut t2, mut p2) = (t.clone(), p.clone());
        t2.rotate_left(k);
        p2.rotate_left(k);
        prop_assert_eq!(micro_f1(&t2, &p2).unwrap(), mi);
        let ma = macro_f1(&t, &p).unwrap();
        prop_assert!((macro_f1(&t2, &p2).unwrap() - ma).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ma));
    }

    #[test]
    fn constant_majority_prediction_identity(major in polarity(), k in 1usize..500, rest in prop::collection::vec(polarity(), 0..500)) {
        let mut truth = vec![major; k];
        truth.extend(rest);
        let pred = vec![major; truth.len()];
        let p = truth.iter().filter(|&&t| t == major).count() as f64 / truth.len() as f64;
        prop_assert!((micro_f1(&truth, &pred).unwrap() - p).abs() < 1e-12);
        let want = 2.0 * p / (1.0 + p) / 3.0;
        prop_assert!((macro_f1(&truth, &pred).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn answers_round_trip(p in polarity(), i in 0u8..=3, upper in any::<bool>(), prefix in "[a-z ]{0,12}") {
        let line = format_answer(p, Intensity::new(i).unwrap());
        let text = format!("{prefix}\n{}\n", if upper { line.to_uppercase() } else { line });
        prop_assert_eq!(parse_answer(&text).unwrap(), (p, Intensity::new(i).unwrap()));
    }

    #[test]
    fn persona_json_round_trips(
        id in "[a-z0-9_]{1,10}",
        moral in prop::collection::vec(belief(), 0..5),
        human in prop::collection::vec(belief(), 0..5),
        views in prop::collection::vec(("[a-zA-Z \"\\\\é]{0,20}", 0usize..3), 0..4),
        profession in prop::option::of("[a-z ]{1,15}"),
        summary in "\\PC{0,60}",
    ) {
        let stances = [Stance::Favor, Stance::Against, Stance::Neutral];
        let persona = LatentPersona {
            user_id: id,
            moral_values: moral,
            human_values: human,
            views: views.into_iter().map(|(target, s)| View { target, stance: stances[s] }).collect(),
            profession,
            interests: vec!["chess".into()],
            summary,
        };
        let text = persona.to_json();
        prop_assert!(!text.contains('\n'));
        let back: LatentPersona = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back.to_json(), text);
        prop_assert_eq!(back, persona);
    }

    #[test]
    fn graph_json_round_trips(
        n_users in 1usize..12,
        n_media in 0usize..5,
        follows in prop::collection::vec((0usize..12, 0usize..12), 0..30),
        interacts in prop::collection::vec((0usize..12, 0usize..5), 0..20),
        believes in prop::collection::vec((0usize..12, belief()), 0..20),
    ) {
        let users: Vec<String> = (0..n_users).map(|i| format!("u{i}")).collect();
        let media: Vec<String> = (0..n_media).map(|i| format!("n{i}")).collect();
        let follow = follows.iter().filter(|(a, b)| *a < n_users && *b < n_users && a != b)
            .map(|(a, b)| (users[*a].clone(), users[*b].clone()));
        let interact = interacts.iter().filter(|(a, m)| *a < n_users && *m < n_media)
            .map(|(a, m)| (users[*a].clone(), media[*m].clone()));
        let beliefs: BTreeSet<BeliefId> = believes.iter().map(|(_, b)| *b).collect();
        let belief_edges = believes.iter().filter(|(a, _)| *a < n_users).map(|(a, b)| (users[*a].clone(), *b));
        let g = HeteroGraph::from_parts(users.clone(), media.clone(), beliefs, follow, interact, belief_edges).unwrap();
        let text = graph_to_json(&g);
        let back = graph_from_json(&text).unwrap();
        prop_assert_eq!(graph_to_json(&back), text);
        prop_assert_eq!(back, g);
    }

    #[test]
    fn embeddings_round_trip(dim in 1usize..16, rows in prop::collection::vec(prop::collection::vec(-1e3f32..1e3, 16), 0..10)) {
        let mut table = EmbeddingTable::new(dim);
        for (i, r) in rows.iter().enumerate() {
            table.insert(NodeRef::user(format!("u{i}")), r[..dim].to_vec()).unwrap();
        }
        let bytes = embeddings_to_bytes(&table);
        let back = embeddings_from_bytes(&bytes).unwrap();
        prop_assert_eq!(embeddings_to_bytes(&back), bytes);
        prop_assert_eq!(back, table);
    }

    #[test]
    fn schedule_stays_within_bounds(total in 1usize..5000, ratio in 0.0f64..0.9, lr in 1e-6f64..1.0) {
        let warmup = (ratio * total as f64).ceil() as usize;
        let mut prev = -1.0;
        for step in 0..=total {
            let v = lr_schedule(step, total, lr, ratio);
            prop_assert!((0.0..=lr).contains(&v));
            if step <= warmup && step < total {
                prop_assert!(v >= prev);
            } else {
                prop_assert!(v <= prev);
            }
            prev = v;
        }
        prop_assert_eq!(lr_schedule(total, total, lr, ratio), 0.0);
    }

    #[test]
    fn radam_moves_against_constant_gradient(g in prop::sample::select(vec![-2.0f64, -0.5, 0.5, 2.0]), steps in 1u64..50) {
        let config = RAdamConfig { weight_decay: 0.0, ..RAdamConfig::default() };
        let mut state = OptimizerState::new(1);
        let mut theta = [0.0f64];
        let mut prev = 0.0;
        for _ in 0..steps {
            radam_step(&mut state, &mut theta, &[g], &config, 1e-3).unwrap();
            prop_assert!(theta[0] * g < 0.0);
            prop_assert!((theta[0] - prev).abs() <= 1e-3 * (1.0 + 1e-9) * 1.0f64.max(g.abs()));
            prev = theta[0];
        }
        prop_assert_eq!(state.t, steps);
    }
}
