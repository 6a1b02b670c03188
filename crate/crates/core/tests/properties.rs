use proptest::prelude::*;
use rand::Rng;

use labsteg::adversary::{average_ranks, BinaryMetrics, ConfusionMatrix};
use labsteg::environment::{rollout, Action, Episode, RewardSpec};
use labsteg::labyrinth::{dijkstra, generate, GenerateConfig, Labyrinth};
use labsteg::num::softmax_with_temperature;
use labsteg::observer::featurize;
use labsteg::rng::seeded;
use labsteg::stego::{frame, pack_symbols, unframe, unpack_symbols, Message};

fn walk(lab: &Labyrinth, seed: u64, cap: usize) -> Episode {
    rollout(lab, &RewardSpec::default(), cap, &mut seeded(seed), |_, r| Action::ALL[r.random_range(0..4)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_layouts_satisfy_acceptance_predicates(seed in any::<u64>()) {
        let lab = generate(&GenerateConfig::default(), &mut seeded(seed)).unwrap().labyrinth;
        prop_assert!(lab.is_pathway(lab.start()) && lab.is_pathway(lab.goal()));
        prop_assert!((8..=16).contains(&lab.obstacle_count()));
        prop_assert_eq!(dijkstra(&lab, lab.start()).unwrap().get(lab.goal()), Some(14));
        prop_assert_eq!(Labyrinth::from_text(&lab.to_text()).unwrap(), lab);
    }

    #[test]
    fn random_walks_are_valid_and_featurize_consistently(maze in 0u64..50, seed in any::<u64>(), cap in 1usize..200) {
        let lab = generate(&GenerateConfig::default(), &mut seeded(maze)).unwrap().labyrinth;
        let ep = walk(&lab, seed, cap);
        prop_assert!(ep.validate(&lab, cap).is_ok());
        prop_assert!(ep.steps <= cap);
        let f = featurize(&ep, 8, 8, cap);
        prop_assert_eq!(f.visits.iter().sum::<u32>() as usize, ep.steps + 1);
        prop_assert_eq!(f.transitions.iter().sum::<u32>() as usize, ep.steps);
        let back: Episode = serde_json::from_str(&serde_json::to_string(&ep).unwrap()).unwrap();
        prop_assert_eq!(featurize(&back, 8, 8, cap), f);
    }

    #[test]
    fn softmax_is_normalized(logits in prop::collection::vec(-700.0f64..700.0, 1..8), tau in 0.01f64..10.0) {
        let p = softmax_with_temperature(&logits, tau);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn framing_round_trips_with_symbol_padding(bits in prop::collection::vec(any::<bool>(), 0..300), k in 1usize..5) {
        let m = Message::new(bits);
        let framed = frame(&m);
        let received = unpack_symbols(&pack_symbols(&framed, k), k);
        prop_assert!(received.len() - framed.len() < k);
        prop_assert_eq!(unframe(&received, k).unwrap(), m);
    }

    #[test]
    fn symbol_packing_is_invertible_on_whole_symbols(symbols in prop::collection::vec(0usize..16, 0..50)) {
        let m = unpack_symbols(&symbols, 4);
        prop_assert_eq!(m.len(), 4 * symbols.len());
        prop_assert_eq!(pack_symbols(&m, 4), symbols);
    }

    #[test]
    fn metrics_are_consistent_with_the_matrix(tn in 0usize..200, fp in 0usize..200, fneg in 0usize..200, tp in 0usize..200) {
        let m = BinaryMetrics::from_confusion(ConfusionMatrix { counts: [[tn, fp], [fneg, tp]] }, None);
        if let Some(p) = m.precision {
            prop_assert!((p * (tp + fp) as f64 - tp as f64).abs() < 1e-9);
        }
        if let (Some(p), Some(r), Some(f)) = (m.precision, m.recall, m.f1) {
            prop_assert!(f <= p.max(r) + 1e-12 && f >= p.min(r) - 1e-12 || f == 0.0);
        }
        if let Some(acc) = m.overall_accuracy {
            prop_assert!((acc * (tn + fp + fneg + tp) as f64 - (tn + tp) as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn ranks_sum_to_triangular_number(values in prop::collection::vec(0u8..5, 1..60)) {
        let xs: Vec<f64> = values.iter().map(|&v| v as f64).collect();
        let n = xs.len() as f64;
        prop_assert!((average_ranks(&xs).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }
}
