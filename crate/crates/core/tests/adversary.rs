use rand::Rng;

use labsteg::adversary::{robustness_sweep, trudy_perturb_rollout, BinaryMetrics, EveConfig, EveHarness, TrudyConfig};
use labsteg::labyrinth::Position;
use labsteg::observer::ObserverModel;
use labsteg::rng::seeded;
use labsteg::stego::{build, build_cover, StegoKey, StegoSystem};

fn system(m: u64) -> (StegoKey, StegoSystem) {
    let key = StegoKey::new(500 + m, m);
    let sys = build(&key).unwrap();
    (key, sys)
}

/// Second implementation of noisy greedy play: explicit coordinates, its
/// own bounds and obstacle checks, the agent only consulted for its choice.
fn reference_steps(sys: &StegoSystem, agent: usize, p: f64, seed: u64, runs: usize) -> f64 {
    let lab = &sys.labyrinth;
    let mut rng = seeded(seed);
    let mut total = 0usize;
    for _ in 0..runs {
        let (mut r, mut c) = (0i64, 0i64);
        let mut t = 0;
        while t < 140 && !(r == 7 && c == 7) {
            let chosen = sys.agents[agent].greedy(lab, Position::new(r as usize, c as usize));
            let a = if rng.random::<f64>() < p { rng.random_range(0..4) } else { chosen as usize };
            let (dr, dc) = [(1, 0), (-1, 0), (0, -1), (0, 1)][a];
            let (nr, nc) = (r + dr, c + dc);
            if (0..8).contains(&nr) && (0..8).contains(&nc) && !lab.is_obstacle(Position::new(nr as usize, nc as usize)) {
                r = nr;
                c = nc;
            }
            t += 1;
        }
        total += t;
    }
    total as f64 / runs as f64
}

#[test]
fn half_noise_mean_steps_match_reference_simulator() {
    let (_, sys) = system(2);
    let mut rng = seeded(77);
    let ours: f64 =
        (0..1000).map(|_| trudy_perturb_rollout(&sys, 0, TrudyConfig { p: 0.5 }, &mut rng).steps as f64).sum::<f64>() / 1000.0;
    let reference = reference_steps(&sys, 0, 0.5, 78, 1000);
    assert!((ours - reference).abs() <= 0.2 * reference, "ours {ours}, reference {reference}");
}

#[test]
fn zero_noise_is_the_clean_rollout_and_full_noise_is_slow() {
    let (_, sys) = system(3);
    let mut rng = seeded(1);
    for i in 0..2 {
        assert_eq!(trudy_perturb_rollout(&sys, i, TrudyConfig { p: 0.0 }, &mut rng), sys.greedy_episode(i));
    }
    let mean: f64 =
        (0..200).map(|_| trudy_perturb_rollout(&sys, 0, TrudyConfig { p: 1.0 }, &mut rng).steps as f64).sum::<f64>() / 200.0;
    assert!(mean > 3.0 * 14.0, "random walk mean {mean}");
}

#[test]
fn sweep_trends() {
    let (key, sys) = system(4);
    let cover = build_cover(&key).unwrap();
    let rows = robustness_sweep(&sys, &cover, &[0.0, 0.8], 50, 9).unwrap();
    assert_eq!(rows[0].cover.completion(), Some(1.0));
    assert_eq!(rows[0].cover.mean_timesteps, Some(14.0));
    assert!(rows[1].cover.mean_timesteps.unwrap() > rows[0].cover.mean_timesteps.unwrap());
    assert!(robustness_sweep(&sys, &cover, &[], 5, 9).is_err());
    assert!(robustness_sweep(&sys, &cover, &[1.5], 5, 9).is_err());
}

fn small_eve() -> EveConfig {
    EveConfig { shadow_count: 2, episodes_per_class: 20, episode_budget: 1500, epochs: 20, ..EveConfig::default() }
}

#[test]
fn zero_classifier_is_at_chance_and_empty_test_is_undefined() {
    let (key, sys) = system(5);
    let cover = build_cover(&key).unwrap();
    let mut eve = EveHarness::new(3, small_eve()).unwrap();
    eve.classifier = ObserverModel::for_grid(2, 8, 8);
    let m = eve.test(&sys, &cover, 40, &mut seeded(2)).unwrap();
    assert_eq!(m.overall_accuracy, Some(0.5));
    let empty = eve.test(&sys, &cover, 0, &mut seeded(2)).unwrap();
    assert_eq!(empty.confusion.total(), 0);
    assert_eq!(empty.overall_accuracy, None);
    assert_eq!(empty.precision, None);
}

#[test]
fn blind_eve_never_holds_the_target_key() {
    let (key, sys) = system(6);
    let cover = build_cover(&key).unwrap();
    let eve = EveHarness::new(4, small_eve()).unwrap();
    assert!(eve.shadow_keys.iter().all(|k| k.fingerprint() != sys.key_fingerprint));
    let mut leaky = EveHarness::new(4, small_eve()).unwrap();
    leaky.shadow_keys[1] = key.clone();
    assert!(leaky.test(&sys, &cover, 4, &mut seeded(0)).is_err());
    let control = EveHarness::with_leaked_key(4, small_eve(), key).unwrap();
    assert!(control.test(&sys, &cover, 4, &mut seeded(0)).is_ok());
}

#[test]
fn learning_phase_fits_own_corpus() {
    let mut eve = EveHarness::new(8, small_eve()).unwrap();
    let m = eve.train().unwrap();
    assert_eq!(m.confusion.total(), 2 * 2 * 20);
    assert!(m.overall_accuracy.unwrap() > 0.6, "{m:?}");
    let recomputed = BinaryMetrics::from_confusion(m.confusion, m.auc_roc);
    assert_eq!(recomputed, m);
}

#[test]
fn identical_cover_and_stego_paths_are_at_chance() {
    let (_, sys) = system(7);
    let mut eve = EveHarness::new(8, small_eve()).unwrap();
    eve.train().unwrap();
    let ep = sys.greedy_episode(0);
    let s = eve.score(&ep);
    let m = BinaryMetrics::evaluate(&[true, false, true, false], &[s, s, s, s]);
    assert_eq!(m.overall_accuracy, Some(0.5));
    assert_eq!(m.auc_roc, Some(0.5));
}
