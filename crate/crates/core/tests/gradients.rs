use rand::Rng;

use labsteg::environment::{rollout, Action, RewardSpec, Transition};
use labsteg::labyrinth::{generate, GenerateConfig, Labyrinth};
use labsteg::observer::{featurize, ObserverModel};
use labsteg::rng::seeded;
use labsteg::valuefn::{DenseParams, DenseQNet};

const H: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

fn maze() -> Labyrinth {
    generate(&GenerateConfig::default(), &mut seeded(21)).unwrap().labyrinth
}

fn random_walks(lab: &Labyrinth, n: usize, seed: u64) -> Vec<labsteg::environment::Episode> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| rollout(lab, &RewardSpec::default(), 140, &mut rng, |_, r| Action::ALL[r.random_range(0..4)]))
        .collect()
}

#[test]
fn observer_gradient_matches_finite_differences_on_every_parameter() {
    let lab = maze();
    let mut rng = seeded(1);
    let mut model = ObserverModel::<f64>::for_grid(3, 8, 8);
    for i in 0..model.param_count() {
        *model.param_mut(i) = rng.random_range(-0.5..0.5);
    }
    let feats: Vec<Vec<(usize, f64)>> = random_walks(&lab, 6, 2).iter().map(|e| featurize(e, 8, 8, 140).to_sparse()).collect();
    let batch: Vec<(&[(usize, f64)], usize)> = feats.iter().enumerate().map(|(j, f)| (f.as_slice(), j % 3)).collect();
    let (_, grad) = model.loss_and_gradient(&batch);
    let mut worst = 0.0f64;
    for i in 0..model.param_count() {
        let mut m = model.clone();
        *m.param_mut(i) += H;
        let up = m.loss_and_gradient(&batch).0;
        *m.param_mut(i) -= 2.0 * H;
        let down = m.loss_and_gradient(&batch).0;
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * H)));
    }
    assert!(worst < 1e-4, "worst relative error {worst}");
}

fn dense_check(net: &DenseQNet<f64>, lab: &Labyrinth, batch: &[Transition]) -> f64 {
    let (_, grad) = net.loss_and_gradient(lab, batch, 0.95);
    let mut worst = 0.0f64;
    for i in 0..net.online.theta.len() {
        let mut n = net.clone();
        n.online.theta[i] += H;
        let up = n.loss_and_gradient(lab, batch, 0.95).0;
        n.online.theta[i] -= 2.0 * H;
        let down = n.loss_and_gradient(lab, batch, 0.95).0;
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * H)));
    }
    worst
}

#[test]
fn dense_single_sample_gradient_matches_finite_differences() {
    let lab = maze();
    let mut rng = seeded(3);
    let mut net = DenseQNet::<f64>::new(&lab, 8, 100, &mut rng);
    for w in net.online.theta.iter_mut() {
        *w += rng.random_range(-0.2..0.2);
    }
    let ep = &random_walks(&lab, 1, 4)[0];
    for t in ep.transitions().take(5) {
        let worst = dense_check(&net, &lab, &[t]);
        assert!(worst < 1e-4, "worst relative error {worst}");
    }
}

#[test]
fn dense_terminal_sample_gradient_matches_finite_differences() {
    let lab = Labyrinth::open(8, 8);
    let mut rng = seeded(5);
    let net = DenseQNet::from_params(DenseParams::random(192, 6, 4, &mut rng), 10);
    let terminal = Transition {
        state: labsteg::labyrinth::Position::new(6, 7),
        action: Action::Up,
        reward: 0.96,
        next_state: lab.goal(),
        terminal: true,
    };
    let worst = dense_check(&net, &lab, &[terminal]);
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn observer_loss_decreases_on_repeated_sample() {
    let lab = maze();
    let f = featurize(&random_walks(&lab, 1, 9)[0], 8, 8, 140).to_sparse::<f64>();
    let mut model = ObserverModel::<f64>::for_grid(2, 8, 8);
    let mut last = f64::INFINITY;
    for _ in 0..20 {
        let loss = model.fit_step(&[(f.as_slice(), 1)], 0.05).unwrap();
        assert!(loss < last);
        last = loss;
    }
}
