mod common;

use ndarray::Array1;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pcn::precision::{update_variances, variance_step, variance_step_floored};
use pcn::train::{adadelta_delta, run_inference, settle, step_activities, Dropout};
use pcn::{Activation, PcNetwork, Schedule, WeightStepper, SIGMA_FLOOR};

fn random_net(seed: u64, tanh: bool) -> (PcNetwork, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(2..=4);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=10)).collect();
    let acts: Vec<Activation> = (0..depth - 1)
        .map(|_| if tanh && rng.random() { Activation::Tanh } else { Activation::Identity })
        .collect();
    let mut net = PcNetwork::new(&widths, &acts, &mut rng).unwrap();
    for layer in &mut net.layers {
        layer.mu.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    }
    (net, rng)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_variance_matches_plain_pc_bitwise(seed in any::<u64>(), supervised in any::<bool>()) {
        let (mut net, mut rng) = random_net(seed, true);
        let widths = net.widths();
        let acts: Vec<Activation> = net.layers.iter().filter(|l| !l.is_top()).map(|l| l.activation).collect();
        let mut plain = common::PlainPc::new(
            net.layers.iter().map(|l| l.mu.clone()).collect(),
            net.layers.iter().filter_map(|l| l.theta.clone()).collect(),
            acts,
        );
        let schedule = Schedule { t_activity: 4, variance_updates_per_sample: 0, ..Schedule::default() };
        let mut stepper = WeightStepper::Sgd;
        for _ in 0..3 {
            let obs = Array1::from_shape_fn(widths[0], |_| rng.random_range(-1.0..1.0));
            let target = supervised.then(|| Array1::from_shape_fn(*widths.last().unwrap(), |_| rng.random_range(-1.0..1.0)));
            run_inference::<ChaCha8Rng>(&mut net, &obs, target.as_ref(), &schedule, &mut stepper, None).unwrap();
            plain.sample(&obs, target.as_ref(), schedule.t_activity, schedule.eta_mu, schedule.eta_theta);
        }
        for (l, layer) in net.layers.iter().enumerate() {
            prop_assert_eq!(common::bits(&layer.mu), common::bits(&plain.mu[l]));
            prop_assert!(layer.sigma.iter().all(|&s| s == 1.0));
            if let Some(theta) = &layer.theta {
                prop_assert_eq!(common::bits2(theta), common::bits2(&plain.theta[l]));
            }
        }
    }

    #[test]
    fn clamped_layers_never_change(seed in any::<u64>(), rate in 0.0f64..0.9) {
        let (mut net, mut rng) = random_net(seed, true);
        let widths = net.widths();
        let obs = Array1::from_shape_fn(widths[0], |_| rng.random_range(-3.0..3.0));
        let target = Array1::from_shape_fn(*widths.last().unwrap(), |_| rng.random_range(-1.0..1.0));
        let mut drop_rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let mut stepper = WeightStepper::Sgd;
        for _ in 0..3 {
            let dropout = Dropout { rate, rng: &mut drop_rng };
            run_inference(&mut net, &obs, Some(&target), &Schedule::default(), &mut stepper, Some(dropout)).unwrap();
            prop_assert_eq!(common::bits(&net.layers[0].mu), common::bits(&obs));
            prop_assert_eq!(common::bits(&net.layers[widths.len() - 1].mu), common::bits(&target));
        }
    }

    #[test]
    fn variances_never_drop_below_floor(
        eps in prop::collection::vec(-1e-2f64..1e-2, 1..8),
        eta in 0.001f64..=1.0,
        floor in SIGMA_FLOOR..1.0,
        steps in 1usize..50,
    ) {
        let eps = Array1::from(eps);
        let mut sigma = Array1::from_elem(eps.len(), 1.0);
        for _ in 0..steps {
            sigma = variance_step_floored(&eps, &sigma, eta, floor);
            prop_assert!(sigma.iter().all(|&s| s >= floor));
        }
        let zero = Array1::zeros(eps.len());
        prop_assert!(variance_step(&zero, &sigma, 1.0).iter().all(|&s| s == SIGMA_FLOOR));
    }

    #[test]
    fn network_variance_update_respects_floor(seed in any::<u64>(), floor in SIGMA_FLOOR..0.5) {
        let (mut net, _) = random_net(seed, true);
        net.compute_errors().unwrap();
        for _ in 0..100 {
            update_variances(&mut net, 1.0, floor);
        }
        for layer in net.layers.iter().filter(|l| !l.is_top()) {
            prop_assert!(layer.sigma.iter().all(|&s| s >= floor));
        }
    }

    #[test]
    fn variance_fixed_point_is_squared_error(e in -5.0f64..5.0, eta in 0.01f64..=1.0) {
        prop_assume!(e * e > SIGMA_FLOOR);
        let eps = Array1::from(vec![e]);
        let sigma = Array1::from(vec![e * e]);
        prop_assert_eq!(variance_step(&eps, &sigma, eta)[0], e * e);
    }

    #[test]
    fn adadelta_step_opposes_gradient(gs in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let (mut ag, mut au) = (0.0, 0.0);
        for g in gs {
            let d = adadelta_delta(g, &mut ag, &mut au, 0.95, 1e-6);
            if g != 0.0 {
                prop_assert_eq!(d.signum(), -g.signum());
            } else {
                prop_assert_eq!(d, 0.0);
            }
            prop_assert!(ag >= 0.0 && au >= 0.0);
        }
    }

    #[test]
    fn small_activity_step_does_not_raise_free_energy(seed in any::<u64>()) {
        let (mut net, _) = random_net(seed, false);
        net.layers[0].clamped = true;
        net.compute_errors().unwrap();
        let before = net.free_energy().unwrap();
        let schedule = Schedule { eta_mu: 1e-4, ..Schedule::default() };
        step_activities(&mut net, &schedule).unwrap();
        net.compute_errors().unwrap();
        prop_assert!(net.free_energy().unwrap() <= before + 1e-12 * before.abs().max(1.0));
    }

    #[test]
    fn more_relaxation_never_raises_free_energy(seed in any::<u64>(), t in 1usize..40) {
        let (mut net, _) = random_net(seed, true);
        net.layers[0].clamped = true;
        let schedule = Schedule { eta_mu: 0.01, ..Schedule::default() };
        let mut short = net.clone();
        settle(&mut short, &schedule, t).unwrap();
        settle(&mut net, &schedule, 2 * t).unwrap();
        let (fs, fl) = (short.free_energy().unwrap(), net.free_energy().unwrap());
        prop_assert!(fl <= fs + 1e-9 * fs.abs().max(1.0), "{} > {}", fl, fs);
    }
}
