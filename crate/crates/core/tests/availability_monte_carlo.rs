use mifa_sim::availability::{
    bernoulli_bounds, generate_trace, ActiveSet, AvailabilityModel, AvailabilityProcess, TauTracker,
};
use proptest::prelude::*;

#[test]
fn bernoulli_marginals() {
    let p = vec![0.05, 0.3, 0.5, 0.77, 1.0];
    let model = AvailabilityModel::bernoulli(p.clone()).unwrap();
    let draws = 100_000;
    let t = 4;
    let mut counts = vec![0usize; p.len()];
    for seed in 0..draws {
        let mut proc = AvailabilityProcess::new(model.clone(), seed as u64);
        let mut a = proc.next_active_set().unwrap();
        while a.round < t {
            a = proc.next_active_set().unwrap();
        }
        for &i in a.members() {
            counts[i] += 1;
        }
    }
    for (i, &pi) in p.iter().enumerate() {
        let freq = counts[i] as f64 / draws as f64;
        let tol = 4.0 * (pi * (1.0 - pi) / draws as f64).sqrt();
        assert!((freq - pi).abs() <= tol, "device {i}: {freq} vs {pi}");
    }
}

#[test]
fn geometric_tail_at_large_t() {
    // τ at rounds 100 apart in long traces; two snapshots share a value only
    // after 100 straight absences
    let p = [0.2, 0.5, 0.9];
    let model = AvailabilityModel::bernoulli(p.to_vec()).unwrap();
    let ks = [1u64, 2, 3, 5];
    let mut hits = [[0usize; 4]; 3];
    let mut samples = 0usize;
    for seed in 0..100u64 {
        let mut proc = AvailabilityProcess::new(model.clone(), seed);
        let mut tracker = TauTracker::new(p.len());
        for t in 1..=5_000usize {
            tracker.update(&proc.next_active_set().unwrap()).unwrap();
            if t % 100 == 0 {
                samples += 1;
                for (i, &tau) in tracker.tau().iter().enumerate() {
                    for (q, &k) in ks.iter().enumerate() {
                        hits[i][q] += usize::from(tau >= k);
                    }
                }
            }
        }
    }
    let m = samples as f64;
    for (i, &pi) in p.iter().enumerate() {
        for (q, &k) in ks.iter().enumerate() {
            let expected = (1.0 - pi).powi(k as i32);
            let emp = hits[i][q] as f64 / m;
            let se = (expected * (1.0 - expected) / m).sqrt();
            assert!(
                (emp - expected).abs() <= 4.0 * se,
                "p={pi} k={k}: {emp} vs {expected}"
            );
        }
    }
}

#[test]
fn tau_bar_tracks_mean_inverse_probability() {
    let n = 20;
    let p: Vec<f64> = (0..n)
        .map(|i| 0.1 + 0.9 * i as f64 / (n - 1) as f64)
        .collect();
    let model = AvailabilityModel::bernoulli(p.clone()).unwrap();
    let rounds = 2_000;
    let shape = bernoulli_bounds(&p, rounds, 0.01)
        .unwrap()
        .tau_bar_bound_shape;
    let mut ratio = 0.0;
    for seed in 0..200u64 {
        let trace = generate_trace(&model, rounds, seed).unwrap();
        let mut tracker = TauTracker::new(n);
        for a in &trace {
            tracker.update(a).unwrap();
        }
        ratio += tracker.stats().unwrap().tau_bar / shape;
    }
    ratio /= 200.0;
    assert!(ratio > 0.0 && ratio <= 3.0, "{ratio}");
}

fn model_strategy() -> impl Strategy<Value = AvailabilityModel> {
    prop_oneof![
        (1usize..8).prop_map(|n| AvailabilityModel::Full { n }),
        prop::collection::vec(0.01f64..=1.0, 1..8)
            .prop_map(|p| AvailabilityModel::bernoulli(p).unwrap()),
        prop::collection::vec((1usize..6, 0usize..6), 1..8).prop_map(|v| {
            let (period, phase) = v.into_iter().unzip();
            AvailabilityModel::periodic(period, phase).unwrap()
        }),
        (1usize..8, 0.0f64..5.0, 1.5f64..10.0)
            .prop_map(|(n, t0, b)| AvailabilityModel::adversarial(n, t0, b).unwrap()),
    ]
}

proptest! {
    #[test]
    fn first_round_is_everyone(model in model_strategy(), seed in any::<u64>()) {
        let trace = generate_trace(&model, 3, seed).unwrap();
        prop_assert_eq!(&trace[0], &ActiveSet::all(1, model.n()));
    }

    #[test]
    fn declared_caps_hold(model in model_strategy(), seed in any::<u64>()) {
        if let Some(nu) = model.declared_nu() {
            let mut tracker = TauTracker::new(model.n());
            for a in generate_trace(&model, 60, seed).unwrap() {
                tracker.update(&a).unwrap();
                for (i, &tau) in tracker.tau().iter().enumerate() {
                    prop_assert!(tau as f64 <= nu[i]);
                }
            }
        }
    }
}
