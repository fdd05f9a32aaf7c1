use mifa_sim_demo::{compare_curves, tau_tail_report, wait_report, CompareRequest};

fn request(algorithms: &[&str]) -> CompareRequest {
    CompareRequest {
        n: 6,
        d: 3,
        p_min: 0.2,
        rounds: 1000,
        local_steps: 2,
        eta0: 0.1,
        sigma: 0.3,
        heterogeneity: 1.0,
        seed: 3,
        algorithms: algorithms.iter().map(|s| s.to_string()).collect(),
    }
}

#[test]
fn curves_are_thinned_and_labelled() {
    let curves = compare_curves(&request(&["mifa", "sampling_fedavg:2"])).unwrap();
    assert_eq!(curves.len(), 2);
    assert_eq!(curves[1].algorithm, "sampling_fedavg:2");
    for c in &curves {
        assert!(c.t.len() <= 400 && c.t.len() > 100);
        assert_eq!(c.t[0], 1);
        assert_eq!(*c.t.last().unwrap(), 1000);
        assert!(c.t.windows(2).all(|w| w[0] < w[1]));
        assert!(c.gap.iter().all(|g| g.is_finite() && *g >= 0.0));
    }
    assert!(curves[1].t_prime.last() < curves[0].t_prime.last());
}

#[test]
fn bad_requests_are_reported() {
    assert!(compare_curves(&request(&["fedprox"])).is_err());
    assert!(compare_curves(&request(&[])).is_err());
    let mut r = request(&["mifa"]);
    r.p_min = 0.0;
    assert!(compare_curves(&r).is_err());
}

#[test]
fn tail_report_for_least_available_device() {
    let r = tau_tail_report(5, 0.25, 500, 50, 1).unwrap();
    assert_eq!(r.p, 0.25);
    assert_eq!(r.k.len(), 41);
    assert_eq!(r.empirical[0], 1.0);
    assert_eq!(r.expected[2], 0.75 * 0.75);
}

#[test]
fn wait_report_covers_every_sample_size() {
    let r = wait_report(4, 1.0, 20, 0).unwrap();
    assert_eq!(r.s, vec![1, 2, 3, 4]);
    assert!(r.mean_wait.iter().all(|&w| w == 1.0));
    assert_eq!(r.lower_bound, vec![0.25, 0.5, 0.75, 1.0]);
}
