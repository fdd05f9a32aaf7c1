use rand::Rng;

use super::{ball_sample, require_finite, Constants, DeviceObjective, Family, ProblemInstance};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose};
use crate::vector::dot;

/// Fixed dissimilarity multiplier; β_i is certified against it.
pub const DISSIMILARITY_ALPHA: f64 = 2.0;
const CERT_SAMPLES: usize = 10_000;
const CERT_MARGIN: f64 = 1.1;
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_MAX_ITERS: usize = 1_000_000;

/// Devices `f_i(w) = (L_q/2)‖w − c_i‖² + a Σ_j cos(w_j)`.
///
/// Declared `L = L_q + a`, `ρ = a`, `μ = 0`. The constants α and β_i of the
/// bounded-dissimilarity condition `‖∇f_i‖² ≤ α‖∇f‖² + β_i` are certified by
/// sampling 10⁴ points in a ball of radius `10·heterogeneity` (radius 1 when
/// the centers coincide) around the mean center, with a 1.1 margin.
pub fn make_nonconvex_instance(
    n: usize,
    d: usize,
    l_quad: f64,
    a: f64,
    sigma: f64,
    heterogeneity: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    if n == 0 {
        return Err(Error::invalid("n", "need at least one device"));
    }
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be at least 1"));
    }
    for (name, v) in [
        ("l_quad", l_quad),
        ("a", a),
        ("sigma", sigma),
        ("heterogeneity", heterogeneity),
    ] {
        require_finite(name, v)?;
    }
    if l_quad <= 0.0 {
        return Err(Error::invalid("l_quad", "must be positive"));
    }
    if a < 0.0 {
        return Err(Error::invalid("a", "must be non-negative"));
    }
    if a > l_quad {
        return Err(Error::invalid(
            "a",
            format!("a = {a} exceeds L_quad = {l_quad}"),
        ));
    }
    if sigma < 0.0 || heterogeneity < 0.0 {
        return Err(Error::invalid(
            "sigma",
            "sigma and heterogeneity must be non-negative",
        ));
    }

    let mut rng = substream(seed, Purpose::Problem, 0);
    let centers: Vec<Vec<f64>> = (0..n)
        .map(|_| ball_sample(d, heterogeneity, &mut rng))
        .collect();
    let mut mean_center = vec![0.0; d];
    for c in &centers {
        for (m, v) in mean_center.iter_mut().zip(c) {
            *m += v / n as f64;
        }
    }
    let devices: Vec<DeviceObjective> = centers
        .into_iter()
        .map(|center| DeviceObjective::NonconvexTrig {
            l_quad,
            center,
            amplitude: a,
        })
        .collect();
    let constants = Constants {
        l: l_quad + a,
        mu: 0.0,
        sigma,
        delta: sigma,
        rho: a,
        alpha: None,
        beta_i: None,
    };
    let mut inst = ProblemInstance::assemble(Family::NonconvexTrig, devices, d, constants);

    // β_i certification
    let radius = if heterogeneity > 0.0 {
        10.0 * heterogeneity
    } else {
        1.0
    };
    let mut excess = vec![0.0f64; n];
    let mut g = vec![0.0; d];
    for _ in 0..CERT_SAMPLES {
        let mut w = ball_sample(d, radius, &mut rng);
        for (wj, m) in w.iter_mut().zip(&mean_center) {
            *wj += m;
        }
        // mix in points near each center too, where device gradients are small
        if rng.random::<f64>() < 0.1 {
            let k = rng.random_range(0..n);
            if let DeviceObjective::NonconvexTrig { center, .. } = &inst.devices[k] {
                w.clone_from(center);
            }
        }
        let full = inst.global_grad_raw(&w);
        let full_sq = dot(&full, &full);
        for (i, e) in excess.iter_mut().enumerate() {
            inst.devices[i].grad_into(&w, &mut g);
            *e = e.max(dot(&g, &g) - DISSIMILARITY_ALPHA * full_sq);
        }
    }
    let beta_i = excess
        .into_iter()
        .map(|e| (CERT_MARGIN * e).max(f64::MIN_POSITIVE))
        .collect();
    inst.constants.alpha = Some(DISSIMILARITY_ALPHA);
    inst.constants.beta_i = Some(beta_i);

    if a < l_quad {
        let start = vec![0.0; d];
        if let Some(w) = inst.gradient_descent_oracle(&start, ORACLE_TOL, ORACLE_MAX_ITERS) {
            inst.set_optimum(w);
        }
    }
    Ok(inst)
}
