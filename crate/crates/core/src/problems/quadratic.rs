use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use super::{ball_sample, require_finite, Constants, DeviceObjective, Family, ProblemInstance};
use crate::error::{Error, Result};
use crate::rng::{substream, Purpose, RandomStream};
use crate::vector::ParamVector;

fn random_orthogonal(d: usize, rng: &mut RandomStream) -> DMatrix<f64> {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution Haar
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            for row in 0..d {
                q[(row, c)] = -q[(row, c)];
            }
        }
    }
    q
}

fn linspace(lo: f64, hi: f64, k: usize, idx: usize) -> f64 {
    if k <= 1 {
        lo
    } else {
        lo + (hi - lo) * idx as f64 / (k - 1) as f64
    }
}

/// Random quadratic devices `f_i(w) = ½(w − c_i)ᵀH_i(w − c_i)`.
///
/// Each `H_i` is a random orthogonal conjugation of a diagonal whose
/// eigenvalues are linearly spaced over `[mu, l]`, so both endpoints are
/// attained exactly. In one dimension the spacing runs across devices
/// instead. Centers are uniform in the ball of radius `heterogeneity`.
pub fn make_quadratic_instance(
    n: usize,
    d: usize,
    mu: f64,
    l: f64,
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
        ("mu", mu),
        ("l", l),
        ("sigma", sigma),
        ("heterogeneity", heterogeneity),
    ] {
        require_finite(name, v)?;
    }
    if mu <= 0.0 {
        return Err(Error::invalid("mu", "must be positive"));
    }
    if mu > l {
        return Err(Error::invalid("mu", format!("mu = {mu} exceeds L = {l}")));
    }
    if sigma < 0.0 || heterogeneity < 0.0 {
        return Err(Error::invalid(
            "sigma",
            "sigma and heterogeneity must be non-negative",
        ));
    }

    let mut rng = substream(seed, Purpose::Problem, 0);
    let mut hessians = Vec::with_capacity(n);
    let mut centers = Vec::with_capacity(n);
    for i in 0..n {
        let eig: Vec<f64> = if d == 1 {
            vec![linspace(mu, l, n, i)]
        } else {
            (0..d).map(|k| linspace(mu, l, d, k)).collect()
        };
        let q = random_orthogonal(d, &mut rng);
        let h = &q * DMatrix::from_diagonal(&DVector::from_vec(eig)) * q.transpose();
        hessians.push((&h + h.transpose()) * 0.5);
        centers.push(ball_sample(d, heterogeneity, &mut rng));
    }
    build(hessians, centers, mu, l, sigma)
}

/// Quadratic instance from explicit Hessians and centers. μ and L are taken
/// from the extreme eigenvalues over all devices.
pub fn make_quadratic_from_parts(
    hessians: Vec<DMatrix<f64>>,
    centers: Vec<Vec<f64>>,
    sigma: f64,
) -> Result<ProblemInstance> {
    if hessians.is_empty() || hessians.len() != centers.len() {
        return Err(Error::invalid(
            "hessians",
            "need one Hessian per center and at least one device",
        ));
    }
    let d = centers[0].len();
    if d == 0 {
        return Err(Error::invalid("d", "dimension must be at least 1"));
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (h, c) in hessians.iter().zip(&centers) {
        if h.nrows() != d || h.ncols() != d || c.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: c.len(),
            });
        }
        if (h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
            return Err(Error::invalid("hessians", "must be symmetric"));
        }
        let ev = h.symmetric_eigenvalues();
        lo = lo.min(ev.min());
        hi = hi.max(ev.max());
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("centers", "must be finite"));
        }
    }
    if lo <= 0.0 {
        return Err(Error::invalid("hessians", "must be positive definite"));
    }
    require_finite("sigma", sigma)?;
    if sigma < 0.0 {
        return Err(Error::invalid("sigma", "must be non-negative"));
    }
    build(hessians, centers, lo, hi, sigma)
}

fn build(
    hessians: Vec<DMatrix<f64>>,
    centers: Vec<Vec<f64>>,
    mu: f64,
    l: f64,
    sigma: f64,
) -> Result<ProblemInstance> {
    let d = centers[0].len();
    let mut h_sum = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (h, c) in hessians.iter().zip(&centers) {
        h_sum += h;
        rhs += h * DVector::from_column_slice(c);
    }
    let chol = h_sum
        .cholesky()
        .ok_or_else(|| Error::invalid("hessians", "sum is not positive definite"))?;
    let w_star = chol.solve(&rhs);

    let devices = hessians
        .into_iter()
        .zip(centers)
        .map(|(hessian, center)| DeviceObjective::Quadratic { hessian, center })
        .collect();
    let constants = Constants {
        l,
        mu,
        sigma,
        delta: sigma,
        rho: 0.0,
        alpha: None,
        beta_i: None,
    };
    let mut inst = ProblemInstance::assemble(Family::Quadratic, devices, d, constants);
    inst.set_optimum(ParamVector::from_raw(w_star.as_slice().to_vec()));
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(h: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, h)
    }

    #[test]
    fn single_centered_quadratic() {
        let inst = make_quadratic_from_parts(vec![scalar(1.0)], vec![vec![0.0]], 0.0).unwrap();
        let opt = inst.optimum().unwrap();
        assert_eq!(opt.w_star.as_slice(), &[0.0]);
        assert_eq!(opt.f_star, 0.0);
        assert_eq!(opt.dissimilarity, 0.0);
    }

    #[test]
    fn two_symmetric_quadratics() {
        let inst = make_quadratic_from_parts(
            vec![scalar(1.0), scalar(1.0)],
            vec![vec![-1.0], vec![1.0]],
            0.0,
        )
        .unwrap();
        let opt = inst.optimum().unwrap();
        assert!(opt.w_star[0].abs() < 1e-15);
        assert!((opt.f_star - 0.5).abs() < 1e-15);
        assert!((opt.dissimilarity - 1.0).abs() < 1e-15);
        let w0 = ParamVector::zeros(1);
        assert_eq!(inst.grad(0, &w0).unwrap()[0], 1.0);
        assert_eq!(inst.grad(1, &w0).unwrap()[0], -1.0);
        assert!(inst.suboptimality(&w0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn solved_optimum_has_tiny_residual() {
        let inst = make_quadratic_instance(10, 5, 1.0, 10.0, 0.0, 2.0, 7).unwrap();
        let w = &inst.optimum().unwrap().w_star;
        // residual from an independent evaluation of each device gradient
        let mut total = [0.0; 5];
        for i in 0..10 {
            let DeviceObjective::Quadratic { hessian, center } = inst.device(i).unwrap() else {
                unreachable!()
            };
            for r in 0..5 {
                for c in 0..5 {
                    total[r] += hessian[(r, c)] * (w[c] - center[c]) / 10.0;
                }
            }
        }
        let res = total.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(res < 1e-10, "{res}");
    }

    #[test]
    fn eigenvalue_endpoints_attained() {
        let inst = make_quadratic_instance(3, 4, 0.5, 8.0, 0.0, 1.0, 2).unwrap();
        for i in 0..3 {
            let ev = inst
                .hessian(i, &ParamVector::zeros(4))
                .unwrap()
                .symmetric_eigenvalues();
            assert!((ev.min() - 0.5).abs() < 1e-10);
            assert!((ev.max() - 8.0).abs() < 1e-10);
        }
    }

    #[test]
    fn stored_dissimilarity_reproducible() {
        let inst = make_quadratic_instance(6, 3, 1.0, 3.0, 0.0, 2.0, 4).unwrap();
        let opt = inst.optimum().unwrap();
        let again = inst.dissimilarity_at(&opt.w_star);
        assert!((again - opt.dissimilarity).abs() <= 1e-10 * opt.dissimilarity);
        assert!(inst.suboptimality(&opt.w_star).unwrap().abs() <= 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(make_quadratic_instance(0, 2, 1.0, 2.0, 0.0, 1.0, 0).is_err());
        assert!(make_quadratic_instance(2, 0, 1.0, 2.0, 0.0, 1.0, 0).is_err());
        assert!(make_quadratic_instance(2, 2, 3.0, 2.0, 0.0, 1.0, 0).is_err());
        assert!(make_quadratic_instance(2, 2, 1.0, f64::NAN, 0.0, 1.0, 0).is_err());
        assert!(make_quadratic_instance(2, 2, 1.0, 2.0, f64::INFINITY, 1.0, 0).is_err());
    }
}
