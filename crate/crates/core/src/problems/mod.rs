//! Synthetic federated objectives `f(w) = (1/N) Σ f_i(w)` with exact and
//! stochastic gradient oracles and certified constants.

mod logistic;
mod nonconvex;
mod quadratic;

pub use logistic::{make_logistic_from_samples, make_logistic_instance, LogisticSample};
pub use nonconvex::make_nonconvex_instance;
pub use quadratic::{make_quadratic_from_parts, make_quadratic_instance};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;
use crate::vector::{dot, ParamVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Quadratic,
    Logistic,
    NonconvexTrig,
}

impl Family {
    pub fn is_convex(self) -> bool {
        !matches!(self, Family::NonconvexTrig)
    }
}

/// One device's local objective `f_i`.
#[derive(Debug, Clone)]
pub enum DeviceObjective {
    /// `½ (w − c)ᵀ H (w − c)`
    Quadratic {
        hessian: DMatrix<f64>,
        center: Vec<f64>,
    },
    /// Mean binary logistic loss plus `(λ/2)‖w‖²`.
    Logistic {
        features: Vec<Vec<f64>>,
        labels: Vec<f64>,
        lambda: f64,
    },
    /// `(L_q/2)‖w − c‖² + a Σ_j cos(w_j)`
    NonconvexTrig {
        l_quad: f64,
        center: Vec<f64>,
        amplitude: f64,
    },
}

fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl DeviceObjective {
    pub fn value(&self, w: &[f64]) -> f64 {
        match self {
            DeviceObjective::Quadratic { hessian, center } => {
                let diff: Vec<f64> = w.iter().zip(center).map(|(a, b)| a - b).collect();
                let d = diff.len();
                let mut acc = 0.0;
                for r in 0..d {
                    let mut row = 0.0;
                    for c in 0..d {
                        row += hessian[(r, c)] * diff[c];
                    }
                    acc += diff[r] * row;
                }
                0.5 * acc
            }
            DeviceObjective::Logistic {
                features,
                labels,
                lambda,
            } => {
                let m = features.len() as f64;
                let loss: f64 = features
                    .iter()
                    .zip(labels)
                    .map(|(x, y)| log1p_exp(-y * dot(x, w)))
                    .sum();
                loss / m + 0.5 * lambda * dot(w, w)
            }
            DeviceObjective::NonconvexTrig {
                l_quad,
                center,
                amplitude,
            } => {
                let mut q = 0.0;
                let mut trig = 0.0;
                for (wj, cj) in w.iter().zip(center) {
                    q += (wj - cj) * (wj - cj);
                    trig += wj.cos();
                }
                0.5 * l_quad * q + amplitude * trig
            }
        }
    }

    pub fn grad_into(&self, w: &[f64], out: &mut [f64]) {
        match self {
            DeviceObjective::Quadratic { hessian, center } => {
                let d = w.len();
                for r in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += hessian[(r, c)] * (w[c] - center[c]);
                    }
                    out[r] = acc;
                }
            }
            DeviceObjective::Logistic {
                features,
                labels,
                lambda,
            } => {
                let m = features.len() as f64;
                out.iter_mut().for_each(|o| *o = 0.0);
                for (x, y) in features.iter().zip(labels) {
                    let s = -y * sigmoid(-y * dot(x, w));
                    for (o, xj) in out.iter_mut().zip(x) {
                        *o += s * xj;
                    }
                }
                for (o, wj) in out.iter_mut().zip(w) {
                    *o = *o / m + lambda * wj;
                }
            }
            DeviceObjective::NonconvexTrig {
                l_quad,
                center,
                amplitude,
            } => {
                for ((o, wj), cj) in out.iter_mut().zip(w).zip(center) {
                    *o = l_quad * (wj - cj) - amplitude * wj.sin();
                }
            }
        }
    }

    pub fn hessian(&self, w: &[f64]) -> DMatrix<f64> {
        let d = w.len();
        match self {
            DeviceObjective::Quadratic { hessian, .. } => hessian.clone(),
            DeviceObjective::Logistic {
                features,
                labels,
                lambda,
            } => {
                let m = features.len() as f64;
                let mut h = DMatrix::<f64>::identity(d, d) * *lambda;
                for (x, y) in features.iter().zip(labels) {
                    let s = sigmoid(-y * dot(x, w));
                    let c = s * (1.0 - s) / m;
                    for r in 0..d {
                        for k in 0..d {
                            h[(r, k)] += c * x[r] * x[k];
                        }
                    }
                }
                h
            }
            DeviceObjective::NonconvexTrig {
                l_quad, amplitude, ..
            } => DMatrix::from_fn(d, d, |r, k| {
                if r == k {
                    l_quad - amplitude * w[r].cos()
                } else {
                    0.0
                }
            }),
        }
    }
}

/// Certified constants of an instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Constants {
    /// smoothness
    pub l: f64,
    /// strong convexity (0 for the non-convex family)
    pub mu: f64,
    /// noise std-dev bound: E‖noise‖² ≤ σ²
    pub sigma: f64,
    /// almost-sure noise bound
    pub delta: f64,
    /// Hessian Lipschitz constant
    pub rho: f64,
    /// gradient dissimilarity `‖∇f_i‖² ≤ α‖∇f‖² + β_i` (non-convex family only)
    pub alpha: Option<f64>,
    pub beta_i: Option<Vec<f64>>,
}

impl Constants {
    pub fn beta(&self) -> Option<f64> {
        self.beta_i
            .as_ref()
            .map(|b| b.iter().sum::<f64>() / b.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub w_star: ParamVector,
    pub f_star: f64,
    /// `(1/N) Σ ‖∇f_i(w*)‖²`
    pub dissimilarity: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    family: Family,
    devices: Vec<DeviceObjective>,
    dim: usize,
    constants: Constants,
    optimum: Option<Optimum>,
}

impl ProblemInstance {
    pub(crate) fn assemble(
        family: Family,
        devices: Vec<DeviceObjective>,
        dim: usize,
        constants: Constants,
    ) -> Self {
        ProblemInstance {
            family,
            devices,
            dim,
            constants,
            optimum: None,
        }
    }

    pub(crate) fn set_optimum(&mut self, w_star: ParamVector) {
        let f_star = self.global_value_raw(w_star.as_slice());
        let dissimilarity = self.dissimilarity_at(&w_star);
        self.optimum = Some(Optimum {
            w_star,
            f_star,
            dissimilarity,
        });
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn n(&self) -> usize {
        self.devices.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn constants(&self) -> &Constants {
        &self.constants
    }

    pub fn optimum(&self) -> Option<&Optimum> {
        self.optimum.as_ref()
    }

    pub fn device(&self, i: usize) -> Result<&DeviceObjective> {
        self.devices.get(i).ok_or(Error::DeviceOutOfRange {
            id: i,
            n: self.devices.len(),
        })
    }

    fn check(&self, i: usize, w: &ParamVector) -> Result<()> {
        self.device(i)?;
        self.check_w(w)
    }

    fn check_w(&self, w: &ParamVector) -> Result<()> {
        if w.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.dim(),
            });
        }
        if !w.is_finite() {
            return Err(Error::invalid("w", "entries must be finite"));
        }
        Ok(())
    }

    pub fn value(&self, i: usize, w: &ParamVector) -> Result<f64> {
        self.check(i, w)?;
        Ok(self.devices[i].value(w.as_slice()))
    }

    /// Exact `∇f_i(w)`.
    pub fn grad(&self, i: usize, w: &ParamVector) -> Result<ParamVector> {
        self.check(i, w)?;
        let mut out = vec![0.0; self.dim];
        self.devices[i].grad_into(w.as_slice(), &mut out);
        Ok(ParamVector::from_raw(out))
    }

    pub fn hessian(&self, i: usize, w: &ParamVector) -> Result<DMatrix<f64>> {
        self.check(i, w)?;
        Ok(self.devices[i].hessian(w.as_slice()))
    }

    /// Unbiased stochastic gradient. Quadratic and trig families add noise
    /// drawn uniformly from the sphere of radius σ; logistic samples one
    /// local example.
    pub fn stoch_grad(
        &self,
        i: usize,
        w: &ParamVector,
        rng: &mut RandomStream,
    ) -> Result<ParamVector> {
        self.check(i, w)?;
        let mut out = vec![0.0; self.dim];
        self.stoch_grad_into(i, w.as_slice(), rng, &mut out);
        Ok(ParamVector::from_raw(out))
    }

    /// Unchecked fast path used by local SGD.
    pub(crate) fn stoch_grad_into(
        &self,
        i: usize,
        w: &[f64],
        rng: &mut RandomStream,
        out: &mut [f64],
    ) {
        match &self.devices[i] {
            DeviceObjective::Logistic {
                features,
                labels,
                lambda,
            } => {
                let j = rng.random_range(0..features.len());
                let (x, y) = (&features[j], labels[j]);
                let s = -y * sigmoid(-y * dot(x, w));
                for ((o, xj), wj) in out.iter_mut().zip(x).zip(w) {
                    *o = s * xj + lambda * wj;
                }
            }
            dev => {
                dev.grad_into(w, out);
                let sigma = self.constants.sigma;
                if sigma > 0.0 {
                    let noise = sphere_sample(self.dim, sigma, rng);
                    for (o, z) in out.iter_mut().zip(&noise) {
                        *o += z;
                    }
                }
            }
        }
    }

    fn global_value_raw(&self, w: &[f64]) -> f64 {
        self.devices.iter().map(|f| f.value(w)).sum::<f64>() / self.n() as f64
    }

    pub(crate) fn global_grad_raw(&self, w: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        let mut g = vec![0.0; self.dim];
        for f in &self.devices {
            f.grad_into(w, &mut g);
            for (t, v) in total.iter_mut().zip(&g) {
                *t += v;
            }
        }
        let n = self.n() as f64;
        total.iter_mut().for_each(|t| *t /= n);
        total
    }

    pub fn global_value(&self, w: &ParamVector) -> Result<f64> {
        self.check_w(w)?;
        Ok(self.global_value_raw(w.as_slice()))
    }

    pub fn global_grad(&self, w: &ParamVector) -> Result<ParamVector> {
        self.check_w(w)?;
        Ok(ParamVector::from_raw(self.global_grad_raw(w.as_slice())))
    }

    /// `f(w) − f*`; an error when the instance has no certified optimum.
    pub fn suboptimality(&self, w: &ParamVector) -> Result<f64> {
        let opt = self.optimum.as_ref().ok_or(Error::NoCertifiedOptimum)?;
        Ok(self.global_value(w)? - opt.f_star)
    }

    /// `(1/N) Σ ‖∇f_i(w)‖²`; equals D at `w*`.
    pub fn dissimilarity_at(&self, w: &ParamVector) -> f64 {
        let mut g = vec![0.0; self.dim];
        let mut acc = 0.0;
        for f in &self.devices {
            f.grad_into(w.as_slice(), &mut g);
            acc += dot(&g, &g);
        }
        acc / self.n() as f64
    }

    /// Deterministic full-batch gradient descent with step `1/L` until
    /// `‖∇f‖ ≤ tol · max(1, ‖∇f(start)‖)`. `None` if the cap is hit.
    pub(crate) fn gradient_descent_oracle(
        &self,
        start: &[f64],
        tol: f64,
        max_iters: usize,
    ) -> Option<ParamVector> {
        let step = 1.0 / self.constants.l;
        let mut w = start.to_vec();
        let g0 = self.global_grad_raw(&w);
        let target = tol * dot(&g0, &g0).sqrt().max(1.0);
        for _ in 0..max_iters {
            let g = self.global_grad_raw(&w);
            if dot(&g, &g).sqrt() <= target {
                return Some(ParamVector::from_raw(w));
            }
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= step * gj;
            }
            if w.iter().any(|v| !v.is_finite()) {
                return None;
            }
        }
        None
    }
}

/// Uniform draw from the sphere of the given radius in `R^d`.
pub fn sphere_sample(d: usize, radius: f64, rng: &mut RandomStream) -> Vec<f64> {
    loop {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let n = dot(&z, &z).sqrt();
        if n > 1e-300 {
            return z.into_iter().map(|v| radius * v / n).collect();
        }
    }
}

/// Uniform draw from the ball of the given radius in `R^d`.
pub(crate) fn ball_sample(d: usize, radius: f64, rng: &mut RandomStream) -> Vec<f64> {
    let u: f64 = rng.random();
    sphere_sample(d, radius * u.powf(1.0 / d as f64), rng)
}

pub(crate) fn require_finite(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, "must be finite"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{substream, Purpose};

    fn fd_grad(inst: &ProblemInstance, i: usize, w: &ParamVector) -> Vec<f64> {
        let h = 1e-5;
        (0..w.dim())
            .map(|j| {
                let mut p = w.clone();
                let mut m = w.clone();
                p[j] += h;
                m[j] -= h;
                (inst.value(i, &p).unwrap() - inst.value(i, &m).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1.0);
        num / den
    }

    fn families() -> Vec<ProblemInstance> {
        vec![
            make_quadratic_instance(4, 3, 1.0, 5.0, 0.5, 2.0, 1).unwrap(),
            make_logistic_instance(3, 3, 6, 0.1, 0.5, 2).unwrap(),
            make_nonconvex_instance(4, 3, 2.0, 1.0, 0.5, 1.5, 3).unwrap(),
        ]
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = substream(11, Purpose::Study, 0);
        for inst in families() {
            for _ in 0..50 {
                let i = rng.random_range(0..inst.n());
                let w = ParamVector::new(ball_sample(inst.dim(), 3.0, &mut rng)).unwrap();
                let g = inst.grad(i, &w).unwrap();
                let fd = fd_grad(&inst, i, &w);
                assert!(rel_err(g.as_slice(), &fd) < 1e-5, "{:?}", inst.family());
            }
        }
    }

    #[test]
    fn strong_convexity_and_smoothness_certificates() {
        let mut rng = substream(12, Purpose::Study, 0);
        for inst in families() {
            let c = inst.constants().clone();
            for _ in 0..100 {
                let i = rng.random_range(0..inst.n());
                let w = ParamVector::new(ball_sample(inst.dim(), 4.0, &mut rng)).unwrap();
                let v = ParamVector::new(ball_sample(inst.dim(), 4.0, &mut rng)).unwrap();
                let gw = inst.grad(i, &w).unwrap();
                let gv = inst.grad(i, &v).unwrap();
                let dg = gw.sub(&gv);
                let dw = w.sub(&v);
                assert!(dg.norm() <= c.l * dw.norm() * (1.0 + 1e-12) + 1e-12);
                if inst.family().is_convex() {
                    assert!(dg.dot(&dw) >= c.mu * dw.norm_sq() * (1.0 - 1e-12) - 1e-12);
                }
            }
        }
    }

    #[test]
    fn hessian_lipschitz_certificate() {
        let mut rng = substream(13, Purpose::Study, 0);
        for inst in families() {
            let rho = inst.constants().rho;
            for _ in 0..100 {
                let i = rng.random_range(0..inst.n());
                let w = ParamVector::new(ball_sample(inst.dim(), 4.0, &mut rng)).unwrap();
                let v = ParamVector::new(ball_sample(inst.dim(), 4.0, &mut rng)).unwrap();
                let dh = inst.hessian(i, &w).unwrap() - inst.hessian(i, &v).unwrap();
                let spec = dh.symmetric_eigenvalues().amax();
                assert!(spec <= rho * w.distance(&v) + 1e-12);
            }
        }
    }

    #[test]
    fn sphere_noise_contract() {
        let inst = make_quadratic_instance(2, 4, 1.0, 2.0, 0.7, 1.0, 5).unwrap();
        let w = ParamVector::new(vec![0.3, -0.2, 1.0, 0.5]).unwrap();
        let g = inst.grad(1, &w).unwrap();
        let mut rng = substream(5, Purpose::GradientNoise, 1);
        let draws = 100_000;
        let mut mean = vec![0.0; 4];
        for _ in 0..draws {
            let s = inst.stoch_grad(1, &w, &mut rng).unwrap();
            let noise = s.sub(&g);
            assert!((noise.norm() - 0.7).abs() < 1e-12);
            for (m, z) in mean.iter_mut().zip(noise.as_slice()) {
                *m += z / draws as f64;
            }
        }
        let bound = 4.0 * 0.7 / (draws as f64).sqrt();
        assert!(mean.iter().all(|m| m.abs() <= bound), "{mean:?}");
    }

    #[test]
    fn zero_sigma_is_exact() {
        let inst = make_quadratic_instance(2, 3, 1.0, 2.0, 0.0, 1.0, 5).unwrap();
        let w = ParamVector::new(vec![0.3, -0.2, 1.0]).unwrap();
        let mut rng = substream(5, Purpose::GradientNoise, 0);
        assert_eq!(
            inst.stoch_grad(0, &w, &mut rng).unwrap(),
            inst.grad(0, &w).unwrap()
        );
    }

    #[test]
    fn global_grad_is_mean_of_device_grads() {
        let inst = make_quadratic_instance(5, 3, 1.0, 4.0, 0.0, 2.0, 9).unwrap();
        let w = ParamVector::new(vec![0.1, 0.7, -1.3]).unwrap();
        let g = inst.global_grad(&w).unwrap();
        let mut mean = ParamVector::zeros(3);
        for i in 0..5 {
            mean.axpy(0.2, &inst.grad(i, &w).unwrap());
        }
        assert!(g.distance(&mean) < 1e-12);
    }

    #[test]
    fn out_of_range_device_and_bad_dimension() {
        let inst = make_quadratic_instance(2, 2, 1.0, 1.0, 0.0, 0.0, 0).unwrap();
        let w = ParamVector::zeros(2);
        assert!(matches!(
            inst.grad(2, &w),
            Err(Error::DeviceOutOfRange { .. })
        ));
        assert!(matches!(
            inst.grad(0, &ParamVector::zeros(3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
