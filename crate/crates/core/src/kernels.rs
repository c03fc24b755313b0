//! Shape and time similarity kernels, quality regularization and the DPP
//! expected-cardinality diversity loss.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{register_custom_op, CustomOp, OpHandle, SavedState, Tensor};
use crate::dtw::{check_gamma, cost_backward, cost_matrix, CostKind, OmegaMatrix, SoftDtw};
use crate::error::{dim_err, param_err, Error, Result};
use crate::losses::{dilate, DilateConfig};
use crate::series::TimeSeries;

/// Floor applied to quality weights so `Diag(q)·K·Diag(q)` stays a proper congruence.
pub const QUALITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Shape,
    Time,
    ShapeQuality,
    TimeQuality,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelParams {
    pub gamma: f64,
    pub cost_kind: CostKind,
    /// Rescale to unit diagonal, `K_ij / √(K_ii K_jj)`, before quality weighting.
    pub normalize: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            gamma: 1e-2,
            cost_kind: CostKind::HalfGaussian,
            normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub k: DMatrix<f64>,
    pub kind: KernelKind,
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.k.nrows() == 0
    }

    /// `(min, max)` eigenvalue.
    pub fn eigen_range(&self) -> (f64, f64) {
        eigen_range(&self.k)
    }
}

pub fn eigen_range(k: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(k.clone()).eigenvalues;
    (ev.min(), ev.max())
}

/// `exp(−soft_dtw(Δ(y,z))/γ)`.
pub fn k_shape(y: &TimeSeries, z: &TimeSeries, gamma: f64, cost_kind: CostKind) -> Result<f64> {
    let delta = cost_matrix(y, z, cost_kind, gamma)?;
    Ok((-SoftDtw::forward(&delta.delta, gamma)?.value() / gamma).exp())
}

/// `k_shape(y,z)·⟨A*_γ, Ω_sim⟩` with `Ω_sim(i,j) = 1/((i−j)²+1)`.
pub fn k_time(y: &TimeSeries, z: &TimeSeries, gamma: f64, cost_kind: CostKind) -> Result<f64> {
    if y.len() != z.len() {
        return dim_err("time kernel needs equal-length series");
    }
    let delta = cost_matrix(y, z, cost_kind, gamma)?;
    let table = SoftDtw::forward(&delta.delta, gamma)?;
    let omega = OmegaMatrix::sim_inverse_quadratic(y.len(), z.len());
    let tdi = table.alignment().component_mul(&omega.omega).sum();
    Ok((-table.value() / gamma).exp() * tdi)
}

/// Kernel value with gradients w.r.t. both arguments (time-major).
pub fn kernel_with_grad(
    y: &TimeSeries,
    z: &TimeSeries,
    kind: KernelKind,
    params: &KernelParams,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let gamma = params.gamma;
    let delta = cost_matrix(y, z, params.cost_kind, gamma)?;
    let table = SoftDtw::forward(&delta.delta, gamma)?;
    let a = table.alignment();
    let ks = (-table.value() / gamma).exp();
    let (value, grad_delta) = match kind {
        KernelKind::Shape | KernelKind::ShapeQuality => (ks, a * (-ks / gamma)),
        KernelKind::Time | KernelKind::TimeQuality => {
            if y.len() != z.len() {
                return dim_err("time kernel needs equal-length series");
            }
            let omega = OmegaMatrix::sim_inverse_quadratic(y.len(), z.len());
            let tdi = a.component_mul(&omega.omega).sum();
            let h = table.hvp(&a, &omega.omega)?;
            (ks * tdi, a * (-ks * tdi / gamma) + h * ks)
        }
    };
    let (gy, gz) = cost_backward(y, z, params.cost_kind, gamma, &grad_delta)?;
    Ok((value, gy, gz))
}

fn kernel_value(y: &TimeSeries, z: &TimeSeries, kind: KernelKind, params: &KernelParams) -> Result<f64> {
    match kind {
        KernelKind::Shape | KernelKind::ShapeQuality => k_shape(y, z, params.gamma, params.cost_kind),
        KernelKind::Time | KernelKind::TimeQuality => k_time(y, z, params.gamma, params.cost_kind),
    }
}

/// Gram matrix over `items`; entry `(i,j)` is the mean of `k(i,j)` and `k(j,i)`.
pub fn gram(items: &[TimeSeries], kind: KernelKind, params: &KernelParams) -> Result<KernelMatrix> {
    check_gamma(params.gamma)?;
    let n = items.len();
    if n == 0 {
        return dim_err("gram matrix over an empty set");
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let a = kernel_value(&items[i], &items[j], kind, params)?;
            if i == j {
                return Ok(a);
            }
            let b = kernel_value(&items[j], &items[i], kind, params)?;
            Ok(0.5 * (a + b))
        })
        .collect::<Result<_>>()?;
    let mut k = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        k[(i, j)] = v;
        k[(j, i)] = v;
    }
    if params.normalize {
        k = normalize_kernel(&k);
    }
    Ok(KernelMatrix { k, kind })
}

/// `K_ij / √(K_ii K_jj)`: a diagonal congruence, so PSD is preserved.
pub fn normalize_kernel(k: &DMatrix<f64>) -> DMatrix<f64> {
    let s: Vec<f64> = k.diagonal().iter().map(|v| v.sqrt()).collect();
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| {
        if i == j {
            1.0
        } else {
            k[(i, j)] / (s[i] * s[j])
        }
    })
}

/// Per-item quality weights for the DPP kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityVector {
    pub q: Vec<f64>,
    pub mu: f64,
}

impl QualityVector {
    /// `q_i = μ·(1 − loss_i)`, floored at [`QUALITY_FLOOR`].
    pub fn from_losses(mu: f64, losses: &[f64]) -> Result<Self> {
        if !(mu > 0.0) {
            return param_err(format!("quality strength mu must be > 0, got {mu}"));
        }
        let mut clamped = 0;
        let q = losses
            .iter()
            .map(|l| {
                let v = mu * (1.0 - l);
                if v < QUALITY_FLOOR {
                    clamped += 1;
                    QUALITY_FLOOR
                } else {
                    v
                }
            })
            .collect();
        if clamped > 0 {
            log::debug!("{clamped} of {} quality values clamped to {QUALITY_FLOOR}", losses.len());
        }
        Ok(Self { q, mu })
    }
}

/// `Diag(q)·K·Diag(q)`.
pub fn quality_regularize(k: &KernelMatrix, q: &QualityVector) -> Result<KernelMatrix> {
    let n = k.len();
    if q.q.len() != n {
        return dim_err(format!("quality vector of length {} for a {n}×{n} kernel", q.q.len()));
    }
    let qs: Vec<f64> = q
        .q
        .iter()
        .map(|&v| {
            if v > 0.0 {
                v
            } else {
                log::warn!("non-positive quality {v} clamped to {QUALITY_FLOOR}");
                QUALITY_FLOOR
            }
        })
        .collect();
    let kind = match k.kind {
        KernelKind::Shape | KernelKind::ShapeQuality => KernelKind::ShapeQuality,
        KernelKind::Time | KernelKind::TimeQuality => KernelKind::TimeQuality,
    };
    Ok(KernelMatrix {
        k: DMatrix::from_fn(n, n, |i, j| qs[i] * k.k[(i, j)] * qs[j]),
        kind,
    })
}

/// Negative expected cardinality `−Tr(I − (K+I)⁻¹) = −Σ λ/(1+λ)` of the DPP
/// with kernel `K`, and its gradient `−(K+I)⁻²`.
pub fn dpp_diversity_loss(k: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return dim_err(format!("diversity loss needs a square kernel, got {:?}", k.shape()));
    }
    let scale = k.amax().max(1.0);
    let asym = (k - k.transpose()).amax();
    if asym > 1e-9 * scale {
        return Err(Error::Parameter(format!("kernel is not symmetric (max gap {asym:e})")));
    }
    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let value = -eig.eigenvalues.iter().map(|l| l / (1.0 + l)).sum::<f64>();
    let v = &eig.eigenvectors;
    let w = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| -1.0 / ((1.0 + l) * (1.0 + l))));
    let grad = v * w * v.transpose();
    Ok((value, (&grad + grad.transpose()) * 0.5))
}

/// Quality term of the diversity loss: `q_i = μ(1 − DILATE(ŷ_i, y*))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualitySpec {
    pub mu: f64,
    pub dilate: DilateConfig,
}

/// Quality-regularized DPP diversity loss over groups of trajectories, as a tape op.
///
/// Inputs: trajectories `[B·N, τ]` (group `b` is rows `b·N..(b+1)·N`) and the
/// reference futures `[B, τ]` used for quality. Output: mean loss over groups.
/// The reference input receives a zero gradient.
pub struct DiversityLossOp {
    pub kind: KernelKind,
    pub params: KernelParams,
    pub quality: Option<QualitySpec>,
    pub group: usize,
}

impl DiversityLossOp {
    pub fn register(self) -> OpHandle {
        register_custom_op(self)
    }

    /// Loss and per-item gradients for one group.
    pub fn group_loss(&self, items: &[TimeSeries], reference: &TimeSeries) -> Result<(f64, Vec<Vec<f64>>)> {
        let n = items.len();
        let mut q = vec![1.0; n];
        let mut dq: Vec<Option<Vec<f64>>> = vec![None; n];
        if let Some(spec) = &self.quality {
            let mut losses = Vec::with_capacity(n);
            let mut grads = Vec::with_capacity(n);
            for it in items {
                let out = dilate(it, reference, &spec.dilate)?;
                losses.push(out.value);
                grads.push(out.grad);
            }
            let qv = QualityVector::from_losses(spec.mu, &losses)?;
            for i in 0..n {
                q[i] = qv.q[i];
                if spec.mu * (1.0 - losses[i]) >= QUALITY_FLOOR {
                    dq[i] = Some(grads[i].iter().map(|g| -spec.mu * g).collect());
                }
            }
        }

        let mut k = DMatrix::zeros(n, n);
        let mut pair_grads = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                let (v, gy, gz) = kernel_with_grad(&items[i], &items[j], self.kind, &self.params)?;
                k[(i, j)] = v;
                k[(j, i)] = v;
                pair_grads.push((i, j, gy, gz));
            }
        }
        let kn = if self.params.normalize { normalize_kernel(&k) } else { k.clone() };
        let kt = DMatrix::from_fn(n, n, |i, j| q[i] * kn[(i, j)] * q[j]);
        let (value, g) = dpp_diversity_loss(&kt)?;

        // gradient w.r.t. the raw symmetric kernel entries
        let mut gk = DMatrix::from_fn(n, n, |i, j| g[(i, j)] * q[i] * q[j]);
        if self.params.normalize {
            let norm = gk.clone();
            for i in 0..n {
                for j in 0..n {
                    gk[(i, j)] = if i == j {
                        -(0..n).filter(|&l| l != i).map(|l| norm[(i, l)] * kn[(i, l)]).sum::<f64>() / k[(i, i)]
                    } else {
                        norm[(i, j)] / (k[(i, i)] * k[(j, j)]).sqrt()
                    };
                }
            }
        }

        let len = items[0].values().len();
        let mut grads = vec![vec![0.0; len]; n];
        for (i, j, gy, gz) in pair_grads {
            let w = if i == j { gk[(i, i)] } else { 2.0 * gk[(i, j)] };
            if w == 0.0 {
                continue;
            }
            for (acc, v) in grads[i].iter_mut().zip(&gy) {
                *acc += w * v;
            }
            for (acc, v) in grads[j].iter_mut().zip(&gz) {
                *acc += w * v;
            }
        }
        for i in 0..n {
            if let Some(d) = &dq[i] {
                let dl_dq: f64 = 2.0 * (0..n).map(|j| g[(i, j)] * kn[(i, j)] * q[j]).sum::<f64>();
                for (acc, v) in grads[i].iter_mut().zip(d) {
                    *acc += dl_dq * v;
                }
            }
        }
        Ok((value, grads))
    }
}

impl CustomOp for DiversityLossOp {
    fn name(&self) -> &str {
        "dpp_diversity"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<(Tensor, SavedState)> {
        let [traj, reference] = inputs else {
            return dim_err("diversity loss takes (trajectories, references)");
        };
        let (rows, tau) = traj.dims2();
        let (groups, rtau) = reference.dims2();
        if self.group == 0 || rows != groups * self.group || rtau != tau {
            return dim_err(format!(
                "trajectories {:?} and references {:?} with group size {}",
                traj.shape(),
                reference.shape(),
                self.group
            ));
        }
        let per_group: Vec<(f64, Vec<Vec<f64>>)> = (0..groups)
            .into_par_iter()
            .map(|b| {
                let items: Vec<TimeSeries> = (0..self.group)
                    .map(|i| TimeSeries::univariate(traj.row(b * self.group + i).to_vec()))
                    .collect::<Result<_>>()?;
                let r = TimeSeries::univariate(reference.row(b).to_vec())?;
                self.group_loss(&items, &r)
            })
            .collect::<Result<_>>()?;
        let bn = groups as f64;
        let value = per_group.iter().map(|(v, _)| v).sum::<f64>() / bn;
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("diversity loss is {value}")));
        }
        let mut grad = Vec::with_capacity(traj.len());
        for (_, gs) in &per_group {
            for g in gs {
                grad.extend(g.iter().map(|x| x / bn));
            }
        }
        Ok((Tensor::scalar(value), Box::new(Tensor::new(traj.shape().to_vec(), grad)?)))
    }

    fn backward(&self, inputs: &[&Tensor], saved: &SavedState, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let grad = saved
            .downcast_ref::<Tensor>()
            .ok_or_else(|| Error::Contract("diversity loss saved state".into()))?;
        let u = upstream.item();
        Ok(vec![grad.map(|g| g * u), Tensor::zeros(inputs[1].shape())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{max_relative_error, numeric_gradient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_series(rng: &mut ChaCha8Rng, len: usize) -> TimeSeries {
        TimeSeries::univariate((0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    #[test]
    fn shape_kernel_values() {
        let y = TimeSeries::from_slice(&[0.4]);
        assert_eq!(k_shape(&y, &y, 0.3, CostKind::HalfGaussian).unwrap(), 1.0);
        let flat = TimeSeries::from_slice(&[0.2, 0.2]);
        let v = k_shape(&flat, &flat, 0.5, CostKind::HalfGaussian).unwrap();
        assert!((v - 3.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (a, b) = (random_series(&mut rng, 6), random_series(&mut rng, 6));
            let v = k_shape(&a, &b, 0.5, CostKind::HalfGaussian).unwrap();
            assert!(v > 0.0);
        }
    }

    #[test]
    fn shape_kernel_is_bounded_for_distinct_points() {
        // single points: exp(−Δ/γ) = g/(1−g) ≤ 1
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let (a, b) = (random_series(&mut rng, 1), random_series(&mut rng, 1));
            let v = k_shape(&a, &b, 0.7, CostKind::HalfGaussian).unwrap();
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn time_kernel_values() {
        let y = TimeSeries::from_slice(&[0.4]);
        assert_eq!(k_time(&y, &y, 0.3, CostKind::HalfGaussian).unwrap(), 1.0);
        let flat = TimeSeries::from_slice(&[0.2, 0.2]);
        let v = k_time(&flat, &flat, 0.5, CostKind::HalfGaussian).unwrap();
        assert!((v - 7.0).abs() < 1e-12, "{v}");
        let z = TimeSeries::from_slice(&[0.2, 0.2, 0.3]);
        assert!(k_time(&flat, &z, 0.5, CostKind::HalfGaussian).is_err());
    }

    #[test]
    fn gram_basic_cases() {
        let params = KernelParams {
            gamma: 0.5,
            cost_kind: CostKind::HalfGaussian,
            normalize: false,
        };
        let y = TimeSeries::from_slice(&[0.1, 0.7, -0.2]);
        let g = gram(std::slice::from_ref(&y), KernelKind::Shape, &params).unwrap();
        assert_eq!(g.k[(0, 0)], k_shape(&y, &y, 0.5, CostKind::HalfGaussian).unwrap());
        let g = gram(&vec![y.clone(); 4], KernelKind::Time, &params).unwrap();
        let first = g.k[(0, 0)];
        assert!(g.k.iter().all(|&v| (v - first).abs() < 1e-12));
        assert!(gram(&[], KernelKind::Shape, &params).is_err());
    }

    #[test]
    fn gram_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = KernelParams {
            gamma: 1.0,
            cost_kind: CostKind::HalfGaussian,
            normalize: false,
        };
        for kind in [KernelKind::Shape, KernelKind::Time] {
            let items: Vec<_> = (0..8).map(|_| random_series(&mut rng, 7)).collect();
            let g = gram(&items, kind, &params).unwrap();
            let (lo, hi) = g.eigen_range();
            assert!(lo >= -1e-8 * hi, "{kind:?}: {lo} {hi}");
            let n = gram(&items, kind, &KernelParams { normalize: true, ..params }).unwrap();
            let (lo, hi) = n.eigen_range();
            assert!(lo >= -1e-8 * hi, "{kind:?} normalized: {lo} {hi}");
            assert!(n.k.diagonal().iter().all(|&d| d == 1.0));
            assert!(n.k.iter().all(|&v| v > 0.0 && v <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn quality_regularization() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let k = KernelMatrix {
            k: random_psd(&mut rng, 4),
            kind: KernelKind::Shape,
        };
        let ones = QualityVector { q: vec![1.0; 4], mu: 1.0 };
        assert_eq!(quality_regularize(&k, &ones).unwrap().k, k.k);
        let twos = QualityVector { q: vec![2.0; 4], mu: 1.0 };
        let r = quality_regularize(&k, &twos).unwrap();
        assert!((r.k - &k.k * 4.0).amax() < 1e-12);
        assert_eq!(r.kind, KernelKind::ShapeQuality);
        let q = QualityVector { q: vec![0.3, 1.2, 2.0, 0.7], mu: 1.0 };
        let (lo, hi) = quality_regularize(&k, &q).unwrap().eigen_range();
        assert!(lo >= -1e-10 * hi);
        assert!(quality_regularize(&k, &QualityVector { q: vec![1.0; 3], mu: 1.0 }).is_err());

        let clamped = QualityVector::from_losses(20.0, &[0.5, 1.5]).unwrap();
        assert_eq!(clamped.q, vec![10.0, QUALITY_FLOOR]);
        assert!(QualityVector::from_losses(0.0, &[0.5]).is_err());
    }

    #[test]
    fn dpp_closed_forms() {
        assert_eq!(dpp_diversity_loss(&DMatrix::zeros(3, 3)).unwrap().0, 0.0);
        let v = dpp_diversity_loss(&DMatrix::identity(3, 3)).unwrap().0;
        assert!((v + 1.5).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 3.0]));
        assert!((dpp_diversity_loss(&d).unwrap().0 + 1.25).abs() < 1e-12);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(dpp_diversity_loss(&asym).is_err());
    }

    #[test]
    fn dpp_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let k = random_psd(&mut rng, 4);
        let (_, g) = dpp_diversity_loss(&k).unwrap();
        let h = 1e-6;
        for i in 0..4 {
            for j in i..4 {
                // symmetric perturbation moves both (i,j) and (j,i)
                let mut p = k.clone();
                let mut m = k.clone();
                p[(i, j)] += h;
                m[(i, j)] -= h;
                if i != j {
                    p[(j, i)] += h;
                    m[(j, i)] -= h;
                }
                let fd = (dpp_diversity_loss(&p).unwrap().0 - dpp_diversity_loss(&m).unwrap().0) / (2.0 * h);
                let an = if i == j { g[(i, i)] } else { 2.0 * g[(i, j)] };
                assert!((fd - an).abs() / an.abs().max(1e-6) < 1e-6, "({i},{j}) {fd} {an}");
            }
        }
    }

    #[test]
    fn single_item_closed_form() {
        let k = DMatrix::from_element(1, 1, 0.8);
        let q = 1.5;
        let kt = DMatrix::from_element(1, 1, q * q * 0.8);
        let (v, g) = dpp_diversity_loss(&kt).unwrap();
        let x = q * q * 0.8;
        assert!((v + x / (1.0 + x)).abs() < 1e-15);
        assert!(g[(0, 0)] < 0.0);
        assert_eq!(k.nrows(), 1);
    }

    #[test]
    fn kernel_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let params = KernelParams {
            gamma: 0.5,
            cost_kind: CostKind::HalfGaussian,
            normalize: false,
        };
        let y = random_series(&mut rng, 5);
        let z = random_series(&mut rng, 5);
        for kind in [KernelKind::Shape, KernelKind::Time] {
            let (_, gy, gz) = kernel_with_grad(&y, &z, kind, &params).unwrap();
            let fy = numeric_gradient(
                |p| kernel_value(&TimeSeries::from_slice(p.data()), &z, kind, &params).unwrap(),
                &Tensor::vector(y.values().to_vec()).unwrap(),
                1e-6,
            );
            let fz = numeric_gradient(
                |p| kernel_value(&y, &TimeSeries::from_slice(p.data()), kind, &params).unwrap(),
                &Tensor::vector(z.values().to_vec()).unwrap(),
                1e-6,
            );
            assert!(max_relative_error(&gy, fy.data(), 1e-4) < 1e-5, "{kind:?} y");
            assert!(max_relative_error(&gz, fz.data(), 1e-4) < 1e-5, "{kind:?} z");
        }
    }

    #[test]
    fn diversity_op_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for (kind, normalize) in [
            (KernelKind::Shape, false),
            (KernelKind::Time, false),
            (KernelKind::Shape, true),
            (KernelKind::Time, true),
        ] {
            let op = DiversityLossOp {
                kind,
                params: KernelParams {
                    gamma: 0.5,
                    cost_kind: CostKind::HalfGaussian,
                    normalize,
                },
                quality: Some(QualitySpec {
                    mu: 2.0,
                    dilate: DilateConfig::new(0.5, 0.1).unwrap(),
                }),
                group: 3,
            };
            let traj = Tensor::matrix(6, 4, (0..24).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
            let refs = Tensor::matrix(2, 4, (0..8).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap();
            let (_, saved) = op.forward(&[&traj, &refs]).unwrap();
            let g = op.backward(&[&traj, &refs], &saved, &Tensor::scalar(1.0)).unwrap();
            let fd = numeric_gradient(|p| op.forward(&[p, &refs]).unwrap().0.item(), &traj, 1e-6);
            let err = max_relative_error(g[0].data(), fd.data(), 1e-4);
            assert!(err < 1e-4, "{kind:?} normalize={normalize}: {err}");
        }
    }
}
