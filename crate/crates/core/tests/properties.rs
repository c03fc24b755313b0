use dilate::data::{gen_synthetic_det, gen_synthetic_prob};
use dilate::dtw::{cost_matrix, dtw_hvp, hard_dtw, ln_delannoy, soft_alignment, soft_dtw, CostKind, OmegaMatrix};
use dilate::kernels::{dpp_diversity_loss, quality_regularize, KernelKind, KernelMatrix, QualityVector};
use dilate::losses::{dilate, dilate_div, dtw_div, soft_dtw_loss, DilateConfig};
use dilate::metrics::{
    crps_ensemble, cross_loss, h_diversity_from_matrix, h_quality_from_matrix, hausdorff, ramp_score, ChangePointSet,
    EvalLoss,
};
use dilate::TimeSeries;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn values(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, len)
}

fn pair(max: usize) -> impl Strategy<Value = (TimeSeries, TimeSeries)> {
    (values(1..=max), values(1..=max)).prop_map(|(a, b)| (TimeSeries::from_slice(&a), TimeSeries::from_slice(&b)))
}

fn equal_pair(max: usize) -> impl Strategy<Value = (TimeSeries, TimeSeries)> {
    (1..=max).prop_flat_map(|n| (values(n..=n), values(n..=n)))
        .prop_map(|(a, b)| (TimeSeries::from_slice(&a), TimeSeries::from_slice(&b)))
}

fn points(horizon: usize) -> impl Strategy<Value = ChangePointSet> {
    prop::collection::vec(1..=horizon, 1..=5).prop_map(|v| ChangePointSet::new(v).unwrap())
}

fn psd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, n * n).prop_map(move |v| {
        let b = DMatrix::from_vec(n, n, v);
        &b * b.transpose()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn soft_dtw_is_sandwiched((y, z) in pair(10), gamma in 0.01f64..2.0) {
        let cost = cost_matrix(&y, &z, CostKind::Euclidean, gamma).unwrap();
        let hard = hard_dtw(&cost).unwrap().0;
        let soft = soft_dtw(&cost, gamma).unwrap();
        prop_assert!(soft <= hard + 1e-12);
        prop_assert!(soft >= hard - gamma * ln_delannoy(y.len(), z.len()) - 1e-12);
    }

    #[test]
    fn alignment_is_a_probability_field((y, z) in pair(10), gamma in 0.05f64..2.0) {
        let cost = cost_matrix(&y, &z, CostKind::Euclidean, gamma).unwrap();
        let a = soft_alignment(&cost, gamma).unwrap().a;
        let (n, m) = a.shape();
        prop_assert!(a.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
        prop_assert!((a[(0, 0)] - 1.0).abs() < 1e-12);
        prop_assert!((a[(n - 1, m - 1)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hvp_is_symmetric((y, z) in pair(8), w1 in values(64..=64), w2 in values(64..=64), gamma in 0.1f64..1.0) {
        let cost = cost_matrix(&y, &z, CostKind::Euclidean, gamma).unwrap();
        let (n, m) = (y.len(), z.len());
        let o1 = OmegaMatrix::custom(DMatrix::from_fn(n, m, |i, j| w1[i * 8 + j]));
        let o2 = OmegaMatrix::custom(DMatrix::from_fn(n, m, |i, j| w2[i * 8 + j]));
        let a = dtw_hvp(&cost, &o1, gamma).unwrap().component_mul(&o2.omega).sum();
        let b = dtw_hvp(&cost, &o2, gamma).unwrap().component_mul(&o1.omega).sum();
        prop_assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{a} {b}");
    }

    #[test]
    fn dilate_alpha_one_is_soft_dtw((y, z) in equal_pair(10), gamma in 0.05f64..1.0) {
        let cfg = DilateConfig::new(1.0, gamma).unwrap();
        let d = dilate(&y, &z, &cfg).unwrap();
        let (s, g) = soft_dtw_loss(&y, &z, CostKind::Euclidean, gamma).unwrap();
        prop_assert!((d.value - s).abs() <= 1e-12 * s.abs().max(1.0));
        for (a, b) in d.grad.iter().zip(&g) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dilate_is_channel_permutation_invariant(n in 1usize..8, a in values(24..=24), b in values(24..=24), alpha in 0.0f64..=1.0) {
        let cfg = DilateConfig::new(alpha, 0.1).unwrap();
        let (a, b) = (&a[..3 * n], &b[..3 * n]);
        let permute = |v: &[f64]| -> Vec<f64> { v.chunks(3).flat_map(|p| [p[2], p[0], p[1]]).collect() };
        let y = TimeSeries::new(3, a.to_vec()).unwrap();
        let z = TimeSeries::new(3, b.to_vec()).unwrap();
        let yp = TimeSeries::new(3, permute(a)).unwrap();
        let zp = TimeSeries::new(3, permute(b)).unwrap();
        let (v, vp) = (dilate(&y, &z, &cfg).unwrap().value, dilate(&yp, &zp, &cfg).unwrap().value);
        prop_assert!((v - vp).abs() <= 1e-12 * v.abs().max(1.0));
    }

    #[test]
    fn divergences((y, z) in equal_pair(10), alpha in 0.0f64..=1.0) {
        let cfg = DilateConfig::new(alpha, 0.1).unwrap();
        prop_assert!(dilate_div(&y, &y, &cfg).unwrap().abs() < 1e-10);
        prop_assert!(dtw_div(&y, &z, &cfg).unwrap() >= -1e-12);
    }

    #[test]
    fn crps_is_nonnegative_and_order_free(samples in prop::collection::vec(values(6..=6), 1..6), target in values(6..=6)) {
        let mut set: Vec<TimeSeries> = samples.iter().map(|v| TimeSeries::from_slice(v)).collect();
        let y = TimeSeries::from_slice(&target);
        let c = crps_ensemble(&set, &y).unwrap();
        prop_assert!(c >= 0.0);
        set.reverse();
        prop_assert!((crps_ensemble(&set, &y).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn set_scores_are_below_the_mean(preds in prop::collection::vec(values(8..=8), 1..5), futures in prop::collection::vec(values(8..=8), 1..5)) {
        let preds: Vec<TimeSeries> = preds.iter().map(|v| TimeSeries::from_slice(v)).collect();
        let futures: Vec<TimeSeries> = futures.iter().map(|v| TimeSeries::from_slice(v)).collect();
        let c = cross_loss(&preds, &futures, &EvalLoss::HardDtw).unwrap();
        let mean = c.mean();
        prop_assert!(h_quality_from_matrix(&c) <= mean + 1e-12);
        prop_assert!(h_diversity_from_matrix(&c) <= mean + 1e-12);
    }

    #[test]
    fn hausdorff_is_a_metric(a in points(20), b in points(20), c in points(20)) {
        let d = |x: &ChangePointSet, y: &ChangePointSet| hausdorff(x, y, 20);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b) == 0.0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
    }

    #[test]
    fn ramp_score_of_identical_series_is_zero(v in values(2..=30)) {
        let y = TimeSeries::from_slice(&v);
        prop_assert_eq!(ramp_score(&y, &y, None).unwrap(), 0.0);
    }

    #[test]
    fn dpp_loss_is_bounded(k in psd(5)) {
        let (v, _) = dpp_diversity_loss(&k).unwrap();
        prop_assert!((-5.0..=1e-12).contains(&v));
    }

    #[test]
    fn dpp_loss_decreases_with_any_eigenvalue(d in values(4..=4), which in 0usize..4, bump in 0.01f64..3.0) {
        let diag: Vec<f64> = d.iter().map(|x| x.abs()).collect();
        let mut bigger = diag.clone();
        bigger[which] += bump;
        let k = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
        let kb = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(bigger));
        prop_assert!(dpp_diversity_loss(&kb).unwrap().0 < dpp_diversity_loss(&k).unwrap().0);
    }

    #[test]
    fn quality_weighting_commutes_with_scaling(k in psd(4), q in prop::collection::vec(0.01f64..2.0, 4), c in 0.1f64..10.0) {
        let q = QualityVector { q, mu: 1.0 };
        let km = KernelMatrix { k: k.clone(), kind: KernelKind::Shape };
        let scaled = KernelMatrix { k: &k * c, kind: KernelKind::Shape };
        let a = quality_regularize(&scaled, &q).unwrap().k;
        let b = quality_regularize(&km, &q).unwrap().k * c;
        prop_assert!((&a - &b).amax() <= 1e-12 * b.amax().max(1.0));
        let (lo, hi) = quality_regularize(&km, &q).unwrap().eigen_range();
        prop_assert!(lo >= -1e-10 * hi.max(1.0));
    }
}

#[test]
fn generators_are_pure_functions_of_the_seed() {
    assert_eq!(gen_synthetic_det(3), gen_synthetic_det(3));
    assert_eq!(gen_synthetic_prob(3), gen_synthetic_prob(3));
    assert_ne!(gen_synthetic_det(3).train.samples[0], gen_synthetic_det(4).train.samples[0]);
}

#[test]
fn noise_is_stored_separately() {
    let data = gen_synthetic_prob(1);
    for s in data.test.samples.iter().take(50) {
        let meta = s.meta.as_ref().unwrap();
        for (f, fut) in s.futures.iter().enumerate() {
            let clean = meta.clean_target(f);
            for ((v, c), e) in fut.values().iter().zip(&clean).zip(&meta.target_noise[f]) {
                assert!((v - e - c).abs() < 1e-12);
            }
        }
    }
}
