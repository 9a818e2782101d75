use mmda::bma::bma_combine;
use mmda::enkf::Ensemble;
use mmda::harness::metrics::{histogram_pdf, rmse, Bins};
use mmda::mm_kalman::assimilate_step;
use mmda::pf::{posterior_weights, resample, systematic_indices, ParticleCloud, WeightVector};
use mmda::{GaussianBelief, Observation};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-1.0..1.0f64, n * n), 0.05..2.0f64).prop_map(move |(v, shift)| {
        let a = DMatrix::from_vec(n, n, v);
        &a * a.transpose() + DMatrix::identity(n, n) * shift
    })
}

fn belief(n: usize) -> impl Strategy<Value = GaussianBelief> {
    (prop::collection::vec(-3.0..3.0f64, n), spd(n))
        .prop_map(|(m, c)| GaussianBelief::new(DVector::from_vec(m), c).unwrap())
}

proptest! {
    #[test]
    fn histogram_integrates_to_one(
        samples in prop::collection::vec(-1e3..1e3f64, 2..400),
        bins in 1usize..60,
    ) {
        let pdf = histogram_pdf(&samples, Bins::Count(bins)).unwrap();
        prop_assert!((pdf.integral() - 1.0).abs() < 1e-9);
        prop_assert!(pdf.heights.iter().all(|h| *h >= 0.0));
    }

    #[test]
    fn posterior_weights_normalize_and_ignore_scale(
        raw in prop::collection::vec(1e-6..10.0f64, 2..50),
        other in prop::collection::vec(1e-6..10.0f64, 50),
        scale in 1e-6..1e6f64,
    ) {
        let a = WeightVector::from_weights(&raw).unwrap();
        let b = WeightVector::from_weights(&other[..raw.len()]).unwrap();
        let w = posterior_weights(&[a.clone(), b.clone()]).unwrap().weights();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let scaled: Vec<f64> = raw.iter().map(|x| x * scale).collect();
        let ws = posterior_weights(&[WeightVector::from_weights(&scaled).unwrap(), b]).unwrap().weights();
        for (x, y) in w.iter().zip(&ws) {
            prop_assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn systematic_counts_stay_within_one_of_expectation(
        raw in prop::collection::vec(0.0..1.0f64, 1..40),
        offset in 0.0..1.0f64,
    ) {
        prop_assume!(raw.iter().sum::<f64>() > 1e-3);
        let total: f64 = raw.iter().sum();
        let n = raw.len();
        let idx = systematic_indices(&raw, offset);
        prop_assert_eq!(idx.len(), n);
        for (j, w) in raw.iter().enumerate() {
            let count = idx.iter().filter(|&&i| i == j).count() as f64;
            let expected = n as f64 * w / total;
            prop_assert!((count - expected).abs() < 1.0 + 1e-9, "index {} count {} expected {}", j, count, expected);
        }
    }

    #[test]
    fn resampled_members_are_reference_members(
        values in prop::collection::vec(-5.0..5.0f64, 2..30),
        seed in any::<u64>(),
    ) {
        let n = values.len();
        let members: Vec<DVector<f64>> = values.iter().map(|v| DVector::from_element(1, *v)).collect();
        let other: Vec<DVector<f64>> = values.iter().map(|v| DVector::from_element(1, v + 100.0)).collect();
        let cloud = ParticleCloud::new(
            vec![Ensemble::new(other, 0, 1).unwrap(), Ensemble::new(members.clone(), 1, 1).unwrap()],
            1,
            1,
        )
        .unwrap();
        let w = posterior_weights(&[WeightVector::from_weights(&values.iter().map(|v| v.abs() + 0.1).collect::<Vec<_>>()).unwrap()]).unwrap();
        let out = resample(&cloud, &w, seed).unwrap();
        for e in &out.ensembles {
            prop_assert_eq!(e.len(), n);
            for m in e.members() {
                prop_assert!(members.contains(m));
            }
        }
    }

    #[test]
    fn bma_weights_lie_on_the_simplex(models in prop::collection::vec(belief(2), 1..5)) {
        let c = bma_combine(&models).unwrap();
        prop_assert!(c.weights.iter().all(|w| *w >= -1e-12));
        prop_assert!((c.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fusion_is_order_invariant(
        models in prop::collection::vec(belief(2), 2..5),
        d in prop::collection::vec(-3.0..3.0f64, 2),
        noise in spd(2),
        rotate in 1usize..4,
    ) {
        let obs = Observation::new(1, DVector::from_vec(d), noise).unwrap();
        let mut shuffled = models.clone();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        for data in [None, Some(&obs)] {
            let a = assimilate_step(&models, data).unwrap().analyzed;
            let b = assimilate_step(&shuffled, data).unwrap().analyzed;
            let scale = 1.0 + a.mean().amax();
            prop_assert!((a.mean() - b.mean()).amax() < 1e-9 * scale);
            prop_assert!((a.cov() - b.cov()).amax() < 1e-9 * (1.0 + a.cov().amax()));
        }
    }

    #[test]
    fn rmse_is_symmetric_and_offset_exact(
        values in prop::collection::vec(-10.0..10.0f64, 1..50),
        c in -5.0..5.0f64,
    ) {
        let a: Vec<DVector<f64>> = values.iter().map(|v| DVector::from_element(1, *v)).collect();
        let b: Vec<DVector<f64>> = values.iter().map(|v| DVector::from_element(1, v + c)).collect();
        let ab = rmse(&a, &b, None).unwrap();
        prop_assert!((ab - rmse(&b, &a, None).unwrap()).abs() < 1e-15);
        prop_assert!((ab - c.abs()).abs() < 1e-9);
    }
}
