use adaptimpute::eval::{accuracy, error_rate, max_density_ratio};
use adaptimpute::losses::{classification_loss, total_loss, LossTerms, LossWeights};
use adaptimpute::selftrain::{mean_entropy, select_from_probs};
use candle_core::{Device, Tensor};
use proptest::prelude::*;

fn prob_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..10, 2usize..6).prop_flat_map(|(n, k)| {
        prop::collection::vec(prop::collection::vec(1e-3f64..1.0, k), n).prop_map(|rows| {
            rows.into_iter()
                .map(|r| {
                    let s: f64 = r.iter().sum();
                    r.into_iter().map(|v| v / s).collect()
                })
                .collect()
        })
    })
}

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::from_vec(flat, (rows.len(), rows[0].len()), &Device::Cpu).unwrap()
}

proptest! {
    #[test]
    fn entropy_is_bounded_by_log_classes(rows in prob_rows()) {
        let k = rows[0].len() as f64;
        let h: f64 = mean_entropy(&tensor(&rows)).unwrap().to_scalar().unwrap();
        prop_assert!(h >= -1e-9 && h <= k.ln() + 1e-9);
    }

    #[test]
    fn raising_the_threshold_never_adds_rows(rows in prob_rows(), lo in 0.0f64..1.0, hi in 0.0f64..1.0) {
        let (lo, hi) = (lo.min(hi), lo.max(hi));
        let a = select_from_probs(&rows, lo);
        let b = select_from_probs(&rows, hi);
        prop_assert!(b.indices.iter().all(|i| a.indices.contains(i)));
        prop_assert!(b.confidences.iter().all(|&c| c >= hi));
    }

    #[test]
    fn cross_entropy_is_nonnegative(rows in prob_rows(), seed in any::<u64>()) {
        let k = rows[0].len();
        let labels: Vec<usize> = (0..rows.len()).map(|i| (seed as usize).wrapping_add(i * 7) % k).collect();
        let ce: f64 = classification_loss(&tensor(&rows), &labels).unwrap().to_scalar().unwrap();
        let by_hand = -labels.iter().enumerate().map(|(i, &y)| rows[i][y].ln()).sum::<f64>() / rows.len() as f64;
        prop_assert!(ce >= 0.0);
        prop_assert!((ce - by_hand).abs() <= 1e-9);
    }

    #[test]
    fn accuracy_and_error_sum_to_one(pred in prop::collection::vec(0usize..4, 1..50), shift in 0usize..4) {
        let labels: Vec<usize> = pred.iter().enumerate().map(|(i, &p)| if i % 3 == 0 { (p + shift) % 4 } else { p }).collect();
        let a = accuracy(&pred, &labels).unwrap();
        let e = error_rate(&pred, &labels).unwrap();
        prop_assert!((a + e - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn density_ratio_supremum_is_at_least_one(
        (p, q) in (1usize..40).prop_flat_map(|n| (prop::collection::vec(0.01f64..1.0, n), prop::collection::vec(0.01f64..1.0, n)))
    ) {
        prop_assert!(max_density_ratio(&p, &q).unwrap() >= 1.0 - 1e-9);
        prop_assert!((max_density_ratio(&q, &q).unwrap() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn total_is_the_weighted_sum_of_terms(
        l1 in -3.0f64..0.0, adv in -3.0f64..0.0, mse in 0.0f64..3.0, ot in 0.0f64..3.0, l3 in 0.0f64..3.0,
        w1 in 0.0f64..1.0, w2 in 0.0f64..1.0, w3 in 0.0f64..2.0, wm in 0.0f64..2.0, wo in 0.0f64..2.0,
    ) {
        let w = LossWeights { lambda1: w1, lambda2: w2, lambda3: w3, lambda_mse: wm, lambda_ot: wo, ..LossWeights::default() };
        let t = LossTerms { l1, l_adv: adv, l_mse: mse, l_ot: ot, l3, ..LossTerms::default() };
        let (total, report) = total_loss(&w, &t).unwrap();
        let l2 = adv + wo * ot + wm * mse;
        prop_assert!((report.l2 - l2).abs() <= 1e-9);
        prop_assert!((total - (w1 * l1 + w2 * l2 + w3 * l3)).abs() <= 1e-9);
        prop_assert!((report.total - total).abs() <= 1e-12);
    }
}

#[test]
fn uniform_prediction_costs_log_classes() {
    for k in 2..8 {
        let rows = vec![vec![1.0 / k as f64; k]; 4];
        let ce: f64 = classification_loss(&tensor(&rows), &[0, 1, 0, k - 1]).unwrap().to_scalar().unwrap();
        assert!((ce - (k as f64).ln()).abs() < 1e-6);
    }
}
