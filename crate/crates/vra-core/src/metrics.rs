//! Competition scoring: PLCC, SRCC, RMSE per test set, and the final-score
//! aggregation (unweighted mean over sets of the PLCC/SRCC average).
//!
//! Correlations are computed two-pass in f64 and clamped to [-1, 1]. A
//! zero-variance input is a typed error, never NaN. SRCC ranks ties with the
//! fractional (average-rank) convention.

use serde::{Deserialize, Serialize};

use crate::error::{Result, VraError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub plcc: f64,
    pub srcc: f64,
    pub rmse: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_set: Vec<SetMetrics>,
    pub final_score: f64,
}

impl MetricsReport {
    pub fn from_sets(per_set: Vec<SetMetrics>) -> Result<MetricsReport> {
        let final_score = final_score(&per_set)?;
        Ok(MetricsReport {
            per_set,
            final_score,
        })
    }

    /// Plain-text rendering: one row per set plus the final score.
    pub fn render_text(&self) -> String {
        let mut out = String::from("set\tn\tplcc\tsrcc\trmse\n");
        for (i, s) in self.per_set.iter().enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{:.4}\t{:.4}\t{:.4}\n",
                i + 1,
                s.n,
                s.plcc,
                s.srcc,
                s.rmse
            ));
        }
        out.push_str(&format!("final_score\t{:.4}\n", self.final_score));
        out
    }
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(VraError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < min_len {
        return Err(VraError::EmptyInput(
            "metric input shorter than the required minimum",
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(VraError::NonFinite {
            context: "metric input".into(),
        });
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn is_constant(x: &[f64]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

/// Pearson linear correlation coefficient, clamped to [-1, 1].
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    if is_constant(x) || is_constant(y) {
        return Err(VraError::DegenerateInput(
            "zero variance in a correlation input".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut cov = 0.0;
    let mut ssx = 0.0;
    let mut ssy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        cov += dx * dy;
        ssx += dx * dx;
        ssy += dy * dy;
    }
    if ssx == 0.0 || ssy == 0.0 {
        return Err(VraError::DegenerateInput(
            "zero variance in a correlation input".into(),
        ));
    }
    Ok((cov / (ssx * ssy).sqrt()).clamp(-1.0, 1.0))
}

/// Fractional (average) ranks, 1-based; ties share the mean of the positions
/// they span.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).expect("finite input"));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j+1 share the run; assign their average
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank-order correlation: Pearson over fractional ranks.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    plcc(&fractional_ranks(x), &fractional_ranks(y))
}

/// Root mean squared error.
pub fn rmse_metric(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 1)?;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// Compute one test set's metrics from paired predictions and labels.
pub fn set_metrics(predictions: &[f64], labels: &[f64]) -> Result<SetMetrics> {
    Ok(SetMetrics {
        plcc: plcc(predictions, labels)?,
        srcc: srcc(predictions, labels)?,
        rmse: rmse_metric(predictions, labels)?,
        n: predictions.len(),
    })
}

/// Final score: unweighted mean over test sets of (plcc + srcc) / 2.
pub fn final_score(per_set: &[SetMetrics]) -> Result<f64> {
    if per_set.is_empty() {
        return Err(VraError::EmptyInput("final score over zero test sets"));
    }
    let total: f64 = per_set.iter().map(|s| (s.plcc + s.srcc) / 2.0).sum();
    Ok(total / per_set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::make_rng;
    use proptest::prelude::*;

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = make_rng(seed, 0, "metrics-test");
        (0..n).map(|_| rng.next_f64() * 10.0 - 5.0).collect()
    }

    // Definitional oracles, written independently of the implementations.
    fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    fn oracle_ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|&xi| {
                let less = x.iter().filter(|&&xj| xj < xi).count() as f64;
                let eq = x.iter().filter(|&&xj| xj == xi).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect()
    }

    fn oracle_rmse(x: &[f64], y: &[f64]) -> f64 {
        let ss: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
        (ss / x.len() as f64).sqrt()
    }

    #[test]
    fn plcc_perfect_positive_line() {
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert_eq!(plcc(&x, &y).unwrap(), 1.0);
    }

    #[test]
    fn plcc_perfect_negative_line() {
        let x = vec![1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(plcc(&x, &y).unwrap(), -1.0);
    }

    #[test]
    fn plcc_constant_input_is_degenerate() {
        let x = vec![2.0, 2.0, 2.0];
        let y = vec![1.0, 2.0, 3.0];
        assert!(matches!(plcc(&x, &y), Err(VraError::DegenerateInput(_))));
        assert!(matches!(plcc(&y, &x), Err(VraError::DegenerateInput(_))));
        // Constants that do not round to an exact mean must still error.
        let x = vec![0.1, 0.1, 0.1];
        assert!(matches!(plcc(&x, &y), Err(VraError::DegenerateInput(_))));
    }

    #[test]
    fn plcc_matches_oracle_on_random_pairs() {
        for seed in 0..300u64 {
            let x = random_vec(seed, 40);
            let y = random_vec(seed + 1000, 40);
            let got = plcc(&x, &y).unwrap();
            assert!((got - oracle_pearson(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn plcc_affine_invariance_and_sign_flip() {
        for seed in 0..200u64 {
            let x = random_vec(seed, 30);
            let y = random_vec(seed + 500, 30);
            let base = plcc(&x, &y).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| 1.5 * v + 0.25).collect();
            assert!((plcc(&shifted, &y).unwrap() - base).abs() < 1e-12);
            let flipped: Vec<f64> = x.iter().map(|v| -2.0 * v).collect();
            assert!((plcc(&flipped, &y).unwrap() + base).abs() < 1e-12);
        }
    }

    #[test]
    fn plcc_never_exceeds_unit_magnitude() {
        for seed in 0..200u64 {
            let x = random_vec(seed, 25);
            let y: Vec<f64> = x.iter().map(|v| 3.0 * v - 7.0).collect();
            let r = plcc(&x, &y).unwrap();
            assert!((1.0 - 1e-12..=1.0).contains(&r));
        }
    }

    #[test]
    fn ranks_handle_ties_with_averages() {
        let x = vec![1.0, 2.0, 2.0, 3.0];
        assert_eq!(fractional_ranks(&x), vec![1.0, 2.5, 2.5, 4.0]);
        assert_eq!(fractional_ranks(&x), oracle_ranks(&x));
    }

    #[test]
    fn ranks_match_oracle_on_tied_random_data() {
        for seed in 0..200u64 {
            let mut rng = make_rng(seed, 1, "ranks");
            // Coarse grid so ties occur often.
            let x: Vec<f64> = (0..30)
                .map(|_| (rng.next_f64() * 6.0).floor())
                .collect();
            assert_eq!(fractional_ranks(&x), oracle_ranks(&x));
        }
    }

    #[test]
    fn srcc_tied_example_matches_rank_oracle() {
        let x = vec![1.0, 2.0, 2.0, 3.0];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let expected = oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y));
        let got = srcc(&x, &y).unwrap();
        assert!((got - expected).abs() < 1e-15);
        // Closed form for these ranks: sqrt(0.9).
        assert!((got - 0.9f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn srcc_is_invariant_under_increasing_transforms() {
        for seed in 0..100u64 {
            let x = random_vec(seed, 20);
            let y = random_vec(seed + 77, 20);
            let base = srcc(&x, &y).unwrap();
            let cubed: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
            assert_eq!(srcc(&cubed, &y).unwrap(), base);
            let exped: Vec<f64> = y.iter().map(|v| v.exp()).collect();
            assert_eq!(srcc(&x, &exped).unwrap(), base);
        }
    }

    #[test]
    fn srcc_reversed_order_is_minus_one() {
        let x = vec![1.0, 2.0, 3.0];
        let y = vec![3.0, 2.0, 1.0];
        assert_eq!(srcc(&x, &y).unwrap(), -1.0);
    }

    #[test]
    fn srcc_all_tied_is_degenerate() {
        let x = vec![4.0, 4.0, 4.0];
        let y = vec![1.0, 2.0, 3.0];
        assert!(matches!(srcc(&x, &y), Err(VraError::DegenerateInput(_))));
    }

    #[test]
    fn rmse_trivial_cases() {
        let x = vec![1.0, 2.0, 3.0];
        assert_eq!(rmse_metric(&x, &x).unwrap(), 0.0);
        let got = rmse_metric(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((got - 12.5f64.sqrt()).abs() < 1e-8);
        assert!((got - 3.53553391).abs() < 1e-8);
    }

    #[test]
    fn rmse_matches_oracle() {
        for seed in 0..100u64 {
            let x = random_vec(seed, 100);
            let y = random_vec(seed + 31, 100);
            assert!((rmse_metric(&x, &y).unwrap() - oracle_rmse(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn length_mismatch_is_reported() {
        assert!(matches!(
            rmse_metric(&[1.0], &[1.0, 2.0]),
            Err(VraError::LengthMismatch { left: 1, right: 2 })
        ));
        assert!(matches!(
            plcc(&[1.0, 2.0, 3.0], &[1.0]),
            Err(VraError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn correlations_need_two_samples() {
        assert!(plcc(&[1.0], &[1.0]).is_err());
        assert!(srcc(&[], &[]).is_err());
        assert!(rmse_metric(&[], &[]).is_err());
    }

    fn fixture(plcc: f64, srcc: f64) -> SetMetrics {
        SetMetrics {
            plcc,
            srcc,
            rmse: 0.0,
            n: 100,
        }
    }

    #[test]
    fn final_score_reproduces_reference_triples() {
        // Three known scoring fixtures: per-set (plcc, srcc) pairs and the
        // aggregate each must produce.
        let cases = [
            (
                [(0.8305, 0.7919), (0.9158, 0.9119), (0.8726, 0.8285)],
                0.8585,
            ),
            (
                [(0.7899, 0.7387), (0.9279, 0.9171), (0.8647, 0.8211)],
                0.8432,
            ),
            (
                [(0.8091, 0.7633), (0.9287, 0.9197), (0.8746, 0.8318)],
                0.8545,
            ),
        ];
        for (rows, expected) in cases {
            let sets: Vec<SetMetrics> = rows.iter().map(|&(p, s)| fixture(p, s)).collect();
            let got = final_score(&sets).unwrap();
            assert!(
                (got - expected).abs() < 5e-4,
                "expected {expected}, got {got}"
            );
        }
    }

    #[test]
    fn final_score_single_perfect_set_is_one() {
        assert_eq!(final_score(&[fixture(1.0, 1.0)]).unwrap(), 1.0);
    }

    #[test]
    fn final_score_empty_list_is_an_error() {
        assert!(matches!(final_score(&[]), Err(VraError::EmptyInput(_))));
    }

    #[test]
    fn report_embeds_its_own_final_score() {
        let report =
            MetricsReport::from_sets(vec![fixture(0.8, 0.6), fixture(0.4, 0.2)]).unwrap();
        assert!((report.final_score - 0.5).abs() < 1e-15);
        let text = report.render_text();
        assert!(text.contains("final_score"));
        assert!(text.lines().count() == 4);

        let json = serde_json::to_string(&report).unwrap();
        for key in ["plcc", "srcc", "rmse", "final_score"] {
            assert!(json.contains(key), "missing key {key}");
        }
        let back: MetricsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    proptest! {
        #[test]
        fn metric_symmetry(
            pairs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 3..40)
        ) {
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            prop_assume!(!super::is_constant(&x) && !super::is_constant(&y));
            let (pxy, pyx) = (plcc(&x, &y).unwrap(), plcc(&y, &x).unwrap());
            prop_assert!((pxy - pyx).abs() < 1e-12);
            let (sxy, syx) = (srcc(&x, &y).unwrap(), srcc(&y, &x).unwrap());
            prop_assert!((sxy - syx).abs() < 1e-12);
            prop_assert_eq!(rmse_metric(&x, &y).unwrap(), rmse_metric(&y, &x).unwrap());
            prop_assert!(pxy.abs() <= 1.0 && sxy.abs() <= 1.0);
        }
    }
}
