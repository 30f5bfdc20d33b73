mod common;

use if2net::metrics::{acc, bwt, fwt, rademacher_estimate, ridge_sign_fit, AccuracyMatrix};
use proptest::prelude::*;

/// Lower-triangular matrix of percentages, entries `k / 100`.
fn matrix_strategy() -> impl Strategy<Value = (Vec<Vec<u32>>, Vec<u32>)> {
    (2usize..7).prop_flat_map(|t| {
        let rows: Vec<_> = (1..=t).map(|n| prop::collection::vec(0u32..=100, n)).collect();
        (rows, prop::collection::vec(0u32..=100, t))
    })
}

fn to_matrix(rows: &[Vec<u32>], ind: &[u32]) -> AccuracyMatrix {
    let mut m = AccuracyMatrix::from_rows(rows.iter().map(|r| r.iter().map(|&k| k as f64 / 100.0).collect()).collect()).unwrap();
    m.set_independent(ind.iter().map(|&k| k as f64 / 100.0).collect()).unwrap();
    m
}

proptest! {
    #[test]
    fn scores_match_integer_arithmetic((rows, ind) in matrix_strategy()) {
        let m = to_matrix(&rows, &ind);
        let t = rows.len() as i64;
        let last = &rows[rows.len() - 1];
        // exact numerators in hundredths
        let acc_num: i64 = last.iter().map(|&k| k as i64).sum();
        let bwt_num: i64 = (0..rows.len() - 1).map(|k| last[k] as i64 - rows[k][k] as i64).sum();
        let fwt_num: i64 = (1..rows.len()).map(|k| rows[k][k] as i64 - ind[k] as i64).sum();
        prop_assert!((acc(&m).unwrap() - acc_num as f64 / (100 * t) as f64).abs() < 1e-12);
        prop_assert!((bwt(&m).unwrap() - bwt_num as f64 / (100 * (t - 1)) as f64).abs() < 1e-12);
        prop_assert!((fwt(&m).unwrap() - fwt_num as f64 / (100 * (t - 1)) as f64).abs() < 1e-12);
    }

    #[test]
    fn no_forgetting_means_zero_bwt((mut rows, ind) in matrix_strategy()) {
        let t = rows.len();
        for k in 0..t - 1 {
            rows[t - 1][k] = rows[k][k];
        }
        prop_assert_eq!(bwt(&to_matrix(&rows, &ind)).unwrap(), 0.0);
    }

    #[test]
    fn rademacher_deterministic_and_non_negative(seed in 0u64..1000, tasks in 1usize..4) {
        let vs: Vec<_> = (0..tasks).map(|t| common::uniform(30, 5, -1.0, 1.0, seed * 10 + t as u64)).collect();
        let views: Vec<_> = vs.iter().map(|v| v.view()).collect();
        let a = rademacher_estimate(ridge_sign_fit(1e-6), &views, 8, seed).unwrap();
        let b = rademacher_estimate(ridge_sign_fit(1e-6), &views, 8, seed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.per_task_values.iter().all(|&v| v >= 0.0));
        let acc = a.accumulated();
        prop_assert!(acc.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn rademacher_shrinks_with_sample_size() {
    let values: Vec<f64> = [100usize, 400, 1600]
        .iter()
        .map(|&m| {
            let v = common::uniform(m, 10, -1.0, 1.0, m as u64);
            rademacher_estimate(ridge_sign_fit(1e-6), &[v.view()], 50, 3).unwrap().per_task_values[0]
        })
        .collect();
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn accuracy_matrix_json_round_trip() {
    let m = to_matrix(&[vec![90], vec![85, 93]], &[91, 94]);
    let json = serde_json::to_string(&m).unwrap();
    let back: AccuracyMatrix = serde_json::from_str(&json).unwrap();
    assert_eq!(back, m);
}
