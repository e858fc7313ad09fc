use ilns::io::EstimateRow;
use ilns::metrics::{ate, horizontal_rmse, max_drift, rmse_enu, MetricsReport, SolveTimeStats};
use nalgebra::Vector3;
use proptest::prelude::*;

fn rows(errors: &[(f64, f64, f64)]) -> Vec<EstimateRow> {
    errors
        .iter()
        .enumerate()
        .map(|(i, &(e, n, u))| EstimateRow::new(i as f64, Vector3::new(e, n, u), Vector3::zeros()))
        .collect()
}

fn errors() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-50.0..50.0, -50.0..50.0, -50.0..50.0), 1..200)
}

proptest! {
    #[test]
    fn rmse_is_permutation_invariant(e in errors(), seed in any::<u64>()) {
        let mut shuffled = e.clone();
        let k = (seed as usize) % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let a = rmse_enu(&rows(&e)).unwrap();
        let b = rmse_enu(&rows(&shuffled)).unwrap();
        for i in 0..3 {
            prop_assert!((a[i] - b[i]).abs() <= 1e-12 * a[i].max(1.0));
        }
    }

    #[test]
    fn rmse_scales_with_magnitude(e in errors(), c in -10.0f64..10.0) {
        let scaled: Vec<_> = e.iter().map(|&(x, y, z)| (c * x, c * y, c * z)).collect();
        let a = rmse_enu(&rows(&e)).unwrap();
        let b = rmse_enu(&rows(&scaled)).unwrap();
        for i in 0..3 {
            prop_assert!((b[i] - c.abs() * a[i]).abs() <= 1e-12 * b[i].max(1.0));
        }
    }

    #[test]
    fn ate_combines_axes(e in errors()) {
        let r = rows(&e);
        let [x, y, z] = rmse_enu(&r).unwrap();
        let a = ate(&r).unwrap();
        prop_assert!(a + 1e-12 >= x.max(y).max(z));
        prop_assert!((a * a - (x * x + y * y + z * z)).abs() <= 1e-10 * (a * a).max(1.0));
        prop_assert!((horizontal_rmse(&r).unwrap() - x.hypot(y)).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn max_drift_bounds_horizontal_rmse(e in errors()) {
        let r = rows(&e);
        let last = r.last().unwrap().t;
        prop_assert!(max_drift(&r, 0.0, last).unwrap() + 1e-12 >= horizontal_rmse(&r).unwrap());
    }
}

#[test]
fn compensated_accumulation_matches_exact_sum() {
    // 1000 records where naive summation of the squares loses digits: one
    // large error followed by many small ones.
    let mut e = vec![(1e4, 0.0, 0.0)];
    e.extend((1..1000).map(|i| (1e-4 * (i % 7) as f64, 0.0, 0.0)));
    let r = rows(&e);
    // Σ squares = 1e8 + 1e-8·Σ(i mod 7)², with Σ(i mod 7)² over 1..999 = 12_977.
    let exact = ((1e8 + 1e-8 * 12_977.0) / 1000.0f64).sqrt();
    let got = rmse_enu(&r).unwrap()[0];
    assert!((got - exact).abs() <= 1e-12 * exact, "{got} vs {exact}");
}

#[test]
fn report_serializes_and_displays() {
    let r = rows(&[(3.0, 4.0, 0.0), (0.0, 0.0, 1.0)]);
    let rep = MetricsReport::compute(&r, Some(&[0.1, 0.3])).unwrap();
    assert_eq!(rep.max_drift, 5.0);
    assert_eq!(rep.solve_time, Some(SolveTimeStats { epochs: 2, total_s: 0.4, mean_s: 0.2, max_s: 0.3 }));
    let back: MetricsReport = serde_json::from_str(&rep.to_json()).unwrap();
    assert_eq!(back, rep);
    assert!(rep.to_string().contains("ATE"));
    let bare = MetricsReport::compute(&r, None).unwrap();
    assert!(!bare.to_json().contains("solve_time"));
}
