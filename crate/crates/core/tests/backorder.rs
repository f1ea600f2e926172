use pil_core::backorder::{coupled_lost_vs_backorder, solve_backorder, BackorderState, CoupledConfig};
use pil_core::demand::{make_exponential, make_poisson};
use pil_core::system::CostParams;
use proptest::prelude::*;

fn poisson_pmf(m: f64, n: usize) -> Vec<f64> {
    let mut out = vec![(-m).exp()];
    for k in 1..n {
        out.push(out[k - 1] * m / k as f64);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn newsvendor_level_and_cost(mean in 0.5f64..8.0, tau in 1usize..5, p in 0.5f64..40.0) {
        let d = make_poisson(mean).unwrap();
        let cost = CostParams::new(1.0, p).unwrap();
        let sol = solve_backorder(&d, tau, &cost).unwrap();
        let pmf = poisson_pmf(mean * (tau + 1) as f64, 400);
        let frac = p / (p + 1.0);
        let mut cdf = 0.0;
        let mut s = 0;
        for (k, q) in pmf.iter().enumerate() {
            cdf += q;
            if cdf >= frac - 1e-12 {
                s = k;
                break;
            }
        }
        prop_assert_eq!(sol.s_star, s as f64);
        let c: f64 = pmf
            .iter()
            .enumerate()
            .map(|(k, q)| q * if k <= s { (s - k) as f64 } else { p * (k - s) as f64 })
            .sum();
        prop_assert!((sol.c_star - c).abs() < 1e-8 * c.max(1.0));
    }

    #[test]
    fn net_stock_balance(demands in prop::collection::vec(0.0f64..20.0, 1..40), s in 0.0f64..50.0, tau in 1usize..5) {
        let mut b = BackorderState::empty(tau);
        for &d in &demands {
            let before = b.position();
            let (left, backlog) = b.step(s, d);
            prop_assert!(left >= 0.0 && backlog >= 0.0);
            prop_assert!(left * backlog == 0.0);
            // after ordering up to max(s, position) demand is subtracted
            prop_assert!((b.position() - (before.max(s) - d)).abs() < 1e-9);
        }
    }
}

#[test]
fn lost_sales_never_exceed_backlog_in_expectation() {
    let d = make_exponential(10.0).unwrap();
    let cost = CostParams::new(1.0, 9.0).unwrap();
    let sol = solve_backorder(&d, 3, &cost).unwrap();
    let cfg = CoupledConfig {
        replications: 1000,
        periods: 30,
        ..CoupledConfig::default()
    };
    let rep = coupled_lost_vs_backorder(sol.pil_level(&d, 3), &d, 3, cost, &cfg).unwrap();
    assert!(rep.lost_violations(3, 3.0).is_empty());
    // the pipeline is empty at the start, so both systems lose everything first
    assert!((rep.periods[0].lost - rep.periods[0].backlog).abs() < 1e-12);
}
