use pil_core::demand::{fit_mixed_erlang, make_deterministic, make_exponential, make_poisson, MomentTarget};
use pil_core::search::{alpha_d, build_grid, golden_section, nelder_mead_box, optimize_scalar, Family, SearchSpec};
use pil_core::sim::SimConfig;
use pil_core::system::CostParams;
use proptest::prelude::*;

#[test]
fn alpha_for_exponential_demand() {
    // at x = mu ln(1 + p/h) the scaled newsvendor cost reduces to x itself
    for (mu, p) in [(100.0, 9.0), (3.0, 4.0), (50.0, 1.0)] {
        let a = alpha_d(&make_exponential(mu).unwrap(), &CostParams::new(1.0, p).unwrap()).unwrap();
        let oracle = mu * (1.0f64 + p).ln();
        assert!((a - oracle).abs() < 1e-6 * oracle, "{a} vs {oracle}");
    }
}

#[test]
fn alpha_rejects_deterministic_demand() {
    assert!(alpha_d(&make_deterministic(4.0).unwrap(), &CostParams::new(1.0, 9.0).unwrap()).is_err());
}

#[test]
fn golden_section_on_a_parabola() {
    let (x, fx) = golden_section(|x| (x - 2.7).powi(2) + 1.0, 0.0, 10.0, 1e-8);
    assert!((x - 2.7).abs() < 1e-6);
    assert!((fx - 1.0).abs() < 1e-10);
}

#[test]
fn nelder_mead_respects_the_box() {
    // unconstrained minimum at (-1, 5); the box forces x >= 0
    let (x, _, _) = nelder_mead_box(
        |p| (p[0] + 1.0).powi(2) + (p[1] - 5.0).powi(2),
        [3.0, 3.0],
        [1.0, 1.0],
        [0.0, 0.0],
        [10.0, 10.0],
        1e-9,
        2000,
    );
    assert!(x[0].abs() < 1e-4 && (x[1] - 5.0).abs() < 1e-4, "{x:?}");
}

#[test]
fn constant_order_search_on_poisson_finds_four() {
    let d = make_poisson(5.0).unwrap();
    let cost = CostParams::new(1.0, 4.0).unwrap();
    let spec = SearchSpec::default_for(Family::ConstantOrder, &d, 1, &cost).unwrap();
    assert!(spec.integer);
    let o = optimize_scalar(Family::ConstantOrder, None, &d, 1, cost, &spec, &SimConfig::search(3)).unwrap();
    assert_eq!(o.param, 4.0);
}

#[test]
fn pil_search_on_deterministic_demand() {
    // with demand fixed at 10 the level 0 keeps stock at zero and loses nothing
    let d = make_deterministic(10.0).unwrap();
    let cost = CostParams::new(1.0, 9.0).unwrap();
    let spec = SearchSpec::default_for(Family::Pil, &d, 2, &cost).unwrap();
    let o = optimize_scalar(Family::Pil, None, &d, 2, cost, &spec, &SimConfig::search(1)).unwrap();
    assert!(o.estimate.cost < 0.05, "{:?}", o);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn grid_layout(mean in 5.0f64..200.0, cv in 0.3f64..1.6, p in 1.0f64..100.0, eps in 0.02f64..0.5) {
        let d = fit_mixed_erlang(MomentTarget::new(mean, cv).unwrap()).unwrap();
        let cost = CostParams::new(1.0, p).unwrap();
        let g = build_grid(eps, &d, &cost).unwrap();
        let a = alpha_d(&d, &cost).unwrap();
        let mu = d.mean();
        let n_lin = (2.0 * mu / (a * eps)).ceil() as usize;
        let n_geo = (p.ln() / (1.0 + eps).ln()).ceil() as usize;
        prop_assert_eq!(g.len(), n_lin + n_geo + 1);
        prop_assert!(g.points.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(g.points[0], 0.0);
        // linear part reaches within one step of 2 mu; geometric part covers (1 + p/h) mu
        prop_assert!(g.points[n_lin - 1] >= 2.0 * mu - eps * a - 1e-9);
        prop_assert!(*g.points.last().unwrap() >= (1.0 + p) * mu * (1.0 - 1e-12));
    }
}
