use pil_core::harness::{gap_summary, run_testbed, PolicyKind, TestbedSpec};
use pil_core::sim::SimConfig;

fn small_zipkin() -> TestbedSpec {
    let mut spec = TestbedSpec::zipkin(5).filter(|i| i.tau == 1 && i.p == 9.0);
    spec.policies = vec![PolicyKind::Optimal, PolicyKind::Pil, PolicyKind::BaseStock, PolicyKind::ConstantOrder];
    spec.search = SimConfig { replications: 2, periods: 4_000, warmup: 200, ci_target: None, ..SimConfig::default() };
    spec.eval = SimConfig { replications: 4, periods: 10_000, ci_target: None, ..SimConfig::default() }.with_seed(5);
    spec
}

#[test]
fn zipkin_slice_writes_reproducible_files() {
    let spec = small_zipkin();
    assert_eq!(spec.instances.len(), 2);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = run_testbed(&spec, a.path()).unwrap();
    run_testbed(&spec, b.path()).unwrap();
    assert_eq!(out.rows.len(), 8);
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, "zipkin.csv"), read(&b, "zipkin.csv"));
    assert_eq!(read(&a, "zipkin_summary.csv"), read(&b, "zipkin_summary.csv"));
    for r in &out.rows {
        assert_eq!(r.status, "ok", "{r:?}");
    }
    // Poisson optimum 5.44; simulated heuristics cannot beat it by more than noise
    let opt = out.rows.iter().find(|r| r.policy == "optimal" && r.demand.starts_with("poisson")).unwrap();
    assert!((opt.cost.unwrap() - 5.44).abs() < 0.01);
    for r in out.rows.iter().filter(|r| r.instance == opt.instance && r.policy != "optimal") {
        assert!(r.cost.unwrap() >= opt.cost.unwrap() - 3.0 * r.ci_half_width.unwrap(), "{r:?}");
    }
    // summary groups: cv, tau, p, total for bs and cop
    let g = gap_summary(&out.rows);
    assert!(g.iter().any(|x| x.factor == "total" && x.policy == "cop" && x.count == 2));
    assert!(g.iter().all(|x| x.policy != "optimal" && x.policy != "pil"));
}

#[test]
fn bad_rows_are_kept_with_status() {
    let mut spec = small_zipkin();
    // the exact solver rejects lead times above 8; the row stays in place
    for i in spec.instances.iter_mut() {
        i.tau = 9;
    }
    spec.exact_max_tau = 9;
    spec.policies = vec![PolicyKind::Optimal, PolicyKind::ConstantOrder];
    let dir = tempfile::tempdir().unwrap();
    let out = run_testbed(&spec, dir.path()).unwrap();
    assert_eq!(out.rows.len(), 4);
    assert!(out.rows[0].status.starts_with("error"));
    assert!(out.rows[0].cost.is_none());
    assert_eq!(out.rows[1].status, "ok");
}
