//! Acceptance checks shared by the `verify` command and the acceptance test
//! target. Each check returns a [`CheckResult`]; failures are keyed so that
//! the ones traced to inconsistent published figures can be told apart from
//! regressions.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backorder::{coupled_lost_vs_backorder, solve_backorder, CoupledConfig};
use crate::demand::{fit_mixed_erlang, make_exponential, make_geometric, make_poisson, DemandModel, MomentTarget};
use crate::error::Result;
use crate::harness::{run_rows, PolicyKind, ResultRow, TestbedSpec};
use crate::mdp::{solve_average_cost, MdpConfig};
use crate::policy::Policy;
use crate::projection::{ProjectionBackend, Projector};
use crate::search::{build_grid, grid_search, optimize_scalar, Family, SearchSpec};
use crate::sim::{estimate_cost, estimate_many_crn, SimConfig};
use crate::system::{CostParams, PipelineState};
use crate::theory::{
    best_constant_order, verify_backorder_dominance, verify_bias_fixed_point, verify_dominance,
    verify_monotone_in_level, verify_quadratic_divergence, BiasFunction,
};

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// One key per failed comparison.
    pub failures: Vec<String>,
    /// Failures explained by [`KNOWN_DEVIATIONS`].
    pub documented: Vec<String>,
    pub seconds: f64,
}

impl CheckResult {
    fn new(name: &str, failures: Vec<String>, detail: String, started: Instant) -> Self {
        let documented = failures.iter().filter(|f| known_deviation(f).is_some()).cloned().collect();
        Self {
            name: name.into(),
            passed: failures.is_empty(),
            detail,
            failures,
            documented,
            seconds: started.elapsed().as_secs_f64(),
        }
    }

    /// Failures not covered by a documented deviation.
    pub fn unexpected(&self) -> Vec<&String> {
        self.failures.iter().filter(|f| known_deviation(f).is_none()).collect()
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {} [{:.1}s]: {}", self.name, self.seconds, self.detail)?;
        if !self.failures.is_empty() {
            write!(
                f,
                " | {} failed, {} documented, {} unexpected",
                self.failures.len(),
                self.documented.len(),
                self.unexpected().len()
            )?;
            for k in &self.failures {
                match known_deviation(k) {
                    Some(why) => write!(f, "\n    {k} (documented: {why})")?,
                    None => write!(f, "\n    {k}")?,
                }
            }
        }
        Ok(())
    }
}

/// Failure keys that cannot pass under the model, with the reason.
pub const KNOWN_DEVIATIONS: &[(&str, &str)] = &[
    (
        "zipkin/poisson/p=19/cop",
        "the best integer order r=4 costs 20.275 exactly; no integer order gives 15.78",
    ),
    (
        "zipkin/poisson/p=39/cop",
        "the best integer order r=4 costs 40.275 exactly; no integer order gives 18.21",
    ),
    (
        "zipkin/geometric/p=9/cop",
        "the best integer order r=4 costs 19.00 exactly, above the published 18.19",
    ),
    (
        "zipkin/geometric/p=19/cop",
        "the best integer order r=4 costs 29.00 exactly, above the published 28.60",
    ),
    (
        "zipkin/geometric/p=39/cop",
        "the best integer order r=4 costs 49.00 exactly, above the published 36.73",
    ),
    (
        "zipkin/geometric/tau=3/p=19/pil",
        "published PIL value repeats the base-stock row; the computed PIL is lower",
    ),
    (
        "zipkin/geometric/tau=4/p=19/pil",
        "published PIL value repeats the base-stock row; the computed PIL is lower",
    ),
    (
        "grid/cardinality",
        "the grid has ceil(2mu/(alpha eps)) + ceil(ln(p/h)/ln(1+eps)) + 1 points; since ln(1+eps) < eps this \
         exceeds the stated bound by up to 1 + ln(p/h) (1/ln(1+eps) - 1/eps)",
    ),
];

pub fn known_deviation(key: &str) -> Option<&'static str> {
    KNOWN_DEVIATIONS
        .iter()
        .find(|(k, _)| key.starts_with(k))
        .map(|(_, why)| *why)
}

fn family_of(demand: &str) -> &'static str {
    if demand.starts_with("poisson") {
        "poisson"
    } else if demand.starts_with("geometric") {
        "geometric"
    } else {
        "other"
    }
}

const ZIPKIN_P: [f64; 4] = [4.0, 9.0, 19.0, 39.0];

/// Published Zipkin testbed costs, indexed `[p][tau - 1]`.
struct ZipkinTable {
    optimal: [[f64; 4]; 4],
    pil: [[f64; 4]; 4],
    myopic: [[f64; 4]; 4],
    base_stock: [[f64; 4]; 4],
    capped: [[f64; 4]; 4],
    cop: [f64; 4],
}

const POISSON_TABLE: ZipkinTable = ZipkinTable {
    optimal: [[4.04, 4.40, 4.60, 4.73], [5.44, 6.09, 6.53, 6.84], [6.68, 7.66, 8.36, 8.89], [7.84, 9.11, 10.04, 10.79]],
    pil: [[4.04, 4.40, 4.62, 4.74], [5.45, 6.12, 6.58, 6.90], [6.68, 7.68, 8.42, 8.95], [7.84, 9.12, 10.09, 10.91]],
    myopic: [[4.11, 4.56, 4.84, 5.06], [5.45, 6.22, 6.80, 7.20], [6.69, 7.77, 8.56, 9.18], [7.88, 9.16, 10.17, 11.04]],
    base_stock: [[4.16, 4.64, 4.98, 5.20], [5.55, 6.32, 6.86, 7.27], [6.73, 7.84, 8.60, 9.23], [7.86, 9.19, 10.22, 11.06]],
    capped: [[4.06, 4.41, 4.63, 4.80], [5.48, 6.12, 6.62, 6.91], [6.69, 7.72, 8.40, 8.95], [7.84, 9.14, 10.08, 10.88]],
    cop: [5.27, 10.27, 15.78, 18.21],
};

const GEOMETRIC_TABLE: ZipkinTable = ZipkinTable {
    optimal: [
        [9.82, 10.24, 10.47, 10.61],
        [14.51, 15.50, 16.14, 16.58],
        [19.22, 20.89, 22.06, 22.95],
        [23.87, 26.21, 27.96, 29.36],
    ],
    pil: [
        [9.84, 10.28, 10.51, 10.64],
        [14.55, 15.60, 16.27, 16.73],
        [19.28, 21.03, 22.73, 23.85],
        [23.94, 26.37, 28.18, 29.72],
    ],
    myopic: [
        [9.95, 10.57, 10.99, 11.31],
        [14.64, 15.93, 16.86, 17.61],
        [19.37, 21.30, 22.79, 24.02],
        [23.97, 26.55, 28.61, 30.31],
    ],
    base_stock: [
        [10.04, 10.70, 11.13, 11.44],
        [14.73, 15.99, 16.87, 17.54],
        [19.40, 21.31, 22.73, 23.85],
        [24.00, 26.55, 28.51, 30.12],
    ],
    capped: [
        [9.87, 10.32, 10.51, 10.70],
        [14.58, 15.63, 16.27, 16.73],
        [19.32, 21.06, 22.27, 23.28],
        [24.00, 26.30, 28.28, 29.76],
    ],
    cop: [11.00, 18.19, 28.60, 36.73],
};

/// Published cost for a Zipkin instance and policy.
pub fn zipkin_reference(demand: &str, tau: usize, p: f64, policy: PolicyKind) -> Option<f64> {
    let table = match family_of(demand) {
        "poisson" => &POISSON_TABLE,
        "geometric" => &GEOMETRIC_TABLE,
        _ => return None,
    };
    let pi = ZIPKIN_P.iter().position(|&x| x == p)?;
    if !(1..=4).contains(&tau) {
        return None;
    }
    let t = tau - 1;
    Some(match policy {
        PolicyKind::Optimal => table.optimal[pi][t],
        PolicyKind::Pil => table.pil[pi][t],
        PolicyKind::Myopic => table.myopic[pi][t],
        PolicyKind::BaseStock => table.base_stock[pi][t],
        PolicyKind::Capped => table.capped[pi][t],
        PolicyKind::ConstantOrder => table.cop[pi],
    })
}

/// Exact average-cost optimum on Poisson (lead times 1, 2) and geometric
/// (lead time 1) instances, within 0.02 of the published values.
pub fn check_exact_mdp() -> Result<CheckResult> {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    let cases: [(&str, usize); 3] = [("poisson", 1), ("poisson", 2), ("geometric", 1)];
    for (fam, tau) in cases {
        let demand = if fam == "poisson" { make_poisson(5.0)? } else { make_geometric(5.0)? };
        for p in ZIPKIN_P {
            let cost = CostParams::new(1.0, p)?;
            let sol = solve_average_cost(&demand, tau, cost, &MdpConfig::default())?;
            let target = zipkin_reference(fam, tau, p, PolicyKind::Optimal).unwrap_or(f64::NAN);
            let err = (sol.gain - target).abs();
            worst = worst.max(err);
            if !(err <= 0.02) || !sol.converged {
                failures.push(format!("mdp/{fam}/tau={tau}/p={p}: gain {:.4} vs {target}", sol.gain));
            }
        }
    }
    Ok(CheckResult::new(
        "exact MDP optimal rows within 0.02",
        failures,
        format!("12 instances, worst abs error {worst:.4}"),
        started,
    ))
}

/// Compares simulated Zipkin rows with the published ones within
/// `max(1%, CI half-width)` and checks PIL <= base-stock per instance.
pub fn check_zipkin_rows(rows: &[ResultRow]) -> CheckResult {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut compared = 0;
    let mut worst_rel: f64 = 0.0;
    for r in rows {
        let Some(kind) = policy_kind(&r.policy) else { continue };
        if kind == PolicyKind::Optimal {
            continue;
        }
        let fam = family_of(&r.demand);
        let Some(target) = zipkin_reference(fam, r.tau, r.p, kind) else { continue };
        let Some(cost) = r.cost else {
            failures.push(format!("zipkin/{fam}/tau={}/p={}/{}: {}", r.tau, r.p, r.policy, r.status));
            continue;
        };
        compared += 1;
        let tol = (0.01 * target).max(r.ci_half_width.unwrap_or(0.0));
        let rel = (cost - target).abs() / target;
        if (cost - target).abs() > tol {
            let key = if kind == PolicyKind::ConstantOrder {
                format!("zipkin/{fam}/p={}/cop/tau={}", r.p, r.tau)
            } else {
                format!("zipkin/{fam}/tau={}/p={}/{}", r.tau, r.p, r.policy)
            };
            failures.push(format!("{key}: {cost:.4} vs {target} (tol {tol:.4})"));
        } else {
            worst_rel = worst_rel.max(rel);
        }
    }
    let mut ordering = 0;
    for r in rows.iter().filter(|r| r.policy == "pil") {
        let bs = rows.iter().find(|b| b.instance == r.instance && b.policy == "bs");
        if let (Some(c), Some(b)) = (r.cost, bs.and_then(|b| b.cost)) {
            ordering += 1;
            if c > b {
                failures.push(format!(
                    "zipkin/{}/tau={}/p={}/pil-above-bs: {c:.4} > {b:.4}",
                    family_of(&r.demand),
                    r.tau,
                    r.p
                ));
            }
        }
    }
    CheckResult::new(
        "Zipkin heuristic rows within max(1%, CI); PIL <= base-stock",
        failures,
        format!("{compared} comparisons, worst passing rel. error {:.2}%, {ordering} PIL/base-stock pairs", 100.0 * worst_rel),
        started,
    )
}

fn policy_kind(name: &str) -> Option<PolicyKind> {
    use PolicyKind::*;
    [Optimal, Pil, Myopic, BaseStock, Capped, ConstantOrder]
        .into_iter()
        .find(|k| k.as_str() == name)
}

/// Runs the heuristic half of the Zipkin testbed and checks it.
pub fn check_zipkin_heuristics(seed: u64) -> Result<(CheckResult, Vec<ResultRow>)> {
    let started = Instant::now();
    let mut spec = TestbedSpec::zipkin(seed);
    spec.policies.retain(|&k| k != PolicyKind::Optimal);
    spec.search = SimConfig::search(seed).with_seed(11);
    // a 1% tolerance needs the estimate well inside it: extend to a 0.4% CI
    spec.eval = SimConfig {
        replications: 10,
        periods: 20_000,
        ci_target: Some(0.004),
        max_periods: 320_000,
        ..SimConfig::default()
    };
    let (rows, _) = run_rows(&spec);
    let mut res = check_zipkin_rows(&rows);
    res.seconds = started.elapsed().as_secs_f64();
    Ok((res, rows))
}

/// Bias function fixed point on 20 random parameterizations and simulated
/// constant-order cost against its closed form.
pub fn check_bias(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let mu = rng.gen_range(1.0..200.0);
        let h = rng.gen_range(0.5..2.0);
        let p = rng.gen_range(1.0..50.0) * h;
        let r = mu * rng.gen_range(0.05..0.98);
        let bf = BiasFunction::new(r, mu, h, p)?;
        let res = verify_bias_fixed_point(&bf, 50, 4.0);
        worst = worst.max(res);
        if !(res < 1e-6) {
            failures.push(format!("bias/fixed-point/{i}: residual {res:.3e} (mu={mu:.2}, r={r:.2}, h={h:.2}, p={p:.2})"));
        }
    }
    let mut sims = Vec::new();
    let demand = make_exponential(100.0)?;
    let cfg = SimConfig {
        warmup: 5000,
        seed: seed ^ 0xc0,
        ..SimConfig::default()
    };
    for p in [4.0, 9.0, 19.0] {
        let cost = CostParams::new(1.0, p)?;
        let r = best_constant_order(100.0, 1.0, p);
        let g = BiasFunction::new(r, 100.0, 1.0, p)?.gain();
        let e = estimate_cost(&Policy::ConstantOrder { r }, &demand, 1, cost, &cfg)?;
        let z = (e.cost - g) / e.std_error;
        sims.push(format!("p={p}: {:.2} vs {g:.2} ({z:+.2} SE)", e.cost));
        if z.abs() > 3.0 {
            failures.push(format!("bias/cop-gain/p={p}: {:.3} vs {g:.3}, {z:+.2} SE", e.cost));
        }
    }
    Ok(CheckResult::new(
        "bias fixed point < 1e-6 and constant-order gain within 3 SE",
        failures,
        format!("worst residual {worst:.2e}; {}", sims.join(", ")),
        started,
    ))
}

/// The simulated chain `C(P^{U*}) <= C(P^{U(r*)}) <= C(C^{r*})` for
/// exponential demand with mean 100.
pub fn check_dominance_chain(seed: u64, lead_times: &[usize], penalties: &[f64]) -> Result<CheckResult> {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut rows = 0;
    let mut slack: f64 = f64::INFINITY;
    for &tau in lead_times {
        for &p in penalties {
            let cost = CostParams::new(1.0, p)?;
            let search = SimConfig::search(seed.wrapping_add(tau as u64 * 100 + p as u64));
            let eval = SimConfig {
                replications: 10,
                periods: 20_000,
                ..SimConfig::default()
            }
            .with_seed(seed ^ 0xd0 ^ (tau as u64 * 1000 + p as u64));
            let row = verify_dominance(100.0, tau, cost, &search, &eval, 3.0)?;
            rows += 1;
            slack = slack.min(-row.diff_r_vs_cop / row.diff_r_vs_cop_se);
            if !row.chain_holds {
                failures.push(format!(
                    "chain/tau={tau}/p={p}: best-vs-U(r) {:+.3} (se {:.3}), U(r)-vs-cop {:+.3} (se {:.3})",
                    row.diff_best_vs_r, row.diff_best_vs_r_se, row.diff_r_vs_cop, row.diff_r_vs_cop_se
                ));
            }
        }
    }
    Ok(CheckResult::new(
        "improvement chain PIL* <= PIL(U(r*)) <= COP(r*) at 3 SE",
        failures,
        format!("{rows} settings; smallest COP margin {slack:.1} SE"),
        started,
    ))
}

/// Finite-horizon quadratic divergence identity at 3 SE.
pub fn check_divergence(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (tau, p) in [(1, 9.0), (2, 4.0), (4, 19.0)] {
        let bf = BiasFunction::new(best_constant_order(100.0, 1.0, p), 100.0, 1.0, p)?;
        let d = verify_quadratic_divergence(&bf, tau, 400, 2000, seed.wrapping_add(tau as u64))?;
        let z = d.residual / d.residual_se;
        parts.push(format!("tau={tau} p={p}: {z:+.2} SE"));
        if z.abs() > 3.0 {
            failures.push(format!("divergence/tau={tau}/p={p}: residual {:.2} se {:.2}", d.residual, d.residual_se));
        }
    }
    Ok(CheckResult::new(
        "quadratic divergence identity within 3 SE",
        failures,
        parts.join(", "),
        started,
    ))
}

/// Random mixed-Erlang instances used by several checks.
pub fn random_me_instances(seed: u64, n: usize) -> Result<Vec<(DemandModel, usize, CostParams<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mean = rng.gen_range(5.0..100.0);
            let cv = rng.gen_range(0.3..1.6);
            let tau = rng.gen_range(1..=6);
            let p = [1.0, 4.0, 9.0, 19.0, 49.0][rng.gen_range(0..5)];
            Ok((fit_mixed_erlang(MomentTarget::new(mean, cv)?)?, tau, CostParams::new(1.0, p)?))
        })
        .collect()
}

/// PIL at the level mirroring the back-order optimum costs no more than the
/// back-order optimum, and per period expects no more lost sales than the
/// back-order system expects backlog.
pub fn check_backorder(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut cases = Vec::new();
    for fam in ["poisson", "geometric"] {
        for tau in 1..=4 {
            for p in ZIPKIN_P {
                let d = if fam == "poisson" { make_poisson(5.0)? } else { make_geometric(5.0)? };
                cases.push((format!("{fam}/tau={tau}/p={p}"), d, tau, CostParams::new(1.0, p)?));
            }
        }
    }
    for (i, (d, tau, c)) in random_me_instances(seed, 20)?.into_iter().enumerate() {
        cases.push((format!("me{i}/{d}/tau={tau}/p={}", c.p), d, tau, c));
    }
    let sim = SimConfig {
        replications: 10,
        periods: 20_000,
        ..SimConfig::default()
    }
    .with_seed(seed);
    let coupled = CoupledConfig {
        seed,
        replications: 2000,
        periods: 40,
        ..CoupledConfig::default()
    };
    let mut failures = Vec::new();
    let mut worst_margin = f64::INFINITY;
    let mut periods = 0;
    for (key, d, tau, c) in &cases {
        let b = verify_backorder_dominance(d, *tau, *c, &sim, 3.0)?;
        worst_margin = worst_margin.min((b.c_star - b.cost_pil) / b.c_star);
        if !b.holds {
            failures.push(format!(
                "backorder/{key}: PIL {:.4} +- {:.4} vs C^B* {:.4}",
                b.cost_pil, b.half_width, b.c_star
            ));
        }
        let u = solve_backorder(d, *tau, c)?.pil_level(d, *tau);
        let rep = coupled_lost_vs_backorder(u, d, *tau, *c, &coupled)?;
        periods += rep.periods.len().saturating_sub(*tau);
        let bad = rep.lost_violations(*tau, 3.0);
        if !bad.is_empty() {
            failures.push(format!("backorder-periodwise/{key}: E[L_t] > E[B_t] at t={bad:?}"));
        }
    }
    Ok(CheckResult::new(
        "back-order dominance: C(PIL) <= C^B* + 3 CI and E[L_t] <= E[B_t]",
        failures,
        format!(
            "{} instances, {periods} period comparisons, smallest relative margin {:.2}%",
            cases.len(),
            100.0 * worst_margin
        ),
        started,
    ))
}

/// Cumulative orders nondecreasing and cumulative lost sales nonincreasing
/// in the PIL level, pathwise.
pub fn check_monotonicity(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let families = [
        make_exponential(100.0)?,
        make_poisson(5.0)?,
        fit_mixed_erlang(MomentTarget::new(100.0, 1.5)?)?,
    ];
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for d in &families {
        let mu = d.mean();
        let levels: Vec<f64> = [0.2, 0.6, 1.0, 1.5, 3.0].iter().map(|f| f * mu).collect();
        let m = verify_monotone_in_level(d, 3, CostParams::new(1.0, 9.0)?, &levels, 100, 300, seed, 1e-9)?;
        parts.push(format!("{d}: {} + {}", m.order_violations, m.lost_violations));
        if m.order_violations + m.lost_violations > 0 {
            failures.push(format!(
                "monotone/{d}: {} order and {} lost-sales violations, worst {:.2e}",
                m.order_violations, m.lost_violations, m.worst_excess
            ));
        }
    }
    Ok(CheckResult::new(
        "pathwise monotonicity in the PIL level (100 paths x 5 levels)",
        failures,
        parts.join(", "),
        started,
    ))
}

/// Guaranteed grid against golden-section search, and grid size against its
/// stated cardinality bound.
pub fn check_grid(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let instances: Vec<(DemandModel, usize, f64)> = vec![
        (make_exponential(100.0)?, 1, 4.0),
        (make_exponential(100.0)?, 2, 9.0),
        (make_exponential(100.0)?, 3, 19.0),
        (fit_mixed_erlang(MomentTarget::new(100.0, 0.5)?)?, 1, 9.0),
        (fit_mixed_erlang(MomentTarget::new(100.0, 0.5)?)?, 2, 4.0),
        (fit_mixed_erlang(MomentTarget::new(100.0, 1.5)?)?, 2, 19.0),
        (fit_mixed_erlang(MomentTarget::new(50.0, 0.8)?)?, 3, 1.0),
        (fit_mixed_erlang(MomentTarget::new(20.0, 1.2)?)?, 1, 49.0),
        (make_poisson(5.0)?, 1, 9.0),
        (make_geometric(5.0)?, 2, 4.0),
    ];
    let search = SimConfig {
        replications: 4,
        periods: 5_000,
        warmup: 500,
        ci_target: None,
        ..SimConfig::default()
    };
    let eval = SimConfig {
        replications: 10,
        periods: 10_000,
        ..SimConfig::default()
    };
    let mut failures = Vec::new();
    let mut sizes = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for (i, (d, tau, p)) in instances.iter().enumerate() {
        let cost = CostParams::new(1.0, *p)?;
        let spec = SearchSpec::default_for(Family::Pil, d, *tau, &cost)?;
        let golden = optimize_scalar(Family::Pil, None, d, *tau, cost, &spec, &search.with_seed(seed + i as u64))?;
        for eps in [0.05, 0.1, 0.25] {
            let grid = build_grid(eps, d, &cost)?;
            let g = grid_search(&grid, None, d, *tau, cost, &search.with_seed(seed + 100 + i as u64))?;
            let pols = [Family::Pil.policy(g.param, None), Family::Pil.policy(golden.param, None)];
            let est = estimate_many_crn(&pols, d, *tau, cost, &eval.with_seed(seed + 200 + i as u64))?;
            let bound = (1.0 + eps) * est[1].cost + 3.0 * est[0].half_width.max(est[1].half_width);
            worst_ratio = worst_ratio.max(est[0].cost / est[1].cost);
            if est[0].cost > bound {
                failures.push(format!(
                    "grid/cost/{i}/eps={eps}: grid {:.4} vs golden {:.4}",
                    est[0].cost, est[1].cost
                ));
            }
            sizes.push(format!("{}/{:.1}", grid.len(), grid.cardinality_bound));
            if !grid.within_bound() {
                failures.push(format!(
                    "grid/cardinality/{i}/eps={eps}: {} points > bound {:.3} (p/h={p})",
                    grid.len(),
                    grid.cardinality_bound
                ));
            }
        }
    }
    Ok(CheckResult::new(
        "guaranteed grid within (1+eps) of golden section and within its size bound",
        failures,
        format!("worst grid/golden ratio {worst_ratio:.4}; sizes/bounds {}", sizes.join(" ")),
        started,
    ))
}

fn random_state(rng: &mut ChaCha8Rng, tau: usize, mean: f64) -> Result<PipelineState<f64>> {
    let on_hand = rng.gen_range(0.0..3.0 * mean);
    let pipe = (1..tau).map(|_| rng.gen_range(0.0..2.0 * mean)).collect();
    PipelineState::new(on_hand, pipe)
}

/// Exact and customer-count projections against Monte Carlo at 4 SE, and the
/// customer-count throughput floor.
pub fn check_backends(seed: u64) -> Result<CheckResult> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(DemandModel, ProjectionBackend)> = vec![
        (make_poisson(5.0)?, ProjectionBackend::LatticeExact),
        (make_geometric(5.0)?, ProjectionBackend::LatticeExact),
        (fit_mixed_erlang(MomentTarget::new(100.0, 0.5)?)?, ProjectionBackend::MeCustomer),
        (make_exponential(100.0)?, ProjectionBackend::MeCustomer),
    ];
    let mut failures = Vec::new();
    let mut worst_z: f64 = 0.0;
    for (ci, (d, backend)) in cases.iter().enumerate() {
        let mut exact = Projector::new(d, *backend)?;
        for k in 0..100 {
            let tau = rng.gen_range(1..=5);
            let state = random_state(&mut rng, tau, d.mean())?;
            let a: f64 = exact.expected_lost(&state)?.iter().sum();
            let mut mc = Projector::new(
                d,
                ProjectionBackend::MonteCarlo {
                    paths: 20_000,
                    seed: rng.gen(),
                },
            )?;
            let b: f64 = mc.expected_lost(&state)?.iter().sum();
            let se = mc.last_standard_error();
            let z = if se > 0.0 { (a - b).abs() / se } else if (a - b).abs() < 1e-9 { 0.0 } else { f64::INFINITY };
            worst_z = worst_z.max(z);
            if z > 4.0 {
                failures.push(format!("backend/{ci}/{d}/state{k}: exact {a:.5} vs MC {b:.5} (se {se:.5})"));
            }
        }
    }
    let probe = crate::harness::throughput_probe(
        &["me:mean=100,cv=0.4".to_string(), "me:mean=100,cv=1.4".to_string()],
        &[1, 3, 6],
        &[4.0, 99.0],
        20_000,
        seed,
    )?;
    if probe.min < 1e5 {
        failures.push(format!("backend/throughput: {:.3e} projections/min", probe.min));
    }
    Ok(CheckResult::new(
        "projection backends agree with Monte Carlo at 4 SE; ME throughput >= 1e5/min",
        failures,
        format!(
            "400 states, worst {worst_z:.2} SE; ME projections/min min {:.2e} avg {:.2e}",
            probe.min, probe.avg
        ),
        started,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct LeadtimePoint {
    pub cv: f64,
    pub p: f64,
    pub tau: usize,
    pub pil: f64,
    pub base_stock: f64,
    pub cop: f64,
    pub half_width: f64,
}

/// Optimized PIL, base-stock and constant-order costs for one lead-time
/// instance, evaluated on common paths.
pub fn leadtime_point(cv: f64, p: f64, tau: usize, seed: u64, search: &SimConfig, eval: &SimConfig) -> Result<LeadtimePoint> {
    let d = fit_mixed_erlang(MomentTarget::new(100.0, cv)?)?;
    let cost = CostParams::new(1.0, p)?;
    let mut pols = Vec::new();
    for fam in [Family::Pil, Family::BaseStock, Family::ConstantOrder] {
        let mut spec = SearchSpec::default_for(fam, &d, tau, &cost)?;
        spec.tol = 1.0;
        let opt = optimize_scalar(fam, None, &d, tau, cost, &spec, &search.with_seed(seed))?;
        pols.push(fam.policy(opt.param, None));
    }
    let est = estimate_many_crn(&pols, &d, tau, cost, &eval.with_seed(seed ^ 0xe0))?;
    Ok(LeadtimePoint {
        cv,
        p,
        tau,
        pil: est[0].cost,
        base_stock: est[1].cost,
        cop: est[2].cost,
        half_width: est.iter().map(|e| e.half_width).fold(0.0, f64::max),
    })
}

/// Budgets used for the lead-time sweep: lean enough for a 20-period
/// pipeline on one core.
pub fn leadtime_configs() -> (SimConfig, SimConfig) {
    let search = SimConfig {
        replications: 4,
        periods: 5_000,
        warmup: 500,
        ci_target: None,
        ..SimConfig::default()
    };
    let eval = SimConfig {
        replications: 10,
        periods: 5_000,
        warmup: 1_000,
        ci_target: Some(0.01),
        max_periods: 400_000,
        ..SimConfig::default()
    };
    (search, eval)
}

/// PIL no worse than the better of base-stock and constant order across lead
/// times, and constant order overtaking base-stock at `p = 4`.
pub fn check_leadtime(seed: u64) -> Result<(CheckResult, Vec<LeadtimePoint>)> {
    let started = Instant::now();
    let (search, eval) = leadtime_configs();
    let mut points = Vec::new();
    for cv in [0.5, 1.5] {
        for p in [4.0, 9.0, 19.0] {
            for tau in [1, 5, 10, 20] {
                points.push(leadtime_point(cv, p, tau, seed.wrapping_add(tau as u64), &search, &eval)?);
            }
        }
    }
    let mut failures = Vec::new();
    for pt in &points {
        let best = pt.base_stock.min(pt.cop);
        if pt.pil > best + 3.0 * pt.half_width {
            failures.push(format!(
                "leadtime/cv={}/p={}/tau={}: PIL {:.2} > min(bs {:.2}, cop {:.2}) + 3 CI",
                pt.cv, pt.p, pt.tau, pt.pil, pt.base_stock, pt.cop
            ));
        }
    }
    let mut crossover = Vec::new();
    for cv in [0.5, 1.5] {
        let panel: Vec<&LeadtimePoint> = points.iter().filter(|x| x.cv == cv && x.p == 4.0).collect();
        let first = panel.first().map(|x| x.base_stock < x.cop).unwrap_or(false);
        let last = panel.last().map(|x| x.cop < x.base_stock).unwrap_or(false);
        crossover.push(format!("cv={cv}: bs<cop at tau=1 {first}, cop<bs at tau=20 {last}"));
        if !(first && last) {
            failures.push(format!("leadtime/crossover/cv={cv}"));
        }
    }
    let max_gap = points
        .iter()
        .map(|x| 100.0 * (x.pil - x.base_stock.min(x.cop)) / x.pil)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok((
        CheckResult::new(
            "lead-time trend: PIL <= min(bs, cop) + 3 CI; cop overtakes bs at p=4",
            failures,
            format!("{} points, largest PIL excess {max_gap:.2}%; {}", points.len(), crossover.join("; ")),
            started,
        ),
        points,
    ))
}
