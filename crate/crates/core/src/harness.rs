//! Testbed runner: optimizes and evaluates every policy on every instance
//! of a named grid and writes CSV artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::demand::DemandModel;
use crate::error::{Error, Result};
use crate::mdp::{solve_average_cost, MdpConfig};
use crate::policy::Policy;
use crate::projection::{ProjectionBackend, Projector};
use crate::search::{optimize_capped, optimize_scalar, Family, SearchSpec};
use crate::sim::{estimate_cost, CostEstimate, SimConfig};
use crate::system::{CostParams, PipelineState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum TestbedName {
    Zipkin,
    Large,
    Leadtime,
}

impl TestbedName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Zipkin => "zipkin",
            Self::Large => "large",
            Self::Leadtime => "leadtime",
        }
    }
}

impl std::str::FromStr for TestbedName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zipkin" => Ok(Self::Zipkin),
            "large" => Ok(Self::Large),
            "leadtime" => Ok(Self::Leadtime),
            other => Err(Error::Parse(format!("unknown testbed '{other}'"))),
        }
    }
}

/// Policies a testbed can report. `Optimal` is the exact MDP gain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum PolicyKind {
    Optimal,
    Pil,
    Myopic,
    BaseStock,
    Capped,
    ConstantOrder,
}

impl PolicyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Optimal => "optimal",
            Self::Pil => "pil",
            Self::Myopic => "myopic",
            Self::BaseStock => "bs",
            Self::Capped => "cbs",
            Self::ConstantOrder => "cop",
        }
    }
}

/// Two-moment fits used for the large testbed. The table rows use the
/// first set; the prose lists the second.
pub const CV_GRID_TABLE: [f64; 6] = [0.4, 0.6, 0.8, 1.0, 1.2, 1.4];
pub const CV_GRID_PROSE: [f64; 6] = [0.15, 0.25, 0.5, 1.0, 1.5, 2.0];

#[derive(Clone, Debug, Serialize)]
pub struct Instance {
    pub id: usize,
    pub demand: String,
    pub cv: f64,
    pub tau: usize,
    pub h: f64,
    pub p: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TestbedSpec {
    pub name: TestbedName,
    pub instances: Vec<Instance>,
    pub policies: Vec<PolicyKind>,
    pub seed: u64,
    /// Exact MDP rows for lead times up to this value.
    pub exact_max_tau: usize,
    pub search: SimConfig,
    pub eval: SimConfig,
    pub backend: Option<ProjectionBackend>,
    /// Nelder-Mead / pattern-search budget per start for capped base-stock.
    pub capped_evals: usize,
}

impl TestbedSpec {
    fn grid(name: TestbedName, demands: &[(String, f64)], taus: &[usize], ps: &[f64], policies: Vec<PolicyKind>, seed: u64) -> Self {
        let mut instances = Vec::new();
        for (d, cv) in demands {
            for &tau in taus {
                for &p in ps {
                    instances.push(Instance {
                        id: instances.len(),
                        demand: d.clone(),
                        cv: *cv,
                        tau,
                        h: 1.0,
                        p,
                    });
                }
            }
        }
        Self {
            name,
            instances,
            policies,
            seed,
            exact_max_tau: 2,
            search: SimConfig::search(seed),
            eval: SimConfig::default().with_seed(seed),
            backend: None,
            capped_evals: 120,
        }
    }

    /// Poisson and geometric demand with mean 5, `tau` 1..4, `p` in {4, 9, 19, 39}.
    pub fn zipkin(seed: u64) -> Self {
        let demands = [
            ("poisson:mean=5".to_string(), 1.0 / 5f64.sqrt()),
            ("geometric:mean=5".to_string(), (30f64).sqrt() / 5.0),
        ];
        use PolicyKind::*;
        Self::grid(
            TestbedName::Zipkin,
            &demands,
            &[1, 2, 3, 4],
            &[4.0, 9.0, 19.0, 39.0],
            vec![Optimal, Pil, Myopic, BaseStock, Capped, ConstantOrder],
            seed,
        )
    }

    /// Mixed-Erlang demand with mean 100, cv in {0.5, 1.5}, `tau` 1..20,
    /// `p` in {4, 9, 19}.
    pub fn leadtime(seed: u64) -> Self {
        let demands: Vec<(String, f64)> = [0.5, 1.5].iter().map(|&cv| (format!("me:mean=100,cv={cv}"), cv)).collect();
        let taus: Vec<usize> = (1..=20).collect();
        use PolicyKind::*;
        Self::grid(TestbedName::Leadtime, &demands, &taus, &[4.0, 9.0, 19.0], vec![Pil, BaseStock, ConstantOrder], seed)
    }

    /// Mixed-Erlang demand with mean 100 over a cv grid, `tau` 1..6,
    /// `p` in {1, 4, 9, 19, 49, 99}.
    pub fn large(seed: u64, cv_grid: &[f64]) -> Self {
        let demands: Vec<(String, f64)> = cv_grid.iter().map(|&cv| (format!("me:mean=100,cv={cv}"), cv)).collect();
        use PolicyKind::*;
        Self::grid(
            TestbedName::Large,
            &demands,
            &[1, 2, 3, 4, 5, 6],
            &[1.0, 4.0, 9.0, 19.0, 49.0, 99.0],
            vec![Pil, BaseStock, ConstantOrder, Capped],
            seed,
        )
    }

    pub fn named(name: TestbedName, seed: u64) -> Self {
        match name {
            TestbedName::Zipkin => Self::zipkin(seed),
            TestbedName::Leadtime => Self::leadtime(seed),
            TestbedName::Large => Self::large(seed, &CV_GRID_TABLE),
        }
    }

    /// Keeps only instances matching the predicate, renumbering nothing.
    pub fn filter<F: Fn(&Instance) -> bool>(mut self, keep: F) -> Self {
        self.instances.retain(|i| keep(i));
        self
    }
}

/// Per-instance seed so each instance has its own demand paths and all of
/// an instance's policies share them.
fn instance_seed(master: u64, id: usize) -> u64 {
    master.wrapping_mul(1_000_003).wrapping_add(id as u64)
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultRow {
    pub testbed: String,
    pub instance: usize,
    pub demand: String,
    pub cv: f64,
    pub tau: usize,
    pub h: f64,
    pub p: f64,
    pub policy: String,
    pub param1_name: String,
    pub param1: Option<f64>,
    pub param2_name: String,
    pub param2: Option<f64>,
    pub cost: Option<f64>,
    pub ci_half_width: Option<f64>,
    pub periods: Option<usize>,
    pub replications: Option<usize>,
    pub seed: u64,
    pub status: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct TimingRow {
    pub instance: usize,
    pub policy: String,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TestbedOutput {
    pub rows: Vec<ResultRow>,
    pub timing: Vec<TimingRow>,
    pub files: Vec<PathBuf>,
}

struct Outcome {
    params: Vec<(&'static str, f64)>,
    estimate: Option<CostEstimate>,
    cost: f64,
    status: String,
}

fn run_policy(kind: PolicyKind, inst: &Instance, spec: &TestbedSpec) -> Result<Outcome> {
    let demand: DemandModel = inst.demand.parse()?;
    let cost = CostParams::new(inst.h, inst.p)?;
    let seed = instance_seed(spec.seed, inst.id);
    let search = spec.search.with_seed(seed ^ 0x5eed);
    let eval = spec.eval.with_seed(seed);
    let evaluate = |policy: &Policy| estimate_cost(policy, &demand, inst.tau, cost, &eval);
    let scalar = |family: Family| -> Result<Outcome> {
        let ss = SearchSpec::default_for(family, &demand, inst.tau, &cost)?;
        let opt = optimize_scalar(family, spec.backend, &demand, inst.tau, cost, &ss, &search)?;
        let policy = family.policy(opt.param, spec.backend);
        let e = evaluate(&policy)?;
        Ok(Outcome {
            params: policy.params(),
            estimate: Some(e),
            cost: e.cost,
            status: status_of(&e, opt.edge_flag),
        })
    };
    match kind {
        PolicyKind::Optimal => {
            let sol = solve_average_cost(&demand, inst.tau, cost, &MdpConfig::default())?;
            let status = if !sol.converged {
                "not-converged".to_string()
            } else if sol.boundary_mass > 1e-6 {
                format!("cap-boundary-mass={:.2e}", sol.boundary_mass)
            } else {
                "ok".to_string()
            };
            Ok(Outcome {
                params: vec![],
                estimate: None,
                cost: sol.gain,
                status,
            })
        }
        PolicyKind::Pil => scalar(Family::Pil),
        PolicyKind::BaseStock => scalar(Family::BaseStock),
        PolicyKind::ConstantOrder => scalar(Family::ConstantOrder),
        PolicyKind::Myopic => {
            let policy = Policy::Myopic { backend: spec.backend };
            let e = evaluate(&policy)?;
            Ok(Outcome {
                params: vec![],
                estimate: Some(e),
                cost: e.cost,
                status: status_of(&e, false),
            })
        }
        PolicyKind::Capped => {
            let opt = optimize_capped(&demand, inst.tau, cost, &search, spec.capped_evals)?;
            let policy = Policy::CappedBaseStock { s: opt.s, r: opt.r };
            let e = evaluate(&policy)?;
            let mut status = status_of(&e, false);
            if opt.flat_flag {
                status.push_str(";flat-region");
            }
            Ok(Outcome {
                params: policy.params(),
                estimate: Some(e),
                cost: e.cost,
                status,
            })
        }
    }
}

fn status_of(e: &CostEstimate, edge: bool) -> String {
    match (e.target_missed, edge) {
        (false, false) => "ok".into(),
        (true, false) => "ci-target-missed".into(),
        (false, true) => "bracket-edge".into(),
        (true, true) => "ci-target-missed;bracket-edge".into(),
    }
}

/// Runs every (instance, policy) pair. Rows come back in instance order, then
/// in the spec's policy order, whatever the scheduling.
pub fn run_rows(spec: &TestbedSpec) -> (Vec<ResultRow>, Vec<TimingRow>) {
    let mut jobs = Vec::new();
    for inst in &spec.instances {
        for &kind in &spec.policies {
            if kind == PolicyKind::Optimal && inst.tau > spec.exact_max_tau {
                continue;
            }
            jobs.push((inst, kind));
        }
    }
    let results: Vec<(ResultRow, TimingRow)> = jobs
        .par_iter()
        .map(|&(inst, kind)| {
            let start = Instant::now();
            let out = run_policy(kind, inst, spec);
            let wall = start.elapsed().as_secs_f64();
            let mut row = ResultRow {
                testbed: spec.name.as_str().into(),
                instance: inst.id,
                demand: inst.demand.clone(),
                cv: inst.cv,
                tau: inst.tau,
                h: inst.h,
                p: inst.p,
                policy: kind.as_str().into(),
                param1_name: String::new(),
                param1: None,
                param2_name: String::new(),
                param2: None,
                cost: None,
                ci_half_width: None,
                periods: None,
                replications: None,
                seed: instance_seed(spec.seed, inst.id),
                status: String::new(),
            };
            match out {
                Ok(o) => {
                    if let Some(&(n, v)) = o.params.first() {
                        row.param1_name = n.into();
                        row.param1 = Some(v);
                    }
                    if let Some(&(n, v)) = o.params.get(1) {
                        row.param2_name = n.into();
                        row.param2 = Some(v);
                    }
                    row.cost = Some(o.cost);
                    if let Some(e) = o.estimate {
                        row.ci_half_width = Some(e.half_width);
                        row.periods = Some(e.periods);
                        row.replications = Some(e.replications);
                    }
                    row.status = o.status;
                }
                Err(e) => row.status = format!("error: {e}"),
            }
            let timing = TimingRow {
                instance: inst.id,
                policy: kind.as_str().into(),
                wall_seconds: wall,
            };
            (row, timing)
        })
        .collect();
    results.into_iter().unzip()
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs a testbed and writes, into `out_dir`:
/// `<name>.csv` (results), `<name>_timing.csv` (wall times, kept apart so the
/// results file is reproducible byte for byte), `<name>_config.json`,
/// `<name>_summary.csv` (gap table versus PIL) and, for the lead-time
/// testbed, one `leadtime_cv<cv>_p<p>.csv` per panel.
pub fn run_testbed(spec: &TestbedSpec, out_dir: &Path) -> Result<TestbedOutput> {
    fs::create_dir_all(out_dir)?;
    let name = spec.name.as_str();
    let config = out_dir.join(format!("{name}_config.json"));
    fs::write(&config, serde_json::to_string_pretty(spec)?)?;
    let (rows, timing) = run_rows(spec);
    let results = out_dir.join(format!("{name}.csv"));
    write_csv(&results, &rows)?;
    let timing_path = out_dir.join(format!("{name}_timing.csv"));
    write_csv(&timing_path, &timing)?;
    let summary = out_dir.join(format!("{name}_summary.csv"));
    write_csv(&summary, &gap_summary(&rows))?;
    let mut files = vec![results, timing_path, config, summary];
    if spec.name == TestbedName::Leadtime {
        files.extend(write_leadtime_panels(&rows, out_dir)?);
    }
    Ok(TestbedOutput { rows, timing, files })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapRow {
    /// `cv`, `tau`, `p` or `total`.
    pub factor: String,
    pub level: String,
    pub policy: String,
    pub min: f64,
    pub max: f64,
    pub avg: f64,
    pub count: usize,
}

/// Percentage gap `100 (C(policy) - C(PIL)) / C(PIL)` per instance, grouped
/// by cv, lead time, penalty and overall.
pub fn gap_summary(rows: &[ResultRow]) -> Vec<GapRow> {
    let mut pil = BTreeMap::new();
    for r in rows.iter().filter(|r| r.policy == "pil") {
        if let Some(c) = r.cost {
            pil.insert(r.instance, c);
        }
    }
    let policies: Vec<String> = {
        let mut v: Vec<String> = Vec::new();
        for r in rows {
            if r.policy != "pil" && r.policy != "optimal" && !v.contains(&r.policy) {
                v.push(r.policy.clone());
            }
        }
        v
    };
    let gaps: Vec<(&ResultRow, f64)> = rows
        .iter()
        .filter_map(|r| {
            let base = pil.get(&r.instance)?;
            let c = r.cost?;
            (r.policy != "pil" && r.policy != "optimal").then(|| (r, 100.0 * (c - base) / base))
        })
        .collect();
    let mut out = Vec::new();
    let fmt = |x: f64| format!("{}", (x * 1e9).round() / 1e9);
    let factors: [(&str, Box<dyn Fn(&ResultRow) -> String>); 4] = [
        ("cv", Box::new(|r: &ResultRow| fmt(r.cv))),
        ("tau", Box::new(|r: &ResultRow| r.tau.to_string())),
        ("p", Box::new(|r: &ResultRow| fmt(r.p))),
        ("total", Box::new(|_: &ResultRow| "all".to_string())),
    ];
    for (factor, key) in factors.iter() {
        let mut levels: Vec<(f64, String)> = Vec::new();
        for (r, _) in &gaps {
            let k = key(r);
            if !levels.iter().any(|(_, l)| *l == k) {
                levels.push((k.parse().unwrap_or(0.0), k));
            }
        }
        levels.sort_by(|a, b| a.0.total_cmp(&b.0));
        for (_, level) in &levels {
            for pol in &policies {
                let vals: Vec<f64> = gaps
                    .iter()
                    .filter(|(r, _)| &r.policy == pol && key(r) == *level)
                    .map(|(_, g)| *g)
                    .collect();
                if vals.is_empty() {
                    continue;
                }
                out.push(GapRow {
                    factor: factor.to_string(),
                    level: level.clone(),
                    policy: pol.clone(),
                    min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
                    max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                    avg: vals.iter().sum::<f64>() / vals.len() as f64,
                    count: vals.len(),
                });
            }
        }
    }
    out
}

/// One file per (cv, p) with columns `tau, CBS, CPIL, COP`, where `CBS` is
/// the base-stock cost.
pub fn write_leadtime_panels(rows: &[ResultRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut panels: BTreeMap<(String, String), BTreeMap<usize, [Option<f64>; 3]>> = BTreeMap::new();
    for r in rows {
        let col = match r.policy.as_str() {
            "bs" => 0,
            "pil" => 1,
            "cop" => 2,
            _ => continue,
        };
        let key = (format!("{}", r.cv), format!("{}", r.p));
        panels.entry(key).or_default().entry(r.tau).or_default()[col] = r.cost;
    }
    let mut files = Vec::new();
    for ((cv, p), taus) in panels {
        let path = out_dir.join(format!("leadtime_cv{cv}_p{p}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["tau", "CBS", "CPIL", "COP"])?;
        for (tau, cols) in taus {
            let cell = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([tau.to_string(), cell(cols[0]), cell(cols[1]), cell(cols[2])])?;
        }
        w.flush()?;
        files.push(path);
    }
    Ok(files)
}

#[derive(Clone, Debug, Serialize)]
pub struct ThroughputCell {
    pub demand: String,
    pub tau: usize,
    pub p: f64,
    pub projections: usize,
    pub per_minute: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ThroughputReport {
    pub cells: Vec<ThroughputCell>,
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

/// ME-recursion projections per minute, single-threaded, on states visited
/// by a PIL policy set at the back-order-mirroring level.
pub fn throughput_probe(demands: &[String], taus: &[usize], ps: &[f64], projections: usize, seed: u64) -> Result<ThroughputReport> {
    let mut cells = Vec::new();
    for d in demands {
        let demand: DemandModel = d.parse()?;
        for &tau in taus {
            for &p in ps {
                let cost = CostParams::new(1.0, p)?;
                let u = crate::backorder::solve_backorder(&demand, tau, &cost)?.pil_level(&demand, tau);
                let mut proj = Projector::new(&demand, ProjectionBackend::MeCustomer)?;
                let mut rng = crate::sim::stream_rng(seed, 0x7a, 0);
                let mut state = PipelineState::<f64>::empty(tau)?;
                let mut states = Vec::with_capacity(projections);
                for _ in 0..projections {
                    let q = (u - proj.expected_level(&state)?).max(0.0);
                    states.push(state.clone());
                    state.advance(q, demand.sample(&mut rng));
                }
                let start = Instant::now();
                let mut sink = 0.0;
                for s in &states {
                    sink += proj.expected_level(s)?;
                }
                let secs = start.elapsed().as_secs_f64().max(1e-9);
                std::hint::black_box(sink);
                cells.push(ThroughputCell {
                    demand: d.clone(),
                    tau,
                    p,
                    projections,
                    per_minute: projections as f64 * 60.0 / secs,
                });
            }
        }
    }
    let rates: Vec<f64> = cells.iter().map(|c| c.per_minute).collect();
    Ok(ThroughputReport {
        min: rates.iter().cloned().fold(f64::INFINITY, f64::min),
        max: rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        avg: rates.iter().sum::<f64>() / rates.len().max(1) as f64,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn testbed_sizes() {
        assert_eq!(TestbedSpec::zipkin(1).instances.len(), 32);
        assert_eq!(TestbedSpec::leadtime(1).instances.len(), 120);
        assert_eq!(TestbedSpec::large(1, &CV_GRID_TABLE).instances.len(), 216);
        assert_eq!(TestbedSpec::large(1, &CV_GRID_PROSE).instances.len(), 216);
    }

    fn row(instance: usize, policy: &str, cost: f64, tau: usize) -> ResultRow {
        ResultRow {
            testbed: "t".into(),
            instance,
            demand: "d".into(),
            cv: 0.5,
            tau,
            h: 1.0,
            p: 4.0,
            policy: policy.into(),
            param1_name: String::new(),
            param1: None,
            param2_name: String::new(),
            param2: None,
            cost: Some(cost),
            ci_half_width: None,
            periods: None,
            replications: None,
            seed: 0,
            status: "ok".into(),
        }
    }

    #[test]
    fn gaps_against_pil() {
        let rows = vec![
            row(0, "pil", 10.0, 1),
            row(0, "bs", 11.0, 1),
            row(1, "pil", 20.0, 2),
            row(1, "bs", 20.0, 2),
        ];
        let g = gap_summary(&rows);
        let total = g.iter().find(|r| r.factor == "total").unwrap();
        assert_eq!((total.min, total.max, total.avg, total.count), (0.0, 10.0, 5.0, 2));
        let tau1 = g.iter().find(|r| r.factor == "tau" && r.level == "1").unwrap();
        assert_eq!(tau1.max, 10.0);
    }

    #[test]
    fn all_equal_costs_give_zero_gaps() {
        let rows = vec![row(0, "pil", 3.0, 1), row(0, "cop", 3.0, 1), row(0, "bs", 3.0, 1)];
        assert!(gap_summary(&rows).iter().all(|g| g.min == 0.0 && g.max == 0.0));
    }
}
