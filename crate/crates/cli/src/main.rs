use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pil_core::backorder::solve_backorder;
use pil_core::checks::{self, CheckResult};
use pil_core::demand::DemandModel;
use pil_core::harness::{run_testbed, throughput_probe, TestbedName, TestbedSpec, CV_GRID_PROSE, CV_GRID_TABLE};
use pil_core::mdp::{solve_average_cost, write_policy_csv, MdpConfig};
use pil_core::policy::Policy;
use pil_core::projection::ProjectionBackend;
use pil_core::search::{build_grid, grid_search, optimize_capped, optimize_scalar, Family, SearchSpec};
use pil_core::sim::{estimate_cost, SimConfig};
use pil_core::system::CostParams;

#[derive(Parser)]
#[command(name = "pil", about = "Lost-sales inventory experiments: PIL policy, competitors, exact MDP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Projection backend for PIL and myopic: lattice, me, or mc:paths=N,seed=S.
    #[arg(long)]
    projection: Option<ProjectionBackend>,
    /// Relative CI half-width target for evaluations; 0 disables extension.
    #[arg(long)]
    ci_target: Option<f64>,
}

impl Common {
    fn eval(&self) -> SimConfig {
        let mut cfg = SimConfig::default().with_seed(self.seed);
        if let Some(t) = self.ci_target {
            cfg.ci_target = (t > 0.0).then_some(t);
        }
        cfg
    }
}

#[derive(Args, Clone)]
struct InstanceArgs {
    /// Demand, e.g. poisson:mean=5, geometric:mean=5, exp:mean=100, me:mean=100,cv=1.5.
    #[arg(long)]
    demand: DemandModel,
    /// Lead time in periods.
    #[arg(long)]
    tau: usize,
    #[arg(long, default_value_t = 1.0)]
    h: f64,
    #[arg(long)]
    p: f64,
}

impl InstanceArgs {
    fn cost(&self) -> Result<CostParams<f64>> {
        Ok(CostParams::new(self.h, self.p)?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CvGrid {
    Table,
    Prose,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Budget {
    Standard,
    Lean,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Suite {
    Mdp,
    Zipkin,
    Bias,
    Improvement,
    Dominance,
    Divergence,
    Backorder,
    Monotone,
    Grid,
    Backends,
    Leadtime,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named testbed and write CSV artifacts.
    Testbed {
        name: TestbedName,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Exact MDP rows up to lead time 4 instead of 2 (slow).
        #[arg(long)]
        extended: bool,
        /// cv grid for the large testbed.
        #[arg(long, value_enum, default_value_t = CvGrid::Table)]
        cv_grid: CvGrid,
        /// Simulation budget; lean cuts search and evaluation lengths.
        #[arg(long, value_enum, default_value_t = Budget::Standard)]
        budget: Budget,
        /// Run only the first N instances.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Simulate one policy and print a CSV row.
    Evaluate {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Policy, e.g. pil:u=3, bs:s=14, cop:r=4, cbs:s=14,r=4, myopic.
        #[arg(long)]
        policy: Policy,
        #[command(flatten)]
        common: Common,
    },
    /// Optimize a policy family and print a CSV row.
    Optimize {
        #[command(flatten)]
        instance: InstanceArgs,
        /// pil, bs, cop or cbs.
        #[arg(long)]
        family: String,
        /// Search the PIL level over the guaranteed grid with this spacing.
        #[arg(long)]
        grid_eps: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the lost-sales MDP exactly (lattice demand).
    Mdp {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Write the optimal policy table here.
        #[arg(long)]
        policy_out: Option<PathBuf>,
    },
    /// Optimal base-stock level and cost of the back-order twin.
    Backorder {
        #[command(flatten)]
        instance: InstanceArgs,
    },
    /// Run acceptance checks; exits nonzero if any fails.
    Verify {
        #[arg(long, value_enum, default_value_t = Suite::All)]
        suite: Suite,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// ME projections per minute over the large-testbed grid.
    Throughput {
        #[arg(long, default_value_t = 20_000)]
        projections: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Write the per-cell table as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Testbed {
            name,
            common,
            out,
            extended,
            cv_grid,
            budget,
            limit,
        } => {
            let mut spec = match (name, cv_grid) {
                (TestbedName::Large, CvGrid::Prose) => TestbedSpec::large(common.seed, &CV_GRID_PROSE),
                (TestbedName::Large, CvGrid::Table) => TestbedSpec::large(common.seed, &CV_GRID_TABLE),
                _ => TestbedSpec::named(name, common.seed),
            };
            if extended {
                eprintln!("warning: exact MDP rows up to lead time 4 can take a long time and much memory");
                spec.exact_max_tau = 4;
            }
            spec.eval = common.eval();
            if budget == Budget::Lean {
                let (search, eval) = checks::leadtime_configs();
                spec.search = search.with_seed(common.seed);
                spec.eval = SimConfig {
                    ci_target: common.ci_target.map_or(eval.ci_target, |t| (t > 0.0).then_some(t)),
                    ..eval.with_seed(common.seed)
                };
                spec.capped_evals = 60;
            }
            spec.backend = common.projection;
            if let Some(n) = limit {
                spec.instances.truncate(n);
            }
            let output = run_testbed(&spec, &out)?;
            let failed = output.rows.iter().filter(|r| r.status.starts_with("error")).count();
            for f in &output.files {
                println!("{}", f.display());
            }
            if failed > 0 {
                eprintln!("{failed} rows failed; see the status column");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { instance, policy, common } => {
            let policy = with_backend(policy, common.projection);
            let cfg = common.eval();
            let e = estimate_cost(&policy, &instance.demand, instance.tau, instance.cost()?, &cfg)?;
            print_row(&instance, &policy, e.cost, e.half_width, e.periods, cfg.seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize {
            instance,
            family,
            grid_eps,
            common,
        } => {
            let cost = instance.cost()?;
            let search = SimConfig::search(common.seed);
            let d = &instance.demand;
            let policy = match (family.as_str(), grid_eps) {
                ("cbs", _) => {
                    let o = optimize_capped(d, instance.tau, cost, &search, 120)?;
                    Policy::CappedBaseStock { s: o.s, r: o.r }
                }
                ("pil", Some(eps)) => {
                    let grid = build_grid(eps, d, &cost)?;
                    let g = grid_search(&grid, common.projection, d, instance.tau, cost, &search)?;
                    eprintln!("grid of {} levels (bound {:.2})", grid.len(), grid.cardinality_bound);
                    Family::Pil.policy(g.param, common.projection)
                }
                (_, Some(_)) => bail!("--grid-eps applies to the pil family only"),
                (name, None) => {
                    let fam: Family = name.parse()?;
                    let spec = SearchSpec::default_for(fam, d, instance.tau, &cost)?;
                    let o = optimize_scalar(fam, common.projection, d, instance.tau, cost, &spec, &search)?;
                    if o.edge_flag {
                        eprintln!("warning: optimum at the edge of the search bracket");
                    }
                    fam.policy(o.param, common.projection)
                }
            };
            let cfg = common.eval();
            let e = estimate_cost(&policy, d, instance.tau, cost, &cfg)?;
            print_row(&instance, &policy, e.cost, e.half_width, e.periods, cfg.seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Mdp { instance, policy_out } => {
            let sol = solve_average_cost(&instance.demand, instance.tau, instance.cost()?, &MdpConfig::default())?;
            println!("demand,tau,h,p,gain,inventory_cap,order_cap,iterations,converged,boundary_mass");
            println!(
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(&instance.demand.to_string()),
                instance.tau,
                instance.h,
                instance.p,
                sol.gain,
                sol.inventory_cap,
                sol.order_cap,
                sol.iterations,
                sol.converged,
                sol.boundary_mass
            );
            if let Some(path) = policy_out {
                let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_policy_csv(&sol, std::io::BufWriter::new(f))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Backorder { instance } => {
            let b = solve_backorder(&instance.demand, instance.tau, &instance.cost()?)?;
            println!("demand,tau,h,p,s_star,c_star,pil_level");
            println!(
                "{},{},{},{},{},{},{}",
                csv_field(&instance.demand.to_string()),
                instance.tau,
                instance.h,
                instance.p,
                b.s_star,
                b.c_star,
                b.pil_level(&instance.demand, instance.tau)
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, seed } => {
            let results = run_suite(suite, seed)?;
            let mut failed = false;
            for r in &results {
                println!("{r}");
                failed |= !r.passed;
            }
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Throughput { projections, seed, out } => {
            let demands: Vec<String> = CV_GRID_TABLE.iter().map(|cv| format!("me:mean=100,cv={cv}")).collect();
            let rep = throughput_probe(&demands, &[1, 2, 3, 4, 5, 6], &[1.0, 4.0, 9.0, 19.0, 49.0, 99.0], projections, seed)?;
            if let Some(path) = out {
                let mut w = std::fs::File::create(&path)?;
                writeln!(w, "demand,tau,p,projections,per_minute")?;
                for c in &rep.cells {
                    writeln!(w, "{},{},{},{},{}", csv_field(&c.demand), c.tau, c.p, c.projections, c.per_minute)?;
                }
            }
            println!("min,max,avg");
            println!("{},{},{}", rep.min, rep.max, rep.avg);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_suite(suite: Suite, seed: u64) -> Result<Vec<CheckResult>> {
    let all = suite == Suite::All;
    let mut out = Vec::new();
    if all || suite == Suite::Mdp {
        out.push(checks::check_exact_mdp()?);
    }
    if all || suite == Suite::Zipkin {
        out.push(checks::check_zipkin_heuristics(seed)?.0);
    }
    if all || suite == Suite::Bias {
        out.push(checks::check_bias(seed)?);
    }
    if suite == Suite::Improvement {
        // a single exponential setting; the full chain runs under `dominance`
        out.push(checks::check_dominance_chain(seed, &[2], &[9.0])?);
    }
    if all || suite == Suite::Dominance {
        out.push(checks::check_dominance_chain(seed, &[1, 2, 4, 8], &[4.0, 9.0, 19.0])?);
    }
    if all || suite == Suite::Divergence {
        out.push(checks::check_divergence(seed)?);
    }
    if all || suite == Suite::Backorder {
        out.push(checks::check_backorder(seed)?);
    }
    if all || suite == Suite::Monotone {
        out.push(checks::check_monotonicity(seed)?);
    }
    if all || suite == Suite::Grid {
        out.push(checks::check_grid(seed)?);
    }
    if all || suite == Suite::Backends {
        out.push(checks::check_backends(seed)?);
    }
    if all || suite == Suite::Leadtime {
        out.push(checks::check_leadtime(seed)?.0);
    }
    Ok(out)
}

fn with_backend(policy: Policy, backend: Option<ProjectionBackend>) -> Policy {
    match policy {
        Policy::Pil { u, .. } => Policy::Pil { u, backend },
        Policy::Myopic { .. } => Policy::Myopic { backend },
        other => other,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn print_row(instance: &InstanceArgs, policy: &Policy, cost: f64, half_width: f64, periods: usize, seed: u64) -> Result<()> {
    let params: Vec<String> = policy.params().iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("demand,tau,h,p,policy,params,cost,ci_half_width,periods,seed");
    println!(
        "{},{},{},{},{},{},{},{},{},{}",
        csv_field(&instance.demand.to_string()),
        instance.tau,
        instance.h,
        instance.p,
        policy.family(),
        csv_field(&params.join(";")),
        cost,
        half_width,
        periods,
        seed
    );
    Ok(())
}
