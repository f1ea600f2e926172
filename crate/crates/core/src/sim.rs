//! Long-run cost-rate estimation by independent replications with common
//! random numbers.
//!
//! Every replication starts from the empty state. The demand sequence of
//! replication `i` depends only on `(seed, stream, i)`, so policies run under
//! the same config see identical demand paths whatever the thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demand::DemandModel;
use crate::error::{Error, Result};
use crate::policy::{Controller, Policy};
use crate::stats::{batch_means, summarize, Summary};
use crate::system::{CostParams, PipelineState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub stream: u64,
    pub replications: usize,
    /// Counted periods per replication in the first pass.
    pub periods: usize,
    pub warmup: usize,
    /// Target 95% half-width relative to the estimate; `None` runs one pass.
    pub ci_target: Option<f64>,
    /// Budget of counted periods per replication for the extension loop.
    pub max_periods: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            stream: 0,
            replications: 30,
            periods: 20_000,
            warmup: 2000,
            ci_target: Some(0.01),
            max_periods: 2_000_000,
        }
    }
}

impl SimConfig {
    /// Fixed-budget setting used inside parameter searches.
    pub fn search(seed: u64) -> Self {
        Self {
            seed,
            replications: 8,
            periods: 10_000,
            warmup: 1000,
            ci_target: None,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self, lead_time: usize) -> Result<()> {
        if self.replications == 0 || self.periods == 0 {
            return Err(Error::Config("replications and periods must be >= 1".into()));
        }
        if self.warmup < lead_time {
            return Err(Error::Config(format!(
                "warm-up {} shorter than lead time {lead_time}",
                self.warmup
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub cost: f64,
    pub half_width: f64,
    pub std_error: f64,
    pub lost_rate: f64,
    pub lost_half_width: f64,
    /// Mean end-of-period inventory `J_t`.
    pub mean_inventory: f64,
    pub mean_order: f64,
    /// Counted periods per replication.
    pub periods: usize,
    pub replications: usize,
    pub seed: u64,
    pub target_missed: bool,
}

impl CostEstimate {
    pub fn relative_half_width(&self) -> f64 {
        if self.cost == 0.0 {
            0.0
        } else {
            self.half_width / self.cost.abs()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DifferenceEstimate {
    pub a: CostEstimate,
    pub b: CostEstimate,
    /// `C(A) - C(B)` from paired replications.
    pub diff: f64,
    pub diff_half_width: f64,
    pub diff_std_error: f64,
    /// Time average of `(order_A - order_B)^2`.
    pub mean_sq_order_gap: f64,
    pub sq_gap_std_error: f64,
}

/// Seeds a replication's demand stream from `(seed, stream, replication)`.
pub fn stream_rng(seed: u64, stream: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed) ^ mix(stream.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    rng.set_stream(replication as u64);
    rng
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, Default)]
struct Acc {
    cost: f64,
    lost: f64,
    inv: f64,
    order: f64,
}

/// One replication driving several policies off the same demand draws.
struct Replication {
    rng: ChaCha8Rng,
    states: Vec<PipelineState<f64>>,
    controllers: Vec<Controller>,
    acc: Vec<Acc>,
    sq_gap: f64,
    /// Per-period costs of the first policy, kept for batch means.
    trace: Option<Vec<f64>>,
    t: usize,
}

impl Replication {
    fn run(&mut self, demand: &DemandModel, cost: &CostParams<f64>, warmup: usize, until: usize) -> Result<()> {
        let k = self.controllers.len();
        let mut orders = [0.0f64; 2];
        while self.t < warmup + until {
            let counted = self.t >= warmup;
            let d = demand.sample(&mut self.rng);
            for i in 0..k {
                let q = self.controllers[i].decide(&self.states[i])?;
                let (end, lost) = self.states[i].advance(q, d);
                if counted {
                    let c = cost.period_cost(end, lost);
                    let a = &mut self.acc[i];
                    a.cost += c;
                    a.lost += lost;
                    a.inv += end;
                    a.order += q;
                    if i == 0 {
                        if let Some(tr) = self.trace.as_mut() {
                            tr.push(c);
                        }
                    }
                }
                if i < 2 {
                    orders[i] = q;
                }
            }
            if counted && k == 2 {
                self.sq_gap += (orders[0] - orders[1]).powi(2);
            }
            self.t += 1;
        }
        Ok(())
    }
}

struct Run {
    reps: Vec<Replication>,
    counted: usize,
    target_missed: bool,
}

fn simulate(
    policies: &[Policy],
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    cfg: &SimConfig,
) -> Result<Run> {
    cfg.validate(lead_time)?;
    let controllers = policies
        .iter()
        .map(|p| p.controller(demand, lead_time, cost))
        .collect::<Result<Vec<_>>>()?;
    let single = cfg.replications == 1;
    let mut reps: Vec<Replication> = (0..cfg.replications)
        .map(|i| -> Result<Replication> {
            Ok(Replication {
                rng: stream_rng(cfg.seed, cfg.stream, i),
                states: vec![PipelineState::empty(lead_time)?; policies.len()],
                controllers: controllers.clone(),
                acc: vec![Acc::default(); policies.len()],
                sq_gap: 0.0,
                trace: single.then(Vec::new),
                t: 0,
            })
        })
        .collect::<Result<_>>()?;
    let mut counted = cfg.periods;
    let mut target_missed = false;
    loop {
        reps.par_iter_mut()
            .map(|r| r.run(demand, &cost, cfg.warmup, counted))
            .collect::<Result<Vec<()>>>()?;
        let Some(target) = cfg.ci_target else { break };
        let ok = (0..policies.len()).all(|i| {
            let s = cost_summary(&reps, i, counted);
            s.half_width <= target * s.mean.abs()
        });
        if ok {
            break;
        }
        if counted >= cfg.max_periods {
            target_missed = true;
            break;
        }
        counted = (counted * 2).min(cfg.max_periods);
    }
    Ok(Run {
        reps,
        counted,
        target_missed,
    })
}

fn cost_summary(reps: &[Replication], i: usize, counted: usize) -> Summary {
    if reps.len() == 1 {
        if let Some(tr) = &reps[0].trace {
            return batch_means(tr, 30);
        }
    }
    let xs: Vec<f64> = reps.iter().map(|r| r.acc[i].cost / counted as f64).collect();
    summarize(&xs)
}

fn estimate_of(run: &Run, i: usize, cfg: &SimConfig) -> CostEstimate {
    let n = run.counted as f64;
    let c = cost_summary(&run.reps, i, run.counted);
    let lost = summarize(&run.reps.iter().map(|r| r.acc[i].lost / n).collect::<Vec<_>>());
    let inv = run.reps.iter().map(|r| r.acc[i].inv / n).sum::<f64>() / run.reps.len() as f64;
    let ord = run.reps.iter().map(|r| r.acc[i].order / n).sum::<f64>() / run.reps.len() as f64;
    CostEstimate {
        cost: c.mean,
        half_width: c.half_width,
        std_error: c.std_error,
        lost_rate: lost.mean,
        lost_half_width: lost.half_width,
        mean_inventory: inv,
        mean_order: ord,
        periods: run.counted,
        replications: run.reps.len(),
        seed: cfg.seed,
        target_missed: run.target_missed,
    }
}

/// Simulated long-run cost rate of `policy` from the empty state.
pub fn estimate_cost(
    policy: &Policy,
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    cfg: &SimConfig,
) -> Result<CostEstimate> {
    let run = simulate(std::slice::from_ref(policy), demand, lead_time, cost, cfg)?;
    Ok(estimate_of(&run, 0, cfg))
}

/// Paired estimate of `C(A) - C(B)` on common demand paths.
pub fn estimate_difference_crn(
    a: &Policy,
    b: &Policy,
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    cfg: &SimConfig,
) -> Result<DifferenceEstimate> {
    let run = simulate(&[*a, *b], demand, lead_time, cost, cfg)?;
    let n = run.counted as f64;
    let diffs: Vec<f64> = run.reps.iter().map(|r| (r.acc[0].cost - r.acc[1].cost) / n).collect();
    let gaps: Vec<f64> = run.reps.iter().map(|r| r.sq_gap / n).collect();
    let d = summarize(&diffs);
    let g = summarize(&gaps);
    Ok(DifferenceEstimate {
        a: estimate_of(&run, 0, cfg),
        b: estimate_of(&run, 1, cfg),
        diff: d.mean,
        diff_half_width: d.half_width,
        diff_std_error: d.std_error,
        mean_sq_order_gap: g.mean,
        sq_gap_std_error: g.std_error,
    })
}

/// Several policies on common demand paths; one estimate per policy.
pub fn estimate_many_crn(
    policies: &[Policy],
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    cfg: &SimConfig,
) -> Result<Vec<CostEstimate>> {
    let run = simulate(policies, demand, lead_time, cost, cfg)?;
    Ok((0..policies.len()).map(|i| estimate_of(&run, i, cfg)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{make_exponential, make_poisson};
    use rand::Rng;

    fn cp() -> CostParams<f64> {
        CostParams::new(1.0, 9.0).unwrap()
    }

    #[test]
    fn zero_constant_order_loses_everything() {
        let d = make_poisson(5.0).unwrap();
        let cfg = SimConfig {
            replications: 4,
            periods: 1000,
            warmup: 10,
            ..SimConfig::default()
        };
        let e = estimate_cost(&Policy::ConstantOrder { r: 0.0 }, &d, 2, cp(), &cfg).unwrap();
        // cost is p times the sample mean of demand; not exactly p * mu
        assert!((e.cost - 45.0).abs() < 1.0);
        assert_eq!(e.mean_inventory, 0.0);
        assert!((e.cost - 9.0 * e.lost_rate).abs() < 1e-9);
    }

    #[test]
    fn identical_policies_give_zero_difference() {
        let d = make_exponential(10.0).unwrap();
        let cfg = SimConfig {
            replications: 3,
            periods: 500,
            warmup: 5,
            ci_target: None,
            ..SimConfig::default()
        };
        let p = Policy::BaseStock { s: 25.0 };
        let r = estimate_difference_crn(&p, &p, &d, 2, cp(), &cfg).unwrap();
        assert_eq!(r.diff, 0.0);
        assert_eq!(r.diff_half_width, 0.0);
        assert_eq!(r.mean_sq_order_gap, 0.0);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = stream_rng(7, 0, 3);
        let mut b = stream_rng(7, 0, 3);
        let mut c = stream_rng(7, 0, 4);
        let mut e = stream_rng(7, 1, 3);
        let xa: u64 = a.gen();
        assert_eq!(xa, b.gen::<u64>());
        assert_ne!(xa, c.gen::<u64>());
        assert_ne!(xa, e.gen::<u64>());
    }

    #[test]
    fn warmup_shorter_than_lead_time_rejected() {
        let d = make_poisson(5.0).unwrap();
        let cfg = SimConfig {
            warmup: 2,
            ..SimConfig::default()
        };
        assert!(estimate_cost(&Policy::BaseStock { s: 10.0 }, &d, 3, cp(), &cfg).is_err());
    }
}
