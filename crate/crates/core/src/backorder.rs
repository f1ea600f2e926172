//! The back-order twin system: newsvendor base-stock optimum and a coupled
//! simulation against the lost-sales system under the same PIL level.

use rayon::prelude::*;
use serde::Serialize;

use crate::demand::{convolve_lead_time, DemandModel, Distribution};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::sim::stream_rng;
use crate::stats::summarize;
use crate::system::{CostParams, PipelineState};

#[derive(Clone, Debug, Serialize)]
pub struct BackorderSolution {
    /// Smallest `S` with `P(D[0, tau] <= S) >= p / (p + h)`.
    pub s_star: f64,
    /// `h E(S* - D[0, tau])^+ + p E(D[0, tau] - S*)^+`.
    pub c_star: f64,
    /// Probability mass beyond the tabulated lead-time demand.
    pub tail_mass: f64,
    #[serde(skip)]
    pub leadtime_demand: Distribution,
}

impl BackorderSolution {
    /// PIL level that mirrors the optimal base-stock level, `(S* - tau mu)^+`.
    pub fn pil_level(&self, demand: &DemandModel, lead_time: usize) -> f64 {
        (self.s_star - lead_time as f64 * demand.mean()).max(0.0)
    }
}

pub fn solve_backorder(demand: &DemandModel, lead_time: usize, cost: &CostParams<f64>) -> Result<BackorderSolution> {
    if lead_time == 0 {
        return Err(Error::Contract("lead time must be >= 1".into()));
    }
    let lt = convolve_lead_time(demand, lead_time + 1)?;
    let s = lt.quantile(cost.p / (cost.p + cost.h));
    let c = cost.h * lt.holding(s) + cost.p * lt.loss(s);
    let tail_mass = match &lt {
        Distribution::Lattice(pmf) => pmf.tail_mass(),
        _ => 0.0,
    };
    Ok(BackorderSolution {
        s_star: s,
        c_star: c,
        tail_mass,
        leadtime_demand: lt,
    })
}

/// Back-order system under a base-stock level; net inventory is signed.
#[derive(Clone, Debug)]
pub struct BackorderState {
    net: f64,
    pipeline: Vec<f64>,
}

impl BackorderState {
    pub fn empty(lead_time: usize) -> Self {
        Self {
            net: 0.0,
            pipeline: vec![0.0; lead_time - 1],
        }
    }

    pub fn net(&self) -> f64 {
        self.net
    }

    pub fn position(&self) -> f64 {
        self.net + self.pipeline.iter().sum::<f64>()
    }

    /// Orders up to `s`, meets demand, and returns `(J^B, B)`.
    pub fn step(&mut self, s: f64, demand: f64) -> (f64, f64) {
        let order = (s - self.position()).max(0.0);
        let backlog = (demand - self.net).max(0.0);
        let left = (self.net - demand).max(0.0);
        let arriving = if self.pipeline.is_empty() {
            order
        } else {
            self.pipeline.push(order);
            self.pipeline.remove(0)
        };
        self.net += arriving - demand;
        (left, backlog)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoupledConfig {
    pub seed: u64,
    pub stream: u64,
    pub replications: usize,
    pub periods: usize,
}

impl Default for CoupledConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            stream: 0,
            replications: 2000,
            periods: 60,
        }
    }
}

/// Across-replication means for one period.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct PeriodPair {
    pub t: usize,
    pub lost: f64,
    pub backlog: f64,
    /// Mean and standard error of `L_t - B_t`.
    pub diff: f64,
    pub diff_se: f64,
    pub cost_lost: f64,
    pub cost_back: f64,
    /// Mean and standard error of `c_t - c^B_t`.
    pub cost_diff: f64,
    pub cost_diff_se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoupledReport {
    pub u: f64,
    pub s: f64,
    pub periods: Vec<PeriodPair>,
}

impl CoupledReport {
    /// Periods `t >= tau` where `E[L_t] > E[B_t]` beyond `k` standard errors.
    pub fn lost_violations(&self, lead_time: usize, k: f64) -> Vec<usize> {
        self.periods
            .iter()
            .filter(|p| p.t >= lead_time && p.diff > k * p.diff_se)
            .map(|p| p.t)
            .collect()
    }

    /// Periods `t >= tau` where `E[c_t] > E[c^B_t]` beyond `k` standard errors.
    pub fn cost_violations(&self, lead_time: usize, k: f64) -> Vec<usize> {
        self.periods
            .iter()
            .filter(|p| p.t >= lead_time && p.cost_diff > k * p.cost_diff_se)
            .map(|p| p.t)
            .collect()
    }
}

/// Runs the lost-sales system under PIL level `u` and the back-order system
/// under base-stock `u + tau mu` from the empty state on the same demand
/// paths, and reports per-period means.
pub fn coupled_lost_vs_backorder(
    u: f64,
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    cfg: &CoupledConfig,
) -> Result<CoupledReport> {
    if cfg.replications < 2 || cfg.periods == 0 {
        return Err(Error::Config("coupled run needs >= 2 replications and >= 1 period".into()));
    }
    let s = u + lead_time as f64 * demand.mean();
    let controller = Policy::Pil { u, backend: None }.controller(demand, lead_time, cost)?;
    // per replication: rows of (L, B, c, c^B)
    let paths: Vec<Vec<[f64; 4]>> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(cfg.seed, cfg.stream, rep);
            let mut ctl = controller.clone();
            let mut lost_sys = PipelineState::<f64>::empty(lead_time)?;
            let mut back_sys = BackorderState::empty(lead_time);
            let mut rows = Vec::with_capacity(cfg.periods);
            for _ in 0..cfg.periods {
                let d = demand.sample(&mut rng);
                let q = ctl.decide(&lost_sys)?;
                let (j, l) = lost_sys.advance(q, d);
                let (jb, b) = back_sys.step(s, d);
                rows.push([l, b, cost.h * j + cost.p * l, cost.h * jb + cost.p * b]);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let periods = (0..cfg.periods)
        .map(|t| {
            let col = |k: usize| paths.iter().map(|r| r[t][k]).collect::<Vec<_>>();
            let diff = summarize(&paths.iter().map(|r| r[t][0] - r[t][1]).collect::<Vec<_>>());
            let cdiff = summarize(&paths.iter().map(|r| r[t][2] - r[t][3]).collect::<Vec<_>>());
            PeriodPair {
                t,
                lost: summarize(&col(0)).mean,
                backlog: summarize(&col(1)).mean,
                diff: diff.mean,
                diff_se: diff.std_error,
                cost_lost: summarize(&col(2)).mean,
                cost_back: summarize(&col(3)).mean,
                cost_diff: cdiff.mean,
                cost_diff_se: cdiff.std_error,
            }
        })
        .collect();
    Ok(CoupledReport { u, s, periods })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{make_exponential, make_poisson};

    #[test]
    fn poisson_newsvendor_levels() {
        let d = make_poisson(5.0).unwrap();
        // Poisson(10) partial sums: the 0.9 quantile is 14, the 0.8 quantile 13
        let s9 = solve_backorder(&d, 1, &CostParams::new(1.0, 9.0).unwrap()).unwrap();
        assert_eq!(s9.s_star, 14.0);
        let s4 = solve_backorder(&d, 1, &CostParams::new(1.0, 4.0).unwrap()).unwrap();
        assert_eq!(s4.s_star, 13.0);
    }

    #[test]
    fn base_stock_orders_replace_demand() {
        let mut b = BackorderState::empty(3);
        let demands = [4.0, 7.0, 0.0, 12.0, 3.0, 5.0];
        let mut out = vec![];
        for &d in &demands {
            out.push(b.step(10.0, d));
        }
        // first order fills the position; later orders equal last demand
        assert_eq!(b.position(), 10.0 - 5.0);
        assert_eq!(out[0], (0.0, 4.0));
        assert_eq!(out[1], (0.0, 11.0));
    }

    #[test]
    fn zero_level_loses_all_demand() {
        let d = make_exponential(10.0).unwrap();
        let c = CostParams::new(1.0, 9.0).unwrap();
        let cfg = CoupledConfig {
            replications: 50,
            periods: 20,
            ..CoupledConfig::default()
        };
        let r = coupled_lost_vs_backorder(0.0, &d, 2, c, &cfg).unwrap();
        for p in &r.periods {
            assert!((p.cost_lost - 9.0 * p.lost).abs() < 1e-9);
        }
    }
}
