//! Relative value iteration for the lost-sales MDP on the integer lattice.
//!
//! State `(I, q_1, ..., q_{tau-1})` with `I <= inventory_cap` and every
//! `q <= order_cap`; actions are integer orders `0..=order_cap`. Stock that
//! would exceed the inventory cap is clipped, and the post-solve audit reports
//! how much stationary mass sits on the clipping boundary.

use rayon::prelude::*;
use serde::Serialize;

use crate::demand::{DemandModel, DiscretePmf, Distribution};
use crate::error::{Error, Result};
use crate::system::CostParams;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MdpConfig {
    /// `None` picks a cap from the back-order newsvendor level.
    pub inventory_cap: Option<usize>,
    pub order_cap: Option<usize>,
    /// Demand pmf is cut where the tail drops below this and renormalized.
    pub demand_tail: f64,
    /// Stop when the span of `T V - V` falls below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Refuse state spaces larger than this many states.
    pub max_states: usize,
}

impl Default for MdpConfig {
    fn default() -> Self {
        Self {
            inventory_cap: None,
            order_cap: None,
            demand_tail: 1e-9,
            tolerance: 1e-8,
            max_iterations: 200_000,
            max_states: 20_000_000,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MdpSolution {
    pub gain: f64,
    pub lead_time: usize,
    pub inventory_cap: usize,
    pub order_cap: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Span of `T V - V` per iteration.
    pub spans: Vec<f64>,
    /// Optimal action per state index.
    #[serde(skip)]
    pub actions: Vec<u32>,
    /// Stationary probability of states on the clipping boundary.
    pub boundary_mass: f64,
}

impl MdpSolution {
    /// `(I, q_1, ..., q_{tau-1})` for a state index.
    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let nq = self.order_cap + 1;
        let mut out = vec![0; self.lead_time];
        for k in (1..self.lead_time).rev() {
            out[k] = idx % nq;
            idx /= nq;
        }
        out[0] = idx;
        out
    }

    pub fn action(&self, state: &[usize]) -> u32 {
        self.actions[encode(state, self.order_cap + 1)]
    }
}

#[inline]
fn encode(state: &[usize], nq: usize) -> usize {
    state[1..].iter().fold(state[0], |acc, &q| acc * nq + q)
}

/// Transition model shared by optimization and evaluation.
struct Model {
    tau: usize,
    ni: usize,
    nq: usize,
    n_states: usize,
    /// Expected one-period cost for each on-hand level.
    stage_cost: Vec<f64>,
    /// For each on-hand level, `(J, P(J))` pairs.
    leftover: Vec<Vec<(usize, f64)>>,
}

impl Model {
    fn new(pmf: &DiscretePmf, tau: usize, cost: &CostParams<f64>, ni: usize, nq: usize, max_states: usize) -> Result<Self> {
        let n_states = (1..tau).try_fold(ni, |acc, _| acc.checked_mul(nq));
        let n_states = match n_states {
            Some(n) if n <= max_states => n,
            _ => {
                return Err(Error::Resource(format!(
                    "state space {ni} x {nq}^{} exceeds the configured limit of {max_states}",
                    tau - 1
                )))
            }
        };
        let stage_cost = (0..ni)
            .map(|i| cost.h * pmf.holding(i as f64) + cost.p * pmf.loss(i as f64))
            .collect();
        let leftover = (0..ni)
            .map(|i| {
                let mut v: Vec<(usize, f64)> = (1..=i)
                    .filter_map(|j| {
                        let p = pmf.pmf(i - j);
                        (p > 0.0).then_some((j, p))
                    })
                    .collect();
                let p0 = if i == 0 { 1.0 } else { pmf.survival_at(i - 1) };
                if p0 > 0.0 {
                    v.push((0, p0));
                }
                v
            })
            .collect();
        Ok(Self {
            tau,
            ni,
            nq,
            n_states,
            stage_cost,
            leftover,
        })
    }

    /// Expected continuation value of every action from state `s`, written
    /// into `acc` (length `nq`).
    #[inline]
    fn continuation(&self, s: usize, v: &[f64], acc: &mut [f64]) {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let cap = self.ni - 1;
        if self.tau == 1 {
            for &(j, p) in &self.leftover[s] {
                for (a, slot) in acc.iter_mut().enumerate() {
                    *slot += p * v[(j + a).min(cap)];
                }
            }
            return;
        }
        // s = ((I * nq + q1) * nq + q2) ... ; next = ((I' * nq + q2) ...) * nq + a
        let tail_len = self.tau - 1;
        let mut rest = s;
        let mut q = [0usize; 8];
        for k in (0..tail_len).rev() {
            q[k] = rest % self.nq;
            rest /= self.nq;
        }
        let i = rest;
        let q1 = q[0];
        let mut mid = 0usize;
        for &qk in &q[1..tail_len] {
            mid = mid * self.nq + qk;
        }
        let mid_span = self.nq.pow((tail_len - 1) as u32);
        for &(j, p) in &self.leftover[i] {
            let i_next = (j + q1).min(cap);
            let base = (i_next * mid_span + mid) * self.nq;
            let row = &v[base..base + self.nq];
            for (slot, &w) in acc.iter_mut().zip(row) {
                *slot += p * w;
            }
        }
    }

    fn on_hand(&self, s: usize) -> usize {
        s / self.nq.pow((self.tau - 1) as u32)
    }

    fn on_boundary(&self, s: usize) -> bool {
        let mut rest = s;
        for _ in 1..self.tau {
            if rest % self.nq == self.nq - 1 {
                return true;
            }
            rest /= self.nq;
        }
        rest == self.ni - 1
    }
}

fn lattice_pmf(demand: &DemandModel, tail: f64) -> Result<DiscretePmf> {
    let pmf = match demand.distribution() {
        Distribution::Lattice(p) => p,
        _ => {
            return Err(Error::Unsupported(format!(
                "exact MDP needs integer-valued demand, got '{demand}'"
            )))
        }
    };
    let mut probs = pmf.probs().to_vec();
    let mut cut = 0.0;
    while probs.len() > 1 && cut + probs[probs.len() - 1] < tail {
        cut += probs.pop().unwrap();
    }
    DiscretePmf::from_probs(probs, cut + pmf.tail_mass())
}

/// Caps from the back-order newsvendor level: an optimal lost-sales order
/// never needs to lift the position far above it.
pub fn default_caps(demand: &DemandModel, lead_time: usize, cost: &CostParams<f64>) -> Result<(usize, usize)> {
    let lt = crate::demand::convolve_lead_time(demand, lead_time + 1)?;
    let s = lt.quantile(cost.p / (cost.p + cost.h)).ceil() as usize;
    let cap = (2 * s).max(10);
    Ok((cap, cap))
}

/// Optimal long-run average cost and policy by relative value iteration.
pub fn solve_average_cost(
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    cfg: &MdpConfig,
) -> Result<MdpSolution> {
    if lead_time == 0 || lead_time > 8 {
        return Err(Error::Unsupported(format!("exact MDP supports lead times 1..=8, got {lead_time}")));
    }
    let pmf = lattice_pmf(demand, cfg.demand_tail)?;
    let (ic, oc) = default_caps(demand, lead_time, &cost)?;
    let ni = cfg.inventory_cap.unwrap_or(ic) + 1;
    let nq = cfg.order_cap.unwrap_or(oc) + 1;
    let m = Model::new(&pmf, lead_time, &cost, ni, nq, cfg.max_states)?;
    let n = m.n_states;
    let mut v = vec![0.0; n];
    let mut tv = vec![0.0; n];
    let mut actions = vec![0u32; n];
    let mut spans = Vec::new();
    let mut gain = f64::NAN;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iterations {
        iterations = it + 1;
        tv.par_chunks_mut(nq.max(64))
            .zip(actions.par_chunks_mut(nq.max(64)))
            .enumerate()
            .for_each(|(c, (out, act))| {
                let mut acc = vec![0.0; nq];
                let start = c * nq.max(64);
                for (k, (o, a)) in out.iter_mut().zip(act.iter_mut()).enumerate() {
                    let s = start + k;
                    m.continuation(s, &v, &mut acc);
                    let (best_a, best) = acc
                        .iter()
                        .enumerate()
                        .fold((0, f64::INFINITY), |b, (i, &x)| if x < b.1 { (i, x) } else { b });
                    *o = m.stage_cost[m.on_hand(s)] + best;
                    *a = best_a as u32;
                }
            });
        let (lo, hi) = tv
            .iter()
            .zip(&v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a - b), hi.max(a - b)));
        spans.push(hi - lo);
        gain = 0.5 * (lo + hi);
        let r = tv[0];
        for (dst, &src) in v.iter_mut().zip(&tv) {
            *dst = src - r;
        }
        if hi - lo < cfg.tolerance {
            converged = true;
            break;
        }
    }
    let pi = stationary(&m, &actions, 1e-13, 100_000);
    let boundary_mass = (0..n).filter(|&s| m.on_boundary(s)).map(|s| pi[s]).sum();
    Ok(MdpSolution {
        gain,
        lead_time,
        inventory_cap: ni - 1,
        order_cap: nq - 1,
        iterations,
        converged,
        spans,
        actions,
        boundary_mass,
    })
}

/// Stationary distribution of the chain under a fixed action table, by
/// power iteration from the empty state.
fn stationary(m: &Model, actions: &[u32], tol: f64, max_iter: usize) -> Vec<f64> {
    let n = m.n_states;
    let mut pi = vec![0.0; n];
    pi[0] = 1.0;
    let mut next = vec![0.0; n];
    let cap = m.ni - 1;
    let tail_len = m.tau - 1;
    let mid_span = if m.tau > 1 { m.nq.pow((tail_len - 1) as u32) } else { 1 };
    for _ in 0..max_iter {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..n {
            let w = pi[s];
            if w == 0.0 {
                continue;
            }
            let a = actions[s] as usize;
            if m.tau == 1 {
                for &(j, p) in &m.leftover[s] {
                    next[(j + a).min(cap)] += w * p;
                }
                continue;
            }
            let q1 = (s / mid_span) % m.nq;
            let mid = s % mid_span;
            let i = m.on_hand(s);
            for &(j, p) in &m.leftover[i] {
                let i_next = (j + q1).min(cap);
                next[(i_next * mid_span + mid) * m.nq + a] += w * p;
            }
        }
        let diff: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut pi, &mut next);
        if diff < tol {
            break;
        }
    }
    pi
}

/// Average cost of a fixed lattice policy (`action(state)` with
/// `state = (I, q_1, ..., q_{tau-1})`), by relative value iteration without
/// the minimization.
pub fn evaluate_policy_exact<F>(
    action: F,
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    cfg: &MdpConfig,
) -> Result<f64>
where
    F: Fn(&[usize]) -> usize,
{
    if lead_time == 0 || lead_time > 8 {
        return Err(Error::Unsupported(format!("exact MDP supports lead times 1..=8, got {lead_time}")));
    }
    let pmf = lattice_pmf(demand, cfg.demand_tail)?;
    let (ic, oc) = default_caps(demand, lead_time, &cost)?;
    let ni = cfg.inventory_cap.unwrap_or(ic) + 1;
    let nq = cfg.order_cap.unwrap_or(oc) + 1;
    let m = Model::new(&pmf, lead_time, &cost, ni, nq, cfg.max_states)?;
    let n = m.n_states;
    let table: Vec<u32> = (0..n)
        .map(|s| {
            let sol = MdpSolution {
                gain: 0.0,
                lead_time,
                inventory_cap: ni - 1,
                order_cap: nq - 1,
                iterations: 0,
                converged: false,
                spans: vec![],
                actions: vec![],
                boundary_mass: 0.0,
            };
            action(&sol.decode(s)).min(nq - 1) as u32
        })
        .collect();
    let mut v = vec![0.0; n];
    let mut tv = vec![0.0; n];
    let mut acc = vec![0.0; nq];
    for _ in 0..cfg.max_iterations {
        for s in 0..n {
            m.continuation(s, &v, &mut acc);
            tv[s] = m.stage_cost[m.on_hand(s)] + acc[table[s] as usize];
        }
        let (lo, hi) = tv
            .iter()
            .zip(&v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| (lo.min(a - b), hi.max(a - b)));
        let r = tv[0];
        for (dst, &src) in v.iter_mut().zip(&tv) {
            *dst = src - r;
        }
        if hi - lo < cfg.tolerance {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::Domain("policy evaluation did not converge".into()))
}

/// Writes the policy table as CSV: state components then action.
pub fn write_policy_csv<W: std::io::Write>(sol: &MdpSolution, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["I".to_string()];
    header.extend((1..sol.lead_time).map(|k| format!("q{k}")));
    header.push("action".into());
    w.write_record(&header)?;
    for (s, &a) in sol.actions.iter().enumerate() {
        let mut rec: Vec<String> = sol.decode(s).iter().map(|x| x.to_string()).collect();
        rec.push(a.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::make_poisson;

    #[test]
    fn encode_decode_round_trip() {
        let sol = MdpSolution {
            gain: 0.0,
            lead_time: 3,
            inventory_cap: 9,
            order_cap: 4,
            iterations: 0,
            converged: true,
            spans: vec![],
            actions: vec![],
            boundary_mass: 0.0,
        };
        for s in [vec![0, 0, 0], vec![9, 4, 4], vec![3, 1, 2]] {
            assert_eq!(sol.decode(encode(&s, 5)), s);
        }
    }

    #[test]
    fn zero_order_policy_costs_p_mu() {
        let d = make_poisson(5.0).unwrap();
        let c = CostParams::new(1.0, 4.0).unwrap();
        let g = evaluate_policy_exact(|_| 0, &d, 2, c, &MdpConfig::default()).unwrap();
        assert!((g - 20.0).abs() < 1e-6, "{g}");
    }

    #[test]
    fn non_integer_demand_rejected() {
        let d = crate::demand::make_exponential(5.0).unwrap();
        let c = CostParams::new(1.0, 4.0).unwrap();
        assert!(matches!(
            solve_average_cost(&d, 1, c, &MdpConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }
}
