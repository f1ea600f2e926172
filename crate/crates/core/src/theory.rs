//! Closed forms for exponential demand under a constant order, and
//! executable checks of the properties that tie PIL to them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::backorder::solve_backorder;
use crate::demand::{make_exponential, DemandModel};
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::projection::{ProjectionBackend, Projector};
use crate::scalar::Real;
use crate::search::{optimize_scalar, Family, SearchSpec};
use crate::sim::{estimate_cost, estimate_difference_crn, stream_rng, SimConfig};
use crate::stats::summarize;
use crate::system::{CostParams, PipelineState};

/// Relative value of stock level `x` under the constant order `r` with
/// exponential demand of mean `mu`: `H(x) = h x^2 / (2 (mu - r)) - p x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiasFunction<T> {
    pub r: T,
    pub mu: T,
    pub h: T,
    pub p: T,
}

impl<T: Real> BiasFunction<T> {
    pub fn new(r: T, mu: T, h: T, p: T) -> Result<Self> {
        if !(r >= T::zero()) || !(mu > T::zero()) || !(h > T::zero()) || !(p > T::zero()) {
            return Err(Error::Parameter(format!(
                "bias needs r >= 0 and mu, h, p > 0, got r={r:?}, mu={mu:?}, h={h:?}, p={p:?}"
            )));
        }
        if r >= mu {
            return Err(Error::Domain(format!("constant order {r:?} is not below the mean {mu:?}")));
        }
        Ok(Self { r, mu, h, p })
    }

    pub fn eval(&self, x: T) -> T {
        self.a1() * x * x - self.p * x
    }

    /// Long-run cost rate `p (mu - r) + h r^2 / (2 (mu - r))`.
    pub fn gain(&self) -> T {
        let slack = self.mu - self.r;
        self.p * slack + self.h * self.r * self.r / (T::of(2.0) * slack)
    }

    /// `U(r) = p (mu - r) / h`, the minimizer of the bias.
    pub fn improving_level(&self) -> T {
        self.p * (self.mu - self.r) / self.h
    }

    /// Curvature `h / (2 (mu - r))`.
    pub fn a1(&self) -> T {
        self.h / (T::of(2.0) * (self.mu - self.r))
    }

    /// Minimum value `-p^2 (mu - r) / (2 h)`.
    pub fn a2(&self) -> T {
        -self.p * self.p * (self.mu - self.r) / (T::of(2.0) * self.h)
    }
}

/// Cost-minimizing constant order under exponential demand,
/// `mu (1 - sqrt(h / (2p + h)))`.
pub fn best_constant_order<T: Real>(mu: T, h: T, p: T) -> T {
    mu * (T::one() - (h / (T::of(2.0) * p + h)).sqrt())
}

pub fn bias_eval(bf: &BiasFunction<f64>, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("bias is defined for x >= 0, got {x}")));
    }
    Ok(bf.eval(x))
}

/// Right side of the bias fixed point,
/// `E[h (x - D)^+ + p (D - x)^+ + H((x - D)^+ + r)] - g`, in closed form
/// from the truncated moments of the exponential.
pub fn bias_fixed_point_rhs(bf: &BiasFunction<f64>, x: f64) -> f64 {
    let mu = bf.mu;
    let z = x / mu;
    let e = (-z).exp();
    // E[D^k ; D < x] for k = 0, 1, 2
    let m0 = -(-z).exp_m1();
    let m1 = mu * m0 - x * e;
    let m2 = 2.0 * mu * mu * (m0 - e * (z + 0.5 * z * z));
    let holding = x - mu + mu * e;
    let lost = mu * e;
    let c = x + bf.r;
    let a = bf.a1();
    let below = a * (c * c * m0 - 2.0 * c * m1 + m2) - bf.p * (c * m0 - m1);
    let above = e * bf.eval(bf.r);
    bf.h * holding + bf.p * lost + below + above - bf.gain()
}

/// Largest `|H(x) - rhs(x)|` over `points` evenly spaced `x` in
/// `[0, span * U(r)]`.
pub fn verify_bias_fixed_point(bf: &BiasFunction<f64>, points: usize, span: f64) -> f64 {
    let top = span * bf.improving_level().max(bf.mu);
    (0..points.max(2))
        .map(|i| top * i as f64 / (points.max(2) - 1) as f64)
        .map(|x| (bf.eval(x) - bias_fixed_point_rhs(bf, x)).abs())
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, Serialize)]
pub struct ImprovementReport {
    pub states: usize,
    /// Largest distance between the PIL order and the scanned minimizer.
    pub max_gap: f64,
}

/// On random pipeline states, checks that the PIL order with level `U(r)`
/// minimizes `E[H(J + q)] = a1 Var J + a1 (E J + q - U)^2 + a2` over
/// `q >= 0`, by grid scan refined with golden section.
pub fn verify_pil_improvement(
    bf: &BiasFunction<f64>,
    lead_time: usize,
    states: usize,
    seed: u64,
) -> Result<ImprovementReport> {
    let demand = make_exponential(bf.mu)?;
    let mut proj = Projector::new(&demand, ProjectionBackend::MeCustomer)?;
    let u = bf.improving_level();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_gap: f64 = 0.0;
    for _ in 0..states {
        let on_hand = rng.gen_range(0.0..2.0 * u.max(bf.mu));
        let pipe: Vec<f64> = (1..lead_time).map(|_| rng.gen_range(0.0..2.0 * bf.mu)).collect();
        let state = PipelineState::new(on_hand, pipe)?;
        let mean = proj.expected_level(&state)?;
        let atoms = proj.level_atoms(&state)?;
        let am: f64 = atoms.iter().map(|(x, w)| x * w).sum();
        let var: f64 = atoms.iter().map(|(x, w)| w * (x - am).powi(2)).sum();
        let objective = |q: f64| bf.a1() * var + bf.a1() * (mean + q - u).powi(2) + bf.a2();
        let top = 2.0 * u + bf.mu;
        let n = 2000;
        let (mut best, mut fbest) = (0.0, objective(0.0));
        for i in 1..=n {
            let q = top * i as f64 / n as f64;
            let v = objective(q);
            if v < fbest {
                best = q;
                fbest = v;
            }
        }
        let step = top / n as f64;
        let (q_scan, _) = crate::search::golden_section(objective, (best - step).max(0.0), best + step, 1e-9);
        let q_pil = (u - mean).max(0.0);
        max_gap = max_gap.max((q_scan - q_pil).abs());
    }
    Ok(ImprovementReport { states, max_gap })
}

/// One row of the constant-order versus PIL comparison.
#[derive(Clone, Debug, Serialize)]
pub struct DominanceRow {
    pub mean: f64,
    pub lead_time: usize,
    pub h: f64,
    pub p: f64,
    pub r_star: f64,
    pub u_r_star: f64,
    pub u_best: f64,
    pub cost_pil_best: f64,
    pub cost_pil_r: f64,
    pub cost_cop: f64,
    pub cost_cop_closed_form: f64,
    /// `C(P^{U*}) - C(P^{U(r*)})` and its standard error.
    pub diff_best_vs_r: f64,
    pub diff_best_vs_r_se: f64,
    /// `C(P^{U(r*)}) - C(C^{r*})` and its standard error.
    pub diff_r_vs_cop: f64,
    pub diff_r_vs_cop_se: f64,
    /// `a1` times the long-run mean squared gap between the two order streams.
    pub quadratic_gap: f64,
    pub quadratic_gap_se: f64,
    pub chain_holds: bool,
}

/// Simulated chain `C(P^{U*}) <= C(P^{U(r*)}) <= C(C^{r*})` for exponential
/// demand, each step one-sided at `k` standard errors of the paired difference.
pub fn verify_dominance(
    mean: f64,
    lead_time: usize,
    cost: CostParams<f64>,
    search: &SimConfig,
    eval: &SimConfig,
    k: f64,
) -> Result<DominanceRow> {
    let demand = make_exponential(mean)?;
    let r = best_constant_order(mean, cost.h, cost.p);
    let bf = BiasFunction::new(r, mean, cost.h, cost.p)?;
    let u_r = bf.improving_level();
    let spec = SearchSpec::default_for(Family::Pil, &demand, lead_time, &cost)?;
    let best = optimize_scalar(Family::Pil, None, &demand, lead_time, cost, &spec, search)?;
    let pil_best = Policy::Pil { u: best.param, backend: None };
    let pil_r = Policy::Pil { u: u_r, backend: None };
    let cop = Policy::ConstantOrder { r };
    let d1 = estimate_difference_crn(&pil_best, &pil_r, &demand, lead_time, cost, eval)?;
    let d2 = estimate_difference_crn(&pil_r, &cop, &demand, lead_time, cost, eval)?;
    let chain_holds = d1.diff <= k * d1.diff_std_error && d2.diff <= k * d2.diff_std_error;
    Ok(DominanceRow {
        mean,
        lead_time,
        h: cost.h,
        p: cost.p,
        r_star: r,
        u_r_star: u_r,
        u_best: best.param,
        cost_pil_best: d1.a.cost,
        cost_pil_r: d2.a.cost,
        cost_cop: d2.b.cost,
        cost_cop_closed_form: bf.gain(),
        diff_best_vs_r: d1.diff,
        diff_best_vs_r_se: d1.diff_std_error,
        diff_r_vs_cop: d2.diff,
        diff_r_vs_cop_se: d2.diff_std_error,
        quadratic_gap: bf.a1() * d2.mean_sq_order_gap,
        quadratic_gap_se: bf.a1() * d2.sq_gap_std_error,
        chain_holds,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DivergenceReport {
    pub replications: usize,
    pub horizon: usize,
    /// Mean and standard error of the per-path residual of the identity.
    pub residual: f64,
    pub residual_se: f64,
    /// Mean cost difference `c[tau, T](P) - c[tau, T](C)` per path.
    pub cost_diff: f64,
    /// Mean of `a1 * sum (r* - P_t)^2` per path.
    pub quadratic_term: f64,
}

/// Finite-horizon form of the quadratic-divergence identity.
///
/// From the empty state, policy P orders by PIL with level `U(r)` in periods
/// `0..=T-tau` and `r` afterwards; policy C always orders `r`. On every path
/// the residual
/// `c[tau,T](P) - c[tau,T](C) + H(I_{T+1}(P)) - H(I_{T+1}(C)) + a1 sum_t (r - P_t)^2`
/// has mean zero.
pub fn verify_quadratic_divergence(
    bf: &BiasFunction<f64>,
    lead_time: usize,
    horizon: usize,
    replications: usize,
    seed: u64,
) -> Result<DivergenceReport> {
    if horizon < lead_time {
        return Err(Error::Config("horizon must be at least the lead time".into()));
    }
    let demand = make_exponential(bf.mu)?;
    let cost = CostParams::new(bf.h, bf.p)?;
    let u = bf.improving_level();
    let ctl = Policy::Pil { u, backend: None }.controller(&demand, lead_time, cost)?;
    let rows: Vec<[f64; 3]> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, 0x51, rep);
            let mut ctl = ctl.clone();
            let mut sp = PipelineState::<f64>::empty(lead_time)?;
            let mut sc = PipelineState::<f64>::empty(lead_time)?;
            let (mut cp, mut cc, mut gap) = (0.0, 0.0, 0.0);
            for t in 0..=horizon {
                let d = demand.sample(&mut rng);
                let qp = if t + lead_time <= horizon {
                    let q = ctl.decide(&sp)?;
                    gap += (bf.r - q).powi(2);
                    q
                } else {
                    bf.r
                };
                let (jp, lp) = sp.advance(qp, d);
                let (jc, lc) = sc.advance(bf.r, d);
                if t >= lead_time {
                    cp += cost.period_cost(jp, lp);
                    cc += cost.period_cost(jc, lc);
                }
            }
            let quad = bf.a1() * gap;
            let resid = cp - cc + bf.eval(sp.on_hand()) - bf.eval(sc.on_hand()) + quad;
            Ok([resid, cp - cc, quad])
        })
        .collect::<Result<_>>()?;
    let s = summarize(&rows.iter().map(|r| r[0]).collect::<Vec<_>>());
    let n = rows.len() as f64;
    Ok(DivergenceReport {
        replications,
        horizon,
        residual: s.mean,
        residual_se: s.std_error,
        cost_diff: rows.iter().map(|r| r[1]).sum::<f64>() / n,
        quadratic_term: rows.iter().map(|r| r[2]).sum::<f64>() / n,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityReport {
    pub paths: usize,
    pub levels: Vec<f64>,
    pub periods: usize,
    /// Path-period pairs where cumulative orders drop as `U` rises.
    pub order_violations: usize,
    /// Path-period pairs where cumulative lost sales rise as `U` rises.
    pub lost_violations: usize,
    pub worst_excess: f64,
}

/// Pathwise check that cumulative orders are nondecreasing and cumulative
/// lost sales nonincreasing in the PIL level. Differences below
/// `tol * (1 + magnitude)` are treated as rounding.
pub fn verify_monotone_in_level(
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    levels: &[f64],
    paths: usize,
    periods: usize,
    seed: u64,
    tol: f64,
) -> Result<MonotonicityReport> {
    let mut sorted = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let ctls = sorted
        .iter()
        .map(|&u| Policy::Pil { u, backend: None }.controller(demand, lead_time, cost))
        .collect::<Result<Vec<_>>>()?;
    let per_path: Vec<(usize, usize, f64)> = (0..paths)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, 0x6d, rep);
            let ds: Vec<f64> = (0..periods).map(|_| demand.sample(&mut rng)).collect();
            // cumulative (orders, lost) per level and period
            let mut cum = Vec::with_capacity(ctls.len());
            for ctl in &ctls {
                let mut ctl = ctl.clone();
                let mut s = PipelineState::<f64>::empty(lead_time)?;
                let (mut qo, mut lo) = (0.0, 0.0);
                let mut row = Vec::with_capacity(periods);
                for &d in &ds {
                    let q = ctl.decide(&s)?;
                    qo += q;
                    let (_, l) = s.advance(q, d);
                    lo += l;
                    row.push((qo, lo));
                }
                cum.push(row);
            }
            let (mut vo, mut vl, mut worst) = (0, 0, 0.0f64);
            for w in cum.windows(2) {
                for (a, b) in w[0].iter().zip(&w[1]) {
                    let eo = a.0 - b.0;
                    if eo > tol * (1.0 + a.0.abs()) {
                        vo += 1;
                        worst = worst.max(eo);
                    }
                    let el = b.1 - a.1;
                    if el > tol * (1.0 + a.1.abs()) {
                        vl += 1;
                        worst = worst.max(el);
                    }
                }
            }
            Ok((vo, vl, worst))
        })
        .collect::<Result<_>>()?;
    Ok(MonotonicityReport {
        paths,
        levels: sorted,
        periods,
        order_violations: per_path.iter().map(|r| r.0).sum(),
        lost_violations: per_path.iter().map(|r| r.1).sum(),
        worst_excess: per_path.iter().map(|r| r.2).fold(0.0, f64::max),
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BackorderDominance {
    pub s_star: f64,
    pub c_star: f64,
    pub u: f64,
    pub cost_pil: f64,
    pub half_width: f64,
    pub holds: bool,
}

/// `C(PIL^{(S* - tau mu)^+}) <= C^{B*}` with `k` CI half-widths of slack.
pub fn verify_backorder_dominance(
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    sim: &SimConfig,
    k: f64,
) -> Result<BackorderDominance> {
    let b = solve_backorder(demand, lead_time, &cost)?;
    let u = b.pil_level(demand, lead_time);
    let e = estimate_cost(&Policy::Pil { u, backend: None }, demand, lead_time, cost, sim)?;
    Ok(BackorderDominance {
        s_star: b.s_star,
        c_star: b.c_star,
        u,
        cost_pil: e.cost,
        half_width: e.half_width,
        holds: e.cost <= b.c_star + k * e.half_width,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CostIdentity {
    pub cost: f64,
    pub cost_half_width: f64,
    /// `h U - h mu + (h + p) * lost rate`.
    pub rhs: f64,
    pub rhs_half_width: f64,
}

/// Simulated cost of `P^U` against `h U - h mu + (h + p) * lost rate`, which
/// follows from the mean stock level at arrival being exactly `U`.
pub fn pil_cost_identity(
    u: f64,
    demand: &DemandModel,
    lead_time: usize,
    cost: CostParams<f64>,
    sim: &SimConfig,
) -> Result<CostIdentity> {
    if demand.integer_valued() {
        return Err(Error::Unsupported(
            "the identity needs fractional orders; lattice demand rounds them".into(),
        ));
    }
    let e = estimate_cost(&Policy::Pil { u, backend: None }, demand, lead_time, cost, sim)?;
    Ok(CostIdentity {
        cost: e.cost,
        cost_half_width: e.half_width,
        rhs: cost.h * (u - demand.mean()) + (cost.h + cost.p) * e.lost_rate,
        rhs_half_width: (cost.h + cost.p) * e.lost_half_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_closed_form_values() {
        let bf = BiasFunction::<f64>::new(0.5, 1.0, 1.0, 10.0).unwrap();
        assert_eq!(bf.eval(0.0), 0.0);
        assert!((bf.eval(2.0) + 16.0).abs() < 1e-12);
        let u = bf.improving_level();
        assert!((bf.eval(u) - bf.a2()).abs() < 1e-9);
        assert!(matches!(BiasFunction::new(1.0, 1.0, 1.0, 1.0), Err(Error::Domain(_))));
        assert!(bias_eval(&bf, -1.0).is_err());
    }

    #[test]
    fn bias_generic_over_f32() {
        let bf = BiasFunction::<f32>::new(0.5, 1.0, 1.0, 10.0).unwrap();
        assert!((bf.eval(2.0) + 16.0).abs() < 1e-5);
    }

    #[test]
    fn zero_order_gain_is_p_mu() {
        let bf = BiasFunction::new(0.0, 3.0, 1.0, 7.0).unwrap();
        assert_eq!(bf.gain(), 21.0);
        assert!(verify_bias_fixed_point(&bf, 50, 4.0) < 1e-9);
    }

    #[test]
    fn best_constant_order_minimizes_gain() {
        let (mu, h, p) = (100.0, 1.0, 9.0);
        let r = best_constant_order(mu, h, p);
        let g = |r: f64| BiasFunction::new(r, mu, h, p).unwrap().gain();
        for dr in [-1e-3, 1e-3] {
            assert!(g(r) < g(r + dr));
        }
    }
}
