//! Expected lost sales over the lead time and the projected inventory level
//! `E[J_{t+tau-1} | x_t]`.
//!
//! Three backends:
//! * `LatticeExact` propagates the exact distribution of on-hand stock for
//!   integer demand. States may be fractional (PIL orders are real-valued), so
//!   the distribution is kept as one integer pmf per fractional offset.
//! * `MeCustomer` works in units of exponential phases: stock `x` holds a
//!   Poisson(`rate * x`) number of fully servable customers, and a period's
//!   demand is a random number `K` of customers.
//! * `MonteCarlo` simulates the pipeline forward with no further orders.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demand::{parse_spec, DemandModel, DiscretePmf, Distribution};
use crate::error::{Error, Result};
use crate::system::PipelineState;

pub type State = PipelineState<f64>;

/// Offsets closer than this are merged in the lattice backend.
const OFFSET_TOL: f64 = 1e-12;

/// Probabilities below this are dropped from the customer-count windows.
const WINDOW_EPS: f64 = 1e-18;

/// Dropped-mass budget for the customer-count recursion.
const ME_TRUNCATION_LIMIT: f64 = 1e-8;

/// Atoms lighter than this are left out of the level distribution.
const ATOM_EPS: f64 = 1e-16;

/// Upper bound on total lattice support before reporting a resource error.
const LATTICE_SUPPORT_CAP: usize = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum ProjectionBackend {
    LatticeExact,
    MeCustomer,
    MonteCarlo { paths: usize, seed: u64 },
}

impl ProjectionBackend {
    pub const DEFAULT_MC_PATHS: usize = 100_000;

    /// Exact backend for the demand if one exists, else Monte Carlo.
    pub fn default_for(demand: &DemandModel) -> Self {
        match demand.distribution() {
            Distribution::Lattice(_) => Self::LatticeExact,
            Distribution::MixedErlang(_) => Self::MeCustomer,
            Distribution::Point(_) => Self::MonteCarlo {
                paths: 1,
                seed: 0,
            },
        }
    }

    pub fn check(&self, demand: &DemandModel) -> Result<()> {
        match (self, demand.distribution()) {
            (Self::LatticeExact, Distribution::Lattice(_)) => Ok(()),
            (Self::MeCustomer, Distribution::MixedErlang(_)) => Ok(()),
            (Self::MonteCarlo { paths, .. }, _) if *paths > 0 => Ok(()),
            (Self::MonteCarlo { .. }, _) => Err(Error::Config("Monte Carlo needs paths > 0".into())),
            (b, _) => Err(Error::Config(format!("projection backend '{b}' does not support demand '{demand}'"))),
        }
    }
}

impl fmt::Display for ProjectionBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::LatticeExact => write!(f, "lattice"),
            Self::MeCustomer => write!(f, "me"),
            Self::MonteCarlo { paths, seed } => write!(f, "mc:paths={paths},seed={seed}"),
        }
    }
}

impl FromStr for ProjectionBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, pairs) = parse_spec(s)?;
        match kind.as_str() {
            "lattice" => Ok(Self::LatticeExact),
            "me" => Ok(Self::MeCustomer),
            "mc" => {
                let mut paths = Self::DEFAULT_MC_PATHS;
                let mut seed = 0;
                for (k, v) in pairs {
                    match k.as_str() {
                        "paths" => paths = v as usize,
                        "seed" => seed = v as u64,
                        other => return Err(Error::Parse(format!("unknown mc option '{other}'"))),
                    }
                }
                Ok(Self::MonteCarlo { paths, seed })
            }
            other => Err(Error::Parse(format!("unknown projection backend '{other}'"))),
        }
    }
}

/// A pmf over `offset + start + i`, `i = 0..probs.len()`.
#[derive(Clone, Debug, Default)]
struct Group {
    offset: f64,
    start: usize,
    probs: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
struct LatticeScratch {
    groups: Vec<Group>,
    next: Vec<Group>,
    spare: Vec<Vec<f64>>,
}

impl LatticeScratch {
    fn take_vec(&mut self, len: usize) -> Vec<f64> {
        let mut v = self.spare.pop().unwrap_or_default();
        v.clear();
        v.resize(len, 0.0);
        v
    }

    fn recycle(&mut self, groups: &mut Vec<Group>) {
        for g in groups.drain(..) {
            self.spare.push(g.probs);
        }
    }
}

/// Splits `x >= 0` into integer part and fractional offset, snapping offsets
/// within [`OFFSET_TOL`] of 1 up to the next integer.
#[inline]
fn split(x: f64) -> (usize, f64) {
    let mut m = x.floor();
    let mut o = x - m;
    if o > 1.0 - OFFSET_TOL {
        m += 1.0;
        o = 0.0;
    } else if o < OFFSET_TOL {
        o = 0.0;
    }
    (m as usize, o)
}

/// `E[(D - o - m)^+]` from the pmf tables.
#[inline]
fn lattice_loss(pmf: &DiscretePmf, m: usize, o: f64) -> f64 {
    pmf.loss_at(m) - o * pmf.survival_at(m)
}

/// Adds `probs` (values `offset + start + i`) into `out`, merging with an
/// existing group of the same offset.
fn merge_into(out: &mut Vec<Group>, offset: f64, start: usize, probs: &[f64], spare: &mut Vec<Vec<f64>>) {
    if let Some(g) = out.iter_mut().find(|g| (g.offset - offset).abs() < OFFSET_TOL) {
        let lo = g.start.min(start);
        let hi = (g.start + g.probs.len()).max(start + probs.len());
        if lo < g.start {
            let shift = g.start - lo;
            g.probs.splice(0..0, std::iter::repeat(0.0).take(shift));
            g.start = lo;
        }
        if g.probs.len() < hi - lo {
            g.probs.resize(hi - lo, 0.0);
        }
        let base = start - g.start;
        for (i, &p) in probs.iter().enumerate() {
            g.probs[base + i] += p;
        }
    } else {
        let mut v = spare.pop().unwrap_or_default();
        v.clear();
        v.extend_from_slice(probs);
        out.push(Group { offset, start, probs: v });
    }
}

#[derive(Clone, Debug, Default)]
struct MeScratch {
    cur: Vec<f64>,
    next: Vec<f64>,
    pois: Vec<f64>,
    pois_tail: Vec<f64>,
    /// `E[(K - i)^+]` for `i = 0..=k_max`.
    short: Vec<f64>,
    support: Vec<(usize, f64)>,
}

/// Projection engine with reusable scratch space. One per simulation thread.
#[derive(Clone, Debug)]
pub struct Projector {
    backend: ProjectionBackend,
    demand: DemandModel,
    mean: f64,
    lost: Vec<f64>,
    atoms: Vec<(f64, f64)>,
    lattice: LatticeScratch,
    me: MeScratch,
    mc_se: f64,
    dropped: f64,
}

impl Projector {
    pub fn new(demand: &DemandModel, backend: ProjectionBackend) -> Result<Self> {
        backend.check(demand)?;
        let mut me = MeScratch::default();
        if let Some(m) = demand.mixed_erlang() {
            let k_max = m.k_max();
            me.short = (0..=k_max)
                .map(|i| {
                    m.theta()
                        .iter()
                        .enumerate()
                        .skip(i + 1)
                        .map(|(k, t)| (k - i) as f64 * t)
                        .sum()
                })
                .collect();
            me.support = m
                .theta()
                .iter()
                .enumerate()
                .filter(|(_, t)| **t > 0.0)
                .map(|(k, t)| (k, *t))
                .collect();
        }
        Ok(Self {
            backend,
            demand: demand.clone(),
            mean: demand.distribution().mean(),
            lost: Vec::new(),
            atoms: Vec::new(),
            lattice: LatticeScratch::default(),
            me,
            mc_se: 0.0,
            dropped: 0.0,
        })
    }

    pub fn backend(&self) -> ProjectionBackend {
        self.backend
    }

    pub fn demand(&self) -> &DemandModel {
        &self.demand
    }

    /// `E[L_{t+j} | x_t]`, `j = 0..tau`.
    pub fn expected_lost(&mut self, state: &State) -> Result<&[f64]> {
        self.run(state, false)?;
        Ok(&self.lost)
    }

    /// `E[J_{t+tau-1} | x_t]` via the balance identity.
    pub fn expected_level(&mut self, state: &State) -> Result<f64> {
        self.run(state, false)?;
        let tau = state.lead_time() as f64;
        let lost: f64 = self.lost.iter().sum();
        Ok((state.position() - tau * self.mean + lost).max(0.0))
    }

    /// Standard error of the summed lost sales from the last Monte Carlo run.
    pub fn last_standard_error(&self) -> f64 {
        self.mc_se
    }

    /// Probability mass dropped by the last run (customer-count windows).
    pub fn last_dropped_mass(&self) -> f64 {
        self.dropped
    }

    /// Distribution of `J_{t+tau-1}` as `(value, probability)` atoms.
    ///
    /// Exact for the lattice backend; otherwise empirical from Monte Carlo
    /// paths.
    pub fn level_atoms(&mut self, state: &State) -> Result<&[(f64, f64)]> {
        match self.backend {
            ProjectionBackend::LatticeExact => self.run(state, true)?,
            ProjectionBackend::MonteCarlo { .. } => self.run(state, true)?,
            ProjectionBackend::MeCustomer => {
                let backend = ProjectionBackend::MonteCarlo {
                    paths: 20_000,
                    seed: 0,
                };
                let saved = std::mem::replace(&mut self.backend, backend);
                let r = self.run(state, true);
                self.backend = saved;
                r?
            }
        }
        Ok(&self.atoms)
    }

    /// [`Self::level_atoms`] together with the demand model.
    pub fn atoms_with_demand(&mut self, state: &State) -> Result<(&[(f64, f64)], &DemandModel)> {
        self.level_atoms(state)?;
        Ok((&self.atoms, &self.demand))
    }

    fn run(&mut self, state: &State, atoms: bool) -> Result<()> {
        self.lost.clear();
        self.atoms.clear();
        self.mc_se = 0.0;
        self.dropped = 0.0;
        match self.backend {
            ProjectionBackend::LatticeExact => self.run_lattice(state, atoms),
            ProjectionBackend::MeCustomer => self.run_me(state),
            ProjectionBackend::MonteCarlo { paths, seed } => {
                self.run_mc(state, paths, seed, atoms);
                Ok(())
            }
        }
    }

    fn run_lattice(&mut self, state: &State, want_atoms: bool) -> Result<()> {
        let pmf = match self.demand.distribution() {
            Distribution::Lattice(p) => p,
            _ => unreachable!("checked at construction"),
        };
        let tau = state.lead_time();
        let sc = &mut self.lattice;
        let mut groups = std::mem::take(&mut sc.groups);
        let mut next = std::mem::take(&mut sc.next);
        sc.recycle(&mut groups);
        sc.recycle(&mut next);

        let (m0, o0) = split(state.on_hand());
        let mut v = sc.take_vec(1);
        v[0] = 1.0;
        groups.push(Group {
            offset: o0,
            start: m0,
            probs: v,
        });
        let dlen = pmf.len();
        let dp = pmf.probs();
        let mut support = 0usize;
        for j in 0..tau {
            let mut el = 0.0;
            for g in &groups {
                for (i, &p) in g.probs.iter().enumerate() {
                    if p != 0.0 {
                        el += p * lattice_loss(pmf, g.start + i, g.offset);
                    }
                }
            }
            self.lost.push(el.max(0.0));
            let last = j + 1 == tau;
            if last && !want_atoms {
                break;
            }
            // end-of-period stock J = (I - D)^+
            let mut zero = 0.0;
            for g in &groups {
                let top = g.start + g.probs.len();
                let mut jp = sc.take_vec(top);
                for (i, &p) in g.probs.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let m = g.start + i;
                    let dmax = m.min(dlen - 1);
                    for d in 0..=dmax {
                        jp[m - d] += p * dp[d];
                    }
                    zero += p * pmf.survival_at(m);
                }
                if last {
                    for (k, &p) in jp.iter().enumerate() {
                        if p > ATOM_EPS {
                            self.atoms.push((g.offset + k as f64, p));
                        }
                    }
                    sc.spare.push(jp);
                } else {
                    let (carry, off) = split(g.offset + state.outstanding()[j]);
                    merge_into(&mut next, off, carry, &jp, &mut sc.spare);
                    sc.spare.push(jp);
                }
            }
            if last {
                if zero > 0.0 {
                    self.atoms.push((0.0, zero));
                }
                break;
            }
            let (carry, off) = split(state.outstanding()[j]);
            merge_into(&mut next, off, carry, &[zero], &mut sc.spare);
            sc.recycle(&mut groups);
            std::mem::swap(&mut groups, &mut next);
            support = support.max(groups.iter().map(|g| g.probs.len()).sum());
            if support > LATTICE_SUPPORT_CAP {
                return Err(Error::Resource(format!("lattice support {support} exceeds cap")));
            }
        }
        sc.groups = groups;
        sc.next = next;
        Ok(())
    }

    fn run_me(&mut self, state: &State) -> Result<()> {
        let me = match self.demand.distribution() {
            Distribution::MixedErlang(m) => m,
            _ => unreachable!("checked at construction"),
        };
        let tau = state.lead_time();
        let lambda = me.rate();
        let k_max = me.k_max();
        let sc = &mut self.me;
        let mut dropped = 0.0;

        // counts at or above cap_j can never run out over the remaining
        // tau - j periods, so they are lumped into the last cell exactly
        let mut cap = tau * k_max;
        let plo = poisson_terms(lambda * state.on_hand(), &mut sc.pois);
        let mut lo = plo.min(cap);
        sc.cur.clear();
        sc.cur.resize(cap - lo + 1, 0.0);
        let mut below = 0.0;
        for (m, &p) in sc.pois.iter().enumerate() {
            let v = plo + m;
            if v >= cap {
                break;
            }
            sc.cur[v - lo] = p;
            below += p;
        }
        sc.cur[cap - lo] = (1.0 - below).max(0.0);

        for j in 0..tau {
            let mut el = 0.0;
            for i in lo..k_max.min(cap) {
                el += sc.cur[i - lo] * sc.short[i];
            }
            self.lost.push(el / lambda);
            if j + 1 == tau {
                break;
            }
            // J = (I - K)^+, lumped at the next cap
            let next_cap = cap - k_max;
            sc.next.clear();
            sc.next.resize(next_cap + 1, 0.0);
            for (idx, &p) in sc.cur.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let i = lo + idx;
                if i >= cap {
                    sc.next[next_cap] += p;
                    continue;
                }
                for &(k, t) in &sc.support {
                    sc.next[i.saturating_sub(k).min(next_cap)] += p * t;
                }
            }
            // I' = J + Q with Q ~ Poisson(rate * q)
            let qlo = poisson_terms(lambda * state.outstanding()[j], &mut sc.pois);
            sc.pois_tail.clear();
            sc.pois_tail.push(0.0);
            let mut acc = 0.0;
            for &p in &sc.pois {
                acc += p;
                sc.pois_tail.push(acc);
            }
            let jlo = sc.next.iter().position(|&p| p > WINDOW_EPS).unwrap_or(next_cap);
            dropped += sc.next[..jlo].iter().sum::<f64>();
            let new_lo = (jlo + qlo).min(next_cap);
            sc.cur.clear();
            sc.cur.resize(next_cap + 1 - new_lo, 0.0);
            let lump = next_cap - new_lo;
            for i in jlo..=next_cap {
                let a = sc.next[i];
                if a == 0.0 {
                    continue;
                }
                if i == next_cap {
                    sc.cur[lump] += a;
                    continue;
                }
                // window terms with i + qlo + m < next_cap stay below the lump
                let n_below = (next_cap - i).saturating_sub(qlo).min(sc.pois.len());
                let base = i + qlo - new_lo;
                for (m, &p) in sc.pois[..n_below].iter().enumerate() {
                    sc.cur[base + m] += a * p;
                }
                sc.cur[lump] += a * (1.0 - sc.pois_tail[n_below]).max(0.0);
            }
            lo = new_lo;
            cap = next_cap;
        }
        self.dropped = dropped;
        if dropped > ME_TRUNCATION_LIMIT {
            return Err(Error::Truncation {
                context: format!("customer-count recursion at state {state:?}"),
                tail: dropped,
            });
        }
        Ok(())
    }

    fn run_mc(&mut self, state: &State, paths: usize, seed: u64, want_atoms: bool) {
        let tau = state.lead_time();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sums = vec![0.0; tau];
        let mut s1 = 0.0;
        let mut s2 = 0.0;
        let w = 1.0 / paths as f64;
        for _ in 0..paths {
            let mut inv = state.on_hand();
            let mut total = 0.0;
            for (j, slot) in sums.iter_mut().enumerate() {
                let d = self.demand.sample(&mut rng);
                let l = (d - inv).max(0.0);
                let end = (inv - d).max(0.0);
                *slot += l;
                total += l;
                if j + 1 < tau {
                    inv = end + state.outstanding()[j];
                } else if want_atoms {
                    self.atoms.push((end, w));
                }
            }
            s1 += total;
            s2 += total * total;
        }
        let n = paths as f64;
        self.lost.extend(sums.iter().map(|s| s / n));
        let mean = s1 / n;
        let var = if paths > 1 {
            ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        self.mc_se = (var / n).sqrt();
    }
}

/// Poisson(`mean`) probabilities `P(N = lo + m)` written to `out`, with
/// both tails cut where terms fall below double-precision relevance.
/// Returns `lo`.
fn poisson_terms(mean: f64, out: &mut Vec<f64>) -> usize {
    out.clear();
    if mean <= 0.0 {
        out.push(1.0);
        return 0;
    }
    let lo = if mean > 50.0 {
        (mean - 12.0 * mean.sqrt() - 10.0).max(0.0) as usize
    } else {
        0
    };
    let ln_m = mean.ln();
    let mut lp = -mean + lo as f64 * ln_m - ln_factorial(lo);
    let mut n = lo;
    loop {
        let p = lp.exp();
        out.push(p);
        n += 1;
        if n as f64 > mean && p < WINDOW_EPS * 1e-3 {
            break;
        }
        lp += ln_m - (n as f64).ln();
    }
    lo
}

fn ln_factorial(n: usize) -> f64 {
    if n < 2 {
        return 0.0;
    }
    // Stirling series; exact enough for n >= 2 at double precision
    let x = n as f64 + 1.0;
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + 1.0 / (12.0 * x)
        - 1.0 / (360.0 * x.powi(3))
        + 1.0 / (1260.0 * x.powi(5))
}

/// Convenience wrapper: `E[J_{t+tau-1} | x_t]` for one state.
pub fn project_expected_level(state: &State, demand: &DemandModel, backend: ProjectionBackend) -> Result<f64> {
    Projector::new(demand, backend)?.expected_level(state)
}

/// `E[L_{t+j} | x_t]` from the customer-count recursion.
pub fn me_customer_recursion(state: &State, demand: &DemandModel) -> Result<Vec<f64>> {
    Ok(Projector::new(demand, ProjectionBackend::MeCustomer)?
        .expected_lost(state)?
        .to_vec())
}

/// `E[L_{t+j} | x_t]` from the exact lattice recursion.
pub fn lattice_recursion(state: &State, demand: &DemandModel) -> Result<Vec<f64>> {
    Ok(Projector::new(demand, ProjectionBackend::LatticeExact)?
        .expected_lost(state)?
        .to_vec())
}

/// Monte Carlo estimate of `E[L_{t+j} | x_t]` with the standard error of
/// the summed lost sales.
pub fn monte_carlo_lost(state: &State, demand: &DemandModel, paths: usize, seed: u64) -> Result<(Vec<f64>, f64)> {
    let mut p = Projector::new(demand, ProjectionBackend::MonteCarlo { paths, seed })?;
    let lost = p.expected_lost(state)?.to_vec();
    Ok((lost, p.last_standard_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{fit_mixed_erlang, make_deterministic, make_exponential, make_geometric, make_poisson, MomentTarget};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn st(i: f64, q: &[f64]) -> State {
        State::new(i, q.to_vec()).unwrap()
    }

    /// Expected lost sales per period by explicit enumeration of demand paths.
    fn brute_lost(state: &State, pmf: &DiscretePmf) -> Vec<f64> {
        fn rec(inv: f64, j: usize, prob: f64, q: &[f64], pmf: &DiscretePmf, out: &mut [f64]) {
            for d in 0..pmf.len() {
                let p = prob * pmf.pmf(d);
                if p < 1e-20 {
                    continue;
                }
                let d = d as f64;
                out[j] += p * (d - inv).max(0.0);
                if j + 1 < out.len() {
                    rec((inv - d).max(0.0) + q[j], j + 1, p, q, pmf, out);
                }
            }
        }
        let mut out = vec![0.0; state.lead_time()];
        rec(state.on_hand(), 0, 1.0, state.outstanding(), pmf, &mut out);
        out
    }

    #[test]
    fn single_period_level_is_expected_leftover() {
        let d = make_poisson(5.0).unwrap();
        let pmf = d.lattice().unwrap();
        let level = project_expected_level(&st(7.3, &[]), &d, ProjectionBackend::LatticeExact).unwrap();
        let direct: f64 = (0..pmf.len()).map(|k| (7.3 - k as f64).max(0.0) * pmf.pmf(k)).sum();
        assert_relative_eq!(level, direct, epsilon = 1e-12);
        let e = make_exponential(3.0).unwrap();
        assert_eq!(project_expected_level(&st(0.0, &[]), &e, ProjectionBackend::MeCustomer).unwrap(), 0.0);
    }

    #[test]
    fn lattice_single_period_loss() {
        let d = make_poisson(5.0).unwrap();
        let pmf = d.lattice().unwrap();
        let direct: f64 = (6..pmf.len()).map(|k| (k as f64 - 5.0) * pmf.pmf(k)).sum();
        assert_relative_eq!(lattice_recursion(&st(5.0, &[]), &d).unwrap()[0], direct, epsilon = 1e-12);
        let det = make_deterministic(5.0).unwrap();
        assert_relative_eq!(lattice_recursion(&st(4.0, &[]), &det).unwrap()[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn lattice_matches_path_enumeration() {
        let d = make_poisson(3.0).unwrap();
        let g = make_geometric(2.0).unwrap();
        for dm in [&d, &g] {
            for s in [st(4.5, &[5.2, 4.8]), st(0.0, &[3.0, 0.25]), st(2.0, &[0.5]), st(7.75, &[0.0, 1.5])] {
                let got = lattice_recursion(&s, dm).unwrap();
                let want = brute_lost(&s, dm.lattice().unwrap());
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() < 1e-9, "{dm} {s:?}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn lattice_atoms_have_projected_mean() {
        let d = make_geometric(5.0).unwrap();
        let s = st(3.3, &[4.1, 0.0, 7.9]);
        let mut p = Projector::new(&d, ProjectionBackend::LatticeExact).unwrap();
        let level = p.expected_level(&s).unwrap();
        let atoms = p.level_atoms(&s).unwrap();
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        let mean: f64 = atoms.iter().map(|a| a.0 * a.1).sum();
        assert!((mass - 1.0).abs() < 1e-10);
        assert!((mean - level).abs() < 1e-8, "{mean} vs {level}");
    }

    #[test]
    fn me_empty_system_loses_everything() {
        let d = fit_mixed_erlang(MomentTarget::new(100.0, 0.5).unwrap()).unwrap();
        for l in me_customer_recursion(&st(0.0, &[0.0, 0.0, 0.0]), &d).unwrap() {
            assert_relative_eq!(l, 100.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn me_exponential_single_period() {
        let d = make_exponential(10.0).unwrap();
        for &i in &[0.0, 1.0, 7.5, 30.0, 200.0] {
            let l = me_customer_recursion(&st(i, &[]), &d).unwrap()[0];
            // closed form and direct integral E[(D - I)^+] agree
            assert_relative_eq!(l, 10.0 * (-i / 10.0f64).exp(), max_relative = 1e-10, epsilon = 1e-300);
            assert_relative_eq!(l, d.loss(i), max_relative = 1e-10, epsilon = 1e-300);
        }
    }

    #[test]
    fn me_two_periods_match_quadrature() {
        // tau = 2, exponential: E[L_1] = E[(D_1 - (I - D_0)^+ - q)^+]
        let mu = 4.0;
        let d = make_exponential(mu).unwrap();
        let (i, q) = (3.0, 2.5);
        let got = me_customer_recursion(&st(i, &[q]), &d).unwrap();
        // integrate over D_0 by Simpson on [0, i], plus the atom J = 0
        let n = 4000;
        let h = i / n as f64;
        let f = |x: f64| (-x / mu).exp() / mu * mu * (-((i - x) + q) / mu).exp();
        let mut s = f(0.0) + f(i);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * h);
        }
        let want = s * h / 3.0 + (-i / mu).exp() * mu * (-q / mu).exp();
        assert_relative_eq!(got[1], want, max_relative = 1e-9);
    }

    #[test]
    fn backend_parsing() {
        assert_eq!("lattice".parse::<ProjectionBackend>().unwrap(), ProjectionBackend::LatticeExact);
        assert_eq!("me".parse::<ProjectionBackend>().unwrap(), ProjectionBackend::MeCustomer);
        assert_eq!(
            "mc:paths=500".parse::<ProjectionBackend>().unwrap(),
            ProjectionBackend::MonteCarlo { paths: 500, seed: 0 }
        );
        assert!("quad".parse::<ProjectionBackend>().is_err());
        let p = make_poisson(5.0).unwrap();
        assert!(Projector::new(&p, ProjectionBackend::MeCustomer).is_err());
        let e = make_exponential(5.0).unwrap();
        assert!(Projector::new(&e, ProjectionBackend::LatticeExact).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn level_monotone_and_bounded(
            i in 0.0f64..40.0,
            q in prop::collection::vec(0.0f64..15.0, 3),
            bump in 0.01f64..3.0,
            which in 0usize..4,
            family in 0usize..3,
        ) {
            let (d, backend) = match family {
                0 => (make_poisson(5.0).unwrap(), ProjectionBackend::LatticeExact),
                1 => (make_geometric(5.0).unwrap(), ProjectionBackend::LatticeExact),
                _ => (fit_mixed_erlang(MomentTarget::new(5.0, 0.5).unwrap()).unwrap(), ProjectionBackend::MeCustomer),
            };
            let s = st(i, &q);
            let mut p = Projector::new(&d, backend).unwrap();
            let base = p.expected_level(&s).unwrap();
            prop_assert!(base >= 0.0 && base <= s.position() + 1e-9);
            let mut q2 = q.clone();
            let mut i2 = i;
            if which == 0 { i2 += bump } else { q2[which - 1] += bump }
            let up = p.expected_level(&st(i2, &q2)).unwrap();
            prop_assert!(up >= base - 1e-9, "{base} -> {up}");
        }
    }
}
