//! Ordering rules: base-stock, constant order, PIL, myopic and capped
//! base-stock.

use std::fmt;
use std::str::FromStr;

use crate::demand::{parse_spec, take, DemandModel};
use crate::error::{Error, Result};
use crate::projection::{ProjectionBackend, Projector};
use crate::scalar::Scalar;
use crate::search::golden_section;
use crate::system::{CostParams, PipelineState};

/// Golden-section tolerance on the myopic order quantity.
pub const MYOPIC_TOL: f64 = 1e-6;

/// In debug builds every this many myopic decisions are re-checked by a
/// grid scan.
const MYOPIC_AUDIT_EVERY: u64 = 10_000;

/// Policy specification. Immutable; turn it into a [`Controller`] to decide.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Policy {
    BaseStock { s: f64 },
    ConstantOrder { r: f64 },
    Pil { u: f64, backend: Option<ProjectionBackend> },
    Myopic { backend: Option<ProjectionBackend> },
    CappedBaseStock { s: f64, r: f64 },
}

/// `(S - inventory position)^+`.
#[inline]
pub fn decide_base_stock<T: Scalar>(s: T, state: &PipelineState<T>) -> T {
    (s - state.position()).pos()
}

#[inline]
pub fn decide_constant<T: Scalar>(r: T, _state: &PipelineState<T>) -> T {
    r
}

/// `min(base-stock order, r)`.
#[inline]
pub fn decide_capped<T: Scalar>(s: T, r: T, state: &PipelineState<T>) -> T {
    decide_base_stock(s, state).min_of(r)
}

/// `(U - E[J_{t+tau-1} | x_t])^+`.
pub fn decide_pil(u: f64, state: &PipelineState<f64>, projector: &mut Projector) -> Result<f64> {
    Ok((u - projector.expected_level(state)?).max(0.0))
}

/// Expected cost in the arrival period when `q` is added to a stock level
/// distributed as `atoms`.
///
/// Uses `h E(y - D)^+ + p E(D - y)^+ = h (y - mu) + (h + p) E(D - y)^+`,
/// so each atom costs one loss-table lookup.
pub fn arrival_period_cost(atoms: &[(f64, f64)], q: f64, demand: &DemandModel, cost: &CostParams<f64>) -> f64 {
    let mu = demand.distribution().mean();
    let mut mean = 0.0;
    let mut loss = 0.0;
    for &(x, w) in atoms {
        mean += w * x;
        loss += w * demand.loss(x + q);
    }
    cost.h * (mean + q - mu) + (cost.h + cost.p) * loss
}

/// Order minimizing the expected cost of the period in which it arrives.
pub fn decide_myopic(
    state: &PipelineState<f64>,
    projector: &mut Projector,
    cost: &CostParams<f64>,
    integer: bool,
) -> Result<f64> {
    let (atoms, demand) = projector.atoms_with_demand(state)?;
    let hi = upper_bracket(demand, cost);
    let g = |q: f64| arrival_period_cost(atoms, q, demand, cost);
    let (q, _) = golden_section(g, 0.0, hi, MYOPIC_TOL);
    if !integer || q.floor() == q.ceil() {
        return Ok(q);
    }
    // convex objective: the best whole order is next to the continuous one
    let (lo, up) = (q.floor(), q.ceil());
    Ok(if g(lo) <= g(up) { lo } else { up })
}

/// No myopic order exceeds the newsvendor quantile of one-period demand:
/// past it the marginal cost is nonnegative for every stock level.
fn upper_bracket(demand: &DemandModel, cost: &CostParams<f64>) -> f64 {
    demand.quantile(cost.p / (cost.p + cost.h)) + 1.0
}

impl Policy {
    pub fn family(&self) -> &'static str {
        match self {
            Self::BaseStock { .. } => "bs",
            Self::ConstantOrder { .. } => "cop",
            Self::Pil { .. } => "pil",
            Self::Myopic { .. } => "myopic",
            Self::CappedBaseStock { .. } => "cbs",
        }
    }

    /// Parameter values in a fixed order, for CSV output.
    pub fn params(&self) -> Vec<(&'static str, f64)> {
        match *self {
            Self::BaseStock { s } => vec![("S", s)],
            Self::ConstantOrder { r } => vec![("r", r)],
            Self::Pil { u, .. } => vec![("U", u)],
            Self::Myopic { .. } => vec![],
            Self::CappedBaseStock { s, r } => vec![("S", s), ("r", r)],
        }
    }

    /// Validates parameters against the demand and builds a decision maker.
    pub fn controller(&self, demand: &DemandModel, lead_time: usize, cost: CostParams<f64>) -> Result<Controller> {
        if lead_time == 0 {
            return Err(Error::Contract("lead time must be >= 1".into()));
        }
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        let backend = |b: Option<ProjectionBackend>| b.unwrap_or_else(|| ProjectionBackend::default_for(demand));
        let kind = match *self {
            Self::BaseStock { s } => {
                nonneg("S", s)?;
                Rule::BaseStock(s)
            }
            Self::ConstantOrder { r } => {
                nonneg("r", r)?;
                if r >= demand.mean() {
                    return Err(Error::Stability {
                        rate: r,
                        mean: demand.mean(),
                    });
                }
                Rule::Constant(r)
            }
            Self::Pil { u, backend: b } => {
                nonneg("U", u)?;
                Rule::Pil(u, Projector::new(demand, backend(b))?)
            }
            Self::Myopic { backend: b } => Rule::Myopic(Projector::new(demand, backend(b))?),
            Self::CappedBaseStock { s, r } => {
                nonneg("S", s)?;
                nonneg("r", r)?;
                Rule::Capped(s, r)
            }
        };
        Ok(Controller {
            rule: kind,
            cost,
            integer: demand.integer_valued(),
            decisions: 0,
        })
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BaseStock { s } => write!(f, "bs:S={s}"),
            Self::ConstantOrder { r } => write!(f, "cop:r={r}"),
            Self::Pil { u, .. } => write!(f, "pil:U={u}"),
            Self::Myopic { .. } => write!(f, "myopic"),
            Self::CappedBaseStock { s, r } => write!(f, "cbs:S={s},r={r}"),
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, pairs) = parse_spec(s)?;
        match kind.as_str() {
            "bs" => Ok(Self::BaseStock { s: take(&pairs, "s", s)? }),
            "cop" => Ok(Self::ConstantOrder { r: take(&pairs, "r", s)? }),
            "pil" => Ok(Self::Pil {
                u: take(&pairs, "u", s)?,
                backend: None,
            }),
            "myopic" => Ok(Self::Myopic { backend: None }),
            "cbs" => Ok(Self::CappedBaseStock {
                s: take(&pairs, "s", s)?,
                r: take(&pairs, "r", s)?,
            }),
            other => Err(Error::Parse(format!("unknown policy family '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Rule {
    BaseStock(f64),
    Constant(f64),
    Pil(f64, Projector),
    Myopic(Projector),
    Capped(f64, f64),
}

/// A policy bound to a demand model with its own projection scratch space.
/// Clone one per simulation thread.
#[derive(Clone, Debug)]
pub struct Controller {
    rule: Rule,
    cost: CostParams<f64>,
    /// On integer demand, state-dependent rules order whole units.
    integer: bool,
    decisions: u64,
}

impl Controller {
    #[inline]
    pub fn decide(&mut self, state: &PipelineState<f64>) -> Result<f64> {
        self.decisions += 1;
        match &mut self.rule {
            Rule::BaseStock(s) => Ok(decide_base_stock(*s, state)),
            Rule::Constant(r) => Ok(*r),
            Rule::Capped(s, r) => Ok(decide_capped(*s, *r, state)),
            Rule::Pil(u, proj) => {
                let q = decide_pil(*u, state, proj)?;
                Ok(if self.integer { q.round() } else { q })
            }
            Rule::Myopic(proj) => {
                let q = decide_myopic(state, proj, &self.cost, self.integer)?;
                if cfg!(debug_assertions) && !self.integer && self.decisions % MYOPIC_AUDIT_EVERY == 1 {
                    audit_myopic(state, proj, &self.cost, q)?;
                }
                Ok(q)
            }
        }
    }

    /// Projected level after the last decision's state, for PIL.
    pub fn projector(&mut self) -> Option<&mut Projector> {
        match &mut self.rule {
            Rule::Pil(_, p) | Rule::Myopic(p) => Some(p),
            _ => None,
        }
    }

    /// True when the rule does not look at the state.
    pub fn is_state_free(&self) -> bool {
        matches!(self.rule, Rule::Constant(_))
    }
}

/// Grid-scan cross-check of the golden-section result.
fn audit_myopic(state: &PipelineState<f64>, proj: &mut Projector, cost: &CostParams<f64>, q: f64) -> Result<()> {
    let (atoms, demand) = proj.atoms_with_demand(state)?;
    let hi = upper_bracket(demand, cost);
    let g = |x: f64| arrival_period_cost(atoms, x, demand, cost);
    let n = 400;
    let best = (0..=n).map(|i| g(hi * i as f64 / n as f64)).fold(f64::INFINITY, f64::min);
    let got = g(q);
    if got > best + 1e-6 * (1.0 + best.abs()) {
        return Err(Error::Domain(format!(
            "myopic golden-section value {got} above grid minimum {best} at {state:?}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{make_exponential, make_poisson};
    use num_rational::Ratio;

    fn st(i: f64, q: &[f64]) -> PipelineState<f64> {
        PipelineState::new(i, q.to_vec()).unwrap()
    }

    fn cp(p: f64) -> CostParams<f64> {
        CostParams::new(1.0, p).unwrap()
    }

    #[test]
    fn base_stock_examples() {
        assert_eq!(decide_base_stock(20.0, &st(5.0, &[6.0, 4.0])), 5.0);
        assert_eq!(decide_base_stock(10.0, &st(8.0, &[6.0, 4.0])), 0.0);
        assert_eq!(decide_base_stock(0.0, &st(0.0, &[0.0])), 0.0);
        let q = PipelineState::new(Ratio::new(1i64, 3), vec![Ratio::new(1, 6)]).unwrap();
        assert_eq!(decide_base_stock(Ratio::new(2, 1), &q), Ratio::new(3, 2));
    }

    #[test]
    fn capped_examples() {
        assert_eq!(decide_capped(20.0, 2.0, &st(5.0, &[6.0, 4.0])), 2.0);
        assert_eq!(decide_capped(20.0, 100.0, &st(5.0, &[6.0, 4.0])), 5.0);
        assert_eq!(decide_capped(1e9, 3.0, &st(5.0, &[6.0, 4.0])), 3.0);
    }

    #[test]
    fn constant_order_stability() {
        let d = make_poisson(5.0).unwrap();
        let mut c = Policy::ConstantOrder { r: 3.0 }.controller(&d, 2, cp(9.0)).unwrap();
        assert_eq!(c.decide(&st(100.0, &[1.0])).unwrap(), 3.0);
        assert_eq!(decide_constant(0.0, &st(1.0, &[])), 0.0);
        assert!(matches!(
            Policy::ConstantOrder { r: 5.0 }.controller(&d, 2, cp(9.0)),
            Err(Error::Stability { .. })
        ));
    }

    #[test]
    fn pil_examples() {
        let e = make_exponential(1.0).unwrap();
        let mut c = Policy::Pil { u: 0.5, backend: None }.controller(&e, 1, cp(9.0)).unwrap();
        assert!((c.decide(&st(0.0, &[])).unwrap() - 0.5).abs() < 1e-15);

        let d = make_poisson(5.0).unwrap();
        let pmf = d.lattice().unwrap();
        let left: f64 = (0..5).map(|k| (5 - k) as f64 * pmf.pmf(k)).sum();
        assert!((left - 0.877337).abs() < 1e-6);
        let mut proj = Projector::new(&d, ProjectionBackend::LatticeExact).unwrap();
        assert!((decide_pil(2.0, &st(5.0, &[]), &mut proj).unwrap() - (2.0 - left)).abs() < 1e-12);
        // integer demand: the controller orders whole units
        let mut c = Policy::Pil { u: 2.0, backend: None }.controller(&d, 1, cp(9.0)).unwrap();
        assert_eq!(c.decide(&st(5.0, &[])).unwrap(), 1.0);
        let mut c = Policy::Pil { u: 0.5, backend: None }.controller(&d, 1, cp(9.0)).unwrap();
        assert_eq!(c.decide(&st(5.0, &[])).unwrap(), 0.0);
    }

    /// Scan oracle: minimize over a fine grid, refined linearly between
    /// lattice breakpoints.
    fn scan_newsvendor(d: &DemandModel, c: &CostParams<f64>) -> f64 {
        let g = |q: f64| c.p * d.loss(q) + c.h * d.holding(q);
        let mut best = (0.0, g(0.0));
        for i in 0..=60_000 {
            let q = i as f64 * 0.001;
            let v = g(q);
            if v < best.1 - 1e-12 {
                best = (q, v);
            }
        }
        best.0
    }

    #[test]
    fn myopic_single_period_is_newsvendor() {
        let d = make_poisson(5.0).unwrap();
        let c = cp(9.0);
        let mut ctl = Policy::Myopic { backend: None }.controller(&d, 1, c).unwrap();
        let q = ctl.decide(&st(0.0, &[])).unwrap();
        let want = scan_newsvendor(&d, &c);
        let g = |q: f64| c.p * d.loss(q) + c.h * d.holding(q);
        assert!((g(q) - g(want)).abs() < 1e-6, "{q} vs {want}");
        // the minimizer set contains the 0.9 quantile of the demand
        assert!((q - d.quantile(0.9)).abs() < 1.0 + 1e-6);
    }

    #[test]
    fn myopic_monotone_in_penalty() {
        let d = make_poisson(5.0).unwrap();
        let s = st(2.0, &[3.0]);
        let mut last = -1.0;
        for p in [10.0, 1e3, 1e6] {
            let mut ctl = Policy::Myopic { backend: None }.controller(&d, 2, cp(p)).unwrap();
            let q = ctl.decide(&s).unwrap();
            assert!(q >= last - 1e-6, "p={p}: {q} < {last}");
            last = q;
        }
    }

    #[test]
    fn myopic_orders_nothing_when_overstocked() {
        let d = make_poisson(5.0).unwrap();
        let mut ctl = Policy::Myopic { backend: None }.controller(&d, 2, cp(9.0)).unwrap();
        assert!(ctl.decide(&st(150.0, &[0.0])).unwrap() < 1e-5);
    }

    #[test]
    fn parse_round_trip() {
        for s in ["bs:S=12", "cop:r=3.5", "pil:U=12.5", "myopic", "cbs:S=20,r=2"] {
            let p: Policy = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("pil".parse::<Policy>().is_err());
        assert!("foo:x=1".parse::<Policy>().is_err());
    }
}
