//! Lost-sales pipeline state and the one-period transition.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// On-hand inventory `I_t` plus the outstanding orders
/// `(q_{t+1}, ..., q_{t+tau-1})`, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct PipelineState<T> {
    on_hand: T,
    outstanding: Vec<T>,
}

impl<T: Scalar> PipelineState<T> {
    pub fn new(on_hand: T, outstanding: Vec<T>) -> Result<Self> {
        if !on_hand.is_nonnegative() || outstanding.iter().any(|q| !q.is_nonnegative()) {
            return Err(Error::Contract(format!(
                "state entries must be >= 0: I={on_hand:?}, q={outstanding:?}"
            )));
        }
        Ok(Self { on_hand, outstanding })
    }

    /// The all-zero state for lead time `tau`.
    pub fn empty(lead_time: usize) -> Result<Self> {
        if lead_time == 0 {
            return Err(Error::Contract("lead time must be >= 1".into()));
        }
        Ok(Self {
            on_hand: T::zero(),
            outstanding: vec![T::zero(); lead_time - 1],
        })
    }

    #[inline]
    pub fn on_hand(&self) -> T {
        self.on_hand
    }

    #[inline]
    pub fn outstanding(&self) -> &[T] {
        &self.outstanding
    }

    #[inline]
    pub fn lead_time(&self) -> usize {
        self.outstanding.len() + 1
    }

    /// On-hand plus everything in the pipeline.
    #[inline]
    pub fn position(&self) -> T {
        self.outstanding.iter().fold(self.on_hand, |a, &q| a + q)
    }

    /// Applies one period in place and returns `(J, L)`.
    ///
    /// No validation; callers on the hot path guarantee nonnegative inputs.
    #[inline]
    pub fn advance(&mut self, order: T, demand: T) -> (T, T) {
        let lost = (demand - self.on_hand).pos();
        let end = (self.on_hand - demand).pos();
        if self.outstanding.is_empty() {
            self.on_hand = end + order;
        } else {
            self.on_hand = end + self.outstanding[0];
            self.outstanding.rotate_left(1);
            *self.outstanding.last_mut().unwrap() = order;
        }
        (end, lost)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostParams<T> {
    pub h: T,
    pub p: T,
}

impl<T: Scalar> CostParams<T> {
    pub fn new(h: T, p: T) -> Result<Self> {
        if !(h > T::zero()) || !(p > T::zero()) {
            return Err(Error::Parameter(format!("h and p must be > 0, got h={h:?}, p={p:?}")));
        }
        Ok(Self { h, p })
    }

    #[inline]
    pub fn period_cost(&self, end: T, lost: T) -> T {
        self.h * end + self.p * lost
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PeriodOutcome<T> {
    pub end_inventory: T,
    pub lost: T,
    pub cost: T,
    pub next_state: PipelineState<T>,
}

/// One period: demand hits on-hand stock, leftovers are held, the oldest
/// outstanding order arrives and `order` joins the back of the pipeline.
pub fn step<T: Scalar>(
    state: &PipelineState<T>,
    order: T,
    demand: T,
    cost: &CostParams<T>,
) -> Result<PeriodOutcome<T>> {
    if !order.is_nonnegative() || !demand.is_nonnegative() {
        return Err(Error::Contract(format!(
            "order and demand must be >= 0, got order={order:?}, demand={demand:?}"
        )));
    }
    let mut next = state.clone();
    let (end, lost) = next.advance(order, demand);
    Ok(PeriodOutcome {
        end_inventory: end,
        lost,
        cost: cost.period_cost(end, lost),
        next_state: next,
    })
}

/// Total lost sales `L[0, t]` via the running-maximum identity
/// `max_k (D[0,k] - I_0 - q[1,k])^+`.
///
/// `orders[k]` is placed in period `k` and arrives in period `k + tau`;
/// the initial pipeline supplies periods `1..tau`.
pub fn cumulative_lost<T: Scalar>(
    initial: &PipelineState<T>,
    demands: &[T],
    orders: &[T],
) -> Result<T> {
    if demands.len() != orders.len() {
        return Err(Error::Contract(format!(
            "{} demands but {} orders",
            demands.len(),
            orders.len()
        )));
    }
    let tau = initial.lead_time();
    let mut best = T::zero();
    let mut demand_sum = T::zero();
    let mut supply = initial.on_hand();
    for (k, &d) in demands.iter().enumerate() {
        if k >= 1 {
            supply = supply
                + if k < tau {
                    initial.outstanding()[k - 1]
                } else {
                    orders[k - tau]
                };
        }
        demand_sum = demand_sum + d;
        best = best.max_of(demand_sum - supply);
    }
    Ok(best)
}

/// Same quantity by summing per-period losses from [`step`].
pub fn cumulative_lost_by_steps<T: Scalar>(
    initial: &PipelineState<T>,
    demands: &[T],
    orders: &[T],
) -> Result<T> {
    if demands.len() != orders.len() {
        return Err(Error::Contract("length mismatch".into()));
    }
    let mut s = initial.clone();
    let mut total = T::zero();
    for (&d, &q) in demands.iter().zip(orders) {
        total = total + s.advance(q, d).1;
    }
    Ok(total)
}
