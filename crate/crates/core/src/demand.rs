//! One-period demand distributions.
//!
//! Every model exposes moments, cdf/quantile, the first-order loss function
//! `E[(D - x)^+]` and a sampler that draws from an explicit RNG. Integer-valued
//! models carry an explicit pmf, truncated where the remaining tail mass drops
//! below [`PMF_TAIL`] and renormalized; the removed mass is kept for error
//! accounting.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution as _, Exp, Gamma, Geometric, Poisson};

use crate::error::{Error, Result};

/// Tail mass below which integer pmfs are cut off.
pub const PMF_TAIL: f64 = 1e-12;

/// Largest support a truncated pmf may have before we give up.
pub const MAX_SUPPORT: usize = 5_000_000;

/// pmf on `{0, 1, ..., len-1}` with precomputed cumulative tables.
#[derive(Clone, Debug)]
pub struct DiscretePmf {
    probs: Vec<f64>,
    /// `P(X <= n)`.
    cdf: Vec<f64>,
    /// `P(X > n)`, accumulated from the right for accuracy.
    surv: Vec<f64>,
    /// `E[(X - n)^+]`.
    loss: Vec<f64>,
    mean: f64,
    variance: f64,
    tail_mass: f64,
}

impl DiscretePmf {
    /// Normalizes `probs` and builds the lookup tables. `tail_mass` is the
    /// probability that was cut off before renormalizing.
    pub fn from_probs(mut probs: Vec<f64>, tail_mass: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Parameter("empty pmf".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Parameter("pmf entries must be finite and >= 0".into()));
        }
        while probs.len() > 1 && *probs.last().unwrap() == 0.0 {
            probs.pop();
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::Parameter("pmf has zero mass".into()));
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        let n = probs.len();
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cdf.push(acc.min(1.0));
        }
        let mut surv = vec![0.0; n];
        let mut loss = vec![0.0; n];
        let mut s = 0.0;
        for k in (0..n).rev() {
            surv[k] = s;
            s += probs[k];
        }
        for k in (0..n.saturating_sub(1)).rev() {
            loss[k] = loss[k + 1] + surv[k];
        }
        let mean: f64 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let variance: f64 = probs
            .iter()
            .enumerate()
            .map(|(k, p)| (k as f64 - mean).powi(2) * p)
            .sum();
        Ok(Self {
            probs,
            cdf,
            surv,
            loss,
            mean,
            variance,
            tail_mass: tail_mass.max(0.0),
        })
    }

    pub fn point(value: usize) -> Self {
        let mut probs = vec![0.0; value + 1];
        probs[value] = 1.0;
        Self::from_probs(probs, 0.0).expect("point mass is a valid pmf")
    }

    pub fn poisson(mean: f64) -> Result<Self> {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::Parameter(format!("Poisson mean must be > 0, got {mean}")));
        }
        let ln_m = mean.ln();
        let mut lp = -mean;
        let mut probs = Vec::new();
        let mut cum = 0.0;
        let mut k = 0usize;
        loop {
            let p = lp.exp();
            probs.push(p);
            cum += p;
            k += 1;
            if (k as f64) > mean && 1.0 - cum < PMF_TAIL {
                break;
            }
            if k > MAX_SUPPORT {
                return Err(Error::Truncation {
                    context: format!("Poisson({mean}) pmf"),
                    tail: 1.0 - cum,
                });
            }
            lp += ln_m - (k as f64).ln();
        }
        Self::from_probs(probs, 1.0 - cum)
    }

    /// `P(X = k) = (1 - beta) beta^k` on `{0, 1, ...}`.
    pub fn geometric(beta: f64) -> Result<Self> {
        Self::negative_binomial(1, beta)
    }

    /// Sum of `n` i.i.d. geometric(`beta`) variables on `{0, 1, ...}`.
    pub fn negative_binomial(n: usize, beta: f64) -> Result<Self> {
        if n == 0 {
            return Ok(Self::point(0));
        }
        if !(0.0..1.0).contains(&beta) {
            return Err(Error::Parameter(format!("geometric beta must lie in [0,1), got {beta}")));
        }
        if beta == 0.0 {
            return Ok(Self::point(0));
        }
        let mean = n as f64 * beta / (1.0 - beta);
        let mut p = (1.0 - beta).powi(n as i32);
        let mut probs = Vec::new();
        let mut cum = 0.0;
        let mut k = 0usize;
        loop {
            probs.push(p);
            cum += p;
            if (k as f64) > mean && 1.0 - cum < PMF_TAIL {
                break;
            }
            if k > MAX_SUPPORT {
                return Err(Error::Truncation {
                    context: format!("negative binomial({n}, {beta}) pmf"),
                    tail: 1.0 - cum,
                });
            }
            p *= beta * (k + n) as f64 / (k + 1) as f64;
            k += 1;
        }
        Self::from_probs(probs, 1.0 - cum)
    }

    /// Distribution of `X + Y` for independent `X ~ self`, `Y ~ other`,
    /// re-truncated at [`PMF_TAIL`].
    pub fn convolve(&self, other: &DiscretePmf) -> Result<Self> {
        let len = self.probs.len() + other.probs.len() - 1;
        if len > MAX_SUPPORT {
            return Err(Error::Truncation {
                context: "pmf convolution".into(),
                tail: self.tail_mass + other.tail_mass,
            });
        }
        let mut out = vec![0.0; len];
        for (i, &a) in self.probs.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.probs.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        let mut tail = 0.0;
        while out.len() > 1 && tail + out[out.len() - 1] < PMF_TAIL {
            tail += out.pop().unwrap();
        }
        Self::from_probs(out, self.tail_mass + other.tail_mass + tail)
    }

    /// `n`-fold convolution by repeated squaring.
    pub fn convolve_power(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Ok(Self::point(0));
        }
        let mut result: Option<DiscretePmf> = None;
        let mut base = self.clone();
        let mut k = n;
        loop {
            if k & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.convolve(&base)?,
                });
            }
            k >>= 1;
            if k == 0 {
                break;
            }
            base = base.convolve(&base)?;
        }
        Ok(result.unwrap())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn pmf(&self, k: usize) -> f64 {
        self.probs.get(k).copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn tail_mass(&self) -> f64 {
        self.tail_mass
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let m = x.floor();
        if m >= self.probs.len() as f64 {
            1.0
        } else {
            self.cdf[m as usize]
        }
    }

    /// `P(X > n)` for integer `n >= 0`.
    #[inline]
    pub fn survival_at(&self, n: usize) -> f64 {
        self.surv.get(n).copied().unwrap_or(0.0)
    }

    /// Smallest `n` with `P(X <= n) >= u`.
    pub fn quantile(&self, u: f64) -> usize {
        if u <= 0.0 {
            return 0;
        }
        // cdf is nondecreasing; the last entry is 1 up to rounding
        let idx = self.cdf.partition_point(|&c| c < u);
        idx.min(self.probs.len() - 1)
    }

    /// `E[(X - x)^+]` for real `x`.
    #[inline]
    pub fn loss(&self, x: f64) -> f64 {
        if x < 0.0 {
            return self.mean - x;
        }
        let m = x.floor();
        if m >= self.probs.len() as f64 {
            return 0.0;
        }
        let mi = m as usize;
        (self.loss[mi] - (x - m) * self.surv[mi]).max(0.0)
    }

    /// `E[(x - X)^+]`.
    #[inline]
    pub fn holding(&self, x: f64) -> f64 {
        (x - self.mean + self.loss(x)).max(0.0)
    }

    /// `E[(X - n)^+]` for integer `n`.
    #[inline]
    pub fn loss_at(&self, n: usize) -> f64 {
        self.loss.get(n).copied().unwrap_or(0.0)
    }
}

/// Poisson probabilities `P(N = n)` for `n < len`, computed in log space so
/// that large means do not underflow.
pub fn poisson_prefix(mean: f64, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    if mean <= 0.0 {
        out.push(1.0);
        out.resize(len.max(1), 0.0);
        out.truncate(len);
        return out;
    }
    let ln_m = mean.ln();
    let mut lp = -mean;
    for n in 0..len {
        out.push(lp.exp());
        lp += ln_m - ((n + 1) as f64).ln();
    }
    out
}

/// Mixed Erlang: `D = E_1 + ... + E_K` with `E_i ~ Exp(rate)` and
/// `P(K = k) = theta[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MixedErlang {
    rate: f64,
    theta: Vec<f64>,
}

impl MixedErlang {
    pub fn new(rate: f64, theta: Vec<f64>) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Parameter(format!("phase rate must be > 0, got {rate}")));
        }
        if theta.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Parameter("phase-count pmf entries must be >= 0".into()));
        }
        let total: f64 = theta.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Parameter(format!(
                "phase-count pmf must sum to 1, got {total}"
            )));
        }
        let mut theta = theta;
        while theta.len() > 1 && *theta.last().unwrap() == 0.0 {
            theta.pop();
        }
        Ok(Self { rate, theta })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn k_max(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn phase_mean(&self) -> f64 {
        self.theta.iter().enumerate().map(|(k, t)| k as f64 * t).sum()
    }

    pub fn phase_variance(&self) -> f64 {
        let m = self.phase_mean();
        self.theta
            .iter()
            .enumerate()
            .map(|(k, t)| (k as f64 - m).powi(2) * t)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.phase_mean() / self.rate
    }

    pub fn variance(&self) -> f64 {
        (self.phase_mean() + self.phase_variance()) / (self.rate * self.rate)
    }

    /// Sum of `n` i.i.d. copies: the phase-count pmf is convolved.
    pub fn convolve_power(&self, n: usize) -> Result<Self> {
        let mut theta = vec![1.0];
        for _ in 0..n {
            let mut next = vec![0.0; theta.len() + self.theta.len() - 1];
            for (i, &a) in theta.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (j, &b) in self.theta.iter().enumerate() {
                    next[i + j] += a * b;
                }
            }
            if next.len() > MAX_SUPPORT {
                return Err(Error::Truncation {
                    context: "phase-count convolution".into(),
                    tail: 0.0,
                });
            }
            theta = next;
        }
        let total: f64 = theta.iter().sum();
        theta.iter_mut().for_each(|t| *t /= total);
        Self::new(self.rate, theta)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let pois = poisson_prefix(self.rate * x, self.theta.len());
        // P(Erlang(k) <= x) = P(N >= k), N ~ Poisson(rate x)
        let mut below = 0.0;
        let mut acc = self.theta[0];
        for k in 1..self.theta.len() {
            below += pois[k - 1];
            acc += self.theta[k] * (1.0 - below).max(0.0);
        }
        acc.min(1.0)
    }

    /// `E[(D - x)^+] = E[(K - N)^+] / rate`, `N ~ Poisson(rate x)`.
    pub fn loss(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return self.mean() - x.min(0.0);
        }
        let pois = poisson_prefix(self.rate * x, self.theta.len());
        let mut total = 0.0;
        for (k, &t) in self.theta.iter().enumerate().skip(1) {
            if t == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for (n, &pn) in pois.iter().enumerate().take(k) {
                s += (k - n) as f64 * pn;
            }
            total += t * s;
        }
        total / self.rate
    }

    pub fn holding(&self, x: f64) -> f64 {
        (x - self.mean() + self.loss(x)).max(0.0)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        if u <= self.theta[0] {
            return 0.0;
        }
        let u = u.min(1.0 - 1e-15);
        let mut lo = 0.0;
        let mut hi = self.mean().max(1.0 / self.rate);
        while self.cdf(hi) < u {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) >= u {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-13 * hi.max(1.0) {
                break;
            }
        }
        hi
    }
}

/// Target first two moments for a Mixed-Erlang fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentTarget {
    pub mean: f64,
    pub cv: f64,
}

impl MomentTarget {
    pub fn new(mean: f64, cv: f64) -> Result<Self> {
        if !(mean > 0.0) || !mean.is_finite() {
            return Err(Error::Parameter(format!("mean must be > 0, got {mean}")));
        }
        if !(cv > 0.0) || !cv.is_finite() {
            return Err(Error::Parameter(format!("cv must be > 0, got {cv}")));
        }
        Ok(Self { mean, cv })
    }
}

/// Numeric representation shared by one-period and lead-time demand.
#[derive(Clone, Debug)]
pub enum Distribution {
    Lattice(DiscretePmf),
    MixedErlang(MixedErlang),
    Point(f64),
}

impl Distribution {
    pub fn mean(&self) -> f64 {
        match self {
            Self::Lattice(p) => p.mean(),
            Self::MixedErlang(m) => m.mean(),
            Self::Point(x) => *x,
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Self::Lattice(p) => p.variance(),
            Self::MixedErlang(m) => m.variance(),
            Self::Point(_) => 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Lattice(p) => p.cdf(x),
            Self::MixedErlang(m) => m.cdf(x),
            Self::Point(v) => {
                if x >= *v {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Smallest `x` with `cdf(x) >= u`.
    pub fn quantile(&self, u: f64) -> f64 {
        match self {
            Self::Lattice(p) => p.quantile(u) as f64,
            Self::MixedErlang(m) => m.quantile(u),
            Self::Point(v) => *v,
        }
    }

    /// `E[(X - x)^+]`.
    pub fn loss(&self, x: f64) -> f64 {
        match self {
            Self::Lattice(p) => p.loss(x),
            Self::MixedErlang(m) => m.loss(x),
            Self::Point(v) => (v - x).max(0.0),
        }
    }

    /// `E[(x - X)^+]`.
    pub fn holding(&self, x: f64) -> f64 {
        match self {
            Self::Lattice(p) => p.holding(x),
            Self::MixedErlang(m) => m.holding(x),
            Self::Point(v) => (x - v).max(0.0),
        }
    }

    pub fn tail_mass(&self) -> f64 {
        match self {
            Self::Lattice(p) => p.tail_mass(),
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DemandKind {
    Poisson,
    Geometric,
    Exponential,
    MixedErlang,
    Deterministic,
}

#[derive(Clone, Debug)]
enum Sampler {
    Poisson(Poisson<f64>),
    Geometric(Geometric),
    Exp(Exp<f64>),
    MixedErlang {
        cum: Vec<f64>,
        phases: Vec<usize>,
        gammas: Vec<Option<Gamma<f64>>>,
    },
    Const(f64),
}

/// A one-period demand distribution. Immutable once built.
#[derive(Clone, Debug)]
pub struct DemandModel {
    kind: DemandKind,
    dist: Distribution,
    sampler: Sampler,
    /// Fit target for Mixed-Erlang models built by [`fit_mixed_erlang`].
    target_cv: Option<f64>,
    /// Mean as given at construction.
    param: f64,
}

fn check_mean(mean: f64) -> Result<()> {
    if !(mean > 0.0) || !mean.is_finite() {
        return Err(Error::Parameter(format!("mean must be > 0, got {mean}")));
    }
    Ok(())
}

pub fn make_poisson(mean: f64) -> Result<DemandModel> {
    check_mean(mean)?;
    Ok(DemandModel {
        kind: DemandKind::Poisson,
        dist: Distribution::Lattice(DiscretePmf::poisson(mean)?),
        sampler: Sampler::Poisson(
            Poisson::new(mean).map_err(|e| Error::Parameter(e.to_string()))?,
        ),
        target_cv: None,
        param: mean,
    })
}

/// Geometric on `{0, 1, 2, ...}` with `beta = mean / (1 + mean)`.
pub fn make_geometric(mean: f64) -> Result<DemandModel> {
    check_mean(mean)?;
    let beta = mean / (1.0 + mean);
    Ok(DemandModel {
        kind: DemandKind::Geometric,
        dist: Distribution::Lattice(DiscretePmf::geometric(beta)?),
        sampler: Sampler::Geometric(
            Geometric::new(1.0 - beta).map_err(|e| Error::Parameter(e.to_string()))?,
        ),
        target_cv: None,
        param: mean,
    })
}

pub fn make_exponential(mean: f64) -> Result<DemandModel> {
    check_mean(mean)?;
    Ok(DemandModel {
        kind: DemandKind::Exponential,
        dist: Distribution::MixedErlang(MixedErlang::new(1.0 / mean, vec![0.0, 1.0])?),
        sampler: Sampler::Exp(Exp::new(1.0 / mean).map_err(|e| Error::Parameter(e.to_string()))?),
        target_cv: Some(1.0),
        param: mean,
    })
}

pub fn make_deterministic(value: f64) -> Result<DemandModel> {
    check_mean(value)?;
    let dist = if value.fract() == 0.0 && value < MAX_SUPPORT as f64 {
        Distribution::Lattice(DiscretePmf::point(value as usize))
    } else {
        Distribution::Point(value)
    };
    Ok(DemandModel {
        kind: DemandKind::Deterministic,
        dist,
        sampler: Sampler::Const(value),
        target_cv: None,
        param: value,
    })
}

/// Builds a Mixed-Erlang demand model from an explicit phase rate and
/// phase-count pmf.
pub fn make_mixed_erlang(me: MixedErlang) -> Result<DemandModel> {
    let mut cum = Vec::new();
    let mut phases = Vec::new();
    let mut gammas = Vec::new();
    let mut acc = 0.0;
    for (k, &t) in me.theta().iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        acc += t;
        cum.push(acc);
        phases.push(k);
        gammas.push(if k == 0 {
            None
        } else {
            Some(Gamma::new(k as f64, 1.0 / me.rate()).map_err(|e| Error::Parameter(e.to_string()))?)
        });
    }
    if let Some(last) = cum.last_mut() {
        *last = f64::INFINITY;
    }
    let param = me.mean();
    Ok(DemandModel {
        kind: DemandKind::MixedErlang,
        dist: Distribution::MixedErlang(me),
        sampler: Sampler::MixedErlang { cum, phases, gammas },
        target_cv: None,
        param,
    })
}

/// Two-moment Mixed-Erlang fit.
///
/// For `cv^2 <= 1` this is the Erlang(k-1, k) mixture with
/// `k = ceil(1/cv^2)`; for `cv^2 > 1` the phase count is two-point on
/// `{1, k}` with the smallest feasible `k >= 2`.
pub fn fit_mixed_erlang(target: MomentTarget) -> Result<DemandModel> {
    let MomentTarget { mean, cv } = MomentTarget::new(target.mean, target.cv)?;
    let c2 = cv * cv;
    let (rate, theta) = if c2 <= 1.0 {
        let k = ((1.0 / c2) - 1e-9).ceil().max(1.0) as usize;
        let kf = k as f64;
        let disc = (kf * (1.0 + c2) - kf * kf * c2).max(0.0);
        let q = ((kf * c2 - disc.sqrt()) / (1.0 + c2)).clamp(0.0, 1.0);
        let mut theta = vec![0.0; k + 1];
        theta[k - 1] += q;
        theta[k] += 1.0 - q;
        ((kf - q) / mean, theta)
    } else {
        let mut found = None;
        for k in 2..=100_000usize {
            let kf = k as f64;
            let a = kf - 1.0;
            let qa = (1.0 + c2) * a;
            let qb = kf + 2.0 - 2.0 * (1.0 + c2) * kf;
            let qc = kf * (c2 * kf - 1.0) / a;
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            let sq = disc.sqrt();
            let roots = [(-qb + sq) / (2.0 * qa), (-qb - sq) / (2.0 * qa)];
            if let Some(w) = roots.into_iter().find(|w| (0.0..=1.0).contains(w)) {
                found = Some((k, w));
                break;
            }
        }
        let (k, w) = found.ok_or_else(|| Error::Parameter(format!("no two-point fit for cv {cv}")))?;
        let mut theta = vec![0.0; k + 1];
        theta[1] = w;
        theta[k] = 1.0 - w;
        let m = k as f64 - w * (k as f64 - 1.0);
        (m / mean, theta)
    };
    let mut model = make_mixed_erlang(MixedErlang::new(rate, theta)?)?;
    if (cv - 1.0).abs() < 1e-15 {
        model.kind = DemandKind::Exponential;
    }
    model.target_cv = Some(cv);
    Ok(model)
}

/// Distribution of `D[0, periods-1]`, the sum of `periods` i.i.d. copies.
pub fn convolve_lead_time(model: &DemandModel, periods: usize) -> Result<Distribution> {
    if periods == 0 {
        return Err(Error::Parameter("periods must be >= 1".into()));
    }
    let n = periods as f64;
    Ok(match (&model.kind, &model.dist) {
        (DemandKind::Poisson, _) => Distribution::Lattice(DiscretePmf::poisson(n * model.mean())?),
        (DemandKind::Geometric, _) => {
            Distribution::Lattice(DiscretePmf::negative_binomial(periods, model.geometric_beta().unwrap())?)
        }
        (_, Distribution::MixedErlang(me)) => Distribution::MixedErlang(me.convolve_power(periods)?),
        (_, Distribution::Lattice(p)) => Distribution::Lattice(p.convolve_power(periods)?),
        (_, Distribution::Point(v)) => Distribution::Point(n * v),
    })
}

impl DemandModel {
    pub fn kind(&self) -> DemandKind {
        self.kind
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    /// Analytic mean; integer pmfs are truncated so their numeric mean can
    /// differ in the last few digits.
    pub fn mean(&self) -> f64 {
        self.analytic_mean()
    }

    /// Analytic mean from the parameters (before pmf truncation).
    pub fn analytic_mean(&self) -> f64 {
        match self.kind {
            DemandKind::MixedErlang => self.dist.mean(),
            _ => self.param,
        }
    }

    pub fn variance(&self) -> f64 {
        self.dist.variance()
    }

    pub fn cv(&self) -> f64 {
        self.variance().sqrt() / self.mean()
    }

    pub fn integer_valued(&self) -> bool {
        matches!(self.dist, Distribution::Lattice(_))
    }

    pub fn lattice(&self) -> Option<&DiscretePmf> {
        match &self.dist {
            Distribution::Lattice(p) => Some(p),
            _ => None,
        }
    }

    /// Mixed-Erlang representation; exponential demand is `K = 1`.
    pub fn mixed_erlang(&self) -> Option<&MixedErlang> {
        match &self.dist {
            Distribution::MixedErlang(m) => Some(m),
            _ => None,
        }
    }

    pub fn poisson_rate(&self) -> Option<f64> {
        match &self.sampler {
            Sampler::Poisson(_) => Some(self.spec_mean()),
            _ => None,
        }
    }

    pub fn geometric_beta(&self) -> Option<f64> {
        match &self.sampler {
            Sampler::Geometric(_) => {
                let m = self.spec_mean();
                Some(m / (1.0 + m))
            }
            _ => None,
        }
    }

    fn spec_mean(&self) -> f64 {
        self.param
    }

    pub fn pmf(&self, k: usize) -> f64 {
        match &self.dist {
            Distribution::Lattice(p) => p.pmf(k),
            _ => 0.0,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.dist.cdf(x)
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.dist.quantile(u)
    }

    /// `E[(D - x)^+]`.
    pub fn loss(&self, x: f64) -> f64 {
        self.dist.loss(x)
    }

    /// `E[(x - D)^+]`.
    pub fn holding(&self, x: f64) -> f64 {
        self.dist.holding(x)
    }

    pub fn tail_mass(&self) -> f64 {
        self.dist.tail_mass()
    }

    /// Draws one demand from `rng`.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match &self.sampler {
            Sampler::Poisson(d) => d.sample(rng),
            Sampler::Geometric(d) => d.sample(rng) as f64,
            Sampler::Exp(d) => d.sample(rng),
            Sampler::MixedErlang { cum, phases, gammas } => {
                let u: f64 = rng.gen();
                let idx = cum.iter().position(|&c| u < c).unwrap_or(phases.len() - 1);
                match &gammas[idx] {
                    Some(g) => g.sample(rng),
                    None => 0.0,
                }
            }
            Sampler::Const(v) => *v,
        }
    }

    /// Parseable description, e.g. `poisson:mean=5`.
    pub fn describe(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DemandModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            DemandKind::Poisson => write!(f, "poisson:mean={}", fmt_num(self.spec_mean())),
            DemandKind::Geometric => write!(f, "geometric:mean={}", fmt_num(self.spec_mean())),
            DemandKind::Exponential => write!(f, "exp:mean={}", fmt_num(self.mean())),
            DemandKind::MixedErlang => match self.target_cv {
                Some(cv) => write!(f, "me:mean={},cv={}", fmt_num(self.mean()), fmt_num(cv)),
                None => write!(f, "me:mean={},cv={}", fmt_num(self.mean()), fmt_num(self.cv())),
            },
            DemandKind::Deterministic => write!(f, "det:value={}", fmt_num(self.mean())),
        }
    }
}

fn fmt_num(x: f64) -> String {
    let r = (x * 1e9).round() / 1e9;
    format!("{r}")
}

/// Splits `kind:key=value,key=value` into the kind and its key/value pairs.
pub(crate) fn parse_spec(s: &str) -> Result<(String, Vec<(String, f64)>)> {
    let s = s.trim();
    let (kind, rest) = match s.split_once(':') {
        Some((k, r)) => (k, r),
        None => (s, ""),
    };
    let mut pairs = Vec::new();
    for part in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got '{part}' in '{s}'")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad number '{v}' in '{s}'")))?;
        pairs.push((k.trim().to_ascii_lowercase(), v));
    }
    Ok((kind.trim().to_ascii_lowercase(), pairs))
}

pub(crate) fn take(pairs: &[(String, f64)], key: &str, spec: &str) -> Result<f64> {
    pairs
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Parse(format!("missing '{key}' in '{spec}'")))
}

impl FromStr for DemandModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, pairs) = parse_spec(s)?;
        match kind.as_str() {
            "poisson" => make_poisson(take(&pairs, "mean", s)?),
            "geometric" | "geo" => make_geometric(take(&pairs, "mean", s)?),
            "exp" | "exponential" => make_exponential(take(&pairs, "mean", s)?),
            "me" | "mixed-erlang" => fit_mixed_erlang(MomentTarget::new(
                take(&pairs, "mean", s)?,
                take(&pairs, "cv", s)?,
            )?),
            "det" | "deterministic" => make_deterministic(
                take(&pairs, "value", s).or_else(|_| take(&pairs, "mean", s))?,
            ),
            other => Err(Error::Parse(format!("unknown demand kind '{other}'"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Moments of an ME model recomputed from (rate, theta) directly.
    fn me_moments(me: &MixedErlang) -> (f64, f64) {
        let ek: f64 = me.theta().iter().enumerate().map(|(k, t)| k as f64 * t).sum();
        let ek2: f64 = me.theta().iter().enumerate().map(|(k, t)| (k * k) as f64 * t).sum();
        let vk = ek2 - ek * ek;
        (ek / me.rate(), ((ek + vk) / (ek * ek)).sqrt())
    }

    #[test]
    fn poisson_mean_five() {
        let d = make_poisson(5.0).unwrap();
        assert_relative_eq!(d.pmf(0), (-5.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(d.pmf(0), 0.006737947, max_relative = 1e-7);
        assert_relative_eq!(d.mean(), 5.0, max_relative = 1e-10);
        assert_relative_eq!(d.variance(), 5.0, max_relative = 1e-9);
        // partial sum of the pmf
        let direct: f64 = (0..=4u32)
            .map(|k| (-5.0f64).exp() * 5f64.powi(k as i32) / (1..=k).map(f64::from).product::<f64>())
            .sum();
        assert_relative_eq!(d.cdf(4.0), direct, max_relative = 1e-12);
        assert_relative_eq!(d.cdf(4.0), 0.440493, max_relative = 1e-5);
        assert!(d.tail_mass() < 1e-12);
        assert!(d.integer_valued());
    }

    #[test]
    fn geometric_support_starts_at_zero() {
        let d = make_geometric(5.0).unwrap();
        assert_relative_eq!(d.geometric_beta().unwrap(), 5.0 / 6.0, max_relative = 1e-14);
        assert_relative_eq!(d.pmf(0), 1.0 / 6.0, max_relative = 1e-12);
        assert_relative_eq!(d.variance(), 30.0, max_relative = 1e-9);
        assert_relative_eq!(d.mean(), 5.0, max_relative = 1e-10);
        let half = make_geometric(0.5).unwrap();
        assert_relative_eq!(half.geometric_beta().unwrap(), 1.0 / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn nonpositive_mean_rejected() {
        assert!(make_poisson(0.0).is_err());
        assert!(make_geometric(-1.0).is_err());
        assert!(make_exponential(0.0).is_err());
        assert!(MomentTarget::new(1.0, 0.0).is_err());
    }

    #[test]
    fn exponential_fit_is_single_phase() {
        let d = fit_mixed_erlang(MomentTarget::new(100.0, 1.0).unwrap()).unwrap();
        let me = d.mixed_erlang().unwrap();
        assert_eq!(me.k_max(), 1);
        assert_eq!(me.theta()[1], 1.0);
        assert_relative_eq!(me.rate(), 0.01, max_relative = 1e-14);
        assert_eq!(d.kind(), DemandKind::Exponential);
    }

    #[test]
    fn fits_reproduce_moments() {
        for &cv in &[0.15, 0.25, 0.4, 0.5, 0.6, 0.8, 1.0, 1.2, 1.4, 1.5, 2.0] {
            for &mean in &[5.0, 100.0] {
                let d = fit_mixed_erlang(MomentTarget::new(mean, cv).unwrap()).unwrap();
                let me = d.mixed_erlang().unwrap();
                let (m, c) = me_moments(me);
                assert!(((m - mean) / mean).abs() < 1e-9, "cv {cv}: mean {m}");
                assert!(((c - cv) / cv).abs() < 1e-9, "cv {cv}: got {c}");
                let support: Vec<_> = me.theta().iter().filter(|t| **t > 0.0).collect();
                assert!(support.len() <= 2);
                let total: f64 = me.theta().iter().sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_cv_fit_is_erlang_four() {
        let d = fit_mixed_erlang(MomentTarget::new(100.0, 0.5).unwrap()).unwrap();
        let me = d.mixed_erlang().unwrap();
        assert_relative_eq!(d.mean(), 100.0, max_relative = 1e-9);
        assert!((d.cv() - 0.5).abs() < 1e-7);
        assert_eq!(me.k_max(), 4);
    }

    #[test]
    fn lead_time_convolutions() {
        let p = make_poisson(5.0).unwrap();
        let lt = convolve_lead_time(&p, 2).unwrap();
        assert_relative_eq!(lt.mean(), 10.0, max_relative = 1e-10);
        if let Distribution::Lattice(pmf) = &lt {
            assert_relative_eq!(pmf.pmf(0), (-10.0f64).exp(), max_relative = 1e-12);
        } else {
            panic!("expected lattice");
        }

        let e = make_exponential(100.0).unwrap();
        match convolve_lead_time(&e, 3).unwrap() {
            Distribution::MixedErlang(me) => {
                assert_eq!(me.k_max(), 3);
                assert_eq!(me.theta()[3], 1.0);
                assert_relative_eq!(me.rate(), 0.01);
            }
            _ => panic!("expected ME"),
        }

        // brute-force convolution oracle for the geometric case
        let g = make_geometric(5.0).unwrap();
        let pmf = g.lattice().unwrap();
        let brute0 = pmf.pmf(0) * pmf.pmf(0);
        let brute7: f64 = (0..=7).map(|i| pmf.pmf(i) * pmf.pmf(7 - i)).sum();
        match convolve_lead_time(&g, 2).unwrap() {
            Distribution::Lattice(nb) => {
                assert_relative_eq!(nb.pmf(0), 1.0 / 36.0, max_relative = 1e-12);
                assert_relative_eq!(nb.pmf(0), brute0, max_relative = 1e-12);
                assert_relative_eq!(nb.pmf(7), brute7, max_relative = 1e-10);
            }
            _ => panic!("expected lattice"),
        }
    }

    #[test]
    fn loss_function_matches_direct_sum() {
        let d = make_poisson(5.0).unwrap();
        let pmf = d.lattice().unwrap();
        for &x in &[0.0, 0.3, 2.0, 4.7, 5.0, 11.25, 40.0] {
            let direct: f64 = (0..pmf.len())
                .map(|k| (k as f64 - x).max(0.0) * pmf.pmf(k))
                .sum();
            assert_relative_eq!(d.loss(x), direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn me_loss_matches_quadrature() {
        // exponential: E[(D - x)^+] = mu e^{-x/mu}
        let e = make_exponential(2.0).unwrap();
        for &x in &[0.0, 0.5, 3.0, 10.0] {
            assert_relative_eq!(e.loss(x), 2.0 * (-x / 2.0f64).exp(), max_relative = 1e-12);
            assert_relative_eq!(e.cdf(x), 1.0 - (-x / 2.0f64).exp(), epsilon = 1e-14);
        }
        // Erlang-2 partial expectation by Simpson's rule on the density
        let me = MixedErlang::new(1.0, vec![0.0, 0.0, 1.0]).unwrap();
        let x0 = 1.3;
        let n = 20_000;
        let b = 60.0;
        let hstep = (b - x0) / n as f64;
        let f = |y: f64| (y - x0) * y * (-y).exp();
        let mut s = f(x0) + f(b);
        for i in 1..n {
            let y = x0 + i as f64 * hstep;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(y);
        }
        assert_relative_eq!(me.loss(x0), s * hstep / 3.0, max_relative = 1e-9);
    }

    #[test]
    fn quantile_cdf_consistency() {
        let models: Vec<DemandModel> = vec![
            make_poisson(5.0).unwrap(),
            make_geometric(5.0).unwrap(),
            make_exponential(100.0).unwrap(),
            fit_mixed_erlang(MomentTarget::new(100.0, 0.5).unwrap()).unwrap(),
            fit_mixed_erlang(MomentTarget::new(100.0, 1.5).unwrap()).unwrap(),
        ];
        for d in &models {
            for i in 1..100 {
                let u = i as f64 / 100.0;
                let x = d.quantile(u);
                assert!(d.cdf(x) >= u - 1e-12, "{d}: cdf(q({u})) = {}", d.cdf(x));
            }
        }
    }

    #[test]
    fn sample_means_within_four_standard_errors() {
        let models: Vec<DemandModel> = vec![
            make_poisson(5.0).unwrap(),
            make_geometric(5.0).unwrap(),
            make_exponential(100.0).unwrap(),
            fit_mixed_erlang(MomentTarget::new(100.0, 0.5).unwrap()).unwrap(),
            fit_mixed_erlang(MomentTarget::new(5.0, 2.0).unwrap()).unwrap(),
            make_deterministic(3.5).unwrap(),
        ];
        for (i, d) in models.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + i as u64);
            let n = 1_000_000;
            let mut s = 0.0;
            for _ in 0..n {
                s += d.sample(&mut rng);
            }
            let m = s / n as f64;
            let se = (d.variance() / n as f64).sqrt();
            assert!((m - d.mean()).abs() <= 4.0 * se + 1e-12, "{d}: {m} vs {}", d.mean());
        }
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["poisson:mean=5", "geometric:mean=5", "me:mean=100,cv=0.5", "exp:mean=100", "det:value=5"] {
            let d: DemandModel = s.parse().unwrap();
            let again: DemandModel = d.to_string().parse().unwrap();
            assert_eq!(d.kind(), again.kind());
            assert_relative_eq!(d.mean(), again.mean(), max_relative = 1e-9);
            assert_relative_eq!(d.variance(), again.variance(), max_relative = 1e-9);
        }
        assert!("poisson".parse::<DemandModel>().is_err());
        assert!("weibull:mean=3".parse::<DemandModel>().is_err());
    }

    #[test]
    fn integer_flag() {
        assert!(make_deterministic(4.0).unwrap().integer_valued());
        assert!(!make_deterministic(4.5).unwrap().integer_valued());
        assert!(!make_exponential(1.0).unwrap().integer_valued());
    }
}
