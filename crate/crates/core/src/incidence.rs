//! Latent event-time distributions and the five-outcome event probabilities.
//!
//! For two independent latent times with cause-specific hazards `λ_1`, `λ_2`
//! the probability that cause `k` occurs first inside `(t0, t1]` is
//! `∫ S_1(x) S_2(x) λ_k(x) dx` over that window. Follow-up `[0, ν]` is split
//! in halves; outcomes are
//!
//! | outcome | meaning |
//! |---|---|
//! | E1 / E2 | progression / complication first, within `[0, ν/2]` |
//! | E3 / E4 | progression / complication first, within `(ν/2, ν]` |
//! | E5 | no event by `ν`, probability `S_1(ν) S_2(ν)` |
//!
//! Integrals use 64-node Gauss–Legendre per half. Near zero the integrand
//! behaves like `x^(α−1)`, so the first half is integrated in `t` with
//! `x = (ν/2)·t^p`, `p = ⌈4 / min α⌉`, which makes the integrand at least
//! three times differentiable at the origin.

use gauss_quad::GaussLegendre;
use serde::{Deserialize, Serialize};
use std::num::NonZeroUsize;
use std::sync::OnceLock;

use crate::model::Cause;

/// Node count per half-interval used throughout the engine.
pub const DEFAULT_NODES: usize = 64;

const MAX_SUBSTITUTION_POWER: f64 = 64.0;

/// Marginal distribution of one cause's latent event time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentDistribution {
    /// Cumulative hazard `rate·x^shape`.
    Weibull { shape: f64, rate: f64 },
    /// Survival `1 / (1 + (x/scale)^shape)`.
    LogLogistic { scale: f64, shape: f64 },
    /// Zero hazard; the event never happens.
    Never,
}

impl LatentDistribution {
    pub fn is_valid(&self) -> bool {
        match *self {
            LatentDistribution::Weibull { shape, rate } => shape > 0.0 && rate >= 0.0 && shape.is_finite() && rate.is_finite(),
            LatentDistribution::LogLogistic { scale, shape } => scale > 0.0 && shape > 0.0 && scale.is_finite() && shape.is_finite(),
            LatentDistribution::Never => true,
        }
    }

    /// Exponent `e` with `λ(x) ~ x^(e−1)` as `x → 0`; `None` for zero hazard.
    pub fn small_time_exponent(&self) -> Option<f64> {
        match *self {
            LatentDistribution::Weibull { rate, .. } if rate == 0.0 => None,
            LatentDistribution::Weibull { shape, .. } => Some(shape),
            LatentDistribution::LogLogistic { shape, .. } => Some(shape),
            LatentDistribution::Never => None,
        }
    }

    pub fn cumulative_hazard(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.eval_log(x.ln()).0
    }

    pub fn survival(&self, x: f64) -> f64 {
        (-self.cumulative_hazard(x)).exp()
    }

    pub fn hazard(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.eval_log(x.ln()).1
    }

    /// `(Λ(x), λ(x))` evaluated from `ln x`.
    #[inline]
    pub fn eval_log(&self, ln_x: f64) -> (f64, f64) {
        match *self {
            LatentDistribution::Weibull { shape, rate } => {
                if rate == 0.0 {
                    return (0.0, 0.0);
                }
                let pow = (shape * ln_x).exp();
                (rate * pow, shape * rate * pow * (-ln_x).exp())
            }
            LatentDistribution::LogLogistic { scale, shape } => {
                let u = (shape * (ln_x - scale.ln())).exp();
                (u.ln_1p(), shape * u / (1.0 + u) * (-ln_x).exp())
            }
            LatentDistribution::Never => (0.0, 0.0),
        }
    }

    /// Inverse-CDF draw: returns the time `y` with `S(y) = u`, `u ∈ (0, 1)`.
    pub fn quantile_from_survival(&self, u: f64) -> f64 {
        match *self {
            LatentDistribution::Weibull { shape, rate } => {
                if rate == 0.0 {
                    f64::INFINITY
                } else {
                    (-u.ln() / rate).powf(1.0 / shape)
                }
            }
            LatentDistribution::LogLogistic { scale, shape } => scale * (1.0 / u - 1.0).powf(1.0 / shape),
            LatentDistribution::Never => f64::INFINITY,
        }
    }
}

/// Probabilities of the five mutually exclusive outcomes E1..E5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventProbabilities(pub [f64; 5]);

impl EventProbabilities {
    pub const EVENT_FREE: EventProbabilities = EventProbabilities([0.0, 0.0, 0.0, 0.0, 1.0]);

    /// Cumulative incidence of `cause` over the whole follow-up.
    pub fn cumulative_incidence(&self, cause: Cause) -> f64 {
        let k = cause.index();
        self.0[k] + self.0[k + 2]
    }

    /// Cumulative incidence of `cause` within the first half of follow-up.
    pub fn first_half_incidence(&self, cause: Cause) -> f64 {
        self.0[cause.index()]
    }

    pub fn event_free(&self) -> f64 {
        self.0[4]
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn weighted(&self, weights: &[f64; 5]) -> f64 {
        self.0.iter().zip(weights).map(|(p, o)| p * o).sum()
    }
}

/// Gauss–Legendre rule mapped to `[0, 1]` with logs cached per node.
#[derive(Debug, Clone)]
pub struct Quadrature {
    t: Vec<f64>,
    ln_t: Vec<f64>,
    ln_1p_t: Vec<f64>,
    inv_t: Vec<f64>,
    inv_1p_t: Vec<f64>,
    w: Vec<f64>,
}

impl Quadrature {
    pub fn new(nodes: usize) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(nodes.max(1)).expect("non-zero"));
        let mut q = Quadrature { t: vec![], ln_t: vec![], ln_1p_t: vec![], inv_t: vec![], inv_1p_t: vec![], w: vec![] };
        for &(node, weight) in rule.as_node_weight_pairs() {
            let t = 0.5 * (node + 1.0);
            q.t.push(t);
            q.ln_t.push(t.ln());
            q.ln_1p_t.push(t.ln_1p());
            q.inv_t.push(1.0 / t);
            q.inv_1p_t.push(1.0 / (1.0 + t));
            q.w.push(0.5 * weight);
        }
        q
    }

    /// Shared default 64-node rule.
    pub fn standard() -> &'static Quadrature {
        static RULE: OnceLock<Quadrature> = OnceLock::new();
        RULE.get_or_init(|| Quadrature::new(DEFAULT_NODES))
    }

    pub fn nodes(&self) -> usize {
        self.t.len()
    }

    /// Five-outcome probabilities for a pair of competing latent times.
    pub fn event_probabilities(&self, causes: &[LatentDistribution; 2], nu: f64) -> EventProbabilities {
        let exponents: Vec<f64> = causes.iter().filter_map(|c| c.small_time_exponent()).collect();
        if exponents.is_empty() {
            return EventProbabilities::EVENT_FREE;
        }
        let min_exp = exponents.iter().cloned().fold(f64::INFINITY, f64::min);
        let p = (4.0 / min_exp).ceil().clamp(1.0, MAX_SUBSTITUTION_POWER);

        if let [LatentDistribution::Weibull { shape: a1, rate: r1 }, LatentDistribution::Weibull { shape: a2, rate: r2 }] = *causes {
            return self.weibull_pair([a1, a2], [r1, r2], p, nu);
        }

        let half = 0.5 * nu;
        let ln_half = half.ln();
        let mut out = [0.0; 5];

        // First half: x = half·t^p, dx = p·x/t dt.
        for i in 0..self.t.len() {
            let ln_x = ln_half + p * self.ln_t[i];
            let (a1, h1) = causes[0].eval_log(ln_x);
            let (a2, h2) = causes[1].eval_log(ln_x);
            let jac = p * (ln_x - self.ln_t[i]).exp();
            let common = self.w[i] * jac * (-(a1 + a2)).exp();
            out[0] += common * h1;
            out[1] += common * h2;
        }
        // Second half: x = half·(1 + t).
        for i in 0..self.t.len() {
            let ln_x = ln_half + self.ln_1p_t[i];
            let (a1, h1) = causes[0].eval_log(ln_x);
            let (a2, h2) = causes[1].eval_log(ln_x);
            let common = self.w[i] * half * (-(a1 + a2)).exp();
            out[2] += common * h1;
            out[3] += common * h2;
        }
        out[4] = (-(causes[0].cumulative_hazard(nu) + causes[1].cumulative_hazard(nu))).exp();
        EventProbabilities(out)
    }
}

impl Quadrature {
    /// Same integrals as [`Quadrature::event_probabilities`] for two Weibull
    /// causes, with the `1/x` factors cancelled analytically.
    fn weibull_pair(&self, shape: [f64; 2], rate: [f64; 2], p: f64, nu: f64) -> EventProbabilities {
        let half = 0.5 * nu;
        let ln_half = half.ln();
        let c = [shape[0] * rate[0], shape[1] * rate[1]];
        let mut out = [0.0; 5];
        for i in 0..self.t.len() {
            let ln_x = ln_half + p * self.ln_t[i];
            let p1 = (shape[0] * ln_x).exp();
            let p2 = (shape[1] * ln_x).exp();
            let common = self.w[i] * p * self.inv_t[i] * (-(rate[0] * p1 + rate[1] * p2)).exp();
            out[0] += common * c[0] * p1;
            out[1] += common * c[1] * p2;
        }
        for i in 0..self.t.len() {
            let ln_x = ln_half + self.ln_1p_t[i];
            let p1 = (shape[0] * ln_x).exp();
            let p2 = (shape[1] * ln_x).exp();
            let common = self.w[i] * self.inv_1p_t[i] * (-(rate[0] * p1 + rate[1] * p2)).exp();
            out[2] += common * c[0] * p1;
            out[3] += common * c[1] * p2;
        }
        out[4] = (-(rate[0] * nu.powf(shape[0]) + rate[1] * nu.powf(shape[1]))).exp();
        EventProbabilities(out)
    }
}

/// Five-outcome probabilities using the standard rule.
pub fn event_probabilities(causes: &[LatentDistribution; 2], nu: f64) -> EventProbabilities {
    Quadrature::standard().event_probabilities(causes, nu)
}

/// Outcome probabilities a model that ignores the competition between the
/// causes would report: each cause's marginal distribution function split by
/// half, event-free as the product of survivals, renormalized to sum to one.
pub fn naive_event_probabilities(causes: &[LatentDistribution; 2], nu: f64) -> EventProbabilities {
    let half = 0.5 * nu;
    let s_half = [causes[0].survival(half), causes[1].survival(half)];
    let s_end = [causes[0].survival(nu), causes[1].survival(nu)];
    let raw = [
        1.0 - s_half[0],
        1.0 - s_half[1],
        s_half[0] - s_end[0],
        s_half[1] - s_end[1],
        s_end[0] * s_end[1],
    ];
    let total: f64 = raw.iter().sum();
    EventProbabilities(raw.map(|p| p / total))
}
