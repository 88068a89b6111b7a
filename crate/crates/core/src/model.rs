//! Cause-specific Weibull hazard model for two competing first events.
//!
//! Cause 1 is disease progression, cause 2 is normal tissue complication.
//! For cause `k` the hazard of a patient in subgroup `w` treated at dose `d`
//! is
//!
//! ```text
//! λ_k(x | w, d) = α_k β_k x^(α_k − 1) exp(h_k(w, d))
//! h_k(w, d)     = γ_k1·d·w + (γ_k2·I(d = 1) + γ_k3·I(d = 2))·(1 − w)
//! ```
//!
//! with the low dose as reference level. Resistant patients (`w = 0`) are
//! only ever treated at the standard or high dose, sensitive patients
//! (`w = 1`) at the low or standard dose, which is why the model only needs
//! three coefficients per cause. [`Arm`] encodes the four legal
//! (subgroup, dose) pairs.
//!
//! Priors: `α_k, β_k ~ Gamma(a, b)` in the shape/**scale** parameterization
//! (mean `a·b`, variance `a·b²`) and `γ_kl ~ Normal(0, c²)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;
use std::fmt;

use crate::error::{Error, Result};

/// Radiation-susceptibility subgroup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subgroup {
    /// Radiation resistant, `w = 0`.
    Resistant,
    /// Radiation sensitive, `w = 1`.
    Sensitive,
}

impl Subgroup {
    pub const ALL: [Subgroup; 2] = [Subgroup::Resistant, Subgroup::Sensitive];

    /// Numeric indicator `w`.
    pub fn indicator(self) -> u8 {
        match self {
            Subgroup::Resistant => 0,
            Subgroup::Sensitive => 1,
        }
    }

    pub fn from_indicator(w: u8) -> Result<Self> {
        match w {
            0 => Ok(Subgroup::Resistant),
            1 => Ok(Subgroup::Sensitive),
            _ => Err(Error::InvalidInput(format!("subgroup indicator must be 0 or 1, got {w}"))),
        }
    }

    pub fn index(self) -> usize {
        self.indicator() as usize
    }

    /// The two candidate doses, standard dose first.
    pub fn doses(self) -> [Dose; 2] {
        match self {
            Subgroup::Resistant => [Dose::Standard, Dose::High],
            Subgroup::Sensitive => [Dose::Standard, Dose::Low],
        }
    }

    /// The non-standard dose this subgroup can be recommended
    /// (high for resistant, low for sensitive).
    pub fn alternative(self) -> Dose {
        self.doses()[1]
    }

    pub fn arms(self) -> [Arm; 2] {
        let [a, b] = self.doses();
        [Arm { subgroup: self, dose: a }, Arm { subgroup: self, dose: b }]
    }

    pub fn label(self) -> &'static str {
        match self {
            Subgroup::Resistant => "RE",
            Subgroup::Sensitive => "SE",
        }
    }
}

impl fmt::Display for Subgroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Radiotherapy dose level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dose {
    Low,
    Standard,
    High,
}

impl Dose {
    pub fn level(self) -> u8 {
        match self {
            Dose::Low => 0,
            Dose::Standard => 1,
            Dose::High => 2,
        }
    }

    pub fn from_level(d: u8) -> Result<Self> {
        match d {
            0 => Ok(Dose::Low),
            1 => Ok(Dose::Standard),
            2 => Ok(Dose::High),
            _ => Err(Error::InvalidInput(format!("dose level must be 0, 1 or 2, got {d}"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Dose::Low => "low",
            Dose::Standard => "standard",
            Dose::High => "high",
        }
    }
}

impl fmt::Display for Dose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// First-event cause.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    /// Disease progression, `k = 1`.
    Progression,
    /// Normal tissue complication, `k = 2`.
    Complication,
}

impl Cause {
    pub const ALL: [Cause; 2] = [Cause::Progression, Cause::Complication];

    pub fn index(self) -> usize {
        match self {
            Cause::Progression => 0,
            Cause::Complication => 1,
        }
    }

    pub fn other(self) -> Cause {
        match self {
            Cause::Progression => Cause::Complication,
            Cause::Complication => Cause::Progression,
        }
    }
}

/// A legal (subgroup, dose) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Arm {
    subgroup: Subgroup,
    dose: Dose,
}

impl Arm {
    pub const RE_STANDARD: Arm = Arm { subgroup: Subgroup::Resistant, dose: Dose::Standard };
    pub const RE_HIGH: Arm = Arm { subgroup: Subgroup::Resistant, dose: Dose::High };
    pub const SE_LOW: Arm = Arm { subgroup: Subgroup::Sensitive, dose: Dose::Low };
    pub const SE_STANDARD: Arm = Arm { subgroup: Subgroup::Sensitive, dose: Dose::Standard };

    /// All four arms in table order: RE standard, RE high, SE low, SE standard.
    pub const ALL: [Arm; 4] = [Arm::RE_STANDARD, Arm::RE_HIGH, Arm::SE_LOW, Arm::SE_STANDARD];

    /// Rejects the two pairs outside the subgroup-restricted dose sets.
    pub fn new(subgroup: Subgroup, dose: Dose) -> Result<Self> {
        match (subgroup, dose) {
            (Subgroup::Resistant, Dose::Low) | (Subgroup::Sensitive, Dose::High) => {
                Err(Error::InvalidArm { subgroup, dose })
            }
            _ => Ok(Arm { subgroup, dose }),
        }
    }

    pub fn subgroup(self) -> Subgroup {
        self.subgroup
    }

    pub fn dose(self) -> Dose {
        self.dose
    }

    /// Position in [`Arm::ALL`].
    pub fn index(self) -> usize {
        match (self.subgroup, self.dose) {
            (Subgroup::Resistant, Dose::Standard) => 0,
            (Subgroup::Resistant, _) => 1,
            (Subgroup::Sensitive, Dose::Low) => 2,
            (Subgroup::Sensitive, _) => 3,
        }
    }

    /// Short identifier used in files, e.g. `re_standard`.
    pub fn key(self) -> &'static str {
        ["re_standard", "re_high", "se_low", "se_standard"][self.index()]
    }

    pub fn from_key(key: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.key() == key)
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.subgroup, self.dose)
    }
}

/// One subject's observed data as seen by the design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub arm: Arm,
    /// Observation time `x = min(T, C)`.
    pub time: f64,
    /// First event observed at `time`, `None` when censored.
    pub event: Option<Cause>,
    /// Calendar time of enrollment.
    pub enroll_time: f64,
}

impl PatientRecord {
    pub fn new(arm: Arm, time: f64, event: Option<Cause>) -> Self {
        PatientRecord { arm, time, event, enroll_time: 0.0 }
    }

    /// Builds a record from the raw indicator encoding used in data files.
    pub fn from_indicators(w: u8, d: u8, x: f64, delta1: u8, delta2: u8, enroll_time: f64) -> Result<Self> {
        let arm = Arm::new(Subgroup::from_indicator(w)?, Dose::from_level(d)?)?;
        if !(x > 0.0) || !x.is_finite() {
            return Err(Error::NonPositiveTime(x));
        }
        let event = match (delta1, delta2) {
            (0, 0) => None,
            (1, 0) => Some(Cause::Progression),
            (0, 1) => Some(Cause::Complication),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "event indicators must be 0/1 with at most one set, got delta1={delta1} delta2={delta2}"
                )))
            }
        };
        Ok(PatientRecord { arm, time: x, event, enroll_time })
    }

    pub fn delta(&self, cause: Cause) -> u8 {
        u8::from(self.event == Some(cause))
    }
}

/// Θ: Weibull shapes and rates plus log hazard-ratio coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// α_k, indexed by cause.
    pub shape: [f64; 2],
    /// β_k, indexed by cause.
    pub rate: [f64; 2],
    /// γ_kl: `log_hr[k][l-1]`.
    pub log_hr: [[f64; 3]; 2],
}

/// Names of the ten scalar coordinates, in sampler update order.
pub const COORDINATE_NAMES: [&str; 10] = [
    "alpha1", "alpha2", "beta1", "beta2", "gamma11", "gamma12", "gamma13", "gamma21", "gamma22", "gamma23",
];

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams { shape: [1.0; 2], rate: [1.0; 2], log_hr: [[0.0; 3]; 2] }
    }
}

impl ModelParams {
    pub fn in_support(&self) -> bool {
        self.shape.iter().chain(self.rate.iter()).all(|v| *v > 0.0 && v.is_finite())
            && self.log_hr.iter().flatten().all(|g| g.is_finite())
    }

    pub fn coordinates(&self) -> [f64; 10] {
        let g = &self.log_hr;
        [
            self.shape[0], self.shape[1], self.rate[0], self.rate[1],
            g[0][0], g[0][1], g[0][2], g[1][0], g[1][1], g[1][2],
        ]
    }

    pub fn from_coordinates(c: &[f64; 10]) -> Self {
        ModelParams {
            shape: [c[0], c[1]],
            rate: [c[2], c[3]],
            log_hr: [[c[4], c[5], c[6]], [c[7], c[8], c[9]]],
        }
    }

    /// Effective Weibull rate `β_k·exp(h_k)` for one arm.
    pub fn arm_rate(&self, cause: Cause, arm: Arm) -> f64 {
        self.rate[cause.index()] * log_hazard_ratio(cause, arm, self).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Gamma shape.
    pub a: f64,
    /// Gamma scale.
    pub b: f64,
    /// Normal standard deviation for the log hazard ratios.
    pub c: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig { a: 1.0, b: 1.0, c: 10.0 }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.a, self.b, self.c].iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("prior hyperparameters must be positive: {self:?}")))
        }
    }

    /// Gamma(a, scale b) log density; `-inf` outside the support.
    pub fn ln_gamma_density(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * x.ln() - x / self.b - ln_gamma(self.a) - self.a * self.b.ln()
    }

    pub fn ln_normal_density(&self, g: f64) -> f64 {
        -0.5 * (g / self.c).powi(2) - (self.c * (2.0 * PI).sqrt()).ln()
    }
}

/// `h_k(w, d)` for a legal arm.
pub fn log_hazard_ratio(cause: Cause, arm: Arm, theta: &ModelParams) -> f64 {
    let g = &theta.log_hr[cause.index()];
    match (arm.subgroup, arm.dose) {
        (Subgroup::Sensitive, Dose::Low) => 0.0,
        (Subgroup::Sensitive, Dose::Standard) => g[0],
        (Subgroup::Resistant, Dose::Standard) => g[1],
        (Subgroup::Resistant, Dose::High) => g[2],
        _ => unreachable!("Arm construction rejects illegal pairs"),
    }
}

/// Cause-specific hazard `λ_k(x | w, d)`.
pub fn hazard(cause: Cause, x: f64, arm: Arm, theta: &ModelParams) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::NonPositiveTime(x));
    }
    let k = cause.index();
    let alpha = theta.shape[k];
    Ok(alpha * theta.arm_rate(cause, arm) * x.powf(alpha - 1.0))
}

/// `S_k(x | w, d) = exp(-β_k x^α_k e^h_k)`; equals 1 for `x <= 0`.
pub fn survival(cause: Cause, x: f64, arm: Arm, theta: &ModelParams) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    (-theta.arm_rate(cause, arm) * x.powf(theta.shape[cause.index()])).exp()
}

/// Competing-risk log likelihood. Records with a zero observation time are
/// skipped (a patient enrolled this instant carries no information).
pub fn log_likelihood(data: &[PatientRecord], theta: &ModelParams) -> f64 {
    data.iter()
        .filter(|r| r.time > 0.0)
        .map(|r| {
            Cause::ALL
                .iter()
                .map(|&k| {
                    let alpha = theta.shape[k.index()];
                    let rate = theta.arm_rate(k, r.arm);
                    let log_s = -rate * r.time.powf(alpha);
                    if r.event == Some(k) {
                        log_s + alpha.ln() + rate.ln() + (alpha - 1.0) * r.time.ln()
                    } else {
                        log_s
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

pub fn log_prior(theta: &ModelParams, prior: &PriorConfig) -> f64 {
    let positive: f64 = theta.shape.iter().chain(theta.rate.iter()).map(|v| prior.ln_gamma_density(*v)).sum();
    if positive == f64::NEG_INFINITY {
        return positive;
    }
    positive + theta.log_hr.iter().flatten().map(|g| prior.ln_normal_density(*g)).sum::<f64>()
}

/// Unnormalized log posterior.
pub fn log_posterior(data: &[PatientRecord], theta: &ModelParams, prior: &PriorConfig) -> f64 {
    let lp = log_prior(theta, prior);
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + log_likelihood(data, theta)
}

/// Per-arm sufficient statistics for the likelihood.
///
/// The cause-`k` log likelihood splits over arms `g` as
/// `n_gk (ln α + ln β + h_gk) + (α − 1)·Σ_{events} ln x − β e^{h_gk} Σ_i x_i^α`,
/// so only the last sum has to be recomputed when a shape changes.
#[derive(Debug, Clone, Default)]
pub struct ArmStatistics {
    ln_times: [Vec<f64>; 4],
    events: [[f64; 2]; 4],
    sum_ln_event_times: [[f64; 2]; 4],
}

impl ArmStatistics {
    pub fn new(data: &[PatientRecord]) -> Self {
        let mut s = ArmStatistics::default();
        for r in data.iter().filter(|r| r.time > 0.0) {
            let g = r.arm.index();
            let lx = r.time.ln();
            s.ln_times[g].push(lx);
            if let Some(k) = r.event {
                s.events[g][k.index()] += 1.0;
                s.sum_ln_event_times[g][k.index()] += lx;
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.ln_times.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `Σ_i x_i^shape` per arm.
    pub fn power_sums(&self, shape: f64) -> [f64; 4] {
        let mut out = [0.0; 4];
        for (o, lx) in out.iter_mut().zip(&self.ln_times) {
            *o = lx.iter().map(|l| (shape * l).exp()).sum();
        }
        out
    }

    /// Cause-`k` log likelihood given the precomputed power sums at `shape`.
    pub fn cause_log_likelihood(&self, cause: Cause, shape: f64, rate: f64, log_hr: &[f64; 3], power_sums: &[f64; 4]) -> f64 {
        let k = cause.index();
        let (ln_shape, ln_rate) = (shape.ln(), rate.ln());
        Arm::ALL
            .iter()
            .map(|arm| {
                let g = arm.index();
                let h = arm_log_hr(*arm, log_hr);
                let n = self.events[g][k];
                let mut ll = -rate * h.exp() * power_sums[g];
                if n > 0.0 {
                    ll += n * (ln_shape + ln_rate + h) + (shape - 1.0) * self.sum_ln_event_times[g][k];
                }
                ll
            })
            .sum()
    }

    pub fn log_likelihood(&self, theta: &ModelParams) -> f64 {
        Cause::ALL
            .iter()
            .map(|&c| {
                let k = c.index();
                let ps = self.power_sums(theta.shape[k]);
                self.cause_log_likelihood(c, theta.shape[k], theta.rate[k], &theta.log_hr[k], &ps)
            })
            .sum()
    }
}

fn arm_log_hr(arm: Arm, g: &[f64; 3]) -> f64 {
    match arm.index() {
        0 => g[1],
        1 => g[2],
        2 => 0.0,
        _ => g[0],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp_theta(rate: f64, h: f64) -> ModelParams {
        ModelParams { shape: [1.0, 1.0], rate: [rate, rate], log_hr: [[h; 3], [h; 3]] }
    }

    #[test]
    fn illegal_arms_rejected() {
        assert!(Arm::new(Subgroup::Resistant, Dose::Low).is_err());
        assert!(Arm::new(Subgroup::Sensitive, Dose::High).is_err());
        for arm in Arm::ALL {
            assert_eq!(Arm::new(arm.subgroup(), arm.dose()).unwrap(), arm);
            assert_eq!(Arm::from_key(arm.key()), Some(arm));
        }
    }

    #[test]
    fn log_hazard_ratio_examples() {
        let mut theta = ModelParams::default();
        theta.log_hr = [[0.3, 0.7, 0.9], [1.1, 1.3, -0.5]];
        assert_eq!(log_hazard_ratio(Cause::Progression, Arm::SE_LOW, &theta), 0.0);
        assert_eq!(log_hazard_ratio(Cause::Progression, Arm::SE_STANDARD, &theta), 0.3);
        assert_eq!(log_hazard_ratio(Cause::Complication, Arm::RE_HIGH, &theta), -0.5);
        assert_eq!(log_hazard_ratio(Cause::Complication, Arm::RE_STANDARD, &theta), 1.3);
    }

    #[test]
    fn hazard_examples() {
        let t = exp_theta(0.2, 0.0);
        assert_relative_eq!(hazard(Cause::Progression, 5.0, Arm::SE_LOW, &t).unwrap(), 0.2);
        let t2 = ModelParams { shape: [2.0, 2.0], rate: [1.0, 1.0], ..Default::default() };
        assert_relative_eq!(hazard(Cause::Progression, 0.5, Arm::SE_LOW, &t2).unwrap(), 1.0);
        let t3 = exp_theta(0.2, 2f64.ln());
        assert_relative_eq!(hazard(Cause::Progression, 5.0, Arm::RE_HIGH, &t3).unwrap(), 0.4, epsilon = 1e-15);
        assert!(matches!(hazard(Cause::Progression, 0.0, Arm::SE_LOW, &t), Err(Error::NonPositiveTime(_))));
        assert!(hazard(Cause::Progression, -1.0, Arm::SE_LOW, &t).is_err());
    }

    #[test]
    fn survival_examples() {
        let t = exp_theta(0.2, 0.0);
        assert_eq!(survival(Cause::Progression, 0.0, Arm::SE_LOW, &t), 1.0);
        assert_relative_eq!(survival(Cause::Progression, 5.0, Arm::SE_LOW, &t), (-1f64).exp(), epsilon = 1e-15);
        let t2 = ModelParams { shape: [2.0, 2.0], rate: [0.25, 0.25], ..Default::default() };
        assert_relative_eq!(survival(Cause::Complication, 2.0, Arm::SE_LOW, &t2), (-1f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn likelihood_examples() {
        let t = exp_theta(0.1, 0.0);
        assert_eq!(log_likelihood(&[], &t), 0.0);
        let censored = PatientRecord::new(Arm::SE_LOW, 5.0, None);
        assert_relative_eq!(log_likelihood(&[censored], &t), -1.0, epsilon = 1e-14);
        let event = PatientRecord::new(Arm::SE_LOW, 5.0, Some(Cause::Progression));
        assert_relative_eq!(log_likelihood(&[event], &t), 0.1f64.ln() - 1.0, epsilon = 1e-14);
        assert_relative_eq!(log_likelihood(&[event], &t), -3.302585092994046, epsilon = 1e-12);
    }

    #[test]
    fn zero_time_records_are_skipped() {
        let t = exp_theta(0.1, 0.0);
        let mut r = PatientRecord::new(Arm::SE_LOW, 0.0, None);
        assert_eq!(log_likelihood(&[r], &t), 0.0);
        r.time = 1e-300;
        assert!(log_likelihood(&[r], &t).is_finite());
    }

    #[test]
    fn prior_examples() {
        let prior = PriorConfig::default();
        let theta = ModelParams::default();
        let gamma_part = 6.0 * (1.0 / (10.0 * (2.0 * PI).sqrt())).ln();
        assert_relative_eq!(log_prior(&theta, &prior), -4.0 + gamma_part, epsilon = 1e-12);
        let mut bad = theta;
        bad.shape[0] = -0.1;
        assert_eq!(log_prior(&bad, &prior), f64::NEG_INFINITY);
        assert_eq!(log_posterior(&[PatientRecord::new(Arm::SE_LOW, 1.0, None)], &bad, &prior), f64::NEG_INFINITY);
    }

    #[test]
    fn gamma_prior_uses_scale_not_rate() {
        // Gamma(shape 2, scale 3): mean 6, density at x is x e^{-x/3} / 9.
        let prior = PriorConfig { a: 2.0, b: 3.0, c: 1.0 };
        let x: f64 = 4.0;
        assert_relative_eq!(prior.ln_gamma_density(x), (x * (-x / 3.0).exp() / 9.0).ln(), epsilon = 1e-12);
    }

    #[test]
    fn posterior_matches_independent_scalar_evaluation() {
        let prior = PriorConfig::default();
        let theta = exp_theta(0.1, 0.0);
        let r = PatientRecord::new(Arm::SE_LOW, 5.0, Some(Cause::Progression));
        // λ1 = 0.1, S1 = S2 = exp(-0.5); Exp(1)-type Gamma(1,1) prior density at 1 and 0.1.
        let ll = 0.1f64.ln() - 0.5 - 0.5;
        let lp = 2.0 * (-1.0) + 2.0 * (-0.1) + 6.0 * (-(10.0 * (2.0 * PI).sqrt()).ln());
        assert_relative_eq!(log_posterior(&[r], &theta, &prior), ll + lp, epsilon = 1e-12);
        assert_relative_eq!(log_posterior(&[], &theta, &prior), log_prior(&theta, &prior));
    }

    #[test]
    fn indicator_parsing() {
        let r = PatientRecord::from_indicators(0, 2, 0.4, 0, 1, 0.25).unwrap();
        assert_eq!(r.arm, Arm::RE_HIGH);
        assert_eq!(r.event, Some(Cause::Complication));
        assert_eq!(r.delta(Cause::Complication), 1);
        assert!(PatientRecord::from_indicators(0, 0, 0.4, 0, 0, 0.0).is_err());
        assert!(PatientRecord::from_indicators(1, 1, 0.4, 1, 1, 0.0).is_err());
        assert!(PatientRecord::from_indicators(1, 1, 0.0, 0, 0, 0.0).is_err());
    }
}
