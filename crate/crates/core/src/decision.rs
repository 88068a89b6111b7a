//! Design decisions: utilities, admissible sets, randomization and final
//! dose selection.
//!
//! Posterior quantities are Monte-Carlo averages over the draws. For each
//! draw and candidate dose the five outcome probabilities are computed once
//! ([`SubgroupPosterior`]); admissibility, mean utilities and the final
//! comparison all read from that cache.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::incidence::{self, EventProbabilities, LatentDistribution};
use crate::model::{Arm, Cause, Dose, ModelParams, PriorConfig, Subgroup};
use crate::sampler::{effective_sample_size, mean_sd, McmcConfig, PosteriorDraws};

/// Desirability weights O1..O5 for outcomes E1..E5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights(pub [f64; 5]);

impl UtilityWeights {
    /// Default weights: early progression 0, early complication 5, late
    /// progression 10, late complication 20, event-free 100.
    pub const DEFAULT: UtilityWeights = UtilityWeights([0.0, 5.0, 10.0, 20.0, 100.0]);

    /// The nine weight settings of the sensitivity study; row 3 equals
    /// [`UtilityWeights::DEFAULT`].
    pub const SENSITIVITY: [UtilityWeights; 9] = [
        UtilityWeights([0.0, 5.0, 5.0, 10.0, 100.0]),
        UtilityWeights([0.0, 5.0, 20.0, 30.0, 100.0]),
        UtilityWeights([0.0, 5.0, 10.0, 20.0, 100.0]),
        UtilityWeights([0.0, 0.0, 5.0, 5.0, 100.0]),
        UtilityWeights([0.0, 0.0, 20.0, 20.0, 100.0]),
        UtilityWeights([0.0, 0.0, 10.0, 10.0, 100.0]),
        UtilityWeights([5.0, 0.0, 10.0, 5.0, 100.0]),
        UtilityWeights([5.0, 0.0, 30.0, 20.0, 100.0]),
        UtilityWeights([5.0, 0.0, 20.0, 10.0, 100.0]),
    ];

    pub fn validate(&self) -> Result<()> {
        let o = &self.0;
        if o.iter().any(|v| !(0.0..=100.0).contains(v)) {
            return Err(Error::InvalidConfig(format!("weights must lie in [0, 100]: {o:?}")));
        }
        if o[..4].iter().any(|v| *v > o[4]) {
            return Err(Error::InvalidConfig("event-free weight must be the largest".into()));
        }
        Ok(())
    }
}

impl Default for UtilityWeights {
    fn default() -> Self {
        UtilityWeights::DEFAULT
    }
}

/// All design constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Follow-up length.
    pub nu: f64,
    /// Number of equally randomized cohorts.
    pub n1: usize,
    pub cohort_size: usize,
    pub n_cohorts_total: usize,
    /// Highest acceptable cumulative incidence per cause.
    pub tau: [f64; 2],
    /// Admissibility posterior cut-offs per cause.
    pub q: [f64; 2],
    /// Final-selection cut-off for resistant patients.
    pub mu0: f64,
    /// Final-selection cut-off for sensitive patients.
    pub mu1: f64,
    pub weights: UtilityWeights,
    pub prior: PriorConfig,
    pub mcmc: McmcConfig,
    /// Calendar time between cohort arrivals.
    pub accrual_interval: f64,
    /// Probability an arriving patient is radiation resistant.
    pub p_resistant: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            nu: 1.0,
            n1: 4,
            cohort_size: 5,
            n_cohorts_total: 20,
            tau: [0.4, 0.4],
            q: [0.95, 0.95],
            mu0: 0.5,
            mu1: 0.5,
            weights: UtilityWeights::DEFAULT,
            prior: PriorConfig::default(),
            mcmc: McmcConfig::default(),
            accrual_interval: 0.25,
            p_resistant: 0.5,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidConfig("nu must be positive".into()));
        }
        if self.n1 > self.n_cohorts_total || self.cohort_size == 0 || self.n_cohorts_total == 0 {
            return Err(Error::InvalidConfig(format!(
                "need 0 < cohort_size, n1 <= n_cohorts_total (n1 = {}, total = {})",
                self.n1, self.n_cohorts_total
            )));
        }
        if !self.tau.iter().chain(self.q.iter()).all(|v| unit(*v)) || !unit(self.mu0) || !unit(self.mu1) {
            return Err(Error::InvalidConfig("tau, q, mu0 and mu1 must lie in (0, 1)".into()));
        }
        if !(self.accrual_interval >= 0.0 && self.accrual_interval.is_finite()) {
            return Err(Error::InvalidConfig("accrual_interval must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p_resistant) {
            return Err(Error::InvalidConfig("p_resistant must lie in [0, 1]".into()));
        }
        self.weights.validate()?;
        self.prior.validate()?;
        self.mcmc.validate()
    }

    pub fn max_sample_size(&self) -> usize {
        self.cohort_size * self.n_cohorts_total
    }

    /// Final-selection cut-off for a subgroup.
    pub fn mu(&self, subgroup: Subgroup) -> f64 {
        match subgroup {
            Subgroup::Resistant => self.mu0,
            Subgroup::Sensitive => self.mu1,
        }
    }
}

/// How outcome probabilities are assembled from model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityModel {
    /// Cause-specific hazards competing for the first event.
    CompetingRisk,
    /// Each cause analysed on its own, ignoring the competition
    /// (see [`incidence::naive_event_probabilities`]).
    Separate,
}

/// The two latent-time distributions implied by `theta` for an arm.
pub fn arm_distributions(arm: Arm, theta: &ModelParams) -> [LatentDistribution; 2] {
    Cause::ALL.map(|c| LatentDistribution::Weibull { shape: theta.shape[c.index()], rate: theta.arm_rate(c, arm) })
}

pub fn event_probabilities(arm: Arm, theta: &ModelParams, nu: f64) -> EventProbabilities {
    incidence::event_probabilities(&arm_distributions(arm, theta), nu)
}

fn model_event_probabilities(model: ProbabilityModel, arm: Arm, theta: &ModelParams, nu: f64) -> EventProbabilities {
    let dists = arm_distributions(arm, theta);
    match model {
        ProbabilityModel::CompetingRisk => incidence::event_probabilities(&dists, nu),
        ProbabilityModel::Separate => incidence::naive_event_probabilities(&dists, nu),
    }
}

/// `U(d | w, θ) = Σ_s P(E_s | θ)·O_s`.
pub fn true_utility(arm: Arm, theta: &ModelParams, weights: &UtilityWeights, nu: f64) -> f64 {
    event_probabilities(arm, theta, nu).weighted(&weights.0)
}

pub fn cumulative_incidence(cause: Cause, arm: Arm, theta: &ModelParams, nu: f64) -> f64 {
    event_probabilities(arm, theta, nu).cumulative_incidence(cause)
}

/// Posterior mean of the true utility over the draws.
pub fn posterior_mean_utility(arm: Arm, draws: &PosteriorDraws, weights: &UtilityWeights, nu: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    let total: f64 = draws.draws.iter().map(|t| true_utility(arm, t, weights, nu)).sum();
    Ok(total / draws.len() as f64)
}

/// Per-draw outcome probabilities for a subgroup's two candidate doses.
#[derive(Debug, Clone)]
pub struct SubgroupPosterior {
    subgroup: Subgroup,
    probs: [Vec<EventProbabilities>; 2],
}

/// Posterior mean utility of one dose with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityEstimate {
    pub dose: Dose,
    pub mean: f64,
    pub mcse: f64,
}

impl SubgroupPosterior {
    pub fn new(subgroup: Subgroup, draws: &PosteriorDraws, nu: f64, model: ProbabilityModel) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::EmptyDraws);
        }
        let probs = subgroup
            .arms()
            .map(|arm| draws.draws.iter().map(|t| model_event_probabilities(model, arm, t, nu)).collect());
        Ok(SubgroupPosterior { subgroup, probs })
    }

    pub fn subgroup(&self) -> Subgroup {
        self.subgroup
    }

    fn slot(&self, dose: Dose) -> usize {
        self.subgroup.doses().iter().position(|d| *d == dose).expect("dose belongs to subgroup")
    }

    pub fn event_probabilities(&self, dose: Dose) -> &[EventProbabilities] {
        &self.probs[self.slot(dose)]
    }

    /// `Pr(P_k(d) > τ | data)` as the fraction of exceeding draws.
    pub fn exceedance(&self, dose: Dose, cause: Cause, tau: f64) -> f64 {
        let p = self.event_probabilities(dose);
        p.iter().filter(|e| e.cumulative_incidence(cause) > tau).count() as f64 / p.len() as f64
    }

    /// Doses whose exceedance fraction stays below `q_k` for both causes,
    /// standard dose first.
    pub fn admissible(&self, cfg: &DesignConfig) -> Vec<Dose> {
        self.subgroup
            .doses()
            .into_iter()
            .filter(|d| Cause::ALL.iter().all(|c| self.exceedance(*d, *c, cfg.tau[c.index()]) < cfg.q[c.index()]))
            .collect()
    }

    fn utilities(&self, dose: Dose, weights: &UtilityWeights) -> Vec<f64> {
        self.event_probabilities(dose).iter().map(|e| e.weighted(&weights.0)).collect()
    }

    pub fn mean_utility(&self, dose: Dose, weights: &UtilityWeights) -> UtilityEstimate {
        let u = self.utilities(dose, weights);
        let (mean, sd) = mean_sd(&u);
        UtilityEstimate { dose, mean, mcse: sd / effective_sample_size(&u).sqrt() }
    }

    /// Assignment probabilities over the admissible doses; proportional to
    /// posterior mean utility, or uniform when `equal` is set.
    pub fn randomization(&self, admissible: &[Dose], weights: &UtilityWeights, equal: bool) -> Result<Vec<(Dose, f64)>> {
        match admissible {
            [] => Err(Error::EmptyAdmissibleSet),
            [only] => Ok(vec![(*only, 1.0)]),
            _ => {
                let scores: Vec<f64> = if equal {
                    vec![1.0; admissible.len()]
                } else {
                    admissible.iter().map(|d| self.mean_utility(*d, weights).mean).collect()
                };
                Ok(normalize(admissible, &scores))
            }
        }
    }

    /// Fraction of draws in which the non-standard dose has the higher utility.
    pub fn preference_fraction(&self, weights: &UtilityWeights) -> f64 {
        let alt = self.utilities(self.subgroup.alternative(), weights);
        let std = self.utilities(Dose::Standard, weights);
        alt.iter().zip(&std).filter(|(a, s)| a > s).count() as f64 / alt.len() as f64
    }

    pub fn final_selection(&self, admissible: &[Dose], cfg: &DesignConfig) -> Option<Dose> {
        match admissible {
            [] => None,
            [only] => Some(*only),
            _ => {
                if self.preference_fraction(&cfg.weights) > cfg.mu(self.subgroup) {
                    Some(self.subgroup.alternative())
                } else {
                    Some(Dose::Standard)
                }
            }
        }
    }
}

fn normalize(doses: &[Dose], scores: &[f64]) -> Vec<(Dose, f64)> {
    let total: f64 = scores.iter().sum();
    if !(total > 0.0) {
        let p = 1.0 / doses.len() as f64;
        return doses.iter().map(|d| (*d, p)).collect();
    }
    doses.iter().zip(scores).map(|(d, s)| (*d, s / total)).collect()
}

pub fn admissible_set(subgroup: Subgroup, draws: &PosteriorDraws, cfg: &DesignConfig) -> Result<Vec<Dose>> {
    Ok(SubgroupPosterior::new(subgroup, draws, cfg.nu, ProbabilityModel::CompetingRisk)?.admissible(cfg))
}

pub fn randomization_probabilities(subgroup: Subgroup, admissible: &[Dose], draws: &PosteriorDraws, cfg: &DesignConfig) -> Result<Vec<(Dose, f64)>> {
    if admissible.is_empty() {
        return Err(Error::EmptyAdmissibleSet);
    }
    check_doses(subgroup, admissible)?;
    SubgroupPosterior::new(subgroup, draws, cfg.nu, ProbabilityModel::CompetingRisk)?.randomization(admissible, &cfg.weights, false)
}

pub fn final_selection(subgroup: Subgroup, admissible: &[Dose], draws: &PosteriorDraws, cfg: &DesignConfig) -> Result<Option<Dose>> {
    check_doses(subgroup, admissible)?;
    if admissible.len() < 2 {
        return Ok(admissible.first().copied());
    }
    Ok(SubgroupPosterior::new(subgroup, draws, cfg.nu, ProbabilityModel::CompetingRisk)?.final_selection(admissible, cfg))
}

fn check_doses(subgroup: Subgroup, doses: &[Dose]) -> Result<()> {
    for d in doses {
        Arm::new(subgroup, *d)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn exp_theta(rates: [f64; 2]) -> ModelParams {
        ModelParams { shape: [1.0, 1.0], rate: rates, log_hr: [[0.0; 3]; 2] }
    }

    fn point_mass(theta: ModelParams, n: usize) -> PosteriorDraws {
        PosteriorDraws::from_draws(vec![theta; n])
    }

    /// θ with given effective exponential rates on the resistant standard
    /// and high doses (cause 1, cause 2).
    fn resistant_theta(standard: [f64; 2], high: [f64; 2]) -> ModelParams {
        let base = [1.0, 1.0];
        ModelParams {
            shape: [1.0, 1.0],
            rate: base,
            log_hr: [
                [0.0, standard[0].ln(), high[0].ln()],
                [0.0, standard[1].ln(), high[1].ln()],
            ],
        }
    }

    #[test]
    fn default_weights_are_valid_and_row_three_matches() {
        assert!(UtilityWeights::DEFAULT.validate().is_ok());
        assert_eq!(UtilityWeights::SENSITIVITY[2], UtilityWeights::DEFAULT);
        for w in UtilityWeights::SENSITIVITY {
            w.validate().unwrap();
        }
        assert!(UtilityWeights([0.0, 0.0, 0.0, 120.0, 100.0]).validate().is_err());
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = DesignConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.max_sample_size(), 100);
        let bad = DesignConfig { n1: 30, ..cfg };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_event_limit_has_full_utility() {
        let theta = exp_theta([1e-12, 1e-12]);
        let u = true_utility(Arm::SE_LOW, &theta, &UtilityWeights::DEFAULT, 1.0);
        assert_relative_eq!(u, 100.0, epsilon = 1e-8);
        assert!(cumulative_incidence(Cause::Progression, Arm::SE_LOW, &theta, 1.0) < 1e-11);
    }

    #[test]
    fn exponential_cumulative_incidence_closed_form() {
        let theta = exp_theta([0.3, 0.9]);
        let b = 1.2f64;
        let closed = 0.3 / b * (1.0 - (-b).exp());
        assert_relative_eq!(cumulative_incidence(Cause::Progression, Arm::SE_LOW, &theta, 1.0), closed, max_relative = 1e-12);
        let p = event_probabilities(Arm::SE_LOW, &theta, 1.0);
        assert_relative_eq!(p.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn posterior_mean_utility_of_point_masses() {
        let w = UtilityWeights::DEFAULT;
        let a = exp_theta([0.2, 0.3]);
        let b = exp_theta([0.7, 0.1]);
        let ua = true_utility(Arm::RE_HIGH, &a, &w, 1.0);
        let ub = true_utility(Arm::RE_HIGH, &b, &w, 1.0);
        assert_relative_eq!(posterior_mean_utility(Arm::RE_HIGH, &point_mass(a, 5), &w, 1.0).unwrap(), ua, max_relative = 1e-12);
        let two = PosteriorDraws::from_draws(vec![a, b]);
        assert_relative_eq!(posterior_mean_utility(Arm::RE_HIGH, &two, &w, 1.0).unwrap(), 0.5 * (ua + ub), max_relative = 1e-12);
        assert!(matches!(posterior_mean_utility(Arm::RE_HIGH, &PosteriorDraws::from_draws(vec![]), &w, 1.0), Err(Error::EmptyDraws)));
    }

    #[test]
    fn admissible_when_incidence_low() {
        let cfg = DesignConfig::default();
        // rate 0.05 per cause: CIR ≈ 0.048 each.
        let theta = exp_theta([0.05, 0.05]);
        assert_eq!(admissible_set(Subgroup::Resistant, &point_mass(theta, 10), &cfg).unwrap(), vec![Dose::Standard, Dose::High]);
        assert_eq!(admissible_set(Subgroup::Sensitive, &point_mass(theta, 10), &cfg).unwrap(), vec![Dose::Standard, Dose::Low]);
    }

    #[test]
    fn toxic_high_dose_excluded() {
        let cfg = DesignConfig::default();
        let theta = resistant_theta([0.1, 0.1], [0.1, 1.2]);
        let cir = cumulative_incidence(Cause::Complication, Arm::RE_HIGH, &theta, 1.0);
        assert!(cir > 0.55, "{cir}");
        assert_eq!(admissible_set(Subgroup::Resistant, &point_mass(theta, 10), &cfg).unwrap(), vec![Dose::Standard]);
    }

    #[test]
    fn randomization_examples() {
        let sp = |u: [f64; 2]| normalize(&[Dose::Standard, Dose::High], &u);
        assert_eq!(sp([60.0, 40.0]), vec![(Dose::Standard, 0.6), (Dose::High, 0.4)]);
        assert_eq!(sp([50.0, 50.0]), vec![(Dose::Standard, 0.5), (Dose::High, 0.5)]);
        let cfg = DesignConfig::default();
        let draws = point_mass(exp_theta([0.1, 0.1]), 4);
        assert_eq!(
            randomization_probabilities(Subgroup::Resistant, &[Dose::Standard], &draws, &cfg).unwrap(),
            vec![(Dose::Standard, 1.0)]
        );
        assert!(matches!(randomization_probabilities(Subgroup::Resistant, &[], &draws, &cfg), Err(Error::EmptyAdmissibleSet)));
        assert!(randomization_probabilities(Subgroup::Resistant, &[Dose::Low], &draws, &cfg).is_err());
    }

    #[test]
    fn adaptive_randomization_is_proportional_to_utilities() {
        let cfg = DesignConfig::default();
        let theta = resistant_theta([0.3, 0.1], [0.05, 0.4]);
        let draws = point_mass(theta, 3);
        let u_std = true_utility(Arm::RE_STANDARD, &theta, &cfg.weights, 1.0);
        let u_high = true_utility(Arm::RE_HIGH, &theta, &cfg.weights, 1.0);
        let r = randomization_probabilities(Subgroup::Resistant, &[Dose::Standard, Dose::High], &draws, &cfg).unwrap();
        assert_relative_eq!(r[0].1, u_std / (u_std + u_high), max_relative = 1e-12);
        assert_relative_eq!(r[0].1 + r[1].1, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn final_selection_examples() {
        let cfg = DesignConfig::default();
        // High dose clearly better for every draw.
        let theta = resistant_theta([0.5, 0.1], [0.1, 0.1]);
        let draws = point_mass(theta, 20);
        assert_eq!(final_selection(Subgroup::Resistant, &[], &draws, &cfg).unwrap(), None);
        assert_eq!(final_selection(Subgroup::Resistant, &[Dose::Standard], &draws, &cfg).unwrap(), Some(Dose::Standard));
        assert_eq!(
            final_selection(Subgroup::Resistant, &[Dose::Standard, Dose::High], &draws, &cfg).unwrap(),
            Some(Dose::High)
        );
        // Exactly half the draws prefer the high dose: tie at μ goes to standard.
        let worse = resistant_theta([0.1, 0.1], [0.5, 0.1]);
        let half = PosteriorDraws::from_draws(vec![theta, worse, theta, worse]);
        assert_eq!(
            final_selection(Subgroup::Resistant, &[Dose::Standard, Dose::High], &half, &cfg).unwrap(),
            Some(Dose::Standard)
        );
    }
}
