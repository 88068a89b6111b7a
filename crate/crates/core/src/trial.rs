//! Single-trial state machine.
//!
//! Cohorts arrive every `accrual_interval` time units. The first `n1`
//! cohorts are randomized equally; before each later cohort an interim
//! analysis is run on the data observable at that calendar time. After the
//! last cohort the trial waits until everyone has completed follow-up and
//! makes the final selection on complete data.
//!
//! Each trial owns one ChaCha8 key with separate streams for patient
//! arrivals, dose randomization, latent outcomes and MCMC seeds, so one
//! stream's consumption never shifts another's.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::decision::{DesignConfig, ProbabilityModel, SubgroupPosterior, UtilityEstimate};
use crate::error::{Error, Result};
use crate::model::{Arm, Cause, Dose, PatientRecord, Subgroup};
use crate::sampler::{sample_posterior, McmcConfig, PosteriorDraws};
use crate::scenario::{LatentOutcome, ScenarioSpec};
use crate::simulate::separate_design_posterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Competing-risk model with utility-proportional randomization.
    Adaptive,
    /// Causes modelled separately, otherwise as [`Design::Adaptive`].
    Separate,
    /// Competing-risk model with 1:1 randomization between admissible doses.
    Equal,
}

impl Design {
    pub const ALL: [Design; 3] = [Design::Adaptive, Design::Separate, Design::Equal];

    pub fn label(self) -> &'static str {
        match self {
            Design::Adaptive => "ar",
            Design::Separate => "separate",
            Design::Equal => "er",
        }
    }

    pub fn from_label(s: &str) -> Option<Design> {
        Design::ALL.into_iter().find(|d| d.label().eq_ignore_ascii_case(s))
    }

    pub fn probability_model(self) -> ProbabilityModel {
        match self {
            Design::Separate => ProbabilityModel::Separate,
            _ => ProbabilityModel::CompetingRisk,
        }
    }

    fn equal_randomization(self) -> bool {
        self == Design::Equal
    }
}

impl std::fmt::Display for Design {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-subgroup outcome of a cohort's decision step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupDecision {
    pub subgroup: Subgroup,
    pub admissible: Vec<Dose>,
    /// Empty when the subgroup was closed by this decision.
    pub randomization: Vec<(Dose, f64)>,
    /// Posterior mean utilities of the candidate doses (interims only).
    pub utilities: Vec<UtilityEstimate>,
}

/// Audit entry for one cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortRecord {
    /// Zero-based cohort number.
    pub cohort: usize,
    pub calendar_time: f64,
    /// Whether a posterior fit preceded this cohort.
    pub interim: bool,
    /// Patients whose data entered the interim analysis.
    pub n_observed: usize,
    /// Decisions for the subgroups open when the cohort arrived.
    pub decisions: Vec<SubgroupDecision>,
    pub assignments: Vec<Arm>,
}

impl CohortRecord {
    pub fn decision(&self, subgroup: Subgroup) -> Option<&SubgroupDecision> {
        self.decisions.iter().find(|d| d.subgroup == subgroup)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Enrolled {
    arm: Arm,
    enroll_time: f64,
    latent: LatentOutcome,
}

const ARRIVAL_STREAM: u64 = 1;
const ASSIGNMENT_STREAM: u64 = 2;
const OUTCOME_STREAM: u64 = 3;
const MCMC_STREAM: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mutable state of one running trial. Latent event times stay private;
/// the design only ever sees [`TrialState::observable_data`].
#[derive(Debug, Clone)]
pub struct TrialState {
    pub calendar_time: f64,
    pub enrollment_open: [bool; 2],
    pub early_stop: [bool; 2],
    pub cohort_index: usize,
    pub rng_seed: u64,
    pub history: Vec<CohortRecord>,
    patients: Vec<Enrolled>,
    arrivals: ChaCha8Rng,
    assignment: ChaCha8Rng,
    outcomes: ChaCha8Rng,
    mcmc: ChaCha8Rng,
}

impl TrialState {
    pub fn new(seed: u64) -> Self {
        TrialState {
            calendar_time: 0.0,
            enrollment_open: [true; 2],
            early_stop: [false; 2],
            cohort_index: 0,
            rng_seed: seed,
            history: Vec::new(),
            patients: Vec::new(),
            arrivals: stream(seed, ARRIVAL_STREAM),
            assignment: stream(seed, ASSIGNMENT_STREAM),
            outcomes: stream(seed, OUTCOME_STREAM),
            mcmc: stream(seed, MCMC_STREAM),
        }
    }

    pub fn n_enrolled(&self) -> usize {
        self.patients.len()
    }

    pub fn is_open(&self, subgroup: Subgroup) -> bool {
        self.enrollment_open[subgroup.index()]
    }

    /// Whether another cohort can be enrolled.
    pub fn can_enroll(&self, cfg: &DesignConfig) -> bool {
        self.cohort_index < cfg.n_cohorts_total && self.enrollment_open.iter().any(|o| *o)
    }

    /// Patient records as seen at calendar time `at`: follow-up is
    /// truncated at `min(at - enroll_time, nu)` and later events are hidden.
    pub fn observable_data(&self, at: f64, nu: f64) -> Vec<PatientRecord> {
        self.patients
            .iter()
            .filter(|p| at > p.enroll_time)
            .map(|p| {
                let (x, event) = p.latent.observe((at - p.enroll_time).min(nu));
                PatientRecord { arm: p.arm, time: x, event, enroll_time: p.enroll_time }
            })
            .collect()
    }

    fn fit(&mut self, data: &[PatientRecord], cfg: &DesignConfig, design: Design) -> Result<PosteriorDraws> {
        let mcmc = McmcConfig { seed: self.mcmc.next_u64(), ..cfg.mcmc };
        match design {
            Design::Separate => separate_design_posterior(data, &cfg.prior, &mcmc),
            _ => sample_posterior(data, &cfg.prior, &mcmc),
        }
    }

    /// Enrolls the next cohort, preceded by an interim analysis once the
    /// equal-randomization phase is over.
    pub fn enroll_cohort(&mut self, scenario: &ScenarioSpec, cfg: &DesignConfig, design: Design) -> Result<()> {
        if !self.can_enroll(cfg) {
            return Err(Error::InvalidInput("no cohort can be enrolled".into()));
        }
        let cohort = self.cohort_index;
        self.calendar_time = cohort as f64 * cfg.accrual_interval;
        let interim = cohort >= cfg.n1;
        let mut decisions = Vec::new();
        let mut n_observed = 0;

        if interim {
            let data = self.observable_data(self.calendar_time, cfg.nu);
            n_observed = data.len();
            let draws = self.fit(&data, cfg, design)?;
            let open: Vec<Subgroup> = Subgroup::ALL.into_iter().filter(|s| self.is_open(*s)).collect();
            for subgroup in open {
                let post = SubgroupPosterior::new(subgroup, &draws, cfg.nu, design.probability_model())?;
                let admissible = post.admissible(cfg);
                let utilities = subgroup.doses().map(|d| post.mean_utility(d, &cfg.weights)).to_vec();
                let randomization = if admissible.is_empty() {
                    self.enrollment_open[subgroup.index()] = false;
                    self.early_stop[subgroup.index()] = true;
                    Vec::new()
                } else {
                    post.randomization(&admissible, &cfg.weights, design.equal_randomization())?
                };
                decisions.push(SubgroupDecision { subgroup, admissible, randomization, utilities });
            }
        } else {
            for subgroup in Subgroup::ALL.into_iter().filter(|s| self.is_open(*s)) {
                let admissible = subgroup.doses().to_vec();
                let randomization = admissible.iter().map(|d| (*d, 0.5)).collect();
                decisions.push(SubgroupDecision { subgroup, admissible, randomization, utilities: Vec::new() });
            }
        }

        let mut assignments = Vec::new();
        for _ in 0..cfg.cohort_size {
            let resistant = self.arrivals.random_bool(cfg.p_resistant);
            let subgroup = if resistant { Subgroup::Resistant } else { Subgroup::Sensitive };
            let u: f64 = self.assignment.random();
            let u1: f64 = self.outcomes.sample(Open01);
            let u2: f64 = self.outcomes.sample(Open01);
            if !self.is_open(subgroup) {
                continue;
            }
            let probs = &decisions.iter().find(|d| d.subgroup == subgroup).expect("open subgroup has a decision").randomization;
            let dose = draw_dose(probs, u);
            let arm = Arm::new(subgroup, dose)?;
            let latent = scenario.generator(arm)?.outcome(u1, u2);
            self.patients.push(Enrolled { arm, enroll_time: self.calendar_time, latent });
            assignments.push(arm);
        }
        self.history.push(CohortRecord { cohort, calendar_time: self.calendar_time, interim, n_observed, decisions, assignments });
        self.cohort_index += 1;
        Ok(())
    }

    /// Final analysis on complete follow-up.
    fn finish(&mut self, cfg: &DesignConfig, design: Design) -> Result<FinalAnalysis> {
        let last = self.patients.iter().map(|p| p.enroll_time).fold(0.0, f64::max);
        self.calendar_time = last + cfg.nu;
        let data = self.observable_data(f64::INFINITY, cfg.nu);
        let open: Vec<Subgroup> = Subgroup::ALL.into_iter().filter(|s| self.is_open(*s)).collect();
        let mut selection = [None; 2];
        let mut decisions = Vec::new();
        if !open.is_empty() {
            let draws = self.fit(&data, cfg, design)?;
            for subgroup in open {
                let post = SubgroupPosterior::new(subgroup, &draws, cfg.nu, design.probability_model())?;
                let admissible = post.admissible(cfg);
                selection[subgroup.index()] = post.final_selection(&admissible, cfg);
                let utilities = subgroup.doses().map(|d| post.mean_utility(d, &cfg.weights)).to_vec();
                decisions.push(SubgroupDecision { subgroup, admissible, randomization: Vec::new(), utilities });
            }
        }
        Ok(FinalAnalysis { calendar_time: self.calendar_time, selection, decisions, data })
    }
}

struct FinalAnalysis {
    calendar_time: f64,
    selection: [Option<Dose>; 2],
    decisions: Vec<SubgroupDecision>,
    data: Vec<PatientRecord>,
}

fn draw_dose(probs: &[(Dose, f64)], u: f64) -> Dose {
    let mut acc = 0.0;
    for (d, p) in probs {
        acc += p;
        if u < acc {
            return *d;
        }
    }
    probs.iter().rev().find(|(_, p)| *p > 0.0).map_or(probs[0].0, |(d, _)| *d)
}

/// Everything a finished trial reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub design: Design,
    /// Selected dose per subgroup (indexed by [`Subgroup::index`]).
    pub selection: [Option<Dose>; 2],
    pub early_stop: [bool; 2],
    /// Patients per arm, in [`Arm::ALL`] order.
    pub patients: [usize; 4],
    /// Events per arm and cause under complete follow-up.
    pub events: [[usize; 2]; 4],
    pub final_calendar_time: f64,
    pub history: Vec<CohortRecord>,
    /// Final-analysis decisions for subgroups still open at the end.
    pub final_decisions: Vec<SubgroupDecision>,
}

impl TrialResult {
    pub fn n_enrolled(&self) -> usize {
        self.patients.iter().sum()
    }

    pub fn selected(&self, subgroup: Subgroup) -> Option<Dose> {
        self.selection[subgroup.index()]
    }

    pub fn n_treated(&self, arm: Arm) -> usize {
        self.patients[arm.index()]
    }

    pub fn n_events(&self, arm: Arm, cause: Cause) -> usize {
        self.events[arm.index()][cause.index()]
    }
}

/// Runs one complete trial. Deterministic in `(scenario, cfg, design, seed)`.
pub fn run_trial(scenario: &ScenarioSpec, cfg: &DesignConfig, design: Design, seed: u64) -> Result<TrialResult> {
    cfg.validate()?;
    if !scenario.is_calibrated() {
        return Err(Error::Uncalibrated);
    }
    if (scenario.nu - cfg.nu).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!("scenario follow-up {} differs from design follow-up {}", scenario.nu, cfg.nu)));
    }
    let wrap = |e: Error| Error::Trial { seed, source: Box::new(e) };
    let mut state = TrialState::new(seed);
    while state.can_enroll(cfg) {
        state.enroll_cohort(scenario, cfg, design).map_err(wrap)?;
    }
    let fin = state.finish(cfg, design).map_err(wrap)?;
    let mut patients = [0; 4];
    let mut events = [[0; 2]; 4];
    for r in &fin.data {
        let i = r.arm.index();
        patients[i] += 1;
        if let Some(c) = r.event {
            events[i][c.index()] += 1;
        }
    }
    Ok(TrialResult {
        seed,
        design,
        selection: fin.selection,
        early_stop: state.early_stop,
        patients,
        events,
        final_calendar_time: fin.calendar_time,
        history: state.history,
        final_decisions: fin.decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> DesignConfig {
        let mut cfg = DesignConfig::default();
        cfg.mcmc.n_iter = 600;
        cfg.mcmc.n_burn = 300;
        cfg
    }

    #[test]
    fn draw_dose_follows_cumulative_probabilities() {
        let probs = [(Dose::Standard, 0.3), (Dose::High, 0.7)];
        assert_eq!(draw_dose(&probs, 0.0), Dose::Standard);
        assert_eq!(draw_dose(&probs, 0.29), Dose::Standard);
        assert_eq!(draw_dose(&probs, 0.31), Dose::High);
        assert_eq!(draw_dose(&[(Dose::Low, 1.0)], 0.999), Dose::Low);
    }

    #[test]
    fn first_cohort_is_equally_randomized_without_fit() {
        let scenario = ScenarioSpec::preset(1).unwrap().calibrated().unwrap();
        let cfg = quick_cfg();
        let mut state = TrialState::new(3);
        state.enroll_cohort(&scenario, &cfg, Design::Adaptive).unwrap();
        let rec = &state.history[0];
        assert!(!rec.interim);
        assert_eq!(rec.assignments.len(), cfg.cohort_size);
        for d in &rec.decisions {
            assert_eq!(d.randomization.iter().map(|(_, p)| *p).collect::<Vec<_>>(), vec![0.5, 0.5]);
        }
    }

    #[test]
    fn observable_data_hides_future_events() {
        let scenario = ScenarioSpec::preset(3).unwrap().calibrated().unwrap();
        let cfg = quick_cfg();
        let mut state = TrialState::new(11);
        for _ in 0..3 {
            state.enroll_cohort(&scenario, &cfg, Design::Adaptive).unwrap();
        }
        let at = 0.6;
        for r in state.observable_data(at, cfg.nu) {
            assert!(r.time <= (at - r.enroll_time).min(cfg.nu) + 1e-15);
            assert!(r.time > 0.0);
        }
        assert!(state.observable_data(0.0, cfg.nu).is_empty());
    }

    #[test]
    fn uncalibrated_scenario_rejected() {
        let scenario = ScenarioSpec::preset(1).unwrap();
        assert!(matches!(run_trial(&scenario, &quick_cfg(), Design::Adaptive, 1), Err(Error::Uncalibrated)));
    }

    #[test]
    fn design_labels_round_trip() {
        for d in Design::ALL {
            assert_eq!(Design::from_label(d.label()), Some(d));
        }
        assert_eq!(Design::from_label("AR"), Some(Design::Adaptive));
        assert_eq!(Design::from_label("bogus"), None);
    }
}
