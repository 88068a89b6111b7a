//! Replicate farms, operating characteristics and sensitivity sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{DesignConfig, UtilityWeights};
use crate::error::{Error, Result};
use crate::model::{Arm, Cause, Dose, ModelParams, PatientRecord, PriorConfig, Subgroup};
use crate::sampler::{sample_cause_posterior, McmcConfig, PosteriorDraws};
use crate::scenario::{GeneratorFamily, ScenarioSpec};
use crate::trial::{run_trial, Design, TrialResult};

/// SplitMix64 output for `index` under `master`; replicate `r` always gets
/// the same seed regardless of how many replicates run.
pub fn replicate_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits each cause on its own (the other cause's events act as
/// censoring) and pairs the two chains draw by draw.
pub fn separate_design_posterior(data: &[PatientRecord], prior: &PriorConfig, cfg: &McmcConfig) -> Result<PosteriorDraws> {
    let fits = Cause::ALL.map(|c| {
        let cfg = McmcConfig { seed: replicate_seed(cfg.seed, c.index() as u64), ..*cfg };
        sample_cause_posterior(data, prior, &cfg, c)
    });
    let [p, c] = fits;
    let (p, c) = (p?, c?);
    let draws = p
        .draws
        .iter()
        .zip(&c.draws)
        .map(|(a, b)| ModelParams { shape: [a.0, b.0], rate: [a.1, b.1], log_hr: [a.2, b.2] })
        .collect();
    let mut accept_rates = [0.0; 10];
    for (k, fit) in [&p, &c].into_iter().enumerate() {
        accept_rates[k] = fit.accept_rates[0];
        accept_rates[2 + k] = fit.accept_rates[1];
        accept_rates[4 + 3 * k..7 + 3 * k].copy_from_slice(&fit.accept_rates[2..]);
    }
    Ok(PosteriorDraws { draws, accept_rates, seed: cfg.seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: Arm,
    pub selection: f64,
    pub mean_treated: f64,
    pub mean_progression: f64,
    pub mean_complication: f64,
}

/// Frequentist summaries over a batch of simulated trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingCharacteristics {
    pub design: Design,
    pub scenario: String,
    pub master_seed: u64,
    /// Successful replicates the summaries are averaged over.
    pub n_replicates: usize,
    /// Seeds and messages of replicates that failed.
    pub failures: Vec<(u64, String)>,
    /// In [`Arm::ALL`] order.
    pub arms: [ArmSummary; 4],
    pub early_stop: [f64; 2],
    pub no_selection: [f64; 2],
}

impl OperatingCharacteristics {
    pub fn from_results(design: Design, scenario: &str, master_seed: u64, results: &[Result<TrialResult>]) -> Self {
        let mut arms = Arm::ALL.map(|arm| ArmSummary { arm, selection: 0.0, mean_treated: 0.0, mean_progression: 0.0, mean_complication: 0.0 });
        let mut early_stop = [0.0; 2];
        let mut no_selection = [0.0; 2];
        let mut failures = Vec::new();
        let mut n = 0usize;
        for r in results {
            match r {
                Ok(t) => {
                    n += 1;
                    for a in &mut arms {
                        let arm = a.arm;
                        if t.selected(arm.subgroup()) == Some(arm.dose()) {
                            a.selection += 1.0;
                        }
                        a.mean_treated += t.n_treated(arm) as f64;
                        a.mean_progression += t.n_events(arm, Cause::Progression) as f64;
                        a.mean_complication += t.n_events(arm, Cause::Complication) as f64;
                    }
                    for s in Subgroup::ALL {
                        if t.early_stop[s.index()] {
                            early_stop[s.index()] += 1.0;
                        }
                        if t.selected(s).is_none() {
                            no_selection[s.index()] += 1.0;
                        }
                    }
                }
                Err(Error::Trial { seed, source }) => failures.push((*seed, source.to_string())),
                Err(e) => failures.push((0, e.to_string())),
            }
        }
        if n > 0 {
            let n = n as f64;
            for a in &mut arms {
                a.selection /= n;
                a.mean_treated /= n;
                a.mean_progression /= n;
                a.mean_complication /= n;
            }
            early_stop.iter_mut().chain(no_selection.iter_mut()).for_each(|v| *v /= n);
        }
        OperatingCharacteristics { design, scenario: scenario.to_string(), master_seed, n_replicates: n, failures, arms, early_stop, no_selection }
    }

    pub fn arm(&self, arm: Arm) -> &ArmSummary {
        &self.arms[arm.index()]
    }

    pub fn selection(&self, subgroup: Subgroup, dose: Dose) -> f64 {
        Arm::new(subgroup, dose).map_or(0.0, |a| self.arm(a).selection)
    }

    pub fn early_stop(&self, subgroup: Subgroup) -> f64 {
        self.early_stop[subgroup.index()]
    }

    /// Mean patients on `preferred` over mean patients on the subgroup's
    /// other dose.
    pub fn allocation_ratio(&self, subgroup: Subgroup, preferred: Dose) -> Result<f64> {
        let other = subgroup
            .doses()
            .into_iter()
            .find(|d| *d != preferred)
            .ok_or(Error::InvalidArm { subgroup, dose: preferred })?;
        let a = self.arm(Arm::new(subgroup, preferred)?).mean_treated;
        let b = self.arm(Arm::new(subgroup, other)?).mean_treated;
        Ok(a / b)
    }
}

/// Runs `n_reps` trials in parallel on the current rayon pool; results come
/// back in replicate order.
pub fn run_trials(scenario: &ScenarioSpec, design: Design, cfg: &DesignConfig, n_reps: usize, master_seed: u64) -> Result<Vec<Result<TrialResult>>> {
    if n_reps == 0 {
        return Err(Error::InvalidInput("number of replicates must be positive".into()));
    }
    cfg.validate()?;
    if !scenario.is_calibrated() {
        return Err(Error::Uncalibrated);
    }
    Ok((0..n_reps as u64)
        .into_par_iter()
        .map(|r| run_trial(scenario, cfg, design, replicate_seed(master_seed, r)))
        .collect())
}

pub fn run_replicates(scenario: &ScenarioSpec, design: Design, cfg: &DesignConfig, n_reps: usize, master_seed: u64) -> Result<OperatingCharacteristics> {
    let results = run_trials(scenario, design, cfg, n_reps, master_seed)?;
    Ok(OperatingCharacteristics::from_results(design, &scenario.name, master_seed, &results))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    SampleSize,
    ReProportion,
    GeneratorFamily,
    Weights,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 4] = [SweepAxis::SampleSize, SweepAxis::ReProportion, SweepAxis::GeneratorFamily, SweepAxis::Weights];

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::SampleSize => "sample_size",
            SweepAxis::ReProportion => "re_proportion",
            SweepAxis::GeneratorFamily => "generator_family",
            SweepAxis::Weights => "weights",
        }
    }

    pub fn from_label(s: &str) -> Option<SweepAxis> {
        SweepAxis::ALL.into_iter().find(|a| a.label() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridValue {
    Number(f64),
    Family(GeneratorFamily),
    Weights(UtilityWeights),
}

impl std::fmt::Display for GridValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridValue::Number(v) => write!(f, "{v}"),
            GridValue::Family(GeneratorFamily::Weibull) => f.write_str("weibull"),
            GridValue::Family(GeneratorFamily::LogLogistic) => f.write_str("log_logistic"),
            GridValue::Weights(w) => {
                let parts: Vec<String> = w.0.iter().map(|v| v.to_string()).collect();
                f.write_str(&parts.join("/"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: GridValue,
    pub oc: OperatingCharacteristics,
}

/// Applies one grid value to copies of the base scenario and config.
pub fn apply_grid_value(axis: SweepAxis, value: &GridValue, scenario: &ScenarioSpec, cfg: &DesignConfig) -> Result<(ScenarioSpec, DesignConfig)> {
    let mut cfg = *cfg;
    let mut scenario = scenario.clone();
    let bad = || Error::InvalidConfig(format!("grid value {value} is not valid for axis {}", axis.label()));
    match (axis, value) {
        (SweepAxis::SampleSize, GridValue::Number(n)) => {
            let per = cfg.cohort_size as f64;
            let cohorts = n / per;
            if !(cohorts.fract() == 0.0 && cohorts as usize > cfg.n1) {
                return Err(Error::InvalidConfig(format!(
                    "sample size {n} must be a multiple of the cohort size {} exceeding {} cohorts",
                    cfg.cohort_size, cfg.n1
                )));
            }
            cfg.n_cohorts_total = cohorts as usize;
        }
        (SweepAxis::ReProportion, GridValue::Number(p)) => cfg.p_resistant = *p,
        (SweepAxis::GeneratorFamily, GridValue::Family(f)) => {
            if scenario.family != *f || !scenario.is_calibrated() {
                scenario = scenario.with_family(*f)?;
            }
        }
        (SweepAxis::Weights, GridValue::Weights(w)) => cfg.weights = *w,
        _ => return Err(bad()),
    }
    cfg.validate()?;
    Ok((scenario, cfg))
}

/// One operating-characteristics summary per grid point, in grid order.
/// Every point reuses `master_seed`.
pub fn sensitivity_sweep(
    scenario: &ScenarioSpec,
    design: Design,
    cfg: &DesignConfig,
    axis: SweepAxis,
    grid: &[GridValue],
    n_reps: usize,
    master_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    let prepared = grid
        .iter()
        .map(|v| apply_grid_value(axis, v, scenario, cfg))
        .collect::<Result<Vec<_>>>()?;
    grid.iter()
        .zip(prepared)
        .map(|(value, (s, c))| Ok(SweepPoint { value: *value, oc: run_replicates(&s, design, &c, n_reps, master_seed)? }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_seeds_are_distinct_and_stable() {
        let seeds: Vec<u64> = (0..1000).map(|r| replicate_seed(42, r)).collect();
        let mut sorted = seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 1000);
        assert_eq!(replicate_seed(42, 7), seeds[7]);
        assert_ne!(replicate_seed(43, 7), seeds[7]);
    }

    #[test]
    fn sample_size_grid_validated() {
        let s = ScenarioSpec::preset(1).unwrap();
        let cfg = DesignConfig::default();
        let (_, c) = apply_grid_value(SweepAxis::SampleSize, &GridValue::Number(60.0), &s, &cfg).unwrap();
        assert_eq!(c.n_cohorts_total, 12);
        assert!(apply_grid_value(SweepAxis::SampleSize, &GridValue::Number(62.0), &s, &cfg).is_err());
        assert!(apply_grid_value(SweepAxis::SampleSize, &GridValue::Number(20.0), &s, &cfg).is_err());
        assert!(apply_grid_value(SweepAxis::ReProportion, &GridValue::Number(1.5), &s, &cfg).is_err());
        assert!(apply_grid_value(SweepAxis::Weights, &GridValue::Number(0.5), &s, &cfg).is_err());
    }

    #[test]
    fn zero_replicates_rejected() {
        let s = ScenarioSpec::preset(1).unwrap().calibrated().unwrap();
        assert!(run_replicates(&s, Design::Adaptive, &DesignConfig::default(), 0, 1).is_err());
    }

    #[test]
    fn axis_labels_round_trip() {
        for a in SweepAxis::ALL {
            assert_eq!(SweepAxis::from_label(a.label()), Some(a));
        }
    }
}
