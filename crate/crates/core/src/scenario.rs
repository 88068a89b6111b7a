//! Data-generating scenarios: per-arm target cumulative incidences,
//! calibration of latent event-time generators to those targets, and
//! virtual patient generation.
//!
//! An arm is calibrated by solving, for every cause with a non-zero target,
//!
//! ```text
//! CIF_k(ν)   = CIR_k
//! CIF_k(ν/2) = half_fraction · CIR_k
//! ```
//!
//! for the two parameters of each cause's latent distribution, using damped
//! Newton iterations on the log parameters with a central-difference
//! Jacobian. CIFs come from the same quadrature the design uses.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::decision::UtilityWeights;
use crate::error::{Error, Result};
use crate::incidence::{self, EventProbabilities, LatentDistribution};
use crate::model::{Arm, Cause};

/// Residual tolerance a calibrated arm must meet.
pub const CALIBRATION_TOLERANCE: f64 = 1e-6;

const MAX_NEWTON_ITERATIONS: usize = 200;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorFamily {
    Weibull,
    LogLogistic,
}

/// Target cumulative incidence rates over `[0, ν]` for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmTarget {
    pub progression: f64,
    pub complication: f64,
}

impl ArmTarget {
    pub const fn new(progression: f64, complication: f64) -> Self {
        ArmTarget { progression, complication }
    }

    pub fn get(&self, cause: Cause) -> f64 {
        match cause {
            Cause::Progression => self.progression,
            Cause::Complication => self.complication,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for c in [self.progression, self.complication] {
            if !(0.0..1.0).contains(&c) {
                return Err(format!("cumulative incidence {c} outside [0, 1)"));
            }
        }
        if self.progression + self.complication >= 1.0 {
            return Err(format!(
                "cumulative incidences sum to {} (must be below 1)",
                self.progression + self.complication
            ));
        }
        Ok(())
    }

    /// Outcome probabilities implied by the targets when a fraction `half`
    /// of each cause's events falls in the first half of follow-up.
    pub fn implied_probabilities(&self, half: f64) -> EventProbabilities {
        let (p, c) = (self.progression, self.complication);
        EventProbabilities([half * p, half * c, (1.0 - half) * p, (1.0 - half) * c, 1.0 - p - c])
    }

    /// Closed-form utility implied by the targets.
    pub fn implied_utility(&self, half: f64, weights: &UtilityWeights) -> f64 {
        self.implied_probabilities(half).weighted(&weights.0)
    }
}

/// Calibrated latent distributions for one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmGenerator {
    pub progression: LatentDistribution,
    pub complication: LatentDistribution,
    /// Max-norm residual of the calibration equations.
    pub residual: f64,
}

/// Latent first event of a virtual patient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentOutcome {
    /// `T = min(Y1, Y2)`; infinite when neither event ever happens.
    pub time: f64,
    pub cause: Option<Cause>,
}

impl LatentOutcome {
    /// What is observable after `follow_up` time units: `(x, event)`.
    pub fn observe(&self, follow_up: f64) -> (f64, Option<Cause>) {
        if self.time <= follow_up {
            (self.time, self.cause)
        } else {
            (follow_up, None)
        }
    }
}

impl ArmGenerator {
    pub fn distributions(&self) -> [LatentDistribution; 2] {
        [self.progression, self.complication]
    }

    pub fn event_probabilities(&self, nu: f64) -> EventProbabilities {
        incidence::event_probabilities(&self.distributions(), nu)
    }

    /// Draws independent latent times by inverse CDF and keeps the first.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> LatentOutcome {
        let u1: f64 = rng.sample(Open01);
        let u2: f64 = rng.sample(Open01);
        self.outcome(u1, u2)
    }

    /// Latent outcome for survival-scale uniforms `u1`, `u2` in (0, 1).
    pub fn outcome(&self, u1: f64, u2: f64) -> LatentOutcome {
        let y1 = self.progression.quantile_from_survival(u1);
        let y2 = self.complication.quantile_from_survival(u2);
        if y1.is_infinite() && y2.is_infinite() {
            LatentOutcome { time: f64::INFINITY, cause: None }
        } else if y1 <= y2 {
            LatentOutcome { time: y1, cause: Some(Cause::Progression) }
        } else {
            LatentOutcome { time: y2, cause: Some(Cause::Complication) }
        }
    }
}

/// Solves the calibration system for one arm.
pub fn calibrate_arm(target: ArmTarget, half_fraction: f64, family: GeneratorFamily, nu: f64) -> Result<ArmGenerator> {
    target.validate().map_err(|reason| Error::InfeasibleTargets { arm: "?".into(), reason })?;
    if !(half_fraction > 0.0 && half_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!("half_fraction must lie in (0, 1), got {half_fraction}")));
    }
    let active: Vec<Cause> = Cause::ALL.into_iter().filter(|c| target.get(*c) > 0.0).collect();
    if active.is_empty() {
        return Ok(ArmGenerator { progression: LatentDistribution::Never, complication: LatentDistribution::Never, residual: 0.0 });
    }

    let build = |x: &[f64]| -> [LatentDistribution; 2] {
        let mut out = [LatentDistribution::Never; 2];
        for (i, c) in active.iter().enumerate() {
            let (p0, p1) = (x[2 * i].exp(), x[2 * i + 1].exp());
            out[c.index()] = match family {
                GeneratorFamily::Weibull => LatentDistribution::Weibull { shape: p0, rate: p1 },
                GeneratorFamily::LogLogistic => LatentDistribution::LogLogistic { scale: p0, shape: p1 },
            };
        }
        out
    };
    let residual = |x: &[f64]| -> DVector<f64> {
        let p = incidence::event_probabilities(&build(x), nu);
        let mut r = DVector::zeros(2 * active.len());
        for (i, c) in active.iter().enumerate() {
            let goal = target.get(*c);
            r[2 * i] = p.cumulative_incidence(*c) - goal;
            r[2 * i + 1] = p.first_half_incidence(*c) - half_fraction * goal;
        }
        r
    };

    let mut x = initial_guess(&target, &active, family, nu);
    let mut r = residual(&x);
    let mut norm = r.amax();
    let mut iterations = 0;
    while norm > 1e-13 && iterations < MAX_NEWTON_ITERATIONS {
        iterations += 1;
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[j] += FD_STEP;
            lo[j] -= FD_STEP;
            let col = (residual(&hi) - residual(&lo)) / (2.0 * FD_STEP);
            jac.set_column(j, &col);
        }
        let Some(step) = jac.lu().solve(&(-&r)) else { break };
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + lambda * s.clamp(-2.0, 2.0)).collect();
            let tr = residual(&trial);
            let tn = tr.amax();
            if tn.is_finite() && tn < norm {
                x = trial;
                r = tr;
                norm = tn;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if !(norm < CALIBRATION_TOLERANCE) {
        return Err(Error::Calibration { residual: norm, iterations });
    }
    let [progression, complication] = build(&x);
    Ok(ArmGenerator { progression, complication, residual: norm })
}

fn initial_guess(target: &ArmTarget, active: &[Cause], family: GeneratorFamily, nu: f64) -> Vec<f64> {
    let total: f64 = active.iter().map(|c| target.get(*c)).sum();
    let mut x = Vec::with_capacity(2 * active.len());
    for c in active {
        let goal = target.get(*c);
        match family {
            GeneratorFamily::Weibull => {
                let shape: f64 = 1.5;
                let all = -(1.0 - total).ln() / nu.powf(shape);
                x.push(shape.ln());
                x.push((all * goal / total).ln());
            }
            GeneratorFamily::LogLogistic => {
                let shape: f64 = 2.0;
                let scale = nu * ((1.0 - goal) / goal).powf(1.0 / shape);
                x.push(scale.ln());
                x.push(shape.ln());
            }
        }
    }
    x
}

/// A full scenario: four arm targets plus (once calibrated) generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    /// Targets in [`Arm::ALL`] order.
    pub targets: [ArmTarget; 4],
    pub half_fraction: f64,
    pub family: GeneratorFamily,
    pub nu: f64,
    pub generators: Option<[ArmGenerator; 4]>,
}

/// Table-2 targets `(progression, complication)` per arm, in
/// [`Arm::ALL`] order, for scenarios 1 through 7.
pub const PRESET_TARGETS: [[(f64, f64); 4]; 7] = [
    [(0.2, 0.2), (0.1, 0.3), (0.3, 0.1), (0.2, 0.2)],
    [(0.3, 0.1), (0.05, 0.2), (0.25, 0.2), (0.1, 0.3)],
    [(0.3, 0.1), (0.2, 0.6), (0.6, 0.1), (0.2, 0.6)],
    [(0.3, 0.1), (0.2, 0.6), (0.25, 0.1), (0.2, 0.6)],
    [(0.3, 0.1), (0.05, 0.2), (0.6, 0.1), (0.2, 0.2)],
    [(0.5, 0.1), (0.1, 0.15), (0.1, 0.05), (0.08, 0.35)],
    [(0.15, 0.1), (0.1, 0.15), (0.5, 0.05), (0.1, 0.35)],
];

impl ScenarioSpec {
    pub fn new(name: impl Into<String>, targets: [ArmTarget; 4]) -> Self {
        ScenarioSpec { name: name.into(), targets, half_fraction: 0.5, family: GeneratorFamily::Weibull, nu: 1.0, generators: None }
    }

    /// Uncalibrated preset scenario `number` (1..=7).
    pub fn preset(number: usize) -> Result<Self> {
        let rows = PRESET_TARGETS
            .get(number.wrapping_sub(1))
            .ok_or_else(|| Error::InvalidInput(format!("preset scenarios are numbered 1..=7, got {number}")))?;
        Ok(ScenarioSpec::new(format!("scenario-{number}"), rows.map(|(p, c)| ArmTarget::new(p, c))))
    }

    pub fn target(&self, arm: Arm) -> ArmTarget {
        self.targets[arm.index()]
    }

    pub fn is_calibrated(&self) -> bool {
        self.generators.is_some()
    }

    pub fn generator(&self, arm: Arm) -> Result<&ArmGenerator> {
        self.generators.as_ref().map(|g| &g[arm.index()]).ok_or(Error::Uncalibrated)
    }

    pub fn validate(&self) -> Result<()> {
        for arm in Arm::ALL {
            self.target(arm)
                .validate()
                .map_err(|reason| Error::InfeasibleTargets { arm: arm.key().into(), reason })?;
        }
        if !(self.half_fraction > 0.0 && self.half_fraction < 1.0) {
            return Err(Error::InvalidConfig("half_fraction must lie in (0, 1)".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidConfig("nu must be positive".into()));
        }
        Ok(())
    }

    /// Calibrates every arm, replacing any existing generators.
    pub fn calibrate(&mut self) -> Result<()> {
        self.validate()?;
        let mut gens = Vec::with_capacity(4);
        for arm in Arm::ALL {
            let g = calibrate_arm(self.target(arm), self.half_fraction, self.family, self.nu).map_err(|e| match e {
                Error::InfeasibleTargets { reason, .. } => Error::InfeasibleTargets { arm: arm.key().into(), reason },
                other => other,
            })?;
            gens.push(g);
        }
        self.generators = Some([gens[0], gens[1], gens[2], gens[3]]);
        Ok(())
    }

    pub fn calibrated(mut self) -> Result<Self> {
        self.calibrate()?;
        Ok(self)
    }

    /// Copy with a different generator family, recalibrated.
    pub fn with_family(&self, family: GeneratorFamily) -> Result<Self> {
        let mut s = self.clone();
        s.family = family;
        s.generators = None;
        s.calibrated()
    }

    /// Max-norm residual of each arm's calibration equations, recomputed
    /// from the stored generators.
    pub fn residuals(&self) -> Result<[f64; 4]> {
        let mut out = [0.0; 4];
        for arm in Arm::ALL {
            let p = self.generator(arm)?.event_probabilities(self.nu);
            let t = self.target(arm);
            out[arm.index()] = Cause::ALL
                .iter()
                .map(|c| {
                    let goal = t.get(*c);
                    (p.cumulative_incidence(*c) - goal).abs().max((p.first_half_incidence(*c) - self.half_fraction * goal).abs())
                })
                .fold(0.0, f64::max);
        }
        Ok(out)
    }

    /// Utility of each arm under its calibrated generator.
    pub fn true_utilities(&self, weights: &UtilityWeights) -> Result<[f64; 4]> {
        let mut out = [0.0; 4];
        for arm in Arm::ALL {
            out[arm.index()] = self.generator(arm)?.event_probabilities(self.nu).weighted(&weights.0);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn calibrates_symmetric_arm() {
        let g = calibrate_arm(ArmTarget::new(0.2, 0.2), 0.5, GeneratorFamily::Weibull, 1.0).unwrap();
        let p = g.event_probabilities(1.0);
        for (a, b) in p.0.iter().zip([0.1, 0.1, 0.1, 0.1, 0.6]) {
            assert!((a - b).abs() < 1e-6, "{:?}", p);
        }
        match (g.progression, g.complication) {
            (LatentDistribution::Weibull { shape: a1, rate: b1 }, LatentDistribution::Weibull { shape: a2, rate: b2 }) => {
                assert_relative_eq!(a1, a2, max_relative = 1e-6);
                assert_relative_eq!(b1, b2, max_relative = 1e-6);
                assert!(a1 > 1.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn calibrates_log_logistic() {
        let g = calibrate_arm(ArmTarget::new(0.3, 0.1), 0.5, GeneratorFamily::LogLogistic, 1.0).unwrap();
        assert!(g.residual < CALIBRATION_TOLERANCE);
        assert!(matches!(g.progression, LatentDistribution::LogLogistic { .. }));
    }

    #[test]
    fn zero_target_gives_never() {
        let g = calibrate_arm(ArmTarget::new(0.0, 0.3), 0.5, GeneratorFamily::Weibull, 1.0).unwrap();
        assert_eq!(g.progression, LatentDistribution::Never);
        let none = calibrate_arm(ArmTarget::new(0.0, 0.0), 0.5, GeneratorFamily::Weibull, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let o = none.sample(&mut rng);
        assert_eq!(o.time, f64::INFINITY);
        assert_eq!(o.observe(1.0), (1.0, None));
    }

    #[test]
    fn infeasible_targets_rejected() {
        assert!(matches!(
            calibrate_arm(ArmTarget::new(0.6, 0.5), 0.5, GeneratorFamily::Weibull, 1.0),
            Err(Error::InfeasibleTargets { .. })
        ));
        let mut s = ScenarioSpec::preset(1).unwrap();
        s.targets[2] = ArmTarget::new(0.6, 0.5);
        match s.calibrate() {
            Err(Error::InfeasibleTargets { arm, .. }) => assert_eq!(arm, "se_low"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn observe_censors_before_event() {
        let o = LatentOutcome { time: 0.7, cause: Some(Cause::Complication) };
        assert_eq!(o.observe(0.5), (0.5, None));
        assert_eq!(o.observe(0.9), (0.7, Some(Cause::Complication)));
    }

    #[test]
    fn presets_cover_seven_scenarios() {
        for n in 1..=7 {
            ScenarioSpec::preset(n).unwrap().validate().unwrap();
        }
        assert!(ScenarioSpec::preset(0).is_err());
        assert!(ScenarioSpec::preset(8).is_err());
    }

    #[test]
    fn uncalibrated_generator_access_fails() {
        let s = ScenarioSpec::preset(2).unwrap();
        assert!(matches!(s.generator(Arm::RE_HIGH), Err(Error::Uncalibrated)));
    }
}
