//! On-disk scenario format (TOML, one section per arm).

use std::collections::BTreeMap;

use radtrial_core::scenario::CALIBRATION_TOLERANCE;
use radtrial_core::{Arm, ArmGenerator, ArmTarget, GeneratorFamily, LatentDistribution, ScenarioSpec};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default = "one")]
    pub nu: f64,
    #[serde(default = "half")]
    pub half_fraction: f64,
    #[serde(default = "weibull")]
    pub family: GeneratorFamily,
    pub arms: BTreeMap<String, ArmEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmEntry {
    pub progression: f64,
    pub complication: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorEntry {
    pub residual: f64,
    pub progression: LatentDistribution,
    pub complication: LatentDistribution,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn weibull() -> GeneratorFamily {
    GeneratorFamily::Weibull
}

impl ScenarioFile {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn render(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn to_spec(&self) -> anyhow::Result<ScenarioSpec> {
        for key in self.arms.keys() {
            if Arm::from_key(key).is_none() {
                anyhow::bail!("unknown arm `{key}` (expected re_standard, re_high, se_low, se_standard)");
            }
        }
        let mut targets = Vec::with_capacity(4);
        let mut gens = Vec::with_capacity(4);
        for arm in Arm::ALL {
            let entry = self.arms.get(arm.key()).ok_or_else(|| anyhow::anyhow!("missing arm section [arms.{}]", arm.key()))?;
            targets.push(ArmTarget::new(entry.progression, entry.complication));
            gens.push(entry.generator.as_ref().map(|g| ArmGenerator {
                progression: g.progression,
                complication: g.complication,
                residual: g.residual,
            }));
        }
        let generators = match gens.iter().filter(|g| g.is_some()).count() {
            0 => None,
            4 => Some([0, 1, 2, 3].map(|i| gens[i].expect("all present"))),
            _ => anyhow::bail!("generator parameters must be given for all four arms or none"),
        };
        let mut spec = ScenarioSpec::new(self.name.clone(), [targets[0], targets[1], targets[2], targets[3]]);
        spec.nu = self.nu;
        spec.half_fraction = self.half_fraction;
        spec.family = self.family;
        spec.generators = generators;
        Ok(spec)
    }

    pub fn from_spec(spec: &ScenarioSpec) -> Self {
        let arms = Arm::ALL
            .iter()
            .map(|arm| {
                let t = spec.target(*arm);
                let generator = spec.generator(*arm).ok().map(|g| GeneratorEntry {
                    residual: g.residual,
                    progression: g.progression,
                    complication: g.complication,
                });
                (arm.key().to_string(), ArmEntry { progression: t.progression, complication: t.complication, generator })
            })
            .collect();
        ScenarioFile { name: spec.name.clone(), nu: spec.nu, half_fraction: spec.half_fraction, family: spec.family, arms }
    }
}

/// Checks stored generators against their targets.
pub fn verify_calibration(spec: &ScenarioSpec) -> radtrial_core::Result<[f64; 4]> {
    let residuals = spec.residuals()?;
    if let Some(worst) = residuals.iter().cloned().reduce(f64::max).filter(|r| !(*r < CALIBRATION_TOLERANCE)) {
        return Err(radtrial_core::Error::Calibration { residual: worst, iterations: 0 });
    }
    Ok(residuals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrated_file_round_trips() {
        let spec = ScenarioSpec::preset(6).unwrap().calibrated().unwrap();
        let text = ScenarioFile::from_spec(&spec).render().unwrap();
        let back = ScenarioFile::parse(&text).unwrap().to_spec().unwrap();
        assert_eq!(back, spec);
    }

    #[test]
    fn missing_and_unknown_arms_reported() {
        let text = "name = \"x\"\n[arms.re_standard]\nprogression = 0.1\ncomplication = 0.1\n";
        let err = ScenarioFile::parse(text).unwrap().to_spec().unwrap_err();
        assert!(err.to_string().contains("re_high"), "{err}");
        let text = "name = \"x\"\n[arms.re_low]\nprogression = 0.1\ncomplication = 0.1\n";
        assert!(ScenarioFile::parse(text).unwrap().to_spec().unwrap_err().to_string().contains("re_low"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = ScenarioFile::parse("name = \"x\"\n[arms.re_high]\nprogression = oops\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
