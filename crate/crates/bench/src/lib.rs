//! Fixtures shared by the benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use radtrial_core::{Arm, PatientRecord, ScenarioSpec};

/// Calibrated preset scenario.
pub fn scenario(number: usize) -> ScenarioSpec {
    ScenarioSpec::preset(number).and_then(ScenarioSpec::calibrated).expect("preset calibrates")
}

/// `n` fully followed patients from a scenario, cycling through the arms.
pub fn dataset(scenario: &ScenarioSpec, n: usize, seed: u64) -> Vec<PatientRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let arm = Arm::ALL[i % 4];
            let gen = scenario.generator(arm).expect("calibrated");
            let (x, event) = gen.sample(&mut rng).observe(scenario.nu);
            PatientRecord::new(arm, x, event)
        })
        .collect()
}
