#![allow(dead_code)]

use rand::Rng;
use radtrial_core::decision::arm_distributions;
use radtrial_core::{Arm, ArmGenerator, ModelParams, PatientRecord};

/// Generator for one arm under model parameters `theta`.
pub fn model_generator(arm: Arm, theta: &ModelParams) -> ArmGenerator {
    let [progression, complication] = arm_distributions(arm, theta);
    ArmGenerator { progression, complication, residual: 0.0 }
}

/// `n` patients with arms drawn uniformly, fully followed to `nu`.
pub fn simulate_dataset<R: Rng>(theta: &ModelParams, n: usize, nu: f64, rng: &mut R) -> Vec<PatientRecord> {
    let gens = Arm::ALL.map(|a| model_generator(a, theta));
    (0..n)
        .map(|_| {
            let arm = Arm::ALL[rng.random_range(0..4)];
            let (x, event) = gens[arm.index()].sample(rng).observe(nu);
            PatientRecord::new(arm, x, event)
        })
        .collect()
}
