mod common;

use proptest::prelude::*;
use radtrial_core::decision::{event_probabilities, ProbabilityModel, SubgroupPosterior};
use radtrial_core::incidence::{self, Quadrature};
use radtrial_core::model::{log_likelihood, survival, ArmStatistics};
use radtrial_core::{
    Arm, Cause, DesignConfig, Dose, LatentDistribution, ModelParams, PatientRecord, PosteriorDraws, Subgroup, UtilityWeights,
};

fn latent() -> impl Strategy<Value = LatentDistribution> {
    prop_oneof![
        (0.3f64..4.0, 0.01f64..5.0).prop_map(|(shape, rate)| LatentDistribution::Weibull { shape, rate }),
        (0.1f64..5.0, 0.3f64..4.0).prop_map(|(scale, shape)| LatentDistribution::LogLogistic { scale, shape }),
        Just(LatentDistribution::Never),
    ]
}

fn params() -> impl Strategy<Value = ModelParams> {
    (prop::array::uniform2(0.3f64..3.0), prop::array::uniform2(0.02f64..3.0), prop::array::uniform6(-2.0f64..2.0)).prop_map(
        |(shape, rate, g)| ModelParams { shape, rate, log_hr: [[g[0], g[1], g[2]], [g[3], g[4], g[5]]] },
    )
}

fn arm() -> impl Strategy<Value = Arm> {
    (0usize..4).prop_map(|i| Arm::ALL[i])
}

fn record() -> impl Strategy<Value = PatientRecord> {
    (arm(), 0.001f64..1.0, 0usize..3).prop_map(|(arm, x, e)| PatientRecord::new(arm, x, [None, Some(Cause::Progression), Some(Cause::Complication)][e]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn outcome_probabilities_partition_unity(p in latent(), c in latent(), nu in 0.05f64..5.0) {
        let e = incidence::event_probabilities(&[p, c], nu);
        for v in e.0 {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&v), "{e:?}");
        }
        prop_assert!((e.total() - 1.0).abs() < 1e-9, "{e:?}");
        let free = p.survival(nu) * c.survival(nu);
        prop_assert!((e.event_free() - free).abs() < 1e-12);
    }

    #[test]
    fn cumulative_incidence_grows_with_follow_up(p in latent(), c in latent(), nu in 0.05f64..3.0, extra in 0.01f64..2.0) {
        let short = incidence::event_probabilities(&[p, c], nu);
        let long = incidence::event_probabilities(&[p, c], nu + extra);
        for cause in Cause::ALL {
            prop_assert!(long.cumulative_incidence(cause) >= short.cumulative_incidence(cause) - 1e-9);
        }
    }

    #[test]
    fn raising_one_hazard_shifts_incidence(shape in prop::array::uniform2(0.4f64..3.0), rate in prop::array::uniform2(0.05f64..2.0), factor in 1.05f64..4.0) {
        let base = [0, 1].map(|k| LatentDistribution::Weibull { shape: shape[k], rate: rate[k] });
        let mut raised = base;
        raised[0] = LatentDistribution::Weibull { shape: shape[0], rate: rate[0] * factor };
        let (a, b) = (incidence::event_probabilities(&base, 1.0), incidence::event_probabilities(&raised, 1.0));
        prop_assert!(b.cumulative_incidence(Cause::Progression) > a.cumulative_incidence(Cause::Progression));
        prop_assert!(b.cumulative_incidence(Cause::Complication) < a.cumulative_incidence(Cause::Complication));
    }

    #[test]
    fn quadrature_agrees_with_dense_rule(p in latent(), c in latent(), nu in 0.1f64..3.0) {
        let standard = Quadrature::standard().event_probabilities(&[p, c], nu);
        let dense = Quadrature::new(512).event_probabilities(&[p, c], nu);
        for (a, b) in standard.0.iter().zip(dense.0) {
            prop_assert!((a - b).abs() < 1e-7, "{standard:?} vs {dense:?}");
        }
    }

    #[test]
    fn model_survival_matches_latent_distribution(theta in params(), arm in arm(), x in 0.01f64..3.0) {
        let dists = radtrial_core::decision::arm_distributions(arm, &theta);
        for cause in Cause::ALL {
            let direct = survival(cause, x, arm, &theta);
            prop_assert!((direct - dists[cause.index()].survival(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn log_likelihood_is_additive(theta in params(), a in prop::collection::vec(record(), 0..30), b in prop::collection::vec(record(), 0..30)) {
        let joined: Vec<_> = a.iter().chain(&b).copied().collect();
        let sum = log_likelihood(&a, &theta) + log_likelihood(&b, &theta);
        let whole = log_likelihood(&joined, &theta);
        prop_assert!((whole - sum).abs() <= 1e-9 * (1.0 + whole.abs()));
        let stats = ArmStatistics::new(&joined).log_likelihood(&theta);
        prop_assert!((whole - stats).abs() <= 1e-8 * (1.0 + whole.abs()));
    }

    #[test]
    fn causes_do_not_share_log_hazard_ratios(theta in params(), arm in arm(), x in 0.01f64..2.0, shift in prop::array::uniform3(-1.0f64..1.0)) {
        let mut moved = theta;
        for (g, s) in moved.log_hr[1].iter_mut().zip(shift) {
            *g += s;
        }
        prop_assert_eq!(survival(Cause::Progression, x, arm, &theta), survival(Cause::Progression, x, arm, &moved));
        let low = Arm::new(Subgroup::Sensitive, Dose::Low).unwrap();
        prop_assert_eq!(survival(Cause::Complication, x, low, &theta), survival(Cause::Complication, x, low, &moved));
    }

    #[test]
    fn randomization_is_a_distribution_over_admissible_doses(
        draws in prop::collection::vec(params(), 1..20),
        resistant in any::<bool>(),
        tau in 0.1f64..0.7,
        weights in 0usize..9,
        equal in any::<bool>(),
    ) {
        let subgroup = if resistant { Subgroup::Resistant } else { Subgroup::Sensitive };
        let cfg = DesignConfig { tau: [tau, tau], weights: UtilityWeights::SENSITIVITY[weights], ..DesignConfig::default() };
        let post = SubgroupPosterior::new(subgroup, &PosteriorDraws::from_draws(draws), cfg.nu, ProbabilityModel::CompetingRisk).unwrap();
        let admissible = post.admissible(&cfg);
        match post.randomization(&admissible, &cfg.weights, equal) {
            Ok(r) => {
                prop_assert_eq!(r.iter().map(|(d, _)| *d).collect::<Vec<_>>(), admissible);
                prop_assert!(r.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
                prop_assert!((r.iter().map(|(_, p)| p).sum::<f64>() - 1.0).abs() < 1e-12);
            }
            Err(_) => prop_assert!(admissible.is_empty()),
        }
    }

    #[test]
    fn generator_reproduces_model_probabilities(theta in params(), arm in arm(), nu in 0.2f64..2.0) {
        let from_generator = common::model_generator(arm, &theta).event_probabilities(nu);
        let from_model = event_probabilities(arm, &theta, nu);
        for (a, b) in from_generator.0.iter().zip(from_model.0) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
