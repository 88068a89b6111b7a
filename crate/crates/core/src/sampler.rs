//! Metropolis-within-Gibbs sampler for the competing-risk posterior.
//!
//! Each iteration sweeps the ten scalar coordinates in the fixed order
//! α1, α2, β1, β2, γ11..γ13, γ21..γ23. Shapes and rates move by Gaussian
//! random walk on the log scale (the target picks up the Jacobian `+ln v`),
//! log hazard ratios by Gaussian random walk on their natural scale.
//! Proposal scales are tuned per coordinate towards `target_accept` in
//! batches of `adapt_window` iterations, during burn-in only.
//!
//! The likelihood factorizes over causes, so a chain for one cause alone is
//! the exact marginal fit that treats the other cause as censoring; see
//! [`sample_cause_posterior`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::model::{ArmStatistics, Cause, ModelParams, PatientRecord, PriorConfig, COORDINATE_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub init: ModelParams,
    pub seed: u64,
    pub target_accept: f64,
    pub adapt_window: usize,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            n_iter: 4000,
            n_burn: 2000,
            thin: 1,
            init: ModelParams::default(),
            seed: 0,
            target_accept: 0.3,
            adapt_window: 50,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_burn >= self.n_iter {
            return Err(Error::InvalidConfig(format!("n_burn ({}) must be below n_iter ({})", self.n_burn, self.n_iter)));
        }
        if self.thin == 0 || self.n_iter - self.n_burn < self.thin {
            return Err(Error::InvalidConfig("thin must be >= 1 and leave at least one draw".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidConfig("target_accept must lie in (0, 1)".into()));
        }
        if self.adapt_window == 0 {
            return Err(Error::InvalidConfig("adapt_window must be positive".into()));
        }
        if !self.init.in_support() {
            return Err(Error::OutsideSupport);
        }
        Ok(())
    }

    /// Number of retained draws: `⌊(n_iter − n_burn) / thin⌋`.
    pub fn n_draws(&self) -> usize {
        (self.n_iter - self.n_burn) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: Vec<ModelParams>,
    /// Post-burn-in acceptance fraction per coordinate.
    pub accept_rates: [f64; 10],
    pub seed: u64,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Wraps externally produced draws (acceptance rates unknown, reported as NaN).
    pub fn from_draws(draws: Vec<ModelParams>) -> Self {
        PosteriorDraws { draws, accept_rates: [f64::NAN; 10], seed: 0 }
    }

    pub fn coordinate(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d.coordinates()[j]).collect()
    }

    /// Writes one whitespace-separated row per draw under a header naming
    /// the ten coordinates.
    pub fn write_table<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{}", COORDINATE_NAMES.join("\t"))?;
        for d in &self.draws {
            let row: Vec<String> = d.coordinates().iter().map(|v| format!("{v:.10e}")).collect();
            writeln!(out, "{}", row.join("\t"))?;
        }
        Ok(())
    }
}

/// Draws for a single cause: `(shape, rate, log_hr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseDraws {
    pub cause: Cause,
    pub draws: Vec<(f64, f64, [f64; 3])>,
    pub accept_rates: [f64; 5],
}

/// Runs one chain over the joint posterior.
pub fn sample_posterior(data: &[PatientRecord], prior: &PriorConfig, cfg: &McmcConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    prior.validate()?;
    let stats = ArmStatistics::new(data);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chains = Cause::ALL.map(|c| CauseChain::new(c, &cfg.init, &stats));

    let mut draws = Vec::with_capacity(cfg.n_draws());
    let mut tuner = Tuner::new(cfg);
    for iter in 0..cfg.n_iter {
        // α1, α2, β1, β2, then γ1·, γ2·.
        for p in 0..2 {
            for chain in chains.iter_mut() {
                let ok = chain.update(p, &stats, prior, &mut rng);
                tuner.record(chain.cause.index() + 2 * p, ok, iter);
            }
        }
        for chain in chains.iter_mut() {
            for p in 2..5 {
                let ok = chain.update(p, &stats, prior, &mut rng);
                tuner.record(4 + 3 * chain.cause.index() + (p - 2), ok, iter);
            }
        }
        if let Some(adjust) = tuner.end_iteration(iter) {
            for chain in chains.iter_mut() {
                let k = chain.cause.index();
                for p in 0..5 {
                    chain.log_scale[p] += adjust[global_index(k, p)];
                }
            }
        }
        if retained(iter, cfg) {
            let [c1, c2] = &chains;
            draws.push(ModelParams {
                shape: [c1.shape, c2.shape],
                rate: [c1.rate, c2.rate],
                log_hr: [c1.log_hr, c2.log_hr],
            });
        }
    }
    Ok(PosteriorDraws { draws, accept_rates: tuner.accept_rates(), seed: cfg.seed })
}

/// Runs a chain over one cause's parameters only; the other cause's events
/// enter as censoring.
pub fn sample_cause_posterior(data: &[PatientRecord], prior: &PriorConfig, cfg: &McmcConfig, cause: Cause) -> Result<CauseDraws> {
    cfg.validate()?;
    prior.validate()?;
    let stats = ArmStatistics::new(data);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut chain = CauseChain::new(cause, &cfg.init, &stats);
    let k = cause.index();
    let mut tuner = Tuner::new(cfg);
    let mut draws = Vec::with_capacity(cfg.n_draws());
    for iter in 0..cfg.n_iter {
        for p in 0..5 {
            let ok = chain.update(p, &stats, prior, &mut rng);
            tuner.record(global_index(k, p), ok, iter);
        }
        if let Some(adjust) = tuner.end_iteration(iter) {
            for p in 0..5 {
                chain.log_scale[p] += adjust[global_index(k, p)];
            }
        }
        if retained(iter, cfg) {
            draws.push((chain.shape, chain.rate, chain.log_hr));
        }
    }
    let all = tuner.accept_rates();
    let accept_rates = [0, 1, 2, 3, 4].map(|p| all[global_index(k, p)]);
    Ok(CauseDraws { cause, draws, accept_rates })
}

fn retained(iter: usize, cfg: &McmcConfig) -> bool {
    iter >= cfg.n_burn && (iter - cfg.n_burn + 1) % cfg.thin == 0
}

/// Maps (cause, local parameter) to the coordinate index in
/// [`COORDINATE_NAMES`]. Local parameters: 0 shape, 1 rate, 2..5 γ.
fn global_index(k: usize, p: usize) -> usize {
    match p {
        0 => k,
        1 => 2 + k,
        _ => 4 + 3 * k + (p - 2),
    }
}

struct CauseChain {
    cause: Cause,
    shape: f64,
    rate: f64,
    log_hr: [f64; 3],
    power_sums: [f64; 4],
    log_lik: f64,
    log_scale: [f64; 5],
}

impl CauseChain {
    fn new(cause: Cause, init: &ModelParams, stats: &ArmStatistics) -> Self {
        let k = cause.index();
        let shape = init.shape[k];
        let power_sums = stats.power_sums(shape);
        let log_lik = stats.cause_log_likelihood(cause, shape, init.rate[k], &init.log_hr[k], &power_sums);
        CauseChain {
            cause,
            shape,
            rate: init.rate[k],
            log_hr: init.log_hr[k],
            power_sums,
            log_lik,
            log_scale: [(0.5f64).ln(), (0.5f64).ln(), 0.0, 0.0, 0.0],
        }
    }

    fn update<R: Rng>(&mut self, p: usize, stats: &ArmStatistics, prior: &PriorConfig, rng: &mut R) -> bool {
        let step: f64 = rng.sample::<f64, _>(StandardNormal) * self.log_scale[p].exp();
        let log_u: f64 = rng.random::<f64>().ln();
        match p {
            0 => {
                let proposal = self.shape * step.exp();
                if !(proposal > 0.0 && proposal.is_finite()) {
                    return false;
                }
                let sums = stats.power_sums(proposal);
                let ll = stats.cause_log_likelihood(self.cause, proposal, self.rate, &self.log_hr, &sums);
                let delta = ll - self.log_lik + prior.ln_gamma_density(proposal) - prior.ln_gamma_density(self.shape) + step;
                if log_u < delta {
                    self.shape = proposal;
                    self.power_sums = sums;
                    self.log_lik = ll;
                    return true;
                }
                false
            }
            1 => {
                let proposal = self.rate * step.exp();
                if !(proposal > 0.0 && proposal.is_finite()) {
                    return false;
                }
                let ll = stats.cause_log_likelihood(self.cause, self.shape, proposal, &self.log_hr, &self.power_sums);
                let delta = ll - self.log_lik + prior.ln_gamma_density(proposal) - prior.ln_gamma_density(self.rate) + step;
                if log_u < delta {
                    self.rate = proposal;
                    self.log_lik = ll;
                    return true;
                }
                false
            }
            _ => {
                let l = p - 2;
                let mut g = self.log_hr;
                g[l] += step;
                let ll = stats.cause_log_likelihood(self.cause, self.shape, self.rate, &g, &self.power_sums);
                let delta = ll - self.log_lik + prior.ln_normal_density(g[l]) - prior.ln_normal_density(self.log_hr[l]);
                if log_u < delta {
                    self.log_hr = g;
                    self.log_lik = ll;
                    return true;
                }
                false
            }
        }
    }
}

/// Batch acceptance bookkeeping and Robbins–Monro style scale updates.
struct Tuner {
    n_burn: usize,
    window: usize,
    target: f64,
    batch: [usize; 10],
    batches_done: usize,
    kept: [usize; 10],
    kept_iters: usize,
}

impl Tuner {
    fn new(cfg: &McmcConfig) -> Self {
        Tuner {
            n_burn: cfg.n_burn,
            window: cfg.adapt_window,
            target: cfg.target_accept,
            batch: [0; 10],
            batches_done: 0,
            kept: [0; 10],
            kept_iters: 0,
        }
    }

    fn record(&mut self, j: usize, accepted: bool, iter: usize) {
        if accepted {
            if iter < self.n_burn {
                self.batch[j] += 1;
            } else {
                self.kept[j] += 1;
            }
        }
    }

    /// Returns log-scale increments at the end of each burn-in batch.
    fn end_iteration(&mut self, iter: usize) -> Option<[f64; 10]> {
        if iter >= self.n_burn {
            self.kept_iters += 1;
            return None;
        }
        if (iter + 1) % self.window != 0 {
            return None;
        }
        self.batches_done += 1;
        let gain = 1.0 / (self.batches_done as f64).sqrt();
        let mut adjust = [0.0; 10];
        for j in 0..10 {
            let rate = self.batch[j] as f64 / self.window as f64;
            adjust[j] = gain * (rate - self.target) * 2.0;
            self.batch[j] = 0;
        }
        Some(adjust)
    }

    fn accept_rates(&self) -> [f64; 10] {
        let n = self.kept_iters.max(1) as f64;
        self.kept.map(|k| k as f64 / n)
    }
}

/// Per-coordinate posterior summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinateSummary {
    pub name: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub ess: f64,
    /// Monte-Carlo standard error of the mean, `sd / sqrt(ess)`.
    pub mcse: f64,
    pub accept_rate: f64,
}

pub fn diagnostics(draws: &PosteriorDraws) -> Result<Vec<CoordinateSummary>> {
    if draws.is_empty() {
        return Err(Error::EmptyDraws);
    }
    Ok((0..10)
        .map(|j| {
            let series = draws.coordinate(j);
            let (mean, sd) = mean_sd(&series);
            let ess = effective_sample_size(&series);
            CoordinateSummary {
                name: COORDINATE_NAMES[j],
                mean,
                sd,
                ess,
                mcse: sd / ess.sqrt(),
                accept_rate: draws.accept_rates[j],
            }
        })
        .collect())
}

pub fn mean_sd(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = if series.len() > 1 {
        series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Effective sample size from Geyer's initial monotone sequence of summed
/// autocorrelation pairs. A zero-variance series is reported as having
/// ESS equal to its length.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let acov = |lag: usize| -> f64 { centered[..n - lag].iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64 };
    let var = acov(0);
    if var <= 0.0 {
        return n as f64;
    }
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (acov(2 * m) + acov(2 * m + 1)) / var;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        m += 1;
    }
    n as f64 / tau.max(1.0 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_posterior, Arm};
    use approx::assert_relative_eq;
    use rand_distr::Distribution;

    fn small_data() -> Vec<PatientRecord> {
        vec![
            PatientRecord::new(Arm::RE_STANDARD, 0.4, Some(Cause::Progression)),
            PatientRecord::new(Arm::RE_HIGH, 0.8, Some(Cause::Complication)),
            PatientRecord::new(Arm::SE_LOW, 1.0, None),
            PatientRecord::new(Arm::SE_STANDARD, 0.3, Some(Cause::Progression)),
            PatientRecord::new(Arm::SE_STANDARD, 0.6, None),
        ]
    }

    #[test]
    fn sufficient_statistics_match_direct_likelihood() {
        let data = small_data();
        let stats = ArmStatistics::new(&data);
        let theta = ModelParams { shape: [1.3, 0.7], rate: [0.4, 1.9], log_hr: [[0.2, -0.3, 0.5], [1.0, -1.2, 0.1]] };
        let prior = PriorConfig::default();
        let direct = log_posterior(&data, &theta, &prior) - crate::model::log_prior(&theta, &prior);
        assert_relative_eq!(stats.log_likelihood(&theta), direct, max_relative = 1e-12);
    }

    #[test]
    fn draw_count_follows_config() {
        let cfg = McmcConfig { n_iter: 530, n_burn: 100, thin: 7, ..Default::default() };
        let d = sample_posterior(&small_data(), &PriorConfig::default(), &cfg).unwrap();
        assert_eq!(d.len(), 430 / 7);
        assert_eq!(d.len(), cfg.n_draws());
        assert!(d.draws.iter().all(|t| t.in_support()));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = McmcConfig { n_iter: 600, n_burn: 300, seed: 99, ..Default::default() };
        let a = sample_posterior(&small_data(), &PriorConfig::default(), &cfg).unwrap();
        let b = sample_posterior(&small_data(), &PriorConfig::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample_posterior(&small_data(), &PriorConfig::default(), &McmcConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn rejects_bad_init_and_config() {
        let mut cfg = McmcConfig::default();
        cfg.init.rate[1] = 0.0;
        assert!(matches!(sample_posterior(&[], &PriorConfig::default(), &cfg), Err(Error::OutsideSupport)));
        let cfg = McmcConfig { n_burn: 4000, ..Default::default() };
        assert!(sample_posterior(&[], &PriorConfig::default(), &cfg).is_err());
        let cfg = McmcConfig { thin: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn ess_of_constant_chain_is_length() {
        let series = vec![2.5; 500];
        assert_eq!(effective_sample_size(&series), 500.0);
        let d = PosteriorDraws::from_draws(vec![ModelParams::default(); 300]);
        let diag = diagnostics(&d).unwrap();
        assert!(diag.iter().all(|c| c.ess == 300.0 && c.sd == 0.0));
    }

    #[test]
    fn ess_of_iid_normal_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let series: Vec<f64> = (0..4000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ess = effective_sample_size(&series);
        assert!((3000.0..=5000.0).contains(&ess), "ess = {ess}");
    }

    #[test]
    fn ess_detects_autocorrelation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = 0.0;
        let series: Vec<f64> = (0..5000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = 0.9 * x + e;
                x
            })
            .collect();
        // AR(1) with φ = 0.9: n·(1−φ)/(1+φ) ≈ 263.
        let ess = effective_sample_size(&series);
        assert!((150.0..450.0).contains(&ess), "ess = {ess}");
    }

    #[test]
    fn empty_draws_rejected() {
        assert!(matches!(diagnostics(&PosteriorDraws::from_draws(vec![])), Err(Error::EmptyDraws)));
    }

    #[test]
    fn prior_chain_acceptance_is_tuned() {
        let cfg = McmcConfig { n_iter: 6000, n_burn: 3000, seed: 3, ..Default::default() };
        let d = sample_posterior(&[], &PriorConfig::default(), &cfg).unwrap();
        for (j, r) in d.accept_rates.iter().enumerate() {
            assert!(*r > 0.1 && *r < 0.6, "{} accept {r}", COORDINATE_NAMES[j]);
        }
    }

    #[test]
    fn cause_chain_ignores_other_cause_parameters() {
        let cfg = McmcConfig { n_iter: 400, n_burn: 200, seed: 5, ..Default::default() };
        let mut cfg2 = cfg;
        cfg2.init.shape[1] = 3.0;
        cfg2.init.log_hr[1] = [4.0, 4.0, 4.0];
        let a = sample_cause_posterior(&small_data(), &PriorConfig::default(), &cfg, Cause::Progression).unwrap();
        let b = sample_cause_posterior(&small_data(), &PriorConfig::default(), &cfg2, Cause::Progression).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chain_table_has_header_and_rows() {
        let cfg = McmcConfig { n_iter: 20, n_burn: 10, ..Default::default() };
        let d = sample_posterior(&[], &PriorConfig::default(), &cfg).unwrap();
        let mut buf = Vec::new();
        d.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 11);
        assert!(lines[0].starts_with("alpha1\talpha2\tbeta1"));
        assert_eq!(lines[1].split('\t').count(), 10);
    }
}
