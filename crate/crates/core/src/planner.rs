//! Choosing an initial sampling rate.
//!
//! The closed-form average sample number of a with-replacement ballot-polling
//! audit gives a quick rule of thumb; Monte-Carlo power of a single Bernoulli
//! round gives the rate needed for a target chance of stopping without
//! escalation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampler::SamplingRate;
use crate::scalar::Scalar;
use crate::simulator::{trial_rng, BbpTrial, SimulationError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlanError {
    #[error("risk limit {0} is outside (0, 1)")]
    Alpha(f64),
    #[error("margin {0} is outside (0, 1]")]
    Margin(f64),
    #[error("invalid-vote fraction {0} is outside [0, 1)")]
    InvalidFraction(f64),
    #[error("target power {0} is outside (0, 1)")]
    TargetPower(f64),
    #[error("ASN multiplier {0} is below 1")]
    Multiplier(f64),
    #[error("contest size must be positive")]
    EmptyContest,
    #[error("at least one trial is required")]
    NoTrials,
    #[error(transparent)]
    Simulation(#[from] SimulationError),
}

fn f64_of<F: Scalar>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn check_alpha<F: Scalar>(alpha: F) -> Result<(), PlanError> {
    if alpha > F::zero() && alpha < F::one() {
        Ok(())
    } else {
        Err(PlanError::Alpha(f64_of(alpha)))
    }
}

fn check_margin<F: Scalar>(margin: F) -> Result<(), PlanError> {
    if margin > F::zero() && margin <= F::one() {
        Ok(())
    } else {
        Err(PlanError::Margin(f64_of(margin)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PlanParams<F> {
    pub alpha: F,
    /// `(V_w - V_l) / (V_w + V_l)`.
    pub margin: F,
    /// Fraction of ballots with no valid vote for exactly one of the pair.
    pub invalid_fraction: F,
    pub n_total: u64,
    pub target_power: F,
    pub asn_multiplier: F,
}

impl<F: Scalar> PlanParams<F> {
    pub fn validate(&self) -> Result<(), PlanError> {
        check_alpha(self.alpha)?;
        check_margin(self.margin)?;
        if !(self.invalid_fraction >= F::zero() && self.invalid_fraction < F::one()) {
            return Err(PlanError::InvalidFraction(f64_of(self.invalid_fraction)));
        }
        if self.n_total == 0 {
            return Err(PlanError::EmptyContest);
        }
        if !(self.target_power > F::zero() && self.target_power < F::one()) {
            return Err(PlanError::TargetPower(f64_of(self.target_power)));
        }
        if self.asn_multiplier.is_nan() || self.asn_multiplier < F::one() {
            return Err(PlanError::Multiplier(f64_of(self.asn_multiplier)));
        }
        Ok(())
    }
}

/// Average sample number `2 ln(1/alpha) / m^2`.
pub fn asn<F: Scalar>(alpha: F, margin: F) -> Result<F, PlanError> {
    check_alpha(alpha)?;
    check_margin(margin)?;
    Ok(F::lit(2.0) * alpha.recip().ln() / (margin * margin))
}

/// `min(1, multiplier * ASN / ((1 - r) N))`.
pub fn initial_rate<F: Scalar>(params: &PlanParams<F>) -> Result<SamplingRate<F>, PlanError> {
    params.validate()?;
    let draws = params.asn_multiplier * asn(params.alpha, params.margin)?;
    let valid = (F::one() - params.invalid_fraction) * F::from_count(params.n_total);
    let rate = (draws / valid).min(F::one());
    Ok(SamplingRate::new(rate).expect("rate within [0, 1]"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PowerEstimate<F> {
    pub power: F,
    /// Binomial standard error of `power`.
    pub std_error: F,
    pub trials: u64,
}

/// Two-candidate population of `n_total` valid ballots with winner share
/// `(1 + margin) / 2`, reported correctly.
pub fn two_candidate_share<F: Scalar>(margin: F) -> F {
    (F::one() + margin) / F::lit(2.0)
}

/// Chance that one Bernoulli round at `rate` confirms a correctly reported
/// two-candidate contest.
///
/// Trial `t` draws from a stream fixed by `(seed, t)`, so estimates at
/// different rates share random numbers.
pub fn simulate_power<F: Scalar>(
    n_total: u64,
    margin: F,
    rate: SamplingRate<F>,
    alpha: F,
    trials: u64,
    seed: u64,
) -> Result<PowerEstimate<F>, PlanError> {
    check_alpha(alpha)?;
    check_margin(margin)?;
    if trials == 0 {
        return Err(PlanError::NoTrials);
    }
    let trial = BbpTrial::new(n_total, two_candidate_share(margin), None, vec![rate], alpha)?;
    let confirmed = (0..trials)
        .filter(|&t| trial.run(&mut trial_rng(seed, t)).confirmed)
        .count() as u64;
    let power = F::from_count(confirmed) / F::from_count(trials);
    let std_error = (power * (F::one() - power) / F::from_count(trials)).sqrt();
    Ok(PowerEstimate {
        power,
        std_error,
        trials,
    })
}

/// Default bracket width for [`rate_for_power`]: a quarter of a percentage
/// point.
pub const RATE_TOLERANCE: f64 = 0.0025;

/// Smallest rate (to within [`RATE_TOLERANCE`], rounded up) whose simulated
/// power reaches `target_power`.
pub fn rate_for_power<F: Scalar>(
    n_total: u64,
    margin: F,
    alpha: F,
    target_power: F,
    trials: u64,
    seed: u64,
) -> Result<SamplingRate<F>, PlanError> {
    rate_for_power_within(
        n_total,
        margin,
        alpha,
        target_power,
        trials,
        seed,
        F::lit(RATE_TOLERANCE),
    )
}

/// [`rate_for_power`] with an explicit bracket width.
///
/// The bracket starts at the ASN rate and doubles until the target is met,
/// then bisects; every evaluation reuses the same per-trial streams.
pub fn rate_for_power_within<F: Scalar>(
    n_total: u64,
    margin: F,
    alpha: F,
    target_power: F,
    trials: u64,
    seed: u64,
    tolerance: F,
) -> Result<SamplingRate<F>, PlanError> {
    if !(target_power > F::zero() && target_power < F::one()) {
        return Err(PlanError::TargetPower(f64_of(target_power)));
    }
    if n_total == 0 {
        return Err(PlanError::EmptyContest);
    }
    let meets = |p: F| -> Result<bool, PlanError> {
        let rate = SamplingRate::new(p).expect("bisection stays in [0, 1]");
        Ok(simulate_power(n_total, margin, rate, alpha, trials, seed)?.power >= target_power)
    };

    let start = (asn(alpha, margin)? / F::from_count(n_total)).min(F::one());
    let (mut lo, mut hi) = (F::zero(), start);
    while !meets(hi)? {
        if hi >= F::one() {
            return Ok(SamplingRate::one());
        }
        lo = hi;
        hi = (hi * F::lit(2.0)).min(F::one());
    }
    while hi - lo > tolerance {
        let mid = (lo + hi) / F::lit(2.0);
        if meets(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(SamplingRate::new(hi).expect("bisection stays in [0, 1]"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PlanParams<f64> {
        PlanParams {
            alpha: 0.05,
            margin: 0.1,
            invalid_fraction: 0.0,
            n_total: 599_146,
            target_power: 0.9,
            asn_multiplier: 1.0,
        }
    }

    #[test]
    fn asn_values() {
        let a = asn(0.05f64, 0.05).unwrap();
        assert!((a - 2396.58).abs() < 0.01, "{a}");
        let b = asn(0.05f64, 0.10).unwrap();
        assert!((b - 599.146).abs() < 0.001, "{b}");
        assert_eq!(asn(0.05, 1.0).unwrap(), 2.0 * 20f64.ln());
        assert!((asn(0.05f32, 0.05f32).unwrap() - 2396.58).abs() < 0.1);
        assert!(asn(0.0, 0.1).is_err());
        assert!(asn(0.05, 0.0).is_err());
        assert!(asn(0.05, 1.5).is_err());
    }

    #[test]
    fn asn_monotone() {
        let margins: Vec<f64> = (1..=100).map(|i| i as f64 / 100.0).collect();
        for w in margins.windows(2) {
            assert!(asn(0.05, w[0]).unwrap() > asn(0.05, w[1]).unwrap());
        }
        let alphas: Vec<f64> = (1..99).map(|i| i as f64 / 100.0).collect();
        for w in alphas.windows(2) {
            assert!(asn(w[0], 0.1).unwrap() > asn(w[1], 0.1).unwrap());
        }
    }

    #[test]
    fn initial_rate_examples() {
        let r = initial_rate(&params()).unwrap().get();
        assert!((r - 0.001).abs() < 1e-9, "{r}");
        let half = initial_rate(&PlanParams {
            invalid_fraction: 0.5,
            ..params()
        })
        .unwrap()
        .get();
        assert!((half - 2.0 * r).abs() < 1e-12);
        let capped = initial_rate(&PlanParams {
            n_total: 100,
            ..params()
        })
        .unwrap();
        assert_eq!(capped.get(), 1.0);
        assert!(initial_rate(&PlanParams {
            asn_multiplier: 0.5,
            ..params()
        })
        .is_err());
        assert!(initial_rate(&PlanParams {
            invalid_fraction: 1.0,
            ..params()
        })
        .is_err());
    }

    #[test]
    fn census_power_is_one() {
        let est = simulate_power(20_000, 0.02, SamplingRate::one(), 0.05, 50, 3).unwrap();
        assert_eq!(est.power, 1.0);
        assert_eq!(est.std_error, 0.0);
        assert!(simulate_power(20_000, 0.02, SamplingRate::one(), 0.05, 0, 3).is_err());
    }

    #[test]
    fn power_monotone_in_rate() {
        let rates = [0.002, 0.005, 0.01, 0.02, 0.04];
        let powers: Vec<f64> = rates
            .iter()
            .map(|&p| {
                simulate_power(100_000, 0.1, SamplingRate::new(p).unwrap(), 0.05, 300, 42)
                    .unwrap()
                    .power
            })
            .collect();
        for w in powers.windows(2) {
            // Common random numbers keep noise small; allow two standard errors.
            assert!(w[1] >= w[0] - 2.0 * (0.25f64 / 300.0).sqrt(), "{powers:?}");
        }
        assert!(powers[4] > powers[0]);
    }
}
