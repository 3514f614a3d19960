//! Bernoulli ballot-polling risk-limiting audits.
//!
//! * [`prng`]: SHA-256 counter-mode uniforms from a 20-digit dice seed.
//! * [`sampler`]: geometric skipping within ordered bundles, multi-round rates.
//! * [`risk`]: conservative P-values with the nuisance parameter maximised.
//! * [`planner`]: ASN heuristic and simulated power for choosing rates.
//! * [`simulator`]: workload comparison against with-replacement polling.
//! * [`audit`]: audit state, ingestion, reports, escalation and persistence.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod audit;
pub mod planner;
pub mod prng;
pub mod risk;
pub mod sampler;
pub mod scalar;
pub mod simulator;

pub use prng::{DiceSeed, Generator};
pub use risk::{Decision, Pair, ReportedTallies, SampleTally};
pub use sampler::SkipSequence;
pub use scalar::Scalar;

pub type SamplingRate = sampler::SamplingRate<f64>;
pub type SamplingRate32 = sampler::SamplingRate<f32>;
pub type RoundPlan = sampler::RoundPlan<f64>;
pub type RoundPlan32 = sampler::RoundPlan<f32>;
pub type RiskResult = risk::RiskResult<f64>;
pub type RiskResult32 = risk::RiskResult<f32>;
pub type ContestRisk = risk::ContestRisk<f64>;
pub type PlanParams = planner::PlanParams<f64>;
pub type PlanParams32 = planner::PlanParams<f32>;
pub type PowerEstimate = planner::PowerEstimate<f64>;
pub type TrialOutcome = simulator::TrialOutcome;
