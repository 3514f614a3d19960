//! Conservative sequential P-value for one (winner, loser) pair.
//!
//! Conditional on the attained sample size, a Bernoulli sample is a simple
//! random sample, so the probability of the observed counts `(b_w, b_l, b_u)`
//! is a ratio of falling factorials. The null `N_w <= N_l` is least favourable
//! at `N_w = N_l = x`; the nuisance `x` is maximised over the integers in
//! `[max(b_w, b_l), floor((N - b_u) / 2)]`, and the alternative is the
//! reported tally. All arithmetic is a term-by-term sum of logarithms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("nuisance value {x} is outside the null support for {tally} with N = {n_total}")]
    Domain {
        x: u64,
        tally: SampleTally,
        n_total: u64,
    },
    #[error("no null population with N = {n_total} is consistent with {tally}")]
    InfeasibleNull { tally: SampleTally, n_total: u64 },
    #[error("reported winner must lead the loser, got v_w = {v_w}, v_l = {v_l}")]
    NoReportedMargin { v_w: u64, v_l: u64 },
    #[error("reported counts sum to {sum} but the total is {n_total}")]
    InconsistentReport { sum: u64, n_total: u64 },
    #[error("no tallies supplied for pair {0}")]
    MissingPair(Pair),
    #[error("risk limit {0} is outside (0, 1)")]
    RiskLimit(f64),
}

/// Reported ballots for the winner only, the loser only, and everything else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "ReportedRepr", into = "ReportedRepr")]
pub struct ReportedTallies {
    v_w: u64,
    v_l: u64,
    v_u: u64,
}

#[derive(Serialize, Deserialize)]
struct ReportedRepr {
    v_w: u64,
    v_l: u64,
    v_u: u64,
    n_total: u64,
}

impl ReportedTallies {
    pub fn new(v_w: u64, v_l: u64, v_u: u64) -> Result<Self, RiskError> {
        if v_w <= v_l {
            return Err(RiskError::NoReportedMargin { v_w, v_l });
        }
        Ok(Self { v_w, v_l, v_u })
    }

    /// Two-candidate contest with every ballot valid for one of them.
    pub fn two_candidate(v_w: u64, v_l: u64) -> Result<Self, RiskError> {
        Self::new(v_w, v_l, 0)
    }

    pub fn v_w(&self) -> u64 {
        self.v_w
    }

    pub fn v_l(&self) -> u64 {
        self.v_l
    }

    pub fn v_u(&self) -> u64 {
        self.v_u
    }

    pub fn n_total(&self) -> u64 {
        self.v_w + self.v_l + self.v_u
    }

    /// `(v_w - v_l) / (v_w + v_l)`.
    pub fn margin<F: Scalar>(&self) -> F {
        F::from_count(self.v_w - self.v_l) / F::from_count(self.v_w + self.v_l)
    }
}

impl TryFrom<ReportedRepr> for ReportedTallies {
    type Error = RiskError;

    fn try_from(r: ReportedRepr) -> Result<Self, Self::Error> {
        let sum = r.v_w + r.v_l + r.v_u;
        if sum != r.n_total {
            return Err(RiskError::InconsistentReport {
                sum,
                n_total: r.n_total,
            });
        }
        Self::new(r.v_w, r.v_l, r.v_u)
    }
}

impl From<ReportedTallies> for ReportedRepr {
    fn from(t: ReportedTallies) -> Self {
        ReportedRepr {
            v_w: t.v_w,
            v_l: t.v_l,
            v_u: t.v_u,
            n_total: t.n_total(),
        }
    }
}

/// Audited counts for one pair, cumulative over rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleTally {
    pub b_w: u64,
    pub b_l: u64,
    pub b_u: u64,
}

impl SampleTally {
    pub fn new(b_w: u64, b_l: u64, b_u: u64) -> Self {
        Self { b_w, b_l, b_u }
    }

    /// Total ballots sampled.
    pub fn b(&self) -> u64 {
        self.b_w + self.b_l + self.b_u
    }

    /// Integer support of the nuisance parameter, if nonempty.
    pub fn nuisance_range(&self, n_total: u64) -> Option<(u64, u64)> {
        let lo = self.b_w.max(self.b_l);
        let hi = n_total.checked_sub(self.b_u)? / 2;
        (lo <= hi).then_some((lo, hi))
    }
}

impl fmt::Display for SampleTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(b_w={}, b_l={}, b_u={})", self.b_w, self.b_l, self.b_u)
    }
}

/// Outcome of the risk calculation for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RiskResult<F> {
    /// Maximising nuisance value; absent when no maximisation was needed.
    pub x_star: Option<u64>,
    /// Natural log of the uncapped P-value; `null` in JSON when `-inf`.
    #[serde(with = "log_value")]
    pub log_p: F,
    pub p_value: F,
    /// The sample contradicts the reported counts.
    pub anomaly: bool,
}

impl<F: Scalar> RiskResult<F> {
    fn no_evidence(anomaly: bool) -> Self {
        Self {
            x_star: None,
            log_p: F::zero(),
            p_value: F::one(),
            anomaly,
        }
    }
}

mod log_value {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::scalar::Scalar;

    pub fn serialize<F: Scalar, S: Serializer>(v: &F, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, F: Scalar, D: Deserializer<'de>>(d: D) -> Result<F, D::Error> {
        Ok(Option::<F>::deserialize(d)?.unwrap_or_else(F::neg_infinity))
    }
}

/// `sum_{i < count} ln(top - i)`, or `-inf` when a factor is nonpositive.
fn log_falling<F: Scalar>(top: u64, count: u64) -> F {
    if count > top {
        return F::neg_infinity();
    }
    (0..count).fold(F::zero(), |acc, i| acc + F::from_count(top - i).ln())
}

fn recip_falling<F: Scalar>(top: u64, count: u64) -> F {
    (0..count).fold(F::zero(), |acc, i| acc + F::from_count(top - i).recip())
}

/// Log null likelihood (up to a constant) at nuisance value `x`:
/// `f(x) = sum ln(x - i) [b_w terms] + sum ln(x - i) [b_l terms]
///        + sum ln(N - 2x - i) [b_u terms]`.
pub fn log_null_likelihood<F: Scalar>(
    x: u64,
    tally: &SampleTally,
    n_total: u64,
) -> Result<F, RiskError> {
    let rest = x.checked_mul(2).and_then(|d| n_total.checked_sub(d));
    match rest {
        Some(rest) if x >= tally.b_w.max(tally.b_l) && rest >= tally.b_u => Ok(
            log_falling::<F>(x, tally.b_w)
                + log_falling::<F>(x, tally.b_l)
                + log_falling::<F>(rest, tally.b_u),
        ),
        _ => Err(RiskError::Domain {
            x,
            tally: *tally,
            n_total,
        }),
    }
}

// f'(x); finite everywhere on the nuisance range.
fn log_null_slope<F: Scalar>(x: u64, tally: &SampleTally, n_total: u64) -> F {
    let rest = n_total - 2 * x;
    recip_falling::<F>(x, tally.b_w) + recip_falling::<F>(x, tally.b_l)
        - F::lit(2.0) * recip_falling::<F>(rest, tally.b_u)
}

/// Integer maximiser of [`log_null_likelihood`] over the nuisance range.
///
/// `f` is strictly concave, so either the slope keeps one sign and an
/// endpoint wins, or the integer maximiser brackets the unique stationary
/// point. Equal values resolve to the smaller integer.
pub fn optimal_nuisance<F: Scalar>(tally: &SampleTally, n_total: u64) -> Result<u64, RiskError> {
    let (lo, hi) = tally
        .nuisance_range(n_total)
        .ok_or(RiskError::InfeasibleNull {
            tally: *tally,
            n_total,
        })?;
    if lo == hi {
        return Ok(lo);
    }
    let f = |x| log_null_likelihood::<F>(x, tally, n_total).expect("x within nuisance range");
    // Values equal up to rounding count as a tie.
    let better = |a: u64, b: u64| {
        let (fa, fb) = (f(a), f(b));
        let tol = F::epsilon() * F::lit(8.0) * fa.abs().max(fb.abs()).max(F::one());
        if fb > fa + tol {
            b
        } else {
            a
        }
    };

    let slope = |x| log_null_slope::<F>(x, tally, n_total);
    if slope(lo) <= F::zero() || slope(hi) >= F::zero() {
        return Ok(better(lo, hi));
    }

    // slope(a) > 0 > slope(b)
    let (mut a, mut b) = (lo, hi);
    while b - a > 1 {
        let mid = a + (b - a) / 2;
        if slope(mid) >= F::zero() {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(better(a, b))
}

/// Conservative P-value for `N_w <= N_l` against the reported tallies,
/// with `N` taken as the reported total.
///
/// * counts exceeding the reported counts flag an anomaly with `P = 1`;
/// * `b_l >= b_w` carries no evidence against the null, `P = 1`;
/// * if no null population of size `N` could produce the sample, `P = 0`.
pub fn p_value<F: Scalar>(tally: &SampleTally, reported: &ReportedTallies) -> RiskResult<F> {
    let anomaly =
        tally.b_w > reported.v_w || tally.b_l > reported.v_l || tally.b_u > reported.v_u;
    if anomaly {
        return RiskResult::no_evidence(true);
    }
    if tally.b_l >= tally.b_w {
        return RiskResult::no_evidence(false);
    }
    let n_total = reported.n_total();
    let x_star = match optimal_nuisance::<F>(tally, n_total) {
        Ok(x) => x,
        Err(_) => {
            return RiskResult {
                x_star: None,
                log_p: F::neg_infinity(),
                p_value: F::zero(),
                anomaly: false,
            }
        }
    };
    let log_null = log_null_likelihood::<F>(x_star, tally, n_total).expect("x_star in range");
    let log_alt = log_falling::<F>(reported.v_w, tally.b_w)
        + log_falling::<F>(reported.v_l, tally.b_l)
        + log_falling::<F>(reported.v_u, tally.b_u);
    let log_p = log_null - log_alt;
    RiskResult {
        x_star: Some(x_star),
        log_p,
        p_value: log_p.exp().min(F::one()),
        anomaly: false,
    }
}

/// Ordered (reported winner, reported loser).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pair {
    pub winner: String,
    pub loser: String,
}

impl Pair {
    pub fn new(winner: impl Into<String>, loser: impl Into<String>) -> Self {
        Self {
            winner: winner.into(),
            loser: loser.into(),
        }
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} > {}", self.winner, self.loser)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairData {
    pub tally: SampleTally,
    pub reported: ReportedTallies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct PairRisk<F> {
    pub pair: Pair,
    pub result: RiskResult<F>,
}

/// Every pair's result and the contest's attained risk (the largest P-value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct ContestRisk<F> {
    pub pairs: Vec<PairRisk<F>>,
    pub max_p_value: F,
}

impl<F: Scalar> ContestRisk<F> {
    pub fn any_anomaly(&self) -> bool {
        self.pairs.iter().any(|p| p.result.anomaly)
    }
}

/// Per-pair P-values for a contest. No multiplicity adjustment is needed:
/// the contest is confirmed only if every pair is.
pub fn pair_matrix_p_values<F: Scalar>(
    pairs: &[Pair],
    data: &BTreeMap<Pair, PairData>,
) -> Result<ContestRisk<F>, RiskError> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut max_p = F::zero();
    for pair in pairs {
        let d = data
            .get(pair)
            .ok_or_else(|| RiskError::MissingPair(pair.clone()))?;
        let result = p_value::<F>(&d.tally, &d.reported);
        max_p = max_p.max(result.p_value);
        out.push(PairRisk {
            pair: pair.clone(),
            result,
        });
    }
    if out.is_empty() {
        max_p = F::one();
    }
    Ok(ContestRisk {
        pairs: out,
        max_p_value: max_p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Confirm,
    Escalate,
}

fn check_alpha<F: Scalar>(alpha: F) -> Result<(), RiskError> {
    if alpha > F::zero() && alpha < F::one() {
        Ok(())
    } else {
        Err(RiskError::RiskLimit(alpha.to_f64().unwrap_or(f64::NAN)))
    }
}

/// Confirm when the attained risk is at most `alpha`.
pub fn audit_decision<F: Scalar>(risk: F, alpha: F) -> Result<Decision, RiskError> {
    check_alpha(alpha)?;
    Ok(if risk <= alpha {
        Decision::Confirm
    } else {
        Decision::Escalate
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatchedDecision {
    pub decision: Decision,
    /// First round (0-based) whose cumulative P-value met the limit.
    pub confirmed_round: Option<usize>,
}

/// Decision over a history of per-round attained risks: once any round meets
/// the limit the contest stays confirmed.
pub fn latched_decision<F: Scalar>(history: &[F], alpha: F) -> Result<LatchedDecision, RiskError> {
    check_alpha(alpha)?;
    let confirmed_round = history.iter().position(|&p| p <= alpha);
    Ok(LatchedDecision {
        decision: if confirmed_round.is_some() {
            Decision::Confirm
        } else {
            Decision::Escalate
        },
        confirmed_round,
    })
}
