//! Running an audit: configuration, bundle registry, skip-sequence issue,
//! interpretation ingestion, risk reports, escalation and persistence.
//!
//! No ballot manifest is needed. A bundle's first worksheet can be issued
//! against an upper bound on its size; once the stack has been walked and its
//! count recorded, the sequence is cut to the real size, which is the same
//! walk the generator would have produced with the count known up front.
//! Round `k` of a bundle continues the bundle's stream where round `k - 1`
//! stopped.

mod config;
mod persist;
mod records;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{AuditConfig, Contest, SeedPolicy, OTHER, POOLED_LOSERS};
pub use persist::{export_state, import_state};
pub use records::{read_interpretations_csv, write_interpretations_csv, InterpretationRecord, CSV_HEADER};

use crate::prng::{DiceSeed, Generator};
use crate::risk::{self, ContestRisk, Decision, Pair, PairData, SampleTally};
use crate::sampler::{self, compose_rates, SamplingRate, SkipSequence};

pub const SCHEMA_VERSION: u32 = 1;

/// Each bundle sharing a seed gets its own block of `2^32` counter values.
const COUNTER_STRIDE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AuditError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("audit {0} already exists")]
    DuplicateAudit(String),
    #[error("unknown audit {0}")]
    UnknownAudit(String),
    #[error("bundle {0} is already registered")]
    DuplicateBundle(String),
    #[error("unknown bundle {0}")]
    UnknownBundle(String),
    #[error("invalid bundle registration: {0}")]
    InvalidBundle(String),
    #[error("round {round} is beyond the {planned} planned round(s); escalate to add a round")]
    RoundOutOfRange { round: u32, planned: usize },
    #[error("bundle {bundle_id} has no final sequence for round {round} yet")]
    PreviousRound { bundle_id: String, round: u32 },
    #[error("size of bundle {0} is unknown; record its count or give a horizon")]
    BundleSizeUnknown(String),
    #[error("bundle {bundle_id}: {message}")]
    BundleCount { bundle_id: String, message: String },
    #[error("no skip sequence has been issued")]
    NoRoundIssued,
    #[error("escalation rate {0} is outside (0, 1]")]
    EscalationRate(f64),
    #[error("{0}")]
    Csv(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema version mismatch: expected {expected}, found {found:?}")]
    SchemaMismatch { expected: u32, found: Option<u64> },
    #[error(transparent)]
    Sampling(#[from] sampler::SamplingError),
}

impl AuditError {
    /// Short machine-readable class for API clients.
    pub fn code(&self) -> &'static str {
        match self {
            AuditError::UnknownAudit(_) | AuditError::UnknownBundle(_) => "not_found",
            AuditError::DuplicateAudit(_) | AuditError::DuplicateBundle(_) => "conflict",
            AuditError::Parse { .. } | AuditError::Csv(_) => "parse_error",
            AuditError::SchemaMismatch { .. } => "schema_mismatch",
            AuditError::RoundOutOfRange { .. }
            | AuditError::PreviousRound { .. }
            | AuditError::BundleSizeUnknown(_)
            | AuditError::NoRoundIssued => "precondition_failed",
            _ => "validation_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    pub bundle_id: String,
    pub site_id: String,
    pub seed: DiceSeed,
    /// First counter value of this bundle's stream.
    pub counter_base: u64,
    /// Ballots found in the stack, recorded after sampling.
    #[serde(default)]
    pub count_observed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleRegistration {
    pub bundle_id: String,
    pub site_id: String,
    /// Required under the per-site policy, absent under the central one.
    #[serde(default)]
    pub seed: Option<DiceSeed>,
    #[serde(default)]
    pub count: Option<u64>,
}

/// A worksheet handed to a site for one bundle and round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedSequence {
    pub bundle_id: String,
    pub round: u32,
    pub rate: f64,
    pub counter_start: u64,
    pub sequence: SkipSequence,
    /// Positions not selected in any earlier round; these are pulled.
    pub new_positions: Vec<u64>,
    /// Issued against a size bound before the bundle was counted.
    pub provisional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContestStatus {
    Open,
    Confirmed,
    FullCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRisk {
    pub round: u32,
    /// Attained risk (largest pair P-value) per contest.
    pub contest_risk: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum RejectReason {
    WrongAudit(String),
    UnknownContest(String),
    UnknownBundle(String),
    RoundNotIssued(u32),
    PositionNotSelected(u64),
    UnknownInterpretation(String),
    Duplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::WrongAudit(a) => write!(f, "record belongs to audit {a}"),
            RejectReason::UnknownContest(c) => write!(f, "unknown contest {c}"),
            RejectReason::UnknownBundle(b) => write!(f, "unknown bundle {b}"),
            RejectReason::RoundNotIssued(r) => write!(f, "no sequence issued for round {r}"),
            RejectReason::PositionNotSelected(p) => {
                write!(f, "position {p} was not selected in that round")
            }
            RejectReason::UnknownInterpretation(i) => {
                write!(f, "{i:?} is neither a candidate nor \"other\"")
            }
            RejectReason::Duplicate => write!(f, "ballot already interpreted for this contest"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    /// Index of the record in the submitted batch.
    pub index: usize,
    pub record: InterpretationRecord,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub applied: usize,
    pub rejected: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pair: Pair,
    pub x_star: Option<u64>,
    /// `null` when the null hypothesis is excluded outright.
    pub log_p: Option<f64>,
    pub p_value: f64,
    pub anomaly: bool,
    pub decision: Decision,
    pub tally: SampleTally,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestReport {
    pub contest_id: String,
    pub status: ContestStatus,
    pub risk: f64,
    pub decision: Decision,
    pub full_count_recommended: bool,
    pub ballots_interpreted: u64,
    pub pairs: Vec<PairReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub audit_id: String,
    pub round: u32,
    pub alpha: f64,
    pub effective_rate: f64,
    /// Source of `N` in the P-value.
    pub n_basis: String,
    pub contests: Vec<ContestReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationPlan {
    pub round: Option<u32>,
    pub rate: f64,
    pub effective_rate: f64,
    pub instructions: Vec<IssuedSequence>,
    pub notice: Option<String>,
}

/// The persistent audit ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditState {
    pub schema_version: u32,
    pub config: AuditConfig,
    #[serde(default)]
    pub bundles: Vec<Bundle>,
    #[serde(default)]
    pub sequences: Vec<IssuedSequence>,
    #[serde(default)]
    pub interpretations: Vec<InterpretationRecord>,
    #[serde(default)]
    pub history: Vec<RoundRisk>,
    pub status: BTreeMap<String, ContestStatus>,
}

impl AuditState {
    pub fn create_audit(config: AuditConfig) -> Result<Self, AuditError> {
        config.validate()?;
        let status = config
            .contests
            .iter()
            .map(|c| (c.contest_id.clone(), ContestStatus::Open))
            .collect();
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            config,
            bundles: Vec::new(),
            sequences: Vec::new(),
            interpretations: Vec::new(),
            history: Vec::new(),
            status,
        })
    }

    pub fn audit_id(&self) -> &str {
        &self.config.audit_id
    }

    pub fn bundle(&self, bundle_id: &str) -> Option<&Bundle> {
        self.bundles.iter().find(|b| b.bundle_id == bundle_id)
    }

    fn bundle_index(&self, bundle_id: &str) -> Result<usize, AuditError> {
        self.bundles
            .iter()
            .position(|b| b.bundle_id == bundle_id)
            .ok_or_else(|| AuditError::UnknownBundle(bundle_id.to_owned()))
    }

    pub fn sequence(&self, bundle_id: &str, round: u32) -> Option<&IssuedSequence> {
        self.sequences
            .iter()
            .find(|s| s.bundle_id == bundle_id && s.round == round)
    }

    pub fn add_bundle(&mut self, reg: BundleRegistration) -> Result<&Bundle, AuditError> {
        if reg.bundle_id.is_empty() {
            return Err(AuditError::InvalidBundle("bundle id is empty".into()));
        }
        if self.bundle(&reg.bundle_id).is_some() {
            return Err(AuditError::DuplicateBundle(reg.bundle_id));
        }
        if reg.count == Some(0) {
            return Err(AuditError::InvalidBundle("bundle count must be positive".into()));
        }
        let seed = match (self.config.seed_policy, reg.seed) {
            (SeedPolicy::PerSite, Some(seed)) => seed,
            (SeedPolicy::PerSite, None) => {
                return Err(AuditError::InvalidBundle(
                    "per-site seed policy needs a seed for every bundle".into(),
                ))
            }
            (SeedPolicy::Central, None) => self.config.central_seed.clone().expect("validated"),
            (SeedPolicy::Central, Some(_)) => {
                return Err(AuditError::InvalidBundle(
                    "central seed policy does not take bundle seeds".into(),
                ))
            }
        };
        let sharing = self.bundles.iter().filter(|b| b.seed == seed).count() as u64;
        self.bundles.push(Bundle {
            bundle_id: reg.bundle_id,
            site_id: reg.site_id,
            seed,
            counter_base: sharing * COUNTER_STRIDE,
            count_observed: reg.count,
        });
        Ok(self.bundles.last().expect("just pushed"))
    }

    fn selected_before(&self, bundle_id: &str, round: u32) -> BTreeSet<u64> {
        self.sequences
            .iter()
            .filter(|s| s.bundle_id == bundle_id && s.round < round)
            .flat_map(|s| s.new_positions.iter().copied())
            .collect()
    }

    /// Worksheet for `(bundle, round)`. Reissuing returns the stored sequence.
    ///
    /// `horizon` bounds the walk when the bundle has not been counted yet;
    /// only round 0 can be issued that way.
    pub fn issue_skip_sequence(
        &mut self,
        bundle_id: &str,
        round: u32,
        horizon: Option<u64>,
    ) -> Result<&IssuedSequence, AuditError> {
        let idx = self.bundle_index(bundle_id)?;
        if let Some(pos) = self
            .sequences
            .iter()
            .position(|s| s.bundle_id == bundle_id && s.round == round)
        {
            return Ok(&self.sequences[pos]);
        }
        let planned = self.config.round_rates.rounds();
        if round as usize >= planned {
            return Err(AuditError::RoundOutOfRange { round, planned });
        }
        let bundle = &self.bundles[idx];
        let mut counter_start = bundle.counter_base;
        for r in 0..round {
            match self.sequence(bundle_id, r) {
                Some(s) if !s.provisional => counter_start += s.sequence.draws,
                _ => {
                    return Err(AuditError::PreviousRound {
                        bundle_id: bundle_id.to_owned(),
                        round: r,
                    })
                }
            }
        }
        let (size, provisional) = match (bundle.count_observed, horizon) {
            (Some(n), _) => (n, false),
            (None, Some(h)) if h > 0 => (h, true),
            _ => return Err(AuditError::BundleSizeUnknown(bundle_id.to_owned())),
        };
        let rate = self.config.round_rates.rates[round as usize];
        let already = self.selected_before(bundle_id, round);
        let mut gen = Generator::at(bundle.seed.clone(), counter_start);
        let sample = sampler::sample_round_k(&mut gen, rate, size, &already)?;
        self.sequences.push(IssuedSequence {
            bundle_id: bundle_id.to_owned(),
            round,
            rate: rate.get(),
            counter_start,
            sequence: sample.sequence,
            new_positions: sample.new_positions.into_iter().collect(),
            provisional,
        });
        Ok(self.sequences.last().expect("just pushed"))
    }

    /// Record how many ballots the bundle held; provisional worksheets are cut
    /// to that size.
    pub fn record_bundle_count(&mut self, bundle_id: &str, count: u64) -> Result<&Bundle, AuditError> {
        let idx = self.bundle_index(bundle_id)?;
        let fail = |message: String| AuditError::BundleCount {
            bundle_id: bundle_id.to_owned(),
            message,
        };
        if count == 0 {
            return Err(fail("count must be positive".into()));
        }
        match self.bundles[idx].count_observed {
            Some(n) if n == count => return Ok(&self.bundles[idx]),
            Some(n) => return Err(fail(format!("count already recorded as {n}"))),
            None => {}
        }
        for s in self.sequences.iter().filter(|s| s.bundle_id == bundle_id && s.provisional) {
            if count > s.sequence.bundle_size {
                return Err(fail(format!(
                    "count {count} exceeds the worksheet horizon {}; the sheet must be reissued",
                    s.sequence.bundle_size
                )));
            }
        }
        if let Some(r) = self
            .interpretations
            .iter()
            .find(|r| r.bundle_id == bundle_id && r.position > count)
        {
            return Err(fail(format!("position {} was already interpreted", r.position)));
        }
        for s in self.sequences.iter_mut().filter(|s| s.bundle_id == bundle_id && s.provisional) {
            s.sequence = s.sequence.truncated(count);
            s.new_positions.retain(|&p| p <= count);
            s.provisional = false;
        }
        self.bundles[idx].count_observed = Some(count);
        Ok(&self.bundles[idx])
    }

    fn check_record(&self, rec: &InterpretationRecord) -> Result<(), RejectReason> {
        if let Some(a) = &rec.audit_id {
            if a != self.audit_id() {
                return Err(RejectReason::WrongAudit(a.clone()));
            }
        }
        let contest = self
            .config
            .contest(&rec.contest_id)
            .ok_or_else(|| RejectReason::UnknownContest(rec.contest_id.clone()))?;
        if self.bundle(&rec.bundle_id).is_none() {
            return Err(RejectReason::UnknownBundle(rec.bundle_id.clone()));
        }
        let seq = self
            .sequence(&rec.bundle_id, rec.round)
            .ok_or(RejectReason::RoundNotIssued(rec.round))?;
        if seq.new_positions.binary_search(&rec.position).is_err() {
            return Err(RejectReason::PositionNotSelected(rec.position));
        }
        if rec.interpretation != OTHER && !contest.candidates.contains(&rec.interpretation) {
            return Err(RejectReason::UnknownInterpretation(rec.interpretation.clone()));
        }
        Ok(())
    }

    /// Apply a batch; bad and duplicate records are rejected individually.
    pub fn ingest_interpretations(&mut self, records: Vec<InterpretationRecord>) -> IngestReport {
        let mut seen: BTreeSet<(String, u64, String)> = self
            .interpretations
            .iter()
            .map(|r| (r.bundle_id.clone(), r.position, r.contest_id.clone()))
            .collect();
        let mut applied = 0;
        let mut rejected = Vec::new();
        for (index, rec) in records.into_iter().enumerate() {
            let verdict = self.check_record(&rec).and_then(|()| {
                let key = (rec.bundle_id.clone(), rec.position, rec.contest_id.clone());
                if seen.insert(key) {
                    Ok(())
                } else {
                    Err(RejectReason::Duplicate)
                }
            });
            match verdict {
                Ok(()) => {
                    let mut rec = rec;
                    rec.audit_id = None;
                    self.interpretations.push(rec);
                    applied += 1;
                }
                Err(reason) => rejected.push(Rejection {
                    index,
                    record: rec,
                    reason,
                }),
            }
        }
        IngestReport { applied, rejected }
    }

    /// Cumulative tallies per pair for a contest.
    pub fn tallies(&self, contest: &Contest) -> BTreeMap<Pair, SampleTally> {
        let votes: Vec<&str> = self
            .interpretations
            .iter()
            .filter(|r| r.contest_id == contest.contest_id)
            .map(|r| r.interpretation.as_str())
            .collect();
        contest
            .pairs()
            .into_iter()
            .map(|pair| {
                let mut t = SampleTally::default();
                for &v in &votes {
                    if v == pair.winner {
                        t.b_w += 1;
                    } else if contest.is_loser_vote(&pair, v) {
                        t.b_l += 1;
                    } else {
                        t.b_u += 1;
                    }
                }
                (pair, t)
            })
            .collect()
    }

    /// Highest round with an issued sequence.
    pub fn current_round(&self) -> Option<u32> {
        self.sequences.iter().map(|s| s.round).max()
    }

    pub fn effective_rate(&self) -> f64 {
        let rounds = self.current_round().map_or(0, |r| r as usize + 1);
        self.config.round_rates.effective_rate_after(rounds).get()
    }

    /// P-values for every pair of every contest from the cumulative sample.
    /// Confirmation latches.
    pub fn compute_risk_report(&mut self) -> Result<RiskReport, AuditError> {
        let round = self.current_round().ok_or(AuditError::NoRoundIssued)?;
        let alpha = self.config.alpha;
        let mut contests = Vec::new();
        let mut round_risk = BTreeMap::new();
        for contest in &self.config.contests {
            let tallies = self.tallies(contest);
            let pairs = contest.pairs();
            let data: BTreeMap<Pair, PairData> = pairs
                .iter()
                .map(|p| {
                    Ok((
                        p.clone(),
                        PairData {
                            tally: tallies[p],
                            reported: contest.reported_tallies(p)?,
                        },
                    ))
                })
                .collect::<Result<_, AuditError>>()?;
            let risk: ContestRisk<f64> =
                risk::pair_matrix_p_values(&pairs, &data).expect("every pair has data");
            let decision = risk::audit_decision(risk.max_p_value, alpha).expect("alpha validated");
            let status = self.status.get_mut(&contest.contest_id).expect("status per contest");
            let anomaly = risk.any_anomaly();
            if *status != ContestStatus::Confirmed {
                if decision == Decision::Confirm {
                    *status = ContestStatus::Confirmed;
                } else if anomaly {
                    *status = ContestStatus::FullCount;
                }
            }
            round_risk.insert(contest.contest_id.clone(), risk.max_p_value);
            let pair_reports = risk
                .pairs
                .iter()
                .map(|pr| PairReport {
                    pair: pr.pair.clone(),
                    x_star: pr.result.x_star,
                    log_p: pr.result.log_p.is_finite().then_some(pr.result.log_p),
                    p_value: pr.result.p_value,
                    anomaly: pr.result.anomaly,
                    decision: risk::audit_decision(pr.result.p_value, alpha).expect("alpha validated"),
                    tally: data[&pr.pair].tally,
                })
                .collect();
            contests.push(ContestReport {
                contest_id: contest.contest_id.clone(),
                status: *status,
                risk: risk.max_p_value,
                decision: if *status == ContestStatus::Confirmed {
                    Decision::Confirm
                } else {
                    decision
                },
                full_count_recommended: anomaly && *status != ContestStatus::Confirmed,
                ballots_interpreted: self
                    .interpretations
                    .iter()
                    .filter(|r| r.contest_id == contest.contest_id)
                    .count() as u64,
                pairs: pair_reports,
            });
        }
        match self.history.iter_mut().find(|h| h.round == round) {
            Some(h) => h.contest_risk = round_risk,
            None => self.history.push(RoundRisk {
                round,
                contest_risk: round_risk,
            }),
        }
        Ok(RiskReport {
            audit_id: self.audit_id().to_owned(),
            round,
            alpha,
            effective_rate: self.effective_rate(),
            n_basis: "reported ballot total per contest".into(),
            contests,
        })
    }

    /// Add a round at `p_next` and issue its worksheets for every bundle.
    pub fn plan_escalation(&mut self, p_next: f64) -> Result<EscalationPlan, AuditError> {
        if !(p_next > 0.0 && p_next <= 1.0) {
            return Err(AuditError::EscalationRate(p_next));
        }
        if self.status.values().all(|&s| s == ContestStatus::Confirmed) {
            return Ok(EscalationPlan {
                round: None,
                rate: p_next,
                effective_rate: self.effective_rate(),
                instructions: Vec::new(),
                notice: Some("every contest is confirmed; no escalation needed".into()),
            });
        }
        let round = self.current_round().ok_or(AuditError::NoRoundIssued)? + 1;
        if let Some(b) = self.bundles.iter().find(|b| b.count_observed.is_none()) {
            return Err(AuditError::BundleSizeUnknown(b.bundle_id.clone()));
        }
        for b in &self.bundles {
            for r in 0..round {
                if self.sequence(&b.bundle_id, r).is_none() {
                    return Err(AuditError::PreviousRound {
                        bundle_id: b.bundle_id.clone(),
                        round: r,
                    });
                }
            }
        }
        let rate = SamplingRate::new(p_next).map_err(|_| AuditError::EscalationRate(p_next))?;
        self.config.round_rates.rates.truncate(round as usize);
        self.config.round_rates.rates.push(rate);
        let ids: Vec<String> = self.bundles.iter().map(|b| b.bundle_id.clone()).collect();
        let mut instructions = Vec::with_capacity(ids.len());
        for id in ids {
            instructions.push(self.issue_skip_sequence(&id, round, None)?.clone());
        }
        Ok(EscalationPlan {
            round: Some(round),
            rate: p_next,
            effective_rate: compose_rates(&self.config.round_rates.rates).get(),
            instructions,
            notice: None,
        })
    }

    /// Regenerate every issued sequence from seeds and config alone.
    pub fn replay_sequences(&self) -> Result<Vec<IssuedSequence>, AuditError> {
        let mut fresh = AuditState::create_audit(self.config.clone())?;
        fresh.bundles = self
            .bundles
            .iter()
            .map(|b| Bundle {
                count_observed: None,
                ..b.clone()
            })
            .collect();
        let mut out = Vec::new();
        for s in &self.sequences {
            let count = self.bundle(&s.bundle_id).and_then(|b| b.count_observed);
            let idx = fresh.bundle_index(&s.bundle_id)?;
            fresh.bundles[idx].count_observed = if s.provisional { None } else { count };
            let horizon = s.provisional.then_some(s.sequence.bundle_size);
            out.push(fresh.issue_skip_sequence(&s.bundle_id, s.round, horizon)?.clone());
        }
        Ok(out)
    }
}
