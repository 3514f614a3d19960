use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::AuditError;
use crate::prng::DiceSeed;
use crate::risk::{Pair, ReportedTallies};
use crate::sampler::RoundPlan;

/// Interpretation for any ballot that is not a vote for a listed candidate.
pub const OTHER: &str = "other";

/// Pseudo-candidate standing in for all reported losers of a majority contest.
pub const POOLED_LOSERS: &str = "__losers__";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedPolicy {
    /// One seed for the whole audit; bundles use disjoint counter ranges.
    Central,
    /// Each site rolls its own seed when its bundles are registered.
    PerSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contest {
    pub contest_id: String,
    pub candidates: Vec<String>,
    /// Reported winners, `k >= 1`.
    pub winners: Vec<String>,
    /// Reported votes per candidate.
    pub reported: BTreeMap<String, u64>,
    pub n_total_reported: u64,
    /// Pool every reported loser into one pseudo-candidate.
    #[serde(default)]
    pub majority: bool,
}

impl Contest {
    pub fn losers(&self) -> impl Iterator<Item = &String> {
        self.candidates.iter().filter(|c| !self.winners.contains(c))
    }

    /// (winner, loser) pairs in candidate order.
    pub fn pairs(&self) -> Vec<Pair> {
        let mut out = Vec::new();
        for w in &self.winners {
            if self.majority {
                out.push(Pair::new(w.clone(), POOLED_LOSERS));
            } else {
                out.extend(self.losers().map(|l| Pair::new(w.clone(), l.clone())));
            }
        }
        out
    }

    /// Whether `interpretation` counts for the loser side of `pair`.
    pub fn is_loser_vote(&self, pair: &Pair, interpretation: &str) -> bool {
        if pair.loser == POOLED_LOSERS {
            self.losers().any(|l| l == interpretation)
        } else {
            pair.loser == interpretation
        }
    }

    fn votes_for_loser(&self, pair: &Pair) -> u64 {
        if pair.loser == POOLED_LOSERS {
            self.losers().map(|l| self.reported[l]).sum()
        } else {
            self.reported[&pair.loser]
        }
    }

    /// Reported tallies for a pair; everything that is not a vote for exactly
    /// one side is `v_u`, with `N` the reported ballot count.
    pub fn reported_tallies(&self, pair: &Pair) -> Result<ReportedTallies, AuditError> {
        let v_w = self.reported[&pair.winner];
        let v_l = self.votes_for_loser(pair);
        let v_u = self
            .n_total_reported
            .checked_sub(v_w + v_l)
            .ok_or_else(|| self.invalid(format!("votes for {pair} exceed the ballot count")))?;
        ReportedTallies::new(v_w, v_l, v_u)
            .map_err(|_| self.invalid(format!("reported winner does not lead in {pair}")))
    }

    fn invalid(&self, why: String) -> AuditError {
        AuditError::InvalidConfig(format!("contest {}: {why}", self.contest_id))
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        if self.contest_id.is_empty() {
            return Err(AuditError::InvalidConfig("contest id is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for c in &self.candidates {
            if c.is_empty() || c == OTHER || c.starts_with("__") {
                return Err(self.invalid(format!("candidate id {c:?} is reserved")));
            }
            if !seen.insert(c) {
                return Err(self.invalid(format!("candidate {c} listed twice")));
            }
            if !self.reported.contains_key(c) {
                return Err(self.invalid(format!("no reported total for {c}")));
            }
        }
        if let Some(extra) = self.reported.keys().find(|k| !seen.contains(k)) {
            return Err(self.invalid(format!("reported total for unknown candidate {extra}")));
        }
        if self.winners.is_empty() {
            return Err(self.invalid("no reported winners".into()));
        }
        let winners: BTreeSet<_> = self.winners.iter().collect();
        if winners.len() != self.winners.len() {
            return Err(self.invalid("winner listed twice".into()));
        }
        if let Some(w) = self.winners.iter().find(|w| !seen.contains(w)) {
            return Err(self.invalid(format!("winner {w} is not a candidate")));
        }
        if self.losers().next().is_none() {
            return Err(self.invalid("every candidate is a winner".into()));
        }
        let k = self.winners.len() as u64;
        let total: u64 = self.reported.values().sum();
        if total > k * self.n_total_reported {
            return Err(self.invalid(format!(
                "{total} reported votes cannot come from {} ballots voting for {k}",
                self.n_total_reported
            )));
        }
        for pair in self.pairs() {
            self.reported_tallies(&pair)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub audit_id: String,
    pub alpha: f64,
    pub contests: Vec<Contest>,
    pub round_rates: RoundPlan<f64>,
    pub seed_policy: SeedPolicy,
    /// Required with [`SeedPolicy::Central`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub central_seed: Option<DiceSeed>,
}

impl AuditConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.audit_id.is_empty() {
            return Err(AuditError::InvalidConfig("audit id is empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(AuditError::InvalidConfig(format!(
                "risk limit {} is outside (0, 1)",
                self.alpha
            )));
        }
        if self.contests.is_empty() {
            return Err(AuditError::InvalidConfig("no contests".into()));
        }
        let mut ids = BTreeSet::new();
        for c in &self.contests {
            if !ids.insert(&c.contest_id) {
                return Err(AuditError::InvalidConfig(format!(
                    "contest id {} is not unique",
                    c.contest_id
                )));
            }
            c.validate()?;
        }
        if self.round_rates.rates.is_empty() {
            return Err(AuditError::InvalidConfig("at least one round rate is required".into()));
        }
        if let Some(r) = self.round_rates.rates.iter().find(|r| r.get() <= 0.0) {
            return Err(AuditError::InvalidConfig(format!(
                "round rate {} must be positive",
                r.get()
            )));
        }
        if self.seed_policy == SeedPolicy::Central && self.central_seed.is_none() {
            return Err(AuditError::InvalidConfig(
                "central seed policy needs a central_seed".into(),
            ));
        }
        Ok(())
    }

    pub fn contest(&self, id: &str) -> Option<&Contest> {
        self.contests.iter().find(|c| c.contest_id == id)
    }
}
