//! Workload and conservatism experiments.
//!
//! Populations are never materialised. A Bernoulli round at rate `p` over the
//! `R` ballots not yet sampled selects `Binomial(R, p)` of them, and given that
//! count the winner's share of the draw is hypergeometric. Given its size, a
//! Bernoulli sample is a simple random sample of the remaining ballots.
//!
//! The with-replacement reference (BRAVO) multiplies a likelihood ratio by
//! `2 s` for each winner ballot and `2 (1 - s)` for each loser ballot, where
//! `s` is the reported winner share, and stops at `1 / alpha`.

use std::fmt::Write as _;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Hypergeometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{self, PlanError};
use crate::risk::{self, ReportedTallies, SampleTally};
use crate::sampler::SamplingRate;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimulationError {
    #[error("winner share {0} is outside [0.5, 1]")]
    WinnerShare(f64),
    #[error("reported share {0} must exceed 0.5 and be at most 1")]
    ReportedShare(f64),
    #[error("risk limit {0} is outside (0, 1)")]
    Alpha(f64),
    #[error("rate schedule is empty")]
    EmptySchedule,
    #[error("population must contain at least one ballot")]
    EmptyPopulation,
    #[error("{0} grid is empty")]
    EmptyGrid(&'static str),
    #[error("planning failed: {0}")]
    Plan(Box<PlanError>),
}

impl From<PlanError> for SimulationError {
    fn from(e: PlanError) -> Self {
        SimulationError::Plan(Box::new(e))
    }
}

fn f64_of<F: Scalar>(x: F) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Stream for trial `trial` of an experiment seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Bbp,
    Bravo,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Bbp => "BBP",
            Method::Bravo => "BRAVO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub method: Method,
    pub ballots_examined: u64,
    pub rounds: u32,
    pub confirmed: bool,
}

/// Winner votes in a two-candidate population of `n_total` with share `share`.
pub fn winner_votes<F: Scalar>(n_total: u64, share: F) -> u64 {
    (F::from_count(n_total) * share)
        .round()
        .to_u64()
        .unwrap_or(n_total)
        .min(n_total)
}

/// A multi-round BBP audit of a two-candidate contest.
#[derive(Debug, Clone, PartialEq)]
pub struct BbpTrial<F> {
    n_total: u64,
    true_w: u64,
    reported: ReportedTallies,
    schedule: Vec<SamplingRate<F>>,
    alpha: F,
}

impl<F: Scalar> BbpTrial<F> {
    /// `reported_share` defaults to the true share (correctly reported result).
    pub fn new(
        n_total: u64,
        winner_share: F,
        reported_share: Option<F>,
        schedule: Vec<SamplingRate<F>>,
        alpha: F,
    ) -> Result<Self, SimulationError> {
        if n_total == 0 {
            return Err(SimulationError::EmptyPopulation);
        }
        if !(winner_share >= F::lit(0.5) && winner_share <= F::one()) {
            return Err(SimulationError::WinnerShare(f64_of(winner_share)));
        }
        if !(alpha > F::zero() && alpha < F::one()) {
            return Err(SimulationError::Alpha(f64_of(alpha)));
        }
        if schedule.is_empty() {
            return Err(SimulationError::EmptySchedule);
        }
        let share = reported_share.unwrap_or(winner_share);
        let v_w = winner_votes(n_total, share);
        let reported = ReportedTallies::two_candidate(v_w, n_total - v_w)
            .map_err(|_| SimulationError::ReportedShare(f64_of(share)))?;
        Ok(Self {
            n_total,
            true_w: winner_votes(n_total, winner_share),
            reported,
            schedule,
            alpha,
        })
    }

    pub fn reported(&self) -> &ReportedTallies {
        &self.reported
    }

    /// Sample round by round until the cumulative P-value meets `alpha` or
    /// the schedule runs out.
    pub fn run<R: Rng + ?Sized>(&self, rng: &mut R) -> TrialOutcome {
        let mut tally = SampleTally::default();
        let mut rounds = 0;
        for rate in &self.schedule {
            rounds += 1;
            let sampled = tally.b_w + tally.b_l;
            let remaining = self.n_total - sampled;
            let n = draw_binomial(rng, remaining, f64_of(rate.get()));
            let w = draw_hypergeometric(rng, remaining, self.true_w - tally.b_w, n);
            tally.b_w += w;
            tally.b_l += n - w;
            let p: F = risk::p_value::<F>(&tally, &self.reported).p_value;
            if p <= self.alpha {
                return TrialOutcome {
                    method: Method::Bbp,
                    ballots_examined: tally.b(),
                    rounds,
                    confirmed: true,
                };
            }
        }
        TrialOutcome {
            method: Method::Bbp,
            ballots_examined: tally.b(),
            rounds,
            confirmed: false,
        }
    }
}

fn draw_binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        0
    } else if p >= 1.0 {
        n
    } else {
        Binomial::new(n, p).expect("valid binomial").sample(rng)
    }
}

fn draw_hypergeometric<R: Rng + ?Sized>(rng: &mut R, total: u64, marked: u64, draws: u64) -> u64 {
    if draws == 0 || marked == 0 {
        0
    } else if draws == total {
        marked
    } else if marked == total {
        draws
    } else {
        Hypergeometric::new(total, marked, draws)
            .expect("valid hypergeometric")
            .sample(rng)
    }
}

/// Convenience wrapper for a single BBP trial.
pub fn run_bbp_trial<F: Scalar, R: Rng + ?Sized>(
    n_total: u64,
    winner_share: F,
    rate_schedule: Vec<SamplingRate<F>>,
    alpha: F,
    rng: &mut R,
) -> Result<TrialOutcome, SimulationError> {
    Ok(BbpTrial::new(n_total, winner_share, None, rate_schedule, alpha)?.run(rng))
}

/// Sequential with-replacement ballot polling.
pub fn run_bravo_trial<F: Scalar, R: Rng + ?Sized>(
    winner_share: F,
    reported_share: F,
    alpha: F,
    rng: &mut R,
    max_draws: u64,
) -> Result<TrialOutcome, SimulationError> {
    if !(winner_share >= F::zero() && winner_share <= F::one()) {
        return Err(SimulationError::WinnerShare(f64_of(winner_share)));
    }
    if !(reported_share > F::lit(0.5) && reported_share <= F::one()) {
        return Err(SimulationError::ReportedShare(f64_of(reported_share)));
    }
    if !(alpha > F::zero() && alpha < F::one()) {
        return Err(SimulationError::Alpha(f64_of(alpha)));
    }
    let two = F::lit(2.0);
    let step_w = (two * reported_share).ln();
    let step_l = (two * (F::one() - reported_share)).ln();
    let threshold = alpha.recip().ln();
    let share = f64_of(winner_share);
    let mut log_ratio = F::zero();
    for draw in 1..=max_draws {
        log_ratio = log_ratio + if rng.random::<f64>() < share { step_w } else { step_l };
        if log_ratio >= threshold {
            return Ok(TrialOutcome {
                method: Method::Bravo,
                ballots_examined: draw,
                rounds: 1,
                confirmed: true,
            });
        }
    }
    Ok(TrialOutcome {
        method: Method::Bravo,
        ballots_examined: max_draws,
        rounds: 1,
        confirmed: false,
    })
}

/// How BBP rates are chosen in workload experiments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BbpSchedule {
    /// Repeated rounds, each at `fraction * ASN / N`, then a full count.
    AsnIncrements { fraction: f64 },
    /// One round at the rate with the given simulated power, then a full
    /// count.
    PlannedRound { power: f64, planning_trials: u64 },
}

impl Default for BbpSchedule {
    fn default() -> Self {
        BbpSchedule::AsnIncrements { fraction: 0.25 }
    }
}

/// Rounds of rate `r` until a fraction `1 - e^{-6}` of ballots would be
/// covered, capped at 10,000 rounds, then a census.
fn increment_schedule<F: Scalar>(rate: F) -> Vec<SamplingRate<F>> {
    let mut rates = Vec::new();
    if rate < F::one() {
        let rounds = (F::lit(-6.0) / (F::one() - rate).ln())
            .ceil()
            .to_usize()
            .unwrap_or(10_000)
            .min(10_000);
        rates.extend(std::iter::repeat_n(SamplingRate::new(rate).expect("rate"), rounds));
    }
    rates.push(SamplingRate::one());
    rates
}

impl BbpSchedule {
    /// Rates for a correctly reported contest with the given winner share.
    pub fn rates<F: Scalar>(
        &self,
        n_total: u64,
        winner_share: F,
        alpha: F,
        seed: u64,
    ) -> Result<Vec<SamplingRate<F>>, SimulationError> {
        let margin = F::lit(2.0) * winner_share - F::one();
        if margin <= F::zero() {
            return Ok(vec![SamplingRate::one()]);
        }
        match *self {
            BbpSchedule::AsnIncrements { fraction } => {
                let asn = planner::asn(alpha, margin)?;
                let rate = (F::lit(fraction) * asn / F::from_count(n_total)).min(F::one());
                Ok(increment_schedule(rate))
            }
            BbpSchedule::PlannedRound {
                power,
                planning_trials,
            } => {
                let rate = planner::rate_for_power(
                    n_total,
                    margin,
                    alpha,
                    F::lit(power),
                    planning_trials,
                    seed,
                )?;
                Ok(vec![rate, SamplingRate::one()])
            }
        }
    }
}

/// Workload quantiles for one method at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadRow {
    pub method: Method,
    pub n_total: u64,
    pub winner_share: f64,
    pub alpha: f64,
    pub q25: u64,
    pub q50: u64,
    pub q75: u64,
    pub q90: u64,
    pub mean: f64,
    pub trials: u64,
    pub seed: u64,
}

/// Nearest-rank quantile of sorted data: the smallest value with at least a
/// fraction `q` of observations at or below it.
pub fn nearest_rank(sorted: &[u64], q: f64) -> u64 {
    assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn summarize(
    method: Method,
    n_total: u64,
    winner_share: f64,
    alpha: f64,
    seed: u64,
    mut work: Vec<u64>,
) -> WorkloadRow {
    work.sort_unstable();
    let trials = work.len() as u64;
    let mean = work.iter().map(|&w| w as f64).sum::<f64>() / trials as f64;
    WorkloadRow {
        method,
        n_total,
        winner_share,
        alpha,
        q25: nearest_rank(&work, 0.25),
        q50: nearest_rank(&work, 0.50),
        q75: nearest_rank(&work, 0.75),
        q90: nearest_rank(&work, 0.90),
        mean,
        trials,
        seed,
    }
}

/// Ballots examined per trial, counting an unconfirmed audit as a full
/// hand count of `n_total`.
pub fn bbp_workloads(
    n_total: u64,
    winner_share: f64,
    alpha: f64,
    schedule: &BbpSchedule,
    trials: u64,
    seed: u64,
) -> Result<Vec<u64>, SimulationError> {
    if winner_share <= 0.5 {
        return Ok(vec![n_total; trials as usize]);
    }
    let rates = schedule.rates(n_total, winner_share, alpha, seed)?;
    let trial = BbpTrial::new(n_total, winner_share, None, rates, alpha)?;
    Ok((0..trials)
        .map(|t| {
            let out = trial.run(&mut trial_rng(seed, t));
            if out.confirmed {
                out.ballots_examined
            } else {
                n_total
            }
        })
        .collect())
}

/// BRAVO workloads with the reported share equal to the true share.
pub fn bravo_workloads(
    n_total: u64,
    winner_share: f64,
    alpha: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<u64>, SimulationError> {
    if winner_share <= 0.5 {
        return Ok(vec![n_total; trials as usize]);
    }
    (0..trials)
        .map(|t| {
            let out = run_bravo_trial(winner_share, winner_share, alpha, &mut trial_rng(seed, t), n_total)?;
            Ok(out.ballots_examined)
        })
        .collect()
}

/// Quantile table over the grid, BBP rows first then BRAVO rows for each
/// (share, alpha). Trial `t` uses the same stream at every grid point.
pub fn compare_workload(
    n_total: u64,
    winner_shares: &[f64],
    alphas: &[f64],
    trials: u64,
    seed: u64,
    schedule: &BbpSchedule,
) -> Result<Vec<WorkloadRow>, SimulationError> {
    if winner_shares.is_empty() {
        return Err(SimulationError::EmptyGrid("winner share"));
    }
    if alphas.is_empty() {
        return Err(SimulationError::EmptyGrid("risk limit"));
    }
    if trials == 0 {
        return Err(SimulationError::EmptyGrid("trial"));
    }
    let mut rows = Vec::new();
    for &alpha in alphas {
        for &share in winner_shares {
            let bbp = bbp_workloads(n_total, share, alpha, schedule, trials, seed)?;
            rows.push(summarize(Method::Bbp, n_total, share, alpha, seed, bbp));
            let bravo = bravo_workloads(n_total, share, alpha, trials, seed)?;
            rows.push(summarize(Method::Bravo, n_total, share, alpha, seed, bravo));
        }
    }
    Ok(rows)
}

/// CSV with header
/// `method,n_total,winner_share,alpha,q25,q50,q75,q90,mean,trials,seed`.
pub fn write_workload_csv<W: io::Write>(writer: W, rows: &[WorkloadRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Line chart of median ballots examined against winner share, one series
/// per (method, alpha).
pub fn workload_svg(rows: &[WorkloadRow]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const PAD: f64 = 60.0;
    let (min_x, max_x) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
        (a.min(r.winner_share), b.max(r.winner_share))
    });
    let max_y = rows.iter().map(|r| r.q50).max().unwrap_or(1).max(1) as f64;
    let span_x = if max_x > min_x { max_x - min_x } else { 1.0 };
    let sx = |x: f64| PAD + (x - min_x) / span_x * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - y / max_y * (H - 2.0 * PAD);

    let mut series: Vec<(Method, f64)> = Vec::new();
    for r in rows {
        if !series.iter().any(|&(m, a)| m == r.method && a == r.alpha) {
            series.push((r.method, r.alpha));
        }
    }
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{y}" stroke="black"/>"#,
        y = H - PAD,
        x2 = W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">winner share</text>"#,
        W / 2.0,
        H - 20.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="15" y="{}" font-size="12" transform="rotate(-90 15 {})" text-anchor="middle">median ballots examined (max {})</text>"#,
        H / 2.0,
        H / 2.0,
        max_y
    );
    for (i, &(method, alpha)) in series.iter().enumerate() {
        let mut pts: Vec<&WorkloadRow> = rows
            .iter()
            .filter(|r| r.method == method && r.alpha == alpha)
            .collect();
        pts.sort_by(|a, b| a.winner_share.total_cmp(&b.winner_share));
        let path: Vec<String> = pts
            .iter()
            .map(|r| format!("{:.2},{:.2}", sx(r.winner_share), sy(r.q50 as f64)))
            .collect();
        let color = colors[i % colors.len()];
        let dash = if method == Method::Bravo { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}"{dash} stroke-width="2" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{color}">{} alpha={alpha}</text>"#,
            W - PAD - 110.0,
            PAD + 14.0 * i as f64,
            method.label()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Fraction of audits that confirm a tied contest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationRate {
    pub rate: f64,
    pub std_error: f64,
    pub trials: u64,
}

/// Run BBP audits of a truly tied two-candidate contest reported with the
/// winner at `reported_share`, and count how often any round confirms.
pub fn tie_confirmation_rate(
    n_total: u64,
    reported_share: f64,
    schedule: &[f64],
    alpha: f64,
    trials: u64,
    seed: u64,
) -> Result<ConfirmationRate, SimulationError> {
    let rates = schedule
        .iter()
        .map(|&p| SamplingRate::new(p).map_err(|_| SimulationError::EmptySchedule))
        .collect::<Result<Vec<_>, _>>()?;
    let trial = BbpTrial::new(n_total, 0.5, Some(reported_share), rates, alpha)?;
    let hits = (0..trials)
        .filter(|&t| trial.run(&mut trial_rng(seed, t)).confirmed)
        .count() as u64;
    let rate = hits as f64 / trials as f64;
    Ok(ConfirmationRate {
        rate,
        std_error: (rate * (1.0 - rate) / trials as f64).sqrt(),
        trials,
    })
}
