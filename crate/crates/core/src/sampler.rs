//! Bernoulli sampling of ordered ballot bundles by geometric skipping.
//!
//! Instead of one coin toss per ballot, the gaps between selected ballots are
//! drawn as Geometric(p) variables `Y = ceil(ln U / ln(1 - p))`. Positions are
//! the running sums of the gaps; the first sum past the end of the bundle
//! stops the walk and is discarded.

use std::collections::BTreeSet;
use std::io;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::prng::Generator;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("sampling rate {0} is outside [0, 1]")]
    RateOutOfRange(f64),
    #[error("geometric skip needs 0 < p < 1, got {0}")]
    SkipRateDomain(f64),
    #[error("bundle size must be at least 1")]
    EmptyBundle,
}

/// Per-ballot inclusion probability.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct SamplingRate<F>(F);

impl<F: Scalar> SamplingRate<F> {
    pub fn new(p: F) -> Result<Self, SamplingError> {
        if p >= F::zero() && p <= F::one() {
            Ok(Self(p))
        } else {
            Err(SamplingError::RateOutOfRange(p.to_f64().unwrap_or(f64::NAN)))
        }
    }

    pub fn zero() -> Self {
        Self(F::zero())
    }

    pub fn one() -> Self {
        Self(F::one())
    }

    pub fn get(self) -> F {
        self.0
    }
}

impl<F: Scalar> Serialize for SamplingRate<F> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de, F: Scalar> Deserialize<'de> for SamplingRate<F> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Self::new(F::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Ordered per-round rates `p_0, p_1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct RoundPlan<F> {
    pub rates: Vec<SamplingRate<F>>,
}

impl<F: Scalar> RoundPlan<F> {
    pub fn new(rates: Vec<SamplingRate<F>>) -> Self {
        Self { rates }
    }

    pub fn rounds(&self) -> usize {
        self.rates.len()
    }

    /// Inclusion probability after every round in the plan.
    pub fn effective_rate(&self) -> SamplingRate<F> {
        compose_rates(&self.rates)
    }

    /// Inclusion probability after the first `k` rounds.
    pub fn effective_rate_after(&self, k: usize) -> SamplingRate<F> {
        compose_rates(&self.rates[..k.min(self.rates.len())])
    }
}

/// Result of one geometric-skipping walk through a bundle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipSequence {
    pub bundle_size: u64,
    /// 1-based, strictly increasing, all `<= bundle_size`.
    pub positions: Vec<u64>,
    /// `skips[j]` is the gap that produced `positions[j]`.
    pub skips: Vec<u64>,
    /// Uniform draws consumed, including the terminating one.
    pub draws: u64,
}

impl SkipSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Restrict to a smaller bundle, as if the walk had been run with
    /// `bundle_size = size` from the same generator state.
    ///
    /// A geometric walk spends one draw per gap plus the terminating one;
    /// walks at `p = 0` or `p = 1` spend none.
    pub fn truncated(&self, size: u64) -> SkipSequence {
        let kept = self.positions.iter().take_while(|&&pos| pos <= size).count();
        SkipSequence {
            bundle_size: size,
            positions: self.positions[..kept].to_vec(),
            skips: self.skips[..kept].to_vec(),
            draws: if self.draws == 0 { 0 } else { kept as u64 + 1 },
        }
    }
}

/// Gap to the next selected ballot: `ceil(ln u / ln(1 - p))`.
///
/// `u = 0` is replaced by the smallest positive value, and any `u >= 1 - p`
/// yields exactly 1.
pub fn geometric_skip<F: Scalar>(u: F, p: F) -> Result<u64, SamplingError> {
    if !(p > F::zero() && p < F::one()) {
        return Err(SamplingError::SkipRateDomain(p.to_f64().unwrap_or(f64::NAN)));
    }
    if u >= F::one() - p {
        return Ok(1);
    }
    let u = if u > F::zero() { u } else { F::min_positive_value() };
    let y = (u.ln() / (F::one() - p).ln()).ceil();
    Ok(y.to_u64().unwrap_or(u64::MAX).max(1))
}

/// Walk a bundle of `bundle_size` ballots at rate `p`.
///
/// `p = 0` and `p = 1` consume no draws.
pub fn sample_bundle<F: Scalar>(
    gen: &mut Generator,
    p: SamplingRate<F>,
    bundle_size: u64,
) -> Result<SkipSequence, SamplingError> {
    if bundle_size == 0 {
        return Err(SamplingError::EmptyBundle);
    }
    let p = p.get();
    if p == F::zero() {
        return Ok(SkipSequence {
            bundle_size,
            positions: Vec::new(),
            skips: Vec::new(),
            draws: 0,
        });
    }
    if p == F::one() {
        return Ok(SkipSequence {
            bundle_size,
            positions: (1..=bundle_size).collect(),
            skips: vec![1; bundle_size as usize],
            draws: 0,
        });
    }

    let mut positions = Vec::new();
    let mut skips = Vec::new();
    let mut total = 0u64;
    let mut draws = 0u64;
    loop {
        let u: F = gen.next_uniform();
        draws += 1;
        let y = geometric_skip(u, p)?;
        total = total.saturating_add(y);
        if total > bundle_size {
            break;
        }
        positions.push(total);
        skips.push(y);
    }
    Ok(SkipSequence {
        bundle_size,
        positions,
        skips,
        draws,
    })
}

/// `1 - prod(1 - p_k)`: a ballot is selected unless every round passes it.
pub fn compose_rates<F: Scalar>(rates: &[SamplingRate<F>]) -> SamplingRate<F> {
    let miss = rates
        .iter()
        .fold(F::one(), |acc, r| acc * (F::one() - r.get()));
    let p = (F::one() - miss).max(F::zero()).min(F::one());
    SamplingRate(p)
}

/// One escalation round: the full walk plus the positions it adds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSample {
    pub sequence: SkipSequence,
    pub new_positions: BTreeSet<u64>,
}

/// Walk the whole bundle at `p_k` and drop positions selected in earlier
/// rounds. Ballots keep their canonical order.
pub fn sample_round_k<F: Scalar>(
    gen: &mut Generator,
    p_k: SamplingRate<F>,
    bundle_size: u64,
    already_selected: &BTreeSet<u64>,
) -> Result<RoundSample, SamplingError> {
    let sequence = sample_bundle(gen, p_k, bundle_size)?;
    let new_positions = sequence
        .positions
        .iter()
        .copied()
        .filter(|pos| !already_selected.contains(pos))
        .collect();
    Ok(RoundSample {
        sequence,
        new_positions,
    })
}

/// One row of the polling-place worksheet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorksheetRow {
    pub bundle_id: String,
    pub round: u32,
    pub draw_index: u64,
    pub y: u64,
    pub position: u64,
}

/// Worksheet rows for a walk, `draw_index` counted from 1.
pub fn worksheet_rows(bundle_id: &str, round: u32, seq: &SkipSequence) -> Vec<WorksheetRow> {
    seq.positions
        .iter()
        .zip(&seq.skips)
        .enumerate()
        .map(|(i, (&position, &y))| WorksheetRow {
            bundle_id: bundle_id.to_owned(),
            round,
            draw_index: i as u64 + 1,
            y,
            position,
        })
        .collect()
}

/// CSV with header `bundle_id,round,draw_index,y,position`.
pub fn write_worksheet_csv<W: io::Write>(writer: W, rows: &[WorksheetRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    if rows.is_empty() {
        w.write_record(["bundle_id", "round", "draw_index", "y", "position"])?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prng::DiceSeed;

    fn gen(s: &str) -> Generator {
        Generator::new(DiceSeed::new(s).unwrap())
    }

    fn rate(p: f64) -> SamplingRate<f64> {
        SamplingRate::new(p).unwrap()
    }

    // Count coin flips until the survival probability drops to u.
    fn skip_by_survival(u: f64, p: f64) -> u64 {
        let mut k = 1;
        let mut survive = 1.0 - p;
        while survive > u {
            survive *= 1.0 - p;
            k += 1;
        }
        k
    }

    #[test]
    fn skip_examples() {
        assert_eq!(geometric_skip(0.5, 0.5).unwrap(), 1);
        assert_eq!(geometric_skip(0.25, 0.5).unwrap(), 2);
        assert_eq!(geometric_skip(0.3, 0.1).unwrap(), 12);
        assert_eq!(geometric_skip(0.3f32, 0.1f32).unwrap(), 12);
        assert_eq!(geometric_skip(0.9, 0.1).unwrap(), 1);
        assert_eq!(geometric_skip(0.999_999, 0.1).unwrap(), 1);
        assert!(geometric_skip(0.0, 0.5).unwrap() > 1000);
        assert!(geometric_skip(0.5, 0.0).is_err());
        assert!(geometric_skip(0.5, 1.0).is_err());
        assert!(geometric_skip(0.5, -0.2).is_err());
    }

    #[test]
    fn skip_matches_survival_oracle() {
        let mut g = gen("27182818284590452353");
        for &p in &[0.01, 0.1, 0.37, 0.5, 0.9] {
            for _ in 0..2000 {
                let u = g.next_f64();
                assert_eq!(geometric_skip(u, p).unwrap(), skip_by_survival(u, p), "u={u} p={p}");
            }
        }
    }

    #[test]
    fn rate_bounds() {
        assert!(SamplingRate::new(1.5).is_err());
        assert!(SamplingRate::new(-0.1).is_err());
        assert!(SamplingRate::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<SamplingRate<f64>>("1.2").is_err());
        assert_eq!(serde_json::from_str::<SamplingRate<f64>>("0.25").unwrap(), rate(0.25));
    }

    #[test]
    fn degenerate_rates() {
        let mut g = gen("00000000000000000000");
        let none = sample_bundle(&mut g, rate(0.0), 40).unwrap();
        assert!(none.is_empty());
        assert_eq!(none.draws, 0);
        let all = sample_bundle(&mut g, rate(1.0), 40).unwrap();
        assert_eq!(all.positions, (1..=40).collect::<Vec<_>>());
        assert_eq!(all.draws, 0);
        assert_eq!(g.counter(), 0);
        assert_eq!(sample_bundle(&mut g, rate(0.5), 0), Err(SamplingError::EmptyBundle));
    }

    // Frozen from an independent Python walk over the same SHA-256 stream.
    #[test]
    fn golden_bundle() {
        let mut g = gen("00000000000000000000");
        let seq = sample_bundle(&mut g, rate(0.1), 100).unwrap();
        assert_eq!(seq.positions, GOLDEN_P10_N100);
        assert_eq!(g.counter(), seq.draws);
        assert_eq!(seq.draws as usize, seq.positions.len() + 1);
    }

    const GOLDEN_P10_N100: &[u64] = &[5, 12, 19, 22, 23, 35, 43, 46, 52, 61, 65, 68, 78, 86, 95];

    #[test]
    fn walk_matches_survival_walk() {
        for seed in ["11111111111111111111", "98765432109876543210"] {
            let mut g = gen(seed);
            let seq = sample_bundle(&mut g, rate(0.13), 500).unwrap();
            let mut oracle = gen(seed);
            let mut pos = 0;
            let mut expect = Vec::new();
            loop {
                pos += skip_by_survival(oracle.next_f64(), 0.13);
                if pos > 500 {
                    break;
                }
                expect.push(pos);
            }
            assert_eq!(seq.positions, expect);
            assert_eq!(seq.skips.iter().sum::<u64>(), *seq.positions.last().unwrap());
        }
    }

    #[test]
    fn truncation_equals_shorter_walk() {
        let long = sample_bundle(&mut gen("55555555555555555555"), rate(0.2), 300).unwrap();
        for size in [1, 7, 50, 123, 300] {
            let mut g = gen("55555555555555555555");
            let short = sample_bundle(&mut g, rate(0.2), size).unwrap();
            assert_eq!(long.truncated(size), short);
        }
    }

    #[test]
    fn compose_examples() {
        assert!((compose_rates(&[rate(0.01), rate(0.01)]).get() - 0.0199).abs() < 1e-15);
        assert!((compose_rates(&[rate(0.3)]).get() - 0.3).abs() < 1e-15);
        assert_eq!(compose_rates(&[rate(0.5), rate(1.0)]).get(), 1.0);
        assert_eq!(compose_rates::<f64>(&[]).get(), 0.0);
        let plan = RoundPlan::new(vec![rate(0.2), rate(0.2), rate(0.5)]);
        assert!((plan.effective_rate_after(2).get() - 0.36).abs() < 1e-15);
        assert!(plan.effective_rate().get() >= plan.effective_rate_after(2).get());
    }

    #[test]
    fn round_k_examples() {
        let all: BTreeSet<u64> = (1..=30).collect();
        let r = sample_round_k(&mut gen("00000000000000000000"), rate(0.6), 30, &all).unwrap();
        assert!(r.new_positions.is_empty());
        let r = sample_round_k(&mut gen("00000000000000000000"), rate(0.0), 30, &BTreeSet::new()).unwrap();
        assert!(r.new_positions.is_empty());
        let prior: BTreeSet<u64> = [5, 12].into_iter().collect();
        let r = sample_round_k(&mut gen("00000000000000000000"), rate(0.1), 100, &prior).unwrap();
        let expect: BTreeSet<u64> = GOLDEN_P10_N100.iter().copied().filter(|p| !prior.contains(p)).collect();
        assert_eq!(r.new_positions, expect);
    }

    #[test]
    fn worksheet_csv() {
        let seq = sample_bundle(&mut gen("00000000000000000000"), rate(0.1), 20).unwrap();
        let rows = worksheet_rows("B-1", 0, &seq);
        let mut out = Vec::new();
        write_worksheet_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text, "bundle_id,round,draw_index,y,position\nB-1,0,1,5,5\nB-1,0,2,7,12\nB-1,0,3,7,19\n");
        let mut out = Vec::new();
        write_worksheet_csv(&mut out, &[]).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "bundle_id,round,draw_index,y,position\n");
    }
}
