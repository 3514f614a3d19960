use bbp_core::planner::{initial_rate, rate_for_power_within, simulate_power, PlanParams};
use bbp_core::sampler::SamplingRate;
use bbp_core::simulator::{
    compare_workload, tie_confirmation_rate, write_workload_csv, BbpSchedule, Method,
};

#[test]
fn planned_rate_meets_target() {
    let (n, m, alpha, trials, seed) = (20_000u64, 0.1f64, 0.05, 300, 9);
    let r = rate_for_power_within(n, m, alpha, 0.8, trials, seed, 0.002).unwrap();
    let at = simulate_power(n, m, r, alpha, trials, seed).unwrap();
    assert!(at.power >= 0.8);
    let below = SamplingRate::new((r.get() - 0.002).max(0.0)).unwrap();
    assert!(simulate_power(n, m, below, alpha, trials, seed).unwrap().power < 0.8);
}

#[test]
fn single_precision_power_agrees() {
    let d = simulate_power(10_000, 0.1f64, SamplingRate::new(0.06).unwrap(), 0.05, 200, 4).unwrap();
    let s = simulate_power(10_000, 0.1f32, SamplingRate::new(0.06f32).unwrap(), 0.05, 200, 4).unwrap();
    assert!((d.power - f64::from(s.power)).abs() <= 0.02);
}

#[test]
fn initial_rate_scales_with_invalid_fraction() {
    let base: PlanParams<f64> = PlanParams {
        alpha: 0.05,
        margin: 0.1,
        invalid_fraction: 0.0,
        n_total: 100_000,
        target_power: 0.9,
        asn_multiplier: 1.0,
    };
    let r0 = initial_rate(&base).unwrap().get();
    let r1 = initial_rate(&PlanParams { invalid_fraction: 0.2, ..base }).unwrap().get();
    assert!((r1 * 0.8 - r0).abs() < 1e-12);
}

#[test]
fn tie_confirmations_are_rare() {
    let c = tie_confirmation_rate(2_000, 0.55, &[0.1, 0.1], 0.1, 500, 5).unwrap();
    assert!(c.rate <= 0.1 + 3.0 * (0.1f64 * 0.9 / 500.0).sqrt(), "{}", c.rate);
}

#[test]
fn workload_table_shape() {
    let rows = compare_workload(2_000, &[0.6, 0.7], &[0.05, 0.1], 50, 2, &BbpSchedule::default()).unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(rows[0].method, Method::Bbp);
    assert_eq!(rows[1].method, Method::Bravo);
    for r in &rows {
        assert!(r.q25 <= r.q50 && r.q50 <= r.q75 && r.q75 <= r.q90);
        assert!(r.q90 <= 2_000);
    }
    let easy = rows.iter().find(|r| r.method == Method::Bbp && r.winner_share == 0.7 && r.alpha == 0.1).unwrap();
    let hard = rows.iter().find(|r| r.method == Method::Bbp && r.winner_share == 0.6 && r.alpha == 0.05).unwrap();
    assert!(easy.mean < hard.mean);
    let mut out = Vec::new();
    write_workload_csv(&mut out, &rows).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("method,n_total,winner_share,alpha,q25,q50,q75,q90,mean,trials,seed\nBBP,2000,0.6,0.05,"));
}

#[test]
fn planned_rate_holds_on_fresh_streams() {
    let (n, m, alpha) = (20_000u64, 0.1f64, 0.05);
    let r = rate_for_power_within(n, m, alpha, 0.9, 1_000, 21, 0.0025).unwrap();
    let fresh = simulate_power(n, m, r, alpha, 1_000, 22).unwrap();
    assert!(fresh.power >= 0.9 - 0.03, "rate {} power {}", r.get(), fresh.power);
}

#[test]
fn median_workload_falls_with_share() {
    let shares = [0.55, 0.6, 0.65, 0.7, 0.8];
    let rows = compare_workload(5_000, &shares, &[0.05], 200, 13, &BbpSchedule::default()).unwrap();
    for method in [Method::Bbp, Method::Bravo] {
        let medians: Vec<u64> = rows.iter().filter(|r| r.method == method).map(|r| r.q50).collect();
        assert!(medians.windows(2).all(|w| w[0] >= w[1]), "{method:?} {medians:?}");
    }
}
