use corsma::pipeline::RunRecord;
use corsma::scenario::RateThreshold;
use corsma::{run, ChannelMode, RunOptions, Scenario, ScenarioConfig, Scheme, SolutionStatus};

fn build(edit: impl FnOnce(&mut ScenarioConfig)) -> Scenario {
    let mut c = ScenarioConfig { layout_seed: Some(1), ..Default::default() };
    edit(&mut c);
    c.build().unwrap()
}

#[test]
fn single_link_reaches_capacity_above_the_cs() {
    let s = build(|c| {
        c.n_uav = Some(1);
        c.n_cs = Some(1);
        c.sensing_threshold = Some(0.0);
        c.rate_threshold = Some(RateThreshold::Uniform(0.0));
    });
    let sol = run(&s, &RunOptions::default()).unwrap();
    // Best placement is directly overhead with the full budget on the link.
    let gain = s.nt as f64 * s.eps0 / (s.uav_altitude * s.uav_altitude);
    let capacity = s.bandwidth * (1.0 + gain * s.p_max / s.noise_power).log2();
    assert!((sol.wsr() - capacity).abs() <= 1e-3 * capacity, "{} vs {capacity}", sol.wsr());
    assert!((sol.positions[0] - s.cs_positions[0]).norm() < 1.0);
}

#[test]
fn repeated_runs_are_identical() {
    let s = build(|_| {});
    let opts = RunOptions { channel_mode: ChannelMode::Rayleigh, seed: 3, ..Default::default() };
    let a = run(&s, &opts).unwrap();
    let b = run(&s, &opts).unwrap();
    assert_eq!(a.wsr(), b.wsr());
    assert_eq!(a.positions, b.positions);
    assert_eq!(a.beams, b.beams);
    assert_eq!(a.allocation, b.allocation);
}

#[test]
fn record_round_trips_through_json() {
    let s = build(|_| {});
    let opts = RunOptions { scheme: Scheme::Oma, ..Default::default() };
    let rec = RunRecord::new(&s, &opts, run(&s, &opts).unwrap());
    let path = std::env::temp_dir().join(format!("corsma-record-{}.json", std::process::id()));
    rec.write_json(&path).unwrap();
    let back = RunRecord::read_json(&path).unwrap();
    std::fs::remove_file(&path).ok();
    assert_eq!(back.scenario, s);
    assert_eq!(back.options, opts);
    assert_eq!(back.scenario_hash, rec.scenario_hash);
    assert_eq!(back.solution.positions, rec.solution.positions);
    assert_eq!(back.solution.report, rec.solution.report);
}

#[test]
fn corsma_is_never_below_sdma() {
    let s = build(|_| {});
    for seed in 0..2 {
        let base = RunOptions { channel_mode: ChannelMode::Rayleigh, seed, ..Default::default() };
        let co = run(&s, &base).unwrap();
        let sd = run(&s, &RunOptions { scheme: Scheme::Sdma, ..base }).unwrap();
        assert_eq!(co.status, SolutionStatus::Converged);
        assert!(co.wsr() >= sd.wsr() * (1.0 - 1e-9), "seed {seed}: {} < {}", co.wsr(), sd.wsr());
    }
}

#[test]
fn common_stream_serves_collinear_links() {
    // One UAV with all-ones channels: every CS sees the same direction, so
    // private streams alone cannot meet 1 Mb/s each but a common stream can.
    let s = build(|c| c.n_uav = Some(1));
    let co = run(&s, &RunOptions::default()).unwrap();
    assert_eq!(co.status, SolutionStatus::Converged);
    assert!(co.violations.max() <= 1e-6);
    assert!(co.common_ratio() > 0.0);
    let sd = run(&s, &RunOptions { scheme: Scheme::Sdma, ..Default::default() }).unwrap();
    assert_eq!(sd.status, SolutionStatus::Infeasible);
}
