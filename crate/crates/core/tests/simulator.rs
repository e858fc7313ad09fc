use ilns::config::{Config, Scenario};
use ilns::io::Record;
use ilns::sim::simulate;

fn config(duration: f64) -> Config {
    let mut c = Config::default();
    c.trajectory.duration_s = duration;
    c
}

#[test]
fn same_seed_same_log() {
    let a = simulate(&config(50.0), 9).unwrap();
    let b = simulate(&config(50.0), 9).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.truth.samples, b.truth.samples);
}

#[test]
fn seeds_change_noise_not_truth() {
    let a = simulate(&config(50.0), 1).unwrap();
    let b = simulate(&config(50.0), 2).unwrap();
    assert_ne!(a.log.records, b.log.records);
    assert_eq!(a.truth.samples, b.truth.samples);
}

#[test]
fn sensor_streams_are_independent() {
    // Disabling one sensor must not disturb another sensor's noise draws.
    let mut c = config(50.0);
    let full = simulate(&c, 3).unwrap();
    c.dvl.enabled = false;
    let partial = simulate(&c, 3).unwrap();
    let lbl = |recs: &[Record]| recs.iter().filter(|r| r.tag() == "LBL").cloned().collect::<Vec<_>>();
    assert_eq!(lbl(&full.log.records), lbl(&partial.log.records));
    assert!(partial.log.records.iter().all(|r| r.tag() != "DVL"));
}

#[test]
fn sensor_rates_follow_config() {
    let log = simulate(&config(100.0), 1).unwrap().log;
    let count = |tag: &str| log.records.iter().filter(|r| r.tag() == tag).count();
    assert_eq!(count("IMU"), 20_000);
    assert_eq!(count("LBL"), 100);
    // GNSS is out for the default underwater stretch starting at 17 s.
    assert_eq!(count("GNSS"), 17);
}

#[test]
fn stable_scenario_stays_on_surface() {
    let mut c = config(200.0);
    c.trajectory.scenario = Scenario::Stable;
    let out = simulate(&c, 1).unwrap();
    assert!(out.truth.samples.iter().all(|s| s.p.z.abs() < 1e-9));
}

#[test]
fn invalid_config_rejected() {
    assert!(Config::from_toml("[imu]\nrate_hz = -1.0\n").is_err());
    assert!(Config::from_toml("[lbl]\nbogus = 1\n").is_err());
}
