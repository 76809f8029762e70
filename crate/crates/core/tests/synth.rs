use std::fs;

use fleetsense::synth::{generate, generate_trajectories, preset, static_features, spatial_component, StaticFeatureSpec};
use fleetsense::weights::pearson;
use fleetsense::GridSpec;

#[test]
fn unattracted_walk_spreads_uniformly() {
    let mut config = preset("desk-small", 21).unwrap();
    config.n_vehicles = 1250;
    config.grid.n_days = 60;
    config.mobility.hotspot_attraction = 0.0;
    // fixes 14 km apart on a 4 km square: successive fixes are close to independent
    config.mobility.ping_interval_s = 1800;
    let pings = generate_trajectories(&config).unwrap();
    let t_count = config.grid.n_intervals();
    let mut counts = vec![0u64; config.grid.n_cells()];
    for k in pings.iter().filter_map(|p| p.k) {
        counts[k as usize / t_count] += 1;
    }
    let n: u64 = counts.iter().sum();
    assert_eq!(n as usize, pings.len(), "every ping of a reflecting walk lands inside the grid");
    let expected = n as f64 / counts.len() as f64;
    assert!(n >= 1_000_000, "too few pings for the test: {n}");
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 63 degrees of freedom
    assert!(chi2 < 92.01, "chi-square {chi2:.1} over {n} pings");
}

#[test]
fn static_features_hit_their_target_correlation() {
    let mut config = preset("desk-small", 4).unwrap();
    config.grid = GridSpec { n_rows: 25, n_cols: 25, ..config.grid.clone() };
    config.field.static_features = vec![
        StaticFeatureSpec { name: "strong".into(), correlation: 0.9, offset: 1.0, scale: 2.0 },
        StaticFeatureSpec { name: "inverse".into(), correlation: -0.5, offset: 0.0, scale: 1.0 },
    ];
    let spatial = spatial_component(&config);
    assert!(spatial.len() >= 500);
    let table = static_features(&config, &spatial).unwrap();
    let strong: Vec<f64> = table.column(0).collect();
    let inverse: Vec<f64> = table.column(1).collect();
    let r = pearson(&strong, &spatial);
    assert!((0.8..=0.97).contains(&r), "r = {r}");
    let r = pearson(&inverse, &spatial);
    assert!((-0.65..=-0.35).contains(&r), "r = {r}");
}

#[test]
fn congestion_tracks_the_latent_field() {
    let config = preset("desk-medium", 0).unwrap();
    let scenario = generate(&config).unwrap();
    for latent in &scenario.truth.latent {
        let r = pearson(&scenario.truth.congestion, latent);
        assert!(r > 0.3, "r = {r}");
    }
}

#[test]
fn regeneration_is_byte_identical() {
    let config = preset("desk-small", 99).unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let files_a = generate(&config).unwrap().write_dir(a.path()).unwrap();
    let files_b = generate(&config).unwrap().write_dir(b.path()).unwrap();
    assert_eq!(files_a.len(), files_b.len());
    for (x, y) in files_a.iter().zip(&files_b) {
        assert_eq!(x.file_name(), y.file_name());
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }
}

#[test]
fn noiseless_readings_equal_the_latent_field() {
    let mut config = preset("desk-small", 8).unwrap();
    config.field.noise_sd = 0.0;
    let scenario = generate(&config).unwrap();
    let n_p = config.field.pollutants.len();
    assert!(scenario.clamped.iter().all(|&c| c == 0));
    for (i, ping) in scenario.pings.iter().enumerate() {
        let k = ping.k.expect("desk walks stay in the grid") as usize;
        for p in 0..n_p {
            let latent = scenario.truth.latent[p][k];
            assert!((scenario.readings[i * n_p + p] - latent).abs() <= 0.5e-4 + 1e-12);
        }
    }
}
