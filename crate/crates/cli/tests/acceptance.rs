//! Exit criteria for the whole pipeline. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use fleetsense::evaluation::{evaluate_selection, MapeAggregation};
use fleetsense::ingest::{ingest_file, ColumnMapping, ReadingAggregate};
use fleetsense::layer::SparseLayer;
use fleetsense::selection::{
    lazy_greedy_accelerator, select, select_exact, select_improved_optifleet, select_optifleet, select_random,
    EXACT_MAX_VEHICLES,
};
use fleetsense::synth::{generate, preset, Scenario};
use fleetsense::utility::{
    coverage_probability, effective_coverage, effective_entropy, sensing_utility, trajectory_entropy,
};
use fleetsense::weights::{derive_weight_field, DEFAULT_EPSILON_FLOOR};
use fleetsense::{CoverageState, FleetSelection, SelectionProblem, SpatiotemporalIndex, Strategy, VisitModel, WeightField, WeightVariant};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit_s: u64, elapsed: Duration, outcome: Outcome) -> Outcome {
    let outcome = outcome?;
    if elapsed > Duration::from_secs(limit_s) {
        return Err(format!("{outcome}; took {:.1}s, limit {limit_s}s", elapsed.as_secs_f64()));
    }
    Ok(outcome)
}

/// A generated scenario binned in memory, with its weight fields derived from the first pollutant.
struct Pipeline {
    scenario: Scenario,
    model: VisitModel,
    readings: Vec<ReadingAggregate>,
}

impl Pipeline {
    fn new(name: &str, seed: u64) -> Self {
        let scenario = generate(&preset(name, seed).unwrap()).unwrap();
        let binned = scenario.ingest().unwrap();
        let model = VisitModel::from_counts(&binned.visits, &scenario.config.grid);
        Pipeline {
            scenario,
            model,
            readings: binned.readings,
        }
    }

    fn weights(&self, variant: WeightVariant) -> WeightField {
        derive_weight_field(
            &self.scenario.static_features,
            &self.scenario.dynamic_features,
            &self.readings[0],
            variant,
            DEFAULT_EPSILON_FLOOR,
        )
        .unwrap()
    }

    /// MAPE averaged over the scenario's pollutants.
    fn mape(&self, selection: &FleetSelection) -> f64 {
        let reports = evaluate_selection(selection, &self.readings, MapeAggregation::PerCell).unwrap();
        let values: Vec<f64> = reports.iter().map(|r| r.scores.mape.expect("observed cells")).collect();
        values.iter().sum::<f64>() / values.len() as f64
    }
}

fn utility_of(model: &VisitModel, members: &[usize], w: &[f64]) -> f64 {
    let layers: Vec<&SparseLayer> = members.iter().map(|&v| &model.q[v]).collect();
    sensing_utility(&coverage_probability(&layers, model.n_points), w).unwrap()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn random_layer(rng: &mut ChaCha8Rng, n_points: usize) -> SparseLayer {
    let density = rng.random_range(0.05..0.6);
    let dense: Vec<f64> = (0..n_points)
        .map(|_| match rng.random_range(0..20) {
            0 => 1.0,
            x if (x as f64) < 20.0 * density => rng.random::<f64>(),
            _ => 0.0,
        })
        .collect();
    SparseLayer::from_dense(&dense)
}

fn model_from_layers(q: Vec<SparseLayer>, n_points: usize) -> VisitModel {
    let pi = q
        .iter()
        .map(|l| {
            let total = l.sum();
            SparseLayer::from_sorted(l.iter().map(|(k, v)| (k as u32, v / total)))
        })
        .collect();
    VisitModel {
        grid_hash: String::new(),
        n_points,
        vehicle_ids: (0..q.len()).map(|i| format!("v{i:02}")).collect(),
        cost: vec![1.0; q.len()],
        q,
        pi,
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n_points = rng.random_range(1..50);
        let n_layers = rng.random_range(1..40);
        let layers: Vec<SparseLayer> = (0..n_layers).map(|_| random_layer(&mut rng, n_points)).collect();
        let w = vec![1.0; n_points];
        let mut state = CoverageState::new(n_points);
        for (v, layer) in layers.iter().enumerate() {
            state.add(v, layer, &w).unwrap();
        }
        // direct product, written out independently of the library kernels
        let mut miss = vec![1.0; n_points];
        for layer in &layers {
            for (k, q) in layer.iter() {
                miss[k] *= 1.0 - q;
            }
        }
        for (p, m) in state.coverage().iter().zip(&miss) {
            worst = worst.max((p - (1.0 - m)).abs());
        }
        let any_certain: Vec<bool> = (0..n_points).map(|k| layers.iter().any(|l| l.get(k) == 1.0)).collect();
        for (k, &c) in any_certain.iter().enumerate() {
            if c && state.coverage()[k] != 1.0 {
                return Err(format!("cell {k} covered with certainty has P = {}", state.coverage()[k]));
            }
        }
        if coverage_probability(&[], n_points).iter().any(|&p| p != 0.0) || CoverageState::new(n_points).utility() != 0.0 {
            return Err("empty fleet covers something".into());
        }
    }
    check(worst <= 1e-9, format!("max |incremental - direct| = {worst:.2e} over 1000 layer sets"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_mono: f64 = 0.0;
    let mut worst_sub: f64 = 0.0;
    let mut checks = 0;
    for seed in 0..200 {
        let p = Pipeline::new("desk-small", seed);
        let w = p.weights(WeightVariant::Full);
        let w = w.values();
        let n = p.model.n_vehicles();
        for _ in 0..5 {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let big = rng.random_range(0..n);
            let small = rng.random_range(0..=big);
            let u = order[big];
            let (s_prime, s) = (&order[..big], &order[..small]);
            let f_s = utility_of(&p.model, s, w);
            let f_sp = utility_of(&p.model, s_prime, w);
            let mut with_u = s_prime.to_vec();
            with_u.push(u);
            let f_spu = utility_of(&p.model, &with_u, w);
            worst_mono = worst_mono.max(f_s - f_sp).max(f_sp - f_spu);
            let mut with_u_small = s.to_vec();
            with_u_small.push(u);
            let gain_s = utility_of(&p.model, &with_u_small, w) - f_s;
            let gain_sp = f_spu - f_sp;
            worst_sub = worst_sub.max(gain_sp - gain_s);
            checks += 1;
        }
    }
    check(
        worst_mono <= 1e-9 && worst_sub <= 1e-9,
        format!("{checks} checks on 200 scenarios; worst monotonicity slack {worst_mono:.1e}, submodularity slack {worst_sub:.1e}"),
    )
}

/// Criterion 3 instances: random sparse layers and desk-small scenarios, at most 12 vehicles.
fn small_instances() -> Vec<(VisitModel, WeightField, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for i in 0..80 {
        let n_vehicles = rng.random_range(6..=12);
        let n_points = rng.random_range(10..60);
        let q = (0..n_vehicles).map(|_| random_layer(&mut rng, n_points)).collect();
        let w = WeightField {
            n_cells: n_points,
            n_intervals: 1,
            w: (0..n_points).map(|_| rng.random_range(0.01..=1.0)).collect(),
            variant: WeightVariant::Full,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        };
        out.push((model_from_layers(q, n_points), w, (2 + i % 5) as f64));
    }
    for seed in 0..40 {
        let p = Pipeline::new("desk-small", 1000 + seed);
        let w = p.weights(WeightVariant::Full);
        out.push((p.model, w, (2 + seed % 5) as f64));
    }
    out
}

fn criterion_3(instances: &[(VisitModel, WeightField, f64)]) -> Outcome {
    let bound = 1.0 - (-1.0f64).exp();
    let mut ratios = Vec::new();
    for (model, w, budget) in instances {
        let greedy = select_optifleet(&SelectionProblem::new(model, w, *budget, Strategy::OptiFleet)).unwrap();
        let exact = select_exact(&SelectionProblem::new(model, w, *budget, Strategy::Exact), EXACT_MAX_VEHICLES).unwrap();
        ratios.push(if exact.final_utility > 0.0 { greedy.final_utility / exact.final_utility } else { 1.0 });
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    check(
        ratios.len() >= 100 && min >= bound && mean >= 0.95,
        format!("{} instances; min ratio {min:.4} (bound {bound:.4}), mean {mean:.4}", ratios.len()),
    )
}

fn criterion_4(instances: &[(VisitModel, WeightField, f64)]) -> Outcome {
    for (i, (model, w, budget)) in instances.iter().enumerate() {
        let problem = SelectionProblem::new(model, w, *budget, Strategy::OptiFleet);
        let plain = select_optifleet(&problem).unwrap();
        let lazy = lazy_greedy_accelerator(&problem).unwrap();
        if plain.picks != lazy.picks || plain.final_utility != lazy.final_utility {
            return Err(format!("instance {i}: lazy and plain greedy differ"));
        }
    }
    let p = Pipeline::new("desk-medium", 0);
    let w = p.weights(WeightVariant::Full);
    let problem = SelectionProblem::new(&p.model, &w, 32.0, Strategy::OptiFleet);
    let plain = select_optifleet(&problem).unwrap();
    let lazy = lazy_greedy_accelerator(&problem).unwrap();
    let speedup = plain.evaluations as f64 / lazy.evaluations as f64;
    check(
        plain.picks == lazy.picks && speedup >= 2.0,
        format!(
            "{} instances identical; desk-medium budget 32: {} vs {} gain evaluations ({speedup:.1}x)",
            instances.len(),
            plain.evaluations,
            lazy.evaluations
        ),
    )
}

fn criterion_5() -> Outcome {
    for k in [1usize, 2, 4, 8, 1024] {
        let pi = SparseLayer::from_dense(&vec![1.0 / k as f64; k]);
        let h = trajectory_entropy(&pi);
        if h != (k as f64).log2() {
            return Err(format!("uniform over {k}: H = {h:?}, expected {:?}", (k as f64).log2()));
        }
    }
    if trajectory_entropy(&SparseLayer::from_dense(&[0.0, 1.0, 0.0])) != 0.0 {
        return Err("point mass has non-zero entropy".into());
    }
    let q = SparseLayer::from_dense(&[0.2, 0.0, 0.7, 0.5]);
    let ones = vec![1.0; 4];
    let empty = CoverageState::new(4);
    if effective_coverage(&q, &empty, &ones) != q {
        return Err("effective coverage of an empty fleet is not q".into());
    }
    let mut full = CoverageState::new(4);
    full.add(0, &SparseLayer::from_dense(&[1.0; 4]), &ones).unwrap();
    let h = effective_entropy(&effective_coverage(&q, &full, &ones));
    check(h == 0.0, "log2 k exact for k in {1,2,4,8,1024}; point mass, full coverage and empty fleet identities hold".into())
}

fn criterion_6() -> Outcome {
    let sizes = [16usize, 24, 32, 40];
    let n_scenarios = 20u64;
    let mut sums = [[0.0f64; 3]; 4];
    for seed in 0..n_scenarios {
        let p = Pipeline::new("desk-medium", seed);
        let w = p.weights(WeightVariant::Full);
        for (i, &size) in sizes.iter().enumerate() {
            let b = size as f64;
            let improved = select_improved_optifleet(&SelectionProblem::new(&p.model, &w, b, Strategy::ImprovedOptiFleet)).unwrap();
            let greedy = lazy_greedy_accelerator(&SelectionProblem::new(&p.model, &w, b, Strategy::OptiFleet)).unwrap();
            let ra: f64 = (0..20)
                .map(|s| select_random(&SelectionProblem::new(&p.model, &w, b, Strategy::Random).with_seed(s)).unwrap().final_utility)
                .sum::<f64>()
                / 20.0;
            sums[i][0] += improved.final_utility;
            sums[i][1] += greedy.final_utility;
            sums[i][2] += ra;
        }
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, &size) in sizes.iter().enumerate() {
        let [imp, opt, ra] = sums[i].map(|s| s / n_scenarios as f64);
        let tol = 0.005 * ra;
        ok &= imp - opt >= -tol && opt - ra >= -tol;
        if size == 32 {
            ok &= imp >= 1.01 * ra;
        }
        parts.push(format!("{size}: {imp:.1}/{opt:.1}/{ra:.1}"));
    }
    check(ok, format!("mean utility improved/optifleet/ra over {n_scenarios} scenarios: {}", parts.join(", ")))
}

fn criterion_7(instances: &[(VisitModel, WeightField, f64)]) -> Outcome {
    let sizes = [8usize, 16, 32, 48, 64];
    let mut tested = 0;
    let non_increasing = |sel: &FleetSelection| sel.per_step_gain().windows(2).all(|g| g[1] <= g[0]);
    for (model, w, budget) in instances {
        let sel = select_optifleet(&SelectionProblem::new(model, w, *budget, Strategy::OptiFleet)).unwrap();
        if !non_increasing(&sel) {
            return Err("per-step gains increase on a small instance".into());
        }
        tested += 1;
    }
    let mut mapes = vec![Vec::new(); sizes.len()];
    for seed in 0..20 {
        let p = Pipeline::new("desk-medium", seed);
        let w = p.weights(WeightVariant::Full);
        for (i, &size) in sizes.iter().enumerate() {
            let mut problem = SelectionProblem::new(&p.model, &w, size as f64, Strategy::OptiFleet);
            problem.spend_full_budget = true;
            let sel = select_optifleet(&problem).unwrap();
            if !non_increasing(&sel) {
                return Err(format!("per-step gains increase on desk-medium seed {seed} size {size}"));
            }
            tested += 1;
            mapes[i].push(p.mape(&sel));
        }
    }
    let medians: Vec<f64> = mapes.into_iter().map(median).collect();
    check(
        medians.windows(2).all(|m| m[1] <= m[0]),
        format!(
            "gains non-increasing on {tested} runs; median MAPE at sizes {sizes:?}: {}",
            medians.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_8() -> Outcome {
    for (name, seed) in [("desk-small", 0), ("desk-medium", 0)] {
        let p = Pipeline::new(name, seed);
        let w = WeightField::uniform(p.model.n_points, 1);
        let mut problem = SelectionProblem::new(&p.model, &w, p.model.n_vehicles() as f64, Strategy::OptiFleet);
        problem.spend_full_budget = true;
        let sel = select(&problem, false).unwrap();
        if sel.len() != p.model.n_vehicles() {
            return Err(format!("{name}: full budget selected {} of {}", sel.len(), p.model.n_vehicles()));
        }
        for r in evaluate_selection(&sel, &p.readings, MapeAggregation::PerCell).unwrap() {
            if r.scores.rmse != Some(0.0) || r.scores.mape != Some(0.0) || r.scores.coverage_ratio != 1.0 {
                return Err(format!("{name} {}: rmse {:?} mape {:?} coverage {}", r.pollutant, r.scores.rmse, r.scores.mape, r.scores.coverage_ratio));
            }
        }
    }
    Ok("rmse 0, mape 0, coverage 1 for every pollutant on desk-small and desk-medium".into())
}

fn criterion_9() -> Outcome {
    let mut temporal = Vec::new();
    let mut spatial = Vec::new();
    let mut identical_fleets = 0;
    for seed in 0..20 {
        let p = Pipeline::new("desk-medium", seed);
        assert!(p.scenario.config.field.traffic_coupling > 0.0);
        let run = |variant| {
            let w = p.weights(variant);
            select_improved_optifleet(&SelectionProblem::new(&p.model, &w, 32.0, Strategy::ImprovedOptiFleet)).unwrap()
        };
        let (t, s) = (run(WeightVariant::TemporalOnly), run(WeightVariant::SpatialOnly));
        if t.indices == s.indices {
            identical_fleets += 1;
        }
        temporal.push(p.mape(&t));
        spatial.push(p.mape(&s));

        // the uniform variant must reproduce the unweighted pipeline exactly
        let uniform = p.weights(WeightVariant::Uniform);
        let plain = WeightField::uniform(p.model.n_points, 1);
        for strategy in [Strategy::OptiFleet, Strategy::ImprovedOptiFleet] {
            let a = select(&SelectionProblem::new(&p.model, &uniform, 32.0, strategy), false).unwrap();
            let b = select(&SelectionProblem::new(&p.model, &plain, 32.0, strategy), false).unwrap();
            if a.picks != b.picks || a.final_utility != b.final_utility {
                return Err(format!("seed {seed}: uniform weights differ from the unweighted pipeline"));
            }
        }
    }
    let (mt, ms) = (median(temporal), median(spatial));
    check(
        mt < ms,
        format!("median MAPE at size 32 over 20 scenarios: temporal_only {mt:.4} vs spatial_only {ms:.4} ({identical_fleets}/20 identical fleets); uniform == unweighted"),
    )
}

fn peak_rss_gb() -> Option<f64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0 / 1024.0)
}

fn criterion_10() -> Outcome {
    let config = preset("guangzhou-shape", 0).unwrap();
    let active = config.grid.n_active_cells();
    let scenario = generate(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectories.csv");
    scenario.write_trajectories(&path).unwrap();
    let n_pings = scenario.pings.len();
    drop(scenario);

    let started = Instant::now();
    let index = SpatiotemporalIndex::build(config.grid.clone()).unwrap();
    let (binned, _) = ingest_file(&path, &ColumnMapping::default(), &index).unwrap();
    let model = VisitModel::from_counts(&binned.visits, &config.grid);
    let ingest_s = started.elapsed().as_secs_f64();
    let w = WeightField::uniform(model.n_points, 1);
    let sel = select_optifleet(&SelectionProblem::new(&model, &w, 200.0, Strategy::OptiFleet)).unwrap();
    let total = started.elapsed();
    let peak = peak_rss_gb();
    let detail = format!(
        "{active} active cells, {} vehicles, {n_pings} pings: ingest {ingest_s:.1}s, ingest + select {:.1}s ({} picks), peak RSS {}",
        model.n_vehicles(),
        total.as_secs_f64(),
        sel.len(),
        peak.map_or("unknown".into(), |g| format!("{g:.2} GB"))
    );
    check(
        active == 3811 && model.n_vehicles() == 320 && sel.len() == 200 && total < Duration::from_secs(600) && peak.is_none_or(|g| g < 8.0),
        detail,
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fleetsense"))
        .current_dir(dir)
        .env_remove("FLEETSENSE_OUTPUT_ROOT")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn criterion_11() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let steps: &[&[&str]] = &[
        &["generate", "--preset", "desk-small", "--seed", "5", "-o", "gen"],
        &["ingest", "--trajectories", "gen/trajectories.csv", "--grid", "gen/grid.conf", "--costs", "gen/costs.csv", "-o", "ing"],
        &["weights", "--ingest", "ing", "--static", "gen/static_features.csv", "--dynamic", "gen/dynamic_features.csv", "-o", "w"],
        &["select", "--ingest", "ing", "--weights", "w/weights.csv", "--strategy", "improved", "--budget", "6", "-o", "sel"],
        &["select", "--ingest", "ing", "--strategy", "ra", "--budget", "6", "--seed", "9", "-o", "ra"],
        &["evaluate", "--ingest", "ing", "--selection", "sel/selection.json", "-o", "ev"],
        &["sweep", "--ingest", "ing", "--weights", "w/weights.csv", "--sizes", "2..6:2", "--seeds", "4", "-o", "sw"],
        &["ablation", "--ingest", "ing", "--static", "gen/static_features.csv", "--dynamic", "gen/dynamic_features.csv", "--sizes", "4,8", "--seeds", "3", "-o", "ab"],
    ];
    for args in steps {
        cli(dir, args)?;
    }
    let mut compared = 0;
    for args in steps {
        let out = args[args.len() - 1];
        let again = format!("{out}-replay");
        cli(dir, &["replay", &format!("{out}/manifest.json"), "-o", &again])?;
        let mut names: Vec<String> = fs::read_dir(dir.join(out))
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .filter(|n| n != "manifest.json")
            .collect();
        names.sort();
        for name in names {
            let a = fs::read(dir.join(out).join(&name)).unwrap();
            let b = fs::read(dir.join(&again).join(&name)).map_err(|e| format!("{again}/{name}: {e}"))?;
            if a != b {
                return Err(format!("{out}/{name} differs on replay"));
            }
            compared += 1;
        }
    }
    Ok(format!("{} subcommands replayed; {compared} data files byte-identical", steps.len()))
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let start = Instant::now();
    let mut results: Vec<(usize, &str, Outcome, Duration)> = Vec::new();
    let mut run = |n: usize, name: &'static str, limit_s: u64, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let elapsed = t.elapsed();
        let outcome = within(limit_s, elapsed, outcome);
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {tag}  {name} [{:.1}s]: {detail}", elapsed.as_secs_f64());
        results.push((n, name, outcome, elapsed));
    };
    let instances = small_instances();
    run(1, "coverage kernel", 10, &mut criterion_1);
    run(2, "submodularity and monotonicity", 60, &mut criterion_2);
    run(3, "greedy approximation bound", 300, &mut || criterion_3(&instances));
    run(4, "lazy greedy equivalence", 300, &mut || criterion_4(&instances));
    run(5, "entropy identities", 1, &mut criterion_5);
    run(6, "strategy ordering", 600, &mut criterion_6);
    run(7, "diminishing returns", 600, &mut || criterion_7(&instances));
    run(8, "full-fleet ground truth", 60, &mut criterion_8);
    run(9, "weight ablation", 900, &mut criterion_9);
    run(10, "scale check", 600, &mut criterion_10);
    run(11, "determinism", 600, &mut criterion_11);
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.1}s",
        results.len() - failed.len(),
        results.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
