use ndarray::Array3;
use spde2d::harness::output::{replicates_csv, write_outputs};
use spde2d::harness::report::estimate_dataset;
use spde2d::model::initial_coefficient;
use spde2d::*;

const SMALL: &str = "model.theta0 = 4\nmodel.theta1 = 0.3\nmodel.eta1 = 0.3\nmodel.theta2 = 0.3\n\
model.alpha = 0.5\nmodel.epsilon = 0.01\ngrid.N = 200\ngrid.M1 = 20\ngrid.M2 = 20\ngrid.n = 50\n\
grid.m_bar1 = 5\ngrid.m_bar2 = 5\ngrid.truncation = fixed:256\nrun.seed = 11\n";

/// Field equal to `ξ` at both time points of an `N = 1` grid.
fn sampled(xi: &InitialField, m: usize) -> ObservationGrid {
    let grid = GridSpec::new(1, m, m).unwrap();
    let field =
        Array3::from_shape_fn((2, m + 1, m + 1), |(_, a, b)| xi.value(a as f64 / m as f64, b as f64 / m as f64));
    ObservationGrid { grid, epsilon: 0.0, field, truncation: None, seed: None }
}

#[test]
fn approximate_coordinate_error_shrinks_with_the_grid() {
    let params = SpdeParams::new(4.0, 0.3, 0.3, 0.3).unwrap();
    let xi = InitialField::polynomial();
    let truth = initial_coefficient(&params, &xi, EigenIndex::ONE_ONE, &GaussLegendre::new(64)).unwrap();
    let times = build_thinned_time_grid(1, 1).unwrap();
    let errs: Vec<f64> = [8, 16, 32, 64]
        .iter()
        .map(|&m| {
            let x = approximate_coordinate(&sampled(&xi, m), &times, (0.3, 0.3, 0.3), EigenIndex::ONE_ONE).unwrap();
            (x.values[0] - truth).abs()
        })
        .collect();
    assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    assert!(errs[3] < 0.02 * truth.abs(), "{errs:?}");
}

#[test]
fn simulation_is_reproducible_and_seed_dependent() {
    let params = SpdeParams::new(4.0, 0.3, 0.3, 0.3).unwrap();
    let noise = NoiseSpec::q2(0.5, 1.0).unwrap();
    let grid = GridSpec::new(100, 10, 12).unwrap();
    let settings = SimulationSettings { truncation: TruncationPolicy::Fixed { k: 64 }, ..Default::default() };
    let sim = |rep| {
        simulate_dataset(&params, &noise, &InitialField::polynomial(), 0.05, grid, &settings, SeedPath::new(3, rep))
            .unwrap()
    };
    let (a, b, c) = (sim(0), sim(0), sim(1));
    assert_eq!(a.field, b.field);
    assert_ne!(a.field, c.field);
    assert_eq!(a.truncation, Some(64));
}

#[test]
fn replicates_do_not_depend_on_the_replicate_count() {
    let run = |reps: usize| {
        let cfg = ExperimentConfig::parse(&format!("{SMALL}run.replicates = {reps}\n")).unwrap();
        run_replicates(&cfg).unwrap()
    };
    let (short, long) = (run(2), run(4));
    let (ReplicateTable::Spde(a), ReplicateTable::Spde(b)) = (&short, &long) else { panic!("SPDE tables expected") };
    assert_eq!(a[..], b[..2]);
    assert!(a.iter().all(|r| r.fail_code.is_none() && r.theta0_hat.is_some()));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let cfg = ExperimentConfig::parse(&format!("{SMALL}run.replicates = 3\n")).unwrap();
    let dirs = [tempdir("a"), tempdir("b")];
    for d in &dirs {
        let table = run_replicates(&cfg).unwrap();
        write_outputs(d, &cfg, &table).unwrap().unwrap();
    }
    for f in ["replicates.csv", "summary.json"] {
        let a = std::fs::read(dirs[0].join(f)).unwrap();
        let b = std::fs::read(dirs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let text = replicates_csv(&run_replicates(&cfg).unwrap());
    assert!(text.starts_with("rep,theta1_hat,eta1_hat,theta2_hat,lambda11_hat,theta0_hat,mu0_hat,stud_eps,stud_sqrtn,clamped,fail_code,wall_ms\n"));
    assert_eq!(text.lines().count(), 4);
    for d in dirs {
        std::fs::remove_dir_all(d).unwrap();
    }
}

fn tempdir(tag: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("spde2d-pipeline-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn noiseless_data_with_known_shape_recovers_theta0() {
    let text = SMALL.replace("model.epsilon = 0.01", "model.epsilon = 0") + "estimation.spatial = truth\n";
    let cfg = ExperimentConfig::parse(&text).unwrap();
    let params = SpdeParams::new(4.0, 0.3, 0.3, 0.3).unwrap();
    let obs = simulate_dataset(
        &params,
        &NoiseSpec::q1(0.5).unwrap(),
        &InitialField::single_mode(params, 1.0),
        0.0,
        GridSpec::new(200, 20, 20).unwrap(),
        &SimulationSettings { truncation: TruncationPolicy::Fixed { k: 256 }, ..Default::default() },
        SeedPath::new(0, 0),
    )
    .unwrap();
    let rep = estimate_dataset(&cfg, &obs).unwrap();
    assert!((rep.lambda11 - params.lambda11()).abs() < 1e-6, "{}", rep.lambda11);
    assert!((rep.theta0 - 4.0).abs() < 1e-6);
}

#[test]
fn csv_dump_round_trips_through_estimation() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let params = SpdeParams::new(4.0, 0.3, 0.3, 0.3).unwrap();
    let obs = simulate_dataset(
        &params,
        &NoiseSpec::q1(0.5).unwrap(),
        &InitialField::polynomial(),
        0.01,
        GridSpec::new(200, 20, 20).unwrap(),
        &SimulationSettings { truncation: TruncationPolicy::Fixed { k: 256 }, ..Default::default() },
        SeedPath::new(11, 0),
    )
    .unwrap();
    let mut buf = Vec::new();
    obs.write_csv(&mut buf).unwrap();
    let back = ObservationGrid::read_csv(buf.as_slice(), 0.01).unwrap();
    let a = estimate_dataset(&cfg, &obs).unwrap();
    let b = estimate_dataset(&cfg, &back).unwrap();
    assert_eq!(a.theta0, b.theta0);
    assert!(a.theta2 > 0.0 && a.lambda11 > 0.0);
}
