use causalmix::control::ScenarioConfig;
use causalmix::demo::demo_table;
use causalmix::pipeline::{fit, GeneratorBundle, LatentPrior, SyntheticTable, TrainConfig};

fn constant_effect() -> ScenarioConfig {
    ScenarioConfig {
        tau: "0.1".into(),
        kappa: "0".into(),
        log_alpha: "0".into(),
        eta: None,
    }
}

fn quick() -> TrainConfig {
    TrainConfig {
        max_epochs: 5,
        patience: 2,
        hidden: vec![16],
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn fit_save_load_generate_round_trip() {
    let table = demo_table(400, 4).unwrap();
    let result = fit(&table, &constant_effect(), &quick()).unwrap();
    assert!(!result.loss_pre.is_empty() && !result.loss_post.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.json");
    result.bundle.save(&path).unwrap();
    let bundle = GeneratorBundle::load(&path).unwrap();

    let a = bundle.generate(250, 9, LatentPrior::Bgmm).unwrap();
    let b = result.bundle.generate(250, 9, LatentPrior::Bgmm).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.n_rows(), 250);
    assert!(a.truth.tau.iter().all(|&t| (t - 0.1).abs() < 1e-12));
    assert!((a.true_ate() - 0.1).abs() < 1e-12);

    // both potential outcomes agree with the observed one on the drawn arm
    let y = a.table.outcome();
    for i in 0..a.n_rows() {
        let pick = if a.treatment()[i] == 1.0 { a.y1[i] } else { a.y0[i] };
        assert_eq!(pick, y[i]);
    }

    let csv = dir.path().join("synth.csv");
    a.save_csv(&csv).unwrap();
    let back = SyntheticTable::load_csv(&csv, bundle.schema()).unwrap();
    assert_eq!(back.n_rows(), 250);
    assert_eq!(back.truth.tau, a.truth.tau);
}

#[test]
fn standard_normal_prior_differs_from_bgmm() {
    let table = demo_table(300, 5).unwrap();
    let bundle = fit(&table, &constant_effect(), &quick()).unwrap().bundle;
    let g = bundle.generate(100, 2, LatentPrior::StandardNormal).unwrap();
    let m = bundle.generate(100, 2, LatentPrior::Bgmm).unwrap();
    assert_ne!(g.table, m.table);
}
