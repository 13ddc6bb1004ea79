use dtd_core::checkpoint::{encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint};
use dtd_core::config::{load_config, DtDConfig};
use dtd_core::controller::Agents;
use dtd_core::envs::make_env;
use dtd_core::harness::{
    compute_heatmap, eval_csv, evaluate_checkpoint, export_heatmap, run_eval, run_train, Algo, HeatmapRequest,
    RunManifest, METRICS_HEADER,
};
use dtd_core::Error;

fn tiny(env: &str) -> DtDConfig {
    let mut cfg = DtDConfig::defaults_for(env);
    cfg.epochs = 2;
    cfg.episodes_per_epoch = 2;
    cfg.trainings_per_epoch = 3;
    cfg.batch_size = 16;
    cfg.eval_episodes = 3;
    cfg.low.hidden_layers = vec![16, 16];
    cfg.high.hidden_layers = vec![16, 16];
    cfg
}

#[test]
fn empty_config_file_gives_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# nothing here\n").unwrap();
    assert_eq!(load_config(&path).unwrap(), DtDConfig::default());
}

#[test]
fn config_round_trips_through_text() {
    let mut cfg = tiny("pick-place");
    cfg.sub_episodes = 5;
    cfg.relabel_prob = 0.6;
    cfg.high.explore_eps = 0.05;
    cfg.record_wall_time = true;
    let text = cfg.to_config_string();
    assert_eq!(DtDConfig::parse(&text).unwrap(), cfg);
}

#[test]
fn divisibility_violation_names_the_key() {
    let err = DtDConfig::parse("sub_episodes: 3\nhorizon: 50\n").unwrap_err();
    assert!(matches!(&err, Error::Config { key, .. } if key == "sub_episodes"), "{err}");
    let err = DtDConfig::parse("batch_sise: 3\n").unwrap_err();
    assert!(err.to_string().contains("batch_sise"));
    let err = DtDConfig::parse("gamma: fast\n").unwrap_err();
    assert!(err.to_string().contains("gamma"));
}

#[test]
fn train_writes_metrics_checkpoints_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = RunManifest::new(&tiny("planar-push"), Algo::Dtd, 2, dir.path()).unwrap();
    let summary = run_train(&manifest).unwrap();
    assert_eq!(summary.runs.len(), 2);
    for run in &summary.runs {
        let csv = std::fs::read_to_string(run.dir.join("metrics.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 11));
        for name in ["epoch_0001.ckpt", "epoch_0002.ckpt", "latest.ckpt", "best.ckpt"] {
            assert!(run.checkpoint_path(name).exists(), "{name}");
        }
    }
    let aggregate = std::fs::read_to_string(manifest.algo_dir().join("aggregate.csv")).unwrap();
    assert_eq!(aggregate.lines().count(), 3);
    assert!(manifest.algo_dir().join("manifest.txt").exists());
}

#[test]
fn reruns_are_byte_identical_and_parallel_matches_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("block-rotate");
    let a = RunManifest::new(&cfg, Algo::Dtd, 2, dir.path().join("a")).unwrap();
    let b = RunManifest::new(&cfg, Algo::Dtd, 2, dir.path().join("b")).unwrap();
    let mut c = RunManifest::new(&cfg, Algo::Dtd, 2, dir.path().join("c")).unwrap();
    c.parallel = true;
    run_train(&a).unwrap();
    run_train(&b).unwrap();
    run_train(&c).unwrap();
    for seed in &a.seeds {
        let read = |m: &RunManifest| std::fs::read(m.seed_dir(*seed).join("metrics.csv")).unwrap();
        assert_eq!(read(&a), read(&b));
        assert_eq!(read(&a), read(&c));
        let ck = |m: &RunManifest| std::fs::read(m.seed_dir(*seed).join("checkpoints/latest.ckpt")).unwrap();
        assert_eq!(ck(&a), ck(&b));
    }
}

#[test]
fn presets_shape_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("planar-push");
    let ddpg = RunManifest::new(&cfg, Algo::Ddpg, 1, dir.path()).unwrap();
    assert_eq!((ddpg.config.sub_episodes, ddpg.config.relabel_prob), (1, 0.0));
    let her = RunManifest::new(&cfg, Algo::Her, 1, dir.path()).unwrap();
    assert_eq!((her.config.sub_episodes, her.config.relabel_prob), (1, cfg.relabel_prob));
    assert!(RunManifest::new(&cfg, Algo::Dtd, 0, dir.path()).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny("pick-place");
    cfg.sub_episodes = 5;
    let spec = make_env("pick-place").unwrap().spec().clone();
    let mut agents = Agents::new(&spec, &cfg, 12).unwrap();
    agents.low.normalizer.update(&vec![0.25; 4 * agents.low.input_dim()]).unwrap();
    let path = dir.path().join("a.ckpt");
    save_checkpoint(&path, &cfg, &agents).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.env, "pick-place");
    assert_eq!((loaded.sub_episodes, loaded.horizon), (5, 50));
    for (a, b) in [(&agents.low, &loaded.agents.low), (&agents.high, &loaded.agents.high)] {
        assert_eq!(a.actor, b.actor);
        assert_eq!(a.critic, b.critic);
        assert_eq!(a.actor_target, b.actor_target);
        assert_eq!(a.critic_target, b.critic_target);
        assert_eq!(a.normalizer, b.normalizer);
        assert_eq!(a.config, b.config);
    }
    // re-encoding the loaded agents reproduces the file
    assert_eq!(encode_checkpoint("pick-place", 5, 50, &loaded.agents), std::fs::read(&path).unwrap());
}

#[test]
fn corrupted_checkpoints_are_refused() {
    let cfg = tiny("planar-push");
    let spec = make_env("planar-push").unwrap().spec().clone();
    let agents = Agents::new(&spec, &cfg, 13).unwrap();
    let bytes = encode_checkpoint("planar-push", 2, 50, &agents);

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::decode(&bad_magic), Err(Error::Format(_))));

    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    assert!(matches!(Checkpoint::decode(&bad_version), Err(Error::Format(_))));

    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(Checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }

    // planar-push networks labeled as pick-place
    let relabeled = encode_checkpoint("pick-place", 2, 50, &agents);
    assert!(matches!(Checkpoint::decode(&relabeled), Err(Error::Shape(_))));
}

#[test]
fn heatmap_grid_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("planar-push");
    let spec = make_env("planar-push").unwrap().spec().clone();
    let agents = Agents::new(&spec, &cfg, 14).unwrap();
    let ckpt = dir.path().join("h.ckpt");
    save_checkpoint(&ckpt, &cfg, &agents).unwrap();
    let out = dir.path().join("maps/h.csv");
    let map = export_heatmap(&HeatmapRequest {
        checkpoint: ckpt.clone(),
        scenario: "diag".into(),
        resolution: 20,
        out: out.clone(),
    })
    .unwrap();
    assert_eq!(map.cells.len(), 400);
    assert!(map.cells.iter().all(|c| c.2.is_finite()));
    let text = std::fs::read_to_string(&out).unwrap();
    let data_rows = text.lines().skip(1).filter(|l| !l.starts_with('#')).count();
    assert_eq!(data_rows, 400);
    assert!(text.lines().last().unwrap().starts_with("# min="));
    let loaded = load_checkpoint(&ckpt).unwrap();
    assert!(compute_heatmap(&loaded, "diag", 1).is_err());
    assert!(matches!(compute_heatmap(&loaded, "corner", 10), Err(Error::UnknownScenario { .. })));

    let rotate_cfg = tiny("block-rotate");
    let rspec = make_env("block-rotate").unwrap().spec().clone();
    let rckpt = dir.path().join("r.ckpt");
    save_checkpoint(&rckpt, &rotate_cfg, &Agents::new(&rspec, &rotate_cfg, 1).unwrap()).unwrap();
    assert!(compute_heatmap(&load_checkpoint(&rckpt).unwrap(), "diag", 10).is_err());
}

#[test]
fn eval_report_is_consistent_and_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny("planar-push");
    let spec = make_env("planar-push").unwrap().spec().clone();
    let ckpt = dir.path().join("e.ckpt");
    save_checkpoint(&ckpt, &cfg, &Agents::new(&spec, &cfg, 15).unwrap()).unwrap();
    let a = run_eval(&ckpt, 10, 4).unwrap();
    let b = evaluate_checkpoint(&load_checkpoint(&ckpt).unwrap(), 10, 4).unwrap();
    assert_eq!(a, b);
    let csv = eval_csv(&a);
    assert_eq!(csv.lines().count(), 11);
    let successes: f64 = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse::<f64>().unwrap()).sum();
    assert_eq!(successes / 10.0, a.success_rate);
    assert!(run_eval(dir.path().join("missing.ckpt"), 10, 4).is_err());
}
