use pad_core::config::RunConfig;
use pad_core::eval::{render, ReportFormat};
use pad_core::pipeline::{load_models, save_models, Pipeline};
use pad_core::synth::{generate_synthetic_dataset, SynthSpec};

#[test]
fn synthetic_train_evaluate_and_reload() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        n_subjects: 5,
        videos_per_subject: 2,
        frames_per_video: 3,
        seed: 11,
        attack_fraction: 0.5,
    };
    generate_synthetic_dataset(&spec, dir.path()).unwrap();
    let cfg = RunConfig::load(&dir.path().join("run.toml")).unwrap();
    let p = Pipeline::new(cfg.clone(), true, false, None).unwrap();
    let manifests = p.load_manifests().unwrap();
    let (_, models) = p.train(&manifests).unwrap();
    let report = p.evaluate(&manifests, &models).unwrap();
    println!("{}", render(&report, ReportFormat::Text));
    assert_eq!(report.rows.len(), 4);
    assert_eq!(report.config_digest, cfg.digest());

    let model_dir = dir.path().join("models");
    save_models(&model_dir, &models, &cfg.digest()).unwrap();
    let reloaded = load_models(&model_dir, &cfg.digest()).unwrap();
    assert_eq!(p.evaluate(&manifests, &reloaded).unwrap(), report);
    assert!(load_models(&model_dir, "other").is_err());

    // second run is served from the cache
    let again = Pipeline::new(cfg, true, false, None).unwrap();
    let summary = again.run_stage(&manifests, pad_core::cache::Stage::Features).unwrap();
    assert_eq!(summary.cached, summary.samples);
}
