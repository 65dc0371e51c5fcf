use std::fs;
use std::path::{Path, PathBuf};

use ramgnn::pipeline::{
    read_report, run_stages, write_artifacts, Mode, PipelineConfig, PipelineError, Stage,
};

fn sample() -> PipelineConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/kkbox/sample.toml");
    PipelineConfig::load(&path).unwrap()
}

fn lines(path: PathBuf) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn artifacts_round_trip_through_the_output_directory() {
    let cfg = sample();
    let art = run_stages(&cfg, Stage::Evaluate).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&art, dir.path()).unwrap();

    assert_eq!(read_report(dir.path()).unwrap(), art.report);
    assert_eq!(lines(dir.path().join("metrics.tsv")), 3 * cfg.eval.ks.len());
    let p = art.report.pretrain.as_ref().unwrap();
    assert_eq!(
        lines(dir.path().join("trajectory.tsv")),
        p.user.trajectory.len() + p.item.trajectory.len()
    );
    assert_eq!(lines(dir.path().join("test.tsv")), art.split.test.len());
    assert_eq!(lines(dir.path().join("train.tsv")), art.split.train.len());
    for name in [
        "user_entity.emb",
        "item_rel_value.emb",
        "recommendations.tsv",
    ] {
        assert!(dir.path().join(name).is_file(), "{name} missing");
    }
}

#[test]
fn single_mode_skips_pretraining() {
    let mut cfg = sample();
    cfg.run.mode = Mode::Single;
    let art = run_stages(&cfg, Stage::Evaluate).unwrap();
    assert!(art.report.pretrain.is_none());
    assert!(art.embeddings.is_none());
    assert!(art.report.random_init);
    assert!(art.report.finetune.is_some());
}

#[test]
fn stages_stop_where_asked() {
    let cfg = sample();
    let art = run_stages(&cfg, Stage::Ingest).unwrap();
    assert!(art.report.pretrain.is_none() && art.model.is_none());
    assert!(art.report.metrics.is_empty());
    let art = run_stages(&cfg, Stage::Pretrain).unwrap();
    assert!(art.embeddings.is_some() && art.model.is_none());
}

#[test]
fn reruns_are_identical() {
    let cfg = sample();
    let a = run_stages(&cfg, Stage::Evaluate).unwrap();
    let b = run_stages(&cfg, Stage::Evaluate).unwrap();
    assert_eq!(a.report.without_timings(), b.report.without_timings());
    assert_eq!(a.embeddings, b.embeddings);
    assert_eq!(a.model, b.model);
}

#[test]
fn unknown_keys_are_config_errors() {
    let text = "[dataset]\nkind = \"kkbox\"\npath = \"x\"\n[finetune]\nlearning_rate = 0.1\n";
    let e = PipelineConfig::from_toml(text).unwrap_err();
    assert!(matches!(e, PipelineError::Config(_)));
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn missing_dataset_is_a_data_error() {
    let mut cfg = sample();
    cfg.dataset.path = PathBuf::from("/nonexistent/kkbox");
    let e = run_stages(&cfg, Stage::Ingest).unwrap_err();
    assert_eq!(e.exit_code(), 3, "{e}");
}
