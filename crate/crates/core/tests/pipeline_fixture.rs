use std::fs;
use std::path::Path;
use std::time::Instant;

use saetm::pipeline::{eval_file, run_pipeline, topics_file, PipelineConfig, PipelineError, StageStatus, REPORT_FILE};
use saetm::synthetic::{Fixture, FixtureConfig, FIXTURE_PIPELINE};

fn write_fixture(dir: &Path) -> PipelineConfig {
    Fixture::generate(&FixtureConfig { seed: 11, ..Default::default() }).unwrap().write(dir).unwrap();
    PipelineConfig::load(&dir.join(FIXTURE_PIPELINE)).unwrap()
}

fn with_out(cfg: &PipelineConfig, out: &Path) -> PipelineConfig {
    PipelineConfig { out_dir: out.to_path_buf(), ..cfg.clone() }
}

#[test]
fn fixture_runs_end_to_end_deterministically_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_fixture(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));

    let start = Instant::now();
    let first = run_pipeline(&with_out(&cfg, &a)).unwrap();
    run_pipeline(&with_out(&cfg, &b)).unwrap();
    let elapsed = start.elapsed();
    println!("two runs in {elapsed:?}");
    assert!(elapsed.as_secs() < 300);
    assert!(first.stages.iter().all(|r| r.status == StageStatus::Ran));

    for k in [16, 4] {
        for f in [topics_file(k), eval_file(k), format!("activity_k{k}.csv"), format!("activity_k{k}.svg")] {
            let (x, y) = (fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
            assert_eq!(x, y, "{f} differs between runs");
        }
    }
    for f in ["sae.ckpt", "emissions.emis", "topic_points.embv", REPORT_FILE, "hashes.json"] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let report: serde_json::Value = serde_json::from_slice(&fs::read(a.join(eval_file(16))).unwrap()).unwrap();
    assert_eq!(report["c_i"], 100.0);

    let again = run_pipeline(&with_out(&cfg, &a)).unwrap();
    assert!(again.stages.iter().all(|r| r.status == StageStatus::Cached), "{:?}", again.stages);

    let mut fewer = with_out(&cfg, &a);
    fewer.merge.k_prime = vec![10];
    let s = run_pipeline(&fewer).unwrap();
    assert_eq!(s.status("interpret"), Some(StageStatus::Cached));
    assert_eq!(s.status("embed"), Some(StageStatus::Cached));
    assert_eq!(s.status("merge_k10"), Some(StageStatus::Ran));
    let log = fs::read_to_string(a.join("run_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let last: serde_json::Value = serde_json::from_str(log.lines().last().unwrap()).unwrap();
    let interp = last["stages"].as_array().unwrap().iter().find(|r| r["stage"] == "interpret").unwrap();
    assert_eq!(interp["status"], "cached");
}

#[test]
fn failing_stage_is_named_and_earlier_artifacts_remain() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = write_fixture(tmp.path());
    cfg.sae.train.steps = 300;
    cfg.interpret.steps = 100;
    cfg.merge.k_prime = vec![500];
    let out = tmp.path().join("out");
    match run_pipeline(&with_out(&cfg, &out)) {
        Err(PipelineError::Stage { stage, .. }) => assert_eq!(stage, "merge_k500"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(out.join("emissions.emis").exists());
    assert!(out.join("topic_points.embv").exists());
}

#[test]
fn misaligned_inputs_stop_before_any_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_fixture(tmp.path());
    let corpus = fs::read_to_string(&cfg.data.corpus).unwrap();
    let short: String = corpus.lines().skip(1).map(|l| format!("{l}\n")).collect();
    fs::write(&cfg.data.corpus, short).unwrap();
    let err = run_pipeline(&with_out(&cfg, &tmp.path().join("out"))).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().starts_with("E_ALIGN"), "{err}");
    assert!(!tmp.path().join("out").join("hashes.json").exists());
}
