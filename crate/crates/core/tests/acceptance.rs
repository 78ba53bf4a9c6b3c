//! Acceptance criteria, one line per criterion. Exits non-zero when any fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saetm::ctm::verify;
use saetm::eval::{make_intruder_tasks, make_rating_tasks, run_judge, uniform_transport, wmd, StubJudge};
use saetm::interpret::{learn_emissions, top_words, EmissionMatrix, InterpretConfig};
use saetm::merge::{merge_topics, WordEmbeddingTable};
use saetm::pipeline::{eval_file, run_pipeline, topics_file, PipelineConfig};
use saetm::sae::{train, ActivationKind, TrainConfig};
use saetm::synthetic::{dictionary_data, Fixture, FixtureConfig, FIXTURE_PIPELINE};

use common::{disjoint_model, kmeans_optimal_instances, matched_directions, peaked_rows, sample_corpus, tv, uniform_transport_lp};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok { Ok(detail) } else { Err(detail) }
}

fn map_equivalence() -> Verdict {
    let c = verify::map_equivalence(1000, 0).map_err(|e| e.to_string())?;
    check(c.passed, c.detail)
}

fn limit_law() -> Verdict {
    let (c, _) = verify::limit_law(1_000_000, 0).map_err(|e| e.to_string())?;
    check(c.passed, c.detail)
}

fn density() -> Verdict {
    let c = verify::density(1.5, 1.0, 1_000_000, 0).map_err(|e| e.to_string())?;
    check(c.passed, c.detail)
}

fn dictionary_recovery() -> Verdict {
    let data = dictionary_data(50_000, 16, 16, 2, 4.0, 1e-4, 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        activation: ActivationKind::TopK,
        expansion_factor: 2,
        batch_size: 256,
        steps: 3000,
        learning_rate: 0.005,
        k_active: 2,
        seed: 1,
        dead_feature_window: 100,
        ..Default::default()
    };
    let out = train(data.embeddings.view(), cfg).map_err(|e| e.to_string())?;
    let dirs = out.model.feature_directions();
    let matched = matched_directions(&data.directions, &dirs, 0.95);
    let r2 = out.model.r_squared(data.embeddings.view()).map_err(|e| e.to_string())?;
    check(
        dirs.nrows() == 32 && matched >= 14 && r2 >= 0.95,
        format!("K={}, matched {matched}/16 at |cos| >= 0.95, R^2 = {r2:.4}", dirs.nrows()),
    )
}

fn emission_recovery() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = peaked_rows(4, 20, &mut rng);
    let (corpus, acts) = sample_corpus(&truth, 2000, 60, 22);
    let cfg = InterpretConfig { pi: 0.0, idf_weighting: false, steps: 1500, batch_size: 500, learning_rate: 0.05, ..Default::default() };
    let learned = learn_emissions(&corpus, &acts, &cfg).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    let mut same_top = true;
    for k in 0..4 {
        worst = worst.max(tv(learned.b.row(k), truth.row(k)));
        let mut a: Vec<u32> = learned.top_words(k, 5).into_iter().map(|w| w.0).collect();
        let mut b: Vec<u32> = top_words(truth.row(k), 5).into_iter().map(|w| w.0).collect();
        a.sort();
        b.sort();
        same_top &= a == b;
    }
    check(worst < 0.05 && same_top, format!("max TV {worst:.4}, top-5 sets equal: {same_top}"))
}

fn merge_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut dist_err, mut mass_err) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let k = rng.random_range(2..10);
        let v = rng.random_range(2..15);
        let k_prime = rng.random_range(1..=k);
        let mut b = Array2::from_shape_fn((k, v), |_| rng.random::<f64>());
        for mut row in b.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        let prior: Vec<f64> = (0..k).map(|_| rng.random::<f64>() / k as f64).collect();
        let mut labels: Vec<usize> = (0..k).map(|i| if i < k_prime { i } else { rng.random_range(0..k_prime) }).collect();
        labels.rotate_left(rng.random_range(0..k));
        let em = EmissionMatrix { b: b.clone(), feature_prior: prior.clone(), active_mask: vec![true; k] };
        let model = merge_topics(&em, &labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), k_prime).map_err(|e| e.to_string())?;
        for c in 0..k_prime {
            let members: Vec<usize> = (0..k).filter(|&i| labels[i] == c).collect();
            let mass: f64 = members.iter().map(|&i| prior[i]).sum();
            for w in 0..v {
                let expected: f64 = members.iter().map(|&i| prior[i] * b[[i, w]]).sum::<f64>() / mass;
                dist_err = dist_err.max((model.topics[c].word_dist[w] - expected).abs());
            }
        }
        mass_err = mass_err.max((model.total_prevalence() - prior.iter().sum::<f64>()).abs());
    }
    let b = Array2::from_shape_fn((6, 9), |_| rng.random::<f64>() + 0.01);
    let b = &b / &b.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    let em = EmissionMatrix { b: b.clone(), feature_prior: vec![0.1; 6], active_mask: vec![true; 6] };
    let identity = merge_topics(&em, &(0..6).map(Some).collect::<Vec<_>>(), 6).map_err(|e| e.to_string())?;
    let is_identity = identity.topics.iter().enumerate().all(|(k, t)| t.word_dist == b.row(k).to_vec());
    check(
        dist_err < 1e-12 && mass_err < 1e-9 && is_identity,
        format!("100 instances: max deviation {dist_err:e}, prevalence error {mass_err:e}; K'=K identity: {is_identity}"),
    )
}

fn kmeans_optimality() -> Verdict {
    let results = kmeans_optimal_instances(100);
    let hits = results.iter().filter(|(got, opt)| *got <= opt + 1e-12 * opt.max(1.0)).count();
    check(hits == 20, format!("{hits}/20 instances at the exhaustive optimum"))
}

fn wmd_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut lp_err = 0.0f64;
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let cost = Array2::from_shape_fn((n, m), |_| rng.random_range(0.0..3.0));
        let got = uniform_transport(&cost).map_err(|e| e.to_string())?;
        lp_err = lp_err.max((got - uniform_transport_lp(&cost)).abs());
    }
    let table = WordEmbeddingTable::dense(Array2::from_shape_fn((40, 4), |_| rng.random_range(-1.0..1.0)))
        .map_err(|e| e.to_string())?;
    let words = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let n = rng.random_range(1..=6);
        rand::seq::index::sample(rng, 40, n).into_iter().map(|w| w as u32).collect()
    };
    let (mut zero_ok, mut worst_violation) = (true, f64::NEG_INFINITY);
    for _ in 0..100 {
        let (a, b, c) = (words(&mut rng), words(&mut rng), words(&mut rng));
        let d = |x: &[u32], y: &[u32]| wmd(x, y, &table).map_err(|e| e.to_string());
        zero_ok &= d(&a, &a)? == 0.0;
        worst_violation = worst_violation.max(d(&a, &c)? - d(&a, &b)? - d(&b, &c)?);
    }
    check(
        lp_err < 1e-9 && zero_ok && worst_violation <= 1e-7,
        format!("LP max deviation {lp_err:e}; identical topics zero: {zero_ok}; worst triangle excess {worst_violation:e}"),
    )
}

fn judge_harness() -> Verdict {
    let (model, vocab) = disjoint_model(50);
    let tasks = make_intruder_tasks(&model, &vocab, 200, 1).map_err(|e| e.to_string())?.tasks;
    let oracle = run_judge(&tasks, &StubJudge::Oracle, 8).map_err(|e| e.to_string())?.macro_score;
    let random = run_judge(&tasks, &StubJudge::UniformRandom { seed: 2 }, 8).map_err(|e| e.to_string())?.macro_score;
    let rating = make_rating_tasks(&model, &vocab, 1);
    let fixed = run_judge(&rating, &StubJudge::Fixed { score: 50.0 }, 4).map_err(|e| e.to_string())?.macro_score;
    check(
        tasks.len() == 10_000 && oracle == 100.0 && (15.2..=18.2).contains(&random) && fixed == 50.0,
        format!("{} trials: oracle C_I {oracle}, uniform C_I {random:.2}, fixed-50 C_R {fixed}", tasks.len()),
    )
}

fn pipeline_determinism() -> Verdict {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fixture = Fixture::generate(&FixtureConfig { seed: 11, ..Default::default() }).map_err(|e| e.to_string())?;
    fixture.write(tmp.path()).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::load(&tmp.path().join(FIXTURE_PIPELINE)).map_err(|e| e.to_string())?;
    let dirs = [tmp.path().join("run1"), tmp.path().join("run2")];
    for d in &dirs {
        run_pipeline(&PipelineConfig { out_dir: d.clone(), ..cfg.clone() }).map_err(|e| e.to_string())?;
    }
    let mut compared = 0;
    for &k in &cfg.merge.k_prime {
        for f in [topics_file(k), eval_file(k)] {
            let a = fs::read(dirs[0].join(&f)).map_err(|e| e.to_string())?;
            let b = fs::read(dirs[1].join(&f)).map_err(|e| e.to_string())?;
            if a != b {
                return Err(format!("{f} differs between runs"));
            }
            compared += 1;
        }
    }
    Ok(format!("{compared} topic/eval files byte-identical across two runs"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict, Duration); 10] = [
        ("1 MAP equivalence", map_equivalence, Duration::from_secs(1)),
        ("2 limit law", limit_law, Duration::from_secs(30)),
        ("3 compound density", density, Duration::from_secs(60)),
        ("4 dictionary recovery", dictionary_recovery, Duration::from_secs(300)),
        ("5 emission recovery", emission_recovery, Duration::from_secs(120)),
        ("6 merge correctness", merge_correctness, Duration::MAX),
        ("7 k-means optimality", kmeans_optimality, Duration::MAX),
        ("8 WMD correctness", wmd_correctness, Duration::MAX),
        ("9 judge harness", judge_harness, Duration::MAX),
        ("10 pipeline determinism", pipeline_determinism, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let verdict = run();
        let took = start.elapsed();
        let verdict = match verdict {
            Ok(d) if took > limit => Err(format!("{d}; took {took:.2?}, limit {limit:?}")),
            v => v,
        };
        match verdict {
            Ok(d) => println!("PASS  {name:<26} {took:>9.2?}  {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name:<26} {took:>9.2?}  {d}");
            }
        }
    }
    println!("acceptance: {}/10 passed", 10 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
