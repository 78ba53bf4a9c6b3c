mod common;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saetm::interpret::EmissionMatrix;
use saetm::merge::{merge_topics, top_p_truncate, topic_embedding, WordEmbeddingTable};

use common::kmeans_optimal_instances;

#[test]
fn kmeans_reaches_the_exhaustive_optimum() {
    for (i, (got, opt)) in kmeans_optimal_instances(100).into_iter().enumerate() {
        assert!(got <= opt + 1e-12 * opt.max(1.0), "instance {i}: {got} vs optimum {opt}");
    }
}

#[test]
fn merged_rows_match_independent_weighted_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
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
        // every cluster non-empty: first k_prime features seed the clusters
        let mut labels: Vec<usize> = (0..k).map(|i| if i < k_prime { i } else { rng.random_range(0..k_prime) }).collect();
        labels.rotate_left(rng.random_range(0..k));
        let em = EmissionMatrix { b: b.clone(), feature_prior: prior.clone(), active_mask: vec![true; k] };
        let model = merge_topics(&em, &labels.iter().map(|&l| Some(l)).collect::<Vec<_>>(), k_prime).unwrap();
        for c in 0..k_prime {
            let members: Vec<usize> = (0..k).filter(|&i| labels[i] == c).collect();
            let mass: f64 = members.iter().map(|&i| prior[i]).sum();
            let t = &model.topics[c];
            for w in 0..v {
                let expected: f64 = members.iter().map(|&i| prior[i] * b[[i, w]]).sum::<f64>() / mass;
                assert!((t.word_dist[w] - expected).abs() < 1e-12);
            }
            assert!((t.word_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((model.total_prevalence() - prior.iter().sum::<f64>()).abs() < 1e-9);
    }
}

#[test]
fn singleton_merge_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut b = Array2::from_shape_fn((6, 9), |_| rng.random::<f64>());
    for mut row in b.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let em = EmissionMatrix { b: b.clone(), feature_prior: vec![0.1; 6], active_mask: vec![true; 6] };
    let model = merge_topics(&em, &(0..6).map(Some).collect::<Vec<_>>(), 6).unwrap();
    for (k, t) in model.topics.iter().enumerate() {
        assert_eq!(t.word_dist, b.row(k).to_vec());
    }
}

#[test]
fn label_permutation_gives_the_same_topics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let b = Array2::from_shape_fn((5, 4), |_| rng.random::<f64>() + 0.1);
    let b = &b / &b.sum_axis(ndarray::Axis(1)).insert_axis(ndarray::Axis(1));
    let em = EmissionMatrix { b, feature_prior: vec![0.1, 0.2, 0.3, 0.2, 0.2], active_mask: vec![true; 5] };
    let a = merge_topics(&em, &[Some(0), Some(1), Some(2), Some(0), Some(1)], 3).unwrap();
    let p = merge_topics(&em, &[Some(2), Some(0), Some(1), Some(2), Some(0)], 3).unwrap();
    let mut x: Vec<_> = a.topics.iter().map(|t| t.members.clone()).collect();
    let mut y: Vec<_> = p.topics.iter().map(|t| t.members.clone()).collect();
    x.sort();
    y.sort();
    assert_eq!(x, y);
}

#[test]
fn topic_embedding_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let v = 12;
        let table = WordEmbeddingTable::dense(Array2::from_shape_fn((v, 5), |_| rng.random_range(-1.0..1.0))).unwrap();
        let raw: Vec<f64> = (0..v).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let row = ndarray::Array1::from_iter(raw.iter().map(|x| x / s));
        for p in [1.0, 0.9] {
            let got = topic_embedding(row.view(), &table, p).unwrap();
            let kept = top_p_truncate(row.view(), p);
            for j in 0..5 {
                let expected: f64 = (0..v).map(|w| kept[w] * table.vector(w)[j]).sum();
                assert!((got[j] - expected).abs() < 1e-12);
            }
        }
    }
}

