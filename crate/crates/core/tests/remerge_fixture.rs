mod common;

use ndarray::Array2;
use saetm::interpret::{learn_emissions, EmissionMatrix, InterpretConfig};
use saetm::merge::Remerger;
use saetm::sae::{train, ActivationKind, SaeModel, TrainConfig};
use saetm::synthetic::{Fixture, FixtureConfig};

use common::adjusted_rand_index;

const MATCH_COS: f64 = 0.95;
const MIN_PRIOR: f64 = 0.005;

fn fit(f: &Fixture) -> (SaeModel, EmissionMatrix) {
    let cfg = TrainConfig {
        activation: ActivationKind::TopK,
        expansion_factor: 1,
        batch_size: 256,
        steps: 3000,
        learning_rate: 0.005,
        k_active: 2,
        seed: 3,
        dead_feature_window: 100,
        ..Default::default()
    };
    let out = train(f.embeddings.view(), cfg).unwrap();
    let acts = out.model.encode_inference(f.embeddings.view()).unwrap();
    let ds = f.dataset().unwrap();
    let icfg = InterpretConfig { steps: 1500, seed: 3, ..Default::default() };
    let em = learn_emissions(&ds.corpus, &acts, &icfg).unwrap();
    (out.model, em)
}

/// Theme of the ground-truth direction each feature matches, `None` for
/// features that match no direction.
fn truth_themes(f: &Fixture, decoder: &Array2<f64>, features: &[usize]) -> Vec<Option<usize>> {
    let cos = decoder.dot(&f.directions.t());
    features
        .iter()
        .map(|&k| {
            let row = cos.row(k);
            let best = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            (row[best] >= MATCH_COS).then_some(f.theme_of_topic[best])
        })
        .collect()
}

#[test]
fn remerged_topics_recover_themes_in_both_modes() {
    let f = Fixture::generate(&FixtureConfig { seed: 11, ..Default::default() }).unwrap();
    let (model, em) = fit(&f);
    let decoder = model.feature_directions();
    let modes = [
        ("word_vectors", Remerger::from_word_embeddings(&em, &f.word_embedding_table(), 0.9).unwrap().drop_rare(&em, MIN_PRIOR)),
        ("decoder", Remerger::from_decoder(&em, decoder.view()).unwrap().drop_rare(&em, MIN_PRIOR)),
    ];
    for (name, r) in modes {
        let truth = truth_themes(&f, &decoder, r.retained_features());
        let labels = r.labels(4, 0).unwrap();
        let (t, l): (Vec<usize>, Vec<usize>) = r
            .retained_features()
            .iter()
            .zip(&truth)
            .filter_map(|(&k, th)| Some(((*th)?, labels[k]?)))
            .unzip();
        let ari = adjusted_rand_index(&t, &l);
        println!("{name}: scored {} of {} retained features, ari {ari:.3}", t.len(), truth.len());
        assert!(t.len() >= 14, "{name}: only {} matched features", t.len());
        assert!(ari >= 0.9, "{name}: ari {ari}");
    }
}
