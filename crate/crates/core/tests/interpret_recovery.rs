mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use saetm::interpret::{learn_emissions, InterpretConfig};

use common::{peaked_rows, sample_corpus, tv};

#[test]
fn learned_rows_match_generating_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let truth = peaked_rows(4, 20, &mut rng);
    let (corpus, acts) = sample_corpus(&truth, 2000, 60, 22);
    let cfg = InterpretConfig { pi: 0.0, idf_weighting: false, steps: 1500, batch_size: 500, learning_rate: 0.05, ..Default::default() };
    let learned = learn_emissions(&corpus, &acts, &cfg).unwrap();
    for k in 0..4 {
        let d = tv(learned.b.row(k), truth.row(k));
        println!("row {k}: tv {d:.4}");
        assert!(d < 0.05);
        let mut a: Vec<u32> = learned.top_words(k, 5).into_iter().map(|w| w.0).collect();
        let mut b: Vec<u32> = saetm::interpret::top_words(truth.row(k), 5).into_iter().map(|w| w.0).collect();
        a.sort();
        b.sort();
        assert_eq!(a, b);
    }
}
