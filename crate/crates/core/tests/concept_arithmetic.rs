//! Latent arithmetic on a desk-trained model, scored by the recognizability classifier.

use sketchembed::ingest::{gen_shape_corpus, render_input_image, CorpusConfig, DEFAULT_PAD_FRAC};
use sketchembed::mdn::AlphaSchedule;
use sketchembed::net::model::{ModelConfig, SketchModel};
use sketchembed::net::train::{train, TrainConfig};
use sketchembed::probes::{concept_arithmetic, Classifier, ClassifierConfig};
use sketchembed::rng::stream;

const CLASSES: [&str; 4] = ["circle", "square", "snowman", "boxstack"];
const PER_CLASS: usize = 32;

#[test]
fn snowman_minus_circle_plus_square_leaves_the_circle_class() {
    let corpus = gen_shape_corpus(&CorpusConfig { classes: CLASSES.iter().map(|c| c.to_string()).collect(), per_class: PER_CLASS, ..CorpusConfig::default() }, 1).unwrap();
    let cfg = TrainConfig {
        model: ModelConfig::toy(),
        batch_size: 16,
        steps: 2000,
        lr_decay_interval: 150,
        alpha: AlphaSchedule { interval: 100, ..AlphaSchedule::default() },
        ..TrainConfig::default()
    };
    let mut model = SketchModel::new(cfg.model.clone(), 0).unwrap();
    train(&mut model, &corpus, &cfg, 0, None).unwrap();

    let labelled: Vec<_> = corpus.iter().map(|(img, s)| (img.clone(), CLASSES.iter().position(|c| Some(*c) == s.class_id.as_deref()).unwrap())).collect();
    let ccfg = ClassifierConfig { seed: 3, ..ClassifierConfig::default() };
    let mut clf = Classifier::new(28, 28, CLASSES.iter().map(|c| c.to_string()).collect(), 3).unwrap();
    clf.train(&labelled, &ccfg).unwrap();

    let of = |class: usize, i: usize| &corpus[class * PER_CLASS + i].0;
    let mut rng = stream(0, "test/arithmetic", 0);
    let mut decoded = Vec::new();
    for i in 0..PER_CLASS {
        let codes = model.encode(&[of(2, i).clone(), of(0, i).clone(), of(1, i).clone()], &mut rng, true).unwrap();
        let z = concept_arithmetic(&codes[0].z, &codes[1].z, &codes[2].z).unwrap();
        let sketch = model.generate(&z, &mut stream(0, "test/arithmetic", i as u64), 0.1, cfg.model.t_max).unwrap();
        decoded.push(render_input_image(&sketch, 28, 28, DEFAULT_PAD_FRAC).unwrap());
    }
    let preds = clf.predict(&decoded).unwrap();
    let non_circle = preds.iter().filter(|&&p| p != 0).count() as f64 / preds.len() as f64;
    // a uniform guess over the four classes is non-circle 3/4 of the time
    assert!(non_circle > 0.75, "non-circle fraction {non_circle}, predictions {preds:?}");
}
