//! Decoder training on synthetic worlds.

use bvrm_core::data::{make_world, Dataset, Sample, WorldConfig};
use bvrm_core::decoder::{accuracy, decoder_train, DecoderConfig};
use bvrm_core::numerics::RngStream;
use rand::seq::SliceRandom;

/// Small-image world with a large held-out split.
fn world(seed: u64, n_test: usize) -> Dataset {
    let cfg = WorldConfig {
        n_test,
        resolution: 32,
        reference_size: 128,
        ..WorldConfig::default()
    };
    make_world(seed, &cfg).unwrap().0.zscored().unwrap()
}

fn config(epochs: usize) -> DecoderConfig {
    DecoderConfig {
        epochs,
        seed: 7,
        ..DecoderConfig::default()
    }
}

#[test]
fn fits_its_training_set() {
    let d = make_world(7, &WorldConfig::default()).unwrap().0.zscored().unwrap();
    let (model, history) = decoder_train(&config(30), &d.train, None).unwrap();
    let acc = accuracy(&model, &d.train).unwrap();
    assert!(acc >= 0.9, "train accuracy {acc}");
    assert_eq!(history.loss.len(), 30);
    assert!(history.loss[29] < history.loss[0]);
}

#[test]
fn untrained_model_is_at_chance() {
    let d = world(8, 200);
    let (model, _) = decoder_train(&config(0), &d.train, None).unwrap();
    let acc = accuracy(&model, &d.test).unwrap();
    assert!((acc - 0.1).abs() <= 0.1, "accuracy {acc}");
}

#[test]
fn shuffled_labels_do_not_generalise() {
    let d = world(9, 1000);
    let mut train: Vec<Sample> = d.train.clone();
    let mut labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    labels.shuffle(&mut RngStream::new(3));
    for (s, l) in train.iter_mut().zip(labels) {
        s.label = l;
    }
    let (model, _) = decoder_train(&config(30), &train, None).unwrap();
    let acc = accuracy(&model, &d.test).unwrap();
    assert!((acc - 0.1).abs() <= 0.03, "accuracy {acc}");
}
