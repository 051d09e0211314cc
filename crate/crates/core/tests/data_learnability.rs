//! The synthetic datasets are learnable by simple reference classifiers.

use weightforge::data::{make_blobs, make_toy_sentiment, split, Dataset, SplitSpec, TokenDataset};
use weightforge::finetune::evaluate;
use weightforge::model::{sgd_train, Architecture, LstmSpec, MlpSpec, TrainConfig};

/// Per-token class counts learned on `train`, applied as a vote on `test`.
fn frequency_baseline(train: &TokenDataset, test: &TokenDataset) -> f64 {
    let v = train.vocab_size().max(test.vocab_size());
    let mut counts = vec![[1.0f64; 2]; v];
    for (seq, &y) in train.sequences().iter().zip(train.labels()) {
        for &t in seq {
            counts[t][y] += 1.0;
        }
    }
    let hits = test
        .sequences()
        .iter()
        .zip(test.labels())
        .filter(|(seq, &y)| {
            let score: f64 = seq.iter().map(|&t| (counts[t][1] / counts[t][0]).ln()).sum();
            usize::from(score > 0.0) == y
        })
        .count();
    hits as f64 / test.len() as f64
}

fn tokens(d: &Dataset) -> &TokenDataset {
    match d {
        Dataset::Tokens(t) => t,
        Dataset::Tabular(_) => unreachable!(),
    }
}

#[test]
fn counting_tokens_solves_toy_sentiment() {
    let data: Dataset = make_toy_sentiment(40, 600, 12, 5).unwrap().into();
    let s = split(&data, &SplitSpec::new(0.7, 0.1, 0.2, 5)).unwrap();
    let acc = frequency_baseline(tokens(&s.train), tokens(&s.test));
    assert!(acc > 0.9, "{acc}");
}

#[test]
fn lstm_learns_toy_sentiment() {
    let data: Dataset = make_toy_sentiment(30, 400, 8, 5).unwrap().into();
    let s = split(&data, &SplitSpec::new(0.7, 0.1, 0.2, 1)).unwrap();
    let arch = Architecture::Lstm(LstmSpec::new(30, 8, 12, 2));
    let cfg = TrainConfig {
        epochs: 15,
        batch_size: 8,
        learning_rate: 0.2,
        seed: 3,
    };
    let out = sgd_train(arch, &s.train, Some(&s.val), &cfg).unwrap();
    let acc = evaluate(&out.state, &s.test).unwrap().accuracy;
    assert!(acc > 0.75, "{acc}");
}

#[test]
fn mlp_separates_point_clusters() {
    let data: Dataset = make_blobs(3, 30, 2, 0.0, 2).unwrap().into();
    let s = split(&data, &SplitSpec::new(0.6, 0.2, 0.2, 0)).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 8,
        learning_rate: 0.05,
        seed: 0,
    };
    let out = sgd_train(Architecture::Mlp(MlpSpec::new(2, 16, 3)), &s.train, None, &cfg).unwrap();
    assert_eq!(evaluate(&out.state, &s.test).unwrap().accuracy, 1.0);
}
