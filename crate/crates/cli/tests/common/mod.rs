#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nctc_core::{Dataset, EmbeddingTable, Example};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRIGGER_A: &str = "not";
pub const TRIGGER_B: &str = "good";

pub fn fillers(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("w{i}")).collect()
}

/// Random unit vectors for `words`, dimension `dim`.
pub fn random_embeddings(words: &[String], dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let entries = words
        .iter()
        .map(|w| {
            (
                w.clone(),
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect::<Vec<(String, Vec<f64>)>>();
    EmbeddingTable::from_entries(entries).unwrap()
}

pub fn binary_labels() -> Vec<String> {
    vec!["negative".into(), "positive".into()]
}

/// Random filler sequences with alternating labels; only memorization can fit them.
pub fn memorization_set(count: usize, vocab: &[String], seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..count)
        .map(|i| {
            let len = rng.gen_range(5..=10);
            Example {
                tokens: (0..len)
                    .map(|_| vocab.choose(&mut rng).unwrap().clone())
                    .collect(),
                label: i % 2,
            }
        })
        .collect();
    Dataset {
        examples,
        labels: binary_labels(),
    }
}

/// Class 1: `A` followed by `B` with 2 or 3 fillers in between. Class 0: the
/// same layout with `A … A` or `B … B`, so the two triggers never co-occur.
/// At least three fillers pad either side, so no window of three consecutive
/// words ever holds two triggers.
pub fn gappy_pair_set(count: usize, filler: &[String], seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n)
            .map(|_| filler.choose(rng).unwrap().clone())
            .collect()
    };
    let examples = (0..count)
        .map(|i| {
            let label = i % 2;
            let (first, second) = if label == 1 {
                (TRIGGER_A, TRIGGER_B)
            } else if rng.gen_bool(0.5) {
                (TRIGGER_A, TRIGGER_A)
            } else {
                (TRIGGER_B, TRIGGER_B)
            };
            let prefix = rng.gen_range(3..=5);
            let gap = rng.gen_range(2..=3);
            let suffix = rng.gen_range(3..=5);
            let mut tokens = pick(&mut rng, prefix);
            tokens.push(first.to_string());
            tokens.extend(pick(&mut rng, gap));
            tokens.push(second.to_string());
            tokens.extend(pick(&mut rng, suffix));
            Example { tokens, label }
        })
        .collect();
    Dataset {
        examples,
        labels: binary_labels(),
    }
}

pub fn write_dataset(ds: &Dataset, dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    ds.save(&path).unwrap();
    path
}

pub fn write_embeddings(table: &EmbeddingTable, dir: &Path) -> PathBuf {
    let path = dir.join("vectors.txt");
    table.save(&path).unwrap();
    path
}
