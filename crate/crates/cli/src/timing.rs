//! Wall-clock timing of the feature layer against sequence length.

use std::time::{Duration, Instant};

use nctc_core::layer::{self, LayerParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub lengths: Vec<usize>,
    pub hidden: usize,
    pub order: usize,
    pub word_dim: usize,
    pub decay: f64,
    pub trials: usize,
    /// Enumeration oracle is timed only up to this length.
    pub oracle_max: usize,
    /// Each trial repeats the operation until at least this much time passed.
    pub min_trial_time: Duration,
    pub seed: u64,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            lengths: vec![250, 500, 1000, 2000],
            hidden: 100,
            order: 3,
            word_dim: 100,
            decay: 0.5,
            trials: 5,
            oracle_max: 32,
            min_trial_time: Duration::from_millis(10),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub length: usize,
    /// Median seconds per call.
    pub forward: f64,
    pub forward_backward: f64,
    pub oracle: Option<f64>,
}

/// Median over trials of the mean per-call time within each trial.
fn time_median<F: FnMut()>(trials: usize, min_time: Duration, mut op: F) -> f64 {
    let mut samples: Vec<f64> = (0..trials.max(1))
        .map(|_| {
            let start = Instant::now();
            let mut calls = 0u32;
            loop {
                op();
                calls += 1;
                let elapsed = start.elapsed();
                if elapsed >= min_time {
                    break elapsed.as_secs_f64() / calls as f64;
                }
            }
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    samples[samples.len() / 2]
}

pub fn run_bench(settings: &BenchSettings) -> anyhow::Result<Vec<BenchRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let params: LayerParams =
        layer::init_layer(settings.word_dim, settings.hidden, settings.order, &mut rng)?;
    let mut rows = Vec::with_capacity(settings.lengths.len());
    for &len in &settings.lengths {
        anyhow::ensure!(len > 0, "sequence lengths must be positive");
        let x = Array2::from_shape_simple_fn((len, settings.word_dim), || rng.gen_range(-1.0..1.0));
        let dz = Array2::from_shape_simple_fn((len, settings.hidden), || rng.gen_range(-1.0..1.0));
        let decay = settings.decay;

        let forward = time_median(settings.trials, settings.min_trial_time, || {
            let out = layer::forward(&params, x.view(), decay).expect("valid bench inputs");
            std::hint::black_box(out);
        });
        let forward_backward = time_median(settings.trials, settings.min_trial_time, || {
            let (_, trace) = layer::forward(&params, x.view(), decay).expect("valid bench inputs");
            let grads = layer::backward(&params, &trace, decay, dz.view()).expect("matching trace");
            std::hint::black_box(grads);
        });
        let oracle = (len <= settings.oracle_max).then(|| {
            time_median(settings.trials, settings.min_trial_time, || {
                let z =
                    layer::forward_reference(&params, x.view(), decay).expect("valid bench inputs");
                std::hint::black_box(z);
            })
        });
        rows.push(BenchRow {
            length: len,
            forward,
            forward_backward,
            oracle,
        });
    }
    Ok(rows)
}
