//! Training: the per-label dose loss, flip/noise augmentation, Adam, and the
//! deterministic minibatch loop. Per-sample gradients are computed in
//! parallel but summed in batch order, so training reproduces bit-identically
//! for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dosimetry::OrganDoseVector;
use crate::error::{Error, Result};
use crate::predictor::{ChannelSelection, DoseBounds, DosePredictor, GradBuf, PredictorConfig, NUM_HEADS};
use crate::rng::derive_seed;
use crate::scout::{ModelInput, CHANNEL_FRONTAL, CHANNEL_LATERAL};

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch: usize,
    /// Random vertical flip + Gaussian noise augmentation.
    pub augment: bool,
    pub flip_prob: f64,
    /// Noise sigma on the normalized scout scale.
    pub noise_sigma: f64,
    /// Use squared error per label instead of the absolute-error form.
    pub squared_loss: bool,
    pub seed: u64,
    pub channels: ChannelSelection,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            epochs: 150,
            minibatch: 16,
            augment: true,
            flip_prob: 0.5,
            noise_sigma: 0.01,
            squared_loss: false,
            seed: 0,
            channels: ChannelSelection::All,
        }
    }
}

/// Per-epoch loss record, written to the training log CSV.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Dose loss over a minibatch: (1/M) sum_i sum_l ||d_l(i) - dhat_l(i)||_2.
/// For scalar labels the 2-norm reduces to the absolute error; the squared
/// variant replaces each term with its square.
pub fn dose_loss(targets: &[[f64; NUM_HEADS]], preds: &[[f64; NUM_HEADS]], squared: bool) -> f64 {
    assert_eq!(targets.len(), preds.len());
    let m = targets.len() as f64;
    let mut acc = 0.0;
    for (t, p) in targets.iter().zip(preds) {
        for l in 0..NUM_HEADS {
            let e = t[l] - p[l];
            acc += if squared { e * e } else { e.abs() };
        }
    }
    acc / m
}

/// Gradient of [`dose_loss`] with respect to one sample's predictions, given
/// the minibatch size `m`.
pub fn dose_loss_gradient(
    target: &[f64; NUM_HEADS],
    pred: &[f64; NUM_HEADS],
    squared: bool,
    m: usize,
) -> [f64; NUM_HEADS] {
    std::array::from_fn(|l| {
        let e = pred[l] - target[l];
        let g = if squared {
            2.0 * e
        } else if e > 0.0 {
            1.0
        } else if e < 0.0 {
            -1.0
        } else {
            0.0
        };
        g / m as f64
    })
}

/// Flip all channels of an input upside down (rows reversed).
pub fn flip_vertical(input: &ModelInput) -> ModelInput {
    let mut out = input.clone();
    for ch in out.channels.iter_mut() {
        for r in 0..input.rows / 2 {
            let (top, bottom) = (r * input.cols, (input.rows - 1 - r) * input.cols);
            for c in 0..input.cols {
                ch.swap(top + c, bottom + c);
            }
        }
    }
    out
}

/// Training augmentation: with probability `flip_prob` flip all three
/// channels vertically, then add zero-mean Gaussian noise to the scout
/// channels only. Targets are geometric-flip invariant and pass through
/// unchanged.
pub fn augment(
    input: &ModelInput,
    flip_prob: f64,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> ModelInput {
    let mut out = if flip_prob > 0.0 && rng.gen_bool(flip_prob) {
        flip_vertical(input)
    } else {
        input.clone()
    };
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma).expect("valid sigma");
        for ch in [CHANNEL_LATERAL, CHANNEL_FRONTAL] {
            for v in out.channels[ch].iter_mut() {
                *v += normal.sample(rng) as f32;
            }
        }
    }
    out
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(model: &DosePredictor, lr: f64) -> Adam {
        let sizes = model.group_sizes();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|(_, n)| vec![0.0; *n]).collect(),
            v: sizes.iter().map(|(_, n)| vec![0.0; *n]).collect(),
        }
    }

    fn step(&mut self, model: &mut DosePredictor, grads: &GradBuf) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for gi in 0..grads.groups.len() {
            let g = &grads.groups[gi];
            let m = &mut self.m[gi];
            let v = &mut self.v[gi];
            let p = model.param_group_mut(gi);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / b1t;
                let vhat = v[i] / b2t;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Train a predictor on `(input, reference dose)` pairs. Dose normalization
/// bounds come from this training set only (5% margin) and are stored on the
/// returned model together with the input normalization bounds. Deterministic
/// in `cfg.seed`.
pub fn train(
    inputs: &[ModelInput],
    targets: &[OrganDoseVector],
    config: PredictorConfig,
    cfg: &TrainConfig,
    val: Option<(&[ModelInput], &[OrganDoseVector])>,
) -> Result<(DosePredictor, Vec<EpochLog>)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::Config(
            "training set is empty or inputs/targets mismatch".into(),
        ));
    }
    for t in targets {
        t.validate()?;
    }
    if cfg.minibatch == 0 || cfg.epochs == 0 || cfg.learning_rate <= 0.0 {
        return Err(Error::Config("bad training hyperparameters".into()));
    }
    let mut model = DosePredictor::new(config, derive_seed(cfg.seed, "init", 0))?;
    let bounds = DoseBounds::from_training_doses(targets)?;
    model.dose_bounds = Some(bounds);
    model.input_bounds = Some(inputs[0].bounds);

    let norm_targets: Vec<[f64; NUM_HEADS]> = targets.iter().map(|t| bounds.normalize(t)).collect();
    let val_norm: Option<(Vec<[f64; NUM_HEADS]>, &[ModelInput])> = val.map(|(vi, vt)| {
        (vt.iter().map(|t| bounds.normalize(t)).collect(), vi)
    });

    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut logs = Vec::with_capacity(cfg.epochs);
    let n = inputs.len();

    for epoch in 0..cfg.epochs {
        // deterministic shuffle
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "shuffle", epoch as u64));
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.minibatch) {
            let m = batch.len();
            // per-sample forward/backward in parallel, summed in batch order
            let results: Vec<(f64, GradBuf)> = batch
                .par_iter()
                .map(|&idx| {
                    let x = if cfg.augment {
                        let mut arng = ChaCha8Rng::seed_from_u64(derive_seed(
                            cfg.seed,
                            "augment",
                            ((epoch as u64) << 32) | idx as u64,
                        ));
                        augment(&inputs[idx], cfg.flip_prob, cfg.noise_sigma, &mut arng)
                    } else {
                        inputs[idx].clone()
                    };
                    let cache = model.forward_cached(&x).expect("validated input");
                    let target = &norm_targets[idx];
                    let sample_loss: f64 = (0..NUM_HEADS)
                        .map(|l| {
                            let e = target[l] - cache.outputs[l];
                            if cfg.squared_loss {
                                e * e
                            } else {
                                e.abs()
                            }
                        })
                        .sum();
                    let grad_out =
                        dose_loss_gradient(target, &cache.outputs, cfg.squared_loss, m);
                    let mut grads = GradBuf::zeros_like(&model);
                    model.backward(&cache, &grad_out, &mut grads);
                    (sample_loss, grads)
                })
                .collect();
            let mut grads = GradBuf::zeros_like(&model);
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                grads.add_scaled(g, 1.0);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch}; aborting training"
                )));
            }
            epoch_loss += batch_loss;
            adam.step(&mut model, &grads);
        }
        let train_loss = epoch_loss / n as f64;

        let val_loss = val_norm.as_ref().map(|(vt, vi)| {
            let preds: Vec<[f64; NUM_HEADS]> = vi
                .par_iter()
                .map(|x| model.forward(x).expect("validated input"))
                .collect();
            dose_loss(vt, &preds, cfg.squared_loss)
        });

        logs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok((model, logs))
}

/// Predict mGy doses for one input: forward pass plus de-normalization to the
/// stored per-label bounds. Also returns the wall-clock inference time.
pub fn predict(
    model: &DosePredictor,
    input: &ModelInput,
) -> Result<(OrganDoseVector, std::time::Duration)> {
    let bounds = model.dose_bounds.ok_or_else(|| {
        Error::Config("model has no dose normalization bounds; train it first".into())
    })?;
    let start = std::time::Instant::now();
    let out = model.forward(input)?;
    let elapsed = start.elapsed();
    Ok((bounds.denormalize(&out), elapsed))
}

/// Serialize epoch logs as the training-log CSV (`epoch,train_loss,val_loss`).
pub fn training_log_csv(logs: &[EpochLog]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss\n");
    for l in logs {
        match l.val_loss {
            Some(v) => s.push_str(&format!("{},{},{}\n", l.epoch, l.train_loss, v)),
            None => s.push_str(&format!("{},{},\n", l.epoch, l.train_loss)),
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::tests::{tiny_config, tiny_input};
    use crate::scout::ScoutNormBounds;

    #[test]
    fn loss_reference_values() {
        // zero for equal batches
        let t = vec![[0.5; NUM_HEADS]];
        assert_eq!(dose_loss(&t, &t, false), 0.0);
        // single label difference 0.2 with M=1: contributes exactly 0.2
        let mut a = [[0.0; NUM_HEADS]];
        let mut b = [[0.0; NUM_HEADS]];
        a[0][3] = 0.5;
        b[0][3] = 0.3;
        assert!((dose_loss(&a, &b, false) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn loss_matches_brute_force_double_loop() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = 6;
        let t: Vec<[f64; NUM_HEADS]> =
            (0..m).map(|_| std::array::from_fn(|_| rng.gen())).collect();
        let p: Vec<[f64; NUM_HEADS]> =
            (0..m).map(|_| std::array::from_fn(|_| rng.gen())).collect();
        let mut manual = 0.0;
        for i in 0..m {
            for l in 0..NUM_HEADS {
                manual += (t[i][l] - p[i][l]).abs();
            }
        }
        manual /= m as f64;
        assert!((dose_loss(&t, &p, false) - manual).abs() < 1e-12);
    }

    #[test]
    fn loss_is_permutation_invariant() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let t: Vec<[f64; NUM_HEADS]> =
            (0..5).map(|_| std::array::from_fn(|_| rng.gen())).collect();
        let p: Vec<[f64; NUM_HEADS]> =
            (0..5).map(|_| std::array::from_fn(|_| rng.gen())).collect();
        let base = dose_loss(&t, &p, false);
        let perm = [4, 2, 0, 3, 1];
        let tp: Vec<_> = perm.iter().map(|&i| t[i]).collect();
        let pp: Vec<_> = perm.iter().map(|&i| p[i]).collect();
        assert!((dose_loss(&tp, &pp, false) - base).abs() < 1e-15);
    }

    #[test]
    fn flip_is_an_involution() {
        let input = tiny_input(0);
        let twice = flip_vertical(&flip_vertical(&input));
        assert_eq!(twice, input);
    }

    #[test]
    fn zero_noise_zero_flip_is_identity() {
        let input = tiny_input(1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&input, 0.0, 0.0, &mut rng);
        assert_eq!(out, input);
    }

    #[test]
    fn noise_statistics_match_sigma() {
        let rows = 250;
        let cols = 400; // 1e5 pixels
        let input = ModelInput {
            rows,
            cols,
            channels: [
                vec![0.5f32; rows * cols],
                vec![0.5f32; rows * cols],
                vec![0.0f32; rows * cols],
            ],
            bounds: ScoutNormBounds { min: 0.0, max: 1.0 },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = augment(&input, 0.0, 0.01, &mut rng);
        let diffs: Vec<f64> = out.channels[0]
            .iter()
            .zip(&input.channels[0])
            .map(|(a, b)| (*a - *b) as f64)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / (diffs.len() - 1) as f64)
            .sqrt();
        assert!((std - 0.01).abs() / 0.01 < 0.05, "noise std {std}");
        // scan-range channel untouched (stays binary)
        assert_eq!(out.channels[2], input.channels[2]);
    }

    #[test]
    fn flip_keeps_range_channel_binary() {
        let input = tiny_input(5);
        let flipped = flip_vertical(&input);
        assert!(flipped.channels[2].iter().all(|&v| v == 0.0 || v == 1.0));
    }

    fn toy_dataset(n: usize) -> (Vec<ModelInput>, Vec<OrganDoseVector>) {
        let inputs: Vec<ModelInput> = (0..n as u64).map(tiny_input).collect();
        // targets depend smoothly on the input mean so they are learnable
        let targets = inputs
            .iter()
            .map(|x| {
                let mean: f32 =
                    x.channels[0].iter().sum::<f32>() / x.channels[0].len() as f32;
                OrganDoseVector {
                    values: std::array::from_fn(|k| 5.0 + k as f64 + 4.0 * mean as f64),
                }
            })
            .collect();
        (inputs, targets)
    }

    #[test]
    fn training_descends_and_reproduces() {
        let (inputs, targets) = toy_dataset(8);
        let cfg = TrainConfig {
            epochs: 50,
            minibatch: 4,
            learning_rate: 1e-3,
            augment: false,
            seed: 9,
            ..TrainConfig::default()
        };
        let (m1, logs1) = train(&inputs, &targets, tiny_config(), &cfg, None).unwrap();
        assert!(
            logs1.last().unwrap().train_loss < logs1[0].train_loss,
            "loss did not descend: {} -> {}",
            logs1[0].train_loss,
            logs1.last().unwrap().train_loss
        );
        // same seed, different worker count: identical parameters
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (m2, logs2) =
            pool.install(|| train(&inputs, &targets, tiny_config(), &cfg, None).unwrap());
        for i in 0..m1.group_sizes().len() {
            assert_eq!(m1.param_group(i), m2.param_group(i));
        }
        for (a, b) in logs1.iter().zip(&logs2) {
            assert_eq!(a.train_loss, b.train_loss);
        }
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let cfg = TrainConfig::default();
        assert!(train(&[], &[], tiny_config(), &cfg, None).is_err());
    }

    #[test]
    fn non_finite_loss_aborts_with_diagnostic() {
        let (mut inputs, targets) = toy_dataset(2);
        inputs[0].channels[0][5] = f32::NAN;
        let cfg = TrainConfig {
            epochs: 3,
            minibatch: 2,
            augment: false,
            ..TrainConfig::default()
        };
        let err = train(&inputs, &targets, tiny_config(), &cfg, None).unwrap_err();
        assert!(format!("{err}").contains("non-finite loss"));
    }

    #[test]
    fn predict_requires_bounds_and_orders_batches() {
        let (inputs, targets) = toy_dataset(4);
        let cfg = TrainConfig {
            epochs: 5,
            minibatch: 2,
            augment: false,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, _) = train(&inputs, &targets, tiny_config(), &cfg, None).unwrap();
        let single: Vec<OrganDoseVector> = inputs
            .iter()
            .map(|x| predict(&model, x).unwrap().0)
            .collect();
        // batch order preserved when predicting one-by-one in sequence
        for (i, x) in inputs.iter().enumerate() {
            let (v, _) = predict(&model, x).unwrap();
            assert_eq!(v, single[i]);
        }
        // bounds missing -> error
        let bare = DosePredictor::new(tiny_config(), 0).unwrap();
        assert!(predict(&bare, &inputs[0]).is_err());
    }

    #[test]
    fn memorizes_a_single_sample() {
        let (inputs, targets) = toy_dataset(1);
        let cfg = TrainConfig {
            epochs: 400,
            minibatch: 1,
            learning_rate: 3e-3,
            augment: false,
            seed: 2,
            ..TrainConfig::default()
        };
        let (model, _) = train(&inputs, &targets, tiny_config(), &cfg, None).unwrap();
        let (pred, _) = predict(&model, &inputs[0]).unwrap();
        for k in 0..NUM_HEADS {
            let pe = (pred.values[k] - targets[0].values[k]).abs() / targets[0].values[k] * 100.0;
            assert!(pe < 2.0, "label {k}: PE {pe}%");
        }
    }
}
