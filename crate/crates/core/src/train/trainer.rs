use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{clip_grad_total_norm, Tape};
use crate::network::{NetworkConfig, SegNetwork};
use crate::scalar::Scalar;
use crate::tensor::{Dims3, Tensor};
use crate::train::folds::Fold;
use crate::train::loss::{dice_ce_loss, dice_ce_parts, downsample_labels, deep_supervision_weights};
use crate::train::preprocess::{resample, zscore_normalize};
use crate::train::sampling::{sample_patch, Patch};
use crate::train::schedule::{poly_lr, Sgd};
use crate::train::TrainError;
use crate::volume::{Spacing, Volume};

/// Optimization and data settings. Defaults are the full-scale protocol.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub poly_exponent: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub patch_size: Dims3,
    pub grad_clip_norm: f64,
    pub foreground_oversample: f64,
    pub folds: usize,
    pub seed: u64,
    pub momentum: f64,
    pub nesterov: bool,
    pub iterations_per_epoch: usize,
    pub val_iterations: usize,
    /// Spacing every case is resampled to before training; `None` keeps native spacing.
    pub target_spacing: Option<Spacing>,
    pub image_order: u8,
    pub mask_order: u8,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.01,
            poly_exponent: 0.9,
            max_epochs: 1000,
            batch_size: 4,
            patch_size: [48, 192, 192],
            grad_clip_norm: 1.0,
            foreground_oversample: 1.0 / 3.0,
            folds: 5,
            seed: 0,
            momentum: 0.99,
            nesterov: true,
            iterations_per_epoch: 250,
            val_iterations: 50,
            target_spacing: Some([1.199, 0.5, 0.5]),
            image_order: 3,
            mask_order: 1,
        }
    }
}

impl TrainConfig {
    pub fn full() -> Self {
        Self::default()
    }

    /// CPU-sized schedule.
    pub fn desk() -> Self {
        Self {
            max_epochs: 50,
            batch_size: 2,
            patch_size: [16, 64, 64],
            iterations_per_epoch: 2,
            val_iterations: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.initial_lr > 0.0) || !self.initial_lr.is_finite() {
            return bad("initial_lr must be positive");
        }
        if !(self.poly_exponent > 0.0) {
            return bad("poly_exponent must be positive");
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.iterations_per_epoch == 0 || self.folds == 0 {
            return bad("max_epochs, batch_size, iterations_per_epoch and folds must be positive");
        }
        if !(0.0..=1.0).contains(&self.foreground_oversample) {
            return bad("foreground_oversample must lie in [0, 1]");
        }
        if !(self.grad_clip_norm > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("grad_clip_norm must be positive and momentum in [0, 1)");
        }
        if self.patch_size.contains(&0) {
            return bad("patch_size must be positive");
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tlr\ttrain_loss\tval_loss\tepoch_seconds";

    pub fn to_line(&self) -> String {
        format!("{}\t{:.6e}\t{:.8}\t{:.8}\t{:.3}", self.epoch, self.lr, self.train_loss, self.val_loss, self.seconds)
    }

    /// The line without its wall-clock field.
    pub fn deterministic_part(&self) -> String {
        let line = self.to_line();
        line.rsplit_once('\t').map(|(head, _)| head.to_string()).unwrap_or(line)
    }
}

/// Median epoch time over epochs after the first (the only epoch if there is one).
pub fn stable_epoch_seconds(log: &[EpochLog]) -> f64 {
    let mut t: Vec<f64> = log.iter().skip(usize::from(log.len() > 1)).map(|e| e.seconds).collect();
    if t.is_empty() {
        return f64::NAN;
    }
    t.sort_by(f64::total_cmp);
    let m = t.len() / 2;
    if t.len() % 2 == 1 {
        t[m]
    } else {
        0.5 * (t[m - 1] + t[m])
    }
}

pub struct TrainReport<T: Scalar> {
    pub network: SegNetwork<T>,
    pub log: Vec<EpochLog>,
    pub stable_epoch_seconds: f64,
}

/// Resampling (when configured) followed by z-score normalization.
pub fn preprocess_case(volume: &Volume, config: &TrainConfig) -> Result<Volume, TrainError> {
    let v = match config.target_spacing {
        Some(t) if t != volume.spacing() => resample(volume, t, config.image_order, config.mask_order)?,
        _ => volume.clone(),
    };
    Ok(Volume { image: zscore_normalize(&v.image), ..v })
}

fn batch_tensor<T: Scalar>(patches: &[Patch]) -> Result<(Tensor<T>, Vec<u8>), TrainError> {
    let d = patches[0].dims;
    let data = patches.iter().flat_map(|p| p.image.iter().map(|&v| T::from_acc(v as f64))).collect();
    let mask = patches.iter().flat_map(|p| p.mask.iter().copied()).collect();
    Ok((Tensor::new(&[patches.len(), 1, d[0], d[1], d[2]], data)?, mask))
}

fn draw_batch(cases: &[&Volume], config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Patch> {
    (0..config.batch_size)
        .map(|_| {
            let c = cases[rng.random_range(0..cases.len())];
            sample_patch(c, config.patch_size, config.foreground_oversample, rng)
        })
        .collect()
}

/// Loss of the network on a batch without building gradients.
fn eval_loss<T: Scalar>(net: &SegNetwork<T>, patches: &[Patch]) -> Result<f64, TrainError> {
    let (x, mask) = batch_tensor::<T>(patches)?;
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let outs = net.forward(&mut tape, xv)?;
    let s0 = tape.shape(outs[0]).to_vec();
    let full = [s0[2], s0[3], s0[4]];
    let mut total = 0.0;
    for (&o, w) in outs.iter().zip(deep_supervision_weights(outs.len())) {
        let s = tape.shape(o).to_vec();
        let target = downsample_labels(&mask, s0[0], full, [s[2], s[3], s[4]]);
        total += w * dice_ce_parts(tape.value(o)?, &target).total();
    }
    Ok(total)
}

/// RNG streams derived from the run seed and fold index.
fn stream(seed: u64, fold: usize, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(((fold as u64) << 8) | purpose);
    r
}

/// Training state for one fold, advanced an epoch at a time. Several
/// trainers can be stepped in turn so their epoch times are measured under
/// the same machine load.
pub struct FoldTrainer<T: Scalar> {
    config: TrainConfig,
    fold_index: usize,
    train: Vec<Volume>,
    val: Vec<Volume>,
    net: SegNetwork<T>,
    opt: Sgd<T>,
    rng: ChaCha8Rng,
    val_rng: ChaCha8Rng,
    log: Vec<EpochLog>,
}

impl<T: Scalar> FoldTrainer<T> {
    /// `cases` must contain every id named in `fold`.
    pub fn new(
        cases: &[Volume],
        fold: &Fold,
        fold_index: usize,
        net_config: &NetworkConfig,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        net_config.check_patch(config.patch_size)?;
        let find = |id: &String| {
            cases
                .iter()
                .find(|c| &c.case_id == id)
                .ok_or_else(|| TrainError::Config(format!("case {id} missing from dataset")))
        };
        let prep = |ids: &[String]| -> Result<Vec<Volume>, TrainError> {
            ids.iter().map(|id| preprocess_case(find(id)?, config)).collect()
        };
        let train = prep(&fold.train)?;
        let val = prep(&fold.val)?;
        if train.is_empty() {
            return Err(TrainError::Config(format!("fold {fold_index} has no training cases")));
        }
        for v in train.iter().chain(&val) {
            if let Some(&label) = v.mask.labels.iter().find(|&&l| l as usize >= net_config.n_classes) {
                return Err(TrainError::Label { label, n_classes: net_config.n_classes });
            }
        }
        let net = SegNetwork::<T>::build(net_config.clone(), config.seed)?;
        let opt = Sgd::new(&net.store, config.momentum, config.nesterov);
        Ok(Self {
            config: config.clone(),
            fold_index,
            train,
            val,
            net,
            opt,
            rng: stream(config.seed, fold_index, 1),
            val_rng: stream(config.seed, fold_index, 2),
            log: Vec::with_capacity(config.max_epochs),
        })
    }

    pub fn fold_index(&self) -> usize {
        self.fold_index
    }

    pub fn is_done(&self) -> bool {
        self.log.len() >= self.config.max_epochs
    }

    /// Runs the next epoch and returns its log line.
    pub fn step_epoch(&mut self) -> Result<&EpochLog, TrainError> {
        let config = &self.config;
        let epoch = self.log.len();
        if epoch >= config.max_epochs {
            return Err(TrainError::Config(format!("all {} epochs already run", config.max_epochs)));
        }
        let train_refs: Vec<&Volume> = self.train.iter().collect();
        let val_refs: Vec<&Volume> = self.val.iter().collect();
        let net = &mut self.net;
        let start = Instant::now();
        let lr = poly_lr(config.initial_lr, epoch, config.max_epochs, config.poly_exponent)?;
        let mut loss_sum = 0.0;
        for iteration in 0..config.iterations_per_epoch {
            let patches = draw_batch(&train_refs, config, &mut self.rng);
            let (x, mask) = batch_tensor::<T>(&patches)?;
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let outs = net.forward(&mut tape, xv)?;
            let loss = dice_ce_loss(&mut tape, &outs, &mask)?;
            let value = tape.value(loss)?.data()[0].to_acc();
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { epoch, iteration, detail: format!("loss = {value}") });
            }
            let grads = tape.backward(loss)?;
            net.store.zero_grad();
            tape.accumulate_param_grads(&grads, &mut net.store);
            drop(grads);
            drop(tape);
            let norm = clip_grad_total_norm(&mut net.store, config.grad_clip_norm);
            if !norm.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    iteration,
                    detail: format!("gradient norm = {norm} (loss {value})"),
                });
            }
            self.opt.step(&mut net.store, lr);
            loss_sum += value;
        }
        let val_loss = if val_refs.is_empty() || config.val_iterations == 0 {
            f64::NAN
        } else {
            let mut s = 0.0;
            for _ in 0..config.val_iterations {
                s += eval_loss(net, &draw_batch(&val_refs, config, &mut self.val_rng))?;
            }
            s / config.val_iterations as f64
        };
        self.log.push(EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / config.iterations_per_epoch as f64,
            val_loss,
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(&self.log[epoch])
    }

    pub fn finish(self) -> TrainReport<T> {
        let stable = stable_epoch_seconds(&self.log);
        TrainReport { network: self.net, log: self.log, stable_epoch_seconds: stable }
    }
}

/// Trains one fold from scratch. `cases` must contain every id named in `fold`.
pub fn train_fold<T: Scalar>(
    cases: &[Volume],
    fold: &Fold,
    fold_index: usize,
    net_config: &NetworkConfig,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainReport<T>, TrainError> {
    let mut trainer = FoldTrainer::new(cases, fold, fold_index, net_config, config)?;
    while !trainer.is_done() {
        on_epoch(trainer.step_epoch()?);
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(epoch: usize, seconds: f64) -> EpochLog {
        EpochLog { epoch, lr: 0.01, train_loss: 1.0, val_loss: 1.0, seconds }
    }

    #[test]
    fn stable_time_skips_first_epoch() {
        let log = vec![entry(0, 100.0), entry(1, 3.0), entry(2, 1.0), entry(3, 2.0)];
        assert_eq!(stable_epoch_seconds(&log), 2.0);
        assert_eq!(stable_epoch_seconds(&log[..1]), 100.0);
        assert_eq!(stable_epoch_seconds(&log[..3]), 2.0);
    }

    #[test]
    fn log_line_format() {
        let e = EpochLog { epoch: 3, lr: 0.0053589, train_loss: 0.5, val_loss: f64::NAN, seconds: 1.25 };
        assert_eq!(e.to_line().split('\t').count(), 5);
        assert_eq!(e.deterministic_part().split('\t').count(), 4);
        assert!(e.to_line().ends_with("\t1.250"));
    }

    #[test]
    fn config_validation() {
        TrainConfig::full().validate().unwrap();
        TrainConfig::desk().validate().unwrap();
        let c = TrainConfig { foreground_oversample: 1.5, ..TrainConfig::desk() };
        assert!(c.validate().is_err());
        let c = TrainConfig { poly_exponent: 0.0, ..TrainConfig::desk() };
        assert!(c.validate().is_err());
    }
}
