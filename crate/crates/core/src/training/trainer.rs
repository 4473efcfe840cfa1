use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::Sgd;
use super::schedule::{lr_at, Schedule};
use crate::autodiff::Tape;
use crate::config::RunConfig;
use crate::container::Container;
use crate::data::{augment, generate_dataset, Dataset};
use crate::error::{Error, Result};
use crate::network::{NetworkConfig, ScopeNetwork};
use crate::tensor::Tensor;

pub const METRICS_FILE: &str = "metrics.tsv";
pub const CHECKPOINT_FILE: &str = "best.scpt";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Fixed reduction and visiting order. Execution is sequential, so runs
    /// are reproducible either way; the flag is recorded with the run.
    pub deterministic: bool,
    pub schedule: Schedule,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            warmup_epochs: 5,
            base_lr: 0.05,
            momentum: 0.9,
            batch_size: 8,
            seed: 0,
            deterministic: true,
            schedule: Schedule::Cosine,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be positive"));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::config("warmup_epochs", "must be smaller than epochs"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be positive"));
        }
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr", "must be a finite non-negative number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self.epochs, self.warmup_epochs, self.base_lr, self.schedule)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

impl EpochMetrics {
    /// `epoch<TAB>train_loss<TAB>val_acc`.
    pub fn to_line(&self) -> String {
        format!("{}\t{:.6}\t{:.6}", self.epoch, self.train_loss, self.val_acc)
    }
}

pub struct TrainOutcome {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best: ScopeNetwork<f32>,
    pub last: ScopeNetwork<f32>,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows of `(n, classes, 1, 1)` logits whose argmax is the label.
pub fn accuracy(logits: &Tensor<f32>, labels: &[usize]) -> Result<f64> {
    let s = logits.shape();
    if s.n != labels.len() || s.h != 1 || s.w != 1 {
        return Err(Error::invalid("accuracy", format!("logits {s:?} for {} labels", labels.len())));
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(i, &l)| argmax(logits.sample(i)) == l)
        .count();
    Ok(correct as f64 / labels.len().max(1) as f64)
}

fn check_labels(data: &Dataset, classes: usize) -> Result<()> {
    match data.labels.iter().find(|&&l| l >= classes) {
        Some(l) => Err(Error::invalid("dataset", format!("label {l} out of range for {classes} classes"))),
        None => Ok(()),
    }
}

/// Top-1 accuracy of `network` on `data`, without augmentation.
pub fn evaluate(network: &ScopeNetwork<f32>, data: &Dataset, batch_size: usize) -> Result<f64> {
    check_labels(data, network.config().num_classes)?;
    if data.is_empty() {
        return Err(Error::invalid("evaluate", "empty dataset"));
    }
    let order: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0.0;
    for chunk in order.chunks(batch_size.max(1)) {
        let (images, labels) = data.batch(chunk)?;
        let logits = network.forward(&images)?;
        correct += accuracy(&logits, &labels)? * labels.len() as f64;
    }
    Ok(correct / data.len() as f64)
}

/// Rebuilds a network from a checkpoint and its sidecar configuration.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(RunConfig, ScopeNetwork<f32>)> {
    let path = path.as_ref();
    let cfg = RunConfig::load(sidecar_path(path))?;
    let mut net = ScopeNetwork::new(cfg.network.clone(), 0)?;
    net.load_container(&Container::load(path)?)?;
    Ok((cfg, net))
}

/// `best.scpt` -> `best.cfg`.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("cfg")
}

pub fn evaluate_checkpoint(path: impl AsRef<Path>, data: &Dataset) -> Result<f64> {
    let (cfg, net) = load_checkpoint(path)?;
    evaluate(&net, data, cfg.train.batch_size)
}

/// Trains a freshly initialized network. Initialization, sample order and
/// augmentation all derive from `train.seed`.
pub fn train(
    network: &NetworkConfig,
    train: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    train.validate()?;
    check_labels(train_set, network.num_classes)?;
    if train_set.is_empty() {
        return Err(Error::invalid("train", "empty training set"));
    }
    let mut net = ScopeNetwork::<f32>::new(network.clone(), train.seed)?;
    let mut sgd = Sgd::new(train.momentum as f32, net.params().tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    rng.set_stream(1);

    let mut best_val_acc = f64::NEG_INFINITY;
    let mut best = net.clone();
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(train.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..train.epochs {
        let lr = train.lr_at(epoch) as f32;
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(train.batch_size) {
            let images: Vec<Tensor<f32>> = chunk
                .iter()
                .map(|&i| {
                    let img = &train_set.images[i];
                    if train.augment {
                        augment(img, &mut rng)
                    } else {
                        img.clone()
                    }
                })
                .collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let mut tape = Tape::new();
            let bound = net.params().bind(&mut tape);
            let x = tape.constant(Tensor::stack(&images)?);
            let nodes = net.forward_tape(&mut tape, &bound, x, network.variant)?;
            let loss = tape.cross_entropy(nodes.logits, &labels)?;
            loss_sum += tape.value(loss).data()[0] as f64 * chunk.len() as f64;
            let grads = tape.backward(loss)?.collect(&bound)?;
            sgd.step(net.params_mut().tensors_mut(), &grads, lr)?;
        }
        let val_acc = evaluate(&net, val_set, train.batch_size)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_acc,
        };
        if val_acc > best_val_acc {
            best_val_acc = val_acc;
            best = net.clone();
            best_epoch = epoch;
        }
        on_epoch(&m);
        history.push(m);
    }
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_acc,
        best,
        last: net,
    })
}

/// Metrics text, one record per epoch.
pub fn metrics_text(history: &[EpochMetrics]) -> String {
    history.iter().map(|m| m.to_line() + "\n").collect()
}

/// Writes metrics, the best checkpoint and its sidecar configuration.
pub fn write_run(dir: &Path, cfg: &RunConfig, outcome: &TrainOutcome) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(METRICS_FILE), metrics_text(&outcome.history))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    outcome.best.to_container().save(&ckpt)?;
    fs::write(sidecar_path(&ckpt), cfg.to_text())?;
    Ok(ckpt)
}

/// Generates the configured synthetic data, trains, and writes outputs to
/// `cfg.out_dir` when set.
pub fn train_run(cfg: &RunConfig, on_epoch: impl FnMut(&EpochMetrics)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, val_set) = generate_dataset(&cfg.data)?;
    let outcome = train(&cfg.network, &cfg.train, &train_set, &val_set, on_epoch)?;
    if let Some(dir) = &cfg.out_dir {
        write_run(dir, cfg, &outcome)?;
    }
    Ok(outcome)
}
