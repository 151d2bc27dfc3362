//! The four training stages. Each stage builds its own optimizers and RNG
//! stream from `(seed, stage)`, so a stage's trajectory depends only on the
//! parameters it starts from.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Stage, TrainConfig};
use super::early_stop::{BandStopper, PlateauStopper};
use super::log::{EpochRecord, StepRecord, TrainLog};
use crate::data::SampleSet;
use crate::error::{ensure, Error, Result};
use crate::losses::{
    loss_covid_with_grad, loss_fool_with_grad, loss_pseu_with_grad, loss_rec, loss_rec_with_grad, LossBreakdown,
    Reduction,
};
use crate::metrics::MetricsReport;
use crate::model::PrepNet;
use crate::nn::{AdamW, Component, Gradients, Graph, ParamStore, Tensor};

/// Accuracy band around chance inside which the adversarial stage counts the
/// discriminator as fooled.
pub const CHANCE_TOLERANCE: f64 = 0.05;

/// Training and validation partitions, images already prepared to `[0, 1]`.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: SampleSet,
    pub val: SampleSet,
}

#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub stage: Stage,
    pub log: TrainLog,
    pub epochs_run: usize,
    pub stopped_early: bool,
    /// Epoch whose parameters were kept, for stages that retain their best.
    pub best_epoch: Option<usize>,
    /// Validation value of the stage's monitored quantity for the
    /// parameters the stage ends with.
    pub final_val: Option<f64>,
}

impl StageOutcome {
    fn empty(stage: Stage) -> Self {
        Self {
            stage,
            log: TrainLog::new(),
            epochs_run: 0,
            stopped_early: false,
            best_epoch: None,
            final_val: None,
        }
    }
}

/// RNG for a stage: the run seed, on a stream private to the stage.
pub fn stage_rng(seed: u64, stage: Stage) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage.number() as u64);
    rng
}

fn optimizers(model: &PrepNet<f32>, components: &[Component], config: &TrainConfig) -> Vec<AdamW> {
    components
        .iter()
        .map(|&c| {
            AdamW::new(
                &model.store,
                model.store.ids_of(&[c]),
                config.learning_rates.get(c),
                config.optimizer,
            )
        })
        .collect()
}

fn apply(opts: &mut [AdamW], store: &mut ParamStore<f32>, grads: &Gradients<f32>) {
    for o in opts {
        o.step(store, grads);
    }
}

fn shuffled_batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

fn check_finite(values: &[f64], stage: Stage, epoch: usize, step: usize) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            stage: stage.name().into(),
            epoch,
            step,
        })
    }
}

#[derive(Default)]
struct EpochMeans {
    n: usize,
    rec: f64,
    pseu: f64,
    covid: f64,
    fool: f64,
    acc: f64,
}

impl EpochMeans {
    fn add(&mut self, l: &LossBreakdown, acc: Option<f64>) {
        self.n += 1;
        self.rec += l.rec;
        self.pseu += l.pseu;
        self.covid += l.covid;
        self.fool += l.fool;
        self.acc += acc.unwrap_or(0.0);
    }

    fn losses(&self, config: &TrainConfig) -> Result<LossBreakdown> {
        let d = self.n.max(1) as f64;
        LossBreakdown::new(
            self.rec / d,
            self.pseu / d,
            self.covid / d,
            self.fool / d,
            &config.loss_weights,
        )
    }

    fn accuracy(&self) -> f64 {
        self.acc / self.n.max(1) as f64
    }
}

fn argmax_accuracy(logits: &Tensor<f32>, labels: &[usize]) -> f64 {
    let k = logits.dim(1);
    let correct = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    correct as f64 / labels.len().max(1) as f64
}

/// First index of the maximum, so ties resolve deterministically.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean per-pixel squared reconstruction error over a set of images.
pub fn mean_rec_loss(model: &PrepNet<f32>, images: &Tensor<f32>) -> Result<f64> {
    let rec = model.reconstruct(images)?;
    loss_rec(images, &rec, Reduction::Mean)
}

/// Reconstruction loss of every sample, keyed by sample id.
pub fn per_sample_rec_losses(model: &PrepNet<f32>, set: &SampleSet) -> Result<Vec<(String, f64)>> {
    let rec = model.reconstruct(&set.images)?;
    let pixels = rec.len() / set.len().max(1);
    Ok(set
        .sample_ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let range = i * pixels..(i + 1) * pixels;
            let err: f64 = set.images.data()[range.clone()]
                .iter()
                .zip(&rec.data()[range])
                .map(|(&a, &b)| ((b - a) as f64).powi(2))
                .sum();
            (id.clone(), err / pixels as f64)
        })
        .collect())
}

/// Fraction of images whose dataset the discriminator predicts correctly.
pub fn discriminator_accuracy(model: &PrepNet<f32>, images: &Tensor<f32>, dataset_ids: &[usize]) -> Result<f64> {
    ensure!(!dataset_ids.is_empty(), "no images to score the discriminator on");
    let logits = model.classify_dataset(images)?;
    Ok(argmax_accuracy(&logits, dataset_ids))
}

/// Task metrics of the model's classifier on already preprocessed inputs.
pub fn task_metrics(model: &PrepNet<f32>, inputs: &Tensor<f32>, labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    let probs: Vec<f64> = model.classify_task(inputs)?.iter().map(|&p| p as f64).collect();
    MetricsReport::from_scores(labels, &probs, threshold)
}

fn validate_inputs(model: &PrepNet<f32>, data: &TrainData, stage: Stage) -> Result<()> {
    ensure!(!data.train.is_empty(), "{} stage needs training data", stage.name());
    model.check_batch(&data.train.images)?;
    if !data.val.is_empty() {
        model.check_batch(&data.val.images)?;
    }
    Ok(())
}

fn epoch_record(stage: Stage, epoch: usize, train: LossBreakdown, start: Instant) -> EpochRecord {
    EpochRecord {
        stage,
        epoch,
        train,
        train_disc_accuracy: None,
        val_rec: None,
        val_disc_accuracy: None,
        val_ba: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

/// Minimize mean-reduced `L_rec` over the auto-encoder. The parameters of
/// the epoch with the lowest validation loss are kept.
pub fn stage_pretrain_autoencoder(model: &mut PrepNet<f32>, data: &TrainData, config: &TrainConfig) -> Result<StageOutcome> {
    let stage = Stage::AePretrain;
    validate_inputs(model, data, stage)?;
    let mut out = StageOutcome::empty(stage);
    let epochs = config.epochs.get(stage);
    if epochs == 0 {
        return Ok(out);
    }
    let start = Instant::now();
    let mut rng = stage_rng(config.seed, stage);
    let mut opts = optimizers(model, stage.trainable(), config);
    let mut stopper = PlateauStopper::minimize(config.early_stop_patience);
    let mut best: Option<ParamStore<f32>> = None;
    let mut step = 0;
    for epoch in 0..epochs {
        let mut means = EpochMeans::default();
        for idx in shuffled_batches(data.train.len(), config.batch_size, &mut rng) {
            let x = data.train.images.gather(&idx);
            let (rec, grads) = {
                let mut g = Graph::new(&model.store, stage.trainable());
                let xi = g.input_ref(&x);
                let y = model.autoencode_node(&mut g, xi);
                let (v, grad) = loss_rec_with_grad(&x, g.value(y), Reduction::Mean)?;
                let root = g.loss(y, v, grad);
                (v as f64, g.backward(root))
            };
            check_finite(&[rec], stage, epoch, step)?;
            apply(&mut opts, &mut model.store, &grads);
            let losses = LossBreakdown::new(rec, 0.0, 0.0, 0.0, &config.loss_weights)?;
            means.add(&losses, None);
            out.log.push_step(StepRecord {
                stage,
                epoch,
                step,
                losses,
                disc_accuracy: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            step += 1;
        }
        let train = means.losses(config)?;
        let monitored = if data.val.is_empty() {
            train.rec
        } else {
            mean_rec_loss(model, &data.val.images)?
        };
        check_finite(&[monitored], stage, epoch, step)?;
        let mut rec = epoch_record(stage, epoch, train, start);
        rec.val_rec = (!data.val.is_empty()).then_some(monitored);
        out.log.push_epoch(rec);
        out.epochs_run += 1;
        out.final_val = Some(monitored);
        if stopper.observe(monitored) {
            best = Some(model.store.clone());
        }
        if stopper.should_stop() {
            out.stopped_early = true;
            break;
        }
    }
    if let Some(best) = best {
        for &c in stage.trainable() {
            model.store.copy_component_from(&best, c);
        }
    }
    out.best_epoch = Some(stopper.best_epoch());
    out.final_val = stopper.best();
    Ok(out)
}

fn discriminator_inputs(model: &PrepNet<f32>, images: &Tensor<f32>, raw: bool) -> Result<Tensor<f32>> {
    if raw {
        Ok(images.clone())
    } else {
        model.reconstruct(images)
    }
}

/// Train the dataset classifier on reconstructions of the frozen
/// auto-encoder (or on raw images when `warmup_on_raw` is set).
pub fn stage_warmup_discriminator(model: &mut PrepNet<f32>, data: &TrainData, config: &TrainConfig) -> Result<StageOutcome> {
    let stage = Stage::Warmup;
    validate_inputs(model, data, stage)?;
    let mut out = StageOutcome::empty(stage);
    let epochs = config.epochs.get(stage);
    if epochs == 0 {
        return Ok(out);
    }
    let start = Instant::now();
    let inputs = discriminator_inputs(model, &data.train.images, config.warmup_on_raw)?;
    let val_inputs = if data.val.is_empty() {
        None
    } else {
        Some(discriminator_inputs(model, &data.val.images, config.warmup_on_raw)?)
    };
    let mut rng = stage_rng(config.seed, stage);
    let mut opts = optimizers(model, stage.trainable(), config);
    let mut step = 0;
    for epoch in 0..epochs {
        let mut means = EpochMeans::default();
        for idx in shuffled_batches(data.train.len(), config.batch_size, &mut rng) {
            let p: Vec<usize> = idx.iter().map(|&i| data.train.dataset_ids[i]).collect();
            let (pseu, acc, grads) = {
                let mut g = Graph::new(&model.store, stage.trainable());
                let xi = g.input(inputs.gather(&idx));
                let logits = model.dataset_logits_node(&mut g, xi);
                let acc = argmax_accuracy(g.value(logits), &p);
                let (v, grad) = loss_pseu_with_grad(&p, g.value(logits))?;
                let root = g.loss(logits, v, grad);
                (v as f64, acc, g.backward(root))
            };
            check_finite(&[pseu], stage, epoch, step)?;
            apply(&mut opts, &mut model.store, &grads);
            let losses = LossBreakdown::new(0.0, pseu, 0.0, 0.0, &config.loss_weights)?;
            means.add(&losses, Some(acc));
            out.log.push_step(StepRecord {
                stage,
                epoch,
                step,
                losses,
                disc_accuracy: Some(acc),
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            step += 1;
        }
        let mut rec = epoch_record(stage, epoch, means.losses(config)?, start);
        rec.train_disc_accuracy = Some(means.accuracy());
        if let Some(v) = &val_inputs {
            let acc = discriminator_accuracy(model, v, &data.val.dataset_ids)?;
            rec.val_disc_accuracy = Some(acc);
            out.final_val = Some(acc);
        }
        out.log.push_epoch(rec);
        out.epochs_run += 1;
    }
    Ok(out)
}

/// Number of distinct argmax classes predicted over a set of logits.
fn predicted_classes(logits: &Tensor<f32>) -> usize {
    let k = logits.dim(1);
    let mut seen = vec![false; k];
    for row in logits.data().chunks(k) {
        seen[argmax(row)] = true;
    }
    seen.iter().filter(|&&s| s).count()
}

/// Alternate one discriminator step and one auto-encoder step per batch.
///
/// The D-step minimizes `L_pseu` on detached reconstructions. The G-step
/// minimizes `w_rec·L_rec + w_fool·L_fool` through the frozen discriminator.
/// Stops early once held-out discriminator accuracy has stayed within
/// [`CHANCE_TOLERANCE`] of chance for `early_stop_patience` epochs.
///
/// With validation data, the stage ends on the epoch whose discriminator
/// accuracy is closest to the chance band, the lowest validation
/// reconstruction loss breaking ties inside it.
pub fn stage_adversarial(model: &mut PrepNet<f32>, data: &TrainData, config: &TrainConfig) -> Result<StageOutcome> {
    let stage = Stage::Adversarial;
    validate_inputs(model, data, stage)?;
    let k = model.config().domain_count();
    ensure!(k >= 2, "adversarial stage needs at least two datasets, got {k}");
    let mut out = StageOutcome::empty(stage);
    let epochs = config.epochs.get(stage);
    if epochs == 0 {
        return Ok(out);
    }
    let start = Instant::now();
    let w = config.loss_weights;
    let mut rng = stage_rng(config.seed, stage);
    let warmup = config.adversarial_lr_warmup_steps as u64;
    let mut d_opts: Vec<AdamW> = optimizers(model, &[Component::DatasetClassifier], config)
        .into_iter()
        .map(|o| o.with_warmup(warmup))
        .collect();
    let mut g_opts: Vec<AdamW> = optimizers(model, &Component::AUTOENCODER, config)
        .into_iter()
        .map(|o| o.with_warmup(warmup))
        .collect();
    let chance = 1.0 / k as f64;
    let mut band = BandStopper::new(chance, CHANCE_TOLERANCE, config.early_stop_patience);
    let mut best: Option<((f64, f64), ParamStore<f32>)> = None;
    let mut step = 0;
    for epoch in 0..epochs {
        let mut means = EpochMeans::default();
        for idx in shuffled_batches(data.train.len(), config.batch_size, &mut rng) {
            let x = data.train.images.gather(&idx);
            let p: Vec<usize> = idx.iter().map(|&i| data.train.dataset_ids[i]).collect();

            let x_hat = model.reconstruct(&x)?;
            let (pseu, acc, d_grads) = {
                let mut g = Graph::new(&model.store, &[Component::DatasetClassifier]);
                let xi = g.input(x_hat);
                let logits = model.dataset_logits_node(&mut g, xi);
                let acc = argmax_accuracy(g.value(logits), &p);
                let (v, grad) = loss_pseu_with_grad(&p, g.value(logits))?;
                let root = g.loss(logits, v, grad);
                (v as f64, acc, g.backward(root))
            };
            check_finite(&[pseu], stage, epoch, step)?;
            apply(&mut d_opts, &mut model.store, &d_grads);

            let (rec, fool, g_grads) = {
                let mut g = Graph::new(&model.store, &Component::AUTOENCODER);
                let xi = g.input_ref(&x);
                let y = model.autoencode_node(&mut g, xi);
                let (rv, rgrad) = loss_rec_with_grad(&x, g.value(y), Reduction::Mean)?;
                let rec = g.loss(y, rv, rgrad);
                let logits = model.dataset_logits_node(&mut g, y);
                let (fv, fgrad) = loss_fool_with_grad(g.value(logits))?;
                let fool = g.loss(logits, fv, fgrad);
                let root = g.weighted_sum(&[(rec, w.w_rec), (fool, w.w_fool)]);
                (rv as f64, fv as f64, g.backward(root))
            };
            check_finite(&[rec, fool], stage, epoch, step)?;
            apply(&mut g_opts, &mut model.store, &g_grads);

            let losses = LossBreakdown::new(rec, pseu, 0.0, fool, &w)?;
            means.add(&losses, Some(acc));
            out.log.push_step(StepRecord {
                stage,
                epoch,
                step,
                losses,
                disc_accuracy: Some(acc),
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            step += 1;
        }
        let mut rec = epoch_record(stage, epoch, means.losses(config)?, start);
        rec.train_disc_accuracy = Some(means.accuracy());
        out.epochs_run += 1;
        if !data.val.is_empty() {
            let recon = model.reconstruct(&data.val.images)?;
            let val_rec = loss_rec(&data.val.images, &recon, Reduction::Mean)?;
            let logits = model.classify_dataset(&recon)?;
            let acc = argmax_accuracy(&logits, &data.val.dataset_ids);
            if predicted_classes(&logits) == 1 {
                log::warn!("discriminator predicts a single dataset for every validation image (epoch {epoch})");
            }
            rec.val_rec = Some(val_rec);
            rec.val_disc_accuracy = Some(acc);
            band.observe(acc);
            // any accuracy inside the chance band is as good as any other;
            // among those the better reconstruction wins
            let key = (((acc - chance).abs() - CHANCE_TOLERANCE).max(0.0), val_rec);
            if best.as_ref().is_none_or(|(b, _)| key < *b) {
                best = Some((key, model.store.clone()));
                out.best_epoch = Some(epoch);
                out.final_val = Some(acc);
            }
        }
        out.log.push_epoch(rec);
        if band.should_stop() {
            out.stopped_early = true;
            break;
        }
    }
    if let Some((_, best)) = best {
        for &c in stage.trainable() {
            model.store.copy_component_from(&best, c);
        }
    }
    Ok(out)
}

/// Train the task classifier on fixed, already preprocessed inputs, keeping
/// the parameters of the epoch with the best validation balanced accuracy.
pub fn fit_task_classifier(
    model: &mut PrepNet<f32>,
    train: &SampleSet,
    val: &SampleSet,
    config: &TrainConfig,
    seed: u64,
) -> Result<StageOutcome> {
    let stage = Stage::Task;
    ensure!(!train.is_empty(), "task classifier needs training data");
    model.check_batch(&train.images)?;
    let labels = train.binary_labels()?;
    let val_labels = if val.is_empty() {
        None
    } else {
        model.check_batch(&val.images)?;
        Some(val.binary_labels()?)
    };
    let mut out = StageOutcome::empty(stage);
    let epochs = config.epochs.get(stage);
    if epochs == 0 {
        return Ok(out);
    }
    let start = Instant::now();
    let mut rng = stage_rng(seed, stage);
    let mut opts = optimizers(model, stage.trainable(), config);
    let mut stopper = PlateauStopper::maximize(config.early_stop_patience);
    let mut best: Option<ParamStore<f32>> = None;
    let mut step = 0;
    for epoch in 0..epochs {
        let mut means = EpochMeans::default();
        for idx in shuffled_batches(train.len(), config.batch_size, &mut rng) {
            let y: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
            let (covid, grads) = {
                let mut g = Graph::new(&model.store, stage.trainable());
                let xi = g.input(train.images.gather(&idx));
                let logit = model.task_logit_node(&mut g, xi);
                let prob = g.sigmoid(logit);
                let (v, grad) = loss_covid_with_grad(&y, g.value(prob))?;
                let root = g.loss(prob, v, grad);
                (v as f64, g.backward(root))
            };
            check_finite(&[covid], stage, epoch, step)?;
            apply(&mut opts, &mut model.store, &grads);
            let losses = LossBreakdown::new(0.0, 0.0, covid, 0.0, &config.loss_weights)?;
            means.add(&losses, None);
            out.log.push_step(StepRecord {
                stage,
                epoch,
                step,
                losses,
                disc_accuracy: None,
                wall_time_s: start.elapsed().as_secs_f64(),
            });
            step += 1;
        }
        let mut rec = epoch_record(stage, epoch, means.losses(config)?, start);
        out.epochs_run += 1;
        let monitored = match &val_labels {
            Some(vl) => {
                let ba = task_metrics(model, &val.images, vl, config.decision_threshold)?.ba;
                rec.val_ba = Some(ba);
                ba
            }
            // without validation data, fall back to the (negated) training loss
            None => -rec.train.covid,
        };
        out.final_val = Some(monitored);
        out.log.push_epoch(rec);
        if stopper.observe(monitored) {
            best = Some(model.store.clone());
        }
        if stopper.should_stop() {
            out.stopped_early = true;
            break;
        }
    }
    if let Some(best) = best {
        model.store.copy_component_from(&best, Component::TaskClassifier);
    }
    out.best_epoch = Some(stopper.best_epoch());
    out.final_val = stopper.best();
    Ok(out)
}

/// Train the task classifier on reconstructions from the frozen auto-encoder.
pub fn stage_task_classifier(model: &mut PrepNet<f32>, data: &TrainData, config: &TrainConfig) -> Result<StageOutcome> {
    validate_inputs(model, data, Stage::Task)?;
    let train = data.train.with_images(model.reconstruct(&data.train.images)?);
    let val = if data.val.is_empty() {
        data.val.clone()
    } else {
        data.val.with_images(model.reconstruct(&data.val.images)?)
    };
    fit_task_classifier(model, &train, &val, config, config.seed)
}
