//! The training loop: batches of residues, AdamW on the SFTD objective,
//! per-step EMA codebook updates with revival, per-epoch validation and
//! early stopping.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainingMeta};
use super::loss::{evaluate_reconstruction, sftd_total_loss, Choices, LossTerms, LossWeights};
use super::optim::{clip_global_norm, cosine_lr, AdamW};
use crate::corpus::Ensemble;
use crate::descriptors::{
    compute_descriptors, fit_standardizer, DescriptorConfig, DescriptorSet, Standardizer,
};
use crate::error::{Error, Result};
use crate::neuralcore::{ModelConfig, ModelParams, SetBatch, Tensor};
use crate::quantizer::{
    codebook_stats, ema_update, kmeans_init, quantize_batch, revive_dead, CodebookLevel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub lambda: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Relative improvement a validation loss needs to count as better.
    pub min_delta: f64,
    /// Residues per step.
    pub batch_size: usize,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// EMA decay γ.
    pub gamma: f64,
    pub revival_threshold: f64,
    pub codebook_sizes: Vec<usize>,
    pub kmeans_iterations: usize,
    /// Training latents drawn for the k-means initialization.
    pub kmeans_samples: usize,
    /// Feed branch 1 a random sub-multiset too, instead of every frame.
    pub sample_branch1: bool,
    /// Keep the initial codebooks fixed.
    pub freeze_codebooks: bool,
    pub width: usize,
    pub n_queries: usize,
    pub heads: usize,
    pub n_blocks: usize,
    pub ff_width: usize,
    pub latent_dim: usize,
    pub decoder_hidden: usize,
    pub p_max: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            lambda: 0.1,
            lr_max: 1e-3,
            lr_min: 1e-6,
            warmup_steps: 1000,
            max_epochs: 200,
            patience: 40,
            min_delta: 1e-4,
            batch_size: 256,
            grad_clip: 1.0,
            weight_decay: 1e-5,
            seed: 0,
            gamma: 0.99,
            revival_threshold: 1.0,
            codebook_sizes: vec![2048, 128, 128],
            kmeans_iterations: 10,
            kmeans_samples: 8192,
            sample_branch1: false,
            freeze_codebooks: false,
            width: 256,
            n_queries: 8,
            heads: 4,
            n_blocks: 4,
            ff_width: 256,
            latent_dim: 128,
            decoder_hidden: 256,
            p_max: 10,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            width: self.width,
            n_queries: self.n_queries,
            heads: self.heads,
            n_blocks: self.n_blocks,
            ff_width: self.ff_width,
            latent_dim: self.latent_dim,
            decoder_hidden: self.decoder_hidden,
            p_max: self.p_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if !(self.lambda >= 0.0 && self.beta >= 0.0) {
            return bad(format!(
                "loss weights must be non-negative (β = {}, λ = {})",
                self.beta, self.lambda
            ));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 ≤ lr_min ≤ lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if self.patience == 0 || self.max_epochs == 0 || self.batch_size == 0 {
            return bad("patience, max_epochs and batch_size must be positive".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!(
                "gradient clip norm must be positive, got {}",
                self.grad_clip
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("EMA decay must lie in (0, 1), got {}", self.gamma));
        }
        if self.codebook_sizes.is_empty() || self.codebook_sizes.contains(&0) {
            return bad(format!(
                "codebook sizes must be positive, got {:?}",
                self.codebook_sizes
            ));
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative".into());
        }
        self.model_config(1).validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub enum LogRecord {
    Step {
        epoch: usize,
        step: usize,
        lr: f64,
        terms: LossTerms,
        grad_norm: f64,
    },
    Epoch(EpochRecord),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub val_loss: f64,
    pub train_loss: f64,
    /// Per level, over the branch-1 assignments of the epoch.
    pub utilization: Vec<f64>,
    pub perplexity: Vec<f64>,
    pub revived: Vec<usize>,
    pub improved: bool,
}

fn join(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for LogRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LogRecord::Step {
                epoch,
                step,
                lr,
                terms,
                grad_norm,
            } => write!(
                f,
                "step epoch={epoch} step={step} lr={lr:.3e} loss={:.6} recon={:.6},{:.6} commit={:.6},{:.6} distill={:.6} grad_norm={grad_norm:.4}",
                terms.total, terms.recon[0], terms.recon[1], terms.commit[0], terms.commit[1], terms.distill
            ),
            LogRecord::Epoch(e) => write!(
                f,
                "epoch epoch={} train_loss={:.6} val_recon={:.6} utilization={} perplexity={} revived={} improved={}",
                e.epoch,
                e.train_loss,
                e.val_loss,
                join(&e.utilization),
                join(&e.perplexity),
                e.revived.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(","),
                e.improved
            ),
        }
    }
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Descriptors of every ensemble, wrapped with the protein id on failure.
pub fn descriptor_sets(
    ensembles: &[&Ensemble],
    config: &DescriptorConfig,
) -> Result<Vec<DescriptorSet>> {
    ensembles
        .iter()
        .map(|e| compute_descriptors(e, config).map_err(|err| err.in_protein(&e.id)))
        .collect()
}

fn residue_items(sets: &[DescriptorSet]) -> Vec<&[f64]> {
    sets.iter()
        .flat_map(|s| (0..s.residue_count()).map(move |r| s.residue(r)))
        .collect()
}

fn encode_items(params: &ModelParams, items: &[&[f64]], chunk: usize) -> Result<Tensor> {
    let dim = params.config().input_dim;
    let mut out = Vec::new();
    for c in items.chunks(chunk.max(1)) {
        let sizes = c.iter().map(|it| it.len() / dim).collect();
        let rows = Tensor::new(c.iter().map(|it| it.len() / dim).sum(), dim, c.concat())?;
        out.extend(
            params
                .encode_batch(&SetBatch::new(rows, sizes)?)?
                .into_data(),
        );
    }
    Tensor::new(items.len(), params.config().latent_dim, out)
}

/// Residual k-means codebooks. Cluster sizes are rescaled from the sample
/// count to `per_step` assignments, the scale the EMA counts live on.
fn init_codebooks(
    latents: &Tensor,
    sizes: &[usize],
    iterations: usize,
    per_step: usize,
    seed: u64,
) -> Result<Vec<CodebookLevel>> {
    let mut levels: Vec<CodebookLevel> = Vec::with_capacity(sizes.len());
    let mut residual = latents.clone();
    let scale = per_step as f64 / latents.rows() as f64;
    for (l, &m) in sizes.iter().enumerate() {
        let fitted = kmeans_init(m, &residual, iterations, seed.wrapping_add(l as u64))?;
        let counts: Vec<f64> = fitted.ema_count().iter().map(|n| n * scale).collect();
        let mut sums = fitted.codewords().clone();
        for (i, &n) in counts.iter().enumerate() {
            sums.row_mut(i).iter_mut().for_each(|v| *v *= n);
        }
        let level = CodebookLevel::from_parts(fitted.codewords().clone(), counts, sums)?;
        for r in 0..residual.rows() {
            let (c, _) = level.nearest(residual.row(r));
            let cw = level.codeword(c).to_vec();
            for (v, e) in residual.row_mut(r).iter_mut().zip(cw) {
                *v -= e;
            }
        }
        levels.push(level);
    }
    Ok(levels)
}

/// Per-level utilization and perplexity of the tokens of `latents`.
pub fn token_statistics(
    latents: &Tensor,
    levels: &[CodebookLevel],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = quantize_batch(latents, levels)?;
    let mut util = Vec::new();
    let mut ppl = Vec::new();
    for (l, level) in levels.iter().enumerate() {
        let mut counts = vec![0u64; level.size()];
        for t in &q.tokens {
            counts[t[l]] += 1;
        }
        let (u, p) = codebook_stats(&counts)?;
        util.push(u);
        ppl.push(p);
    }
    Ok((util, ppl))
}

/// Trains on `train`, early-stopping on the branch-1 reconstruction loss of
/// `val`, and returns the best-validation checkpoint. Every log record is
/// passed to `log`.
pub fn train(
    train: &[&Ensemble],
    val: &[&Ensemble],
    descriptor: &DescriptorConfig,
    cfg: &TrainConfig,
    log: &mut dyn FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    descriptor.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid(
            "training needs non-empty train and validation splits",
        ));
    }
    if let Some(e) = train.iter().find(|t| val.iter().any(|v| v.id == t.id)) {
        return Err(Error::invalid(format!(
            "protein {} is in both train and validation splits",
            e.id
        )));
    }
    if let Some(e) = train
        .iter()
        .chain(val)
        .find(|e| e.frame_count() > cfg.p_max)
    {
        return Err(Error::invalid(format!(
            "protein {} has {} frames, more than P_max = {}",
            e.id,
            e.frame_count(),
            cfg.p_max
        )));
    }

    let raw_train = descriptor_sets(train, descriptor)?;
    let raw_val = descriptor_sets(val, descriptor)?;
    let standardizer = fit_standardizer(&raw_train.iter().collect::<Vec<_>>())?;
    let std_train = raw_train
        .iter()
        .map(|s| standardizer.apply(s))
        .collect::<Result<Vec<_>>>()?;
    let std_val = raw_val
        .iter()
        .map(|s| standardizer.apply(s))
        .collect::<Result<Vec<_>>>()?;
    let train_items = residue_items(&std_train);
    let val_items = residue_items(&std_val);

    let model_cfg = cfg.model_config(standardizer.dim());
    let mut params = ModelParams::init(model_cfg, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_7a11);

    let mut order: Vec<usize> = (0..train_items.len()).collect();
    order.shuffle(&mut rng);
    let init_items: Vec<&[f64]> = order
        .iter()
        .take(cfg.kmeans_samples.max(1))
        .map(|&i| train_items[i])
        .collect();
    let init_latents = encode_items(&params, &init_items, cfg.batch_size)?;
    let mut levels = init_codebooks(
        &init_latents,
        &cfg.codebook_sizes,
        cfg.kmeans_iterations,
        2 * cfg.batch_size.min(train_items.len()),
        cfg.seed,
    )?;

    let steps_per_epoch = train_items.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.max_epochs;
    cosine_lr(0, cfg.warmup_steps, total_steps, cfg.lr_max, cfg.lr_min)?;
    let weights = LossWeights {
        beta: cfg.beta,
        lambda: cfg.lambda,
    };
    let mut opt = AdamW::new(params.tensors(), cfg.weight_decay);
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(usize, f64, ModelParams, Vec<CodebookLevel>)> = None;
    let mut stale = 0;
    let mut step = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut counts: Vec<Vec<u64>> = levels.iter().map(|l| vec![0; l.size()]).collect();
        let mut revived = vec![0; levels.len()];
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&[f64]> = chunk.iter().map(|&i| train_items[i]).collect();
            let fwd = sftd_total_loss(
                &params,
                &levels,
                &items,
                weights,
                Choices::Sample {
                    rng: &mut rng,
                    sample_branch1: cfg.sample_branch1,
                },
            )?;
            let grads = fwd.tape.backward(fwd.loss)?;
            let mut g: Vec<Tensor> = fwd
                .model
                .vars()
                .iter()
                .map(|&v| grads.wrt(&fwd.tape, v))
                .collect();
            if g.iter().any(|t| !t.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradients at epoch {epoch}, step {step}"
                )));
            }
            let grad_norm = clip_global_norm(&mut g, cfg.grad_clip);
            step += 1;
            let lr = cosine_lr(step, cfg.warmup_steps, total_steps, cfg.lr_max, cfg.lr_min)?;
            opt.step(params.tensors_mut(), &g, lr)?;
            loss_sum += fwd.terms.total * items.len() as f64;

            let [q1, q2] = &fwd.quantization;
            let (q1, q2) = (
                q1.as_ref().expect("fresh quantization"),
                q2.as_ref().expect("fresh quantization"),
            );
            for (l, level) in levels.iter_mut().enumerate() {
                for t in &q1.tokens {
                    counts[l][t[l]] += 1;
                }
                if cfg.freeze_codebooks {
                    continue;
                }
                let mut assigned: Vec<(usize, &[f64])> = Vec::with_capacity(2 * items.len());
                for q in [q1, q2] {
                    for (b, t) in q.tokens.iter().enumerate() {
                        assigned.push((t[l], q.level_inputs[l].row(b)));
                    }
                }
                ema_update(level, &assigned, cfg.gamma)?;
                let inputs = Tensor::new(
                    q1.level_inputs[l].rows() + q2.level_inputs[l].rows(),
                    level.dim(),
                    [q1.level_inputs[l].data(), q2.level_inputs[l].data()].concat(),
                )?;
                revived[l] += revive_dead(level, &inputs, cfg.revival_threshold, &mut rng)?.len();
            }
            log(&LogRecord::Step {
                epoch,
                step,
                lr,
                terms: fwd.terms,
                grad_norm,
            });
        }

        let val_loss = evaluate_reconstruction(&params, &levels, &val_items, cfg.batch_size)?;
        let improved = match &best {
            None => true,
            Some((_, b, _, _)) => val_loss < b * (1.0 - cfg.min_delta),
        };
        if improved {
            best = Some((epoch, val_loss, params.clone(), levels.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        let mut utilization = Vec::new();
        let mut perplexity = Vec::new();
        for c in &counts {
            let (u, p) = codebook_stats(c)?;
            utilization.push(u);
            perplexity.push(p);
        }
        let record = EpochRecord {
            epoch,
            val_loss,
            train_loss: loss_sum / train_items.len() as f64,
            utilization,
            perplexity,
            revived,
            improved,
        };
        log(&LogRecord::Epoch(record.clone()));
        history.push(record);
        if stale >= cfg.patience {
            break;
        }
    }

    let (best_epoch, best_val_loss, params, codebooks) = best.expect("at least one epoch ran");
    let latents = encode_items(&params, &train_items, cfg.batch_size)?;
    let (utilization, perplexity) = token_statistics(&latents, &codebooks)?;
    let checkpoint = Checkpoint {
        descriptor: *descriptor,
        standardizer,
        params,
        codebooks,
        meta: TrainingMeta {
            seed: cfg.seed,
            best_epoch,
            epochs_run: history.len(),
            best_val_loss,
            utilization,
            perplexity,
        },
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
    })
}

/// Standardized descriptor rows of `ensemble` under a checkpoint's
/// descriptor configuration and standardizer.
pub fn standardized_descriptors(
    ensemble: &Ensemble,
    descriptor: &DescriptorConfig,
    standardizer: &Standardizer,
) -> Result<DescriptorSet> {
    let raw = compute_descriptors(ensemble, descriptor).map_err(|e| e.in_protein(&ensemble.id))?;
    standardizer.apply(&raw)
}
