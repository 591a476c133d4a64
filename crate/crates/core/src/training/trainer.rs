use numcore::{Graph, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::loss::{focal_loss, focal_loss_scalar};
use super::{EpochRecord, PhaseSummary, TrainConfig, TrainHistory};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auprc, auroc, ScoredSet, DEFAULT_THRESHOLD};
use crate::models::{
    bind, forward, init_params, is_aux_head, is_seq_module, predict_seq_features, Architecture, Batch, Mode,
    ModelConfig, ModelParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// SEQ module + auxiliary head.
    Pretrain,
    /// Non-SEQ and fusion layers on frozen SEQ features.
    Fusion,
    /// Everything, at the reduced learning rate.
    FineTune,
    /// Whole network in one pass (nSHS-Net).
    Single,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Pretrain | Phase::Single => 1,
            Phase::Fusion => 2,
            Phase::FineTune => 3,
        }
    }

    fn mode(self) -> Mode {
        match self {
            Phase::Pretrain => Mode::Phase1Aux,
            _ => Mode::Fused,
        }
    }

    fn lr(self, cfg: &TrainConfig) -> f64 {
        match self {
            Phase::FineTune => cfg.lr_phase3,
            _ => cfg.lr_phase12,
        }
    }
}

/// Parameters updated in `phase`.
pub fn phase_trainable(phase: Phase) -> fn(&str) -> bool {
    match phase {
        Phase::Pretrain => |n| is_seq_module(n) || is_aux_head(n),
        Phase::Fusion => |n| !is_seq_module(n) && !is_aux_head(n),
        Phase::FineTune | Phase::Single => |_| true,
    }
}

#[derive(Debug, Clone)]
pub struct PhaseOutcome {
    pub summary: PhaseSummary,
    pub records: Vec<EpochRecord>,
    /// Optimizer state after the last epoch run.
    pub adam: AdamState,
}

fn mix_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k + 1))
}

fn gather_rows(cache: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let w = cache.last_dim();
    let data = idx.iter().flat_map(|&i| cache.data()[i * w..(i + 1) * w].iter().copied()).collect();
    Ok(Tensor::new(vec![idx.len(), w], data)?)
}

fn make_batch(samples: &[&Sample], idx: &[usize], cache: Option<&Tensor>) -> Result<Batch> {
    let chosen: Vec<&Sample> = idx.iter().map(|&i| samples[i]).collect();
    let batch = Batch::from_samples(&chosen)?;
    match cache {
        Some(c) => batch.with_seq_cache(gather_rows(c, idx)?),
        None => Ok(batch),
    }
}

fn scores(params: &ModelParams, samples: &[&Sample], mode: Mode, cache: Option<&Tensor>, bs: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    let mut out = Vec::with_capacity(samples.len());
    for chunk in idx.chunks(bs) {
        let batch = make_batch(samples, chunk, cache)?;
        let mut g = Graph::new();
        let bound = bind(&mut g, params, &|_| false);
        let p = forward(&mut g, &bound, params, &batch, mode)?;
        out.extend_from_slice(g.value(p).data());
    }
    Ok(out)
}

fn check_split(train: &[&Sample], val: &[&Sample]) -> Result<()> {
    if train.is_empty() {
        return Err(Error::contract("empty training set"));
    }
    if val.is_empty() {
        return Err(Error::contract("empty validation set"));
    }
    Ok(())
}

fn run_phase(
    params: &mut ModelParams,
    phase: Phase,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
) -> Result<PhaseOutcome> {
    cfg.validate()?;
    check_split(train, val)?;
    let trainable = phase_trainable(phase);
    let mode = phase.mode();
    let lr = phase.lr(cfg);
    let bs = cfg.batch_size;
    let (train_cache, val_cache) = if phase == Phase::Fusion {
        (
            Some(predict_seq_features(params, train, bs)?),
            Some(predict_seq_features(params, val, bs)?),
        )
    } else {
        (None, None)
    };
    let val_labels: Vec<bool> = val.iter().map(|s| s.label).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, u64::from(phase.number())));
    let mut adam = AdamState::new(params);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut records = Vec::new();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut wait = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(bs) {
            let batch = make_batch(train, chunk, train_cache.as_ref())?;
            let mut g = Graph::new();
            let bound = bind(&mut g, params, &trainable);
            let p = forward(&mut g, &bound, params, &batch, mode)?;
            let y = g.constant(Tensor::new(
                vec![chunk.len(), 1],
                chunk.iter().map(|&i| f64::from(u8::from(train[i].label))).collect(),
            )?);
            let loss = focal_loss(&mut g, p, y, cfg.focal_gamma, cfg.focal_alpha)?;
            total += g.value(loss).data()[0] * chunk.len() as f64;
            let grads = g.backward(loss)?;
            adam_step(params, &grads, &mut adam, lr, cfg.hyper(), &trainable)?;
        }
        let train_loss = total / train.len() as f64;

        let s = scores(params, val, mode, val_cache.as_ref(), bs)?;
        let val_loss = s
            .iter()
            .zip(&val_labels)
            .map(|(&p, &y)| focal_loss_scalar(p, y, cfg.focal_gamma, cfg.focal_alpha))
            .sum::<f64>()
            / val.len() as f64;
        let set = ScoredSet::new(s, val_labels.clone())?;
        records.push(EpochRecord {
            phase: phase.number(),
            epoch,
            train_loss,
            val_loss,
            val_auroc: auroc(&set).ok(),
            val_auprc: auprc(&set).ok(),
            val_accuracy: accuracy(&set, DEFAULT_THRESHOLD)?,
        });

        if val_loss < best.0 {
            best = (val_loss, epoch, params.detached());
            wait = 0;
        } else {
            wait += 1;
            if wait >= cfg.patience {
                break;
            }
        }
    }

    let (best_val_loss, best_epoch, best_params) = best;
    if best_epoch == 0 {
        return Err(Error::contract(format!(
            "phase {} never produced a finite validation loss",
            phase.number()
        )));
    }
    *params = best_params;
    Ok(PhaseOutcome {
        summary: PhaseSummary {
            phase: phase.number(),
            best_epoch,
            best_val_loss,
            epochs_run: records.len(),
        },
        records,
        adam,
    })
}

fn require_seq(params: &ModelParams) -> Result<()> {
    if !params.arch.has_seq_module() {
        return Err(Error::contract(format!("{} has no SEQ module to pre-train", params.arch)));
    }
    Ok(())
}

/// Trains the SEQ module through the auxiliary head; other layers are frozen.
pub fn phase1(params: &mut ModelParams, train: &[&Sample], val: &[&Sample], cfg: &TrainConfig) -> Result<PhaseOutcome> {
    require_seq(params)?;
    if !params.has_aux_head() {
        return Err(Error::contract("phase 1 needs the auxiliary head"));
    }
    run_phase(params, Phase::Pretrain, train, val, cfg)
}

/// Drops the auxiliary head, freezes the SEQ module and trains the rest.
pub fn phase2(params: &mut ModelParams, train: &[&Sample], val: &[&Sample], cfg: &TrainConfig) -> Result<PhaseOutcome> {
    require_seq(params)?;
    params.remove_aux_head();
    run_phase(params, Phase::Fusion, train, val, cfg)
}

/// End-to-end fine-tuning at `lr_phase3`.
pub fn phase3(params: &mut ModelParams, train: &[&Sample], val: &[&Sample], cfg: &TrainConfig) -> Result<PhaseOutcome> {
    require_seq(params)?;
    if params.has_aux_head() {
        return Err(Error::contract("the auxiliary head must be removed before phase 3"));
    }
    run_phase(params, Phase::FineTune, train, val, cfg)
}

fn collect(history: &mut TrainHistory, o: PhaseOutcome) {
    history.records.extend(o.records);
    history.phases.push(o.summary);
}

pub fn train_three_phase(
    mut params: ModelParams,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    let mut history = TrainHistory::default();
    collect(&mut history, phase1(&mut params, train, val, cfg)?);
    collect(&mut history, phase2(&mut params, train, val, cfg)?);
    collect(&mut history, phase3(&mut params, train, val, cfg)?);
    Ok((params, history))
}

pub fn train_single_phase(
    mut params: ModelParams,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    let mut history = TrainHistory::default();
    collect(&mut history, run_phase(&mut params, Phase::Single, train, val, cfg)?);
    Ok((params, history))
}

/// Initializes from `init_seed` and runs the schedule that fits `arch`.
pub fn train(
    arch: Architecture,
    model_cfg: &ModelConfig,
    train: &[&Sample],
    val: &[&Sample],
    cfg: &TrainConfig,
    init_seed: u64,
) -> Result<(ModelParams, TrainHistory)> {
    let params = init_params(arch, model_cfg.clone(), init_seed)?;
    if arch.has_seq_module() {
        train_three_phase(params, train, val, cfg)
    } else {
        train_single_phase(params, train, val, cfg)
    }
}

pub(crate) fn fold_seed(seed: u64, fold: usize) -> u64 {
    mix_seed(seed, 100 + fold as u64)
}
