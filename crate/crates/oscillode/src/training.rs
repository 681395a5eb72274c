//! Loss functions over sampled records and the mini-batch training loop.
//!
//! The classical loss ties the slow-fast composition to the reference target
//! and pins the two phase maps as approximate inverses of each other; the
//! autonomous loss swaps the second part for a flow-commutativity penalty.

use crate::datagen::{Dataset, SampleRecord};
use crate::error::{Error, Result};
use crate::integrators::{MethodKind, OneStepMethod};
use crate::linalg;
use crate::neuralnet::{
    load_checkpoint, save_checkpoint, Checkpoint, NetMode, OptimizerState, PhaseSign,
    StructuredGrads, StructuredNetSet,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub method: OneStepMethod,
    pub mode: NetMode,
    pub seed: u64,
    /// Last-epoch checkpoint; a best-by-test sibling gets a `best.json`
    /// extension.
    pub checkpoint_path: Option<PathBuf>,
    pub loss_csv_path: Option<PathBuf>,
    /// Continue a run from its last-epoch checkpoint.
    pub resume_from: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.batch_size == 0 {
            problems.push("batch size must be at least 1".to_string());
        }
        if self.epochs == 0 {
            problems.push("epoch count must be at least 1".to_string());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            problems.push(format!("learning rate {} is invalid", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            problems.push(format!("weight decay {} is invalid", self.weight_decay));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LossReport {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    pub seconds: Vec<f64>,
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Forward pass of the per-record classical loss terms.
fn classical_record_terms(
    model: &StructuredNetSet,
    r: &SampleRecord,
    method: &OneStepMethod,
) -> Result<f64> {
    let tau0 = r.t0 / r.eps;
    let tau1 = (r.t0 + r.h) / r.eps;

    let z0 = model.phase_map(PhaseSign::Minus, tau0, &r.y0, r.eps)?;
    let mid = match method.kind {
        MethodKind::ForwardEuler => z0.clone(),
        // the scheme is scored at the average of the transformed endpoints,
        // so no nonlinear solve appears in the loss
        MethodKind::Midpoint => {
            let z1_target = model.phase_map(PhaseSign::Minus, tau1, &r.y1, r.eps)?;
            z0.iter().zip(&z1_target).map(|(a, b)| (a + b) / 2.0).collect()
        }
    };
    let z1 = linalg::axpy(&z0, r.h, &model.averaged_field(&mid, r.h, r.eps)?);
    let y1_hat = model.phase_map(PhaseSign::Plus, tau1, &z1, r.eps)?;
    let term_a = sq_norm(&linalg::sub(&y1_hat, &r.y1));

    let enc = model.phase_map(PhaseSign::Minus, tau0, &r.y0, r.eps)?;
    let term_b = sq_norm(&linalg::sub(
        &model.phase_map(PhaseSign::Plus, tau0, &enc, r.eps)?,
        &r.y0,
    ));
    let dec = model.phase_map(PhaseSign::Plus, tau0, &r.y0, r.eps)?;
    let term_c = sq_norm(&linalg::sub(
        &model.phase_map(PhaseSign::Minus, tau0, &dec, r.eps)?,
        &r.y0,
    ));
    Ok(term_a + term_b + term_c)
}

/// Reverse-mode gradient of the same terms; `weight` is the contribution
/// factor of this record in the batch mean.
fn classical_record_grad(
    model: &StructuredNetSet,
    r: &SampleRecord,
    method: &OneStepMethod,
    weight: f64,
    grads: &mut StructuredGrads,
) -> Result<f64> {
    let tau0 = r.t0 / r.eps;
    let tau1 = (r.t0 + r.h) / r.eps;

    // term (a), forward
    let z0 = model.phase_map(PhaseSign::Minus, tau0, &r.y0, r.eps)?;
    let (mid, midpoint_split) = match method.kind {
        MethodKind::ForwardEuler => (z0.clone(), false),
        MethodKind::Midpoint => {
            let z1_target = model.phase_map(PhaseSign::Minus, tau1, &r.y1, r.eps)?;
            let mid = z0
                .iter()
                .zip(&z1_target)
                .map(|(a, b): (&f64, &f64)| (a + b) / 2.0)
                .collect();
            (mid, true)
        }
    };
    let z1 = linalg::axpy(&z0, r.h, &model.averaged_field(&mid, r.h, r.eps)?);
    let y1_hat = model.phase_map(PhaseSign::Plus, tau1, &z1, r.eps)?;
    let residual = linalg::sub(&y1_hat, &r.y1);
    let mut loss = sq_norm(&residual);

    // term (a), reverse
    let upstream: Vec<f64> = residual.iter().map(|x| 2.0 * weight * x).collect();
    let dz1 = model.phase_map_vjp(PhaseSign::Plus, tau1, &z1, r.eps, &upstream, grads)?;
    let mut dz0 = dz1.clone();
    let scaled: Vec<f64> = dz1.iter().map(|u| r.h * u).collect();
    let dmid = model.averaged_field_vjp(&mid, r.h, r.eps, &scaled, grads)?;
    if midpoint_split {
        for (a, b) in dz0.iter_mut().zip(&dmid) {
            *a += b / 2.0;
        }
        // the other half flows into the minus map evaluated at the target
        let half: Vec<f64> = dmid.iter().map(|u| u / 2.0).collect();
        model.phase_map_vjp(PhaseSign::Minus, tau1, &r.y1, r.eps, &half, grads)?;
    } else {
        for (a, b) in dz0.iter_mut().zip(&dmid) {
            *a += b;
        }
    }
    model.phase_map_vjp(PhaseSign::Minus, tau0, &r.y0, r.eps, &dz0, grads)?;

    // term (b): plus after minus should reproduce y0
    let enc = model.phase_map(PhaseSign::Minus, tau0, &r.y0, r.eps)?;
    let rec = model.phase_map(PhaseSign::Plus, tau0, &enc, r.eps)?;
    let res_b = linalg::sub(&rec, &r.y0);
    loss += sq_norm(&res_b);
    let up_b: Vec<f64> = res_b.iter().map(|x| 2.0 * weight * x).collect();
    let denc = model.phase_map_vjp(PhaseSign::Plus, tau0, &enc, r.eps, &up_b, grads)?;
    model.phase_map_vjp(PhaseSign::Minus, tau0, &r.y0, r.eps, &denc, grads)?;

    // term (c): minus after plus
    let dec = model.phase_map(PhaseSign::Plus, tau0, &r.y0, r.eps)?;
    let rec = model.phase_map(PhaseSign::Minus, tau0, &dec, r.eps)?;
    let res_c = linalg::sub(&rec, &r.y0);
    loss += sq_norm(&res_c);
    let up_c: Vec<f64> = res_c.iter().map(|x| 2.0 * weight * x).collect();
    let ddec = model.phase_map_vjp(PhaseSign::Minus, tau0, &dec, r.eps, &up_c, grads)?;
    model.phase_map_vjp(PhaseSign::Plus, tau0, &r.y0, r.eps, &ddec, grads)?;

    Ok(loss)
}

fn autonomous_record_terms(model: &StructuredNetSet, r: &SampleRecord) -> Result<f64> {
    let tau = r.h / r.eps;
    let macro_first = model.auto_phase_map(tau, &model.flow_map(&r.y0, r.h, r.eps)?, r.eps)?;
    let term_a = sq_norm(&linalg::sub(&r.y1, &macro_first));
    let phase_first = model.flow_map(&model.auto_phase_map(tau, &r.y0, r.eps)?, r.h, r.eps)?;
    let term_b = sq_norm(&linalg::sub(&macro_first, &phase_first));
    Ok(term_a + term_b)
}

fn autonomous_record_grad(
    model: &StructuredNetSet,
    r: &SampleRecord,
    weight: f64,
    grads: &mut StructuredGrads,
) -> Result<f64> {
    let tau = r.h / r.eps;

    let flowed = model.flow_map(&r.y0, r.h, r.eps)?;
    let macro_first = model.auto_phase_map(tau, &flowed, r.eps)?;
    let phased = model.auto_phase_map(tau, &r.y0, r.eps)?;
    let phase_first = model.flow_map(&phased, r.h, r.eps)?;

    let res_a = linalg::sub(&macro_first, &r.y1);
    let res_b = linalg::sub(&macro_first, &phase_first);
    let loss = sq_norm(&res_a) + sq_norm(&res_b);

    // macro_first feeds both terms
    let up_mf: Vec<f64> = res_a
        .iter()
        .zip(&res_b)
        .map(|(a, b)| 2.0 * weight * (a + b))
        .collect();
    let dflowed = model.auto_phase_map_vjp(tau, &flowed, r.eps, &up_mf, grads)?;
    model.flow_map_vjp(&r.y0, r.h, r.eps, &dflowed, grads)?;

    let up_pf: Vec<f64> = res_b.iter().map(|b| -2.0 * weight * b).collect();
    let dphased = model.flow_map_vjp(&phased, r.h, r.eps, &up_pf, grads)?;
    model.auto_phase_map_vjp(tau, &r.y0, r.eps, &dphased, grads)?;

    Ok(loss)
}

/// Mean classical loss over a batch.
pub fn classical_loss(
    model: &StructuredNetSet,
    batch: &[SampleRecord],
    method: &OneStepMethod,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let terms = batch
        .par_iter()
        .map(|r| classical_record_terms(model, r, method))
        .collect::<Result<Vec<_>>>()?;
    Ok(terms.iter().sum::<f64>() / batch.len() as f64)
}

/// Mean classical loss plus its gradient with respect to all parameters.
pub fn classical_loss_grad(
    model: &StructuredNetSet,
    batch: &[SampleRecord],
    method: &OneStepMethod,
) -> Result<(f64, StructuredGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|r| {
            let mut g = StructuredGrads::zeros_like(model);
            let loss = classical_record_grad(model, r, method, weight, &mut g)?;
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_parts(model, parts, weight))
}

/// Mean autonomous loss over a batch.
pub fn autonomous_loss(model: &StructuredNetSet, batch: &[SampleRecord]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let terms = batch
        .par_iter()
        .map(|r| autonomous_record_terms(model, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(terms.iter().sum::<f64>() / batch.len() as f64)
}

pub fn autonomous_loss_grad(
    model: &StructuredNetSet,
    batch: &[SampleRecord],
) -> Result<(f64, StructuredGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let weight = 1.0 / batch.len() as f64;
    let parts = batch
        .par_iter()
        .map(|r| {
            let mut g = StructuredGrads::zeros_like(model);
            let loss = autonomous_record_grad(model, r, weight, &mut g)?;
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_parts(model, parts, weight))
}

/// Deterministic fixed-index-order reduction of per-record contributions.
fn reduce_parts(
    model: &StructuredNetSet,
    parts: Vec<(f64, StructuredGrads)>,
    weight: f64,
) -> (f64, StructuredGrads) {
    let mut total = StructuredGrads::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.accumulate(g);
    }
    (loss * weight, total)
}

fn batch_loss_grad(
    model: &StructuredNetSet,
    batch: &[SampleRecord],
    cfg: &TrainConfig,
) -> Result<(f64, StructuredGrads)> {
    match cfg.mode {
        NetMode::Classical => classical_loss_grad(model, batch, &cfg.method),
        NetMode::Autonomous => autonomous_loss_grad(model, batch),
    }
}

fn full_loss(model: &StructuredNetSet, records: &[SampleRecord], cfg: &TrainConfig) -> Result<f64> {
    match cfg.mode {
        NetMode::Classical => classical_loss(model, records, &cfg.method),
        NetMode::Autonomous => autonomous_loss(model, records),
    }
}

fn best_sibling(path: &Path) -> PathBuf {
    path.with_extension("best.json")
}

/// Mini-batch gradient descent over the training split; returns the trained
/// model and the per-epoch loss history.
pub fn train(
    mut model: StructuredNetSet,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(StructuredNetSet, LossReport)> {
    cfg.validate()?;
    if model.mode != cfg.mode {
        return Err(Error::ModeMismatch(format!(
            "training mode {} but model is {}",
            cfg.mode.name(),
            model.mode.name()
        )));
    }
    if dataset.train_records().is_empty() || dataset.test_records().is_empty() {
        return Err(Error::InvalidArgument(
            "dataset must contain both training and held-out records".into(),
        ));
    }

    let mut optimizer = OptimizerState::new(model.num_params(), cfg.learning_rate, cfg.weight_decay);
    let mut start_epoch = 0usize;
    if let Some(resume) = &cfg.resume_from {
        let ckpt = load_checkpoint(resume)?;
        model = ckpt.to_model()?;
        if let Some(opt) = ckpt.optimizer {
            optimizer = opt;
        }
        start_epoch = ckpt.epoch;
    }

    let mut report = LossReport::default();
    let mut best_test = f64::INFINITY;
    let mut csv = String::from("epoch,loss_train,loss_test,seconds\n");

    // fresh runs record the initial model as epoch 0 so the history shows
    // the full decay from initialization
    if start_epoch == 0 {
        let clock = Instant::now();
        let loss_train = full_loss(&model, dataset.train_records(), cfg)?;
        let loss_test = full_loss(&model, dataset.test_records(), cfg)?;
        let seconds = clock.elapsed().as_secs_f64();
        report.train.push(loss_train);
        report.test.push(loss_test);
        report.seconds.push(seconds);
        csv.push_str(&format!("0,{loss_train:.16e},{loss_test:.16e},{seconds:.3}\n"));
    }

    for epoch in start_epoch..cfg.epochs {
        let clock = Instant::now();

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..dataset.train_records().len()).collect();
        order.shuffle(&mut rng);

        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<SampleRecord> = chunk
                .iter()
                .map(|&i| dataset.train_records()[i].clone())
                .collect();
            let (loss, grads) = batch_loss_grad(&model, &batch, cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_index,
                });
            }
            let mut params = model.to_flat();
            optimizer.step(&mut params, &grads.to_flat())?;
            model.set_from_flat(&params)?;
        }
        // evaluated over the whole split in fixed record order, like the
        // test loss, so the history is independent of batch partitioning
        let loss_train = full_loss(&model, dataset.train_records(), cfg)?;
        let loss_test = full_loss(&model, dataset.test_records(), cfg)?;
        let seconds = clock.elapsed().as_secs_f64();

        report.train.push(loss_train);
        report.test.push(loss_test);
        report.seconds.push(seconds);
        csv.push_str(&format!(
            "{},{loss_train:.16e},{loss_test:.16e},{seconds:.3}\n",
            epoch + 1
        ));

        if let Some(path) = &cfg.checkpoint_path {
            let ckpt = Checkpoint::from_model(
                &model,
                epoch + 1,
                loss_train,
                loss_test,
                Some(optimizer.clone()),
            );
            save_checkpoint(path, &ckpt)?;
            if loss_test < best_test {
                best_test = loss_test;
                save_checkpoint(&best_sibling(path), &ckpt)?;
            }
        }
    }

    if let Some(path) = &cfg.loss_csv_path {
        std::fs::write(path, csv)?;
    }

    Ok((model, report))
}
