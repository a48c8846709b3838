use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::data::{Cascade, SocialGraph};
use crate::error::{Error, Result};
use crate::model::{init_params, project_head, Dims, DropoutCtx, ModelVars};
use crate::numerics::{ParamStore, Tape, Tensor};
use crate::objective::{batch_loss, cascade_terms, GraphInputs, Prepared};

/// Mean per-infection losses.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LossValues {
    pub ricci: f64,
    pub ode: f64,
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossValues,
    pub val: Option<LossValues>,
}

pub struct TrainOutput {
    /// Parameters from the epoch with the lowest validation loss, or the
    /// last epoch when there is no validation set.
    pub params: ParamStore,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
}

fn check_users(graph: &SocialGraph, cascades: &[Cascade]) -> Result<()> {
    cascades.iter().try_for_each(|c| c.check_users(graph.num_users()))
}

fn dropout_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Evaluation-mode losses, averaged over all infections in `cascades`.
pub fn evaluate_loss(store: &ParamStore, inputs: &GraphInputs, cascades: &[Cascade], config: &RunConfig) -> Result<LossValues> {
    let tape = Tape::no_grad();
    let model = ModelVars::bind(&tape, store)?;
    let prep = Prepared::new(&model, inputs);
    let loss = batch_loss(&prep, cascades, config, &mut DropoutCtx::eval())?;
    Ok(LossValues { ricci: loss.ricci.item(), ode: loss.ode.item(), joint: loss.joint.item() })
}

struct CascadeGrad {
    ricci: f64,
    ode: f64,
    grads: BTreeMap<String, Tensor>,
}

fn cascade_gradient(
    store: &ParamStore,
    inputs: &GraphInputs,
    cascade: &Cascade,
    config: &RunConfig,
    norm: f64,
    seed: u64,
) -> Result<CascadeGrad> {
    let tape = Tape::new();
    let model = ModelVars::bind(&tape, store)?;
    let prep = Prepared::new(&model, inputs);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drop = DropoutCtx { rate: config.dropout, rng: Some(&mut rng) };
    let terms = cascade_terms(&prep, cascade, config, &mut drop)?;
    let loss = terms.ricci.add(terms.ode.scale(config.lambda_ode)).scale(norm);
    let grads = tape.backward(loss)?.by_name();
    Ok(CascadeGrad { ricci: terms.ricci.item() * norm, ode: terms.ode.item() * norm, grads })
}

/// Full-batch training: one optimizer step per epoch over all training
/// cascades, followed by projection of the curvature head.
pub fn train(
    config: &RunConfig,
    graph: &SocialGraph,
    train_set: &[Cascade],
    val_set: &[Cascade],
    init: Option<ParamStore>,
) -> Result<TrainOutput> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::validation("training needs at least one cascade"));
    }
    check_users(graph, train_set)?;
    check_users(graph, val_set)?;
    let dims = Dims { features: graph.feature_dim(), dim: config.dim, time_dim: config.time_dim };
    let mut params = match init {
        Some(p) => {
            let found = Dims::from_params(&p)?;
            if found != dims {
                return Err(Error::validation(format!("checkpoint dimensions {found:?} do not match {dims:?}")));
            }
            p
        }
        None => init_params(dims, config.seed)?,
    };
    let inputs = GraphInputs::new(graph);
    let events: usize = train_set.iter().map(Cascade::len).sum();
    let norm = 1.0 / events as f64;

    let mut log = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    for epoch in 1..=config.epochs {
        let results: Vec<Result<CascadeGrad>> = train_set
            .par_iter()
            .enumerate()
            .map(|(i, c)| cascade_gradient(&params, &inputs, c, config, norm, dropout_seed(config.seed, epoch, i)))
            .collect();
        let mut ricci = 0.0;
        let mut ode = 0.0;
        let mut total: BTreeMap<String, Tensor> = BTreeMap::new();
        for r in results {
            let g = r?;
            ricci += g.ricci;
            ode += g.ode;
            for (name, grad) in g.grads {
                match total.get_mut(&name) {
                    Some(acc) => acc.add_assign(&grad),
                    None => {
                        total.insert(name, grad);
                    }
                }
            }
        }
        if let Some((name, _)) = total.iter().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Divergence(format!("epoch {epoch}: non-finite gradient for {name}")));
        }
        params.optimizer_step(&total, config.lr)?;
        project_head(&mut params);

        let train_loss = LossValues { ricci, ode, joint: ricci + config.lambda_ode * ode };
        let val = if !val_set.is_empty() && (epoch % config.val_every == 0 || epoch == config.epochs) {
            Some(evaluate_loss(&params, &inputs, val_set, config)?)
        } else {
            None
        };
        log::info!(
            "epoch {epoch}: ricci {:.5} ode {:.5} joint {:.5}{}",
            train_loss.ricci,
            train_loss.ode,
            train_loss.joint,
            val.map(|v| format!(" val {:.5}", v.joint)).unwrap_or_default()
        );
        if let Some(v) = val {
            if best.as_ref().map_or(true, |(b, _, _)| v.joint < *b) {
                best = Some((v.joint, epoch, params.clone()));
            }
        }
        log.push(EpochLog { epoch, train: train_loss, val });
    }
    Ok(match best {
        Some((_, epoch, p)) => TrainOutput { params: p, log, best_epoch: Some(epoch) },
        None => TrainOutput { params, log, best_epoch: None },
    })
}
