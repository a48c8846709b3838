//! Per-cascade forward pass and the two training losses.

use crate::config::RunConfig;
use crate::curvature::{infection_log_prob, user_curvatures, LipschitzHead};
use crate::data::{Cascade, SocialGraph};
use crate::dynamics::{trajectory_sq_error, TimeScale, VelocityNet};
use crate::encoder::{initial_embeddings, CascadeRunner};
use crate::error::{Error, Result};
use crate::model::{DropoutCtx, ModelVars};
use crate::numerics::{Tensor, Var};

/// Graph-derived constants shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub num_users: usize,
    /// `Â X`
    pub propagated: Tensor,
}

impl GraphInputs {
    pub fn new(graph: &SocialGraph) -> Self {
        GraphInputs { num_users: graph.num_users(), propagated: graph.propagated_features() }
    }
}

/// Tape-level quantities computed once per forward pass.
pub struct Prepared<'m, 't> {
    pub model: &'m ModelVars<'t>,
    pub h0: Var<'t>,
    pub net: VelocityNet<'m, 't>,
    pub head: LipschitzHead<'t>,
}

impl<'m, 't> Prepared<'m, 't> {
    pub fn new(model: &'m ModelVars<'t>, inputs: &GraphInputs) -> Self {
        Prepared {
            model,
            h0: initial_embeddings(model, &inputs.propagated),
            net: VelocityNet::new(model, &inputs.propagated),
            head: LipschitzHead { weight: model.head_weight, bias: model.head_bias },
        }
    }
}

/// Unnormalised loss sums for one cascade.
pub struct CascadeTerms<'t> {
    /// `-sum_k log p(u^k)` with snapshot `k-1` predicting infection `k`.
    pub ricci: Var<'t>,
    /// `sum_k |phi(u^k, t_sys^k) - h_{u^k}^k|^2`.
    pub ode: Var<'t>,
    pub events: usize,
    /// Curvature evaluations whose coordinate distance was floored.
    pub floored: usize,
}

pub fn cascade_terms<'t>(
    prep: &Prepared<'_, 't>,
    cascade: &Cascade,
    config: &RunConfig,
    drop: &mut DropoutCtx<'_>,
) -> Result<CascadeTerms<'t>> {
    let events = cascade.events();
    let first = *events.first().ok_or_else(|| Error::contract("empty cascade"))?;
    let tape = prep.model.tape;
    let scale = TimeScale::of_cascade(cascade, config.rescale)?;
    let mut runner = CascadeRunner::new(prep.model, prep.h0, first, config.m0);
    let mut log_probs = Vec::with_capacity(events.len());
    let mut targets = Vec::with_capacity(events.len());
    let mut floored = 0;
    for (k, &event) in events.iter().enumerate() {
        let curv = user_curvatures(&runner.graph.graph, runner.state.full(), &prep.head, config.alpha, config.clamp_negative_w);
        floored += curv.floored;
        let lp = infection_log_prob(curv.values, runner.graph.graph.infected(), event.user)?;
        if !lp.item().is_finite() {
            return Err(Error::Divergence(format!(
                "cascade {}: non-finite likelihood at step {}",
                cascade.message_id(),
                k + 1
            )));
        }
        log_probs.push(lp);
        runner.advance(event, drop)?;
        targets.push(runner.state.user(event.user));
    }
    let ricci = tape.stack_rows(&log_probs).sum().neg();

    let users: Vec<usize> = events.iter().map(|e| e.user).collect();
    let initial: Vec<Var<'t>> = users.iter().map(|&u| runner.initial_position(u).expect("advanced at least once")).collect();
    let ends: Vec<f64> = events.iter().map(|e| scale.to_sys(e.time)).collect();
    let ode = trajectory_sq_error(
        &prep.net,
        &users,
        tape.stack_rows(&initial),
        &ends,
        tape.stack_rows(&targets),
        config.solver_steps,
        drop,
    )?;
    if !ode.item().is_finite() {
        return Err(Error::Divergence(format!("cascade {}: non-finite trajectory loss", cascade.message_id())));
    }
    Ok(CascadeTerms { ricci, ode, events: events.len(), floored })
}

/// Batch losses normalised by the total number of infections.
pub struct BatchLoss<'t> {
    pub ricci: Var<'t>,
    pub ode: Var<'t>,
    /// `ricci + lambda_ode * ode`
    pub joint: Var<'t>,
    pub events: usize,
}

pub fn batch_loss<'t>(
    prep: &Prepared<'_, 't>,
    cascades: &[Cascade],
    config: &RunConfig,
    drop: &mut DropoutCtx<'_>,
) -> Result<BatchLoss<'t>> {
    if cascades.is_empty() {
        return Err(Error::contract("loss over an empty batch"));
    }
    let tape = prep.model.tape;
    let mut ricci = Vec::with_capacity(cascades.len());
    let mut ode = Vec::with_capacity(cascades.len());
    let mut events = 0;
    for c in cascades {
        let terms = cascade_terms(prep, c, config, drop)?;
        ricci.push(terms.ricci);
        ode.push(terms.ode);
        events += terms.events;
    }
    let norm = 1.0 / events as f64;
    let ricci = tape.stack_rows(&ricci).sum().scale(norm);
    let ode = tape.stack_rows(&ode).sum().scale(norm);
    let joint = ricci.add(ode.scale(config.lambda_ode));
    Ok(BatchLoss { ricci, ode, joint, events })
}

/// Curvature likelihood loss over a batch.
pub fn ricci_loss<'t>(prep: &Prepared<'_, 't>, cascades: &[Cascade], config: &RunConfig) -> Result<Var<'t>> {
    Ok(batch_loss(prep, cascades, config, &mut DropoutCtx::eval())?.ricci)
}

/// Trajectory mean squared error over a batch.
pub fn ode_loss<'t>(prep: &Prepared<'_, 't>, cascades: &[Cascade], config: &RunConfig) -> Result<Var<'t>> {
    Ok(batch_loss(prep, cascades, config, &mut DropoutCtx::eval())?.ode)
}
