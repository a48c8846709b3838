use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::curvature::{rank_candidates, user_curvatures};
use crate::data::{Cascade, SocialGraph};
use crate::dynamics::{predict_infection_time, TimeScale};
use crate::encoder::CascadeRunner;
use crate::error::{Error, Result};
use crate::harness::metrics::{hits_at, map_at, rmse};
use crate::model::{DropoutCtx, ModelVars};
use crate::numerics::{ParamStore, Tape};
use crate::objective::{GraphInputs, Prepared};

/// Candidate ranking produced from the snapshot after `step` infections.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRanking {
    pub step: usize,
    /// The user actually infected next, when known.
    pub target: Option<usize>,
    /// Uninfected users by descending curvature.
    pub ranked: Vec<(usize, f64)>,
}

impl StepRanking {
    /// 1-based position of the true next user.
    pub fn rank(&self) -> Option<usize> {
        let t = self.target?;
        self.ranked.iter().position(|&(u, _)| u == t).map(|p| p + 1)
    }
}

/// Rankings for every snapshot `k >= 1` of `cascade`. With `include_last` the
/// snapshot after the final event is ranked too, with no target.
pub fn next_user_rankings(
    prep: &Prepared<'_, '_>,
    cascade: &Cascade,
    config: &RunConfig,
    include_last: bool,
) -> Result<Vec<StepRanking>> {
    let events = cascade.events();
    let first = *events.first().ok_or_else(|| Error::contract("empty cascade"))?;
    let mut runner = CascadeRunner::new(prep.model, prep.h0, first, config.m0);
    let mut drop = DropoutCtx::eval();
    let mut out = Vec::new();
    for (k, &event) in events.iter().enumerate() {
        runner.advance(event, &mut drop)?;
        let target = events.get(k + 1).map(|e| e.user);
        if target.is_none() && !include_last {
            break;
        }
        let g = &runner.graph.graph;
        if g.infected().len() == g.num_users() {
            break;
        }
        let curv = user_curvatures(g, runner.state.full(), &prep.head, config.alpha, config.clamp_negative_w);
        let scores = curv.values.to_tensor();
        out.push(StepRanking { step: k + 1, target, ranked: rank_candidates(scores.data(), g.infected()) });
    }
    Ok(out)
}

/// One held-out infection-time prediction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimePair {
    pub message_id: String,
    /// Position after the revealed prefix, starting at 1.
    pub offset: usize,
    pub user: usize,
    pub truth: f64,
    pub predicted: f64,
    pub truth_wall: f64,
    pub predicted_wall: f64,
}

/// Reveals the first `ceil(L/2)` events and predicts the times of the rest.
pub fn cascade_time_pairs(prep: &Prepared<'_, '_>, cascade: &Cascade, config: &RunConfig) -> Result<Vec<TimePair>> {
    let events = cascade.events();
    let prefix = events.len().div_ceil(2);
    if prefix == 0 || prefix >= events.len() {
        return Ok(Vec::new());
    }
    let scale = TimeScale::of_cascade(cascade, config.rescale)?;
    let mut runner = CascadeRunner::new(prep.model, prep.h0, events[0], config.m0);
    let mut drop = DropoutCtx::eval();
    for &e in &events[..prefix] {
        runner.advance(e, &mut drop)?;
    }
    let message = runner.state.message.to_tensor();
    let t_now = scale.to_sys(events[prefix - 1].time);
    events[prefix..]
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let initial = runner.initial_position(e.user).ok_or_else(|| Error::contract("prefix not advanced"))?;
            let p = predict_infection_time(
                &prep.net,
                e.user,
                initial,
                message.data(),
                t_now,
                scale,
                config.grid,
                config.solver_steps,
                config.encounter,
            )?;
            Ok(TimePair {
                message_id: cascade.message_id().to_string(),
                offset: j + 1,
                user: e.user,
                truth: scale.to_sys(e.time),
                predicted: p.t_sys,
                truth_wall: e.time,
                predicted_wall: p.wall_clock,
            })
        })
        .collect()
}

fn per_cascade<T: Send>(
    store: &ParamStore,
    graph: &SocialGraph,
    cascades: &[Cascade],
    f: impl Fn(&Prepared<'_, '_>, &Cascade) -> Result<Vec<T>> + Sync,
) -> Result<Vec<T>> {
    let inputs = GraphInputs::new(graph);
    for c in cascades {
        c.check_users(graph.num_users())?;
    }
    let parts: Vec<Result<Vec<T>>> = cascades
        .par_iter()
        .map(|c| {
            let tape = Tape::no_grad();
            let model = ModelVars::bind(&tape, store)?;
            let prep = Prepared::new(&model, &inputs);
            f(&prep, c)
        })
        .collect();
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// 1-based ranks of the true next user over all test steps `k >= 1`.
pub fn evaluate_next_user(store: &ParamStore, graph: &SocialGraph, cascades: &[Cascade], config: &RunConfig) -> Result<Vec<usize>> {
    let steps = per_cascade(store, graph, cascades, |prep, c| next_user_rankings(prep, c, config, false))?;
    Ok(steps.iter().filter_map(StepRanking::rank).collect())
}

pub fn evaluate_infection_time(
    store: &ParamStore,
    graph: &SocialGraph,
    cascades: &[Cascade],
    config: &RunConfig,
) -> Result<Vec<TimePair>> {
    per_cascade(store, graph, cascades, |prep, c| cascade_time_pairs(prep, c, config))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub hits_at: BTreeMap<usize, f64>,
    pub map_at: BTreeMap<usize, f64>,
    /// In system time units unless `rmse_units` says `wallclock`.
    pub rmse: Option<f64>,
    pub rmse_units: &'static str,
    pub rmse_by_offset: BTreeMap<usize, f64>,
    pub ranking_steps: usize,
    pub time_pairs: usize,
    pub config: RunConfig,
    pub seed: u64,
}

impl EvalReport {
    pub fn from_parts(ranks: &[usize], pairs: &[TimePair], ks: &[usize], config: &RunConfig, wallclock: bool) -> Self {
        let pick = |p: &TimePair| if wallclock { (p.truth_wall, p.predicted_wall) } else { (p.truth, p.predicted) };
        let mut by_offset: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
        for p in pairs {
            by_offset.entry(p.offset).or_default().push(pick(p));
        }
        EvalReport {
            hits_at: ks.iter().map(|&k| (k, hits_at(ranks, k))).collect(),
            map_at: ks.iter().map(|&k| (k, map_at(ranks, k))).collect(),
            rmse: rmse(pairs.iter().map(pick)),
            rmse_units: if wallclock { "wallclock" } else { "system" },
            rmse_by_offset: by_offset.into_iter().filter_map(|(k, v)| rmse(v).map(|r| (k, r))).collect(),
            ranking_steps: ranks.len(),
            time_pairs: pairs.len(),
            config: config.clone(),
            seed: config.seed,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "next-user prediction ({} steps)", self.ranking_steps)?;
        writeln!(f, "  {:>6}  {:>8}  {:>8}", "K", "H@K", "M@K")?;
        for (k, h) in &self.hits_at {
            writeln!(f, "  {:>6}  {:>8.2}  {:>8.2}", k, h, self.map_at[k])?;
        }
        writeln!(f, "infection time ({} pairs)", self.time_pairs)?;
        let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "  rmse ({})  {}", self.rmse_units, show(self.rmse))?;
        for (k, r) in &self.rmse_by_offset {
            writeln!(f, "  future #{k:<3}  {r:.4}")?;
        }
        Ok(())
    }
}

/// Ranking and time evaluation over `cascades`.
pub fn evaluate(
    store: &ParamStore,
    graph: &SocialGraph,
    cascades: &[Cascade],
    ks: &[usize],
    config: &RunConfig,
    wallclock: bool,
) -> Result<EvalReport> {
    let ranks = evaluate_next_user(store, graph, cascades, config)?;
    let pairs = evaluate_infection_time(store, graph, cascades, config)?;
    Ok(EvalReport::from_parts(&ranks, &pairs, ks, config, wallclock))
}
