//! Teacher-model cascade simulator on Erdős–Rényi graphs.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::MessageInit;
use crate::curvature::{euclidean, user_curvatures};
use crate::data::{write_cascades, write_features, write_graph, Cascade, Event, SocialGraph};
use crate::encoder::CascadeRunner;
use crate::error::{Error, Result};
use crate::model::{init_params, Dims, DropoutCtx, ModelVars};
use crate::numerics::{ParamStore, Tape, Tensor};
use crate::objective::{GraphInputs, Prepared};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_users: usize,
    pub num_cascades: usize,
    pub seed: u64,
    pub mean_length: usize,
    pub feature_dim: usize,
    pub dim: usize,
    pub time_dim: usize,
    pub alpha: f64,
    /// Next user drawn with probability proportional to `exp(temperature * Ric)`.
    pub temperature: f64,
    /// Inter-arrival time is `time_scale * distance^distance_exponent`, where
    /// `distance` separates the new user from the message in the teacher's
    /// representation space.
    pub time_scale: f64,
    pub distance_exponent: f64,
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_users: 50,
            num_cascades: 200,
            seed: 0,
            mean_length: 8,
            feature_dim: 16,
            dim: 16,
            time_dim: 8,
            alpha: 0.5,
            temperature: 100.0,
            time_scale: 1.0,
            distance_exponent: 1.0,
            max_retries: 100,
        }
    }
}

pub struct Synthetic {
    pub graph: SocialGraph,
    pub cascades: Vec<Cascade>,
    pub teacher: ParamStore,
    pub config: SynthConfig,
}

fn erdos_renyi(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize)> {
    let p = (2.0 * (n as f64).ln() / n as f64).min(1.0);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((a, b));
            }
        }
    }
    edges
}

fn component_sizes(graph: &SocialGraph) -> Vec<usize> {
    let n = graph.num_users();
    let mut label = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        let mut queue = VecDeque::from([s]);
        label[s] = id;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in graph.neighbors(u) {
                if label[v] == usize::MAX {
                    label[v] = id;
                    queue.push_back(v);
                }
            }
        }
        sizes.push(size);
    }
    (0..n).map(|u| sizes[label[u]]).collect()
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn simulate(
    prep: &Prepared<'_, '_>,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
    root: usize,
    length: usize,
    id: String,
) -> Result<Cascade> {
    let mut events = vec![Event::new(root, 0.0)];
    let mut runner = CascadeRunner::new(prep.model, prep.h0, events[0], MessageInit::Root);
    let mut drop = DropoutCtx::eval();
    runner.advance(events[0], &mut drop)?;
    while events.len() < length {
        let g = &runner.graph.graph;
        let curv = user_curvatures(g, runner.state.full(), &prep.head, cfg.alpha, true).values.to_tensor();
        let candidates: Vec<usize> = (0..g.num_users()).filter(|&u| !g.is_infected(u)).collect();
        let peak = candidates.iter().map(|&u| curv.data()[u]).fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = candidates.iter().map(|&u| (cfg.temperature * (curv.data()[u] - peak)).exp()).collect();
        let user = candidates[sample_index(rng, &weights)];
        let dist = euclidean(runner.state.user(user).to_tensor().data(), runner.state.message.to_tensor().data());
        let jitter = rng.gen_range(0.8..1.2);
        let time = events.last().map_or(0.0, |e| e.time) + cfg.time_scale * dist.max(1e-3).powf(cfg.distance_exponent) * jitter;
        let event = Event::new(user, time);
        runner.advance(event, &mut drop)?;
        events.push(event);
    }
    Cascade::new(id, events)
}

/// Samples a graph, random features, a teacher model and cascades.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.num_users < 5 {
        return Err(Error::validation("synthetic data needs at least 5 users"));
    }
    if cfg.mean_length < 2 {
        return Err(Error::validation("mean cascade length must be at least 2"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.num_users;
    let edges = erdos_renyi(&mut rng, n);
    let features = Tensor::matrix(n, cfg.feature_dim, (0..n * cfg.feature_dim).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let graph = SocialGraph::new(n, edges, Some(features))?;
    let teacher = init_params(Dims { features: cfg.feature_dim, dim: cfg.dim, time_dim: cfg.time_dim }, rng.gen())?;
    let sizes = component_sizes(&graph);

    let inputs = GraphInputs::new(&graph);
    let tape = Tape::no_grad();
    let model = ModelVars::bind(&tape, &teacher)?;
    let prep = Prepared::new(&model, &inputs);

    let half = cfg.mean_length / 2;
    let mut cascades = Vec::with_capacity(cfg.num_cascades);
    for c in 0..cfg.num_cascades {
        let length = rng.gen_range(cfg.mean_length - half..=cfg.mean_length + half).clamp(2, n);
        let mut root = None;
        for _ in 0..=cfg.max_retries {
            let r = rng.gen_range(0..n);
            if sizes[r] >= length {
                root = Some(r);
                break;
            }
        }
        let root = root.ok_or_else(|| {
            Error::validation(format!("no root with a component of {length} users after {} retries", cfg.max_retries))
        })?;
        cascades.push(simulate(&prep, cfg, &mut rng, root, length, format!("c{c:05}"))?);
    }
    Ok(Synthetic { graph, cascades, teacher, config: cfg.clone() })
}

/// Writes `graph.tsv`, `features.tsv`, `cascades.tsv`, `teacher.ckpt` and
/// `synth.json` into `dir`.
pub fn write_dataset(dir: &Path, data: &Synthetic) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_graph(BufWriter::new(File::create(dir.join("graph.tsv"))?), &data.graph)?;
    write_features(BufWriter::new(File::create(dir.join("features.tsv"))?), data.graph.features())?;
    write_cascades(BufWriter::new(File::create(dir.join("cascades.tsv"))?), &data.cascades)?;
    data.teacher.write_checkpoint(BufWriter::new(File::create(dir.join("teacher.ckpt"))?))?;
    let json = serde_json::to_string_pretty(&data.config).expect("config serialises");
    fs::write(dir.join("synth.json"), json)?;
    Ok(())
}
