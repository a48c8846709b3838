#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rode_core::data::{Cascade, Event, NewLinks, SocialGraph, TemporalUMGraph};
use rode_core::model::{init_params, Dims, ModelVars};
use rode_core::numerics::gradcheck::rel_error;
use rode_core::numerics::{ParamStore, Tape, Tensor, Var};
use rode_core::objective::{GraphInputs, Prepared};
use rode_core::RunConfig;

/// Cascade graph over `n` users with a random subset infected in random order.
pub fn random_um_graph(rng: &mut ChaCha8Rng, n: usize) -> TemporalUMGraph {
    let mut g = TemporalUMGraph::new(n);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let infected = rng.gen_range(0..=n.saturating_sub(1));
    for (k, &u) in order.iter().take(infected).enumerate() {
        let links = NewLinks {
            message: rng.gen_range(0.01..0.99),
            users: (0..k).map(|_| rng.gen_range(0.01..0.99)).collect(),
        };
        g.grow(u, &links).unwrap();
    }
    g
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// A random vector whose Euclidean norm is at most one.
pub fn random_unit_ball(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let radius = rng.gen_range(0.0..=1.0);
    v.iter().map(|x| x * radius / norm).collect()
}

/// Six users, two cascades.
pub fn six_user_instance() -> (SocialGraph, Vec<Cascade>) {
    let graph = SocialGraph::new(6, [(0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 5), (1, 4)], None).unwrap();
    let cascades = vec![
        Cascade::new("a", vec![Event::new(0, 0.0), Event::new(2, 1.0), Event::new(4, 2.5), Event::new(1, 4.0)]).unwrap(),
        Cascade::new("b", vec![Event::new(3, 0.5), Event::new(5, 2.0), Event::new(0, 3.0)]).unwrap(),
    ];
    (graph, cascades)
}

pub fn small_config() -> RunConfig {
    RunConfig { dim: 4, time_dim: 3, solver_steps: 8, grid: 16, ..RunConfig::default() }
}

pub fn small_params(graph: &SocialGraph, config: &RunConfig, seed: u64) -> ParamStore {
    init_params(Dims { features: graph.feature_dim(), dim: config.dim, time_dim: config.time_dim }, seed).unwrap()
}

/// Worst relative error between reverse-mode and central-difference
/// gradients of `loss` over every scalar of every parameter.
pub fn param_gradcheck<F>(store: &ParamStore, inputs: &GraphInputs, h: f64, floor: f64, loss: F) -> (f64, String, usize, f64, f64)
where
    F: for<'m, 't> Fn(&Prepared<'m, 't>) -> Var<'t>,
{
    let tape = Tape::new();
    let model = ModelVars::bind(&tape, store).unwrap();
    let prep = Prepared::new(&model, inputs);
    let grads = tape.backward(loss(&prep)).unwrap().by_name();
    drop(prep);

    let eval = |s: &ParamStore| {
        let tape = Tape::no_grad();
        let model = ModelVars::bind(&tape, s).unwrap();
        let prep = Prepared::new(&model, inputs);
        loss(&prep).item()
    };
    let mut work = store.clone();
    let mut worst = (0.0, String::new(), 0, 0.0, 0.0);
    for (name, value) in store.iter() {
        for i in 0..value.len() {
            let orig = value.data()[i];
            work.get_mut(name).unwrap().data_mut()[i] = orig + h;
            let up = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig - h;
            let down = eval(&work);
            work.get_mut(name).unwrap().data_mut()[i] = orig;
            let (analytic, numeric) = (grads[name].data()[i], (up - down) / (2.0 * h));
            let err = rel_error(analytic, numeric, floor);
            if err > worst.0 {
                worst = (err, name.clone(), i, analytic, numeric);
            }
        }
    }
    worst
}
