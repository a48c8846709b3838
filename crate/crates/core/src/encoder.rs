//! System snapshots: initial graph convolution followed by attentive
//! recursive updates of user and message coordinates at each infection.

use std::collections::{BTreeMap, HashMap};

use crate::config::MessageInit;
use crate::data::{Event, NewLinks, TemporalUMGraph};
use crate::error::{Error, Result};
use crate::model::{DropoutCtx, Mlp, ModelVars};
use crate::numerics::{Tensor, Var};

/// `ReLU(Â X W)` given the precomputed propagation `Â X`.
pub fn initial_embeddings<'t>(model: &ModelVars<'t>, propagated: &Tensor) -> Var<'t> {
    model.tape.constant(propagated.clone()).matmul(model.gcn_weight).relu()
}

/// User and message coordinates after `step` infections.
///
/// Users whose rows were never updated share the step-0 matrix.
#[derive(Clone)]
pub struct EmbeddingState<'t> {
    pub step: usize,
    base: Var<'t>,
    updated: BTreeMap<usize, Var<'t>>,
    pub message: Var<'t>,
    pub time: f64,
}

impl<'t> EmbeddingState<'t> {
    /// Step-0 snapshot for a cascade whose first infected user is `root`.
    pub fn initial(h0: Var<'t>, root: usize, rule: MessageInit, time: f64) -> Self {
        let message = match rule {
            MessageInit::Root => h0.row(root),
            MessageInit::Mean => {
                let n = h0.rows();
                let ones = h0.tape().constant(Tensor::full(&[1, n], 1.0 / n as f64));
                ones.matmul(h0)
            }
        };
        EmbeddingState { step: 0, base: h0, updated: BTreeMap::new(), message, time }
    }

    pub fn num_users(&self) -> usize {
        self.base.rows()
    }

    pub fn dim(&self) -> usize {
        self.base.cols()
    }

    pub fn user(&self, i: usize) -> Var<'t> {
        self.updated.get(&i).copied().unwrap_or_else(|| self.base.row(i))
    }

    pub fn is_updated(&self, i: usize) -> bool {
        self.updated.contains_key(&i)
    }

    /// `N x d` user coordinates.
    pub fn users(&self) -> Var<'t> {
        if self.updated.is_empty() {
            return self.base;
        }
        let rows: Vec<(usize, Var<'t>)> = self.updated.iter().map(|(&i, &v)| (i, v)).collect();
        self.base.replace_rows(&rows)
    }

    /// `(N+1) x d` coordinates with the message in the last row.
    pub fn full(&self) -> Var<'t> {
        self.users().concat_rows(self.message)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.full().to_tensor()
    }
}

/// A temporal user-message graph together with the differentiable link
/// weights that built it.
#[derive(Clone)]
pub struct CascadeGraph<'t> {
    pub graph: TemporalUMGraph,
    message_weights: Vec<(Var<'t>, usize)>,
    user_weights: HashMap<(usize, usize), (Var<'t>, usize)>,
}

impl<'t> CascadeGraph<'t> {
    pub fn new(num_users: usize) -> Self {
        CascadeGraph { graph: TemporalUMGraph::new(num_users), message_weights: Vec::new(), user_weights: HashMap::new() }
    }
}

/// `sigmoid(MLP((h_i + h_j) || (t_now + t_prev)))` for one pair.
pub fn attention_weight<'t>(
    mlp: &Mlp<'t>,
    h_i: Var<'t>,
    h_j: Var<'t>,
    t_now: Var<'t>,
    t_prev: Var<'t>,
) -> Var<'t> {
    let x = h_i.add(h_j).concat_cols(t_now.add(t_prev));
    mlp.forward(x, &mut DropoutCtx::eval()).sigmoid()
}

/// Attention weights for several pairs sharing one time context. `pair_sums`
/// holds `h_i + h_j` per row; the result is a column.
pub fn attention_weights<'t>(mlp: &Mlp<'t>, pair_sums: Var<'t>, time_sum: Var<'t>, drop: &mut DropoutCtx<'_>) -> Var<'t> {
    let tape = pair_sums.tape();
    let rows = pair_sums.rows();
    let times = tape.constant(Tensor::zeros(&[rows, time_sum.cols()])).add_row(time_sum);
    mlp.forward(pair_sums.concat_cols(times), drop).sigmoid()
}

fn open_unit(w: f64) -> f64 {
    w.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Processes one infection.
///
/// The new user is linked to the message and to every previously infected
/// user with attention weights computed from the step-(k-1) snapshot. Every
/// infected user (whose neighbourhood just changed) is then updated with
/// `sigmoid(h_i + sum_j w_ij h_j)` over its user neighbours, and the message
/// with `sigmoid(m + sum_i w_mi h_i^k)`. Other users keep their rows.
pub fn step_update<'t>(
    model: &ModelVars<'t>,
    state: &EmbeddingState<'t>,
    mut cg: CascadeGraph<'t>,
    event: Event,
    prev_time: f64,
    drop: &mut DropoutCtx<'_>,
) -> Result<(EmbeddingState<'t>, CascadeGraph<'t>)> {
    let u = event.user;
    if u >= state.num_users() {
        return Err(Error::validation(format!("user {u} out of range for {} users", state.num_users())));
    }
    if cg.graph.is_infected(u) {
        return Err(Error::contract(format!("user {u} is already infected")));
    }
    let tape = model.tape;
    let prior: Vec<usize> = cg.graph.infected().to_vec();

    let h_u = state.user(u);
    let mut sums = vec![state.message.add(h_u)];
    sums.extend(prior.iter().map(|&j| state.user(j).add(h_u)));
    let time_sum = model.enc_time.encode(&[event.time]).add(model.enc_time.encode(&[prev_time]));
    let weights = attention_weights(&model.attention, tape.stack_rows(&sums), time_sum, drop);

    let values: Vec<f64> = weights.value().data().iter().map(|&w| open_unit(w)).collect();
    cg.graph.grow(u, &NewLinks { message: values[0], users: values[1..].to_vec() })?;
    cg.message_weights.push((weights, 0));
    for (idx, &j) in prior.iter().enumerate() {
        cg.user_weights.insert((j.min(u), j.max(u)), (weights, idx + 1));
    }

    let infected = cg.graph.infected();
    let n = infected.len();
    let mut entries = Vec::with_capacity(n * n);
    for (a, &i) in infected.iter().enumerate() {
        for (b, &j) in infected.iter().enumerate() {
            if a != b {
                let (src, idx) = cg.user_weights[&(i.min(j), i.max(j))];
                entries.push((a, b, src, idx));
            }
        }
    }
    let w_users = tape.scatter(n, n, &entries);
    let h_prev = tape.stack_rows(&infected.iter().map(|&i| state.user(i)).collect::<Vec<_>>());
    let h_new = h_prev.add(w_users.matmul(h_prev)).sigmoid();

    let m_entries: Vec<_> = cg.message_weights.iter().enumerate().map(|(b, &(src, idx))| (0, b, src, idx)).collect();
    let w_msg = tape.scatter(1, n, &m_entries);
    let message = state.message.add(w_msg.matmul(h_new)).sigmoid();

    let mut updated = state.updated.clone();
    for (r, &i) in infected.iter().enumerate() {
        updated.insert(i, h_new.row(r));
    }
    let next = EmbeddingState { step: state.step + 1, base: state.base, updated, message, time: event.time };
    Ok((next, cg))
}

/// Walks a cascade one infection at a time.
pub struct CascadeRunner<'m, 't> {
    model: &'m ModelVars<'t>,
    pub state: EmbeddingState<'t>,
    pub graph: CascadeGraph<'t>,
    prev_time: f64,
    /// User rows right after the first infection, used as trajectory starts.
    first_snapshot: Option<EmbeddingState<'t>>,
}

impl<'m, 't> CascadeRunner<'m, 't> {
    pub fn new(model: &'m ModelVars<'t>, h0: Var<'t>, first: Event, rule: MessageInit) -> Self {
        let num_users = h0.rows();
        CascadeRunner {
            model,
            state: EmbeddingState::initial(h0, first.user, rule, first.time),
            graph: CascadeGraph::new(num_users),
            prev_time: first.time,
            first_snapshot: None,
        }
    }

    pub fn advance(&mut self, event: Event, drop: &mut DropoutCtx<'_>) -> Result<()> {
        let graph = std::mem::replace(&mut self.graph, CascadeGraph::new(0));
        let (state, graph) = step_update(self.model, &self.state, graph, event, self.prev_time, drop)?;
        self.state = state;
        self.graph = graph;
        self.prev_time = event.time;
        if self.first_snapshot.is_none() {
            self.first_snapshot = Some(self.state.clone());
        }
        Ok(())
    }

    /// `h_i^1`, the coordinate of user `i` after the first infection.
    pub fn initial_position(&self, user: usize) -> Option<Var<'t>> {
        self.first_snapshot.as_ref().map(|s| s.user(user))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, Dims};
    use crate::numerics::{sigmoid, ParamStore, Tape};

    fn small_model(n: usize, dim: usize, t: usize) -> ParamStore {
        init_params(Dims { features: n, dim, time_dim: t }, 1).unwrap()
    }

    fn zero_attention(store: &mut ParamStore, bias: f64) {
        for name in ["attn.l1.weight", "attn.l1.bias", "attn.l2.weight", "attn.l2.bias", "attn.out.weight", "attn.out.bias"] {
            store.get_mut(name).unwrap().data_mut().fill(0.0);
        }
        store.get_mut("attn.out.bias").unwrap().data_mut().fill(bias);
    }

    #[test]
    fn zero_mlp_gives_half() {
        let mut store = small_model(3, 4, 2);
        zero_attention(&mut store, 0.0);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &store).unwrap();
        let h = tape.constant(Tensor::vector(vec![0.3, -0.2, 0.9, 1.0]));
        let t = tape.constant(Tensor::vector(vec![0.1, 0.2]));
        assert_eq!(attention_weight(&m.attention, h, h, t, t).item(), 0.5);
    }

    #[test]
    fn attention_is_symmetric_in_pair() {
        let store = small_model(3, 4, 2);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &store).unwrap();
        let a = tape.constant(Tensor::vector(vec![0.3, -0.2, 0.9, 1.0]));
        let b = tape.constant(Tensor::vector(vec![0.1, 0.7, -0.4, 0.0]));
        let t1 = tape.constant(Tensor::vector(vec![0.1, 0.2]));
        let t2 = tape.constant(Tensor::vector(vec![-0.3, 0.25]));
        let w1 = attention_weight(&m.attention, a, b, t1, t2).item();
        let w2 = attention_weight(&m.attention, b, a, t1, t2).item();
        assert_eq!(w1, w2);
        assert!(w1 > 0.0 && w1 < 1.0);
    }

    #[test]
    fn first_event_touches_only_root() {
        let store = small_model(5, 4, 2);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &store).unwrap();
        let h0 = tape.constant(Tensor::matrix(5, 4, (0..20).map(|v| v as f64 * 0.05).collect()));
        let mut runner = CascadeRunner::new(&m, h0, Event::new(2, 1.0), MessageInit::Root);
        runner.advance(Event::new(2, 1.0), &mut DropoutCtx::eval()).unwrap();
        assert_eq!(runner.graph.graph.num_links(), 1);
        for i in [0, 1, 3, 4] {
            assert_eq!(runner.state.user(i).to_tensor(), h0.row(i).to_tensor());
        }
        // The root has no user neighbours yet: h^1 = sigmoid(h^0).
        let expected: Vec<f64> = h0.row(2).value().data().iter().map(|&v| sigmoid(v)).collect();
        assert_eq!(runner.state.user(2).value().data(), &expected[..]);
    }

    #[test]
    fn vanishing_weights_reduce_to_sigmoid() {
        let mut store = small_model(4, 3, 2);
        zero_attention(&mut store, -60.0);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &store).unwrap();
        let h0 = tape.constant(Tensor::matrix(4, 3, (0..12).map(|v| (v as f64 * 0.37).sin()).collect()));
        let mut runner = CascadeRunner::new(&m, h0, Event::new(0, 0.0), MessageInit::Root);
        runner.advance(Event::new(0, 0.0), &mut DropoutCtx::eval()).unwrap();
        let before = runner.state.clone();
        runner.advance(Event::new(3, 1.0), &mut DropoutCtx::eval()).unwrap();
        for i in [0, 3] {
            let prev = before.user(i).to_tensor();
            let now = runner.state.user(i).to_tensor();
            for (a, b) in now.data().iter().zip(prev.data()) {
                assert!((a - sigmoid(*b)).abs() < 1e-20_f64.max(1e-12));
            }
        }
    }

    #[test]
    fn duplicate_infection_is_rejected() {
        let store = small_model(4, 3, 2);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &store).unwrap();
        let h0 = tape.constant(Tensor::zeros(&[4, 3]));
        let mut runner = CascadeRunner::new(&m, h0, Event::new(1, 0.0), MessageInit::Root);
        runner.advance(Event::new(1, 0.0), &mut DropoutCtx::eval()).unwrap();
        let err = runner.advance(Event::new(1, 2.0), &mut DropoutCtx::eval());
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn mean_message_init() {
        let tape = Tape::new();
        let h0 = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]));
        let s = EmbeddingState::initial(h0, 0, MessageInit::Mean, 0.0);
        assert_eq!(s.message.value().data(), &[0.5, 1.0]);
        let s = EmbeddingState::initial(h0, 1, MessageInit::Root, 0.0);
        assert_eq!(s.message.value().data(), &[0.0, 2.0]);
    }
}
