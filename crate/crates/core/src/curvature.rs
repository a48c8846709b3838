//! Message-to-user Ollivier-Ricci curvature on the temporal user-message
//! graph, using a 1-Lipschitz affine potential as a differentiable stand-in
//! for the Wasserstein distance.

use std::rc::Rc;

use crate::data::TemporalUMGraph;
use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, Tensor, Var};
use crate::transport::transport_cost;

/// Floor on the coordinate distance in the curvature ratio.
pub const DISTANCE_FLOOR: f64 = 1e-8;

/// Lazy random-walk measure around one node.
#[derive(Debug, Clone, PartialEq)]
pub struct MassDistribution {
    pub center: usize,
    pub alpha: f64,
    /// Centre first, then neighbours in link order.
    pub support: Vec<usize>,
    pub probs: Vec<f64>,
}

impl MassDistribution {
    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn prob(&self, node: usize) -> f64 {
        self.support.iter().zip(&self.probs).filter(|(&s, _)| s == node).map(|(_, &p)| p).sum()
    }
}

/// `alpha` at the node, `(1 - alpha) / degree` on each neighbour; all mass
/// stays put on an isolated node.
pub fn mass_distribution(g: &TemporalUMGraph, node: usize, alpha: f64) -> Result<MassDistribution> {
    if node >= g.num_nodes() {
        return Err(Error::contract(format!("node {node} is not in the graph")));
    }
    let neighbors = g.neighbors(node);
    let mut support = vec![node];
    let mut probs = Vec::with_capacity(neighbors.len() + 1);
    if neighbors.is_empty() {
        probs.push(1.0);
    } else {
        probs.push(alpha);
        let share = (1.0 - alpha) / neighbors.len() as f64;
        support.extend_from_slice(neighbors);
        probs.extend(std::iter::repeat(share).take(neighbors.len()));
    }
    Ok(MassDistribution { center: node, alpha, support, probs })
}

/// `alpha I + (1 - alpha) D^{-1} A` over link structure; isolated nodes keep
/// their full mass.
pub fn lazy_walk_matrix(g: &TemporalUMGraph, alpha: f64) -> CsrMatrix {
    let rows: Vec<Vec<(usize, f64)>> = (0..g.num_nodes())
        .map(|i| {
            let nb = g.neighbors(i);
            if nb.is_empty() {
                return vec![(i, 1.0)];
            }
            let share = (1.0 - alpha) / nb.len() as f64;
            let mut row = vec![(i, alpha)];
            row.extend(nb.iter().map(|&j| (j, share)));
            row
        })
        .collect();
    CsrMatrix::from_rows(g.num_nodes(), &rows)
}

/// Exact W1 between two mass distributions with Euclidean ground cost
/// between the rows of `coords`.
pub fn wasserstein_lp(p: &MassDistribution, q: &MassDistribution, coords: &Tensor) -> f64 {
    let cost: Vec<Vec<f64>> = p
        .support
        .iter()
        .map(|&a| q.support.iter().map(|&b| euclidean(coords.row(a), coords.row(b))).collect())
        .collect();
    transport_cost(&p.probs, &q.probs, &cost)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Affine potential `f(h) = w . h + b`, 1-Lipschitz while `|w| <= 1`.
#[derive(Clone, Copy)]
pub struct LipschitzHead<'t> {
    pub weight: Var<'t>,
    pub bias: Var<'t>,
}

impl<'t> LipschitzHead<'t> {
    /// One potential value per row of `h`, as a column.
    pub fn potentials(&self, h: Var<'t>) -> Var<'t> {
        let d = self.weight.value().len();
        h.matmul(self.weight.reshape(&[d, 1])).add_row(self.bias)
    }

    pub fn weight_norm(&self) -> f64 {
        self.weight.value().norm()
    }
}

/// `L f(H)` for every node of the graph.
pub fn smoothed_potentials<'t>(g: &TemporalUMGraph, h: Var<'t>, head: &LipschitzHead<'t>, alpha: f64) -> Var<'t> {
    let tape = h.tape();
    tape.sparse_matmul(Rc::new(lazy_walk_matrix(g, alpha)), head.potentials(h))
}

/// `[L f(H)]_a - [L f(H)]_b` with `h` holding `N+1` rows (message last).
pub fn surrogate_wasserstein<'t>(
    g: &TemporalUMGraph,
    h: Var<'t>,
    node_a: usize,
    node_b: usize,
    head: &LipschitzHead<'t>,
    alpha: f64,
) -> Var<'t> {
    let lf = smoothed_potentials(g, h, head, alpha);
    lf.element(node_a).sub(lf.element(node_b))
}

/// Curvature of the message-user pair with the numerator clamped at zero if
/// requested. The flag reports a floored distance.
pub fn ricci_curvature<'t>(
    g: &TemporalUMGraph,
    h: Var<'t>,
    user: usize,
    head: &LipschitzHead<'t>,
    alpha: f64,
    clamp_negative_w: bool,
) -> Result<(Var<'t>, bool)> {
    let m = g.message_node();
    if user >= m {
        return Err(Error::contract(format!("node {user} is not a user")));
    }
    let mut w = surrogate_wasserstein(g, h, m, user, head, alpha);
    if clamp_negative_w {
        w = w.relu();
    }
    let diff = h.row(m).sub(h.row(user));
    let floored = diff.value().norm() < DISTANCE_FLOOR;
    let dist = diff.row_norms_floor(DISTANCE_FLOOR);
    Ok((w.div(dist.reshape(&[])).neg().add_const(1.0), floored))
}

/// Curvatures from the message to every user.
pub struct UserCurvatures<'t> {
    /// `N x 1` column.
    pub values: Var<'t>,
    /// Users whose distance to the message hit [`DISTANCE_FLOOR`].
    pub floored: usize,
}

/// Vectorised [`ricci_curvature`] for all users at once.
pub fn user_curvatures<'t>(
    g: &TemporalUMGraph,
    h: Var<'t>,
    head: &LipschitzHead<'t>,
    alpha: f64,
    clamp_negative_w: bool,
) -> UserCurvatures<'t> {
    let n = g.num_users();
    let users: Vec<usize> = (0..n).collect();
    let lf = smoothed_potentials(g, h, head, alpha);
    let lf_users = lf.gather_rows(&users);
    let lf_message = lf.row(n);
    let mut w = lf_users.neg().add_row(lf_message);
    if clamp_negative_w {
        w = w.relu();
    }
    let h_users = h.gather_rows(&users);
    let diff = h_users.neg().add_row(h.row(n));
    let floored = {
        let d = diff.value();
        (0..n).filter(|&r| d.row(r).iter().map(|v| v * v).sum::<f64>().sqrt() < DISTANCE_FLOOR).count()
    };
    let dist = diff.row_norms_floor(DISTANCE_FLOOR);
    UserCurvatures { values: w.div(dist).neg().add_const(1.0), floored }
}

fn infected_mask(n: usize, infected: &[usize]) -> Result<Rc<Vec<bool>>> {
    let mut mask = vec![false; n];
    for &u in infected {
        if u >= n {
            return Err(Error::contract(format!("infected user {u} is out of range")));
        }
        mask[u] = true;
    }
    if mask.iter().all(|&m| m) {
        return Err(Error::contract("every user is already infected; no candidate remains"));
    }
    Ok(Rc::new(mask))
}

/// Softmax over curvatures with infected users at probability exactly zero.
pub fn infection_distribution<'t>(curvatures: Var<'t>, infected: &[usize]) -> Result<Var<'t>> {
    let mask = infected_mask(curvatures.value().len(), infected)?;
    Ok(curvatures.masked_softmax(mask))
}

/// `log p(next = target)` under [`infection_distribution`].
pub fn infection_log_prob<'t>(curvatures: Var<'t>, infected: &[usize], target: usize) -> Result<Var<'t>> {
    let mask = infected_mask(curvatures.value().len(), infected)?;
    if mask[target] {
        return Err(Error::contract(format!("target user {target} is already infected")));
    }
    Ok(curvatures.masked_log_softmax(mask).element(target))
}

/// Uninfected users ordered by descending score, ties by ascending id.
pub fn rank_candidates(scores: &[f64], infected: &[usize]) -> Vec<(usize, f64)> {
    let mut mask = vec![false; scores.len()];
    for &u in infected {
        mask[u] = true;
    }
    let mut ranked: Vec<(usize, f64)> =
        scores.iter().enumerate().filter(|(u, _)| !mask[*u]).map(|(u, &s)| (u, s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}
