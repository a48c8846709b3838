//! Social graph, cascades, the per-cascade user-message graph and file I/O.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{CsrMatrix, Tensor};

/// Largest user count that gets one-hot identity features by default.
pub const ONE_HOT_FEATURE_LIMIT: usize = 4096;
const RANDOM_FEATURE_SEED: u64 = 0x5eed_f00d;
const RANDOM_FEATURE_SCALE: f64 = 0.05;

/// Static user graph with node features.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    num_users: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    features: Tensor,
}

impl SocialGraph {
    /// Builds a graph from undirected edges. Duplicate and reversed pairs
    /// collapse; self-loops are rejected.
    pub fn new(num_users: usize, edges: impl IntoIterator<Item = (usize, usize)>, features: Option<Tensor>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= num_users || b >= num_users {
                return Err(Error::validation(format!("edge ({a}, {b}) out of range for {num_users} users")));
            }
            if a == b {
                return Err(Error::validation(format!("self-loop on user {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let features = match features {
            Some(f) => {
                if f.shape().len() != 2 || f.rows() != num_users {
                    return Err(Error::validation(format!(
                        "feature matrix {:?} does not have {num_users} rows",
                        f.shape()
                    )));
                }
                f
            }
            None => default_features(num_users),
        };
        let mut neighbors = vec![Vec::new(); num_users];
        for &(a, b) in &set {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(SocialGraph { num_users, edges: set, neighbors, features })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    /// Undirected edges as `(min, max)` pairs in sorted order.
    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn neighbors(&self, user: usize) -> &[usize] {
        &self.neighbors[user]
    }

    pub fn degree(&self, user: usize) -> usize {
        self.neighbors[user].len()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Dense binary adjacency matrix.
    pub fn adjacency(&self) -> Tensor {
        let n = self.num_users;
        let mut a = Tensor::zeros(&[n, n]);
        for &(i, j) in &self.edges {
            a.data_mut()[i * n + j] = 1.0;
            a.data_mut()[j * n + i] = 1.0;
        }
        a
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> CsrMatrix {
        let inv_sqrt: Vec<f64> = (0..self.num_users).map(|i| 1.0 / ((self.degree(i) + 1) as f64).sqrt()).collect();
        let rows: Vec<Vec<(usize, f64)>> = (0..self.num_users)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = self.neighbors[i].iter().map(|&j| (j, inv_sqrt[i] * inv_sqrt[j])).collect();
                row.push((i, inv_sqrt[i] * inv_sqrt[i]));
                row.sort_by_key(|e| e.0);
                row
            })
            .collect();
        CsrMatrix::from_rows(self.num_users, &rows)
    }

    /// `Â X`, the feature propagation shared by every graph-convolution layer.
    pub fn propagated_features(&self) -> Tensor {
        self.normalized_adjacency().matmul_dense(&self.features)
    }
}

/// One-hot identity rows for small graphs, small seeded uniform noise otherwise.
pub fn default_features(num_users: usize) -> Tensor {
    if num_users <= ONE_HOT_FEATURE_LIMIT {
        let mut x = Tensor::zeros(&[num_users, num_users]);
        for i in 0..num_users {
            x.data_mut()[i * num_users + i] = 1.0;
        }
        x
    } else {
        let dim = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(RANDOM_FEATURE_SEED);
        let data = (0..num_users * dim)
            .map(|_| rng.gen_range(-RANDOM_FEATURE_SCALE..RANDOM_FEATURE_SCALE))
            .collect();
        Tensor::matrix(num_users, dim, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub user: usize,
    pub time: f64,
}

impl Event {
    pub fn new(user: usize, time: f64) -> Self {
        Event { user, time }
    }
}

/// Time-ordered infections of one message.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    message_id: String,
    events: Vec<Event>,
}

impl Cascade {
    /// Checks ordering and uniqueness; does not require a minimum length.
    pub fn new(message_id: impl Into<String>, events: Vec<Event>) -> Result<Self> {
        let message_id = message_id.into();
        if message_id.is_empty() || message_id.contains(['\t', '\n']) {
            return Err(Error::validation(format!("invalid message id {message_id:?}")));
        }
        let mut seen = HashSet::new();
        for (k, e) in events.iter().enumerate() {
            if !e.time.is_finite() || e.time < 0.0 {
                return Err(Error::validation(format!(
                    "cascade {message_id}: timestamp {} at position {k} is not a non-negative number",
                    e.time
                )));
            }
            if k > 0 && !(e.time > events[k - 1].time) {
                return Err(Error::validation(format!(
                    "cascade {message_id}: timestamps not strictly increasing at position {k} ({} after {})",
                    e.time,
                    events[k - 1].time
                )));
            }
            if !seen.insert(e.user) {
                return Err(Error::validation(format!("cascade {message_id}: user {} infected twice", e.user)));
            }
        }
        Ok(Cascade { message_id, events })
    }

    pub fn message_id(&self) -> &str {
        &self.message_id
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_time(&self) -> f64 {
        self.events.first().map_or(0.0, |e| e.time)
    }

    pub fn max_time(&self) -> f64 {
        self.events.last().map_or(0.0, |e| e.time)
    }

    pub fn contains_user(&self, user: usize) -> bool {
        self.events.iter().any(|e| e.user == user)
    }

    /// The first `len` events as a cascade of their own.
    pub fn prefix(&self, len: usize) -> Cascade {
        Cascade { message_id: self.message_id.clone(), events: self.events[..len.min(self.events.len())].to_vec() }
    }

    pub fn max_user(&self) -> Option<usize> {
        self.events.iter().map(|e| e.user).max()
    }

    pub fn check_users(&self, num_users: usize) -> Result<()> {
        match self.events.iter().find(|e| e.user >= num_users) {
            Some(e) => Err(Error::validation(format!(
                "cascade {}: user {} out of range for {num_users} users",
                self.message_id, e.user
            ))),
            None => Ok(()),
        }
    }

    fn to_line(&self) -> String {
        let body: Vec<String> = self.events.iter().map(|e| format!("{}:{}", e.user, e.time)).collect();
        format!("{}\t{}", self.message_id, body.join(";"))
    }
}

/// Cascades read from a file, with the number of too-short lines dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCascades {
    pub cascades: Vec<Cascade>,
    pub dropped: usize,
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Reads an undirected edge list (`src<TAB>dst` per line).
pub fn load_graph(path: &Path, num_users: usize, feature_path: Option<&Path>) -> Result<SocialGraph> {
    let edges = read_edges(path)?;
    for &(line, a, b) in &edges {
        if a >= num_users || b >= num_users {
            return Err(Error::validation(format!(
                "{}:{line}: edge ({a}, {b}) out of range for {num_users} users",
                path.display()
            )));
        }
    }
    let features = feature_path.map(|p| load_features(p, num_users)).transpose()?;
    SocialGraph::new(num_users, edges.into_iter().filter(|e| e.1 != e.2).map(|e| (e.1, e.2)), features)
}

/// Parses an edge file into `(line, src, dst)` triples.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize, usize)>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line, l) in content_lines(&text) {
        let mut parts = l.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line, format!("expected `src<TAB>dst`, got {l:?}")));
        };
        let a = a.parse::<usize>().map_err(|_| parse_err(path, line, format!("bad node id {a:?}")))?;
        let b = b.parse::<usize>().map_err(|_| parse_err(path, line, format!("bad node id {b:?}")))?;
        if a == b {
            log::warn!("{}:{line}: ignoring self-loop on {a}", path.display());
        }
        out.push((line, a, b));
    }
    Ok(out)
}

/// Reads `node_id<TAB>f1,f2,...` rows; every node needs exactly one row.
pub fn load_features(path: &Path, num_users: usize) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut rows: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut dim = None;
    for (line, l) in content_lines(&text) {
        let (id, vals) = l
            .split_once('\t')
            .ok_or_else(|| parse_err(path, line, "expected `node_id<TAB>f1,f2,...`"))?;
        let id: usize = id.trim().parse().map_err(|_| parse_err(path, line, format!("bad node id {id:?}")))?;
        let vals: Vec<f64> = vals
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| parse_err(path, line, format!("bad feature value {v:?}"))))
            .collect::<Result<_>>()?;
        if *dim.get_or_insert(vals.len()) != vals.len() {
            return Err(parse_err(path, line, "feature rows have different lengths"));
        }
        if id >= num_users {
            return Err(Error::validation(format!("{}:{line}: node {id} out of range", path.display())));
        }
        if rows.insert(id, vals).is_some() {
            return Err(Error::validation(format!("{}:{line}: node {id} listed twice", path.display())));
        }
    }
    if rows.len() != num_users {
        return Err(Error::validation(format!(
            "{}: features for {} of {num_users} nodes",
            path.display(),
            rows.len()
        )));
    }
    let rows: Vec<Vec<f64>> = rows.into_values().collect();
    Ok(Tensor::from_rows(&rows))
}

/// Reads `message_id<TAB>user:time;user:time;...` lines. Cascades shorter
/// than two events are dropped and counted.
pub fn load_cascades(path: &Path) -> Result<LoadedCascades> {
    let text = fs::read_to_string(path)?;
    parse_cascades(&text, path)
}

pub fn parse_cascades(text: &str, path: &Path) -> Result<LoadedCascades> {
    let mut cascades = Vec::new();
    let mut dropped = 0;
    let mut ids = HashSet::new();
    for (line, l) in content_lines(text) {
        let cascade = parse_cascade_line(l, path, line)?;
        if !ids.insert(cascade.message_id().to_string()) {
            return Err(Error::validation(format!("{}:{line}: duplicate message id {}", path.display(), cascade.message_id())));
        }
        if cascade.len() < 2 {
            dropped += 1;
            continue;
        }
        if cascade.max_time() <= 0.0 {
            return Err(Error::validation(format!("cascade {}: maximum timestamp is zero", cascade.message_id())));
        }
        cascades.push(cascade);
    }
    if dropped > 0 {
        log::warn!("{}: dropped {dropped} cascades shorter than two events", path.display());
    }
    Ok(LoadedCascades { cascades, dropped })
}

pub fn parse_cascade_line(l: &str, path: &Path, line: usize) -> Result<Cascade> {
    let (id, body) = l
        .split_once('\t')
        .ok_or_else(|| parse_err(path, line, "expected `message_id<TAB>user:time;...`"))?;
    let mut events = Vec::new();
    for item in body.split(';').map(str::trim).filter(|s| !s.is_empty()) {
        let (u, t) = item.split_once(':').ok_or_else(|| parse_err(path, line, format!("bad event {item:?}")))?;
        let user = u.trim().parse::<usize>().map_err(|_| parse_err(path, line, format!("bad user id {u:?}")))?;
        let time = t.trim().parse::<f64>().map_err(|_| parse_err(path, line, format!("bad timestamp {t:?}")))?;
        events.push(Event::new(user, time));
    }
    Cascade::new(id.trim(), events)
}

pub fn write_cascades<W: Write>(mut w: W, cascades: &[Cascade]) -> Result<()> {
    for c in cascades {
        writeln!(w, "{}", c.to_line())?;
    }
    Ok(())
}

pub fn write_graph<W: Write>(mut w: W, graph: &SocialGraph) -> Result<()> {
    for &(a, b) in graph.edges() {
        writeln!(w, "{a}\t{b}")?;
    }
    Ok(())
}

pub fn write_features<W: Write>(mut w: W, features: &Tensor) -> Result<()> {
    for r in 0..features.rows() {
        let vals: Vec<String> = features.row(r).iter().map(|v| v.to_string()).collect();
        writeln!(w, "{r}\t{}", vals.join(","))?;
    }
    Ok(())
}

/// Train/validation/test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Cascade>,
    pub val: Vec<Cascade>,
    pub test: Vec<Cascade>,
}

/// Chronological split by first timestamp (ties by message id).
pub fn chronological_split(cascades: &[Cascade], train_frac: f64, val_frac: f64) -> Split {
    let mut sorted = cascades.to_vec();
    sorted.sort_by(|a, b| a.first_time().total_cmp(&b.first_time()).then_with(|| a.message_id().cmp(b.message_id())));
    let n = sorted.len();
    let mut n_train = (n as f64 * train_frac).floor() as usize;
    if n > 0 && n_train == 0 {
        n_train = 1;
    }
    let n_val = ((n as f64 * val_frac).floor() as usize).min(n - n_train);
    let test = sorted.split_off(n_train + n_val);
    let val = sorted.split_off(n_train);
    Split { train: sorted, val, test }
}

/// Edge weights introduced when one user is infected.
#[derive(Debug, Clone, PartialEq)]
pub struct NewLinks {
    pub message: f64,
    /// One weight per previously infected user, in infection order.
    pub users: Vec<f64>,
}

/// Weighted user-message graph grown one infection at a time.
///
/// Nodes `0..N` are users; node `N` is the message.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalUMGraph {
    num_users: usize,
    infected: Vec<usize>,
    infected_set: HashSet<usize>,
    neighbors: BTreeMap<usize, Vec<usize>>,
    weights: BTreeMap<(usize, usize), f64>,
}

impl TemporalUMGraph {
    pub fn new(num_users: usize) -> Self {
        TemporalUMGraph {
            num_users,
            infected: Vec::new(),
            infected_set: HashSet::new(),
            neighbors: BTreeMap::new(),
            weights: BTreeMap::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn message_node(&self) -> usize {
        self.num_users
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + 1
    }

    pub fn step(&self) -> usize {
        self.infected.len()
    }

    pub fn infected(&self) -> &[usize] {
        &self.infected
    }

    pub fn is_infected(&self, user: usize) -> bool {
        self.infected_set.contains(&user)
    }

    /// Neighbors in link-creation order.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        self.neighbors.get(&node).map_or(&[], Vec::as_slice)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors(node).len()
    }

    pub fn weight(&self, a: usize, b: usize) -> Option<f64> {
        self.weights.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn num_links(&self) -> usize {
        self.weights.len()
    }

    /// Dense symmetric `(N+1) x (N+1)` weighted adjacency.
    pub fn weighted_adjacency(&self) -> Tensor {
        let n = self.num_nodes();
        let mut a = Tensor::zeros(&[n, n]);
        for (&(i, j), &w) in &self.weights {
            a.data_mut()[i * n + j] = w;
            a.data_mut()[j * n + i] = w;
        }
        a
    }

    /// Link-count degrees of every node.
    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|i| self.degree(i)).collect()
    }

    /// Infects `user`: links it to the message node and to every previously
    /// infected user. Existing links are untouched.
    pub fn grow(&mut self, user: usize, links: &NewLinks) -> Result<()> {
        if user >= self.num_users {
            return Err(Error::validation(format!("user {user} out of range for {} users", self.num_users)));
        }
        if self.is_infected(user) {
            return Err(Error::contract(format!("user {user} is already infected")));
        }
        if links.users.len() != self.infected.len() {
            return Err(Error::contract(format!(
                "expected {} user-user weights, got {}",
                self.infected.len(),
                links.users.len()
            )));
        }
        let all = std::iter::once(links.message).chain(links.users.iter().copied());
        if let Some(w) = all.into_iter().find(|w| !(*w > 0.0 && *w < 1.0)) {
            return Err(Error::contract(format!("link weight {w} outside (0, 1)")));
        }
        let m = self.message_node();
        self.link(m, user, links.message);
        for (&prior, &w) in self.infected.clone().iter().zip(&links.users) {
            self.link(prior, user, w);
        }
        self.infected.push(user);
        self.infected_set.insert(user);
        Ok(())
    }

    fn link(&mut self, a: usize, b: usize, w: f64) {
        self.weights.insert((a.min(b), a.max(b)), w);
        self.neighbors.entry(a).or_default().push(b);
        self.neighbors.entry(b).or_default().push(a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn load_path_graph() {
        let f = file("0\t1\n1\t2\n");
        let g = load_graph(f.path(), 3, None).unwrap();
        let a = g.adjacency();
        let expected = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(a.data(), &expected);
    }

    #[test]
    fn empty_edge_file() {
        let f = file("");
        let g = load_graph(f.path(), 2, None).unwrap();
        assert!(g.adjacency().data().iter().all(|&v| v == 0.0));
        assert_eq!(g.features().shape(), &[2, 2]);
    }

    #[test]
    fn out_of_range_edge() {
        let f = file("0\t5\n");
        assert!(matches!(load_graph(f.path(), 3, None), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = file("# header\n0\t1\nzero\tone\n");
        match load_graph(f.path(), 3, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_reversed_edges_are_idempotent() {
        let f = file("0\t1\n1\t0\n0\t1\n");
        let g = load_graph(f.path(), 2, None).unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.degree(0), 1);
    }

    #[test]
    fn features_from_file() {
        let edges = file("0\t1\n");
        let feats = file("1\t0.5,2\n0\t1,-1\n");
        let g = load_graph(edges.path(), 2, Some(feats.path())).unwrap();
        assert_eq!(g.features().data(), &[1.0, -1.0, 0.5, 2.0]);
        let missing = file("0\t1,2\n");
        assert!(load_graph(edges.path(), 2, Some(missing.path())).is_err());
    }

    #[test]
    fn large_graphs_get_small_random_features() {
        let x = default_features(ONE_HOT_FEATURE_LIMIT + 1);
        assert_eq!(x.rows(), ONE_HOT_FEATURE_LIMIT + 1);
        assert!(x.data().iter().all(|v| v.abs() < RANDOM_FEATURE_SCALE));
        assert_eq!(x, default_features(ONE_HOT_FEATURE_LIMIT + 1));
    }

    #[test]
    fn cascade_lines() {
        let f = file("m1\t0:0.0;3:2.5;7:4.0\nm2\t4:1.0\n");
        let loaded = load_cascades(f.path()).unwrap();
        assert_eq!(loaded.dropped, 1);
        assert_eq!(loaded.cascades.len(), 1);
        let c = &loaded.cascades[0];
        assert_eq!(c.message_id(), "m1");
        assert_eq!(c.events(), &[Event::new(0, 0.0), Event::new(3, 2.5), Event::new(7, 4.0)]);
    }

    #[test]
    fn unordered_cascade_is_rejected_not_sorted() {
        let f = file("m3\t0:2.0;1:1.0\n");
        match load_cascades(f.path()) {
            Err(Error::Validation(msg)) => assert!(msg.contains("m3"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn repeated_user_is_rejected() {
        let f = file("m\t0:0;1:1;0:2\n");
        assert!(matches!(load_cascades(f.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn cascade_write_is_stable() {
        let text = "a\t0:0;3:2.5;7:4\nb\t1:0.25;2:1e-3\n";
        let f = file(text);
        let err = load_cascades(f.path());
        // second cascade is out of order
        assert!(err.is_err());
        let text = "a\t0:0;3:2.5;7:4\nb\t1:0.25;2:3.75\n";
        let f = file(text);
        let loaded = load_cascades(f.path()).unwrap();
        let mut out = Vec::new();
        write_cascades(&mut out, &loaded.cascades).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn split_is_chronological() {
        let cascades: Vec<Cascade> = (0..10)
            .map(|i| {
                let t0 = (9 - i) as f64;
                Cascade::new(format!("c{i}"), vec![Event::new(0, t0), Event::new(1, t0 + 1.0)]).unwrap()
            })
            .collect();
        let split = chronological_split(&cascades, 0.8, 0.1);
        assert_eq!((split.train.len(), split.val.len(), split.test.len()), (8, 1, 1));
        assert_eq!(split.train[0].message_id(), "c9");
        assert_eq!(split.test[0].message_id(), "c0");
        let last_train = split.train.last().unwrap().first_time();
        assert!(split.val.iter().chain(&split.test).all(|c| c.first_time() >= last_train));
    }

    #[test]
    fn grow_first_infection() {
        let mut g = TemporalUMGraph::new(6);
        g.grow(2, &NewLinks { message: 0.8, users: vec![] }).unwrap();
        assert_eq!(g.weight(6, 2), Some(0.8));
        assert_eq!(g.num_links(), 1);
        assert_eq!(g.step(), 1);
    }

    #[test]
    fn grow_links_previous_infected() {
        let mut g = TemporalUMGraph::new(6);
        g.grow(2, &NewLinks { message: 0.8, users: vec![] }).unwrap();
        g.grow(5, &NewLinks { message: 0.6, users: vec![0.4] }).unwrap();
        assert_eq!(g.weight(6, 5), Some(0.6));
        assert_eq!(g.weight(5, 2), Some(0.4));
        assert_eq!(g.weight(6, 2), Some(0.8));
        let a = g.weighted_adjacency();
        assert_eq!(a, a.transpose().reshape(vec![7, 7]).unwrap());
    }

    #[test]
    fn grow_duplicate_is_contract_violation() {
        let mut g = TemporalUMGraph::new(6);
        g.grow(2, &NewLinks { message: 0.8, users: vec![] }).unwrap();
        let err = g.grow(2, &NewLinks { message: 0.5, users: vec![0.5] });
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn grow_rejects_wrong_weight_count() {
        let mut g = TemporalUMGraph::new(6);
        g.grow(2, &NewLinks { message: 0.8, users: vec![] }).unwrap();
        assert!(g.grow(3, &NewLinks { message: 0.8, users: vec![] }).is_err());
        assert!(g.grow(3, &NewLinks { message: 1.0, users: vec![0.5] }).is_err());
    }
}
