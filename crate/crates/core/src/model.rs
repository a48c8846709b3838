//! Parameter layout, initialisation and per-tape binding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::{dropout, ParamStore, Tape, Tensor, Var};

/// Sizes needed to lay out the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub features: usize,
    pub dim: usize,
    pub time_dim: usize,
}

impl Dims {
    /// Recovers dimensions from a parameter store.
    pub fn from_params(params: &ParamStore) -> Result<Self> {
        let gcn = params.expect("gcn.weight")?;
        let omega = params.expect("enc.time.omega")?;
        Ok(Dims { features: gcn.rows(), dim: gcn.cols(), time_dim: omega.len() })
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::matrix(fan_in, fan_out, data)
}

fn add_mlp(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, sizes: &[usize]) -> Result<()> {
    let names = ["l1", "l2", "out"];
    for (i, w) in sizes.windows(2).enumerate() {
        store.insert(format!("{prefix}.{}.weight", names[i]), glorot(rng, w[0], w[1]))?;
        store.insert(format!("{prefix}.{}.bias", names[i]), Tensor::zeros(&[w[1]]))?;
    }
    Ok(())
}

/// Scales `head.weight` onto the unit ball: `w <- w / max(1, |w|)`.
pub fn project_head(store: &mut ParamStore) {
    if let Some(w) = store.get_mut("head.weight") {
        let norm = w.norm();
        if norm > 1.0 {
            for v in w.data_mut() {
                *v /= norm;
            }
        }
    }
}

/// Fresh parameters for the full model.
///
/// Layout: `gcn.weight` (F x d); `enc.time.{omega,phase}` (T); attention MLP
/// `attn.{l1,l2,out}` with sizes d+T -> d -> d -> 1; `head.{weight,bias}`
/// (d x 1, 1); velocity GNN `vel.gnn.weight` (F x d); `vel.time.{omega,phase}`;
/// velocity MLP `vel.{l1,l2,out}` with sizes d+T -> d -> d -> d.
pub fn init_params(dims: Dims, seed: u64) -> Result<ParamStore> {
    let Dims { features, dim, time_dim } = dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();

    store.insert("gcn.weight", glorot(&mut rng, features, dim))?;

    // Geometric frequencies spanning many time scales for raw timestamps.
    let omega: Vec<f64> = (0..time_dim)
        .map(|j| 10f64.powf(-9.0 * j as f64 / (time_dim.max(2) - 1) as f64))
        .collect();
    store.insert("enc.time.omega", Tensor::vector(omega))?;
    store.insert("enc.time.phase", Tensor::zeros(&[time_dim]))?;
    add_mlp(&mut store, &mut rng, "attn", &[dim + time_dim, dim, dim, 1])?;

    // Non-negative so that the clamped surrogate starts with live gradients:
    // message coordinates are sigmoid outputs and sit above the user rows.
    store.insert("head.weight", glorot(&mut rng, dim, 1).map(f64::abs))?;
    store.insert("head.bias", Tensor::zeros(&[1]))?;

    store.insert("vel.gnn.weight", glorot(&mut rng, features, dim))?;
    // System time lives in [0, 1]: harmonic frequencies.
    let omega: Vec<f64> = (0..time_dim).map(|j| std::f64::consts::PI * (j + 1) as f64 / 2.0).collect();
    store.insert("vel.time.omega", Tensor::vector(omega))?;
    store.insert("vel.time.phase", Tensor::zeros(&[time_dim]))?;
    add_mlp(&mut store, &mut rng, "vel", &[dim + time_dim, dim, dim, dim])?;

    project_head(&mut store);
    Ok(store)
}

/// Train-time dropout source; `None` means evaluation mode.
pub struct DropoutCtx<'a> {
    pub rate: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
}

impl DropoutCtx<'_> {
    pub fn eval() -> DropoutCtx<'static> {
        DropoutCtx { rate: 0.0, rng: None }
    }

    pub fn apply<'t>(&mut self, x: Var<'t>) -> Var<'t> {
        match self.rng.as_deref_mut() {
            Some(rng) if self.rate > 0.0 => dropout(x, self.rate, rng),
            _ => x,
        }
    }
}

/// Multi-layer perceptron with tanh hidden layers and a linear output.
#[derive(Clone)]
pub struct Mlp<'t> {
    layers: Vec<(Var<'t>, Var<'t>)>,
}

impl<'t> Mlp<'t> {
    fn bind(tape: &'t Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for name in ["l1", "l2", "out"] {
            let w = format!("{prefix}.{name}.weight");
            let b = format!("{prefix}.{name}.bias");
            layers.push((tape.param(&w, store.expect(&w)?.clone()), tape.param(&b, store.expect(&b)?.clone())));
        }
        Ok(Mlp { layers })
    }

    pub fn forward(&self, x: Var<'t>, drop: &mut DropoutCtx<'_>) -> Var<'t> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = h.matmul(*w).add_row(*b);
            if i < last {
                h = drop.apply(h.tanh());
            }
        }
        h
    }
}

/// Learnable cosine time encoding `sqrt(1/T) cos(omega * t + phase)`.
#[derive(Clone, Copy)]
pub struct TimeEncoder<'t> {
    pub omega: Var<'t>,
    pub phase: Var<'t>,
}

impl<'t> TimeEncoder<'t> {
    fn bind(tape: &'t Tape, store: &ParamStore, prefix: &str) -> Result<Self> {
        let o = format!("{prefix}.omega");
        let p = format!("{prefix}.phase");
        Ok(TimeEncoder {
            omega: tape.param(&o, store.expect(&o)?.clone()),
            phase: tape.param(&p, store.expect(&p)?.clone()),
        })
    }

    pub fn dim(&self) -> usize {
        self.omega.value().len()
    }

    /// One encoded row per time.
    pub fn encode(&self, times: &[f64]) -> Var<'t> {
        let tape = self.omega.tape();
        let t = tape.constant(Tensor::matrix(times.len(), 1, times.to_vec()));
        let scale = (1.0 / self.dim() as f64).sqrt();
        let omega_row = self.omega.reshape(&[1, self.dim()]);
        t.matmul(omega_row).add_row(self.phase).cos().scale(scale)
    }
}

/// Plain-value time encoding.
pub fn encode_time(omega: &[f64], phase: &[f64], t: f64) -> Vec<f64> {
    let scale = (1.0 / omega.len() as f64).sqrt();
    omega.iter().zip(phase).map(|(w, p)| scale * (w * t + p).cos()).collect()
}

/// All parameters bound to one tape, plus constant graph inputs.
pub struct ModelVars<'t> {
    pub tape: &'t Tape,
    pub dims: Dims,
    pub gcn_weight: Var<'t>,
    pub enc_time: TimeEncoder<'t>,
    pub attention: Mlp<'t>,
    pub head_weight: Var<'t>,
    pub head_bias: Var<'t>,
    pub vel_gnn_weight: Var<'t>,
    pub vel_time: TimeEncoder<'t>,
    pub velocity: Mlp<'t>,
}

impl<'t> ModelVars<'t> {
    pub fn bind(tape: &'t Tape, store: &ParamStore) -> Result<Self> {
        let p = |name: &str| -> Result<Var<'t>> { Ok(tape.param(name, store.expect(name)?.clone())) };
        Ok(ModelVars {
            tape,
            dims: Dims::from_params(store)?,
            gcn_weight: p("gcn.weight")?,
            enc_time: TimeEncoder::bind(tape, store, "enc.time")?,
            attention: Mlp::bind(tape, store, "attn")?,
            head_weight: p("head.weight")?,
            head_bias: p("head.bias")?,
            vel_gnn_weight: p("vel.gnn.weight")?,
            vel_time: TimeEncoder::bind(tape, store, "vel.time")?,
            velocity: Mlp::bind(tape, store, "vel")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_head_is_projected() {
        let dims = Dims { features: 5, dim: 8, time_dim: 4 };
        let a = init_params(dims, 3).unwrap();
        let b = init_params(dims, 3).unwrap();
        let c = init_params(dims, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.get("head.weight").unwrap().norm() <= 1.0 + 1e-15);
        assert_eq!(Dims::from_params(&a).unwrap(), dims);
        assert_eq!(a.get("attn.l1.weight").unwrap().shape(), &[12, 8]);
        assert_eq!(a.get("attn.out.weight").unwrap().shape(), &[8, 1]);
        assert_eq!(a.get("vel.out.weight").unwrap().shape(), &[8, 8]);
    }

    #[test]
    fn projection_only_shrinks() {
        let mut s = ParamStore::new();
        s.insert("head.weight", Tensor::vector(vec![3.0, 4.0])).unwrap();
        project_head(&mut s);
        assert_eq!(s.get("head.weight").unwrap().data(), &[0.6, 0.8]);
        s.get_mut("head.weight").unwrap().data_mut().copy_from_slice(&[0.3, 0.4]);
        project_head(&mut s);
        assert_eq!(s.get("head.weight").unwrap().data(), &[0.3, 0.4]);
    }

    #[test]
    fn time_encoding_matches_plain_version() {
        let tape = Tape::new();
        let enc = TimeEncoder {
            omega: tape.leaf(Tensor::vector(vec![1.0, 0.5, 2.0])),
            phase: tape.leaf(Tensor::vector(vec![0.0, 0.3, -1.0])),
        };
        let rows = enc.encode(&[0.0, 1.5]);
        for (r, t) in [0.0, 1.5].into_iter().enumerate() {
            let plain = encode_time(&[1.0, 0.5, 2.0], &[0.0, 0.3, -1.0], t);
            for (a, b) in rows.value().row(r).iter().zip(&plain) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
