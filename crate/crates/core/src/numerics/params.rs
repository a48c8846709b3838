use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "R-ODE-CKPT v1";

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Named learnable parameters plus Adam moment estimates.
///
/// Iteration order is the sorted parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    moments: BTreeMap<String, (Tensor, Tensor)>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::contract(format!("invalid parameter name {name:?}")));
        }
        if self.params.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    /// Looks up a parameter that the caller requires to exist.
    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.params.get(name).ok_or_else(|| Error::contract(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// One bias-corrected Adam update. Parameters absent from `grads` are
    /// treated as having zero gradient.
    pub fn optimizer_step(&mut self, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = self
                .params
                .get(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter {name}")))?;
            if p.len() != g.len() {
                return Err(Error::contract(format!(
                    "gradient shape {:?} does not match parameter {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (name, p) in self.params.iter_mut() {
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())));
            let g = grads.get(name);
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g.data()[i]);
                let mi = BETA1 * m.data()[i] + (1.0 - BETA1) * gi;
                let vi = BETA2 * v.data()[i] + (1.0 - BETA2) * gi * gi;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + ADAM_EPS);
                p.data_mut()[i] -= update;
            }
        }
        Ok(())
    }

    /// Parameters only; optimizer state is not persisted.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{CHECKPOINT_HEADER}")?;
        for (name, t) in &self.params {
            let shape = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
            };
            let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            writeln!(w, "{name}\t{shape}\t{}", B64.encode(bytes))?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Parse {
            path: "<checkpoint>".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = r.lines();
        let header = lines.next().transpose()?;
        if header.as_deref().map(str::trim_end) != Some(CHECKPOINT_HEADER) {
            return Err(bad(1, "missing checkpoint header"));
        }
        let mut store = ParamStore::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(lineno, "expected name<TAB>shape<TAB>payload"));
            }
            let shape: Vec<usize> = if fields[1] == "-" {
                Vec::new()
            } else {
                fields[1]
                    .split(',')
                    .map(|s| s.parse::<usize>().map_err(|_| bad(lineno, "bad shape")))
                    .collect::<Result<_>>()?
            };
            let bytes = B64.decode(fields[2]).map_err(|_| bad(lineno, "bad base64 payload"))?;
            if bytes.len() % 8 != 0 {
                return Err(bad(lineno, "payload is not a whole number of float64 values"));
            }
            let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| bad(lineno, &e.to_string()))?;
            store.insert(fields[0], t).map_err(|e| bad(lineno, &e.to_string()))?;
        }
        Ok(store)
    }
}
