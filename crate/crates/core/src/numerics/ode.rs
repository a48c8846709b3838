//! Fixed-step classical Runge-Kutta integration.

use std::rc::Rc;

use super::tape::Var;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// State types the solver can combine linearly.
pub trait OdeState: Clone {
    /// `self + h * other`
    fn add_scaled(&self, other: &Self, h: f64) -> Self;
    fn all_finite(&self) -> bool;
}

impl OdeState for Tensor {
    fn add_scaled(&self, other: &Self, h: f64) -> Self {
        self.zip_map(other, |a, b| a + h * b)
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl OdeState for f64 {
    fn add_scaled(&self, other: &Self, h: f64) -> Self {
        self + h * other
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl OdeState for Var<'_> {
    fn add_scaled(&self, other: &Self, h: f64) -> Self {
        self.add(other.scale(h))
    }

    fn all_finite(&self) -> bool {
        self.value().is_finite()
    }
}

/// Integrates `dy/dt = field(y, t)` over `[t0, t1]` with `steps` RK4 steps and
/// returns every grid state, endpoints included.
pub fn ode_solve<S, F>(initial: S, t0: f64, t1: f64, steps: usize, mut field: F) -> Result<Vec<(f64, S)>>
where
    S: OdeState,
    F: FnMut(&S, f64) -> Result<S>,
{
    if !(t0 <= t1) {
        return Err(Error::contract(format!("ode_solve needs t0 <= t1, got [{t0}, {t1}]")));
    }
    if steps == 0 {
        return Err(Error::contract("ode_solve needs at least one step"));
    }
    let h = (t1 - t0) / steps as f64;
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = initial;
    out.push((t0, y.clone()));
    for i in 0..steps {
        let t = t0 + (t1 - t0) * (i as f64 / steps as f64);
        let k1 = field(&y, t)?;
        let k2 = field(&y.add_scaled(&k1, h / 2.0), t + h / 2.0)?;
        let k3 = field(&y.add_scaled(&k2, h / 2.0), t + h / 2.0)?;
        let k4 = field(&y.add_scaled(&k3, h), t + h)?;
        y = y
            .add_scaled(&k1, h / 6.0)
            .add_scaled(&k2, h / 3.0)
            .add_scaled(&k3, h / 3.0)
            .add_scaled(&k4, h / 6.0);
        if !y.all_finite() {
            return Err(Error::Divergence(format!("non-finite ODE state at step {} of {steps}", i + 1)));
        }
        let t_next = if i + 1 == steps { t1 } else { t0 + (t1 - t0) * ((i + 1) as f64 / steps as f64) };
        out.push((t_next, y.clone()));
    }
    Ok(out)
}

/// Row-batched RK4 for fields that do not depend on the state.
///
/// Row `r` of `initial` is integrated over its own span `[starts[r], ends[r]]`
/// with `steps` uniform RK4 steps. Internally every row is mapped onto a shared
/// unit interval, `t = start + s * (end - start)`, so one solve covers all rows;
/// the stage times and step sizes seen by each row are exactly those of a
/// direct solve over its own span.
///
/// `field(times)` receives one time per row and returns one derivative row per
/// input row.
pub fn solve_rows<'t, F>(
    initial: Var<'t>,
    starts: &[f64],
    ends: &[f64],
    steps: usize,
    mut field: F,
) -> Result<Var<'t>>
where
    F: FnMut(&[f64]) -> Result<Var<'t>>,
{
    assert_eq!(starts.len(), ends.len(), "span count");
    assert_eq!(initial.rows(), starts.len(), "one span per row");
    if let Some(r) = starts.iter().zip(ends).position(|(a, b)| !(a <= b)) {
        return Err(Error::contract(format!("row {r} has span [{}, {}]", starts[r], ends[r])));
    }
    let lengths = Rc::new(starts.iter().zip(ends).map(|(a, b)| b - a).collect::<Vec<_>>());
    let traj = ode_solve(initial, 0.0, 1.0, steps, |_, s| {
        let times: Vec<f64> = starts.iter().zip(lengths.iter()).map(|(a, l)| a + s * l).collect();
        Ok(field(&times)?.scale_rows(lengths.clone()))
    })?;
    Ok(traj.last().expect("at least one state").1)
}
