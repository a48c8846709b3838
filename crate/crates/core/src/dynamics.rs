//! Continuous user trajectories driven by a GNN velocity field, and the
//! infection-time predictions read off them.

use crate::config::{Encounter, Rescale};
use crate::data::Cascade;
use crate::error::{Error, Result};
use crate::model::{DropoutCtx, Mlp, ModelVars, TimeEncoder};
use crate::numerics::{ode_solve, solve_rows, Tensor, Var};

/// `v(u, t) = MLP(g(u) || enc(t))` with `g = tanh(Â X W)` over the social graph.
pub struct VelocityNet<'m, 't> {
    /// `N x d` static node encodings.
    pub node_codes: Var<'t>,
    pub time: TimeEncoder<'t>,
    pub mlp: &'m Mlp<'t>,
}

impl<'m, 't> VelocityNet<'m, 't> {
    pub fn new(model: &'m ModelVars<'t>, propagated: &Tensor) -> Self {
        let node_codes = model.tape.constant(propagated.clone()).matmul(model.vel_gnn_weight).tanh();
        VelocityNet { node_codes, time: model.vel_time, mlp: &model.velocity }
    }

    /// Velocity rows for `(users[r], times[r])` pairs.
    pub fn velocity_rows(&self, users: &[usize], times: &[f64], drop: &mut DropoutCtx<'_>) -> Var<'t> {
        let x = self.node_codes.gather_rows(users).concat_cols(self.time.encode(times));
        self.mlp.forward(x, drop)
    }

    /// The field at one point. The position does not enter the field.
    pub fn velocity(&self, user: usize, _position: Var<'t>, t_sys: f64) -> Result<Var<'t>> {
        if !(0.0..=1.0).contains(&t_sys) {
            return Err(Error::contract(format!("system time {t_sys} outside [0, 1]")));
        }
        Ok(self.velocity_rows(&[user], &[t_sys], &mut DropoutCtx::eval()))
    }
}

/// Sampled trajectory of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub user: usize,
    pub samples: Vec<(f64, Tensor)>,
    pub solver_steps: usize,
}

/// RK4 trajectory from `initial` over `[0, t_end]`, keeping every step.
pub fn solve_trajectory<'t>(
    net: &VelocityNet<'_, 't>,
    user: usize,
    initial: Var<'t>,
    t_end: f64,
    steps: usize,
) -> Result<Vec<(f64, Var<'t>)>> {
    if !(t_end > 0.0 && t_end <= 1.0) {
        return Err(Error::contract(format!("trajectory end {t_end} outside (0, 1]")));
    }
    ode_solve(initial, 0.0, t_end, steps, |y, t| net.velocity(user, *y, t))
}

pub fn to_trajectory(user: usize, samples: &[(f64, Var<'_>)]) -> Trajectory {
    Trajectory {
        user,
        samples: samples.iter().map(|(t, v)| (*t, v.to_tensor())).collect(),
        solver_steps: samples.len().saturating_sub(1),
    }
}

/// Affine map between wall-clock seconds and system time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeScale {
    pub origin: f64,
    pub span: f64,
}

impl TimeScale {
    /// Scale of a complete cascade.
    pub fn of_cascade(c: &Cascade, rule: Rescale) -> Result<Self> {
        Self::with_end(c, c.max_time(), rule)
    }

    /// Scale for a cascade expected to end at `end` seconds.
    pub fn with_end(c: &Cascade, end: f64, rule: Rescale) -> Result<Self> {
        let origin = match rule {
            Rescale::Max => 0.0,
            Rescale::Offset => c.first_time(),
        };
        let span = end - origin;
        if !(span > 0.0) || !span.is_finite() {
            return Err(Error::validation(format!(
                "cascade {}: cannot rescale time with span {span}",
                c.message_id()
            )));
        }
        Ok(TimeScale { origin, span })
    }

    /// System time, clamped into `[0, 1]`.
    pub fn to_sys(&self, t: f64) -> f64 {
        ((t - self.origin) / self.span).clamp(0.0, 1.0)
    }

    pub fn to_wall(&self, s: f64) -> f64 {
        self.origin + s * self.span
    }
}

/// `t` rescaled by the cascade's own maximum timestamp.
pub fn rescale_time(c: &Cascade, t: f64, rule: Rescale) -> Result<f64> {
    Ok(TimeScale::of_cascade(c, rule)?.to_sys(t))
}

/// Sum over rows of `|phi(user_r, end_r) - target_r|^2`, trajectories starting
/// from `initial` at system time 0.
pub fn trajectory_sq_error<'t>(
    net: &VelocityNet<'_, 't>,
    users: &[usize],
    initial: Var<'t>,
    ends: &[f64],
    targets: Var<'t>,
    steps: usize,
    drop: &mut DropoutCtx<'_>,
) -> Result<Var<'t>> {
    let starts = vec![0.0; users.len()];
    let end = solve_rows(initial, &starts, ends, steps, |times| Ok(net.velocity_rows(users, times, drop)))?;
    Ok(end.sub(targets).sum_sq())
}

/// Outcome of an infection-time query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePrediction {
    pub t_sys: f64,
    pub wall_clock: f64,
    pub min_distance: f64,
    pub grid_index: usize,
}

/// Grid over `[t_from, 1]` with `cells` uniform cells (`cells + 1` points).
/// Refining by an integer factor reproduces every coarse point bit for bit.
pub fn time_grid(t_from: f64, cells: usize) -> Vec<f64> {
    (0..=cells).map(|i| if i == cells { 1.0 } else { t_from + (i as f64 * (1.0 - t_from)) / cells as f64 }).collect()
}

/// Index chosen by the encounter rule; ties go to the earliest point.
pub fn select_encounter(distances: &[f64], rule: Encounter) -> usize {
    let argmin = distances
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, &d)| if d < best.1 { (i, d) } else { best })
        .0;
    match rule {
        Encounter::Argmin => argmin,
        Encounter::Threshold(r) => distances.iter().position(|&d| d <= r).unwrap_or(argmin),
    }
}

/// Distances between the user's trajectory and `message` at each grid time.
///
/// The trajectory is first integrated from `initial` over `[0, t_from]`; each
/// grid point is then reached by its own `steps`-step solve from `t_from`, so
/// a point's position does not depend on the other grid points.
pub fn trajectory_distances<'t>(
    net: &VelocityNet<'_, 't>,
    user: usize,
    initial: Var<'t>,
    message: &[f64],
    t_from: f64,
    grid: &[f64],
    steps: usize,
) -> Result<Vec<f64>> {
    let mut eval = DropoutCtx::eval();
    let at_from = solve_rows(initial, &[0.0], &[t_from], steps, |ts| Ok(net.velocity_rows(&[user], ts, &mut eval)))?;
    let rows = grid.len();
    let starts = vec![t_from; rows];
    let users = vec![user; rows];
    let points = solve_rows(at_from.gather_rows(&vec![0; rows]), &starts, grid, steps, |ts| {
        Ok(net.velocity_rows(&users, ts, &mut eval))
    })?;
    let p = points.value();
    Ok((0..rows).map(|r| crate::curvature::euclidean(p.row(r), message)).collect())
}

/// When will `target` meet the message, given the trajectory start `initial`
/// (its coordinate after the first infection), the latest message coordinate
/// and the current system time.
#[allow(clippy::too_many_arguments)]
pub fn predict_infection_time<'t>(
    net: &VelocityNet<'_, 't>,
    target: usize,
    initial: Var<'t>,
    message: &[f64],
    t_now: f64,
    scale: TimeScale,
    grid_cells: usize,
    steps: usize,
    rule: Encounter,
) -> Result<TimePrediction> {
    if grid_cells == 0 {
        return Err(Error::contract("grid needs at least one cell"));
    }
    let grid = time_grid(t_now, grid_cells);
    let dists = trajectory_distances(net, target, initial, message, t_now, &grid, steps)?;
    let idx = select_encounter(&dists, rule);
    Ok(TimePrediction {
        t_sys: grid[idx],
        wall_clock: scale.to_wall(grid[idx]),
        min_distance: dists.iter().copied().fold(f64::INFINITY, f64::min),
        grid_index: idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Event;
    use crate::model::{init_params, Dims};
    use crate::numerics::{ParamStore, Tape};

    fn store(n: usize, d: usize, t: usize) -> ParamStore {
        init_params(Dims { features: n, dim: d, time_dim: t }, 5).unwrap()
    }

    fn zero_output(s: &mut ParamStore) {
        s.get_mut("vel.out.weight").unwrap().data_mut().fill(0.0);
        s.get_mut("vel.out.bias").unwrap().data_mut().fill(0.0);
    }

    fn eye(n: usize) -> Tensor {
        crate::data::default_features(n)
    }

    #[test]
    fn zero_output_layer_gives_zero_velocity() {
        let mut s = store(3, 4, 2);
        zero_output(&mut s);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &s).unwrap();
        let net = VelocityNet::new(&m, &eye(3));
        let pos = tape.constant(Tensor::vector(vec![1.0; 4]));
        for u in 0..3 {
            for t in [0.0, 0.3, 1.0] {
                assert!(net.velocity(u, pos, t).unwrap().value().data().iter().all(|&v| v == 0.0));
            }
        }
        let traj = solve_trajectory(&net, 1, pos, 0.5, 8).unwrap();
        assert!(traj.iter().all(|(_, v)| v.to_tensor() == pos.to_tensor()));
        assert!(net.velocity(0, pos, 1.5).is_err());
    }

    #[test]
    fn identical_codes_identical_velocity() {
        let s = store(2, 3, 2);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &s).unwrap();
        // Two isolated users with equal features.
        let x = Tensor::from_rows(&[vec![0.3, 0.6], vec![0.3, 0.6]]);
        let net = VelocityNet::new(&m, &x);
        let pos = tape.constant(Tensor::vector(vec![0.0; 3]));
        for t in [0.0, 0.25, 0.9] {
            assert_eq!(net.velocity(0, pos, t).unwrap().to_tensor(), net.velocity(1, pos, t).unwrap().to_tensor());
        }
    }

    #[test]
    fn constant_field_is_integrated_exactly() {
        let mut s = store(2, 2, 2);
        zero_output(&mut s);
        s.get_mut("vel.out.bias").unwrap().data_mut().copy_from_slice(&[0.5, -2.0]);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &s).unwrap();
        let net = VelocityNet::new(&m, &eye(2));
        let h1 = tape.constant(Tensor::vector(vec![0.2, 0.4]));
        let traj = solve_trajectory(&net, 0, h1, 1.0, 4).unwrap();
        assert_eq!(traj[0].1.to_tensor(), h1.to_tensor());
        for (t, v) in &traj {
            let v = v.to_tensor();
            assert!((v.data()[0] - (0.2 + 0.5 * t)).abs() < 1e-15);
            assert!((v.data()[1] - (0.4 - 2.0 * t)).abs() < 1e-15);
        }
    }

    #[test]
    fn rescaling() {
        let c = Cascade::new("m", vec![Event::new(0, 1.0), Event::new(1, 2.5), Event::new(2, 4.0)]).unwrap();
        assert_eq!(rescale_time(&c, 4.0, Rescale::Max).unwrap(), 1.0);
        assert_eq!(rescale_time(&c, 0.0, Rescale::Max).unwrap(), 0.0);
        assert_eq!(rescale_time(&c, 2.5, Rescale::Max).unwrap(), 0.625);
        assert_eq!(rescale_time(&c, 2.5, Rescale::Offset).unwrap(), 0.5);
        assert_eq!(rescale_time(&c, 9.0, Rescale::Max).unwrap(), 1.0);
        let flat = Cascade::new("z", vec![Event::new(0, 0.0)]).unwrap();
        assert!(rescale_time(&flat, 0.0, Rescale::Max).is_err());
    }

    #[test]
    fn encounter_selection() {
        assert_eq!(select_encounter(&[3.0, 1.0], Encounter::Argmin), 1);
        assert_eq!(select_encounter(&[2.0, 2.0, 2.0], Encounter::Argmin), 0);
        assert_eq!(select_encounter(&[3.0, 1.5, 1.0], Encounter::Threshold(2.0)), 1);
        assert_eq!(select_encounter(&[3.0, 2.5, 2.1], Encounter::Threshold(2.0)), 2);
    }

    #[test]
    fn grid_nesting_is_exact() {
        let coarse = time_grid(0.37, 7);
        let fine = time_grid(0.37, 14);
        for (i, t) in coarse.iter().enumerate() {
            assert_eq!(fine[2 * i].to_bits(), t.to_bits());
        }
        assert_eq!(coarse[0], 0.37);
        assert_eq!(*coarse.last().unwrap(), 1.0);
    }

    #[test]
    fn zero_velocity_prediction_is_current_time() {
        let mut s = store(3, 2, 2);
        zero_output(&mut s);
        let tape = Tape::new();
        let m = ModelVars::bind(&tape, &s).unwrap();
        let net = VelocityNet::new(&m, &eye(3));
        let h1 = tape.constant(Tensor::vector(vec![0.5, 0.5]));
        let scale = TimeScale { origin: 0.0, span: 10.0 };
        let p = predict_infection_time(&net, 2, h1, &[0.0, 0.0], 0.4, scale, 16, 4, Encounter::Argmin).unwrap();
        assert_eq!(p.t_sys, 0.4);
        assert_eq!(p.grid_index, 0);
        assert!((p.wall_clock - 4.0).abs() < 1e-12);
        assert!((p.min_distance - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
