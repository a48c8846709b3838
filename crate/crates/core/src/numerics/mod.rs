//! Dense tensors, reverse-mode gradients, Adam and RK4.

pub mod gradcheck;
mod ode;
mod params;
mod tape;
mod tensor;

pub use ode::{ode_solve, solve_rows, OdeState};
pub use params::{ParamStore, CHECKPOINT_HEADER};
pub use tape::{masked_logsumexp, masked_softmax, sigmoid, Gradients, Tape, Var};
pub use tensor::{CsrMatrix, Tensor};

use rand::Rng;

/// Inverted dropout: zeroes each element with probability `rate` and scales
/// survivors by `1 / (1 - rate)`. Identity when `rate == 0`.
pub fn dropout<'t, R: Rng>(x: Var<'t>, rate: f64, rng: &mut R) -> Var<'t> {
    if rate <= 0.0 {
        return x;
    }
    let shape = x.shape();
    let keep = 1.0 - rate;
    let n: usize = shape.iter().product::<usize>().max(1);
    let mask: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
    x.mul_const(std::rc::Rc::new(Tensor::new(shape, mask).expect("mask shape")))
}
