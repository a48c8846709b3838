use std::rc::Rc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rode_core::numerics::gradcheck::check_gradients;
use rode_core::numerics::{CsrMatrix, Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-9;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
}

#[test]
fn quadratic_gradient() {
    let tape = Tape::new();
    let w = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let loss = w.mul(w).sum();
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(w).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn sigmoid_at_zero() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::scalar(0.0));
    let y = x.sigmoid();
    assert_eq!(y.item(), 0.5);
    let g = tape.backward(y).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 0.25);
}

#[test]
fn backward_needs_scalar() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(tape.backward(x.sigmoid()).is_err());
}

#[test]
fn named_params_collect_gradients() {
    let tape = Tape::new();
    let a = tape.param("a", Tensor::vector(vec![3.0]));
    let _unused = tape.param("b", Tensor::vector(vec![1.0, 1.0]));
    let loss = a.square().sum();
    let grads = tape.backward(loss).unwrap().by_name();
    assert_eq!(grads["a"].data(), &[6.0]);
    assert_eq!(grads["b"].data(), &[0.0, 0.0]);
}

#[test]
fn no_grad_tape_records_constants() {
    let tape = Tape::no_grad();
    let a = tape.param("a", Tensor::vector(vec![3.0]));
    assert!(!a.requires_grad());
    let grads = tape.backward(a.square().sum()).unwrap().by_name();
    assert!(grads.is_empty());
}

#[test]
fn masked_softmax_zeroes_masked_entries() {
    let tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 5.0, 0.0]));
    let mask = Rc::new(vec![false, true, false]);
    let p = x.masked_softmax(mask.clone());
    let pv = p.to_tensor();
    assert_eq!(pv.data()[1], 0.0);
    assert!((pv.data()[0] - std::f64::consts::E / (std::f64::consts::E + 1.0)).abs() < 1e-15);
    let lp = x.masked_log_softmax(mask);
    assert_eq!(lp.value().data()[1], f64::NEG_INFINITY);
}

/// One composite that touches every primitive on the tape.
fn kitchen_sink<'t>(tape: &'t Tape, v: &[Var<'t>]) -> Var<'t> {
    let (x, w1, w2, b, s) = (v[0], v[1], v[2], v[3], v[4]);
    let h1 = x.matmul(w1).add_row(b).tanh();
    let h2 = h1.matmul(w2).sigmoid();
    let h3 = h2.relu().add(h2.cos()).sub(h2.scale(0.3)).add_const(0.5);
    let ratio = h3.div(h2.exp());
    let rows = ratio.gather_rows(&[2, 0, 2]);
    let stacked = tape.stack_rows(&[rows.row(0), rows.row(1)]);
    let joined = stacked.concat_cols(stacked.square()).concat_rows(rows.concat_cols(rows.sqrt()));
    let scaled = joined.scale_rows(Rc::new(vec![1.0, -2.0, 0.5, 3.0, 1.5])).mul_scalar(s).div_scalar(s.add_const(3.0));
    let replaced = scaled.replace_rows(&[(1, h2.row(1).concat_cols(h2.row(0)))]);
    let sp = Rc::new(CsrMatrix::from_rows(5, &[vec![(0, 1.0), (4, 0.5)], vec![(2, -1.0)]]));
    let sparse = tape.sparse_matmul(sp, replaced);
    let norms = replaced.row_norms_floor(1e-8);
    let logits = norms.reshape(&[5]);
    let lsm = logits.masked_log_softmax(Rc::new(vec![false, true, false, false, false]));
    let sm = logits.masked_softmax(Rc::new(vec![false, false, true, false, false]));
    let picked = lsm.element(3).add(sm.element(0));
    let sc = tape.scatter(2, 2, &[(0, 0, picked, 0), (1, 1, s, 0), (0, 1, norms, 2)]);
    let mc = sc.mul_const(Rc::new(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0])));
    let logged = mc.square().add_const(1.0).ln().sum();
    logged
        .add(sparse.sum_sq())
        .add(sparse.mean())
        .add(norms.sum())
        .add(s.neg().exp())
}

#[test]
fn composite_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let inputs = vec![
            random(&mut rng, 3, 4, -1.0, 1.0),
            random(&mut rng, 4, 3, -1.0, 1.0),
            random(&mut rng, 3, 2, -1.0, 1.0),
            random(&mut rng, 1, 3, -0.5, 0.5),
            Tensor::scalar(rng.gen_range(0.5..2.0)),
        ];
        let report = check_gradients(&inputs, H, FLOOR, kitchen_sink);
        assert!(report.worst_rel_error < TOL, "{report:?}");
    }
}

#[test]
fn three_layer_network_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        random(&mut rng, 5, 3, -1.0, 1.0),
        random(&mut rng, 3, 6, -1.0, 1.0),
        random(&mut rng, 6, 6, -1.0, 1.0),
        random(&mut rng, 6, 1, -1.0, 1.0),
    ];
    let report = check_gradients(&inputs, H, FLOOR, |_, v| {
        v[0].matmul(v[1]).tanh().matmul(v[2]).relu().matmul(v[3]).sigmoid().sum_sq()
    });
    assert!(report.worst_rel_error < TOL, "{report:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unary_primitives_match_finite_differences(vals in proptest::collection::vec(0.1f64..3.0, 1..6), op in 0usize..8) {
        let x = Tensor::vector(vals);
        let report = check_gradients(&[x], H, FLOOR, |_, v| {
            let y = match op {
                0 => v[0].sigmoid(),
                1 => v[0].tanh(),
                2 => v[0].relu(),
                3 => v[0].cos(),
                4 => v[0].exp(),
                5 => v[0].ln(),
                6 => v[0].square(),
                _ => v[0].sqrt(),
            };
            y.mul(v[0]).sum()
        });
        prop_assert!(report.worst_rel_error < TOL, "{:?}", report);
    }

    #[test]
    fn binary_primitives_match_finite_differences(
        a in proptest::collection::vec(-2.0f64..2.0, 4),
        b in proptest::collection::vec(0.5f64..2.0, 4),
        op in 0usize..5,
    ) {
        let inputs = [Tensor::matrix(2, 2, a), Tensor::matrix(2, 2, b)];
        let report = check_gradients(&inputs, H, FLOOR, |_, v| {
            let y = match op {
                0 => v[0].add(v[1]),
                1 => v[0].sub(v[1]),
                2 => v[0].mul(v[1]),
                3 => v[0].div(v[1]),
                _ => v[0].matmul(v[1]),
            };
            y.sum_sq()
        });
        prop_assert!(report.worst_rel_error < TOL, "{:?}", report);
    }
}
