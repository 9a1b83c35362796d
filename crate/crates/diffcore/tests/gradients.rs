//! Finite-difference checks for every differentiable op, plus the
//! double-backward path used by gradient penalties.

use diffcore::{grad_check, Result, Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum so that every output element gets a distinct cotangent.
fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = tape.constant(random(tape.shape(y), seed ^ 0xabc));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check(name: &str, x: &Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Result<Var>) {
    let err = grad_check(|t, v| f(t, v).and_then(|y| probe(t, y, 9)), x, EPS).unwrap();
    assert!(err < TOL, "{name}: relative error {err}");
}

#[test]
fn unary_ops() {
    use diffcore::ops::Unary::*;
    // keep away from the kink of leaky relu and the pole of ln
    let x = random(&[4, 5], 1).map(|v| if v.abs() < 0.05 { v + 0.2 } else { v });
    let pos = x.map(|v| v.abs() + 0.1);
    for f in [Neg, Sin, Cos, Exp, Tanh, Sigmoid, Softplus, LeakyRelu(0.2), Square, Scale(-2.5), AddScalar(3.0)] {
        check(&format!("{f:?}"), &x, |t, v| Ok(t.unary(v, f)));
    }
    for f in [Ln, Sqrt, Powf(-0.5)] {
        check(&format!("{f:?}"), &pos, |t, v| Ok(t.unary(v, f)));
    }
}

#[test]
fn binary_ops_with_broadcast() {
    let a = random(&[3, 4], 2);
    let b_row = random(&[4], 3);
    let b_col = random(&[3, 1], 4).map(|v| v.abs() + 0.5);
    for (name, op) in [
        ("add", diffcore::ops::Binary::Add),
        ("sub", diffcore::ops::Binary::Sub),
        ("mul", diffcore::ops::Binary::Mul),
        ("div", diffcore::ops::Binary::Div),
    ] {
        check(&format!("{name} lhs"), &a, |t, v| {
            let b = t.constant(b_col.clone());
            t.binary(v, b, op)
        });
        let denom = b_col.clone();
        check(&format!("{name} rhs col"), &denom, |t, v| {
            let a = t.constant(a.clone());
            t.binary(a, v, op)
        });
        if op != diffcore::ops::Binary::Div {
            check(&format!("{name} rhs row"), &b_row, |t, v| {
                let a = t.constant(a.clone());
                t.binary(a, v, op)
            });
        }
    }
}

#[test]
fn reductions_and_shapes() {
    let x = random(&[2, 3, 4], 5);
    check("sum_axis", &x, |t, v| t.sum_axis_keep(v, 1));
    check("mean", &x, |t, v| Ok(t.mean(v)));
    check("broadcast_to", &random(&[3, 1], 6), |t, v| t.broadcast_to(v, &[2, 3, 4]));
    check("permute", &x, |t, v| t.permute(v, &[1, 2, 0]));
    check("reshape", &x, |t, v| t.reshape(v, &[6, 4]));
    check("narrow", &x, |t, v| t.narrow(v, 2, 1, 2));
    check("concat", &x, |t, v| {
        let c = t.constant(random(&[2, 3, 2], 7));
        t.concat(&[c, v, c], 2)
    });
}

#[test]
fn matmul_all_transpositions() {
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a_shape = if ta { [4, 3] } else { [3, 4] };
        let b_shape = if tb { [5, 4] } else { [4, 5] };
        let a = random(&a_shape, 8);
        let b = random(&b_shape, 9);
        check("matmul lhs", &a, |t, v| {
            let bv = t.constant(b.clone());
            t.matmul_t(v, bv, ta, tb)
        });
        check("matmul rhs", &b, |t, v| {
            let av = t.constant(a.clone());
            t.matmul_t(av, v, ta, tb)
        });
    }
}

#[test]
fn linear_layer() {
    let x = random(&[2, 3, 4], 10);
    let w = random(&[5, 4], 11);
    let b = random(&[5], 12);
    check("linear x", &x, |t, v| {
        let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
        t.linear(v, wv, Some(bv))
    });
    check("linear w", &w, |t, v| {
        let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
        t.linear(xv, v, Some(bv))
    });
    check("linear b", &b, |t, v| {
        let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
        t.linear(xv, wv, Some(v))
    });
}

#[test]
fn conv2d_and_conv3d() {
    for (dims, xs, ws) in [
        (2usize, vec![2, 4, 3], vec![3, 2, 3, 3]),
        (2, vec![3, 4, 4], vec![2, 3, 1, 1]),
        (3, vec![2, 3, 2, 3], vec![2, 2, 3, 3, 3]),
        (3, vec![2, 2, 2, 2], vec![3, 2, 1, 1, 1]),
    ] {
        let x = random(&xs, 13);
        let w = random(&ws, 14);
        let b = random(&[ws[0]], 15);
        check("conv x", &x, |t, v| {
            let (wv, bv) = (t.constant(w.clone()), t.constant(b.clone()));
            t.conv(v, wv, Some(bv), dims)
        });
        check("conv w", &w, |t, v| {
            let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
            t.conv(xv, v, Some(bv), dims)
        });
        check("conv b", &b, |t, v| {
            let (xv, wv) = (t.constant(x.clone()), t.constant(w.clone()));
            t.conv(xv, wv, Some(v), dims)
        });
    }
}

#[test]
fn resampling_and_norm() {
    check("upsample2d", &random(&[2, 3, 2], 16), |t, v| t.upsample_nearest(v, 2, 2));
    check("upsample3d", &random(&[1, 2, 2, 3], 17), |t, v| t.upsample_nearest(v, 2, 3));
    check("avgpool2d", &random(&[2, 4, 4], 18), |t, v| t.avg_pool(v, 2, 2));
    check("avgpool3d", &random(&[1, 2, 4, 2], 19), |t, v| t.avg_pool(v, 2, 3));
    check("flip_transpose", &random(&[2, 3, 3, 3], 20), |t, v| t.flip_transpose(v));
    check("instance_norm", &random(&[3, 4, 5], 21), |t, v| t.instance_norm(v, 1e-8));
}

/// Small discriminator-like function used to exercise `grad_graph`.
fn critic(t: &mut Tape<f64>, x: Var, w1: Var, w2: Var, head: Var) -> Result<Var> {
    let h = t.conv(x, w1, None, 2)?;
    let h = t.lrelu(h);
    let h = t.avg_pool(h, 2, 2)?;
    let h = t.conv(h, w2, None, 2)?;
    let h = t.softplus(h);
    let n = t.value(h).numel();
    let h = t.reshape(h, &[n])?;
    let s = t.linear(h, head, None)?;
    let s = t.tanh(s);
    Ok(t.sum(s))
}

#[test]
fn grad_graph_matches_numeric_gradient() {
    let x = random(&[2, 4, 4], 22);
    let w1 = random(&[3, 2, 3, 3], 23);
    let w2 = random(&[2, 3, 1, 1], 24);
    let head = random(&[1, 8], 25);
    let mut tape = Tape::<f64>::new();
    let xv = tape.leaf(x.clone(), true);
    let (a, b, c) = (tape.constant(w1), tape.constant(w2), tape.constant(head));
    let s = critic(&mut tape, xv, a, b, c).unwrap();
    let numeric = tape.backward(s).unwrap().get(xv).unwrap().clone();
    let g = tape.grad_graph(s, &[xv]).unwrap()[0];
    let recorded = tape.value(g);
    for (p, q) in numeric.data().iter().zip(recorded.data()) {
        assert!((p - q).abs() < 1e-12);
    }
}

#[test]
fn gradient_penalty_second_order() {
    let x = random(&[2, 4, 4], 26);
    let w1 = random(&[3, 2, 3, 3], 27);
    let w2 = random(&[2, 3, 1, 1], 28);
    let head = random(&[1, 8], 29);
    let penalty = |which: usize| {
        let (x, w1, w2, head) = (x.clone(), w1.clone(), w2.clone(), head.clone());
        move |t: &mut Tape<f64>, v: Var| -> Result<Var> {
            let xv = t.leaf(x.clone(), true);
            let a = if which == 0 { v } else { t.constant(w1.clone()) };
            let b = if which == 1 { v } else { t.constant(w2.clone()) };
            let c = if which == 2 { v } else { t.constant(head.clone()) };
            let s = critic(t, xv, a, b, c)?;
            let g = t.grad_graph(s, &[xv])?[0];
            let sq = t.square(g);
            Ok(t.sum(sq))
        }
    };
    assert!(grad_check(penalty(0), &w1, EPS).unwrap() < TOL);
    assert!(grad_check(penalty(1), &w2, EPS).unwrap() < TOL);
    assert!(grad_check(penalty(2), &head, EPS).unwrap() < TOL);
}

#[test]
fn grad_graph_reports_unsupported_ops() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(random(&[2, 3, 3], 30), true);
    let n = tape.instance_norm(x, 1e-8).unwrap();
    let s = tape.sum(n);
    assert!(tape.grad_graph(s, &[x]).is_err());
}

proptest! {
    #[test]
    fn upsample_then_subsample_is_identity(c in 1usize..3, h in 1usize..5, w in 1usize..5, seed in 0u64..1000) {
        let x = random(&[c, h, w], seed);
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(x.clone());
        let up = tape.upsample_nearest(v, 2, 2).unwrap();
        let u = tape.value(up);
        for ci in 0..c {
            for i in 0..h {
                for j in 0..w {
                    prop_assert_eq!(u.at(&[ci, 2 * i, 2 * j]), x.at(&[ci, i, j]));
                }
            }
        }
    }

    #[test]
    fn random_small_convs_pass_grad_check(cin in 1usize..3, cout in 1usize..3, h in 1usize..4, w in 1usize..4, k in prop::sample::select(vec![1usize, 3]), seed in 0u64..1000) {
        let x = random(&[cin, h, w], seed);
        let wt = random(&[cout, cin, k, k], seed + 1);
        let err = grad_check(|t, v| {
            let wv = t.constant(wt.clone());
            let y = t.conv(v, wv, None, 2)?;
            probe(t, y, seed)
        }, &x, EPS).unwrap();
        prop_assert!(err < TOL);
    }
}
