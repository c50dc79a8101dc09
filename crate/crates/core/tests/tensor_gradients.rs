//! Every differentiable tape op checked against central differences on
//! random inputs.

use std::sync::Arc;

use cpsde::tensor::{finite_difference_check, ParamSet, Tape, Tensor, Var};
use cpsde::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.5..1.5)).collect(),
    )
    .unwrap()
}

/// Contracts an arbitrary-shaped output to a scalar with fixed random weights
/// so that every output element carries a distinct cotangent.
fn contract(tape: &mut Tape, v: Var) -> Result<Var> {
    let n: usize = tape.value(v).len();
    let shape = tape.shape(v).to_vec();
    let weights: Vec<f64> = (0..n)
        .map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4)
        .collect();
    let w = tape.constant(Tensor::new(shape, weights)?);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

fn check(name: &str, params: ParamSet, f: impl Fn(&mut Tape, &ParamSet) -> Result<Var>) {
    let report = finite_difference_check(&params, 1e-6, |tape, p| {
        let out = f(tape, p)?;
        contract(tape, out)
    })
    .unwrap();
    assert!(report.passes(1e-5), "{name}: {report:?}");
}

#[test]
fn all_ops_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamSet::new();
    ps.insert("a", random(&mut rng, &[4, 3]));
    ps.insert("b", random(&mut rng, &[3, 5]));
    ps.insert("c", random(&mut rng, &[4, 3]));
    ps.insert("r", random(&mut rng, &[3]));
    ps.insert("s", random(&mut rng, &[4, 1]));
    ps.insert("x", random(&mut rng, &[6, 3]));

    check("matmul", ps.clone(), |t, p| {
        let a = t.param(p, "a")?;
        let b = t.param(p, "b")?;
        t.matmul(a, b)
    });
    check("add/sub/mul", ps.clone(), |t, p| {
        let a = t.param(p, "a")?;
        let c = t.param(p, "c")?;
        let s = t.add(a, c)?;
        let d = t.sub(s, c)?;
        let e = t.mul(d, c)?;
        Ok(t.scale(e, 1.7))
    });
    check("add_row/mul_col", ps.clone(), |t, p| {
        let a = t.param(p, "a")?;
        let r = t.param(p, "r")?;
        let s = t.param(p, "s")?;
        let x = t.add_row(a, r)?;
        t.mul_col(x, s)
    });
    check("silu/square", ps.clone(), |t, p| {
        let a = t.param(p, "a")?;
        let s = t.silu(a);
        Ok(t.square(s))
    });
    check("concat/gather/segment", ps.clone(), |t, p| {
        let a = t.param(p, "a")?;
        let c = t.param(p, "c")?;
        let cat = t.concat(&[a, c, a])?;
        let stacked = t.concat_rows(&[cat, cat])?;
        let g = t.gather_rows(stacked, Arc::from(vec![3, 0, 7, 2, 1, 5, 2]))?;
        t.segment_sum(g, Arc::from(vec![1, 0, 2, 2, 1, 0, 1]), 3)
    });
    check("softmax/log_softmax", ps.clone(), |t, p| {
        let b = t.param(p, "b")?;
        let sm = t.softmax(b)?;
        let ls = t.log_softmax(b)?;
        t.add(sm, ls)
    });
    check("norm/rbf/clip", ps.clone(), |t, p| {
        let x = t.param(p, "x")?;
        let n = t.norm_rows(x)?;
        let r = t.rbf(n, Arc::from(vec![0.0, 0.7, 1.4, 2.1]), 1.3)?;
        let cl = t.clip_norm_rows(x, 1.1)?;
        let nr = t.norm_rows(cl)?;
        let rr = t.mul_col(r, nr)?;
        Ok(rr)
    });
    check("pick/mean", ps, |t, p| {
        let b = t.param(p, "b")?;
        let ls = t.log_softmax(b)?;
        let picked = t.pick_cols(ls, Arc::from(vec![4, 0, 2]))?;
        let m = t.mean(picked);
        let s = t.sum(b);
        let sc = t.scale(s, 0.01);
        t.add(m, sc)
    });
}

#[test]
fn segment_sum_is_permutation_invariant_within_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = rng.random_range(2..12);
        let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let segs: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let run = |order: &[usize]| {
            let mut tape = Tape::new();
            let v = tape.constant(
                Tensor::new(vec![n, 1], order.iter().map(|&i| vals[i]).collect()).unwrap(),
            );
            let s = tape
                .segment_sum(v, order.iter().map(|&i| segs[i]).collect(), 3)
                .unwrap();
            tape.value(s).to_vec()
        };
        let a = run(&(0..n).collect::<Vec<_>>());
        let b = run(&perm);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
