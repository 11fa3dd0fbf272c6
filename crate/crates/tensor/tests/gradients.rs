use mrm_tensor::gradcheck::{check, op_suite, GRAD_TOL};
use mrm_tensor::{Graph, OpKind, Tensor, Var};

#[test]
fn every_differentiable_op_matches_finite_differences() {
    let reports = op_suite(None, 2024).unwrap();
    assert_eq!(reports.len(), OpKind::DIFFERENTIABLE.len());
    for r in &reports {
        assert!(r.checked > 0);
        assert!(r.max_err < GRAD_TOL, "{} worst {:.3e}", r.kind, r.max_err);
    }
}

#[test]
fn a_corrupted_rule_is_caught_for_each_op() {
    for kind in OpKind::DIFFERENTIABLE {
        let reports = op_suite(Some(kind), 2024).unwrap();
        let own = reports.iter().find(|r| r.kind == kind).unwrap();
        assert!(!own.passed(), "fault in {kind} went unnoticed ({:.3e})", own.max_err);
    }
}

#[test]
fn suite_holds_across_seeds() {
    for seed in [1, 99, 12345] {
        for r in op_suite(None, seed).unwrap() {
            assert!(r.passed(), "seed {seed}: {} worst {:.3e}", r.kind, r.max_err);
        }
    }
}

fn f(g: &mut Graph<f64>, x: Var, w: Var) -> Var {
    let y = g.conv1d(x, w, None, 1, 1).unwrap();
    let y = g.sigmoid(y).unwrap();
    g.sum(y).unwrap()
}

fn h(g: &mut Graph<f64>, x: Var, w: Var) -> Var {
    let y = g.conv1d(x, w, None, 2, 0).unwrap();
    let y = g.mul(y, y).unwrap();
    g.mean(y).unwrap()
}

fn grads(build: impl Fn(&mut Graph<f64>, Var, Var) -> Var, x: &Tensor<f64>, w: &Tensor<f64>) -> (Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::new();
    let (xv, wv) = (g.param(x.clone()), g.param(w.clone()));
    let l = build(&mut g, xv, wv);
    g.backward(l).unwrap();
    (g.grad(xv).unwrap(), g.grad(wv).unwrap())
}

#[test]
fn backward_is_linear_in_the_loss() {
    let x = Tensor::from_fn([1, 2, 6], |i| ((i * 7 % 5) as f64 - 2.0) * 0.4);
    let w = Tensor::from_fn([3, 2, 3], |i| ((i * 3 % 7) as f64 - 3.0) * 0.2);
    let (a, b) = (0.7, -2.3);
    let (fx, fw) = grads(f, &x, &w);
    let (hx, hw) = grads(h, &x, &w);
    let (cx, cw) = grads(
        |g, x, w| {
            let lf = f(g, x, w);
            let lh = h(g, x, w);
            let lf = g.scale(lf, a).unwrap();
            let lh = g.scale(lh, b).unwrap();
            g.add(lf, lh).unwrap()
        },
        &x,
        &w,
    );
    for (c, (p, q)) in cx.data().iter().zip(fx.data().iter().zip(hx.data())) {
        assert!((c - (a * p + b * q)).abs() < 1e-10);
    }
    for (c, (p, q)) in cw.data().iter().zip(fw.data().iter().zip(hw.data())) {
        assert!((c - (a * p + b * q)).abs() < 1e-10);
    }
}

#[test]
fn layernorm_example_passes_gradcheck() {
    let x = Tensor::new([1, 5], vec![0.3, -1.0, 2.0, 0.1, 0.7]).unwrap();
    let gamma = Tensor::new([5], vec![1.0, 0.5, -0.3, 2.0, 1.1]).unwrap();
    let beta = Tensor::zeros([5]);
    let r = check(&[x, gamma, beta], None, |g, v| {
        let y = g.layernorm(v[0], v[1], v[2])?;
        let y = g.mul(y, y)?;
        let y = g.sigmoid(y)?;
        g.sum(y)
    })
    .unwrap();
    assert!(r.passed(), "{:?}", r.worst);
}
