use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relgan::autodiff::{Tape, Tensor, Var};

const H: f64 = 1e-6;

type Build = fn(&mut Tape, &[Var]) -> Var;

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Scalarizes `f(inputs)` with fixed random weights, then compares the tape
/// gradient with central differences.
fn check(name: &str, inputs: Vec<Tensor>, build: Build, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eval = |xs: &[Tensor], rng_seed: u64| -> (f64, Vec<Tensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let y = build(&mut tape, &vars);
        let w = random(&mut rng, tape.shape(y), -1.0, 1.0);
        let w = tape.constant(w);
        let p = tape.mul(y, w).unwrap();
        let s = tape.sum(p).unwrap();
        let value = tape.value(s).item();
        let grads = tape.backward(s, &vars).unwrap().into_tensors();
        (value, grads)
    };
    let wseed = rng.random();
    let (_, analytic) = eval(&inputs, wseed);
    for (k, x) in inputs.iter().enumerate() {
        for j in 0..x.len() {
            let mut up = inputs.clone();
            up[k].data_mut()[j] += H;
            let mut down = inputs.clone();
            down[k].data_mut()[j] -= H;
            let fd = (eval(&up, wseed).0 - eval(&down, wseed).0) / (2.0 * H);
            let a = analytic[k].data()[j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            assert!(err < 1e-6, "{name}: input {k}[{j}] autodiff {a} vs fd {fd}");
        }
    }
}

fn unary(name: &str, f: Build, lo: f64, hi: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64);
    check(name, vec![random(&mut rng, &[3, 4], lo, hi)], f, 7);
}

#[test]
fn elementwise_unary_ops() {
    unary("neg", |t, v| t.neg(v[0]).unwrap(), -2.0, 2.0);
    unary("scale", |t, v| t.scale(v[0], -1.7).unwrap(), -2.0, 2.0);
    unary("shift", |t, v| t.shift(v[0], 0.3).unwrap(), -2.0, 2.0);
    unary("exp", |t, v| t.exp(v[0]).unwrap(), -2.0, 2.0);
    unary("log", |t, v| t.log(v[0]).unwrap(), 0.2, 3.0);
    unary("sigmoid", |t, v| t.sigmoid(v[0]).unwrap(), -5.0, 5.0);
    unary("log_sigmoid", |t, v| t.log_sigmoid(v[0]).unwrap(), -5.0, 5.0);
    unary("tanh", |t, v| t.tanh(v[0]).unwrap(), -2.0, 2.0);
    unary("square", |t, v| t.square(v[0]).unwrap(), -2.0, 2.0);
    unary("sqrt", |t, v| t.sqrt(v[0]).unwrap(), 0.2, 3.0);
    unary("recip", |t, v| t.recip_or_zero(v[0]).unwrap(), 0.3, 3.0);
    // Kinked ops away from their kink.
    unary("relu+", |t, v| t.relu(v[0]).unwrap(), 0.1, 2.0);
    unary("relu-", |t, v| t.relu(v[0]).unwrap(), -2.0, -0.1);
    unary("leaky", |t, v| t.leaky_relu(v[0], 0.2).unwrap(), -2.0, -0.1);
    unary("max0", |t, v| t.max0(v[0]).unwrap(), 0.1, 2.0);
}

#[test]
fn reductions_and_shape_ops() {
    unary("sum", |t, v| t.sum(v[0]).unwrap(), -2.0, 2.0);
    unary("mean", |t, v| t.mean(v[0]).unwrap(), -2.0, 2.0);
    unary("sum_rows", |t, v| t.sum_rows(v[0]).unwrap(), -2.0, 2.0);
    unary("sum_cols", |t, v| t.sum_cols(v[0]).unwrap(), -2.0, 2.0);
    unary("transpose", |t, v| t.transpose(v[0]).unwrap(), -2.0, 2.0);
    unary("reshape", |t, v| t.reshape(v[0], &[2, 6]).unwrap(), -2.0, 2.0);
    unary("slice", |t, v| t.slice_cols(v[0], 1, 3).unwrap(), -2.0, 2.0);
    unary("l2_norm_rows", |t, v| t.l2_norm_rows(v[0]).unwrap(), 0.2, 2.0);
    unary("expand", |t, v| {
        let s = t.sum(v[0]).unwrap();
        t.expand(s, &[2, 2]).unwrap()
    }, -2.0, 2.0);
    unary("broadcast_rows", |t, v| {
        let r = t.sum_rows(v[0]).unwrap();
        t.broadcast_rows(r, 5).unwrap()
    }, -2.0, 2.0);
    unary("broadcast_cols", |t, v| {
        let c = t.sum_cols(v[0]).unwrap();
        t.broadcast_cols(c, 2).unwrap()
    }, -2.0, 2.0);
}

#[test]
fn binary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, &[3, 4], -2.0, 2.0);
    let b = random(&mut rng, &[3, 4], 0.5, 2.0);
    check("add", vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1]).unwrap(), 1);
    check("sub", vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]).unwrap(), 2);
    check("mul", vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]).unwrap(), 3);
    check("div", vec![a.clone(), b.clone()], |t, v| t.div(v[0], v[1]).unwrap(), 4);
    check("concat", vec![a.clone(), b], |t, v| t.concat(v[0], v[1]).unwrap(), 5);
    let m = random(&mut rng, &[4, 2], -2.0, 2.0);
    check("matmul", vec![a.clone(), m], |t, v| t.matmul(v[0], v[1]).unwrap(), 6);
    let row = random(&mut rng, &[4], -2.0, 2.0);
    check("broadcast_add_row", vec![a, row], |t, v| t.broadcast_add_row(v[0], v[1]).unwrap(), 7);
}

#[test]
fn second_order_through_recorded_gradients() {
    // d/dw of ‖∂/∂x tanh(x·w)‖² summed, checked against differences in w.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, &[5, 3], -1.0, 1.0);
    let w = random(&mut rng, &[3, 2], -1.0, 1.0);
    check(
        "grad-of-grad",
        vec![x, w],
        |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let y = t.tanh(h).unwrap();
            let y = t.log_sigmoid(y).unwrap();
            let s = t.sum(y).unwrap();
            let g = t.grad(s, &[v[0]]).unwrap()[0];
            let n = t.l2_norm_rows(g).unwrap();
            let d = t.shift(n, -1.0).unwrap();
            t.square(d).unwrap()
        },
        12,
    );
}

#[test]
fn replay_reproduces_forward_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut tape = Tape::new();
    let x = tape.leaf(random(&mut rng, &[4, 3], -1.0, 1.0));
    let w = tape.leaf(random(&mut rng, &[3, 2], -1.0, 1.0));
    let h = tape.matmul(x, w).unwrap();
    let y = tape.sigmoid(h).unwrap();
    let s = tape.mean(y).unwrap();
    let _ = tape.grad(s, &[w]).unwrap();
    let replayed = tape.replay().unwrap();
    assert_eq!(replayed.len(), tape.len());
    for v in [x, w, h, y, s] {
        assert_eq!(&replayed[v.id()], tape.value(v));
    }
}

#[test]
fn gradient_is_linear_in_the_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = random(&mut rng, &[6], -2.0, 2.0);
    let grad = |scale: f64, shift: f64| {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let y = tape.tanh(x).unwrap();
        let y = tape.sum(y).unwrap();
        let y = tape.scale(y, scale).unwrap();
        let y = tape.shift(y, shift).unwrap();
        tape.backward(y, &[x]).unwrap().into_tensors().remove(0)
    };
    let base = grad(1.0, 0.0);
    assert_eq!(grad(1.0, 5.0), base);
    let tripled = grad(3.0, 0.0);
    for (a, b) in tripled.data().iter().zip(base.data()) {
        assert!((a - 3.0 * b).abs() <= 1e-15 * a.abs().max(1.0));
    }
}
