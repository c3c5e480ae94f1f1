//! Fits a one-hidden-layer tanh network to sin(3x) on [-1, 1] with Adam,
//! then checks its gradients against central differences.
//!
//! cargo run --release -p partforge-autodiff --example fit_mlp

use partforge_autodiff::{
    adam_step, check_gradients, AdamConfig, AdamState, BoundParams, GradCheckConfig, ParamSet, Tape, Tensor, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HIDDEN: usize = 16;

fn init(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

fn mse(tape: &mut Tape, p: &BoundParams, x: &Tensor, y: &Tensor) -> partforge_autodiff::Result<Var> {
    let xv = tape.constant(x.clone());
    let h = tape.matmul(xv, p.get(0))?;
    let h = tape.add(h, p.get(1))?;
    let h = tape.tanh(h);
    let o = tape.matmul(h, p.get(2))?;
    let o = tape.add(o, p.get(3))?;
    let yv = tape.constant(y.clone());
    let d = tape.sub(o, yv)?;
    let sq = tape.square(d);
    tape.mean(sq)
}

fn main() -> anyhow::Result<()> {
    let n = 64;
    let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
    let x = Tensor::new(vec![n, 1], xs.clone())?;
    let y = Tensor::new(vec![n, 1], xs.iter().map(|v| (3.0 * v).sin()).collect())?;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut params = ParamSet::new();
    params.push("w1", init(&mut rng, &[1, HIDDEN], 1.5));
    params.push("b1", init(&mut rng, &[1, HIDDEN], 0.5));
    params.push("w2", init(&mut rng, &[HIDDEN, 1], 0.5));
    params.push("b2", Tensor::zeros(&[1, 1]));

    let mut state = AdamState::new(&params);
    let cfg = AdamConfig::default();
    for step in 0..=3000 {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let loss = mse(&mut tape, &p, &x, &y)?;
        let grads = tape.backward(loss)?;
        let g = p.gradients(&tape, &grads);
        if step % 500 == 0 {
            println!("step {step:5} mse {:.6}", tape.value(loss).item());
        }
        adam_step(&mut params, &g, &mut state, 1e-2, &cfg)?;
    }

    let report = check_gradients(&params, &GradCheckConfig::default(), |tape, p| mse(tape, p, &x, &y))?;
    println!(
        "gradient check: {} entries, max relative error {:.2e}",
        report.checked, report.max_rel_error
    );
    Ok(())
}
