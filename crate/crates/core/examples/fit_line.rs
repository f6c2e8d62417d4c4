// Fits y = 2x − 1 with the tape autodiff and Adam.

use spix::autodiff::Graph;
use spix::optim::{Optimizer, OptimizerConfig};
use spix::params::ParameterSet;
use spix::Tensor;

pub fn run_example() -> anyhow::Result<()> {
    let xs = Tensor::from_fn(&[32, 1], |i| i as f64 / 31.0);
    let ys = xs.map(|x| 2.0 * x - 1.0);
    let mut params = ParameterSet::new();
    params.insert("w", Tensor::zeros(&[1, 1]));
    params.insert("b", Tensor::zeros(&[1]));
    let mut opt = Optimizer::new(OptimizerConfig::adam(0.05));

    let mut last = f64::INFINITY;
    for step in 0..400 {
        let mut g = Graph::new(true);
        let w = g.param(params.get("w").unwrap().clone());
        let b = g.param(params.get("b").unwrap().clone());
        let x = g.constant(xs.clone());
        let y = g.constant(ys.clone());
        let wx = g.matmul(x, w)?;
        let pred = g.add_row(wx, b)?;
        let diff = g.sub(pred, y)?;
        let sq = g.square(diff)?;
        let loss = g.mean(sq)?;
        g.backward(loss)?;
        last = g.value(loss).data()[0];
        let grads = vec![("w".to_string(), g.grad(w).unwrap()), ("b".to_string(), g.grad(b).unwrap())];
        opt.step(&mut params, &grads)?;
        if step % 100 == 0 {
            println!("step {step:>3}  loss {last:.6}");
        }
    }
    let (w, b) = (params.get("w").unwrap().data()[0], params.get("b").unwrap().data()[0]);
    println!("w = {w:.4}, b = {b:.4}, final loss {last:.2e}");
    anyhow::ensure!((w - 2.0).abs() < 0.05 && (b + 1.0).abs() < 0.05, "fit did not converge");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
