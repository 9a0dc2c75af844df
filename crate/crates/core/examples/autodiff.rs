//! Fits a small tanh network to noisy sine data with the tape-based
//! autodiff and Adam, after checking its gradient against finite differences.
//!
//! cargo run --release --example autodiff

use cnpkit::autodiff::{grad_check, Adam, AdamConfig, Graph, NodeId, Tensor, DEFAULT_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HIDDEN: usize = 16;

fn loss(g: &mut Graph, params: &[NodeId], x: &Tensor, y: &Tensor) -> cnpkit::Result<NodeId> {
    let xs = g.constant(x.clone());
    let ys = g.constant(y.clone());
    let h = g.matmul(xs, params[0])?;
    let h = g.add(h, params[1])?;
    let h = g.tanh(h)?;
    let out = g.matmul(h, params[2])?;
    let out = g.add(out, params[3])?;
    let diff = g.sub(out, ys)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq)?;
    g.scale(total, 1.0 / x.rows() as f64)
}

fn main() -> cnpkit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 64;
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| x.sin() + 0.05 * rng.random_range(-1.0..1.0))
        .collect();
    let x = Tensor::matrix(n, 1, xs)?;
    let y = Tensor::matrix(n, 1, ys)?;

    let mut init = |rows: usize, cols: usize, scale: f64| {
        Tensor::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| scale * rng.random_range(-1.0..1.0)).collect(),
        )
    };
    let mut params = vec![
        init(1, HIDDEN, 1.0)?,
        Tensor::vector(init(1, HIDDEN, 0.5)?.into_data()),
        init(HIDDEN, 1, 0.3)?,
        Tensor::vector(vec![0.0]),
    ];

    // Gradient of the first weight block against central differences.
    let rest = params.clone();
    let report = grad_check(
        |g, w| {
            let others: Vec<NodeId> = rest[1..].iter().map(|t| g.constant(t.clone())).collect();
            loss(g, &[w, others[0], others[1], others[2]], &x, &y)
        },
        &params[0],
        DEFAULT_STEP,
    )?;
    println!("gradient check: max relative error {:.2e}", report.max_relative_error);

    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: 1e-2,
            ..AdamConfig::default()
        },
        &params,
    );
    for step in 0..=2000 {
        let mut g = Graph::new();
        let nodes: Vec<NodeId> = params.iter().map(|t| g.param(t.clone())).collect();
        let l = loss(&mut g, &nodes, &x, &y)?;
        let mut grads = g.backward(l)?;
        let grads: Vec<Tensor> = nodes.iter().map(|&id| grads.take(id).expect("leaf gradient")).collect();
        if step % 400 == 0 {
            println!("step {step:>5}  mse {:.5}", g.value(l).item());
        }
        adam.step(&mut params, &grads)?;
    }
    Ok(())
}
