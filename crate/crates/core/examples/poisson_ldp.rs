//! A unit-rate Poisson process: the exact tail exponent converges to ell(2),
//! which is also the optimal-path action.

use pdmp_ldp::ldp::ell;
use pdmp_ldp::{hitting_exponent, PdmpModel, ReactionNetwork};

/// `-ln P(Y >= k)` for `Y ~ Poisson(mean)`.
fn tail(mean: f64, k: u64) -> f64 {
    let mut log_term = -mean + k as f64 * mean.ln() - (1..=k).map(|j| (j as f64).ln()).sum::<f64>();
    let first = log_term;
    let mut sum = 0.0;
    for j in k.. {
        let r = (log_term - first).exp();
        sum += r;
        if r < 1e-17 * sum {
            break;
        }
        log_term += mean.ln() - ((j + 1) as f64).ln();
    }
    -(first + sum.ln())
}

fn main() -> pdmp_ldp::Result<()> {
    let target = ell(2.0)?;
    for n in [50u64, 100, 200, 400, 800] {
        let v = tail(n as f64, 2 * n) / n as f64;
        println!("N = {n:3}: -log P(Y >= 2N)/N = {v:.6} (gap {:.2e})", v - target);
    }
    let net = ReactionNetwork::builder(1, 0).reaction("arrival", vec![1], |_, _| 1.0).build()?;
    let model = PdmpModel::new(net, |_, _, _| {}, vec![0.0], vec![], 1)?;
    let j = hitting_exponent(&model, &[2.0], 1.0)?.j_star;
    println!("optimal path J* = {j:.10}, ell(2) = {target:.10}");
    Ok(())
}
