//! A user-defined network: a self-regulating gene whose production rate
//! depends on a slow, linearly relaxing protein level.

use pdmp_ldp::model::SamplingBox;
use pdmp_ldp::{fixed_point, hitting_exponent, simulate_pdmp, validate_network, PdmpModel, ReactionNetwork};

fn main() -> pdmp_ldp::Result<()> {
    let net = ReactionNetwork::builder(1, 1)
        .reaction("produce", vec![1], |_, u| 2.0 / (1.0 + u[0] * u[0]))
        .reaction("degrade", vec![-1], |x, _| x[0])
        .rate_bound(2.0 + 50.0)
        .build()?;
    let report = validate_network(&net, &SamplingBox { x: vec![(0.0, 50.0)], u: vec![(0.0, 50.0)] }, 2000)?;
    println!("validation passed: {}", report.passed);

    // The protein relaxes toward the mRNA level: u' = x - u.
    let model = PdmpModel::new(net, |u, x, a| a[0] = x[0] - u[0], vec![1.0], vec![1.0], 200)?;
    let fp = fixed_point(&model, model.x0(), model.u0())?;
    println!("fixed point x* = {:.5}, u* = {:.5}", fp.x[0], fp.u[0]);

    let path = simulate_pdmp(&model, 5.0, 3)?;
    println!("simulated x(5) = {:.3} after {} events", path.terminal.x[0], path.event_count);

    let model = model.with_initial_state(fp.x.clone(), fp.u.clone())?;
    for dx in [0.2, 0.4, 0.6] {
        let j = hitting_exponent(&model, &[fp.x[0] + dx], 3.0)?.j_star;
        println!("x(3) = x* + {dx}: J* = {j:.5}");
    }
    Ok(())
}
