//! One stochastic calcium trajectory next to its fluid limit.

use pdmp_ldp::calcium::{calcium_model, CalciumParams};
use pdmp_ldp::{deterministic_limit, simulate_pdmp};

fn main() -> pdmp_ldp::Result<()> {
    let params = CalciumParams {
        n: 500,
        ..Default::default()
    };
    let model = calcium_model(&params)?;
    let path = simulate_pdmp(&model, 10.0, 42)?;
    let flow = deterministic_limit(&model, 10.0)?;

    println!("{} channel events in [0, 10]", path.event_count);
    println!("{:>6} {:>8} {:>8} {:>8} {:>8}", "t", "x", "x_det", "u1", "u1_det");
    for r in (0..path.len()).step_by(64) {
        let t = path.grid[r];
        let det = flow.state(t);
        println!(
            "{t:6.2} {:8.4} {:8.4} {:8.4} {:8.4}",
            path.x_at(r)[0],
            det.x[0],
            path.u_at(r)[0],
            det.u[0]
        );
    }
    let u = &path.terminal.u;
    println!("gamma*u1 + u2 at T = {:.12}", params.gamma * u[0] + u[1]);
    Ok(())
}
