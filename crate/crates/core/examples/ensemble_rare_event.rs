//! Parallel ensemble estimate of P(x(T) >= 0.9) for a few channel counts.
//! The estimate decays roughly like exp(-N J*).

use pdmp_ldp::calcium::{calcium_model, CalciumParams};
use pdmp_ldp::simulate::SimulationOptions;
use pdmp_ldp::{fixed_point, hitting_exponent, simulate_ensemble};

fn main() -> pdmp_ldp::Result<()> {
    let params = CalciumParams::default();
    let model = calcium_model(&params)?;
    let fp = fixed_point(&model, model.x0(), model.u0())?;
    // 3/4 lies on the lattice of every N below, and close to x*.
    let model = model.with_initial_state(vec![0.75], fp.u.clone())?;
    let (horizon, target) = (2.0, 0.9);

    let j = hitting_exponent(&model, &[target], horizon)?.j_star;
    println!("x* = {:.4}, J* = {j:.5}", fp.x[0]);
    for n in [20, 40, 80] {
        let report = simulate_ensemble(
            &model.clone().with_scale(n)?,
            horizon,
            20_000,
            7,
            |p| p.terminal.x[0] >= target,
            &SimulationOptions::terminal_only(),
        )?;
        println!(
            "N = {n:3}: {:5} hits, P = {:.3e}, -log(P)/N = {:.5}",
            report.hits, report.probability, report.minus_log_p_over_n
        );
    }
    Ok(())
}
