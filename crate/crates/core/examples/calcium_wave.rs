//! Spark-to-wave experiment: exponent of reaching a given open fraction as
//! the target is raised, with a small Monte Carlo comparison.

use pdmp_ldp::calcium::{wave_transition_experiment, CalciumParams, MonteCarloOptions, WaveOptions};

fn main() -> pdmp_ldp::Result<()> {
    let mut params = CalciumParams {
        horizon: 2.0,
        ..Default::default()
    };
    for target in [0.8, 0.85, 0.9, 0.95] {
        params.x_target = target;
        let r = wave_transition_experiment(&params, &WaveOptions::default())?;
        println!("x_target {target:.2}: J* = {:.5}, N J* = {:.2}", r.j_star, r.exponent);
    }

    params.x_target = 0.85;
    let options = WaveOptions {
        monte_carlo: Some(MonteCarloOptions {
            sizes: vec![20, 40, 80],
            trials: 10_000,
            seed: 1,
        }),
        ..Default::default()
    };
    let r = wave_transition_experiment(&params, &options)?;
    for row in &r.monte_carlo {
        println!("N = {:3}: P = {:.3e}, -log(P)/N = {:.5}", row.n, row.probability, row.minus_log_p_over_n);
    }
    println!("J* = {:.5}, Monte Carlo slope {:.5}", r.j_star, r.monte_carlo_slope.unwrap_or(f64::NAN));
    Ok(())
}
