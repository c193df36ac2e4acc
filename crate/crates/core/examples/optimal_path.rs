//! Optimal path from the calcium fixed point to a raised open fraction,
//! checked against direct minimization of the discretized action.

use pdmp_ldp::calcium::{calcium_model, CalciumParams};
use pdmp_ldp::optimal_path::{collocate, el_residual, CollocationOptions};
use pdmp_ldp::{fixed_point, hitting_exponent};

fn main() -> pdmp_ldp::Result<()> {
    let model = calcium_model(&CalciumParams::default())?;
    let fp = fixed_point(&model, model.x0(), model.u0())?;
    let model = model.with_initial_state(fp.x.clone(), fp.u.clone())?;
    let (horizon, target) = (5.0, [fp.x[0] + 0.15]);

    let hit = hitting_exponent(&model, &target, horizon)?;
    let path = &hit.trajectory;
    println!("J* = {:.10} (start {}, residual {:.1e})", hit.j_star, path.start, path.residual);
    println!("EL residual {:.1e}", el_residual(path, &model, 2001)?);
    println!("{:>5} {:>8} {:>8} {:>8} {:>9} {:>9}", "t", "x", "u1", "u2", "eta1", "eta2");
    for s in path.sample(11)? {
        println!(
            "{:5.2} {:8.5} {:8.5} {:8.5} {:9.5} {:9.5}",
            s.t, s.x[0], s.u[0], s.u[1], s.eta[0], s.eta[1]
        );
    }
    let direct = collocate(&model, &target, horizon, &CollocationOptions { nodes: 64, ..Default::default() })?;
    println!(
        "64-node collocation: {:.10} ({} iterations, relative gap {:.1e})",
        direct.action,
        direct.iterations,
        (direct.action - hit.j_star).abs() / hit.j_star
    );
    Ok(())
}
