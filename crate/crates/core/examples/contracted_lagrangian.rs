//! The Lagrangian contracted onto concentration velocities, generic dual
//! Newton solve against the calcium closed form.

use pdmp_ldp::calcium::{calcium_lagrangian_derivatives, calcium_model, z1dot_quadratic, CalciumParams};
use pdmp_ldp::ldp::contract_rates;

fn main() -> pdmp_ldp::Result<()> {
    let params = CalciumParams::default();
    let model = calcium_model(&params)?;
    let (x, u) = (0.6, [1.3, 3.5]);
    let rates = model.network().rates(&[x], &u)?;
    println!("rates at x = {x}: close {:.4}, open {:.4}", rates[0], rates[1]);
    println!("{:>6} {:>12} {:>12} {:>12} {:>12}", "xdot", "L (dual)", "z1 (dual)", "z1 (closed)", "d2L/dxdot2");
    for xdot in [-1.0, -0.5, 0.0, 0.25, 1.0, 2.0] {
        let dual = contract_rates(&[xdot], &rates, model.network())?;
        let closed = z1dot_quadratic(xdot, rates[0], rates[1])?;
        let d = calcium_lagrangian_derivatives(xdot, x, &u, &params)?;
        println!(
            "{xdot:6.2} {:12.8} {:12.8} {:12.8} {:12.6}",
            dual.value.to_f64(),
            dual.fluxes[0],
            closed,
            d.d2_xdot2
        );
    }
    Ok(())
}
