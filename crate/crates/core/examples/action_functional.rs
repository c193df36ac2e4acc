//! The action vanishes on the fluid limit, is positive off it, and is
//! infinite when a path asks a switched-off reaction to fire.

use pdmp_ldp::calcium::{calcium_model, CalciumParams};
use pdmp_ldp::{action, deterministic_limit, SmoothPath};

fn main() -> pdmp_ldp::Result<()> {
    let model = calcium_model(&CalciumParams::default())?;
    let flow = deterministic_limit(&model, 5.0)?;
    for nodes in [128, 256, 512, 1024] {
        let a = action(&flow.sample(nodes)?, &model)?;
        println!("fluid limit, {nodes:4} nodes: action {:.3e}", a.total.to_f64());
    }

    // Extra back-and-forth gating at rate 0.5: opening and closing cancel, so x and u are unchanged.
    let base = flow.sample(513)?;
    let z: Vec<Vec<f64>> = base.t.iter().zip(&base.z).map(|(&t, z)| z.iter().map(|v| v + 0.5 * t).collect()).collect();
    let busier = SmoothPath::new(base.t.clone(), z, base.x.clone(), base.u.clone())?;
    let a = action(&busier, &model)?;
    println!("extra gating: action {:.6} (per reaction {:?})", a.total.to_f64(), a.per_reaction);

    // No channels open and none may close: closing at x = 0 costs infinitely much.
    let t: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
    let u0 = model.u0().to_vec();
    let closed = SmoothPath::new(
        t.clone(),
        t.iter().map(|&s| vec![s, s]).collect(),
        vec![vec![0.0]; t.len()],
        vec![u0; t.len()],
    )?;
    let model0 = model.with_initial_state(vec![0.0], closed.u[0].clone())?;
    let a = action(&closed, &model0)?;
    println!("closing from x = 0: action {}, violations {:?}", a.total, a.violations);
    Ok(())
}
