//! A path mapped to its unit-rate clocks and rebuilt from them.

use pdmp_ldp::calcium::{calcium_model, CalciumParams};
use pdmp_ldp::{deterministic_limit, inverse_time_rescale, time_rescale_map};

fn main() -> pdmp_ldp::Result<()> {
    let model = calcium_model(&CalciumParams::default())?;
    let path = deterministic_limit(&model, 3.0)?.sample(601)?;
    let map = time_rescale_map(&path, model.network())?;
    for (a, w) in map.paths.iter().enumerate() {
        // On the fluid limit each clock runs at unit speed: w(s) = s.
        let s = 0.5 * w.horizon();
        println!("reaction {a}: Lambda(T) = {:.6}, w(s) - s at s = {s:.3}: {:.2e}", w.horizon(), w.eval(s) - s);
    }
    let back = inverse_time_rescale(&map.paths, &model, &path.t)?;
    let err = path
        .x
        .iter()
        .zip(&back.x)
        .chain(path.u.iter().zip(&back.u))
        .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max);
    println!("round-trip sup error {err:.2e}");
    Ok(())
}
