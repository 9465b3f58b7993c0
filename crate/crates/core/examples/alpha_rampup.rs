//! Prints the EMA decay ramp-up for E = 5 epochs over a corpus with
//! T = 33,000 steps and draws it as a text plot.

use relex_sef::self_ensemble::AlphaSchedule;

fn main() -> relex_sef::Result<()> {
    let schedule = AlphaSchedule::new(5, 330_000, 50, 0.9)?;
    let t = schedule.ramp_steps();
    println!("T = {t} steps");
    for i in 0..=24 {
        let step = t * i / 20;
        let alpha = schedule.alpha(step);
        let bar = "#".repeat((alpha * 60.0).round() as usize);
        println!("{step:>6} {alpha:.4} {bar}");
    }
    Ok(())
}
