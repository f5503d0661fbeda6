//! The discrete linear schedule next to the continuous VP-SDE.
//!
//! Prints `alpha_bar`, `sigma` and `g^2` at matched times. Run with
//! `cargo run --example noise_schedules`.

use diffmvae::noise_schedule::{NoiseSchedule, Timestep};

fn main() -> diffmvae::Result<()> {
    let discrete = NoiseSchedule::default_discrete();
    let continuous = NoiseSchedule::default_continuous();
    println!("{:>6} | {:>10} {:>8} {:>8} | {:>10} {:>8} {:>8}", "t/T", "abar_disc", "sigma", "g2", "abar_cont", "sigma", "g2");
    for step in [1, 50, 100, 250, 500, 750, 1000] {
        let td = Timestep::Discrete(step);
        let tc = Timestep::Continuous(discrete.network_time(td));
        println!(
            "{:>6.3} | {:>10.5} {:>8.4} {:>8.3} | {:>10.5} {:>8.4} {:>8.3}",
            discrete.network_time(td),
            discrete.alpha_bar(td)?,
            discrete.sigma(td)?,
            discrete.g_squared(td)?,
            continuous.alpha_bar(tc)?,
            continuous.sigma(tc)?,
            continuous.g_squared(tc)?,
        );
    }
    Ok(())
}
