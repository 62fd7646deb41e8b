//! Regenerates the bundled default case next to the feeder file:
//! `prices_demand.csv` and `error_history.csv`.
//!
//! cargo run --example make_case

use std::fmt::Write as _;
use std::path::Path;

use feedersched::grid::{aggregate_demand, parse_feeder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const DAYS: usize = 60;
const SEED: u64 = 20_240_611;
const PV_PEAK_KW: f64 = 1200.0;

/// Relative demand forecast error: (weight, mean, std).
const ERROR_MIXTURE: [(f64, f64, f64); 2] = [(0.7, -0.01, 0.02), (0.3, 0.04, 0.03)];

fn pv_forecast(hour: usize) -> f64 {
    // Hour labels run 1..=24; output is centred on 13:00 and zero at night.
    let h = hour as f64;
    if !(6.0..=20.0).contains(&h) {
        return 0.0;
    }
    let shape = (-(h - 13.0).powi(2) / (2.0 * 2.5f64.powi(2))).exp();
    (PV_PEAK_KW * shape * 10.0).round() / 10.0
}

fn day_ahead_price(hour: usize) -> f64 {
    let h = hour as f64;
    let evening = (-(h - 19.0).powi(2) / 8.0).exp();
    let midday = (-(h - 12.0).powi(2) / 18.0).exp();
    let c = 0.045 + 0.035 * evening + 0.015 * midday;
    (c * 10_000.0).round() / 10_000.0
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let net = parse_feeder(&std::fs::read_to_string(data.join("ieee123.feeder"))?)?;

    let mut prices = String::from("hour,c_da,c_rt,c_pv,c_s,g_dl,g_pv_forecast\n");
    let mut demand = Vec::new();
    for t in 0..net.horizon() {
        let (p, _) = aggregate_demand(&net, t)?;
        let p = (p * 10.0).round() / 10.0;
        demand.push(p);
        let c_da = day_ahead_price(t + 1);
        let c_rt = ((1.5 + 10.0 * (c_da - 0.045)) * 10_000.0).round() / 10_000.0;
        writeln!(
            prices,
            "{},{c_da},{c_rt},0.03,0.02,{p},{}",
            t + 1,
            pv_forecast(t + 1)
        )?;
    }
    std::fs::write(data.join("prices_demand.csv"), prices)?;

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let normals: Vec<Normal<f64>> = ERROR_MIXTURE
        .iter()
        .map(|&(_, m, s)| Normal::new(m, s))
        .collect::<Result<_, _>>()?;
    let mut history = String::from("timestamp,forecast,actual\n");
    for day in 0..DAYS {
        for (hour, &forecast) in demand.iter().enumerate() {
            let k = usize::from(rng.random::<f64>() >= ERROR_MIXTURE[0].0);
            let e = normals[k].sample(&mut rng);
            let actual = forecast * (1.0 + e);
            writeln!(
                history,
                "2024-{:02}-{:02} {hour:02}:00,{forecast},{actual:.6}",
                3 + day / 31,
                1 + day % 31
            )?;
        }
    }
    std::fs::write(data.join("error_history.csv"), history)?;
    Ok(())
}
