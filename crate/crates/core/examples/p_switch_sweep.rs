//! Sweeps the switching probability of the toy trainer and reports median
//! test Recall@1 and spectral decay across seeds.
//!
//! cargo run --release --example p_switch_sweep -- [seeds]

use dmlkit::toytrain::{train_toy, ToyConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> dmlkit::Result<()> {
    let seeds: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    println!("p_switch  median R@1  median rho_full  switched/run");
    for p in [0.0, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.05, 0.1] {
        let (mut r1, mut rho, mut switched) = (Vec::new(), Vec::new(), 0);
        for seed in 0..seeds {
            let cfg = ToyConfig {
                p_switch: p,
                seed,
                ..ToyConfig::default()
            };
            let run = train_toy(&cfg, p > 0.0)?;
            r1.push(run.metrics.recall_at[&1]);
            rho.push(run.spectral.rho_full);
            switched += run.switched_pairs;
        }
        println!(
            "{p:<8}  {:>10.4}  {:>15.4}  {:>12.1}",
            median(r1),
            median(rho),
            switched as f64 / seeds as f64
        );
    }
    Ok(())
}
