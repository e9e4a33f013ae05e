//! Pilot runs used to calibrate the recognition-rate floors.
//!
//! `cargo run --release --example pilot`

use std::time::Instant;

use l1ns::eval::{generate_instance, sweep_dimension, sweep_nback, EvalSet, SweepOptions, SyntheticSpec};
use l1ns::{SearchConfig, SolverOptions};

fn main() -> l1ns::Result<()> {
    let opts = SolverOptions::default();

    let t = Instant::now();
    let spec: SyntheticSpec = "n=38,r=9,D=2000,eta=3,queries=100,seed=1".parse()?;
    let set = EvalSet::from_instance(generate_instance(&spec)?, &opts)?;
    println!("strong-gap instance: {:.1}s, mean eta {:.3}", t.elapsed().as_secs_f64(), set.mean_eta());
    let mut rates = Vec::new();
    let t = Instant::now();
    for seed in 0..20 {
        let tmpl = SearchConfig::new(1).with_seed(seed);
        let res = sweep_dimension(&set, &[5, 15, 25, 33, 50], &tmpl, SweepOptions::default())?;
        rates.push(res.rows.iter().map(|r| r.success_rate).collect::<Vec<_>>());
    }
    println!("20 sweeps: {:.1}s", t.elapsed().as_secs_f64());
    for (i, d) in [5, 15, 25, 33, 50].iter().enumerate() {
        let v: Vec<f64> = rates.iter().map(|r| r[i]).collect();
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        println!("d={d}: mean {mean:.3} min {min:.3}");
    }

    let t = Instant::now();
    let spec: SyntheticSpec = "n=38,r=9,D=2000,eta=1.1,eta_max=1.3,queries=100,seed=2".parse()?;
    let set = EvalSet::from_instance(generate_instance(&spec)?, &opts)?;
    println!("weak-gap instance: {:.1}s, mean eta {:.3}", t.elapsed().as_secs_f64(), set.mean_eta());
    for seed in 0..5 {
        let tmpl = SearchConfig::new(1).with_seed(seed);
        let res = sweep_nback(&set, &[25, 70], &[5, 10], &tmpl, SweepOptions::default())?;
        let a = res.row(25, 5).unwrap().recall;
        let b = res.row(70, 10).unwrap().recall;
        println!("seed {seed}: recall(25,5)={a:.2} recall(70,10)={b:.2}");
    }
    Ok(())
}
