//! Rough timings for bandwidth selection and the estimator on synthetic data.
//!
//! `cargo run --release --example timing -- 50000 [--fixed]`

use std::time::Instant;

use detcal::kde::{estimate_ce, select_bandwidth, Execution, KdeConfig};
use detcal::synth::{generate, SynthConfig};

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10_000);
    let data = generate(&SynthConfig::new(n, 0.6, 0.6, 0)).expect("valid config");
    let samples: Vec<_> = data.iter().map(|d| d.threshold_sample()).collect();

    let mut bandwidths = vec![0.05, 0.5];
    if std::env::args().nth(2).as_deref() != Some("--fixed") {
        let start = Instant::now();
        let b = select_bandwidth(&samples, &KdeConfig::new(1.0)).expect("bandwidth");
        println!("n = {n}: LOO-MLE bandwidth {b:.5} in {:.2?}", start.elapsed());
        bandwidths.insert(0, b);
    }

    for bandwidth in bandwidths {
        let cfg = KdeConfig::new(bandwidth).with_execution(Execution::Sequential);
        let start = Instant::now();
        let ce = estimate_ce(&samples, &cfg).expect("estimate");
        println!("  b = {bandwidth:.5}: CE {:.6} in {:.2?}", ce.value, start.elapsed());
    }
}
