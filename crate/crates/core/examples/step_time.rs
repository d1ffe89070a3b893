//! Times training iterations on synthetic data: `step_time [base_channels] [batch] [steps]`.

use std::time::Instant;

use c3gan::data::synth_shapes;
use c3gan::trainer::Trainer;
use c3gan::{Rng, RunConfig};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let base = args.first().copied().unwrap_or(64);
    let batch = args.get(1).copied().unwrap_or(32);
    let steps = args.get(2).copied().unwrap_or(3) as u64;
    let cfg = RunConfig {
        num_clusters: 4,
        overcluster_factor: 2,
        image_size: 64,
        base_channels: base,
        d_h: base,
        batch_size: batch,
        ..RunConfig::default()
    };
    let data = synth_shapes(4, 16, 64, &Rng::seed_from(1)).unwrap().dataset().unwrap();
    let trainer = Trainer::new(&cfg);
    let mut state = trainer.init_state();
    println!("params: G {} D {}", state.generator.num_params(), state.discriminator.num_params());
    let t = Instant::now();
    trainer.train(&mut state, &data, steps, |_| Ok(())).unwrap();
    println!("base {base} batch {batch}: {:.3} s/iter", t.elapsed().as_secs_f64() / steps as f64);
}
