//! Single-shape overfit on a built-in fixture, printing fit metrics as it goes.
//!
//! cargo run --release -p xgen-net --example overfit -- sphere 5000

use std::time::Instant;

use xgen_core::fixtures;
use xgen_net::data::{prepare_shape, PrepareConfig, TrainingShape};
use xgen_net::infer::{fit_metrics, Predictor};
use xgen_net::train::{Control, RunOptions};
use xgen_net::{NetworkConfig, TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let name = args.get(1).map(String::as_str).unwrap_or("sphere");
    let steps: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let mesh = match name {
        "sphere" => fixtures::icosphere(0.35, 4),
        "cylinder" => fixtures::cylinder(0.25, 0.6, 64, 24, true),
        "cube" => fixtures::cube(0.6, 16),
        "torus" => fixtures::torus(0.3, 0.1, 64, 24),
        other => return Err(format!("unknown fixture {other}").into()),
    };
    let t = Instant::now();
    let prepared = prepare_shape(&mesh, &PrepareConfig::default(), 7)?;
    println!("prepared in {:.1}s", t.elapsed().as_secs_f64());
    let shape = TrainingShape::from((name.to_string(), prepared));
    let cloud = shape.samples.surface.cloud();
    let train = TrainConfig {
        batch_size: 1,
        max_steps: steps,
        rotate: false,
        max_point_drop: 0.0,
        ..Default::default()
    };
    let mut trainer = Trainer::new(NetworkConfig::default(), train, String::new())?;
    println!("{} parameters", trainer.params.scalar_count());
    let start = Instant::now();
    let shapes = vec![shape];
    trainer.run(&shapes, &RunOptions::default(), |tr, loss| {
        if tr.step % 250 == 0 {
            let p = Predictor::new(tr.network.clone(), tr.params.clone());
            let m = fit_metrics(&p, &shapes[0], &cloud, 4096, 1).unwrap();
            println!(
                "step {:5} {:7.1}s loss {:.5} occ {:.4} cf {:.4} sdf {:.5} kl {:.3} | AE {:.4} MAE {:.5} degenerate {}",
                tr.step,
                start.elapsed().as_secs_f64(),
                loss.total,
                loss.occupancy,
                loss.cross_field,
                loss.sdf,
                loss.kl,
                m.angular_error,
                m.sdf_mae,
                m.degenerate
            );
        }
        Control::Continue
    })?;
    Ok(())
}
