//! Train the supervised network on the two-class synthetic sinusoid set
//! and watch it overfit to 100% train accuracy.
//!
//! ```text
//! cargo run --release --example train_synthetic [epochs] [n] [length]
//! ```

use rtfn::data::{make_synthetic, SyntheticConfig, SyntheticKind};
use rtfn::model::{Purpose, RtfnConfig, RtfnModel};
use rtfn::rng::{self, Rng};
use rtfn::train::{train_supervised, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(Ok(200), |s| s.parse())?;
    let n: usize = args.next().map_or(Ok(16), |s| s.parse())?;
    let length: usize = args.next().map_or(Ok(32), |s| s.parse())?;
    let seed = 42;

    let mut data_rng = Rng::with_stream(seed, rng::STREAM_DATA);
    let ds = make_synthetic(
        SyntheticKind::Separable,
        n,
        &SyntheticConfig {
            length,
            ..SyntheticConfig::default()
        },
        &mut data_rng,
    )?;
    println!(
        "dataset: {} samples, {} channels, length {}",
        ds.len(),
        ds.channels(),
        ds.length()
    );

    let model_cfg = RtfnConfig {
        seed,
        ..RtfnConfig::new(ds.num_classes, ds.channels(), ds.length())
    };
    let mut init_rng = Rng::with_stream(seed, rng::STREAM_INIT);
    let mut model = RtfnModel::new(&model_cfg, Purpose::Supervised, &mut init_rng)?;
    println!("model: {} parameters, depth {}", model.param_count(), model_cfg.lstman_depth);

    let train_cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let records = train_supervised(&mut model, &ds, None, &train_cfg)?;
    for r in records.iter().step_by(10.max(records.len() / 20)) {
        println!(
            "epoch {:>4}  loss {:>10.6}  train_acc {:.3}  lr {:.5}  {} ms",
            r.epoch, r.train_loss, r.eval_metric, r.lr_used, r.wall_ms
        );
    }
    let last = records.last().expect("at least one epoch");
    let first_perfect = records.iter().find(|r| r.eval_metric == 1.0);
    println!(
        "final: loss {:.6}, train accuracy {:.3} ({:?} total)",
        last.train_loss,
        last.eval_metric,
        t0.elapsed()
    );
    match first_perfect {
        Some(r) => println!("reached 100% train accuracy at epoch {}", r.epoch),
        None => println!("did not reach 100% train accuracy"),
    }
    Ok(())
}
