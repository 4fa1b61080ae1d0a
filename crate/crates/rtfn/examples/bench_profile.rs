//! Rough per-component timing at a given scale (dev tool).

use std::time::Instant;

use rtfn::layers::Mode;
use rtfn::model::{Purpose, RtfnConfig, RtfnModel};
use rtfn::rng::{self, Rng};
use rtfn::tape::Tape;
use rtfn::tensor::Tensor;

fn main() {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(16, |s| s.parse().unwrap());
    let l: usize = args.next().map_or(286, |s| s.parse().unwrap());

    let cfg = RtfnConfig { seed: 1, dropout: 0.0, ..RtfnConfig::new(2, 1, l) };
    let mut init = Rng::with_stream(1, rng::STREAM_INIT);
    let mut model = RtfnModel::new(&cfg, Purpose::Supervised, &mut init).unwrap();
    let mut data_rng = Rng::with_stream(1, rng::STREAM_DATA);
    let x = Tensor::rand_uniform(&[n, 1, l], -1.0, 1.0, &mut data_rng);
    let onehot = {
        let mut d = vec![0.0; n * 2];
        for i in 0..n { d[i * 2 + i % 2] = 1.0; }
        Tensor::new(vec![n, 2], d).unwrap()
    };

    // TFN alone, forward.
    let t = Instant::now();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let f = model.tfn.forward(&mut tape, xv, Mode::Train).unwrap();
    println!("tfn fwd           {:>8} ms", t.elapsed().as_millis());
    // TFN backward.
    let t = Instant::now();
    let s = tape.sum_all(f);
    tape.backward(s).unwrap();
    println!("tfn bwd           {:>8} ms", t.elapsed().as_millis());
    drop(tape);

    // Full model forward.
    let t = Instant::now();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut drng = Rng::new(0);
    let logits = model.forward_logits(&mut tape, xv, Mode::Train, &mut drng).unwrap();
    println!("full fwd          {:>8} ms", t.elapsed().as_millis());
    let t = Instant::now();
    let probs = tape.softmax_rows(logits).unwrap();
    let loss = tape.cross_entropy(probs, &onehot).unwrap();
    tape.backward(loss).unwrap();
    println!("full bwd          {:>8} ms", t.elapsed().as_millis());
    let t = Instant::now();
    let grads = tape.take_param_grads();
    println!("grad export ({:>3}) {:>8} ms", grads.len(), t.elapsed().as_millis());
    drop(tape);

    // Eval-mode forward (metric path).
    let t = Instant::now();
    let _ = model.features(&x).unwrap();
    println!("eval fwd          {:>8} ms", t.elapsed().as_millis());
}
