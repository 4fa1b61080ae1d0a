//! GEMM throughput probe (dev tool).
use rtfn::rng::Rng;
use rtfn::tensor::Tensor;
use std::time::Instant;

fn main() {
    let mut rng = Rng::new(1);
    for (m, k, n) in [(256, 256, 256), (286, 128, 286), (512, 512, 512)] {
        let a = Tensor::rand_uniform(&[m, k], -1.0, 1.0, &mut rng);
        let b = Tensor::rand_uniform(&[k, n], -1.0, 1.0, &mut rng);
        let t = Instant::now();
        let reps = 20;
        let mut sink = 0.0;
        for _ in 0..reps {
            let c = a.matmul(&b).unwrap();
            sink += c.data()[0];
        }
        let el = t.elapsed().as_secs_f64();
        let gmacs = (m * k * n * reps) as f64 / el / 1e9;
        println!("{m}x{k}x{n}: {gmacs:.2} GMAC/s (sink {sink:.3})");
    }
}
