//! Estimates are bit-identical under any thread count: each projection
//! draws from its own substream keyed by the projection index, and the
//! final reduction is sequential in index order.
//!
//! Run: cargo run --release --example deterministic_parallel

use convsw::distances::csw;
use convsw::rng::{sample_unit_tensor, RandomSource};
use convsw::slicer::SlicerVariant;
use convsw::tensor::EmpiricalMeasure;

fn main() -> convsw::Result<()> {
    let data = RandomSource::new(2);
    let mut rng = data.substream(0);
    let mut draw = |n: usize| -> convsw::Result<EmpiricalMeasure> {
        EmpiricalMeasure::new((0..n).map(|_| sample_unit_tensor(1, 16, &mut rng)).collect::<convsw::Result<_>>()?)
    };
    let mu = draw(64)?;
    let nu = draw(64)?;

    let run = || csw(&mu, &nu, SlicerVariant::Dilation, false, 2.0, 256, &RandomSource::new(42));
    let reference = run()?;
    println!("reference: {reference:.17}");
    for threads in [1usize, 2, 4, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("pool");
        let value = pool.install(run)?;
        println!(
            "{threads} threads: {value:.17}  bit-identical: {}",
            value.to_bits() == reference.to_bits()
        );
    }
    Ok(())
}
