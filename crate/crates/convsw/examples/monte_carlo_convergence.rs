//! Shows the Monte Carlo error of the sliced estimate shrinking as the
//! number of projections L grows: the variance over repeated runs
//! roughly halves when L doubles.
//!
//! Run: cargo run --release --example monte_carlo_convergence

use convsw::distances::csw;
use convsw::rng::{sample_unit_tensor, RandomSource};
use convsw::slicer::SlicerVariant;
use convsw::tensor::EmpiricalMeasure;

fn measure(src: &RandomSource, stream: u64, n: usize) -> convsw::Result<EmpiricalMeasure> {
    let mut rng = src.substream(stream);
    EmpiricalMeasure::new((0..n).map(|_| sample_unit_tensor(1, 8, &mut rng)).collect::<convsw::Result<_>>()?)
}

fn main() -> convsw::Result<()> {
    let data = RandomSource::new(1);
    let mu = measure(&data, 0, 32)?;
    let nu = measure(&data, 1, 32)?;

    let repeats = 100;
    println!("{:>5} {:>12} {:>12}", "L", "mean", "variance");
    for l in [10usize, 20, 40, 80, 160] {
        let values: Vec<f64> = (0..repeats)
            .map(|r| {
                let seed = RandomSource::new(100).fork(r).master_seed();
                csw(&mu, &nu, SlicerVariant::Stride, false, 2.0, l, &RandomSource::new(seed))
            })
            .collect::<convsw::Result<_>>()?;
        let mean = values.iter().sum::<f64>() / repeats as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (repeats - 1) as f64;
        println!("{l:>5} {mean:>12.6} {var:>12.3e}");
    }
    Ok(())
}
