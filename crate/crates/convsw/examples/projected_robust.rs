//! Projected robust distances: ascend over orthonormal k-frames (prw)
//! or k-output kernel stacks (cprw), with exact assignment-based
//! transport in R^k inside each evaluation.
//!
//! Run: cargo run --release --example projected_robust

use convsw::distances::{cprw, prw};
use convsw::rng::{sample_unit_tensor, RandomSource};
use convsw::slicer::SlicerVariant;
use convsw::tensor::EmpiricalMeasure;

fn main() -> convsw::Result<()> {
    let data = RandomSource::new(17);
    let mut rng = data.substream(0);
    // two clouds separated along a single direction
    let mut draw = |offset: f64| -> convsw::Result<EmpiricalMeasure> {
        let supports = (0..24)
            .map(|_| {
                let mut t = sample_unit_tensor(1, 8, &mut rng)?;
                t.data_mut()[0] += offset;
                Ok(t)
            })
            .collect::<convsw::Result<_>>()?;
        EmpiricalMeasure::new(supports)
    };
    let mu = draw(0.0)?;
    let nu = draw(2.0)?;

    let src = RandomSource::new(4);
    for k in [1usize, 2, 4] {
        let a = prw(&mu, &nu, k, 2.0, 60, 0.05, &src)?;
        let b = cprw(&mu, &nu, SlicerVariant::Stride, k, 2.0, 60, 0.05, &src)?;
        println!("k = {k}: prw {a:.5}, cprw-s {b:.5}");
    }
    println!("(prw stays near the 2.0 separation for every k: its frame is orthonormal.");
    println!(" cprw grows with k: each of the k output channels carries its own");
    println!(" unit-norm kernel stack, so the channels stack up the same separation.)");
    Ok(())
}
