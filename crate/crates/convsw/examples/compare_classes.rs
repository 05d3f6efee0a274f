//! Builds a small labeled dataset of three synthetic "digit" classes and
//! computes the class-by-class distance matrix with a convolution
//! slicer. Diagonal entries compare disjoint same-class halves, so they
//! stay near zero while cross-class entries do not.
//!
//! Run: cargo run --release --example compare_classes

use convsw::cli::{cmd_compare, CliMethod};
use convsw::dataio::{LabeledDataset, Normalization};
use convsw::distances::MethodSpec;
use convsw::rng::RandomSource;
use convsw::tensor::Tensor3;

/// A noisy 8x8 image with a class-specific bright band.
fn class_image(class: u8, rng: &mut convsw::rng::Substream) -> Tensor3 {
    use rand::Rng;
    let mut t = Tensor3::zeros(1, 8);
    for row in 0..8 {
        for col in 0..8 {
            let band = match class {
                0 => row < 3,            // top band
                1 => (3..5).contains(&row), // middle band
                _ => row >= 5,           // bottom band
            };
            let base = if band { 0.8 } else { 0.1 };
            t.set(0, row, col, base + 0.05 * rng.gen::<f64>());
        }
    }
    t
}

fn main() -> convsw::Result<()> {
    let src = RandomSource::new(7);
    let mut rng = src.substream(0);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for class in 0u8..3 {
        for _ in 0..40 {
            images.push(class_image(class, &mut rng));
            labels.push(class);
        }
    }
    let ds = LabeledDataset::new(images, labels)?;

    let spec = MethodSpec::new("csw-s".parse()?);
    let report = cmd_compare(
        &ds,
        CliMethod::Estimator(spec.method),
        spec,
        Some(40),
        1,
        Normalization::Unit,
    )?;
    print!("{}", report.to_csv());
    println!(
        "\nslicer params per projection: {} (runtime {} ms)",
        report.param_count, report.runtime_ms
    );
    Ok(())
}
