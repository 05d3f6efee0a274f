//! Round-trips a measure through the CSWT tensor container and computes
//! a distance between two stored files, as the `csw distance` subcommand
//! does.
//!
//! Run: cargo run --example dataset_io

use convsw::cli::{cmd_distance, CliMethod};
use convsw::dataio::write_tensor_file;
use convsw::distances::MethodSpec;
use convsw::rng::{sample_unit_tensor, RandomSource};
use convsw::tensor::EmpiricalMeasure;

fn main() -> convsw::Result<()> {
    let dir = std::env::temp_dir().join("convsw_example");
    std::fs::create_dir_all(&dir).expect("temp dir");

    let data = RandomSource::new(31);
    let mut rng = data.substream(0);
    let mut draw = |n: usize| -> convsw::Result<EmpiricalMeasure> {
        EmpiricalMeasure::new((0..n).map(|_| sample_unit_tensor(1, 8, &mut rng)).collect::<convsw::Result<_>>()?)
    };
    let a_path = dir.join("a.cswt");
    let b_path = dir.join("b.cswt");
    write_tensor_file(&a_path, &draw(16)?)?;
    write_tensor_file(&b_path, &draw(16)?)?;

    let spec = MethodSpec::new("csw-d".parse()?);
    let result = cmd_distance(&a_path, &b_path, CliMethod::Estimator(spec.method), spec)?;
    println!("{}", serde_json::to_string_pretty(&result).expect("serializes"));

    // the exact assignment oracle on the same files is an upper bound
    // reference at this scale
    let exact = cmd_distance(&a_path, &b_path, CliMethod::Exact, MethodSpec::new("sw".parse()?))?;
    println!("exact transport distance: {:.6}", exact.value);
    Ok(())
}
