//! Prints the kernel schedules of the three slicer families for a few
//! input sizes, with parameter and multiply-accumulate counts.
//!
//! Run: cargo run --example slicer_schedules

use convsw::slicer::{SlicerSchedule, SlicerVariant};

fn main() -> convsw::Result<()> {
    for d in [28usize, 32, 7] {
        for variant in [SlicerVariant::Base, SlicerVariant::Stride, SlicerVariant::Dilation] {
            let schedule = SlicerSchedule::new(variant, 1, d, 1, false)?;
            println!("{variant} slicer on 1x{d}x{d}:");
            let dims = schedule.spatial_dims()?;
            for (layer, out) in schedule.layers().iter().zip(&dims) {
                println!(
                    "  kernel {k}x{k}  stride {s}  dilation {b}  -> {out}x{out}",
                    k = layer.kernel,
                    s = layer.stride,
                    b = layer.dilation,
                );
            }
            println!(
                "  params {} (vs {} for a plain direction), macs {}\n",
                schedule.param_count(),
                d * d,
                schedule.mac_count()?
            );
        }
    }
    Ok(())
}
