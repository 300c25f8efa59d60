//! Wall time of one optimization step of the generator.
//!
//! Usage: iteration_time [size] [kernel] [iterations]

use std::time::Instant;

use contour_core::engine::{complete, RunConfig};
use contour_core::image::BinaryImage;

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("integer argument"))
        .collect();
    let size = args.first().copied().unwrap_or(128);
    let kernel = args.get(1).copied().unwrap_or(3);
    let iterations = args.get(2).copied().unwrap_or(20);
    let mut cfg = RunConfig {
        max_iterations: iterations,
        ..RunConfig::default()
    };
    cfg.generator.main_kernel = kernel;
    let quarter = size / 4;
    let mut dark = Vec::new();
    for i in quarter..3 * quarter {
        dark.extend([(quarter, i), (3 * quarter, i), (i, quarter), (i, 3 * quarter)]);
    }
    let img = BinaryImage::from_dark_pixels(size, size, dark);
    let start = Instant::now();
    complete(&img, &cfg).expect("completion runs");
    let ms = start.elapsed().as_secs_f64() * 1000.0 / iterations as f64;
    println!("{size}×{size}, kernel {kernel}: {ms:.1} ms per iteration");
}
