//! Write a synthetic dataset as an IDX image/label pair (the MNIST container
//! format) and load it back. Real MNIST files load through the same path.
//!
//!     cargo run --release --example idx_files

use crsam::data::{gen_spiral, load_idx, write_idx, Dataset};

fn main() -> crsam::Result<()> {
    let dir = std::env::temp_dir().join("crsam-idx-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    let images = dir.join("spiral-images.idx");
    let labels = dir.join("spiral-labels.idx");

    // IDX stores u8 pixels, so shift coordinates into [0, 1] first.
    let raw = gen_spiral(300, 1.5, 0.05, 4)?;
    let scaled: Vec<f64> = raw.inputs().iter().map(|x| (x + 1.5) / 3.0).collect();
    let ds = Dataset::new(scaled, 2, raw.labels().to_vec(), 2, "spiral-unit")?;

    write_idx(&ds, &images, &labels)?;
    let back = load_idx(&images, &labels, None)?;
    println!("wrote {} and {}", images.display(), labels.display());
    println!("loaded {} examples, {} features, {} classes", back.len(),
        back.n_features(), back.n_classes());

    let worst = ds
        .inputs()
        .iter()
        .zip(back.inputs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("max round-trip error after u8 quantization: {worst:.2e} (<= 1/510)");

    let limited = load_idx(&images, &labels, Some(25))?;
    println!("limit=25 load: {} examples, first row equal: {}", limited.len(),
        limited.row(0) == back.row(0));
    Ok(())
}
