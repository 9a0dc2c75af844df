//! Generates the procedural glyph set, exports it as PGM files and as an IDX
//! image/label pair, and reads the IDX pair back.
//!
//! cargo run --release --example datasets [out_dir]

use std::path::PathBuf;

use cnpkit::tasks::idx::{load_idx_dataset, write_idx, IdxData};
use cnpkit::tasks::{export_pgm_dataset, make_glyph_dataset};

fn main() -> cnpkit::Result<()> {
    let out_dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "glyphs".into()));
    let glyphs = make_glyph_dataset(5, 4, 28, 1)?;
    export_pgm_dataset(&glyphs, &out_dir.join("pgm"))?;

    let pixels: Vec<u8> = glyphs
        .images
        .iter()
        .flat_map(|im| im.pixels.iter().map(|p| (p * 255.0).round() as u8))
        .collect();
    let images = IdxData::Images {
        count: glyphs.len(),
        rows: 28,
        cols: 28,
        pixels,
    };
    let labels = IdxData::Labels(glyphs.labels.iter().map(|&l| l as u8).collect());
    let (img_path, lbl_path) = (
        out_dir.join("glyphs-images.idx3-ubyte"),
        out_dir.join("glyphs-labels.idx1-ubyte"),
    );
    write_idx(&img_path, &images)?;
    write_idx(&lbl_path, &labels)?;

    let back = load_idx_dataset(&img_path, &lbl_path)?;
    let worst = glyphs
        .images
        .iter()
        .zip(&back.images)
        .flat_map(|(a, b)| a.pixels.iter().zip(&b.pixels).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    println!(
        "{} glyphs in {} classes ({}x{}); IDX round trip max pixel error {worst:.4}, labels equal: {}",
        back.len(),
        back.classes().len(),
        back.height,
        back.width,
        back.labels == glyphs.labels
    );
    for class in glyphs.classes() {
        let im = &glyphs.images[glyphs.labels.iter().position(|&l| l == class).unwrap()];
        println!("class {class}:");
        for r in (0..28).step_by(2) {
            let line: String = (0..28).map(|c| if im.get(r, c) > 0.5 { '#' } else { '.' }).collect();
            println!("  {line}");
        }
    }
    println!("files in {}", out_dir.display());
    Ok(())
}
