//! Write the synthetic graph as `train.txt`, `valid.txt`, `test.txt`.
//!
//! Usage: `cargo run --example write_toy_kg -- OUT_DIR`

fn main() -> comdense::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "toy-kg".into());
    comdense::synthetic::toy_kg(0).write_dir(std::path::Path::new(&dir))?;
    println!("wrote {dir}");
    Ok(())
}
