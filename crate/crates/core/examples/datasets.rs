//! Generate the synthetic datasets, write one to CSV and load it back.
//!
//!     cargo run --example datasets

use todlab::data::{gen_blobs, gen_two_moons, load_csv, CsvSchema, Standardizer};

fn main() -> todlab::Result<()> {
    let moons = gen_two_moons(400, 0.1, 7)?;
    let blobs = gen_blobs(400, 4, 0.5, 7)?;
    println!(
        "{}: {} rows, {} classes",
        moons.name,
        moons.len(),
        moons.num_classes()
    );
    println!(
        "{}: {} rows, {} classes",
        blobs.name,
        blobs.len(),
        blobs.num_classes()
    );

    let dir = std::env::temp_dir().join("todlab-datasets-example");
    let path = dir.join("blobs.csv");
    blobs.write_csv(&path)?;
    let back = load_csv(&path, &CsvSchema::new(2))?;
    println!(
        "reloaded {} rows from {}, identical: {}",
        back.len(),
        path.display(),
        back.features().rows().eq(blobs.features().rows())
    );

    let st = Standardizer::fit(moons.features());
    println!("moons feature means {:?}, stds {:?}", st.mean, st.std);
    Ok(())
}
