//! Reads MNIST IDX files and prints basic statistics.
//!
//! ```text
//! cargo run --example mnist_ingest -- data/mnist
//! ```
//!
//! The directory defaults to `$MAFL_DATA_DIR`. It must contain the four
//! standard files (`train-images-idx3-ubyte`, ...), uncompressed.

use std::path::PathBuf;

use mafl::trainer::load_mnist;

fn main() {
    let dir = std::env::args_os()
        .nth(1)
        .or_else(|| std::env::var_os("MAFL_DATA_DIR"))
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            eprintln!("usage: mnist_ingest DIR (or set MAFL_DATA_DIR)");
            std::process::exit(2);
        });
    let (train, test) = match load_mnist(&dir) {
        Ok(sets) => sets,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(1);
        }
    };
    for set in [&train, &test] {
        let mut counts = vec![0usize; set.num_classes()];
        set.labels().iter().for_each(|&y| counts[y] += 1);
        let nonzero = set.features().iter().filter(|v| **v != 0.0).count();
        println!(
            "{:?}: {} images of {} pixels, {:.1}% nonzero, per class {:?}",
            set.split,
            set.len(),
            set.dim(),
            100.0 * nonzero as f64 / set.features().len() as f64,
            counts
        );
    }
}
