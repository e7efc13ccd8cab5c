//! Regenerates `data/banana.csv`: 400 two-crescent points with the layout
//! the banana loader expects.
//!
//! ```text
//! cargo run -p imitation-cli --example gen_banana [-- PATH]
//! ```

use imitation_cli::dataio::{synthetic_banana, write_banana_csv};
use std::path::PathBuf;

fn main() {
    let path = std::env::args()
        .nth(1)
        .map_or_else(|| PathBuf::from("data/banana.csv"), PathBuf::from);
    let ds = synthetic_banana(400, 0.25, 20240008);
    write_banana_csv(&path, &ds).expect("write banana csv");
    println!("wrote {} examples to {}", ds.len(), path.display());
}
