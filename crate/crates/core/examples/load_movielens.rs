//! Loads ML-100K, splits it 80/10/10 and prints the dataset summary.
//!
//! ```text
//! cargo run --example load_movielens -- [data/ml-100k]
//! ```

use std::path::PathBuf;

use fairdgcl::cli::{summary_table, DataConfig, Prepared};
use fairdgcl::dataset::default_data_root;

fn main() -> fairdgcl::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| default_data_root().join("ml-100k"));
    let data = DataConfig {
        dir: Some(dir),
        ..DataConfig::default()
    };
    let raw = data.load_raw()?;
    let prepared = Prepared::from_dataset(&raw, &data)?;
    print!("{}", summary_table("ml-100k", &prepared));

    let women = prepared.partition.group1().len();
    println!("sensitive attribute: gender, {women} users mapped to 1");
    Ok(())
}
