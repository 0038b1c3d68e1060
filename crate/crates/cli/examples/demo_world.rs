//! Writes a self-contained scripted demo into a directory (default `demo`).
//!
//!     cargo run -p synthrank-cli --example demo_world -- demo

#[path = "../tests/common/mod.rs"]
mod common;

use std::path::PathBuf;

use synthrank::corpus::write_jsonl;

const MIX: &str = "
[mix]
seed_pool_count = 200
synth_count = 40
";

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "demo".into()));
    let config = common::write_all(&dir, 10, 5, MIX);
    write_jsonl(&common::seed_pool(400, 0.5, 1), dir.join("seed_pool.jsonl")).unwrap();
    println!("wrote {}", config.display());
}
