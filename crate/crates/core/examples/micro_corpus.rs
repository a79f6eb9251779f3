//! Writes the synthetic busy-wait micro-corpus as JSONL.
//!
//! ```text
//! cargo run -p perfrl-core --example micro_corpus -- data/micro_corpus.jsonl 20
//! ```

use std::path::PathBuf;

fn main() -> perfrl::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = PathBuf::from(args.next().unwrap_or_else(|| "data/micro_corpus.jsonl".into()));
    let n = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    perfrl::corpus::save_tasks(&perfrl::synthetic::busy_wait_family(n), &path)?;
    println!("wrote {n} tasks to {}", path.display());
    Ok(())
}
