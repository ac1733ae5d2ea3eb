//! Per-component FLOPs of the six-block architecture at several exit depths.
//!
//!     cargo run --example flops_ledger -- [sequence length]

use beexformer::accounting::{count_flops, reduction_percent, Depth, FLOPS_CONVENTION};
use beexformer::model::ModelConfig;

fn main() {
    let len: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(32);
    let config = ModelConfig {
        vocab_size: 20_000,
        max_len: len.max(32),
        ..ModelConfig::default()
    };
    println!("convention: {FLOPS_CONVENTION}");
    println!("sequence length {len}\n");
    let full = count_flops(&config, len, Depth::Full);
    println!(
        "{:<10} {:>12} {:>12} {:>12} {:>12} {:>14} {:>10}",
        "depth", "embedding", "attention", "slfn", "exit heads", "adjusted", "vs full"
    );
    let depths = (1..=config.blocks).map(Depth::Exit).chain([Depth::Full]);
    for depth in depths {
        let l = count_flops(&config, len, depth);
        let label = match depth {
            Depth::Exit(c) => format!("exit {c}"),
            Depth::Full => "full".into(),
        };
        println!(
            "{label:<10} {:>12} {:>12} {:>12} {:>12} {:>14.0} {:>9.2}%",
            l.embedding.nominal(),
            l.attention.nominal(),
            l.slfn.nominal(),
            l.exit_heads.nominal(),
            l.adjusted(),
            reduction_percent(l.nominal(), full.nominal())
        );
    }
}
