//! Recompute the reuse probabilities in `tracegen::LOCALITY_TABLE`.
//!
//! Usage: cargo run --release -p recssd-core --example calibrate_locality

use recssd_core::tracegen::{
    calibrate_reuse_prob, generate_ids_with, profile_ids, unique_fraction, TraceSpec,
    LOCALITY_TABLE,
};

fn main() {
    let targets = [0.13, 0.54, 0.72];
    let seeds: Vec<u64> = (0..8).collect();
    for (point, target) in LOCALITY_TABLE.iter().zip(targets) {
        let p = calibrate_reuse_prob(target, point.mean_depth, 1 << 20, 100_000, &seeds);
        let mut check = *point;
        check.reuse_prob = p;
        let ids = generate_ids_with(&TraceSpec::flat(point.k, 1 << 20, 100_000, 1234), check)
            .expect("valid spec");
        let top10 = profile_ids(ids.iter().copied()).top_share(0.10);
        println!(
            "K={} mean_depth={} reuse_prob={:.4} unique={:.4} top10_share={:.3}",
            point.k,
            point.mean_depth,
            p,
            unique_fraction(&ids),
            top10
        );
    }
}
