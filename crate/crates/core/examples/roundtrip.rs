//! Generates scrambled instances, reconstructs them and prints the
//! residuals: `cargo run --release --example roundtrip -- [n] [m] [count]`.

use std::time::Instant;

use rcnet_core::graph::{compare_graphs, graph_from_s};
use rcnet_core::netgen::{random_rc_instance, GenerateOptions};
use rcnet_core::pipeline::{reconstruct, PipelineConfig};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("arguments are integers"))
        .collect();
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let (n, m, count) = (arg(0, 10), arg(1, 8), arg(2, 5));
    let mut feasible = 0;
    for seed in 0..count as u64 {
        let inst =
            random_rc_instance(n, m, &GenerateOptions::default(), seed).expect("valid request");
        let start = Instant::now();
        match reconstruct(&inst.model(), &PipelineConfig::default()) {
            Ok(rec) => {
                let r = &rec.report.search;
                let real = rec.realization();
                let truth = graph_from_s(&inst.s_true, Some(&inst.c_target), 1e-9);
                let found = graph_from_s(&real.s, Some(&inst.c_target), real.prune_tol);
                let verdict = compare_graphs(&truth, &found, 1e-6)
                    .expect("same size")
                    .verdict;
                feasible += r.feasible as usize;
                println!(
                    "seed {seed}: k={} feasible={} violation={:.1e} symmetry={:.1e} output={:.1e} spectrum={:.1e} |S|_0={} {:?} in {:.2?}",
                    rec.family.k,
                    r.feasible,
                    r.metzler_violation,
                    r.symmetry_residual,
                    r.output_residual.unwrap_or(0.0),
                    r.spectrum_residual,
                    r.zero_norm,
                    verdict,
                    start.elapsed(),
                );
            }
            Err(e) => println!("seed {seed}: {e}"),
        }
    }
    println!("{feasible}/{count} feasible");
}
