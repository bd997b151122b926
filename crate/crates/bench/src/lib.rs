//! Benchmark fixtures shared by the criterion targets.

use brw_core::{GreenSolver, JumpKernel, LatticePoint, SourceConfiguration};

pub fn simple(d: usize) -> JumpKernel {
    JumpKernel::simple(d, 1.0).expect("simple kernel")
}

pub fn heavy_1d(alpha: f64) -> JumpKernel {
    JumpKernel::heavy_tail_1d(alpha, 64).expect("heavy-tailed kernel")
}

pub fn solver(kernel: &JumpKernel) -> GreenSolver {
    GreenSolver::new(kernel)
}

/// `n` sources spread along the first axis with spacing 2.
pub fn line_sources(d: usize, n: usize, beta: f64) -> SourceConfiguration {
    let pts = (0..n)
        .map(|i| {
            let mut c = vec![0; d];
            c[0] = 2 * i as i64;
            LatticePoint::new(c)
        })
        .collect();
    SourceConfiguration::new(pts, beta).expect("distinct sources")
}
