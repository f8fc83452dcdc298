//! Benchmark fixtures shared by the criterion targets.

use wqed_core::collision::{prepare_all_excited, CollisionRun};
use wqed_core::{ModelParams, TruncationPolicy};

/// Four emitters at `eta = 0.2` advanced until the bonds reach `chi`.
pub fn entangled_run(chi: usize, steps: usize) -> CollisionRun {
    let p = ModelParams::from_eta(4, 0.2, 0.02, 16.0).with_policy(TruncationPolicy::new(chi, 1e-10).unwrap());
    let mut run = CollisionRun::new(p.clone(), prepare_all_excited(&p).unwrap()).unwrap();
    for _ in 0..steps {
        run.advance().unwrap();
    }
    run
}
