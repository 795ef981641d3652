//! Rollout collection on scoped OS threads.

use h2df_core::agents::{Rollout, RolloutJob, RolloutRunner};
use h2df_core::Result;

/// Runs every job on its own thread; results keep job order, so training
/// is identical to the sequential runner.
#[derive(Clone, Copy, Debug, Default)]
pub struct ThreadedRunner;

impl RolloutRunner for ThreadedRunner {
    fn run_all(&self, jobs: Vec<RolloutJob<'_>>) -> Vec<Result<Rollout>> {
        std::thread::scope(|s| {
            let handles: Vec<_> = jobs.into_iter().map(|job| s.spawn(move || job.run())).collect();
            handles.into_iter().map(|h| h.join().expect("rollout worker panicked")).collect()
        })
    }
}
