//! Thread-pool versions of the grid runner and the bound integrator. Work is
//! split along the same substream keys as the sequential versions, so results
//! do not depend on the worker count.

use ltate_core::dataset::{ModelKind, Target};
use ltate_core::dgp::{self, DgpSpec};
use ltate_core::efficiency::{bound_chunk, bound_key, chunk_sizes, BoundReport, EfficiencyError};
use ltate_core::harness::{aggregate, run_rep, CellResult, ExperimentGrid, HarnessError, RepOutcome};
use rayon::prelude::*;

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().expect("thread pool")
}

pub fn run_grid(grid: &ExperimentGrid, workers: usize) -> Result<Vec<CellResult>, HarnessError> {
    grid.validate()?;
    let tasks = grid.tasks();
    let outcomes: Vec<RepOutcome> = pool(workers).install(|| tasks.par_iter().map(|&(p, n, r)| run_rep(grid, p, n, r)).collect());
    Ok(aggregate(grid, &outcomes))
}

pub fn compute_bound(
    spec: &DgpSpec,
    target: Target,
    model: ModelKind,
    n_draws: usize,
    seed: u64,
    workers: usize,
) -> Result<BoundReport, EfficiencyError> {
    if n_draws < 2 {
        return Err(EfficiencyError::TooFewDraws);
    }
    let o = dgp::oracle(spec, model)?;
    let key = bound_key(seed);
    let sizes = chunk_sizes(n_draws);
    let chunks: Vec<Vec<f64>> = pool(workers).install(|| {
        sizes.par_iter().enumerate().map(|(c, &len)| bound_chunk(&o, target, key, c as u64, len)).collect()
    });
    let values: Vec<f64> = chunks.concat();
    Ok(BoundReport::from_values(&values, target, model))
}
