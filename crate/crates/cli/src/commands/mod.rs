pub mod data;
pub mod eval;
pub mod grid;
pub mod train;
pub mod verify;

use rayon::ThreadPool;

use crate::error::{runtime, usage, CliResult};

pub fn thread_pool(parallel: usize) -> CliResult<ThreadPool> {
    if parallel == 0 {
        return Err(usage("--parallel must be at least 1"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(parallel).build().map_err(runtime)
}
