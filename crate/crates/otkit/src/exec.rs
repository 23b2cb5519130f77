use rayon::prelude::*;
use rayon::ThreadPool;

use otkit_core::error::Result;
use otkit_core::{BatchExecutor, DocumentGradient};

use crate::error::{CliError, CliResult};

pub const THREADS_ENV: &str = "OTKIT_THREADS";

/// Evaluates batch documents on a rayon pool. Output order follows the input batch, so
/// results do not depend on the thread count.
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    /// `threads = 0` uses rayon's default (hardware parallelism).
    pub fn new(threads: usize) -> CliResult<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Validation(format!("cannot start thread pool: {e}")))?;
        Ok(Self { pool })
    }

    /// Reads the thread cap from `OTKIT_THREADS`.
    pub fn from_env() -> CliResult<Self> {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => v.trim().parse::<usize>().map_err(|_| {
                CliError::Validation(format!("{THREADS_ENV} must be a non-negative integer"))
            })?,
            _ => 0,
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl BatchExecutor for RayonExecutor {
    fn map(
        &self,
        batch: &[usize],
        eval: &(dyn Fn(usize) -> Result<DocumentGradient> + Sync),
    ) -> Vec<Result<DocumentGradient>> {
        self.pool
            .install(|| batch.par_iter().map(|&m| eval(m)).collect())
    }
}
