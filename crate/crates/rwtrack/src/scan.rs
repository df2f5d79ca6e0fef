//! Coarse grid scan on a thread pool.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;

use rwtrack_core::correlation::CorrelationSet;
use rwtrack_core::geometry::TdoaLookupTable;
use rwtrack_core::localization::{argmax_range, merge_argmax, CoarseScan, SerialScan};

use crate::error::{CliError, Result};

/// Grid points per task.
const CHUNK: usize = 512;

/// Splits the grid into fixed chunks and reduces their maxima with the
/// lowest-index tie break, so the winner does not depend on the thread
/// count.
#[derive(Clone)]
pub struct RayonScan {
    pool: Arc<ThreadPool>,
}

impl RayonScan {
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
        Ok(Self {
            pool: Arc::new(pool),
        })
    }
}

impl CoarseScan for RayonScan {
    fn argmax(&self, corr: &CorrelationSet, table: &TdoaLookupTable) -> (usize, f64) {
        let n = table.point_count();
        self.pool
            .install(|| {
                (0..n.div_ceil(CHUNK))
                    .into_par_iter()
                    .map(|c| argmax_range(corr, table, c * CHUNK..((c + 1) * CHUNK).min(n)))
                    .reduce(|| None, merge_argmax)
            })
            .expect("grid is not empty")
    }
}

/// Serial scan for one thread, pooled scan otherwise.
pub fn scan_for(threads: usize) -> Result<Box<dyn CoarseScan + Send + Sync>> {
    if threads <= 1 {
        Ok(Box::new(SerialScan))
    } else {
        Ok(Box::new(RayonScan::new(threads)?))
    }
}
