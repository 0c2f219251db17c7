//! Worker pool used by the right-hand side and the stage updates.
//!
//! All parallel work here writes disjoint output chunks from read-only
//! inputs, and each chunk is computed by the same code path no matter which
//! thread runs it, so results are bit-identical across worker counts.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// Elements per task for elementwise vector updates.
const VECTOR_CHUNK: usize = 1 << 14;

#[derive(Clone, Debug)]
pub struct Workers {
    pool: Option<Arc<ThreadPool>>,
    count: usize,
}

pub(crate) static SERIAL: Workers = Workers { pool: None, count: 1 };

impl Default for Workers {
    fn default() -> Self {
        Self::serial()
    }
}

impl Workers {
    pub fn serial() -> Self {
        Self { pool: None, count: 1 }
    }

    /// `0` means one worker per available core.
    pub fn new(count: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let count = if count == 0 { std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1) } else { count };
        if count == 1 {
            return Ok(Self::serial());
        }
        let pool = ThreadPoolBuilder::new().num_threads(count).thread_name(|i| format!("qhfpe-{i}")).build()?;
        Ok(Self { pool: Some(Arc::new(pool)), count })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Calls `f(scratch, index, chunk)` for every `chunk`-sized piece of `out`.
    pub fn for_each_chunk<T, I, F>(&self, out: &mut [f64], chunk: usize, init: I, f: F)
    where
        I: Fn() -> T + Sync + Send,
        F: Fn(&mut T, usize, &mut [f64]) + Sync + Send,
    {
        match &self.pool {
            None => {
                let mut scratch = init();
                for (i, c) in out.chunks_mut(chunk).enumerate() {
                    f(&mut scratch, i, c);
                }
            }
            Some(pool) => pool.install(|| {
                out.par_chunks_mut(chunk).enumerate().for_each_init(&init, |s, (i, c)| f(s, i, c));
            }),
        }
    }

    /// `out[i] = base[i] + Σ_k c_k · terms_k[i]`, terms summed left to right.
    pub fn combine(&self, out: &mut [f64], base: &[f64], terms: &[(f64, &[f64])]) {
        let body = |offset: usize, chunk: &mut [f64]| {
            for (i, o) in chunk.iter_mut().enumerate() {
                let g = offset + i;
                let mut acc = 0.0;
                for (c, t) in terms {
                    acc += c * t[g];
                }
                *o = base[g] + acc;
            }
        };
        match &self.pool {
            None => body(0, out),
            Some(pool) => pool.install(|| {
                out.par_chunks_mut(VECTOR_CHUNK).enumerate().for_each(|(i, c)| body(i * VECTOR_CHUNK, c));
            }),
        }
    }
}
