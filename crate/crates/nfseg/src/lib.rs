//! Scene directories, `.nsf` feature files, checkpoints, configs, reports and
//! the `nfseg` command line on top of `nfseg-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod image_io;
pub mod manifest;
pub mod nsf;
pub mod pipeline;
pub mod report;
pub mod scene_io;
pub mod visualize;

pub use error::{Error, Result};

/// Caps the worker pool at `NFSEG_THREADS` when set.
pub fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("NFSEG_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Usage(format!("NFSEG_THREADS must be a positive integer, got {v:?}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}
