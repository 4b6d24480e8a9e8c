//! Temporal-related convolutional restricted Boltzmann machine.
//!
//! A multiplicative unit combines N time-adjacent input maps by a scaled
//! matrix chain product; a stack of K hidden feature maps is tied to the unit
//! through valid cross-correlation kernels. Training is m-step contrastive
//! divergence with per-map least-squares recovery, and a tabular Q-learning
//! policy adapts the relational order N to minimize normalized reconstruction
//! error.
//!
//! - [`mat`] — dense matrix primitives: products, correlation/convolution,
//!   minimum-norm least squares, sigmoid, Bernoulli sampling
//! - [`crbm`] — energy, conditionals, CD-m gradients, map recovery
//! - [`policy`] — Q table, softmax action selection, backup, partition oracle
//! - [`data`] — IDX ingestion, rotate/shift sequence synthesis, TSEQ1 files
//! - [`harness`] — fixed and adaptive training loops, evaluation
//! - [`checkpoint`] — binary checkpoint container
//! - [`cli`] — batch front end (`tcrbm` binary)

pub mod checkpoint;
pub mod cli;
pub mod crbm;
pub mod data;
pub mod error;
pub mod harness;
pub mod mat;
pub mod policy;
pub mod rng;

pub use crbm::{FChoice, ModelParams};
pub use error::{Error, Result};
pub use mat::Mat;
pub use rng::SplitRng;

use std::path::Path;

/// Write a file atomically: temp file in the same directory, then rename.
/// Error paths leave no partial output behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
