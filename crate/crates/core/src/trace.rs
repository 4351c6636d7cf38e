//! Loss / residual traces shared by the ADMM solver and the baselines.

use std::io::Write;

use serde::{Deserialize, Serialize};

/// One row of `trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    /// Mean per-sample training loss across environments.
    pub mean_loss: f64,
    /// `max_i ||w_i - w||`; zero for methods without local copies.
    pub consensus_residual: f64,
    /// Norm of the stacked unscaled local gradients.
    pub raw_grad_norm: f64,
    /// Norm of the gradients actually used in the update.
    pub scaled_grad_norm: f64,
}

pub const TRACE_HEADER: &str =
    "method,iteration,mean_loss,consensus_residual,raw_grad_norm,scaled_grad_norm";

pub fn write_trace_csv<W: Write>(
    out: &mut W,
    method: &str,
    rows: &[TraceRow],
) -> std::io::Result<()> {
    for r in rows {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e}",
            method,
            r.iteration,
            r.mean_loss,
            r.consensus_residual,
            r.raw_grad_norm,
            r.scaled_grad_norm
        )?;
    }
    Ok(())
}
