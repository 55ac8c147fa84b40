//! Application-declared logical state machine.
//!
//! Any transition between non-Error states is legal. Error is terminal, and
//! progress never decreases except when the requested state is Restoring, which
//! may rewind to the last checkpoint (or to zero when none exists).

use crate::error::{Error, Result};
use crate::model::{LogicalState, LogicalStatus, Millis};

pub fn logical_transition(
    current: &LogicalStatus,
    requested: &LogicalStatus,
    last_checkpoint: Option<f64>,
    now: Millis,
) -> Result<LogicalStatus> {
    if !(0.0..=1.0).contains(&requested.progress) {
        return Err(Error::ProgressOutOfRange(requested.progress));
    }
    if current.state == LogicalState::Error {
        return Err(Error::TerminalState);
    }
    if requested.progress < current.progress {
        let floor = last_checkpoint.unwrap_or(0.0);
        if requested.state != LogicalState::Restoring || requested.progress < floor {
            return Err(Error::ProgressRegression {
                from: current.progress,
                to: requested.progress,
            });
        }
    }
    Ok(LogicalStatus::new(requested.state, requested.progress, now))
}
