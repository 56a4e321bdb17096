pub mod align;
pub mod evaluate;
pub mod restore;
pub mod synthesize;
pub mod train;

/// Outcome of a command that completed and wrote its outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Some frames failed alignment and were left out.
    AlignmentDegraded,
}
