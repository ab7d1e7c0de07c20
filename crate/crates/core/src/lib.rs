pub mod distiller;
pub mod jsonl;
pub mod label;
pub mod oracle;
pub mod pipeline;
pub mod scorer;
pub mod snippet;
pub mod simulation;
pub mod trm;

pub use label::{imbalance_ratio, ImbalanceRatio, Label};
pub use snippet::{Snippet, SnippetId, StreamItem};
