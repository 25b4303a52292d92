//! Mamba layer over flattened spatial tokens and its selective scan.

mod layer;
mod scan;

pub use layer::{flatten_tokens, selective_scan_var, unflatten_tokens, MambaConfig, MambaLayer, MambaVars, TokenSequence};
pub use scan::{scan_dims, selective_scan, ScanDims};
