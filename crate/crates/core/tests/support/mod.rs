pub mod oracles;
pub mod probes;
