//! Experiment harness for the near-data SLS simulator: parameter sweeps, the
//! operator micro-benchmark, trace locality tools and a randomized invariant
//! fuzzer.

pub mod experiment;
pub mod fuzz;
pub mod locality;
pub mod micro;
pub mod plot;

pub use experiment::{expand, run_sweep, CachingMode, ExperimentSpec, Locality, Row, SweepResult};
pub use fuzz::{fuzz, FuzzReport};
pub use locality::{lru_characterize, reuse_cdf, AddressMap, ReuseCdf};
pub use micro::{run_micro, MicroSpec, Pattern};
