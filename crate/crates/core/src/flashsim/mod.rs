//! Discrete-event model of the SSD hardware substrate: clock, flash
//! channels, page cache, host DMA, and the event log.

mod clock;
mod cost;
mod flash;
mod log;

pub use clock::{Nanos, SimClock, SimError};
pub use cost::{ConfigError, CostModel};
pub use flash::{DmaEngine, DmaTicket, FlashArray, FlashStats, PageTicket, SerialResource};
pub use log::{check_log, CpuCategory, EventLog, LogRecord};
