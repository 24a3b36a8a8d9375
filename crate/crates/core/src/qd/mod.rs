//! Quality-diversity search: grid archive, CMA-ES, improvement emitters and
//! the round-robin scheduler.

pub mod archive;
pub mod cmaes;
pub mod emitter;
pub mod scheduler;

pub use archive::{Archive, Elite, InsertOutcome};
pub use cmaes::{default_population, CmaEs, CmaError, CmaParams};
pub use emitter::{EmitterConfig, Evaluated, ImprovementEmitter, Solution, TellSummary};
pub use scheduler::{IterationReport, Scheduler};
