//! Anytime bandit identification with a doubling schedule of random arm
//! subsets ("brackets"): best-arm output, FDR and FWER discovery, an LUCB
//! baseline and its best-of-both combiner, plus the simulation harness,
//! dataset ingestion and exact verification tools around them.

pub mod bob;
pub mod confidence;
pub mod engine;
pub mod error;
pub mod hardness;
pub mod harness;
pub mod ingest;
pub mod instance;
pub mod lucb;
mod maxtree;
pub mod recommend;
pub mod rng;
pub mod verify;

pub use confidence::ConfidenceSchedule;
pub use engine::{Engine, EngineConfig, Mode, Objective};
pub use error::{Error, Result};
pub use instance::{two_spike, ArmDistribution, ArmKind, BanditInstance};
