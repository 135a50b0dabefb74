//! Bit-exact model of a fault-tolerant half-precision matrix engine and a
//! fault-injection harness for it.
//!
//! * [`fp16`]: binary16 values and a correctly rounded fused multiply-add.
//! * [`ecc`]: SECDED codewords, weight parity and register-file parity.
//! * [`memory`]: the ECC-protected TCDM with an access log.
//! * [`engine`]: the cycle-level engine in performance and fault-tolerant mode.
//! * [`fault`]: fault sites, injection, retry protocol and campaigns.
//! * [`stats`]: Poisson upper bounds for zero-observation classes.
//! * [`job`]: TOML job files.

pub mod ecc;
pub mod engine;
pub mod error;
pub mod fault;
pub mod fp16;
pub mod job;
pub mod matrix;
pub mod memory;
pub mod stats;

pub use engine::{golden_matmul, Engine, EngineConfig, JobDescriptor, Mode, Protection, RunOutcome, RunStatus};
pub use fault::{CampaignPlan, CampaignReport, FaultSite, FaultSpec, InjectionOutcome, OutcomeClass, Workload};
pub use fp16::{fma, Fp16};
pub use matrix::Matrix;
pub use memory::Tcdm;
