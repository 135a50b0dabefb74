//! Single-event transient injection, the host retry protocol and outcome
//! classification.

mod campaign;
mod site;

use num_bigint::BigInt;
use num_rational::BigRational;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use campaign::{draw_faults, run_campaign, run_campaign_with_progress, CampaignPlan, CampaignReport, PoissonBound, REPORT_SCHEMA_VERSION};
pub use site::{category_counts, enumerate_sites, BufferField, FaultSite, SiteCategory, Stream, StreamField, Unit};

use crate::engine::{golden_matmul, nominal_cycles, Detector, Engine, EngineConfig, JobDescriptor, Mode, RunOutcome, RunStatus};
use crate::error::ConfigError;
use crate::fp16::Fp16;
use crate::matrix::Matrix;
use crate::memory::Tcdm;

/// One transient: `bit` of `site` is inverted during `cycle`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize)]
pub struct FaultSpec {
    pub site: FaultSite,
    pub bit: u32,
    pub cycle: u64,
}

impl FaultSpec {
    pub fn new(site: FaultSite, bit: u32, cycle: u64) -> Option<FaultSpec> {
        (bit < site.width()).then_some(FaultSpec { site, bit, cycle })
    }
}

/// A configured job with operands preloaded and its golden result.
#[derive(Clone, Debug)]
pub struct Workload {
    pub cfg: EngineConfig,
    pub job: JobDescriptor,
    pub memory: Tcdm,
    pub golden: Matrix,
}

/// Operand resolution of generated workloads: values are `i / 2^20` with `i`
/// uniform in `[-2^20, 2^20]`, then rounded to binary16.
pub const OPERAND_FRACTION_BITS: u32 = 20;

/// Seeded random operand in `[-1, 1]`.
pub fn random_operand(rng: &mut ChaCha8Rng) -> Fp16 {
    let scale = 1i64 << OPERAND_FRACTION_BITS;
    let i = rng.random_range(-scale..=scale);
    Fp16::from_rational(&BigRational::new(BigInt::from(i), BigInt::from(scale)))
}

/// Random X (M x K), W (K x N) and Y (M x N), drawn in that order.
pub fn random_operands(m: usize, n: usize, k: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Matrix::from_fn(m, k, |_, _| random_operand(&mut rng));
    let w = Matrix::from_fn(k, n, |_, _| random_operand(&mut rng));
    let y = Matrix::from_fn(m, n, |_, _| random_operand(&mut rng));
    (x, w, y)
}

impl Workload {
    /// Place the operands at the job's addresses in a TCDM of `capacity`
    /// words (at least the job's footprint).
    pub fn new(
        cfg: EngineConfig,
        job: JobDescriptor,
        x: &Matrix,
        w: &Matrix,
        y: &Matrix,
        capacity: usize,
    ) -> Result<Workload, ConfigError> {
        let golden = golden_matmul(x, w, y)?;
        let (m, n, k) = (job.m as usize, job.n as usize, job.k as usize);
        if (x.rows(), x.cols(), w.cols()) != (m, k, n) {
            return Err(ConfigError::Shape(format!("operands are {}x{}x{}, job is {m}x{n}x{k}", x.rows(), w.cols(), x.cols())));
        }
        let capacity = capacity.max(job.memory_end() as usize);
        job.validate(capacity)?;
        cfg.validate(job.mode)?;
        let mut memory = Tcdm::new(capacity);
        for (base, mat) in [(job.x_addr, x), (job.w_addr, w), (job.y_addr, y)] {
            memory.poke_elements(base as usize, mat.as_slice()).expect("region validated");
        }
        Ok(Workload { cfg, job, memory, golden })
    }

    /// Packed job at address 0 with seeded random operands.
    pub fn generate(cfg: EngineConfig, m: u32, n: u32, k: u32, mode: Mode, seed: u64) -> Result<Workload, ConfigError> {
        let job = JobDescriptor::packed(m, n, k, mode, 0);
        let (x, w, y) = random_operands(m as usize, n as usize, k as usize, seed);
        Workload::new(cfg, job, &x, &w, &y, 0)
    }

    /// The same operands and memory under another mode.
    pub fn with_mode(&self, mode: Mode) -> Result<Workload, ConfigError> {
        self.cfg.validate(mode)?;
        Ok(Workload { job: self.job.with_mode(mode), ..self.clone() })
    }

    pub fn nominal_cycles(&self) -> u64 {
        nominal_cycles(&self.cfg, &self.job)
    }

    pub fn engine(&self) -> Engine {
        Engine::configure(self.cfg, self.job, self.memory.clone()).expect("workload validated at construction")
    }
}

/// Every attempt of one experiment, first attempt first.
#[derive(Clone, Debug)]
pub struct Trial {
    pub runs: Vec<RunOutcome>,
}

impl Trial {
    pub fn final_run(&self) -> &RunOutcome {
        self.runs.last().expect("at least one attempt")
    }

    pub fn retries(&self) -> u32 {
        self.runs.len() as u32 - 1
    }

    /// First checker that fired in the faulty attempt.
    pub fn detector(&self) -> Option<Detector> {
        self.runs[0].fault_status.detectors().first().copied()
    }
}

/// Host protocol around one faulty launch.
///
/// In fault-tolerant mode an abort is answered by clearing the status,
/// reprogramming the job and relaunching once; the relaunch is fault-free. In
/// performance mode an abort ends the workload.
pub fn run_with_faults(w: &Workload, faults: &[FaultSpec]) -> Trial {
    let mut engine = w.engine();
    for &f in faults {
        engine.inject(f);
    }
    let first = engine.run_to_completion();
    let mut runs = vec![first];
    if runs[0].status == RunStatus::AbortedFault && w.job.mode == Mode::FaultTolerant {
        engine.clear_fault_status().expect("idle after abort");
        engine.reprogram().expect("idle after abort");
        runs.push(engine.run_to_completion());
    }
    Trial { runs }
}

pub fn run_with_fault(w: &Workload, spec: FaultSpec) -> Trial {
    run_with_faults(w, &[spec])
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    CorrectNoRetry,
    CorrectWithRetry,
    Incorrect,
    Timeout,
    /// Performance mode: the fault was detected and the workload abandoned.
    DetectedAbort,
    /// Fault-tolerant mode: the fault-free relaunch aborted again.
    RetryExhausted,
}

impl OutcomeClass {
    pub const ALL: [OutcomeClass; 6] = [
        OutcomeClass::CorrectNoRetry,
        OutcomeClass::CorrectWithRetry,
        OutcomeClass::Incorrect,
        OutcomeClass::Timeout,
        OutcomeClass::DetectedAbort,
        OutcomeClass::RetryExhausted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeClass::CorrectNoRetry => "correct_no_retry",
            OutcomeClass::CorrectWithRetry => "correct_with_retry",
            OutcomeClass::Incorrect => "incorrect",
            OutcomeClass::Timeout => "timeout",
            OutcomeClass::DetectedAbort => "detected_abort",
            OutcomeClass::RetryExhausted => "retry_exhausted",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            OutcomeClass::CorrectNoRetry => "Correct w/o Retry",
            OutcomeClass::CorrectWithRetry => "Correct with Retry",
            OutcomeClass::Incorrect => "Incorrect",
            OutcomeClass::Timeout => "Timeout",
            OutcomeClass::DetectedAbort => "Detected Abort",
            OutcomeClass::RetryExhausted => "Retry Exhausted",
        }
    }

    /// Whether the outcome is a functional error.
    pub fn is_failure(self) -> bool {
        matches!(self, OutcomeClass::Incorrect | OutcomeClass::Timeout)
    }
}

impl std::fmt::Display for OutcomeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct InjectionOutcome {
    pub class: OutcomeClass,
    pub retries: u32,
    pub detector: Option<Detector>,
}

pub fn classify_outcome(trial: &Trial, golden: &Matrix) -> InjectionOutcome {
    let run = trial.final_run();
    let retries = trial.retries();
    let class = match run.status {
        RunStatus::Completed => match &run.z {
            Some(z) if z == golden && retries == 0 => OutcomeClass::CorrectNoRetry,
            Some(z) if z == golden => OutcomeClass::CorrectWithRetry,
            _ => OutcomeClass::Incorrect,
        },
        RunStatus::Timeout => OutcomeClass::Timeout,
        RunStatus::AbortedFault if retries == 0 => OutcomeClass::DetectedAbort,
        RunStatus::AbortedFault => OutcomeClass::RetryExhausted,
    };
    InjectionOutcome { class, retries, detector: trial.detector() }
}

/// Inject `spec` into `w` and classify the result.
pub fn inject(w: &Workload, spec: FaultSpec) -> InjectionOutcome {
    classify_outcome(&run_with_fault(w, spec), &w.golden)
}
