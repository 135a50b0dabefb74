//! Seeded fault-injection campaigns.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{enumerate_sites, inject, FaultSite, FaultSpec, OutcomeClass, Workload};
use crate::engine::{Detector, EngineConfig, Mode, Protection};
use crate::error::ConfigError;
use crate::stats::{format_percent_bound, poisson_upper_rate};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const CONFIDENCE: f64 = 0.95;
const CHUNK: usize = 4096;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub rows: usize,
    pub cols: usize,
    pub pipeline: usize,
    pub watchdog_factor: u64,
    pub variant: Protection,
    pub mode: Mode,
    pub m: u32,
    pub n: u32,
    pub k: u32,
    /// Seed of the generated operands.
    pub operand_seed: u64,
    /// Number of injections.
    pub injections: u64,
    /// Seed of the fault draw.
    pub seed: u64,
}

impl CampaignPlan {
    pub const DEFAULT_SEED: u64 = 7;

    /// The reference 12x4x3 engine running a 12x16x16 job.
    pub fn reference(variant: Protection, injections: u64, seed: u64) -> Self {
        CampaignPlan {
            rows: 12,
            cols: 4,
            pipeline: 3,
            watchdog_factor: EngineConfig::DEFAULT_WATCHDOG,
            variant,
            mode: variant.default_mode(),
            m: 12,
            n: 16,
            k: 16,
            operand_seed: 1,
            injections,
            seed,
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig { watchdog_factor: self.watchdog_factor, ..EngineConfig::new(self.rows, self.cols, self.pipeline, self.variant) }
    }

    pub fn workload(&self) -> Result<Workload, ConfigError> {
        Workload::generate(self.engine_config(), self.m, self.n, self.k, self.mode, self.operand_seed)
    }
}

/// Draw `n` transients uniformly over (catalog bit, cycle in `[0, cycles)`).
pub fn draw_faults(sites: &[FaultSite], cycles: u64, n: u64, seed: u64) -> Vec<FaultSpec> {
    let mut ends = Vec::with_capacity(sites.len());
    let mut total = 0u64;
    for s in sites {
        total += u64::from(s.width());
        ends.push(total);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let bit = rng.random_range(0..total);
            let cycle = rng.random_range(0..cycles);
            let i = ends.partition_point(|&e| e <= bit);
            let start = if i == 0 { 0 } else { ends[i - 1] };
            FaultSpec { site: sites[i], bit: (bit - start) as u32, cycle }
        })
        .collect()
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PoissonBound {
    /// Upper rate bound for the observed count.
    pub rate: f64,
    /// Upper rate bound assuming one additional observed event.
    pub rate_plus_one: f64,
    /// `rate` as a rounded-up percentage string.
    pub percent: String,
}

impl PoissonBound {
    pub fn new(observed: u64, n: u64) -> Self {
        let rate = poisson_upper_rate(observed, n, CONFIDENCE);
        PoissonBound { rate, rate_plus_one: poisson_upper_rate(observed + 1, n, CONFIDENCE), percent: format_percent_bound(rate) }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub plan: CampaignPlan,
    pub catalog_sites: usize,
    pub catalog_bits: u64,
    pub nominal_cycles: u64,
    pub counts: BTreeMap<OutcomeClass, u64>,
    /// Outcome counts per site category.
    pub per_category: BTreeMap<String, BTreeMap<OutcomeClass, u64>>,
    /// First detector that fired, over all detected injections.
    pub detectors: BTreeMap<Detector, u64>,
    pub confidence: f64,
    /// Bounds for the functional-error classes that were never observed.
    pub poisson_bounds: BTreeMap<OutcomeClass, PoissonBound>,
    pub poisson_convention: String,
    pub footnote: Option<String>,
}

pub fn run_campaign(plan: &CampaignPlan, workers: usize) -> Result<CampaignReport, ConfigError> {
    run_campaign_with_progress(plan, workers, |_, _| {})
}

/// Run `plan` on `workers` threads (0 picks the rayon default). Results are
/// collected in draw order, so the report does not depend on `workers`.
/// `progress(done, total)` is called after each chunk of experiments.
pub fn run_campaign_with_progress(
    plan: &CampaignPlan,
    workers: usize,
    mut progress: impl FnMut(u64, u64),
) -> Result<CampaignReport, ConfigError> {
    let workload = plan.workload()?;
    let sites = enumerate_sites(&workload.cfg);
    let nominal = workload.nominal_cycles();
    let specs = draw_faults(&sites, nominal, plan.injections, plan.seed);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool");

    let mut outcomes = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(CHUNK) {
        let part: Vec<_> = pool.install(|| chunk.par_iter().map(|&s| inject(&workload, s)).collect());
        outcomes.extend(part);
        progress(outcomes.len() as u64, plan.injections);
    }

    let zero = || OutcomeClass::ALL.into_iter().map(|c| (c, 0u64)).collect::<BTreeMap<_, _>>();
    let mut counts = zero();
    let mut per_category: BTreeMap<String, BTreeMap<OutcomeClass, u64>> = BTreeMap::new();
    let mut detectors: BTreeMap<Detector, u64> = Detector::ALL.into_iter().map(|d| (d, 0)).collect();
    for (spec, out) in specs.iter().zip(&outcomes) {
        *counts.get_mut(&out.class).unwrap() += 1;
        *per_category.entry(spec.site.category().to_string()).or_insert_with(zero).get_mut(&out.class).unwrap() += 1;
        if let Some(d) = out.detector {
            *detectors.get_mut(&d).unwrap() += 1;
        }
    }

    let n = plan.injections.max(1);
    let poisson_bounds: BTreeMap<_, _> = [OutcomeClass::Incorrect, OutcomeClass::Timeout]
        .into_iter()
        .filter(|c| counts[c] == 0)
        .map(|c| (c, PoissonBound::new(0, n)))
        .collect();
    let footnote = poisson_bounds.get(&OutcomeClass::Incorrect).filter(|_| poisson_bounds.len() == 2).map(|b| {
        format!(
            "No incorrect results and timeouts observed; {} upper bound on each at {:.0} % confidence (n = {}).",
            b.percent,
            CONFIDENCE * 100.0,
            plan.injections
        )
    });

    Ok(CampaignReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: "ftmm".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        plan: *plan,
        catalog_sites: sites.len(),
        catalog_bits: sites.iter().map(|s| u64::from(s.width())).sum(),
        nominal_cycles: nominal,
        counts,
        per_category,
        detectors,
        confidence: CONFIDENCE,
        poisson_bounds,
        poisson_convention: "exact one-sided Poisson upper bound for the observed count (rate, percent); \
                             rate_plus_one assumes one additional observed event"
            .into(),
        footnote,
    })
}

impl CampaignReport {
    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn count(&self, class: OutcomeClass) -> u64 {
        self.counts.get(&class).copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn from_json(text: &str) -> serde_json::Result<CampaignReport> {
        serde_json::from_str(text)
    }

    /// One row per outcome class: `class,label,count,percent,rate_bound,rate_bound_plus_one`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["class", "label", "count", "percent", "rate_bound", "rate_bound_plus_one"]).expect("in-memory");
        let n = self.total().max(1) as f64;
        for (class, &count) in &self.counts {
            let bound = self.poisson_bounds.get(class);
            let pct = format!("{:.4}", count as f64 / n * 100.0);
            let rate = bound.map(|b| format!("{:e}", b.rate)).unwrap_or_default();
            let plus = bound.map(|b| format!("{:e}", b.rate_plus_one)).unwrap_or_default();
            w.write_record([class.as_str(), class.label(), &count.to_string(), &pct, &rate, &plus]).expect("in-memory");
        }
        String::from_utf8(w.into_inner().expect("in-memory")).expect("utf-8")
    }

    /// Outcome table in the layout of a fault-injection results table.
    pub fn summary(&self) -> String {
        let n = self.total().max(1) as f64;
        let mut out = format!(
            "variant {} / {} mode: {} injections, seed {}, {} sites ({} bits), {} cycles\n",
            self.plan.variant,
            self.plan.mode,
            self.total(),
            self.plan.seed,
            self.catalog_sites,
            self.catalog_bits,
            self.nominal_cycles
        );
        let rows = [
            ("Correct Termination", OutcomeClass::CorrectNoRetry),
            ("", OutcomeClass::CorrectWithRetry),
            ("Functional Error", OutcomeClass::Incorrect),
            ("", OutcomeClass::Timeout),
            ("Detected, not retried", OutcomeClass::DetectedAbort),
            ("", OutcomeClass::RetryExhausted),
        ];
        for (group, class) in rows {
            let count = self.count(class);
            let cell = match self.poisson_bounds.get(&class) {
                Some(b) if count == 0 => b.percent.clone(),
                _ => format!("{:.4} %", count as f64 / n * 100.0),
            };
            out += &format!("{group:<22} {:<20} {count:>9}  {cell}\n", class.label());
        }
        if let Some(note) = &self.footnote {
            out += &format!("* {note}\n");
        }
        out
    }
}
