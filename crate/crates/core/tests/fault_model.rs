use proptest::prelude::*;

use ftmm::engine::{Detector, RunStatus};
use ftmm::error::EngineError;
use ftmm::fault::{
    category_counts, draw_faults, enumerate_sites, inject, run_with_faults, CampaignPlan, CampaignReport, FaultSite,
    FaultSpec, OutcomeClass, SiteCategory, Unit, Workload,
};
use ftmm::stats::poisson_upper_rate;
use ftmm::{EngineConfig, Mode, Protection};

fn workload(p: Protection, mode: Mode) -> Workload {
    Workload::generate(EngineConfig::reference(p), 12, 16, 16, mode, 21).unwrap()
}

#[test]
fn catalog_counts_follow_geometry() {
    let cfg = EngineConfig::reference(Protection::Full);
    let sites = enumerate_sites(&cfg);
    assert_eq!(sites, enumerate_sites(&cfg));
    let counts = category_counts(&sites);
    let bits = |cat| counts.iter().find(|c| c.0 == cat).unwrap().2;
    let (l, h, p) = (12, 4, 3);
    assert_eq!(bits(SiteCategory::CePipelineState), l * h * p * 16);
    assert_eq!(bits(SiteCategory::WBroadcast), l * h * 16 + l * h);
    assert_eq!(bits(SiteCategory::XData), l * 16);
    for s in &sites {
        let id = s.id();
        assert!(!id.contains("clk") && !id.contains("clock") && !id.contains("reset"), "{id}");
    }
    let base = enumerate_sites(&EngineConfig::reference(Protection::Baseline));
    assert!(base.iter().all(|s| sites.contains(s)), "baseline sites are a subset of the full catalog");
    assert!(!base.iter().any(|s| matches!(s, FaultSite::WParity { .. } | FaultSite::Fsm { unit: Unit::Shadow })));
}

/// Every control, checker and memory-response bit of the full variant at a
/// spread of cycles: nothing escapes as an incorrect result or a hang.
#[test]
fn full_variant_control_sweep() {
    let w = workload(Protection::Full, Mode::FaultTolerant);
    let nominal = w.nominal_cycles();
    let mut detected = 0;
    for site in enumerate_sites(&w.cfg).into_iter().filter(|s| !s.category().is_data_path()) {
        let stride = if site.category() == SiteCategory::CePipelineState { 5 } else { 1 };
        for bit in (0..site.width()).step_by(stride) {
            for cycle in [0, 1, 17, nominal / 2, nominal - 4, nominal - 1] {
                let out = inject(&w, FaultSpec { site, bit, cycle });
                assert!(!out.class.is_failure(), "{site} bit {bit} cycle {cycle}: {}", out.class);
                assert_ne!(out.class, OutcomeClass::RetryExhausted);
                detected += usize::from(out.retries > 0);
            }
        }
    }
    assert!(detected > 1000);
}

#[test]
fn data_only_leaks_control_faults() {
    let w = workload(Protection::DataOnly, Mode::FaultTolerant);
    let spec = FaultSpec { site: FaultSite::Regfile { word: 1 }, bit: 0, cycle: 5 };
    assert!(inject(&w, spec).class.is_failure());
    // The same upset is caught by register-file parity with full protection.
    let full = workload(Protection::Full, Mode::FaultTolerant);
    let out = inject(&full, spec);
    assert_eq!(out.class, OutcomeClass::CorrectWithRetry);
    assert_eq!(out.detector, Some(Detector::RegfileParity));
}

#[test]
fn data_only_beats_baseline_on_shared_sites() {
    let base = workload(Protection::Baseline, Mode::Performance);
    let data = workload(Protection::DataOnly, Mode::FaultTolerant);
    let sites = enumerate_sites(&base.cfg);
    let count = |w: &Workload| {
        draw_faults(&sites, base.nominal_cycles(), 3000, 9)
            .into_iter()
            .filter(|&s| inject(w, s).class == OutcomeClass::Incorrect)
            .count()
    };
    let (b, d) = (count(&base), count(&data));
    assert!(d < b, "data_only {d} vs baseline {b}");
}

#[test]
fn idle_window_faults_are_masked() {
    let w = workload(Protection::Full, Mode::FaultTolerant);
    let nominal = w.nominal_cycles();
    for site in [FaultSite::WBroadcast { row: 0, col: 0 }, FaultSite::Fsm { unit: Unit::Primary }, FaultSite::Regfile { word: 0 }] {
        let out = inject(&w, FaultSpec { site, bit: 1, cycle: nominal + 3 });
        assert_eq!(out.class, OutcomeClass::CorrectNoRetry, "{site}");
    }
}

#[test]
fn memory_errors_corrected_or_retried() {
    let w = workload(Protection::Full, Mode::FaultTolerant);
    let x = w.job.x_addr as usize;

    let mut single = w.clone();
    single.memory.flip_stored_bit(x, 4).unwrap();
    let trial = run_with_faults(&single, &[]);
    assert_eq!(trial.final_run().z.as_ref(), Some(&w.golden));
    assert!(trial.runs[0].fault_status.ecc_corrected > 0);

    // A stored double error persists across the relaunch.
    let mut double = w.clone();
    double.memory.flip_stored_bit(x, 4).unwrap();
    double.memory.flip_stored_bit(x, 9).unwrap();
    let out = ftmm::fault::classify_outcome(&run_with_faults(&double, &[]), &w.golden);
    assert_eq!(out.class, OutcomeClass::RetryExhausted);
    assert_eq!(out.detector, Some(Detector::EccUncorrectable));
}

#[test]
fn detection_aborts_in_cycle_with_gated_writes() {
    let w = workload(Protection::Full, Mode::FaultTolerant);
    let mut e = w.engine();
    // First drain of the first tile starts after setup and K * P compute cycles.
    let drain = 1 + 1 + 16 * 3;
    e.inject(FaultSpec { site: FaultSite::ZWriteback { row: 3, col: 2 }, bit: 7, cycle: drain });
    let out = e.run_to_completion();
    assert_eq!(out.status, RunStatus::AbortedFault);
    assert_eq!(out.fault_status.first_fault_cycle, Some(drain));
    assert_eq!(out.cycles, drain + 1);
    assert_eq!(out.interrupt_pulses.len(), 1);
    assert_eq!(out.interrupt_pulses[0].start, drain);
    let late_writes = e.memory().access_log().iter().filter(|a| a.port == ftmm::memory::Port::Z && a.cycle >= drain);
    assert_eq!(late_writes.count(), 0);
    assert!(!e.is_busy());
    assert_eq!(e.clear_fault_status(), Ok(()));
}

#[test]
fn status_cannot_be_cleared_while_running() {
    let w = workload(Protection::Full, Mode::FaultTolerant);
    let mut e = w.engine();
    e.start().unwrap();
    e.step();
    assert_eq!(e.clear_fault_status(), Err(EngineError::Busy));
    assert_eq!(e.start(), Err(EngineError::Busy));
}

#[test]
fn replica_drives_odd_rows() {
    let w = workload(Protection::Full, Mode::FaultTolerant);
    let e = w.engine();
    assert_eq!(e.row_driver(0), Unit::Primary);
    assert_eq!(e.row_driver(1), Unit::Shadow);
    let d = workload(Protection::DataOnly, Mode::FaultTolerant).engine();
    assert_eq!(d.row_driver(1), Unit::Primary);
}

#[test]
fn lockstep_words_agree_fault_free() {
    let w = workload(Protection::Full, Mode::FaultTolerant);
    let mut e = w.engine();
    e.start().unwrap();
    while e.is_busy() {
        let (a, b) = e.control_words();
        assert_eq!(a, b);
        e.step();
    }
}

#[test]
fn report_roundtrips_through_json() {
    let plan = CampaignPlan::reference(Protection::DataOnly, 400, 3);
    let report = ftmm::fault::run_campaign(&plan, 2).unwrap();
    assert_eq!(report.total(), 400);
    let text = report.to_json();
    let back = CampaignReport::from_json(&text).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.to_json(), text);
    let per_cat: u64 = report.per_category.values().flat_map(|m| m.values()).sum();
    assert_eq!(per_cat, 400);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn poisson_bound_monotone(k in 0u64..50, n in 1u64..1_000_000, conf in 0.5f64..0.999) {
        let r = poisson_upper_rate(k, n, conf);
        prop_assert!(poisson_upper_rate(k + 1, n, conf) > r);
        prop_assert!(poisson_upper_rate(k, n + 1, conf) < r);
        prop_assert!(poisson_upper_rate(k, n, (conf + 0.999) / 2.0) > r);
    }

    #[test]
    fn golden_equivalence_random_geometry(
        rows in (1usize..5).prop_map(|r| 2 * r),
        cols in 1usize..5,
        pipeline in 1usize..5,
        m in 1u32..20, n in 1u32..20, k in 1u32..10,
        seed: u64,
    ) {
        for (p, mode) in [(Protection::Full, Mode::FaultTolerant), (Protection::DataOnly, Mode::Performance)] {
            let w = Workload::generate(EngineConfig::new(rows, cols, pipeline, p), m, n, k, mode, seed).unwrap();
            let out = w.engine().run_to_completion();
            prop_assert_eq!(out.status, RunStatus::Completed);
            prop_assert_eq!(out.cycles, w.nominal_cycles());
            prop_assert_eq!(out.z.as_ref(), Some(&w.golden));
        }
    }

    #[test]
    fn single_injection_is_idempotent(idx in 0usize..8972, bit_seed: u32, cycle in 0u64..210) {
        let w = workload(Protection::Full, Mode::FaultTolerant);
        let site = enumerate_sites(&w.cfg)[idx % 497];
        let spec = FaultSpec { site, bit: bit_seed % site.width(), cycle };
        prop_assert_eq!(inject(&w, spec), inject(&w, spec));
    }
}
