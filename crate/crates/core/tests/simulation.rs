use std::collections::HashMap;

use duopath_core::netsim::{self, setup_time, PathModel, SimConfig};
use duopath_core::{BufferConfig, EventKind, FetchGate, PathId, Phase, Policy, SchedulerConfig, KIB, MIB};

fn path(rtt: f64, rate: f64) -> PathModel {
    PathModel { delta1_ms: 5.0, delta2_ms: 5.0, ..PathModel::constant(rtt, rate) }
}

fn config(p0: PathModel, p1: PathModel) -> SimConfig {
    SimConfig {
        paths: [p0, p1],
        object_size: 600 * 312_500,
        scheduler: SchedulerConfig::default(),
        buffer: BufferConfig::default(),
        rng_seed: 0,
        jitter: false,
        time_limit_ms: 4.0e6,
    }
}

#[test]
fn single_path_matches_closed_form() {
    for (rtt, rate, target, base) in [
        (20.0, 1000.0, 40.0, 256 * KIB),
        (50.0, 400.0, 20.0, 64 * KIB),
        (10.0, 3000.0, 60.0, MIB),
        (80.0, 700.0, 40.0, 16 * KIB),
    ] {
        let mut cfg = config(path(rtt, rate), path(rtt, rate)).single_path(PathId::ZERO);
        cfg.scheduler.base_chunk = base;
        cfg.buffer.prebuffer_target = target;
        let got = netsim::run(&cfg).unwrap().summary.prebuffer_download_ms.unwrap();
        let bytes = target * cfg.buffer.bitrate as f64;
        let chunks = (bytes / base as f64).ceil();
        let want = setup_time(&cfg.paths[0]).pi + bytes / rate + chunks * rtt;
        assert!(((got - want) / want).abs() < 0.05, "{got} vs {want}");
    }
}

#[test]
fn identical_paths_split_evenly() {
    for rate in [300.0, 1000.0, 2500.0] {
        let out = netsim::run(&config(path(30.0, rate), path(30.0, rate))).unwrap();
        let f = out.summary.frac_path0_prebuffer.unwrap();
        assert!((f - 0.5).abs() <= 0.05, "rate {rate}: {f}");
    }
}

#[test]
fn short_rtt_path_carries_more_during_prebuffering() {
    for (r0, r1) in [(10.0, 60.0), (20.0, 100.0), (5.0, 40.0)] {
        let out = netsim::run(&config(path(r0, 1000.0), path(r1, 1000.0))).unwrap();
        assert!(out.summary.frac_path0_prebuffer.unwrap() > 0.5);
    }
}

#[test]
fn startup_latency_is_first_transition_to_steady() {
    for policy in Policy::ALL {
        let mut cfg = config(path(20.0, 900.0), path(45.0, 500.0));
        cfg.scheduler.policy = policy;
        cfg.jitter = true;
        let out = netsim::run(&cfg).unwrap();
        let first = out
            .log
            .iter()
            .find(|r| r.kind == EventKind::PhaseChange && r.from_phase == Some(Phase::PreBuffering))
            .unwrap();
        assert_eq!(first.phase, Phase::Steady);
        assert_eq!(Some(first.t_ms), out.summary.prebuffer_download_ms);
    }
}

#[test]
fn surplus_bandwidth_cycles_without_draining() {
    // aggregate 700 B/ms against a 312.5 B/ms bitrate
    let out = netsim::run(&config(path(20.0, 400.0), path(40.0, 300.0))).unwrap();
    let phases: Vec<Phase> = out.log.iter().filter(|r| r.kind == EventKind::PhaseChange).map(|r| r.phase).collect();
    assert!(!phases.contains(&Phase::Drained), "{phases:?}");
    let refills = phases.iter().filter(|&&p| p == Phase::ReBuffering).count();
    assert!(refills >= 10, "{refills} refill periods");
    assert_eq!(phases.last(), Some(&Phase::Finished));
    assert_eq!(out.summary.stall_ms, 0.0);
    let cycles = &out.summary.rebuffer_cycle_ms;
    assert!(!cycles.is_empty());
}

#[test]
fn idle_paths_are_put_to_work() {
    for policy in Policy::ALL {
        let mut cfg = config(path(20.0, 800.0), path(60.0, 1200.0));
        cfg.scheduler.policy = policy;
        cfg.jitter = true;
        cfg.rng_seed = 9;
        netsim::run_observed(&cfg, |s| {
            let sched = s.scheduler();
            if s.fetch_gate() == FetchGate::FetchPaused || sched.fully_assigned() || sched.reassembly().parked.is_some()
            {
                return;
            }
            for p in PathId::BOTH {
                let st = sched.path(p);
                assert!(!st.schedulable() || st.busy(), "{p} idle at {:?}", s.now());
            }
        })
        .unwrap();
    }
}

/// Per-path (completion time, transfer duration) of every chunk completed
/// before playback starts.
fn prebuffer_chunks(cfg: &SimConfig) -> [Vec<(f64, f64)>; 2] {
    let out = netsim::run(cfg).unwrap();
    let end = out.summary.prebuffer_download_ms.unwrap();
    let mut issued = HashMap::new();
    let mut done: [Vec<(f64, f64)>; 2] = Default::default();
    for r in out.log.iter() {
        match r.kind {
            EventKind::Assign => {
                issued.insert(r.sequence.unwrap(), r.t_ms);
            }
            EventKind::Complete if r.t_ms < end => {
                done[r.path.unwrap().index()].push((r.t_ms, r.t_ms - issued[&r.sequence.unwrap()]));
            }
            _ => {}
        }
    }
    done
}

#[test]
fn paired_chunks_take_equally_long() {
    for rtt in [10.0, 25.0, 40.0] {
        for (slow, k) in [(1000.0, 1.0), (800.0, 2.0), (600.0, 3.0), (500.0, 4.0)] {
            for base in [64 * KIB, 256 * KIB, MIB] {
                let mut cfg = config(path(rtt, slow * k), path(rtt, slow));
                cfg.scheduler.base_chunk = base;
                // keep both paths fetching for the whole object
                cfg.object_size = 80 * MIB;
                cfg.buffer.prebuffer_target = 600.0;
                let done = prebuffer_chunks(&cfg);
                let mut pairs = 0;
                for (&(_, fast), &(_, slow_dur)) in done[0].iter().skip(5).zip(done[1].iter().skip(5)) {
                    let bound = rtt + 0.1 * slow_dur;
                    assert!((fast - slow_dur).abs() < bound, "rtt {rtt} ratio {k} base {base}: {fast} vs {slow_dur}");
                    pairs += 1;
                }
                assert!(pairs >= 5, "only {pairs} pairs");
            }
        }
    }
}

#[test]
fn identical_paths_complete_together() {
    let mut cfg = config(path(20.0, 1000.0), path(20.0, 1000.0));
    cfg.buffer.prebuffer_target = 600.0;
    cfg.object_size = 40 * MIB;
    let done = prebuffer_chunks(&cfg);
    for (a, b) in done[0].iter().skip(5).zip(done[1].iter().skip(5)) {
        assert!((a.0 - b.0).abs() < 20.0 + 0.1 * b.1);
    }
}

#[test]
fn identical_configs_give_identical_logs() {
    let mut cfg = config(path(15.0, 700.0), path(70.0, 1400.0));
    cfg.jitter = true;
    cfg.rng_seed = 42;
    assert_eq!(netsim::run(&cfg).unwrap().log, netsim::run(&cfg).unwrap().log);
    let mut other = cfg.clone();
    other.rng_seed = 43;
    assert_ne!(netsim::run(&cfg).unwrap().log, netsim::run(&other).unwrap().log);
}
