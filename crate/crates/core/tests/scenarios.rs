// SPDX-License-Identifier: Apache-2.0

use omnilive::harness::{measure, replay, scenarios, ReplayMode};
use omnilive::Config;

#[test]
fn bundled_scenarios_pass_in_virtual_mode() {
    let cfg = Config::default();
    for trace in scenarios::bundled() {
        let report = replay(&trace, &cfg, ReplayMode::Virtual).unwrap();
        for v in &report.expects {
            println!("{} {} {} {}", trace.name, v.id, v.pass, v.detail);
        }
        println!("{}", serde_json::to_string(&measure(&report)).unwrap());
        assert!(report.all_passed(), "{}: {:?}", trace.name, report.failures());
    }
}

#[test]
fn virtual_replay_is_byte_identical() {
    let cfg = Config::default();
    let trace = scenarios::barge_in();
    let a = replay(&trace, &cfg, ReplayMode::Virtual).unwrap().to_json();
    let b = replay(&trace, &cfg, ReplayMode::Virtual).unwrap().to_json();
    assert_eq!(a, b);
}

#[test]
fn real_time_replay_answers_every_query() {
    let cfg = Config::default();
    let trace = scenarios::plumbing_latency(10);
    let report = replay(&trace, &cfg, ReplayMode::RealTime { speed: 1.0 }).unwrap();
    let m = measure(&report);
    println!("{}", serde_json::to_string(&m).unwrap());
    assert_eq!(m.answered, 10);
    let fa = m.first_audio_ms.unwrap();
    assert_eq!(fa.count, 10);
    assert!(fa.p95 < 50.0, "{fa:?}");
}

#[test]
fn real_time_barge_in_keeps_ordering() {
    let cfg = Config::default();
    let report = replay(&scenarios::barge_in(), &cfg, ReplayMode::RealTime { speed: 4.0 }).unwrap();
    assert!(report.all_passed(), "{:?}", report.failures());
    assert_eq!(report.output.stale_audio_after_interrupt, 0);
}
