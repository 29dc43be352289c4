//! Acceptance criteria, one pass/fail line each.
//!
//! Runs as a plain binary (`harness = false`) so the summary is always
//! printed: `cargo test -p mas-core --test acceptance`.

mod common;

use std::time::{Duration, Instant};

use serde_json::{json, Value};

use mas_core::agents::{execute_process_schema, query_history_schema, Trace};
use mas_core::gcode::{self, Verdict};
use mas_core::harness::{
    class_share, run_trial, run_trials, BackendPlan, BackendSpec, CalibrationTarget, ErrorClass, ExperimentRun,
    TrialOptions,
};
use mas_core::llm::{parse_response, request_body, ChatMessage};
use mas_core::shopfloor::{MachineConfig, Outcome, ShopFloor};

const MASTER_SEED: u64 = 42;

struct Check {
    ok: bool,
    detail: String,
    /// Canonical JSON of the result, compared across reruns.
    fingerprint: String,
}

fn report_json(run: &ExperimentRun) -> String {
    serde_json::to_string(&run.report).expect("report serializes")
}

fn c1_two_step_clean() -> Check {
    let s = common::scenario("two_step");
    let mut ok = true;
    let mut detail = Vec::new();
    let mut fingerprint = String::new();
    for seed in [0, MASTER_SEED, u64::MAX] {
        let run = run_trials(&s, 50, seed, &TrialOptions::default()).expect("trials run");
        let r = &run.report;
        ok &= r.n_trials == 50 && r.success_rate == 1.0 && r.overall_error_rate == 0.0;
        detail.push(format!(
            "seed {seed}: success {} error {}",
            r.success_rate, r.overall_error_rate
        ));
        fingerprint.push_str(&report_json(&run));
    }
    Check {
        ok,
        detail: detail.join("; "),
        fingerprint,
    }
}

fn c2_four_step_clean() -> Check {
    let s = common::scenario("four_step");
    let dir = tempfile::tempdir().expect("tempdir");
    let options = TrialOptions {
        trace_dir: Some(dir.path().to_path_buf()),
        ..TrialOptions::default()
    };
    let run = run_trials(&s, 50, MASTER_SEED, &options).expect("trials run");
    let machines = s.machines();
    let mut events = 0;
    let mut inexact = 0;
    for t in &run.trials {
        let text = std::fs::read_to_string(t.trace_path.as_ref().expect("trace written")).expect("trace readable");
        let trace = Trace::from_jsonl(&text).expect("trace parses");
        for r in trace.records().iter().filter(|r| r.event() == "call") {
            if r.payload["function"] != "execute_process" {
                continue;
            }
            events += 1;
            let args: Value =
                serde_json::from_str(r.payload["arguments"].as_str().unwrap_or_default()).unwrap_or_default();
            let tool = machines
                .get(args["machine_name"].as_str().unwrap_or_default())
                .and_then(|m| m.tool_table.get(args["process_name"].as_str().unwrap_or_default()));
            let exact = tool.is_some_and(|t| {
                gcode::allocation_verdict(args["gcode"].as_str().unwrap_or_default(), &s.program, *t) == Verdict::Exact
            });
            inexact += usize::from(!exact);
        }
    }
    let r = &run.report;
    Check {
        ok: r.success_rate == 1.0 && events == 200 && inexact == 0,
        detail: format!(
            "success {} error {}; {events} execute_process events, {inexact} not Exact",
            r.success_rate, r.overall_error_rate
        ),
        fingerprint: report_json(&run),
    }
}

fn c3_fault_recovery(workers: usize) -> Check {
    let s = common::scenario("four_step");
    let target = CalibrationTarget {
        error_rate: 0.14,
        mix: [0.43, 0.14, 0.43],
        seed: MASTER_SEED,
    };
    let options = TrialOptions {
        workers,
        backend_override: Some(BackendSpec::Faulted {
            profile: None,
            calibrate: Some(target),
        }),
        ..TrialOptions::default()
    };
    let run = run_trials(&s, 2000, MASTER_SEED, &options).expect("trials run");
    let r = &run.report;
    let shares: Vec<f64> = ErrorClass::ALL.iter().map(|c| class_share(&run.trials, *c)).collect();
    let overall_ok = (r.overall_error_rate - 0.14).abs() <= 0.02;
    let mix_ok = shares
        .iter()
        .zip(target.mix)
        .all(|(got, want)| (got - want).abs() <= 0.03);
    Check {
        ok: overall_ok && mix_ok,
        detail: format!(
            "overall {:.4} (target .14 ±.02); shares {:.4}/{:.4}/{:.4} (target .43/.14/.43 ±.03) over {} failures",
            r.overall_error_rate, shares[0], shares[1], shares[2], r.failures
        ),
        fingerprint: report_json(&run),
    }
}

fn c4_gcode_oracle() -> Check {
    let mut mismatched = 0;
    let mut not_exact = 0;
    let mut tools_checked = 0;
    let mut summary = Vec::new();
    for seed in 0..500u64 {
        let g = common::random_program(MASTER_SEED.wrapping_mul(1_000_003).wrapping_add(seed), 200, 6);
        let program = gcode::parse(&g.text()).expect("generated programs parse");
        let (preamble, oracle) = common::linear_partition(&g);
        let segments = gcode::segment_by_tool(&program);
        let ours: Vec<(Option<u32>, std::ops::Range<usize>)> =
            segments.iter().map(|s| (s.tool_number, s.body_range.clone())).collect();
        let preamble_ok = segments.iter().all(|s| s.preamble_blocks.len() == preamble.len());
        if ours != oracle || !preamble_ok {
            mismatched += 1;
        }
        for t in gcode::tool_numbers(&program) {
            tools_checked += 1;
            let section = gcode::extract_for_tool(&program, t).expect("tool exists");
            if gcode::allocation_verdict(&section, &program, t) != Verdict::Exact {
                not_exact += 1;
            }
        }
        summary.push(json!({"blocks": program.blocks.len(), "segments": ours.len()}));
    }
    Check {
        ok: mismatched == 0 && not_exact == 0,
        detail: format!(
            "500 programs: {mismatched} partition mismatches; {tools_checked} tools, {not_exact} not Exact"
        ),
        fingerprint: Value::Array(summary).to_string(),
    }
}

fn c5_transcript_replay() -> Check {
    let s = common::scenario("two_step");
    let plan = BackendPlan::prepare(
        &BackendSpec::Scripted {
            path: "two_step_transcript.jsonl".into(),
        },
        &s,
    )
    .expect("transcript loads");
    let (a, trace_a) = run_trial(&s, &plan, 0, MASTER_SEED).expect("replay runs");
    let (_, trace_b) = run_trial(&s, &plan, 0, MASTER_SEED).expect("replay runs");
    let flow = trace_a.message_flow();
    let expected: Vec<(String, String)> = [
        ("user", "product-1"),
        ("product-1", "Milling1"),
        ("Milling1", "product-1"),
        ("product-1", "Drilling1"),
        ("Drilling1", "product-1"),
        ("product-1", "user"),
    ]
    .iter()
    .map(|(f, t)| (f.to_string(), t.to_string()))
    .collect();
    let identical = trace_a.to_jsonl() == trace_b.to_jsonl();
    Check {
        ok: a.success && flow == expected && identical,
        detail: format!(
            "success {}; flow {}; traces byte-identical: {identical}",
            a.success,
            flow.iter()
                .map(|(f, t)| format!("{f}->{t}"))
                .collect::<Vec<_>>()
                .join(" ")
        ),
        fingerprint: trace_a.to_jsonl(),
    }
}

fn c6_wire_format() -> Check {
    let dir = common::fixtures().join("remote");
    let read = |name: &str| std::fs::read_to_string(dir.join(name)).expect("fixture readable");
    let messages: Vec<ChatMessage> = serde_json::from_str(&read("request_messages.json")).expect("messages parse");
    let body = request_body(&messages, &[execute_process_schema(), query_history_schema()], "gpt-4");
    let golden = read("request_golden.json");
    let request_ok = body == golden;

    let response = parse_response(&read("response_function_call.json")).expect("response parses");
    let call = response.function_call().cloned();
    let args: Value = call
        .as_ref()
        .and_then(|c| serde_json::from_str(&c.arguments).ok())
        .unwrap_or_default();
    let response_ok = call.as_ref().is_some_and(|c| c.name == "execute_process")
        && args
            == json!({
                "process_name": "contouring",
                "product_name": "product-1",
                "machine_name": "Milling1",
                "gcode": "N10 G90 G71 G80 G40\nN30 T4 M06\nN80 G01 X105."
            });
    Check {
        ok: request_ok && response_ok,
        detail: format!("request byte-identical: {request_ok}; response fields match: {response_ok}"),
        fingerprint: body,
    }
}

fn c7_shopfloor_statistics() -> Check {
    let mut config = MachineConfig::new([("drilling", 2)]);
    config.breakdown_probability = 0.1;
    config.defect_rate = 0.2;
    let mut floor = ShopFloor::new(MASTER_SEED);
    floor.add_machine("Drilling1", config);
    let n = 10_000;
    let (mut breakdowns, mut defects) = (0usize, 0usize);
    for i in 0..n {
        let r = floor
            .execute_process(
                "Drilling1",
                "drilling",
                &format!("p{i}"),
                "N10 T2 M06\nN20 G81 X1. Y1. Z-5.",
            )
            .expect("supported operation");
        match r.outcome {
            Outcome::Breakdown => breakdowns += 1,
            Outcome::Defect => defects += 1,
            _ => {}
        }
    }
    let bound = |p: f64| 3.0 * (p * (1.0 - p) / n as f64).sqrt();
    let b = breakdowns as f64 / n as f64;
    let d = defects as f64 / n as f64;
    let ok = (b - 0.1).abs() <= bound(0.1) && (d - 0.18).abs() <= bound(0.18);
    Check {
        ok,
        detail: format!(
            "breakdown {b:.4} (0.1 ± {:.4}); defect {d:.4} (0.18 ± {:.4})",
            bound(0.1),
            bound(0.18)
        ),
        fingerprint: json!({"breakdowns": breakdowns, "defects": defects, "clock": floor.clock().now()}).to_string(),
    }
}

fn main() {
    let mut failed = 0;
    let mut line = |id: &str, name: &str, limit: Option<Duration>, run: &dyn Fn() -> Check| -> String {
        let start = Instant::now();
        let check = run();
        let elapsed = start.elapsed();
        let in_time = limit.is_none_or(|l| elapsed <= l);
        let ok = check.ok && in_time;
        failed += usize::from(!ok);
        let limit_note = limit.map(|l| format!(", limit {}s", l.as_secs())).unwrap_or_default();
        println!(
            "criterion {id} {name}: {} ({}; {:.2}s{limit_note})",
            if ok { "PASS" } else { "FAIL" },
            check.detail,
            elapsed.as_secs_f64()
        );
        check.fingerprint
    };

    let f1 = line(
        "1",
        "two-step clean run",
        Some(Duration::from_secs(5)),
        &c1_two_step_clean,
    );
    let f2 = line(
        "2",
        "four-step clean run",
        Some(Duration::from_secs(10)),
        &c2_four_step_clean,
    );
    let f3 = line("3", "fault-profile recovery", Some(Duration::from_secs(60)), &|| {
        c3_fault_recovery(0)
    });
    let f4 = line(
        "4",
        "G-code oracle equivalence",
        Some(Duration::from_secs(5)),
        &c4_gcode_oracle,
    );
    line("5", "scripted transcript replay", None, &c5_transcript_replay);
    line("6", "wire-format golden", None, &c6_wire_format);
    let f7 = line(
        "7",
        "shop-floor statistics",
        Some(Duration::from_secs(2)),
        &c7_shopfloor_statistics,
    );

    let rerun = || {
        let again = [
            c1_two_step_clean().fingerprint,
            c2_four_step_clean().fingerprint,
            c3_fault_recovery(1).fingerprint,
            c4_gcode_oracle().fingerprint,
            c7_shopfloor_statistics().fingerprint,
        ];
        let first = [&f1, &f2, &f3, &f4, &f7];
        let same: Vec<bool> = first.iter().zip(&again).map(|(a, b)| *a == b).collect();
        Check {
            ok: same.iter().all(|s| *s),
            detail: format!(
                "reports identical on rerun (criterion 3 rerun on one worker): {}",
                same.iter()
                    .map(|s| if *s { "yes" } else { "no" })
                    .collect::<Vec<_>>()
                    .join("/")
            ),
            fingerprint: String::new(),
        }
    };
    line("8", "determinism", None, &rerun);

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
