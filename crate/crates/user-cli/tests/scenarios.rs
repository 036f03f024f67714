use proptest::prelude::*;
use user_cli::{bundled, replay, run_scenario, RunOptions, Scenario, Verdict, BUNDLED};

fn run(name: &str) -> user_cli::RunOutcome {
    run_scenario(&bundled(name).unwrap(), &RunOptions::default()).unwrap()
}

#[test]
fn every_bundled_scenario_passes() {
    for (name, _) in BUNDLED {
        let o = run(name);
        assert!(o.passed(), "{name}: {:?}", o.failures);
        assert!(o.mirror_mismatches.is_empty(), "{name}: {:?}", o.mirror_mismatches);
        assert!(o.interlock_violations.is_empty(), "{name}");
    }
}

#[test]
fn same_seed_same_trace() {
    let a = run("full_line");
    let b = run("full_line");
    assert_eq!(a.trace, b.trace);
    assert_eq!(replay(&a.trace).unwrap(), Verdict::Identical);
}

#[test]
fn a_changed_line_is_located() {
    let mut t = run("pass_docking").trace;
    let i = t.iter().position(|l| l.contains(" ome ")).unwrap();
    t[i].push('x');
    match replay(&t).unwrap() {
        Verdict::Diverged { line, .. } => assert_eq!(line, i + 1),
        v => panic!("{v:?}"),
    }
    t.pop();
    assert!(matches!(replay(&t).unwrap(), Verdict::Incomplete { .. }));
}

#[test]
fn seed_and_config_are_recorded() {
    let s = bundled("pass_docking").unwrap();
    let opts = RunOptions {
        seed: Some(9),
        config: vec![("conveyor_speed".into(), "120".into())],
        ..RunOptions::default()
    };
    let o = run_scenario(&s, &opts).unwrap();
    assert_eq!(o.seed, 9);
    assert!(o.trace.iter().any(|l| l.contains("conveyor_speed 120")));
    assert_eq!(replay(&o.trace).unwrap(), Verdict::Identical);
}

#[test]
fn failing_expectations_are_reported() {
    let text = "name wrong\nat 220 mission pass 1 origin twin\nrun 300\nexpect mission 1 Rejected\n";
    let o = run_scenario(&text.parse().unwrap(), &RunOptions::default()).unwrap();
    assert!(!o.passed());
    assert!(o.failures[0].contains("Completed"), "{:?}", o.failures);
}

#[test]
fn parse_errors_name_the_line() {
    let cases = [
        ("run 10\nat 5 mission pass 0 origin twin\n", 2),
        ("at 5 dance\nrun 10\n", 1),
        ("at 9 interlock 1 on\nat 3 interlock 1 off\nrun 10\n", 2),
        ("run 10\nexpect mission 1 Completed\n", 2),
    ];
    for (text, line) in cases {
        let e = text.parse::<Scenario>().unwrap_err();
        assert_eq!(e.line, line, "{text:?}: {e}");
    }
}

proptest! {
    #[test]
    fn parser_never_panics(text in "[a-z0-9 .>=\n#]{0,200}") {
        let _ = text.parse::<Scenario>();
    }

    #[test]
    fn generated_schedules_parse(
        entries in prop::collection::vec((0u64..500, 1usize..=6, prop::bool::ANY), 0..12),
        run in 500u64..900,
    ) {
        let mut entries = entries;
        entries.sort_by_key(|e| e.0);
        let mut text = String::from("name gen\n");
        for (tick, k, on) in &entries {
            text += &format!("at {tick} interlock {k} {}\n", if *on { "on" } else { "off" });
        }
        text += &format!("run {run}\n");
        let s: Scenario = text.parse().unwrap();
        prop_assert_eq!(s.schedule.len(), entries.len());
        prop_assert_eq!(s.run_ticks, run);
    }
}
