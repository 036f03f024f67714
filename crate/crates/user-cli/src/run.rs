use std::time::{Duration, Instant};

use serde_json::json;

use crate::scenario::{Action, Expect, Scenario};
use crate::stack::{Handle, Stack, StackConfig};
use crate::trace;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the scenario's seed.
    pub seed: Option<u64>,
    /// `(key, value)` factory overrides applied after the scenario's own.
    /// They are written into the trace header.
    pub config: Vec<(String, String)>,
    pub record_ledger: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub name: String,
    pub seed: u64,
    pub trace: Vec<String>,
    /// Failed expectations, in file order.
    pub failures: Vec<String>,
    pub mirror_mismatches: Vec<String>,
    pub interlock_violations: Vec<String>,
    pub metrics: serde_json::Value,
    pub kpi: serde_json::Value,
    pub missions: serde_json::Value,
    pub wall: Duration,
    pub stack: Stack,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn build_stack(s: &Scenario, opts: &RunOptions) -> anyhow::Result<(Stack, u64)> {
    let seed = opts.seed.or(s.seed).unwrap_or(42);
    let cfg = s.factory_config(seed).map_err(anyhow::Error::msg)?;
    let mut sc = StackConfig::new(cfg, seed);
    sc.record_ledger = opts.record_ledger;
    Ok((Stack::new(sc)?, seed))
}

/// Runs a scenario to completion in-process and checks its expectations.
pub fn run_scenario(s: &Scenario, opts: &RunOptions) -> anyhow::Result<RunOutcome> {
    let started = Instant::now();
    let owned;
    let s = if opts.config.is_empty() {
        s
    } else {
        owned = s.with_config(&opts.config);
        &owned
    };
    let (mut stack, seed) = build_stack(s, opts)?;
    let mut handles = Vec::new();
    for e in &s.schedule {
        stack.advance_before_tick(e.tick);
        match &e.action {
            Action::Mission { kind, origin } => handles.push(stack.submit(*kind, *origin)),
            Action::Interlock { station, on } => stack.interlock(*station, *on),
            Action::Fault(f) => stack.fault(f),
        }
    }
    stack.advance_to(s.run_ticks * stack.tick_ms());
    stack.settle();

    let mut failures = Vec::new();
    for x in &s.expects {
        if let Some(why) = check(&stack, &handles, x) {
            failures.push(format!("expect {x}: {why}"));
        }
    }

    let mut lines = trace::header(seed, s);
    lines.extend(stack.trace().iter().cloned());
    lines.push(format!("end {}", stack.tick()));

    let core = stack.core();
    let missions = json!(handles
        .iter()
        .zip(stack.submissions())
        .map(|(h, sub)| {
            let o = stack.outcome(*h);
            json!({
                "tick": sub.tick,
                "kind": sub.kind.name(),
                "station": sub.kind.station(),
                "origin": sub.origin.name(),
                "state": o.state,
                "reason": o.reason,
                "replicated": o.replicated,
            })
        })
        .collect::<Vec<_>>());
    let metrics = json!({
        "sync": core.metrics(),
        "gateway": stack.gateway().render_metrics(),
        "stale": core.is_stale(),
    });
    let kpi = json!(core.kpi_report(Some(0), None));
    Ok(RunOutcome {
        name: s.name.clone(),
        seed,
        trace: lines,
        failures,
        mirror_mismatches: stack.mirror_mismatches(),
        interlock_violations: stack.interlock_violations(),
        metrics,
        kpi,
        missions,
        wall: started.elapsed(),
        stack,
    })
}

fn check(stack: &Stack, handles: &[Handle], x: &Expect) -> Option<String> {
    let outcome = |n: usize| stack.outcome(handles[n - 1]);
    match x {
        Expect::Mission(n, state) => {
            let o = outcome(*n);
            (o.state != *state).then(|| format!("mission is {}", o.state))
        }
        Expect::Reason(n, r) => {
            let o = outcome(*n);
            (o.reason.as_deref() != Some(r.as_str())).then(|| format!("reason is {:?}", o.reason))
        }
        Expect::Replicated(n, want) => {
            let o = outcome(*n);
            (o.replicated != *want).then(|| format!("replicated is {}", o.replicated))
        }
        Expect::Sequence(point, values) => {
            let hist = stack.point_history(point);
            let mut it = hist.iter();
            let ok = values.iter().all(|v| it.any(|h| h == v));
            (!ok).then(|| format!("history was {}", hist.join(" ")))
        }
        Expect::Material(k, c, v) | Expect::Waste(k, c, v) => {
            let ledger = stack.device().factory().snapshot_ledger();
            let map = if matches!(x, Expect::Material(..)) {
                &ledger.material_units
            } else {
                &ledger.waste_units
            };
            let got = map.get(k).copied().unwrap_or(0);
            (!c.holds(got, *v)).then(|| format!("value is {got}"))
        }
    }
}

/// Re-runs the scenario recorded in a trace and compares.
pub fn replay(recorded: &[String]) -> anyhow::Result<trace::Verdict> {
    if recorded.is_empty() {
        return Ok(trace::Verdict::Incomplete { lines: 0 });
    }
    let (seed, scenario) = trace::parse_header(recorded).map_err(anyhow::Error::msg)?;
    let fresh = run_scenario(
        &scenario,
        &RunOptions {
            seed: Some(seed),
            ..RunOptions::default()
        },
    )?;
    Ok(trace::compare(recorded, &fresh.trace))
}
