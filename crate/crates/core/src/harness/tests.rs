use super::presets::*;
use super::*;
use crate::ats::AtsEvent;
use crate::engine::{Command, Origin};

fn no_upload_rejections(out: &RunOutput) {
    let bad: Vec<_> = out
        .logs
        .ats
        .iter()
        .filter(|e| matches!(e, AtsEvent::UploadRejected { .. }))
        .collect();
    assert!(bad.is_empty(), "{bad:?}");
}

#[test]
fn baseline_is_deterministic_and_replays() {
    let s = baseline(3, 2000);
    let a = run(&s).unwrap();
    let b = run(&s).unwrap();
    assert_eq!(a.output_lines(), b.output_lines());
    assert_eq!(a.net_lines(), b.net_lines());
    assert_eq!(a.ats_lines(), b.ats_lines());
    no_upload_rejections(&a);
    assert!(a.metrics.activations > 0);
    assert_eq!(a.metrics.quality_gate_violations, 0);
    assert!(a.metrics.fates.balanced(), "{:?}", a.metrics.fates);

    let dir = tempfile::tempdir().unwrap();
    a.write_dir(dir.path()).unwrap();
    assert!(replay_check(dir.path()).unwrap().passed());
    let recomputed = report(dir.path()).unwrap();
    assert_eq!(recomputed.to_text(), a.metrics.to_text());
    let failed: Vec<_> = run_suites(&a, &recomputed)
        .into_iter()
        .filter(|r| !r.passed)
        .collect();
    assert!(failed.is_empty(), "{failed:?}");
}

#[test]
fn different_seeds_differ() {
    let a = run(&baseline(1, 500)).unwrap();
    let b = run(&baseline(2, 500)).unwrap();
    assert_ne!(a.input_lines(), b.input_lines());
}

#[test]
fn failover_keeps_the_stream_whole() {
    let out = run(&failover(5, 2000, 4000)).unwrap();
    assert!(out.down.is_none());
    assert_eq!(out.metrics.failovers.len(), 1);
    assert!(out.metrics.failovers[0].within_bound());
    let verdict = replay_check_text(
        &lines_text(&out.input_lines()),
        &lines_text(&out.output_lines()),
    );
    assert!(verdict.passed(), "{verdict:?}");
}

#[test]
fn congestion_throttles_and_recovers_without_changing_input() {
    let hot = run(&congestion(9, true)).unwrap();
    let calm = run(&congestion(9, false)).unwrap();
    assert_eq!(hot.metrics.rate_factor_min_milli, 200);
    assert_eq!(hot.metrics.rate_factor_final_milli, 1000);
    assert_eq!(hot.input_lines(), calm.input_lines());
    assert_eq!(hot.output_lines(), calm.output_lines());
    assert!(hot.metrics.fates.balanced());
}

#[test]
fn killed_agent_does_not_disturb_the_rest() {
    let control = run(&containment(4, None)).unwrap();
    let killed = run(&containment(4, Some(7))).unwrap();
    no_upload_rejections(&control);
    let others = |o: &RunOutput| agent_projection(&o.logs, 7);
    assert!(
        others(&control)
            .iter()
            .filter(|l| l.starts_with("ACT"))
            .count()
            >= 9
    );
    assert_eq!(others(&control), others(&killed));
    assert_eq!(
        non_ats_projection(&control.logs),
        non_ats_projection(&killed.logs)
    );
}

#[test]
fn colocated_agent_wins_a_contested_tick() {
    let out = run(&proximity(11)).unwrap();
    let seqs: Vec<(Origin, u64)> = out
        .logs
        .input
        .iter()
        .filter_map(|r| match &r.cmd {
            Command::Submit(o) if o.owner == "p9" => Some((o.origin, r.seq)),
            _ => None,
        })
        .collect();
    assert_eq!(seqs.len(), 2, "{seqs:?}");
    assert_eq!(seqs[0].0, Origin::Ats);
}
