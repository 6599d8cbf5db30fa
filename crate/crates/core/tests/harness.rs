mod common;

use common::*;
use vecrep_core::harness::*;

const LIGHT: [(f64, f64); 4] = [(2.0, 0.25), (2.0, 1.0 / 3.0), (3.0, 0.25), (3.0, 1.0 / 3.0)];
const GRID: [(f64, f64); 8] = [
    (2.0, 0.25),
    (2.0, 1.0 / 3.0),
    (3.0, 0.25),
    (3.0, 1.0 / 3.0),
    (4.0, 0.25),
    (4.0, 1.0 / 3.0),
    (4.5, 0.25),
    (4.5, 1.0 / 3.0),
];

fn ci_stats(config: &ExperimentConfig) -> (f64, f64) {
    let r = run_experiment(config).unwrap();
    batch_stats(&r.metrics, config.learner.d_max)
}

/// `a` is below `b` by more than three combined standard errors.
fn clearly_below(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 + 3.0 * (a.1.powi(2) + b.1.powi(2)).sqrt() < b.0
}

#[test]
fn same_seed_writes_identical_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let files: Vec<(Vec<u8>, Vec<u8>)> = dirs
        .iter()
        .map(|d| {
            let mut c = realistic(3.0, 0.25, PolicyKind::Ltra, None, 60.0, 7);
            c.output = OutputSpec {
                metrics_csv: Some(d.path().join("m.csv")),
                summary_json: Some(d.path().join("s.json")),
            };
            run_experiment(&c).unwrap();
            (
                std::fs::read(d.path().join("m.csv")).unwrap(),
                std::fs::read(d.path().join("s.json")).unwrap(),
            )
        })
        .collect();
    assert!(files[0].0.starts_with(METRICS_HEADER.as_bytes()));
    assert_eq!(files[0].0, files[1].0);
    // Summaries embed their own output paths, which differ between the dirs.
    let strip = |b: &[u8]| {
        let mut v: serde_json::Value = serde_json::from_slice(b).unwrap();
        v["config"]["output"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&files[0].1), strip(&files[1].1));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let c = realistic(2.0, 1.0 / 3.0, PolicyKind::Ltra, None, 40.0, 11);
    let echoed = ExperimentConfig::from_json(&c.to_json()).unwrap();
    assert_eq!(echoed, c);
    let (a, b) = (
        run_experiment(&c).unwrap(),
        run_experiment(&echoed).unwrap(),
    );
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(format!("{:?}", a.summary), format!("{:?}", b.summary));
}

#[test]
fn sweeps_are_deterministic_and_tag_rows_with_the_axis() {
    let base = realistic(2.0, 1.0 / 3.0, PolicyKind::Ltra, None, 20.0, 3);
    let ks = [1.0, 2.0, 3.0];
    let (a, b) = (
        sweep(&base, SweepAxis::K, &ks).unwrap(),
        sweep(&base, SweepAxis::K, &ks).unwrap(),
    );
    assert_eq!(a.failed(), 0);
    let seeds: Vec<u64> = a.points.iter().map(|p| p.seed).collect();
    assert_eq!(seeds, b.points.iter().map(|p| p.seed).collect::<Vec<_>>());
    assert!(seeds.windows(2).all(|w| w[0] != w[1]) && !seeds.contains(&base.seed));
    for (p, q) in a.points.iter().zip(&b.points) {
        let (p, q) = (p.report.as_ref().unwrap(), q.report.as_ref().unwrap());
        assert_eq!(p.metrics, q.metrics);
        assert_eq!(p.k as f64, p.config.learner.k_replicas.unwrap() as f64);
    }
    let mut csv = Vec::new();
    write_sweep_csv(&a, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with(&format!("sweep_K,{METRICS_HEADER}\n")));
    let rows: usize = a
        .points
        .iter()
        .map(|p| p.report.as_ref().unwrap().metrics.len())
        .sum();
    assert_eq!(text.lines().count(), rows + 1);
    for k in ks {
        assert!(text
            .lines()
            .skip(1)
            .any(|l| l.starts_with(&format!("{k:?},"))));
    }
}

#[test]
fn arrival_rate_sweep_gives_one_group_per_value() {
    let base = realistic(2.0, 0.25, PolicyKind::Ltra, None, 10.0, 5);
    let values: Vec<f64> = (0..7).map(|i| 2.0 + 0.5 * i as f64).collect();
    let report = sweep(&base, SweepAxis::Lambda0, &values).unwrap();
    assert_eq!(report.failed(), 0);
    assert_eq!(report.points.len(), 7);
    for (p, v) in report.points.iter().zip(&values) {
        assert_eq!(p.report.as_ref().unwrap().config.conditions.lambda0, *v);
    }
}

#[test]
fn single_is_ltra_with_one_replica() {
    let single = run_experiment(&realistic(3.0, 0.25, PolicyKind::Single, None, 60.0, 9)).unwrap();
    let ltra = run_experiment(&realistic(3.0, 0.25, PolicyKind::Ltra, Some(1), 60.0, 9)).unwrap();
    assert_eq!(single.k, 1);
    assert_eq!(single.metrics.len(), ltra.metrics.len());
    for (s, l) in single.metrics.iter().zip(&ltra.metrics) {
        assert_eq!(
            (s.task_index, s.inst_delay_s, s.failed),
            (l.task_index, l.inst_delay_s, l.failed)
        );
    }
}

#[test]
fn ltra_beats_random_at_light_cells() {
    for (l0, ratio) in LIGHT {
        let ltra = realistic(l0, ratio, PolicyKind::Ltra, None, 300.0, 1);
        let report = run_experiment(&ltra).unwrap();
        assert!(
            report.summary.tasks >= 10_000,
            "{} tasks",
            report.summary.tasks
        );
        let l = batch_stats(&report.metrics, ltra.learner.d_max);
        let r = ci_stats(&realistic(l0, ratio, PolicyKind::Random, None, 300.0, 1));
        assert!(
            clearly_below(l, r),
            "λ₀={l0} ratio={ratio}: ltra {l:?} random {r:?}"
        );
    }
}

#[test]
#[ignore = "fails: at λ₀=4.5 each learner's own stream queues on the SeVs it prefers and random spreads load better"]
fn ltra_beats_random_at_heavy_cells() {
    for ratio in [0.25, 1.0 / 3.0] {
        let l = ci_stats(&realistic(4.5, ratio, PolicyKind::Ltra, None, 300.0, 1));
        let r = ci_stats(&realistic(4.5, ratio, PolicyKind::Random, None, 300.0, 1));
        assert!(l.0 < r.0, "ratio={ratio}: ltra {l:?} random {r:?}");
    }
}

#[test]
#[ignore = "fails: K=2 and K=3 tie within noise at λ₀=4, ratio 1/4 and K=2 usually wins"]
fn three_replicas_are_best_at_lambda4_quarter() {
    let seeds = [1, 2, 3, 4];
    let delays: Vec<f64> = (1..=5)
        .map(|k| {
            mean_over_seeds(
                &realistic(4.0, 0.25, PolicyKind::Ltra, Some(k), 300.0, 0),
                &seeds,
            )
            .0
        })
        .collect();
    let best = delays
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0
        + 1;
    assert_eq!(best, 3, "{delays:?}");
}

#[test]
fn genie_dominates_single_replica_policies_across_the_grid() {
    for (l0, ratio) in GRID {
        let g = ci_stats(&realistic(l0, ratio, PolicyKind::Genie, None, 150.0, 2));
        for other in [PolicyKind::Random, PolicyKind::Single] {
            let o = ci_stats(&realistic(l0, ratio, other, None, 150.0, 2));
            assert!(
                clearly_below(g, o),
                "λ₀={l0} ratio={ratio}: genie {g:?} {other:?} {o:?}"
            );
        }
    }
}

#[test]
#[ignore = "fails: replicated LTRA at K* takes the minimum over several SeVs and beats the one-SeV genie at light load"]
fn genie_beats_replicated_ltra() {
    for (l0, ratio) in LIGHT {
        let g = ci_stats(&realistic(l0, ratio, PolicyKind::Genie, None, 300.0, 1));
        let l = ci_stats(&realistic(l0, ratio, PolicyKind::Ltra, None, 300.0, 1));
        assert!(g.0 <= l.0, "λ₀={l0} ratio={ratio}: genie {g:?} ltra {l:?}");
    }
}

#[test]
#[ignore = "fails: learned single offloading queues behind its own stream and is slower than random"]
fn random_is_slower_than_learned_single() {
    for (l0, ratio) in GRID {
        let r = ci_stats(&realistic(l0, ratio, PolicyKind::Random, None, 300.0, 1));
        let s = ci_stats(&realistic(l0, ratio, PolicyKind::Single, None, 300.0, 1));
        assert!(
            s.0 <= r.0,
            "λ₀={l0} ratio={ratio}: single {s:?} random {r:?}"
        );
    }
}
