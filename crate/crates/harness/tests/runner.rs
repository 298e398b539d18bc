use dpgibo_harness::{execute, presets, write_outputs, ExperimentConfig};

fn small_dim_config() -> ExperimentConfig {
    let mut cfg = presets::load("dim_scaling", false).unwrap();
    cfg.seeds = vec![1, 2];
    cfg.dims = Some(vec![2, 3]);
    cfg.methods[0].iterations = 5;
    cfg
}

#[test]
fn random_search_budget_matches_within_one_batch() {
    let cfg = small_dim_config();
    let r = execute(&cfg, 2).unwrap();
    assert_eq!(r.runs.len(), 2 * 2 * 2);
    for d in [2, 3] {
        for run in r.runs_for("gibo", d) {
            let rs = r.runs_for("random_search", d).find(|o| o.seed == run.seed).unwrap();
            let batch = (d as u64 + 1) * 50;
            let gap = run.record.total_evaluations().abs_diff(rs.record.total_evaluations());
            assert!(gap <= batch, "d={d} seed={}: {gap}", run.seed);
        }
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let cfg = small_dim_config();
    let a = execute(&cfg, 1).unwrap();
    let b = execute(&cfg, 3).unwrap();
    let csv = |r: &dpgibo_harness::ExperimentResult| r.runs.iter().map(|o| o.record.to_csv()).collect::<Vec<_>>();
    assert_eq!(csv(&a), csv(&b));
    assert_eq!(a.summary_csv(), b.summary_csv());
}

#[test]
fn dimension_sweep_layout() {
    let cfg = small_dim_config();
    let r = execute(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let base = write_outputs(&r, dir.path()).unwrap();
    assert!(base.join("d2/gibo/seed_1.csv").exists());
    assert!(base.join("d3/random_search/seed_2.csv").exists());
    let table = std::fs::read_to_string(base.join("dim_scaling.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "d,method,baseline,median_gap,q1_gap,q3_gap");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2,gibo,random_search,"));
}

#[test]
fn single_dimension_sweep_has_one_row() {
    let mut cfg = small_dim_config();
    cfg.dims = Some(vec![4]);
    cfg.seeds = vec![0];
    let r = execute(&cfg, 1).unwrap();
    assert_eq!(r.dim_scaling_csv().unwrap().lines().count(), 2);
}

#[test]
fn summary_medians_cover_configured_seeds() {
    let mut cfg = presets::load("huber_vs_dpgd", false).unwrap();
    cfg.seeds = vec![0, 1, 2];
    for m in &mut cfg.methods {
        m.iterations = 3;
    }
    let r = execute(&cfg, 1).unwrap();
    let summary = r.summary_csv();
    let rows: Vec<Vec<&str>> = summary.lines().map(|l| l.split(',').collect()).collect();
    for m in ["gibo", "dp_gd", "gd_nonprivate"] {
        let mut losses: Vec<f64> = rows
            .iter()
            .filter(|r| r[0] == "run" && r[2] == m)
            .map(|r| r[5].parse().unwrap())
            .collect();
        assert_eq!(losses.len(), 3);
        losses.sort_by(f64::total_cmp);
        let median: f64 = rows.iter().find(|r| r[0] == "median" && r[2] == m).unwrap()[5].parse().unwrap();
        assert_eq!(median, losses[1]);
    }
}
