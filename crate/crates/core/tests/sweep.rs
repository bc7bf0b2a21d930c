mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use asyncclip::aggregator::PolicyKind;
use asyncclip::sweep::{standard_grid, run_sweep, SweepGrid, SweepSpec, INDEX_FILE};
use asyncclip::Mode;
use common::*;

fn small_spec() -> SweepSpec {
    let mut base = base_config(Mode::ClientCentric, PolicyKind::Clip2, 4, 2);
    base.client_groups = mixed_groups(4);
    base.rounds = 20;
    SweepSpec {
        base,
        grid: SweepGrid {
            outer_lr: vec![1.0, 0.5],
            local_clip: vec![0.1, 1.0],
            ..Default::default()
        },
    }
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    out
}

#[test]
fn two_by_two_grid_writes_four_points() {
    let spec = small_spec();
    assert_eq!(spec.size(), 4);
    let dir = tempfile::tempdir().unwrap();
    let index = run_sweep(&spec, dir.path(), 2).unwrap();
    assert_eq!(index.total_points, 4);
    let subdirs: Vec<_> = fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .collect();
    assert_eq!(subdirs.len(), 4);
    assert!(dir.path().join(INDEX_FILE).exists());
    assert!(dir.path().join("point_0003/seed_11/rounds.csv").exists());

    let ranked: Vec<f64> = index
        .ranking
        .iter()
        .map(|i| index.points[*i].median_min_grad_norm_sq)
        .collect();
    assert!(ranked.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(index.best, Some(index.ranking[0]));
}

#[test]
fn standard_grids_have_expected_sizes() {
    let mut spec = small_spec();
    spec.grid = standard_grid(PolicyKind::SgdClip);
    assert_eq!(spec.points().len(), 64);
    spec.grid = standard_grid(PolicyKind::Clip2);
    assert_eq!(spec.points().len(), 256);
    spec.grid.seeds = vec![1, 2, 3];
    assert_eq!(spec.size(), 768);
}

#[test]
fn parallelism_does_not_change_outputs() {
    let mut spec = small_spec();
    spec.grid.seeds = vec![3, 4, 5];
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_sweep(&spec, a.path(), 1).unwrap();
    run_sweep(&spec, b.path(), 8).unwrap();
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert_eq!(ta.len(), 4 * 3 * 2 + 1);
    assert_eq!(ta, tb);
}

#[test]
fn median_over_seeds_drives_ranking() {
    let mut spec = small_spec();
    spec.grid.seeds = vec![1, 2, 3];
    let dir = tempfile::tempdir().unwrap();
    let index = run_sweep(&spec, dir.path(), 4).unwrap();
    for p in &index.points {
        let mut v: Vec<f64> = p.seeds.iter().map(|s| s.min_grad_norm_sq.unwrap()).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(p.median_min_grad_norm_sq, v[1]);
    }
}

#[test]
fn failing_points_are_recorded_and_sweep_continues() {
    let mut spec = small_spec();
    spec.grid = SweepGrid {
        buffer_size: vec![2, 9],
        ..Default::default()
    };
    assert!(spec.validate().is_err());
    let dir = tempfile::tempdir().unwrap();
    let index = run_sweep(&spec, dir.path(), 2).unwrap();
    assert_eq!(index.points[0].failures, 0);
    assert_eq!(index.points[1].failures, 1);
    let err = index.points[1].seeds[0].error.as_deref().unwrap();
    assert!(err.contains("1 ≤ M ≤ N"), "{err}");
    assert!(dir.path().join("point_0001/seed_11/error.txt").exists());
    assert_eq!(index.ranking, vec![0, 1]);
    assert_eq!(index.best, Some(0));
}

#[test]
fn sweep_spec_round_trips_through_toml() {
    let mut spec = small_spec();
    spec.grid.outer_clip = vec![f64::INFINITY, 1.0];
    spec.grid.seeds = vec![1, 2];
    let text = toml::to_string(&spec).unwrap();
    assert!(text.contains("outer_clip = [\"inf\", 1.0]"), "{text}");
    let back = SweepSpec::from_toml_str(&text).unwrap();
    assert_eq!(back, spec);
    assert_eq!(back.size(), 16);
}
