use std::process::Command;

use sdenkf::dynamics::{Lorenz96Config, Model};
use sdenkf::harness::{
    emit_results, generate_truth_and_data, init_lorenz_ensemble, metadata, rmse_table, run_twin_experiment,
    ExperimentConfig, LorenzSetup, ModelConfig, OutputPaths,
};
use sdenkf::rng::substream;

fn short_lorenz(roster: &[&str], cycles: usize, realizations: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: "short".into(),
        roster: roster.iter().map(|s| s.parse().unwrap()).collect(),
        cycles,
        realizations,
        ..ExperimentConfig::default()
    }
}

#[test]
fn lorenz_truth_after_spin_up_is_chaotic_and_bounded() {
    let cfg = short_lorenz(&[], 2, 1);
    let run = generate_truth_and_data(&cfg, 0).unwrap();
    let start = &run.states[0];
    let moved = start
        .iter()
        .zip(&run.initial)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(moved > 1.0);
    assert!(start.iter().all(|x| x.abs() < 20.0));
    let spread = start.iter().fold(0.0f64, |m, x| m.max((x - start[0]).abs()));
    assert!(spread > 1.0);
}

#[test]
fn zero_variance_members_stay_identical() {
    let setup = LorenzSetup {
        init_variance: 0.0,
        dynamics: Lorenz96Config {
            dim: 32,
            ..Lorenz96Config::default()
        },
        ..LorenzSetup::default()
    };
    let (e, free) = init_lorenz_ensemble(&setup, 4, &mut substream(11, &[])).unwrap();
    for member in e.members() {
        assert_eq!(member, e.member(0));
    }
    assert_eq!(free.as_slice(), e.member(0));
}

#[test]
fn initial_draws_have_the_configured_mean() {
    let setup = LorenzSetup {
        spinup_steps: 0,
        dynamics: Lorenz96Config {
            dim: 1000,
            ..Lorenz96Config::default()
        },
        ..LorenzSetup::default()
    };
    let (e, _) = init_lorenz_ensemble(&setup, 100, &mut substream(12, &[])).unwrap();
    let count = (e.state_len() * e.size()) as f64;
    let mean = e.matrix().iter().sum::<f64>() / count;
    let se = (setup.init_variance / count).sqrt();
    assert!((mean - setup.init_mean).abs() < 3.0 * se, "{mean}");
}

#[test]
fn free_run_starts_from_the_initial_sample_mean() {
    let setup = LorenzSetup {
        dynamics: Lorenz96Config {
            dim: 16,
            ..Lorenz96Config::default()
        },
        spinup_steps: 10,
        ..LorenzSetup::default()
    };
    let (_, free) = init_lorenz_ensemble(&setup, 3, &mut substream(13, &[])).unwrap();
    let (draws, _) = init_lorenz_ensemble(
        &LorenzSetup {
            spinup_steps: 0,
            ..setup.clone()
        },
        3,
        &mut substream(13, &[]),
    )
    .unwrap();
    let mut expected: Vec<f64> = draws.mean().iter().copied().collect();
    setup.dynamics.advance(&mut expected, 10).unwrap();
    assert_eq!(free, expected);
}

#[test]
fn table_has_one_row_per_cycle_and_filter() {
    let rec = run_twin_experiment(&short_lorenz(&["EnKF", "DCT"], 3, 1)).unwrap();
    let table = rmse_table(&rec).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(
        lines[0],
        "cycle,filter,forecast_rmse_x,analysis_rmse_x,analysis_se_x,free_rmse_x,diverged"
    );
    assert!(lines[1].starts_with("1,EnKF,"));
    assert!(lines[6].starts_with("3,DCT,"));
}

#[test]
fn empty_roster_writes_only_free_run_columns() {
    let rec = run_twin_experiment(&short_lorenz(&[], 2, 1)).unwrap();
    let table = rmse_table(&rec).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "cycle,free_rmse_x");
    assert_eq!(lines.len(), 3);
}

#[test]
fn metadata_round_trips_the_config() {
    let cfg = short_lorenz(&["DWT"], 2, 1);
    let rec = run_twin_experiment(&cfg).unwrap();
    let text = metadata(&rec).unwrap();
    let doc: toml::Table = text.parse().unwrap();
    let back: ExperimentConfig = doc["config"].clone().try_into().unwrap();
    assert_eq!(back, cfg);
    assert!(doc["summary"]["filters"].as_array().unwrap().len() == 1);
}

#[test]
fn reruns_emit_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_lorenz(&["EnKF", "DCT", "DWT"], 3, 2);
    let a = emit_results(&run_twin_experiment(&cfg).unwrap(), &dir.path().join("a/run")).unwrap();
    let b = emit_results(&run_twin_experiment(&cfg).unwrap(), &dir.path().join("b/run")).unwrap();
    assert_eq!(a, OutputPaths::for_stem(&dir.path().join("a/run")));
    for (x, y) in [(&a.table, &b.table), (&a.metadata, &b.metadata)] {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    assert!(a.timing.exists());
}

#[test]
fn shallow_water_metadata_reports_mass_drift() {
    let mut cfg = ExperimentConfig::shallow_water_desk();
    cfg.roster = vec![];
    cfg.cycles = 1;
    cfg.cycle_length = 240.0;
    if let ModelConfig::ShallowWater(s) = &mut cfg.model {
        s.grid.nx = 8;
        s.grid.ny = 8;
        s.grid.dx = 1.2e6;
        s.grid.dt = 40.0;
        s.grid.bump_width = 4.0;
        s.grid.background_offset = [1.0, 0.0];
        s.spinup = 1200.0;
        s.snapshot_start = 1200.0;
        s.snapshot_end = 2400.0;
        s.snapshot_stride = 240.0;
        s.relax = 240.0;
    }
    let rec = run_twin_experiment(&cfg).unwrap();
    assert!(rec.max_free_mass_drift().unwrap() < 1e-12);
    assert!(metadata(&rec).unwrap().contains("free_mass_drift"));
    assert_eq!(
        rmse_table(&rec).unwrap().lines().next().unwrap(),
        "cycle,free_rmse_h,free_rmse_hu,free_rmse_hv"
    );
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sdenkf"))
}

#[test]
fn cli_prints_and_runs_a_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli().args(["config", "lorenz96"]).output().unwrap();
    assert!(out.status.success());
    let mut cfg = ExperimentConfig::from_toml_str(std::str::from_utf8(&out.stdout).unwrap()).unwrap();
    assert_eq!(cfg, ExperimentConfig::default());

    cfg.cycles = 2;
    cfg.realizations = 1;
    let path = dir.path().join("cfg.toml");
    std::fs::write(&path, cfg.to_toml_string().unwrap()).unwrap();
    let stem = dir.path().join("out/res");
    let status = cli()
        .args(["run", path.to_str().unwrap(), "--out", stem.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(status.success());
    let table = std::fs::read_to_string(OutputPaths::for_stem(&stem).table).unwrap();
    assert_eq!(table.lines().count(), 1 + 2 * 4);
}

#[test]
fn cli_rejects_bad_configs_with_exit_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "ensemble_size = 1\n").unwrap();
    let out = cli().args(["run", path.to_str().unwrap()]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let missing = cli().args(["run", "/nonexistent/cfg.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn cli_selftest_passes() {
    let out = cli().args(["selftest", "--instances", "5"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn shipped_presets_parse_and_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_file(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        names.push(cfg.name);
    }
    names.sort();
    assert!(names.contains(&"lorenz96-partial".to_string()));
    assert!(names.contains(&"shallow-water-full-scale".to_string()));
    let desk = ExperimentConfig::from_file(&dir.join("shallow_water_desk.toml")).unwrap();
    assert_eq!(desk, ExperimentConfig::shallow_water_desk());
}
