use std::fs;
use std::path::Path;

use tempfile::TempDir;
use uavtwin::env::Environment;
use uavtwin::scene::{generate_urban_grid, read_scene, write_scene, Aabb, Scene, UrbanGridParams, Vec3};
use uavtwin_cli::commands::{cmd_eval, cmd_ledger_sim, cmd_probe, cmd_scene_gen, cmd_sweep, cmd_train};
use uavtwin_cli::metrics::EpisodeTable;
use uavtwin_cli::plot::{capacity_chart, sinr_chart};
use uavtwin_cli::probe::Variable;
use uavtwin_cli::sweep::Grid;
use uavtwin_cli::{CliError, Overrides, RunConfig};

fn config_in(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.output.dir = dir.to_path_buf();
    cfg
}

fn short(dir: &Path, episodes: usize) -> RunConfig {
    let mut cfg = config_in(dir);
    cfg.ppo.episodes = episodes;
    cfg
}

#[test]
fn unknown_keys_are_config_errors() {
    for text in ["bogus = 1", "[scene]\nrowz = 3", "[ppo]\nwidth = 8\nlr = 1", "[nonsense]\na = 1"] {
        assert!(matches!(RunConfig::from_toml(text), Err(CliError::Config(_))), "{text}");
    }
}

#[test]
fn flag_beats_file_beats_default() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, "seed = 7\n[ppo]\nseed = 3\nepisodes = 12\n[output]\ndir = \"from-file\"\n").unwrap();

    let defaults = RunConfig::resolve(None, &Overrides::default()).unwrap();
    assert_eq!(defaults.run_seed(), 42);
    assert_eq!(defaults.ppo.episodes, 300);

    let file = RunConfig::resolve(Some(&path), &Overrides::default()).unwrap();
    assert_eq!(file.run_seed(), 7);
    assert_eq!(file.ppo_params().seed, 7);
    assert_eq!(file.ppo.episodes, 12);
    assert_eq!(file.output.dir, Path::new("from-file"));
    assert_eq!(file.scene, UrbanGridParams::default());

    let flags = Overrides {
        seed: Some(9),
        out: Some("from-flag".into()),
    };
    let both = RunConfig::resolve(Some(&path), &flags).unwrap();
    assert_eq!(both.run_seed(), 9);
    assert_eq!(both.output.dir, Path::new("from-flag"));
    assert_eq!(both.ppo.episodes, 12);
}

#[test]
fn written_config_reloads_identically() {
    let mut cfg = RunConfig {
        seed: Some(5),
        ..Default::default()
    };
    cfg.ppo.width = 32;
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
}

#[test]
fn invalid_height_range_fails_before_generation() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.scene.height_min = 80.0;
    cfg.scene.height_max = 20.0;
    let err = cmd_scene_gen(&cfg, None).unwrap_err();
    assert!(matches!(err, CliError::Config(ref m) if m.contains("[scene]")), "{err}");
    assert_eq!(err.exit_code(), 2);
    assert!(!dir.path().join("scene.txt").exists());
}

#[test]
fn scene_gen_default_round_trips() {
    let dir = TempDir::new().unwrap();
    let report = cmd_scene_gen(&config_in(dir.path()), None).unwrap();
    let scene = read_scene(&report.path).unwrap();
    assert_eq!(scene, generate_urban_grid(&UrbanGridParams::default()).unwrap());
    assert_eq!(report.receivers, 3);
}

#[test]
fn scene_gen_three_by_four_reports_complexity() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.scene.rows = 3;
    cfg.scene.cols = 4;
    let report = cmd_scene_gen(&cfg, Some(&dir.path().join("city.txt"))).unwrap();
    assert_eq!(report.buildings, 12);
    assert_eq!(report.complexity, 61);
    let text = report.to_string();
    assert!(text.contains("buildings: 12") && text.contains("(L): 61"), "{text}");
}

#[test]
fn two_episode_train_writes_all_artifacts() {
    let dir = TempDir::new().unwrap();
    let report = cmd_train(&short(dir.path(), 2)).unwrap();
    assert_eq!(report.episodes, 2);
    let table = EpisodeTable::read(&dir.path().join("episodes.csv")).unwrap();
    assert_eq!(table.rows(), 2);
    for name in ["policy.ckpt", "sinr.svg", "capacity.svg", "config.toml"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let svg = fs::read_to_string(dir.path().join("sinr.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn default_train_has_300_rows_and_golden_header() {
    let dir = TempDir::new().unwrap();
    cmd_train(&config_in(dir.path())).unwrap();
    let csv = fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/episodes_header.csv")).unwrap();
    assert_eq!(csv.lines().next(), golden.lines().next());
    assert_eq!(csv.lines().count(), 301);
    let table = EpisodeTable::read(&dir.path().join("episodes.csv")).unwrap();
    assert_eq!(table.receivers(), 3);
    assert_eq!(table.rows(), 300);
}

#[test]
fn plots_are_deterministic_given_the_csv() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    cmd_train(&short(a.path(), 6)).unwrap();
    cmd_train(&short(b.path(), 6)).unwrap();
    for name in ["episodes.csv", "sinr.svg", "capacity.svg"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
    let table = EpisodeTable::read(&a.path().join("episodes.csv")).unwrap();
    assert_eq!(sinr_chart(&table).into_bytes(), fs::read(a.path().join("sinr.svg")).unwrap());
    assert_eq!(capacity_chart(&table).into_bytes(), fs::read(a.path().join("capacity.svg")).unwrap());
}

#[test]
fn eval_matches_training_greedy_report_and_repeats() {
    let dir = TempDir::new().unwrap();
    let cfg = short(dir.path(), 5);
    let trained = cmd_train(&cfg).unwrap();
    let ckpt = dir.path().join("policy.ckpt");
    let first = cmd_eval(&cfg, &ckpt).unwrap();
    assert_eq!(first, trained.greedy);
    assert_eq!(cmd_eval(&cfg, &ckpt).unwrap(), first);
}

#[test]
fn corrupted_checkpoint_names_offset() {
    let dir = TempDir::new().unwrap();
    let cfg = short(dir.path(), 1);
    cmd_train(&cfg).unwrap();
    let ckpt = dir.path().join("policy.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[200] ^= 0x40;
    fs::write(&ckpt, &bytes).unwrap();
    let err = cmd_eval(&cfg, &ckpt).unwrap_err();
    assert!(matches!(err, CliError::Runtime(_)));
    assert!(err.to_string().contains("offset"), "{err}");
}

#[test]
fn checkpoint_shape_mismatch_lists_fields() {
    let dir = TempDir::new().unwrap();
    let cfg = short(dir.path(), 1);
    cmd_train(&cfg).unwrap();
    let mut other = cfg.clone();
    other.ppo.width = 32;
    let err = cmd_eval(&other, &dir.path().join("policy.ckpt")).unwrap_err();
    assert!(matches!(err, CliError::Config(ref m) if m.contains("width")), "{err}");
}

#[test]
fn single_point_sweep_sits_at_bounds_center() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(dir.path());
    let report = cmd_sweep(&cfg, Grid::new(1, 1, 1).unwrap()).unwrap();
    let scene = cfg.build_scene().unwrap();
    assert_eq!(report.result.rows.len(), 1);
    assert_eq!(report.result.best().position, scene.bounds.center());
    let text = fs::read_to_string(&report.path).unwrap();
    assert!(text.starts_with("ix,iy,iz,x,y,z,reward,sinr_db_r1,sinr_db_r2,sinr_db_r3\n"));
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn empty_scene_sweep_peaks_above_receiver_at_floor() {
    let dir = TempDir::new().unwrap();
    let scene = Scene {
        buildings: vec![],
        ground_reflectance: 0.0,
        receivers: vec![Vec3::new(30.0, 70.0, 1.5)],
        uav_start: Vec3::new(50.0, 50.0, 30.0),
        bounds: Aabb::new(Vec3::new(0.0, 0.0, 10.0), Vec3::new(100.0, 100.0, 50.0)),
    };
    let path = dir.path().join("empty.txt");
    write_scene(&scene, &path).unwrap();
    let mut cfg = config_in(dir.path());
    cfg.scene_file = Some(path);
    // Keep the SNR below the ceiling so the reward is strictly monotone.
    cfg.radio.tx_power = 1e-6;
    let report = cmd_sweep(&cfg, Grid::new(11, 11, 5).unwrap()).unwrap();
    let best = report.result.best();
    assert_eq!(best.index, (3, 7, 0));
    assert_eq!(best.position, Vec3::new(30.0, 70.0, 10.0));
    assert!(best.sinr_db[0] < cfg.radio.sinr_ceiling_db);
}

#[test]
fn sweep_max_dominates_every_row_and_start() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.scene.rows = 2;
    cfg.scene.cols = 2;
    // Odd horizontal counts and this altitude put uav_start on the lattice.
    cfg.scene.uav_altitude = 37.5;
    let report = cmd_sweep(&cfg, Grid::new(7, 7, 5).unwrap()).unwrap();
    let best = report.result.best().reward;
    assert!(report.result.rows.iter().all(|r| r.reward <= best));
    let start = cfg.build_scene().unwrap().uav_start;
    let on_lattice = report.result.rows.iter().find(|r| r.position == start).expect("start on lattice");
    assert_eq!(on_lattice.reward, report.start_reward);
    assert!(best >= report.start_reward);
    let first = report.result.rows.iter().position(|r| r.reward == best).unwrap();
    assert_eq!(first, report.result.argmax);
    let grid = report.result.grid;
    for (k, r) in report.result.rows.iter().enumerate() {
        assert_eq!(grid.linear(r.index.0, r.index.1, r.index.2), k);
    }
}

#[test]
fn sweep_agrees_with_direct_evaluation() {
    let dir = TempDir::new().unwrap();
    let cfg = config_in(dir.path());
    let env: Environment = cfg.build_env().unwrap();
    let report = cmd_sweep(&cfg, Grid::new(3, 3, 2).unwrap()).unwrap();
    for r in &report.result.rows {
        let (reward, reports) = env.evaluate_position(r.position).unwrap();
        assert_eq!(reward, r.reward);
        assert_eq!(reports.iter().map(|x| x.sinr_db).collect::<Vec<_>>(), r.sinr_db);
    }
}

#[test]
fn honest_ledger_settles_every_task() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.ledger.tasks = 100;
    cfg.ledger.fault_rate = 0.0;
    let report = cmd_ledger_sim(&cfg).unwrap();
    assert_eq!(report.tasks, 100);
    assert_eq!((report.audit.settled, report.audit.refunded), (100, 0));
    assert!(report.audit.is_clean());
    assert_eq!(report.audit.final_supply, report.audit.genesis_mint);
    for name in ["events.log", "timeline.csv", "audit.json"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let timeline = fs::read_to_string(dir.path().join("timeline.csv")).unwrap();
    assert_eq!(timeline.lines().count(), 101);
}

#[test]
fn dishonest_ledger_refunds_every_task() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.ledger.tasks = 100;
    cfg.ledger.fault_rate = 1.0;
    let report = cmd_ledger_sim(&cfg).unwrap();
    assert_eq!(report.dishonest_nodes, cfg.ledger.nodes);
    assert_eq!((report.audit.settled, report.audit.refunded), (0, 100));
    assert!(report.audit.is_clean());
    assert!(report.audit.burned_slash > 0);
}

#[test]
fn ledger_sim_is_seeded() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let mut cfg = config_in(a.path());
    cfg.ledger.tasks = 20;
    cfg.ledger.fault_rate = 0.4;
    let first = cmd_ledger_sim(&cfg).unwrap();
    cfg.output.dir = b.path().to_path_buf();
    let second = cmd_ledger_sim(&cfg).unwrap();
    assert_eq!(first.state_hash, second.state_hash);
    assert_eq!(
        fs::read(a.path().join("events.log")).unwrap(),
        fs::read(b.path().join("events.log")).unwrap()
    );
}

fn probe_cfg(dir: &Path) -> RunConfig {
    let mut cfg = short(dir, 2);
    cfg.env.episode_length = 10;
    cfg
}

#[test]
fn doubling_receivers_doubles_candidates_exactly() {
    let dir = TempDir::new().unwrap();
    let out = cmd_probe(&probe_cfg(dir.path()), Variable::R, &[1, 2, 4]).unwrap();
    let c: Vec<u64> = out.report.rows.iter().map(|r| r.counters.candidate_paths).collect();
    assert_eq!(c[1], 2 * c[0]);
    assert_eq!(c[2], 2 * c[1]);
    assert!((out.report.slope - 1.0).abs() < 1e-12);
    assert!(out.path.exists());
}

#[test]
fn doubling_episodes_doubles_steps_exactly() {
    let dir = TempDir::new().unwrap();
    let out = cmd_probe(&probe_cfg(dir.path()), Variable::E, &[1, 2, 4]).unwrap();
    let steps: Vec<u64> = out.report.rows.iter().map(|r| r.counters.env_steps).collect();
    assert_eq!(steps, vec![10, 20, 40]);
    assert!((out.report.slope - 1.0).abs() < 1e-12);
}

#[test]
fn doubling_width_quadruples_macs_from_64() {
    let dir = TempDir::new().unwrap();
    let out = cmd_probe(&probe_cfg(dir.path()), Variable::W, &[32, 64, 128]).unwrap();
    let m: Vec<f64> = out.report.rows.iter().map(|r| r.counters.mlp_macs as f64).collect();
    assert!((m[2] / m[1] / 4.0 - 1.0).abs() <= 0.10, "{}", m[2] / m[1]);
    assert!((out.report.slope - 2.0).abs() <= 0.15, "{}", out.report.slope);
}

#[test]
fn probe_rejects_too_few_values() {
    let dir = TempDir::new().unwrap();
    let err = cmd_probe(&probe_cfg(dir.path()), Variable::T, &[10, 20]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
