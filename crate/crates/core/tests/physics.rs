use meltpool::physics::*;
use meltpool::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ti64() -> MaterialProperties {
    MaterialProperties::ti64()
}

fn random_field(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn source_free(grid: [usize; 3]) -> SimulationConfig {
    SimulationConfig {
        grid,
        power: 0.0,
        beam_start: [0.0, grid[1] as f64 / 2.0],
        frame_count: 1,
        ..Default::default()
    }
}

fn total_enthalpy(state: &SimulationState, thermal: &Thermal, dx: f64) -> f64 {
    // Recomputed from temperatures rather than read back from the solver's store.
    state
        .temperature
        .iter()
        .zip(&state.void)
        .filter(|(_, &v)| !v)
        .map(|(&t, _)| thermal.enthalpy(t) * dx.powi(3))
        .sum()
}

#[test]
fn source_free_enthalpy_is_conserved() {
    let cfg = source_free([32, 32, 32]);
    let solver = HeatSolver::new(cfg.clone(), ti64()).unwrap();
    let dt = stable_timestep(&cfg, &ti64());
    let mut s = SimulationState::from_temperature(cfg.grid, random_field(32 * 32 * 32, 293.0, 3000.0, 1), &solver.thermal);
    let before = total_enthalpy(&s, &solver.thermal, cfg.cell_size);
    for _ in 0..100 {
        solver.step(&mut s, dt).unwrap();
    }
    let after = total_enthalpy(&s, &solver.thermal, cfg.cell_size);
    let drift = ((after - before) / before).abs();
    assert!(drift < 1e-6, "relative drift {drift:e}");
}

#[test]
fn conduction_around_voids_is_conservative() {
    let cfg = source_free([12, 10, 8]);
    let solver = HeatSolver::new(cfg.clone(), ti64()).unwrap();
    let dt = stable_timestep(&cfg, &ti64());
    let mut s = SimulationState::from_temperature(cfg.grid, random_field(960, 300.0, 2500.0, 2), &solver.thermal);
    for i in (0..960).step_by(7) {
        s.void[i] = true;
        s.temperature[i] = cfg.ambient;
        s.enthalpy[i] = 0.0;
    }
    let before = total_enthalpy(&s, &solver.thermal, cfg.cell_size);
    for _ in 0..100 {
        solver.step(&mut s, dt).unwrap();
    }
    let after = total_enthalpy(&s, &solver.thermal, cfg.cell_size);
    assert!(((after - before) / before).abs() < 1e-6);
    assert!(s.void.iter().zip(&s.temperature).all(|(&v, &t)| !v || t == cfg.ambient));
}

#[test]
fn energy_gain_matches_absorbed_flux() {
    let cfg = SimulationConfig {
        grid: [64, 40, 16],
        power: 150.0,
        velocity: 1.0,
        beam_start: [20.5, 20.0],
        frame_count: 20,
        properties: PropertyModel::Constant { reference_temperature: 298.0 },
        carving: false,
        ..Default::default()
    };
    let m = ti64();
    let solver = HeatSolver::new(cfg.clone(), m.clone()).unwrap();
    let dt_max = stable_timestep(&cfg, &m);
    let n = substeps_per_interval(cfg.frame_interval, dt_max);
    let dt = cfg.frame_interval / n as f64;
    let mut s = SimulationState::ambient(cfg.grid, cfg.ambient);
    for _ in 0..n * cfg.frame_count {
        solver.step(&mut s, dt).unwrap();
    }
    let gain = total_enthalpy(&s, &solver.thermal, cfg.cell_size);
    // The flux integrates to P/2 over the plane; the beam stays > 6 r0 from every side.
    let expected = solver.absorptivity * cfg.power / 2.0 * s.time;
    assert!(((gain - expected) / expected).abs() < 0.01, "gain {gain} vs {expected}");
}

#[test]
fn full_power_flag_doubles_the_deposit() {
    let base = SimulationConfig {
        grid: [48, 32, 8],
        beam_start: [24.0, 16.0],
        frame_count: 1,
        velocity: 0.1,
        properties: PropertyModel::Constant { reference_temperature: 298.0 },
        carving: false,
        ..Default::default()
    };
    let deposit = |full: bool| {
        let cfg = SimulationConfig { full_power_source: full, ..base.clone() };
        let solver = HeatSolver::new(cfg.clone(), ti64()).unwrap();
        let mut s = SimulationState::ambient(cfg.grid, cfg.ambient);
        solver.step(&mut s, 1e-7).unwrap();
        total_enthalpy(&s, &solver.thermal, cfg.cell_size)
    };
    let (half, full) = (deposit(false), deposit(true));
    assert!((full / half - 2.0).abs() < 1e-9);
}

#[test]
fn maximum_principle_without_source() {
    for (model, seed) in [
        (PropertyModel::TemperatureDependent, 3),
        (PropertyModel::Constant { reference_temperature: 1000.0 }, 4),
    ] {
        let cfg = SimulationConfig {
            properties: model,
            ..source_free([16, 16, 16])
        };
        let solver = HeatSolver::new(cfg.clone(), ti64()).unwrap();
        let dt = stable_timestep(&cfg, &ti64());
        let t0 = random_field(4096, 293.0, 3300.0, seed);
        let (lo, hi) = t0.iter().fold((f64::MAX, f64::MIN), |(a, b), &t| (a.min(t), b.max(t)));
        let mut s = SimulationState::from_temperature(cfg.grid, t0, &solver.thermal);
        for _ in 0..100 {
            solver.step(&mut s, dt).unwrap();
            for &t in &s.temperature {
                assert!(t >= lo - 1e-9 && t <= hi + 1e-9, "{t} outside [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn field_is_symmetric_about_the_beam_plane() {
    let cfg = SimulationConfig {
        grid: [48, 24, 12],
        power: 150.0,
        beam_start: [10.5, 12.0],
        frame_count: 15,
        properties: PropertyModel::Constant { reference_temperature: 298.0 },
        carving: false,
        ..Default::default()
    };
    let out = run_case(&cfg, &ti64()).unwrap();
    let [nx, ny, nz] = cfg.grid;
    let solver = HeatSolver::new(cfg.clone(), ti64()).unwrap();
    // Check the f64 state too, not only the stored f32 frames.
    let mut s = SimulationState::ambient(cfg.grid, cfg.ambient);
    let dt = out.meta.substep_seconds;
    for _ in 0..out.meta.substeps_per_frame * cfg.frame_count {
        solver.step(&mut s, dt).unwrap();
    }
    let mut worst = 0.0f64;
    for x in 0..nx {
        for y in 0..ny / 2 {
            for z in 0..nz {
                let a = s.temperature[s.index(x, y, z)];
                let b = s.temperature[s.index(x, ny - 1 - y, z)];
                worst = worst.max((a - b).abs());
            }
        }
    }
    assert!(worst < 1e-9, "asymmetry {worst:e}");
    assert!(s.temperature.iter().cloned().fold(0.0, f64::max) > 1000.0);
}

#[test]
fn variable_property_field_is_symmetric_too() {
    let cfg = SimulationConfig {
        grid: [40, 20, 10],
        power: 250.0,
        beam_start: [10.5, 10.0],
        frame_count: 12,
        ..Default::default()
    };
    let out = run_case(&cfg, &ti64()).unwrap();
    let [nx, ny, nz] = cfg.grid;
    let last = out.frames.last().unwrap();
    let idx = |x: usize, y: usize, z: usize| (x * ny + y) * nz + z;
    for x in 0..nx {
        for y in 0..ny / 2 {
            for z in 0..nz {
                let (a, b) = (last[idx(x, y, z)], last[idx(x, ny - 1 - y, z)]);
                assert!((a - b).abs() <= 1e-3 * a.abs(), "{a} vs {b}");
            }
        }
    }
}

#[test]
fn quasi_steady_translation() {
    // One cell per frame so the beam moves by whole cells between frames.
    let cfg = SimulationConfig {
        grid: [140, 32, 16],
        power: 60.0,
        velocity: 2.0,
        beam_start: [20.5, 16.0],
        frame_count: 80,
        properties: PropertyModel::Constant { reference_temperature: 298.0 },
        carving: false,
        ..Default::default()
    };
    let out = run_case(&cfg, &ti64()).unwrap();
    let [_, ny, nz] = cfg.grid;
    let window = |k: usize| -> Vec<f64> {
        let bx = cfg.beam_x_cells(cfg.frame_time(k)).floor() as usize;
        let f = &out.frames[k];
        let mut w = Vec::new();
        for x in bx - 15..bx + 8 {
            for y in 0..ny {
                for z in 0..nz {
                    w.push(f64::from(f[(x * ny + y) * nz + z]) - cfg.ambient);
                }
            }
        }
        w
    };
    let (a, b) = (window(65), window(75));
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let rel = rms(&diff) / rms(&b);
    assert!(rel < 0.01, "relative RMS {rel}");
}

fn small_case(power: f64, frames: usize) -> SimulationConfig {
    SimulationConfig {
        case_id: format!("P{power}"),
        grid: [64, 32, 16],
        power,
        velocity: 0.8,
        beam_start: [20.5, 16.0],
        frame_count: frames,
        ..Default::default()
    }
}

#[test]
fn void_mask_is_monotone_and_voids_are_ambient() {
    let out = run_case(&small_case(300.0, 30), &ti64()).unwrap();
    let mut carved_any = false;
    for k in 0..out.frames.len() {
        for (i, &v) in out.voids[k].iter().enumerate() {
            if v == 1 {
                carved_any = true;
                assert_eq!(out.frames[k][i], 293.0);
            }
            if k > 0 && out.voids[k - 1][i] == 1 {
                assert_eq!(v, 1, "void cell {i} refilled at frame {k}");
            }
        }
        assert!(out.frames[k].iter().all(|&t| f64::from(t) <= ti64().vaporization_temperature));
        assert!(out.frames[k].iter().all(|&t| t >= 293.0));
    }
    assert!(carved_any, "300 W should open a keyhole");
}

#[test]
fn melt_volume_increases_with_power() {
    let m = ti64();
    let volumes: Vec<usize> = [100.0, 150.0, 200.0]
        .iter()
        .map(|&p| {
            let out = run_case(&small_case(p, 50), &m).unwrap();
            melt_volume(&out.frames[49], &m)
        })
        .collect();
    assert!(volumes[0] > 0);
    assert!(volumes.windows(2).all(|w| w[1] >= w[0]), "{volumes:?}");
}

#[test]
fn molten_or_vaporized_volume_increases_with_power() {
    // Past keyhole onset the open trench eats into the melt region, so count
    // carved cells together with molten ones.
    let m = ti64();
    let volumes: Vec<usize> = [100.0, 200.0, 300.0, 400.0]
        .iter()
        .map(|&p| {
            let cfg = SimulationConfig {
                grid: [64, 32, 32],
                ..small_case(p, 50)
            };
            let out = run_case(&cfg, &m).unwrap();
            let voids = out.voids[49].iter().filter(|&&v| v == 1).count();
            melt_volume(&out.frames[49], &m) + voids
        })
        .collect();
    assert!(volumes.windows(2).all(|w| w[1] > w[0]), "{volumes:?}");
}

#[test]
fn zero_power_stays_ambient() {
    let out = run_case(&small_case(0.0, 5), &ti64()).unwrap();
    for (f, v) in out.frames.iter().zip(&out.voids) {
        assert!(f.iter().all(|&t| t == 293.0));
        assert!(v.iter().all(|&b| b == 0));
    }
}

#[test]
fn runs_are_bitwise_deterministic() {
    let cfg = small_case(250.0, 8);
    let a = run_case(&cfg, &ti64()).unwrap();
    let b = run_case(&cfg, &ti64()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn frame_times_follow_the_interval() {
    let cfg = small_case(100.0, 3);
    let out = run_case(&cfg, &ti64()).unwrap();
    assert_eq!(out.frames.len(), 3);
    assert!((out.frame_time(0) - 5e-6).abs() < 1e-18);
    assert!((out.frame_time(2) - 15e-6).abs() < 1e-18);
}

#[test]
fn case_directory_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_case(&small_case(200.0, 4), &ti64()).unwrap();
    write_case(dir.path(), &out).unwrap();
    let back = read_case(dir.path()).unwrap();
    assert_eq!(back, out);
}

#[test]
fn oversized_substep_is_caught_as_instability() {
    let cfg = source_free([8, 8, 8]);
    let solver = HeatSolver::new(cfg.clone(), ti64()).unwrap();
    let dt = 40.0 * stable_timestep(&cfg, &ti64());
    let t0: Vec<f64> = (0..512).map(|i| if i % 2 == 0 { 293.0 } else { 3000.0 }).collect();
    let mut s = SimulationState::from_temperature(cfg.grid, t0, &solver.thermal);
    let err = (0..200).find_map(|_| solver.step(&mut s, dt).err()).expect("blows up");
    assert!(matches!(err, Error::Instability { .. }), "{err}");
}
