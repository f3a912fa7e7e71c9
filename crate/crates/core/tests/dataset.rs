use std::fs;

use meltpool::dataset::*;
use meltpool::physics::{run_case, CaseOutput, MaterialProperties, SimulationConfig};
use meltpool::Error;
use proptest::prelude::*;

fn ulp(x: f32) -> f32 {
    let x = x.abs();
    f32::from_bits(x.to_bits() + 1) - x
}

fn cases() -> Vec<CaseOutput> {
    let m = MaterialProperties::ti64();
    [(150.0, 0.6), (250.0, 0.6), (150.0, 1.0), (250.0, 1.0)]
        .iter()
        .map(|&(p, v)| {
            let cfg = SimulationConfig {
                case_id: format!("P{p}_V{}", v * 1e3),
                grid: [48, 24, 16],
                power: p,
                velocity: v,
                beam_start: [12.5, 12.0],
                frame_count: 6,
                ..Default::default()
            };
            run_case(&cfg, &m).unwrap()
        })
        .collect()
}

fn small_opts() -> PreprocessOptions {
    PreprocessOptions {
        crop: CropSpec { window: [16, 16, 8] },
        ..Default::default()
    }
}

#[test]
fn mask_and_field_agree_exactly() {
    let ds = build_dataset(&cases(), &small_opts()).unwrap();
    assert_eq!(ds.records.len(), 24);
    let mut ones = 0;
    for r in &ds.records {
        for (&f, &m) in r.field.iter().zip(&r.mask) {
            assert!((0.0..=1.0).contains(&f));
            assert_eq!(m == 1, f == 0.0);
            ones += usize::from(m);
        }
    }
    assert!(ones > 0);
}

#[test]
fn samples_carry_process_points_in_dataset_units() {
    let ds = build_dataset(&cases(), &small_opts()).unwrap();
    let r = &ds.records[7];
    assert_eq!(r.meta.case_id, "P250_V600");
    assert_eq!(r.meta.frame, 1);
    assert_eq!(r.meta.point.power, 250.0);
    assert_eq!(r.meta.point.velocity, 600.0);
    assert!((r.meta.point.time - 10.0).abs() < 1e-9);
    let ranges = ds.input_ranges().unwrap();
    assert_eq!(ranges.power, [150.0, 250.0]);
    assert_eq!(ranges.velocity, [600.0, 1000.0]);
}

#[test]
fn split_is_by_case() {
    let ds = build_dataset(&cases(), &small_opts()).unwrap();
    for case in &ds.manifest.cases {
        assert!(ds.records.iter().filter(|r| r.meta.case_id == case.id).all(|r| r.meta.split == case.split));
    }
    assert_eq!(ds.manifest.cases.iter().filter(|c| c.split == Split::Train).count(), 3);
}

#[test]
fn clip_threshold_from_data() {
    let cs = cases();
    let opts = PreprocessOptions {
        t_max: ClipMax::FromData,
        ..small_opts()
    };
    let ds = build_dataset(&cs, &opts).unwrap();
    let t_max = ds.manifest.normalization.t_max;
    let t_melt = 1898.0;
    let mut pool: Vec<f64> = cs
        .iter()
        .flat_map(|c| c.frames.iter().flatten())
        .map(|&t| f64::from(t))
        .filter(|&t| t > t_melt)
        .collect();
    pool.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = 0.999 * (pool.len() - 1) as f64;
    let (i, f) = (pos.floor() as usize, pos.fract());
    let oracle = pool[i] * (1.0 - f) + pool[(i + 1).min(pool.len() - 1)] * f;
    assert!((t_max - oracle).abs() < 1e-9 * oracle);
    assert!(t_max > t_melt && t_max <= 3315.0);
}

#[test]
fn write_read_is_bitwise_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&cases(), &small_opts()).unwrap();
    write_dataset(dir.path(), &ds).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.manifest, ds.manifest);
    for (a, b) in back.records.iter().zip(&ds.records) {
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.mask, b.mask);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.field), bits(&b.field));
    }
}

#[test]
fn corruption_and_version_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let ds = build_dataset(&cases()[..2], &small_opts()).unwrap();
    write_dataset(dir.path(), &ds).unwrap();

    let fields = dir.path().join("fields.bin");
    let good = fs::read(&fields).unwrap();
    let mut bad = good.clone();
    bad[100] ^= 0x10;
    fs::write(&fields, &bad).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Checksum { .. })));

    fs::write(&fields, &good[..good.len() - 3]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::Truncated { .. })));
    fs::write(&fields, &good).unwrap();

    let manifest = dir.path().join("manifest.json");
    let text = fs::read_to_string(&manifest).unwrap();
    fs::write(&manifest, text.replace("\"format_version\": 1", "\"format_version\": 2")).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(Error::VersionMismatch { found: 2, .. })));
}

#[test]
fn crop_commutes_with_denormalize() {
    let cs = cases();
    let spec = NormalizationSpec::default();
    let crop = CropSpec { window: [20, 10, 8] };
    let c = &cs[3];
    let grid = c.grid();
    for (k, frame) in c.frames.iter().enumerate() {
        let norm = spec.normalize_field(frame);
        let beam = [c.meta.config.beam_x_cells(c.frame_time(k)), 12.0];
        let (a, _) = crop_roi(&spec.denormalize_field(&norm), grid, &crop, beam).unwrap();
        let (cropped, _) = crop_roi(&norm, grid, &crop, beam).unwrap();
        assert_eq!(a, spec.denormalize_field(&cropped));
    }
}

proptest! {
    #[test]
    fn normalize_inverts_denormalize(n in 0.0f32..=1.0) {
        let s = NormalizationSpec::default();
        let back = s.normalize(s.denormalize(f64::from(n))) as f32;
        prop_assert!((back - n).abs() <= ulp(n));
    }

    #[test]
    fn denormalize_inverts_normalize(t in 293.0f32..=6500.0) {
        let s = NormalizationSpec::default();
        let back = s.denormalize(s.normalize(f64::from(t))) as f32;
        prop_assert!((back - t).abs() <= ulp(t));
    }

    #[test]
    fn normalized_values_stay_in_unit_interval(t in -1e4f64..1e5) {
        let n = NormalizationSpec::default().normalize(t);
        prop_assert!((0.0..=1.0).contains(&n));
    }

    #[test]
    fn splits_partition_the_cases(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let s = split_train_val(n, frac, seed).unwrap();
        prop_assert_eq!(s.len(), n);
        let train = s.iter().filter(|&&x| x == Split::Train).count();
        prop_assert!(train >= 1 && train < n);
        prop_assert_eq!(s, split_train_val(n, frac, seed).unwrap());
    }

    #[test]
    fn crop_window_stays_inside(bx in -50.0f64..200.0, by in -50.0f64..120.0) {
        let crop = CropSpec::default();
        let off = crop.offset([128, 64, 32], [bx, by]).unwrap();
        prop_assert!(off[0] + 64 <= 128 && off[1] + 32 <= 64 && off[2] == 0);
    }
}
