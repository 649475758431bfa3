use chrono::NaiveDate;
use pimc_core::ingest::{
    decode_header, read_cube, synth_cube, write_cube, write_cube_u16, DatasetManifest, LabelRaster, RegionEntry,
    SitsCube, Split, SynthConfig, NIR, RED,
};
use pimc_core::Error;
use proptest::prelude::*;

fn tiny_cube(t: usize, c: usize, h: usize, w: usize, seed: u64) -> SitsCube {
    let start = NaiveDate::from_ymd_opt(2020, 3, 1).unwrap();
    let mut s = seed;
    let data = (0..t * c * h * w)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 40) as f32 / (1u64 << 24) as f32
        })
        .collect();
    SitsCube::new(
        "tiny",
        (0..t).map(|i| start + chrono::Days::new(7 * i as u64)).collect(),
        (0..c).map(|i| format!("b{i}")).collect(),
        h,
        w,
        data,
    )
    .unwrap()
}

#[test]
fn cube_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.pimc");
    let cube = tiny_cube(5, 3, 4, 6, 9);
    write_cube(&cube, &path).unwrap();
    let back = read_cube(&path).unwrap();
    assert_eq!(back.timestamps, cube.timestamps);
    assert_eq!(back.bands, cube.bands);
    let bits = |c: &SitsCube| c.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back), bits(&cube));
    // writing again produces the same bytes
    let again = dir.path().join("again.pimc");
    write_cube(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn truncated_payload_is_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cut.pimc");
    write_cube(&tiny_cube(3, 2, 4, 4, 1), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(read_cube(&path), Err(Error::Corruption(_))));
}

#[test]
fn bad_magic_is_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.pimc");
    write_cube(&tiny_cube(3, 2, 4, 4, 1), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_cube(&path), Err(Error::Format(_))));
}

#[test]
fn zero_timesteps_in_header_is_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t0.pimc");
    write_cube(&tiny_cube(1, 1, 2, 2, 1), &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    // header with t = 0, one band name, no timestamps, no payload
    let mut out = bytes[..64].to_vec();
    out[12..16].copy_from_slice(&0u32.to_le_bytes());
    out.extend_from_slice(&bytes[64..64 + 4 + 2]);
    std::fs::write(&path, &out).unwrap();
    assert!(matches!(read_cube(&path), Err(Error::Validation(_))));
}

#[test]
fn header_fields_match_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.pimc");
    write_cube_u16(&tiny_cube(2, 3, 4, 5, 2), &path, 10000.0, Some(65535)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"PIMC");
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
    assert_eq!(bytes[6], 1);
    assert_eq!(bytes[7], 0);
    assert_eq!(f32::from_le_bytes(bytes[8..12].try_into().unwrap()), 10000.0);
    let h = decode_header(&bytes).unwrap();
    assert_eq!(h.dims, [2, 3, 4, 5]);
}

#[test]
fn integer_payload_is_scaled_and_gaps_interpolated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u16.pimc");
    let mut cube = tiny_cube(3, 1, 1, 1, 3);
    cube.data = vec![0.2, 0.5, 0.4];
    write_cube_u16(&cube, &path, 10000.0, Some(5000)).unwrap();
    // 0.5 * 10000 == 5000 is the sentinel, so the middle sample is a gap
    let back = read_cube(&path).unwrap();
    assert!((back.data[0] - 0.2).abs() < 1e-6);
    assert!((back.data[1] - 0.3).abs() < 1e-6);
    assert!((back.data[2] - 0.4).abs() < 1e-6);
}

#[test]
fn oversized_raw_values_clamp_to_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clamp.pimc");
    let cube = tiny_cube(2, 1, 2, 2, 4);
    // shrink the declared scale so raw / scale overshoots 1
    write_cube_u16(&cube, &path, 10000.0, None).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8..12].copy_from_slice(&100.0f32.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    let back = read_cube(&path).unwrap();
    assert!(back.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn non_increasing_dates_are_rejected() {
    let d = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let err = SitsCube::new("x", vec![d, d], vec!["a".into()], 1, 1, vec![0.0, 0.0]);
    assert!(matches!(err, Err(Error::Validation(_))));
}

fn small_synth() -> SynthConfig {
    SynthConfig {
        classes: 3,
        timesteps: 12,
        height: 32,
        width: 32,
        field_size: 8,
        ..SynthConfig::default()
    }
}

#[test]
fn synth_is_deterministic_under_seed() {
    let (a, la) = synth_cube(5, "r", &small_synth()).unwrap();
    let (b, lb) = synth_cube(5, "r", &small_synth()).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = synth_cube(6, "r", &small_synth()).unwrap();
    assert_ne!(a.data, c.data);
}

#[test]
fn synth_rejects_degenerate_requests() {
    let mut cfg = small_synth();
    cfg.classes = 1;
    assert!(matches!(synth_cube(0, "r", &cfg), Err(Error::Domain(_))));
    let mut cfg = small_synth();
    cfg.timesteps = 7;
    assert!(matches!(synth_cube(0, "r", &cfg), Err(Error::Domain(_))));
    let mut cfg = small_synth();
    cfg.distractor = -0.5;
    assert!(matches!(synth_cube(0, "r", &cfg), Err(Error::Domain(_))));
}

#[test]
fn noiseless_class_pure_series_are_exact_sinusoids() {
    let cfg = SynthConfig {
        noise: 0.0,
        jitter: 0.0,
        ..small_synth()
    };
    let (cube, labels) = synth_cube(11, "r", &cfg).unwrap();
    let (nir, red) = (cube.band_index(NIR).unwrap(), cube.band_index(RED).unwrap());
    let t = cfg.timesteps as f64;
    let k = cfg.classes as f64;
    let spacing = (5.0 / (k - 1.0)).min(1.0);
    for y in 0..cube.height {
        for x in 0..cube.width {
            let c = labels.get(y, x) as f64;
            for ti in 0..cfg.timesteps {
                let veg = (2.0 * std::f64::consts::PI * (1.0 + c * spacing) * ti as f64 / t
                    + 2.0 * std::f64::consts::PI * c / k)
                    .sin();
                assert!((cube.get(ti, nir, y, x) as f64 - (0.35 + 0.2 * veg)).abs() < 1e-5);
                assert!((cube.get(ti, red, y, x) as f64 - (0.12 - 0.06 * veg)).abs() < 1e-5);
            }
        }
    }
}

/// Nearest class centroid over the raw NIR/red series; centroids come from one
/// region and are scored on another.
#[test]
fn nearest_centroid_separates_two_classes() {
    let cfg = SynthConfig {
        classes: 2,
        timesteps: 32,
        height: 128,
        width: 128,
        ..SynthConfig::default()
    };
    let features = |cube: &SitsCube, y: usize, x: usize| -> Vec<f64> {
        let (nir, red) = (cube.band_index(NIR).unwrap(), cube.band_index(RED).unwrap());
        (0..cube.t())
            .flat_map(|t| [cube.get(t, nir, y, x) as f64, cube.get(t, red, y, x) as f64])
            .collect()
    };
    let (train, train_labels) = synth_cube(1, "a", &cfg).unwrap();
    let dim = 2 * cfg.timesteps;
    let mut centroids = vec![vec![0.0; dim]; 2];
    let mut counts = [0usize; 2];
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let c = train_labels.get(y, x) as usize;
            counts[c] += 1;
            for (acc, v) in centroids[c].iter_mut().zip(features(&train, y, x)) {
                *acc += v;
            }
        }
    }
    for (c, n) in centroids.iter_mut().zip(counts) {
        assert!(n > 0);
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    let (test, test_labels) = synth_cube(2, "b", &cfg).unwrap();
    let mut correct = 0;
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let f = features(&test, y, x);
            let dist = |c: &Vec<f64>| c.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let pred = if dist(&centroids[0]) <= dist(&centroids[1]) { 0 } else { 1 };
            correct += (pred == test_labels.get(y, x)) as usize;
        }
    }
    let acc = correct as f64 / (cfg.height * cfg.width) as f64;
    assert!(acc > 0.95, "nearest-centroid accuracy {acc}");
}

#[test]
fn synth_values_are_reflectances() {
    let cfg = SynthConfig {
        noise: 0.2,
        ..small_synth()
    };
    let (cube, _) = synth_cube(3, "r", &cfg).unwrap();
    assert!(cube.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn distractor_varies_pixels_within_a_field() {
    let cfg = SynthConfig {
        noise: 0.0,
        jitter: 0.0,
        distractor: 0.85,
        ..small_synth()
    };
    let (cube, labels) = synth_cube(5, "r", &cfg).unwrap();
    assert!(cube.data.iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(labels.get(0, 0), labels.get(0, 1));
    let nir = cube.band_index("nir").unwrap();
    let series = |c: &SitsCube, x: usize| (0..c.t()).map(|t| c.get(t, nir, 0, x)).collect::<Vec<_>>();
    let (a, b) = (series(&cube, 0), series(&cube, 1));
    assert!(a.iter().zip(&b).any(|(x, y)| (x - y).abs() > 1e-3));
    let plain = SynthConfig { distractor: 0.0, ..cfg };
    let (clean, _) = synth_cube(5, "r", &plain).unwrap();
    assert_eq!(series(&clean, 0), series(&clean, 1));
}

#[test]
fn label_raster_round_trips_and_votes() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = synth_cube(4, "r", &small_synth()).unwrap();
    let path = dir.path().join("labels.pimc");
    labels.save(&path).unwrap();
    assert_eq!(LabelRaster::load(&path).unwrap(), labels);
    // fields are 8x8 and aligned, so an 8x8 window is pure
    assert_eq!(labels.majority(8, 16, 8), labels.get(8, 16));
}

#[test]
fn manifest_validates_files_and_disjoint_splits() {
    let dir = tempfile::tempdir().unwrap();
    let (cube, labels) = synth_cube(4, "r0", &small_synth()).unwrap();
    write_cube(&cube, &dir.path().join("r0.pimc")).unwrap();
    labels.save(&dir.path().join("r0.labels.pimc")).unwrap();
    let entry = |id: &str, split| RegionEntry {
        region_id: id.into(),
        cube: "r0.pimc".into(),
        labels: Some("r0.labels.pimc".into()),
        split,
    };
    let path = dir.path().join("manifest.json");
    let m = DatasetManifest::new(dir.path(), vec![entry("r0", Split::Train)]);
    m.save(&path).unwrap();
    let loaded = DatasetManifest::load(&path).unwrap();
    assert_eq!(loaded.regions, m.regions);
    assert_eq!(loaded.split(Split::Train).count(), 1);

    let dup = DatasetManifest::new(dir.path(), vec![entry("r0", Split::Train), entry("r0", Split::Test)]);
    assert!(matches!(dup.validate(), Err(Error::Validation(_))));

    let mut missing = entry("r1", Split::Val);
    missing.cube = "nope.pimc".into();
    let bad = DatasetManifest::new(dir.path(), vec![missing]);
    assert!(matches!(bad.validate(), Err(Error::Io { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn any_valid_cube_round_trips(t in 1usize..5, c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.pimc");
        let cube = tiny_cube(t, c, h, w, seed);
        write_cube(&cube, &path).unwrap();
        let back = read_cube(&path).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        cube.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert!(back.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
