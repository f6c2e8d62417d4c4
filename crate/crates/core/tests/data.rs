use proptest::prelude::*;
use rand::Rng;
use spix::data::{
    build_dataset, parse_idx_images, parse_idx_labels, parse_stl10, resize_bilinear, synth_shapes, BuildOptions,
    DataSource, ImageDataset, Split, SplitSizes, STL10_RECORD,
};
use spix::measurement::{MeasurementModel, MismatchMode, MismatchSpec, Ordering};
use spix::params::ParameterSet;
use spix::solvers::{lsqr_solve, LsqrConfig};
use spix::{rng, Tensor};

fn idx_images(n: u32, rows: u32, cols: u32, body: &[u8]) -> Vec<u8> {
    let mut b = Vec::new();
    for v in [0x0000_0803u32, n, rows, cols] {
        b.extend_from_slice(&v.to_be_bytes());
    }
    b.extend_from_slice(body);
    b
}

#[test]
fn idx_images_scale_to_unit_range() {
    let imgs = parse_idx_images(&idx_images(1, 2, 2, &[0, 255, 0, 255])).unwrap();
    assert_eq!(imgs[0].data(), &[0.0, 1.0, 0.0, 1.0]);
    let mut bad = idx_images(1, 2, 2, &[0, 0, 0, 0]);
    bad[3] = 0x01;
    assert!(parse_idx_images(&bad).is_err());
    assert!(parse_idx_images(&idx_images(2, 2, 2, &[0, 0, 0, 0])).is_err());
    let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 3];
    labels.extend_from_slice(&[7, 2, 1]);
    assert_eq!(parse_idx_labels(&labels).unwrap(), vec![7, 2, 1]);
}

#[test]
fn resizing_a_constant_is_constant() {
    let t = Tensor::full(&[28, 28], 0.37);
    for side in [8, 16, 32, 64] {
        let r = resize_bilinear(&t, side).unwrap();
        assert!(r.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }
}

#[test]
fn stl10_records_decode_column_major_planes() {
    let plane = 96 * 96;
    assert!(parse_stl10(&vec![0u8; STL10_RECORD + 1], None).is_err());
    let white = parse_stl10(&vec![255u8; STL10_RECORD], None).unwrap();
    assert!(white[0].data().iter().all(|v| (v - 1.0).abs() < 1e-12));

    let mut buf = vec![0u8; 2 * STL10_RECORD];
    // Record 0: red at (row 1, col 4); record 1: blue at (row 5, col 0).
    buf[4 * 96 + 1] = 255;
    buf[STL10_RECORD + 2 * plane + 5] = 200;
    let imgs = parse_stl10(&buf, None).unwrap();
    assert_eq!(imgs.len(), buf.len() / STL10_RECORD);
    assert!((imgs[0].data()[96 + 4] - 0.299).abs() < 1e-12);
    assert!((imgs[1].data()[5 * 96] - 0.114 * 200.0 / 255.0).abs() < 1e-12);
    assert_eq!(imgs[0].data().iter().filter(|v| **v != 0.0).count(), 1);
    let small = parse_stl10(&buf, Some(32)).unwrap();
    assert_eq!(small[0].shape(), &[32, 32]);
}

#[test]
fn synthetic_shapes_have_moderate_brightness() {
    let imgs = synth_shapes(1000, 16, 7);
    assert_eq!(imgs, synth_shapes(1000, 16, 7));
    let mean = imgs.iter().map(|t| t.mean()).sum::<f64>() / 1000.0;
    assert!((0.1..=0.9).contains(&mean), "mean brightness {mean}");
    assert!(imgs.iter().all(|t| t.min() >= 0.0 && t.max() <= 1.0));
}

fn sizes() -> SplitSizes {
    SplitSizes {
        train: 30,
        validation: 10,
        test: 8,
    }
}

#[test]
fn full_basis_dataset_inverts_and_honors_splits() {
    let model = MeasurementModel::hadamard(8, Ordering::RussianDoll).unwrap();
    let images = synth_shapes(48, 8, 3);
    let ds = build_dataset(&images, &model, &BuildOptions::new(sizes(), 3, DataSource::SyntheticShapes)).unwrap();
    assert_eq!(ds.splits.train.len(), 30);
    assert_eq!(ds.splits.validation.len(), 10);
    assert_eq!(ds.splits.test.len(), 8);
    let mut all: Vec<usize> = [Split::Train, Split::Validation, Split::Test]
        .iter()
        .flat_map(|s| ds.splits.get(*s).to_vec())
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..48).collect::<Vec<_>>());
    let h = model.matrix().unwrap();
    for i in 0..48 {
        let back = h.matvec_t(ds.measurement(i).data()).unwrap();
        for (a, b) in back.iter().zip(images[i].data()) {
            assert!((a / 64.0 - b).abs() <= 1e-8);
        }
    }
}

#[test]
fn mismatch_dataset_keeps_nominal_lsqr_channel() {
    let model = MeasurementModel::hadamard(8, Ordering::RussianDoll).unwrap().compress(4).unwrap();
    let images = synth_shapes(48, 8, 4);
    let spec = |fraction| MismatchSpec {
        mode: MismatchMode::InvertElements { fraction },
        seed: 2,
    };
    let mut opts = BuildOptions::new(sizes(), 4, DataSource::SyntheticShapes);
    opts.lsqr = Some(LsqrConfig::default());
    let clean = build_dataset(&images, &model, &opts).unwrap();
    opts.mismatch = Some(spec(0.0));
    let zero = build_dataset(&images, &model, &opts).unwrap();
    assert_eq!(clean.measurements, zero.measurements);
    assert_eq!(clean.lsqr, zero.lsqr);

    opts.mismatch = Some(spec(0.2));
    let bad = build_dataset(&images, &model, &opts).unwrap();
    assert_ne!(bad.measurements, clean.measurements);
    let perturbed = model.perturb(&spec(0.2)).unwrap();
    for i in [0, 17, 40] {
        assert_eq!(bad.measurement(i), perturbed.forward_measure(&images[i]).unwrap());
        let nominal = lsqr_solve(model.matrix().unwrap(), &bad.measurement(i), &LsqrConfig::default()).unwrap();
        assert_eq!(bad.lsqr.as_ref().unwrap().row(i), nominal.data());
    }
}

#[test]
fn dataset_container_round_trips_bit_exactly() {
    let model = MeasurementModel::hadamard(8, Ordering::RandomPermutation { seed: 1 }).unwrap().compress(8).unwrap();
    let images = synth_shapes(48, 8, 5);
    let mut opts = BuildOptions::new(sizes(), 5, DataSource::SyntheticShapes);
    opts.lsqr = Some(LsqrConfig::default());
    opts.noise_snr_db = Some(10.0);
    let ds = build_dataset(&images, &model, &opts).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tstd");
    ds.save(&path).unwrap();
    let back = ImageDataset::load(&path).unwrap();
    assert_eq!(back, ds.rounded_to_f32());
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    let bytes = ds.to_bytes();
    assert_eq!(&bytes[..4], b"TSTD");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
    assert!(ImageDataset::read_tstd(&bytes[..bytes.len() - 1], ds.meta.clone()).is_err());
}

#[test]
fn weight_container_layout() {
    let mut p = ParameterSet::new();
    p.insert("w", Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap());
    let mut bytes = Vec::new();
    p.write_tstw(&mut bytes).unwrap();
    let mut want = b"TSTW".to_vec();
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&1u16.to_le_bytes());
    want.push(b'w');
    want.push(2);
    want.extend_from_slice(&1u32.to_le_bytes());
    want.extend_from_slice(&2u32.to_le_bytes());
    want.extend_from_slice(&1.5f32.to_le_bytes());
    want.extend_from_slice(&(-2.0f32).to_le_bytes());
    assert_eq!(bytes, want);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn weight_container_round_trips(seed in any::<u64>(), count in 1usize..5) {
        let mut r = rng::from_seed(seed);
        let mut p = ParameterSet::new();
        for i in 0..count {
            let rank = r.gen_range(1..4);
            let shape: Vec<usize> = (0..rank).map(|_| r.gen_range(1..5)).collect();
            let n: usize = shape.iter().product();
            p.insert(format!("layer{i}.w"), Tensor::new(shape, (0..n).map(|_| r.gen_range(-5.0..5.0)).collect()).unwrap());
        }
        p.round_to_f32();
        let mut bytes = Vec::new();
        p.write_tstw(&mut bytes).unwrap();
        let back = ParameterSet::read_tstw(bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &p);
        let mut again = Vec::new();
        back.write_tstw(&mut again).unwrap();
        prop_assert_eq!(again, bytes);
    }
}
