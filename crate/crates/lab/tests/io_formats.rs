use std::fs;

use dam_core::{Rng, Tensor};
use dam_lab::config::{parse_config_str, to_json, ExperimentKind};
use dam_lab::csv_out::{emit_csv, format_float, read_csv, Cell, Table};
use dam_lab::data::{
    load_mnist_dir, load_mnist_idx, mnist_paths, read_idx_images, write_idx_images, write_idx_labels, IMAGE_MAGIC,
};
use proptest::prelude::*;

fn idx_header(magic: u32, dims: &[u32]) -> Vec<u8> {
    let mut v = magic.to_be_bytes().to_vec();
    for d in dims {
        v.extend(d.to_be_bytes());
    }
    v
}

#[test]
fn all_zero_image_file_reads_as_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("img");
    let mut bytes = idx_header(IMAGE_MAGIC, &[3, 28, 28]);
    bytes.extend(vec![0u8; 3 * 784]);
    fs::write(&p, bytes).unwrap();
    let x = read_idx_images(&p).unwrap();
    assert_eq!(x.shape(), (3, 784));
    assert!(x.data().iter().all(|&v| v == 0.0));
}

#[test]
fn pixels_scale_by_one_over_255() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("img");
    let mut bytes = idx_header(IMAGE_MAGIC, &[1, 2, 2]);
    bytes.extend([0u8, 51, 255, 1]);
    fs::write(&p, bytes).unwrap();
    let x = read_idx_images(&p).unwrap();
    assert_eq!(x.data(), &[0.0, 0.2, 1.0, 1.0 / 255.0]);
}

#[test]
fn malformed_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img");
    let lab = dir.path().join("lab");

    let mut bytes = idx_header(0x0000_0801, &[1, 28, 28]);
    bytes.extend(vec![0u8; 784]);
    fs::write(&img, &bytes).unwrap();
    assert!(read_idx_images(&img).unwrap_err().to_string().contains("magic"));

    let mut bytes = idx_header(IMAGE_MAGIC, &[2, 28, 28]);
    bytes.extend(vec![0u8; 784 + 10]);
    fs::write(&img, &bytes).unwrap();
    assert!(read_idx_images(&img).is_err());

    write_idx_images(&img, &Tensor::zeros(2, 784), 28, 28).unwrap();
    write_idx_labels(&lab, &[1, 2, 3]).unwrap();
    let e = load_mnist_idx(&img, &lab).unwrap_err();
    assert!(e.to_string().contains('2') && e.to_string().contains('3'), "{e}");
}

#[test]
fn directory_loader_uses_standard_names() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Rng::new(1);
    let train = Tensor::from_vec(4, 784, (0..4 * 784).map(|_| (rng.below(256) as f64) / 255.0).collect()).unwrap();
    let test = Tensor::zeros(2, 784);
    let [tri, trl, tei, tel] = mnist_paths(dir.path());
    write_idx_images(&tri, &train, 28, 28).unwrap();
    write_idx_labels(&trl, &[0, 1, 2, 3]).unwrap();
    write_idx_images(&tei, &test, 28, 28).unwrap();
    write_idx_labels(&tel, &[9, 8]).unwrap();
    let ds = load_mnist_dir(dir.path()).unwrap();
    assert_eq!(ds.train_x.max_abs_diff(&train), 0.0);
    assert_eq!(ds.test_y, vec![9, 8]);
    assert_eq!(ds.classes, 10);

    fs::remove_file(&tel).unwrap();
    let e = load_mnist_dir(dir.path()).unwrap_err();
    assert!(e.to_string().contains("t10k-labels"), "{e}");
}

#[test]
fn empty_table_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("nested/empty.csv");
    emit_csv(&Table::new(["a", "b"]), &p).unwrap();
    assert_eq!(fs::read_to_string(&p).unwrap(), "a,b\n");
}

#[test]
fn unwritable_path_surfaces_the_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, "x").unwrap();
    let e = emit_csv(&Table::new(["a"]), &file.join("child.csv")).unwrap_err();
    assert!(e.to_string().contains("plain"), "{e}");
}

proptest! {
    #[test]
    fn csv_round_trip_keeps_nine_digits(values in prop::collection::vec(-1e12f64..1e12, 1..40)) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let mut t = Table::new(["i", "v"]);
        for (i, &v) in values.iter().enumerate() {
            t.push(vec![Cell::from(i), Cell::Float(v)]);
        }
        emit_csv(&t, &p).unwrap();
        let (_, rows) = read_csv(&p).unwrap();
        prop_assert_eq!(rows.len(), values.len());
        for (row, &v) in rows.iter().zip(&values) {
            let back: f64 = row[1].parse().unwrap();
            prop_assert!((back - v).abs() <= 5e-9 * v.abs());
            prop_assert_eq!(&row[1], &format_float(back));
        }
    }

    #[test]
    fn config_round_trip(kind in 0usize..6, seed in any::<u64>(), lr in 1e-5f64..1.0, lambda in 0.0f64..10.0,
                         epochs in 1usize..5000) {
        let kinds = ["gen-data", "train-dr", "sweep", "train-classifier", "mnist-ablation", "analyze"];
        let text = format!(
            r#"{{"kind":"{}","seed":{seed},"lr":{lr},"lambda":{lambda},"epochs":{epochs}}}"#,
            kinds[kind]
        );
        let a = parse_config_str(&text).unwrap();
        prop_assert_eq!(a.kind.name(), kinds[kind]);
        let b = parse_config_str(&to_json(&a)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_values_are_rejected(lr in -10.0f64..=0.0, l2 in 1.0001f64..100.0) {
        let e = parse_config_str(&format!(r#"{{"kind":"train-dr","lr":{lr}}}"#)).unwrap_err();
        prop_assert!(e.is_config());
        let e = parse_config_str(&format!(r#"{{"kind":"train-dr","l2":{l2}}}"#)).unwrap_err();
        prop_assert!(e.to_string().contains("`l2`"));
    }
}

#[test]
fn nested_unknown_key_reports_the_full_path() {
    let e = parse_config_str(r#"{"kind":"analyze","dataset":{"synthetic":true,"shuffle":true}}"#).unwrap_err();
    let msg = e.to_string();
    assert!(msg.contains("dataset") && msg.contains("shuffle"), "{msg}");
    let e = parse_config_str(r#"{"kind":"train-dr","epochs":"many"}"#).unwrap_err();
    assert!(e.to_string().contains("epochs"), "{e}");
    assert_eq!(parse_config_str(r#"{"kind":"gen-data"}"#).unwrap().kind, ExperimentKind::GenData);
}
