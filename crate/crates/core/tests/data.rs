use std::fs;

use twophase_core::data::{epoch_batches, load_dataset, read_csv, read_idx_pair, write_idx, DatasetSpec, Source, Split, SplitFractions};
use twophase_core::CoreError;

#[test]
fn idx_pair_loads_100_images() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("img.idx"), dir.path().join("lab.idx"));
    let pixels: Vec<u8> = (0..100 * 28 * 28).map(|i| (i % 251) as u8).collect();
    let labels: Vec<u8> = (0..100).map(|i| (i % 10) as u8).collect();
    write_idx(&img, &[100, 28, 28], &pixels).unwrap();
    write_idx(&lab, &[100], &labels).unwrap();
    let (x, y) = read_idx_pair(&img, &lab).unwrap();
    assert_eq!(x.shape(), &[100, 1, 28, 28]);
    assert_eq!(y.len(), 100);
    assert_eq!(y[13], 3);
    assert_eq!(x.data()[5], 5.0 / 255.0);

    let spec = DatasetSpec {
        source: Source::Idx { images: img, labels: lab },
        fractions: SplitFractions::default(),
        seed: 0,
    };
    let d = load_dataset(&spec).unwrap();
    assert_eq!(d.classes, 10);
    let total: usize = Split::ALL.iter().map(|&s| d.split(s).len()).sum();
    assert_eq!(total, 100);
}

#[test]
fn bad_magic_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.idx");
    let lab = dir.path().join("lab.idx");
    fs::write(&img, [0u8, 0, 9, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 7]).unwrap();
    write_idx(&lab, &[1], &[0]).unwrap();
    let err = read_idx_pair(&img, &lab).unwrap_err();
    assert!(matches!(err, CoreError::Data(_)), "{err}");
    assert!(err.to_string().contains("magic"), "{err}");
}

#[test]
fn truncated_idx_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img.idx");
    let lab = dir.path().join("lab.idx");
    write_idx(&img, &[2, 2, 2], &[1; 8]).unwrap();
    let mut bytes = fs::read(&img).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&img, bytes).unwrap();
    write_idx(&lab, &[2], &[0, 1]).unwrap();
    assert!(matches!(read_idx_pair(&img, &lab), Err(CoreError::Data(_))));
}

#[test]
fn csv_errors_name_row_and_column() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    fs::write(&path, "label,p0,p1,p2,p3\n0,1,2,3,4\n1,5,x,7,8\n").unwrap();
    let err = read_csv(&path, 1, 2, 2).unwrap_err().to_string();
    assert!(err.contains("row 3") && err.contains("column 3"), "{err}");

    fs::write(&path, "0,1,2,3,4\n1,5,6,7\n").unwrap();
    let err = read_csv(&path, 1, 2, 2).unwrap_err().to_string();
    assert!(err.contains("row 2"), "{err}");

    fs::write(&path, "0,1,2,3,4\n1,5,6,7,8\n").unwrap();
    let (x, y) = read_csv(&path, 1, 2, 2).unwrap();
    assert_eq!(x.shape(), &[2, 1, 2, 2]);
    assert_eq!(y, vec![0, 1]);
}

#[test]
fn epoch_batches_partition_and_drop_singletons() {
    let idx: Vec<usize> = (0..33).collect();
    let b = epoch_batches(&idx, 8, 1, 0);
    assert_eq!(b.len(), 4);
    assert!(b.iter().all(|x| x.len() == 8));
    let idx: Vec<usize> = (0..34).collect();
    let b = epoch_batches(&idx, 8, 1, 0);
    assert_eq!(b.len(), 5);
    let mut seen: Vec<usize> = b.concat();
    seen.sort();
    assert_eq!(seen, idx);
    assert_ne!(epoch_batches(&idx, 8, 1, 0), epoch_batches(&idx, 8, 1, 1));
    assert_eq!(epoch_batches(&idx, 8, 1, 2), epoch_batches(&idx, 8, 1, 2));
}
