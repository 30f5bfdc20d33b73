use if2net::data::{encode_features, parse_features, parse_idx, split_cil, Dataset, TestSplit};
use ndarray::Array2;
use proptest::prelude::*;

fn idx_pair(pixels: &[u8], labels: &[u8], rows: u32, cols: u32) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&0x0803u32.to_be_bytes());
    img.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    img.extend_from_slice(&rows.to_be_bytes());
    img.extend_from_slice(&cols.to_be_bytes());
    img.extend_from_slice(pixels);
    let mut lab = Vec::new();
    lab.extend_from_slice(&0x0801u32.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}

fn pool(per_class: usize, classes: usize) -> Dataset {
    let n = per_class * classes;
    let x = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
    Dataset::new(x, (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

proptest! {
    #[test]
    fn idx_pixels_scale_exactly(n in 1usize..6, rows in 1u32..5, cols in 1u32..5, seed in any::<u64>()) {
        let len = n * (rows * cols) as usize;
        let pixels: Vec<u8> = (0..len).map(|i| (seed.wrapping_mul(31).wrapping_add(i as u64 * 17) % 256) as u8).collect();
        let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
        let (img, lab) = idx_pair(&pixels, &labels, rows, cols);
        let d = parse_idx(&img, &lab, 10).unwrap();
        prop_assert_eq!(d.inputs.dim(), (n, (rows * cols) as usize));
        for (v, p) in d.inputs.iter().zip(&pixels) {
            prop_assert_eq!(*v, *p as f64 / 255.0);
        }
    }

    #[test]
    fn feature_files_round_trip(values in prop::collection::vec(-1e6f32..1e6, 1..60), dim in 1usize..5) {
        let n = values.len() / dim;
        prop_assume!(n > 0);
        let x = Array2::from_shape_fn((n, dim), |(i, j)| values[i * dim + j] as f64);
        let d = Dataset::new(x, (0..n).map(|i| i % 3).collect(), 3).unwrap();
        let (f, l) = encode_features(&d);
        let back = parse_features(&f, &l, Some(3)).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn split_partitions_classes(per_class in 2usize..8, tasks_pow in 0usize..3, seed in any::<u64>()) {
        let tasks = [1usize, 2, 5][tasks_pow];
        let data = pool(per_class, 10);
        let seq = split_cil(&data, tasks, seed, TestSplit::Fraction(0.5)).unwrap();
        prop_assert_eq!(seq.len(), tasks);
        let mut seen: Vec<usize> = seq.tasks.iter().flat_map(|t| t.class_ids.clone()).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let total: usize = seq.tasks.iter().map(|t| t.n_train() + t.n_test()).sum();
        prop_assert_eq!(total, data.len());
        for t in &seq.tasks {
            prop_assert!(t.labels_train.iter().chain(&t.labels_test).all(|l| t.class_ids.contains(l)));
            prop_assert_eq!(t.y_train.ncols(), 10);
        }
    }
}
