use conecraft::datakit::{
    batch_indices, batches, encode_idx_images, encode_idx_labels, load_idx, load_mnist, synthetic_dataset, DataError,
    Domain, Split, MNIST_TEST_IMAGES, MNIST_TRAIN_IMAGES, MNIST_TRAIN_LABELS,
};
use proptest::prelude::*;

fn pattern(n: usize, d: usize) -> Vec<u8> {
    (0..n * d).map(|k| (k * 7 % 256) as u8).collect()
}

#[test]
fn mnist_sized_training_file_splits_59000_1000() {
    let dir = tempfile::tempdir().unwrap();
    let pixels = pattern(60_000, 784);
    std::fs::write(dir.path().join(MNIST_TRAIN_IMAGES), encode_idx_images(28, 28, &pixels)).unwrap();
    std::fs::write(dir.path().join(MNIST_TRAIN_LABELS), encode_idx_labels(&vec![3; 60_000])).unwrap();
    std::fs::write(dir.path().join(MNIST_TEST_IMAGES), encode_idx_images(28, 28, &pattern(10_000, 784))).unwrap();
    let ds = load_mnist(dir.path(), Domain::Symmetric, 1000).unwrap();
    assert_eq!(ds.dim(), 784);
    assert_eq!(ds.range(Split::Train), 0..59_000);
    assert_eq!(ds.range(Split::Val), 59_000..60_000);
    assert_eq!(ds.range(Split::Test).len(), 10_000);
    // validation is the tail of the training file
    let val = ds.split(Split::Val);
    assert_eq!(val.row(0)[0], Domain::Symmetric.from_byte(pixels[59_000 * 784]));
    // round trip to bytes
    assert_eq!(&ds.to_bytes()[..pixels.len()], &pixels[..]);
}

#[test]
fn label_count_must_match() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("img");
    let lab = dir.path().join("lab");
    std::fs::write(&img, encode_idx_images(2, 2, &pattern(3, 4))).unwrap();
    std::fs::write(&lab, encode_idx_labels(&[1, 2])).unwrap();
    assert!(matches!(
        load_idx(&img, Some(&lab), Domain::Unit, 1),
        Err(DataError::DimensionMismatch(_))
    ));
    let ds = load_idx(&img, None, Domain::Unit, 1).unwrap();
    assert!(ds.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    assert!(matches!(
        load_idx(&dir.path().join("nope"), None, Domain::Unit, 0),
        Err(DataError::Io { .. })
    ));
}

#[test]
fn synthetic_is_reproducible_and_in_domain() {
    let a = synthetic_dataset(16, 1000, 42, Domain::Symmetric);
    let b = synthetic_dataset(16, 1000, 42, Domain::Symmetric);
    assert_eq!(a.images.shape(), &[1000, 256]);
    let bits = |t: &conecraft::tensorkit::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.images), bits(&b.images));
    assert_ne!(bits(&a.images), bits(&synthetic_dataset(16, 1000, 43, Domain::Symmetric).images));
    assert!(a.images.data().iter().all(|&p| (-1.0..=1.0).contains(&p)));
    let u = synthetic_dataset(8, 50, 1, Domain::Unit);
    assert!(u.images.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
}

#[test]
fn batches_follow_indices() {
    let ds = synthetic_dataset(4, 10, 0, Domain::Unit);
    let idx = batch_indices(10, 4, 9, 2);
    for (b, i) in batches(&ds.images, 4, 9, 2).zip(&idx) {
        assert_eq!(b, ds.images.select_rows(i));
    }
}

proptest! {
    #[test]
    fn symmetric_round_trip_reproduces_bytes(bytes in prop::collection::vec(any::<u8>(), 1..200)) {
        for b in bytes {
            prop_assert_eq!(Domain::Symmetric.to_byte(Domain::Symmetric.from_byte(b)), b);
        }
    }

    #[test]
    fn splits_partition_the_dataset(n_train in 0usize..50, n_val in 0usize..50, n_test in 0usize..50) {
        let n = n_train + n_val + n_test;
        let ds = synthetic_dataset(2, n, 0, Domain::Unit).with_splits(n_train, n_val, n_test).unwrap();
        let sizes: Vec<usize> = [Split::Train, Split::Val, Split::Test].iter().map(|&s| ds.range(s).len()).collect();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        prop_assert_eq!(ds.range(Split::Train).end, ds.range(Split::Val).start);
        prop_assert_eq!(ds.range(Split::Val).end, ds.range(Split::Test).start);
        prop_assert!(synthetic_dataset(2, n, 0, Domain::Unit).with_splits(n_train, n_val, n_test + 1).is_err());
    }

    #[test]
    fn each_epoch_is_a_permutation(n in 0usize..300, bs in 1usize..40, seed in any::<u64>(), epoch in 0u64..5) {
        let mut all = batch_indices(n, bs, seed, epoch).concat();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
