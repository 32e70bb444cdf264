//! Dataset generation, IDX files and standardization.

use disentangle_core::data::{
    load_dataset, make_localization_dataset, save_dataset, standardize, synthetic_digits,
    IdxImages, CANVAS_SIDE,
};
use disentangle_core::generative::MixingModel;
use nalgebra::DMatrix;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn idx_round_trip_is_byte_identical(
        count in 1usize..5,
        rows in 1usize..6,
        cols in 1usize..6,
        seed in any::<u64>(),
    ) {
        let mut s = disentangle_core::rng::Stream::from_seed(seed);
        let pixels: Vec<u8> = (0..count * rows * cols).map(|_| s.below(256) as u8).collect();
        let img = IdxImages::new(count, rows, cols, pixels).unwrap();
        let bytes = img.to_bytes().unwrap();
        let back = IdxImages::parse(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back, img);
    }

    #[test]
    fn standardized_data_is_unit_scaled(seed in any::<u64>(), rows in 2usize..20, cols in 2usize..20) {
        let mut s = disentangle_core::rng::Stream::from_seed(seed);
        let x = DMatrix::from_fn(rows, cols, |_, _| 255.0 * s.uniform());
        let (z, mean, std) = standardize(&x).unwrap();
        let n = (rows * cols) as f64;
        let m = z.sum() / n;
        let sd = (z.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(m.abs() < 1e-10);
        prop_assert!((sd - 1.0).abs() < 1e-10);
        let back = z.map(|v| v * std + mean);
        prop_assert!((back - x).amax() < 1e-12 * 255.0);
    }
}

#[test]
fn positions_follow_the_generative_law() {
    let ds = make_localization_dataset(&synthetic_digits(), 100_000, 5).unwrap();
    let sigma = MixingModel::localization().data_covariance();
    let n = ds.len() as f64;
    let p = &ds.positions;
    for i in 0..2 {
        for j in 0..2 {
            let c = p.column(i).dot(&p.column(j)) / n;
            // Var of a product of zero-mean Gaussians is Σ_ii Σ_jj + Σ_ij².
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / n).sqrt();
            assert!((c - sigma[(i, j)]).abs() < 3.0 * se, "({i},{j}): {c}");
        }
    }
}

#[test]
fn dataset_persistence_round_trip() {
    let ds = make_localization_dataset(&synthetic_digits(), 25, 11).unwrap();
    assert_eq!(ds.images.shape(), (25, CANVAS_SIDE * CANVAS_SIDE));
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.images, ds.images);
    assert_eq!(back.positions, ds.positions);
    assert_eq!(back.sources, ds.sources);
    assert_eq!(back.digits, ds.digits);
    assert_eq!(make_localization_dataset(&synthetic_digits(), 25, 11).unwrap().images, ds.images);
}
