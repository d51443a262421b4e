mod support;

use hgt_core::imaging::{
    augment, binarize_otsu, decode_pnm, encode_pnm, load_image, otsu_threshold, save_image,
    to_grayscale, AugSpec, Raster,
};
use proptest::prelude::*;
use support::oracles;

fn gray_strategy(max: usize) -> impl Strategy<Value = Raster> {
    (1..=max, 1..=max).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h)
            .prop_map(move |data| Raster::new(w, h, 1, data).unwrap())
    })
}

/// Images drawn from a handful of levels, which makes exact variance ties
/// between different partitions likely.
fn few_level_strategy() -> impl Strategy<Value = Raster> {
    (
        1usize..=12,
        1usize..=12,
        prop::collection::vec(any::<u8>(), 1..5),
    )
        .prop_flat_map(|(w, h, levels)| {
            prop::collection::vec(prop::sample::select(levels), w * h)
                .prop_map(move |data| Raster::new(w, h, 1, data).unwrap())
        })
}

proptest! {
    #[test]
    fn pgm_roundtrip_is_identity(r in gray_strategy(24)) {
        prop_assert_eq!(decode_pnm(&encode_pnm(&r)).unwrap(), r.clone());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        save_image(&r, &path).unwrap();
        prop_assert_eq!(load_image(&path).unwrap(), r);
    }

    #[test]
    fn otsu_matches_brute_force(r in gray_strategy(32)) {
        prop_assert_eq!(otsu_threshold(&r), oracles::otsu(r.data()));
    }

    #[test]
    fn otsu_matches_brute_force_on_few_levels(r in few_level_strategy()) {
        prop_assert_eq!(otsu_threshold(&r), oracles::otsu(r.data()));
    }

    #[test]
    fn grayscale_of_equal_channels_is_that_channel(g in prop::collection::vec(any::<u8>(), 1..64)) {
        let rgb: Vec<u8> = g.iter().flat_map(|&v| [v, v, v]).collect();
        let r = Raster::new(g.len(), 1, 3, rgb).unwrap();
        let out = to_grayscale(&r);
        prop_assert_eq!(out.data(), g.as_slice());
    }

    #[test]
    fn augment_is_deterministic(r in gray_strategy(16), seed in any::<u64>()) {
        let spec = AugSpec::standard(seed);
        prop_assert_eq!(augment(&r, &spec).unwrap(), augment(&r, &spec).unwrap());
    }
}

#[test]
fn quarter_histogram_threshold() {
    let r = Raster::new(4, 1, 1, vec![0, 85, 170, 255]).unwrap();
    let t = otsu_threshold(&r);
    assert_eq!(t, oracles::otsu(r.data()));
    // Either middle split is optimal by symmetry; the lowest wins.
    assert_eq!(t, 86);
    let b = binarize_otsu(&r);
    assert_eq!(b.bits(), &[true, true, false, false]);
}

/// Signed horizontal ink moment about the image centre.
fn lr_moment(r: &Raster) -> f64 {
    let cx = (r.width() as f64 - 1.0) / 2.0;
    let mut m = 0.0;
    for y in 0..r.height() {
        for x in 0..r.width() {
            m += (x as f64 - cx) * (255.0 - r.get(x, y, 0) as f64);
        }
    }
    m
}

#[test]
fn augment_never_mirrors() {
    // An L-shaped glyph, heavy on the left.
    let mut img = Raster::filled(40, 40, 255);
    for y in 5..35 {
        for x in 6..12 {
            img.set(x, y, 0, 0);
        }
    }
    for y in 29..35 {
        for x in 6..24 {
            img.set(x, y, 0, 0);
        }
    }
    assert!(lr_moment(&img) < 0.0);
    for seed in 0..20 {
        let spec = AugSpec {
            rotation_range: (0.0, 0.0),
            ..AugSpec::standard(seed)
        };
        let out = augment(&img, &spec).unwrap();
        assert!(lr_moment(&out) < 0.0, "seed {seed} mirrored the glyph");
    }
}

#[test]
fn different_seeds_give_different_outputs() {
    let img = hgt_core::synth::glyph_image("G17", 40);
    let a = augment(&img, &AugSpec::standard(1)).unwrap();
    let b = augment(&img, &AugSpec::standard(2)).unwrap();
    assert_ne!(a, b);
    assert_eq!(augment(&img, &AugSpec::identity(9)).unwrap(), img);
}
