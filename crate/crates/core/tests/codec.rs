use dermgan_core::codec::dataset::{image_path, mask_path, packed_paths, write_packed, write_sample};
use dermgan_core::codec::{
    image_to_model_space, load_dataset, masks_to_model_space, pack, split_ids, synth_dataset, synth_samples,
    to_model_space, unpack, Attribute, Bitmap, MaskSet,
};
use dermgan_core::evaluation::binarize;
use dermgan_core::Error;
use image::{GrayImage, Luma, Rgb, RgbImage};
use proptest::prelude::*;
use std::path::Path;

fn mask_set(w: u32, h: u32, bits: &[Vec<bool>]) -> MaskSet {
    let masks = std::array::from_fn(|c| Bitmap::from_fn(w, h, |x, y| bits[c][(y * w + x) as usize]));
    MaskSet::new("0000001", masks).unwrap()
}

#[test]
fn empty_set_packs_to_black() {
    let (a, b) = pack(&MaskSet::empty("0000001", 4, 3));
    assert!(a.as_raw().iter().chain(b.as_raw()).all(|&v| v == 0));
    assert_eq!(a.dimensions(), (4, 3));
}

#[test]
fn pigment_network_packs_to_green() {
    let mut m = MaskSet::empty("0000001", 4, 4);
    m.get_mut(Attribute::PigmentNetwork).set(2, 1, true);
    let (a, b) = pack(&m);
    assert_eq!(*a.get_pixel(2, 1), Rgb([0, 255, 0]));
    assert_eq!(*a.get_pixel(0, 0), Rgb([0, 0, 0]));
    assert!(b.as_raw().iter().all(|&v| v == 0));
}

#[test]
fn channel_assignment() {
    for (c, attr) in Attribute::ALL.into_iter().enumerate() {
        assert_eq!(attr.index(), c);
        let mut m = MaskSet::empty("0000001", 1, 1);
        m.get_mut(attr).set(0, 0, true);
        let (a, b) = pack(&m);
        let mut want = [0u8; 6];
        want[c] = 255;
        assert_eq!(a.get_pixel(0, 0).0, want[..3]);
        assert_eq!(b.get_pixel(0, 0).0, want[3..]);
    }
}

#[test]
fn unpack_threshold_over_every_byte() {
    for v in 0..=255u8 {
        let a = RgbImage::from_pixel(1, 1, Rgb([v, v, v]));
        let b = RgbImage::from_pixel(1, 1, Rgb([v, 0, v]));
        let m = unpack(&a, &b, "0000001").unwrap();
        let on = v >= 128;
        for attr in Attribute::ALL {
            let expect = on && attr != Attribute::MiliaLikeCysts;
            assert_eq!(m.get(attr).get(0, 0), expect, "value {v} {attr:?}");
        }
    }
}

#[test]
fn unpack_rejects_mismatched_dims() {
    let err = unpack(&RgbImage::new(2, 2), &RgbImage::new(2, 3), "0000001").unwrap_err();
    assert!(matches!(err, Error::ShapeMismatch { .. }));
}

fn mask_strategy() -> impl Strategy<Value = MaskSet> {
    (1u32..9, 1u32..9).prop_flat_map(|(w, h)| {
        prop::collection::vec(prop::collection::vec(any::<bool>(), (w * h) as usize), 6)
            .prop_map(move |bits| mask_set(w, h, &bits))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn pack_unpack_round_trip(m in mask_strategy()) {
        let (a, b) = pack(&m);
        prop_assert_eq!(unpack(&a, &b, m.image_id.clone()).unwrap(), m);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn model_space_round_trip(m in mask_strategy()) {
        let y = masks_to_model_space(&m);
        prop_assert!(y.data().iter().all(|&v| v == 1.0 || v == -1.0));
        prop_assert_eq!(binarize(&y, &m.image_id).unwrap(), m);
    }
}

#[test]
fn photo_model_space_endpoints() {
    let img = RgbImage::from_fn(3, 1, |x, _| Rgb([[0, 255, 128][x as usize]; 3]));
    let x = image_to_model_space(&img);
    assert_eq!(x.shape(), [3, 1, 3]);
    assert_eq!(x.data()[0], -1.0);
    assert_eq!(x.data()[1], 1.0);
    assert!((x.data()[2] - 0.0039).abs() < 1e-3);
    let mut m = MaskSet::empty("0000001", 3, 1);
    m.get_mut(Attribute::Globules).set(1, 0, true);
    let y = masks_to_model_space(&m);
    assert_eq!(y.data()[5 * 3 + 1], 1.0);
    assert_eq!(y.data()[5 * 3], -1.0);
}

fn write_photo(root: &Path, id: &str, size: u32) {
    let path = image_path(root, id);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    RgbImage::from_fn(size, size, |x, y| Rgb([x as u8 * 10, y as u8 * 10, 90])).save(&path).unwrap();
}

fn write_mask(root: &Path, id: &str, attr: Attribute, size: u32, f: impl Fn(u32, u32) -> bool) {
    let path = mask_path(root, id, attr);
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    GrayImage::from_fn(size, size, |x, y| Luma([if f(x, y) { 255 } else { 0 }])).save(&path).unwrap();
}

#[test]
fn boundary_only_sample_has_five_empty_channels() {
    let dir = tempfile::tempdir().unwrap();
    write_photo(dir.path(), "0000001", 16);
    write_mask(dir.path(), "0000001", Attribute::LesionBoundary, 16, |x, y| x < 8 && y < 8);
    let split = load_dataset(dir.path(), 16, 1.0, 0).unwrap();
    assert_eq!(split.train.len(), 1);
    let m = &split.train[0].masks;
    assert_eq!(m.get(Attribute::LesionBoundary).count(), 64);
    for attr in &Attribute::ALL[1..] {
        assert!(m.get(*attr).is_empty(), "{attr:?}");
    }
}

#[test]
fn photos_without_masks_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    for id in ["0000001", "0000002", "0000003"] {
        write_photo(dir.path(), id, 8);
    }
    write_mask(dir.path(), "0000001", Attribute::Streaks, 8, |x, _| x == 0);
    write_mask(dir.path(), "0000003", Attribute::LesionBoundary, 8, |_, _| true);
    let split = load_dataset(dir.path(), 8, 1.0, 0).unwrap();
    let mut ids: Vec<_> = split.train.iter().map(|s| s.id().to_string()).collect();
    ids.sort();
    assert_eq!(ids, ["0000001", "0000003"]);
}

#[test]
fn masks_of_any_size_are_normalized() {
    let dir = tempfile::tempdir().unwrap();
    write_photo(dir.path(), "0000001", 20);
    write_mask(dir.path(), "0000001", Attribute::LesionBoundary, 20, |x, _| x < 10);
    write_mask(dir.path(), "0000001", Attribute::Globules, 40, |x, _| x < 20);
    let split = load_dataset(dir.path(), 32, 1.0, 0).unwrap();
    let s = &split.train[0];
    assert_eq!(s.image.dimensions(), (32, 32));
    for b in s.masks.channels() {
        assert_eq!(b.dims(), (32, 32));
    }
    assert_eq!(s.masks.get(Attribute::Globules), s.masks.get(Attribute::LesionBoundary));
}

#[test]
fn packed_layout_loads() {
    let dir = tempfile::tempdir().unwrap();
    let sample = &synth_samples(1, 32, 3)[0];
    let id = sample.id().to_string();
    let photo = image_path(dir.path(), &id);
    std::fs::create_dir_all(photo.parent().unwrap()).unwrap();
    sample.image.save(&photo).unwrap();
    write_packed(dir.path(), &sample.masks).unwrap();
    let (pa, pb) = packed_paths(dir.path(), &id);
    assert!(pa.is_file() && pb.is_file());
    let split = load_dataset(dir.path(), 32, 1.0, 0).unwrap();
    assert_eq!(split.train[0].masks, sample.masks);
    assert_eq!(split.train[0].image, sample.image);
}

#[test]
fn unreadable_mask_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    write_photo(dir.path(), "0000001", 8);
    let bad = mask_path(dir.path(), "0000001", Attribute::LesionBoundary);
    std::fs::create_dir_all(bad.parent().unwrap()).unwrap();
    std::fs::write(&bad, b"not a png").unwrap();
    let err = load_dataset(dir.path(), 8, 1.0, 0).unwrap_err();
    assert!(err.to_string().contains("segmentation"), "{err}");
}

#[test]
fn empty_directory_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    assert!(matches!(load_dataset(dir.path(), 32, 0.75, 0), Err(Error::NoInput(_))));
}

#[test]
fn split_sizes_and_partition() {
    let ids: Vec<String> = (0..500).map(|i| format!("{i:07}")).collect();
    let (train, test) = split_ids(&ids, 0.75, 42).unwrap();
    assert_eq!((train.len(), test.len()), (375, 125));
    let mut all: Vec<_> = train.iter().chain(&test).cloned().collect();
    all.sort();
    assert_eq!(all, ids);

    let mut reversed = ids.clone();
    reversed.reverse();
    assert_eq!(split_ids(&reversed, 0.75, 42).unwrap(), (train.clone(), test));
    assert_ne!(split_ids(&ids, 0.75, 43).unwrap().0, train);
    assert_eq!(split_ids(&ids[..7], 0.75, 0).unwrap().0.len(), 6);
    assert!(split_ids(&ids, 0.0, 0).is_err());
    assert!(split_ids(&ids, 1.5, 0).is_err());
}

#[test]
fn synthetic_dataset_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    synth_dataset(16, 32, 9, a.path()).unwrap();
    synth_dataset(16, 32, 9, b.path()).unwrap();
    let files = |root: &Path| {
        let mut out = Vec::new();
        for sub in ["images", "masks"] {
            let mut names: Vec<_> = std::fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
            names.sort();
            for p in names {
                out.push((p.file_name().unwrap().to_owned(), std::fs::read(&p).unwrap()));
            }
        }
        out
    };
    let fa = files(a.path());
    assert_eq!(fa.len(), 16 * 7);
    assert_eq!(fa, files(b.path()));
}

#[test]
fn synthetic_masks_nest_inside_the_boundary() {
    for s in synth_samples(32, 64, 1) {
        let boundary = s.masks.get(Attribute::LesionBoundary);
        assert!(!boundary.is_empty());
        for attr in &Attribute::ALL[1..] {
            let m = s.masks.get(*attr);
            for y in 0..64 {
                for x in 0..64 {
                    assert!(!m.get(x, y) || boundary.get(x, y), "{} {attr:?}", s.id());
                }
            }
        }
    }
}

#[test]
fn written_samples_reload_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_samples(4, 32, 2);
    for s in &samples {
        write_sample(dir.path(), s).unwrap();
    }
    let split = load_dataset(dir.path(), 32, 1.0, 0).unwrap();
    let mut loaded = split.train;
    loaded.sort_by(|a, b| a.id().cmp(b.id()));
    assert_eq!(loaded.len(), 4);
    for (l, s) in loaded.iter().zip(&samples) {
        assert_eq!(l.masks, s.masks);
        assert_eq!(to_model_space(l), to_model_space(s));
    }
}
