//! On-disk dataset layout.
//!
//! ```text
//! root/images/ISIC_<id>.jpg                       lesion photos (.jpg, .jpeg or .png)
//! root/masks/ISIC_<id>_segmentation.png           lesion boundary
//! root/masks/ISIC_<id>_attribute_<name>.png       one per attribute
//! root/packed/A/ISIC_<id>_packA.png               boundary, pigment net, negative net
//! root/packed/B/ISIC_<id>_packB.png               streaks, milia-like cysts, globules
//! ```
//!
//! A missing attribute file means the attribute is absent (all-zero channel).

use std::path::{Path, PathBuf};

use image::RgbImage;
use rayon::prelude::*;

use crate::codec::masks::{pack, unpack, Attribute, Bitmap, MaskSet, SamplePair};
use crate::error::{Error, Result};
use crate::rng::{streams, RngState};

pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const PACKED_DIR: &str = "packed";

pub fn image_path(root: &Path, id: &str) -> PathBuf {
    root.join(IMAGES_DIR).join(format!("ISIC_{id}.png"))
}

pub fn mask_path(root: &Path, id: &str, attr: Attribute) -> PathBuf {
    root.join(MASKS_DIR)
        .join(format!("ISIC_{id}_{}.png", attr.file_suffixes()[0]))
}

pub fn packed_paths(root: &Path, id: &str) -> (PathBuf, PathBuf) {
    let dir = root.join(PACKED_DIR);
    (
        dir.join("A").join(format!("ISIC_{id}_packA.png")),
        dir.join("B").join(format!("ISIC_{id}_packB.png")),
    )
}

/// Extracts `<id>` from `ISIC_<id><suffix>.<ext>`.
fn parse_id<'a>(file_name: &'a str, suffix: &str, exts: &[&str]) -> Option<&'a str> {
    let (stem, ext) = file_name.rsplit_once('.')?;
    if !exts.iter().any(|e| e.eq_ignore_ascii_case(ext)) {
        return None;
    }
    let id = stem.strip_prefix("ISIC_")?.strip_suffix(suffix)?;
    (!id.is_empty() && !id.contains('_')).then_some(id)
}

fn list_ids(dir: &Path, suffix: &str, exts: &[&str]) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            if let Some(id) = parse_id(name, suffix, exts) {
                ids.push(id.to_string());
            }
        }
    }
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Ids of every photo under `root/images`, sorted.
pub fn discover_ids(root: &Path) -> Result<Vec<String>> {
    list_ids(&root.join(IMAGES_DIR), "", &["jpg", "jpeg", "png"])
}

/// Ids with at least one mask file under `root/masks`, sorted.
pub fn discover_mask_ids(root: &Path) -> Result<Vec<String>> {
    let dir = root.join(MASKS_DIR);
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let Some(name) = entry.file_name().to_str().map(str::to_owned) else {
            continue;
        };
        let Some(stem) = name.strip_suffix(".png") else {
            continue;
        };
        let Some(rest) = stem.strip_prefix("ISIC_") else {
            continue;
        };
        if let Some((id, _)) = rest.split_once('_') {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    ids.dedup();
    Ok(ids)
}

/// Ids with a first packed image under `root/packed/A`, sorted.
pub fn discover_packed_ids(root: &Path) -> Result<Vec<String>> {
    list_ids(&root.join(PACKED_DIR).join("A"), "_packA", &["png"])
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)
        .map_err(|e| Error::image(path, e))?
        .to_rgb8())
}

pub fn read_bitmap(path: &Path) -> Result<Bitmap> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    Ok(Bitmap::from_gray(&img))
}

fn find_photo(root: &Path, id: &str) -> Option<PathBuf> {
    ["jpg", "jpeg", "png", "JPG", "JPEG", "PNG"]
        .iter()
        .map(|ext| root.join(IMAGES_DIR).join(format!("ISIC_{id}.{ext}")))
        .find(|p| p.is_file())
}

/// Masks read from the per-attribute layout.
#[derive(Clone, Debug)]
pub struct LoadedMasks {
    pub masks: MaskSet,
    /// Attributes whose file was missing and were filled with zeros.
    pub missing: Vec<Attribute>,
}

/// Reads the six mask files of `id`. Returns `None` when none exist.
/// Channels of differing sizes are resized to the first file's size.
pub fn read_isic_masks(root: &Path, id: &str) -> Result<Option<LoadedMasks>> {
    let mut found: Vec<(Attribute, Bitmap)> = Vec::new();
    let mut missing = Vec::new();
    for attr in Attribute::ALL {
        let path = attr
            .file_suffixes()
            .iter()
            .map(|s| root.join(MASKS_DIR).join(format!("ISIC_{id}_{s}.png")))
            .find(|p| p.is_file());
        match path {
            Some(p) => found.push((attr, read_bitmap(&p)?)),
            None => missing.push(attr),
        }
    }
    let Some((w, h)) = found.first().map(|(_, b)| b.dims()) else {
        return Ok(None);
    };
    let mut masks = MaskSet::empty(id, w, h);
    for (attr, bitmap) in found {
        *masks.get_mut(attr) = bitmap.resize(w, h);
    }
    Ok(Some(LoadedMasks { masks, missing }))
}

pub fn read_packed_masks(root: &Path, id: &str) -> Result<Option<MaskSet>> {
    let (pa, pb) = packed_paths(root, id);
    if !pa.is_file() && !pb.is_file() {
        return Ok(None);
    }
    let a = read_rgb(&pa)?;
    let b = read_rgb(&pb)?;
    unpack(&a, &b, id).map(Some)
}

/// Writes an 8-bit image as PNG, creating parent directories.
pub fn write_png<P: image::PixelWithColorType>(img: &image::ImageBuffer<P, Vec<P::Subpixel>>, path: &Path) -> Result<()>
where
    [P::Subpixel]: image::EncodableLayout,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::image(path, e))
}

pub fn write_packed(root: &Path, masks: &MaskSet) -> Result<()> {
    let (a, b) = pack(masks);
    let (pa, pb) = packed_paths(root, &masks.image_id);
    write_png(&a, &pa)?;
    write_png(&b, &pb)
}

/// Writes the six per-attribute mask files; absent attributes are written
/// as all-zero images.
pub fn write_isic_masks(root: &Path, masks: &MaskSet) -> Result<()> {
    for attr in Attribute::ALL {
        write_png(&masks.get(attr).to_gray(), &mask_path(root, &masks.image_id, attr))?;
    }
    Ok(())
}

pub fn write_sample(root: &Path, pair: &SamplePair) -> Result<()> {
    write_png(&pair.image, &image_path(root, pair.id()))?;
    write_isic_masks(root, &pair.masks)
}

/// Train/test partition of a dataset.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub train: Vec<SamplePair>,
    pub test: Vec<SamplePair>,
}

/// Sorts `ids`, shuffles them with the split stream of `seed`, and puts
/// the first `ceil(ratio · n)` into the training part. Both parts are
/// returned in id order.
pub fn split_ids(ids: &[String], ratio: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1], got {ratio}")));
    }
    let mut ids = ids.to_vec();
    ids.sort();
    RngState::with_stream(seed, streams::SPLIT).shuffle(&mut ids);
    let n_train = ((ratio * ids.len() as f64).ceil() as usize).min(ids.len());
    let mut test = ids.split_off(n_train);
    ids.sort();
    test.sort();
    Ok((ids, test))
}

/// Loads one sample from either mask layout and resizes it to `size`.
/// `Ok(None)` means the photo has no masks at all.
pub fn load_sample(root: &Path, id: &str, size: u32) -> Result<Option<SamplePair>> {
    let photo = find_photo(root, id).ok_or_else(|| {
        Error::io(
            image_path(root, id),
            std::io::Error::new(std::io::ErrorKind::NotFound, "photo not found"),
        )
    })?;
    let masks = if root.join(MASKS_DIR).is_dir() {
        read_isic_masks(root, id)?.map(|loaded| {
            for attr in &loaded.missing {
                log::debug!("ISIC_{id}: no {} mask, using an empty channel", attr.label());
            }
            loaded.masks
        })
    } else {
        read_packed_masks(root, id)?
    };
    let Some(masks) = masks else {
        return Ok(None);
    };
    let image = read_rgb(&photo)?;
    let masks = masks.resize(image.width(), image.height());
    Ok(Some(SamplePair::new(image, masks)?.resized(size)))
}

/// Reads every sample under `root`, resizes to `image_size` and splits it.
/// Photos without any mask file are skipped with a warning.
pub fn load_dataset(root: &Path, image_size: u32, split_ratio: f64, seed: u64) -> Result<Split> {
    let ids = discover_ids(root)?;
    if ids.is_empty() {
        return Err(Error::NoInput(root.join(IMAGES_DIR)));
    }
    let (train_ids, test_ids) = split_ids(&ids, split_ratio, seed)?;
    let load = |ids: &[String]| -> Result<Vec<SamplePair>> {
        let loaded: Vec<Option<SamplePair>> = ids
            .par_iter()
            .map(|id| load_sample(root, id, image_size))
            .collect::<Result<_>>()?;
        Ok(ids
            .iter()
            .zip(loaded)
            .filter_map(|(id, s)| {
                if s.is_none() {
                    log::warn!("ISIC_{id}: photo has no mask files, skipping");
                }
                s
            })
            .collect())
    };
    Ok(Split {
        train: load(&train_ids)?,
        test: load(&test_ids)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_parsing() {
        assert_eq!(parse_id("ISIC_0000013.jpg", "", &["jpg"]), Some("0000013"));
        assert_eq!(parse_id("ISIC_0000013_packA.png", "_packA", &["png"]), Some("0000013"));
        assert_eq!(parse_id("ISIC_0000013_segmentation.png", "", &["png"]), None);
        assert_eq!(parse_id("notes.txt", "", &["jpg"]), None);
    }

    #[test]
    fn split_counts_and_partition() {
        let ids: Vec<String> = (0..500).map(|i| format!("{i:07}")).collect();
        let (train, test) = split_ids(&ids, 0.75, 1).unwrap();
        assert_eq!((train.len(), test.len()), (375, 125));
        let mut all: Vec<_> = train.iter().chain(&test).cloned().collect();
        all.sort();
        assert_eq!(all, ids);

        let (again, _) = split_ids(&ids, 0.75, 1).unwrap();
        assert_eq!(train, again);
        let (other, _) = split_ids(&ids, 0.75, 2).unwrap();
        assert_ne!(train, other);

        let (t, rest) = split_ids(&ids[..7], 0.75, 0).unwrap();
        assert_eq!((t.len(), rest.len()), (6, 1));
        assert!(split_ids(&ids, 0.0, 0).is_err());
    }
}
