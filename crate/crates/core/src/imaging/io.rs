use std::io::Write;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageEncoder};

use super::{BinaryMask, GrayImage, Image};
use crate::{Error, Result};

/// Decodes PNG or JPEG bytes. Gray and gray+alpha sources become 1-channel,
/// everything else is converted to RGB.
pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let dynimg = image::load_from_memory(bytes)?;
    from_dynamic(dynimg)
}

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_image(&bytes).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Loads a mask PNG; any value above 127 is foam.
pub fn load_mask(path: &Path) -> Result<BinaryMask> {
    let img = load_image(path)?;
    let gray = super::to_grayscale(&img)?;
    Ok(BinaryMask::from_gray(&gray))
}

fn from_dynamic(dynimg: DynamicImage) -> Result<Image> {
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    match dynimg.color() {
        ColorType::L8 | ColorType::La8 | ColorType::L16 | ColorType::La16 => {
            Image::new(w, h, 1, dynimg.into_luma8().into_raw())
        }
        _ => Image::new(w, h, 3, dynimg.into_rgb8().into_raw()),
    }
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::codecs::png::PngEncoder::new(&mut buf).write_image(
        img.data(),
        img.width() as u32,
        img.height() as u32,
        color,
    )?;
    Ok(buf)
}

pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}

pub fn save_gray_png(g: &GrayImage, path: &Path) -> Result<()> {
    save_png(&Image::from(g.clone()), path)
}

/// Writes the mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask_png(m: &BinaryMask, path: &Path) -> Result<()> {
    save_gray_png(&m.to_gray(), path)
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let ctx = |what: &str| format!("{what} {}", tmp.display());
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(ctx("creating"), e))?;
    f.write_all(bytes).map_err(|e| Error::io(ctx("writing"), e))?;
    f.sync_all().map_err(|e| Error::io(ctx("syncing"), e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(format!("renaming onto {}", path.display()), e))
}
