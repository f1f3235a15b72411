//! File formats and dataset directory layout.
//!
//! - instance maps: 16-bit grayscale PNG (`<stem>.inst.png`)
//! - class maps: 8-bit grayscale PNG (`<stem>.class.png`)
//! - NP targets: 8-bit grayscale PNG holding 0/1 (`<stem>.np.png`)
//! - float grids: a one-line JSON header `{"height","width","dtype":"f32le"}`
//!   followed by one or more row-major little-endian f32 planes. The plane
//!   count is implied by the payload length.
//!
//! A dataset directory pairs instance and class maps by stem. A
//! `manifest.json` in the directory, when present, replaces the naming
//! convention with an explicit list.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hover::{HoverMaps, NpTarget};
use crate::instance::{ClassMap, InstanceMap};
use crate::metrics::LabelledImage;
use crate::postprocess::NcProbabilities;
use crate::stain::RgbImage;

pub const INSTANCE_SUFFIX: &str = ".inst.png";
pub const CLASS_SUFFIX: &str = ".class.png";
pub const NP_SUFFIX: &str = ".np.png";
pub const HOVER_SUFFIX: &str = ".hover.f32";
pub const MANIFEST_NAME: &str = "manifest.json";

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|e| match e {
        image::ImageError::IoError(source) => Error::io(path, source),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

fn save_image(path: &Path, img: &DynamicImage) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn dims(img: &DynamicImage) -> (usize, usize) {
    (img.height() as usize, img.width() as usize)
}

/// Read a 16-bit (or 8-bit) grayscale instance map.
pub fn read_instance_map(path: &Path) -> Result<InstanceMap> {
    let img = open_image(path)?;
    let (h, w) = dims(&img);
    let labels: Vec<u32> = match img {
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::format(
                path,
                format!("expected grayscale instance map, got {:?}", other.color()),
            ))
        }
    };
    InstanceMap::new(h, w, labels)
}

pub fn write_instance_map(path: &Path, map: &InstanceMap) -> Result<()> {
    if map.max_label() > u16::MAX as u32 {
        return Err(Error::InvalidParameter(format!(
            "label {} does not fit a 16-bit PNG",
            map.max_label()
        )));
    }
    let raw: Vec<u16> = map.as_slice().iter().map(|&l| l as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw).expect("buffer size");
    save_image(path, &DynamicImage::ImageLuma16(buf))
}

fn read_gray8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = open_image(path)?;
    let (h, w) = dims(&img);
    match img {
        DynamicImage::ImageLuma8(b) => Ok((h, w, b.into_raw())),
        other => Err(Error::format(
            path,
            format!("expected 8-bit grayscale, got {:?}", other.color()),
        )),
    }
}

fn write_gray8(path: &Path, h: usize, w: usize, data: &[u8]) -> Result<()> {
    let buf = GrayImage::from_raw(w as u32, h as u32, data.to_vec()).expect("buffer size");
    save_image(path, &DynamicImage::ImageLuma8(buf))
}

pub fn read_class_map(path: &Path) -> Result<ClassMap> {
    let (h, w, data) = read_gray8(path)?;
    ClassMap::new(h, w, data)
}

pub fn write_class_map(path: &Path, classes: &ClassMap) -> Result<()> {
    write_gray8(path, classes.height(), classes.width(), classes.as_slice())
}

pub fn write_np_target(path: &Path, np: &NpTarget) -> Result<()> {
    write_gray8(path, np.height(), np.width(), np.as_slice())
}

pub fn read_np_target(path: &Path) -> Result<NpTarget> {
    let (h, w, data) = read_gray8(path)?;
    NpTarget::new(h, w, data)
}

pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = open_image(path)?;
    let (h, w) = dims(&img);
    match img {
        DynamicImage::ImageRgb8(b) => RgbImage::new(h, w, b.into_raw()),
        DynamicImage::ImageRgba8(b) => {
            RgbImage::new(h, w, DynamicImage::ImageRgba8(b).into_rgb8().into_raw())
        }
        other => Err(Error::format(
            path,
            format!("expected 8-bit RGB image, got {:?}", other.color()),
        )),
    }
}

pub fn write_rgb(path: &Path, img: &RgbImage) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.as_slice().to_vec())
        .expect("buffer size");
    save_image(path, &DynamicImage::ImageRgb8(buf))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    height: usize,
    width: usize,
    dtype: String,
}

const GRID_DTYPE: &str = "f32le";

/// Row-major f32 planes sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub height: usize,
    pub width: usize,
    pub planes: Vec<Vec<f32>>,
}

pub fn write_grids(path: &Path, height: usize, width: usize, planes: &[&[f32]]) -> Result<()> {
    let mut out = serde_json::to_vec(&GridHeader {
        height,
        width,
        dtype: GRID_DTYPE.into(),
    })
    .expect("header serializes");
    out.push(b'\n');
    for p in planes {
        if p.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: p.len(),
            });
        }
        for &x in *p {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_grids(path: &Path) -> Result<GridFile> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: GridHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
    if header.dtype != GRID_DTYPE {
        return Err(Error::format(path, format!("unsupported dtype {:?}", header.dtype)));
    }
    let mut payload = Vec::new();
    r.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let plane_bytes = header.height * header.width * 4;
    if plane_bytes == 0 {
        if !payload.is_empty() {
            return Err(Error::format(path, "payload present for an empty grid"));
        }
        return Ok(GridFile {
            height: header.height,
            width: header.width,
            planes: Vec::new(),
        });
    }
    if payload.len() % plane_bytes != 0 {
        return Err(Error::format(
            path,
            format!("payload of {} bytes is not a whole number of planes", payload.len()),
        ));
    }
    let planes = payload
        .chunks_exact(plane_bytes)
        .map(|chunk| {
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect();
    Ok(GridFile {
        height: header.height,
        width: header.width,
        planes,
    })
}

fn expect_planes(path: &Path, g: &GridFile, n: usize) -> Result<()> {
    if g.planes.len() != n {
        return Err(Error::format(
            path,
            format!("expected {n} plane(s), found {}", g.planes.len()),
        ));
    }
    Ok(())
}

pub fn write_hover(path: &Path, hv: &HoverMaps) -> Result<()> {
    write_grids(path, hv.height(), hv.width(), &[hv.h(), hv.v()])
}

pub fn read_hover(path: &Path) -> Result<HoverMaps> {
    let mut g = read_grids(path)?;
    expect_planes(path, &g, 2)?;
    let v = g.planes.pop().expect("two planes");
    let h = g.planes.pop().expect("two planes");
    HoverMaps::new(g.height, g.width, h, v)
}

/// Read a single-plane probability grid.
pub fn read_np_prob(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let mut g = read_grids(path)?;
    expect_planes(path, &g, 1)?;
    Ok((g.height, g.width, g.planes.pop().expect("one plane")))
}

pub fn write_np_prob(path: &Path, height: usize, width: usize, prob: &[f32]) -> Result<()> {
    write_grids(path, height, width, &[prob])
}

/// Read class probabilities stored as one plane per channel.
pub fn read_nc_prob(path: &Path) -> Result<NcProbabilities> {
    let g = read_grids(path)?;
    if g.planes.is_empty() {
        return Err(Error::format(path, "no class planes"));
    }
    let channels = g.planes.len();
    let n = g.height * g.width;
    let mut data = Vec::with_capacity(n * channels);
    for i in 0..n {
        data.extend(g.planes.iter().map(|p| p[i]));
    }
    NcProbabilities::new(g.height, g.width, channels, data)
}

pub fn write_nc_prob(path: &Path, nc: &NcProbabilities) -> Result<()> {
    let (h, w) = nc.shape();
    let k = nc.channels();
    let planes: Vec<Vec<f32>> = (0..k)
        .map(|c| nc.as_slice().iter().skip(c).step_by(k).copied().collect())
        .collect();
    let refs: Vec<&[f32]> = planes.iter().map(Vec::as_slice).collect();
    write_grids(path, h, w, &refs)
}

/// One image of a dataset directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub stem: String,
    pub instances: PathBuf,
    pub classes: PathBuf,
}

impl DatasetEntry {
    pub fn load(&self) -> Result<LabelledImage> {
        LabelledImage::new(read_instance_map(&self.instances)?, read_class_map(&self.classes)?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    items: Vec<DatasetEntry>,
}

fn list_dir(dir: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(name) = entry.file_name().to_str() {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

/// Stems of files in `dir` ending with `suffix`, sorted.
pub fn stems_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter_map(|n| n.strip_suffix(suffix).map(str::to_string))
        .filter(|s| !s.is_empty())
        .collect())
}

/// Entries of a dataset directory, sorted by stem.
///
/// Without a manifest, every `<stem>.inst.png` needs a `<stem>.class.png`
/// and vice versa; unpaired stems are reported together.
pub fn read_dataset(dir: &Path) -> Result<Vec<DatasetEntry>> {
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::format(&manifest, e.to_string()))?;
        let mut items: Vec<DatasetEntry> = m
            .items
            .into_iter()
            .map(|e| DatasetEntry {
                instances: dir.join(&e.instances),
                classes: dir.join(&e.classes),
                stem: e.stem,
            })
            .collect();
        items.sort_by(|a, b| a.stem.cmp(&b.stem));
        if let Some(w) = items.windows(2).find(|w| w[0].stem == w[1].stem) {
            return Err(Error::format(&manifest, format!("duplicate stem {:?}", w[0].stem)));
        }
        return Ok(items);
    }
    let inst = stems_with_suffix(dir, INSTANCE_SUFFIX)?;
    let cls = stems_with_suffix(dir, CLASS_SUFFIX)?;
    let mut seen: BTreeMap<String, (bool, bool)> = BTreeMap::new();
    for s in inst {
        seen.entry(s).or_default().0 = true;
    }
    for s in cls {
        seen.entry(s).or_default().1 = true;
    }
    let missing: Vec<String> = seen
        .iter()
        .filter(|(_, &(a, b))| !(a && b))
        .map(|(s, _)| s.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPairs(missing));
    }
    Ok(seen
        .into_keys()
        .map(|stem| DatasetEntry {
            instances: dir.join(format!("{stem}{INSTANCE_SUFFIX}")),
            classes: dir.join(format!("{stem}{CLASS_SUFFIX}")),
            stem,
        })
        .collect())
}

/// Write an image's instance and class maps under the naming convention.
pub fn write_labelled(dir: &Path, stem: &str, img: &LabelledImage) -> Result<()> {
    write_instance_map(&dir.join(format!("{stem}{INSTANCE_SUFFIX}")), &img.instances)?;
    write_class_map(&dir.join(format!("{stem}{CLASS_SUFFIX}")), &img.classes)
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
