//! KITTI-style dataset layout.
//!
//! ```text
//! root/image_2/000000.png    left image, 8-bit RGB
//! root/image_3/000000.png    right image
//! root/disp_occ/000000.png   left disparity, 16-bit, stored = round(d * 256), 0 = none
//! root/disp_occ_1/000000.png right-view disparity (optional)
//! root/mask_fg/000000.png    foreground mask, 8-bit 0/255 (optional)
//! root/mask_fg_1/000000.png  right-view foreground mask (optional)
//! root/label_2/000000.txt    one box per line (optional)
//! root/calib/000000.txt      P0..P3, R0_rect, Tr_velo_to_cam, Tr_imu_to_velo
//! ```
//!
//! Floats in text files are written in shortest round-trip form, so text
//! fields survive a write/read cycle unchanged; images are quantized once on
//! the first write and are stable afterwards.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::boxes::{wrap_angle, Box3D, ImageAttributes, ObjectClass};
use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::grid::{Image, Map, Mask};
use crate::sample::Sample;

pub const DISPARITY_SCALE: f64 = 256.0;

fn img_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

pub fn encode_intensity(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_disparity(d: f64) -> u16 {
    if !(d > 0.0) || !d.is_finite() {
        return 0;
    }
    (d * DISPARITY_SCALE).round().min(u16::MAX as f64) as u16
}

pub fn decode_disparity(v: u16) -> f64 {
    v as f64 / DISPARITY_SCALE
}

/// The image as it reads back after a PNG write.
pub fn quantize_image(img: &Image) -> Image {
    img.map(|p| p.map(|x| encode_intensity(x) as f64 / 255.0))
}

/// The disparity map as it reads back after a 16-bit PNG write.
pub fn quantize_disparity(d: &Map) -> Map {
    d.map(|x| decode_disparity(encode_disparity(*x)))
}

pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    ensure_parent(path)?;
    let buf: RgbImage = ImageBuffer::from_fn(img.width() as u32, img.height() as u32, |u, v| {
        Rgb(img.get(v as usize, u as usize).map(encode_intensity))
    });
    buf.save(path).map_err(|e| img_err(path, e))
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_fn(h as usize, w as usize, |v, u| {
        img.get_pixel(u as u32, v as u32).0.map(|b| b as f64 / 255.0)
    }))
}

pub fn write_disparity(path: &Path, d: &Map) -> Result<()> {
    ensure_parent(path)?;
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(d.width() as u32, d.height() as u32, |u, v| Luma([encode_disparity(*d.get(v as usize, u as usize))]));
    buf.save(path).map_err(|e| img_err(path, e))
}

pub fn read_disparity(path: &Path) -> Result<Map> {
    let img = image::open(path).map_err(|e| img_err(path, e))?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => return Err(img_err(path, format!("expected 16-bit grayscale, got {:?}", other.color()))),
    };
    let (w, h) = img.dimensions();
    Ok(Map::from_fn(h as usize, w as usize, |v, u| decode_disparity(img.get_pixel(u as u32, v as u32).0[0])))
}

pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    ensure_parent(path)?;
    let buf: GrayImage = ImageBuffer::from_fn(m.width() as u32, m.height() as u32, |u, v| {
        Luma([if *m.get(v as usize, u as usize) { 255 } else { 0 }])
    });
    buf.save(path).map_err(|e| img_err(path, e))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = image::open(path).map_err(|e| img_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_fn(h as usize, w as usize, |v, u| img.get_pixel(u as u32, v as u32).0[0] >= 128))
}

/// One label line: class, truncation, occlusion, alpha, 2D box, h w l,
/// x y z, rotation_y and, for detections, the score.
pub fn format_label(b: &Box3D, with_score: bool) -> String {
    let a = &b.attrs;
    let mut s = format!(
        "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
        b.class,
        a.truncation,
        a.occlusion,
        a.alpha,
        a.bbox[0],
        a.bbox[1],
        a.bbox[2],
        a.bbox[3],
        b.size[0],
        b.size[1],
        b.size[2],
        b.center[0],
        b.center[1],
        b.center[2],
        b.yaw
    );
    if with_score {
        s.push_str(&format!(" {}", b.score));
    }
    s
}

pub fn write_labels(path: &Path, boxes: &[Box3D], with_score: bool) -> Result<()> {
    ensure_parent(path)?;
    let mut text = String::new();
    for b in boxes {
        text.push_str(&format_label(b, with_score));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses one label line. Classes other than car, pedestrian and cyclist
/// (`DontCare`, `Van`, ...) yield `Ok(None)`.
pub fn parse_label(line: &str) -> std::result::Result<Option<Box3D>, String> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 15 && f.len() != 16 {
        return Err(format!("expected 15 or 16 fields, found {}", f.len()));
    }
    let Ok(class) = f[0].parse::<ObjectClass>() else {
        return Ok(None);
    };
    let num = |i: usize| -> std::result::Result<f64, String> {
        f[i].parse::<f64>().map_err(|e| format!("field {} `{}`: {e}", i + 1, f[i]))
    };
    let occ = num(2)?;
    if !(occ == occ.round() && (0.0..=3.0).contains(&occ)) {
        return Err(format!("occlusion `{}` is not one of 0, 1, 2, 3", f[2]));
    }
    let yaw = num(14)?;
    let b = Box3D {
        center: [num(11)?, num(12)?, num(13)?],
        size: [num(8)?, num(9)?, num(10)?],
        yaw: wrap_angle(yaw),
        class,
        score: if f.len() == 16 { num(15)? } else { 1.0 },
        attrs: ImageAttributes {
            truncation: num(1)?,
            occlusion: occ as u8,
            alpha: num(3)?,
            bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        },
    };
    b.validate().map_err(|e| e.to_string())?;
    Ok(Some(b))
}

pub fn read_labels(path: &Path) -> Result<Vec<Box3D>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_label(line) {
            Ok(Some(b)) => out.push(b),
            Ok(None) => {}
            Err(message) => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message,
                })
            }
        }
    }
    Ok(out)
}

/// `P3[0,3]` such that `(P2[0,3] - P3[0,3]) / f_u` reproduces the baseline
/// exactly, with `P2[0,3] = 0`.
fn encode_p3_offset(rig: &CameraRig) -> f64 {
    let mut hi = -(rig.f_u * rig.baseline);
    let mut lo = hi;
    for _ in 0..16 {
        for c in [hi, lo] {
            if (0.0 - c) / rig.f_u == rig.baseline {
                return c;
            }
        }
        hi = hi.next_up();
        lo = lo.next_down();
    }
    -(rig.f_u * rig.baseline)
}

pub fn format_calib(rig: &CameraRig) -> String {
    let p = |tx: f64| {
        format!(
            "{} 0 {} {} 0 {} {} 0 0 0 1 0",
            rig.f_u, rig.c_u, tx, rig.f_v, rig.c_v
        )
    };
    let p3 = encode_p3_offset(rig);
    format!(
        "P0: {}\nP1: {}\nP2: {}\nP3: {}\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\nTr_imu_to_velo: 1 0 0 0 0 1 0 0 0 0 1 0\n",
        p(0.0),
        p(p3),
        p(0.0),
        p(p3)
    )
}

pub fn write_calib(path: &Path, rig: &CameraRig) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, format_calib(rig)).map_err(|e| Error::io(path, e))
}

/// Rig from the `P2`/`P3` rows: `b = (P2[0,3] - P3[0,3]) / f_u`.
pub fn read_calib(path: &Path) -> Result<CameraRig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let (mut p2, mut p3) = (None, None);
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        let key = key.trim();
        if key != "P2" && key != "P3" {
            continue;
        }
        let vals: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| parse_err(i + 1, format!("`{t}`: {e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != 12 {
            return Err(parse_err(i + 1, format!("{key} has {} values, expected 12", vals.len())));
        }
        if key == "P2" {
            p2 = Some(vals);
        } else {
            p3 = Some(vals);
        }
    }
    let (Some(p2), Some(p3)) = (p2, p3) else {
        return Err(parse_err(0, "P2 and P3 are required".into()));
    };
    let rig = CameraRig {
        c_u: p2[2],
        c_v: p2[6],
        f_u: p2[0],
        f_v: p2[5],
        baseline: (p2[3] - p3[3]) / p2[0],
    };
    rig.validate().map_err(|e| parse_err(0, e.to_string()))?;
    Ok(rig)
}

/// Paths of frame `index` under `root`.
pub struct FramePaths {
    pub left: PathBuf,
    pub right: PathBuf,
    pub disparity: PathBuf,
    pub right_disparity: PathBuf,
    pub mask: PathBuf,
    pub right_mask: PathBuf,
    pub label: PathBuf,
    pub calib: PathBuf,
}

impl FramePaths {
    pub fn new(root: &Path, index: usize) -> Self {
        let png = format!("{index:06}.png");
        let txt = format!("{index:06}.txt");
        Self {
            left: root.join("image_2").join(&png),
            right: root.join("image_3").join(&png),
            disparity: root.join("disp_occ").join(&png),
            right_disparity: root.join("disp_occ_1").join(&png),
            mask: root.join("mask_fg").join(&png),
            right_mask: root.join("mask_fg_1").join(&png),
            label: root.join("label_2").join(&txt),
            calib: root.join("calib").join(&txt),
        }
    }
}

pub fn write_sample(root: &Path, index: usize, s: &Sample) -> Result<()> {
    s.validate()?;
    let p = FramePaths::new(root, index);
    write_image(&p.left, &s.left)?;
    write_image(&p.right, &s.right)?;
    write_calib(&p.calib, &s.rig)?;
    if let Some(d) = &s.disparity {
        write_disparity(&p.disparity, d)?;
    }
    if let Some(d) = &s.right_disparity {
        write_disparity(&p.right_disparity, d)?;
    }
    if let Some(m) = &s.fg_mask {
        write_mask(&p.mask, m)?;
    }
    if let Some(m) = &s.right_fg_mask {
        write_mask(&p.right_mask, m)?;
    }
    if let Some(l) = &s.labels {
        write_labels(&p.label, l, false)?;
    }
    Ok(())
}

/// Reads frame `index`. Images and calibration are required; the rest is
/// loaded when present.
pub fn read_sample(root: &Path, index: usize) -> Result<Sample> {
    let p = FramePaths::new(root, index);
    let opt = |path: &Path| path.exists();
    let s = Sample {
        left: read_image(&p.left)?,
        right: read_image(&p.right)?,
        rig: read_calib(&p.calib)?,
        disparity: if opt(&p.disparity) { Some(read_disparity(&p.disparity)?) } else { None },
        right_disparity: if opt(&p.right_disparity) { Some(read_disparity(&p.right_disparity)?) } else { None },
        labels: if opt(&p.label) { Some(read_labels(&p.label)?) } else { None },
        fg_mask: if opt(&p.mask) { Some(read_mask(&p.mask)?) } else { None },
        right_fg_mask: if opt(&p.right_mask) { Some(read_mask(&p.right_mask)?) } else { None },
    };
    s.validate()?;
    Ok(s)
}

/// Frame indices present under `root/image_2`, ascending.
pub fn list_frames(root: &Path) -> Result<Vec<usize>> {
    let dir = root.join("image_2");
    let mut out = Vec::new();
    for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(stem) = name.strip_suffix(".png") {
            if let Ok(i) = stem.parse::<usize>() {
                out.push(i);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Reads an external split file: one frame index per line.
pub fn read_split_file(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse::<usize>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
