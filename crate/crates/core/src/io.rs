//! File formats: PNG images and label masks, PFM disparity rasters, ASCII PLY
//! clouds, and JSON documents.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{ColorType, DynamicImage, ImageFormat};
use nalgebra::Point3;
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::imaging::{DisparityMap, RgbImage};
use crate::labeling::{LabelMask, LabelPalette};
use crate::projection::{CloudPoint, LabeledCloud};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl IoError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn format(path: &Path, message: impl Into<String>) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn path(&self) -> &Path {
        match self {
            Self::Io { path, .. } | Self::Format { path, .. } => path,
        }
    }

    /// True when the file could not be opened or written, as opposed to
    /// being present but malformed.
    pub fn is_access(&self) -> bool {
        matches!(self, Self::Io { .. })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| IoError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| IoError::io(path, e))
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    image::save_buffer_with_format(
        path,
        img.data(),
        img.width() as u32,
        img.height() as u32,
        ColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| image_err(path, e))
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage, IoError> {
    let img = load(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w as usize, h as usize, img.into_raw())
        .map_err(|e| IoError::format(path, e.to_string()))
}

/// Writes class ids as an 8-bit grayscale PNG.
pub fn write_label_png(path: &Path, mask: &LabelMask) -> Result<(), IoError> {
    image::save_buffer_with_format(
        path,
        mask.ids(),
        mask.width() as u32,
        mask.height() as u32,
        ColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| image_err(path, e))
}

/// Reads a label mask stored either as grayscale class ids or as palette
/// colours. Colours absent from the palette map to the undefined class.
pub fn read_label_png(path: &Path, palette: &LabelPalette) -> Result<LabelMask, IoError> {
    let img = load(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let ids: Vec<u8> = match img.color() {
        ColorType::L8 | ColorType::La8 => img.into_luma8().into_raw(),
        _ => img
            .into_rgb8()
            .pixels()
            .map(|p| palette.class_of(p.0).unwrap_or(0))
            .collect(),
    };
    let classes = palette
        .feature_classes()
        .max()
        .map_or(1, |m| m.saturating_add(1));
    LabelMask::new(w, h, classes, ids).map_err(|e| IoError::format(path, e.to_string()))
}

fn load(path: &Path) -> Result<DynamicImage, IoError> {
    let reader = open(path)?;
    image::load(reader, ImageFormat::Png).map_err(|e| image_err(path, e))
}

fn image_err(path: &Path, e: image::ImageError) -> IoError {
    match e {
        image::ImageError::IoError(io) => IoError::io(path, io),
        other => IoError::format(path, other.to_string()),
    }
}

/// Single-channel little-endian PFM, rows stored bottom to top; invalid
/// pixels are NaN.
pub fn write_pfm(path: &Path, d: &DisparityMap) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_pfm_to(&mut w, d)
        .and_then(|_| w.flush())
        .map_err(|e| IoError::io(path, e))
}

pub fn write_pfm_to<W: Write>(w: &mut W, d: &DisparityMap) -> std::io::Result<()> {
    write!(w, "Pf\n{} {}\n-1.0\n", d.width(), d.height())?;
    for row in d.values().chunks(d.width()).rev() {
        for v in row {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<DisparityMap, IoError> {
    let mut r = open(path)?;
    let mut header = Vec::new();
    let mut lines = 0;
    while lines < 3 {
        let mut line = String::new();
        if r.read_line(&mut line).map_err(|e| IoError::io(path, e))? == 0 {
            return Err(IoError::format(path, "truncated PFM header"));
        }
        if !line.trim().is_empty() {
            header.push(line.trim().to_string());
            lines += 1;
        }
    }
    if header[0] != "Pf" {
        return Err(IoError::format(path, "only single-channel 'Pf' is supported"));
    }
    let dims: Vec<usize> = header[1]
        .split_whitespace()
        .map(str::parse)
        .collect::<Result<_, _>>()
        .map_err(|_| IoError::format(path, "bad PFM dimensions"))?;
    let [width, height] = dims[..] else {
        return Err(IoError::format(path, "bad PFM dimensions"));
    };
    let scale: f64 = header[2]
        .parse()
        .map_err(|_| IoError::format(path, "bad PFM scale"))?;
    let little = scale < 0.0;
    let mut raw = vec![0u8; width * height * 4];
    r.read_exact(&mut raw).map_err(|e| IoError::io(path, e))?;
    let mut values = vec![0.0; width * height];
    for (i, b) in raw.chunks_exact(4).enumerate() {
        let bytes = [b[0], b[1], b[2], b[3]];
        let v = if little {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        };
        let (row, col) = (i / width, i % width);
        values[(height - 1 - row) * width + col] = v as f64;
    }
    DisparityMap::new(width, height, values).map_err(|e| IoError::format(path, e.to_string()))
}

/// Label value written for unlabeled points.
pub const PLY_NO_LABEL: u8 = 255;

/// ASCII PLY with `x y z` (float), `red green blue` (uchar) and `label` (uchar).
pub fn write_ply(path: &Path, cloud: &LabeledCloud) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_ply_to(&mut w, cloud)
        .and_then(|_| w.flush())
        .map_err(|e| IoError::io(path, e))
}

pub fn write_ply_to<W: Write>(w: &mut W, cloud: &LabeledCloud) -> std::io::Result<()> {
    writeln!(w, "ply\nformat ascii 1.0\nelement vertex {}", cloud.len())?;
    for p in ["x", "y", "z"] {
        writeln!(w, "property double {p}")?;
    }
    for p in ["red", "green", "blue", "label"] {
        writeln!(w, "property uchar {p}")?;
    }
    writeln!(w, "end_header")?;
    for p in &cloud.points {
        let [r, g, b] = p.color;
        writeln!(
            w,
            "{:?} {:?} {:?} {r} {g} {b} {}",
            p.position.x,
            p.position.y,
            p.position.z,
            p.label.unwrap_or(PLY_NO_LABEL)
        )?;
    }
    Ok(())
}

/// Reads ASCII PLY vertices. Colour and label properties are optional;
/// missing colour reads as black and missing label as unlabeled.
pub fn read_ply(path: &Path) -> Result<LabeledCloud, IoError> {
    let r = open(path)?;
    let mut lines = r.lines();
    let mut next = || -> Result<Option<String>, IoError> {
        lines.next().transpose().map_err(|e| IoError::io(path, e))
    };
    if next()?.as_deref().map(str::trim) != Some("ply") {
        return Err(IoError::format(path, "missing 'ply' magic"));
    }
    let mut count = None;
    let mut props: Vec<String> = Vec::new();
    let mut in_vertex = false;
    loop {
        let line = next()?.ok_or_else(|| IoError::format(path, "unterminated header"))?;
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["end_header"] => break,
            ["format", fmt, ..] if *fmt != "ascii" => {
                return Err(IoError::format(path, "only ASCII PLY is supported"))
            }
            ["element", "vertex", n] => {
                count = Some(
                    n.parse::<usize>()
                        .map_err(|_| IoError::format(path, "bad vertex count"))?,
                );
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", "list", ..] if in_vertex => {
                return Err(IoError::format(path, "list properties on vertices"))
            }
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            _ => {}
        }
    }
    let count = count.ok_or_else(|| IoError::format(path, "no vertex element"))?;
    let col = |name: &str| props.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (col("x"), col("y"), col("z")) else {
        return Err(IoError::format(path, "vertex lacks x/y/z"));
    };
    let rgb = [col("red"), col("green"), col("blue")];
    let il = col("label");
    let mut points = Vec::with_capacity(count);
    for k in 0..count {
        let line = next()?.ok_or_else(|| IoError::format(path, format!("only {k} of {count} vertices")))?;
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|_| IoError::format(path, format!("bad number in vertex {k}")))?;
        if vals.len() < props.len() {
            return Err(IoError::format(path, format!("short vertex {k}")));
        }
        let byte = |i: Option<usize>| i.map_or(0, |i| vals[i].clamp(0.0, 255.0) as u8);
        let label = il.map(|i| vals[i] as u8).filter(|&l| l != PLY_NO_LABEL);
        points.push(CloudPoint::new(
            Point3::new(vals[ix], vals[iy], vals[iz]),
            [byte(rgb[0]), byte(rgb[1]), byte(rgb[2])],
            label,
        ));
    }
    Ok(LabeledCloud::new(points))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| IoError::format(path, e.to_string()))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| IoError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let r = open(path)?;
    serde_json::from_reader(r).map_err(|e| IoError::format(path, e.to_string()))
}
