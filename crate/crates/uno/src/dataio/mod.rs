//! Sequence ingestion, on-disk layout and synthetic scene generation.
//!
//! On-disk layout of a sequence directory:
//!
//! ```text
//! images/%06d.png      16-bit grayscale (8-bit PNG and PGM also accepted)
//! depth/%06d.pfm       float pseudo-depth, <= 0 marks invalid pixels
//! depth/%06d.png       alternative: 16-bit integer depth with depth/scale.txt
//! depth/scale.txt      sidecar: meters per integer unit
//! calib.txt            "fx fy cx cy" on one line
//! times.txt            one timestamp (seconds) per line; optional
//! features/%06d.txt    optional: "u v d0 d1 ..." per feature
//! ```

mod features;
mod pfm;
mod synthetic;

pub use features::{extract_features, match_features};
pub use pfm::{read_pfm, write_pfm};
pub use synthetic::{generate_synthetic, NoiseSpec, Regime, SyntheticSceneSpec};

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Grid};

/// A detected or tracked image feature: sub-pixel position plus descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub position: Vector2<f64>,
    pub descriptor: Vec<f64>,
}

/// One observation of a sequence.
#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub index: usize,
    pub timestamp: f64,
    /// Grayscale intensities in `[0, 1]`.
    pub image: Grid,
    /// Affine-invariant pseudo-depth; `None` when the sequence ships none.
    pub pseudo_depth: Option<DepthMap>,
    pub features: Vec<Feature>,
}

/// How depth files are stored on disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SequenceFormat {
    /// Probe for PFM first, then 16-bit PNG with a scale sidecar.
    #[default]
    Auto,
    PfmDepth,
    PngDepth,
}

/// A loaded sequence plus calibration, when present.
#[derive(Debug, Clone)]
pub struct LoadedSequence {
    pub frames: Vec<FrameRecord>,
    pub intrinsics: Option<CameraIntrinsics>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::BadFile {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

fn load_image(path: &Path) -> Result<Grid> {
    let img = image::open(path).map_err(|e| bad(path, e.to_string()))?;
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let mut grid = Grid::new(w, h, 0.0);
    for (x, y, p) in luma.enumerate_pixels() {
        grid.set(x as usize, y as usize, p.0[0] as f64 / 65535.0);
    }
    Ok(grid)
}

fn save_image(path: &Path, grid: &Grid) -> Result<()> {
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        grid.width as u32,
        grid.height as u32,
    );
    for (x, y, p) in img.enumerate_pixels_mut() {
        let v = (grid.at(x as usize, y as usize).clamp(0.0, 1.0) * 65535.0).round() as u16;
        p.0[0] = v;
    }
    img.save(path).map_err(|e| bad(path, e.to_string()))
}

fn depth_from_grid(values: Grid) -> DepthMap {
    let valid: Vec<bool> = values.data.iter().map(|&d| d > 0.0).collect();
    DepthMap::with_mask(values, valid).expect("mask construction cannot fail here")
}

fn load_depth_png(path: &Path, scale: f64) -> Result<Grid> {
    let img = image::open(path).map_err(|e| bad(path, e.to_string()))?;
    let luma = img.to_luma16();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let mut grid = Grid::new(w, h, 0.0);
    for (x, y, p) in luma.enumerate_pixels() {
        grid.set(x as usize, y as usize, p.0[0] as f64 * scale);
    }
    Ok(grid)
}

fn parse_features_file(path: &Path) -> Result<Vec<Feature>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> =
            line.split_whitespace().map(str::parse::<f64>).collect();
        let vals = vals.map_err(|_| bad(path, format!("bad number on line {}", lineno + 1)))?;
        if vals.len() < 3 {
            return Err(bad(path, format!("line {} too short", lineno + 1)));
        }
        let d = vals.len() - 2;
        match dim {
            None => dim = Some(d),
            Some(existing) if existing != d => {
                return Err(bad(
                    path,
                    format!("descriptor dimension changes on line {}", lineno + 1),
                ));
            }
            _ => {}
        }
        out.push(Feature {
            position: Vector2::new(vals[0], vals[1]),
            descriptor: vals[2..].to_vec(),
        });
    }
    Ok(out)
}

fn write_features_file(path: &Path, features: &[Feature]) -> Result<()> {
    let mut text = String::new();
    for f in features {
        text.push_str(&format!("{:.17e} {:.17e}", f.position[0], f.position[1]));
        for d in &f.descriptor {
            text.push_str(&format!(" {d:.17e}"));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Load a sequence directory into frame records.
///
/// Frames are ordered by timestamp (file index order when `times.txt` is
/// absent). Missing depth or feature files leave the corresponding record
/// fields empty.
pub fn load_sequence(dir: &Path, format: SequenceFormat) -> Result<LoadedSequence> {
    let images_dir = dir.join("images");
    if !images_dir.is_dir() {
        return Err(Error::NoFrames(dir.display().to_string()));
    }
    let mut image_files: Vec<PathBuf> = fs::read_dir(&images_dir)
        .map_err(|e| io_err(&images_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("pgm")
            )
        })
        .collect();
    image_files.sort();
    if image_files.is_empty() {
        return Err(Error::NoFrames(dir.display().to_string()));
    }

    let times_path = dir.join("times.txt");
    let timestamps: Vec<f64> = if times_path.is_file() {
        let text = fs::read_to_string(&times_path).map_err(|e| io_err(&times_path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.trim().parse::<f64>())
            .collect();
        parsed.map_err(|_| bad(&times_path, "bad timestamp"))?
    } else {
        (0..image_files.len()).map(|i| i as f64 * 0.1).collect()
    };
    if timestamps.len() != image_files.len() {
        return Err(bad(
            &times_path,
            format!(
                "{} timestamps for {} images",
                timestamps.len(),
                image_files.len()
            ),
        ));
    }
    for (i, w) in timestamps.windows(2).enumerate() {
        if w[1] <= w[0] {
            return Err(Error::NonMonotoneTimestamps(format!(
                "{} (line {})",
                times_path.display(),
                i + 2
            )));
        }
    }

    let intrinsics = {
        let calib_path = dir.join("calib.txt");
        if calib_path.is_file() {
            let text = fs::read_to_string(&calib_path).map_err(|e| io_err(&calib_path, e))?;
            let vals: std::result::Result<Vec<f64>, _> =
                text.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|_| bad(&calib_path, "bad calibration value"))?;
            if vals.len() < 4 {
                return Err(bad(&calib_path, "expected fx fy cx cy"));
            }
            Some((vals[0], vals[1], vals[2], vals[3]))
        } else {
            None
        }
    };

    let depth_dir = dir.join("depth");
    let png_depth_scale = {
        let p = depth_dir.join("scale.txt");
        if p.is_file() {
            let text = fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
            Some(
                text.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(&p, "bad scale"))?,
            )
        } else {
            None
        }
    };

    let mut frames = Vec::with_capacity(image_files.len());
    let mut resolution: Option<(usize, usize)> = None;
    let mut descriptor_dim: Option<usize> = None;
    for (index, img_path) in image_files.iter().enumerate() {
        let image = load_image(img_path)?;
        match resolution {
            None => resolution = Some((image.width, image.height)),
            Some((w, h)) if (image.width, image.height) != (w, h) => {
                return Err(bad(
                    img_path,
                    format!(
                        "resolution {}x{} differs from {}x{}",
                        image.width, image.height, w, h
                    ),
                ));
            }
            _ => {}
        }
        let stem = img_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();

        let pseudo_depth = {
            let pfm_path = depth_dir.join(format!("{stem}.pfm"));
            let png_path = depth_dir.join(format!("{stem}.png"));
            let use_pfm = match format {
                SequenceFormat::PfmDepth => true,
                SequenceFormat::PngDepth => false,
                SequenceFormat::Auto => pfm_path.is_file(),
            };
            if use_pfm && pfm_path.is_file() {
                let grid = read_pfm(&pfm_path)?;
                if Some((grid.width, grid.height)) != resolution {
                    return Err(bad(&pfm_path, "depth resolution differs from images"));
                }
                Some(depth_from_grid(grid))
            } else if !use_pfm && png_path.is_file() {
                let scale = png_depth_scale
                    .ok_or_else(|| bad(&png_path, "missing depth/scale.txt sidecar"))?;
                let grid = load_depth_png(&png_path, scale)?;
                if Some((grid.width, grid.height)) != resolution {
                    return Err(bad(&png_path, "depth resolution differs from images"));
                }
                Some(depth_from_grid(grid))
            } else {
                None
            }
        };

        let features = {
            let fpath = dir.join("features").join(format!("{stem}.txt"));
            if fpath.is_file() {
                let feats = parse_features_file(&fpath)?;
                if let Some(f) = feats.first() {
                    match descriptor_dim {
                        None => descriptor_dim = Some(f.descriptor.len()),
                        Some(d) if d != f.descriptor.len() => {
                            return Err(bad(&fpath, "descriptor dimension differs across frames"));
                        }
                        _ => {}
                    }
                }
                let (w, h) = resolution.unwrap();
                for f in &feats {
                    if f.position[0] < 0.0
                        || f.position[1] < 0.0
                        || f.position[0] > (w - 1) as f64
                        || f.position[1] > (h - 1) as f64
                    {
                        return Err(bad(&fpath, "feature position outside image bounds"));
                    }
                }
                feats
            } else {
                Vec::new()
            }
        };

        frames.push(FrameRecord {
            index,
            timestamp: timestamps[index],
            image,
            pseudo_depth,
            features,
        });
    }

    let intrinsics = match (intrinsics, resolution) {
        (Some((fx, fy, cx, cy)), Some((w, h))) => Some(CameraIntrinsics::new(fx, fy, cx, cy, w, h)?),
        _ => None,
    };
    Ok(LoadedSequence { frames, intrinsics })
}

/// Write a sequence in the documented directory layout (PFM depth).
pub fn save_sequence(dir: &Path, frames: &[FrameRecord], k: &CameraIntrinsics) -> Result<()> {
    if frames.is_empty() {
        return Err(Error::EmptySequence);
    }
    let images_dir = dir.join("images");
    let depth_dir = dir.join("depth");
    let features_dir = dir.join("features");
    fs::create_dir_all(&images_dir).map_err(|e| io_err(&images_dir, e))?;
    fs::create_dir_all(&depth_dir).map_err(|e| io_err(&depth_dir, e))?;
    fs::create_dir_all(&features_dir).map_err(|e| io_err(&features_dir, e))?;

    let calib_path = dir.join("calib.txt");
    fs::write(&calib_path, format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy))
        .map_err(|e| io_err(&calib_path, e))?;
    let times_path = dir.join("times.txt");
    let times: String = frames
        .iter()
        .map(|f| format!("{:.9}\n", f.timestamp))
        .collect();
    fs::write(&times_path, times).map_err(|e| io_err(&times_path, e))?;

    for frame in frames {
        let stem = format!("{:06}", frame.index);
        save_image(&images_dir.join(format!("{stem}.png")), &frame.image)?;
        if let Some(depth) = &frame.pseudo_depth {
            // Invalid pixels are written as 0, the loader's invalid sentinel.
            let mut grid = depth.values.clone();
            for (i, v) in grid.data.iter_mut().enumerate() {
                if !depth.valid[i] {
                    *v = 0.0;
                }
            }
            write_pfm(&depth_dir.join(format!("{stem}.pfm")), &grid)?;
        }
        if !frame.features.is_empty() {
            write_features_file(&features_dir.join(format!("{stem}.txt")), &frame.features)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_directory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_sequence(dir.path(), SequenceFormat::Auto).unwrap_err();
        assert!(matches!(err, Error::NoFrames(_)));
    }

    // Oracle: a save/load round trip reaches a fixed point — loading gives
    // file-precision values, and saving those again is bit-exact.
    #[test]
    fn round_trip_fixed_point() {
        let spec = SyntheticSceneSpec::new(Regime::Driving, 3, 9);
        let (frames, _, k) = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &frames, &k).unwrap();
        let first = load_sequence(dir.path(), SequenceFormat::Auto).unwrap();
        assert_eq!(first.frames.len(), 3);
        assert!(first.intrinsics.is_some());

        let dir2 = tempfile::tempdir().unwrap();
        save_sequence(dir2.path(), &first.frames, &k).unwrap();
        let second = load_sequence(dir2.path(), SequenceFormat::Auto).unwrap();
        for (a, b) in first.frames.iter().zip(&second.frames) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.image.data, b.image.data);
            let (da, db) = (
                a.pseudo_depth.as_ref().unwrap(),
                b.pseudo_depth.as_ref().unwrap(),
            );
            assert_eq!(da.values.data, db.values.data);
            assert_eq!(da.valid, db.valid);
            assert_eq!(a.features.len(), b.features.len());
            for (fa, fb) in a.features.iter().zip(&b.features) {
                assert_eq!(fa.position, fb.position);
                assert_eq!(fa.descriptor, fb.descriptor);
            }
        }
    }

    #[test]
    fn known_pixel_values_survive_save_load() {
        // 16-bit quantized values round-trip bit-exactly.
        let mut img = Grid::new(20, 16, 0.0);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i % 997) as f64 / 996.0 * 65535.0).round() / 65535.0;
        }
        let frames = vec![FrameRecord {
            index: 0,
            timestamp: 0.0,
            image: img.clone(),
            pseudo_depth: None,
            features: Vec::new(),
        }];
        let k = CameraIntrinsics::new(10.0, 10.0, 10.0, 8.0, 20, 16).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &frames, &k).unwrap();
        let loaded = load_sequence(dir.path(), SequenceFormat::Auto).unwrap();
        assert_eq!(loaded.frames[0].image.data, img.data);
    }

    #[test]
    fn corrupt_depth_file_is_named() {
        let spec = SyntheticSceneSpec::new(Regime::Driving, 3, 9);
        let (frames, _, k) = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &frames, &k).unwrap();
        std::fs::write(dir.path().join("depth/000001.pfm"), b"Pf\n64 48\n-1.0\nshort").unwrap();
        let err = load_sequence(dir.path(), SequenceFormat::Auto).unwrap_err();
        assert!(err.to_string().contains("000001.pfm"), "{err}");
    }

    #[test]
    fn non_monotone_timestamps_error() {
        let spec = SyntheticSceneSpec::new(Regime::Driving, 3, 9);
        let (frames, _, k) = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(dir.path(), &frames, &k).unwrap();
        std::fs::write(dir.path().join("times.txt"), "0.0\n0.2\n0.1\n").unwrap();
        let err = load_sequence(dir.path(), SequenceFormat::Auto).unwrap_err();
        assert!(matches!(err, Error::NonMonotoneTimestamps(_)));
    }

    #[test]
    fn png16_depth_with_sidecar_scale() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        let depth = dir.path().join("depth");
        std::fs::create_dir_all(&images).unwrap();
        std::fs::create_dir_all(&depth).unwrap();
        save_image(&images.join("000000.png"), &Grid::new(8, 8, 0.5)).unwrap();
        // depth 16-bit png: value 1000 with scale 0.005 -> 5.0 m
        let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(8, 8);
        for p in img.pixels_mut() {
            p.0[0] = 1000;
        }
        img.save(depth.join("000000.png")).unwrap();
        std::fs::write(depth.join("scale.txt"), "0.005").unwrap();
        let seq = load_sequence(dir.path(), SequenceFormat::PngDepth).unwrap();
        let d = seq.frames[0].pseudo_depth.as_ref().unwrap();
        assert!((d.depth(3, 3) - 5.0).abs() < 1e-12);
    }
}
