use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DatasetError, DepthMap, Frame, RgbImage, Session, DEFAULT_FPS};
use crate::geometry::{Intrinsics, PoseSE3};

/// Largest depth representable in a 16-bit millimeter PNG.
pub const MAX_ENCODABLE_DEPTH_M: f64 = 65.535;

const MANIFEST: &str = "manifest.json";

/// `manifest.json` as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default = "default_fps")]
    pub nominal_fps: f64,
    pub intrinsics: Intrinsics,
    pub frames: Vec<ManifestFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFrame {
    pub index: u64,
    pub timestamp_us: i64,
    pub rgb: String,
    /// Camera-to-world, row-major 4x4.
    pub pose_c2w: Vec<f64>,
    #[serde(default)]
    pub depth: BTreeMap<String, String>,
}

fn default_fps() -> f64 {
    DEFAULT_FPS
}

/// Outcome of [`save_session`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SaveReport {
    pub frames: usize,
    pub depth_images: usize,
    /// Depth values above [`MAX_ENCODABLE_DEPTH_M`] that were clamped on encode.
    pub clamped_depth_values: usize,
}

/// Meters to millimeters, rounding half to even. Returns the code and whether it was clamped.
pub fn encode_depth_mm(depth_m: f64) -> (u16, bool) {
    let mm = (depth_m * 1000.0).round_ties_even();
    if mm > f64::from(u16::MAX) {
        (u16::MAX, true)
    } else if mm > 0.0 {
        (mm as u16, false)
    } else {
        (0, false)
    }
}

pub fn decode_depth_mm(mm: u16) -> f64 {
    f64::from(mm) / 1000.0
}

fn valid_source_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes).map_err(|e| DatasetError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| DatasetError::io(path, e))
}

/// Writes `session` under `dir` (created if needed). The manifest is written last, atomically.
pub fn save_session(session: &Session, dir: &Path) -> Result<SaveReport, DatasetError> {
    for frame in session.frames() {
        if let Some(bad) = frame.depth_sources.keys().find(|n| !valid_source_name(n)) {
            return Err(DatasetError::InvalidData(format!(
                "depth source name '{bad}' must be non-empty ASCII alphanumerics, '-' or '_'"
            )));
        }
    }
    fs::create_dir_all(dir.join("rgb")).map_err(|e| DatasetError::io(dir, e))?;
    let mut sources: Vec<&String> = session.frames().iter().flat_map(|f| f.depth_sources.keys()).collect();
    sources.sort();
    sources.dedup();
    for name in &sources {
        let d = dir.join("depth").join(name);
        fs::create_dir_all(&d).map_err(|e| DatasetError::io(&d, e))?;
    }

    let results: Vec<Result<(ManifestFrame, usize, usize), DatasetError>> =
        session.frames().par_iter().map(|frame| save_frame(frame, dir)).collect();

    let mut report = SaveReport::default();
    let mut frames = Vec::with_capacity(session.len());
    for r in results {
        let (entry, depth_images, clamped) = r?;
        report.frames += 1;
        report.depth_images += depth_images;
        report.clamped_depth_values += clamped;
        frames.push(entry);
    }
    if report.clamped_depth_values > 0 {
        log::warn!(
            "{} depth values exceeded {MAX_ENCODABLE_DEPTH_M} m and were clamped",
            report.clamped_depth_values
        );
    }

    let manifest = Manifest { nominal_fps: session.nominal_fps(), intrinsics: *session.intrinsics(), frames };
    let mut json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| DatasetError::InvalidData(format!("manifest serialization failed: {e}")))?;
    json.push(b'\n');
    write_atomic(&dir.join(MANIFEST), &json)?;
    Ok(report)
}

fn save_frame(frame: &Frame, dir: &Path) -> Result<(ManifestFrame, usize, usize), DatasetError> {
    let stem = format!("{:06}", frame.index);
    let rgb_rel = format!("rgb/{stem}.png");
    let rgb_path = dir.join(&rgb_rel);
    let rgb: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(frame.rgb.width(), frame.rgb.height(), frame.rgb.data().to_vec())
            .ok_or_else(|| DatasetError::InvalidData("rgb buffer size".into()))?;
    rgb.save_with_format(&rgb_path, ImageFormat::Png)
        .map_err(|e| DatasetError::Image { path: rgb_path.clone(), source: e })?;

    let mut depth = BTreeMap::new();
    let mut clamped = 0;
    for (name, map) in &frame.depth_sources {
        let rel = format!("depth/{name}/{stem}.png");
        let path = dir.join(&rel);
        let codes: Vec<u16> = map
            .values()
            .iter()
            .map(|&d| {
                let (code, c) = encode_depth_mm(d);
                clamped += usize::from(c);
                code
            })
            .collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(map.width(), map.height(), codes)
            .ok_or_else(|| DatasetError::InvalidData("depth buffer size".into()))?;
        img.save_with_format(&path, ImageFormat::Png)
            .map_err(|e| DatasetError::Image { path: path.clone(), source: e })?;
        depth.insert(name.clone(), rel);
    }
    let n_depth = depth.len();
    let entry = ManifestFrame {
        index: frame.index,
        timestamp_us: frame.timestamp_us,
        rgb: rgb_rel,
        pose_c2w: frame.pose.to_row_major().to_vec(),
        depth,
    };
    Ok((entry, n_depth, clamped))
}

/// Loads and validates a session directory.
pub fn load_session(dir: &Path) -> Result<Session, DatasetError> {
    let manifest_path = dir.join(MANIFEST);
    if !manifest_path.is_file() {
        return Err(DatasetError::MissingFile { path: manifest_path });
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| DatasetError::io(&manifest_path, e))?;
    let malformed = |reason: String| DatasetError::MalformedManifest { path: manifest_path.clone(), reason };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    manifest.intrinsics.validate().map_err(|e| malformed(e.to_string()))?;
    if manifest.frames.is_empty() {
        return Err(DatasetError::EmptySession);
    }
    for f in &manifest.frames {
        if f.pose_c2w.len() != 16 {
            return Err(malformed(format!("frame {}: pose_c2w needs 16 numbers, got {}", f.index, f.pose_c2w.len())));
        }
    }
    let k = manifest.intrinsics;
    let frames: Vec<Result<Frame, DatasetError>> =
        manifest.frames.par_iter().map(|entry| load_frame(entry, dir, &k)).collect();
    let frames = frames.into_iter().collect::<Result<Vec<_>, _>>()?;
    Session::new(frames, k, manifest.nominal_fps)
}

fn resolve(dir: &Path, rel: &str) -> Result<PathBuf, DatasetError> {
    let path = dir.join(rel);
    if path.is_file() {
        Ok(path)
    } else {
        Err(DatasetError::MissingFile { path })
    }
}

fn decode(path: &Path) -> Result<DynamicImage, DatasetError> {
    image::ImageReader::open(path)
        .map_err(|e| DatasetError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| DatasetError::io(path, e))?
        .decode()
        .map_err(|e| DatasetError::Image { path: path.to_path_buf(), source: e })
}

fn load_frame(entry: &ManifestFrame, dir: &Path, k: &Intrinsics) -> Result<Frame, DatasetError> {
    let mut m = [0.0; 16];
    m.copy_from_slice(&entry.pose_c2w);
    let pose = PoseSE3::from_row_major(&m)?;
    let expected = (k.width, k.height);

    let rgb_path = resolve(dir, &entry.rgb)?;
    let rgb = decode(&rgb_path)?.into_rgb8();
    if rgb.dimensions() != expected {
        return Err(DatasetError::DimensionMismatch {
            frame: entry.index,
            what: format!("rgb image {}", rgb_path.display()),
            expected,
            actual: rgb.dimensions(),
        });
    }
    let rgb = RgbImage::new(k.width, k.height, rgb.into_raw())?;

    let mut depth_sources = BTreeMap::new();
    for (name, rel) in &entry.depth {
        let path = resolve(dir, rel)?;
        let img = match decode(&path)? {
            DynamicImage::ImageLuma16(img) => img,
            _ => return Err(DatasetError::DepthFormat { path }),
        };
        if img.dimensions() != expected {
            return Err(DatasetError::DimensionMismatch {
                frame: entry.index,
                what: format!("depth source '{name}' ({})", path.display()),
                expected,
                actual: img.dimensions(),
            });
        }
        let values = img.into_raw().into_iter().map(decode_depth_mm).collect();
        depth_sources.insert(name.clone(), DepthMap::new(k.width, k.height, values)?);
    }
    Ok(Frame { index: entry.index, timestamp_us: entry.timestamp_us, rgb, depth_sources, pose })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn tiny_session(frames: usize) -> Session {
        let k = Intrinsics::centered(8.0, 6, 4).unwrap();
        let frames = (0..frames)
            .map(|i| {
                let mut depth_sources = BTreeMap::new();
                let gt = DepthMap::from_fn(6, 4, |x, y| 0.5 + 0.001 * f64::from(x + 6 * y) + i as f64 * 0.01).unwrap();
                depth_sources.insert("gt".into(), gt);
                depth_sources.insert("noisy".into(), DepthMap::from_fn(6, 4, |x, _| f64::from(x % 2)).unwrap());
                let data = (0..72).map(|j| (j * 3 + i) as u8).collect();
                Frame {
                    index: i as u64,
                    timestamp_us: (i as i64) * 16_667,
                    rgb: RgbImage::new(6, 4, data).unwrap(),
                    depth_sources,
                    pose: PoseSE3::from_axis_angle(
                        Vector3::new(0.1, 1.0, 0.3),
                        0.1 * i as f64 + 1.0 / 3.0,
                        Vector3::new(0.1 * i as f64, 1.0 / 7.0, -2.0),
                    ),
                }
            })
            .collect();
        Session::new(frames, k, 60.0).unwrap()
    }

    #[test]
    fn depth_quantization() {
        assert_eq!(encode_depth_mm(0.0), (0, false));
        let (code, _) = encode_depth_mm(1.2345);
        assert!(code == 1234 || code == 1235);
        assert!((decode_depth_mm(code) - 1.2345).abs() <= 0.0005 + 1e-12);
        assert_eq!(encode_depth_mm(0.0025), (2, false));
        assert_eq!(encode_depth_mm(0.0035), (4, false));
        assert_eq!(encode_depth_mm(70.0), (u16::MAX, true));
        assert_eq!(encode_depth_mm(3.7), (3700, false));
    }

    #[test]
    fn round_trip_and_canonical_resave() {
        let tmp = tempfile::tempdir().unwrap();
        let s = tiny_session(3);
        let report = save_session(&s, tmp.path()).unwrap();
        assert_eq!(report, SaveReport { frames: 3, depth_images: 6, clamped_depth_values: 0 });
        let loaded = load_session(tmp.path()).unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in s.frames().iter().zip(loaded.frames()) {
            assert_eq!(a.pose, b.pose);
            assert_eq!(a.rgb, b.rgb);
            for (x, y) in a.depth("gt").unwrap().values().iter().zip(b.depth("gt").unwrap().values()) {
                assert!((x - y).abs() <= 0.0005 + 1e-12);
            }
        }
        let second = tempfile::tempdir().unwrap();
        save_session(&loaded, second.path()).unwrap();
        let third = tempfile::tempdir().unwrap();
        save_session(&load_session(second.path()).unwrap(), third.path()).unwrap();
        for rel in ["manifest.json", "rgb/000001.png", "depth/gt/000002.png", "depth/noisy/000000.png"] {
            let a = fs::read(second.path().join(rel)).unwrap();
            let b = fs::read(third.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between saves");
        }
        let reloaded = load_session(third.path()).unwrap();
        assert_eq!(loaded, reloaded);
    }

    #[test]
    fn missing_file_names_path() {
        let tmp = tempfile::tempdir().unwrap();
        save_session(&tiny_session(2), tmp.path()).unwrap();
        fs::remove_file(tmp.path().join("depth/gt/000001.png")).unwrap();
        match load_session(tmp.path()) {
            Err(DatasetError::MissingFile { path }) => assert!(path.ends_with("depth/gt/000001.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_depth_dimensions_names_frame() {
        let tmp = tempfile::tempdir().unwrap();
        save_session(&tiny_session(3), tmp.path()).unwrap();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(5, 4, vec![1000; 20]).unwrap();
        img.save(tmp.path().join("depth/gt/000002.png")).unwrap();
        match load_session(tmp.path()) {
            Err(DatasetError::DimensionMismatch { frame, actual, .. }) => {
                assert_eq!(frame, 2);
                assert_eq!(actual, (5, 4));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eight_bit_depth_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        save_session(&tiny_session(1), tmp.path()).unwrap();
        let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(6, 4, vec![10; 24]).unwrap();
        img.save(tmp.path().join("depth/gt/000000.png")).unwrap();
        assert!(matches!(load_session(tmp.path()), Err(DatasetError::DepthFormat { .. })));
    }

    #[test]
    fn malformed_and_non_monotonic_manifests() {
        let tmp = tempfile::tempdir().unwrap();
        save_session(&tiny_session(2), tmp.path()).unwrap();
        let path = tmp.path().join(MANIFEST);
        let text = fs::read_to_string(&path).unwrap();

        fs::write(&path, "{ \"frames\": 3 }").unwrap();
        assert!(matches!(load_session(tmp.path()), Err(DatasetError::MalformedManifest { .. })));

        let mut m: Manifest = serde_json::from_str(&text).unwrap();
        m.frames[1].timestamp_us = m.frames[0].timestamp_us;
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_session(tmp.path()), Err(DatasetError::NonMonotonicTimestamps { frame: 1 })));

        let mut m: Manifest = serde_json::from_str(&text).unwrap();
        m.frames[0].pose_c2w.pop();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(load_session(tmp.path()), Err(DatasetError::MalformedManifest { .. })));
    }

    #[test]
    fn missing_optional_sources_and_default_fps() {
        let tmp = tempfile::tempdir().unwrap();
        save_session(&tiny_session(2), tmp.path()).unwrap();
        let path = tmp.path().join(MANIFEST);
        let mut v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("nominal_fps");
        v["frames"][1]["depth"].as_object_mut().unwrap().remove("noisy");
        fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
        let s = load_session(tmp.path()).unwrap();
        assert_eq!(s.nominal_fps(), DEFAULT_FPS);
        assert_eq!(s.common_depth_sources(), vec!["gt".to_string()]);
        assert!(s.frame(1).depth("noisy").is_err());
    }

    #[test]
    fn rejects_unsafe_source_names() {
        let mut s = tiny_session(1).into_frames();
        let d = s[0].depth_sources.remove("gt").unwrap();
        s[0].depth_sources.insert("../evil".into(), d);
        let k = Intrinsics::centered(8.0, 6, 4).unwrap();
        let session = Session::new(s, k, 60.0).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        assert!(save_session(&session, tmp.path()).is_err());
    }
}
