//! On-disk scene and label-map format.
//!
//! Each raster is a UTF-8 header of `key=value` lines plus a raw payload
//! next to it (same path, extension `raw`). Scenes are little-endian
//! `float32`, band-sequential; label maps are little-endian `uint16`,
//! row-major, with `0` meaning unlabeled.
//!
//! ```text
//! height=610
//! width=340
//! bands=103
//! dtype=float32
//! interleave=bsq
//! wavelengths=0.430,0.434,...
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{LabelMap, Scene};
use crate::error::{Error, Result};

/// Payload file belonging to a header file.
pub fn payload_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

struct Header {
    path: PathBuf,
    entries: BTreeMap<String, String>,
}

impl Header {
    fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(path, format!("line {}: expected key=value", lineno + 1))
            })?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Header {
            path: path.to_path_buf(),
            entries,
        })
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::format(&self.path, format!("missing `{key}`")))
    }

    fn extent(&self, key: &str) -> Result<usize> {
        let raw = self.require(key)?;
        match raw.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(Error::format(
                &self.path,
                format!("`{key}` must be a positive integer, got `{raw}`"),
            )),
        }
    }

    fn expect(&self, key: &str, value: &str) -> Result<()> {
        let got = self.require(key)?;
        if !got.eq_ignore_ascii_case(value) {
            return Err(Error::format(
                &self.path,
                format!("unsupported {key} `{got}`, expected `{value}`"),
            ));
        }
        Ok(())
    }

    fn payload(&self, expected_bytes: usize) -> Result<Vec<u8>> {
        let path = payload_path(&self.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != expected_bytes {
            return Err(Error::format(
                &path,
                format!(
                    "payload holds {} bytes, header implies {expected_bytes}",
                    bytes.len()
                ),
            ));
        }
        Ok(bytes)
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Reads a scene header and its band-sequential `float32` payload.
pub fn load_scene(path: &Path) -> Result<Scene> {
    let header = Header::read(path)?;
    let height = header.extent("height")?;
    let width = header.extent("width")?;
    let bands = header.extent("bands")?;
    header.expect("dtype", "float32")?;
    header.expect("interleave", "bsq")?;
    let wavelengths = header
        .get("wavelengths")
        .map(|w| {
            w.split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, format!("bad wavelength list: {e}")))
        })
        .transpose()?;

    let plane = height * width;
    let bytes = header.payload(plane * bands * 4)?;
    let mut values = vec![0.0f32; plane * bands];
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let (band, px) = (i / plane, i % plane);
        values[px * bands + band] = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
    }
    Scene::new(height, width, bands, values, wavelengths).map_err(|e| match e {
        Error::Consistency(msg) => Error::format(path, msg),
        other => other,
    })
}

pub fn write_scene(scene: &Scene, path: &Path) -> Result<()> {
    let mut header = String::new();
    let _ = writeln!(header, "height={}", scene.height());
    let _ = writeln!(header, "width={}", scene.width());
    let _ = writeln!(header, "bands={}", scene.bands());
    header.push_str("dtype=float32\ninterleave=bsq\n");
    if let Some(w) = scene.wavelengths() {
        let list: Vec<String> = w.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(header, "wavelengths={}", list.join(","));
    }
    let (plane, bands) = (scene.height() * scene.width(), scene.bands());
    let mut payload = Vec::with_capacity(plane * bands * 4);
    for band in 0..bands {
        for px in 0..plane {
            payload.extend_from_slice(&scene.values()[px * bands + band].to_le_bytes());
        }
    }
    write_file(path, header.as_bytes())?;
    write_file(&payload_path(path), &payload)
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    let header = Header::read(path)?;
    let height = header.extent("height")?;
    let width = header.extent("width")?;
    if let Some(b) = header.get("bands") {
        if b != "1" {
            return Err(Error::format(path, "label maps have exactly one band"));
        }
    }
    header.expect("dtype", "uint16")?;
    let bytes = header.payload(height * width * 2)?;
    let labels = bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelMap::new(height, width, labels)
}

pub fn write_label_map(labels: &LabelMap, path: &Path) -> Result<()> {
    let header = format!(
        "height={}\nwidth={}\nbands=1\ndtype=uint16\ninterleave=bsq\n",
        labels.height(),
        labels.width()
    );
    let payload: Vec<u8> = labels.labels().iter().flat_map(|l| l.to_le_bytes()).collect();
    write_file(path, header.as_bytes())?;
    write_file(&payload_path(path), &payload)
}

/// Loads a scene plus an optional label map and cross-checks their extents.
pub fn load_scene_with_labels(
    scene_path: &Path,
    labels_path: Option<&Path>,
) -> Result<(Scene, Option<LabelMap>)> {
    let scene = load_scene(scene_path)?;
    let labels = labels_path.map(load_label_map).transpose()?;
    if let Some(l) = &labels {
        l.matches(&scene)?;
    }
    Ok((scene, labels))
}
