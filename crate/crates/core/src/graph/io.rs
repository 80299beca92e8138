//! `GPFM` feature-map files and the manifest that lists them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{GpnetError, Result};

use super::FeatureMapSequence;

const MAGIC: &[u8; 4] = b"GPFM";

pub fn write_feature_maps<W: Write>(w: &mut W, seq: &FeatureMapSequence) -> Result<()> {
    w.write_all(MAGIC)?;
    for v in [seq.frames(), seq.width(), seq.height(), seq.channels()] {
        w.write_u64::<LittleEndian>(v as u64)?;
    }
    w.write_u64::<LittleEndian>(seq.identity)?;
    for v in seq.data() {
        w.write_f32::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn read_feature_maps<R: Read>(r: &mut R) -> Result<FeatureMapSequence> {
    let bad = |detail: String| GpnetError::Format {
        path: "<stream>".into(),
        detail,
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut header = [0u64; 5];
    r.read_u64_into::<LittleEndian>(&mut header)?;
    let [t, w, h, c, label] = header;
    let len = (t as usize)
        .checked_mul(w as usize)
        .and_then(|v| v.checked_mul(h as usize))
        .and_then(|v| v.checked_mul(c as usize))
        .ok_or_else(|| bad("header dimensions overflow".into()))?;
    let mut data = vec![0f32; len];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after feature data".into()));
    }
    FeatureMapSequence::new(t as usize, w as usize, h as usize, c as usize, data, label)
}

pub fn save_feature_maps(path: &Path, seq: &FeatureMapSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_feature_maps(&mut w, seq)?;
    w.flush()?;
    Ok(())
}

pub fn load_feature_maps(path: &Path) -> Result<FeatureMapSequence> {
    if !path.exists() {
        return Err(GpnetError::MissingFile(path.to_path_buf()));
    }
    let mut r = BufReader::new(File::open(path)?);
    read_feature_maps(&mut r).map_err(|e| match e {
        GpnetError::Format { detail, .. } => GpnetError::Format {
            path: path.to_path_buf(),
            detail,
        },
        GpnetError::Io(io) if io.kind() == std::io::ErrorKind::UnexpectedEof => {
            GpnetError::Format {
                path: path.to_path_buf(),
                detail: "truncated file".into(),
            }
        }
        other => other,
    })
}

/// One manifest line: `<path> <identity> [camera]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub identity: u64,
    pub camera: Option<u64>,
}

/// Parses a manifest; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(GpnetError::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |detail: &str| GpnetError::Format {
            path: path.to_path_buf(),
            detail: format!("line {}: {detail}", lineno + 1),
        };
        let mut fields = line.split_whitespace();
        let file = fields.next().ok_or_else(|| bad("missing path"))?;
        let identity = fields
            .next()
            .ok_or_else(|| bad("missing identity"))?
            .parse()
            .map_err(|_| bad("identity is not an integer"))?;
        let camera = fields
            .next()
            .map(|c| c.parse().map_err(|_| bad("camera is not an integer")))
            .transpose()?;
        let file = PathBuf::from(file);
        out.push(ManifestEntry {
            path: if file.is_absolute() {
                file
            } else {
                base.join(file)
            },
            identity,
            camera,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        let shown = e.path.strip_prefix(base).unwrap_or(&e.path);
        write!(w, "{} {}", shown.display(), e.identity)?;
        if let Some(c) = e.camera {
            write!(w, " {c}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Loads every sequence listed in a manifest, applying the manifest's labels.
pub fn load_manifest(path: &Path) -> Result<Vec<FeatureMapSequence>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let mut seq = load_feature_maps(&e.path)?;
            seq.identity = e.identity;
            Ok(seq.with_camera(e.camera))
        })
        .collect()
}
