//! On-disk formats and the train/validation/test split.
//!
//! PMAP v1 layout, all integers and floats little-endian:
//!
//! | offset | size | field                              |
//! |--------|------|------------------------------------|
//! | 0      | 4    | magic `PMAP`                       |
//! | 4      | 1    | version, `0x01`                    |
//! | 5      | 4    | width (u32)                        |
//! | 9      | 4    | height (u32)                       |
//! | 13     | 4·wh | probabilities (f32), row-major     |

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, PmapFault, Result};
use crate::types::{BinaryMask, EvaluationTag, ProbabilityMap, Split};

pub const PMAP_MAGIC: &[u8; 4] = b"PMAP";
pub const PMAP_VERSION: u8 = 1;
pub const PMAP_HEADER_LEN: usize = 13;

fn fault(offset: usize, fault: PmapFault) -> Error {
    Error::Pmap {
        offset: offset as u64,
        fault,
    }
}

pub fn encode_pmap(map: &ProbabilityMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(PMAP_HEADER_LEN + 4 * map.len());
    out.extend_from_slice(PMAP_MAGIC);
    out.push(PMAP_VERSION);
    out.extend_from_slice(&(map.width() as u32).to_le_bytes());
    out.extend_from_slice(&(map.height() as u32).to_le_bytes());
    for v in map.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_pmap(bytes: &[u8]) -> Result<ProbabilityMap> {
    if bytes.len() < 4 {
        return Err(fault(bytes.len(), PmapFault::TruncatedHeader));
    }
    if &bytes[..4] != PMAP_MAGIC {
        return Err(fault(0, PmapFault::BadMagic));
    }
    if bytes.len() < PMAP_HEADER_LEN {
        return Err(fault(bytes.len(), PmapFault::TruncatedHeader));
    }
    if bytes[4] != PMAP_VERSION {
        return Err(fault(4, PmapFault::UnsupportedVersion(bytes[4])));
    }
    let width = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let height = u32::from_le_bytes(bytes[9..13].try_into().expect("4 bytes")) as usize;
    if width == 0 || height == 0 {
        return Err(fault(if width == 0 { 5 } else { 9 }, PmapFault::ZeroDimension));
    }
    let payload = &bytes[PMAP_HEADER_LEN..];
    let expected = 4 * width as u64 * height as u64;
    if payload.len() as u64 != expected {
        return Err(fault(
            PMAP_HEADER_LEN,
            PmapFault::PayloadLength {
                expected,
                actual: payload.len() as u64,
            },
        ));
    }
    let mut values = Vec::with_capacity(width * height);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        let offset = PMAP_HEADER_LEN + 4 * i;
        if v.is_nan() {
            return Err(fault(offset, PmapFault::NotANumber));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(fault(offset, PmapFault::OutOfRange));
        }
        values.push(v);
    }
    ProbabilityMap::new(width, height, values)
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn write_pmap(map: &ProbabilityMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pmap(map))
}

pub fn read_pmap(path: &Path) -> Result<ProbabilityMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pmap(&bytes)
}

/// Reads an 8-bit single-channel image; any nonzero pixel is foreground.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let img = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            BinaryMask::new(
                w as usize,
                h as usize,
                buf.into_raw().into_iter().map(|v| v != 0).collect(),
            )
        }
        other => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!(
                "masks must be 8-bit single-channel, found {:?}",
                other.color()
            ),
        }),
    }
}

/// Encodes a mask as 0/255 in the format implied by the extension.
pub fn encode_mask(mask: &BinaryMask, format: image::ImageFormat) -> Result<Vec<u8>> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        mask.width() as u32,
        mask.height() as u32,
        mask.values().iter().map(|&v| if v { 255 } else { 0 }).collect(),
    )
    .expect("buffer matches dimensions");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, format).map_err(|source| Error::Image {
        path: PathBuf::from("<memory>"),
        source,
    })?;
    Ok(out.into_inner())
}

pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let format = image::ImageFormat::from_path(path).unwrap_or(image::ImageFormat::Png);
    write_atomic(path, &encode_mask(mask, format)?)
}

/// One row of a dataset manifest. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub id: String,
    pub pmap: PathBuf,
    pub mask: PathBuf,
    pub split: Split,
    pub tag: Option<EvaluationTag>,
}

/// Tab-separated table: `id  pmap  mask  split  [epoch]`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

impl DatasetManifest {
    pub fn parse(text: &str, source: &Path) -> Result<Self> {
        let err = |line: usize, reason: String| Error::Manifest {
            path: source.to_path_buf(),
            line,
            reason,
        };
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(4..=5).contains(&cols.len()) {
                return Err(err(line_no, format!("expected 4 or 5 columns, found {}", cols.len())));
            }
            let split: Split = cols[3].parse().map_err(|e: Error| err(line_no, e.to_string()))?;
            let tag = match cols.get(4).map(|s| s.trim()) {
                None | Some("") => None,
                Some(epoch) => Some(EvaluationTag {
                    epoch: Some(epoch.parse().map_err(|_| err(line_no, format!("bad epoch {epoch:?}")))?),
                    split,
                }),
            };
            let id = cols[0].to_string();
            if id.is_empty() {
                return Err(err(line_no, "empty image id".into()));
            }
            if !ids.insert(id.clone()) {
                return Err(err(line_no, format!("duplicate image id {id}")));
            }
            records.push(ManifestRecord {
                id,
                pmap: PathBuf::from(cols[1]),
                mask: PathBuf::from(cols[2]),
                split,
                tag,
            });
        }
        Ok(DatasetManifest { records })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# id\tpmap\tmask\tsplit\tepoch\n");
        for r in &self.records {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}",
                r.id,
                r.pmap.display(),
                r.mask.display(),
                r.split
            ));
            if let Some(epoch) = r.tag.and_then(|t| t.epoch) {
                out.push_str(&format!("\t{epoch}"));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the manifest and checks every referenced file exists under `root`.
    pub fn load(path: &Path, root: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest = Self::parse(&text, path)?;
        for r in &manifest.records {
            for rel in [&r.pmap, &r.mask] {
                let full = root.join(rel);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                    ));
                }
            }
        }
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == split).count()
    }

    /// Reassigns every record's split from [`split_dataset`].
    pub fn resplit(&mut self, seed: u64) -> Result<()> {
        let assignment = split_dataset(&self.ids(), seed)?;
        let lookup: std::collections::HashMap<_, _> = assignment.into_iter().collect();
        for r in &mut self.records {
            r.split = lookup[&r.id];
            if let Some(tag) = r.tag.as_mut() {
                tag.split = r.split;
            }
        }
        Ok(())
    }
}

/// Train/validation/test sizes for `n` items: 10% each (floored) to
/// validation and test, the rest to train, and at least one item in each
/// split once `n >= 3`.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let mut val = n / 10;
    let mut test = n / 10;
    if n >= 3 {
        val = val.max(1);
        test = test.max(1);
    }
    (n - val - test, val, test)
}

/// Deterministic 80:10:10 assignment. Ids are sorted first, so the result
/// depends only on the set of ids and the seed. Returned in sorted id order.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<Vec<(String, Split)>> {
    if ids.is_empty() {
        return Err(Error::EmptyDataset("no ids to split".into()));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument(format!("duplicate id {}", w[0])));
    }
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (train, val, _) = split_sizes(sorted.len());
    let mut splits = vec![Split::Test; sorted.len()];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(sorted.into_iter().zip(splits).collect())
}
