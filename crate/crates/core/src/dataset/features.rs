//! Binary feature files.
//!
//! Layout (little-endian): magic `MVNF`, `u32` version (1), `u32` record count,
//! `u32` dimension, then per record a `u16` id length, the UTF-8 id bytes and
//! `dim` `f32` values.
//!
//! Three kinds of features are used: visual action features per 16-frame
//! sub-window of a track (`"{track_id}/w{k}"`), face embeddings per frame of a
//! track (`"{track_id}/f{k}"`) and verb features keyed by lemma.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MVNF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Visual,
    Face,
    Verb,
}

impl FeatureKind {
    pub fn default_dim(self) -> usize {
        match self {
            FeatureKind::Visual => 4096,
            FeatureKind::Face => 128,
            FeatureKind::Verb => 300,
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            FeatureKind::Visual => "visual.mvnf",
            FeatureKind::Face => "face.mvnf",
            FeatureKind::Verb => "verbs.mvnf",
        }
    }
}

pub fn visual_window_id(track_id: &str, window: usize) -> String {
    format!("{track_id}/w{window}")
}

pub fn face_frame_id(track_id: &str, frame: usize) -> String {
    format!("{track_id}/f{frame}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub owner_id: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub dim: usize,
    pub records: Vec<FeatureRecord>,
}

pub fn write_feature_file(mut w: impl Write, file: &FeatureFile) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + file.records.len() * (8 + 4 * file.dim));
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(
        &u32::try_from(file.records.len())
            .map_err(|_| Error::Format("too many records".into()))?
            .to_le_bytes(),
    );
    buf.extend_from_slice(&(file.dim as u32).to_le_bytes());
    for rec in &file.records {
        if rec.values.len() != file.dim {
            return Err(Error::Dimension {
                expected: file.dim,
                actual: rec.values.len(),
            });
        }
        if rec.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant(&rec.owner_id, "values", "non-finite feature"));
        }
        let id = rec.owner_id.as_bytes();
        let len = u16::try_from(id.len()).map_err(|_| Error::Format(format!("id too long: {}", rec.owner_id)))?;
        buf.extend_from_slice(&len.to_le_bytes());
        buf.extend_from_slice(id);
        for v in &rec.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io("<feature stream>", e))
}

pub fn read_feature_file(mut r: impl Read) -> Result<FeatureFile> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io("<feature stream>", e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("bad magic, expected MVNF".into()));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported feature file version {version}")));
    }
    let count = cur.u32()? as usize;
    let dim = cur.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = cur.u16()? as usize;
        let owner_id = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Format("record id is not UTF-8".into()))?
            .to_owned();
        let raw = cur.take(4 * dim)?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invariant(owner_id, "values", "non-finite feature"));
        }
        records.push(FeatureRecord { owner_id, values });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(FeatureFile { dim, records })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// In-memory feature lookup for one kind.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    dim: usize,
    order: Vec<String>,
    values: HashMap<String, Vec<f32>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn insert(&mut self, owner_id: impl Into<String>, values: Vec<f32>) -> Result<()> {
        let owner_id = owner_id.into();
        if values.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if self.values.insert(owner_id.clone(), values).is_none() {
            self.order.push(owner_id);
        }
        Ok(())
    }

    pub fn get(&self, owner_id: &str) -> Option<&[f32]> {
        self.values.get(owner_id).map(Vec::as_slice)
    }

    pub fn require(&self, owner_id: &str) -> Result<&[f32]> {
        self.get(owner_id)
            .ok_or_else(|| Error::MissingFeature(owner_id.to_owned()))
    }

    /// Number of consecutive `{track}/w{k}` windows stored, starting at 0.
    pub fn window_count(&self, track_id: &str) -> usize {
        (0..)
            .take_while(|&k| self.values.contains_key(&visual_window_id(track_id, k)))
            .count()
    }

    pub fn to_file(&self) -> FeatureFile {
        FeatureFile {
            dim: self.dim,
            records: self
                .order
                .iter()
                .map(|id| FeatureRecord {
                    owner_id: id.clone(),
                    values: self.values[id].clone(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: FeatureFile) -> Result<Self> {
        let mut table = Self::new(file.dim);
        for rec in file.records {
            table.insert(rec.owner_id, rec.values)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_file(read_feature_file(std::io::BufReader::new(f))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        write_feature_file(&mut w, &self.to_file())?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Visual, face and verb features for a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureBank {
    pub visual: FeatureTable,
    pub face: FeatureTable,
    pub verbs: FeatureTable,
}

impl FeatureBank {
    pub fn table(&self, kind: FeatureKind) -> &FeatureTable {
        match kind {
            FeatureKind::Visual => &self.visual,
            FeatureKind::Face => &self.face,
            FeatureKind::Verb => &self.verbs,
        }
    }

    /// Loads `visual.mvnf`, `face.mvnf` and `verbs.mvnf` from `dir`.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            visual: FeatureTable::load(dir.join(FeatureKind::Visual.file_name()))?,
            face: FeatureTable::load(dir.join(FeatureKind::Face.file_name()))?,
            verbs: FeatureTable::load(dir.join(FeatureKind::Verb.file_name()))?,
        })
    }

    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.visual.save(dir.join(FeatureKind::Visual.file_name()))?;
        self.face.save(dir.join(FeatureKind::Face.file_name()))?;
        self.verbs.save(dir.join(FeatureKind::Verb.file_name()))
    }

    /// Mean per-frame face embedding of a track.
    pub fn track_face(&self, track_id: &str, len: usize) -> Result<Vec<f64>> {
        let frames: Vec<&[f32]> = (0..len)
            .map(|k| self.face.require(&face_frame_id(track_id, k)))
            .collect::<Result<_>>()?;
        Ok(mean_of(&frames, self.face.dim))
    }

    /// Visual features of every sub-window of a track.
    pub fn track_windows(&self, track_id: &str) -> Result<Vec<&[f32]>> {
        let n = self.visual.window_count(track_id);
        if n == 0 {
            return Err(Error::MissingFeature(visual_window_id(track_id, 0)));
        }
        Ok((0..n)
            .map(|k| self.visual.get(&visual_window_id(track_id, k)).expect("counted window"))
            .collect())
    }

    /// Mean visual feature over a track's sub-windows.
    pub fn track_visual_mean(&self, track_id: &str) -> Result<Vec<f64>> {
        let windows = self.track_windows(track_id)?;
        Ok(mean_of(&windows, self.visual.dim))
    }

    pub fn verb(&self, lemma: &str) -> Result<&[f32]> {
        self.verbs.require(lemma)
    }
}

fn mean_of(rows: &[&[f32]], dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; dim];
    for r in rows {
        for (a, &v) in acc.iter_mut().zip(r.iter()) {
            *a += v as f64;
        }
    }
    let n = rows.len().max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let file = FeatureFile {
            dim: 2,
            records: vec![FeatureRecord {
                owner_id: "ab".into(),
                values: vec![1.0, -2.5],
            }],
        };
        let mut bytes = Vec::new();
        write_feature_file(&mut bytes, &file).unwrap();
        assert_eq!(&bytes[..4], b"MVNF");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..18], &2u16.to_le_bytes());
        assert_eq!(&bytes[18..20], b"ab");
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_feature_file(&b"XXXX"[..]).is_err());
        let mut bytes = Vec::new();
        write_feature_file(
            &mut bytes,
            &FeatureFile {
                dim: 3,
                records: vec![FeatureRecord {
                    owner_id: "x".into(),
                    values: vec![0.0; 3],
                }],
            },
        )
        .unwrap();
        assert!(read_feature_file(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_feature_file(&extra[..]).is_err());
        let bad = FeatureFile {
            dim: 3,
            records: vec![FeatureRecord {
                owner_id: "x".into(),
                values: vec![0.0; 2],
            }],
        };
        assert!(write_feature_file(Vec::new(), &bad).is_err());
    }

    #[test]
    fn window_count_and_means() {
        let mut bank = FeatureBank {
            visual: FeatureTable::new(2),
            face: FeatureTable::new(2),
            verbs: FeatureTable::new(2),
        };
        bank.visual.insert(visual_window_id("t", 0), vec![1.0, 0.0]).unwrap();
        bank.visual.insert(visual_window_id("t", 1), vec![3.0, 2.0]).unwrap();
        bank.visual.insert(visual_window_id("t", 3), vec![9.0, 9.0]).unwrap();
        assert_eq!(bank.visual.window_count("t"), 2);
        assert_eq!(bank.track_visual_mean("t").unwrap(), vec![2.0, 1.0]);
        assert!(bank.track_visual_mean("u").is_err());
        bank.face.insert(face_frame_id("t", 0), vec![0.0, 2.0]).unwrap();
        bank.face.insert(face_frame_id("t", 1), vec![2.0, 2.0]).unwrap();
        assert_eq!(bank.track_face("t", 2).unwrap(), vec![1.0, 2.0]);
        assert!(matches!(bank.track_face("t", 3), Err(Error::MissingFeature(_))));
    }

    proptest! {
        #[test]
        fn feature_file_round_trip(
            dim in 0usize..6,
            ids in proptest::collection::vec("[a-z0-9/_-]{0,12}", 0..6),
            seed in any::<u64>(),
        ) {
            let records: Vec<FeatureRecord> = ids.iter().enumerate().map(|(i, id)| FeatureRecord {
                owner_id: id.clone(),
                values: (0..dim).map(|d| (seed as f32) * 1e-20 + i as f32 - d as f32 * 0.25).collect(),
            }).collect();
            let file = FeatureFile { dim, records };
            let mut bytes = Vec::new();
            write_feature_file(&mut bytes, &file).unwrap();
            prop_assert_eq!(read_feature_file(&bytes[..]).unwrap(), file);
        }
    }
}
