//! On-disk embedding store.
//!
//! Layout: a directory holding `manifest.json` plus one shard per
//! `(model_id, layer_id)` pair. A shard is a data file with a fixed 64-byte
//! header (magic `EMBS`, version u16, length u32, count u64, zero padding)
//! followed by `count` rows of little-endian f32, and a parallel index file
//! with one `subject_id\tsample_id` line per row.
//!
//! Concurrency: readers may open shards at any time; at most one appending
//! writer may exist per shard, enforced here through the exclusive borrow on
//! [`EmbeddingStore::writer`].

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::types::{EmbeddingRecord, Modality};

const MAGIC: &[u8; 4] = b"EMBS";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 64;
const MANIFEST_FILE: &str = "manifest.json";

/// Identifies one shard inside a store.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShardId {
    pub model_id: String,
    pub layer_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShardInfo {
    pub model_id: String,
    pub layer_id: String,
    pub length: u32,
    pub count: u64,
    pub data_file: String,
    pub index_file: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoreManifest {
    pub modality: Modality,
    pub shards: Vec<ShardInfo>,
}

/// Directory-backed embedding store.
pub struct EmbeddingStore {
    root: PathBuf,
    manifest: StoreManifest,
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' { c } else { '-' })
        .collect()
}

fn write_header(file: &mut impl Write, length: u32, count: u64) -> Result<(), CoreError> {
    let mut header = Vec::with_capacity(HEADER_LEN);
    header.extend_from_slice(MAGIC);
    header.write_u16::<LittleEndian>(VERSION)?;
    header.write_u32::<LittleEndian>(length)?;
    header.write_u64::<LittleEndian>(count)?;
    header.resize(HEADER_LEN, 0);
    file.write_all(&header)?;
    Ok(())
}

fn read_header(file: &mut impl Read) -> Result<(u32, u64), CoreError> {
    let mut header = [0u8; HEADER_LEN];
    file.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(CoreError::StoreError("bad shard magic".into()));
    }
    let mut rest = &header[4..];
    let version = rest.read_u16::<LittleEndian>()?;
    if version != VERSION {
        return Err(CoreError::StoreError(format!(
            "unsupported shard version {version}"
        )));
    }
    let length = rest.read_u32::<LittleEndian>()?;
    let count = rest.read_u64::<LittleEndian>()?;
    Ok((length, count))
}

impl EmbeddingStore {
    /// Creates an empty store directory (the directory may already exist but
    /// must not already contain a manifest).
    pub fn create(root: impl AsRef<Path>, modality: Modality) -> Result<Self, CoreError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root)?;
        if root.join(MANIFEST_FILE).exists() {
            return Err(CoreError::StoreError(format!(
                "store already exists at {}",
                root.display()
            )));
        }
        let store = Self {
            root,
            manifest: StoreManifest {
                modality,
                shards: Vec::new(),
            },
        };
        store.persist_manifest()?;
        Ok(store)
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self, CoreError> {
        let root = root.as_ref().to_path_buf();
        let raw = std::fs::read_to_string(root.join(MANIFEST_FILE))?;
        let manifest: StoreManifest = serde_json::from_str(&raw)?;
        Ok(Self { root, manifest })
    }

    /// Opens an existing store or creates a fresh one.
    pub fn open_or_create(root: impl AsRef<Path>, modality: Modality) -> Result<Self, CoreError> {
        if root.as_ref().join(MANIFEST_FILE).exists() {
            Self::open(root)
        } else {
            Self::create(root, modality)
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &StoreManifest {
        &self.manifest
    }

    pub fn shard_info(&self, model_id: &str, layer_id: &str) -> Option<&ShardInfo> {
        self.manifest
            .shards
            .iter()
            .find(|s| s.model_id == model_id && s.layer_id == layer_id)
    }

    fn persist_manifest(&self) -> Result<(), CoreError> {
        let tmp = self.root.join(format!("{MANIFEST_FILE}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(&self.manifest)?)?;
        std::fs::rename(&tmp, self.root.join(MANIFEST_FILE))?;
        Ok(())
    }

    /// Opens the single appending writer for a shard, creating the shard on
    /// first use. The exclusive borrow keeps a second writer from existing.
    pub fn writer(
        &mut self,
        model_id: &str,
        layer_id: &str,
        length: usize,
    ) -> Result<ShardWriter<'_>, CoreError> {
        if length == 0 || length > u32::MAX as usize {
            return Err(CoreError::InvalidInput(format!(
                "unsupported embedding length {length}"
            )));
        }
        let shard_index = match self
            .manifest
            .shards
            .iter()
            .position(|s| s.model_id == model_id && s.layer_id == layer_id)
        {
            Some(i) => {
                if self.manifest.shards[i].length as usize != length {
                    return Err(CoreError::LengthMismatch {
                        expected: self.manifest.shards[i].length as usize,
                        got: length,
                    });
                }
                i
            }
            None => {
                let mut base = format!("{}__{}", sanitize(model_id), sanitize(layer_id));
                while self
                    .manifest
                    .shards
                    .iter()
                    .any(|s| s.data_file == format!("{base}.embs"))
                {
                    base.push('x');
                }
                let info = ShardInfo {
                    model_id: model_id.to_string(),
                    layer_id: layer_id.to_string(),
                    length: length as u32,
                    count: 0,
                    data_file: format!("{base}.embs"),
                    index_file: format!("{base}.idx"),
                };
                let mut data = File::create(self.root.join(&info.data_file))?;
                write_header(&mut data, info.length, 0)?;
                data.sync_all()?;
                File::create(self.root.join(&info.index_file))?;
                self.manifest.shards.push(info);
                self.persist_manifest()?;
                self.manifest.shards.len() - 1
            }
        };

        let info = self.manifest.shards[shard_index].clone();
        let mut data = OpenOptions::new()
            .read(true)
            .write(true)
            .open(self.root.join(&info.data_file))?;
        let (stored_len, count) = read_header(&mut data)?;
        if stored_len != info.length || count != info.count {
            return Err(CoreError::StoreError(format!(
                "manifest/shard disagreement for {}:{}",
                model_id, layer_id
            )));
        }
        data.seek(SeekFrom::End(0))?;
        let index = OpenOptions::new()
            .append(true)
            .open(self.root.join(&info.index_file))?;
        Ok(ShardWriter {
            store: self,
            shard_index,
            data: BufWriter::new(data),
            index: BufWriter::new(index),
            count,
            length,
        })
    }

    /// Reads every record of one shard.
    pub fn read_shard(
        &self,
        model_id: &str,
        layer_id: &str,
    ) -> Result<Vec<EmbeddingRecord>, CoreError> {
        let info = self.shard_info(model_id, layer_id).ok_or_else(|| {
            CoreError::StoreError(format!("no shard for {model_id}:{layer_id}"))
        })?;
        let mut data = BufReader::new(File::open(self.root.join(&info.data_file))?);
        let (length, count) = read_header(&mut data)?;
        let index = BufReader::new(File::open(self.root.join(&info.index_file))?);
        let ids: Vec<(String, String)> = index
            .lines()
            .map(|line| {
                let line = line?;
                let (subject, sample) = line.split_once('\t').ok_or_else(|| {
                    CoreError::StoreError(format!("malformed index line: {line:?}"))
                })?;
                Ok((subject.to_string(), sample.to_string()))
            })
            .collect::<Result<_, CoreError>>()?;
        if ids.len() as u64 != count {
            return Err(CoreError::StoreError(format!(
                "index has {} lines but header declares {count} rows",
                ids.len()
            )));
        }
        let mut records = Vec::with_capacity(count as usize);
        for (subject_id, sample_id) in ids {
            let mut vector = vec![0f32; length as usize];
            data.read_f32_into::<LittleEndian>(&mut vector)?;
            records.push(EmbeddingRecord {
                vector,
                source_model_id: model_id.to_string(),
                layer_id: layer_id.to_string(),
                subject_id,
                sample_id,
                modality: self.manifest.modality,
            });
        }
        Ok(records)
    }
}

/// Appending writer for one shard. Dropping the writer without calling
/// [`ShardWriter::finish`] discards the header/manifest count update, so the
/// appended rows past the old count are ignored by readers.
pub struct ShardWriter<'a> {
    store: &'a mut EmbeddingStore,
    shard_index: usize,
    data: BufWriter<File>,
    index: BufWriter<File>,
    count: u64,
    length: usize,
}

impl ShardWriter<'_> {
    pub fn append(&mut self, record: &EmbeddingRecord) -> Result<(), CoreError> {
        if record.len() != self.length {
            return Err(CoreError::LengthMismatch {
                expected: self.length,
                got: record.len(),
            });
        }
        if record.subject_id.contains(['\t', '\n']) || record.sample_id.contains(['\t', '\n']) {
            return Err(CoreError::StoreError(
                "subject/sample ids must not contain tabs or newlines".into(),
            ));
        }
        for &v in &record.vector {
            self.data.write_f32::<LittleEndian>(v)?;
        }
        writeln!(self.index, "{}\t{}", record.subject_id, record.sample_id)?;
        self.count += 1;
        Ok(())
    }

    /// Flushes rows, patches the header count, and updates the manifest.
    pub fn finish(mut self) -> Result<(), CoreError> {
        self.data.flush()?;
        self.index.flush()?;
        let file = self.data.get_mut();
        file.seek(SeekFrom::Start(0))?;
        write_header(file, self.length as u32, self.count)?;
        file.sync_all()?;
        self.index.get_mut().sync_all()?;
        self.store.manifest.shards[self.shard_index].count = self.count;
        self.store.persist_manifest()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(model: &str, layer: &str, sub: &str, sample: &str, v: Vec<f32>) -> EmbeddingRecord {
        EmbeddingRecord::new(v, model, layer, sub, sample, Modality::Generic).unwrap()
    }

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::create(dir.path(), Modality::Generic).unwrap();
        let records = vec![
            rec("m0", "embed", "s1", "a", vec![0.125, -3.5, 1e-30]),
            rec("m0", "embed", "s2", "b", vec![f32::MIN_POSITIVE, 7.0, -0.0]),
        ];
        let mut w = store.writer("m0", "embed", 3).unwrap();
        for r in &records {
            w.append(r).unwrap();
        }
        w.finish().unwrap();

        let reopened = EmbeddingStore::open(dir.path()).unwrap();
        let back = reopened.read_shard("m0", "embed").unwrap();
        assert_eq!(back.len(), 2);
        for (orig, got) in records.iter().zip(&back) {
            assert_eq!(orig.vector.len(), got.vector.len());
            for (a, b) in orig.vector.iter().zip(&got.vector) {
                assert_eq!(a.to_bits(), b.to_bits(), "store must be bit-exact");
            }
            assert_eq!(orig.subject_id, got.subject_id);
            assert_eq!(orig.sample_id, got.sample_id);
        }
    }

    #[test]
    fn append_resumes_existing_shard() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::create(dir.path(), Modality::Face).unwrap();
        let mut w = store.writer("m", "l", 2).unwrap();
        w.append(&rec("m", "l", "s1", "a", vec![1.0, 2.0])).unwrap();
        w.finish().unwrap();
        let mut w = store.writer("m", "l", 2).unwrap();
        w.append(&rec("m", "l", "s2", "b", vec![3.0, 4.0])).unwrap();
        w.finish().unwrap();
        let back = store.read_shard("m", "l").unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].vector, vec![3.0, 4.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::create(dir.path(), Modality::Generic).unwrap();
        let mut w = store.writer("m", "l", 2).unwrap();
        let e = w.append(&rec("m", "l", "s", "a", vec![1.0]));
        assert!(matches!(e, Err(CoreError::LengthMismatch { .. })));
    }

    #[test]
    fn header_is_64_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::create(dir.path(), Modality::Generic).unwrap();
        store.writer("m", "l", 4).unwrap();
        let info = store.shard_info("m", "l").unwrap().clone();
        let bytes = std::fs::read(dir.path().join(info.data_file)).unwrap();
        assert_eq!(bytes.len(), 64);
        assert_eq!(&bytes[..4], b"EMBS");
    }
}
