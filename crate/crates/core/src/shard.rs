//! Binary token shards and their JSON manifest. The byte layout is a
//! cross-language contract; see `docs/format.md`.
//!
//! ```text
//! offset size  field
//! 0      4     magic "CURR"
//! 4      2     format version (u16, currently 1)
//! 6      1     payload kind (u8: 0 sequence, 1 block, 2 masked_example)
//! 7      4     vocab_size (u32)
//! 11     8     record count (u64)
//! 19     ...   records
//! ```
//! A record is a `u32` length followed by that many `u32` ids; masked
//! examples carry the inputs array and then the labels array. Everything is
//! little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::masking::{MaskedExample, IGNORE_LABEL};

pub const MAGIC: &[u8; 4] = b"CURR";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 19;
pub const MANIFEST_FORMAT: &str = "currikit-manifest-v1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_RECORDS_PER_SHARD: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    Sequence,
    Block,
    MaskedExample,
}

impl PayloadKind {
    pub fn code(self) -> u8 {
        match self {
            PayloadKind::Sequence => 0,
            PayloadKind::Block => 1,
            PayloadKind::MaskedExample => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PayloadKind::Sequence),
            1 => Some(PayloadKind::Block),
            2 => Some(PayloadKind::MaskedExample),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShardRecord {
    Tokens(Vec<u32>),
    Masked { inputs: Vec<u32>, labels: Vec<u32> },
}

impl From<MaskedExample> for ShardRecord {
    fn from(m: MaskedExample) -> Self {
        ShardRecord::Masked {
            inputs: m.input_ids,
            labels: m.labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub records: u64,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusCount {
    pub corpus_id: String,
    pub records: u64,
}

/// Describes where the records came from; copied into the manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestInfo {
    pub plan_id: String,
    pub stage: usize,
    pub step_budget: u64,
    pub batch_size: usize,
    pub seed: u64,
    pub block_size: Option<usize>,
    pub tokenizer_digest: String,
    pub composition: Vec<CorpusCount>,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub plan_id: String,
    pub stage: usize,
    pub step_budget: u64,
    pub batch_size: usize,
    pub payload: PayloadKind,
    pub input_unit: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub block_size: Option<usize>,
    pub vocab_size: u32,
    pub record_count: u64,
    pub seed: u64,
    /// Name of the permutation scheme used to replay batches from this pool.
    pub permutation: String,
    pub tokenizer_digest: String,
    pub composition: Vec<CorpusCount>,
    pub shards: Vec<ShardEntry>,
    pub config: serde_json::Value,
}

pub const PERMUTATION_SCHEME: &str = "splitmix64-fisher-yates-v1";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check_ids(ids: &[u32], vocab: u32, allow_ignore: bool) -> Result<()> {
    match ids.iter().find(|&&t| t >= vocab && !(allow_ignore && t == IGNORE_LABEL)) {
        Some(&id) => Err(Error::Range {
            id,
            vocab_size: vocab as usize,
        }),
        None => Ok(()),
    }
}

/// Serializes one shard file.
pub fn encode_shard(records: &[ShardRecord], kind: PayloadKind, vocab_size: u32) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + records.len() * 64);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind.code());
    out.extend_from_slice(&vocab_size.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    let put = |out: &mut Vec<u8>, ids: &[u32]| {
        for t in ids {
            out.extend_from_slice(&t.to_le_bytes());
        }
    };
    for r in records {
        match (r, kind) {
            (ShardRecord::Tokens(ids), PayloadKind::Sequence | PayloadKind::Block) => {
                check_ids(ids, vocab_size, false)?;
                out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
                put(&mut out, ids);
            }
            (ShardRecord::Masked { inputs, labels }, PayloadKind::MaskedExample) => {
                if inputs.len() != labels.len() {
                    return Err(Error::Precondition("masked record with mismatched arrays".into()));
                }
                check_ids(inputs, vocab_size, false)?;
                check_ids(labels, vocab_size, true)?;
                out.extend_from_slice(&(inputs.len() as u32).to_le_bytes());
                put(&mut out, inputs);
                put(&mut out, labels);
            }
            _ => return Err(Error::Precondition(format!("record does not match payload kind {kind:?}"))),
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
                self.pos as u64,
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn ids(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let raw = self.take(n.saturating_mul(4), what)?;
        Ok(raw.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedShard {
    pub kind: PayloadKind,
    pub vocab_size: u32,
    pub records: Vec<ShardRecord>,
}

/// Parses one shard file, checking the header, ids and exact length.
pub fn decode_shard(bytes: &[u8]) -> Result<DecodedShard> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format("bad magic", 0));
    }
    let version = u16::from_le_bytes(c.take(2, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported format version {version}"), 4));
    }
    let code = c.take(1, "payload kind")?[0];
    let kind = PayloadKind::from_code(code).ok_or_else(|| Error::format(format!("unknown payload kind {code}"), 6))?;
    let vocab_size = c.u32("vocab size")?;
    let count = u64::from_le_bytes(c.take(8, "record count")?.try_into().unwrap());
    let mut records = Vec::new();
    for _ in 0..count {
        let at = c.pos as u64;
        let n = c.u32("record length")? as usize;
        let inputs = c.ids(n, "record ids")?;
        let rec = if kind == PayloadKind::MaskedExample {
            let labels = c.ids(n, "record labels")?;
            if check_ids(&labels, vocab_size, true).is_err() {
                return Err(Error::format("label outside the vocabulary", at));
            }
            ShardRecord::Masked { inputs, labels }
        } else {
            ShardRecord::Tokens(inputs)
        };
        let ids = match &rec {
            ShardRecord::Tokens(ids) | ShardRecord::Masked { inputs: ids, .. } => ids,
        };
        if check_ids(ids, vocab_size, false).is_err() {
            return Err(Error::format("token id outside the vocabulary", at));
        }
        records.push(rec);
    }
    if c.pos != bytes.len() {
        return Err(Error::format(
            format!("{} trailing bytes after {count} records", bytes.len() - c.pos),
            c.pos as u64,
        ));
    }
    Ok(DecodedShard {
        kind,
        vocab_size,
        records,
    })
}

/// Writes `records` as shard files plus `manifest.json` under `out_dir`.
pub fn write(
    records: &[ShardRecord],
    kind: PayloadKind,
    vocab_size: u32,
    info: ManifestInfo,
    out_dir: &Path,
    records_per_shard: usize,
) -> Result<Manifest> {
    if records_per_shard == 0 {
        return Err(Error::Config("records_per_shard must be positive".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut shards = Vec::new();
    let mut chunks: Vec<&[ShardRecord]> = records.chunks(records_per_shard).collect();
    if chunks.is_empty() {
        chunks.push(&[]);
    }
    for (i, chunk) in chunks.into_iter().enumerate() {
        let bytes = encode_shard(chunk, kind, vocab_size)?;
        let file = format!("shard-{i:05}.bin");
        let path = out_dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        shards.push(ShardEntry {
            file,
            records: chunk.len() as u64,
            bytes: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        plan_id: info.plan_id,
        stage: info.stage,
        step_budget: info.step_budget,
        batch_size: info.batch_size,
        payload: kind,
        input_unit: if info.block_size.is_some() { "block" } else { "sequence" }.into(),
        block_size: info.block_size,
        vocab_size,
        record_count: records.len() as u64,
        seed: info.seed,
        permutation: PERMUTATION_SCHEME.into(),
        tokenizer_digest: info.tokenizer_digest,
        composition: info.composition,
        shards,
        config: info.config,
    };
    let mp = out_dir.join(MANIFEST_FILE);
    fs::write(&mp, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&mp, e))?;
    Ok(manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: Manifest = serde_json::from_str(&body)?;
    if m.format != MANIFEST_FORMAT {
        return Err(Error::format(format!("unknown manifest format {:?}", m.format), 0));
    }
    Ok(m)
}

/// Iterates records in manifest order. Each shard is parsed and its digest
/// checked before any of its records are yielded.
pub struct ShardReader {
    dir: PathBuf,
    manifest: Manifest,
    next_shard: usize,
    pending: std::vec::IntoIter<ShardRecord>,
    seen: u64,
    failed: bool,
}

impl ShardReader {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = read_manifest(manifest_path)?;
        let declared: u64 = manifest.shards.iter().map(|s| s.records).sum();
        if declared != manifest.record_count {
            return Err(Error::Integrity(format!(
                "manifest lists {declared} shard records but declares {}",
                manifest.record_count
            )));
        }
        Ok(Self {
            dir: manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            manifest,
            next_shard: 0,
            pending: Vec::new().into_iter(),
            seen: 0,
            failed: false,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn load_shard(&self, entry: &ShardEntry) -> Result<Vec<ShardRecord>> {
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let decoded = decode_shard(&bytes).map_err(|e| match e {
            Error::Format { message, offset } => Error::Format {
                message: format!("{}: {message}", entry.file),
                offset,
            },
            other => other,
        })?;
        let digest = sha256_hex(&bytes);
        if digest != entry.sha256 {
            return Err(Error::Integrity(format!(
                "{}: sha256 {digest} does not match manifest {}",
                entry.file, entry.sha256
            )));
        }
        if decoded.kind != self.manifest.payload || decoded.vocab_size != self.manifest.vocab_size {
            return Err(Error::Integrity(format!("{}: header disagrees with manifest", entry.file)));
        }
        if decoded.records.len() as u64 != entry.records {
            return Err(Error::Integrity(format!(
                "{}: holds {} records, manifest says {}",
                entry.file,
                decoded.records.len(),
                entry.records
            )));
        }
        Ok(decoded.records)
    }
}

impl Iterator for ShardReader {
    type Item = Result<ShardRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            if let Some(r) = self.pending.next() {
                self.seen += 1;
                return Some(Ok(r));
            }
            let entry = self.manifest.shards.get(self.next_shard)?.clone();
            self.next_shard += 1;
            match self.load_shard(&entry) {
                Ok(records) => self.pending = records.into_iter(),
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Reads every record listed by a manifest.
pub fn read(manifest_path: &Path) -> Result<Vec<ShardRecord>> {
    ShardReader::open(manifest_path)?.collect()
}

/// Re-checks every shard of a manifest without keeping the records.
pub fn verify(manifest_path: &Path) -> Result<u64> {
    let mut n = 0;
    for r in ShardReader::open(manifest_path)? {
        r?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info() -> ManifestInfo {
        ManifestInfo {
            plan_id: "p".into(),
            stage: 1,
            ..Default::default()
        }
    }

    #[test]
    fn empty_shard_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let m = write(&[], PayloadKind::Sequence, 100, info(), dir.path(), 10).unwrap();
        assert_eq!(m.record_count, 0);
        assert_eq!(m.shards.len(), 1);
        assert_eq!(m.shards[0].bytes, HEADER_LEN as u64);
        assert!(read(&dir.path().join(MANIFEST_FILE)).unwrap().is_empty());
    }

    #[test]
    fn header_layout() {
        let bytes = encode_shard(&[ShardRecord::Tokens(vec![1, 2])], PayloadKind::Block, 0x0102_0304).unwrap();
        assert_eq!(&bytes[..4], b"CURR");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 1);
        assert_eq!(&bytes[7..11], &[4, 3, 2, 1]);
        assert_eq!(&bytes[11..19], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[19..23], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 19 + 4 + 8);
    }

    #[test]
    fn masked_round_trip_and_ignore_label() {
        let recs = vec![ShardRecord::Masked {
            inputs: vec![4, 9, 4],
            labels: vec![7, IGNORE_LABEL, 8],
        }];
        let bytes = encode_shard(&recs, PayloadKind::MaskedExample, 10).unwrap();
        assert_eq!(decode_shard(&bytes).unwrap().records, recs);
    }

    #[test]
    fn out_of_vocab_rejected() {
        let e = encode_shard(&[ShardRecord::Tokens(vec![10])], PayloadKind::Sequence, 10).unwrap_err();
        assert!(matches!(e, Error::Range { .. }));
        let e = encode_shard(&[ShardRecord::Tokens(vec![IGNORE_LABEL])], PayloadKind::Sequence, 10).unwrap_err();
        assert!(matches!(e, Error::Range { .. }));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = encode_shard(&[ShardRecord::Tokens(vec![1, 2, 3])], PayloadKind::Sequence, 10).unwrap();
        match decode_shard(&bytes[..bytes.len() - 2]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 23),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flipped_byte_fails_read() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<ShardRecord> = (0..50).map(|i| ShardRecord::Tokens(vec![i % 7; (i % 5 + 1) as usize])).collect();
        write(&recs, PayloadKind::Sequence, 7, info(), dir.path(), 20).unwrap();
        let mp = dir.path().join(MANIFEST_FILE);
        assert_eq!(read(&mp).unwrap(), recs);
        let shard = dir.path().join("shard-00001.bin");
        let mut bytes = fs::read(&shard).unwrap();
        bytes[30] ^= 0x01;
        fs::write(&shard, bytes).unwrap();
        assert!(matches!(read(&mp), Err(Error::Integrity(_)) | Err(Error::Format { .. })));
    }

    proptest::proptest! {
        #[test]
        fn encode_decode_identity(recs in proptest::collection::vec(proptest::collection::vec(0u32..500, 0..20), 0..40)) {
            let recs: Vec<ShardRecord> = recs.into_iter().map(ShardRecord::Tokens).collect();
            let bytes = encode_shard(&recs, PayloadKind::Sequence, 500).unwrap();
            let back = decode_shard(&bytes).unwrap();
            proptest::prop_assert_eq!(&back.records, &recs);
            proptest::prop_assert_eq!(encode_shard(&back.records, PayloadKind::Sequence, 500).unwrap(), bytes);
        }
    }
}
