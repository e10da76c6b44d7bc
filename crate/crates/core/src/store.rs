//! On-disk formats and corpus manifests.
//!
//! All binary layouts are little-endian:
//!
//! * feature matrix: `"FMX1"`, `u32` rows, `u32` cols, row-major `f32`.
//! * checkpoint: `"GE2E"`, `u32` version, the five [`NetConfig`] fields as
//!   `u32`, `u32` tensor count, then per tensor a `u16` name length, the
//!   UTF-8 name, `u32` rank, `u32` dims and `f64` values. The loss scale is
//!   stored as tensor `loss.scale = [w, b]`.
//! * d-vector store: `"DVS1"`, `u32` version, `u32` dim, `u32` count, then
//!   per record `u16`-prefixed speaker and utterance ids, `f64` duration and
//!   `dim` `f64` values.
//!
//! Writers go through a temporary file in the target directory and rename it
//! into place once complete.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::dsp::{FeatureMatrix, SourceId, Waveform};
use crate::error::{Error, Result};
use crate::eval::DVector;
use crate::loss::LossScale;
use crate::net::{NetConfig, NetworkParams};

pub const FEATURE_MAGIC: &[u8; 4] = b"FMX1";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GE2E";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const DVECTOR_MAGIC: &[u8; 4] = b"DVS1";
pub const DVECTOR_VERSION: u32 = 1;

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated: wanted {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expected)
            )));
        }
        Ok(())
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::Format(e.to_string()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::Format(format!("string too long: {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("{what} {n} does not fit in u32")))
}

pub fn encode_features(fm: &FeatureMatrix) -> Result<Vec<u8>> {
    let (rows, cols) = fm.data.dim();
    let mut out = Vec::with_capacity(12 + rows * cols * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&u32_of(rows, "row count")?.to_le_bytes());
    out.extend_from_slice(&u32_of(cols, "column count")?.to_le_bytes());
    for v in fm.data.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_features(bytes: &[u8], source: SourceId) -> Result<FeatureMatrix> {
    let mut r = Reader::new(bytes);
    r.magic(FEATURE_MAGIC)?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("feature shape overflows".into()))?;
    if bytes.len() - 12 < n * 4 {
        return Err(Error::Format("truncated feature data".into()));
    }
    let values = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    let data = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::Format(e.to_string()))?;
    FeatureMatrix::new(data, source).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_features(path: &Path, fm: &FeatureMatrix) -> Result<()> {
    write_atomic(path, &encode_features(fm)?)
}

pub fn read_features(path: &Path, source: SourceId) -> Result<FeatureMatrix> {
    decode_features(&fs::read(path)?, source)
}

/// Network parameters plus the loss scale they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParams,
    pub scale: LossScale,
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let cfg = &ckpt.params.config;
    let specs = NetworkParams::tensor_specs(cfg);
    let tensors = ckpt.params.tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for field in [cfg.input_dim, cfg.hidden_dim, cfg.num_layers, cfg.embedding_dim, cfg.dual_bias as usize] {
        out.extend_from_slice(&u32_of(field, "config field")?.to_le_bytes());
    }
    out.extend_from_slice(&u32_of(specs.len() + 1, "tensor count")?.to_le_bytes());
    let scale = [ckpt.scale.w, ckpt.scale.b];
    let named = specs
        .iter()
        .map(|(n, d)| (n.as_str(), d.clone()))
        .zip(tensors)
        .chain(std::iter::once((("loss.scale", vec![2]), &scale[..])));
    for ((name, dims), values) in named {
        put_string(&mut out, name)?;
        out.extend_from_slice(&u32_of(dims.len(), "rank")?.to_le_bytes());
        for d in &dims {
            out.extend_from_slice(&u32_of(*d, "dim")?.to_le_bytes());
        }
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut fields = [0usize; 5];
    for f in &mut fields {
        *f = r.u32()? as usize;
    }
    if fields[4] > 1 {
        return Err(Error::Format(format!("dual_bias flag must be 0 or 1, got {}", fields[4])));
    }
    let config = NetConfig {
        input_dim: fields[0],
        hidden_dim: fields[1],
        num_layers: fields[2],
        embedding_dim: fields[3],
        dual_bias: fields[4] == 1,
    };
    config.validate().map_err(|e| Error::Format(e.to_string()))?;
    let specs = NetworkParams::tensor_specs(&config);
    let count = r.u32()? as usize;
    if count != specs.len() + 1 {
        return Err(Error::Format(format!("expected {} tensors, found {count}", specs.len() + 1)));
    }
    let expected = specs
        .into_iter()
        .chain(std::iter::once(("loss.scale".to_string(), vec![2])));
    let mut flat: Vec<Vec<f64>> = Vec::with_capacity(count);
    for (want_name, want_dims) in expected {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if name != want_name || dims != want_dims {
            return Err(Error::Format(format!(
                "tensor {name} {dims:?} where {want_name} {want_dims:?} was expected"
            )));
        }
        let n: usize = dims.iter().product();
        if r.buf.len() - r.pos < n * 8 {
            return Err(Error::Format(format!("truncated tensor {name}")));
        }
        flat.push((0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?);
    }
    r.finish()?;

    let scale = flat.pop().expect("scale tensor");
    let mut params = NetworkParams::zeros(config)?;
    for (dst, src) in params.tensors_mut().into_iter().zip(&flat) {
        dst.copy_from_slice(src);
    }
    Ok(Checkpoint {
        params,
        scale: LossScale {
            w: scale[0],
            b: scale[1],
        },
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

/// Utterance-level d-vectors keyed by `(speaker, utterance)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DVectorStore {
    dim: usize,
    records: Vec<DVector>,
}

impl DVectorStore {
    pub fn new(dim: usize, records: Vec<DVector>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("d-vector dimension must be positive".into()));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if r.vector.len() != dim {
                return Err(Error::Shape(format!(
                    "d-vector {}/{} has dim {}, store dim is {dim}",
                    r.speaker_id,
                    r.utterance_id,
                    r.vector.len()
                )));
            }
            if !(r.duration_seconds > 0.0) || r.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "d-vector {}/{} is not finite or has non-positive duration",
                    r.speaker_id, r.utterance_id
                )));
            }
            if !seen.insert((r.speaker_id.as_str(), r.utterance_id.as_str())) {
                return Err(Error::DuplicateEntry {
                    speaker: r.speaker_id.clone(),
                    utterance: r.utterance_id.clone(),
                });
            }
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[DVector] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.speaker_id.as_str()).collect()
    }

    /// Record indices per speaker, speakers sorted by id.
    pub fn by_speaker(&self) -> Vec<(String, Vec<usize>)> {
        let mut map: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
        for (i, r) in self.records.iter().enumerate() {
            map.entry(&r.speaker_id).or_default().push(i);
        }
        map.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

pub fn encode_dvectors(store: &DVectorStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DVECTOR_MAGIC);
    out.extend_from_slice(&DVECTOR_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of(store.dim, "dim")?.to_le_bytes());
    out.extend_from_slice(&u32_of(store.records.len(), "count")?.to_le_bytes());
    for r in &store.records {
        put_string(&mut out, &r.speaker_id)?;
        put_string(&mut out, &r.utterance_id)?;
        out.extend_from_slice(&r.duration_seconds.to_le_bytes());
        for v in r.vector.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dvectors(bytes: &[u8]) -> Result<DVectorStore> {
    let mut r = Reader::new(bytes);
    r.magic(DVECTOR_MAGIC)?;
    let version = r.u32()?;
    if version != DVECTOR_VERSION {
        return Err(Error::Format(format!("unsupported d-vector store version {version}")));
    }
    let dim = r.u32()? as usize;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let speaker_id = r.string()?;
        let utterance_id = r.string()?;
        let duration_seconds = r.f64()?;
        let vector = (0..dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        records.push(DVector {
            vector: Array1::from(vector),
            speaker_id,
            utterance_id,
            duration_seconds,
        });
    }
    r.finish()?;
    DVectorStore::new(dim, records).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_dvectors(path: &Path, store: &DVectorStore) -> Result<()> {
    write_atomic(path, &encode_dvectors(store)?)
}

pub fn read_dvectors(path: &Path) -> Result<DVectorStore> {
    decode_dvectors(&fs::read(path)?)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Format(format!(
            "{}: expected mono 16-bit PCM, got {spec:?}",
            path.display()
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = std::io::Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec)?;
        for &s in &w.samples {
            writer.write_sample((s * 32768.0).round().clamp(-32768.0, 32767.0) as i16)?;
        }
        writer.finalize()?;
    }
    write_atomic(path, &cursor.into_inner())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split `{other}`"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub speaker_id: String,
    pub utterance_id: String,
    /// As written in the manifest; relative paths resolve against the manifest's directory.
    pub path: PathBuf,
    pub duration_seconds: f64,
    pub split: Split,
}

impl ManifestEntry {
    pub fn is_features(&self) -> bool {
        self.path.extension().is_some_and(|e| e == "fmx")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_HEADER: &str = "speaker_id\tutterance_id\tpath\tduration_seconds\tsplit";

impl Manifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
            Some((i, _)) => {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("expected header `{MANIFEST_HEADER}`"),
                })
            }
            None => return Err(Error::EmptyManifest),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            if cols.len() != 5 {
                return Err(parse_err(format!("expected 5 tab-separated columns, got {}", cols.len())));
            }
            let duration_seconds: f64 = cols[3]
                .parse()
                .map_err(|_| parse_err(format!("bad duration `{}`", cols[3])))?;
            let split = cols[4].parse().map_err(|e: Error| parse_err(e.to_string()))?;
            entries.push(ManifestEntry {
                speaker_id: cols[0].to_string(),
                utterance_id: cols[1].to_string(),
                path: PathBuf::from(cols[2]),
                duration_seconds,
                split,
            });
        }
        Ok(Self { base_dir, entries })
    }

    /// Structural checks: non-empty, unique ids, disjoint train/eval speakers.
    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::EmptyManifest);
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert((e.speaker_id.as_str(), e.utterance_id.as_str())) {
                return Err(Error::DuplicateEntry {
                    speaker: e.speaker_id.clone(),
                    utterance: e.utterance_id.clone(),
                });
            }
        }
        let train: HashSet<&str> = self
            .entries
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.speaker_id.as_str())
            .collect();
        let mut eval: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| e.split != Split::Train && train.contains(e.speaker_id.as_str()))
            .map(|e| e.speaker_id.as_str())
            .collect();
        eval.sort_unstable();
        if let Some(s) = eval.first() {
            return Err(Error::OpenSetViolation(s.to_string()));
        }
        Ok(())
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.speaker_id.as_str()).collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        for e in &self.entries {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                e.speaker_id,
                e.utterance_id,
                e.path.display(),
                e.duration_seconds,
                e.split
            ));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_tsv().as_bytes())
    }
}

/// Reads and validates a manifest, including that every referenced file exists.
pub fn ingest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest::parse(&text, base)?;
    manifest.validate()?;
    for e in &manifest.entries {
        let p = manifest.resolve(e);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(s: &str, u: &str, split: Split) -> ManifestEntry {
        ManifestEntry {
            speaker_id: s.into(),
            utterance_id: u.into(),
            path: PathBuf::from(format!("{s}_{u}.wav")),
            duration_seconds: 3.0,
            split,
        }
    }

    #[test]
    fn open_set_violation_detected() {
        let m = Manifest {
            base_dir: PathBuf::new(),
            entries: vec![entry("s1", "a", Split::Train), entry("s1", "b", Split::Test)],
        };
        assert!(matches!(m.validate(), Err(Error::OpenSetViolation(s)) if s == "s1"));
    }

    #[test]
    fn empty_and_duplicate_manifests() {
        let text = format!("{MANIFEST_HEADER}\n");
        let m = Manifest::parse(&text, PathBuf::new()).unwrap();
        assert!(matches!(m.validate(), Err(Error::EmptyManifest)));
        assert!(matches!(Manifest::parse("", PathBuf::new()), Err(Error::EmptyManifest)));
        let m = Manifest {
            base_dir: PathBuf::new(),
            entries: vec![entry("s1", "a", Split::Dev), entry("s1", "a", Split::Dev)],
        };
        assert!(matches!(m.validate(), Err(Error::DuplicateEntry { .. })));
    }

    #[test]
    fn manifest_text_round_trip() {
        let m = Manifest {
            base_dir: PathBuf::from("/data"),
            entries: vec![entry("s1", "a", Split::Train), entry("s2", "b", Split::Test)],
        };
        let parsed = Manifest::parse(&m.to_tsv(), PathBuf::from("/data")).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(parsed.resolve(&parsed.entries[0]), PathBuf::from("/data/s1_a.wav"));
    }

    #[test]
    fn manifest_parse_errors_carry_line() {
        let text = format!("{MANIFEST_HEADER}\ns1\ta\tx.wav\tlong\ttrain\n");
        assert!(matches!(Manifest::parse(&text, PathBuf::new()), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(
            Manifest::parse("wrong header\n", PathBuf::new()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn feature_bytes_layout() {
        let fm = FeatureMatrix::new(
            Array2::from_shape_vec((1, 2), vec![1.0f32, -2.0]).unwrap(),
            SourceId::default(),
        )
        .unwrap();
        let bytes = encode_features(&fm).unwrap();
        assert_eq!(&bytes[..4], b"FMX1");
        assert_eq!(&bytes[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(decode_features(&bytes, SourceId::default()).unwrap(), fm);
    }

    #[test]
    fn checkpoint_rejects_bad_header() {
        let ckpt = Checkpoint {
            params: crate::net::init_params(
                NetConfig {
                    input_dim: 2,
                    hidden_dim: 3,
                    num_layers: 2,
                    embedding_dim: 2,
                    dual_bias: true,
                },
                1,
            )
            .unwrap(),
            scale: LossScale::default(),
        };
        let mut bytes = encode_checkpoint(&ckpt).unwrap();
        assert_eq!(decode_checkpoint(&bytes).unwrap(), ckpt);
        bytes[4] = 9;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
        bytes[4] = 1;
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(_))));
    }
}
