//! On-disk formats.
//!
//! Feature file layout (all little-endian):
//!
//! ```text
//! "CCLF"            4 bytes magic
//! version           u32 (= 1)
//! N                 u64 rows
//! D                 u64 columns
//! has_frame_id      u8 (0 or 1)
//! has_track_id      u8
//! has_label         u8
//! features          N*D f32, row-major
//! frame_id          N i64   (if present)
//! track_id          N i64   (if present)
//! label             N i64   (if present)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{CooccurrenceSet, FeatureSet};
use crate::error::{CclError, Result};
use crate::mining::{Pair, PairSource};

pub const FEATURE_MAGIC: &[u8; 4] = b"CCLF";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 3;

pub fn encode_features(fs: &FeatureSet) -> Vec<u8> {
    let (n, d) = fs.features.dim();
    let arrays = [&fs.frame_id, &fs.track_id, &fs.label];
    let present = arrays.iter().filter(|a| a.is_some()).count();
    let mut out = Vec::with_capacity(HEADER_LEN + n * d * 4 + present * n * 8);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(d as u64).to_le_bytes());
    for a in arrays {
        out.push(a.is_some() as u8);
    }
    for &v in fs.features.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for a in arrays.into_iter().flatten() {
        for &v in a {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CclError::Truncated {
                expected: self.pos.saturating_add(len),
                found: self.buf.len(),
            }),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parse a feature file image. No normalization is applied.
pub fn decode_features(buf: &[u8]) -> Result<FeatureSet> {
    let mut r = Reader { buf, pos: 0 };
    if buf.len() < HEADER_LEN {
        return Err(CclError::Format(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            buf.len()
        )));
    }
    if r.take(4)? != FEATURE_MAGIC {
        return Err(CclError::Format("bad magic, expected \"CCLF\"".into()));
    }
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(CclError::Format(format!("unsupported version {version}")));
    }
    let n = r.u64()? as usize;
    let d = r.u64()? as usize;
    if n == 0 || d == 0 {
        return Err(CclError::Format(format!("empty matrix {n}x{d}")));
    }
    let flags = r.take(3)?;
    let mut present = [false; 3];
    for (p, &f) in present.iter_mut().zip(flags) {
        *p = match f {
            0 => false,
            1 => true,
            other => return Err(CclError::Format(format!("flag byte {other} is not 0 or 1"))),
        };
    }

    let payload_len = n
        .checked_mul(d)
        .and_then(|nd| nd.checked_mul(4))
        .ok_or_else(|| CclError::Format(format!("shape {n}x{d} overflows")))?;
    let index_len = n * 8 * present.iter().filter(|&&p| p).count();
    let expected = HEADER_LEN + payload_len + index_len;
    if buf.len() < expected {
        return Err(CclError::Truncated {
            expected,
            found: buf.len(),
        });
    }
    if buf.len() > expected {
        return Err(CclError::Format(format!(
            "{} trailing bytes after payload",
            buf.len() - expected
        )));
    }

    let values: Vec<f32> = r
        .take(payload_len)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let features = Array2::from_shape_vec((n, d), values).expect("length checked above");

    let mut index = |on: bool| -> Result<Option<Vec<i64>>> {
        if !on {
            return Ok(None);
        }
        Ok(Some(
            r.take(n * 8)?
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ))
    };
    let fs = FeatureSet {
        features,
        frame_id: index(present[0])?,
        track_id: index(present[1])?,
        label: index(present[2])?,
    };
    fs.validate()?;
    if let Some(labels) = &fs.label {
        if let Some(&bad) = labels.iter().find(|&&l| l < -1) {
            return Err(CclError::Format(format!("label {bad} out of range")));
        }
    }
    Ok(fs)
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    decode_features(&fs::read(path)?)
}

pub fn write_features(path: impl AsRef<Path>, fs: &FeatureSet) -> Result<()> {
    fs::write(path, encode_features(fs))?;
    Ok(())
}

fn parse_num<T: std::str::FromStr>(field: &str, line: usize, col: usize) -> Result<T> {
    field.trim().parse().map_err(|_| {
        CclError::Format(format!("line {line}, column {col}: cannot parse {field:?}"))
    })
}

/// Import `frame_id,track_id,label,f0,...,f{D-1}` CSV text.
pub fn parse_features_csv(text: &str) -> Result<FeatureSet> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CclError::Format("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 4 || cols[..3] != ["frame_id", "track_id", "label"] {
        return Err(CclError::Format(
            "CSV header must start with frame_id,track_id,label followed by feature columns".into(),
        ));
    }
    let d = cols.len() - 3;
    for (k, c) in cols[3..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(CclError::Format(format!("expected column f{k}, found {c:?}")));
        }
    }

    let (mut frames, mut tracks, mut labels, mut values) = (vec![], vec![], vec![], vec![]);
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 3 {
            return Err(CclError::Format(format!(
                "line {lineno}: expected {} fields, found {}",
                d + 3,
                fields.len()
            )));
        }
        frames.push(parse_num::<i64>(fields[0], lineno, 0)?);
        tracks.push(parse_num::<i64>(fields[1], lineno, 1)?);
        labels.push(parse_num::<i64>(fields[2], lineno, 2)?);
        for (k, f) in fields[3..].iter().enumerate() {
            values.push(parse_num::<f32>(f, lineno, k + 3)?);
        }
    }
    let n = frames.len();
    let features = Array2::from_shape_vec((n, d), values).expect("row widths checked");
    FeatureSet::new(features)?
        .with_frames(frames)?
        .with_tracks(tracks)?
        .with_labels(labels)
}

pub fn import_features_csv(path: impl AsRef<Path>) -> Result<FeatureSet> {
    parse_features_csv(&fs::read_to_string(path)?)
}

/// Load a feature file, accepting the CSV import format when the path ends
/// in `.csv`.
pub fn load_any_features(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        import_features_csv(path)
    } else {
        load_features(path)
    }
}

/// What the first column of a label file indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKey {
    Sample,
    Track,
}

impl LabelKey {
    fn header(self) -> &'static str {
        match self {
            LabelKey::Sample => "sample_index",
            LabelKey::Track => "track_id",
        }
    }
}

/// Predicted cluster labels keyed by sample index or track id.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelFile {
    pub key: LabelKey,
    pub ids: Vec<i64>,
    pub labels: Vec<usize>,
}

impl LabelFile {
    pub fn samples(labels: Vec<usize>) -> Self {
        LabelFile {
            key: LabelKey::Sample,
            ids: (0..labels.len() as i64).collect(),
            labels,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{},label\n", self.key.header());
        for (id, l) in self.ids.iter().zip(&self.labels) {
            let _ = writeln!(s, "{id},{l}");
        }
        s
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default().trim();
        let key = match header {
            "sample_index,label" => LabelKey::Sample,
            "track_id,label" => LabelKey::Track,
            other => return Err(CclError::Format(format!("unexpected label header {other:?}"))),
        };
        let (mut ids, mut labels) = (vec![], vec![]);
        for (k, line) in lines.enumerate() {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| CclError::Format(format!("line {}: expected two fields", k + 2)))?;
            ids.push(parse_num(a, k + 2, 0)?);
            labels.push(parse_num(b, k + 2, 1)?);
        }
        Ok(LabelFile { key, ids, labels })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_csv(&fs::read_to_string(path)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionSidecar {
    pub cluster_counts: Vec<usize>,
}

/// `sample_index,p1,...,pL` with one row per sample.
pub fn partitions_to_csv(partitions: &[Vec<usize>]) -> String {
    let mut s = String::from("sample_index");
    for l in 1..=partitions.len() {
        let _ = write!(s, ",p{l}");
    }
    s.push('\n');
    let n = partitions.first().map_or(0, Vec::len);
    for i in 0..n {
        let _ = write!(s, "{i}");
        for p in partitions {
            let _ = write!(s, ",{}", p[i]);
        }
        s.push('\n');
    }
    s
}

pub fn parse_partitions_csv(text: &str) -> Result<Vec<Vec<usize>>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.first() != Some(&"sample_index") || header.len() < 2 {
        return Err(CclError::Format("partition header must be sample_index,p1,...".into()));
    }
    let levels = header.len() - 1;
    let mut partitions = vec![Vec::new(); levels];
    for (k, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != levels + 1 {
            return Err(CclError::Format(format!("line {}: wrong field count", k + 2)));
        }
        let idx: usize = parse_num(fields[0], k + 2, 0)?;
        if idx != k {
            return Err(CclError::Format(format!("line {}: sample_index {idx} out of order", k + 2)));
        }
        for (l, f) in fields[1..].iter().enumerate() {
            partitions[l].push(parse_num(f, k + 2, l + 1)?);
        }
    }
    Ok(partitions)
}

/// Write the partition CSV plus a `.json` sidecar next to it.
pub fn write_partitions(path: impl AsRef<Path>, partitions: &[Vec<usize>], counts: &[usize]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, partitions_to_csv(partitions))?;
    let sidecar = PartitionSidecar {
        cluster_counts: counts.to_vec(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| CclError::Format(e.to_string()))?;
    fs::write(path.with_extension("json"), json)?;
    Ok(())
}

pub fn read_partitions(path: impl AsRef<Path>) -> Result<Vec<Vec<usize>>> {
    parse_partitions_csv(&fs::read_to_string(path)?)
}

/// `a,b,y,source` lines for pair audits.
pub fn pairs_to_csv<'a>(pairs: impl IntoIterator<Item = &'a Pair>) -> String {
    let mut s = String::from("a,b,y,source\n");
    for p in pairs {
        let _ = writeln!(s, "{},{},{},{}", p.a, p.b, p.y, p.source.as_str());
    }
    s
}

pub fn parse_pairs_csv(text: &str) -> Result<Vec<Pair>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("a,b,y,source") {
        return Err(CclError::Format("pair header must be a,b,y,source".into()));
    }
    lines
        .enumerate()
        .map(|(k, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(CclError::Format(format!("line {}: expected 4 fields", k + 2)));
            }
            let source = PairSource::parse(f[3].trim())
                .ok_or_else(|| CclError::Format(format!("line {}: unknown source {:?}", k + 2, f[3])))?;
            Ok(Pair {
                a: parse_num(f[0], k + 2, 0)?,
                b: parse_num(f[1], k + 2, 1)?,
                y: parse_num(f[2], k + 2, 2)?,
                source,
            })
        })
        .collect()
}

/// Co-occurrence pairs as `a,b` CSV.
pub fn cooccurrence_to_csv(cooc: &CooccurrenceSet) -> String {
    let mut s = String::from("a,b\n");
    for (a, b) in cooc.pairs() {
        let _ = writeln!(s, "{a},{b}");
    }
    s
}

pub fn parse_cooccurrence_csv(text: &str) -> Result<CooccurrenceSet> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    if lines.next().map(str::trim) != Some("a,b") {
        return Err(CclError::Format("co-occurrence header must be a,b".into()));
    }
    let mut pairs = Vec::new();
    for (k, line) in lines.enumerate() {
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| CclError::Format(format!("line {}: expected two fields", k + 2)))?;
        pairs.push((parse_num(a, k + 2, 0)?, parse_num(b, k + 2, 1)?));
    }
    CooccurrenceSet::from_pairs(pairs)
}
