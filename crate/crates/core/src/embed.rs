//! Dense vector storage and exact top-k cosine retrieval.
//!
//! Vector file layout (all integers little-endian):
//!
//! ```text
//! "KGWV" | version u32 = 1 | dim u32 | count u64
//! count × ( id_len u32 | id bytes (UTF-8) | dim × f32 LE )
//! ```
//!
//! Every vector is re-normalized when loaded, so a dot product is a cosine.
//! Two backends share one search path: [`EmbeddingIndex`] holds everything
//! in memory, [`MappedIndex`] scans a memory-mapped file.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use rayon::prelude::*;

pub const MAGIC: &[u8; 4] = b"KGWV";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic bytes (not a vector file)")]
    BadMagic,
    #[error("unsupported vector file version {0}")]
    BadVersion(u32),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("truncated file: header promises {expected} records, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("trailing bytes after {0} records")]
    TrailingBytes(u64),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("non-normalizable vector for id {0:?} (zero, NaN or infinite)")]
    NonNormalizable(String),
    #[error("record id is not valid UTF-8")]
    BadId,
    #[error("dimension must be positive")]
    ZeroDimension,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("no vector with id {0:?}")]
    MissingId(String),
}

/// Unit-normalized dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Normalizes `values`; fails on zero, NaN or infinite input.
    pub fn new(values: Vec<f32>) -> Option<Self> {
        let mut values = values;
        normalize_in_place(&mut values).then_some(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

fn normalize_in_place(values: &mut [f32]) -> bool {
    if values.is_empty() || values.iter().any(|x| !x.is_finite()) {
        return false;
    }
    let norm = values.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    let inv = (1.0 / norm) as f32;
    values.iter_mut().for_each(|x| *x *= inv);
    values.iter().all(|x| x.is_finite())
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Cosine of two unit vectors, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f32, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    Ok(dot(&a.0, &b.0).clamp(-1.0, 1.0))
}

/// Natural id order: all-digit ids compare numerically, others bytewise.
pub fn id_order(a: &str, b: &str) -> Ordering {
    let numeric = |s: &str| !s.is_empty() && s.bytes().all(|c| c.is_ascii_digit());
    if numeric(a) && numeric(b) {
        let (ta, tb) = (a.trim_start_matches('0'), b.trim_start_matches('0'));
        ta.len().cmp(&tb.len()).then_with(|| ta.cmp(tb)).then_with(|| a.cmp(b))
    } else {
        a.cmp(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexKind {
    NodeLabels,
    TripleSentences,
    #[default]
    ExternalDocs,
}

/// Read access shared by the in-memory and memory-mapped indexes.
pub trait VectorStore: Sync {
    fn dim(&self) -> usize;
    fn len(&self) -> usize;
    fn id(&self, pos: usize) -> &str;
    fn position(&self, id: &str) -> Option<usize>;
    /// Normalized vector at `pos`.
    fn vector(&self, pos: usize) -> Cow<'_, [f32]>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, id: &str) -> Result<EmbeddingVector, EmbedError> {
        let pos = self.position(id).ok_or_else(|| EmbedError::MissingId(id.to_string()))?;
        Ok(EmbeddingVector(self.vector(pos).into_owned()))
    }

    fn score(&self, pos: usize, query: &[f32]) -> f32 {
        dot(&self.vector(pos), query).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub id: String,
    pub score: f32,
}

struct Candidate<'a> {
    score: f32,
    id: &'a str,
}

impl Candidate<'_> {
    /// `Less` means `self` ranks ahead of `other`.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| id_order(self.id, other.id))
    }
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.rank(other) == Ordering::Equal
    }
}
impl Eq for Candidate<'_> {}
impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate<'_> {
    // Max-heap top is the worst kept candidate.
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

fn check_query<S: VectorStore + ?Sized>(store: &S, query: &EmbeddingVector, k: usize) -> Result<(), EmbedError> {
    if k == 0 {
        return Err(EmbedError::ZeroK);
    }
    if !store.is_empty() && query.dim() != store.dim() {
        return Err(EmbedError::DimensionMismatch {
            expected: store.dim(),
            actual: query.dim(),
        });
    }
    Ok(())
}

fn scan_range<'s, S: VectorStore + ?Sized>(
    store: &'s S,
    query: &[f32],
    k: usize,
    range: std::ops::Range<usize>,
) -> Vec<Candidate<'s>> {
    let mut heap: BinaryHeap<Candidate<'s>> = BinaryHeap::with_capacity(k + 1);
    for pos in range {
        let cand = Candidate {
            score: store.score(pos, query),
            id: store.id(pos),
        };
        if heap.len() < k {
            heap.push(cand);
        } else if let Some(worst) = heap.peek() {
            if cand.rank(worst) == Ordering::Less {
                heap.pop();
                heap.push(cand);
            }
        }
    }
    heap.into_sorted_vec()
}

fn to_hits(cands: Vec<Candidate<'_>>) -> Vec<Hit> {
    cands
        .into_iter()
        .map(|c| Hit {
            id: c.id.to_string(),
            score: c.score,
        })
        .collect()
}

/// Exact top-k by cosine; descending score, ties by ascending id.
pub fn top_k<S: VectorStore + ?Sized>(store: &S, query: &EmbeddingVector, k: usize) -> Result<Vec<Hit>, EmbedError> {
    check_query(store, query, k)?;
    Ok(to_hits(scan_range(store, query.as_slice(), k, 0..store.len())))
}

/// Same result as [`top_k`], scanning shards in parallel.
pub fn top_k_parallel<S: VectorStore + ?Sized>(
    store: &S,
    query: &EmbeddingVector,
    k: usize,
) -> Result<Vec<Hit>, EmbedError> {
    check_query(store, query, k)?;
    let n = store.len();
    let shards = rayon::current_num_threads().max(1) * 4;
    let shard_len = n.div_ceil(shards).max(1024);
    let mut merged: Vec<Candidate<'_>> = (0..n.div_ceil(shard_len))
        .into_par_iter()
        .flat_map_iter(|s| {
            let range = s * shard_len..((s + 1) * shard_len).min(n);
            scan_range(store, query.as_slice(), k, range)
        })
        .collect();
    merged.sort_by(|a, b| a.rank(b));
    merged.truncate(k);
    Ok(to_hits(merged))
}

pub fn most_similar_id<S: VectorStore + ?Sized>(store: &S, query: &EmbeddingVector) -> Result<Hit, EmbedError> {
    if store.is_empty() {
        return Err(EmbedError::EmptyIndex);
    }
    Ok(top_k(store, query, 1)?.remove(0))
}

/// In-memory index.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingIndex {
    dim: usize,
    kind: IndexKind,
    ids: Vec<String>,
    positions: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Self::default() }
    }

    pub fn kind(&self) -> IndexKind {
        self.kind
    }

    pub fn with_kind(mut self, kind: IndexKind) -> Self {
        self.kind = kind;
        self
    }

    /// Insert a vector, normalizing it.
    pub fn insert(&mut self, id: impl Into<String>, values: &[f32]) -> Result<(), EmbedError> {
        let id = id.into();
        if values.len() != self.dim {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dim,
                actual: values.len(),
            });
        }
        if self.positions.contains_key(&id) {
            return Err(EmbedError::DuplicateId(id));
        }
        let v = EmbeddingVector::new(values.to_vec()).ok_or_else(|| EmbedError::NonNormalizable(id.clone()))?;
        self.positions.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(&v.0);
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let io_err = |source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::open(path).map_err(io_err)?;
        Self::read_from(BufReader::new(file)).map_err(|e| match e {
            EmbedError::Io { source, .. } => io_err(source),
            other => other,
        })
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Self, EmbedError> {
        let io = |source| EmbedError::Io {
            path: PathBuf::new(),
            source,
        };
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            match reader.read(&mut header[filled..]).map_err(io)? {
                0 => break,
                n => filled += n,
            }
        }
        if filled < 4 || &header[..4] != MAGIC {
            return Err(EmbedError::BadMagic);
        }
        if filled < HEADER_LEN {
            return Err(EmbedError::Truncated { expected: 0, found: 0 });
        }
        let (dim, count) = parse_header(&header)?;
        let mut index = Self::new(dim);
        let mut raw = vec![0u8; dim * 4];
        let mut values = vec![0f32; dim];
        for found in 0..count {
            let mut len = [0u8; 4];
            read_exact_or(&mut reader, &mut len, count, found)?;
            let mut id = vec![0u8; u32::from_le_bytes(len) as usize];
            read_exact_or(&mut reader, &mut id, count, found)?;
            read_exact_or(&mut reader, &mut raw, count, found)?;
            let id = String::from_utf8(id).map_err(|_| EmbedError::BadId)?;
            for (v, chunk) in values.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(chunk.try_into().unwrap());
            }
            index.insert(id, &values)?;
        }
        let mut probe = [0u8; 1];
        if reader.read(&mut probe).map_err(io)? != 0 {
            return Err(EmbedError::TrailingBytes(count));
        }
        Ok(index)
    }
}

fn read_exact_or<R: Read>(reader: &mut R, buf: &mut [u8], expected: u64, found: u64) -> Result<(), EmbedError> {
    reader.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            EmbedError::Truncated { expected, found }
        } else {
            EmbedError::Io {
                path: PathBuf::new(),
                source: e,
            }
        }
    })
}

fn parse_header(header: &[u8]) -> Result<(usize, u64), EmbedError> {
    if &header[..4] != MAGIC {
        return Err(EmbedError::BadMagic);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(EmbedError::BadVersion(version));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(EmbedError::ZeroDimension);
    }
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    Ok((dim, count))
}

impl VectorStore for EmbeddingIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    fn vector(&self, pos: usize) -> Cow<'_, [f32]> {
        Cow::Borrowed(&self.data[pos * self.dim..(pos + 1) * self.dim])
    }

    fn score(&self, pos: usize, query: &[f32]) -> f32 {
        dot(&self.data[pos * self.dim..(pos + 1) * self.dim], query).clamp(-1.0, 1.0)
    }
}

/// Memory-mapped index. Only ids and record offsets live on the heap;
/// vectors are decoded and normalized during the scan.
pub struct MappedIndex {
    map: Mmap,
    dim: usize,
    ids: Vec<String>,
    offsets: Vec<usize>,
    positions: HashMap<String, usize>,
}

impl MappedIndex {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        // SAFETY: the file is opened read-only and treated as immutable input.
        let map = unsafe { Mmap::map(&file) }.map_err(|source| EmbedError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if map.len() < 4 || &map[..4] != MAGIC {
            return Err(EmbedError::BadMagic);
        }
        if map.len() < HEADER_LEN {
            return Err(EmbedError::Truncated { expected: 0, found: 0 });
        }
        let (dim, count) = parse_header(&map[..HEADER_LEN])?;
        let mut ids = Vec::new();
        let mut offsets = Vec::new();
        let mut positions = HashMap::new();
        let mut at = HEADER_LEN;
        let mut scratch = vec![0f32; dim];
        for found in 0..count {
            let truncated = || EmbedError::Truncated { expected: count, found };
            let within = |end: usize| end <= map.len();
            let len_end = Some(at + 4).filter(|&e| within(e)).ok_or_else(truncated)?;
            let id_len = u32::from_le_bytes(map[at..len_end].try_into().unwrap()) as usize;
            let id_end = len_end
                .checked_add(id_len)
                .filter(|&e| within(e))
                .ok_or_else(truncated)?;
            let vec_end = id_end
                .checked_add(dim * 4)
                .filter(|&e| within(e))
                .ok_or_else(truncated)?;
            let id = std::str::from_utf8(&map[len_end..id_end])
                .map_err(|_| EmbedError::BadId)?
                .to_string();
            decode(&map[id_end..vec_end], &mut scratch);
            if !normalize_in_place(&mut scratch) {
                return Err(EmbedError::NonNormalizable(id));
            }
            if positions.insert(id.clone(), ids.len()).is_some() {
                return Err(EmbedError::DuplicateId(id));
            }
            ids.push(id);
            offsets.push(id_end);
            at = vec_end;
        }
        if at != map.len() {
            return Err(EmbedError::TrailingBytes(count));
        }
        Ok(Self {
            map,
            dim,
            ids,
            offsets,
            positions,
        })
    }
}

fn decode(bytes: &[u8], out: &mut [f32]) {
    for (v, chunk) in out.iter_mut().zip(bytes.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().unwrap());
    }
}

impl VectorStore for MappedIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    fn position(&self, id: &str) -> Option<usize> {
        self.positions.get(id).copied()
    }

    fn vector(&self, pos: usize) -> Cow<'_, [f32]> {
        let start = self.offsets[pos];
        let mut v = vec![0f32; self.dim];
        decode(&self.map[start..start + self.dim * 4], &mut v);
        normalize_in_place(&mut v);
        Cow::Owned(v)
    }
}

/// Either backend behind one type, chosen at load time.
pub enum AnyIndex {
    Memory(EmbeddingIndex),
    Mapped(MappedIndex),
}

impl AnyIndex {
    pub fn open(path: impl AsRef<Path>, mmap: bool) -> Result<Self, EmbedError> {
        Ok(if mmap {
            Self::Mapped(MappedIndex::open(path)?)
        } else {
            Self::Memory(EmbeddingIndex::load(path)?)
        })
    }

    fn inner(&self) -> &dyn VectorStore {
        match self {
            Self::Memory(i) => i,
            Self::Mapped(i) => i,
        }
    }
}

impl VectorStore for AnyIndex {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn len(&self) -> usize {
        self.inner().len()
    }
    fn id(&self, pos: usize) -> &str {
        self.inner().id(pos)
    }
    fn position(&self, id: &str) -> Option<usize> {
        self.inner().position(id)
    }
    fn vector(&self, pos: usize) -> Cow<'_, [f32]> {
        self.inner().vector(pos)
    }
    fn score(&self, pos: usize, query: &[f32]) -> f32 {
        self.inner().score(pos, query)
    }
}

/// Streaming writer for the vector file format.
pub struct VectorWriter<W: Write> {
    out: W,
    dim: usize,
    remaining: u64,
}

impl<W: Write> VectorWriter<W> {
    pub fn new(mut out: W, dim: usize, count: u64) -> std::io::Result<Self> {
        out.write_all(MAGIC)?;
        out.write_all(&VERSION.to_le_bytes())?;
        out.write_all(&(dim as u32).to_le_bytes())?;
        out.write_all(&count.to_le_bytes())?;
        Ok(Self {
            out,
            dim,
            remaining: count,
        })
    }

    pub fn push(&mut self, id: &str, values: &[f32]) -> std::io::Result<()> {
        assert_eq!(values.len(), self.dim, "vector dimension");
        assert!(self.remaining > 0, "more records than declared");
        self.remaining -= 1;
        self.out.write_all(&(id.len() as u32).to_le_bytes())?;
        self.out.write_all(id.as_bytes())?;
        for v in values {
            self.out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Write `records` to `path` in the vector file format.
pub fn write_vectors<'a, I>(path: impl AsRef<Path>, dim: usize, records: I) -> std::io::Result<()>
where
    I: IntoIterator<Item = (&'a str, &'a [f32])>,
{
    let records: Vec<_> = records.into_iter().collect();
    let file = BufWriter::new(File::create(path)?);
    let mut writer = VectorWriter::new(file, dim, records.len() as u64)?;
    for (id, v) in records {
        writer.push(id, v)?;
    }
    writer.finish()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit(v: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn fixture_bytes(records: &[(&str, [f32; 4])], declared: u64) -> Vec<u8> {
        let mut w = VectorWriter::new(Vec::new(), 4, declared).unwrap();
        for (id, v) in records {
            w.push(id, v).unwrap();
        }
        w.out
    }

    #[test]
    fn load_three_records() {
        let bytes = fixture_bytes(
            &[
                ("a", [1.0, 0.0, 0.0, 0.0]),
                ("b", [0.0, 2.0, 0.0, 0.0]),
                ("c", [1.0, 1.0, 1.0, 1.0]),
            ],
            3,
        );
        let index = EmbeddingIndex::read_from(&bytes[..]).unwrap();
        assert_eq!(index.len(), 3);
        assert_eq!(index.dim(), 4);
        assert_eq!(index.vector(1).as_ref(), &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(index.vector(2).as_ref(), &[0.5; 4]);
    }

    #[test]
    fn load_errors() {
        let ok = [("a", [1.0, 0.0, 0.0, 0.0])];
        let mut bad_magic = fixture_bytes(&ok, 1);
        bad_magic[0] = b'X';
        assert!(matches!(
            EmbeddingIndex::read_from(&bad_magic[..]),
            Err(EmbedError::BadMagic)
        ));

        let mut bad_version = fixture_bytes(&ok, 1);
        bad_version[4] = 2;
        assert!(matches!(
            EmbeddingIndex::read_from(&bad_version[..]),
            Err(EmbedError::BadVersion(2))
        ));

        let four: Vec<(&str, [f32; 4])> = ["a", "b", "c", "d"]
            .iter()
            .map(|&id| (id, [1.0, 0.0, 0.0, 0.0]))
            .collect();
        let short = fixture_bytes(&four, 5);
        assert!(matches!(
            EmbeddingIndex::read_from(&short[..]),
            Err(EmbedError::Truncated { expected: 5, found: 4 })
        ));

        let dup = fixture_bytes(&[("a", [1.0, 0.0, 0.0, 0.0]), ("a", [0.0, 1.0, 0.0, 0.0])], 2);
        assert!(matches!(EmbeddingIndex::read_from(&dup[..]), Err(EmbedError::DuplicateId(id)) if id == "a"));

        let zero = fixture_bytes(&[("z", [0.0; 4])], 1);
        assert!(matches!(
            EmbeddingIndex::read_from(&zero[..]),
            Err(EmbedError::NonNormalizable(_))
        ));

        let nan = fixture_bytes(&[("n", [f32::NAN, 1.0, 0.0, 0.0])], 1);
        assert!(matches!(
            EmbeddingIndex::read_from(&nan[..]),
            Err(EmbedError::NonNormalizable(_))
        ));

        let mut trailing = fixture_bytes(&ok, 1);
        trailing.push(0);
        assert!(matches!(
            EmbeddingIndex::read_from(&trailing[..]),
            Err(EmbedError::TrailingBytes(1))
        ));
    }

    #[test]
    fn mapped_errors_match_memory_errors() {
        let dir = tempfile::tempdir().unwrap();
        let four: Vec<(&str, [f32; 4])> = ["a", "b", "c", "d"]
            .iter()
            .map(|&id| (id, [1.0, 0.0, 0.0, 0.0]))
            .collect();
        let path = dir.path().join("short.kgwv");
        std::fs::write(&path, fixture_bytes(&four, 5)).unwrap();
        assert!(matches!(
            MappedIndex::open(&path),
            Err(EmbedError::Truncated { expected: 5, found: 4 })
        ));
        std::fs::write(
            &path,
            fixture_bytes(&[("a", [1.0, 0.0, 0.0, 0.0]), ("a", [0.0, 1.0, 0.0, 0.0])], 2),
        )
        .unwrap();
        assert!(matches!(MappedIndex::open(&path), Err(EmbedError::DuplicateId(_))));
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(MappedIndex::open(&path), Err(EmbedError::BadMagic)));
    }

    #[test]
    fn cosine_basics() {
        let v = unit(&[0.3, -1.2, 4.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() <= 1e-5);
        let e1 = unit(&[1.0, 0.0, 0.0]);
        let e2 = unit(&[0.0, 1.0, 0.0]);
        assert_eq!(cosine(&e1, &e2).unwrap(), 0.0);
        let neg = unit(&[-0.3, 1.2, -4.0]);
        assert!((cosine(&v, &neg).unwrap() + 1.0).abs() <= 1e-5);
        assert!(matches!(
            cosine(&e1, &unit(&[1.0, 0.0])),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn top_k_edges() {
        let mut index = EmbeddingIndex::new(2);
        let q = unit(&[1.0, 0.0]);
        assert!(top_k(&index, &q, 3).unwrap().is_empty());
        assert!(matches!(most_similar_id(&index, &q), Err(EmbedError::EmptyIndex)));
        index.insert("x", &[1.0, 1.0]).unwrap();
        index.insert("y", &[1.0, 0.0]).unwrap();
        index.insert("z", &[-1.0, 0.0]).unwrap();
        assert!(matches!(top_k(&index, &q, 0), Err(EmbedError::ZeroK)));
        let all = top_k(&index, &q, 10).unwrap();
        let ids: Vec<&str> = all.iter().map(|h| h.id.as_str()).collect();
        assert_eq!(ids, ["y", "x", "z"]);
        assert_eq!(all[0].score, 1.0);
        assert_eq!(most_similar_id(&index, &q).unwrap().id, "y");
        assert!(matches!(
            top_k(&index, &unit(&[1.0, 0.0, 0.0]), 1),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ties_break_on_ascending_id() {
        let mut index = EmbeddingIndex::new(2);
        index.insert("b", &[0.0, 1.0]).unwrap();
        index.insert("a", &[0.0, 1.0]).unwrap();
        let hit = most_similar_id(&index, &unit(&[0.0, 1.0])).unwrap();
        assert_eq!(hit.id, "a");

        let mut numeric = EmbeddingIndex::new(2);
        numeric.insert("10", &[0.0, 1.0]).unwrap();
        numeric.insert("9", &[0.0, 1.0]).unwrap();
        assert_eq!(most_similar_id(&numeric, &unit(&[0.0, 1.0])).unwrap().id, "9");
    }

    #[test]
    fn single_entry() {
        let mut index = EmbeddingIndex::new(2);
        index.insert("only", &[3.0, 4.0]).unwrap();
        assert_eq!(most_similar_id(&index, &unit(&[-1.0, 0.0])).unwrap().id, "only");
    }

    #[test]
    fn id_order_is_natural() {
        assert_eq!(id_order("2", "10"), Ordering::Less);
        assert_eq!(id_order("b", "a"), Ordering::Greater);
        assert_eq!(id_order("10", "1a"), Ordering::Less);
        assert_eq!(id_order("007", "7"), Ordering::Less);
    }

    proptest! {
        #[test]
        fn results_are_monotone_prefixes(
            vecs in proptest::collection::vec(proptest::collection::vec(-1.0f32..1.0, 3), 1..40),
            q in proptest::collection::vec(-1.0f32..1.0, 3),
            k1 in 1usize..10,
            extra in 0usize..10,
        ) {
            let Some(q) = EmbeddingVector::new(q) else { return Ok(()); };
            let mut index = EmbeddingIndex::new(3);
            for (i, v) in vecs.iter().enumerate() {
                let _ = index.insert(i.to_string(), v);
            }
            let short = top_k(&index, &q, k1).unwrap();
            let long = top_k(&index, &q, k1 + extra).unwrap();
            prop_assert_eq!(short.len(), k1.min(index.len()));
            prop_assert_eq!(&long[..short.len()], &short[..]);
            prop_assert!(long.windows(2).all(|w| w[0].score >= w[1].score));
            prop_assert_eq!(top_k_parallel(&index, &q, k1 + extra).unwrap(), long);
        }
    }
}
