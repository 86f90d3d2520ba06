//! Instance embeddings: validated matrices, file formats, word-vector pooling.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! "FSEL" 0x01 | n: u32 | d: u32 | n*d f32, row-major | has_ids: u8 (0/1)
//!            | if has_ids: n * (len: u32, utf-8 bytes)
//! ```
//!
//! Text layout: a header line `n d`, then `n` lines each holding an optional
//! id followed by `d` floats, whitespace-separated. Either every row carries
//! an id or none does.
//!
//! Values are held as `f64` in memory. The binary format stores `f32`, so
//! writing narrows; loading a binary file and writing it back is bit-exact.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use crate::par;

pub const MAGIC: &[u8; 4] = b"FSEL";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Binary,
    Text,
}

impl MatrixFormat {
    /// Binary if the file starts with the magic bytes, text otherwise.
    pub fn sniff(bytes: &[u8]) -> MatrixFormat {
        if bytes.starts_with(MAGIC) {
            MatrixFormat::Binary
        } else {
            MatrixFormat::Text
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    data: Array2<f64>,
    ids: Option<Vec<String>>,
}

impl EmbeddingMatrix {
    /// Validates shape, finiteness and id uniqueness.
    pub fn new(data: Array2<f64>, ids: Option<Vec<String>>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 || d == 0 {
            return Err(Error::Empty(format!("matrix must be at least 1x1, got {n}x{d}")));
        }
        for (row, values) in data.outer_iter().enumerate() {
            if let Some(col) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: row + 1, col: col + 1 });
            }
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::Shape(format!("{} ids for {n} rows", ids.len())));
            }
            check_unique_ids(ids)?;
        }
        Ok(EmbeddingMatrix { data, ids })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * d);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != d {
                return Err(Error::DimensionMismatch { row: i + 1, expected: d, found: row.len() });
            }
            flat.extend(row);
        }
        let data = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Self::new(data, None)
    }

    pub fn with_ids(self, ids: Vec<String>) -> Result<Self> {
        Self::new(self.data, Some(ids))
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn d(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    pub fn into_parts(self) -> (Array2<f64>, Option<Vec<String>>) {
        (self.data, self.ids)
    }

    /// Returns a copy with rows reordered so that new row `i` is old row `order[i]`.
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        let data = self.data.select(Axis(0), order);
        let ids = self.ids.as_ref().map(|ids| order.iter().map(|&i| ids[i].clone()).collect());
        Self::new(data, ids)
    }

    /// Number of pairwise-distinct rows (bitwise comparison of values).
    pub fn distinct_rows(&self) -> usize {
        let mut seen = HashSet::with_capacity(self.n());
        for row in self.data.outer_iter() {
            let key: Vec<u64> = row.iter().map(|v| canonical_bits(*v)).collect();
            seen.insert(key);
        }
        seen.len()
    }
}

fn canonical_bits(v: f64) -> u64 {
    // -0.0 and 0.0 are the same point
    if v == 0.0 {
        0
    } else {
        v.to_bits()
    }
}

fn check_unique_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId { row: i + 1, id: id.clone() });
        }
    }
    Ok(())
}

pub fn load_matrix(path: impl AsRef<Path>, format: MatrixFormat) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        MatrixFormat::Binary => decode_binary(&bytes),
        MatrixFormat::Text => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::MalformedHeader(format!("text matrix is not utf-8: {e}")))?;
            parse_text(text)
        }
    }
}

/// Loads a matrix, picking the format from the file's leading bytes.
pub fn load_matrix_auto(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match MatrixFormat::sniff(&bytes) {
        MatrixFormat::Binary => decode_binary(&bytes),
        MatrixFormat::Text => {
            let text = std::str::from_utf8(&bytes)
                .map_err(|e| Error::MalformedHeader(format!("text matrix is not utf-8: {e}")))?;
            parse_text(text)
        }
    }
}

/// Writes atomically: the destination is replaced only once the full file is on disk.
pub fn write_matrix(m: &EmbeddingMatrix, path: impl AsRef<Path>, format: MatrixFormat) -> Result<()> {
    let bytes = match format {
        MatrixFormat::Binary => encode_binary(m)?,
        MatrixFormat::Text => render_text(m)?.into_bytes(),
    };
    write_atomic(path.as_ref(), &bytes)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn encode_binary(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let (n, d) = (m.n(), m.d());
    let n32 = u32::try_from(n).map_err(|_| Error::Shape(format!("n = {n} exceeds u32")))?;
    let d32 = u32::try_from(d).map_err(|_| Error::Shape(format!("d = {d} exceeds u32")))?;
    let mut out = Vec::with_capacity(13 + 4 * n * d + 1);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for (row, values) in m.data.outer_iter().enumerate() {
        for (col, &v) in values.iter().enumerate() {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(Error::NonFinite { row: row + 1, col: col + 1 });
            }
            out.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    match &m.ids {
        None => out.push(0),
        Some(ids) => {
            out.push(1);
            for id in ids {
                let len = u32::try_from(id.len())
                    .map_err(|_| Error::Shape("id longer than u32::MAX bytes".into()))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(id.as_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::MalformedHeader(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::MalformedHeader("missing FSEL magic".into()));
    }
    let version = cur.take(1, "version")?[0];
    if version != VERSION {
        return Err(Error::MalformedHeader(format!("unsupported version {version}")));
    }
    let n = cur.u32("n")? as usize;
    let d = cur.u32("d")? as usize;
    if n == 0 || d == 0 {
        return Err(Error::MalformedHeader(format!("n and d must be positive, got n={n} d={d}")));
    }
    let mut flat = Vec::with_capacity(n.saturating_mul(d).min(bytes.len() / 4));
    for row in 0..n {
        let raw = cur.take(4 * d, &format!("row {}", row + 1))?;
        for (col, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::NonFinite { row: row + 1, col: col + 1 });
            }
            flat.push(f64::from(v));
        }
    }
    let ids = match cur.take(1, "id flag")?[0] {
        0 => None,
        1 => {
            let mut ids = Vec::with_capacity(n);
            for row in 0..n {
                let len = cur.u32("id length")? as usize;
                let raw = cur.take(len, "id")?;
                let id = String::from_utf8(raw.to_vec()).map_err(|_| Error::Parse {
                    row: row + 1,
                    message: "id is not valid utf-8".into(),
                })?;
                ids.push(id);
            }
            check_unique_ids(&ids)?;
            Some(ids)
        }
        flag => return Err(Error::MalformedHeader(format!("invalid id flag {flag}"))),
    };
    if cur.pos != bytes.len() {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after matrix",
            bytes.len() - cur.pos
        )));
    }
    let data = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::Shape(e.to_string()))?;
    EmbeddingMatrix::new(data, ids)
}

fn parse_header(line: Option<&str>, what: &str) -> Result<(usize, usize)> {
    let line = line.ok_or_else(|| Error::Empty(format!("{what} file has no header")))?;
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(Error::MalformedHeader(format!("expected two integers, got {line:?}")));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::MalformedHeader(format!("not a count: {s:?}")))
    };
    Ok((parse(fields[0])?, parse(fields[1])?))
}

fn parse_float(token: &str, row: usize) -> Result<f64> {
    token.parse::<f64>().map_err(|_| Error::Parse {
        row,
        message: format!("not a number: {token:?}"),
    })
}

pub fn parse_text(text: &str) -> Result<EmbeddingMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let (n, d) = parse_header(lines.next(), "matrix")?;
    if n == 0 || d == 0 {
        return Err(Error::MalformedHeader(format!("n and d must be positive, got n={n} d={d}")));
    }
    let mut flat = Vec::with_capacity(n * d);
    let mut ids: Vec<String> = Vec::new();
    let mut has_ids: Option<bool> = None;
    let mut rows = 0;
    for line in lines {
        rows += 1;
        let row = rows;
        if row > n {
            return Err(Error::Parse { row, message: format!("more rows than the declared n={n}") });
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        // the first row decides whether ids are present: d+1 fields means id + values
        let with_id = *has_ids.get_or_insert(fields.len() == d + 1);
        let values = if with_id { &fields[1..] } else { &fields[..] };
        if values.len() != d {
            return Err(Error::DimensionMismatch { row, expected: d, found: values.len() });
        }
        if with_id {
            ids.push(fields[0].to_string());
        }
        for (col, tok) in values.iter().enumerate() {
            let v = parse_float(tok, row)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col: col + 1 });
            }
            flat.push(v);
        }
    }
    if rows != n {
        return Err(Error::Parse {
            row: rows + 1,
            message: format!("declared n={n} rows, found {rows}"),
        });
    }
    let ids = if has_ids == Some(true) {
        check_unique_ids(&ids)?;
        Some(ids)
    } else {
        None
    };
    let data = Array2::from_shape_vec((n, d), flat).map_err(|e| Error::Shape(e.to_string()))?;
    EmbeddingMatrix::new(data, ids)
}

pub fn render_text(m: &EmbeddingMatrix) -> Result<String> {
    let mut out = format!("{} {}\n", m.n(), m.d());
    for (i, row) in m.data.outer_iter().enumerate() {
        if let Some(ids) = &m.ids {
            let id = &ids[i];
            if id.is_empty() || id.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("id {id:?} cannot be represented in the text format"),
                });
            }
            out.push_str(id);
            out.push(' ');
        }
        let fields: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMode {
    Mean,
    Sum,
}

/// Static word vectors keyed by token.
#[derive(Debug, Clone)]
pub struct WordVectorTable {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
}

impl WordVectorTable {
    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        if dim == 0 {
            return Err(Error::MalformedHeader("word vector dimension must be positive".into()));
        }
        let mut table = WordVectorTable { dim, index: HashMap::new(), vectors: Vec::new() };
        for (i, (token, vec)) in entries.into_iter().enumerate() {
            table.insert(i + 1, token, &vec)?;
        }
        if table.index.is_empty() {
            return Err(Error::Empty("word vector table has no entries".into()));
        }
        Ok(table)
    }

    fn insert(&mut self, line: usize, token: String, vec: &[f64]) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::DimensionMismatch { row: line, expected: self.dim, found: vec.len() });
        }
        if let Some(col) = vec.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: line, col: col + 1 });
        }
        if self.index.contains_key(&token) {
            return Err(Error::DuplicateToken { line, token });
        }
        self.index.insert(token, self.index.len());
        self.vectors.extend_from_slice(vec);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&slot| &self.vectors[slot * self.dim..(slot + 1) * self.dim])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }
}

/// Reads a word2vec-style text file: `V d` header, then `token v1 .. vd` lines.
/// Line numbers in errors count the header as line 1.
pub fn load_word_vectors(path: impl AsRef<Path>) -> Result<WordVectorTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_word_vectors(&text)
}

pub fn parse_word_vectors(text: &str) -> Result<WordVectorTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (vocab, dim) = parse_header(lines.next().map(|(_, l)| l), "word vector")?;
    if dim == 0 {
        return Err(Error::MalformedHeader("word vector dimension must be positive".into()));
    }
    let mut table = WordVectorTable {
        dim,
        index: HashMap::with_capacity(vocab),
        vectors: Vec::with_capacity(vocab * dim),
    };
    for (lineno, line) in lines {
        let line_no = lineno + 1;
        let mut fields = line.split_whitespace();
        let token = fields.next().unwrap_or_default().to_string();
        let vec = fields.map(|t| parse_float(t, line_no)).collect::<Result<Vec<f64>>>()?;
        table.insert(line_no, token, &vec)?;
    }
    if table.is_empty() {
        return Err(Error::Empty("word vector file has no entries".into()));
    }
    if table.len() != vocab {
        return Err(Error::MalformedHeader(format!(
            "header declares {vocab} tokens, file has {}",
            table.len()
        )));
    }
    Ok(table)
}

/// Lowercases, splits on Unicode whitespace and strips leading/trailing ASCII
/// punctuation from each token. Tokens that become empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation()))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Pools word vectors of each text's in-vocabulary tokens into one row.
/// Out-of-vocabulary tokens are skipped; a text with none left is an error.
pub fn embed_instances<S: AsRef<str> + Sync>(
    texts: &[S],
    table: &WordVectorTable,
    mode: PoolingMode,
) -> Result<EmbeddingMatrix> {
    if texts.is_empty() {
        return Err(Error::Empty("no texts to embed".into()));
    }
    let dim = table.dim();
    let rows = par::map_range(texts.len(), |i| -> Result<Vec<f64>> {
        let mut acc = vec![0.0; dim];
        let mut count = 0usize;
        for token in tokenize(texts[i].as_ref()) {
            if let Some(v) = table.get(&token) {
                acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::NoKnownTokens { index: i });
        }
        if mode == PoolingMode::Mean {
            let t = count as f64;
            acc.iter_mut().for_each(|a| *a /= t);
        }
        Ok(acc)
    });
    let mut flat = Vec::with_capacity(texts.len() * dim);
    for row in rows {
        flat.extend(row?);
    }
    let data = Array2::from_shape_vec((texts.len(), dim), flat).map_err(|e| Error::Shape(e.to_string()))?;
    EmbeddingMatrix::new(data, None)
}

/// Scales each row to unit Euclidean norm.
pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let mut data = m.data.clone();
    for (i, mut row) in data.outer_iter_mut().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: i + 1 });
        }
        row.mapv_inplace(|v| v / norm);
    }
    EmbeddingMatrix::new(data, m.ids.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    fn table_ab() -> WordVectorTable {
        parse_word_vectors("2 2\na 1.0 0.0\nb 0.0 1.0\n").unwrap()
    }

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            EmbeddingMatrix::new(array![[1.0, f64::NAN]], None),
            Err(Error::NonFinite { row: 1, col: 2 })
        ));
        assert!(EmbeddingMatrix::new(Array2::zeros((0, 3)), None).is_err());
        assert!(matches!(
            EmbeddingMatrix::new(array![[1.0], [2.0]], Some(vec!["x".into(), "x".into()])),
            Err(Error::DuplicateId { row: 2, .. })
        ));
    }

    #[test]
    fn binary_two_by_three() {
        let m = EmbeddingMatrix::new(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], None).unwrap();
        let bytes = encode_binary(&m).unwrap();
        assert_eq!(&bytes[..5], b"FSEL\x01");
        assert_eq!(&bytes[5..9], &2u32.to_le_bytes());
        assert_eq!(&bytes[9..13], &3u32.to_le_bytes());
        assert_eq!(bytes.len(), 13 + 24 + 1);
        let back = decode_binary(&bytes).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn binary_rejects_bad_input() {
        assert!(matches!(decode_binary(b"FSEX\x01"), Err(Error::MalformedHeader(_))));
        let m = EmbeddingMatrix::new(array![[1.0, 2.0]], None).unwrap();
        let mut bytes = encode_binary(&m).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_binary(&bytes), Err(Error::MalformedHeader(_))));
        let mut bytes = encode_binary(&m).unwrap();
        bytes[13..17].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode_binary(&bytes), Err(Error::NonFinite { row: 1, col: 1 })));
    }

    #[test]
    fn text_short_row_names_row_two() {
        let err = parse_text("2 3\n1 2 3\n4 5\n").unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { row: 2, expected: 3, found: 2 }), "{err}");
        assert!(err.to_string().contains("row 2"));
    }

    #[test]
    fn text_with_ids() {
        let m = parse_text("2 2\nfirst 1 2\nsecond 3.5 -4\n").unwrap();
        assert_eq!(m.ids().unwrap(), ["first", "second"]);
        assert_eq!(m.row(1).to_vec(), vec![3.5, -4.0]);
        let again = parse_text(&render_text(&m).unwrap()).unwrap();
        assert_eq!(again, m);
        assert!(matches!(parse_text("2 1\na 1\na 2\n"), Err(Error::DuplicateId { row: 2, .. })));
        assert!(matches!(parse_text("1 1\nnan\n"), Err(Error::NonFinite { row: 1, col: 1 })));
        assert!(matches!(parse_text("3 1\n1\n2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_text("x 1\n1\n"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn zero_matrix_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = EmbeddingMatrix::new(array![[0.0]], None).unwrap();
        for fmt in [MatrixFormat::Binary, MatrixFormat::Text] {
            let p = dir.path().join("zero");
            write_matrix(&m, &p, fmt).unwrap();
            assert_eq!(load_matrix(&p, fmt).unwrap(), m);
            assert_eq!(load_matrix_auto(&p).unwrap(), m);
        }
    }

    #[test]
    fn ids_order_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let ids: Vec<String> = ["z", "a", "m"].iter().map(|s| s.to_string()).collect();
        let m = EmbeddingMatrix::new(array![[1.0], [2.0], [3.0]], Some(ids.clone())).unwrap();
        let p = dir.path().join("m.fsel");
        write_matrix(&m, &p, MatrixFormat::Binary).unwrap();
        assert_eq!(load_matrix(&p, MatrixFormat::Binary).unwrap().ids().unwrap(), ids.as_slice());
    }

    #[test]
    fn word_vectors() {
        let t = table_ab();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("b"), Some(&[0.0, 1.0][..]));
        assert!(matches!(
            parse_word_vectors("2 2\na 1 0\na 0 1\n"),
            Err(Error::DuplicateToken { line: 3, .. })
        ));
        assert!(matches!(
            parse_word_vectors("2 2\na 1 0\nb 0\n"),
            Err(Error::DimensionMismatch { row: 3, .. })
        ));
        assert!(matches!(parse_word_vectors(""), Err(Error::Empty(_))));
        assert!(matches!(parse_word_vectors("0 2\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("  Hello, WORLD!  (ok) -- "), vec!["hello", "world", "ok"]);
        assert_eq!(tokenize("don't\tstop"), vec!["don't", "stop"]);
        assert!(tokenize("... !!").is_empty());
    }

    #[test]
    fn pooling_examples() {
        let t = table_ab();
        for mode in [PoolingMode::Mean, PoolingMode::Sum] {
            let m = embed_instances(&["a"], &t, mode).unwrap();
            assert_eq!(m.row(0).to_vec(), vec![1.0, 0.0]);
        }
        let mean = embed_instances(&["a b"], &t, PoolingMode::Mean).unwrap();
        assert_eq!(mean.row(0).to_vec(), vec![0.5, 0.5]);
        let sum = embed_instances(&["A, b. zzz"], &t, PoolingMode::Sum).unwrap();
        assert_eq!(sum.row(0).to_vec(), vec![1.0, 1.0]);
        assert!(matches!(
            embed_instances(&["a", "qq rr"], &t, PoolingMode::Mean),
            Err(Error::NoKnownTokens { index: 1 })
        ));
        let empty: [&str; 0] = [];
        assert!(embed_instances(&empty, &t, PoolingMode::Mean).is_err());
    }

    #[test]
    fn normalize_examples() {
        let m = EmbeddingMatrix::new(array![[3.0, 4.0], [0.0, 1.0]], None).unwrap();
        let u = normalize_rows(&m).unwrap();
        assert!((u.data()[[0, 0]] - 0.6).abs() < 1e-12);
        assert!((u.data()[[0, 1]] - 0.8).abs() < 1e-12);
        assert_eq!(u.row(1).to_vec(), vec![0.0, 1.0]);
        let z = EmbeddingMatrix::new(array![[1.0, 0.0], [0.0, 0.0]], None).unwrap();
        assert!(matches!(normalize_rows(&z), Err(Error::ZeroNorm { row: 2 })));
    }

    #[test]
    fn distinct_rows_counts_duplicates() {
        let m = EmbeddingMatrix::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, -0.0], [0.0, 0.0]], None).unwrap();
        assert_eq!(m.distinct_rows(), 2);
    }

    fn arb_matrix() -> impl Strategy<Value = (usize, usize, Vec<f32>, bool)> {
        (1usize..20, 1usize..10, any::<bool>()).prop_flat_map(|(n, d, ids)| {
            (Just(n), Just(d), prop::collection::vec(-1e6f32..1e6, n * d), Just(ids))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn binary_file_round_trip_is_byte_identical((n, d, vals, with_ids) in arb_matrix()) {
            // build a valid file by hand, then decode and re-encode
            let mut file = Vec::new();
            file.extend_from_slice(b"FSEL\x01");
            file.extend_from_slice(&(n as u32).to_le_bytes());
            file.extend_from_slice(&(d as u32).to_le_bytes());
            for v in &vals {
                file.extend_from_slice(&v.to_le_bytes());
            }
            file.push(u8::from(with_ids));
            if with_ids {
                for i in 0..n {
                    let id = format!("inst-{i}");
                    file.extend_from_slice(&(id.len() as u32).to_le_bytes());
                    file.extend_from_slice(id.as_bytes());
                }
            }
            let m = decode_binary(&file).unwrap();
            prop_assert_eq!(encode_binary(&m).unwrap(), file);
        }

        #[test]
        fn text_round_trip_is_exact(rows in prop::collection::vec(prop::collection::vec(-1e9f64..1e9, 4), 1..30)) {
            let m = EmbeddingMatrix::from_rows(rows).unwrap();
            prop_assert_eq!(parse_text(&render_text(&m).unwrap()).unwrap(), m);
        }

        #[test]
        fn normalized_rows_have_unit_norm(rows in prop::collection::vec(prop::collection::vec(0.01f64..100.0, 5), 1..20)) {
            let m = EmbeddingMatrix::from_rows(rows).unwrap();
            let u = normalize_rows(&m).unwrap();
            for row in u.data().outer_iter() {
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                prop_assert!((norm - 1.0).abs() <= 1e-12);
            }
            let twice = normalize_rows(&u).unwrap();
            for (a, b) in twice.data().iter().zip(u.data().iter()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
