use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::autodiff::Tensor;

#[derive(Debug, Error)]
pub enum EmbeddingIoError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingKind {
    Entity,
    RelType,
    RelValue,
}

impl fmt::Display for EmbeddingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Entity => "entity",
            Self::RelType => "rel_type",
            Self::RelValue => "rel_value",
        })
    }
}

impl FromStr for EmbeddingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "entity" => Ok(Self::Entity),
            "rel_type" => Ok(Self::RelType),
            "rel_value" => Ok(Self::RelValue),
            other => Err(format!("unknown embedding kind {other:?}")),
        }
    }
}

/// Learned vectors: entities in `R^d`, relation types and values in
/// `R^{d/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub entities: Tensor,
    pub rel_types: Tensor,
    pub rel_values: Tensor,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.entities.shape.cols()
    }

    /// `e_t ∥ e_v`.
    pub fn relation(&self, t: usize, v: usize) -> Vec<f64> {
        [self.rel_types.row(t), self.rel_values.row(v)].concat()
    }

    pub fn is_finite(&self) -> bool {
        self.entities.is_finite() && self.rel_types.is_finite() && self.rel_values.is_finite()
    }

    pub fn get(&self, kind: EmbeddingKind) -> &Tensor {
        match kind {
            EmbeddingKind::Entity => &self.entities,
            EmbeddingKind::RelType => &self.rel_types,
            EmbeddingKind::RelValue => &self.rel_values,
        }
    }
}

/// Writes `#emb v1 kind=<kind> dim=<d>` then `id<TAB>values` rows. Values
/// use the shortest representation that reads back to the same `f64`.
pub fn write_embeddings<W: Write>(
    mut w: W,
    kind: EmbeddingKind,
    table: &Tensor,
) -> std::io::Result<()> {
    let d = table.shape.cols();
    writeln!(w, "#emb v1 kind={kind} dim={d}")?;
    for r in 0..table.shape.rows() {
        let row: Vec<String> = table.row(r).iter().map(|v| format!("{v:?}")).collect();
        writeln!(w, "{r}\t{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_embeddings<R: BufRead>(r: R) -> Result<(EmbeddingKind, Tensor), EmbeddingIoError> {
    let mut lines = r.lines();
    let bad = |line: usize, reason: String| EmbeddingIoError::Parse { line, reason };
    let header = lines.next().ok_or_else(|| bad(1, "empty input".into()))??;
    let rest = header
        .strip_prefix("#emb v1 ")
        .ok_or_else(|| bad(1, format!("bad header {header:?}")))?;
    let mut kind = None;
    let mut dim = None;
    for field in rest.split_whitespace() {
        match field.split_once('=') {
            Some(("kind", k)) => kind = Some(k.parse::<EmbeddingKind>().map_err(|e| bad(1, e))?),
            Some(("dim", d)) => {
                dim = Some(
                    d.parse::<usize>()
                        .map_err(|_| bad(1, format!("bad dim {d:?}")))?,
                )
            }
            _ => return Err(bad(1, format!("unexpected header field {field:?}"))),
        }
    }
    let (kind, dim) = match (kind, dim) {
        (Some(k), Some(d)) => (k, d),
        _ => return Err(bad(1, "header needs kind and dim".into())),
    };
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let n = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| bad(n, "expected id<TAB>values".into()))?;
        let id: usize = id.parse().map_err(|_| bad(n, format!("bad id {id:?}")))?;
        if id != rows {
            return Err(bad(n, format!("expected id {rows}, found {id}")));
        }
        let before = data.len();
        for v in values.split(' ') {
            data.push(
                v.parse::<f64>()
                    .map_err(|_| bad(n, format!("bad value {v:?}")))?,
            );
        }
        if data.len() - before != dim {
            return Err(bad(
                n,
                format!("expected {dim} values, found {}", data.len() - before),
            ));
        }
        rows += 1;
    }
    Ok((kind, Tensor::matrix(rows, dim, data)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_errors() {
        assert!(read_embeddings("#emb v2 kind=entity dim=2\n".as_bytes()).is_err());
        assert!(read_embeddings("#emb v1 kind=thing dim=2\n".as_bytes()).is_err());
        assert!(read_embeddings("#emb v1 kind=entity dim=2\n0\t1.0\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(rows in 0usize..6, dim in 1usize..5, seed in any::<u64>()) {
            let mut r = crate::rng::stream(seed, 0);
            let t = Tensor::matrix(rows, dim, crate::rng::uniform(&mut r, rows * dim, 3.0));
            let mut buf = Vec::new();
            write_embeddings(&mut buf, EmbeddingKind::RelValue, &t).unwrap();
            let (kind, back) = read_embeddings(buf.as_slice()).unwrap();
            prop_assert_eq!(kind, EmbeddingKind::RelValue);
            prop_assert_eq!(back.data, t.data);
        }
    }
}
