//! Binary persistence for [`SparseFeatureMatrix`].
//!
//! Layout (little endian):
//!
//! ```text
//! magic    b"MLHO"
//! version  u32
//! n_feat   u32, then per feature: kind u8, code_a str, has_b u8, [code_b str]
//! n_rows   u32, then per row: patient_id str, nnz u32,
//!          nnz × (index delta u32, value f64)
//! str      u32 byte length + UTF-8 bytes
//! ```
//!
//! Index deltas are relative to the previous index in the row; the first
//! delta is the absolute index.

use std::io::{Read, Write};

use super::{FeatureDescriptor, FeatureKind, SparseFeatureMatrix, TspmError};

pub const CONTAINER_MAGIC: &[u8; 4] = b"MLHO";
pub const CONTAINER_VERSION: u32 = 1;

fn kind_tag(kind: FeatureKind) -> u8 {
    match kind {
        FeatureKind::Raw => 0,
        FeatureKind::Sequence => 1,
        FeatureKind::Demographic => 2,
    }
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_str<W: Write>(w: &mut W, s: &str) -> std::io::Result<()> {
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())
}

pub fn write_matrix<W: Write>(matrix: &SparseFeatureMatrix, mut w: W) -> Result<(), TspmError> {
    w.write_all(CONTAINER_MAGIC)?;
    write_u32(&mut w, CONTAINER_VERSION)?;
    write_u32(&mut w, matrix.n_features() as u32)?;
    for f in matrix.features() {
        w.write_all(&[kind_tag(f.kind)])?;
        write_str(&mut w, &f.code_a)?;
        match &f.code_b {
            Some(b) => {
                w.write_all(&[1])?;
                write_str(&mut w, b)?;
            }
            None => w.write_all(&[0])?,
        }
    }
    write_u32(&mut w, matrix.n_rows() as u32)?;
    for (i, id) in matrix.patient_ids().iter().enumerate() {
        write_str(&mut w, id)?;
        let (idx, vals) = matrix.row(i);
        write_u32(&mut w, idx.len() as u32)?;
        let mut prev = 0u32;
        for (&j, &v) in idx.iter().zip(vals) {
            write_u32(&mut w, j - prev)?;
            w.write_all(&v.to_le_bytes())?;
            prev = j;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], TspmError> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| TspmError::Container(format!("truncated input: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8, TspmError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32, TspmError> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn f64(&mut self) -> Result<f64, TspmError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String, TspmError> {
        let len = self.u32()? as usize;
        let mut buf = Vec::new();
        (&mut self.inner)
            .take(len as u64)
            .read_to_end(&mut buf)
            .map_err(|e| TspmError::Container(e.to_string()))?;
        if buf.len() != len {
            return Err(TspmError::Container("truncated string".into()));
        }
        String::from_utf8(buf).map_err(|e| TspmError::Container(e.to_string()))
    }
}

pub fn read_matrix<R: Read>(input: R) -> Result<SparseFeatureMatrix, TspmError> {
    let mut r = Reader { inner: input };
    if &r.bytes::<4>()? != CONTAINER_MAGIC {
        return Err(TspmError::Container("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(TspmError::Container(format!("unsupported version {version}")));
    }
    let n_features = r.u32()? as usize;
    let mut features = Vec::with_capacity(n_features.min(1 << 20));
    for _ in 0..n_features {
        let kind = match r.u8()? {
            0 => FeatureKind::Raw,
            1 => FeatureKind::Sequence,
            2 => FeatureKind::Demographic,
            t => return Err(TspmError::Container(format!("unknown feature kind {t}"))),
        };
        let code_a = r.string()?;
        let code_b = match r.u8()? {
            0 => None,
            1 => Some(r.string()?),
            t => return Err(TspmError::Container(format!("bad code_b flag {t}"))),
        };
        features.push(FeatureDescriptor { kind, code_a, code_b });
    }
    let n_rows = r.u32()? as usize;
    let mut ids = Vec::with_capacity(n_rows.min(1 << 20));
    let mut rows = Vec::with_capacity(n_rows.min(1 << 20));
    for _ in 0..n_rows {
        ids.push(r.string()?);
        let nnz = r.u32()? as usize;
        let mut row = Vec::with_capacity(nnz.min(1 << 16));
        let mut prev = 0u32;
        for _ in 0..nnz {
            let j = prev
                .checked_add(r.u32()?)
                .ok_or_else(|| TspmError::Container("index overflow".into()))?;
            row.push((j, r.f64()?));
            prev = j;
        }
        rows.push(row);
    }
    SparseFeatureMatrix::from_rows(features, ids, rows)
}

/// Debug export, one `patient_id,feature,value` line per stored entry.
pub fn write_matrix_text<W: Write>(matrix: &SparseFeatureMatrix, mut w: W) -> std::io::Result<()> {
    writeln!(w, "patient_id,feature,value")?;
    for (i, id) in matrix.patient_ids().iter().enumerate() {
        let (idx, vals) = matrix.row(i);
        for (&j, &v) in idx.iter().zip(vals) {
            writeln!(w, "{id},{},{v}", matrix.features()[j as usize])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_matrix() -> impl Strategy<Value = SparseFeatureMatrix> {
        (1usize..6, 0usize..6).prop_flat_map(|(n_feat, n_rows)| {
            let rows = proptest::collection::vec(
                proptest::collection::btree_map(0..n_feat as u32, 1u32..5, 0..=n_feat),
                n_rows,
            );
            rows.prop_map(move |rows| {
                let features = (0..n_feat).map(|j| FeatureDescriptor::raw(format!("C{j}"))).collect();
                let ids = (0..rows.len()).map(|i| format!("p{i}")).collect();
                let rows = rows
                    .into_iter()
                    .map(|r| r.into_iter().map(|(j, v)| (j, f64::from(v) * 0.5)).collect())
                    .collect();
                SparseFeatureMatrix::from_rows(features, ids, rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn container_round_trip(m in arb_matrix()) {
            let mut buf = Vec::new();
            write_matrix(&m, &mut buf).unwrap();
            prop_assert_eq!(&buf[..4], CONTAINER_MAGIC);
            prop_assert_eq!(read_matrix(&buf[..]).unwrap(), m);
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_matrix(&b"NOPE\x01\x00\x00\x00"[..]).is_err());
        let m = SparseFeatureMatrix::from_rows(
            vec![FeatureDescriptor::sequence("A", "B").unwrap()],
            vec!["p".into()],
            vec![vec![(0, 1.0)]],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_matrix(&m, &mut buf).unwrap();
        assert!(read_matrix(&buf[..buf.len() - 3]).is_err());
        let mut text = Vec::new();
        write_matrix_text(&m, &mut text).unwrap();
        assert_eq!(String::from_utf8(text).unwrap(), "patient_id,feature,value\np,A->B,1\n");
    }
}
