//! Binary field snapshots.
//!
//! One ASCII header line
//! `qg2 field v1 N=<n> L=<float> layers=2 kind=<q|psi|control> [key=value ...]`
//! terminated by `\n`, followed by little-endian `f64` values in layer-major,
//! row-major coefficient order (`2·N·N` per block). Control snapshots append
//! `nt=<count> T=<horizon>` to the header and store `nt` consecutive blocks.

use std::io::{BufRead, Write};

use super::{Dealias, GridSpec, LayeredField};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnapshotKind {
    Q,
    Psi,
    Control,
}

impl SnapshotKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SnapshotKind::Q => "q",
            SnapshotKind::Psi => "psi",
            SnapshotKind::Control => "control",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "q" => Ok(SnapshotKind::Q),
            "psi" => Ok(SnapshotKind::Psi),
            "control" => Ok(SnapshotKind::Control),
            other => Err(Error::Snapshot(format!("unknown kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotHeader {
    pub n: usize,
    pub length: f64,
    pub kind: SnapshotKind,
    /// Extra `key=value` pairs after `kind`, in order.
    pub extra: Vec<(String, String)>,
}

impl SnapshotHeader {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(
            w,
            "qg2 field v1 N={} L={:?} layers=2 kind={}",
            self.n,
            self.length,
            self.kind.as_str()
        )?;
        for (k, v) in &self.extra {
            write!(w, " {k}={v}")?;
        }
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read<R: BufRead>(r: &mut R) -> Result<Self> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        let line = line
            .strip_suffix('\n')
            .ok_or_else(|| Error::Snapshot("missing header terminator".into()))?;
        let mut parts = line.split(' ');
        for expect in ["qg2", "field", "v1"] {
            if parts.next() != Some(expect) {
                return Err(Error::Snapshot(format!("bad magic in header `{line}`")));
            }
        }
        let mut n = None;
        let mut length = None;
        let mut kind = None;
        let mut layers = None;
        let mut extra = Vec::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Snapshot(format!("bad header token `{p}`")))?;
            let bad = || Error::Snapshot(format!("bad value for `{k}`: `{v}`"));
            match k {
                "N" => n = Some(v.parse::<usize>().map_err(|_| bad())?),
                "L" => length = Some(v.parse::<f64>().map_err(|_| bad())?),
                "layers" => layers = Some(v.parse::<usize>().map_err(|_| bad())?),
                "kind" => kind = Some(SnapshotKind::parse(v)?),
                _ => extra.push((k.to_string(), v.to_string())),
            }
        }
        if layers != Some(2) {
            return Err(Error::Snapshot("layers must be 2".into()));
        }
        Ok(Self {
            n: n.ok_or_else(|| Error::Snapshot("missing N".into()))?,
            length: length.ok_or_else(|| Error::Snapshot("missing L".into()))?,
            kind: kind.ok_or_else(|| Error::Snapshot("missing kind".into()))?,
            extra,
        })
    }

    pub fn extra(&self, key: &str) -> Option<&str> {
        self.extra.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

pub fn write_values<W: Write, T: Scalar>(w: &mut W, values: &[T]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_values<R: BufRead, T: Scalar>(r: &mut R, count: usize) -> Result<Vec<T>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Snapshot(format!("truncated data block: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
        .collect())
}

pub fn write_field<W: Write, T: Scalar>(w: &mut W, field: &LayeredField<T>, kind: SnapshotKind) -> Result<()> {
    SnapshotHeader {
        n: field.grid().n(),
        length: field.grid().length().to_f64_lossy(),
        kind,
        extra: Vec::new(),
    }
    .write(w)?;
    write_values(w, field.coeffs())
}

/// Reads a `q` or `psi` snapshot. The dealiasing ratio is not persisted and is
/// supplied by the caller.
pub fn read_field<R: BufRead, T: Scalar>(r: &mut R, dealias: Dealias) -> Result<(LayeredField<T>, SnapshotKind)> {
    let header = SnapshotHeader::read(r)?;
    if header.kind == SnapshotKind::Control {
        return Err(Error::Snapshot("control block is not a field snapshot".into()));
    }
    let grid = GridSpec::new(header.n, T::lit(header.length), dealias)?;
    let values = read_values(r, 2 * grid.modes())?;
    Ok((LayeredField::from_coeffs(grid, values)?, header.kind))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let g = GridSpec::new(3, 2.5, Dealias::THREE_HALVES).unwrap();
        let f = LayeredField::single_mode(g, 1, 2, 3, 1.5f64);
        let mut out = Vec::new();
        write_field(&mut out, &f, SnapshotKind::Psi).unwrap();
        let header = b"qg2 field v1 N=3 L=2.5 layers=2 kind=psi\n";
        assert_eq!(&out[..header.len()], header);
        assert_eq!(out.len(), header.len() + 18 * 8);
        let idx = 9 + g.index(2, 3);
        let start = header.len() + idx * 8;
        assert_eq!(f64::from_le_bytes(out[start..start + 8].try_into().unwrap()), 1.5);

        let (back, kind) = read_field::<_, f64>(&mut out.as_slice(), Dealias::THREE_HALVES).unwrap();
        assert_eq!(kind, SnapshotKind::Psi);
        assert_eq!(back, f);
    }

    #[test]
    fn truncated_block_rejected() {
        let mut bytes = b"qg2 field v1 N=2 L=1.0 layers=2 kind=q\n".to_vec();
        bytes.extend_from_slice(&[0u8; 8 * 7]);
        assert!(read_field::<_, f64>(&mut bytes.as_slice(), Dealias::NONE).is_err());
    }
}
