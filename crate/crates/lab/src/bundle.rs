//! Decomposition bundles: named fields with a manifest.
//!
//! Layout, little endian: the magic `CZLB`, a `u32` version, a `u64` length
//! and the manifest as JSON, a `u32` field count, then per field a `u32` name
//! length, the name, a `u64` length and the field in the format of
//! [`crate::fieldio`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use czlab_core::czd::CzBundle;
use czlab_core::field::OperatorField;
use czlab_core::verify::Instance;

use crate::config::Boundary;
use crate::fieldio::{self, FormatError};

pub const MAGIC: &[u8; 4] = b"CZLB";
pub const VERSION: u32 = 1;

/// Index ranges of the stored pieces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ranges {
    /// Levels of `q_k`.
    pub q: [u32; 2],
    /// Levels of `p_k` and `b_n`.
    pub stopping: [u32; 2],
    /// Offsets `s` of `b_{n,s}`, `g^ℓ_{s,k}` and `g^r_{s,k}`.
    pub offsets: [u32; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub lambda: f64,
    #[serde(rename = "K")]
    pub depth: u32,
    pub d: u32,
    pub n: usize,
    pub boundary_mode: Boundary,
    pub ranges: Ranges,
    /// The instance the input came from.
    pub source: Instance,
    pub fields: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bundle {
    pub manifest: Manifest,
    pub fields: Vec<(String, OperatorField)>,
}

impl Bundle {
    pub fn from_cz(b: &CzBundle, source: Instance) -> Self {
        let dom = b.f.domain();
        let depth = dom.depth();
        let fields = b.named_fields();
        let manifest = Manifest {
            format_version: VERSION,
            lambda: b.lambda,
            depth,
            d: dom.dim(),
            n: b.f.dim(),
            boundary_mode: match dom.mode() {
                czlab_core::grid::BoundaryMode::Periodic => Boundary::Periodic,
                czlab_core::grid::BoundaryMode::Interior => Boundary::Interior,
            },
            ranges: Ranges { q: [0, depth], stopping: [1, depth], offsets: [1, depth.saturating_sub(1)] },
            source: source.with_lambda(b.lambda),
            fields: fields.iter().map(|(name, _)| name.clone()).collect(),
        };
        Self { manifest, fields }
    }

    pub fn field(&self, name: &str) -> Option<&OperatorField> {
        self.fields.iter().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    pub fn encode(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        out.extend_from_slice(&(self.fields.len() as u32).to_le_bytes());
        for (name, f) in &self.fields {
            let payload = fieldio::encode(f);
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(FormatError::Magic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::Version(version));
        }
        let len = r.u64()? as usize;
        let manifest: Manifest =
            serde_json::from_slice(r.take(len)?).map_err(|e| FormatError::Header(format!("manifest: {e}")))?;
        let count = r.u32()? as usize;
        let mut fields = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| FormatError::Header(e.to_string()))?;
            let len = r.u64()? as usize;
            fields.push((name, fieldio::decode(r.take(len)?)?));
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Length { expected: r.pos, found: bytes.len() });
        }
        let names: Vec<&String> = fields.iter().map(|(n, _)| n).collect();
        if names.len() != manifest.fields.len() || names.iter().zip(&manifest.fields).any(|(a, b)| *a != b) {
            return Err(FormatError::Header("field list differs from the manifest".into()));
        }
        Ok(Self { manifest, fields })
    }

    pub fn write(&self, path: &Path) -> Result<(), FormatError> {
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn read(path: &Path) -> Result<Self, FormatError> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(FormatError::Length { expected: self.pos.saturating_add(len), found: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use czlab_core::corpus::{generate, GeneratorSpec};
    use czlab_core::czd::cz_decompose;
    use czlab_core::grid::DyadicDomain;

    fn bundle(seed: u64) -> Bundle {
        let dom = DyadicDomain::periodic(1, 5).unwrap();
        let ci = generate(&GeneratorSpec::Spike { support: 0.1 }, dom, 2, seed).unwrap();
        let b = cz_decompose(&ci.field, 4.0).unwrap();
        Bundle::from_cz(&b, Instance::of(&ci))
    }

    #[test]
    fn byte_reproducible_and_round_trips() {
        let a = bundle(3);
        let bytes = a.encode();
        assert_eq!(bytes, bundle(3).encode());
        assert_ne!(bytes, bundle(4).encode());
        let back = Bundle::decode(&bytes).unwrap();
        assert_eq!(back.encode(), bytes);
        assert_eq!(back.manifest.lambda, 4.0);
        assert_eq!(back.manifest.fields[0], "f");
        assert!(back.field("zeta").is_some());
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = bundle(1).encode();
        assert!(Bundle::decode(&bytes[..bytes.len() - 3]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Bundle::decode(&extra).is_err());
    }
}
