//! Single-file binary container.
//!
//! | bytes | content |
//! |---|---|
//! | 8 | magic `MFATLAS\0` |
//! | 4 | format version, u32 LE |
//! | 4 | section count `s`, u32 LE |
//! | 52 * s | section table: tag (4 ASCII bytes), offset u64 LE, length u64 LE, SHA-256 of the payload |
//! | ... | section payloads, in table order |
//! | 32 | SHA-256 of every preceding byte |
//!
//! Sections: `META` (JSON: documents, aspect ids, summaries, layout settings),
//! `EMBD` (per aspect: n u32, dim u32, then n * dim f64 LE), `PCAB` (per
//! basis: dim u32, k u32, requested k u32, mean, k * dim components, k
//! variances, f64 LE) and `LCRD` (per layout: n u32, d u32, n * d f64 LE).
//! Aspects, bases and layouts appear in the order `META` lists them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::atlas::{AspectStore, Atlas, StoredLayout};
use super::records::{write_atomic, AbstractRecord};
use crate::error::{Error, Result};
use crate::geometry::{AspectId, AspectWeights, EmbeddingVector, Normalization, PcaBasis};
use crate::tsne::{Coordinates, TsneConfig};

pub const MAGIC: &[u8; 8] = b"MFATLAS\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;
const ENTRY_LEN: usize = 52;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct Meta {
    normalization: Normalization,
    documents: Vec<AbstractRecord>,
    aspects: Vec<AspectMeta>,
    pca: Vec<AspectId>,
    layouts: Vec<LayoutMeta>,
}

#[derive(Serialize, Deserialize)]
struct AspectMeta {
    aspect: AspectId,
    doc_ids: Vec<String>,
    summaries: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct LayoutMeta {
    id: String,
    weights: AspectWeights,
    config: TsneConfig,
    doc_ids: Vec<String>,
    final_kl: f64,
    converged: bool,
    iterations_run: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::InvalidConfig(format!("{v} does not fit the atlas format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_atlas(atlas: &Atlas) -> Result<Vec<u8>> {
    atlas.validate()?;
    let meta = Meta {
        normalization: atlas.normalization,
        documents: atlas.documents.clone(),
        aspects: atlas
            .aspects
            .iter()
            .map(|(a, s)| AspectMeta { aspect: a.clone(), doc_ids: s.doc_ids().to_vec(), summaries: s.summaries().to_vec() })
            .collect(),
        pca: atlas.pca.keys().cloned().collect(),
        layouts: atlas
            .layouts
            .iter()
            .map(|l| LayoutMeta {
                id: l.id.clone(),
                weights: l.weights.clone(),
                config: l.config.clone(),
                doc_ids: l.doc_ids.clone(),
                final_kl: l.final_kl,
                converged: l.converged,
                iterations_run: l.iterations_run,
            })
            .collect(),
    };
    let meta = serde_json::to_vec(&meta)?;

    let mut embd = Vec::new();
    for store in atlas.aspects.values() {
        put_u32(&mut embd, store.len())?;
        put_u32(&mut embd, store.dim())?;
        for e in store.embeddings() {
            put_f64s(&mut embd, e.as_slice());
        }
    }
    let mut pcab = Vec::new();
    for basis in atlas.pca.values() {
        put_u32(&mut pcab, basis.dim())?;
        put_u32(&mut pcab, basis.k())?;
        put_u32(&mut pcab, basis.requested_k())?;
        put_f64s(&mut pcab, basis.mean().as_slice());
        put_f64s(&mut pcab, basis.components());
        put_f64s(&mut pcab, basis.explained_variance());
    }
    let mut lcrd = Vec::new();
    for l in &atlas.layouts {
        put_u32(&mut lcrd, l.coords.len())?;
        put_u32(&mut lcrd, l.coords.dim())?;
        put_f64s(&mut lcrd, l.coords.as_slice());
    }

    let sections: [(&[u8; 4], Vec<u8>); 4] = [(b"META", meta), (b"EMBD", embd), (b"PCAB", pcab), (b"LCRD", lcrd)];
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    let mut offset = (HEADER_LEN + ENTRY_LEN * sections.len()) as u64;
    for (tag, payload) in &sections {
        out.extend_from_slice(*tag);
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(payload));
        offset += payload.len() as u64;
    }
    for (_, payload) in &sections {
        out.extend_from_slice(payload);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("section {} is shorter than its contents", self.section)))?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Corrupt("size overflow".into()))?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.at != self.buf.len() {
            return Err(Error::Corrupt(format!("trailing bytes in section {}", self.section)));
        }
        Ok(())
    }
}

/// Parses and verifies an atlas. Nothing is returned unless every checksum
/// matches and the contents validate.
pub fn decode_atlas(bytes: &[u8]) -> Result<Atlas> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Corrupt("not an atlas file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion { found: version, supported: FORMAT_VERSION });
    }
    if bytes.len() < HEADER_LEN + DIGEST_LEN {
        return Err(Error::Checksum("file (truncated)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum("file".into()));
    }
    let count = u32::from_le_bytes(body[12..16].try_into().expect("4 bytes")) as usize;
    let mut sections: BTreeMap<[u8; 4], &[u8]> = BTreeMap::new();
    for i in 0..count {
        let at = HEADER_LEN + i * ENTRY_LEN;
        let entry = body.get(at..at + ENTRY_LEN).ok_or_else(|| Error::Corrupt("section table overruns file".into()))?;
        let tag: [u8; 4] = entry[..4].try_into().expect("4 bytes");
        let offset = u64::from_le_bytes(entry[4..12].try_into().expect("8 bytes")) as usize;
        let len = u64::from_le_bytes(entry[12..20].try_into().expect("8 bytes")) as usize;
        let payload = offset
            .checked_add(len)
            .and_then(|end| body.get(offset..end))
            .ok_or_else(|| Error::Corrupt(format!("section {} overruns file", String::from_utf8_lossy(&tag))))?;
        if Sha256::digest(payload).as_slice() != &entry[20..] {
            return Err(Error::Checksum(format!("section {}", String::from_utf8_lossy(&tag))));
        }
        sections.insert(tag, payload);
    }
    let section = |tag: &[u8; 4], name: &'static str| -> Result<Reader<'_>> {
        let buf = sections.get(tag).ok_or_else(|| Error::Corrupt(format!("missing section {name}")))?;
        Ok(Reader { buf, at: 0, section: name })
    };

    let meta: Meta = serde_json::from_slice(section(b"META", "META")?.buf)?;

    let mut embd = section(b"EMBD", "EMBD")?;
    let mut aspects = BTreeMap::new();
    for am in meta.aspects {
        let n = embd.u32()?;
        let dim = embd.u32()?;
        if n != am.doc_ids.len() || n != am.summaries.len() {
            return Err(Error::Corrupt(format!("aspect {}: {n} embeddings for {} ids", am.aspect, am.doc_ids.len())));
        }
        let mut entries = Vec::with_capacity(n);
        for (id, summaries) in am.doc_ids.into_iter().zip(am.summaries) {
            entries.push((id, EmbeddingVector::new(embd.f64s(dim)?)?, summaries));
        }
        aspects.insert(am.aspect, AspectStore::new(entries)?);
    }
    embd.finish()?;

    let mut pcab = section(b"PCAB", "PCAB")?;
    let mut pca = BTreeMap::new();
    for aspect in meta.pca {
        let dim = pcab.u32()?;
        let k = pcab.u32()?;
        let requested = pcab.u32()?;
        let mean = EmbeddingVector::new(pcab.f64s(dim)?)?;
        let components = pcab.f64s(k * dim)?;
        let variance = pcab.f64s(k)?;
        pca.insert(aspect, PcaBasis::from_parts(mean, components, variance, requested)?);
    }
    pcab.finish()?;

    let mut lcrd = section(b"LCRD", "LCRD")?;
    let mut layouts = Vec::new();
    for lm in meta.layouts {
        let n = lcrd.u32()?;
        let d = lcrd.u32()?;
        let coords = Coordinates::new(d, lcrd.f64s(n * d)?)?;
        layouts.push(StoredLayout {
            id: lm.id,
            weights: lm.weights,
            config: lm.config,
            doc_ids: lm.doc_ids,
            coords,
            final_kl: lm.final_kl,
            converged: lm.converged,
            iterations_run: lm.iterations_run,
        });
    }
    lcrd.finish()?;

    let atlas = Atlas { normalization: meta.normalization, documents: meta.documents, aspects, pca, layouts };
    atlas.validate()?;
    Ok(atlas)
}

/// Writes atomically: readers see the old file or the new one, never a mix.
pub fn save_atlas(path: &Path, atlas: &Atlas) -> Result<()> {
    write_atomic(path, &encode_atlas(atlas)?)
}

pub fn load_atlas(path: &Path) -> Result<Atlas> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_atlas(&bytes)
}

/// Hex SHA-256 of the encoded atlas; changes whenever any content does.
pub fn atlas_fingerprint(atlas: &Atlas) -> Result<String> {
    Ok(hex::encode(Sha256::digest(encode_atlas(atlas)?)))
}
