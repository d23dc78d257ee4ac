//! Versioned binary index file: magic `UGIX`, u32 version, config block,
//! FastMap pivots, quantiser calibration, block-list entries, hash table,
//! then a trailing 64-bit checksum (leading bytes of the SHA-256 of
//! everything before it). Little-endian.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::index::{Block, GroupEntry, HashSlot, UgIndex};
use super::{FastMap, IndexConfig, Quantizer, MERSENNE_61};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};

pub const INDEX_MAGIC: &[u8; 4] = b"UGIX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// `None` as 0, `Some(i)` as `i + 1`.
fn opt_ref(x: Option<u32>) -> u32 {
    x.map_or(0, |i| i + 1)
}

fn ref_opt(x: u32) -> Option<u32> {
    x.checked_sub(1)
}

pub fn write_index(index: &UgIndex) -> Vec<u8> {
    let c = &index.config;
    let mut w = Writer::new();
    w.bytes(INDEX_MAGIC);
    w.u32(INDEX_FORMAT_VERSION);
    w.len_u32(c.projection_dim);
    w.u32(c.bits_per_dim);
    w.len_u32(c.block_size);
    w.u64(c.bucket_count.map_or(0, |t| t as u64));
    w.u64(c.hash_a.unwrap_or(0));
    w.u64(c.hash_b.unwrap_or(0));
    w.u64(c.scan_budget.map_or(0, |b| b as u64));
    w.u64(c.seed);
    w.u64(MERSENNE_61);
    w.u64(index.hash_a);
    w.u64(index.hash_b);

    w.len_u32(index.feature_dim);
    w.f64(index.norm_cap);
    w.len_u32(index.group_ids.len());
    for id in &index.group_ids {
        w.str(id);
    }

    let fm = &index.fastmap;
    w.len_u32(fm.dims());
    for (i, ((a, b), (fa, fb))) in fm.pivots.iter().zip(fm.pivot_coords()).enumerate() {
        w.len_u32(a.len());
        w.f64s(a);
        w.f64s(b);
        debug_assert_eq!(fa.len(), i);
        w.f64s(fa);
        w.f64s(fb);
        w.f64(fm.spans[i]);
    }
    w.len_u32(index.quantizer.mins.len());
    w.f64s(&index.quantizer.mins);
    w.f64s(&index.quantizer.maxs);

    w.len_u32(index.blocks.len());
    for b in &index.blocks {
        w.len_u32(b.entries.len());
        w.u32(opt_ref(b.prev));
        w.u32(opt_ref(b.next));
        for e in &b.entries {
            w.u64(e.zorder);
            w.u32(e.group);
            w.f64s(&e.feature);
        }
    }

    w.len_u32(index.buckets.len());
    for &h in &index.buckets {
        w.u32(opt_ref(h));
    }
    w.len_u32(index.slots.len());
    for s in &index.slots {
        w.u64(s.key);
        w.u64(s.pos);
        w.u32(opt_ref(s.next));
    }
    let sum = checksum(&w.buf);
    w.u64(sum);
    w.buf
}

fn corrupt(msg: &str) -> Error {
    Error::CorruptFile(msg.to_owned())
}

pub fn read_index(bytes: &[u8]) -> Result<UgIndex> {
    if bytes.len() < 16 || &bytes[..4] != INDEX_MAGIC {
        return Err(corrupt("bad index magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != INDEX_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: INDEX_FORMAT_VERSION,
        });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    if checksum(payload) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
        return Err(corrupt("checksum mismatch"));
    }
    let mut r = Reader::new(&payload[8..]);
    let nonzero = |x: u64| (x != 0).then_some(x);
    let config = IndexConfig {
        projection_dim: r.len()?,
        bits_per_dim: r.u32()?,
        block_size: r.len()?,
        bucket_count: nonzero(r.u64()?).map(|t| t as usize),
        hash_a: nonzero(r.u64()?),
        hash_b: nonzero(r.u64()?),
        scan_budget: nonzero(r.u64()?).map(|b| b as usize),
        seed: r.u64()?,
    };
    config.validate().map_err(|e| Error::CorruptFile(e.to_string()))?;
    if r.u64()? != MERSENNE_61 {
        return Err(corrupt("unexpected hash prime"));
    }
    let hash_a = r.u64()?;
    let hash_b = r.u64()?;

    let feature_dim = r.len()?;
    let norm_cap = r.f64()?;
    let n = r.len()?;
    let group_ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;

    let dims = r.len()?;
    let (mut pivots, mut pivot_coords, mut spans) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..dims {
        let len = r.len()?;
        pivots.push((r.f64s(len)?, r.f64s(len)?));
        pivot_coords.push((r.f64s(i)?, r.f64s(i)?));
        spans.push(r.f64()?);
    }
    let fastmap = FastMap::from_parts(pivots, pivot_coords, spans);
    let qdims = r.len()?;
    let quantizer = Quantizer {
        mins: r.f64s(qdims)?,
        maxs: r.f64s(qdims)?,
        bits: config.bits_per_dim,
    };

    let nblocks = r.len()?;
    let mut blocks = Vec::with_capacity(nblocks.min(n + 1));
    let mut total = 0;
    for bi in 0..nblocks {
        let len = r.len()?;
        let prev = ref_opt(r.u32()?);
        let next = ref_opt(r.u32()?);
        let full = bi + 1 == nblocks || len == config.block_size;
        if len == 0 || len > config.block_size || !full {
            return Err(corrupt("malformed block"));
        }
        if prev != (bi as u32).checked_sub(1) || next != (bi + 1 < nblocks).then_some(bi as u32 + 1) {
            return Err(corrupt("broken block links"));
        }
        let mut entries = Vec::with_capacity(len);
        for _ in 0..len {
            let zorder = r.u64()?;
            let group = r.u32()?;
            if group as usize >= n {
                return Err(corrupt("entry references unknown group"));
            }
            entries.push(GroupEntry {
                zorder,
                group,
                feature: r.f64s(feature_dim)?,
            });
        }
        total += len;
        blocks.push(Block { entries, prev, next });
    }
    if total != n {
        return Err(corrupt("entry count differs from group count"));
    }

    let nbuckets = r.len()?;
    let buckets = (0..nbuckets).map(|_| r.u32().map(ref_opt)).collect::<Result<Vec<_>>>()?;
    let nslots = r.len()?;
    let mut slots = Vec::with_capacity(nslots.min(n));
    for _ in 0..nslots {
        let slot = HashSlot {
            key: r.u64()?,
            pos: r.u64()?,
            next: ref_opt(r.u32()?),
        };
        if slot.pos as usize >= n || slot.next.is_some_and(|s| s as usize >= nslots) {
            return Err(corrupt("hash slot out of range"));
        }
        slots.push(slot);
    }
    if buckets.iter().flatten().any(|&s| s as usize >= nslots) || (n > 0 && nbuckets == 0) {
        return Err(corrupt("hash bucket out of range"));
    }
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes"));
    }
    Ok(UgIndex {
        config,
        group_ids,
        feature_dim,
        norm_cap,
        fastmap,
        quantizer,
        blocks,
        buckets,
        slots,
        hash_a,
        hash_b,
    })
}

pub fn save_index(index: &UgIndex, path: &Path) -> Result<()> {
    fs::write(path, write_index(index)).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: &Path) -> Result<UgIndex> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_index(&bytes)
}
