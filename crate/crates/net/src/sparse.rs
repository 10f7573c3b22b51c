//! Index structures connecting sparse voxel sets: convolution neighbor
//! tables, parent/child upsampling and trilinear query stencils. They hold
//! only integer rows and weights, so one structure serves every layer that
//! shares a voxel set.

use rustc_hash::FxHashMap;
use xgen_core::grid::{pack_key, trilinear_stencil, unpack_key, Coord};
use xgen_core::Vec3;

/// Marks a neighbor that is not in the input set.
pub const MISSING: u32 = u32::MAX;
pub const TAPS: usize = 27;

pub fn tap_offset(t: usize) -> Coord {
    [(t % 3) as i64 - 1, ((t / 3) % 3) as i64 - 1, (t / 9) as i64 - 1]
}

pub fn key_index(keys: &[u64]) -> FxHashMap<u64, u32> {
    keys.iter().enumerate().map(|(i, k)| (*k, i as u32)).collect()
}

fn lookup(index: &FxHashMap<u64, u32>, c: Coord, resolution: u32) -> u32 {
    let r = resolution as i64;
    if c.iter().any(|&x| x < 0 || x >= r) {
        return MISSING;
    }
    index.get(&pack_key(c)).copied().unwrap_or(MISSING)
}

/// 3x3x3 neighbor table: `idx[o * TAPS + t]` is the input row feeding tap
/// `t` of output row `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMap {
    pub in_rows: usize,
    pub out_rows: usize,
    pub idx: Vec<u32>,
}

/// Stride-1 map whose outputs are the input sites themselves.
pub fn submanifold_map(keys: &[u64], resolution: u32) -> ConvMap {
    let index = key_index(keys);
    let mut idx = Vec::with_capacity(keys.len() * TAPS);
    for &k in keys {
        let c = unpack_key(k);
        for t in 0..TAPS {
            let d = tap_offset(t);
            idx.push(lookup(&index, [c[0] + d[0], c[1] + d[1], c[2] + d[2]], resolution));
        }
    }
    ConvMap {
        in_rows: keys.len(),
        out_rows: keys.len(),
        idx,
    }
}

/// Stride-2 map from a fine set to its floor-halved parents; tap `t` of
/// parent `c` reads fine voxel `2c + offset(t)`.
pub fn stride2_map(fine_keys: &[u64], fine_resolution: u32) -> (Vec<u64>, ConvMap) {
    let mut coarse: Vec<u64> = fine_keys
        .iter()
        .map(|&k| {
            let c = unpack_key(k);
            pack_key([c[0] >> 1, c[1] >> 1, c[2] >> 1])
        })
        .collect();
    coarse.sort_unstable();
    coarse.dedup();
    let index = key_index(fine_keys);
    let mut idx = Vec::with_capacity(coarse.len() * TAPS);
    for &k in &coarse {
        let c = unpack_key(k);
        for t in 0..TAPS {
            let d = tap_offset(t);
            idx.push(lookup(&index, [2 * c[0] + d[0], 2 * c[1] + d[1], 2 * c[2] + d[2]], fine_resolution));
        }
    }
    let map = ConvMap {
        in_rows: fine_keys.len(),
        out_rows: coarse.len(),
        idx,
    };
    (coarse, map)
}

/// All eight children of every parent, sorted by child key.
#[derive(Debug, Clone, PartialEq)]
pub struct UpsampleMap {
    pub child_keys: Vec<u64>,
    pub parent: Vec<u32>,
    /// Child offset `dx + 2 dy + 4 dz`.
    pub offset: Vec<u8>,
}

pub fn upsample_map(parent_keys: &[u64]) -> UpsampleMap {
    let mut children: Vec<(u64, u32, u8)> = Vec::with_capacity(parent_keys.len() * 8);
    for (p, &k) in parent_keys.iter().enumerate() {
        let c = unpack_key(k);
        for o in 0..8u8 {
            let d = [(o & 1) as i64, ((o >> 1) & 1) as i64, ((o >> 2) & 1) as i64];
            let child = pack_key([2 * c[0] + d[0], 2 * c[1] + d[1], 2 * c[2] + d[2]]);
            children.push((child, p as u32, o));
        }
    }
    children.sort_unstable();
    UpsampleMap {
        child_keys: children.iter().map(|c| c.0).collect(),
        parent: children.iter().map(|c| c.1).collect(),
        offset: children.iter().map(|c| c.2).collect(),
    }
}

/// Eight `(row, weight)` pairs per query; missing vertices keep their
/// weight slot with row [`MISSING`] and contribute zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TrilinearMap {
    pub in_rows: usize,
    pub idx: Vec<u32>,
    pub weight: Vec<f64>,
}

impl TrilinearMap {
    pub fn queries(&self) -> usize {
        self.idx.len() / 8
    }

    /// Fraction of stencil weight that landed on present vertices, per query.
    pub fn coverage(&self) -> Vec<f64> {
        self.idx
            .chunks(8)
            .zip(self.weight.chunks(8))
            .map(|(i, w)| i.iter().zip(w).filter(|(i, _)| **i != MISSING).map(|(_, w)| w).sum())
            .collect()
    }
}

pub fn trilinear_map(keys: &[u64], resolution: u32, points: &[Vec3]) -> TrilinearMap {
    let index = key_index(keys);
    let mut idx = Vec::with_capacity(points.len() * 8);
    let mut weight = Vec::with_capacity(points.len() * 8);
    for p in points {
        for (c, w) in trilinear_stencil(p, resolution) {
            idx.push(lookup(&index, c, resolution));
            weight.push(w);
        }
    }
    TrilinearMap {
        in_rows: keys.len(),
        idx,
        weight,
    }
}
