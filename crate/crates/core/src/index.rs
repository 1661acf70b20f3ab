//! Keyframe index: compact keys, exact nearest-neighbour candidate retrieval
//! and descriptor-level matching.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::descriptor::{compare, MatchScore};
use crate::error::{Error, Result};
use crate::io::Cursor;
use crate::kdtree::{squared_distance, KdTree, Neighbor};
use crate::pose::shift_to_rotation;
use crate::spectrum::FrescoDescriptor;

/// Per-ring means followed by per-ring population standard deviations, all
/// divided by the descriptor's global mean.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorKey(Vec<f64>);

impl DescriptorKey {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }
}

pub fn make_key(d: &FrescoDescriptor) -> Result<DescriptorKey> {
    let global = d.mean();
    if global.is_nan() || global <= 0.0 {
        return Err(Error::Degenerate(format!(
            "descriptor global mean is {global}; nothing to index"
        )));
    }
    let rings = d.rings();
    let n = d.sectors() as f64;
    let mut key = vec![0.0; 2 * rings];
    for i in 0..rings {
        let row = d.row(i);
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        key[i] = mean / global;
        key[rings + i] = var.sqrt() / global;
    }
    Ok(DescriptorKey(key))
}

#[derive(Clone, Debug)]
struct Entry {
    id: u64,
    key: DescriptorKey,
    descriptor: FrescoDescriptor,
}

/// A retrieved candidate with its key-space distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub id: u64,
    pub key_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchParams {
    /// Number of key-space nearest neighbours examined.
    pub candidates: usize,
    pub tau_l1: f64,
    pub tau_r: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            candidates: 20,
            tau_l1: 0.35,
            tau_r: 0.2,
        }
    }
}

/// Best candidate for a query. Rejected candidates keep their scores so that
/// thresholds can be swept afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    pub id: u64,
    pub d_l1: f64,
    pub d_r: f64,
    pub best_shift: usize,
    /// Rotation implied by `best_shift`, degrees in `[0, 180)`.
    pub rotation_deg: f64,
    pub accepted: bool,
}

impl MatchResult {
    pub fn accepted_at(&self, tau_l1: f64, tau_r: f64) -> bool {
        self.d_l1 <= tau_l1 && self.d_r <= tau_r
    }
}

const REBUILD_EVERY: usize = 64;
const INDEX_MAGIC: &[u8; 4] = b"FRIX";
const INDEX_VERSION: u32 = 1;

/// Keys and descriptors of all stored keyframes.
///
/// The k-d tree covers a prefix of the entries and is rebuilt every 64
/// insertions; the tail is scanned linearly, so retrieval is always exact.
/// The most recent `horizon` keyframes are never returned.
#[derive(Clone, Debug)]
pub struct KeyframeIndex {
    entries: Vec<Entry>,
    tree: Option<KdTree>,
    tree_len: usize,
    horizon: usize,
}

impl KeyframeIndex {
    pub fn new(horizon: usize) -> Self {
        Self {
            entries: Vec::new(),
            tree: None,
            tree_len: 0,
            horizon,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn set_horizon(&mut self, horizon: usize) {
        self.horizon = horizon;
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.entries.iter().map(|e| e.id)
    }

    pub fn descriptor(&self, id: u64) -> Option<&FrescoDescriptor> {
        self.position(id).map(|p| &self.entries[p].descriptor)
    }

    pub fn key(&self, id: u64) -> Option<&DescriptorKey> {
        self.position(id).map(|p| &self.entries[p].key)
    }

    fn position(&self, id: u64) -> Option<usize> {
        self.entries.binary_search_by_key(&id, |e| e.id).ok()
    }

    /// Ids must be strictly increasing.
    pub fn insert(&mut self, id: u64, descriptor: FrescoDescriptor) -> Result<()> {
        if self.entries.last().is_some_and(|e| e.id >= id) {
            return Err(Error::DuplicateId(id));
        }
        if let Some(first) = self.entries.first() {
            if first.descriptor.rings() != descriptor.rings()
                || first.descriptor.sectors() != descriptor.sectors()
            {
                return Err(Error::param("descriptor", "dimensions differ from indexed descriptors"));
            }
        }
        let key = make_key(&descriptor)?;
        self.entries.push(Entry { id, key, descriptor });
        if self.entries.len() - self.tree_len >= REBUILD_EVERY {
            self.rebuild();
        }
        Ok(())
    }

    fn rebuild(&mut self) {
        let dim = self.entries[0].key.len();
        let coords = self.entries.iter().flat_map(|e| e.key.0.iter().copied()).collect();
        self.tree = Some(KdTree::new(dim, coords));
        self.tree_len = self.entries.len();
    }

    fn eligible_end(&self) -> usize {
        self.entries.len().saturating_sub(self.horizon)
    }

    /// Exact `count` nearest eligible keys, closest first. Ties go to the
    /// older keyframe.
    pub fn retrieve_key(&self, key: &DescriptorKey, count: usize) -> Vec<Candidate> {
        let end = self.eligible_end();
        if count == 0 || end == 0 {
            return Vec::new();
        }
        let mut found: Vec<Neighbor> = match &self.tree {
            Some(tree) => tree.knn_filtered(key.as_slice(), count, |i| i < end),
            None => Vec::new(),
        };
        for pos in self.tree_len..end {
            found.push(Neighbor {
                index: pos,
                dist2: squared_distance(key.as_slice(), self.entries[pos].key.as_slice()),
            });
        }
        found.sort();
        found.truncate(count);
        found
            .into_iter()
            .map(|n| Candidate {
                id: self.entries[n.index].id,
                key_distance: n.dist2.sqrt(),
            })
            .collect()
    }

    pub fn retrieve(&self, query: &FrescoDescriptor, count: usize) -> Result<Vec<Candidate>> {
        Ok(self.retrieve_key(&make_key(query)?, count))
    }

    /// Retrieves candidates, keeps the one with the smallest `d_l1` and
    /// verifies it against both thresholds. There is no fallback to the
    /// second-best candidate. `None` when nothing is eligible.
    pub fn match_query(&self, query: &FrescoDescriptor, params: &MatchParams) -> Result<Option<MatchResult>> {
        let candidates = self.retrieve(query, params.candidates.max(1))?;
        let scores: Vec<(u64, MatchScore)> = candidates
            .par_iter()
            .map(|c| {
                let d = &self.entries[self.position(c.id).unwrap()].descriptor;
                compare(query, d).map(|s| (c.id, s))
            })
            .collect::<Result<_>>()?;
        // first minimum in retrieval order
        let best = scores
            .into_iter()
            .reduce(|a, b| if b.1.d_l1 < a.1.d_l1 { b } else { a });
        Ok(best.map(|(id, s)| MatchResult {
            id,
            d_l1: s.d_l1,
            d_r: s.d_r,
            best_shift: s.best_shift,
            rotation_deg: shift_to_rotation(s.best_shift, query.sectors()),
            accepted: s.d_l1 <= params.tau_l1 && s.d_r <= params.tau_r,
        }))
    }

    /// `FRIX`, version, entry count, then per entry: id, key length and key
    /// values, descriptor blob. Little-endian throughout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&e.id.to_le_bytes());
            out.extend_from_slice(&(e.key.len() as u32).to_le_bytes());
            for v in e.key.as_slice() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            e.descriptor.write_into(&mut out);
        }
        out
    }

    /// Keys are recomputed from the stored descriptors; the stored copies
    /// only serve as an integrity check.
    pub fn from_bytes(bytes: &[u8], horizon: usize) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        if &r.read_array::<4>()? != INDEX_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad index magic".into(),
            });
        }
        let version = r.read_u32()?;
        if version != INDEX_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported index version {version}"),
            });
        }
        let count = r.read_u64()?;
        let mut index = KeyframeIndex::new(horizon);
        for _ in 0..count {
            let entry_offset = r.position();
            let id = r.read_u64()?;
            let key_len = r.read_u32()? as usize;
            let mut stored = Vec::with_capacity(key_len);
            for _ in 0..key_len {
                stored.push(r.read_f32()?);
            }
            let descriptor = FrescoDescriptor::read_from(&mut r)?;
            let key = make_key(&descriptor)?;
            let consistent = key.len() == stored.len()
                && key
                    .as_slice()
                    .iter()
                    .zip(&stored)
                    .all(|(a, b)| (*a as f32) == *b);
            if !consistent {
                return Err(Error::Format {
                    offset: entry_offset,
                    msg: format!("stored key of entry {id} does not match its descriptor"),
                });
            }
            index.insert(id, descriptor).map_err(|e| Error::Format {
                offset: entry_offset,
                msg: e.to_string(),
            })?;
        }
        if !r.at_end() {
            return Err(Error::Format {
                offset: r.position(),
                msg: "trailing bytes after last entry".into(),
            });
        }
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>, horizon: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, horizon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_descriptor(rng: &mut ChaCha8Rng, rings: usize, sectors: usize) -> FrescoDescriptor {
        let data = (0..rings * sectors).map(|_| rng.gen_range(0.0f32..10.0)).collect();
        FrescoDescriptor::from_data(rings, sectors, data).unwrap()
    }

    /// Naive two-pass statistics, written independently of `make_key`.
    fn naive_key(d: &FrescoDescriptor) -> Vec<f64> {
        let all: Vec<f64> = d.data().iter().map(|&v| v as f64).collect();
        let global = all.iter().sum::<f64>() / all.len() as f64;
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for i in 0..d.rings() {
            let row: Vec<f64> = d.row(i).iter().map(|&v| v as f64).collect();
            let m = row.iter().sum::<f64>() / row.len() as f64;
            let s = (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / row.len() as f64).sqrt();
            means.push(m / global);
            stds.push(s / global);
        }
        means.extend(stds);
        means
    }

    #[test]
    fn constant_descriptor_key() {
        let d = FrescoDescriptor::from_data(4, 8, vec![2.5; 32]).unwrap();
        let k = make_key(&d).unwrap();
        assert_eq!(&k.as_slice()[..4], &[1.0; 4]);
        assert_eq!(&k.as_slice()[4..], &[0.0; 4]);
    }

    #[test]
    fn key_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_descriptor(&mut rng, 8, 24);
        let a = make_key(&d).unwrap();
        let b = make_key(&d.scaled(4.0)).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn key_matches_naive_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_descriptor(&mut rng, 8, 24);
        let k = make_key(&d).unwrap();
        for (x, y) in k.as_slice().iter().zip(naive_key(&d)) {
            assert!((x - y).abs() < 1e-12);
        }
        let means = &k.as_slice()[..8];
        assert!((means.iter().sum::<f64>() / 8.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_descriptor_is_degenerate() {
        let d = FrescoDescriptor::zeros(4, 8);
        assert!(matches!(make_key(&d), Err(Error::Degenerate(_))));
        let mut idx = KeyframeIndex::new(0);
        assert!(idx.insert(0, d).is_err());
        assert!(idx.is_empty());
    }

    #[test]
    fn insert_and_self_retrieve() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx = KeyframeIndex::new(0);
        let ds: Vec<_> = (0..100).map(|_| random_descriptor(&mut rng, 6, 12)).collect();
        for (i, d) in ds.iter().enumerate() {
            idx.insert(i as u64, d.clone()).unwrap();
        }
        assert_eq!(idx.len(), 100);
        for (i, d) in ds.iter().enumerate() {
            assert_eq!(idx.retrieve(d, 1).unwrap()[0].id, i as u64);
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut idx = KeyframeIndex::new(0);
        idx.insert(5, random_descriptor(&mut rng, 4, 8)).unwrap();
        assert!(matches!(idx.insert(5, random_descriptor(&mut rng, 4, 8)), Err(Error::DuplicateId(5))));
        assert!(matches!(idx.insert(3, random_descriptor(&mut rng, 4, 8)), Err(Error::DuplicateId(3))));
    }

    #[test]
    fn small_index_edge_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut idx = KeyframeIndex::new(0);
        let q = random_descriptor(&mut rng, 4, 8);
        assert!(idx.retrieve(&q, 5).unwrap().is_empty());
        idx.insert(9, random_descriptor(&mut rng, 4, 8)).unwrap();
        assert_eq!(idx.retrieve(&q, 3).unwrap().iter().map(|c| c.id).collect::<Vec<_>>(), vec![9]);
        idx.insert(10, random_descriptor(&mut rng, 4, 8)).unwrap();
        assert_eq!(idx.retrieve(&q, 50).unwrap().len(), 2);
    }

    #[test]
    fn horizon_hides_recent_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut idx = KeyframeIndex::new(30);
        let ds: Vec<_> = (0..100).map(|_| random_descriptor(&mut rng, 4, 8)).collect();
        for (i, d) in ds.iter().enumerate() {
            idx.insert(i as u64, d.clone()).unwrap();
        }
        for d in &ds {
            let got = idx.retrieve(d, 100).unwrap();
            assert_eq!(got.len(), 70);
            assert!(got.iter().all(|c| c.id < 70));
            let m = idx.match_query(d, &MatchParams::default()).unwrap().unwrap();
            assert!(m.id < 70);
        }
    }

    #[test]
    fn retrieval_equals_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut idx = KeyframeIndex::new(0);
        let keys: Vec<Vec<f64>> = (0..500)
            .map(|_| {
                let d = random_descriptor(&mut rng, 8, 16);
                let k = make_key(&d).unwrap().0;
                idx.insert(idx.len() as u64, d).unwrap();
                k
            })
            .collect();
        for _ in 0..50 {
            let q = random_descriptor(&mut rng, 8, 16);
            let qk = naive_key(&q);
            let mut oracle: Vec<(f64, usize)> = keys
                .iter()
                .enumerate()
                .map(|(i, k)| (k.iter().zip(&qk).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), i))
                .collect();
            oracle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<u64> = oracle[..20].iter().map(|(_, i)| *i as u64).collect();
            let got: Vec<u64> = idx.retrieve(&q, 20).unwrap().iter().map(|c| c.id).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn match_identical_and_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut idx = KeyframeIndex::new(0);
        let ds: Vec<_> = (0..10).map(|_| random_descriptor(&mut rng, 4, 12)).collect();
        for (i, d) in ds.iter().enumerate() {
            idx.insert(i as u64, d.clone()).unwrap();
        }
        let generous = MatchParams {
            candidates: 20,
            tau_l1: 10.0,
            tau_r: 2.0,
        };
        let m = idx.match_query(&ds[4], &generous).unwrap().unwrap();
        assert_eq!((m.id, m.d_l1, m.accepted), (4, 0.0, true));
        assert!(m.d_r.abs() < 1e-12);

        let strict = MatchParams {
            candidates: 20,
            tau_l1: 1e-3,
            tau_r: 1e-3,
        };
        let q = random_descriptor(&mut rng, 4, 12);
        let m = idx.match_query(&q, &strict).unwrap().unwrap();
        assert!(!m.accepted);
        assert!(m.d_l1 > 1e-3);
    }

    #[test]
    fn persistence_roundtrip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut idx = KeyframeIndex::new(0);
        for i in 0..70u64 {
            idx.insert(i * 3, random_descriptor(&mut rng, 4, 12)).unwrap();
        }
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..4], b"FRIX");
        let back = KeyframeIndex::from_bytes(&bytes, 0).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.ids().collect::<Vec<_>>(), idx.ids().collect::<Vec<_>>());

        let mut truncated = bytes.clone();
        truncated.truncate(bytes.len() - 3);
        assert!(matches!(KeyframeIndex::from_bytes(&truncated, 0), Err(Error::Format { .. })));
        let mut tampered = bytes;
        tampered[16 + 8 + 4] ^= 0x40;
        assert!(KeyframeIndex::from_bytes(&tampered, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn identical_sequences_give_identical_answers(seed in any::<u64>()) {
            let run = || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = KeyframeIndex::new(5);
                for i in 0..80u64 {
                    idx.insert(i, random_descriptor(&mut rng, 4, 12)).unwrap();
                }
                let q = random_descriptor(&mut rng, 4, 12);
                (idx.retrieve(&q, 10).unwrap(), idx.match_query(&q, &MatchParams::default()).unwrap())
            };
            prop_assert_eq!(run(), run());
        }
    }
}
