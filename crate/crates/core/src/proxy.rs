//! Proxy experience replay memory.
//!
//! Each state component is cut into `S` equal sections over a fixed range,
//! giving `S^4` clusters. A raw replay memory is compressed by snapping every
//! state to its cluster and averaging the policies that land there; the
//! cluster's proxy state is the midpoint of its sections.
//!
//! Wire entries are 12 bytes: the cluster index as a little-endian `i32`
//! followed by `p_left` and `p_right` as little-endian `f32`. Visit counts are
//! not part of the entry; they travel in an optional side buffer of one
//! little-endian `u32` per entry when count-weighted merging is enabled.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::ReplayMemory;
use crate::codec::{self, WireError};
use crate::env::EnvState;
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum ProxyError {
    #[error("invalid cluster spec: {0}")]
    InvalidSpec(String),
    #[error("cluster index {index} outside [0, {limit})")]
    IndexOutOfRange { index: i64, limit: u64 },
    #[error("proxy memories use different cluster specs")]
    SpecMismatch,
    #[error("mixup portion must lie in (0, 1), got {0}")]
    InvalidPortion(f64),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Linearized cluster index `((i0*S + i1)*S + i2)*S + i3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterIndex(pub i32);

/// Uniform sectioning of the four state components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec<T> {
    /// `[lo, hi]` per component, in `EnvState` order.
    pub ranges: [(T, T); 4],
    pub sections: u32,
}

impl<T: Scalar> ClusterSpec<T> {
    pub fn new(ranges: [(T, T); 4], sections: u32) -> Result<Self, ProxyError> {
        let spec = Self { ranges, sections };
        spec.validate()?;
        Ok(spec)
    }

    /// Cart-pole ranges: position ±2.4 m, velocity ±3 m/s, angle
    /// ±`angle_limit`, angular velocity ±3 rad/s.
    pub fn cartpole(sections: u32, angle_limit: T) -> Result<Self, ProxyError> {
        let sym = |x: f64| (T::lit(-x), T::lit(x));
        Self::new([sym(2.4), sym(3.0), (-angle_limit, angle_limit), sym(3.0)], sections)
    }

    pub fn validate(&self) -> Result<(), ProxyError> {
        if self.sections == 0 {
            return Err(ProxyError::InvalidSpec("sections must be >= 1".into()));
        }
        if self.cluster_count() > i32::MAX as u64 {
            return Err(ProxyError::InvalidSpec(format!(
                "{}^4 clusters do not fit a signed 32-bit index",
                self.sections
            )));
        }
        for (c, (lo, hi)) in self.ranges.iter().enumerate() {
            if lo >= hi || !lo.is_finite() || !hi.is_finite() {
                return Err(ProxyError::InvalidSpec(format!("component {c} has empty range")));
            }
        }
        Ok(())
    }

    /// `S^4`.
    pub fn cluster_count(&self) -> u64 {
        (self.sections as u64).pow(4)
    }

    fn width(&self, component: usize) -> T {
        let (lo, hi) = self.ranges[component];
        (hi - lo) / T::lit(self.sections as f64)
    }

    /// Section of one component, clamped to `[0, S-1]`.
    pub fn section_of(&self, component: usize, x: T) -> u32 {
        let lo = self.ranges[component].0;
        let raw = ((x - lo) / self.width(component)).floor();
        let max = (self.sections - 1) as f64;
        raw.as_f64().clamp(0.0, max) as u32
    }

    pub fn cluster_index_of(&self, state: &EnvState<T>) -> ClusterIndex {
        let s = self.sections as i64;
        let linear = state
            .to_array()
            .iter()
            .enumerate()
            .fold(0i64, |acc, (c, x)| acc * s + self.section_of(c, *x) as i64);
        ClusterIndex(linear as i32)
    }

    /// Per-component sections of a cluster index.
    pub fn sections_of(&self, index: ClusterIndex) -> Result<[u32; 4], ProxyError> {
        let limit = self.cluster_count();
        if index.0 < 0 || index.0 as u64 >= limit {
            return Err(ProxyError::IndexOutOfRange { index: index.0 as i64, limit });
        }
        let s = self.sections;
        let mut rest = index.0 as u32;
        let mut out = [0u32; 4];
        for slot in out.iter_mut().rev() {
            *slot = rest % s;
            rest /= s;
        }
        Ok(out)
    }

    /// Midpoint of every section of the cluster.
    pub fn proxy_state_of(&self, index: ClusterIndex) -> Result<EnvState<T>, ProxyError> {
        let sections = self.sections_of(index)?;
        let mut mid = [T::zero(); 4];
        for (c, m) in mid.iter_mut().enumerate() {
            let lo = self.ranges[c].0;
            *m = lo + (T::lit(sections[c] as f64) + T::lit(0.5)) * self.width(c);
        }
        Ok(EnvState::from_array(mid))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyEntry<T> {
    pub index: ClusterIndex,
    pub avg_policy: [T; 2],
    pub visit_count: u32,
}

/// How the server weighs agents that report the same cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MergeWeighting {
    /// Every reporting agent counts once. This is what the 12-byte wire
    /// entry supports.
    #[default]
    Uniform,
    /// Weighted by visit counts, which must be uploaded alongside.
    VisitCount,
}

/// How the mixup portion is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MixupPortion {
    Fixed(f64),
    /// Drawn per pair from `Beta(alpha, alpha)`.
    Beta { alpha: f64 },
}

impl Default for MixupPortion {
    fn default() -> Self {
        MixupPortion::Fixed(0.5)
    }
}

/// Distillation sample: network input state and soft policy target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicySample<T> {
    pub state: EnvState<T>,
    pub policy: [T; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReplayMemory<T> {
    spec: ClusterSpec<T>,
    entries: BTreeMap<ClusterIndex, ProxyEntry<T>>,
}

impl<T: Scalar> ProxyReplayMemory<T> {
    pub fn new(spec: ClusterSpec<T>) -> Self {
        Self { spec, entries: BTreeMap::new() }
    }

    pub fn spec(&self) -> &ClusterSpec<T> {
        &self.spec
    }

    /// Number of distinct clusters.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: ClusterIndex) -> Option<&ProxyEntry<T>> {
        self.entries.get(&index)
    }

    /// Entries in ascending cluster-index order.
    pub fn entries(&self) -> impl Iterator<Item = &ProxyEntry<T>> {
        self.entries.values()
    }

    /// Groups raw entries by cluster and averages their policies.
    pub fn build(spec: ClusterSpec<T>, rm: &ReplayMemory<T>) -> Self {
        let mut sums: BTreeMap<ClusterIndex, ([f64; 2], u32)> = BTreeMap::new();
        for e in rm.iter() {
            let slot = sums.entry(spec.cluster_index_of(&e.state)).or_insert(([0.0; 2], 0));
            slot.0[0] += e.policy[0].as_f64();
            slot.0[1] += e.policy[1].as_f64();
            slot.1 += 1;
        }
        let entries = sums
            .into_iter()
            .map(|(index, (sum, n))| {
                let avg_policy = [T::lit(sum[0] / n as f64), T::lit(sum[1] / n as f64)];
                (index, ProxyEntry { index, avg_policy, visit_count: n })
            })
            .collect();
        Self { spec, entries }
    }

    /// Global memory from per-agent memories. Visit counts always add up;
    /// `weighting` picks how policies from different agents are combined.
    pub fn merge_global(memories: &[&Self], weighting: MergeWeighting) -> Result<Self, ProxyError> {
        let Some(first) = memories.first() else {
            return Err(ProxyError::InvalidSpec("nothing to merge".into()));
        };
        if memories.iter().any(|m| m.spec != first.spec) {
            return Err(ProxyError::SpecMismatch);
        }
        let mut sums: BTreeMap<ClusterIndex, ([f64; 2], f64, u32)> = BTreeMap::new();
        for m in memories {
            for e in m.entries() {
                let w = match weighting {
                    MergeWeighting::Uniform => 1.0,
                    MergeWeighting::VisitCount => e.visit_count as f64,
                };
                let slot = sums.entry(e.index).or_insert(([0.0; 2], 0.0, 0));
                slot.0[0] += w * e.avg_policy[0].as_f64();
                slot.0[1] += w * e.avg_policy[1].as_f64();
                slot.1 += w;
                slot.2 += e.visit_count;
            }
        }
        let entries = sums
            .into_iter()
            .map(|(index, (sum, weight, count))| {
                let avg_policy = [T::lit(sum[0] / weight), T::lit(sum[1] / weight)];
                (index, ProxyEntry { index, avg_policy, visit_count: count })
            })
            .collect();
        Ok(Self { spec: first.spec, entries })
    }

    /// `(proxy state, averaged policy)` pairs in index order.
    pub fn samples(&self) -> Vec<PolicySample<T>> {
        self.entries()
            .map(|e| PolicySample {
                state: self.spec.proxy_state_of(e.index).expect("stored indices are in range"),
                policy: e.avg_policy,
            })
            .collect()
    }

    /// Proxy samples sorted by pole angle (ties by cluster index), followed
    /// by one interpolated sample per adjacent pair:
    /// `lambda * a + (1 - lambda) * b` for both state and policy.
    pub fn mixup_augment<R: Rng + ?Sized>(
        &self,
        portion: MixupPortion,
        rng: &mut R,
    ) -> Result<Vec<PolicySample<T>>, ProxyError> {
        let beta = match portion {
            MixupPortion::Fixed(l) if l > 0.0 && l < 1.0 => None,
            MixupPortion::Fixed(l) => return Err(ProxyError::InvalidPortion(l)),
            MixupPortion::Beta { alpha } => Some(
                Beta::new(alpha, alpha).map_err(|_| ProxyError::InvalidPortion(alpha))?,
            ),
        };
        let mut sorted: Vec<(ClusterIndex, PolicySample<T>)> = self
            .entries()
            .map(|e| e.index)
            .zip(self.samples())
            .collect();
        sorted.sort_by(|(ia, a), (ib, b)| {
            a.state
                .pole_angle
                .partial_cmp(&b.state.pole_angle)
                .expect("proxy states are finite")
                .then(ia.cmp(ib))
        });

        let mut out: Vec<PolicySample<T>> = sorted.iter().map(|(_, s)| *s).collect();
        for pair in sorted.windows(2) {
            let lambda = match (&beta, portion) {
                (Some(b), _) => b.sample(rng),
                (None, MixupPortion::Fixed(l)) => l,
                (None, MixupPortion::Beta { .. }) => unreachable!(),
            };
            out.push(interpolate(&pair[0].1, &pair[1].1, T::lit(lambda)));
        }
        Ok(out)
    }

    pub fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 * self.len());
        for e in self.entries() {
            out.extend_from_slice(&e.index.0.to_le_bytes());
            codec::put_f32(&mut out, e.avg_policy[0].as_f32());
            codec::put_f32(&mut out, e.avg_policy[1].as_f32());
        }
        out
    }

    /// Decodes wire entries; every decoded entry has `visit_count = 1`.
    pub fn deserialize(bytes: &[u8], spec: ClusterSpec<T>) -> Result<Self, ProxyError> {
        codec::check_len(bytes, ENTRY_BYTES)?;
        let limit = spec.cluster_count();
        let mut entries = BTreeMap::new();
        for (i, chunk) in bytes.chunks_exact(ENTRY_BYTES).enumerate() {
            let raw = codec::get_i32(chunk, 0);
            if raw < 0 || raw as u64 >= limit {
                return Err(WireError::IndexOutOfRange { index: raw as i64, limit }.into());
            }
            let p = [codec::get_f32(chunk, 4), codec::get_f32(chunk, 8)];
            if p.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(WireError::InvalidValue { entry: i }.into());
            }
            let index = ClusterIndex(raw);
            let entry = ProxyEntry { index, avg_policy: p.map(|x| T::lit(x as f64)), visit_count: 1 };
            if entries.insert(index, entry).is_some() {
                return Err(WireError::DuplicateIndex(raw).into());
            }
        }
        Ok(Self { spec, entries })
    }

    /// Visit counts in entry order, one little-endian `u32` each.
    pub fn serialize_counts(&self) -> Vec<u8> {
        self.entries().flat_map(|e| e.visit_count.to_le_bytes()).collect()
    }

    /// Restores counts produced by [`Self::serialize_counts`].
    pub fn apply_counts(&mut self, bytes: &[u8]) -> Result<(), ProxyError> {
        if bytes.len() != 4 * self.len() {
            return Err(WireError::Length { len: bytes.len(), entry: 4 }.into());
        }
        for (i, (e, chunk)) in self.entries.values_mut().zip(bytes.chunks_exact(4)).enumerate() {
            let n = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            if n == 0 {
                return Err(WireError::InvalidValue { entry: i }.into());
            }
            e.visit_count = n;
        }
        Ok(())
    }

    /// Debug dump; not part of any payload.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "sections": self.spec.sections,
            "entries": self.entries().map(|e| serde_json::json!({
                "index": e.index.0,
                "avg_policy": [e.avg_policy[0].as_f64(), e.avg_policy[1].as_f64()],
                "visit_count": e.visit_count,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Bytes per proxy entry on the wire.
pub const ENTRY_BYTES: usize = 12;

fn interpolate<T: Scalar>(a: &PolicySample<T>, b: &PolicySample<T>, lambda: T) -> PolicySample<T> {
    let mix = |x: T, y: T| lambda * x + (T::one() - lambda) * y;
    let (sa, sb) = (a.state.to_array(), b.state.to_array());
    let state = EnvState::from_array(std::array::from_fn(|c| mix(sa[c], sb[c])));
    let mut policy = [mix(a.policy[0], b.policy[0]), mix(a.policy[1], b.policy[1])];
    let total = policy[0] + policy[1];
    if total > T::zero() {
        policy.iter_mut().for_each(|p| *p /= total);
    }
    PolicySample { state, policy }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ReplayEntry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn deg(x: f64) -> f64 {
        x.to_radians()
    }

    fn angle_spec(sections: u32) -> ClusterSpec<f64> {
        let unit = (-1.0, 1.0);
        ClusterSpec::new([unit, unit, (deg(-90.0), deg(90.0)), unit], sections).unwrap()
    }

    fn entry(state: [f64; 4], policy: [f64; 2]) -> ReplayEntry<f64> {
        ReplayEntry { state: EnvState::from_array(state), policy }
    }

    #[test]
    fn two_sections_give_minus_45_degree_proxy() {
        let spec = angle_spec(2);
        let s = EnvState::new(0.0, 0.0, deg(-45.0), 0.0);
        assert_eq!(spec.section_of(2, s.pole_angle), 0);
        let proxy = spec.proxy_state_of(spec.cluster_index_of(&s)).unwrap();
        assert!((proxy.pole_angle - deg(-45.0)).abs() < 1e-12);
        let up = spec.proxy_state_of(spec.cluster_index_of(&EnvState::new(0.0, 0.0, deg(30.0), 0.0))).unwrap();
        assert!((up.pole_angle - deg(45.0)).abs() < 1e-12);
    }

    #[test]
    fn range_edges_clamp() {
        let spec = angle_spec(4);
        assert_eq!(spec.section_of(0, -1.0), 0);
        assert_eq!(spec.section_of(0, 1.0), 3);
        assert_eq!(spec.section_of(0, -7.0), 0);
        assert_eq!(spec.section_of(0, 7.0), 3);
    }

    #[test]
    fn single_section_maps_to_midpoint() {
        let spec = angle_spec(1);
        let s = EnvState::new(0.9, -0.3, 1.2, 5.0);
        assert_eq!(spec.cluster_index_of(&s), ClusterIndex(0));
        assert_eq!(spec.proxy_state_of(ClusterIndex(0)).unwrap(), EnvState::zero());
    }

    #[test]
    fn proxy_index_inverse_is_exhaustive() {
        let spec = angle_spec(3);
        for k in 0..81 {
            let proxy = spec.proxy_state_of(ClusterIndex(k)).unwrap();
            assert_eq!(spec.cluster_index_of(&proxy), ClusterIndex(k));
        }
        assert!(matches!(spec.proxy_state_of(ClusterIndex(81)), Err(ProxyError::IndexOutOfRange { .. })));
        assert!(matches!(spec.proxy_state_of(ClusterIndex(-1)), Err(ProxyError::IndexOutOfRange { .. })));
    }

    #[test]
    fn rejects_oversized_and_empty_specs() {
        assert!(ClusterSpec::<f32>::cartpole(216, 0.2).is_err());
        assert!(ClusterSpec::<f32>::cartpole(215, 0.2).is_ok());
        assert!(ClusterSpec::<f32>::cartpole(0, 0.2).is_err());
        assert!(ClusterSpec::new([(1.0f32, 1.0); 4], 3).is_err());
    }

    #[test]
    fn build_averages_same_cluster() {
        let spec = angle_spec(2);
        let rm: ReplayMemory<f64> =
            [entry([0.1, 0.1, 0.1, 0.1], [0.8, 0.2]), entry([0.2, 0.3, 0.2, 0.4], [0.6, 0.4])].into_iter().collect();
        let p = ProxyReplayMemory::build(spec, &rm);
        assert_eq!(p.len(), 1);
        let e = p.entries().next().unwrap();
        assert!((e.avg_policy[0] - 0.7).abs() < 1e-12 && (e.avg_policy[1] - 0.3).abs() < 1e-12);
        assert_eq!(e.visit_count, 2);
    }

    #[test]
    fn build_of_distinct_states_keeps_every_entry() {
        let spec = angle_spec(2);
        let rm: ReplayMemory<f64> = [
            entry([-0.5, -0.5, -0.5, -0.5], [0.1, 0.9]),
            entry([0.5, -0.5, -0.5, -0.5], [0.2, 0.8]),
            entry([0.5, 0.5, 0.5, 0.5], [0.3, 0.7]),
        ]
        .into_iter()
        .collect();
        assert_eq!(ProxyReplayMemory::build(spec, &rm).len(), 3);
        assert!(ProxyReplayMemory::build(spec, &ReplayMemory::new()).is_empty());
    }

    #[test]
    fn count_weighted_merge() {
        let spec = angle_spec(2);
        let a: ReplayMemory<f64> = [entry([0.1; 4], [1.0, 0.0])].into_iter().collect();
        let b: ReplayMemory<f64> = (0..3).map(|_| entry([0.2; 4], [0.0, 1.0])).collect();
        let (pa, pb) = (ProxyReplayMemory::build(spec, &a), ProxyReplayMemory::build(spec, &b));
        let g = ProxyReplayMemory::merge_global(&[&pa, &pb], MergeWeighting::VisitCount).unwrap();
        let e = g.entries().next().unwrap();
        assert_eq!(e.avg_policy, [0.25, 0.75]);
        assert_eq!(e.visit_count, 4);
        let u = ProxyReplayMemory::merge_global(&[&pa, &pb], MergeWeighting::Uniform).unwrap();
        assert_eq!(u.entries().next().unwrap().avg_policy, [0.5, 0.5]);
        assert_eq!(ProxyReplayMemory::merge_global(&[&pa], MergeWeighting::Uniform).unwrap(), pa);
    }

    #[test]
    fn merge_rejects_spec_mismatch() {
        let a = ProxyReplayMemory::new(angle_spec(2));
        let b = ProxyReplayMemory::new(angle_spec(3));
        assert_eq!(ProxyReplayMemory::merge_global(&[&a, &b], MergeWeighting::Uniform), Err(ProxyError::SpecMismatch));
    }

    #[test]
    fn mixup_midpoints() {
        let spec = angle_spec(4);
        let rm: ReplayMemory<f64> =
            [entry([0.0, 0.0, deg(-60.0), 0.0], [1.0, 0.0]), entry([0.0, 0.0, deg(60.0), 0.0], [0.0, 1.0])]
                .into_iter()
                .collect();
        let p = ProxyReplayMemory::build(spec, &rm);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = p.mixup_augment(MixupPortion::default(), &mut rng).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[2].policy, [0.5, 0.5]);
        assert!(out[2].state.pole_angle.abs() < 1e-12);
        assert!(out[0].state.pole_angle < out[1].state.pole_angle);
    }

    #[test]
    fn mixup_of_identical_neighbours_is_identity() {
        let spec = angle_spec(4);
        let rm: ReplayMemory<f64> =
            [entry([-0.9, 0.0, 0.1, 0.0], [0.3, 0.7]), entry([0.9, 0.0, 0.1, 0.0], [0.3, 0.7])].into_iter().collect();
        let p = ProxyReplayMemory::build(spec, &rm);
        let out = p.mixup_augment(MixupPortion::Fixed(0.5), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((out[2].policy[0] - 0.3).abs() < 1e-12);
        assert!((out[2].state.pole_angle - out[0].state.pole_angle).abs() < 1e-12);
    }

    #[test]
    fn mixup_small_inputs_and_bad_portion() {
        let spec = angle_spec(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let empty = ProxyReplayMemory::new(spec);
        assert!(empty.mixup_augment(MixupPortion::default(), &mut rng).unwrap().is_empty());
        let one = ProxyReplayMemory::build(spec, &[entry([0.0; 4], [0.5, 0.5])].into_iter().collect());
        assert_eq!(one.mixup_augment(MixupPortion::default(), &mut rng).unwrap().len(), 1);
        assert_eq!(one.mixup_augment(MixupPortion::Fixed(1.0), &mut rng), Err(ProxyError::InvalidPortion(1.0)));
        assert!(one.mixup_augment(MixupPortion::Beta { alpha: 0.4 }, &mut rng).is_ok());
    }

    #[test]
    fn wire_sizes_and_errors() {
        let spec = ClusterSpec::<f32>::cartpole(10, 0.2).unwrap();
        assert!(ProxyReplayMemory::new(spec).serialize().is_empty());
        let rm: ReplayMemory<f32> = (0..7)
            .map(|i| ReplayEntry { state: EnvState::new(-2.0 + 0.6 * i as f32, 0.0, 0.0, 0.0), policy: [0.4, 0.6] })
            .collect();
        let p = ProxyReplayMemory::build(spec, &rm);
        assert_eq!(p.len(), 7);
        let bytes = p.serialize();
        assert_eq!(bytes.len(), 84);

        let back = ProxyReplayMemory::deserialize(&bytes, spec).unwrap();
        assert_eq!(back.len(), 7);
        assert!(back.entries().all(|e| e.visit_count == 1));

        assert!(matches!(
            ProxyReplayMemory::deserialize(&bytes[..83], spec),
            Err(ProxyError::Wire(WireError::Length { .. }))
        ));
        let mut dup = bytes[..12].to_vec();
        dup.extend_from_slice(&bytes[..12]);
        assert!(matches!(
            ProxyReplayMemory::deserialize(&dup, spec),
            Err(ProxyError::Wire(WireError::DuplicateIndex(_)))
        ));
        let mut far = bytes[..12].to_vec();
        far[..4].copy_from_slice(&10_000i32.to_le_bytes());
        assert!(matches!(
            ProxyReplayMemory::deserialize(&far, spec),
            Err(ProxyError::Wire(WireError::IndexOutOfRange { .. }))
        ));
    }

    #[test]
    fn counts_side_channel_round_trip() {
        let spec = angle_spec(3);
        let rm: ReplayMemory<f32> = (0..20)
            .map(|i| ReplayEntry { state: EnvState::new(0.1 * (i % 5) as f32, 0.0, 0.0, 0.0), policy: [0.5, 0.5] })
            .collect();
        let spec32 = ClusterSpec::new(spec.ranges.map(|(a, b)| (a as f32, b as f32)), 3).unwrap();
        let p = ProxyReplayMemory::build(spec32, &rm);
        let mut back = ProxyReplayMemory::deserialize(&p.serialize(), spec32).unwrap();
        back.apply_counts(&p.serialize_counts()).unwrap();
        assert_eq!(back, p);
    }
}
