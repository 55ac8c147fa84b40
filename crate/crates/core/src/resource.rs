//! Seven-dimension resource vectors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::quantity::Quantity;

/// One dimension of a [`ResourceVec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dim {
    CpuCores,
    MemoryBytes,
    NetInBps,
    NetOutBps,
    FsBps,
    FsIops,
    StorageBytes,
}

impl Dim {
    pub const ALL: [Dim; 7] = [
        Dim::CpuCores,
        Dim::MemoryBytes,
        Dim::NetInBps,
        Dim::NetOutBps,
        Dim::FsBps,
        Dim::FsIops,
        Dim::StorageBytes,
    ];

    /// Rate dimensions that are shared best-effort on a node beyond their reservation.
    pub const CONTENDED: [Dim; 4] = [Dim::NetInBps, Dim::NetOutBps, Dim::FsBps, Dim::FsIops];

    pub fn name(self) -> &'static str {
        match self {
            Dim::CpuCores => "cpu_cores",
            Dim::MemoryBytes => "memory_bytes",
            Dim::NetInBps => "net_in_bps",
            Dim::NetOutBps => "net_out_bps",
            Dim::FsBps => "fs_bps",
            Dim::FsIops => "fs_iops",
            Dim::StorageBytes => "storage_bytes",
        }
    }

    /// Dimensions that predate I/O-aware scheduling (what a native batch job can reserve).
    pub fn is_legacy(self) -> bool {
        matches!(self, Dim::CpuCores | Dim::MemoryBytes)
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Quantity bundle over cores, memory, network in/out, filesystem bandwidth,
/// IOPS and storage.
///
/// The partial order is component-wise: `a <= b` iff every component of `a`
/// is at most the corresponding component of `b`. Missing fields deserialize
/// as zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ResourceVec<Q> {
    pub cpu_cores: Q,
    pub memory_bytes: Q,
    pub net_in_bps: Q,
    pub net_out_bps: Q,
    pub fs_bps: Q,
    pub fs_iops: Q,
    pub storage_bytes: Q,
}

impl<Q: Quantity> ResourceVec<Q> {
    pub fn zero() -> Self {
        Self::splat(Q::zero())
    }

    pub fn splat(v: Q) -> Self {
        Self {
            cpu_cores: v,
            memory_bytes: v,
            net_in_bps: v,
            net_out_bps: v,
            fs_bps: v,
            fs_iops: v,
            storage_bytes: v,
        }
    }

    pub fn get(&self, dim: Dim) -> Q {
        match dim {
            Dim::CpuCores => self.cpu_cores,
            Dim::MemoryBytes => self.memory_bytes,
            Dim::NetInBps => self.net_in_bps,
            Dim::NetOutBps => self.net_out_bps,
            Dim::FsBps => self.fs_bps,
            Dim::FsIops => self.fs_iops,
            Dim::StorageBytes => self.storage_bytes,
        }
    }

    pub fn get_mut(&mut self, dim: Dim) -> &mut Q {
        match dim {
            Dim::CpuCores => &mut self.cpu_cores,
            Dim::MemoryBytes => &mut self.memory_bytes,
            Dim::NetInBps => &mut self.net_in_bps,
            Dim::NetOutBps => &mut self.net_out_bps,
            Dim::FsBps => &mut self.fs_bps,
            Dim::FsIops => &mut self.fs_iops,
            Dim::StorageBytes => &mut self.storage_bytes,
        }
    }

    pub fn with(mut self, dim: Dim, v: Q) -> Self {
        *self.get_mut(dim) = v;
        self
    }

    pub fn map<R, F: FnMut(Dim, Q) -> R>(&self, mut f: F) -> ResourceVec<R> {
        ResourceVec {
            cpu_cores: f(Dim::CpuCores, self.cpu_cores),
            memory_bytes: f(Dim::MemoryBytes, self.memory_bytes),
            net_in_bps: f(Dim::NetInBps, self.net_in_bps),
            net_out_bps: f(Dim::NetOutBps, self.net_out_bps),
            fs_bps: f(Dim::FsBps, self.fs_bps),
            fs_iops: f(Dim::FsIops, self.fs_iops),
            storage_bytes: f(Dim::StorageBytes, self.storage_bytes),
        }
    }

    pub fn is_zero(&self) -> bool {
        Dim::ALL.iter().all(|&d| self.get(d) == Q::zero())
    }

    /// Component-wise sum; overflow in any component is an error.
    pub fn checked_add(&self, rhs: &Self) -> Result<Self, Error> {
        let mut out = *self;
        for d in Dim::ALL {
            *out.get_mut(d) = self
                .get(d)
                .checked_plus(rhs.get(d))
                .ok_or(Error::ResourceOverflow(d))?;
        }
        Ok(out)
    }

    /// Component-wise difference; underflow in any component is an error.
    pub fn checked_sub(&self, rhs: &Self) -> Result<Self, Error> {
        let mut out = *self;
        for d in Dim::ALL {
            *out.get_mut(d) = self
                .get(d)
                .checked_minus(rhs.get(d))
                .ok_or(Error::ResourceOverflow(d))?;
        }
        Ok(out)
    }

    /// Multiplies every component by `n`.
    pub fn checked_scale(&self, n: usize) -> Result<Self, Error> {
        (0..n).try_fold(Self::zero(), |acc, _| acc.checked_add(self))
    }

    /// The component-wise partial order.
    pub fn fits_within(&self, other: &Self) -> bool {
        Dim::ALL.iter().all(|&d| self.get(d) <= other.get(d))
    }

    /// Component-wise maximum.
    pub fn sup(&self, other: &Self) -> Self {
        self.map(|d, v| if other.get(d) > v { other.get(d) } else { v })
    }

    /// Component-wise minimum.
    pub fn inf(&self, other: &Self) -> Self {
        self.map(|d, v| if other.get(d) < v { other.get(d) } else { v })
    }

    /// Keeps cores and memory, zeroes the I/O and storage dimensions.
    pub fn legacy_only(&self) -> Self {
        self.map(|d, v| if d.is_legacy() { v } else { Q::zero() })
    }
}

/// Sums a sequence of vectors, failing on overflow.
pub fn checked_sum<'a, Q: Quantity + 'a>(
    items: impl IntoIterator<Item = &'a ResourceVec<Q>>,
) -> Result<ResourceVec<Q>, Error> {
    items
        .into_iter()
        .try_fold(ResourceVec::zero(), |acc, v| acc.checked_add(v))
}

impl ResourceVec<u64> {
    /// Widens to a signed delta. Saturates above `i64::MAX`.
    pub fn to_delta(&self) -> ResourceVec<i64> {
        self.map(|_, v| i64::try_from(v).unwrap_or(i64::MAX))
    }

    /// Applies a signed delta, failing if any component would leave `u64`.
    pub fn apply_delta(&self, delta: &ResourceVec<i64>) -> Result<Self, Error> {
        let mut out = *self;
        for d in Dim::ALL {
            let cur = i128::from(self.get(d)) + i128::from(delta.get(d));
            *out.get_mut(d) = u64::try_from(cur).map_err(|_| Error::ResourceOverflow(d))?;
        }
        Ok(out)
    }

    pub fn saturating_sub(&self, rhs: &Self) -> Self {
        self.map(|d, v| v.saturating_sub(rhs.get(d)))
    }

    pub fn to_f64(&self) -> ResourceVec<f64> {
        self.map(|_, v| v as f64)
    }
}

impl ResourceVec<i64> {
    /// Positive parts only (the requested increases).
    pub fn increases(&self) -> ResourceVec<u64> {
        self.map(|_, v| if v > 0 { v as u64 } else { 0 })
    }

    /// Magnitudes of the negative parts (the requested releases).
    pub fn releases(&self) -> ResourceVec<u64> {
        self.map(|_, v| if v < 0 { v.unsigned_abs() } else { 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{ResourceDelta, ResourceVector};
    use proptest::prelude::*;

    const GIB: u64 = 1 << 30;

    fn cpu(n: u64) -> ResourceVector {
        ResourceVector::zero().with(Dim::CpuCores, n)
    }

    #[test]
    fn zero_is_additive_identity() {
        let b = ResourceVector {
            cpu_cores: 4,
            memory_bytes: 8 * GIB,
            ..Default::default()
        };
        assert_eq!(ResourceVector::zero().checked_add(&b).unwrap(), b);
    }

    #[test]
    fn sums_componentwise() {
        let a = cpu(2).with(Dim::FsBps, 100_000_000);
        let b = cpu(2).with(Dim::FsBps, 50_000_000);
        let s = a.checked_add(&b).unwrap();
        assert_eq!(s, cpu(4).with(Dim::FsBps, 150_000_000));
    }

    #[test]
    fn folding_sixteen_tasks_of_eight_cores_gives_128() {
        let tasks = vec![cpu(8); 16];
        assert_eq!(checked_sum(&tasks).unwrap(), cpu(128));
        assert_eq!(cpu(8).checked_scale(16).unwrap(), cpu(128));
    }

    #[test]
    fn overflow_is_a_hard_error() {
        let a = ResourceVector::zero().with(Dim::StorageBytes, u64::MAX);
        let err = a.checked_add(&ResourceVector::zero().with(Dim::StorageBytes, 1));
        assert!(matches!(
            err,
            Err(Error::ResourceOverflow(Dim::StorageBytes))
        ));
    }

    #[test]
    fn partial_order_examples() {
        let big = ResourceVector::splat(7);
        assert!(ResourceVector::zero().fits_within(&big));
        let a = cpu(4).with(Dim::MemoryBytes, 8 * GIB);
        assert!(a.fits_within(&a));
        assert!(!cpu(5).fits_within(&cpu(4)));
    }

    #[test]
    fn delta_application() {
        let base = cpu(8).with(Dim::FsBps, 10);
        let delta = ResourceDelta::zero()
            .with(Dim::CpuCores, 8)
            .with(Dim::FsBps, -10);
        assert_eq!(base.apply_delta(&delta).unwrap(), cpu(16));
        let too_much = ResourceDelta::zero().with(Dim::CpuCores, -9);
        assert!(base.apply_delta(&too_much).is_err());
        assert_eq!(delta.increases(), cpu(8));
        assert_eq!(
            delta.releases(),
            ResourceVector::zero().with(Dim::FsBps, 10)
        );
    }

    #[test]
    fn json_field_names_are_canonical() {
        let v = cpu(1).with(Dim::StorageBytes, 1 << 40);
        let json = serde_json::to_value(v).unwrap();
        for d in Dim::ALL {
            assert!(json.get(d.name()).is_some(), "missing {d}");
        }
        let partial: ResourceVector = serde_json::from_str(r#"{"cpu_cores": 3}"#).unwrap();
        assert_eq!(partial, cpu(3));
    }

    fn arb_rv() -> impl Strategy<Value = ResourceVector> {
        proptest::array::uniform7(0u64..1 << 40).prop_map(|a| ResourceVector {
            cpu_cores: a[0],
            memory_bytes: a[1],
            net_in_bps: a[2],
            net_out_bps: a[3],
            fs_bps: a[4],
            fs_iops: a[5],
            storage_bytes: a[6],
        })
    }

    proptest! {
        #[test]
        fn order_is_transitive(a in arb_rv(), b in arb_rv(), c in arb_rv()) {
            let lo = a.inf(&b).inf(&c);
            let mid = a.inf(&b);
            prop_assert!(lo.fits_within(&mid));
            prop_assert!(mid.fits_within(&a));
            prop_assert!(lo.fits_within(&a));
            if a.fits_within(&b) && b.fits_within(&c) {
                prop_assert!(a.fits_within(&c));
            }
        }

        #[test]
        fn summand_is_below_sum(a in arb_rv(), b in arb_rv()) {
            let s = a.checked_add(&b).unwrap();
            prop_assert!(a.fits_within(&s));
            prop_assert_eq!(s, b.checked_add(&a).unwrap());
        }

        #[test]
        fn addition_is_associative(a in arb_rv(), b in arb_rv(), c in arb_rv()) {
            let l = a.checked_add(&b).unwrap().checked_add(&c).unwrap();
            let r = a.checked_add(&b.checked_add(&c).unwrap()).unwrap();
            prop_assert_eq!(l, r);
        }

        #[test]
        fn json_round_trip_is_exact(a in proptest::array::uniform7(any::<u64>())) {
            let v = ResourceVector {
                cpu_cores: a[0], memory_bytes: a[1], net_in_bps: a[2], net_out_bps: a[3],
                fs_bps: a[4], fs_iops: a[5], storage_bytes: a[6],
            };
            let back: ResourceVector = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
