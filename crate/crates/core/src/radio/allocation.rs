use serde::{Deserialize, Serialize};

use super::RadioError;

/// Per-slice RB grants drawn from a shared pool.
///
/// Invariants: `1 <= grants[m] <= caps[m]` and `sum(grants) <= total`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AllocationState {
    grants: Vec<u32>,
    caps: Vec<u32>,
    total: u32,
}

impl AllocationState {
    pub fn new(grants: Vec<u32>, caps: Vec<u32>, total: u32) -> Result<Self, RadioError> {
        let state = AllocationState { grants, caps, total };
        state.check()?;
        Ok(state)
    }

    /// Splits the pool as evenly as possible, capped per slice.
    pub fn equal_split(slices: usize, cap: u32, total: u32) -> Result<Self, RadioError> {
        if slices == 0 || total < slices as u32 {
            return Err(RadioError::InvalidConfig(format!(
                "pool of {total} RBs cannot give {slices} slices one RB each"
            )));
        }
        let each = (total / slices as u32).min(cap).max(1);
        Self::new(vec![each; slices], vec![cap; slices], total)
    }

    pub fn grants(&self) -> &[u32] {
        &self.grants
    }

    pub fn caps(&self) -> &[u32] {
        &self.caps
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn slices(&self) -> usize {
        self.grants.len()
    }

    pub fn check(&self) -> Result<(), RadioError> {
        let fail = |msg: String| Err(RadioError::InvalidConfig(msg));
        if self.grants.len() != self.caps.len() {
            return fail("grant and cap vectors differ in length".into());
        }
        if self.total < self.grants.len() as u32 {
            return fail("pool smaller than one RB per slice".into());
        }
        for (m, (&w, &cap)) in self.grants.iter().zip(&self.caps).enumerate() {
            if w == 0 || w > cap {
                return fail(format!("slice {m}: grant {w} outside [1, {cap}]"));
            }
        }
        let sum: u64 = self.grants.iter().map(|&w| w as u64).sum();
        if sum > self.total as u64 {
            return fail(format!("grants sum {sum} exceeds pool {}", self.total));
        }
        Ok(())
    }

    /// Applies per-slice RB deltas and projects back onto the feasible set:
    /// clamp each slice to `[1, cap]`, then if the pool is oversubscribed
    /// scale every slice's share above the 1-RB floor proportionally,
    /// rounding down.
    pub fn apply(&self, deltas: &[i64]) -> AllocationState {
        assert_eq!(deltas.len(), self.grants.len(), "one delta per slice");
        let mut grants: Vec<u32> = self
            .grants
            .iter()
            .zip(deltas)
            .zip(&self.caps)
            .map(|((&w, &d), &cap)| (w as i64).saturating_add(d).clamp(1, cap as i64) as u32)
            .collect();
        let sum: u64 = grants.iter().map(|&w| w as u64).sum();
        if sum > self.total as u64 {
            let floor = grants.len() as u64;
            let excess_above_floor = sum - floor;
            let room = self.total as u64 - floor;
            for w in grants.iter_mut() {
                let above = (*w - 1) as u64;
                *w = 1 + (above * room / excess_above_floor) as u32;
            }
        }
        let out = AllocationState {
            grants,
            caps: self.caps.clone(),
            total: self.total,
        };
        debug_assert!(out.check().is_ok());
        out
    }

    /// Replaces all grants, e.g. from a centralized allocator. The result is
    /// projected the same way as [`AllocationState::apply`].
    pub fn with_grants(&self, target: &[u32]) -> AllocationState {
        let deltas: Vec<i64> = target
            .iter()
            .zip(&self.grants)
            .map(|(&t, &w)| t as i64 - w as i64)
            .collect();
        self.apply(&deltas)
    }
}

/// Maps a normalized action in `[-1, 1]` to an RB delta of at most
/// `max_delta` RBs.
pub fn action_to_delta(action: f64, max_delta: f64) -> i64 {
    (action.clamp(-1.0, 1.0) * max_delta).round() as i64
}
