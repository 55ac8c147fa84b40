//! Max-min fair division of a shared capacity.

use crate::quantity::Quantity;

/// Divides `capacity` among claimants with the given `demands` so that no
/// claimant's share can grow without shrinking a share that is no larger.
///
/// Claimants are satisfied in order of increasing demand; once the remaining
/// capacity cannot cover the next demand, every remaining claimant receives an
/// equal share. For integer quantities the indivisible remainder goes one unit
/// at a time to the unsatisfied claimants with the lowest indices, so the
/// result is deterministic and sums exactly to `min(capacity, sum(demands))`.
pub fn water_fill<Q: Quantity>(capacity: Q, demands: &[Q]) -> Vec<Q> {
    let mut out = vec![Q::zero(); demands.len()];
    let mut order: Vec<usize> = (0..demands.len()).collect();
    order.sort_by(|&a, &b| {
        demands[a]
            .partial_cmp(&demands[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut remaining = capacity;
    for (k, &i) in order.iter().enumerate() {
        let left = order.len() - k;
        let (share, _) = remaining.split_even(left);
        if demands[i] <= share {
            out[i] = demands[i];
            remaining = remaining - demands[i];
            continue;
        }
        // Every claimant from here on demands more than an equal share.
        let (share, rem) = remaining.split_even(left);
        let mut rest: Vec<usize> = order[k..].to_vec();
        rest.sort_unstable();
        let mut extra = rem;
        for j in rest {
            out[j] = share;
            if extra > Q::zero() {
                out[j] = out[j] + Q::one();
                extra = extra - Q::one();
            }
        }
        break;
    }
    out
}
