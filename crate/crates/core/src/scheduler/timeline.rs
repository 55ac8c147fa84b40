//! Piecewise-constant per-node commitments over time.

use std::collections::BTreeMap;

use crate::model::{AppId, Millis, NodeId};
use crate::ResourceVector;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Span {
    pub app_id: AppId,
    pub start: Millis,
    pub end: Millis,
    pub amount: ResourceVector,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Timeline {
    spans: BTreeMap<NodeId, Vec<Span>>,
}

impl Timeline {
    pub fn add(&mut self, node: &NodeId, span: Span) {
        if span.start < span.end {
            self.spans.entry(node.clone()).or_default().push(span);
        }
    }

    pub fn remove_app(&mut self, app: &AppId) {
        for v in self.spans.values_mut() {
            v.retain(|s| &s.app_id != app);
        }
    }

    pub fn spans(&self, node: &NodeId) -> &[Span] {
        self.spans.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Span)> {
        self.spans
            .iter()
            .flat_map(|(n, v)| v.iter().map(move |s| (n, s)))
    }

    /// Committed sum on `node` at instant `t`. Saturates instead of overflowing;
    /// callers compare the result against a capacity.
    pub fn committed_at(&self, node: &NodeId, t: Millis) -> ResourceVector {
        let mut sum = ResourceVector::zero();
        for s in self.spans(node) {
            if s.start <= t && t < s.end {
                sum = sum.map(|d, v| v.saturating_add(s.amount.get(d)));
            }
        }
        sum
    }

    /// Instants where the committed sum on `node` can change within `[from, to)`,
    /// including `from` itself.
    fn instants(&self, node: &NodeId, from: Millis, to: Millis) -> Vec<Millis> {
        let mut ts: Vec<Millis> = std::iter::once(from)
            .chain(
                self.spans(node)
                    .iter()
                    .flat_map(|s| [s.start, s.end])
                    .filter(|&t| from < t && t < to),
            )
            .collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }

    /// Component-wise maximum of the committed sum over `[from, to)`.
    pub fn peak(&self, node: &NodeId, from: Millis, to: Millis) -> ResourceVector {
        self.instants(node, from, to)
            .into_iter()
            .map(|t| self.committed_at(node, t))
            .fold(ResourceVector::zero(), |acc, v| acc.sup(&v))
    }

    /// Earliest instant in `[from, to)` where adding `extra` on `node` exceeds
    /// `capacity` in some dimension.
    pub fn first_overflow(
        &self,
        node: &NodeId,
        from: Millis,
        to: Millis,
        extra: &ResourceVector,
        capacity: &ResourceVector,
    ) -> Option<Millis> {
        if from >= to {
            return None;
        }
        self.instants(node, from, to).into_iter().find(|&t| {
            match self.committed_at(node, t).checked_add(extra) {
                Ok(total) => !total.fits_within(capacity),
                Err(_) => true,
            }
        })
    }

    /// Every span end strictly after `now`, sorted.
    pub fn release_points(&self, now: Millis) -> Vec<Millis> {
        let mut ts: Vec<Millis> = self
            .iter()
            .map(|(_, s)| s.end)
            .filter(|&e| e > now)
            .collect();
        ts.sort_unstable();
        ts.dedup();
        ts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resource::Dim;

    fn cpu(n: u64) -> ResourceVector {
        ResourceVector::zero().with(Dim::CpuCores, n)
    }

    fn span(start: Millis, end: Millis, c: u64) -> Span {
        Span {
            app_id: "x".into(),
            start,
            end,
            amount: cpu(c),
        }
    }

    #[test]
    fn peak_and_overflow_scan() {
        let n: NodeId = "n".into();
        let mut tl = Timeline::default();
        tl.add(&n, span(0, 100, 4));
        tl.add(&n, span(50, 200, 8));
        assert_eq!(tl.peak(&n, 0, 50), cpu(4));
        assert_eq!(tl.peak(&n, 0, 51), cpu(12));
        assert_eq!(tl.peak(&n, 100, 300), cpu(8));
        assert_eq!(tl.peak(&n, 200, 300), cpu(0));
        let cap = cpu(16);
        assert_eq!(tl.first_overflow(&n, 0, 300, &cpu(6), &cap), Some(50));
        assert_eq!(tl.first_overflow(&n, 100, 300, &cpu(8), &cap), None);
        assert_eq!(tl.release_points(60), vec![100, 200]);
    }
}
