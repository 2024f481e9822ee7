//! Half-open byte interval collections.

use std::collections::BTreeMap;
use std::ops::Range;

/// A set of bytes stored as disjoint, non-adjacent `[start, end)` runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IntervalSet {
    runs: BTreeMap<u64, u64>,
}

impl IntervalSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn len_bytes(&self) -> u64 {
        self.runs.iter().map(|(s, e)| e - s).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = Range<u64>> + '_ {
        self.runs.iter().map(|(&s, &e)| s..e)
    }

    pub fn insert(&mut self, range: Range<u64>) {
        if range.is_empty() {
            return;
        }
        let (mut start, mut end) = (range.start, range.end);
        // Absorb a run that starts before us and touches us.
        if let Some((&s, &e)) = self.runs.range(..=start).next_back() {
            if e >= start {
                start = s;
                end = end.max(e);
            }
        }
        let absorbed: Vec<u64> = self.runs.range(start..=end).map(|(&s, _)| s).collect();
        for s in absorbed {
            let e = self.runs.remove(&s).expect("present");
            end = end.max(e);
        }
        self.runs.insert(start, end);
    }

    pub fn contains(&self, addr: u64) -> bool {
        self.runs.range(..=addr).next_back().is_some_and(|(_, &e)| addr < e)
    }

    pub fn covers(&self, range: Range<u64>) -> bool {
        range.is_empty()
            || self
                .runs
                .range(..=range.start)
                .next_back()
                .is_some_and(|(_, &e)| range.end <= e)
    }

    /// Sub-ranges of `range` not in the set, in ascending order.
    pub fn uncovered(&self, range: Range<u64>) -> Vec<Range<u64>> {
        let mut out = Vec::new();
        let mut cursor = range.start;
        let first = self
            .runs
            .range(..=range.start)
            .next_back()
            .map(|(&s, _)| s)
            .unwrap_or(range.start);
        for (&s, &e) in self.runs.range(first..range.end) {
            if e <= cursor {
                continue;
            }
            if s > cursor {
                out.push(cursor..s.min(range.end));
            }
            cursor = cursor.max(e);
            if cursor >= range.end {
                break;
            }
        }
        if cursor < range.end {
            out.push(cursor..range.end);
        }
        out
    }
}

/// Maps bytes to the most recent value assigned over them; assigning a range
/// overwrites whatever it overlaps.
#[derive(Debug, Clone, Default)]
pub struct IntervalMap<T> {
    // start -> (end, value)
    runs: BTreeMap<u64, (u64, T)>,
}

impl<T: Clone + PartialEq> IntervalMap<T> {
    pub fn new() -> Self {
        Self { runs: BTreeMap::new() }
    }

    pub fn assign(&mut self, range: Range<u64>, value: T) {
        if range.is_empty() {
            return;
        }
        // Split a run straddling range.start.
        if let Some((&s, (e, v))) = self.runs.range(..range.start).next_back() {
            let (e, v) = (*e, v.clone());
            if e > range.start {
                self.runs.insert(s, (range.start, v.clone()));
                if e > range.end {
                    self.runs.insert(range.end, (e, v));
                }
            }
        }
        let inside: Vec<u64> = self.runs.range(range.start..range.end).map(|(&s, _)| s).collect();
        for s in inside {
            let (e, v) = self.runs.remove(&s).expect("present");
            if e > range.end {
                self.runs.insert(range.end, (e, v));
            }
        }
        self.runs.insert(range.start, (range.end, value));
    }

    /// Values overlapping `range` with the overlapping sub-range of each.
    pub fn overlapping(&self, range: Range<u64>) -> Vec<(Range<u64>, T)> {
        let mut out = Vec::new();
        if range.is_empty() {
            return out;
        }
        if let Some((_, (e, v))) = self.runs.range(..range.start).next_back() {
            if *e > range.start {
                out.push((range.start..(*e).min(range.end), v.clone()));
            }
        }
        for (&s, (e, v)) in self.runs.range(range.start..range.end) {
            out.push((s..(*e).min(range.end), v.clone()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::{BTreeSet, HashMap};

    #[test]
    fn uncovered_sub_ranges() {
        let mut s = IntervalSet::new();
        s.insert(10..20);
        s.insert(30..40);
        assert_eq!(s.uncovered(0..50), vec![0..10, 20..30, 40..50]);
        assert_eq!(s.uncovered(12..18), Vec::<Range<u64>>::new());
        assert_eq!(s.uncovered(15..35), vec![20..30]);
        s.insert(20..30);
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![10..40]);
    }

    #[test]
    fn assign_splits_runs() {
        let mut m = IntervalMap::new();
        m.assign(0..100, 1);
        m.assign(40..60, 2);
        assert_eq!(m.overlapping(30..70), vec![(30..40, 1), (40..60, 2), (60..70, 1)]);
    }

    fn ops() -> impl Strategy<Value = Vec<(u64, u64)>> {
        proptest::collection::vec((0u64..200, 1u64..40), 1..30)
    }

    proptest! {
        // Byte-set oracle: every operation mirrored on a BTreeSet<u64>.
        #[test]
        fn interval_set_matches_byte_set(inserts in ops(), probe in (0u64..220, 1u64..60)) {
            let mut set = IntervalSet::new();
            let mut bytes = BTreeSet::new();
            for (s, l) in inserts {
                set.insert(s..s + l);
                bytes.extend(s..s + l);
            }
            prop_assert_eq!(set.len_bytes(), bytes.len() as u64);
            let probe = probe.0..probe.0 + probe.1;
            let missing: BTreeSet<u64> = probe.clone().filter(|b| !bytes.contains(b)).collect();
            let uncovered: BTreeSet<u64> = set.uncovered(probe.clone()).into_iter().flatten().collect();
            prop_assert_eq!(&uncovered, &missing);
            prop_assert_eq!(set.covers(probe.clone()), missing.is_empty());
            for b in probe {
                prop_assert_eq!(set.contains(b), bytes.contains(&b));
            }
            let runs: Vec<_> = set.iter().collect();
            for w in runs.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
        }

        #[test]
        fn interval_map_matches_byte_map(assigns in ops(), probe in (0u64..220, 1u64..60)) {
            let mut map = IntervalMap::new();
            let mut bytes = HashMap::new();
            for (i, (s, l)) in assigns.into_iter().enumerate() {
                map.assign(s..s + l, i);
                for b in s..s + l {
                    bytes.insert(b, i);
                }
            }
            let probe = probe.0..probe.0 + probe.1;
            let mut seen = HashMap::new();
            for (r, v) in map.overlapping(probe.clone()) {
                for b in r {
                    prop_assert!(seen.insert(b, v).is_none());
                }
            }
            for b in probe {
                prop_assert_eq!(seen.get(&b), bytes.get(&b));
            }
        }
    }
}
