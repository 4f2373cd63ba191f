/// Fenwick (binary indexed) tree over nonnegative event rates with a cached
/// grand total and weighted selection in `O(log n)`.
#[derive(Debug, Clone)]
pub struct RateIndex {
    values: Vec<f64>,
    tree: Vec<f64>,
    total: f64,
    top_bit: usize,
    updates_since_rebuild: u64,
    rebuild_every: u64,
}

const DEFAULT_REBUILD_EVERY: u64 = 1 << 20;

impl RateIndex {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        let top_bit = if n == 0 { 0 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
        // Slots past `n` hold +inf so the descent in `select` needs no
        // bounds test.
        let mut idx = RateIndex {
            tree: vec![f64::INFINITY; (2 * top_bit).max(n + 1)],
            values,
            total: 0.0,
            top_bit,
            updates_since_rebuild: 0,
            rebuild_every: DEFAULT_REBUILD_EVERY,
        };
        idx.rebuild();
        idx
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn set_rebuild_interval(&mut self, every: u64) {
        self.rebuild_every = every.max(1);
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        debug_assert!(v >= 0.0 && v.is_finite());
        let delta = v - self.values[i];
        if delta == 0.0 {
            return;
        }
        self.values[i] = v;
        self.total += delta;
        let mut j = i + 1;
        let n = self.values.len();
        while j <= n {
            self.tree[j] += delta;
            j += j & j.wrapping_neg();
        }
        self.updates_since_rebuild += 1;
        if self.updates_since_rebuild >= self.rebuild_every {
            self.rebuild();
        }
    }

    /// Sum of the first `i` leaves.
    pub fn prefix_sum(&self, i: usize) -> f64 {
        let mut s = 0.0;
        let mut j = i;
        while j > 0 {
            s += self.tree[j];
            j &= j - 1;
        }
        s
    }

    /// Recomputes internal nodes and the total from the leaves; returns the
    /// relative change of the total.
    pub fn rebuild(&mut self) -> f64 {
        let n = self.values.len();
        self.tree[0] = 0.0;
        self.tree[1..=n].copy_from_slice(&self.values);
        for j in 1..=n {
            let parent = j + (j & j.wrapping_neg());
            if parent <= n {
                let v = self.tree[j];
                self.tree[parent] += v;
            }
        }
        let fresh: f64 = self.values.iter().sum();
        let drift = if fresh > 0.0 {
            (fresh - self.total).abs() / fresh
        } else {
            (fresh - self.total).abs()
        };
        self.total = fresh;
        self.updates_since_rebuild = 0;
        drift
    }

    /// Index `i` with `prefix(i) <= target < prefix(i + 1)`, never a
    /// zero-rate leaf. `target` is expected in `[0, total)`.
    #[inline]
    pub fn select(&self, target: f64) -> usize {
        self.select_with_remainder(target).0
    }

    /// Like [`select`](Self::select), also returning `target - prefix(i)`
    /// clamped to the leaf.
    #[inline]
    pub fn select_with_remainder(&self, target: f64) -> (usize, f64) {
        let n = self.values.len();
        let mut pos = 0;
        let mut rem = target;
        let mut step = self.top_bit;
        while step > 0 {
            let v = self.tree[pos + step];
            let take = v <= rem;
            rem -= if take { v } else { 0.0 };
            pos += if take { step } else { 0 };
            step >>= 1;
        }
        if pos < n && self.values[pos] > 0.0 {
            return (pos, rem.clamp(0.0, self.values[pos]));
        }
        let i = self.nearest_positive(pos);
        (i, 0.5 * self.values[i])
    }

    #[cold]
    fn nearest_positive(&self, pos: usize) -> usize {
        let n = self.values.len();
        let start = pos.min(n - 1);
        (0..=start)
            .rev()
            .chain(start + 1..n)
            .find(|&i| self.values[i] > 0.0)
            .expect("select called on an index with zero total")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamRng};
    use rand::Rng;

    #[test]
    fn prefix_sums_and_updates() {
        let mut idx = RateIndex::new(vec![1.0, 0.0, 2.0, 3.0, 0.5]);
        assert_eq!(idx.total(), 6.5);
        assert_eq!(idx.prefix_sum(3), 3.0);
        idx.set(1, 4.0);
        assert_eq!(idx.prefix_sum(2), 5.0);
        assert_eq!(idx.total(), 10.5);
        assert_eq!(idx.select(0.0), 0);
        assert_eq!(idx.select(0.99), 0);
        assert_eq!(idx.select(1.0), 1);
        assert_eq!(idx.select(5.0), 2);
        assert_eq!(idx.select(10.49), 4);
    }

    #[test]
    fn select_skips_zero_leaves() {
        let idx = RateIndex::new(vec![0.0, 0.0, 1.0, 0.0]);
        for t in [0.0, 0.3, 0.999_999, 1.0, 2.0] {
            assert_eq!(idx.select(t), 2);
        }
    }

    #[test]
    fn random_updates_keep_totals() {
        let mut rng = StreamRng::new(5, 0, Purpose::Test);
        let n = 37;
        let mut idx = RateIndex::new(vec![0.0; n]);
        idx.set_rebuild_interval(1000);
        let mut shadow = vec![0.0; n];
        for _ in 0..20_000 {
            let i = rng.gen_range(0..n);
            let v = if rng.gen_bool(0.2) { 0.0 } else { rng.gen::<f64>() * 10.0 };
            idx.set(i, v);
            shadow[i] = v;
        }
        let exact: f64 = shadow.iter().sum();
        assert!((idx.total() - exact).abs() < 1e-9 * exact);
        for k in 0..=n {
            let want: f64 = shadow[..k].iter().sum();
            assert!((idx.prefix_sum(k) - want).abs() < 1e-9 * exact.max(1.0));
        }
        assert!(idx.rebuild() < 1e-9);
    }
}
