//! Tournament tree over `f64` keys: point update and argmax in O(log n),
//! ties resolved toward the lowest slot.

#[derive(Clone, Debug)]
pub(crate) struct MaxTree {
    size: usize,
    len: usize,
    keys: Vec<f64>,
    /// winner slot of each internal node; leaves live at `size + slot`
    win: Vec<u32>,
}

impl MaxTree {
    pub fn new(len: usize) -> Self {
        let size = len.max(1).next_power_of_two();
        let mut win = vec![0u32; 2 * size];
        for slot in 0..size {
            win[size + slot] = slot as u32;
        }
        let mut tree = Self { size, len, keys: vec![f64::NEG_INFINITY; size], win };
        for node in (1..size).rev() {
            tree.pull_up(node);
        }
        tree
    }

    #[inline]
    fn pull_up(&mut self, node: usize) {
        let l = self.win[2 * node];
        let r = self.win[2 * node + 1];
        self.win[node] = if self.keys[r as usize] > self.keys[l as usize] { r } else { l };
    }

    #[inline]
    pub fn set(&mut self, slot: usize, key: f64) {
        debug_assert!(slot < self.len);
        self.keys[slot] = key;
        let mut node = (self.size + slot) / 2;
        while node >= 1 {
            self.pull_up(node);
            node /= 2;
        }
    }

    #[inline]
    pub fn get(&self, slot: usize) -> f64 {
        self.keys[slot]
    }

    /// `(slot, key)` of the maximum; `None` when every key is `-inf`.
    #[inline]
    pub fn argmax(&self) -> Option<(usize, f64)> {
        let slot = if self.size == 1 { 0 } else { self.win[1] as usize };
        let key = self.keys[slot];
        (key > f64::NEG_INFINITY).then_some((slot, key))
    }

    pub fn max_key(&self) -> f64 {
        self.argmax().map_or(f64::NEG_INFINITY, |(_, k)| k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ties_go_low() {
        let mut t = MaxTree::new(5);
        assert_eq!(t.argmax(), None);
        t.set(3, 1.0);
        t.set(1, 1.0);
        assert_eq!(t.argmax(), Some((1, 1.0)));
        t.set(4, 1.5);
        assert_eq!(t.argmax(), Some((4, 1.5)));
        t.set(4, f64::NEG_INFINITY);
        assert_eq!(t.argmax(), Some((1, 1.0)));
        let mut one = MaxTree::new(1);
        one.set(0, -3.0);
        assert_eq!(one.argmax(), Some((0, -3.0)));
    }

    proptest! {
        #[test]
        fn matches_linear_scan(ops in proptest::collection::vec((0usize..37, -3i32..3), 1..200)) {
            let mut t = MaxTree::new(37);
            let mut keys = vec![f64::NEG_INFINITY; 37];
            for (slot, v) in ops {
                let key = if v == -3 { f64::NEG_INFINITY } else { v as f64 };
                t.set(slot, key);
                keys[slot] = key;
                let mut best: Option<(usize, f64)> = None;
                for (i, &k) in keys.iter().enumerate() {
                    if k > f64::NEG_INFINITY && best.map_or(true, |(_, b)| k > b) {
                        best = Some((i, k));
                    }
                }
                prop_assert_eq!(t.argmax(), best);
            }
        }
    }
}
