//! Dense tables indexed by (state, action).

/// A dense `n_states x n_actions` table of reals. Used for policies,
/// rewards, occupancy measures, ratios, and q-values.
#[derive(Debug, Clone, PartialEq)]
pub struct SaTable {
    n_states: usize,
    n_actions: usize,
    data: Vec<f64>,
}

impl SaTable {
    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        SaTable { n_states, n_actions, data: vec![0.0; n_states * n_actions] }
    }

    pub fn from_fn(n_states: usize, n_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_states * n_actions);
        for s in 0..n_states {
            for a in 0..n_actions {
                data.push(f(s, a));
            }
        }
        SaTable { n_states, n_actions, data }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.data[s * self.n_actions + a]
    }

    #[inline]
    pub fn set(&mut self, s: usize, a: usize, v: f64) {
        self.data[s * self.n_actions + a] = v;
    }

    #[inline]
    pub fn add(&mut self, s: usize, a: usize, v: f64) {
        self.data[s * self.n_actions + a] += v;
    }

    /// Iterate entries in row-major (s, a) order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let na = self.n_actions;
        self.data.iter().enumerate().map(move |(i, &v)| (i / na, i % na, v))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scale(&mut self, c: f64) {
        for v in &mut self.data {
            *v *= c;
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flat row-major index of (s, a); matches the layout of `data()`.
    #[inline]
    pub fn flat_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major() {
        let t = SaTable::from_fn(3, 2, |s, a| (s * 10 + a) as f64);
        assert_eq!(t.get(0, 0), 0.0);
        assert_eq!(t.get(0, 1), 1.0);
        assert_eq!(t.get(2, 1), 21.0);
        assert_eq!(t.data()[t.flat_index(2, 1)], 21.0);
        assert_eq!(t.iter().count(), 6);
        let (s, a, v) = t.iter().nth(3).unwrap();
        assert_eq!((s, a, v), (1, 1, 11.0));
    }

    #[test]
    fn sum_and_scale() {
        let mut t = SaTable::from_fn(2, 2, |_, _| 0.25);
        assert!((t.sum() - 1.0).abs() < 1e-15);
        t.scale(2.0);
        assert!((t.sum() - 2.0).abs() < 1e-15);
    }
}
