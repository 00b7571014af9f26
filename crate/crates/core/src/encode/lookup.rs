/// Table of GCN normalisation coefficients `1/sqrt(a*b)` indexed by
/// `p = a * radix + b` for degrees `a, b` in `0..radix`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeLookup {
    radix: usize,
    g: Vec<f64>,
}

impl DegreeLookup {
    /// Lookup for degrees `0..=max_degree`, a table of `(max_degree + 1)^2`
    /// entries. Entries with a zero degree are 0.
    pub fn new(max_degree: usize) -> Self {
        let radix = max_degree + 1;
        let g = (0..radix * radix)
            .map(|p| {
                let (a, b) = (p / radix, p % radix);
                if a == 0 || b == 0 {
                    0.0
                } else {
                    1.0 / ((a * b) as f64).sqrt()
                }
            })
            .collect();
        Self { radix, g }
    }

    pub fn radix(&self) -> usize {
        self.radix
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn index(&self, a: usize, b: usize) -> usize {
        assert!(a < self.radix && b < self.radix, "degree out of range");
        a * self.radix + b
    }

    pub fn get(&self, p: usize) -> f64 {
        self.g[p]
    }

    pub fn value(&self, a: usize, b: usize) -> f64 {
        self.g[self.index(a, b)]
    }

    pub fn entries(&self) -> &[f64] {
        &self.g
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form() {
        let t = DegreeLookup::new(4);
        assert_eq!(t.len(), 25);
        assert_eq!(t.index(2, 3), 13);
        assert!((t.get(13) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(t.value(0, 3), 0.0);
        assert_eq!(t.value(1, 1), 1.0);
        assert!(t.entries().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
