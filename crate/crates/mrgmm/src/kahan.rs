//! Compensated (Kahan) accumulation in fixed observation order.
//!
//! Every per-observation reduction in the crate runs left to right over the
//! observation index with a compensation term, so a quantity computed once is
//! computed to the same bits on every run and every thread count.

/// Kahan accumulator over a flat buffer of scalars (vector or matrix
/// entries).
#[derive(Debug, Clone)]
pub struct KahanVec {
    sum: Vec<f64>,
    comp: Vec<f64>,
}

impl KahanVec {
    pub fn zeros(len: usize) -> Self {
        KahanVec {
            sum: vec![0.0; len],
            comp: vec![0.0; len],
        }
    }

    pub fn add_slice(&mut self, xs: &[f64]) {
        debug_assert_eq!(xs.len(), self.sum.len());
        for (k, &x) in xs.iter().enumerate() {
            let y = x - self.comp[k];
            let t = self.sum[k] + y;
            self.comp[k] = (t - self.sum[k]) - y;
            self.sum[k] = t;
        }
    }

    /// Finishes the mean over `n` terms.
    pub fn into_mean(self, n: usize) -> Vec<f64> {
        let inv = 1.0 / n as f64;
        self.sum.into_iter().map(|s| s * inv).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_beats_naive() {
        // 1 + 1e-16 repeated: naive summation loses the small terms.
        let mut acc = KahanVec::zeros(1);
        acc.add_slice(&[1.0]);
        for _ in 0..10_000 {
            acc.add_slice(&[1e-16]);
        }
        let total = acc.into_mean(1)[0];
        assert!((total - (1.0 + 1e-12)).abs() < 1e-15);
    }

    #[test]
    fn vec_mean() {
        let mut acc = KahanVec::zeros(2);
        acc.add_slice(&[1.0, 2.0]);
        acc.add_slice(&[3.0, 4.0]);
        assert_eq!(acc.into_mean(2), vec![2.0, 3.0]);
    }
}
