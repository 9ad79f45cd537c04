//! Iterative in-place radix-2 FFT.

use std::f64::consts::PI;

use num_complex::Complex64;

/// Precomputed twiddles and bit-reversal permutation for one transform size.
#[derive(Debug, Clone)]
pub struct Radix2Fft {
    size: usize,
    twiddles: Vec<Complex64>,
    bit_reverse: Vec<usize>,
}

impl Radix2Fft {
    /// `size` must be a power of two.
    pub fn new(size: usize) -> Self {
        assert!(
            size.is_power_of_two(),
            "FFT size {size} is not a power of two"
        );
        let bits = size.trailing_zeros();
        let bit_reverse = (0..size)
            .map(|i| {
                if bits == 0 {
                    0
                } else {
                    i.reverse_bits() >> (usize::BITS - bits)
                }
            })
            .collect();
        // forward kernel exp(-2πik/N)
        let twiddles = (0..size / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / size as f64))
            .collect();
        Radix2Fft {
            size,
            twiddles,
            bit_reverse,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Forward transform without normalization.
    pub fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.size);
        for i in 0..self.size {
            let j = self.bit_reverse[i];
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= self.size {
            let half = len / 2;
            let stride = self.size / len;
            for block in buf.chunks_exact_mut(len) {
                let (lo, hi) = block.split_at_mut(half);
                for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = *b * self.twiddles[k * stride];
                    *b = *a - t;
                    *a += t;
                }
            }
            len *= 2;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, v)| {
                        v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn matches_naive_dft_for_small_sizes() {
        for &n in &[1usize, 2, 4, 8, 64] {
            let x: Vec<Complex64> = (0..n)
                .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 1.3).cos()))
                .collect();
            let mut y = x.clone();
            Radix2Fft::new(n).process(&mut y);
            for (a, b) in y.iter().zip(naive_dft(&x)) {
                assert!((a - b).norm() < 1e-10, "n={n}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn impulse_is_flat() {
        let mut x = vec![Complex64::new(0.0, 0.0); 16];
        x[0] = Complex64::new(1.0, 0.0);
        Radix2Fft::new(16).process(&mut x);
        assert!(x
            .iter()
            .all(|v| (v - Complex64::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    #[should_panic]
    fn rejects_non_power_of_two() {
        Radix2Fft::new(12);
    }
}
