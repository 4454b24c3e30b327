use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Fixed Gaussian projection `d × m` used for sign hashing.
#[derive(Debug, Clone, PartialEq)]
pub struct HashProjector {
    matrix: Tensor<f64>,
}

impl HashProjector {
    pub fn new(dim: usize, bits: usize, seed: u64) -> Result<Self> {
        if bits == 0 || bits >= dim {
            return Err(Error::Config(format!(
                "hash dimension must be in 1..{dim} (below the model dimension), got {bits}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dim * bits).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(HashProjector {
            matrix: Tensor::from_vec(dim, bits, data),
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn bits(&self) -> usize {
        self.matrix.cols()
    }

    /// Bit `j` is set iff `(x H)_j > 0`.
    pub fn fingerprint<T: Real>(&self, x: &[T]) -> Fingerprint {
        assert_eq!(x.len(), self.dim(), "fingerprint input has wrong dimension");
        let mut proj = vec![0.0f64; self.bits()];
        for (r, v) in x.iter().enumerate() {
            let v = v.as_f64();
            for (p, h) in proj.iter_mut().zip(self.matrix.row(r)) {
                *p += v * h;
            }
        }
        let mut fp = Fingerprint::zeros(self.bits());
        for (j, &p) in proj.iter().enumerate() {
            if p > 0.0 {
                fp.set(j);
            }
        }
        fp
    }
}

/// Packed bit vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    bits: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn zeros(bits: usize) -> Self {
        Fingerprint {
            bits,
            words: vec![0; bits.div_ceil(64)],
        }
    }

    /// Bits from the low end of `value`.
    pub fn from_u64(bits: usize, value: u64) -> Self {
        assert!(bits <= 64);
        let mut fp = Self::zeros(bits);
        if bits > 0 {
            fp.words[0] = if bits == 64 { value } else { value & ((1 << bits) - 1) };
        }
        fp
    }

    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn get(&self, j: usize) -> bool {
        self.words[j / 64] >> (j % 64) & 1 == 1
    }

    pub fn set(&mut self, j: usize) {
        assert!(j < self.bits);
        self.words[j / 64] |= 1 << (j % 64);
    }

    pub fn complement(&self) -> Self {
        let mut out = self.clone();
        for w in &mut out.words {
            *w = !*w;
        }
        let tail = self.bits % 64;
        if tail != 0 {
            *out.words.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
        out
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }
}

/// Number of differing bits; panics if the widths differ.
pub fn hamming(a: &Fingerprint, b: &Fingerprint) -> u32 {
    assert_eq!(a.bits, b.bits, "hamming distance between fingerprints of different widths");
    a.words.iter().zip(&b.words).map(|(x, y)| (x ^ y).count_ones()).sum()
}
