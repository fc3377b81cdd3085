//! Space-filling designs on the unit hypercube.

use rand::seq::SliceRandom;
use rand::Rng;

/// Latin-hypercube design of `n` points in `[0,1]^d`, one point per stratum
/// per dimension with a uniform jitter inside the stratum.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            p[j] = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    points
}

/// Owen-scrambled Sobol sequence; falls back to i.i.d. uniform draws for
/// dimensions past what the direction-number table covers.
#[derive(Debug, Clone)]
pub struct ScrambledSobol {
    dim: usize,
    seed: u32,
    next: u32,
}

impl ScrambledSobol {
    pub fn new(dim: usize, seed: u32) -> Self {
        Self { dim, seed, next: 0 }
    }

    pub fn supports(dim: usize) -> bool {
        dim <= sobol_burley::NUM_DIMENSIONS as usize
    }

    /// Fills `out` (length `dim`) with the next point. Returns `false` once
    /// the sequence is exhausted or the dimension is unsupported.
    pub fn fill_next(&mut self, out: &mut [f64]) -> bool {
        if !Self::supports(self.dim) || self.next == u32::MAX {
            return false;
        }
        for (j, o) in out.iter_mut().enumerate() {
            *o = sobol_burley::sample(self.next, j as u32, self.seed) as f64;
        }
        self.next += 1;
        true
    }
}

/// `n` scrambled low-discrepancy points in `[0,1]^d`.
pub fn sobol_points<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut seq = ScrambledSobol::new(d, rng.random());
    (0..n)
        .map(|_| {
            let mut p = vec![0.0; d];
            if !seq.fill_next(&mut p) {
                p.iter_mut().for_each(|v| *v = rng.random());
            }
            p
        })
        .collect()
}
