//! Symmetric indefinite-safe linear algebra for the timing NLP.
//!
//! The Newton systems have a banded core (collocation nodes couple only with
//! their neighbours) bordered by a few dense rows/columns (the total time and,
//! in periodic mode, the seam node that every wrap-around constraint touches).
//! They are solved by a banded LDLᵀ factorization plus a dense Schur
//! complement on the border. Factorization fails softly (returns `NotPd`) on
//! a non-positive pivot so the caller can add damping and retry.

/// Symmetric matrix split as `[B C; Cᵀ D]` with banded `B` (lower half-band
/// `hb`), dense coupling `C` (n_b × n_s) and dense corner `D` (n_s × n_s).
#[derive(Clone, Debug)]
pub struct BorderedSystem {
    pub n_b: usize,
    pub hb: usize,
    pub n_s: usize,
    /// Lower band of B, packed column-major: entry (i, j), j ≤ i ≤ j+hb,
    /// lives at `band[j*(hb+1) + (i-j)]`.
    band: Vec<f64>,
    /// C in column-major order (column = border variable).
    border: Vec<f64>,
    /// D, row-major (symmetric, both triangles kept).
    corner: Vec<f64>,
}

/// Factorization hit a pivot ≤ threshold: the matrix is not (numerically)
/// positive definite at the current damping level.
#[derive(Debug, Clone, Copy)]
pub struct NotPd;

impl BorderedSystem {
    pub fn new(n_b: usize, hb: usize, n_s: usize) -> Self {
        Self {
            n_b,
            hb,
            n_s,
            band: vec![0.0; n_b * (hb + 1)],
            border: vec![0.0; n_b * n_s],
            corner: vec![0.0; n_s * n_s],
        }
    }

    pub fn n(&self) -> usize {
        self.n_b + self.n_s
    }

    pub fn reset(&mut self) {
        self.band.fill(0.0);
        self.border.fill(0.0);
        self.corner.fill(0.0);
    }

    /// Accumulate into entry (i, j) of the full symmetric matrix (global
    /// indices; border variables are the trailing `n_s`). Panics if (i, j)
    /// falls in the banded block but outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi < self.n_b {
            let d = hi - lo;
            assert!(d <= self.hb, "entry ({i},{j}) outside half-band {}", self.hb);
            self.band[lo * (self.hb + 1) + d] += v;
        } else if lo < self.n_b {
            self.border[(hi - self.n_b) * self.n_b + lo] += v;
        } else {
            let (bi, bj) = (i - self.n_b, j - self.n_b);
            self.corner[bi * self.n_s + bj] += v;
            if bi != bj {
                self.corner[bj * self.n_s + bi] += v;
            }
        }
    }

    /// Add `nu` to every diagonal entry.
    pub fn add_diagonal(&mut self, nu: f64) {
        for j in 0..self.n_b {
            self.band[j * (self.hb + 1)] += nu;
        }
        for j in 0..self.n_s {
            self.corner[j * self.n_s + j] += nu;
        }
    }

    /// Overwrite row/column `i` with the identity row (used to freeze an
    /// actively bounded variable: the Newton step keeps it unmoved).
    pub fn freeze(&mut self, i: usize) {
        if i < self.n_b {
            let lo = i.saturating_sub(self.hb);
            for j in lo..=i {
                self.band[j * (self.hb + 1) + (i - j)] = 0.0;
            }
            let hi = (i + self.hb).min(self.n_b - 1);
            for r in i..=hi {
                self.band[i * (self.hb + 1) + (r - i)] = 0.0;
            }
            for s in 0..self.n_s {
                self.border[s * self.n_b + i] = 0.0;
            }
            self.band[i * (self.hb + 1)] = 1.0;
        } else {
            let b = i - self.n_b;
            for j in 0..self.n_s {
                self.corner[b * self.n_s + j] = 0.0;
                self.corner[j * self.n_s + b] = 0.0;
            }
            for r in 0..self.n_b {
                self.border[b * self.n_b + r] = 0.0;
            }
            self.corner[b * self.n_s + b] = 1.0;
        }
    }

    /// Solve `K x = rhs` via banded LDLᵀ + Schur complement on the border.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, NotPd> {
        assert_eq!(rhs.len(), self.n());
        let fac = BandedLdl::factor(self.n_b, self.hb, &self.band)?;

        // W = B⁻¹ C, one banded solve per border column
        let mut w = vec![0.0; self.n_b * self.n_s];
        for s in 0..self.n_s {
            let col = &self.border[s * self.n_b..(s + 1) * self.n_b];
            let sol = fac.solve(col);
            w[s * self.n_b..(s + 1) * self.n_b].copy_from_slice(&sol);
        }

        // Schur complement S = D − Cᵀ W (dense, symmetric)
        let mut schur = self.corner.clone();
        for i in 0..self.n_s {
            for j in 0..self.n_s {
                let mut dot = 0.0;
                for r in 0..self.n_b {
                    dot += self.border[i * self.n_b + r] * w[j * self.n_b + r];
                }
                schur[i * self.n_s + j] -= dot;
            }
        }

        let y_b = fac.solve(&rhs[..self.n_b]);
        let mut rhs_s = vec![0.0; self.n_s];
        for s in 0..self.n_s {
            let mut dot = 0.0;
            for r in 0..self.n_b {
                dot += self.border[s * self.n_b + r] * y_b[r];
            }
            rhs_s[s] = rhs[self.n_b + s] - dot;
        }
        let x_s = dense_ldl_solve(self.n_s, &schur, &rhs_s)?;

        // back-substitute: x_b = y_b − W x_s
        let mut x = vec![0.0; self.n()];
        for r in 0..self.n_b {
            let mut v = y_b[r];
            for s in 0..self.n_s {
                v -= w[s * self.n_b + r] * x_s[s];
            }
            x[r] = v;
        }
        x[self.n_b..].copy_from_slice(&x_s);
        Ok(x)
    }

    /// y = K x.
    #[cfg(test)]
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n()];
        for j in 0..self.n_b {
            let hi = (j + self.hb).min(self.n_b - 1);
            for i in j..=hi {
                let v = self.band[j * (self.hb + 1) + (i - j)];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        for s in 0..self.n_s {
            for r in 0..self.n_b {
                let v = self.border[s * self.n_b + r];
                y[self.n_b + s] += v * x[r];
                y[r] += v * x[self.n_b + s];
            }
        }
        for i in 0..self.n_s {
            for j in 0..self.n_s {
                y[self.n_b + i] += self.corner[i * self.n_s + j] * x[self.n_b + j];
            }
        }
        y
    }
}

/// Banded LDLᵀ factors (no pivoting; intended for damped positive definite
/// systems, failing softly otherwise).
struct BandedLdl {
    n: usize,
    hb: usize,
    /// Unit lower band of L (diagonal slot reused for D).
    data: Vec<f64>,
}

const PIVOT_MIN: f64 = 1e-13;

impl BandedLdl {
    fn factor(n: usize, hb: usize, band: &[f64]) -> Result<Self, NotPd> {
        let w = hb + 1;
        let mut data = band.to_vec();
        for j in 0..n {
            let lo = j.saturating_sub(hb);
            let mut d = data[j * w];
            for k in lo..j {
                let ljk = data[k * w + (j - k)];
                d -= ljk * ljk * data[k * w];
            }
            if !(d > PIVOT_MIN) {
                return Err(NotPd);
            }
            data[j * w] = d;
            let hi = (j + hb).min(n - 1);
            for i in (j + 1)..=hi {
                let mut v = data[j * w + (i - j)];
                let lo_i = i.saturating_sub(hb);
                for k in lo_i.max(lo)..j {
                    v -= data[k * w + (i - k)] * data[k * w + (j - k)] * data[k * w];
                }
                data[j * w + (i - j)] = v / d;
            }
        }
        Ok(Self { n, hb, data })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let w = self.hb + 1;
        let mut x = rhs.to_vec();
        // forward: L y = rhs
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                let hi = (j + self.hb).min(self.n - 1);
                for i in (j + 1)..=hi {
                    x[i] -= self.data[j * w + (i - j)] * xj;
                }
            }
        }
        // diagonal
        for j in 0..self.n {
            x[j] /= self.data[j * w];
        }
        // backward: Lᵀ x = y
        for j in (0..self.n).rev() {
            let hi = (j + self.hb).min(self.n - 1);
            let mut v = x[j];
            for i in (j + 1)..=hi {
                v -= self.data[j * w + (i - j)] * x[i];
            }
            x[j] = v;
        }
        x
    }
}

fn dense_ldl_solve(n: usize, a: &[f64], rhs: &[f64]) -> Result<Vec<f64>, NotPd> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut l = a.to_vec();
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k] * l[k * n + k];
        }
        if !(d > PIVOT_MIN) {
            return Err(NotPd);
        }
        l[j * n + j] = d;
        for i in (j + 1)..n {
            let mut v = l[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k] * l[k * n + k];
            }
            l[i * n + j] = v / d;
        }
    }
    let mut x = rhs.to_vec();
    for j in 0..n {
        for i in (j + 1)..n {
            x[i] -= l[i * n + j] * x[j];
        }
    }
    for j in 0..n {
        x[j] /= l[j * n + j];
    }
    for j in (0..n).rev() {
        let mut v = x[j];
        for i in (j + 1)..n {
            v -= l[i * n + j] * x[i];
        }
        x[j] = v;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_spd(n_b: usize, hb: usize, n_s: usize, seed: u64) -> BorderedSystem {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut sys = BorderedSystem::new(n_b, hb, n_s);
        for j in 0..n_b {
            for i in j..=(j + hb).min(n_b - 1) {
                sys.add(i, j, rng.gen_range(-0.5..0.5));
            }
        }
        for s in 0..n_s {
            for j in 0..=(n_b + s) {
                sys.add(n_b + s, j, rng.gen_range(-0.5..0.5));
            }
        }
        // diagonal dominance makes it SPD
        sys.add_diagonal(2.0 * (hb as f64 + n_s as f64 + 2.0));
        sys
    }

    #[test]
    fn solve_matches_matvec() {
        for (n_b, hb, n_s, seed) in [(40, 5, 3, 1u64), (25, 11, 1, 2), (30, 4, 0, 3), (9, 8, 9, 4)] {
            let sys = random_spd(n_b, hb, n_s, seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 100);
            let x_true: Vec<f64> = (0..sys.n()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let rhs = sys.matvec(&x_true);
            let x = sys.solve(&rhs).unwrap();
            let err = x
                .iter()
                .zip(&x_true)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(err < 1e-9, "n_b={n_b} hb={hb} n_s={n_s}: err {err}");
        }
    }

    #[test]
    fn indefinite_reports_not_pd() {
        let mut sys = BorderedSystem::new(10, 2, 1);
        sys.add_diagonal(1.0);
        sys.add(5, 5, -3.0); // make one pivot negative
        assert!(sys.solve(&vec![1.0; 11]).is_err());
    }

    #[test]
    fn freeze_pins_variable() {
        let mut sys = random_spd(20, 3, 2, 9);
        sys.freeze(7);
        sys.freeze(21);
        let mut rhs = vec![0.5; 22];
        rhs[7] = 0.0;
        rhs[21] = 0.0;
        let x = sys.solve(&rhs).unwrap();
        assert_eq!(x[7], 0.0);
        assert_eq!(x[21], 0.0);
    }
}
