//! Block-banded symmetric positive-definite solver for normal equations whose
//! blocks couple only states within a fixed key distance.

use nalgebra::{DVector, SMatrix};

use crate::error::{Error, Result};

pub type Block = SMatrix<f64, 15, 15>;
const B: usize = 15;

/// Pivots below this fraction of the original diagonal entry count as zero.
const PIVOT_RELATIVE: f64 = 1e-12;

/// Lower band of a block-symmetric matrix: `band[i][d]` is block `(i, i − d)`.
#[derive(Clone, Debug)]
pub struct BandedMatrix {
    pub band: Vec<Vec<Block>>,
    pub width: usize,
}

impl BandedMatrix {
    pub fn zeros(n: usize, width: usize) -> Self {
        let band = (0..n).map(|i| vec![Block::zeros(); width.min(i) + 1]).collect();
        Self { band, width }
    }

    pub fn blocks(&self) -> usize {
        self.band.len()
    }

    /// Adds `m` to block `(i, j)` with `i ≥ j`.
    pub fn add(&mut self, i: usize, j: usize, m: &Block) {
        self.band[i][i - j] += m;
    }

    pub fn add_diagonal(&mut self, scale: f64, floor: f64) {
        for row in &mut self.band {
            let d = &mut row[0];
            for k in 0..B {
                d[(k, k)] += scale * d[(k, k)].max(floor);
            }
        }
    }

    fn get(&self, i: usize, j: usize) -> Option<&Block> {
        if i >= j {
            self.band[i].get(i - j)
        } else {
            None
        }
    }

    /// `y = A·x` using both triangles.
    pub fn mul(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.blocks();
        let mut y = DVector::zeros(n * B);
        for i in 0..n {
            for (d, blk) in self.band[i].iter().enumerate() {
                let j = i - d;
                let xj = x.rows(j * B, B);
                let mut yi = y.rows_mut(i * B, B);
                yi += blk * xj;
                if d > 0 {
                    let xi = x.rows(i * B, B).into_owned();
                    let mut yj = y.rows_mut(j * B, B);
                    yj += blk.transpose() * xi;
                }
            }
        }
        y
    }

    /// Solves `A·x = b` by block Cholesky within the band.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.blocks();
        let w = self.width;
        let mut l: Vec<Vec<Block>> = (0..n).map(|i| vec![Block::zeros(); w.min(i) + 1]).collect();
        for i in 0..n {
            let lo = i.saturating_sub(w);
            for j in lo..=i {
                let mut s = *self.get(i, j).expect("band block");
                for k in lo.max(j.saturating_sub(w))..j {
                    s -= l[i][i - k] * l[j][j - k].transpose();
                }
                if j < i {
                    // L(i,j) = S·L(j,j)⁻ᵀ
                    let ljj = l[j][0];
                    let x = ljj
                        .solve_lower_triangular(&s.transpose())
                        .ok_or(Error::SingularNormalEquations)?;
                    l[i][i - j] = x.transpose();
                } else {
                    l[i][0] = dense_cholesky(&s, self.get(i, i).expect("diagonal"))?;
                }
            }
        }
        // forward substitution L·y = b
        let mut y = b.clone();
        for i in 0..n {
            let lo = i.saturating_sub(w);
            let mut yi = y.rows(i * B, B).into_owned();
            for k in lo..i {
                yi -= l[i][i - k] * y.rows(k * B, B);
            }
            let yi = l[i][0].solve_lower_triangular(&yi).ok_or(Error::SingularNormalEquations)?;
            y.rows_mut(i * B, B).copy_from(&yi);
        }
        // back substitution Lᵀ·x = y
        let mut x = y;
        for i in (0..n).rev() {
            let mut xi = x.rows(i * B, B).into_owned();
            for k in i + 1..(i + w + 1).min(n) {
                xi -= l[k][k - i].transpose() * x.rows(k * B, B);
            }
            let xi = l[i][0]
                .transpose()
                .solve_upper_triangular(&xi)
                .ok_or(Error::SingularNormalEquations)?;
            x.rows_mut(i * B, B).copy_from(&xi);
        }
        Ok(x)
    }
}

/// Cholesky of one diagonal block with a rank test against the original
/// (unreduced) diagonal `orig`.
fn dense_cholesky(s: &Block, orig: &Block) -> Result<Block> {
    let mut l = Block::zeros();
    for c in 0..B {
        let mut d = s[(c, c)];
        for k in 0..c {
            d -= l[(c, k)] * l[(c, k)];
        }
        let scale = orig[(c, c)].abs().max(f64::MIN_POSITIVE);
        if !(d > PIVOT_RELATIVE * scale) {
            return Err(Error::SingularNormalEquations);
        }
        let d = d.sqrt();
        l[(c, c)] = d;
        for r in c + 1..B {
            let mut v = s[(r, c)];
            for k in 0..c {
                v -= l[(r, k)] * l[(c, k)];
            }
            l[(r, c)] = v / d;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_banded(n: usize, w: usize, seed: u64) -> (BandedMatrix, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut dense = DMatrix::<f64>::zeros(n * B, n * B);
        // A = JᵀJ + I with J banded by construction
        for i in 0..n {
            let lo = i.saturating_sub(w);
            let j = DMatrix::<f64>::from_fn(B, (i - lo + 1) * B, |_, _| rng.random_range(-1.0..1.0));
            let jt_j = j.transpose() * &j;
            let mut view = dense.view_mut((lo * B, lo * B), ((i - lo + 1) * B, (i - lo + 1) * B));
            view += jt_j;
        }
        dense += DMatrix::identity(n * B, n * B);
        let mut m = BandedMatrix::zeros(n, w);
        for i in 0..n {
            for j in i.saturating_sub(w)..=i {
                let blk: Block = dense.view((i * B, j * B), (B, B)).into_owned().fixed_view::<15, 15>(0, 0).into();
                m.add(i, j, &blk);
            }
        }
        (m, dense)
    }

    #[test]
    fn matches_dense_solve() {
        for (n, w) in [(1, 0), (5, 1), (6, 2), (4, 3)] {
            let (m, dense) = random_banded(n, w, n as u64 * 7 + w as u64);
            let b = DVector::from_fn(n * B, |i, _| (i as f64 * 0.37).sin());
            let x = m.solve(&b).unwrap();
            let oracle = dense.clone().cholesky().unwrap().solve(&b);
            assert!((x - &oracle).amax() < 1e-9 * oracle.amax().max(1.0));
            assert!((m.mul(&oracle) - &b).amax() < 1e-9);
        }
    }

    #[test]
    fn rank_deficient_is_reported() {
        let mut m = BandedMatrix::zeros(1, 0);
        let mut blk = Block::identity();
        blk[(4, 4)] = 0.0;
        m.add(0, 0, &blk);
        assert!(matches!(m.solve(&DVector::zeros(B)), Err(Error::SingularNormalEquations)));
    }
}
