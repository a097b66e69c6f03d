//! 2-D joint embedding of real and synthetic rows by classical MDS.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encode::Encoding;
use super::stats::euclidean;
use crate::data::Table;
use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::parallel::map_indexed;

pub const MAX_EMBED_ROWS: usize = 1000;
const POWER_ITERS: usize = 2000;
/// Change in the normalized iterate.
const POWER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// (row count, 2)
    pub coords: Matrix,
    /// `true` for synthetic rows.
    pub is_synth: Vec<bool>,
    /// Source row index within its own table.
    pub source_row: Vec<usize>,
    pub eigenvalues: [f64; 2],
}

impl Embedding {
    /// Header `source,row,x,y`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["source", "row", "x", "y"])?;
        for i in 0..self.coords.rows {
            wtr.write_record([
                if self.is_synth[i] { "synthetic" } else { "real" }.to_string(),
                self.source_row[i].to_string(),
                self.coords.get(i, 0).to_string(),
                self.coords.get(i, 1).to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

fn subsample(n: usize, max: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if n > max {
        idx.shuffle(rng);
        idx.truncate(max);
        idx.sort_unstable();
    }
    idx
}

/// Top-2 eigenpairs of a symmetric matrix by orthogonalized power iteration
/// from a fixed start.
pub fn top2_eigen(b: &Matrix) -> ([f64; 2], [Vec<f64>; 2]) {
    let n = b.rows;
    let mut vals = [0.0; 2];
    let mut vecs: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
    for k in 0..2 {
        let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * (k + 2)) % 7) as f64 / 7.0).collect();
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERS {
            for prev in vecs.iter().take(k) {
                let d: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let w = map_indexed(n, |i| b.row(i).iter().zip(&v).map(|(a, c)| a * c).sum::<f64>());
            lambda = w.iter().zip(&v).map(|(a, c)| a * c).sum();
            let wn = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if wn == 0.0 {
                break;
            }
            let change = w.iter().zip(&v).map(|(a, c)| (a / wn - c).powi(2)).sum::<f64>().sqrt();
            v = w;
            if change <= POWER_TOL {
                break;
            }
        }
        for prev in vecs.iter().take(k) {
            let d: f64 = v.iter().zip(prev).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(prev).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        // fix the sign: largest-magnitude entry positive
        let big = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        vals[k] = lambda;
        vecs[k] = v;
    }
    (vals, vecs)
}

/// Classical scaling of the points' Euclidean distances to 2 dimensions.
pub fn classical_mds(x: &Matrix) -> ([f64; 2], Matrix) {
    let n = x.rows;
    let d2 = map_indexed(n, |i| {
        (0..n)
            .map(|j| euclidean(x.row(i), x.row(j)).powi(2))
            .collect::<Vec<f64>>()
    });
    let row_mean: Vec<f64> = d2.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b.set(i, j, -0.5 * (d2[i][j] - row_mean[i] - row_mean[j] + grand));
        }
    }
    let (vals, vecs) = top2_eigen(&b);
    let mut coords = Matrix::zeros(n, 2);
    for k in 0..2 {
        let s = vals[k].max(0.0).sqrt();
        for i in 0..n {
            coords.set(i, k, vecs[k][i] * s);
        }
    }
    (vals, coords)
}

/// Joint embedding of seeded subsamples (at most `max_rows` each) in the
/// real-fit encoded space.
pub fn joint_embedding(real: &Table, synth: &Table, max_rows: usize, seed: u64) -> Result<Embedding> {
    if real.n_rows() == 0 || synth.n_rows() == 0 {
        return Err(Error::Invalid("embedding needs rows on both sides".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ri = subsample(real.n_rows(), max_rows, &mut rng);
    let si = subsample(synth.n_rows(), max_rows, &mut rng);
    let enc = Encoding::fit_all(real)?;
    let xr = crate::pipeline::gather_rows(&enc.encode(real)?, &ri);
    let xs = crate::pipeline::gather_rows(&enc.encode(synth)?, &si);
    let x = Matrix::vstack(&[&xr, &xs])?;
    let (eigenvalues, coords) = classical_mds(&x);
    let mut is_synth = vec![false; ri.len()];
    is_synth.extend(std::iter::repeat_n(true, si.len()));
    Ok(Embedding {
        coords,
        is_synth,
        source_row: ri.into_iter().chain(si).collect(),
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::demo_table;

    #[test]
    fn planar_points_are_recovered_up_to_rotation() {
        // pairwise distances of a 2-D configuration are reproduced exactly
        let pts = [(0.0, 0.0), (3.0, 0.0), (0.0, 1.0), (2.0, 2.0), (-1.0, 0.5), (1.0, -2.0)];
        let x = Matrix::from_rows(&pts.iter().map(|(a, b)| vec![*a, *b]).collect::<Vec<_>>()).unwrap();
        let (vals, c) = classical_mds(&x);
        assert!(vals[0] >= vals[1] && vals[1] > 0.0);
        for i in 0..pts.len() {
            for j in 0..pts.len() {
                let d = euclidean(x.row(i), x.row(j));
                assert!((euclidean(c.row(i), c.row(j)) - d).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn embedding_is_deterministic_and_capped() {
        let real = demo_table(300, 1).unwrap();
        let synth = demo_table(250, 2).unwrap();
        let a = joint_embedding(&real, &synth, 100, 7).unwrap();
        let b = joint_embedding(&real, &synth, 100, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.coords.rows, 200);
        assert_eq!(a.is_synth.iter().filter(|v| **v).count(), 100);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("source,row,x,y\n"));
    }
}
