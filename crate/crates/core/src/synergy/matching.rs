//! Pairing synergy vectors across two sets by cosine similarity.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::SynergyError;

pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynergyPair {
    pub a: usize,
    pub b: usize,
    pub cosine: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// Sorted by index into the smaller set's side `a`.
    pub pairs: Vec<SynergyPair>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl Matching {
    pub fn min_cosine(&self) -> f64 {
        self.pairs.iter().map(|p| p.cosine).fold(f64::INFINITY, f64::min)
    }

    pub fn total(&self) -> f64 {
        self.pairs.iter().map(|p| p.cosine).sum()
    }
}

struct Search<'a> {
    sim: &'a Array2<f64>,
    used: Vec<bool>,
    current: Vec<usize>,
    best: Vec<usize>,
    best_total: f64,
}

impl Search<'_> {
    fn run(&mut self, row: usize, total: f64) {
        if row == self.sim.nrows() {
            if total > self.best_total {
                self.best_total = total;
                self.best = self.current.clone();
            }
            return;
        }
        for col in 0..self.sim.ncols() {
            if self.used[col] {
                continue;
            }
            self.used[col] = true;
            self.current.push(col);
            self.run(row + 1, total + self.sim[[row, col]]);
            self.current.pop();
            self.used[col] = false;
        }
    }
}

/// Exhaustive search over injective assignments maximizing the summed cosine
/// between columns of `wa` and `wb`. Ties keep the lexicographically first
/// assignment, so a set matched against itself pairs each column with itself.
pub fn match_synergies(wa: &Array2<f64>, wb: &Array2<f64>) -> Result<Matching, SynergyError> {
    if wa.nrows() != wb.nrows() {
        return Err(SynergyError::Shape(format!("{} vs {} muscles", wa.nrows(), wb.nrows())));
    }
    let swap = wa.ncols() > wb.ncols();
    let (small, large) = if swap { (wb, wa) } else { (wa, wb) };
    let sim = Array2::from_shape_fn((small.ncols(), large.ncols()), |(i, j)| cosine(small.column(i), large.column(j)));
    let mut search = Search {
        sim: &sim,
        used: vec![false; large.ncols()],
        current: Vec::with_capacity(small.ncols()),
        best: Vec::new(),
        best_total: f64::NEG_INFINITY,
    };
    search.run(0, 0.0);

    let mut pairs: Vec<SynergyPair> = search
        .best
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let (a, b) = if swap { (j, i) } else { (i, j) };
            SynergyPair { a, b, cosine: sim[[i, j]] }
        })
        .collect();
    pairs.sort_by_key(|p| p.a);
    let unmatched_a = (0..wa.ncols()).filter(|i| !pairs.iter().any(|p| p.a == *i)).collect();
    let unmatched_b = (0..wb.ncols()).filter(|j| !pairs.iter().any(|p| p.b == *j)).collect();
    Ok(Matching { pairs, unmatched_a, unmatched_b })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> Array2<f64> {
        array![[1.0, 0.0, 0.2], [0.5, 0.1, 0.0], [0.0, 1.0, 0.3], [0.0, 0.4, 1.0], [0.2, 0.0, 0.6],]
    }

    #[test]
    fn recovers_permutation() {
        let a = sample();
        let perm = [2usize, 0, 1];
        let b = Array2::from_shape_fn(a.dim(), |(r, j)| a[[r, perm[j]]]);
        let m = match_synergies(&a, &b).unwrap();
        for p in &m.pairs {
            assert_eq!(perm[p.b], p.a);
            assert!((p.cosine - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn self_match_is_identity() {
        let a = sample();
        let m = match_synergies(&a, &a).unwrap();
        assert!(m.pairs.iter().all(|p| p.a == p.b));
        assert!(m.unmatched_a.is_empty() && m.unmatched_b.is_empty());
    }

    #[test]
    fn orthogonal_replacement() {
        let a = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]];
        let mut b = a.clone();
        b.column_mut(1).assign(&array![0.0, 0.0, 0.0, 1.0]);
        let m = match_synergies(&a, &b).unwrap();
        assert_eq!(m.pairs[1].b, 1);
        assert_eq!(m.pairs[1].cosine, 0.0);
        assert_eq!(m.pairs[0].cosine, 1.0);
        assert_eq!(m.pairs[2].cosine, 1.0);
    }

    #[test]
    fn uneven_sets_list_unmatched() {
        let a = sample();
        let b = a.slice(ndarray::s![.., 1..2]).to_owned();
        let m = match_synergies(&a, &b).unwrap();
        assert_eq!((m.pairs.len(), m.pairs[0].a, m.pairs[0].b), (1, 1, 0));
        assert!((m.pairs[0].cosine - 1.0).abs() < 1e-12);
        assert_eq!(m.unmatched_a, vec![0, 2]);
        let m2 = match_synergies(&b, &a).unwrap();
        assert_eq!(m2.pairs[0].b, 1);
        assert_eq!(m2.unmatched_b, vec![0, 2]);
        assert!(match_synergies(&a, &Array2::zeros((3, 2))).is_err());
    }
}
