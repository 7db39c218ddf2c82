//! Muscle synergy extraction: factorization, VAF model selection, tuning
//! curves and cross-condition matching.

pub mod matching;
pub mod nmf;

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::binning::{Bin, BinnedActivationMatrix, Phase};
use crate::error::SynergyError;
use crate::model::{Direction, MuscleChannel};

pub use matching::{cosine, match_synergies, Matching, SynergyPair};
pub use nmf::{factorize, Factorization, NmfOptions};

/// Default total-VAF threshold (percent) for choosing the synergy count.
pub const DEFAULT_CRITERION: f64 = 90.0;
/// Largest synergy count examined by the scan.
pub const MAX_SYNERGIES: usize = 10;

/// Variability accounted for, in percent.
pub fn vaf(v: &Array2<f64>, vr: &Array2<f64>) -> Result<f64, SynergyError> {
    if v.dim() != vr.dim() {
        return Err(SynergyError::Shape(format!("{:?} vs {:?}", v.dim(), vr.dim())));
    }
    let total: f64 = v.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Err(SynergyError::AllZero);
    }
    let resid: f64 = v.iter().zip(vr.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((1.0 - resid / total) * 100.0)
}

/// Row-wise VAF; `None` for rows of `v` that are identically zero.
pub fn vaf_per_muscle(v: &Array2<f64>, vr: &Array2<f64>) -> Result<Vec<Option<f64>>, SynergyError> {
    if v.dim() != vr.dim() {
        return Err(SynergyError::Shape(format!("{:?} vs {:?}", v.dim(), vr.dim())));
    }
    Ok(v.outer_iter()
        .zip(vr.outer_iter())
        .map(|(a, b)| {
            let total: f64 = a.iter().map(|x| x * x).sum();
            if total == 0.0 {
                return None;
            }
            let resid: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            Some((1.0 - resid / total) * 100.0)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SynergyCount {
    Auto { criterion: f64 },
    Fixed(usize),
}

impl Default for SynergyCount {
    fn default() -> Self {
        SynergyCount::Auto { criterion: DEFAULT_CRITERION }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VafScan {
    pub vaf: BTreeMap<usize, f64>,
    /// Counts whose VAF fell below that of the next smaller count.
    pub non_monotone: Vec<usize>,
}

/// Factorizes `v` at every count in 1..=min(10, rows, cols).
pub fn vaf_scan(v: &Array2<f64>, opts: &NmfOptions) -> Result<(VafScan, Vec<Factorization>), SynergyError> {
    let max = MAX_SYNERGIES.min(v.nrows()).min(v.ncols());
    nmf::check_input(v, 1)?;
    let mut vafs = BTreeMap::new();
    let mut fits = Vec::with_capacity(max);
    let mut non_monotone = Vec::new();
    for n in 1..=max {
        let f = factorize(v, n, opts)?;
        let value = vaf(v, &f.w.dot(&f.c))?;
        if let Some(prev) = vafs.get(&(n - 1)) {
            if value < *prev {
                non_monotone.push(n);
            }
        }
        vafs.insert(n, value);
        fits.push(f);
    }
    Ok((VafScan { vaf: vafs, non_monotone }, fits))
}

/// Least count whose total VAF exceeds `criterion`, or the largest scanned
/// count with `false` when none does.
pub fn select_n_syn(scan: &VafScan, criterion: f64) -> (usize, bool) {
    match scan.vaf.iter().find(|(_, &v)| v > criterion) {
        Some((&n, _)) => (n, true),
        None => (scan.vaf.keys().next_back().copied().unwrap_or(0), false),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PerSynergyMode {
    /// VAF of c_i W_i alone against V.
    #[default]
    RankOne,
    /// Gain in total VAF when component i is added to components 0..i.
    Incremental,
}

pub fn per_synergy_vaf(
    v: &Array2<f64>,
    w: &Array2<f64>,
    c: &Array2<f64>,
    mode: PerSynergyMode,
) -> Result<Vec<f64>, SynergyError> {
    if w.ncols() != c.nrows() || w.nrows() != v.nrows() || c.ncols() != v.ncols() {
        return Err(SynergyError::Shape(format!("W {:?}, C {:?}, V {:?}", w.dim(), c.dim(), v.dim())));
    }
    let component = |i: usize| {
        let wi = w.column(i).insert_axis(Axis(1)).to_owned();
        let ci = c.row(i).insert_axis(Axis(0)).to_owned();
        wi.dot(&ci)
    };
    match mode {
        PerSynergyMode::RankOne => (0..w.ncols()).map(|i| vaf(v, &component(i))).collect(),
        PerSynergyMode::Incremental => {
            let mut acc = Array2::zeros(v.dim());
            let mut prev = vaf(v, &acc)?;
            let mut out = Vec::with_capacity(w.ncols());
            for i in 0..w.ncols() {
                acc += &component(i);
                let now = vaf(v, &acc)?;
                out.push(now - prev);
                prev = now;
            }
            Ok(out)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynergySet {
    pub phase: Phase,
    pub rows: Vec<MuscleChannel>,
    pub columns: Vec<(Bin, Direction)>,
    /// Muscles × synergies, each column with maximum 1.
    pub w: Array2<f64>,
    /// Synergies × conditions.
    pub c: Array2<f64>,
    pub n_syn: usize,
    pub vaf_total: f64,
    pub vaf_per_muscle: Vec<Option<f64>>,
    pub vaf_per_synergy: Vec<f64>,
    pub per_synergy_mode: PerSynergyMode,
    pub vaf_scan: VafScan,
    pub criterion: Option<f64>,
    /// False when no scanned count reached the criterion.
    pub criterion_met: bool,
    pub rng_seed: u64,
    pub restarts: usize,
    pub reconstruction_error: f64,
    pub converged: bool,
}

impl SynergySet {
    pub fn reconstruction(&self) -> Array2<f64> {
        self.w.dot(&self.c)
    }

    pub fn match_with(&self, other: &SynergySet) -> Result<Matching, SynergyError> {
        match_synergies(&self.w, &other.w)
    }
}

/// Full pipeline from a binned matrix to a synergy set.
pub fn extract(
    m: &BinnedActivationMatrix,
    count: SynergyCount,
    opts: &NmfOptions,
    mode: PerSynergyMode,
) -> Result<SynergySet, SynergyError> {
    let v = &m.values;
    let (scan, mut fits) = vaf_scan(v, opts)?;
    let (n_syn, criterion_met, criterion) = match count {
        SynergyCount::Auto { criterion } => {
            let (n, ok) = select_n_syn(&scan, criterion);
            (n, ok, Some(criterion))
        }
        SynergyCount::Fixed(k) => {
            let max = fits.len();
            if k == 0 || k > max {
                return Err(SynergyError::BadRank { n: k, max });
            }
            (k, true, None)
        }
    };
    let fit = fits.swap_remove(n_syn - 1);
    let vr = fit.w.dot(&fit.c);
    Ok(SynergySet {
        phase: m.phase,
        rows: m.rows.clone(),
        columns: m.columns.clone(),
        vaf_total: vaf(v, &vr)?,
        vaf_per_muscle: vaf_per_muscle(v, &vr)?,
        vaf_per_synergy: per_synergy_vaf(v, &fit.w, &fit.c, mode)?,
        per_synergy_mode: mode,
        n_syn,
        vaf_scan: scan,
        criterion,
        criterion_met,
        rng_seed: opts.seed,
        restarts: opts.restarts,
        reconstruction_error: fit.error,
        converged: fit.converged,
        w: fit.w,
        c: fit.c,
    })
}

/// Activation coefficients of one synergy arranged as bins × directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningCurves {
    pub bins: Vec<Bin>,
    pub directions: Vec<Direction>,
    /// One bins × directions grid per synergy.
    pub grids: Vec<Array2<f64>>,
}

impl TuningCurves {
    pub fn value(&self, synergy: usize, bin: Bin, direction: Direction) -> Option<f64> {
        let b = self.bins.iter().position(|&x| x == bin)?;
        let d = self.directions.iter().position(|&x| x == direction)?;
        self.grids.get(synergy).map(|g| g[[b, d]])
    }

    /// Inverse of [`tuning_curves`].
    pub fn flatten(&self) -> Array2<f64> {
        let cols = self.bins.len() * self.directions.len();
        Array2::from_shape_fn((self.grids.len(), cols), |(i, j)| {
            self.grids[i][[j / self.directions.len(), j % self.directions.len()]]
        })
    }

    pub fn column_labels(&self) -> Vec<(Bin, Direction)> {
        self.bins.iter().flat_map(|&b| self.directions.iter().map(move |&d| (b, d))).collect()
    }
}

/// Reshapes the rows of `c` using bins-major, directions-minor labels.
pub fn tuning_curves(c: &Array2<f64>, labels: &[(Bin, Direction)]) -> Result<TuningCurves, SynergyError> {
    if labels.len() != c.ncols() {
        return Err(SynergyError::Shape(format!("{} labels for {} columns", labels.len(), c.ncols())));
    }
    let mut bins: Vec<Bin> = Vec::new();
    let mut directions: Vec<Direction> = Vec::new();
    for &(b, d) in labels {
        if !bins.contains(&b) {
            bins.push(b);
        }
        if !directions.contains(&d) {
            directions.push(d);
        }
    }
    let nd = directions.len();
    if bins.len() * nd != labels.len() {
        return Err(SynergyError::Shape("labels do not form a bin × direction grid".into()));
    }
    for (j, &(b, d)) in labels.iter().enumerate() {
        if bins[j / nd] != b || directions[j % nd] != d {
            return Err(SynergyError::Shape(format!("label {j} out of bins-major order")));
        }
    }
    let grids = c.outer_iter().map(|row| Array2::from_shape_fn((bins.len(), nd), |(b, d)| row[b * nd + d])).collect();
    Ok(TuningCurves { bins, directions, grids })
}

impl SynergySet {
    pub fn tuning_curves(&self) -> Result<TuningCurves, SynergyError> {
        tuning_curves(&self.c, &self.columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binning::column_labels;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn quick() -> NmfOptions {
        NmfOptions { seed: 7, restarts: 5, max_iter: 3000, tol: 1e-10 }
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn vaf_examples() {
        let v = array![[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(vaf(&v, &v).unwrap(), 100.0);
        assert_eq!(vaf(&v, &Array2::zeros((2, 2))).unwrap(), 0.0);
        assert_eq!(vaf(&v, &array![[1.0, 0.0], [0.0, 0.0]]).unwrap(), 50.0);
        assert!(vaf(&v, &array![[5.0, 5.0], [5.0, 5.0]]).unwrap() < 0.0);
        assert!(vaf(&v, &Array2::zeros((2, 3))).is_err());
        assert_eq!(vaf(&Array2::zeros((2, 2)), &v), Err(SynergyError::AllZero));
    }

    #[test]
    fn per_muscle_undefined_for_zero_row() {
        let v = array![[1.0, 2.0], [0.0, 0.0]];
        let r = vaf_per_muscle(&v, &array![[1.0, 2.0], [0.1, 0.0]]).unwrap();
        assert_eq!(r, vec![Some(100.0), None]);
    }

    #[test]
    fn rank_one_exact() {
        let mut g = rng(1);
        let w = Array2::from_shape_fn((14, 1), |_| g.random::<f64>());
        let c = Array2::from_shape_fn((1, 16), |_| g.random::<f64>());
        let v = w.dot(&c);
        let f = factorize(&v, 1, &quick()).unwrap();
        assert!(vaf(&v, &f.w.dot(&f.c)).unwrap() >= 99.9);
        let (scan, _) = vaf_scan(&v, &NmfOptions { restarts: 2, ..quick() }).unwrap();
        assert_eq!(select_n_syn(&scan, 90.0), (1, true));
    }

    #[test]
    fn four_synergy_recovery() {
        let mut g = rng(2);
        let mut draw = |_| if g.random::<f64>() < 0.3 { 0.0 } else { g.random::<f64>() };
        let w0 = Array2::from_shape_fn((14, 4), &mut draw);
        let c0 = Array2::from_shape_fn((4, 16), &mut draw);
        let v = w0.dot(&c0);
        let opts = NmfOptions { seed: 3, restarts: 10, max_iter: 5000, tol: 1e-12 };
        let f4 = factorize(&v, 4, &opts).unwrap();
        let vaf4 = vaf(&v, &f4.w.dot(&f4.c)).unwrap();
        assert!(vaf4 >= 99.0, "{vaf4}");
        let m = match_synergies(&f4.w, &w0).unwrap();
        assert!(m.min_cosine() >= 0.95, "{m:?}");
        let f2 = factorize(&v, 2, &opts).unwrap();
        assert!(vaf(&v, &f2.w.dot(&f2.c)).unwrap() < vaf4);
    }

    #[test]
    fn single_component_per_synergy_equals_total() {
        let v = array![[1.0, 2.0, 0.5], [0.3, 0.1, 0.9], [0.0, 0.4, 0.2]];
        let f = factorize(&v, 1, &quick()).unwrap();
        let total = vaf(&v, &f.w.dot(&f.c)).unwrap();
        let per = per_synergy_vaf(&v, &f.w, &f.c, PerSynergyMode::RankOne).unwrap();
        assert!((per[0] - total).abs() < 1e-12);
    }

    #[test]
    fn disjoint_support_is_additive() {
        let w = array![[1.0, 0.0], [0.5, 0.0], [0.0, 1.0], [0.0, 0.3]];
        let c = array![[1.0, 0.7, 0.0, 0.0], [0.0, 0.0, 0.4, 1.0]];
        let mut v = w.dot(&c);
        v[[0, 2]] = 0.2;
        let total = vaf(&v, &w.dot(&c)).unwrap();
        let per = per_synergy_vaf(&v, &w, &c, PerSynergyMode::RankOne).unwrap();
        assert!((per.iter().sum::<f64>() - total).abs() < 1e-9);
        let inc = per_synergy_vaf(&v, &w, &c, PerSynergyMode::Incremental).unwrap();
        assert!((inc.iter().sum::<f64>() - total).abs() < 1e-9);
    }

    #[test]
    fn permuting_synergies_permutes_values() {
        let mut g = rng(4);
        let v = Array2::from_shape_fn((6, 8), |_| g.random::<f64>());
        let f = factorize(&v, 3, &quick()).unwrap();
        let per = per_synergy_vaf(&v, &f.w, &f.c, PerSynergyMode::RankOne).unwrap();
        let perm = [2usize, 0, 1];
        let wp = Array2::from_shape_fn(f.w.dim(), |(r, j)| f.w[[r, perm[j]]]);
        let cp = Array2::from_shape_fn(f.c.dim(), |(i, k)| f.c[[perm[i], k]]);
        let pp = per_synergy_vaf(&v, &wp, &cp, PerSynergyMode::RankOne).unwrap();
        for j in 0..3 {
            assert_eq!(pp[j], per[perm[j]]);
        }
    }

    #[test]
    fn tuning_curve_reshape() {
        let labels = column_labels(Phase::Apr, false);
        assert_eq!(labels.len(), 12);
        let c = Array2::from_shape_fn((2, 12), |(i, j)| (i * 100 + j) as f64);
        let tc = tuning_curves(&c, &labels).unwrap();
        assert_eq!(tc.grids[0].dim(), (3, 4));
        assert_eq!(tc.flatten(), c);
        assert_eq!(tc.column_labels(), labels);
        let j = labels.iter().position(|&l| l == (Bin::Apr1, Direction::Forward)).unwrap();
        assert_eq!(tc.value(1, Bin::Apr1, Direction::Forward), Some(c[[1, j]]));

        let sixteen = column_labels(Phase::Apr, true);
        let c1 = Array2::from_shape_fn((1, 16), |(_, j)| j as f64);
        let tc1 = tuning_curves(&c1, &sixteen).unwrap();
        assert_eq!(tc1.grids.len(), 1);
        assert_eq!(tc1.grids[0].dim(), (4, 4));

        assert!(tuning_curves(&c, &labels[..11]).is_err());
        let mut shuffled = labels.clone();
        shuffled.swap(0, 5);
        assert!(tuning_curves(&c, &shuffled).is_err());
    }

    #[test]
    fn selection_falls_back_to_max() {
        let scan = VafScan { vaf: (1..=10).map(|n| (n, 50.0 + n as f64)).collect(), non_monotone: vec![] };
        assert_eq!(select_n_syn(&scan, 90.0), (10, false));
        assert_eq!(select_n_syn(&scan, 55.0), (6, true));
    }
}
