//! One-dimensional atom banks and separable 2D indexing.
//!
//! The mixed dictionary concatenates four families in a fixed order:
//! redundant cosines (redundancy 2), the Dirac basis, and translated cubic
//! B-splines with 3 and 7 nonzero taps. Two 1D banks define the 2D atoms
//! `Dx[:, lx] ⊗ Dy[:, ly]` without ever materializing them.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Redundancy of the cosine family in the mixed dictionary.
pub const RDC_REDUNDANCY: usize = 2;

/// Number of families in the mixed dictionary.
pub const FAMILY_COUNT: usize = 4;

/// A bank of unit-norm column atoms of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary1D {
    atoms: Array2<f64>,
    sub_offsets: Vec<usize>,
}

impl Dictionary1D {
    /// Concatenates family parts (each `n × m_s`) in the given order.
    pub fn from_parts(parts: &[Array2<f64>]) -> Result<Self> {
        let n = parts.first().map(|p| p.nrows()).ok_or(Error::EmptyList)?;
        if parts.iter().any(|p| p.nrows() != n) {
            return Err(Error::DimensionMismatch("dictionary parts differ in length".into()));
        }
        let total: usize = parts.iter().map(|p| p.ncols()).sum();
        let mut atoms = Array2::zeros((n, total));
        let mut sub_offsets = Vec::with_capacity(parts.len());
        let mut at = 0;
        for p in parts {
            sub_offsets.push(at);
            atoms.slice_mut(s![.., at..at + p.ncols()]).assign(p);
            at += p.ncols();
        }
        Ok(Dictionary1D { atoms, sub_offsets })
    }

    /// Signal length.
    pub fn len(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Total atom count.
    pub fn atom_count(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn sub_offsets(&self) -> &[usize] {
        &self.sub_offsets
    }

    /// `n × m` matrix whose columns are the atoms.
    pub fn matrix(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> ArrayView1<'_, f64> {
        self.atoms.column(i)
    }
}

fn check_len(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::InvalidDimension("signal length must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn normalize_columns(mut atoms: Array2<f64>) -> Array2<f64> {
    for mut col in atoms.columns_mut() {
        let norm = col.dot(&col).sqrt();
        col /= norm;
    }
    atoms
}

/// Redundant discrete cosines: `m = redundancy·n` atoms with entries
/// `cos(π(2j−1)(i−1)/(2m))`, normalized numerically.
pub fn build_rdc(n: usize, redundancy: usize) -> Result<Array2<f64>> {
    check_len(n)?;
    if redundancy == 0 {
        return Err(Error::InvalidDimension("redundancy must be positive".into()));
    }
    let m = redundancy * n;
    let atoms = Array2::from_shape_fn((n, m), |(j, i)| (PI * (2 * j + 1) as f64 * i as f64 / (2 * m) as f64).cos());
    Ok(normalize_columns(atoms))
}

/// The standard (Dirac) basis of `R^n`.
pub fn build_dirac(n: usize) -> Result<Array2<f64>> {
    check_len(n)?;
    Ok(Array2::eye(n))
}

/// Centered cubic B-spline of unit knot spacing.
fn cubic_bspline(t: f64) -> f64 {
    let a = t.abs();
    if a < 1.0 {
        2.0 / 3.0 - a * a + a * a * a / 2.0
    } else if a < 2.0 {
        (2.0 - a).powi(3) / 6.0
    } else {
        0.0
    }
}

/// Integer-sampled prototype taps for a translated cubic B-spline family:
/// support 3 samples the spline at its knots, support 7 samples it dilated by two.
pub fn bspline_prototype(support: usize) -> Result<Vec<f64>> {
    let dilation = match support {
        3 => 1.0,
        7 => 2.0,
        other => return Err(Error::UnsupportedSupport(other)),
    };
    let half = (support / 2) as isize;
    Ok((-half..=half).map(|k| cubic_bspline(k as f64 / dilation)).collect())
}

/// `n` translates of the prototype, one centered on each sample, truncated
/// at the borders and renormalized.
pub fn build_bspline(n: usize, support: usize) -> Result<Array2<f64>> {
    check_len(n)?;
    let taps = bspline_prototype(support)?;
    let half = (support / 2) as isize;
    let mut atoms = Array2::zeros((n, n));
    for center in 0..n as isize {
        for (k, &w) in taps.iter().enumerate() {
            let j = center + k as isize - half;
            if (0..n as isize).contains(&j) {
                atoms[[j as usize, center as usize]] = w;
            }
        }
    }
    Ok(normalize_columns(atoms))
}

/// The mixed dictionary `[RDC(2), Dirac, spline3, spline7]`, `m = 5n`.
pub fn build_mixed(n: usize) -> Result<Dictionary1D> {
    if n < 7 {
        return Err(Error::InvalidDimension(format!("mixed dictionary needs n >= 7, got {n}")));
    }
    Dictionary1D::from_parts(&[
        build_rdc(n, RDC_REDUNDANCY)?,
        build_dirac(n)?,
        build_bspline(n, 3)?,
        build_bspline(n, 7)?,
    ])
}

/// A 2D atom address. Fields are zero-based positions in the x and y banks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomIndexPair {
    pub x: usize,
    pub y: usize,
}

impl AtomIndexPair {
    pub fn new(x: usize, y: usize) -> Self {
        AtomIndexPair { x, y }
    }

    /// Builds a pair from one-based indices `(lx, ly)`.
    pub fn from_one_based(lx: usize, ly: usize) -> Result<Self> {
        if lx == 0 || ly == 0 {
            return Err(Error::IndexOutOfRange(format!("({lx}, {ly}) is not one-based")));
        }
        Ok(AtomIndexPair { x: lx - 1, y: ly - 1 })
    }

    /// The 2D atom `Dx[:, x] ⊗ Dy[:, y]` as an `nx × ny` array.
    pub fn atom(&self, dx: &Dictionary1D, dy: &Dictionary1D) -> Array2<f64> {
        outer(dx.atom(self.x), dy.atom(self.y))
    }
}

pub(crate) fn outer(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Array2<f64> {
    let u: Array1<f64> = u.to_owned();
    Array2::from_shape_fn((u.len(), v.len()), |(i, j)| u[i] * v[j])
}

/// Maps a pair to the one-based label `(lx−1)·My + ly`.
pub fn flatten_index(pair: AtomIndexPair, mx: usize, my: usize) -> Result<usize> {
    if pair.x >= mx || pair.y >= my {
        return Err(Error::IndexOutOfRange(format!("pair ({}, {}) outside {mx}x{my}", pair.x + 1, pair.y + 1)));
    }
    Ok(pair.x * my + pair.y + 1)
}

/// Inverse of [`flatten_index`].
pub fn unflatten_index(label: usize, mx: usize, my: usize) -> Result<AtomIndexPair> {
    if label == 0 || label > mx * my {
        return Err(Error::IndexOutOfRange(format!("label {label} outside 1..={}", mx * my)));
    }
    let z = label - 1;
    Ok(AtomIndexPair { x: z / my, y: z % my })
}
