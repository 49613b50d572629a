//! Simultaneous multi-channel Orthogonal Matching Pursuit over separable
//! dictionaries.
//!
//! All channels of a block share one list of selected atoms. Coefficients
//! come from biorthogonal duals `B_n` that are updated recursively as atoms
//! are added, so the least-squares solution is always a set of inner
//! products `c_n = ⟨B_n, I⟩`.

use std::collections::HashSet;

use ndarray::{Array2, Zip};

use crate::container::{assemble_image, tile_image};
use crate::dictionary::{build_mixed, flatten_index, AtomIndexPair, Dictionary1D};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::par::{try_map_indexed, Execution};

/// Relative tolerance below which an orthogonalized atom counts as dependent.
pub const DEPENDENT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmpConfig {
    /// Stop once `Σ_z ‖R_z‖²_F < rho` (intensity² units).
    pub rho: f64,
    pub max_k: usize,
    pub tol_dependent: f64,
}

impl OmpConfig {
    /// A config with no atom cap beyond the block dimension.
    pub fn new(rho: f64, block_n: usize) -> Self {
        OmpConfig { rho, max_k: block_n * block_n, tol_dependent: DEPENDENT_TOL }
    }

    pub fn validate(&self, block_n: usize) -> Result<()> {
        if self.rho.is_nan() || self.rho < 0.0 {
            return Err(Error::InvalidDimension(format!("rho must be non-negative, got {}", self.rho)));
        }
        if self.max_k == 0 || self.max_k > block_n * block_n {
            return Err(Error::InvalidDimension(format!("max_k {} outside 1..={}", self.max_k, block_n * block_n)));
        }
        Ok(())
    }
}

/// Residual threshold that makes every block reach `target_psnr` dB on a
/// `bits`-deep scale: `Z·n²·(2^bits−1)²·10^(−psnr/10)`.
pub fn rho_from_psnr(target_psnr: f64, bits: u32, block_n: usize, channels: usize) -> f64 {
    let peak = ((1u64 << bits) - 1) as f64;
    channels as f64 * (block_n * block_n) as f64 * peak * peak * 10f64.powf(-target_psnr / 10.0)
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => x.iter().zip(y).map(|(p, q)| p * q).sum(),
        _ => Zip::from(a).and(b).fold(0.0, |acc, p, q| acc + p * q),
    }
}

fn axpy(y: &mut Array2<f64>, alpha: f64, x: &Array2<f64>) {
    Zip::from(y).and(x).for_each(|p, &q| *p += alpha * q);
}

/// Incremental biorthogonal state for the span of the selected 2D atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct OmpState {
    shape: (usize, usize),
    selected: Vec<AtomIndexPair>,
    atoms: Vec<Array2<f64>>,
    /// Gram–Schmidt outputs with their squared norms.
    ortho: Vec<Array2<f64>>,
    ortho_sq: Vec<f64>,
    duals: Vec<Array2<f64>>,
}

impl OmpState {
    pub fn new(rows: usize, cols: usize) -> Self {
        OmpState {
            shape: (rows, cols),
            selected: Vec::new(),
            atoms: Vec::new(),
            ortho: Vec::new(),
            ortho_sq: Vec::new(),
            duals: Vec::new(),
        }
    }

    /// Replays `extend` over `indices` in order.
    pub fn from_indices(indices: &[AtomIndexPair], dx: &Dictionary1D, dy: &Dictionary1D, tol: f64) -> Result<Self> {
        let mut state = OmpState::new(dx.len(), dy.len());
        for &pair in indices {
            state.extend(pair, dx, dy, tol)?;
        }
        Ok(state)
    }

    pub fn k(&self) -> usize {
        self.selected.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn selected(&self) -> &[AtomIndexPair] {
        &self.selected
    }

    pub fn atoms(&self) -> &[Array2<f64>] {
        &self.atoms
    }

    pub fn orthogonal(&self) -> &[Array2<f64>] {
        &self.ortho
    }

    pub fn duals(&self) -> &[Array2<f64>] {
        &self.duals
    }

    /// Adds the atom `Dx[:, x] ⊗ Dy[:, y]`.
    ///
    /// The new direction is Gram–Schmidt orthogonalized against the previous
    /// ones with exactly one re-orthogonalization pass; the previous duals
    /// are then corrected by `B_n ← B_n − B_{k+1}⟨A_{k+1}, B_n⟩`. On
    /// [`Error::DependentAtom`] the state is left unchanged.
    pub fn extend(&mut self, pair: AtomIndexPair, dx: &Dictionary1D, dy: &Dictionary1D, tol: f64) -> Result<()> {
        if pair.x >= dx.atom_count() || pair.y >= dy.atom_count() {
            return Err(Error::IndexOutOfRange(format!("atom ({}, {})", pair.x + 1, pair.y + 1)));
        }
        if (dx.len(), dy.len()) != self.shape {
            return Err(Error::DimensionMismatch("dictionaries do not match block shape".into()));
        }
        if self.selected.contains(&pair) {
            return Err(Error::DependentAtom { residual: 0.0 });
        }
        let atom = pair.atom(dx, dy);
        let atom_norm = dot(&atom, &atom).sqrt();

        let mut w = atom.clone();
        for (wn, &sq) in self.ortho.iter().zip(&self.ortho_sq) {
            let c = dot(wn, &atom) / sq;
            axpy(&mut w, -c, wn);
        }
        for (wn, &sq) in self.ortho.iter().zip(&self.ortho_sq) {
            let c = dot(wn, &w) / sq;
            axpy(&mut w, -c, wn);
        }
        let w_sq = dot(&w, &w);
        let w_norm = w_sq.sqrt();
        if w_norm.is_nan() || w_norm <= tol * atom_norm {
            return Err(Error::DependentAtom { residual: w_norm / atom_norm });
        }

        let new_dual = &w / w_sq;
        for b in self.duals.iter_mut() {
            let c = dot(&atom, b);
            axpy(b, -c, &new_dual);
        }
        self.duals.push(new_dual);
        self.ortho.push(w);
        self.ortho_sq.push(w_sq);
        self.atoms.push(atom);
        self.selected.push(pair);
        Ok(())
    }

    /// `c_n = ⟨B_n, x⟩` for every selected atom.
    pub fn coefficients(&self, x: &Array2<f64>) -> Vec<f64> {
        self.duals.iter().map(|b| dot(b, x)).collect()
    }

    /// `Σ_n c_n A_n`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Array2<f64> {
        let mut out = Array2::zeros(self.shape);
        for (a, &c) in self.atoms.iter().zip(coeffs) {
            axpy(&mut out, c, a);
        }
        out
    }

    /// Orthogonal projection of `x` onto the span of the selected atoms.
    pub fn project(&self, x: &Array2<f64>) -> Array2<f64> {
        self.synthesize(&self.coefficients(x))
    }

    /// `x − P x`.
    pub fn complement(&self, x: &Array2<f64>) -> Array2<f64> {
        x - &self.project(x)
    }
}

/// Per-channel coefficients `⟨B_n, I_z⟩`.
pub fn coefficients(state: &OmpState, channels: &[Array2<f64>]) -> Vec<Vec<f64>> {
    channels.iter().map(|c| state.coefficients(c)).collect()
}

/// Picks the pair maximizing `Σ_z |Dxᵀ R_z Dy|` over pairs not in `blocked`.
/// Ties go to the smallest flat label. `None` when every score is zero.
pub fn select_atom(
    residuals: &[Array2<f64>],
    dx: &Dictionary1D,
    dy: &Dictionary1D,
    blocked: &HashSet<AtomIndexPair>,
) -> Option<AtomIndexPair> {
    let (mx, my) = (dx.atom_count(), dy.atom_count());
    let mut scores = Array2::<f64>::zeros((mx, my));
    for r in residuals {
        let corr = dx.matrix().t().dot(r).dot(dy.matrix());
        Zip::from(&mut scores).and(&corr).for_each(|s, c| *s += c.abs());
    }
    let mut best: Option<(AtomIndexPair, f64)> = None;
    // row-major scan visits flat labels in increasing order
    for ((x, y), &s) in scores.indexed_iter() {
        let pair = AtomIndexPair::new(x, y);
        if blocked.contains(&pair) {
            continue;
        }
        if s > best.map_or(0.0, |b| b.1) {
            best = Some((pair, s));
        }
    }
    best.map(|b| b.0)
}

/// Sparse representation of one block across its channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockApproximation {
    pub indices: Vec<AtomIndexPair>,
    /// `coeffs[z][n]` multiplies atom `indices[n]` in channel `z`.
    pub coeffs: Vec<Vec<f64>>,
    pub block_n: usize,
    pub residual_sq: f64,
}

impl BlockApproximation {
    pub fn k(&self) -> usize {
        self.indices.len()
    }

    pub fn channel_count(&self) -> usize {
        self.coeffs.len()
    }

    /// Flat labels in selection order.
    pub fn labels(&self, dx: &Dictionary1D, dy: &Dictionary1D) -> Vec<usize> {
        self.indices
            .iter()
            .map(|&p| flatten_index(p, dx.atom_count(), dy.atom_count()).expect("selected atoms are in range"))
            .collect()
    }

    /// Rebuilds each channel as `Σ_n c_n^z A_n`.
    pub fn reconstruct(&self, dx: &Dictionary1D, dy: &Dictionary1D) -> Vec<Array2<f64>> {
        let atoms: Vec<Array2<f64>> = self.indices.iter().map(|p| p.atom(dx, dy)).collect();
        self.coeffs
            .iter()
            .map(|cs| {
                let mut out = Array2::zeros((dx.len(), dy.len()));
                for (a, &c) in atoms.iter().zip(cs) {
                    axpy(&mut out, c, a);
                }
                out
            })
            .collect()
    }
}

/// Approximation plus the final state, for callers that need the projector.
#[derive(Debug, Clone)]
pub struct ApproximationTrace {
    pub approximation: BlockApproximation,
    pub state: OmpState,
    /// `Σ_z ‖R_z‖²_F` after each iteration, starting with `k = 0`.
    pub residual_history: Vec<f64>,
}

/// Runs OMP on one block until the residual criterion, the atom cap, or
/// exhaustion of selectable atoms stops it.
pub fn approximate_block(
    blocks: &[Array2<f64>],
    dx: &Dictionary1D,
    dy: &Dictionary1D,
    cfg: &OmpConfig,
) -> Result<BlockApproximation> {
    approximate_block_traced(blocks, dx, dy, cfg).map(|t| t.approximation)
}

pub fn approximate_block_traced(
    blocks: &[Array2<f64>],
    dx: &Dictionary1D,
    dy: &Dictionary1D,
    cfg: &OmpConfig,
) -> Result<ApproximationTrace> {
    let shape = (dx.len(), dy.len());
    if blocks.is_empty() {
        return Err(Error::InvalidDimension("block has no channels".into()));
    }
    if blocks.iter().any(|b| b.dim() != shape) {
        return Err(Error::DimensionMismatch(format!("blocks must be {}x{}", shape.0, shape.1)));
    }
    if shape.0 != shape.1 {
        return Err(Error::DimensionMismatch("blocks must be square".into()));
    }
    cfg.validate(shape.0)?;

    let mut state = OmpState::new(shape.0, shape.1);
    let mut residuals: Vec<Array2<f64>> = blocks.to_vec();
    let energy = |rs: &[Array2<f64>]| rs.iter().map(|r| dot(r, r)).sum::<f64>();
    let mut history = vec![energy(&residuals)];
    let mut blocked: HashSet<AtomIndexPair> = HashSet::new();

    while state.k() < cfg.max_k && *history.last().unwrap() >= cfg.rho {
        let Some(pair) = select_atom(&residuals, dx, dy, &blocked) else {
            break;
        };
        blocked.insert(pair);
        match state.extend(pair, dx, dy, cfg.tol_dependent) {
            Ok(()) => {}
            Err(Error::DependentAtom { .. }) => continue,
            Err(e) => return Err(e),
        }
        // the new orthogonal direction carries the whole residual update
        let w = state.ortho.last().unwrap();
        let w_sq = *state.ortho_sq.last().unwrap();
        for r in residuals.iter_mut() {
            let c = dot(w, r) / w_sq;
            axpy(r, -c, w);
        }
        history.push(energy(&residuals));
    }

    let coeffs = coefficients(&state, blocks);
    let residual_sq = blocks
        .iter()
        .zip(&coeffs)
        .map(|(b, cs)| {
            let r = b - &state.synthesize(cs);
            dot(&r, &r)
        })
        .sum();
    Ok(ApproximationTrace {
        approximation: BlockApproximation { indices: state.selected.clone(), coeffs, block_n: shape.0, residual_sq },
        state,
        residual_history: history,
    })
}

/// How an image is approximated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxConfig {
    pub target_psnr: f64,
    pub block_n: usize,
    /// Raise the uniform per-block threshold until the whole-image PSNR
    /// lands in `[target, target + CALIBRATION_BAND]` dB.
    pub calibrate: bool,
    pub max_k: Option<usize>,
    pub execution: Execution,
}

/// Width of the accepted PSNR band when calibrating, in dB.
pub const CALIBRATION_BAND: f64 = 0.2;
const CALIBRATION_STEPS: usize = 60;

impl ApproxConfig {
    pub fn new(target_psnr: f64) -> Self {
        ApproxConfig { target_psnr, block_n: 8, calibrate: true, max_k: None, execution: Execution::default() }
    }

    pub fn omp_config(&self, rho: f64) -> OmpConfig {
        OmpConfig { rho, max_k: self.max_k.unwrap_or(self.block_n * self.block_n), tol_dependent: DEPENDENT_TOL }
    }
}

/// Block-wise sparse approximation of a whole image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageApproximation {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub bits: u32,
    pub block_n: usize,
    /// Raster order.
    pub blocks: Vec<BlockApproximation>,
    /// The uniform threshold every block was stopped with.
    pub rho: f64,
}

impl ImageApproximation {
    pub fn atoms_per_block(&self) -> Vec<usize> {
        self.blocks.iter().map(BlockApproximation::k).collect()
    }

    /// Coefficients over all channels.
    pub fn total_coefficients(&self) -> usize {
        self.blocks.iter().map(|b| b.k() * b.channel_count()).sum()
    }

    pub fn sparsity_ratio(&self) -> Result<f64> {
        crate::metrics::sparsity_ratio(self.rows * self.cols * self.channels, self.total_coefficients())
    }

    /// The plain-text image `I^K`.
    pub fn to_image(&self) -> Result<Image> {
        let d = build_mixed(self.block_n)?;
        let tiles: Vec<Vec<Array2<f64>>> = self.blocks.iter().map(|b| b.reconstruct(&d, &d)).collect();
        assemble_image(&tiles, self.rows, self.cols, self.block_n, self.bits)
    }
}

/// Approximates every block of `image` with the mixed dictionary.
///
/// The per-block threshold is `rho_from_psnr(target)`, which guarantees the
/// target on every block. With calibration the threshold is then raised,
/// using each block's residual history, so the global PSNR sits just above
/// the target. Because selection never depends on the threshold, a larger
/// threshold simply truncates each block's selection path.
pub fn approximate_image(image: &Image, cfg: &ApproxConfig) -> Result<ImageApproximation> {
    let n = cfg.block_n;
    let d = build_mixed(n)?;
    let z = image.channel_count();
    let rho = rho_from_psnr(cfg.target_psnr, image.bits(), n, z);
    let omp = cfg.omp_config(rho);
    omp.validate(n)?;
    let tiles = tile_image(image, n);
    let traces = try_map_indexed(cfg.execution, &tiles, |_, t| approximate_block_traced(t, &d, &d, &omp))?;

    let mut chosen = rho;
    let blocks = if cfg.calibrate {
        let histories: Vec<&[f64]> = traces.iter().map(|t| t.residual_history.as_slice()).collect();
        chosen = calibrate_rho(&histories, rho, cfg.target_psnr, image);
        let picks: Vec<(&ApproximationTrace, usize)> =
            traces.iter().map(|t| (t, stop_index(&t.residual_history, chosen).min(t.approximation.k()))).collect();
        try_map_indexed(cfg.execution, &picks, |q, &(trace, k)| {
            if k == trace.approximation.k() {
                return Ok(trace.approximation.clone());
            }
            truncate(&trace.approximation.indices[..k], &tiles[q], &d)
        })?
    } else {
        traces.into_iter().map(|t| t.approximation).collect()
    };

    Ok(ImageApproximation {
        rows: image.rows(),
        cols: image.cols(),
        channels: z,
        bits: image.bits(),
        block_n: n,
        blocks,
        rho: chosen,
    })
}

/// First `k` whose residual energy is below `rho`, or the last entry.
fn stop_index(history: &[f64], rho: f64) -> usize {
    history.iter().position(|&e| e < rho).unwrap_or(history.len() - 1)
}

fn truncate(indices: &[AtomIndexPair], blocks: &[Array2<f64>], d: &Dictionary1D) -> Result<BlockApproximation> {
    let state = OmpState::from_indices(indices, d, d, DEPENDENT_TOL)?;
    let coeffs = coefficients(&state, blocks);
    let residual_sq = blocks
        .iter()
        .zip(&coeffs)
        .map(|(b, cs)| {
            let r = b - &state.synthesize(cs);
            dot(&r, &r)
        })
        .sum();
    Ok(BlockApproximation { indices: indices.to_vec(), coeffs, block_n: d.len(), residual_sq })
}

fn calibrate_rho(histories: &[&[f64]], rho_floor: f64, target: f64, image: &Image) -> f64 {
    let pixels = image.pixel_count() as f64;
    let peak = image.peak();
    let global_psnr = |rho: f64| {
        let sse: f64 = histories.iter().map(|h| h[stop_index(h, rho)]).sum();
        if sse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (peak * peak * pixels / sse).log10()
        }
    };
    if rho_floor <= 0.0 || global_psnr(rho_floor) < target {
        return rho_floor;
    }
    let ceiling = histories.iter().map(|h| h[0]).fold(0.0, f64::max) * 2.0;
    let mut lo = rho_floor;
    let mut hi = rho_floor * 2.0;
    while global_psnr(hi) >= target && hi < ceiling {
        lo = hi;
        hi *= 2.0;
    }
    if global_psnr(hi) >= target {
        return hi;
    }
    for _ in 0..CALIBRATION_STEPS {
        let p = global_psnr(lo);
        if p <= target + CALIBRATION_BAND {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if global_psnr(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}
