//! Self-contained encrypted image folding.
//!
//! The first `H` blocks (raster order) are hosts. The coefficients of every
//! other block are written, as amplitudes, along a private orthonormal basis
//! of each host's null space: the orthogonal complement of the span of the
//! atoms the host itself uses. Projecting a host back onto its own span
//! recovers its approximation untouched, and inner products with the basis
//! recover the payload.
//!
//! Atom counts and atom labels of all blocks form the index stream, which
//! is stored the same way in ad-hoc blocks: each ad-hoc block's constant
//! atom carries the number of slots used, and its complement carries the
//! values.
//!
//! Each basis is derived from random matrices drawn from the public seed
//! stream, projected onto the null space, mixed by keyed plane rotations
//! drawn from the private key stream, and orthonormalized. Ad-hoc blocks
//! consume both streams before any host does, because the host bases can
//! only be sized once the atom counts are known.

use ndarray::Array2;

use crate::container::{FoldedContainer, HeaderFields, SectionQuant, FLAG_COUNTS_HIDDEN};
use crate::dictionary::{build_mixed, flatten_index, unflatten_index, AtomIndexPair, Dictionary1D};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::keystream::{frobenius, orthonormalize, random_matrix, RandomStream, RotationSchedule};
use crate::omp2d::{approximate_image, ApproxConfig, ImageApproximation, OmpState, DEPENDENT_TOL};
use crate::par::{map_indexed, try_map_indexed, Execution};

/// Relative tolerance for rejecting a degenerate random matrix set.
pub const ORTH_TOL: f64 = 1e-10;

/// The secrets and public randomness of one fold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyMaterial {
    /// Never serialized.
    pub private_key: u64,
    /// Stored in the container header.
    pub public_seed: u32,
}

impl KeyMaterial {
    pub fn new(private_key: u64, public_seed: u32) -> Self {
        KeyMaterial { private_key, public_seed }
    }
}

fn fro(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    frobenius(a.as_slice().expect("standard layout"), b.as_slice().expect("standard layout"))
}

/// Random draws consumed by one basis of `len` elements on `n × n` blocks.
fn seed_draws(len: usize, n: usize) -> u64 {
    (len * n * n) as u64
}

fn key_draws(len: usize) -> u64 {
    if len < 2 {
        0
    } else {
        6 * len as u64
    }
}

/// A stream positioned `offset` draws past its origin.
fn stream_at(origin: &RandomStream, offset: u64) -> RandomStream {
    let mut s = origin.clone();
    s.skip(offset);
    s
}

/// Layout of the payload and the index stream.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub q: usize,
    pub hosts: usize,
    pub adhoc: usize,
    pub block_n: usize,
    pub adhoc_n: usize,
    /// Per channel: coefficients of the non-host blocks, raster order then
    /// selection order.
    pub payload: Vec<Vec<f64>>,
    /// `[K_q, label_1 .. label_{K_q}]` for every block.
    pub index_stream: Vec<u64>,
    /// Payload values carried by each host.
    pub host_loads: Vec<usize>,
}

impl FoldPlan {
    pub fn adhoc_slots(&self) -> usize {
        self.adhoc_n * self.adhoc_n - 1
    }

    /// Values carried by ad-hoc block `t`.
    pub fn adhoc_values(&self, t: usize) -> &[u64] {
        let l = self.adhoc_slots();
        let start = (t * l).min(self.index_stream.len());
        let end = ((t + 1) * l).min(self.index_stream.len());
        &self.index_stream[start..end]
    }
}

/// Smallest `H` whose hosts hold the coefficients of all other blocks.
pub fn minimal_hosts(ks: &[usize], block_n: usize) -> Result<usize> {
    let dim = block_n * block_n;
    let mut need: usize = ks.iter().sum();
    let mut capacity = 0usize;
    for (h, &k) in ks.iter().enumerate() {
        if capacity >= need {
            return Ok(h);
        }
        if h + 1 == ks.len() {
            break;
        }
        capacity += dim.saturating_sub(k);
        need -= k;
    }
    if capacity >= need && ks.len() > 1 {
        return Ok(ks.len() - 1);
    }
    Err(Error::NotFoldable(format!("{} blocks need {need} payload slots but at most {capacity} are free", ks.len())))
}

/// Whether `h` hosts satisfy the capacity inequality.
pub fn capacity_holds(ks: &[usize], block_n: usize, h: usize) -> bool {
    let dim = block_n * block_n;
    let capacity: usize = ks[..h].iter().map(|&k| dim.saturating_sub(k)).sum();
    let need: usize = ks[h..].iter().sum();
    capacity >= need
}

pub fn plan_fold(
    approx: &ImageApproximation,
    dx: &Dictionary1D,
    dy: &Dictionary1D,
    adhoc_n: usize,
) -> Result<FoldPlan> {
    let blocks = &approx.blocks;
    if blocks.is_empty() {
        return Err(Error::InvalidDimension("no blocks to fold".into()));
    }
    let n = approx.block_n;
    let ks = approx.atoms_per_block();
    let hosts = minimal_hosts(&ks, n)?;

    let payload: Vec<Vec<f64>> = (0..approx.channels)
        .map(|z| blocks[hosts..].iter().flat_map(|b| b.coeffs[z].iter().copied()).collect())
        .collect();
    let mut remaining = payload.first().map_or(0, Vec::len);
    let host_loads = ks[..hosts]
        .iter()
        .map(|&k| {
            let take = (n * n - k).min(remaining);
            remaining -= take;
            take
        })
        .collect();

    let mut index_stream = Vec::with_capacity(blocks.len() + ks.iter().sum::<usize>());
    for b in blocks {
        index_stream.push(b.k() as u64);
        index_stream.extend(b.labels(dx, dy).into_iter().map(|l| l as u64));
    }
    let slots = adhoc_n * adhoc_n - 1;
    let adhoc = index_stream.len().div_ceil(slots);
    Ok(FoldPlan { q: blocks.len(), hosts, adhoc, block_n: n, adhoc_n, payload, index_stream, host_loads })
}

/// Builds the private orthonormal basis of the complement of the state's
/// span from already-drawn matrices and rotation schedule.
pub fn nullspace_basis_from(
    state: &OmpState,
    ys: &[Array2<f64>],
    schedule: &RotationSchedule,
) -> Result<Vec<Array2<f64>>> {
    let mut os: Vec<Array2<f64>> = ys.iter().map(|y| state.complement(y)).collect();
    schedule.apply(&mut os)?;
    orthonormalize(&os, ORTH_TOL)
}

/// Draws `n² − k` random matrices and a rotation schedule and returns the
/// keyed orthonormal basis of the state's null space.
pub fn build_nullspace_basis(
    state: &OmpState,
    seed_stream: &mut RandomStream,
    key_stream: &mut RandomStream,
    len: usize,
    n: usize,
) -> Result<Vec<Array2<f64>>> {
    if len == 0 || len + state.k() != n * n {
        return Err(Error::InvalidDimension(format!(
            "null space of a {}-atom state in {n}x{n} has dimension {}, not {len}",
            state.k(),
            n * n - state.k()
        )));
    }
    let ys: Vec<Array2<f64>> = (0..len).map(|_| random_matrix(seed_stream, n)).collect();
    let schedule = RotationSchedule::draw(key_stream, len);
    nullspace_basis_from(state, &ys, &schedule)
}

/// Unit-norm constant atom used by every ad-hoc block.
pub fn anchor_atom(n: usize) -> Array2<f64> {
    Array2::from_elem((n, n), 1.0 / n as f64)
}

fn adhoc_basis(seed_stream: &mut RandomStream, key_stream: &mut RandomStream, n: usize) -> Result<Vec<Array2<f64>>> {
    let anchor = anchor_atom(n);
    let len = n * n - 1;
    let mut os: Vec<Array2<f64>> = (0..len)
        .map(|_| {
            let y = random_matrix(seed_stream, n);
            let c = fro(&anchor, &y);
            y - &anchor * c
        })
        .collect();
    RotationSchedule::draw(key_stream, len).apply(&mut os)?;
    orthonormalize(&os, ORTH_TOL)
}

/// `G_z = I_z^K + Σ_i h_i^z U_i^z` for each channel.
pub fn embed_host(
    approx: &[Array2<f64>],
    payload: &[Vec<f64>],
    bases: &[Vec<Array2<f64>>],
) -> Result<Vec<Array2<f64>>> {
    approx
        .iter()
        .zip(payload)
        .zip(bases)
        .map(|((block, values), basis)| {
            if values.len() > basis.len() {
                return Err(Error::PayloadOverflow { payload: values.len(), capacity: basis.len() });
            }
            let mut g = block.clone();
            for (u, &h) in basis.iter().zip(values) {
                g.scaled_add(h, u);
            }
            Ok(g)
        })
        .collect()
}

/// Per-channel approximation and full-length payload read from a host.
#[derive(Debug, Clone, PartialEq)]
pub struct HostContents {
    pub approx: Vec<Array2<f64>>,
    pub payload: Vec<Vec<f64>>,
}

/// `I^K = P G`, `F = G − I^K`, `h_i = ⟨U_i, F⟩`.
pub fn extract_host_with_bases(g: &[Array2<f64>], state: &OmpState, bases: &[Vec<Array2<f64>>]) -> HostContents {
    let mut approx = Vec::with_capacity(g.len());
    let mut payload = Vec::with_capacity(g.len());
    for (gz, basis) in g.iter().zip(bases) {
        let ik = state.project(gz);
        let f = gz - &ik;
        payload.push(basis.iter().map(|u| fro(u, &f)).collect());
        approx.push(ik);
    }
    HostContents { approx, payload }
}

/// Rebuilds the host's state from its atom indices and bases from the
/// streams (one basis per channel, drawn in channel order), then extracts.
pub fn extract_host(
    g: &[Array2<f64>],
    indices: &[AtomIndexPair],
    dx: &Dictionary1D,
    dy: &Dictionary1D,
    seed_stream: &mut RandomStream,
    key_stream: &mut RandomStream,
) -> Result<HostContents> {
    let state = OmpState::from_indices(indices, dx, dy, DEPENDENT_TOL).map_err(|e| match e {
        Error::DependentAtom { .. } => Error::ContainerCorrupt("host atoms are linearly dependent".into()),
        other => other,
    })?;
    let n = dx.len();
    let len = n * n - state.k();
    let bases = (0..g.len())
        .map(|_| if len == 0 { Ok(Vec::new()) } else { build_nullspace_basis(&state, seed_stream, key_stream, len, n) })
        .collect::<Result<Vec<_>>>()?;
    Ok(extract_host_with_bases(g, &state, &bases))
}

/// `G̃ = count·A + Σ_i h̃_i Ũ_i` with `count = values.len()`.
pub fn build_adhoc_block(
    values: &[u64],
    seed_stream: &mut RandomStream,
    key_stream: &mut RandomStream,
    adhoc_n: usize,
) -> Result<Array2<f64>> {
    let slots = adhoc_n * adhoc_n - 1;
    if values.len() > slots {
        return Err(Error::PayloadOverflow { payload: values.len(), capacity: slots });
    }
    let basis = adhoc_basis(seed_stream, key_stream, adhoc_n)?;
    let mut g = anchor_atom(adhoc_n) * values.len() as f64;
    for (u, &v) in basis.iter().zip(values) {
        g.scaled_add(v as f64, u);
    }
    Ok(g)
}

/// Slot count and rounded values of one ad-hoc block. Values are signed so
/// that garbage produced by a wrong key stays observable.
pub fn extract_adhoc(
    g: &Array2<f64>,
    seed_stream: &mut RandomStream,
    key_stream: &mut RandomStream,
    adhoc_n: usize,
) -> Result<(usize, Vec<i64>)> {
    let slots = adhoc_n * adhoc_n - 1;
    let anchor = anchor_atom(adhoc_n);
    let count = fro(&anchor, g).round();
    if !(0.0..=slots as f64).contains(&count) {
        return Err(Error::ContainerCorrupt(format!("ad-hoc slot count {count} outside 0..={slots}")));
    }
    let count = count as usize;
    let basis = adhoc_basis(seed_stream, key_stream, adhoc_n)?;
    let f = g - &(anchor * count as f64);
    let values = basis[..count].iter().map(|u| fro(u, &f).round() as i64).collect();
    Ok((count, values))
}

/// Parameters of a fold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FoldConfig {
    pub approx: ApproxConfig,
    pub execution: Execution,
}

impl FoldConfig {
    pub fn new(target_psnr: f64) -> Self {
        FoldConfig { approx: ApproxConfig::new(target_psnr), execution: Execution::default() }
    }
}

/// Everything a fold produces.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub container: FoldedContainer,
    pub approximation: ImageApproximation,
    pub plan: FoldPlan,
}

pub fn fold(image: &Image, key: KeyMaterial, cfg: &FoldConfig) -> Result<FoldedContainer> {
    fold_detailed(image, key, cfg).map(|o| o.container)
}

pub fn fold_detailed(image: &Image, key: KeyMaterial, cfg: &FoldConfig) -> Result<FoldOutcome> {
    let approximation = approximate_image(image, &cfg.approx)?;
    fold_approximation(approximation, key, cfg.execution)
}

/// Folds an existing approximation (the plain-text image).
pub fn fold_approximation(approximation: ImageApproximation, key: KeyMaterial, exec: Execution) -> Result<FoldOutcome> {
    let n = approximation.block_n;
    if !matches!(approximation.channels, 1 | 3) {
        return Err(Error::InvalidDimension(format!(
            "containers hold 1 or 3 channels, not {}",
            approximation.channels
        )));
    }
    let d = build_mixed(n)?;
    let plan = plan_fold(&approximation, &d, &d, n)?;
    let width = approximation.cols.div_ceil(n) * n;
    if width < crate::container::HEADER_WORDS {
        return Err(Error::TooNarrow { needed: crate::container::HEADER_WORDS, width });
    }
    let seed0 = RandomStream::public(key.public_seed);
    let key0 = RandomStream::private(key.private_key);
    let slots = plan.adhoc_slots();

    let adhoc_ids: Vec<usize> = (0..plan.adhoc).collect();
    let adhoc_blocks = try_map_indexed(exec, &adhoc_ids, |_, &t| {
        let mut s = stream_at(&seed0, t as u64 * seed_draws(slots, n));
        let mut k = stream_at(&key0, t as u64 * key_draws(slots));
        build_adhoc_block(plan.adhoc_values(t), &mut s, &mut k, n)
    })?;

    let z = approximation.channels;
    let host_lens: Vec<usize> = approximation.blocks[..plan.hosts].iter().map(|b| n * n - b.k()).collect();
    let offsets =
        host_offsets(&host_lens, z, n, plan.adhoc as u64 * seed_draws(slots, n), plan.adhoc as u64 * key_draws(slots));
    let mut payload_start = Vec::with_capacity(plan.hosts);
    let mut acc = 0;
    for &load in &plan.host_loads {
        payload_start.push(acc);
        acc += load;
    }

    let host_blocks = try_map_indexed(exec, &approximation.blocks[..plan.hosts], |q, block| {
        let state = OmpState::from_indices(&block.indices, &d, &d, DEPENDENT_TOL)?;
        let len = host_lens[q];
        let (seed_off, key_off) = offsets[q];
        let bases = channel_bases(&state, &seed0, &key0, seed_off, key_off, len, z, n)?;
        let approx: Vec<Array2<f64>> = block.coeffs.iter().map(|c| state.synthesize(c)).collect();
        let range = payload_start[q]..payload_start[q] + plan.host_loads[q];
        let payload: Vec<Vec<f64>> = plan.payload.iter().map(|p| p[range.clone()].to_vec()).collect();
        embed_host(&approx, &payload, &bases)
    })?;

    let header = HeaderFields {
        orig_rows: approximation.rows as u32,
        orig_cols: approximation.cols as u32,
        channels: z as u16,
        block_n: n as u16,
        q: plan.q as u32,
        h: plan.hosts as u32,
        h_tilde: plan.adhoc as u32,
        public_seed: key.public_seed,
        flags: FLAG_COUNTS_HIDDEN | ((approximation.bits as u16) << 8),
        host_quant: SectionQuant::default(),
        adhoc_quant: SectionQuant::default(),
    };
    let container = FoldedContainer::assemble(header, &host_blocks, &adhoc_blocks)?;
    Ok(FoldOutcome { container, approximation, plan })
}

/// Stream offsets `(seed, key)` of each host's first basis.
fn host_offsets(lens: &[usize], channels: usize, n: usize, seed_base: u64, key_base: u64) -> Vec<(u64, u64)> {
    let mut seed = seed_base;
    let mut key = key_base;
    lens.iter()
        .map(|&len| {
            let here = (seed, key);
            if len > 0 {
                seed += channels as u64 * seed_draws(len, n);
                key += channels as u64 * key_draws(len);
            }
            here
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn channel_bases(
    state: &OmpState,
    seed0: &RandomStream,
    key0: &RandomStream,
    seed_off: u64,
    key_off: u64,
    len: usize,
    channels: usize,
    n: usize,
) -> Result<Vec<Vec<Array2<f64>>>> {
    if len == 0 {
        return Ok(vec![Vec::new(); channels]);
    }
    let mut s = stream_at(seed0, seed_off);
    let mut k = stream_at(key0, key_off);
    (0..channels).map(|_| build_nullspace_basis(state, &mut s, &mut k, len, n)).collect()
}

/// Result of unfolding. A wrong key is not an error: it yields a garbled
/// image, and `suspect` is raised when the decoded index stream contained
/// values that no honest fold could have produced.
#[derive(Debug, Clone)]
pub struct Unfolded {
    pub image: Image,
    pub suspect: bool,
}

struct BlockIndices {
    pairs: Vec<AtomIndexPair>,
}

/// Splits the index stream into per-block atom lists, repairing anything
/// out of range and flagging it.
fn parse_index_stream(stream: &[i64], q: usize, n: usize, m: usize, suspect: &mut bool) -> Vec<BlockIndices> {
    let dim = (n * n) as i64;
    let labels = (m * m) as i64;
    let mut it = stream.iter().copied();
    let mut out = Vec::with_capacity(q);
    for _ in 0..q {
        let Some(raw_k) = it.next() else {
            *suspect = true;
            out.push(BlockIndices { pairs: Vec::new() });
            continue;
        };
        if !(0..=dim).contains(&raw_k) {
            *suspect = true;
        }
        let k = raw_k.rem_euclid(dim + 1) as usize;
        let mut pairs = Vec::with_capacity(k);
        for _ in 0..k {
            let Some(raw) = it.next() else {
                *suspect = true;
                break;
            };
            if !(1..=labels).contains(&raw) {
                *suspect = true;
            }
            let label = (raw - 1).rem_euclid(labels) as usize + 1;
            let pair = unflatten_index(label, m, m).expect("label wrapped into range");
            if pairs.contains(&pair) {
                *suspect = true;
                continue;
            }
            pairs.push(pair);
        }
        out.push(BlockIndices { pairs });
    }
    out
}

/// Replays `extend`, skipping atoms that an honest container never holds.
fn lenient_state(pairs: &[AtomIndexPair], d: &Dictionary1D, suspect: &mut bool) -> OmpState {
    let mut state = OmpState::new(d.len(), d.len());
    for &p in pairs {
        if state.extend(p, d, d, DEPENDENT_TOL).is_err() {
            *suspect = true;
        }
    }
    state
}

/// Recovers the plain-text approximation from a container.
pub fn unfold(container: &FoldedContainer, private_key: u64) -> Result<Unfolded> {
    unfold_with(container, private_key, Execution::default())
}

pub fn unfold_with(container: &FoldedContainer, private_key: u64, exec: Execution) -> Result<Unfolded> {
    let header = &container.header;
    header.validate()?;
    let n = header.block_n as usize;
    let z = header.channels as usize;
    let (rows, cols) = (header.orig_rows as usize, header.orig_cols as usize);
    let bits = match (header.flags >> 8) as u32 {
        0 => 8,
        b @ 1..=16 => b,
        b => return Err(Error::ContainerCorrupt(format!("bit depth {b}"))),
    };
    let d = build_mixed(n).map_err(|e| Error::ContainerCorrupt(e.to_string()))?;
    let m = d.atom_count();
    let seed0 = RandomStream::public(header.public_seed);
    let key0 = RandomStream::private(private_key);
    let slots = n * n - 1;
    let q_total = header.q as usize;
    let hosts = header.h as usize;
    let adhoc = header.h_tilde as usize;

    let adhoc_ids: Vec<usize> = (0..adhoc).collect();
    let decoded = try_map_indexed(exec, &adhoc_ids, |_, &t| {
        let mut s = stream_at(&seed0, t as u64 * seed_draws(slots, n));
        let mut k = stream_at(&key0, t as u64 * key_draws(slots));
        extract_adhoc(&container.adhoc_block(t), &mut s, &mut k, n)
    })?;
    let stream: Vec<i64> = decoded.into_iter().flat_map(|(_, v)| v).collect();

    let mut suspect = false;
    let indices = parse_index_stream(&stream, q_total, n, m, &mut suspect);
    let host_states: Vec<OmpState> =
        indices[..hosts].iter().map(|b| lenient_state(&b.pairs, &d, &mut suspect)).collect();
    let host_lens: Vec<usize> = host_states.iter().map(|s| n * n - s.k()).collect();
    let offsets = host_offsets(&host_lens, z, n, adhoc as u64 * seed_draws(slots, n), adhoc as u64 * key_draws(slots));

    let contents = try_map_indexed(exec, &host_states, |q, state| {
        let (seed_off, key_off) = offsets[q];
        let bases = channel_bases(state, &seed0, &key0, seed_off, key_off, host_lens[q], z, n)?;
        let g: Vec<Array2<f64>> = (0..z).map(|c| container.host_block(q, c)).collect();
        Ok::<_, Error>(extract_host_with_bases(&g, state, &bases))
    })?;

    // regroup host payloads into the coefficients of the remaining blocks
    let mut payload: Vec<std::vec::IntoIter<f64>> = (0..z)
        .map(|c| contents.iter().flat_map(|h| h.payload[c].iter().copied()).collect::<Vec<_>>().into_iter())
        .collect();
    let mut tiles: Vec<Vec<Array2<f64>>> = contents.into_iter().map(|h| h.approx).collect();
    let rest: Vec<(usize, Vec<Vec<f64>>)> = indices[hosts..]
        .iter()
        .map(|b| {
            let coeffs = payload
                .iter_mut()
                .map(|p| {
                    (0..b.pairs.len())
                        .map(|_| {
                            p.next().unwrap_or_else(|| {
                                suspect = true;
                                0.0
                            })
                        })
                        .collect()
                })
                .collect();
            (b.pairs.len(), coeffs)
        })
        .collect();
    let rest_tiles = map_indexed(exec, &rest, |i, (_, coeffs)| {
        let atoms: Vec<Array2<f64>> = indices[hosts + i].pairs.iter().map(|p| p.atom(&d, &d)).collect();
        coeffs
            .iter()
            .map(|cs| {
                let mut out = Array2::zeros((n, n));
                for (a, &c) in atoms.iter().zip(cs) {
                    out.scaled_add(c, a);
                }
                out
            })
            .collect::<Vec<_>>()
    });
    tiles.extend(rest_tiles);
    let image = crate::container::assemble_image(&tiles, rows, cols, n, bits)?;
    Ok(Unfolded { image, suspect })
}

/// Labels of a block's atoms, for callers that build index streams by hand.
pub fn block_labels(indices: &[AtomIndexPair], d: &Dictionary1D) -> Result<Vec<usize>> {
    indices.iter().map(|&p| flatten_index(p, d.atom_count(), d.atom_count())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::omp2d::{BlockApproximation, ImageApproximation};

    fn fake_approx(ks: &[usize], n: usize) -> ImageApproximation {
        let d = build_mixed(n).unwrap();
        let blocks = ks
            .iter()
            .map(|&k| BlockApproximation {
                indices: (0..k).map(|i| AtomIndexPair::new(n * 2 + i / n, n * 2 + i % n)).collect(),
                coeffs: vec![(0..k).map(|i| i as f64 + 0.5).collect()],
                block_n: n,
                residual_sq: 0.0,
            })
            .collect();
        let _ = d;
        ImageApproximation { rows: n, cols: n * ks.len(), channels: 1, bits: 8, block_n: n, blocks, rho: 0.0 }
    }

    #[test]
    fn plan_examples() {
        let d = build_mixed(8).unwrap();
        let plan = plan_fold(&fake_approx(&[8; 16], 8), &d, &d, 8).unwrap();
        assert_eq!(plan.hosts, 2);
        assert_eq!(plan.index_stream.len(), 144);
        assert_eq!(plan.adhoc, 3);
        assert_eq!(plan.host_loads, vec![56, 56]);
        assert_eq!(plan.payload[0].len(), 112);

        let plan = plan_fold(&fake_approx(&[0; 100], 8), &d, &d, 8).unwrap();
        assert_eq!(plan.hosts, 0);
        assert_eq!(plan.index_stream, vec![0; 100]);
        assert_eq!(plan.adhoc, 2);
    }

    #[test]
    fn unfoldable_profiles_are_rejected() {
        assert!(matches!(minimal_hosts(&[64, 64, 64], 8), Err(Error::NotFoldable(_))));
        assert!(matches!(minimal_hosts(&[3], 8), Err(Error::NotFoldable(_))));
        assert_eq!(minimal_hosts(&[0], 8).unwrap(), 0);
        assert_eq!(minimal_hosts(&[60, 4], 8).unwrap(), 1);
    }

    #[test]
    fn adhoc_block_carries_its_count() {
        let mut s = RandomStream::public(1);
        let mut k = RandomStream::private(2);
        let values: Vec<u64> = (1..=12).map(|v| v * 97).collect();
        let g = build_adhoc_block(&values, &mut s, &mut k, 8).unwrap();
        assert!((fro(&anchor_atom(8), &g) - 12.0).abs() < 1e-10);

        let (mut s, mut k) = (RandomStream::public(1), RandomStream::private(2));
        let (count, back) = extract_adhoc(&g, &mut s, &mut k, 8).unwrap();
        assert_eq!(count, 12);
        assert_eq!(back, values.iter().map(|&v| v as i64).collect::<Vec<_>>());

        let zero = build_adhoc_block(&[], &mut RandomStream::public(1), &mut RandomStream::private(2), 8).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let (count, vals) =
            extract_adhoc(&zero, &mut RandomStream::public(1), &mut RandomStream::private(2), 8).unwrap();
        assert_eq!((count, vals.len()), (0, 0));
        assert!(build_adhoc_block(&[1; 64], &mut RandomStream::public(1), &mut RandomStream::private(2), 8).is_err());
    }

    #[test]
    fn adhoc_labels_roundtrip_at_dictionary_scale() {
        let values: Vec<u64> = (0..63).map(|i| 1 + (i * 211) % 1600).collect();
        let g = build_adhoc_block(&values, &mut RandomStream::public(44), &mut RandomStream::private(45), 8).unwrap();
        let anchor = anchor_atom(8);
        let basis = adhoc_basis(&mut RandomStream::public(44), &mut RandomStream::private(45), 8).unwrap();
        let f = &g - &(&anchor * 63.0);
        for (u, &v) in basis.iter().zip(&values) {
            assert!((fro(u, &f) - v as f64).abs() < 0.5);
        }
        let (_, back) = extract_adhoc(&g, &mut RandomStream::public(44), &mut RandomStream::private(45), 8).unwrap();
        assert_eq!(back, values.iter().map(|&v| v as i64).collect::<Vec<_>>());
    }

    #[test]
    fn corrupt_adhoc_count_is_an_error() {
        let g = anchor_atom(8) * 70.0;
        assert!(matches!(
            extract_adhoc(&g, &mut RandomStream::public(1), &mut RandomStream::private(1), 8),
            Err(Error::ContainerCorrupt(_))
        ));
    }

    #[test]
    fn trivial_state_gives_full_basis() {
        let st = OmpState::new(8, 8);
        let b = build_nullspace_basis(&st, &mut RandomStream::public(3), &mut RandomStream::private(4), 64, 8).unwrap();
        assert_eq!(b.len(), 64);
        assert!(build_nullspace_basis(&st, &mut RandomStream::public(3), &mut RandomStream::private(4), 63, 8).is_err());
    }

    #[test]
    fn index_stream_parsing_repairs_garbage() {
        let mut suspect = false;
        let blocks = parse_index_stream(&[2, 5, 7, 0, 1, 3], 3, 8, 40, &mut suspect);
        assert!(!suspect);
        assert_eq!(blocks[0].pairs.len(), 2);
        assert_eq!(blocks[1].pairs.len(), 0);
        assert_eq!(blocks[2].pairs, vec![unflatten_index(3, 40, 40).unwrap()]);

        let blocks = parse_index_stream(&[-4, 0, 1601, 9999, 2], 3, 8, 40, &mut suspect);
        assert!(suspect);
        assert_eq!(blocks.len(), 3);
    }

    #[test]
    fn embed_rejects_oversized_payload() {
        let err = embed_host(&[Array2::zeros((8, 8))], &[vec![1.0; 3]], &[vec![Array2::zeros((8, 8)); 2]]).unwrap_err();
        assert!(matches!(err, Error::PayloadOverflow { payload: 3, capacity: 2 }));
    }
}
