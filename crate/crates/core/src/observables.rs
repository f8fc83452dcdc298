//! Measured quantities: emitter populations and rates, field energy density
//! and photon auto-correlations, entanglement measures, excitation sectors,
//! singlet weights and the survival probability of a reference state.
//!
//! Emitter states use the basis ordering of [`EmitterDensityMatrix`]: emitter
//! 1 is the most significant bit, bit value 1 means excited. Entropies and the
//! negativity are in bits.

use thiserror::Error;

use crate::collision::SiteLayout;
use crate::mps::{entropy_from_probabilities, MatrixProductState, MpsError, SiteKind};
use crate::tensor::{gemm, hermitian_eigenvalues, ComplexTensor, TensorError, C64, ONE, ZERO};

#[derive(Debug, Error)]
pub enum ObservableError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Mps(#[from] MpsError),

    /// Photon truncation too small for the requested correlation order.
    #[error("correlation order {order} needs at least {order} photons per direction per bin (n_max >= {order}), but n_max = {n_max}")]
    InsufficientTruncation { order: usize, n_max: usize },

    /// Observable only defined for particular emitter counts.
    #[error("{what} is only implemented for N = {supported}, got N = {actual}")]
    UnsupportedSize {
        what: &'static str,
        supported: &'static str,
        actual: usize,
    },

    /// Input vectors or matrices have inconsistent sizes.
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
}

pub type ObservableResult<T> = Result<T, ObservableError>;

/// Reduced state of the emitters, a `2^N x 2^N` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmitterDensityMatrix {
    n: usize,
    matrix: ComplexTensor,
}

impl EmitterDensityMatrix {
    pub fn new(n: usize, matrix: ComplexTensor) -> Result<Self, TensorError> {
        let (r, c) = matrix.matrix_dims()?;
        if r != c || r != 1usize << n {
            return Err(TensorError::ShapeMismatch {
                shape: matrix.shape().to_vec(),
                expected: 1 << (2 * n),
                actual: r * c,
            });
        }
        Ok(Self { n, matrix })
    }

    /// Projector onto a pure state (normalized internally).
    pub fn from_pure(n: usize, psi: &[C64]) -> Result<Self, TensorError> {
        let dim = 1usize << n;
        if psi.len() != dim {
            return Err(TensorError::ShapeMismatch {
                shape: vec![dim],
                expected: dim,
                actual: psi.len(),
            });
        }
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        let m = ComplexTensor::from_fn(vec![dim, dim], |ix| psi[ix[0]] * psi[ix[1]].conj() / norm)?;
        Self::new(n, m)
    }

    pub fn n_emitters(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn matrix(&self) -> &ComplexTensor {
        &self.matrix
    }

    pub fn element(&self, a: usize, b: usize) -> C64 {
        self.matrix.data()[a * self.dim() + b]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.element(k, k).re).sum()
    }

    /// `sum_j <sigma_j^dag sigma_j>`.
    pub fn excitation_number(&self) -> f64 {
        (0..self.dim())
            .map(|k| k.count_ones() as f64 * self.element(k, k).re)
            .sum()
    }

    /// `<psi| rho |psi>`.
    pub fn expectation_of_state(&self, psi: &[C64]) -> f64 {
        let d = self.dim();
        let mut acc = ZERO;
        for a in 0..d {
            if psi[a] == ZERO {
                continue;
            }
            for b in 0..d {
                acc += psi[a].conj() * self.element(a, b) * psi[b];
            }
        }
        acc.re
    }

    pub fn eigenvalues(&self) -> Result<Vec<f64>, TensorError> {
        hermitian_eigenvalues(&self.matrix)
    }
}

/// Occupation probabilities of one photon bin: the diagonal of its reduced
/// density matrix in the `n_R * (n_max + 1) + n_L` basis.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BinOccupation {
    pub bin: i64,
    pub probs: Vec<f64>,
}

/// Propagation direction of a waveguide mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Right,
    Left,
}

impl BinOccupation {
    pub fn n_max(&self) -> usize {
        (self.probs.len() as f64).sqrt().round() as usize - 1
    }

    /// Factorial moment `<(B^dag)^m B^m>` of one direction; `m = 1` is the
    /// mean photon number.
    pub fn factorial_moment(&self, dir: Direction, m: usize) -> f64 {
        let base = self.n_max() + 1;
        let mut acc = 0.0;
        for (idx, &p) in self.probs.iter().enumerate() {
            let k = match dir {
                Direction::Right => idx / base,
                Direction::Left => idx % base,
            };
            if k >= m {
                acc += p * ((k - m + 1)..=k).map(|x| x as f64).product::<f64>();
            }
        }
        acc
    }

    pub fn mean(&self, dir: Direction) -> f64 {
        self.factorial_moment(dir, 1)
    }

    pub fn total_mean(&self) -> f64 {
        self.mean(Direction::Right) + self.mean(Direction::Left)
    }
}

/// Occupation of the photon bin at chain position `i`.
pub fn bin_occupation(state: &mut MatrixProductState, i: usize) -> ObservableResult<BinOccupation> {
    let bin = match state.kind(i) {
        SiteKind::PhotonBin { bin } => bin,
        SiteKind::EmitterPair { .. } => {
            return Err(ObservableError::SizeMismatch(format!("site {i} is not a photon bin")))
        }
    };
    let rho = state.site_density_matrix(i)?;
    let d = state.phys_dim(i);
    let probs = (0..d).map(|k| rho.data()[k * d + k].re).collect();
    Ok(BinOccupation { bin, probs })
}

/// Occupations of every photon bin in the chain, in chain order.
pub fn bin_occupations(state: &mut MatrixProductState) -> ObservableResult<Vec<BinOccupation>> {
    let mut out = Vec::new();
    for i in 0..state.len() {
        if !state.kind(i).is_emitter() {
            out.push(bin_occupation(state, i)?);
        }
    }
    Ok(out)
}

/// Excited-state populations of the emitters on one pair site, as
/// `(p_pair, p_partner)`, from its reduced density matrix.
pub fn pair_populations(rho: &ComplexTensor) -> (f64, f64) {
    let d = rho.shape()[0];
    let p = |k: usize| rho.data()[k * d + k].re;
    (p(2) + p(3), p(1) + p(3))
}

/// Emitter excitation number `sum_j <sigma_j^dag sigma_j>`.
pub fn excitation_number(state: &mut MatrixProductState) -> ObservableResult<f64> {
    let mut total = 0.0;
    for i in 0..state.len() {
        if state.kind(i).is_emitter() {
            let (a, b) = pair_populations(&state.site_density_matrix(i)?);
            total += a + b;
        }
    }
    Ok(total)
}

/// Derivative of `y(t)` on a possibly non-uniform grid: three-point
/// Lagrange stencils, centered inside and one-sided at the ends.
pub fn derivative(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    assert_eq!(n, y.len());
    if n < 2 {
        return vec![0.0; n];
    }
    if n == 2 {
        let d = (y[1] - y[0]) / (t[1] - t[0]);
        return vec![d, d];
    }
    // Derivative at t[at] of the parabola through points i, i+1, i+2.
    let stencil = |i: usize, at: usize| {
        let (x0, x1, x2) = (t[i], t[i + 1], t[i + 2]);
        let x = t[at];
        let l0 = ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2));
        let l1 = ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2));
        let l2 = ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1));
        l0 * y[i] + l1 * y[i + 1] + l2 * y[i + 2]
    };
    let mut d = Vec::with_capacity(n);
    d.push(stencil(0, 0));
    for k in 1..n - 1 {
        d.push(stencil(k - 1, k));
    }
    d.push(stencil(n - 3, n - 1));
    d
}

/// Values below this are treated as zero when dividing.
pub const RATE_GUARD: f64 = 1e-9;

/// Logarithmic decay rate `-(dy/dt) / y`; absent where `y < 1e-9`.
pub fn instantaneous_rate(t: &[f64], y: &[f64]) -> Vec<Option<f64>> {
    derivative(t, y)
        .into_iter()
        .zip(y)
        .map(|(dy, &v)| (v >= RATE_GUARD).then(|| -dy / v))
        .collect()
}

/// Von Neumann entropy (bits) of the emitter state.
pub fn emitter_field_entropy(rho: &EmitterDensityMatrix) -> ObservableResult<f64> {
    let tr = rho.trace();
    Ok(entropy_from_probabilities(
        rho.eigenvalues()?.into_iter().map(|x| x / tr),
    ))
}

/// Partial transpose over emitters `1..=N/2` (the high bits).
pub fn partial_transpose_half(rho: &EmitterDensityMatrix) -> ComplexTensor {
    let n = rho.n_emitters();
    let d = rho.dim();
    let low_bits = n - n / 2;
    let lo_mask = (1usize << low_bits) - 1;
    let mut out = vec![ZERO; d * d];
    for r in 0..d {
        for c in 0..d {
            let (ra, rb) = (r >> low_bits, r & lo_mask);
            let (ca, cb) = (c >> low_bits, c & lo_mask);
            let r2 = (ca << low_bits) | rb;
            let c2 = (ra << low_bits) | cb;
            out[r * d + c] = rho.element(r2, c2);
        }
    }
    ComplexTensor::from_parts(vec![d, d], out)
}

/// Half-chain logarithmic negativity `log2 ||rho^{T_A}||_1`, A = emitters
/// `1..=N/2`.
pub fn logarithmic_negativity(rho: &EmitterDensityMatrix) -> ObservableResult<f64> {
    if rho.n_emitters() < 2 {
        return Ok(0.0);
    }
    let pt = partial_transpose_half(rho);
    let norm1: f64 = hermitian_eigenvalues(&pt)?.iter().map(|x| x.abs()).sum();
    Ok((norm1 / rho.trace()).log2().max(0.0))
}

/// Populations `P^(k)` of the sectors with `k = 0..=N` emitter excitations.
pub fn sector_populations(rho: &EmitterDensityMatrix) -> Vec<f64> {
    let mut p = vec![0.0; rho.n_emitters() + 1];
    let tr = rho.trace();
    for k in 0..rho.dim() {
        p[k.count_ones() as usize] += rho.element(k, k).re / tr;
    }
    p
}

fn basis_index(bits: &str) -> usize {
    bits.chars().fold(0, |acc, c| (acc << 1) | usize::from(c == 'e'))
}

/// The two orthonormal four-emitter singlets spanning the dark
/// two-excitation subspace.
pub fn singlet_states() -> [Vec<C64>; 2] {
    let mut s1 = vec![ZERO; 16];
    for (bits, sign) in [("eegg", 1.0), ("egeg", -1.0), ("gege", -1.0), ("ggee", 1.0)] {
        s1[basis_index(bits)] = C64::new(0.5 * sign, 0.0);
    }
    let mut s2 = vec![ZERO; 16];
    let a = 1.0 / (2.0 * 3f64.sqrt());
    let b = -1.0 / 3f64.sqrt();
    for bits in ["eegg", "egeg", "gege", "ggee"] {
        s2[basis_index(bits)] = C64::new(a, 0.0);
    }
    for bits in ["egge", "geeg"] {
        s2[basis_index(bits)] = C64::new(b, 0.0);
    }
    [s1, s2]
}

/// Weights of the two singlets, N = 4 only.
pub fn singlet_projections(rho: &EmitterDensityMatrix) -> ObservableResult<(f64, f64)> {
    if rho.n_emitters() != 4 {
        return Err(ObservableError::UnsupportedSize {
            what: "singlet projection",
            supported: "4",
            actual: rho.n_emitters(),
        });
    }
    let [s1, s2] = singlet_states();
    let tr = rho.trace();
    Ok((rho.expectation_of_state(&s1) / tr, rho.expectation_of_state(&s2) / tr))
}

/// Normalized permutation-symmetric state of `n` emitters with `k`
/// excitations.
pub fn dicke_state(n: usize, k: usize) -> Vec<C64> {
    let dim = 1usize << n;
    let count = (0..dim).filter(|x| x.count_ones() as usize == k).count();
    let amp = C64::new(1.0 / (count as f64).sqrt(), 0.0);
    (0..dim)
        .map(|x| if x.count_ones() as usize == k { amp } else { ZERO })
        .collect()
}

/// Map from the local indices of a sequence of emitter-pair sites to the
/// emitter-ordered basis index; `None` for padded levels.
pub(crate) fn pair_config_to_emitter_index(pairs: &[usize], locals: &[usize], n: usize) -> Option<usize> {
    let mut e = 0usize;
    for (&j, &s) in pairs.iter().zip(locals) {
        if s >= 4 {
            return None;
        }
        e |= (s >> 1) << (n - j);
        e |= (s & 1) << (j - 1);
    }
    Some(e)
}

/// `|<reference, vacuum | Psi>|^2 / <Psi|Psi>`, where `reference` is an
/// emitter state and every photon bin is projected on vacuum.
pub fn survival_probability(state: &MatrixProductState, reference: &[C64]) -> ObservableResult<f64> {
    let n = 2 * state.kinds().iter().filter(|k| k.is_emitter()).count();
    if reference.len() != 1 << n {
        return Err(ObservableError::SizeMismatch(format!(
            "reference has {} amplitudes, state has {n} emitters",
            reference.len()
        )));
    }
    // env[(config), bond]
    let mut env = vec![ONE];
    let mut configs = 1usize;
    let mut chi = 1usize;
    let mut pairs = Vec::new();
    let mut dims = Vec::new();
    for i in 0..state.len() {
        let t = state.site(i);
        let (l, d, r) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        debug_assert_eq!(l, chi);
        match state.kind(i) {
            SiteKind::PhotonBin { .. } => {
                let mut vac = vec![ZERO; l * r];
                for a in 0..l {
                    vac[a * r..(a + 1) * r].copy_from_slice(&t.data()[a * d * r..a * d * r + r]);
                }
                env = gemm(&env, configs, l, &vac, r);
            }
            SiteKind::EmitterPair { pair } => {
                env = gemm(&env, configs, l, t.data(), d * r);
                configs *= d;
                pairs.push(pair);
                dims.push(d);
            }
        }
        chi = r;
    }
    if chi != 1 {
        return Err(MpsError::Structure("right boundary bond must have extent 1".into()).into());
    }
    let mut overlap = ZERO;
    let mut locals = vec![0usize; dims.len()];
    for (c, &amp) in env.iter().enumerate() {
        let mut rem = c;
        for k in (0..dims.len()).rev() {
            locals[k] = rem % dims[k];
            rem /= dims[k];
        }
        if let Some(e) = pair_config_to_emitter_index(&pairs, &locals, n) {
            overlap += reference[e].conj() * amp;
        }
    }
    Ok(overlap.norm_sqr() / state.norm_sqr())
}

/// Entanglement entropy (bits) between the trapping region and the rest of
/// the waveguide.
///
/// The trapping region is the emitters plus every bin whose photons sit
/// strictly between the first and last emitter. In the chain layout these
/// are exactly the sites from the first emitter pair to the right end (bins
/// not yet created are vacuum product factors), so the entropy is that of the
/// single bond left of the first pair site.
pub fn in_out_entropy(state: &mut MatrixProductState, _layout: &SiteLayout) -> ObservableResult<f64> {
    let pos = state
        .position_of(SiteKind::EmitterPair { pair: 1 })
        .ok_or_else(|| MpsError::Structure("pair site 1 missing".into()))?;
    if pos == 0 {
        return Ok(0.0);
    }
    Ok(state.bond_entropy(pos - 1)?)
}

/// One spatial cell of the field snapshot at time `t_n`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProfileCell {
    /// Cell index `c`: the cell covers `x/d` in `[c/l, (c+1)/l)`.
    pub cell: i64,
    /// Position of the cell's left edge in units of the emitter spacing.
    pub x_over_d: f64,
    /// Right-moving photons per bin.
    pub density_r: f64,
    /// Left-moving photons per bin.
    pub density_l: f64,
    /// `G^(2)` summed over directions (absent when `n_max < 2`).
    pub g2_raw: Option<f64>,
    /// `G^(3)` summed over directions (absent when `n_max < 3`).
    pub g3_raw: Option<f64>,
}

impl ProfileCell {
    pub fn density(&self) -> f64 {
        self.density_r + self.density_l
    }

    /// `G^(m)` for `m = 1, 2, 3`.
    pub fn raw_correlation(&self, m: usize) -> Option<f64> {
        match m {
            1 => Some(self.density()),
            2 => self.g2_raw,
            3 => self.g3_raw,
            _ => None,
        }
    }
}

/// Field snapshot over the whole waveguide.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FieldProfile {
    /// Completed steps at the snapshot.
    pub step: usize,
    /// Bins per emitter spacing.
    pub ell: usize,
    pub cells: Vec<ProfileCell>,
}

impl FieldProfile {
    /// Total photon number in the waveguide.
    pub fn total_photons(&self) -> f64 {
        self.cells.iter().map(|c| c.density()).sum()
    }

    /// Distance of a cell's left edge from the front of the field emitted
    /// leftward at `t = 0`, in units of `d`. For cells left of emitter 1 this
    /// is the emission time past emitter 1 in units of the delay.
    pub fn distance_from_left_front(&self, cell: &ProfileCell) -> f64 {
        (cell.cell + self.step as i64) as f64 / self.ell as f64
    }
}

/// Energy density (photons per bin) on the spatial grid after `steps`
/// completed steps, undoing the left-mover shift: the right-mover of bin `m`
/// sits in cell `steps - m`, the left-mover in cell `(N-1) l - steps + m`.
/// Higher factorial moments are filled in up to the bins' `n_max`.
pub fn field_energy_density(
    occupations: &[BinOccupation],
    layout: &SiteLayout,
    steps: usize,
) -> FieldProfile {
    let ell = layout.ell() as i64;
    let n = steps as i64;
    let span = (layout.n_emitters() as i64 - 1) * ell;
    let c_min = -n;
    let c_max = n + span;
    let len = (c_max - c_min + 1) as usize;
    let n_max = occupations.first().map_or(1, |o| o.n_max());
    let mut cells: Vec<ProfileCell> = (0..len)
        .map(|k| {
            let c = c_min + k as i64;
            ProfileCell {
                cell: c,
                x_over_d: c as f64 / ell as f64,
                density_r: 0.0,
                density_l: 0.0,
                g2_raw: (n_max >= 2).then_some(0.0),
                g3_raw: (n_max >= 3).then_some(0.0),
            }
        })
        .collect();
    for occ in occupations {
        let m = occ.bin;
        if m >= n {
            continue;
        }
        for dir in [Direction::Right, Direction::Left] {
            let c = match dir {
                Direction::Right => n - m,
                Direction::Left => span - n + m,
            };
            let Some(cell) = cells.get_mut((c - c_min) as usize) else { continue };
            let mean = occ.mean(dir);
            match dir {
                Direction::Right => cell.density_r += mean,
                Direction::Left => cell.density_l += mean,
            }
            if let Some(g) = cell.g2_raw.as_mut() {
                *g += occ.factorial_moment(dir, 2);
            }
            if let Some(g) = cell.g3_raw.as_mut() {
                *g += occ.factorial_moment(dir, 3);
            }
        }
    }
    FieldProfile {
        step: steps,
        ell: layout.ell(),
        cells,
    }
}

/// `G^(m)(x)` per cell; requires `n_max >= m`.
pub fn autocorrelation(profile: &FieldProfile, n_max: usize, m: usize) -> ObservableResult<Vec<(f64, f64)>> {
    if !(1..=3).contains(&m) || n_max < m {
        return Err(ObservableError::InsufficientTruncation { order: m, n_max });
    }
    Ok(profile
        .cells
        .iter()
        .map(|c| (c.x_over_d, c.raw_correlation(m).unwrap_or(0.0)))
        .collect())
}

/// Below this photon density `g^(m)` is reported as absent.
pub const G_FLOOR: f64 = 1e-8;

/// `g^(m) = G^(m) / n^m` per cell, absent where `n < 1e-8`.
pub fn normalized_autocorrelation(g: &[f64], density: &[f64], m: usize) -> Vec<Option<f64>> {
    g.iter()
        .zip(density)
        .map(|(&gm, &n)| (n >= G_FLOOR).then(|| gm / n.powi(m as i32)))
        .collect()
}

/// One row of the time series.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimeSeriesRecord {
    pub step: usize,
    pub t: f64,
    pub gamma_t: f64,
    pub n_exc: f64,
    pub rate: Option<f64>,
    pub norm_sq: f64,
    pub discarded: f64,
    pub max_bond: usize,
    pub n_photons: Option<f64>,
    /// Photons leaving the emitter region during this step (both sides).
    pub output_flux: Option<f64>,
    pub s_ef: Option<f64>,
    pub s_inout: Option<f64>,
    pub negativity: Option<f64>,
    pub sector_populations: Option<Vec<f64>>,
    pub singlets: Option<(f64, f64)>,
    pub survival: Option<f64>,
    pub survival_rate: Option<f64>,
    #[serde(skip)]
    pub profile: Option<FieldProfile>,
}

/// Fill `rate` and `survival_rate` by finite differences over the records
/// that carry the underlying quantity.
pub fn attach_rates(records: &mut [TimeSeriesRecord]) {
    let t: Vec<f64> = records.iter().map(|r| r.t).collect();
    let y: Vec<f64> = records.iter().map(|r| r.n_exc).collect();
    if records.len() >= 3 {
        for (r, rate) in records.iter_mut().zip(instantaneous_rate(&t, &y)) {
            r.rate = rate;
        }
    }
    let idx: Vec<usize> = (0..records.len()).filter(|&k| records[k].survival.is_some()).collect();
    if idx.len() >= 3 {
        let ts: Vec<f64> = idx.iter().map(|&k| records[k].t).collect();
        let fs: Vec<f64> = idx.iter().map(|&k| records[k].survival.unwrap_or(0.0)).collect();
        for (&k, rate) in idx.iter().zip(instantaneous_rate(&ts, &fs)) {
            records[k].survival_rate = rate;
        }
    }
}

/// Scalars derived from an emitter density matrix.
pub fn fill_emitter_observables(rec: &mut TimeSeriesRecord, rho: &EmitterDensityMatrix) -> ObservableResult<()> {
    rec.s_ef = Some(emitter_field_entropy(rho)?);
    rec.negativity = Some(logarithmic_negativity(rho)?);
    rec.sector_populations = Some(sector_populations(rho));
    if rho.n_emitters() == 4 {
        rec.singlets = Some(singlet_projections(rho)?);
    }
    Ok(())
}
