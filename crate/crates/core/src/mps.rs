//! Matrix product states over a chain of emitter-pair sites and photon
//! time-bin sites.
//!
//! Site tensors have shape `(left_bond, physical, right_bond)`. The state
//! keeps a single orthogonality center: sites left of it are left-canonical,
//! sites right of it right-canonical, so the norm and any local quantity at
//! the center can be read off without touching the rest of the chain.
//!
//! Gates and SWAPs act on contiguous blocks. The block is contracted, the
//! operator applied, and the block split again by truncated SVDs. Every
//! truncation adds its relative discarded weight to `cumulative_discarded`;
//! the state is never renormalized, so `1 - norm^2` stays below that sum.
//!
//! The collision dynamics conserves the number of excitations. When asked to
//! (see [`MatrixProductState::track_charges`]), the state labels every bond
//! index with the excitation count to its left and runs all SVDs and QRs
//! sector by sector, which is far cheaper than the dense factorizations.

use std::io::{Read, Write};

use thiserror::Error;

use crate::observables::{pair_config_to_emitter_index, EmitterDensityMatrix};
use crate::sectors::SectorBlock;
use crate::tensor::{
    gemm, gemm_adj_right, permute_data, qr_raw, svd_raw, ComplexTensor, TensorError,
    TruncationPolicy, C64, ONE, ZERO,
};

/// What a chain site holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SiteKind {
    /// Emitters `pair` and `N + 1 - pair` (1-based). Local basis index is
    /// `2 * q_pair + q_partner` with `q = 0` ground and `q = 1` excited.
    EmitterPair { pair: usize },
    /// Both direction registers of time bin `bin`. Local basis index is
    /// `n_R * (n_max + 1) + n_L`.
    PhotonBin { bin: i64 },
}

impl SiteKind {
    pub fn is_emitter(&self) -> bool {
        matches!(self, SiteKind::EmitterPair { .. })
    }
}

#[derive(Debug, Error)]
pub enum MpsError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    /// Product-state input vector is not normalized.
    #[error("local vector for site {site} has norm {norm}, expected 1")]
    NotNormalized { site: usize, norm: f64 },

    /// Parallel lists disagree in length.
    #[error("{what}: expected {expected} entries, found {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// Site or bond index outside the chain.
    #[error("index {index} out of range for a chain of {len} sites")]
    OutOfRange { index: usize, len: usize },

    /// Operator dimension does not fit the site(s) it acts on.
    #[error("operator of dimension {actual} does not match physical dimension {expected} at site {site}")]
    PhysDimMismatch {
        site: usize,
        expected: usize,
        actual: usize,
    },

    /// Gate span other than 2 or 3.
    #[error("gate span must be 2 or 3, got {0}")]
    InvalidSpan(usize),

    /// Routed gate targets repeat a site.
    #[error("gate targets {0:?} are not distinct")]
    TargetsNotDistinct(Vec<usize>),

    /// Dense conversion would be too large.
    #[error("dense state of dimension {0} exceeds the conversion limit")]
    TooLarge(usize),

    /// State has no emitter sites or non-unit boundary bonds where required.
    #[error("invalid state structure: {0}")]
    Structure(String),

    /// Checkpoint parse failure.
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

pub type MpsResult<T> = Result<T, MpsError>;

const DENSE_LIMIT: usize = 1 << 24;
const CHECKPOINT_MAGIC: &[u8; 8] = b"WQEDMPS\0";
const CHECKPOINT_VERSION: u32 = 1;

/// Joint emitter-field state as a chain of rank-3 site tensors.
#[derive(Clone, Debug)]
pub struct MatrixProductState {
    sites: Vec<ComplexTensor>,
    kinds: Vec<SiteKind>,
    center: usize,
    cumulative_discarded: f64,
    /// Excitation count left of each bond index, bonds `0..=len`.
    charges: Option<Vec<Vec<i32>>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

impl MatrixProductState {
    /// Product state from normalized local vectors.
    pub fn product_state(local_vectors: &[Vec<C64>], kinds: Vec<SiteKind>) -> MpsResult<Self> {
        if local_vectors.len() != kinds.len() {
            return Err(MpsError::LengthMismatch {
                what: "site kinds",
                expected: local_vectors.len(),
                actual: kinds.len(),
            });
        }
        if local_vectors.is_empty() {
            return Err(MpsError::Structure("empty chain".into()));
        }
        let mut sites = Vec::with_capacity(kinds.len());
        for (site, v) in local_vectors.iter().enumerate() {
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(MpsError::NotNormalized { site, norm });
            }
            sites.push(ComplexTensor::new(vec![1, v.len(), 1], v.clone())?);
        }
        Ok(Self {
            sites,
            kinds,
            center: 0,
            cumulative_discarded: 0.0,
            charges: None,
        })
    }

    /// Assemble from explicit site tensors; every site must be rank 3 with
    /// matching bonds and the given center must make the state canonical.
    /// Canonicality is the caller's responsibility.
    pub fn from_sites(
        sites: Vec<ComplexTensor>,
        kinds: Vec<SiteKind>,
        center: usize,
        cumulative_discarded: f64,
    ) -> MpsResult<Self> {
        if sites.len() != kinds.len() {
            return Err(MpsError::LengthMismatch {
                what: "site kinds",
                expected: sites.len(),
                actual: kinds.len(),
            });
        }
        if sites.is_empty() || center >= sites.len() {
            return Err(MpsError::Structure("empty chain or center out of range".into()));
        }
        for (i, s) in sites.iter().enumerate() {
            if s.rank() != 3 {
                return Err(MpsError::Structure(format!("site {i} has rank {}", s.rank())));
            }
            if i > 0 && sites[i - 1].shape()[2] != s.shape()[0] {
                return Err(MpsError::Structure(format!("bond mismatch between sites {} and {i}", i - 1)));
            }
        }
        Ok(Self {
            sites,
            kinds,
            center,
            cumulative_discarded,
            charges: None,
        })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn kinds(&self) -> &[SiteKind] {
        &self.kinds
    }

    pub fn kind(&self, i: usize) -> SiteKind {
        self.kinds[i]
    }

    pub fn site(&self, i: usize) -> &ComplexTensor {
        &self.sites[i]
    }

    pub fn phys_dim(&self, i: usize) -> usize {
        self.sites[i].shape()[1]
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.phys_dim(i)).collect()
    }

    /// Bond extents, including both boundary bonds (length `len + 1`).
    pub fn bond_dims(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.sites.iter().map(|s| s.shape()[0]).collect();
        b.push(self.sites.last().map_or(1, |s| s.shape()[2]));
        b
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn cumulative_discarded(&self) -> f64 {
        self.cumulative_discarded
    }

    /// Chain position of the first site of the given kind.
    pub fn position_of(&self, kind: SiteKind) -> Option<usize> {
        self.kinds.iter().position(|&k| k == kind)
    }

    /// Squared norm, read from the orthogonality center.
    pub fn norm_sqr(&self) -> f64 {
        self.sites[self.center].norm_sqr()
    }

    fn dims3(&self, i: usize) -> (usize, usize, usize) {
        let s = self.sites[i].shape();
        (s[0], s[1], s[2])
    }

    fn check_site(&self, i: usize) -> MpsResult<()> {
        if i >= self.len() {
            return Err(MpsError::OutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Move the orthogonality center to site `to` by QR sweeps.
    pub fn move_center(&mut self, to: usize) -> MpsResult<()> {
        self.check_site(to)?;
        while self.center < to {
            if self.charges.is_some() && self.shift_center_charged(true) {
                continue;
            }
            let c = self.center;
            let (l, d, r) = self.dims3(c);
            let (q, rr, k) = qr_raw(self.sites[c].data(), l * d, r);
            self.sites[c] = ComplexTensor::from_parts(vec![l, d, k], q);
            let (_, d2, r2) = self.dims3(c + 1);
            let next = gemm(&rr, k, r, self.sites[c + 1].data(), d2 * r2);
            self.sites[c + 1] = ComplexTensor::from_parts(vec![k, d2, r2], next);
            self.center += 1;
        }
        while self.center > to {
            if self.charges.is_some() && self.shift_center_charged(false) {
                continue;
            }
            let c = self.center;
            let (l, d, r) = self.dims3(c);
            // A = R^dag Q^dag from the QR of A^dag.
            let adj = ComplexTensor::from_parts(vec![l, d * r], self.sites[c].data().to_vec())
                .adjoint()?;
            let (q, rr, k) = qr_raw(adj.data(), d * r, l);
            let qh = ComplexTensor::from_parts(vec![d * r, k], q).adjoint()?;
            self.sites[c] = qh.reshape(vec![k, d, r])?;
            let (l0, d0, _) = self.dims3(c - 1);
            // A_{c-1} R^dag, with R stored as k x l.
            let prev = gemm_adj_right(self.sites[c - 1].data(), l0 * d0, l, &rr, k);
            self.sites[c - 1] = ComplexTensor::from_parts(vec![l0, d0, k], prev);
            self.center -= 1;
        }
        Ok(())
    }

    /// One sector-wise QR step of the center. Returns false (and drops the
    /// charge labels) when the center tensor is not charge-conserving.
    fn shift_center_charged(&mut self, rightward: bool) -> bool {
        let c = self.center;
        let (l, d, r) = self.dims3(c);
        let Some(qp) = phys_charges(self.kinds[c], d) else {
            self.charges = None;
            return false;
        };
        let bonds = self.charges.as_ref().expect("tracked");
        if rightward {
            let rq = combine(&bonds[c], &qp, 1);
            let cq = bonds[c + 1].clone();
            let data = self.sites[c].data();
            if leaks(data, &rq, &cq) {
                self.charges = None;
                return false;
            }
            let (rows, cols) = (l * d, r);
            let mut q_full = Vec::new();
            let mut r_parts = Vec::new();
            let mut labels = Vec::new();
            for sec in sectors(&rq, &cq) {
                let sub = extract(data, cols, &sec.rows, &sec.cols);
                let (q, rr, k) = qr_raw(&sub, sec.rows.len(), sec.cols.len());
                q_full.push((sec.rows.clone(), q, k));
                r_parts.push((sec.cols, rr, k));
                labels.extend(std::iter::repeat_n(sec.charge, k));
            }
            let kk = labels.len().max(1);
            let mut qd = vec![ZERO; rows * kk];
            let mut rd = vec![ZERO; kk * cols];
            let mut off = 0;
            for ((rows_c, q, k), (cols_c, rr, _)) in q_full.iter().zip(&r_parts) {
                for (a, &row) in rows_c.iter().enumerate() {
                    for j in 0..*k {
                        qd[row * kk + off + j] = q[a * k + j];
                    }
                }
                for j in 0..*k {
                    for (b, &col) in cols_c.iter().enumerate() {
                        rd[(off + j) * cols + col] = rr[j * cols_c.len() + b];
                    }
                }
                off += k;
            }
            if labels.is_empty() {
                labels.push(0);
            }
            self.sites[c] = ComplexTensor::from_parts(vec![l, d, kk], qd);
            let (_, d2, r2) = self.dims3(c + 1);
            let next = match phys_charges(self.kinds[c + 1], d2) {
                Some(q2) => {
                    let bonds = self.charges.as_ref().expect("tracked");
                    let cq = combine(&q2, &bonds[c + 2], -1);
                    sector_gemm(&rd, &labels, &bonds[c + 1], self.sites[c + 1].data(), &cq)
                }
                None => gemm(&rd, kk, r, self.sites[c + 1].data(), d2 * r2),
            };
            self.sites[c + 1] = ComplexTensor::from_parts(vec![kk, d2, r2], next);
            self.charges.as_mut().expect("tracked")[c + 1] = labels;
            self.center += 1;
        } else {
            let rq = bonds[c].clone();
            let cq = combine(&qp, &bonds[c + 1], -1);
            let data = self.sites[c].data();
            if leaks(data, &rq, &cq) {
                self.charges = None;
                return false;
            }
            let cols = d * r;
            let mut parts = Vec::new();
            let mut labels = Vec::new();
            for sec in sectors(&rq, &cq) {
                // sub = R^dag Q^dag from the QR of sub^dag
                let sub = extract(data, cols, &sec.rows, &sec.cols);
                let (m, n) = (sec.rows.len(), sec.cols.len());
                let adj = adjoint_raw(&sub, m, n);
                let (q, rr, k) = qr_raw(&adj, n, m);
                labels.extend(std::iter::repeat_n(sec.charge, k));
                parts.push((sec, q, rr, k));
            }
            let kk = labels.len().max(1);
            let mut site = vec![ZERO; kk * cols];
            // R stored as kk x l, applied as A_{c-1} R^dag.
            let mut rd = vec![ZERO; kk * l];
            let mut off = 0;
            for (sec, q, rr, k) in &parts {
                let m = sec.rows.len();
                for (b, &col) in sec.cols.iter().enumerate() {
                    for j in 0..*k {
                        site[(off + j) * cols + col] = q[b * k + j].conj();
                    }
                }
                for j in 0..*k {
                    for (a, &row) in sec.rows.iter().enumerate() {
                        rd[(off + j) * l + row] = rr[j * m + a];
                    }
                }
                off += k;
            }
            if labels.is_empty() {
                labels.push(0);
            }
            self.sites[c] = ComplexTensor::from_parts(vec![kk, d, r], site);
            let (l0, d0, _) = self.dims3(c - 1);
            let prev = gemm_adj_right(self.sites[c - 1].data(), l0 * d0, l, &rd, kk);
            self.sites[c - 1] = ComplexTensor::from_parts(vec![l0, d0, kk], prev);
            self.charges.as_mut().expect("tracked")[c] = labels;
            self.center -= 1;
        }
        true
    }

    /// Contract sites `i..i+span` into `(left_bond, phys dims..., right_bond)`.
    fn block(&self, i: usize, span: usize) -> (Vec<C64>, usize, Vec<usize>, usize) {
        let (l, d0, r0) = self.dims3(i);
        let mut data = self.sites[i].data().to_vec();
        let mut dims = vec![d0];
        let mut rows = l * d0;
        let mut right = r0;
        for k in 1..span {
            let (_, d, r) = self.dims3(i + k);
            data = gemm(&data, rows, right, self.sites[i + k].data(), d * r);
            rows *= d;
            right = r;
            dims.push(d);
        }
        (data, l, dims, right)
    }

    /// Block-sparse form of sites `i..i+span`, if every site has labels.
    fn sector_block(&self, i: usize, span: usize) -> Option<SectorBlock> {
        let bonds = self.charges.as_ref()?;
        let phys = (i..i + span)
            .map(|k| phys_charges(self.kinds[k], self.phys_dim(k)))
            .collect::<Option<Vec<_>>>()?;
        let sites: Vec<&ComplexTensor> = self.sites[i..i + span].iter().collect();
        let labels: Vec<&[i32]> = bonds[i..=i + span].iter().map(|b| b.as_slice()).collect();
        Some(SectorBlock::build(&sites, phys, &labels))
    }

    /// Split a sector block over sites `i..` from the left; the center ends
    /// on the block's last site.
    fn split_sector_block(&mut self, i: usize, mut blk: SectorBlock, span: usize, policy: &TruncationPolicy) -> MpsResult<f64> {
        let mut w = 0.0;
        for k in 0..span - 1 {
            let (site, rem, labels, dw) = blk.split_first(policy, false)?;
            w += dw;
            self.sites[i + k] = site;
            self.charges.as_mut().expect("tracked")[i + k + 1] = labels;
            if k + 2 == span {
                self.sites[i + k + 1] = rem.into_site();
            } else {
                blk = rem.into_block();
            }
        }
        self.center = i + span - 1;
        self.cumulative_discarded += w;
        Ok(w)
    }

    /// Split a block back into `dims.len()` sites starting at `i`, leaving the
    /// center at the requested end. Returns the summed discarded weight.
    #[allow(clippy::too_many_arguments)]
    fn split_block(
        &mut self,
        i: usize,
        data: Vec<C64>,
        l: usize,
        dims: &[usize],
        r: usize,
        policy: &TruncationPolicy,
        side: Side,
    ) -> MpsResult<f64> {
        if self.charges.is_some() {
            if let Some(w) = self.split_block_charged(i, &data, l, dims, r, policy, side)? {
                self.cumulative_discarded += w;
                return Ok(w);
            }
        }
        let span = dims.len();
        let mut data = data;
        let mut discarded = 0.0;
        match side {
            Side::Right => {
                let mut left = l;
                for k in 0..span - 1 {
                    let rows = left * dims[k];
                    let cols = data.len() / rows;
                    let (u, s, mut vh, kk, w) = svd_raw(&data, rows, cols, policy)?;
                    discarded += w;
                    for (row, &sv) in vh.chunks_mut(cols).zip(&s) {
                        for z in row.iter_mut() {
                            *z *= sv;
                        }
                    }
                    self.sites[i + k] = ComplexTensor::from_parts(vec![left, dims[k], kk], u);
                    data = vh;
                    left = kk;
                }
                self.sites[i + span - 1] =
                    ComplexTensor::from_parts(vec![left, dims[span - 1], r], data);
                self.center = i + span - 1;
            }
            Side::Left => {
                let mut right = r;
                for k in (1..span).rev() {
                    let cols = dims[k] * right;
                    let rows = data.len() / cols;
                    let (mut u, s, vh, kk, w) = svd_raw(&data, rows, cols, policy)?;
                    discarded += w;
                    for row in u.chunks_mut(kk) {
                        for (z, &sv) in row.iter_mut().zip(&s) {
                            *z *= sv;
                        }
                    }
                    self.sites[i + k] = ComplexTensor::from_parts(vec![kk, dims[k], right], vh);
                    data = u;
                    right = kk;
                }
                self.sites[i] = ComplexTensor::from_parts(vec![l, dims[0], right], data);
                self.center = i;
            }
        }
        self.cumulative_discarded += discarded;
        Ok(discarded)
    }

    /// Sector-wise version of [`split_block`](Self::split_block). `None`
    /// means the block does not conserve charge and tracking is now off.
    #[allow(clippy::too_many_arguments)]
    fn split_block_charged(
        &mut self,
        i: usize,
        data: &[C64],
        l: usize,
        dims: &[usize],
        r: usize,
        policy: &TruncationPolicy,
        side: Side,
    ) -> MpsResult<Option<f64>> {
        let span = dims.len();
        let mut qp = Vec::with_capacity(span);
        for (k, &d) in dims.iter().enumerate() {
            match phys_charges(self.kinds[i + k], d) {
                Some(q) => qp.push(q),
                None => {
                    self.charges = None;
                    return Ok(None);
                }
            }
        }
        let bonds = self.charges.as_ref().expect("tracked");
        let (q_left, q_right) = (bonds[i].clone(), bonds[i + span].clone());
        // Check the whole block once, as a (left, phys) x (right) matrix.
        let mut rq = q_left.clone();
        for q in &qp {
            rq = combine(&rq, q, 1);
        }
        if leaks(data, &rq, &q_right) {
            self.charges = None;
            return Ok(None);
        }
        let mut data = data.to_vec();
        let mut discarded = 0.0;
        let mut new_sites = Vec::with_capacity(span);
        let mut new_bonds = Vec::with_capacity(span.saturating_sub(1));
        match side {
            Side::Right => {
                let mut left_q = q_left;
                for k in 0..span - 1 {
                    let row_q = combine(&left_q, &qp[k], 1);
                    let mut col_q = q_right.clone();
                    for q in qp[k + 1..].iter().rev() {
                        col_q = combine(q, &col_q, -1);
                    }
                    let f = sector_svd(&data, &row_q, &col_q, policy)?;
                    discarded += f.discarded;
                    let mut vh = f.vh;
                    let cols = col_q.len();
                    for (row, &sv) in vh.chunks_mut(cols).zip(&f.s) {
                        for z in row.iter_mut() {
                            *z *= sv;
                        }
                    }
                    new_sites.push(ComplexTensor::from_parts(vec![left_q.len(), dims[k], f.k], f.u));
                    new_bonds.push(f.labels.clone());
                    data = vh;
                    left_q = f.labels;
                }
                new_sites.push(ComplexTensor::from_parts(vec![left_q.len(), dims[span - 1], r], data));
                self.center = i + span - 1;
            }
            Side::Left => {
                let mut right_q = q_right;
                let mut rev_sites = Vec::with_capacity(span);
                for k in (1..span).rev() {
                    let col_q = combine(&qp[k], &right_q, -1);
                    let mut row_q = q_left.clone();
                    for q in &qp[..k] {
                        row_q = combine(&row_q, q, 1);
                    }
                    let f = sector_svd(&data, &row_q, &col_q, policy)?;
                    discarded += f.discarded;
                    let mut u = f.u;
                    for row in u.chunks_mut(f.k) {
                        for (z, &sv) in row.iter_mut().zip(&f.s) {
                            *z *= sv;
                        }
                    }
                    rev_sites.push(ComplexTensor::from_parts(vec![f.k, dims[k], right_q.len()], f.vh));
                    new_bonds.push(f.labels.clone());
                    data = u;
                    right_q = f.labels;
                }
                rev_sites.push(ComplexTensor::from_parts(vec![l, dims[0], right_q.len()], data));
                rev_sites.reverse();
                new_sites = rev_sites;
                new_bonds.reverse();
                self.center = i;
            }
        }
        for (k, t) in new_sites.into_iter().enumerate() {
            self.sites[i + k] = t;
        }
        let bonds = self.charges.as_mut().expect("tracked");
        for (k, b) in new_bonds.into_iter().enumerate() {
            bonds[i + k + 1] = b;
        }
        Ok(Some(discarded))
    }

    /// Left bond, fused physical and right bond charges of a block.
    fn block_charges(&self, i: usize, span: usize) -> Option<(Vec<i32>, Vec<i32>, Vec<i32>)> {
        let b = self.charges.as_ref()?;
        let mut local = vec![0];
        for k in i..i + span {
            local = combine(&local, &phys_charges(self.kinds[k], self.phys_dim(k))?, 1);
        }
        Some((b[i].clone(), local, b[i + span].clone()))
    }

    fn center_into(&mut self, i: usize, span: usize) -> MpsResult<()> {
        let target = self.center.clamp(i, i + span - 1);
        self.move_center(target)
    }

    /// Exchange sites `i` and `i + 1`, including their kinds. Returns the
    /// discarded weight of the re-split. The center ends on the site that was
    /// nearer to it before the call.
    pub fn swap_adjacent(&mut self, i: usize, policy: &TruncationPolicy) -> MpsResult<f64> {
        let side = if self.center <= i { Side::Left } else { Side::Right };
        self.swap_with_center(i, policy, side)
    }

    fn swap_with_center(&mut self, i: usize, policy: &TruncationPolicy, side: Side) -> MpsResult<f64> {
        self.check_site(i + 1)?;
        self.center_into(i, 2)?;
        if let Some(mut blk) = self.sector_block(i, 2) {
            blk.swap_sites();
            self.kinds.swap(i, i + 1);
            let (site, rem, labels, w) = blk.split_first(policy, side == Side::Left)?;
            self.sites[i] = site;
            self.sites[i + 1] = rem.into_site();
            self.charges.as_mut().expect("tracked")[i + 1] = labels;
            self.center = if side == Side::Left { i } else { i + 1 };
            self.cumulative_discarded += w;
            return Ok(w);
        }
        let (data, l, dims, r) = self.block(i, 2);
        let swapped = permute_data(&data, &[l, dims[0], dims[1], r], &[0, 2, 1, 3]);
        self.kinds.swap(i, i + 1);
        self.split_block(i, swapped, l, &[dims[1], dims[0]], r, policy, side)
    }

    /// Swap sites `i`, `i + 1` and leave the center on the left one.
    pub fn swap_adjacent_center_left(&mut self, i: usize, policy: &TruncationPolicy) -> MpsResult<f64> {
        self.swap_with_center(i, policy, Side::Left)
    }

    /// Swap sites `i`, `i + 1` and leave the center on the right one.
    pub fn swap_adjacent_center_right(&mut self, i: usize, policy: &TruncationPolicy) -> MpsResult<f64> {
        self.swap_with_center(i, policy, Side::Right)
    }

    /// Apply a unitary on sites `i..i+span`. The gate's row/column index
    /// enumerates the block's physical indices with site `i` most
    /// significant. The center ends on the last site of the block.
    pub fn apply_gate_adjacent(
        &mut self,
        gate: &ComplexTensor,
        i: usize,
        span: usize,
        policy: &TruncationPolicy,
    ) -> MpsResult<f64> {
        if !(2..=3).contains(&span) {
            return Err(MpsError::InvalidSpan(span));
        }
        self.check_site(i + span - 1)?;
        let dim: usize = (i..i + span).map(|k| self.phys_dim(k)).product();
        let (gr, gc) = gate.matrix_dims()?;
        if gr != dim || gc != dim {
            return Err(MpsError::PhysDimMismatch {
                site: i,
                expected: dim,
                actual: gr.max(gc),
            });
        }
        self.center_into(i, span)?;
        if let Some((_, local, _)) = self.block_charges(i, span) {
            if !leaks(gate.data(), &local, &local) {
                if let Some(mut blk) = self.sector_block(i, span) {
                    blk.apply(gate.data());
                    return self.split_sector_block(i, blk, span, policy);
                }
            }
        }
        let (data, l, dims, r) = self.block(i, span);
        let out = apply_local(gate.data(), &data, l, dim, r);
        self.split_block(i, out, l, &dims, r, policy, Side::Right)
    }

    /// Move the site at `from` to position `to` by adjacent swaps, recording
    /// the swap indices in `log`.
    fn move_site(
        &mut self,
        from: usize,
        to: usize,
        policy: &TruncationPolicy,
        log: &mut Vec<usize>,
    ) -> MpsResult<f64> {
        let mut w = 0.0;
        let mut p = from;
        while p > to {
            w += self.swap_with_center(p - 1, policy, Side::Left)?;
            log.push(p - 1);
            p -= 1;
        }
        while p < to {
            w += self.swap_with_center(p, policy, Side::Right)?;
            log.push(p);
            p += 1;
        }
        Ok(w)
    }

    /// Move the site at `from` to position `to` by adjacent swaps. Returns
    /// the swap positions in order (for [`undo_swaps`](Self::undo_swaps)) and
    /// the discarded weight.
    pub fn route_site(
        &mut self,
        from: usize,
        to: usize,
        policy: &TruncationPolicy,
    ) -> MpsResult<(Vec<usize>, f64)> {
        self.check_site(from)?;
        self.check_site(to)?;
        let mut log = Vec::new();
        let w = self.move_site(from, to, policy, &mut log)?;
        Ok((log, w))
    }

    /// Replay a swap log backwards, restoring the previous site order.
    pub fn undo_swaps(&mut self, log: &[usize], policy: &TruncationPolicy) -> MpsResult<f64> {
        let mut w = 0.0;
        for &i in log.iter().rev() {
            let side = if self.center <= i { Side::Right } else { Side::Left };
            w += self.swap_with_center(i, policy, side)?;
        }
        Ok(w)
    }

    /// Overwrite sites `first..first + dims.len()` with the block state
    /// `data` (physical indices row-major, first site most significant),
    /// decomposed by SVDs under `policy`. The bonds at both ends of the block
    /// must have extent one and the rest of the chain must be normalized, so
    /// the block carries the whole norm. The center ends on the block's last
    /// site.
    pub fn replace_block(
        &mut self,
        first: usize,
        dims: &[usize],
        data: Vec<C64>,
        policy: &TruncationPolicy,
    ) -> MpsResult<f64> {
        let span = dims.len();
        if span == 0 {
            return Err(MpsError::InvalidSpan(0));
        }
        self.check_site(first + span - 1)?;
        for (k, &d) in dims.iter().enumerate() {
            if self.phys_dim(first + k) != d {
                return Err(MpsError::PhysDimMismatch {
                    site: first + k,
                    expected: self.phys_dim(first + k),
                    actual: d,
                });
            }
        }
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(MpsError::LengthMismatch {
                what: "block amplitudes",
                expected,
                actual: data.len(),
            });
        }
        let bonds = self.bond_dims();
        if bonds[first] != 1 || bonds[first + span] != 1 {
            return Err(MpsError::Structure("block must be a product factor".into()));
        }
        if self.charges.is_some() {
            self.relabel_block_charge(first, dims, &data);
        }
        self.split_block(first, data, 1, dims, 1, policy, Side::Right)
    }

    /// Apply a three-site gate on arbitrary distinct sites: the targets are
    /// brought together by swaps (in gate order, starting at the leftmost
    /// target), the gate is applied, and the swaps are undone in reverse.
    pub fn apply_gate_routed(
        &mut self,
        gate: &ComplexTensor,
        targets: [usize; 3],
        policy: &TruncationPolicy,
    ) -> MpsResult<f64> {
        for &t in &targets {
            self.check_site(t)?;
        }
        if targets[0] == targets[1] || targets[0] == targets[2] || targets[1] == targets[2] {
            return Err(MpsError::TargetsNotDistinct(targets.to_vec()));
        }
        let base = *targets.iter().min().expect("three targets");
        let mut pos = targets;
        let mut log = Vec::new();
        let mut w = 0.0;
        for k in 0..3 {
            let (from, to) = (pos[k], base + k);
            if from != to {
                w += self.move_site(from, to, policy, &mut log)?;
                for p in pos.iter_mut().skip(k + 1) {
                    if *p >= to && *p < from {
                        *p += 1;
                    }
                }
                pos[k] = to;
            }
        }
        w += self.apply_gate_adjacent(gate, base, 3, policy)?;
        w += self.undo_swaps(&log, policy)?;
        Ok(w)
    }

    /// Insert a new site holding the normalized vector `v` at position `pos`
    /// (existing sites from `pos` on move right). The new site is a product
    /// factor, so the canonical form is preserved without any decomposition.
    pub fn insert_product_site(&mut self, pos: usize, v: &[C64], kind: SiteKind) -> MpsResult<()> {
        if pos > self.len() {
            return Err(MpsError::OutOfRange {
                index: pos,
                len: self.len(),
            });
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(MpsError::NotNormalized { site: pos, norm });
        }
        let chi = self.bond_dims()[pos];
        let d = v.len();
        let mut data = vec![ZERO; chi * d * chi];
        for a in 0..chi {
            for (s, &z) in v.iter().enumerate() {
                data[(a * d + s) * chi + a] = z;
            }
        }
        if let Some(bonds) = self.charges.as_mut() {
            let q = phys_charges(kind, d).and_then(|qp| {
                let mut it = v.iter().zip(&qp).filter(|(z, _)| z.norm_sqr() > 0.0).map(|(_, &q)| q);
                let first = it.next()?;
                it.all(|q| q == first).then_some(first)
            });
            match q {
                Some(q) => {
                    let mut b = bonds[pos].clone();
                    b.iter_mut().for_each(|x| *x += q);
                    bonds.insert(pos + 1, b);
                    for later in bonds.iter_mut().skip(pos + 2) {
                        later.iter_mut().for_each(|x| *x += q);
                    }
                }
                None => self.charges = None,
            }
        }
        self.sites.insert(pos, ComplexTensor::from_parts(vec![chi, d, chi], data));
        self.kinds.insert(pos, kind);
        if pos <= self.center {
            self.center += 1;
        }
        Ok(())
    }

    /// Schmidt coefficients across the bond between sites `bond` and
    /// `bond + 1`, normalized so their squares sum to one.
    pub fn bond_spectrum(&mut self, bond: usize) -> MpsResult<Vec<f64>> {
        self.check_site(bond + 1)?;
        let s = if self.center <= bond {
            self.move_center(bond)?;
            let (l, d, r) = self.dims3(bond);
            singular_values(self.sites[bond].data(), l * d, r)?
        } else {
            self.move_center(bond + 1)?;
            let (l, d, r) = self.dims3(bond + 1);
            singular_values(self.sites[bond + 1].data(), l, d * r)?
        };
        let total: f64 = s.iter().map(|x| x * x).sum();
        Ok(s.into_iter().map(|x| x / total.sqrt()).collect())
    }

    /// Von Neumann entropy (bits) of the bipartition at `bond`.
    pub fn bond_entropy(&mut self, bond: usize) -> MpsResult<f64> {
        let s = self.bond_spectrum(bond)?;
        Ok(entropy_from_probabilities(s.iter().map(|x| x * x)))
    }

    /// Normalized reduced density matrix of one site.
    pub fn site_density_matrix(&mut self, i: usize) -> MpsResult<ComplexTensor> {
        self.check_site(i)?;
        self.move_center(i)?;
        let (l, d, r) = self.dims3(i);
        let m = permute_data(self.sites[i].data(), &[l, d, r], &[1, 0, 2]);
        let mut rho = gemm_adj_right(&m, d, l * r, &m, d);
        let tr: f64 = (0..d).map(|k| rho[k * d + k].re).sum();
        for z in rho.iter_mut() {
            *z /= tr;
        }
        Ok(ComplexTensor::from_parts(vec![d, d], rho))
    }

    /// `<O>` at site `i`, normalized by the state norm.
    pub fn local_expectation(&mut self, i: usize, op: &ComplexTensor) -> MpsResult<C64> {
        self.check_site(i)?;
        let d = self.phys_dim(i);
        let (r, c) = op.matrix_dims()?;
        if r != d || c != d {
            return Err(MpsError::PhysDimMismatch {
                site: i,
                expected: d,
                actual: r.max(c),
            });
        }
        let rho = self.site_density_matrix(i)?;
        let mut acc = ZERO;
        for a in 0..d {
            for b in 0..d {
                acc += op.data()[a * d + b] * rho.data()[b * d + a];
            }
        }
        Ok(acc)
    }

    /// `<(L^dag)^m L^m>` at site `i` for a local operator `L`.
    pub fn cross_moment(&mut self, i: usize, lowering: &ComplexTensor, m: usize) -> MpsResult<C64> {
        let d = self.phys_dim(i);
        let mut p = ComplexTensor::identity(d)?;
        for _ in 0..m {
            p = lowering.matmul(&p)?;
        }
        let op = p.adjoint()?.matmul(&p)?;
        self.local_expectation(i, &op)
    }

    /// Overlap `<self|other>` of two chains with identical physical dims.
    pub fn inner(&self, other: &Self) -> MpsResult<C64> {
        if self.phys_dims() != other.phys_dims() {
            return Err(MpsError::Structure("physical dimensions differ".into()));
        }
        self.require_unit_boundaries()?;
        other.require_unit_boundaries()?;
        // env[a, b] over (bra bond a, ket bond b)
        let mut env = vec![ONE];
        let (mut ea, mut eb) = (1usize, 1usize);
        for i in 0..self.len() {
            let (_, d, ra) = self.dims3(i);
            let (_, _, rb) = other.dims3(i);
            // t[a, (s, rb)] = sum_b env[a, b] K[b, s, rb]
            let t = gemm(&env, ea, eb, other.sites[i].data(), d * rb);
            // new[ra, rb] = sum_{a, s} conj(B[a, s, ra]) t[a, s, rb]
            env = crate::tensor::gemm_adj_left(self.sites[i].data(), ea * d, ra, &t, rb);
            ea = ra;
            eb = rb;
        }
        Ok(env[0])
    }

    fn require_unit_boundaries(&self) -> MpsResult<()> {
        let b = self.bond_dims();
        if b[0] != 1 || b[b.len() - 1] != 1 {
            return Err(MpsError::Structure("boundary bonds must have extent 1".into()));
        }
        Ok(())
    }

    /// Full state vector, site 0 most significant.
    pub fn to_dense(&self) -> MpsResult<Vec<C64>> {
        self.require_unit_boundaries()?;
        let total: usize = self.phys_dims().iter().try_fold(1usize, |acc, &d| {
            acc.checked_mul(d).filter(|&x| x <= DENSE_LIMIT)
        }).ok_or(MpsError::TooLarge(usize::MAX))?;
        let (v, _, _, _) = self.block(0, self.len());
        debug_assert_eq!(v.len(), total);
        Ok(v)
    }

    /// Amplitude of a single basis configuration.
    pub fn amplitude(&self, config: &[usize]) -> MpsResult<C64> {
        if config.len() != self.len() {
            return Err(MpsError::LengthMismatch {
                what: "configuration",
                expected: self.len(),
                actual: config.len(),
            });
        }
        self.require_unit_boundaries()?;
        let mut row = vec![ONE];
        for (i, &s) in config.iter().enumerate() {
            let (l, d, r) = self.dims3(i);
            if s >= d {
                return Err(MpsError::PhysDimMismatch {
                    site: i,
                    expected: d,
                    actual: s,
                });
            }
            let data = self.sites[i].data();
            let mut next = vec![ZERO; r];
            for (a, &x) in row.iter().enumerate().take(l) {
                if x == ZERO {
                    continue;
                }
                let off = (a * d + s) * r;
                for b in 0..r {
                    next[b] += x * data[off + b];
                }
            }
            row = next;
        }
        Ok(row[0])
    }

    /// Copy of sites `lo..=hi` as a standalone chain whose boundary bonds may
    /// exceed one. Valid as a purification of the window's reduced state when
    /// the center lies inside the window.
    pub(crate) fn window(&self, lo: usize, hi: usize) -> Self {
        debug_assert!(lo <= self.center && self.center <= hi);
        Self {
            sites: self.sites[lo..=hi].to_vec(),
            kinds: self.kinds[lo..=hi].to_vec(),
            center: self.center - lo,
            cumulative_discarded: 0.0,
            charges: self.charges.as_ref().map(|b| b[lo..=hi + 1].to_vec()),
        }
    }

    /// Mutable site access; drops the charge labels.
    pub(crate) fn site_mut(&mut self, i: usize) -> &mut ComplexTensor {
        self.charges = None;
        &mut self.sites[i]
    }

    /// Whether bonds carry excitation-number labels.
    pub fn charges_tracked(&self) -> bool {
        self.charges.is_some()
    }

    /// Label every bond index with the excitation number to its left,
    /// inferred sweeping from the left boundary. Returns false (and leaves
    /// tracking off) when some bond index mixes charges, or a site has no
    /// known charge structure. Later SVDs and QRs then run sector-wise.
    pub fn track_charges(&mut self) -> bool {
        self.charges = self.infer_charges();
        self.charges.is_some()
    }

    fn infer_charges(&self) -> Option<Vec<Vec<i32>>> {
        let mut bonds = Vec::with_capacity(self.len() + 1);
        if self.sites[0].shape()[0] != 1 {
            return None;
        }
        bonds.push(vec![0]);
        for i in 0..self.len() {
            let (l, d, r) = self.dims3(i);
            let qp = phys_charges(self.kinds[i], d)?;
            let rq = combine(&bonds[i], &qp, 1);
            let data = self.sites[i].data();
            let max = data.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let thr = max * 1e-12;
            let mut next = Vec::with_capacity(r);
            for b in 0..r {
                let mut q = None;
                for row in 0..l * d {
                    if data[row * r + b].norm() > thr {
                        match q {
                            None => q = Some(rq[row]),
                            Some(x) if x != rq[row] => return None,
                            _ => {}
                        }
                    }
                }
                next.push(q.unwrap_or(0));
            }
            bonds.push(next);
        }
        Some(bonds)
    }

    /// Before overwriting a product-factor block: relabel its right boundary
    /// (and everything beyond) with the block's total charge.
    fn relabel_block_charge(&mut self, first: usize, dims: &[usize], data: &[C64]) {
        let mut q = vec![0];
        for (k, &d) in dims.iter().enumerate() {
            match phys_charges(self.kinds[first + k], d) {
                Some(p) => q = combine(&q, &p, 1),
                None => {
                    self.charges = None;
                    return;
                }
            }
        }
        let max = data.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut charges = data.iter().zip(&q).filter(|(z, _)| z.norm() > max * 1e-12).map(|(_, &c)| c);
        let Some(total) = charges.next() else { return };
        if !charges.all(|c| c == total) {
            self.charges = None;
            return;
        }
        let span = dims.len();
        let bonds = self.charges.as_mut().expect("tracked");
        let delta = bonds[first][0] + total - bonds[first + span][0];
        for b in bonds.iter_mut().skip(first + span) {
            b.iter_mut().for_each(|x| *x += delta);
        }
    }

    /// Reduced density matrix of all emitters, ordered 1..N with emitter 1
    /// the most significant bit. Emitter sites are swapped together on a copy
    /// of the smallest window that holds them and the center; `self` is only
    /// re-centered.
    pub fn emitter_density_matrix(
        &mut self,
        policy: &TruncationPolicy,
    ) -> MpsResult<EmitterDensityMatrix> {
        let positions: Vec<usize> = (0..self.len()).filter(|&i| self.kinds[i].is_emitter()).collect();
        if positions.is_empty() {
            return Err(MpsError::Structure("no emitter sites".into()));
        }
        let lo = positions[0].min(self.center);
        let hi = positions[positions.len() - 1].max(self.center);
        let mut w = self.window(lo, hi);
        let mut pos: Vec<usize> = positions.iter().map(|p| p - lo).collect();
        // Pull each emitter site left until it touches its predecessor.
        let mut log = Vec::new();
        for k in 1..pos.len() {
            let target = pos[k - 1] + 1;
            if pos[k] != target {
                w.move_site(pos[k], target, policy, &mut log)?;
                pos[k] = target;
            }
        }
        let first = pos[0];
        let span = pos.len();
        w.center_into(first, span)?;
        let (data, l, dims, r) = w.block(first, span);
        let dtot: usize = dims.iter().product();
        let m = permute_data(&data, &[l, dtot, r], &[1, 0, 2]);
        let block_rho = gemm_adj_right(&m, dtot, l * r, &m, dtot);

        let pairs: Vec<usize> = (first..first + span)
            .map(|i| match w.kinds[i] {
                SiteKind::EmitterPair { pair } => pair,
                SiteKind::PhotonBin { .. } => unreachable!("emitter block holds a photon bin"),
            })
            .collect();
        let n = 2 * span;
        // Map each block basis index to its emitter-ordered index; padded
        // levels beyond the qubit pair are dropped.
        let mut map = Vec::with_capacity(dtot);
        for idx in 0..dtot {
            let mut rem = idx;
            let mut locals = vec![0usize; span];
            for k in (0..span).rev() {
                locals[k] = rem % dims[k];
                rem /= dims[k];
            }
            if locals.iter().any(|&s| s >= 4) {
                map.push(None);
                continue;
            }
            map.push(pair_config_to_emitter_index(&pairs, &locals, n));
        }
        let dim = 1usize << n;
        let mut rho = vec![ZERO; dim * dim];
        for a in 0..dtot {
            let Some(ea) = map[a] else { continue };
            for b in 0..dtot {
                let Some(eb) = map[b] else { continue };
                rho[ea * dim + eb] = block_rho[a * dtot + b];
            }
        }
        let tr: f64 = (0..dim).map(|k| rho[k * dim + k].re).sum();
        for z in rho.iter_mut() {
            *z /= tr;
        }
        Ok(EmitterDensityMatrix::new(n, ComplexTensor::from_parts(vec![dim, dim], rho))?)
    }

    /// Serialize to the binary checkpoint format (little-endian).
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> MpsResult<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for k in &self.kinds {
            let (tag, idx): (u8, i64) = match *k {
                SiteKind::EmitterPair { pair } => (0, pair as i64),
                SiteKind::PhotonBin { bin } => (1, bin),
            };
            w.write_all(&[tag])?;
            w.write_all(&idx.to_le_bytes())?;
        }
        for i in 0..self.len() {
            w.write_all(&(self.phys_dim(i) as u64).to_le_bytes())?;
        }
        w.write_all(&(self.center as u64).to_le_bytes())?;
        w.write_all(&self.cumulative_discarded.to_le_bytes())?;
        for s in &self.sites {
            for &e in s.shape() {
                w.write_all(&(e as u64).to_le_bytes())?;
            }
            for z in s.data() {
                w.write_all(&z.re.to_le_bytes())?;
                w.write_all(&z.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Read a checkpoint written by [`write_checkpoint`](Self::write_checkpoint).
    pub fn read_checkpoint<R: Read>(mut r: R) -> MpsResult<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(MpsError::Checkpoint("bad magic".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(MpsError::Checkpoint(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(read_array(&mut r)?) as usize;
        if n == 0 || n > 1 << 32 {
            return Err(MpsError::Checkpoint(format!("implausible site count {n}")));
        }
        let mut kinds = Vec::with_capacity(n);
        for _ in 0..n {
            let [tag] = read_array::<_, 1>(&mut r)?;
            let idx = i64::from_le_bytes(read_array(&mut r)?);
            kinds.push(match tag {
                0 if idx >= 1 => SiteKind::EmitterPair { pair: idx as usize },
                1 => SiteKind::PhotonBin { bin: idx },
                _ => return Err(MpsError::Checkpoint(format!("bad site kind tag {tag}"))),
            });
        }
        let mut phys = Vec::with_capacity(n);
        for _ in 0..n {
            phys.push(u64::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let center = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let cumulative_discarded = f64::from_le_bytes(read_array(&mut r)?);
        let mut sites = Vec::with_capacity(n);
        for (i, &d) in phys.iter().enumerate() {
            let mut shape = [0usize; 3];
            for e in shape.iter_mut() {
                *e = u64::from_le_bytes(read_array(&mut r)?) as usize;
            }
            if shape[1] != d {
                return Err(MpsError::Checkpoint(format!("site {i}: physical extent mismatch")));
            }
            let len = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e))
                .filter(|&l| l <= DENSE_LIMIT)
                .ok_or_else(|| MpsError::Checkpoint(format!("site {i}: implausible extents")))?;
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let re = f64::from_le_bytes(read_array(&mut r)?);
                let im = f64::from_le_bytes(read_array(&mut r)?);
                data.push(C64::new(re, im));
            }
            sites.push(ComplexTensor::new(shape.to_vec(), data)?);
        }
        Self::from_sites(sites, kinds, center, cumulative_discarded)
    }
}

/// `a (m x k) * b (k x n)` when both factors are charge-block-diagonal:
/// only entries with `rq[i] == kq[p] == cq[j]` contribute.
fn sector_gemm(a: &[C64], rq: &[i32], kq: &[i32], b: &[C64], cq: &[i32]) -> Vec<C64> {
    let (m, k, n) = (rq.len(), kq.len(), cq.len());
    let mut out = vec![ZERO; m * n];
    let mut map: std::collections::BTreeMap<i32, (Vec<usize>, Vec<usize>, Vec<usize>)> = Default::default();
    for (i, &q) in rq.iter().enumerate() {
        map.entry(q).or_default().0.push(i);
    }
    for (p, &q) in kq.iter().enumerate() {
        if let Some(e) = map.get_mut(&q) {
            e.1.push(p);
        }
    }
    for (j, &q) in cq.iter().enumerate() {
        if let Some(e) = map.get_mut(&q) {
            e.2.push(j);
        }
    }
    for (rows, inner, cols) in map.values() {
        if rows.is_empty() || inner.is_empty() || cols.is_empty() {
            continue;
        }
        let sa = extract(a, k, rows, inner);
        let sb = extract(b, n, inner, cols);
        let prod = gemm(&sa, rows.len(), inner.len(), &sb, cols.len());
        for (x, &i) in rows.iter().enumerate() {
            let dst = &mut out[i * n..(i + 1) * n];
            for (y, &j) in cols.iter().enumerate() {
                dst[j] = prod[x * cols.len() + y];
            }
        }
    }
    out
}

/// Relative off-sector weight above which a tensor counts as breaking charge
/// conservation.
const CHARGE_LEAK: f64 = 1e-20;

/// Excitation number of each local basis state, if the site has a known
/// charge structure: emitter pairs count excited emitters (padding levels
/// count zero), photon bins count `n_R + n_L`.
pub fn phys_charges(kind: SiteKind, d: usize) -> Option<Vec<i32>> {
    match kind {
        SiteKind::EmitterPair { .. } => {
            if d < 4 {
                return None;
            }
            Some((0..d).map(|s| if s < 4 { (s as u32).count_ones() as i32 } else { 0 }).collect())
        }
        SiteKind::PhotonBin { .. } => {
            let n1 = (d as f64).sqrt().round() as usize;
            if n1 * n1 != d {
                return None;
            }
            Some((0..d).map(|s| (s / n1 + s % n1) as i32).collect())
        }
    }
}

/// Charges of the fused index `(x, y)`, `x` major: `a[x] + b[y]` for
/// `sign > 0`, `b[y] - a[x]` otherwise.
fn combine(a: &[i32], b: &[i32], sign: i32) -> Vec<i32> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &x in a {
        for &y in b {
            out.push(if sign > 0 { x + y } else { y - x });
        }
    }
    out
}

struct Sector {
    charge: i32,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

/// Charge sectors with both rows and columns, in ascending charge order.
fn sectors(rq: &[i32], cq: &[i32]) -> Vec<Sector> {
    let mut map: std::collections::BTreeMap<i32, (Vec<usize>, Vec<usize>)> = Default::default();
    for (i, &q) in rq.iter().enumerate() {
        map.entry(q).or_default().0.push(i);
    }
    for (j, &q) in cq.iter().enumerate() {
        if let Some(e) = map.get_mut(&q) {
            e.1.push(j);
        }
    }
    map.into_iter()
        .filter(|(_, (r, c))| !r.is_empty() && !c.is_empty())
        .map(|(charge, (rows, cols))| Sector { charge, rows, cols })
        .collect()
}

fn extract(data: &[C64], ncols: usize, rows: &[usize], cols: &[usize]) -> Vec<C64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &i in rows {
        let row = &data[i * ncols..(i + 1) * ncols];
        out.extend(cols.iter().map(|&j| row[j]));
    }
    out
}

fn adjoint_raw(data: &[C64], rows: usize, cols: usize) -> Vec<C64> {
    let mut out = vec![ZERO; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = data[i * cols + j].conj();
        }
    }
    out
}

/// True when `data` has weight outside the charge sectors.
fn leaks(data: &[C64], rq: &[i32], cq: &[i32]) -> bool {
    let (inside, outside) = sector_weights(data, rq, cq);
    let leak = outside > CHARGE_LEAK * (inside + outside);
    if leak {
        log::debug!("charge leak {outside:.3e} of {:.3e}, tracking off", inside + outside);
    }
    leak
}

/// Squared weight inside and outside the charge sectors.
fn sector_weights(data: &[C64], rq: &[i32], cq: &[i32]) -> (f64, f64) {
    let ncols = cq.len();
    let (mut inside, mut outside) = (0.0, 0.0);
    for (i, &q) in rq.iter().enumerate() {
        for (j, z) in data[i * ncols..(i + 1) * ncols].iter().enumerate() {
            if cq[j] == q {
                inside += z.norm_sqr();
            } else {
                outside += z.norm_sqr();
            }
        }
    }
    (inside, outside)
}

struct SectorSvd {
    u: Vec<C64>,
    s: Vec<f64>,
    vh: Vec<C64>,
    k: usize,
    labels: Vec<i32>,
    discarded: f64,
}

/// Truncated SVD of a charge-conserving matrix, one dense SVD per sector.
/// The kept values are the globally largest, in non-increasing order.
fn sector_svd(
    data: &[C64],
    rq: &[i32],
    cq: &[i32],
    policy: &TruncationPolicy,
) -> MpsResult<SectorSvd> {
    let (rows, cols) = (rq.len(), cq.len());
    let exact = TruncationPolicy::exact();
    let mut parts = Vec::new();
    let mut all = Vec::new();
    for sec in sectors(rq, cq) {
        let sub = extract(data, cols, &sec.rows, &sec.cols);
        let (u, s, vh, k, _) = svd_raw(&sub, sec.rows.len(), sec.cols.len(), &exact)?;
        for (j, &sv) in s.iter().enumerate() {
            all.push((sv, parts.len(), j));
        }
        parts.push((sec, u, vh, k));
    }
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let spectrum: Vec<f64> = all.iter().map(|a| a.0).collect();
    let (keep, discarded) = if spectrum.is_empty() {
        (0, 0.0)
    } else {
        policy.retained(&spectrum, rows, cols)
    };
    let k = keep.max(1);
    let mut u = vec![ZERO; rows * k];
    let mut vh = vec![ZERO; k * cols];
    let mut s = vec![0.0; k];
    let mut labels = vec![0; k];
    for (c, &(sv, p, j)) in all.iter().take(keep).enumerate() {
        let (sec, su, svh, sk) = &parts[p];
        s[c] = sv;
        labels[c] = sec.charge;
        for (a, &row) in sec.rows.iter().enumerate() {
            u[row * k + c] = su[a * sk + j];
        }
        let n = sec.cols.len();
        for (b, &col) in sec.cols.iter().enumerate() {
            vh[c * cols + col] = svh[j * n + b];
        }
    }
    Ok(SectorSvd { u, s, vh, k, labels, discarded })
}

fn read_array<R: Read, const K: usize>(r: &mut R) -> std::io::Result<[u8; K]> {
    let mut b = [0u8; K];
    r.read_exact(&mut b)?;
    Ok(b)
}

/// Apply a `dim x dim` operator to the middle index of a `(l, dim, r)` block.
pub(crate) fn apply_local(op: &[C64], block: &[C64], l: usize, dim: usize, r: usize) -> Vec<C64> {
    if l == 1 {
        return gemm(op, dim, dim, block, r);
    }
    let moved = permute_data(block, &[l, dim, r], &[1, 0, 2]);
    let out = gemm(op, dim, dim, &moved, l * r);
    permute_data(&out, &[dim, l, r], &[1, 0, 2])
}

fn singular_values(data: &[C64], rows: usize, cols: usize) -> MpsResult<Vec<f64>> {
    let view = faer::MatRef::from_row_major_slice(data, rows, cols);
    view.singular_values().map_err(|_| {
        MpsError::Tensor(TensorError::SvdFailed {
            rows,
            cols,
            norm: data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            max_abs: data.iter().map(|z| z.norm()).fold(0.0, f64::max),
        })
    })
}

/// `-sum p log2 p` over the positive entries.
pub fn entropy_from_probabilities<I: IntoIterator<Item = f64>>(p: I) -> f64 {
    p.into_iter()
        .filter(|&x| x > 1e-300)
        .map(|x| -x * x.log2())
        .sum::<f64>()
        .max(0.0)
}
