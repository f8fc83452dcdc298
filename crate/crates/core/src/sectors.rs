//! Block-sparse multi-site blocks for charge-tracked chains.
//!
//! A block `theta[a, s_1..s_k, b]` of a charge-conserving state is nonzero
//! only where `q(a) + sum q(s_i) = q(b)`. It is stored as one dense slab
//! `[tuple, a, b]` per (left charge, local charge) pair, so the huge dense
//! block is never formed.

use std::collections::BTreeMap;

use crate::tensor::{gemm, svd_raw, ComplexTensor, TensorResult, TruncationPolicy, C64, ZERO};

/// Bond indices grouped by charge.
pub(crate) type ChargeIndex = BTreeMap<i32, Vec<usize>>;

pub(crate) fn index_by_charge(q: &[i32]) -> ChargeIndex {
    let mut m = ChargeIndex::new();
    for (i, &c) in q.iter().enumerate() {
        m.entry(c).or_default().push(i);
    }
    m
}

/// Fused local basis of several sites, first site most significant.
struct LocalBasis {
    dims: Vec<usize>,
    phys: Vec<Vec<i32>>,
    charge: Vec<i32>,
    /// Position of each fused index inside its charge group.
    slot: Vec<usize>,
    by_charge: BTreeMap<i32, Vec<usize>>,
}

impl LocalBasis {
    fn new(dims: Vec<usize>, phys: Vec<Vec<i32>>) -> Self {
        let total: usize = dims.iter().product();
        let mut charge = Vec::with_capacity(total);
        for f in 0..total {
            let mut rem = f;
            let mut q = 0;
            for k in (0..dims.len()).rev() {
                q += phys[k][rem % dims[k]];
                rem /= dims[k];
            }
            charge.push(q);
        }
        let mut by_charge: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        let mut slot = vec![0; total];
        for (f, &q) in charge.iter().enumerate() {
            let g = by_charge.entry(q).or_default();
            slot[f] = g.len();
            g.push(f);
        }
        Self {
            dims,
            phys,
            charge,
            slot,
            by_charge,
        }
    }
}

struct Group {
    /// `[tuple slot, a, b]` over the group's rows and columns.
    data: Vec<C64>,
    rows: usize,
    cols: usize,
}

pub(crate) struct SectorBlock {
    basis: LocalBasis,
    left: Vec<i32>,
    right: Vec<i32>,
    left_idx: ChargeIndex,
    right_idx: ChargeIndex,
    groups: BTreeMap<(i32, i32), Group>,
}

/// Copy `t[rows, s, cols]` of a `(l, d, r)` tensor into a dense matrix.
fn gather(t: &[C64], d: usize, r: usize, rows: &[usize], s: usize, cols: &[usize]) -> Vec<C64> {
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for &a in rows {
        let base = (a * d + s) * r;
        out.extend(cols.iter().map(|&b| t[base + b]));
    }
    out
}

impl SectorBlock {
    /// Contract consecutive charge-labelled sites. `bonds[k]` labels the left
    /// bond of `sites[k]`; `bonds[span]` the right bond of the last site.
    pub(crate) fn build(sites: &[&ComplexTensor], phys: Vec<Vec<i32>>, bonds: &[&[i32]]) -> Self {
        let span = sites.len();
        let dims: Vec<usize> = sites.iter().map(|t| t.shape()[1]).collect();
        let basis = LocalBasis::new(dims.clone(), phys);
        let mut idx: Vec<ChargeIndex> = bonds.iter().map(|b| index_by_charge(b)).collect();
        let mut groups = BTreeMap::new();
        for (&qa, rows) in &idx[0] {
            // (fused prefix, charge at the open bond, |rows| x |open| matrix)
            let mut prefixes: Vec<(usize, i32, Vec<C64>)> = Vec::new();
            let (d0, r0) = (dims[0], sites[0].shape()[2]);
            for s in 0..d0 {
                let c = qa + basis.phys[0][s];
                if let Some(cols) = idx[1].get(&c) {
                    prefixes.push((s, c, gather(sites[0].data(), d0, r0, rows, s, cols)));
                }
            }
            for k in 1..span {
                let (dk, rk) = (dims[k], sites[k].shape()[2]);
                let mut next = Vec::new();
                for (f, c, m) in &prefixes {
                    let inner = &idx[k][c];
                    if m.iter().all(|z| *z == ZERO) {
                        continue;
                    }
                    for s in 0..dk {
                        let c2 = c + basis.phys[k][s];
                        let Some(cols) = idx[k + 1].get(&c2) else { continue };
                        let b = gather(sites[k].data(), dk, rk, inner, s, cols);
                        let prod = gemm(m, rows.len(), inner.len(), &b, cols.len());
                        next.push((f * dk + s, c2, prod));
                    }
                }
                prefixes = next;
            }
            for (f, c, m) in prefixes {
                let q = c - qa;
                let cols = idx[span][&c].len();
                let n = basis.by_charge[&q].len();
                let g = groups.entry((qa, q)).or_insert_with(|| Group {
                    data: vec![ZERO; n * rows.len() * cols],
                    rows: rows.len(),
                    cols,
                });
                let off = basis.slot[f] * g.rows * g.cols;
                g.data[off..off + m.len()].copy_from_slice(&m);
            }
        }
        Self {
            basis,
            left: bonds[0].to_vec(),
            right: bonds[span].to_vec(),
            left_idx: idx.swap_remove(0),
            right_idx: index_by_charge(bonds[span]),
            groups,
        }
    }

    /// Apply a charge-conserving operator on the fused local index.
    pub(crate) fn apply(&mut self, op: &[C64]) {
        let dim = self.basis.charge.len();
        let mut blocks: BTreeMap<i32, Vec<C64>> = BTreeMap::new();
        for (&(_, q), g) in self.groups.iter_mut() {
            let tuples = &self.basis.by_charge[&q];
            let u = blocks.entry(q).or_insert_with(|| {
                let mut u = Vec::with_capacity(tuples.len() * tuples.len());
                for &t in tuples {
                    u.extend(tuples.iter().map(|&s| op[t * dim + s]));
                }
                u
            });
            let n = tuples.len();
            g.data = gemm(u, n, n, &g.data, g.rows * g.cols);
        }
    }

    /// Exchange the two sites of a two-site block.
    pub(crate) fn swap_sites(&mut self) {
        debug_assert_eq!(self.basis.dims.len(), 2);
        let (d0, d1) = (self.basis.dims[0], self.basis.dims[1]);
        let phys = vec![self.basis.phys[1].clone(), self.basis.phys[0].clone()];
        let basis = LocalBasis::new(vec![d1, d0], phys);
        for (&(_, q), g) in self.groups.iter_mut() {
            let size = g.rows * g.cols;
            let mut data = vec![ZERO; g.data.len()];
            for &f in &self.basis.by_charge[&q] {
                let (s0, s1) = (f / d1, f % d1);
                let to = basis.slot[s1 * d0 + s0] * size;
                let from = self.basis.slot[f] * size;
                data[to..to + size].copy_from_slice(&g.data[from..from + size]);
            }
            g.data = data;
        }
        self.basis = basis;
    }

    /// Split off the first site by sector-wise SVDs. Returns the new site
    /// tensor `(l, d_1, k)`, the remainder, the new bond labels and the
    /// discarded weight. The singular values go left when `absorb_left`.
    pub(crate) fn split_first(
        &self,
        policy: &TruncationPolicy,
        absorb_left: bool,
    ) -> TensorResult<(ComplexTensor, Remainder, Vec<i32>, f64)> {
        let dims = &self.basis.dims;
        let d1 = dims[0];
        let rest_dims = dims[1..].to_vec();
        let rest_phys = self.basis.phys[1..].to_vec();
        let rest = LocalBasis::new(rest_dims, rest_phys);
        let nrest = rest.charge.len();
        let l = self.left.len();
        let r = self.right.len();

        // Sector c: rows (qa, t1) with qa + q(t1) = c, columns t_rest whose
        // right charge c + q(t_rest) exists.
        struct Sector {
            row_blocks: Vec<(i32, usize, usize)>, // (qa, t1, offset)
            col_blocks: Vec<(usize, usize)>,      // (t_rest, offset)
            rows: usize,
            cols: usize,
        }
        let mut sectors: BTreeMap<i32, Sector> = BTreeMap::new();
        for (&qa, ia) in &self.left_idx {
            for t1 in 0..d1 {
                let c = qa + self.basis.phys[0][t1];
                let sec = sectors.entry(c).or_insert_with(|| Sector {
                    row_blocks: Vec::new(),
                    col_blocks: Vec::new(),
                    rows: 0,
                    cols: 0,
                });
                sec.row_blocks.push((qa, t1, sec.rows));
                sec.rows += ia.len();
            }
        }
        for (&c, sec) in sectors.iter_mut() {
            for tr in 0..nrest {
                if let Some(jb) = self.right_idx.get(&(c + rest.charge[tr])) {
                    sec.col_blocks.push((tr, sec.cols));
                    sec.cols += jb.len();
                }
            }
        }
        let exact = TruncationPolicy::exact();
        let mut parts = Vec::new();
        let mut spectrum = Vec::new();
        for (&c, sec) in &sectors {
            if sec.rows == 0 || sec.cols == 0 {
                continue;
            }
            let mut m = vec![ZERO; sec.rows * sec.cols];
            let mut any = false;
            for &(qa, t1, ro) in &sec.row_blocks {
                for &(tr, co) in &sec.col_blocks {
                    let q = self.basis.phys[0][t1] + rest.charge[tr];
                    let Some(g) = self.groups.get(&(qa, q)) else { continue };
                    let f = t1 * nrest + tr;
                    let size = g.rows * g.cols;
                    let src = &g.data[self.basis.slot[f] * size..][..size];
                    for a in 0..g.rows {
                        let dst = (ro + a) * sec.cols + co;
                        m[dst..dst + g.cols].copy_from_slice(&src[a * g.cols..(a + 1) * g.cols]);
                    }
                    any = true;
                }
            }
            if !any {
                continue;
            }
            let (u, s, vh, k, _) = svd_raw(&m, sec.rows, sec.cols, &exact)?;
            for (j, &sv) in s.iter().enumerate() {
                spectrum.push((sv, parts.len(), j));
            }
            parts.push((c, u, s, vh, k));
        }
        spectrum.sort_by(|a, b| b.0.total_cmp(&a.0));
        let values: Vec<f64> = spectrum.iter().map(|x| x.0).collect();
        let (keep, discarded) = if values.is_empty() {
            (0, 0.0)
        } else {
            policy.retained(&values, l * d1, nrest * r)
        };
        let mut kept = vec![0usize; parts.len()];
        for x in spectrum.iter().take(keep) {
            kept[x.1] += 1;
        }
        let total: usize = kept.iter().sum();
        let kk = total.max(1);
        let mut labels = Vec::with_capacity(kk);
        let mut site = vec![ZERO; l * d1 * kk];
        let mut rem_groups: BTreeMap<i32, (Vec<usize>, Vec<C64>, usize)> = BTreeMap::new();
        let mut off = 0;
        for (p, (c, u, s, vh, k)) in parts.iter().enumerate() {
            let kc = kept[p];
            if kc == 0 {
                continue;
            }
            let sec = &sectors[c];
            for &(qa, t1, ro) in &sec.row_blocks {
                for (a_pos, &a) in self.left_idx[&qa].iter().enumerate() {
                    let row = &u[(ro + a_pos) * k..];
                    let dst = (a * d1 + t1) * kk + off;
                    for j in 0..kc {
                        let sv = if absorb_left { s[j] } else { 1.0 };
                        site[dst + j] = row[j] * sv;
                    }
                }
            }
            let idx: Vec<usize> = (off..off + kc).collect();
            rem_groups.insert(*c, (idx, Vec::new(), 0));
            let entry = rem_groups.get_mut(c).expect("inserted");
            // remainder rows m (kc of them) over columns of the sector
            let mut rows = Vec::with_capacity(kc * sec.cols);
            for j in 0..kc {
                let sv = if absorb_left { 1.0 } else { s[j] };
                rows.extend(vh[j * sec.cols..(j + 1) * sec.cols].iter().map(|z| z * sv));
            }
            entry.1 = rows;
            entry.2 = sec.cols;
            labels.extend(std::iter::repeat_n(*c, kc));
            off += kc;
        }
        if labels.is_empty() {
            labels.push(0);
        }
        let site = ComplexTensor::from_parts(vec![l, d1, kk], site);
        let rem = Remainder {
            basis: rest,
            labels: labels.clone(),
            right: self.right.clone(),
            right_idx: self.right_idx.clone(),
            sectors: sectors
                .into_iter()
                .filter_map(|(c, sec)| {
                    rem_groups.remove(&c).map(|(idx, data, cols)| RemSector {
                        charge: c,
                        m_idx: idx,
                        col_blocks: sec.col_blocks,
                        data,
                        cols,
                    })
                })
                .collect(),
        };
        Ok((site, rem, labels, discarded))
    }
}

struct RemSector {
    charge: i32,
    m_idx: Vec<usize>,
    col_blocks: Vec<(usize, usize)>,
    /// `[m, column]` with columns laid out as in `col_blocks`.
    data: Vec<C64>,
    cols: usize,
}

/// What is left after splitting off one site: `theta[m, t_rest, b]`.
pub(crate) struct Remainder {
    basis: LocalBasis,
    labels: Vec<i32>,
    right: Vec<i32>,
    right_idx: ChargeIndex,
    sectors: Vec<RemSector>,
}

impl Remainder {
    /// Dense `(k, d, r)` tensor; only valid for a single remaining site.
    pub(crate) fn into_site(self) -> ComplexTensor {
        debug_assert_eq!(self.basis.dims.len(), 1);
        let (k, d, r) = (self.labels.len(), self.basis.dims[0], self.right.len());
        let mut out = vec![ZERO; k * d * r];
        for sec in &self.sectors {
            for &(t, co) in &sec.col_blocks {
                let jb = &self.right_idx[&(sec.charge + self.basis.charge[t])];
                for (mp, &m) in sec.m_idx.iter().enumerate() {
                    let src = &sec.data[mp * sec.cols + co..][..jb.len()];
                    let base = (m * d + t) * r;
                    for (z, &b) in src.iter().zip(jb) {
                        out[base + b] = *z;
                    }
                }
            }
        }
        ComplexTensor::from_parts(vec![k, d, r], out)
    }

    /// Re-express as a block over the remaining sites.
    pub(crate) fn into_block(self) -> SectorBlock {
        let left_idx = index_by_charge(&self.labels);
        let mut groups: BTreeMap<(i32, i32), Group> = BTreeMap::new();
        for sec in &self.sectors {
            let rows = sec.m_idx.len();
            for &(t, co) in &sec.col_blocks {
                let q = self.basis.charge[t];
                let jb = &self.right_idx[&(sec.charge + q)];
                let n = self.basis.by_charge[&q].len();
                let g = groups.entry((sec.charge, q)).or_insert_with(|| Group {
                    data: vec![ZERO; n * rows * jb.len()],
                    rows,
                    cols: jb.len(),
                });
                let base = self.basis.slot[t] * rows * g.cols;
                for mp in 0..rows {
                    let src = &sec.data[mp * sec.cols + co..][..g.cols];
                    g.data[base + mp * g.cols..base + (mp + 1) * g.cols].copy_from_slice(src);
                }
            }
        }
        // The new bond's indices are contiguous per charge and in label
        // order, matching `m_idx`.
        debug_assert!(self
            .sectors
            .iter()
            .all(|s| left_idx.get(&s.charge).is_some_and(|v| *v == s.m_idx)));
        SectorBlock {
            basis: self.basis,
            left: self.labels,
            right: self.right,
            left_idx,
            right_idx: self.right_idx,
            groups,
        }
    }
}
