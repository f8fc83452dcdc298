//! Independent Fock-space oracle for the delayed collision circuit.
//!
//! Every emitter and every (bin, direction) register is its own mode; the
//! state is a sparse map from occupation vectors to amplitudes. A step
//! applies `exp(-i sum_k O_k)` with one generator per emitter, built directly
//! from the emission rule (emitter `k` feeds the right-mover of bin
//! `n - (k-1) l` and the left-mover of bin `n - (N-k) l`). The exponential is
//! a Taylor series run until the term norm is negligible.

#![allow(dead_code)]

use std::collections::HashMap;

use wqed_core::{MatrixProductState, ModelParams, SiteKind, C64};

pub type Config = Vec<u8>;

pub struct FockOracle {
    pub n: usize,
    pub ell: i64,
    pub phi: f64,
    pub g: f64,
    pub n_max: u8,
    pub first_bin: i64,
    pub n_bins: usize,
    pub amps: HashMap<Config, C64>,
}

impl FockOracle {
    /// Emitters in `psi` (emitter 1 most significant), all registers empty.
    pub fn new(params: &ModelParams, psi: &[C64], steps: usize) -> Self {
        let n = params.n_emitters;
        let ell = params.ell as i64;
        let first_bin = -((n as i64 - 1) * ell);
        let n_bins = (steps as i64 - first_bin).max(1) as usize;
        let modes = n + 2 * n_bins;
        let mut amps = HashMap::new();
        for (idx, &a) in psi.iter().enumerate() {
            if a.norm() == 0.0 {
                continue;
            }
            let mut c = vec![0u8; modes];
            for e in 0..n {
                c[e] = ((idx >> (n - 1 - e)) & 1) as u8;
            }
            amps.insert(c, a);
        }
        Self {
            n,
            ell,
            phi: params.phi,
            g: (params.gamma * params.dt() / 2.0).sqrt(),
            n_max: params.n_max as u8,
            first_bin,
            n_bins,
            amps,
        }
    }

    pub fn mode(&self, bin: i64, left: bool) -> usize {
        self.n + 2 * (bin - self.first_bin) as usize + left as usize
    }

    /// `(mode, phase)` pairs emitter `k` (1-based) couples to at step `n`.
    fn couplings(&self, step: i64, k: usize) -> [(usize, C64); 2] {
        let (kk, nn) = (k as i64, self.n as i64);
        let r = self.mode(step - (kk - 1) * self.ell, false);
        let l = self.mode(step - (nn - kk) * self.ell, true);
        [
            (r, C64::from_polar(1.0, -((kk - 1) as f64) * self.phi)),
            (l, C64::from_polar(1.0, -((nn - kk) as f64) * self.phi)),
        ]
    }

    fn apply_generator(&self, step: i64, psi: &HashMap<Config, C64>) -> HashMap<Config, C64> {
        let mut out: HashMap<Config, C64> = HashMap::new();
        for (c, &amp) in psi {
            for k in 1..=self.n {
                let e = k - 1;
                for (m, phase) in self.couplings(step, k) {
                    // g phase sigma_k B_m^dag
                    if c[e] == 1 && c[m] < self.n_max {
                        let mut d = c.clone();
                        d[e] = 0;
                        d[m] += 1;
                        let f = self.g * (d[m] as f64).sqrt();
                        *out.entry(d).or_default() += amp * phase * f;
                    }
                    // g conj(phase) sigma_k^dag B_m
                    if c[e] == 0 && c[m] > 0 {
                        let mut d = c.clone();
                        d[e] = 1;
                        d[m] -= 1;
                        let f = self.g * (c[m] as f64).sqrt();
                        *out.entry(d).or_default() += amp * phase.conj() * f;
                    }
                }
            }
        }
        out
    }

    /// Step `n`: `t_n -> t_{n+1}`.
    pub fn step(&mut self, step: usize) {
        let mut total = self.amps.clone();
        let mut term = self.amps.clone();
        for k in 1..200 {
            let h = self.apply_generator(step as i64, &term);
            let f = C64::new(0.0, -1.0 / k as f64);
            term = h.into_iter().map(|(c, a)| (c, a * f)).collect();
            let norm: f64 = term.values().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            for (c, a) in &term {
                *total.entry(c.clone()).or_default() += *a;
            }
            if norm < 1e-17 {
                break;
            }
        }
        total.retain(|_, a| a.norm() > 0.0);
        self.amps = total;
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn excitation_number(&self) -> f64 {
        self.amps
            .iter()
            .map(|(c, a)| a.norm_sqr() * c[..self.n].iter().map(|&x| x as f64).sum::<f64>())
            .sum()
    }

    pub fn mode_mean(&self, mode: usize) -> f64 {
        self.amps.iter().map(|(c, a)| a.norm_sqr() * c[mode] as f64).sum()
    }

    pub fn photon_number(&self) -> f64 {
        (self.n..self.n + 2 * self.n_bins).map(|m| self.mode_mean(m)).sum()
    }

    /// Reduced emitter state, emitter 1 most significant, row-major.
    pub fn emitter_rho(&self) -> Vec<C64> {
        let dim = 1usize << self.n;
        let mut by_rest: HashMap<&[u8], Vec<(usize, C64)>> = HashMap::new();
        for (c, &a) in &self.amps {
            let idx = c[..self.n].iter().fold(0usize, |acc, &q| (acc << 1) | q as usize);
            by_rest.entry(&c[self.n..]).or_default().push((idx, a));
        }
        let mut rho = vec![C64::new(0.0, 0.0); dim * dim];
        for entries in by_rest.values() {
            for &(i, a) in entries {
                for &(j, b) in entries {
                    rho[i * dim + j] += a * b.conj();
                }
            }
        }
        rho
    }

    /// Chain configuration of `c` for the site order of `mps`, or `None` when
    /// `c` has occupation in a bin the chain does not hold yet.
    pub fn chain_config(&self, c: &Config, mps: &MatrixProductState) -> Option<Vec<usize>> {
        let b = self.n_max as usize + 1;
        let mut out = Vec::with_capacity(mps.len());
        let mut seen = vec![false; self.n_bins];
        for kind in mps.kinds() {
            match *kind {
                SiteKind::EmitterPair { pair } => {
                    let p = self.n + 1 - pair;
                    out.push(2 * c[pair - 1] as usize + c[p - 1] as usize);
                }
                SiteKind::PhotonBin { bin } => {
                    let r = c[self.mode(bin, false)] as usize;
                    let l = c[self.mode(bin, true)] as usize;
                    seen[(bin - self.first_bin) as usize] = true;
                    out.push(r * b + l);
                }
            }
        }
        for (k, s) in seen.iter().enumerate() {
            if !s {
                let bin = self.first_bin + k as i64;
                if c[self.mode(bin, false)] != 0 || c[self.mode(bin, true)] != 0 {
                    return None;
                }
            }
        }
        Some(out)
    }

    /// `<oracle|mps>`.
    pub fn overlap(&self, mps: &MatrixProductState) -> C64 {
        let mut s = C64::new(0.0, 0.0);
        for (c, a) in &self.amps {
            if let Some(cfg) = self.chain_config(c, mps) {
                s += a.conj() * mps.amplitude(&cfg).unwrap();
            }
        }
        s
    }

    /// `|<oracle|mps>|^2 / (<oracle|oracle> <mps|mps>)`.
    pub fn fidelity(&self, mps: &MatrixProductState) -> f64 {
        self.overlap(mps).norm_sqr() / (self.norm_sqr() * mps.norm_sqr())
    }
}

/// Random normalized vector from a seeded generator.
pub fn random_state(dim: usize, seed: u64) -> Vec<C64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<C64> = (0..dim)
        .map(|_| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    v.iter_mut().for_each(|z| *z /= n);
    v
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
