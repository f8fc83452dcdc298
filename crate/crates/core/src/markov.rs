//! Exact Markovian reference: the collective master equation of N emitters
//! at positions `x_j = (j-1) d` on a bidirectional waveguide,
//!
//! `drho/dt = -i [H_S, rho] + sum_ij Gamma_ij (2 s_j rho s_i^dag - {s_i^dag s_j, rho})`
//!
//! with `H_S = (gamma/2) sum_{i != j} sin(k0 |x_i - x_j|) s_i^dag s_j` and
//! `Gamma_ij = (gamma/2) cos(k0 |x_i - x_j|)`. A lone emitter then decays at
//! rate `gamma`. Integration is dense fixed-step RK4.

use thiserror::Error;

use crate::observables::{
    attach_rates, fill_emitter_observables, EmitterDensityMatrix, ObservableError, TimeSeriesRecord,
};
use crate::tensor::{
    gemm, gemm_adj_left, gemm_adj_right, hermitian_eigen, ComplexTensor, TensorError, C64, ONE,
    ZERO,
};

#[derive(Debug, Error)]
pub enum MarkovError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Observable(#[from] ObservableError),

    /// Dense solver size limit.
    #[error("Markovian solver supports 1 <= N <= 8 emitters, got {0}")]
    UnsupportedSize(usize),

    /// Kossakowski matrix has a negative eigenvalue.
    #[error("dissipation matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPositive(f64),

    /// Output times not increasing or step size degenerate.
    #[error("integration error: {0}")]
    Integration(String),

    /// Initial state of the wrong size.
    #[error("initial state has {actual} emitters, spec has {expected}")]
    SizeMismatch { expected: usize, actual: usize },
}

pub type MarkovResult<T> = Result<T, MarkovError>;

/// How the dissipator is assembled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LindbladMode {
    /// Eigen-decomposition of the full `Gamma_ij`.
    General,
    /// Single collective operator `S = sum_j s_j` with rate `gamma/2`; exact
    /// only in the mirror configuration.
    Dicke,
}

/// Dense data of the master equation.
#[derive(Clone, Debug)]
pub struct LindbladSpec {
    pub n: usize,
    pub gamma: f64,
    pub k0d: f64,
    pub h_s: ComplexTensor,
    /// `N x N`, row-major.
    pub gamma_matrix: Vec<f64>,
    /// `sigma_j` embedded in the `2^N` space, `j = 1..=N`.
    pub lowering: Vec<ComplexTensor>,
    pub mode: LindbladMode,
}

/// `sigma_j` (1-based) on `n` qubits, emitter 1 most significant.
pub fn lowering_operator(n: usize, j: usize) -> ComplexTensor {
    let dim = 1usize << n;
    let bit = 1usize << (n - j);
    let mut m = vec![ZERO; dim * dim];
    for s in 0..dim {
        if s & bit != 0 {
            m[(s & !bit) * dim + s] = ONE;
        }
    }
    ComplexTensor::from_parts(vec![dim, dim], m)
}

/// Master-equation data for `n` emitters spaced by `d` with `k0 d = k0d`.
pub fn build_spec(n: usize, gamma: f64, k0d: f64, mode: LindbladMode) -> MarkovResult<LindbladSpec> {
    if !(1..=8).contains(&n) {
        return Err(MarkovError::UnsupportedSize(n));
    }
    let dim = 1usize << n;
    let lowering: Vec<ComplexTensor> = (1..=n).map(|j| lowering_operator(n, j)).collect();
    let mut gamma_matrix = vec![0.0; n * n];
    let mut h = vec![ZERO; dim * dim];
    for i in 0..n {
        for j in 0..n {
            let phase = k0d * (i as f64 - j as f64).abs();
            gamma_matrix[i * n + j] = 0.5 * gamma * phase.cos();
            if i != j {
                let c = 0.5 * gamma * phase.sin();
                if c != 0.0 {
                    let prod = gemm_adj_left(lowering[i].data(), dim, dim, lowering[j].data(), dim);
                    for (x, y) in h.iter_mut().zip(prod) {
                        *x += c * y;
                    }
                }
            }
        }
    }
    let spec = LindbladSpec {
        n,
        gamma,
        k0d,
        h_s: ComplexTensor::from_parts(vec![dim, dim], h),
        gamma_matrix,
        lowering,
        mode,
    };
    Ok(spec)
}

/// `(E_R, E_L) = i sqrt(gamma/2) sum_j exp(+-i k0 x_j) s_j`.
pub fn collective_jump_ops(spec: &LindbladSpec) -> (ComplexTensor, ComplexTensor) {
    let dim = 1usize << spec.n;
    let amp = C64::new(0.0, (spec.gamma / 2.0).sqrt());
    let mut er = vec![ZERO; dim * dim];
    let mut el = vec![ZERO; dim * dim];
    for (j, s) in spec.lowering.iter().enumerate() {
        let ph = spec.k0d * j as f64;
        let (pr, pl) = (amp * C64::from_polar(1.0, ph), amp * C64::from_polar(1.0, -ph));
        for ((r, l), &x) in er.iter_mut().zip(el.iter_mut()).zip(s.data()) {
            *r += pr * x;
            *l += pl * x;
        }
    }
    (
        ComplexTensor::from_parts(vec![dim, dim], er),
        ComplexTensor::from_parts(vec![dim, dim], el),
    )
}

/// Precomputed generator: `drho = -i (H rho - rho H^dag) + sum_k J_k rho J_k^dag`.
struct Generator {
    dim: usize,
    h_eff: Vec<C64>,
    jumps: Vec<Vec<C64>>,
}

impl Generator {
    /// From jump operators `L_k` with rates `r_k` in the form
    /// `sum_k r_k (2 L rho L^dag - {L^dag L, rho})`.
    fn new(h: &ComplexTensor, ops: &[(f64, Vec<C64>)], dim: usize) -> Self {
        let mut h_eff = h.data().to_vec();
        let mut jumps = Vec::new();
        for (rate, l) in ops {
            let ldl = gemm_adj_left(l, dim, dim, l, dim);
            for (x, y) in h_eff.iter_mut().zip(ldl) {
                *x -= C64::new(0.0, *rate) * y;
            }
            let scale = (2.0 * rate).sqrt();
            jumps.push(l.iter().map(|z| z * scale).collect());
        }
        Self { dim, h_eff, jumps }
    }

    fn apply(&self, rho: &[C64]) -> Vec<C64> {
        let d = self.dim;
        let hr = gemm(&self.h_eff, d, d, rho, d);
        // rho H^dag
        let rh = gemm_adj_right(rho, d, d, &self.h_eff, d);
        let mut out: Vec<C64> = hr
            .iter()
            .zip(&rh)
            .map(|(a, b)| C64::new(0.0, -1.0) * (a - b))
            .collect();
        for j in &self.jumps {
            let jr = gemm(j, d, d, rho, d);
            let jrj = gemm_adj_right(&jr, d, d, j, d);
            for (x, y) in out.iter_mut().zip(jrj) {
                *x += y;
            }
        }
        out
    }
}

fn generator(spec: &LindbladSpec) -> MarkovResult<Generator> {
    let n = spec.n;
    let dim = 1usize << n;
    let ops = match spec.mode {
        LindbladMode::Dicke => {
            let mut s = vec![ZERO; dim * dim];
            for l in &spec.lowering {
                for (x, y) in s.iter_mut().zip(l.data()) {
                    *x += y;
                }
            }
            vec![(spec.gamma / 2.0, s)]
        }
        LindbladMode::General => {
            let g = ComplexTensor::from_fn(vec![n, n], |ix| C64::new(spec.gamma_matrix[ix[0] * n + ix[1]], 0.0))?;
            let (vals, vecs) = hermitian_eigen(&g)?;
            let scale = vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
            let mut ops = Vec::new();
            for (k, &lam) in vals.iter().enumerate() {
                if lam < -1e-10 * scale.max(1.0) {
                    return Err(MarkovError::NotPositive(lam));
                }
                if lam <= 1e-14 * scale {
                    continue;
                }
                // L_k = sum_j conj(v_k[j]) s_j
                let mut l = vec![ZERO; dim * dim];
                for (j, s) in spec.lowering.iter().enumerate() {
                    let c = vecs.get(&[j, k]).conj();
                    for (x, y) in l.iter_mut().zip(s.data()) {
                        *x += c * y;
                    }
                }
                ops.push((lam, l));
            }
            ops
        }
    };
    Ok(Generator::new(&spec.h_s, &ops, dim))
}

/// Right-hand side of the master equation in the `Gamma_ij` form.
pub fn lindblad_rhs(spec: &LindbladSpec, rho: &ComplexTensor) -> MarkovResult<ComplexTensor> {
    let g = generator(spec)?;
    Ok(ComplexTensor::from_parts(rho.shape().to_vec(), g.apply(rho.data())))
}

/// Right-hand side written with the two collective jump operators,
/// `-i[H_S, rho] + sum_D (E_D rho E_D^dag - {E_D^dag E_D, rho}/2)`.
pub fn lindblad_rhs_jump_form(spec: &LindbladSpec, rho: &ComplexTensor) -> MarkovResult<ComplexTensor> {
    let dim = 1usize << spec.n;
    let (er, el) = collective_jump_ops(spec);
    let ops = vec![(0.5, er.into_data()), (0.5, el.into_data())];
    let g = Generator::new(&spec.h_s, &ops, dim);
    Ok(ComplexTensor::from_parts(rho.shape().to_vec(), g.apply(rho.data())))
}

/// Largest RK4 step used: `1 / (50 gamma N^2)`.
pub fn max_step(spec: &LindbladSpec) -> f64 {
    1.0 / (50.0 * spec.gamma.max(f64::MIN_POSITIVE) * (spec.n * spec.n) as f64)
}

/// Integrate from `rho0` at `t_grid[0]`, returning the state at every grid
/// time (the first entry is `rho0`).
pub fn evolve(
    spec: &LindbladSpec,
    rho0: &EmitterDensityMatrix,
    t_grid: &[f64],
) -> MarkovResult<Vec<EmitterDensityMatrix>> {
    if rho0.n_emitters() != spec.n {
        return Err(MarkovError::SizeMismatch {
            expected: spec.n,
            actual: rho0.n_emitters(),
        });
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) || t_grid.iter().any(|t| !t.is_finite()) {
        return Err(MarkovError::Integration("time grid must be finite and increasing".into()));
    }
    let g = generator(spec)?;
    let dim = g.dim;
    let h_max = max_step(spec);
    let mut rho = rho0.matrix().data().to_vec();
    let mut out = Vec::with_capacity(t_grid.len());
    if t_grid.is_empty() {
        return Ok(out);
    }
    out.push(rho0.clone());
    let axpy = |a: &[C64], b: &[C64], s: f64| -> Vec<C64> {
        a.iter().zip(b).map(|(x, y)| x + y * s).collect()
    };
    for w in t_grid.windows(2) {
        let span = w[1] - w[0];
        let steps = (span / h_max).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        if h <= f64::EPSILON * w[1].abs().max(1.0) {
            return Err(MarkovError::Integration(format!("step size {h:e} underflows at t = {}", w[0])));
        }
        for _ in 0..steps {
            let k1 = g.apply(&rho);
            let k2 = g.apply(&axpy(&rho, &k1, h / 2.0));
            let k3 = g.apply(&axpy(&rho, &k2, h / 2.0));
            let k4 = g.apply(&axpy(&rho, &k3, h));
            for i in 0..rho.len() {
                rho[i] += (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) * (h / 6.0);
            }
        }
        out.push(EmitterDensityMatrix::new(
            spec.n,
            ComplexTensor::new(vec![dim, dim], rho.clone())?,
        )?);
    }
    Ok(out)
}

/// Observables along a trajectory: excitation number and its rate, emitter
/// entropy, negativity, sector and singlet weights, and optionally the
/// survival probability of `reference` with its rate.
pub fn dicke_observables(
    gamma: f64,
    t_grid: &[f64],
    trajectory: &[EmitterDensityMatrix],
    reference: Option<&[C64]>,
) -> MarkovResult<Vec<TimeSeriesRecord>> {
    let mut records = Vec::with_capacity(trajectory.len());
    for (k, (&t, rho)) in t_grid.iter().zip(trajectory).enumerate() {
        let mut rec = TimeSeriesRecord {
            step: k,
            t,
            gamma_t: gamma * t,
            n_exc: rho.excitation_number(),
            norm_sq: rho.trace(),
            max_bond: 0,
            ..Default::default()
        };
        fill_emitter_observables(&mut rec, rho)?;
        if let Some(psi) = reference {
            rec.survival = Some(rho.expectation_of_state(psi));
        }
        records.push(rec);
    }
    attach_rates(&mut records);
    Ok(records)
}
