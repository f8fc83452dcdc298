//! Collision-model evolution of emitters in a bidirectional waveguide with
//! propagation delay.
//!
//! Time is sliced into steps of length `dt = tau / ell`; step `n` couples every
//! emitter to the right- and left-moving registers of a few time bins. Emitter
//! `k` (1-based) meets the right-mover of bin `n - (k-1) ell` and the shifted
//! left-mover of bin `n - (N-k) ell`, with propagation phases
//! `exp(-i (k-1) phi)` and `exp(-i (N-k) phi)`. Emitters `j` and `N+1-j` share
//! their two bins, so they live on one chain site and a single three-site
//! gate per pair advances the whole system by one step.
//!
//! Chain layout: bins in ascending order, with pair site `S_j` placed right
//! before bin `n - (N-j) ell` at the start of step `n`. The output region
//! (bins that passed every emitter) grows on the left; bins that have not yet
//! met any emitter are created on demand as vacuum factors. Each step:
//!
//! 1. pair 1 gets a fresh vacuum bin inserted next to it, the gate acts, and
//!    the fresh bin is moved to the right end of the chain;
//! 2. pairs `j >= 2` reach their second bin (already in the chain, right of
//!    the last pair) by SWAP routing and route it back after the gate;
//! 3. every pair site moves one place to the right. For `S_1` this pushes the
//!    bin it just finished with into the output region, where it stays
//!    left-canonical and is never touched again.

use log::warn;
use thiserror::Error;

use crate::mps::{MatrixProductState, MpsError, SiteKind};
use crate::observables::{
    attach_rates, bin_occupation, field_energy_density, fill_emitter_observables, in_out_entropy,
    pair_populations, survival_probability, BinOccupation, FieldProfile, ObservableError,
    TimeSeriesRecord,
};
use crate::tensor::{
    expm_hermitian_generator, ComplexTensor, TensorError, TruncationPolicy, C64, ONE, ZERO,
};

#[derive(Debug, Error)]
pub enum CollisionError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Mps(#[from] MpsError),

    #[error(transparent)]
    Observable(#[from] ObservableError),

    /// Physical or numerical parameters out of range.
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// Chain does not match the layout expected at this step.
    #[error("layout error at step {step}: {msg}")]
    Layout { step: usize, msg: String },

    /// Requested initial state is not available for this size.
    #[error("{0}")]
    Unsupported(String),
}

pub type CollisionResult<T> = Result<T, CollisionError>;

/// Largest `gamma * dt` considered accurate.
pub const GAMMA_DT_WARN: f64 = 0.02;

/// Physical and numerical knobs of one simulation.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelParams {
    /// Number of emitters, even.
    pub n_emitters: usize,
    /// Single-emitter decay rate; sets the time unit.
    pub gamma: f64,
    /// Delay between neighbouring emitters.
    pub tau: f64,
    /// Bins per delay, `tau = ell * dt`.
    pub ell: usize,
    /// Propagation phase per inter-emitter hop, `k0 d`.
    pub phi: f64,
    /// Photons per direction per bin.
    pub n_max: usize,
    /// Total evolution time.
    pub t_max: f64,
    pub policy: TruncationPolicy,
    /// Give emitter sites the photon-site dimension (unused levels stay empty).
    pub pad_emitter_sites: bool,
}

impl ModelParams {
    /// Mirror configuration in units `gamma = 1` with `ell = round(eta /
    /// gamma_dt)`.
    pub fn from_eta(n_emitters: usize, eta: f64, gamma_dt: f64, t_max: f64) -> Self {
        let ell = ((eta / gamma_dt).round() as usize).max(1);
        Self {
            n_emitters,
            gamma: 1.0,
            tau: eta,
            ell,
            phi: 2.0 * std::f64::consts::PI,
            n_max: 1,
            t_max,
            policy: TruncationPolicy::exact(),
            pad_emitter_sites: false,
        }
    }

    pub fn with_policy(mut self, policy: TruncationPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_n_max(mut self, n_max: usize) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn dt(&self) -> f64 {
        self.tau / self.ell as f64
    }

    pub fn eta(&self) -> f64 {
        self.gamma * self.tau
    }

    pub fn gamma_dt(&self) -> f64 {
        self.gamma * self.dt()
    }

    /// Coupling amplitude per step, `sqrt(gamma dt / 2)`.
    pub fn coupling(&self) -> f64 {
        (self.gamma_dt() / 2.0).sqrt()
    }

    pub fn n_pairs(&self) -> usize {
        self.n_emitters / 2
    }

    /// Steps needed to reach `t_max` (rounded up).
    pub fn n_steps(&self) -> usize {
        let x = self.t_max / self.dt();
        (x - 1e-9).ceil().max(0.0) as usize
    }

    pub fn photon_dim(&self) -> usize {
        (self.n_max + 1) * (self.n_max + 1)
    }

    pub fn emitter_dim(&self) -> usize {
        if self.pad_emitter_sites {
            self.photon_dim().max(4)
        } else {
            4
        }
    }

    /// Check ranges; returns warnings for values that are legal but suspect.
    pub fn validate(&self) -> CollisionResult<Vec<String>> {
        let bad = |m: String| Err(CollisionError::InvalidParams(m));
        if self.n_emitters < 2 || !self.n_emitters.is_multiple_of(2) {
            return bad(format!("n_emitters must be even and >= 2, got {}", self.n_emitters));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad(format!("gamma must be finite and non-negative, got {}", self.gamma));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.ell == 0 {
            return bad("ell must be at least 1".into());
        }
        if !self.phi.is_finite() {
            return bad("phi must be finite".into());
        }
        if !(1..=3).contains(&self.n_max) {
            return bad(format!("n_max must be 1, 2 or 3, got {}", self.n_max));
        }
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return bad(format!("t_max must be finite and non-negative, got {}", self.t_max));
        }
        let mut warnings = Vec::new();
        if self.gamma_dt() > GAMMA_DT_WARN {
            warnings.push(format!(
                "gamma*dt = {:.4} exceeds {GAMMA_DT_WARN}; discretization error may be visible",
                self.gamma_dt()
            ));
        }
        let steps = self.t_max / self.dt();
        if (steps - steps.round()).abs() > 1e-9 {
            warnings.push(format!(
                "t_max is not a multiple of dt; running {} steps (t = {})",
                self.n_steps(),
                self.n_steps() as f64 * self.dt()
            ));
        }
        Ok(warnings)
    }
}

/// Static description of the chain and of which bins each pair meets.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteLayout {
    n_emitters: usize,
    ell: usize,
    n_steps: usize,
    photon_dim: usize,
    emitter_dim: usize,
    initial: Vec<SiteKind>,
}

impl SiteLayout {
    pub fn n_emitters(&self) -> usize {
        self.n_emitters
    }

    pub fn n_pairs(&self) -> usize {
        self.n_emitters / 2
    }

    pub fn ell(&self) -> usize {
        self.ell
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn photon_dim(&self) -> usize {
        self.photon_dim
    }

    pub fn emitter_dim(&self) -> usize {
        self.emitter_dim
    }

    /// Chain at `t = 0`: `[S_1, l bins, S_2, ..., S_{N/2}, N l / 2 bins]`.
    pub fn initial_kinds(&self) -> &[SiteKind] {
        &self.initial
    }

    /// Earliest bin, `-(N-1) l`.
    pub fn first_bin(&self) -> i64 {
        -((self.n_emitters as i64 - 1) * self.ell as i64)
    }

    /// Bins that exist after the full run.
    pub fn total_bins(&self) -> usize {
        self.n_steps + (self.n_emitters - 1) * self.ell
    }

    /// Bins met by pair `j` at step `n`: `(b, a)` with `b = n - (N-j) l`
    /// (left-mover of emitter `j`, right-mover of its partner) and
    /// `a = n - (j-1) l` (right-mover of emitter `j`, left-mover of its
    /// partner).
    pub fn target_bins(&self, n: usize, j: usize) -> (i64, i64) {
        let (n, l, nn, j) = (n as i64, self.ell as i64, self.n_emitters as i64, j as i64);
        (n - (nn - j) * l, n - (j - 1) * l)
    }

    /// Step during which bin `m` passes the outermost emitters and leaves.
    pub fn exit_step(&self, bin: i64) -> i64 {
        bin + (self.n_emitters as i64 - 1) * self.ell as i64
    }

    /// Bins never touched again at the start of step `n` are those below
    /// this index.
    pub fn frozen_below(&self, n: usize) -> i64 {
        self.target_bins(n, 1).0
    }
}

/// Chain layout for `params`.
pub fn build_layout(params: &ModelParams) -> CollisionResult<SiteLayout> {
    for w in params.validate()? {
        warn!("{w}");
    }
    let (nn, l) = (params.n_emitters as i64, params.ell as i64);
    let mut initial = Vec::new();
    for m in -(nn - 1) * l..0 {
        for j in 1..=params.n_pairs() {
            if m == -(nn - j as i64) * l {
                initial.push(SiteKind::EmitterPair { pair: j });
            }
        }
        initial.push(SiteKind::PhotonBin { bin: m });
    }
    Ok(SiteLayout {
        n_emitters: params.n_emitters,
        ell: params.ell,
        n_steps: params.n_steps(),
        photon_dim: params.photon_dim(),
        emitter_dim: params.emitter_dim(),
        initial,
    })
}

/// Precomputed `exp(-i O_j)` for one emitter pair. Acts on
/// `(pair site, bin b, bin a)` with the pair site most significant.
#[derive(Clone, Debug)]
pub struct CollisionGate {
    pub pair: usize,
    pub unitary: ComplexTensor,
}

fn kron(a: &ComplexTensor, b: &ComplexTensor) -> ComplexTensor {
    let (ar, ac) = (a.shape()[0], a.shape()[1]);
    let (br, bc) = (b.shape()[0], b.shape()[1]);
    ComplexTensor::from_fn(vec![ar * br, ac * bc], |ix| {
        let (i, j) = (ix[0], ix[1]);
        a.get(&[i / br, j / bc]) * b.get(&[i % br, j % bc])
    })
    .expect("non-empty kron factors")
}

/// Lowering operators `(sigma_pair, sigma_partner)` on a pair site of
/// dimension `d >= 4`.
pub fn pair_lowering_ops(d: usize) -> (ComplexTensor, ComplexTensor) {
    let mut hi = ComplexTensor::zeros(vec![d, d]).expect("d >= 4");
    let mut lo = hi.clone();
    // index = 2 q_pair + q_partner
    for s in 0..4 {
        if s & 2 != 0 {
            hi.data_mut()[(s & !2) * d + s] = ONE;
        }
        if s & 1 != 0 {
            lo.data_mut()[(s & !1) * d + s] = ONE;
        }
    }
    (hi, lo)
}

/// Annihilation operators `(B_R, B_L)` on a bin with `n_max` photons per
/// direction.
pub fn bin_lowering_ops(n_max: usize) -> (ComplexTensor, ComplexTensor) {
    let b = n_max + 1;
    let d = b * b;
    let mut r = ComplexTensor::zeros(vec![d, d]).expect("d >= 4");
    let mut l = r.clone();
    for nr in 0..b {
        for nl in 0..b {
            let s = nr * b + nl;
            if nr > 0 {
                r.data_mut()[((nr - 1) * b + nl) * d + s] = C64::new((nr as f64).sqrt(), 0.0);
            }
            if nl > 0 {
                l.data_mut()[(nr * b + nl - 1) * d + s] = C64::new((nl as f64).sqrt(), 0.0);
            }
        }
    }
    (r, l)
}

/// Hermitian generator `O_j` of pair `j` on `(pair, bin b, bin a)`.
pub fn pair_generator(params: &ModelParams, j: usize) -> CollisionResult<ComplexTensor> {
    let nn = params.n_emitters as f64;
    let g = params.coupling();
    let ds = params.emitter_dim();
    let dp = params.photon_dim();
    let (s_j, s_p) = pair_lowering_ops(ds);
    let (br, bl) = bin_lowering_ops(params.n_max);
    let id_s = ComplexTensor::identity(ds)?;
    let id_p = ComplexTensor::identity(dp)?;
    let near = C64::from_polar(1.0, -(j as f64 - 1.0) * params.phi);
    let far = C64::from_polar(1.0, -(nn - j as f64) * params.phi);
    let on_b = |op: &ComplexTensor| kron(&kron(&id_s, op), &id_p);
    let on_a = |op: &ComplexTensor| kron(&kron(&id_s, &id_p), op);
    let on_s = |op: &ComplexTensor| kron(&kron(op, &id_p), &id_p);

    // emitter j: right-mover into a (near phase), left-mover into b (far)
    // partner: right-mover into b (far), left-mover into a (near)
    let br_dag = br.adjoint()?;
    let bl_dag = bl.adjoint()?;
    let terms = [
        (&s_j, on_a(&br_dag), near),
        (&s_j, on_b(&bl_dag), far),
        (&s_p, on_b(&br_dag), far),
        (&s_p, on_a(&bl_dag), near),
    ];
    let dim = ds * dp * dp;
    let mut o = ComplexTensor::zeros(vec![dim, dim])?;
    for (sigma, photon, phase) in terms {
        let t = on_s(sigma).matmul(&photon)?.scaled(phase * g);
        let th = t.adjoint()?;
        for ((x, y), z) in o.data_mut().iter_mut().zip(t.data()).zip(th.data()) {
            *x += y + z;
        }
    }
    Ok(o)
}

/// One gate per pair, `j = 1..=N/2`.
pub fn build_gates(params: &ModelParams) -> CollisionResult<Vec<CollisionGate>> {
    params.validate()?;
    (1..=params.n_pairs())
        .map(|j| {
            let unitary = expm_hermitian_generator(&pair_generator(params, j)?)?;
            Ok(CollisionGate { pair: j, unitary })
        })
        .collect()
}

fn vacuum(d: usize) -> Vec<C64> {
    let mut v = vec![ZERO; d];
    v[0] = ONE;
    v
}

/// Product chain with the given local state on every pair site.
fn product_chain(layout: &SiteLayout, pair_state: &[C64]) -> CollisionResult<MatrixProductState> {
    let vectors: Vec<Vec<C64>> = layout
        .initial_kinds()
        .iter()
        .map(|k| match k {
            SiteKind::EmitterPair { .. } => pair_state.to_vec(),
            SiteKind::PhotonBin { .. } => vacuum(layout.photon_dim()),
        })
        .collect();
    let mut state = MatrixProductState::product_state(&vectors, layout.initial_kinds().to_vec())?;
    state.track_charges();
    Ok(state)
}

/// All emitters excited, waveguide empty.
pub fn prepare_all_excited(params: &ModelParams) -> CollisionResult<MatrixProductState> {
    let layout = build_layout(params)?;
    let mut ee = vec![ZERO; layout.emitter_dim()];
    ee[3] = ONE;
    product_chain(&layout, &ee)
}

/// Emitters in an arbitrary state `psi` (emitter 1 most significant bit),
/// waveguide empty. The pair sites are swapped next to each other, the state
/// is written into the block by exact SVDs, and the sites are swapped back.
pub fn prepare_emitter_state(params: &ModelParams, psi: &[C64]) -> CollisionResult<MatrixProductState> {
    let layout = build_layout(params)?;
    let n = params.n_emitters;
    if psi.len() != 1 << n {
        return Err(CollisionError::InvalidParams(format!(
            "emitter state has {} amplitudes, expected {}",
            psi.len(),
            1usize << n
        )));
    }
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(CollisionError::InvalidParams(format!("emitter state has norm {norm}")));
    }
    let mut state = product_chain(&layout, &vacuum(layout.emitter_dim()))?;
    let exact = TruncationPolicy::exact();
    let mut log = Vec::new();
    let first = state.position_of(SiteKind::EmitterPair { pair: 1 }).expect("pair 1");
    for j in 2..=params.n_pairs() {
        let from = state.position_of(SiteKind::EmitterPair { pair: j }).expect("pair j");
        log.extend(state.route_site(from, first + j - 1, &exact)?.0);
    }
    let k = params.n_pairs();
    let ds = layout.emitter_dim();
    let dims = vec![ds; k];
    let total = ds.pow(k as u32);
    let pairs: Vec<usize> = (1..=k).collect();
    let mut block = vec![ZERO; total];
    let mut locals = vec![0usize; k];
    for (c, amp) in block.iter_mut().enumerate() {
        let mut rem = c;
        for q in (0..k).rev() {
            locals[q] = rem % ds;
            rem /= ds;
        }
        if let Some(e) = crate::observables::pair_config_to_emitter_index(&pairs, &locals, n) {
            *amp = psi[e];
        }
    }
    if k == 1 {
        let t = ComplexTensor::new(vec![1, ds, 1], block)?;
        *state.site_mut(first) = t;
    } else {
        state.replace_block(first, &dims, block, &exact)?;
    }
    state.undo_swaps(&log, &exact)?;
    if !state.charges_tracked() {
        state.track_charges();
    }
    Ok(state)
}

/// Permutation-symmetric state with `N/2` excitations, waveguide empty.
pub fn prepare_symmetric_dicke(params: &ModelParams) -> CollisionResult<MatrixProductState> {
    if params.n_emitters > 12 {
        return Err(CollisionError::Unsupported(format!(
            "symmetric Dicke preparation supports N <= 12, got {}",
            params.n_emitters
        )));
    }
    let psi = crate::observables::dicke_state(params.n_emitters, params.n_emitters / 2);
    prepare_emitter_state(params, &psi)
}

/// What one step measured on the way.
#[derive(Clone, Debug, Default)]
pub struct StepReport {
    /// Summed discarded weight of all truncations in this step.
    pub discarded: f64,
    /// Excited-state population of each emitter after the step (index 0 is
    /// emitter 1).
    pub emitter_populations: Vec<f64>,
    /// The bin that left the emitter region during this step.
    pub exited: Option<BinOccupation>,
}

fn position(state: &MatrixProductState, kind: SiteKind, n: usize) -> CollisionResult<usize> {
    state.position_of(kind).ok_or_else(|| CollisionError::Layout {
        step: n,
        msg: format!("{kind:?} not in chain"),
    })
}

/// Advance the state by step `n` (from `t_n` to `t_{n+1}`).
pub fn step(
    state: &mut MatrixProductState,
    layout: &SiteLayout,
    gates: &[CollisionGate],
    n: usize,
    policy: &TruncationPolicy,
) -> CollisionResult<StepReport> {
    let np = layout.n_pairs();
    if gates.len() != np {
        return Err(CollisionError::Layout {
            step: n,
            msg: format!("{} gates for {np} pairs", gates.len()),
        });
    }
    let mut discarded = 0.0;
    for gate in gates {
        let j = gate.pair;
        let s = position(state, SiteKind::EmitterPair { pair: j }, n)?;
        let (b, a) = layout.target_bins(n, j);
        if state.kind(s + 1) != (SiteKind::PhotonBin { bin: b }) {
            return Err(CollisionError::Layout {
                step: n,
                msg: format!("bin {b} is not next to pair {j}"),
            });
        }
        if j == 1 {
            // Fresh bin: insert beside the pair, act, then send it home.
            state.insert_product_site(s + 2, &vacuum(layout.photon_dim()), SiteKind::PhotonBin { bin: a })?;
            discarded += state.apply_gate_adjacent(&gate.unitary, s, 3, policy)?;
            let end = state.len() - 1;
            discarded += state.route_site(s + 2, end, policy)?.1;
        } else {
            let t = position(state, SiteKind::PhotonBin { bin: a }, n)?;
            discarded += state.apply_gate_routed(&gate.unitary, [s, s + 1, t], policy)?;
        }
    }

    let mut pops = vec![0.0; layout.n_emitters()];
    let nn = layout.n_emitters();
    let mut exited = None;
    for j in (1..=np).rev() {
        let s = position(state, SiteKind::EmitterPair { pair: j }, n)?;
        let rho = state.site_density_matrix(s)?;
        let (pj, pp) = pair_populations(&rho);
        pops[j - 1] = pj;
        pops[nn - j] = pp;
        if j == 1 {
            exited = Some(bin_occupation(state, s + 1)?);
            discarded += state.swap_adjacent_center_right(s, policy)?;
        } else {
            discarded += state.swap_adjacent_center_left(s, policy)?;
        }
    }
    Ok(StepReport {
        discarded,
        emitter_populations: pops,
        exited,
    })
}

/// Which observables to record and how often.
#[derive(Clone, Debug)]
pub struct ObserverSchedule {
    /// Heavy observables every `stride` steps (and at the last step).
    pub stride: usize,
    /// Emit a record for every step rather than only at the stride.
    pub every_step: bool,
    /// Emitter density matrix derived quantities.
    pub emitter_state: bool,
    pub in_out_entropy: bool,
    /// Total photon number and field profile.
    pub field: bool,
    /// Keep field profiles in the records at these completed-step counts.
    pub profile_steps: Vec<usize>,
    /// Survival probability of this emitter state (field in vacuum).
    pub survival_reference: Option<Vec<C64>>,
    /// Survival probability every step instead of at the stride.
    pub survival_every_step: bool,
}

impl ObserverSchedule {
    /// Every cheap scalar per step, heavy observables every `stride` steps.
    pub fn with_stride(stride: usize) -> Self {
        Self {
            stride: stride.max(1),
            every_step: true,
            emitter_state: false,
            in_out_entropy: false,
            field: false,
            profile_steps: Vec::new(),
            survival_reference: None,
            survival_every_step: false,
        }
    }

    pub fn all(stride: usize) -> Self {
        Self {
            emitter_state: true,
            in_out_entropy: true,
            field: true,
            ..Self::with_stride(stride)
        }
    }
}

/// A running simulation: state plus bookkeeping of output bins.
pub struct CollisionRun {
    params: ModelParams,
    layout: SiteLayout,
    gates: Vec<CollisionGate>,
    state: MatrixProductState,
    steps_done: usize,
    exited: Vec<BinOccupation>,
    last_report: Option<StepReport>,
}

impl CollisionRun {
    pub fn new(params: ModelParams, initial: MatrixProductState) -> CollisionResult<Self> {
        let layout = build_layout(&params)?;
        if initial.kinds() != layout.initial_kinds() {
            return Err(CollisionError::Layout {
                step: 0,
                msg: "initial state does not match the layout".into(),
            });
        }
        let gates = build_gates(&params)?;
        Ok(Self {
            params,
            layout,
            gates,
            state: initial,
            steps_done: 0,
            exited: Vec::new(),
            last_report: None,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn layout(&self) -> &SiteLayout {
        &self.layout
    }

    pub fn gates(&self) -> &[CollisionGate] {
        &self.gates
    }

    pub fn state(&self) -> &MatrixProductState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut MatrixProductState {
        &mut self.state
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn time(&self) -> f64 {
        self.steps_done as f64 * self.params.dt()
    }

    /// Occupations of bins that have left the emitter region, in exit order.
    pub fn exited_bins(&self) -> &[BinOccupation] {
        &self.exited
    }

    pub fn last_report(&self) -> Option<&StepReport> {
        self.last_report.as_ref()
    }

    /// Advance one step.
    pub fn advance(&mut self) -> CollisionResult<&StepReport> {
        let policy = self.params.policy;
        let report = step(&mut self.state, &self.layout, &self.gates, self.steps_done, &policy)?;
        if let Some(occ) = &report.exited {
            self.exited.push(occ.clone());
        }
        self.steps_done += 1;
        self.last_report = Some(report);
        Ok(self.last_report.as_ref().expect("just set"))
    }

    /// Occupations of bins still between the emitters.
    pub fn in_flight_bins(&mut self) -> CollisionResult<Vec<BinOccupation>> {
        let s1 = position(&self.state, SiteKind::EmitterPair { pair: 1 }, self.steps_done)?;
        let mut out = Vec::new();
        for i in s1..self.state.len() {
            if !self.state.kind(i).is_emitter() {
                out.push(bin_occupation(&mut self.state, i)?);
            }
        }
        Ok(out)
    }

    /// Every bin created so far.
    pub fn all_bins(&mut self) -> CollisionResult<Vec<BinOccupation>> {
        let mut all = self.exited.clone();
        all.extend(self.in_flight_bins()?);
        Ok(all)
    }

    /// Field snapshot at the current time.
    pub fn field_profile(&mut self) -> CollisionResult<FieldProfile> {
        let bins = self.all_bins()?;
        Ok(field_energy_density(&bins, &self.layout, self.steps_done))
    }

    /// Emitter excitation number from local densities.
    pub fn excitation_number(&mut self) -> CollisionResult<f64> {
        Ok(crate::observables::excitation_number(&mut self.state)?)
    }

    /// Record of the current time with the observables selected by
    /// `schedule` for a heavy sample (`heavy`) or only the cheap scalars.
    pub fn record(&mut self, schedule: &ObserverSchedule, heavy: bool) -> CollisionResult<TimeSeriesRecord> {
        let t = self.time();
        let n_exc = match &self.last_report {
            Some(r) => r.emitter_populations.iter().sum(),
            None => self.excitation_number()?,
        };
        let mut rec = TimeSeriesRecord {
            step: self.steps_done,
            t,
            gamma_t: self.params.gamma * t,
            n_exc,
            norm_sq: self.state.norm_sqr(),
            discarded: self.state.cumulative_discarded(),
            max_bond: self.state.max_bond_dim(),
            output_flux: self
                .last_report
                .as_ref()
                .and_then(|r| r.exited.as_ref())
                .map(|o| o.total_mean()),
            ..Default::default()
        };
        if let Some(reference) = &schedule.survival_reference {
            if heavy || schedule.survival_every_step {
                rec.survival = Some(survival_probability(&self.state, reference)?);
            }
        }
        if !heavy {
            return Ok(rec);
        }
        if schedule.emitter_state {
            let rho = self.state.emitter_density_matrix(&self.params.policy)?;
            fill_emitter_observables(&mut rec, &rho)?;
        }
        if schedule.in_out_entropy {
            rec.s_inout = Some(in_out_entropy(&mut self.state, &self.layout)?);
        }
        if schedule.field || schedule.profile_steps.contains(&self.steps_done) {
            let profile = self.field_profile()?;
            rec.n_photons = Some(profile.total_photons());
            if schedule.profile_steps.contains(&self.steps_done) {
                rec.profile = Some(profile);
            }
        }
        Ok(rec)
    }
}

/// Advance `initial` for `params.n_steps()` steps, recording observables.
pub fn run(
    params: &ModelParams,
    initial: MatrixProductState,
    schedule: &ObserverSchedule,
) -> CollisionResult<Vec<TimeSeriesRecord>> {
    let mut sim = CollisionRun::new(params.clone(), initial)?;
    let steps = params.n_steps();
    let stride = schedule.stride.max(1);
    let mut records = vec![sim.record(schedule, true)?];
    for k in 1..=steps {
        sim.advance()?;
        let heavy = k % stride == 0 || k == steps || schedule.profile_steps.contains(&k);
        if heavy || schedule.every_step {
            records.push(sim.record(schedule, heavy)?);
        }
    }
    attach_rates(&mut records);
    Ok(records)
}
