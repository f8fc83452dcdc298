//! Chain operations against dense state vectors.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wqed_core::tensor::hermitian_eigenvalues;
use wqed_core::{expm_hermitian_generator, ComplexTensor, MatrixProductState, SiteKind, TruncationPolicy, C64};

fn kinds(n: usize) -> Vec<SiteKind> {
    (0..n).map(|i| SiteKind::PhotonBin { bin: i as i64 }).collect()
}

fn random_unitary(dim: usize, rng: &mut ChaCha8Rng) -> ComplexTensor {
    let a = ComplexTensor::from_fn(vec![dim, dim], |_| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
    .unwrap();
    let ah = a.adjoint().unwrap();
    let h = ComplexTensor::from_fn(vec![dim, dim], |ix| (a.get(ix) + ah.get(ix)) * 0.5).unwrap();
    expm_hermitian_generator(&h).unwrap()
}

/// Apply `gate` to `targets` of a dense vector over `dims` (site 0 most
/// significant; first target most significant in the gate).
fn dense_apply(v: &[C64], dims: &[usize], gate: &ComplexTensor, targets: &[usize]) -> Vec<C64> {
    let n = dims.len();
    let mut strides = vec![1usize; n];
    for i in (0..n - 1).rev() {
        strides[i] = strides[i + 1] * dims[i + 1];
    }
    let gdim: usize = targets.iter().map(|&t| dims[t]).product();
    let mut out = vec![C64::new(0.0, 0.0); v.len()];
    for (idx, &amp) in v.iter().enumerate() {
        if amp.norm() == 0.0 {
            continue;
        }
        let mut sub = 0;
        let mut base = idx;
        for &t in targets {
            let digit = (idx / strides[t]) % dims[t];
            sub = sub * dims[t] + digit;
            base -= digit * strides[t];
        }
        for row in 0..gdim {
            let g = gate.get(&[row, sub]);
            if g.norm() == 0.0 {
                continue;
            }
            let mut rem = row;
            let mut j = base;
            for &t in targets.iter().rev() {
                j += (rem % dims[t]) * strides[t];
                rem /= dims[t];
            }
            out[j] += g * amp;
        }
    }
    out
}

fn fidelity(a: &[C64], b: &[C64]) -> f64 {
    let ov: C64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    let nb: f64 = b.iter().map(|z| z.norm_sqr()).sum();
    ov.norm_sqr() / (na * nb)
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Entangled chain built by random two-site gates, with its dense image.
fn random_chain(dims: &[usize], layers: usize, seed: u64) -> (MatrixProductState, Vec<C64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locals: Vec<Vec<C64>> = dims
        .iter()
        .map(|&d| {
            let mut v = vec![C64::new(0.0, 0.0); d];
            v[rng.random_range(0..d)] = C64::new(1.0, 0.0);
            v
        })
        .collect();
    let mut mps = MatrixProductState::product_state(&locals, kinds(dims.len())).unwrap();
    let mut dense = mps.to_dense().unwrap();
    let exact = TruncationPolicy::exact();
    for layer in 0..layers {
        for i in (layer % 2..dims.len() - 1).step_by(2) {
            let u = random_unitary(dims[i] * dims[i + 1], &mut rng);
            mps.apply_gate_adjacent(&u, i, 2, &exact).unwrap();
            dense = dense_apply(&dense, dims, &u, &[i, i + 1]);
        }
    }
    (mps, dense)
}

/// Reduced density matrix of sites `0..cut` from a dense vector.
fn dense_left_rho(v: &[C64], dims: &[usize], cut: usize) -> ComplexTensor {
    let dl: usize = dims[..cut].iter().product();
    let dr = v.len() / dl;
    ComplexTensor::from_fn(vec![dl, dl], |ix| {
        (0..dr).map(|k| v[ix[0] * dr + k] * v[ix[1] * dr + k].conj()).sum()
    })
    .unwrap()
}

fn dense_entropy(v: &[C64], dims: &[usize], cut: usize) -> f64 {
    hermitian_eigenvalues(&dense_left_rho(v, dims, cut))
        .unwrap()
        .into_iter()
        .filter(|&p| p > 1e-16)
        .map(|p| -p * p.log2())
        .sum()
}

#[test]
fn three_site_gate_matches_dense_evolution() {
    let dims = [2, 4, 2, 2, 4, 2];
    let (mut mps, dense) = random_chain(&dims, 3, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let u = random_unitary(4 * 2 * 2, &mut rng);
    mps.apply_gate_adjacent(&u, 1, 3, &TruncationPolicy::exact()).unwrap();
    let want = dense_apply(&dense, &dims, &u, &[1, 2, 3]);
    assert!(max_diff(&mps.to_dense().unwrap(), &want) < 1e-8);
    assert!((mps.norm_sqr() - 1.0).abs() < 1e-10);
}

#[test]
fn routed_gate_on_distant_targets_matches_dense() {
    let dims = [2, 2, 4, 2, 2, 2, 4, 2, 2, 2];
    let (mut mps, dense) = random_chain(&dims, 2, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let targets = [7, 2, 4];
    let gdim: usize = targets.iter().map(|&t| dims[t]).product();
    let u = random_unitary(gdim, &mut rng);
    let kinds_before = mps.kinds().to_vec();
    mps.apply_gate_routed(&u, targets, &TruncationPolicy::exact()).unwrap();
    assert_eq!(mps.kinds(), &kinds_before[..]);
    let want = dense_apply(&dense, &dims, &u, &targets);
    assert!(max_diff(&mps.to_dense().unwrap(), &want) < 1e-8);
}

#[test]
fn routed_gate_on_product_state_is_exact() {
    let dims = [2, 3, 2, 2, 3, 2, 2];
    let (mut mps, dense) = random_chain(&dims, 0, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let targets = [0, 6, 3];
    let u = random_unitary(2 * 2 * 2, &mut rng);
    mps.apply_gate_routed(&u, targets, &TruncationPolicy::exact()).unwrap();
    let want = dense_apply(&dense, &dims, &u, &targets);
    assert!(max_diff(&mps.to_dense().unwrap(), &want) < 1e-12);
}

#[test]
fn adjacent_routing_is_plain_application() {
    let dims = [2, 2, 2, 2, 2];
    let (a, _) = random_chain(&dims, 2, 4);
    let mut b = a.clone();
    let mut c = a.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = random_unitary(8, &mut rng);
    b.apply_gate_routed(&u, [1, 2, 3], &TruncationPolicy::exact()).unwrap();
    c.apply_gate_adjacent(&u, 1, 3, &TruncationPolicy::exact()).unwrap();
    assert!(max_diff(&b.to_dense().unwrap(), &c.to_dense().unwrap()) < 1e-12);
}

#[test]
fn identity_gate_changes_nothing() {
    let dims = [2, 2, 2, 2, 2, 2];
    let (mut mps, dense) = random_chain(&dims, 3, 5);
    let id = ComplexTensor::identity(8).unwrap();
    let w = mps.apply_gate_routed(&id, [0, 5, 2], &TruncationPolicy::exact()).unwrap();
    assert!(w < 1e-28);
    assert!(max_diff(&mps.to_dense().unwrap(), &dense) < 1e-12);
}

#[test]
fn swap_permutes_dense_amplitudes() {
    let dims = [2, 3, 2];
    let (mut mps, dense) = random_chain(&dims, 2, 6);
    mps.swap_adjacent(0, &TruncationPolicy::exact()).unwrap();
    let swapped = mps.to_dense().unwrap();
    for a in 0..2 {
        for b in 0..3 {
            for c in 0..2 {
                let before = dense[(a * 3 + b) * 2 + c];
                let after = swapped[(b * 2 + a) * 2 + c];
                assert!((before - after).norm() < 1e-12);
            }
        }
    }
    assert_eq!(mps.phys_dims(), vec![3, 2, 2]);
}

#[test]
fn bond_entropies_match_dense_partial_traces() {
    let dims = [2, 2, 2, 2, 2, 2];
    let (mut mps, dense) = random_chain(&dims, 4, 7);
    for bond in 0..dims.len() - 1 {
        let s = mps.bond_entropy(bond).unwrap();
        assert!((s - dense_entropy(&dense, &dims, bond + 1)).abs() < 1e-8, "bond {bond}");
    }
}

#[test]
fn bond_entropy_invariant_under_conjugation() {
    let dims = [2, 3, 2, 2, 3];
    let (mut mps, _) = random_chain(&dims, 3, 8);
    let sites: Vec<ComplexTensor> = (0..mps.len()).map(|i| mps.site(i).conj()).collect();
    let mut conj = MatrixProductState::from_sites(sites, mps.kinds().to_vec(), mps.center(), 0.0).unwrap();
    for b in 0..dims.len() - 1 {
        assert!((mps.bond_entropy(b).unwrap() - conj.bond_entropy(b).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn local_expectations_match_dense() {
    let dims = [2, 4, 2, 4, 2];
    let (mut mps, dense) = random_chain(&dims, 3, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for site in 0..dims.len() {
        let d = dims[site];
        let op = ComplexTensor::from_fn(vec![d, d], |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
        .unwrap();
        let got = mps.local_expectation(site, &op).unwrap();
        let applied = dense_apply(&dense, &dims, &op, &[site]);
        let want: C64 = dense.iter().zip(&applied).map(|(x, y)| x.conj() * y).sum();
        assert!((got - want).norm() < 1e-9, "site {site}");
    }
}

#[test]
fn number_operator_on_fock_one() {
    let kinds = vec![SiteKind::PhotonBin { bin: 0 }];
    let one = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
    let mut mps = MatrixProductState::product_state(&[one], kinds).unwrap();
    let num = ComplexTensor::from_fn(vec![2, 2], |ix| {
        if ix == [1, 1] { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }
    })
    .unwrap();
    assert!((mps.local_expectation(0, &num).unwrap() - 1.0).norm() < 1e-15);
}

#[test]
fn emitter_maximally_entangled_with_a_bin() {
    let kinds = vec![
        SiteKind::EmitterPair { pair: 1 },
        SiteKind::PhotonBin { bin: 0 },
        SiteKind::PhotonBin { bin: 1 },
    ];
    let zero = |d: usize| {
        let mut v = vec![C64::new(0.0, 0.0); d];
        v[0] = C64::new(1.0, 0.0);
        v
    };
    let mut mps = MatrixProductState::product_state(&[zero(4), zero(4), zero(4)], kinds).unwrap();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut u = ComplexTensor::identity(64).unwrap();
    // Rotate |gg, 0, 0> into |eg, 0, 1_R> halfway (indices 0 and 2*16 + 4).
    u.data_mut()[0] = C64::new(h, 0.0);
    u.data_mut()[36 * 64] = C64::new(h, 0.0);
    u.data_mut()[36 * 64 + 36] = C64::new(h, 0.0);
    u.data_mut()[36] = C64::new(-h, 0.0);
    assert!(u.unitarity_defect().unwrap() < 1e-14);
    mps.apply_gate_adjacent(&u, 0, 3, &TruncationPolicy::exact()).unwrap();
    let rho = mps.emitter_density_matrix(&TruncationPolicy::exact()).unwrap();
    // emitter 1 maximally mixed, emitter 2 in |g>
    assert!((rho.element(0, 0).re - 0.5).abs() < 1e-12);
    assert!((rho.element(2, 2).re - 0.5).abs() < 1e-12);
    assert!(rho.element(0, 2).norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn double_swap_is_identity(n in 3usize..8, i in 0usize..6, chi in 1usize..5, seed in any::<u64>()) {
        let i = i % (n - 1);
        let dims = vec![2; n];
        let (mut mps, dense) = random_chain(&dims, 3, seed);
        let policy = TruncationPolicy::new(chi, 0.0).unwrap();
        let w = mps.swap_adjacent(i, &policy).unwrap() + mps.swap_adjacent(i, &policy).unwrap();
        let f = fidelity(&dense, &mps.to_dense().unwrap());
        prop_assert!(f >= 1.0 - 2.0 * w - 1e-10, "fidelity {} discarded {}", f, w);
    }

    #[test]
    fn norm_never_drops_below_the_discarded_budget(n in 4usize..9, chi in 1usize..4, seed in any::<u64>()) {
        let dims = vec![2; n];
        let (mut mps, _) = random_chain(&dims, 0, seed);
        let policy = TruncationPolicy::new(chi, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..12 {
            let i = rng.random_range(0..n - 2);
            let u = random_unitary(8, &mut rng);
            let t = [i, rng.random_range(0..n), rng.random_range(0..n)];
            if t[0] == t[1] || t[0] == t[2] || t[1] == t[2] {
                mps.apply_gate_adjacent(&u, i, 3, &policy).unwrap();
            } else {
                mps.apply_gate_routed(&u, t, &policy).unwrap();
            }
            let norm = mps.norm_sqr();
            prop_assert!(norm >= 1.0 - mps.cumulative_discarded() - 1e-8);
            prop_assert!(norm <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn untruncated_gates_match_dense(n in 3usize..10, seed in any::<u64>()) {
        let dims = vec![2; n];
        let (mut mps, mut dense) = random_chain(&dims, 1, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        for _ in 0..4 {
            let mut t = [0usize; 3];
            t[0] = rng.random_range(0..n);
            t[1] = (t[0] + 1 + rng.random_range(0..n - 1)) % n;
            loop {
                t[2] = rng.random_range(0..n);
                if t[2] != t[0] && t[2] != t[1] { break; }
            }
            let u = random_unitary(8, &mut rng);
            mps.apply_gate_routed(&u, t, &TruncationPolicy::exact()).unwrap();
            dense = dense_apply(&dense, &dims, &u, &t);
        }
        prop_assert!(max_diff(&mps.to_dense().unwrap(), &dense) < 1e-8);
    }
}
