//! Interference alignment for an active subset of users.
//!
//! The solver alternates between the forward network, where every receiver
//! picks the `d`-dimensional subspace carrying the least interference, and
//! the reciprocal network (channels `H^{[jk]†}`), where every transmitter
//! does the same. Each half-step minimises the same leakage objective over
//! one block of variables, so leakage never increases.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::fsmc::ChannelRealization;
use crate::linalg::{
    orthonormal_complement, singular_values, smallest_eigvecs, solve_least_squares, ComplexMatrix,
};

/// Smallest singular value treated as full rank by [`desired_rank_check`].
pub const RANK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IaConfig {
    /// Streams per user.
    pub streams: usize,
    pub max_iter: usize,
    /// Stop once leakage falls below this.
    pub tol: f64,
}

impl Default for IaConfig {
    fn default() -> Self {
        Self {
            streams: 1,
            max_iter: 5000,
            tol: 1e-8,
        }
    }
}

impl IaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.streams == 0 {
            return Err(invalid("IA needs at least one stream per user"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("IA tolerance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(invalid("IA iteration cap must be at least 1"));
        }
        Ok(())
    }
}

/// Precoders and combiners for one active set.
#[derive(Debug, Clone)]
pub struct IaSolution {
    pub active_set: Vec<usize>,
    /// `V^{[k]}`, `N_t x d`, in `active_set` order.
    pub precoders: Vec<ComplexMatrix>,
    /// `U^{[k]}`, `N_r x d`, in `active_set` order.
    pub combiners: Vec<ComplexMatrix>,
    pub leakage: f64,
    pub iterations_used: usize,
    /// Leakage after each full iteration.
    pub leakage_history: Vec<f64>,
}

impl IaSolution {
    /// Position of `user` inside `active_set`.
    pub fn position(&self, user: usize) -> Option<usize> {
        self.active_set.iter().position(|&u| u == user)
    }

    pub fn precoder(&self, user: usize) -> Option<&ComplexMatrix> {
        self.position(user).map(|i| &self.precoders[i])
    }

    pub fn combiner(&self, user: usize) -> Option<&ComplexMatrix> {
        self.position(user).map(|i| &self.combiners[i])
    }

    /// `‖U^{[rx]†} H^{[rx,tx]} V^{[tx]}‖_F²` for two active users.
    pub fn link_gain(&self, channels: &ChannelRealization, rx: usize, tx: usize) -> f64 {
        let u = self.combiner(rx).expect("receiver not active");
        let v = self.precoder(tx).expect("transmitter not active");
        (&(&u.adjoint() * channels.link(rx, tx)) * v).frobenius_norm_sqr()
    }
}

/// IA is feasible when `N_t + N_r ≥ d (n_active + 1)`.
pub fn feasibility(n_t: usize, n_r: usize, streams: usize, n_active: usize) -> bool {
    n_t + n_r >= streams * (n_active + 1)
}

fn validate_active_set(channels: &ChannelRealization, active_set: &[usize], d: usize) -> Result<()> {
    if active_set.is_empty() {
        return Err(invalid("active set is empty"));
    }
    for (i, &u) in active_set.iter().enumerate() {
        if u >= channels.users() {
            return Err(Error::DimensionMismatch(format!(
                "user {u} outside a {}-user channel",
                channels.users()
            )));
        }
        if active_set[..i].contains(&u) {
            return Err(invalid(format!("user {u} listed twice in the active set")));
        }
    }
    if d > channels.n_t() || d > channels.n_r() {
        return Err(Error::DimensionMismatch(format!(
            "{d} streams exceed antenna counts {}x{}",
            channels.n_t(),
            channels.n_r()
        )));
    }
    Ok(())
}

/// Interference covariance seen at receiver `k`:
/// `Σ_{j≠k} H^{[kj]} V^{[j]} V^{[j]†} H^{[kj]†}`.
fn receive_covariance(
    channels: &ChannelRealization,
    active_set: &[usize],
    precoders: &[ComplexMatrix],
    k: usize,
) -> ComplexMatrix {
    let rx = active_set[k];
    let mut q = ComplexMatrix::zeros(channels.n_r(), channels.n_r());
    for (j, &tx) in active_set.iter().enumerate() {
        if j == k {
            continue;
        }
        let w = channels.link(rx, tx) * &precoders[j];
        q = q.add(&(&w * &w.adjoint()));
    }
    q
}

/// Reciprocal-network covariance at transmitter `j`:
/// `Σ_{k≠j} H^{[kj]†} U^{[k]} U^{[k]†} H^{[kj]}`.
fn transmit_covariance(
    channels: &ChannelRealization,
    active_set: &[usize],
    combiners: &[ComplexMatrix],
    j: usize,
) -> ComplexMatrix {
    let tx = active_set[j];
    let mut q = ComplexMatrix::zeros(channels.n_t(), channels.n_t());
    for (k, &rx) in active_set.iter().enumerate() {
        if k == j {
            continue;
        }
        let w = &channels.link(rx, tx).adjoint() * &combiners[k];
        q = q.add(&(&w * &w.adjoint()));
    }
    q
}

fn total_leakage(
    channels: &ChannelRealization,
    active_set: &[usize],
    precoders: &[ComplexMatrix],
    combiners: &[ComplexMatrix],
) -> f64 {
    let mut sum = 0.0;
    for (k, &rx) in active_set.iter().enumerate() {
        let uh = combiners[k].adjoint();
        for (j, &tx) in active_set.iter().enumerate() {
            if j != k {
                sum += (&(&uh * channels.link(rx, tx)) * &precoders[j]).frobenius_norm_sqr();
            }
        }
    }
    sum
}

/// Alternating leakage minimisation over the active users.
///
/// Runs until leakage drops below `cfg.tol` or `cfg.max_iter` iterations
/// pass. Infeasible sets are not rejected; the residual leakage is returned.
///
/// For single-stream users a Gauss-Newton step on the cross-link residuals
/// `u_k† H^{[kj]} v_j` is tried after a few sweeps; it is kept only when it
/// lowers leakage, otherwise that iteration is an ordinary alternating sweep.
pub fn solve_ia<R: Rng + ?Sized>(
    channels: &ChannelRealization,
    active_set: &[usize],
    cfg: &IaConfig,
    rng: &mut R,
) -> Result<IaSolution> {
    cfg.validate()?;
    let d = cfg.streams;
    validate_active_set(channels, active_set, d)?;

    let mut precoders: Vec<ComplexMatrix> = active_set
        .iter()
        .map(|_| ComplexMatrix::random_orthonormal(channels.n_t(), d, rng))
        .collect();
    let mut combiners: Vec<ComplexMatrix> =
        vec![ComplexMatrix::zeros(channels.n_r(), d); active_set.len()];
    let mut history: Vec<f64> = Vec::new();
    let newton_capable = d == 1 && active_set.len() >= 3;
    let mut newton_wait = NEWTON_WARMUP;

    for _ in 0..cfg.max_iter {
        let current = history.last().copied().unwrap_or(f64::INFINITY);
        let mut leak = None;
        if newton_capable && newton_wait == 0 {
            match newton_step(channels, active_set, &precoders, &combiners) {
                Some((v, u, l)) if l < current => {
                    precoders = v;
                    combiners = u;
                    leak = Some(l);
                }
                _ => newton_wait = NEWTON_BACKOFF,
            }
        } else {
            newton_wait = newton_wait.saturating_sub(1);
        }
        let leak = match leak {
            Some(l) => l,
            None => {
                alternating_sweep(channels, active_set, &mut precoders, &mut combiners, d)?;
                total_leakage(channels, active_set, &precoders, &combiners)
            }
        };
        history.push(leak);
        if leak < cfg.tol {
            break;
        }
    }

    Ok(IaSolution {
        active_set: active_set.to_vec(),
        leakage: *history.last().expect("at least one iteration"),
        iterations_used: history.len(),
        leakage_history: history,
        precoders,
        combiners,
    })
}

/// Alternating sweeps before the first Newton attempt.
const NEWTON_WARMUP: usize = 8;
/// Alternating sweeps after a rejected Newton attempt.
const NEWTON_BACKOFF: usize = 4;
/// Step halvings tried before a Newton attempt is abandoned.
const NEWTON_BACKTRACK: usize = 4;

fn alternating_sweep(
    channels: &ChannelRealization,
    active_set: &[usize],
    precoders: &mut [ComplexMatrix],
    combiners: &mut [ComplexMatrix],
    d: usize,
) -> Result<()> {
    for (k, slot) in combiners.iter_mut().enumerate() {
        let q = receive_covariance(channels, active_set, precoders, k);
        *slot = smallest_eigvecs(&q, d)?;
    }
    for (j, slot) in precoders.iter_mut().enumerate() {
        let q = transmit_covariance(channels, active_set, combiners, j);
        *slot = smallest_eigvecs(&q, d)?;
    }
    Ok(())
}

/// One Gauss-Newton step for `d = 1`.
///
/// Each `u_k` moves inside its orthogonal complement as `u_k + B_k conj(w_k)`
/// and each `v_j` as `v_j + C_j b_j`. The residuals are holomorphic in
/// `(w, b)`, so the complex Jacobian gives the linearisation directly.
fn newton_step(
    channels: &ChannelRealization,
    active_set: &[usize],
    precoders: &[ComplexMatrix],
    combiners: &[ComplexMatrix],
) -> Option<(Vec<ComplexMatrix>, Vec<ComplexMatrix>, f64)> {
    let n = active_set.len();
    let du = channels.n_r() - 1;
    let dv = channels.n_t() - 1;
    let rx_basis: Vec<ComplexMatrix> = combiners.iter().map(orthonormal_complement).collect();
    let tx_basis: Vec<ComplexMatrix> = precoders.iter().map(orthonormal_complement).collect();
    let unknowns = n * (du + dv);
    let equations = n * (n - 1);

    let mut jac = ComplexMatrix::zeros(equations, unknowns);
    let mut rhs = Vec::with_capacity(equations);
    let mut row = 0;
    for (k, &rx) in active_set.iter().enumerate() {
        let uh = combiners[k].adjoint();
        let bh = rx_basis[k].adjoint();
        for (j, &tx) in active_set.iter().enumerate() {
            if j == k {
                continue;
            }
            let h = channels.link(rx, tx);
            let hv = h * &precoders[j];
            rhs.push(-(&uh * &hv)[(0, 0)]);
            let dw = &bh * &hv;
            for c in 0..du {
                jac[(row, k * du + c)] = dw[(c, 0)];
            }
            let db = &(&uh * h) * &tx_basis[j];
            for c in 0..dv {
                jac[(row, n * du + j * dv + c)] = db[(0, c)];
            }
            row += 1;
        }
    }
    let step = solve_least_squares(&jac, &rhs)?;

    let current = total_leakage(channels, active_set, precoders, combiners);
    let mut best: Option<(Vec<ComplexMatrix>, Vec<ComplexMatrix>, f64)> = None;
    let mut scale = 1.0;
    for _ in 0..NEWTON_BACKTRACK {
        let scaled: Vec<_> = step.iter().map(|z| z * scale).collect();
        if let Some(cand) = apply_newton_step(
            channels,
            active_set,
            precoders,
            combiners,
            &rx_basis,
            &tx_basis,
            &scaled,
        ) {
            if best.as_ref().is_none_or(|b| cand.2 < b.2) {
                best = Some(cand);
            }
            if best.as_ref().is_some_and(|b| b.2 < current) {
                break;
            }
        }
        scale *= 0.5;
    }
    best
}

#[allow(clippy::too_many_arguments)]
fn apply_newton_step(
    channels: &ChannelRealization,
    active_set: &[usize],
    precoders: &[ComplexMatrix],
    combiners: &[ComplexMatrix],
    rx_basis: &[ComplexMatrix],
    tx_basis: &[ComplexMatrix],
    step: &[Complex64],
) -> Option<(Vec<ComplexMatrix>, Vec<ComplexMatrix>, f64)> {
    let n = active_set.len();
    let du = channels.n_r() - 1;
    let dv = channels.n_t() - 1;
    let normalize = |m: ComplexMatrix| {
        let norm = m.frobenius_norm_sqr().sqrt();
        m.scale(1.0 / norm)
    };
    let combiners: Vec<ComplexMatrix> = (0..n)
        .map(|k| {
            let w: Vec<_> = step[k * du..(k + 1) * du].iter().map(|z| z.conj()).collect();
            normalize(combiners[k].add(&(&rx_basis[k] * &ComplexMatrix::column(&w))))
        })
        .collect();
    let precoders: Vec<ComplexMatrix> = (0..n)
        .map(|j| {
            let off = n * du + j * dv;
            let b = ComplexMatrix::column(&step[off..off + dv]);
            normalize(precoders[j].add(&(&tx_basis[j] * &b)))
        })
        .collect();
    if !precoders.iter().chain(&combiners).all(ComplexMatrix::is_finite) {
        return None;
    }
    let leak = total_leakage(channels, active_set, &precoders, &combiners);
    Some((precoders, combiners, leak))
}

/// `Σ_k Σ_{j≠k} ‖U^{[k]†} H^{[kj]} V^{[j]}‖_F²` over the solution's active set.
pub fn leakage(channels: &ChannelRealization, solution: &IaSolution) -> f64 {
    total_leakage(
        channels,
        &solution.active_set,
        &solution.precoders,
        &solution.combiners,
    )
}

/// Per active user, whether `U^{[k]†} H^{[kk]} V^{[k]}` has full rank `d`.
pub fn desired_rank_check(solution: &IaSolution, channels: &ChannelRealization, d: usize) -> Vec<bool> {
    solution
        .active_set
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let m = &(&solution.combiners[i].adjoint() * channels.link(k, k)) * &solution.precoders[i];
            let sv = singular_values(&m);
            d >= 1 && sv.len() >= d && sv[d - 1] > RANK_TOL
        })
        .collect()
}

/// `|u† H v|²` for single-stream column vectors.
pub fn effective_gain(u: &ComplexMatrix, h: &ComplexMatrix, v: &ComplexMatrix) -> f64 {
    debug_assert_eq!(u.cols(), 1);
    debug_assert_eq!(v.cols(), 1);
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..h.rows() {
        let mut hv = Complex64::new(0.0, 0.0);
        for c in 0..h.cols() {
            hv += h[(r, c)] * v[(c, 0)];
        }
        acc += u[(r, 0)].conj() * hv;
    }
    acc.norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsmc::sample_channel_matrices;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Direct evaluation of every cross term `U^{[k]†} H^{[kj]} V^{[j]}`.
    fn residual_oracle(channels: &ChannelRealization, sol: &IaSolution) -> f64 {
        let mut worst: f64 = 0.0;
        for (k, &rx) in sol.active_set.iter().enumerate() {
            for (j, &tx) in sol.active_set.iter().enumerate() {
                if j == k {
                    continue;
                }
                let h = channels.link(rx, tx);
                let (u, v) = (&sol.combiners[k], &sol.precoders[j]);
                let mut s = c(0.0, 0.0);
                for r in 0..h.rows() {
                    for cc in 0..h.cols() {
                        s += u[(r, 0)].conj() * h[(r, cc)] * v[(cc, 0)];
                    }
                }
                worst = worst.max(s.norm());
            }
        }
        worst
    }

    #[test]
    fn feasibility_condition() {
        assert!(feasibility(3, 3, 1, 5));
        assert!(!feasibility(2, 2, 1, 5));
        assert!(!feasibility(3, 3, 1, 6));
        assert!(feasibility(3, 3, 1, 3));
    }

    #[test]
    fn single_user_has_no_leakage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = sample_channel_matrices(4, 3, 3, 0, &mut rng).unwrap();
        let sol = solve_ia(&h, &[2], &IaConfig::default(), &mut rng).unwrap();
        assert_eq!(sol.leakage, 0.0);
        assert_eq!(sol.iterations_used, 1);
        assert!(sol.precoders[0].orthonormality_defect() < 1e-10);
        assert!(sol.combiners[0].orthonormality_defect() < 1e-10);
        assert_eq!(leakage(&h, &sol), 0.0);
    }

    #[test]
    fn three_users_align() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = sample_channel_matrices(3, 3, 3, 0, &mut rng).unwrap();
        let cfg = IaConfig {
            max_iter: 1000,
            ..IaConfig::default()
        };
        let sol = solve_ia(&h, &[0, 1, 2], &cfg, &mut rng).unwrap();
        assert!(sol.leakage < 1e-6);
        assert!(residual_oracle(&h, &sol) < 1e-3);
        assert!(desired_rank_check(&sol, &h, 1).iter().all(|&ok| ok));
    }

    #[test]
    fn five_users_align_at_feasibility_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let h = sample_channel_matrices(5, 3, 3, 0, &mut rng).unwrap();
        let sol = solve_ia(&h, &[0, 1, 2, 3, 4], &IaConfig::default(), &mut rng).unwrap();
        assert!(sol.leakage < 1e-6, "leakage {}", sol.leakage);
        let oracle = residual_oracle(&h, &sol);
        assert!(oracle * oracle < 1e-6);
        for w in sol.leakage_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn errors_on_bad_active_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = sample_channel_matrices(3, 3, 3, 0, &mut rng).unwrap();
        let cfg = IaConfig::default();
        assert!(solve_ia(&h, &[], &cfg, &mut rng).is_err());
        assert!(matches!(
            solve_ia(&h, &[0, 5], &cfg, &mut rng),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(solve_ia(&h, &[1, 1], &cfg, &mut rng).is_err());
        let wide = IaConfig {
            streams: 4,
            ..cfg
        };
        assert!(matches!(
            solve_ia(&h, &[0, 1], &wide, &mut rng),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn leakage_zero_when_combiners_avoid_known_interference() {
        // Two users; interference at each receiver occupies span(e_0), and the
        // combiners live in the orthogonal complement.
        let e = |i: usize| {
            let mut v = vec![c(0.0, 0.0); 3];
            v[i] = c(1.0, 0.0);
            ComplexMatrix::column(&v)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut mats = Vec::new();
        for rx in 0..2 {
            for tx in 0..2 {
                if rx == tx {
                    mats.push(ComplexMatrix::random_gaussian(3, 3, &mut rng));
                } else {
                    // rank one, column space span(e_0)
                    let row = ComplexMatrix::random_gaussian(1, 3, &mut rng);
                    mats.push(&e(0) * &row);
                }
            }
        }
        let h = ChannelRealization::new(2, mats, 0).unwrap();
        let sol = IaSolution {
            active_set: vec![0, 1],
            precoders: vec![e(1), e(2)],
            combiners: vec![e(1), e(2)],
            leakage: 0.0,
            iterations_used: 0,
            leakage_history: vec![],
        };
        assert!(leakage(&h, &sol) < 1e-12);
    }

    #[test]
    fn random_filters_leak() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let h = sample_channel_matrices(3, 3, 3, 0, &mut rng).unwrap();
        let sol = IaSolution {
            active_set: vec![0, 1, 2],
            precoders: (0..3).map(|_| ComplexMatrix::random_orthonormal(3, 1, &mut rng)).collect(),
            combiners: (0..3).map(|_| ComplexMatrix::random_orthonormal(3, 1, &mut rng)).collect(),
            leakage: 0.0,
            iterations_used: 0,
            leakage_history: vec![],
        };
        assert!(leakage(&h, &sol) > 0.0);
    }

    #[test]
    fn rank_check_detects_null_space_precoder() {
        // H = diag(1, 1, 0): a precoder along e_2 is annihilated.
        let h_kk = ComplexMatrix::diag(&[1.0, 1.0, 0.0]);
        let h = ChannelRealization::new(1, vec![h_kk], 0).unwrap();
        let e2 = ComplexMatrix::column(&[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        let e0 = ComplexMatrix::column(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let sol = IaSolution {
            active_set: vec![0],
            precoders: vec![e2],
            combiners: vec![e0],
            leakage: 0.0,
            iterations_used: 1,
            leakage_history: vec![0.0],
        };
        assert_eq!(desired_rank_check(&sol, &h, 1), vec![false]);
    }

    #[test]
    fn rank_check_on_top_singular_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let hm = ComplexMatrix::random_gaussian(3, 3, &mut rng);
        // top right singular vector = top eigenvector of H†H; left = H v / ‖H v‖
        let eig = crate::linalg::hermitian_eigen(&(&hm.adjoint() * &hm)).unwrap();
        let v = eig.vectors.col(2);
        let hv = &hm * &v;
        let u = hv.scale(1.0 / hv.frobenius_norm_sqr().sqrt());
        let h = ChannelRealization::new(1, vec![hm], 0).unwrap();
        let sol = IaSolution {
            active_set: vec![0],
            precoders: vec![v.clone()],
            combiners: vec![u.clone()],
            leakage: 0.0,
            iterations_used: 1,
            leakage_history: vec![0.0],
        };
        assert_eq!(desired_rank_check(&sol, &h, 1), vec![true]);
        let gain = effective_gain(&u, h.link(0, 0), &v);
        assert!((gain - eig.values[2]).abs() < 1e-10);
    }

    #[test]
    fn effective_gain_basics() {
        let e0 = ComplexMatrix::column(&[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let e1 = ComplexMatrix::column(&[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let id = ComplexMatrix::identity(3);
        assert_eq!(effective_gain(&e0, &id, &e0), 1.0);
        assert_eq!(effective_gain(&e1, &id, &e0), 0.0);
    }

    #[test]
    fn effective_gain_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = ComplexMatrix::random_gaussian(3, 3, &mut rng);
        let u = ComplexMatrix::random_gaussian(3, 1, &mut rng);
        let v = ComplexMatrix::random_gaussian(3, 1, &mut rng);
        // naive: Σ_r Σ_c conj(u_r) h_rc v_c, with explicit real/imag arithmetic
        let (mut re, mut im) = (0.0, 0.0);
        for r in 0..3 {
            for cc in 0..3 {
                let (ur, ui) = (u[(r, 0)].re, -u[(r, 0)].im);
                let (hr, hi) = (h[(r, cc)].re, h[(r, cc)].im);
                let (vr, vi) = (v[(cc, 0)].re, v[(cc, 0)].im);
                let (pr, pi) = (ur * hr - ui * hi, ur * hi + ui * hr);
                re += pr * vr - pi * vi;
                im += pr * vi + pi * vr;
            }
        }
        let oracle = re * re + im * im;
        assert!((effective_gain(&u, &h, &v) - oracle).abs() < 1e-12 * oracle.max(1.0));
    }
}
