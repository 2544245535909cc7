//! Finite-state Markov channel: quantized SNR levels, the level transition
//! kernel, and per-slot Rayleigh channel draws.
//!
//! Each candidate's SNR level evolves as an independent first-order chain
//! sharing one [`TransitionMatrix`]. The level fixes that user's transmit
//! power-to-noise ratio; the fast-fading matrices stay unit variance and are
//! redrawn every slot.

use std::fmt::Write as _;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::linalg::ComplexMatrix;

/// Row-sum tolerance for transition kernels.
pub const ROW_SUM_TOL: f64 = 1e-12;

const STATIONARY_TOL: f64 = 1e-12;
const STATIONARY_MAX_ITER: usize = 1_000_000;

/// Partition of the received SNR axis into `H` intervals.
///
/// Level 0 is `(−∞, b_0]`, level `H−1` is `[b_{H−2}, +∞)`. The open-ended
/// levels are represented by a closed interval of `open_width_db` next to the
/// outermost boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrLevelSet {
    boundaries_db: Vec<f64>,
    open_width_db: f64,
}

impl SnrLevelSet {
    /// `boundaries_db` must be finite and strictly increasing, at least one
    /// entry. The open-ended levels borrow the mean interior width, or 5 dB
    /// when there is no interior level.
    pub fn new(boundaries_db: Vec<f64>) -> Result<Self> {
        if boundaries_db.is_empty() {
            return Err(invalid("an SNR level set needs at least 2 levels"));
        }
        if boundaries_db.iter().any(|b| !b.is_finite()) {
            return Err(invalid("SNR boundaries must be finite"));
        }
        if boundaries_db.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("SNR boundaries must be strictly increasing"));
        }
        let open_width_db = if boundaries_db.len() >= 2 {
            (boundaries_db[boundaries_db.len() - 1] - boundaries_db[0])
                / (boundaries_db.len() - 1) as f64
        } else {
            5.0
        };
        Ok(Self {
            boundaries_db,
            open_width_db,
        })
    }

    /// `levels` intervals with boundaries `first_db, first_db + width_db, …`.
    pub fn uniform(levels: usize, first_db: f64, width_db: f64) -> Result<Self> {
        if levels < 2 {
            return Err(invalid(format!("need at least 2 SNR levels, got {levels}")));
        }
        if !(width_db > 0.0) {
            return Err(invalid("SNR interval width must be positive"));
        }
        let boundaries = (0..levels - 1).map(|i| first_db + width_db * i as f64).collect();
        let mut set = Self::new(boundaries)?;
        set.open_width_db = width_db;
        Ok(set)
    }

    /// Ten 5 dB levels: `(−∞,5], [5,10], …, [40,45], [45,+∞)`.
    pub fn ten_level_default() -> Self {
        Self::uniform(10, 5.0, 5.0).expect("static level set is valid")
    }

    pub fn levels(&self) -> usize {
        self.boundaries_db.len() + 1
    }

    pub fn boundaries_db(&self) -> &[f64] {
        &self.boundaries_db
    }

    /// The raw interval of `level`, with infinite ends for the outer levels.
    pub fn interval_db(&self, level: usize) -> (f64, f64) {
        assert!(level < self.levels(), "SNR level {level} out of range");
        let lo = if level == 0 {
            f64::NEG_INFINITY
        } else {
            self.boundaries_db[level - 1]
        };
        let hi = if level == self.levels() - 1 {
            f64::INFINITY
        } else {
            self.boundaries_db[level]
        };
        (lo, hi)
    }

    /// Linear SNR represented by `level`: midpoint of its (clamped) dB interval.
    pub fn snr_to_linear(&self, level: usize) -> f64 {
        let (mut lo, mut hi) = self.interval_db(level);
        if lo.is_infinite() {
            lo = hi - self.open_width_db;
        }
        if hi.is_infinite() {
            hi = lo + self.open_width_db;
        }
        interval_midpoint_linear(lo, hi)
    }
}

/// `10^(m/10)` for the midpoint `m` of `[lo_db, hi_db]`.
pub fn interval_midpoint_linear(lo_db: f64, hi_db: f64) -> f64 {
    10f64.powf(0.5 * (lo_db + hi_db) / 10.0)
}

/// Row-stochastic `H x H` kernel over SNR levels.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    /// Kernel with self-transition `p_stay` where moving to an adjacent level
    /// is exactly twice as likely as moving to any non-adjacent level.
    ///
    /// Interior rows have two neighbours, so the base probability is
    /// `(1 − p_stay)/(H + 1)`; edge rows have one and use `(1 − p_stay)/H`.
    pub fn build(p_stay: f64, levels: usize) -> Result<Self> {
        if !(p_stay > 0.0 && p_stay <= 1.0) {
            return Err(invalid(format!("p_stay must lie in (0, 1], got {p_stay}")));
        }
        if levels < 2 {
            return Err(invalid(format!("need at least 2 levels, got {levels}")));
        }
        let h = levels;
        let mut entries = vec![0.0; h * h];
        for i in 0..h {
            let edge = i == 0 || i == h - 1;
            let base = if edge {
                (1.0 - p_stay) / h as f64
            } else {
                (1.0 - p_stay) / (h + 1) as f64
            };
            for j in 0..h {
                entries[i * h + j] = match i.abs_diff(j) {
                    0 => p_stay,
                    1 => 2.0 * base,
                    _ => base,
                };
            }
        }
        Ok(Self { n: h, entries })
    }

    pub fn levels(&self) -> usize {
        self.n
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries[from * self.n + to]
    }

    pub fn row(&self, from: usize) -> &[f64] {
        &self.entries[from * self.n..(from + 1) * self.n]
    }

    /// Draws the next level from row `level`.
    pub fn step<R: Rng + ?Sized>(&self, level: usize, rng: &mut R) -> usize {
        self.step_with_uniform(level, rng.random::<f64>())
    }

    /// Inverse-CDF step driven by a caller-supplied `u ∈ [0, 1)`.
    pub fn step_with_uniform(&self, level: usize, u: f64) -> usize {
        let row = self.row(level);
        let mut acc = 0.0;
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // rounding slack in the final cumulative sum
        row.iter().rposition(|&p| p > 0.0).unwrap_or(level)
    }

    /// `true` if every level can reach every other level.
    pub fn is_irreducible(&self) -> bool {
        let n = self.n;
        let reach_all = |transpose: bool| {
            let mut seen = vec![false; n];
            let mut stack = vec![0usize];
            seen[0] = true;
            while let Some(i) = stack.pop() {
                for j in 0..n {
                    let p = if transpose { self.get(j, i) } else { self.get(i, j) };
                    if p > 0.0 && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            seen.into_iter().all(|s| s)
        };
        reach_all(false) && reach_all(true)
    }

    /// Stationary distribution by power iteration from the uniform vector.
    pub fn stationary_distribution(&self) -> Result<Vec<f64>> {
        if !self.is_irreducible() {
            return Err(Error::ReducibleChain);
        }
        let n = self.n;
        let mut pi = vec![1.0 / n as f64; n];
        let mut next = vec![0.0; n];
        for _ in 0..STATIONARY_MAX_ITER {
            next.iter_mut().for_each(|x| *x = 0.0);
            for (i, &w) in pi.iter().enumerate() {
                for (j, x) in next.iter_mut().enumerate() {
                    *x += w * self.get(i, j);
                }
            }
            let total: f64 = next.iter().sum();
            next.iter_mut().for_each(|x| *x /= total);
            let diff = pi
                .iter()
                .zip(&next)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            std::mem::swap(&mut pi, &mut next);
            if diff < STATIONARY_TOL {
                return Ok(pi);
            }
        }
        Err(Error::NoConvergence(STATIONARY_MAX_ITER))
    }

    /// Row-major CSV, one kernel row per line, shortest round-trip decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|p| format!("{p:?}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

/// Every `H^{[kj]}` for one slot, `k` the receiver and `j` the transmitter.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    users: usize,
    n_t: usize,
    n_r: usize,
    slot: usize,
    matrices: Vec<ComplexMatrix>,
}

impl ChannelRealization {
    pub fn new(users: usize, matrices: Vec<ComplexMatrix>, slot: usize) -> Result<Self> {
        if users == 0 || matrices.len() != users * users {
            return Err(Error::DimensionMismatch(format!(
                "{} matrices for {users} users",
                matrices.len()
            )));
        }
        let (n_r, n_t) = matrices[0].shape();
        if matrices.iter().any(|m| m.shape() != (n_r, n_t)) {
            return Err(Error::DimensionMismatch("channel matrices differ in shape".into()));
        }
        Ok(Self {
            users,
            n_t,
            n_r,
            slot,
            matrices,
        })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn slot(&self) -> usize {
        self.slot
    }

    /// Channel from transmitter `tx` to receiver `rx`.
    pub fn link(&self, rx: usize, tx: usize) -> &ComplexMatrix {
        &self.matrices[rx * self.users + tx]
    }

    /// Every matrix multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrices: self.matrices.iter().map(|m| m.scale(factor)).collect(),
            ..self.clone()
        }
    }
}

/// Draws all `L x L` channel matrices with i.i.d. `CN(0, 1)` entries.
pub fn sample_channel_matrices<R: Rng + ?Sized>(
    users: usize,
    n_t: usize,
    n_r: usize,
    slot: usize,
    rng: &mut R,
) -> Result<ChannelRealization> {
    if users == 0 || n_t == 0 || n_r == 0 {
        return Err(invalid("channel dimensions must be at least 1"));
    }
    let matrices = (0..users * users)
        .map(|_| ComplexMatrix::random_gaussian(n_r, n_t, rng))
        .collect();
    ChannelRealization::new(users, matrices, slot)
}
