//! Nonuniform time meshes.
//!
//! A [`TimeMesh`] stores the nodes `0 = t_0 < t_1 < ... < t_N`; steps and
//! ratios are derived on demand so they can never drift from the nodes.
//! Steps are indexed from 1 (`tau(k) = t_k - t_{k-1}`), matching the level
//! index used by the kernels and the stepper.

use std::io::Write;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::gamma;

#[derive(Debug, Clone, PartialEq)]
pub struct TimeMesh {
    nodes: Vec<f64>,
}

impl TimeMesh {
    /// Validates and wraps a node sequence.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        let mesh = Self { nodes };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Mesh holding only `t_0 = 0`; grown with [`TimeMesh::push_step`].
    pub fn origin() -> Self {
        Self { nodes: vec![0.0] }
    }

    pub fn uniform(t_end: f64, intervals: usize) -> Result<Self> {
        graded_mesh(t_end, intervals, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        match self.nodes.first() {
            Some(&t0) if t0 == 0.0 => {}
            Some(&t0) => return Err(Error::InvalidParameter(format!("t_0 must be 0, got {t0}"))),
            None => return Err(Error::InvalidParameter("mesh has no nodes".into())),
        }
        for (k, w) in self.nodes.windows(2).enumerate() {
            if !w[1].is_finite() || w[1] <= w[0] {
                return Err(Error::InvalidParameter(format!(
                    "nodes must be strictly increasing: t_{} = {} >= t_{} = {}",
                    k,
                    w[0],
                    k + 1,
                    w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn push_step(&mut self, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step must be positive, got {tau}"
            )));
        }
        let last = *self.nodes.last().expect("mesh always holds t_0");
        self.nodes.push(last + tau);
        Ok(())
    }

    /// Pushes a node given by its absolute time.
    pub fn push_node(&mut self, t: f64) -> Result<()> {
        let last = *self.nodes.last().expect("mesh always holds t_0");
        if !(t > last && t.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "node {t} does not follow {last}"
            )));
        }
        self.nodes.push(t);
        Ok(())
    }

    /// Number of intervals `N`.
    pub fn len(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn t(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn t_end(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    /// Step `tau_k`, `1 <= k <= N`.
    pub fn tau(&self, k: usize) -> f64 {
        assert!(k >= 1 && k <= self.len(), "step index {k} out of range");
        self.nodes[k] - self.nodes[k - 1]
    }

    pub fn steps(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Ratio `r_k = tau_k / tau_{k-1}`, `2 <= k <= N`.
    pub fn ratio(&self, k: usize) -> f64 {
        self.tau(k) / self.tau(k - 1)
    }

    pub fn tau_max(&self) -> f64 {
        self.steps().into_iter().fold(0.0, f64::max)
    }

    pub fn tau_min(&self) -> f64 {
        self.steps().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// `min{1, min_k r_k}`.
    pub fn r_star(&self) -> f64 {
        (2..=self.len()).map(|k| self.ratio(k)).fold(1.0, f64::min)
    }

    /// Writes `k,t_k,tau_k,r_k`; undefined entries are left empty.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "k,t_k,tau_k,r_k")?;
        for k in 0..=self.len() {
            let tau = if k >= 1 {
                crate::io::fmt_f64(self.tau(k))
            } else {
                String::new()
            };
            let r = if k >= 2 {
                crate::io::fmt_f64(self.ratio(k))
            } else {
                String::new()
            };
            writeln!(out, "{k},{},{tau},{r}", crate::io::fmt_f64(self.t(k)))?;
        }
        Ok(())
    }
}

/// `t_k = T0 (k/N0)^gamma`, `k = 0..N0`.
pub fn graded_mesh(t_end: f64, intervals: usize, grading: f64) -> Result<TimeMesh> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "end time must be positive, got {t_end}"
        )));
    }
    if intervals < 1 {
        return Err(Error::InvalidParameter(
            "graded mesh needs at least one interval".into(),
        ));
    }
    if !(grading >= 1.0 && grading.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "grading must be >= 1, got {grading}"
        )));
    }
    let n0 = intervals as f64;
    let mut nodes: Vec<f64> = (0..=intervals)
        .map(|k| t_end * (k as f64 / n0).powf(grading))
        .collect();
    nodes[intervals] = t_end;
    TimeMesh::from_nodes(nodes)
}

/// Split point and interval counts of the two-part mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPartLayout {
    pub t_split: f64,
    pub graded_intervals: usize,
    pub random_intervals: usize,
}

pub fn two_part_layout(t_end: f64, intervals: usize, grading: f64) -> Result<TwoPartLayout> {
    if !(t_end > 0.0 && grading >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "two-part mesh needs T > 0 and gamma >= 1 (T = {t_end}, gamma = {grading})"
        )));
    }
    let t_split = (1.0 / grading).min(t_end);
    let graded = (intervals as f64 / (t_end + 1.0 - 1.0 / grading)).floor() as usize;
    if graded < 1 {
        return Err(Error::InvalidParameter(format!(
            "N = {intervals} leaves no graded intervals"
        )));
    }
    if graded >= intervals {
        return Err(Error::InvalidParameter(format!(
            "N = {intervals} leaves no random intervals (N0 = {graded})"
        )));
    }
    Ok(TwoPartLayout {
        t_split,
        graded_intervals: graded,
        random_intervals: intervals - graded,
    })
}

/// Uniform variate in the open interval (0, 1): the top 53 bits of a
/// ChaCha8 output word, redrawn on zero.
pub(crate) fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if x > 0.0 {
            return x;
        }
    }
}

/// Graded mesh on `[0, T0]` followed by `N1` random steps on `[T0, T]`.
///
/// The random steps are `(T - T0) eps_k / S1` with `eps_k` drawn from
/// ChaCha8 seeded by `seed` (via `seed_from_u64`).
pub fn two_part_mesh(t_end: f64, intervals: usize, grading: f64, seed: u64) -> Result<TimeMesh> {
    let layout = two_part_layout(t_end, intervals, grading)?;
    let graded = graded_mesh(layout.t_split, layout.graded_intervals, grading)?;
    let mut nodes = graded.nodes;

    if layout.t_split < t_end {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps: Vec<f64> = (0..layout.random_intervals)
            .map(|_| open_unit(&mut rng))
            .collect();
        let total: f64 = eps.iter().sum();
        let span = t_end - layout.t_split;
        let mut acc = 0.0;
        for (k, e) in eps.iter().enumerate() {
            acc += e;
            let t = if k + 1 == eps.len() {
                t_end
            } else {
                layout.t_split + span * (acc / total)
            };
            nodes.push(t);
        }
    } else {
        return Err(Error::InvalidParameter(format!(
            "T = {t_end} <= 1/gamma leaves no random part"
        )));
    }
    TimeMesh::from_nodes(nodes)
}

/// Graded warm-up on `[0, T0]`, `T0 = min(1/gamma, T)`, followed by
/// equal steps as close to `tau` as divides `T - T0`.
pub fn warmup_uniform_mesh(
    t_end: f64,
    warmup_intervals: usize,
    grading: f64,
    tau: f64,
) -> Result<TimeMesh> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "tau must be positive, got {tau}"
        )));
    }
    let t_split = (1.0 / grading).min(t_end);
    let mut mesh = graded_mesh(t_split, warmup_intervals, grading)?;
    let span = t_end - t_split;
    if span > 0.0 {
        let count = ((span / tau).round() as usize).max(1);
        for k in 1..=count {
            let t = if k == count {
                t_end
            } else {
                t_split + span * (k as f64 / count as f64)
            };
            mesh.push_node(t)?;
        }
    }
    Ok(mesh)
}

/// `max{tau_min, tau_max / sqrt(1 + eta |du/dt|^2)}`.
pub fn adaptive_next_step(du_rate_norm: f64, eta: f64, tau_max: f64, tau_min: f64) -> Result<f64> {
    if !(tau_min > 0.0 && tau_min <= tau_max) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < tau_min <= tau_max (tau_min = {tau_min}, tau_max = {tau_max})"
        )));
    }
    if !(eta >= 0.0) || !(du_rate_norm >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eta and the rate norm must be non-negative (eta = {eta}, rate = {du_rate_norm})"
        )));
    }
    let scaled = tau_max / (1.0 + eta * du_rate_norm * du_rate_norm).sqrt();
    Ok(scaled.max(tau_min).min(tau_max))
}

/// `(3 / (Gamma(2-alpha) (4g^2 + 3 eps)))^(1/alpha)`: steps at or below this
/// keep the scheme uniquely solvable and energy dissipative.
pub fn max_step_bound(alpha: f64, g: f64, epsilon: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0,1], got {alpha}"
        )));
    }
    if !(g >= 0.0) || !(epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "need g >= 0 and epsilon > 0 (g = {g}, epsilon = {epsilon})"
        )));
    }
    let base = 3.0 / (gamma(2.0 - alpha) * (4.0 * g * g + 3.0 * epsilon));
    Ok(base.powf(1.0 / alpha))
}

/// Outcome of comparing a mesh against the step bound.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCheck {
    pub tau_max: f64,
    pub tau_star: f64,
    pub violations: usize,
}

impl StepCheck {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

/// Counts steps above `tau_star`. In strict mode any violation is an error,
/// otherwise a warning is logged and the check result returned.
pub fn check_step_restriction(mesh: &TimeMesh, tau_star: f64, strict: bool) -> Result<StepCheck> {
    let steps = mesh.steps();
    let violations = steps.iter().filter(|&&t| t > tau_star).count();
    let tau_max = steps.iter().copied().fold(0.0, f64::max);
    if violations > 0 {
        if strict {
            return Err(Error::StepRestriction {
                tau: tau_max,
                tau_star,
            });
        }
        log::warn!(
            "{violations} step(s) exceed the solvability bound tau* = {tau_star:e} (max step {tau_max:e})"
        );
    }
    Ok(StepCheck {
        tau_max,
        tau_star,
        violations,
    })
}
