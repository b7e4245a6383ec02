//! Denoising-diffusion mathematics: noise schedules, forward corruption,
//! reverse transitions, the epsilon-prediction loss, and the sampling loop.
//!
//! Step indices are 1-based: t runs over 1..=T, and alpha_bar(0) = 1 so the
//! final reverse step is exactly deterministic. All randomness is supplied
//! by the caller, either as explicit noise arrays or a seeded generator.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("bad schedule range: {reason}")]
    BadRange { reason: String },
    #[error("shape mismatch: {context} ({left} vs {right})")]
    ShapeMismatch { context: &'static str, left: usize, right: usize },
    #[error("step {t} outside 1..={max}")]
    StepOutOfRange { t: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
}

/// Per-step variances and their cumulative products.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end` over `steps`.
    pub fn make(kind: ScheduleKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::BadRange { reason: "need at least one step".into() });
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::BadRange {
                reason: format!("betas must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"),
            });
        }
        let ScheduleKind::Linear = kind;
        let betas = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        Self::from_betas(betas)
    }

    /// Builds a schedule from explicit betas (the short inference grids).
    /// Betas must lie in (0, 1) and be non-decreasing.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, DiffusionError> {
        if betas.is_empty() {
            return Err(DiffusionError::BadRange { reason: "need at least one step".into() });
        }
        for w in betas.windows(2) {
            if w[1] < w[0] {
                return Err(DiffusionError::BadRange { reason: "betas must be non-decreasing".into() });
            }
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(DiffusionError::BadRange { reason: "betas must lie in (0, 1)".into() });
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        Ok(Self { betas, alphas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas; alpha_bar(0) is defined as 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    fn check_step(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.steps() {
            return Err(DiffusionError::StepOutOfRange { t, max: self.steps() });
        }
        Ok(())
    }

    /// Reverse-step variance (1 - alpha_bar(t-1)) / (1 - alpha_bar(t)) * beta_t.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    /// Training step whose alpha_bar is closest to `target`, used to align a
    /// short inference grid onto the training schedule's step embedding.
    pub fn nearest_step_by_alpha_bar(&self, target: f64) -> usize {
        let mut best = 1;
        let mut best_err = f64::INFINITY;
        for t in 1..=self.steps() {
            let err = (self.alpha_bar(t) - target).abs();
            if err < best_err {
                best_err = err;
                best = t;
            }
        }
        best
    }
}

/// A latent sample z_t at diffusion step t, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub z: Vec<Vec<f64>>,
    pub t: usize,
}

fn check_same_shape(a: &[Vec<f64>], b: &[Vec<f64>], context: &'static str) -> Result<(), DiffusionError> {
    if a.len() != b.len() {
        return Err(DiffusionError::ShapeMismatch { context, left: a.len(), right: b.len() });
    }
    for (x, y) in a.iter().zip(b) {
        if x.len() != y.len() {
            return Err(DiffusionError::ShapeMismatch { context, left: x.len(), right: y.len() });
        }
    }
    Ok(())
}

/// q(z_t | z_0): z_t = sqrt(alpha_bar_t) z_0 + sqrt(1 - alpha_bar_t) eps.
pub fn forward_sample(
    z0: &[Vec<f64>],
    t: usize,
    eps: &[Vec<f64>],
    schedule: &NoiseSchedule,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    schedule.check_step(t)?;
    check_same_shape(z0, eps, "forward_sample")?;
    let ab = schedule.alpha_bar(t);
    let (ks, kn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z0
        .iter()
        .zip(eps)
        .map(|(zc, ec)| zc.iter().zip(ec).map(|(z, e)| ks * z + kn * e).collect())
        .collect())
}

/// Exact algebraic inverse of [`forward_sample`].
pub fn recover_x0(
    z_t: &[Vec<f64>],
    t: usize,
    eps: &[Vec<f64>],
    schedule: &NoiseSchedule,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    schedule.check_step(t)?;
    check_same_shape(z_t, eps, "recover_x0")?;
    let ab = schedule.alpha_bar(t);
    let (ks, kn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(z_t
        .iter()
        .zip(eps)
        .map(|(zc, ec)| zc.iter().zip(ec).map(|(z, e)| (z - kn * e) / ks).collect())
        .collect())
}

/// Parameterized posterior mean:
/// mu = (z_t - beta_t / sqrt(1 - alpha_bar_t) * eps_pred) / sqrt(alpha_t).
pub fn posterior_mean(
    z_t: &[Vec<f64>],
    t: usize,
    eps_pred: &[Vec<f64>],
    schedule: &NoiseSchedule,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    schedule.check_step(t)?;
    check_same_shape(z_t, eps_pred, "posterior_mean")?;
    let k_eps = schedule.beta(t) / (1.0 - schedule.alpha_bar(t)).sqrt();
    let k = 1.0 / schedule.alpha(t).sqrt();
    Ok(z_t
        .iter()
        .zip(eps_pred)
        .map(|(zc, ec)| zc.iter().zip(ec).map(|(z, e)| k * (z - k_eps * e)).collect())
        .collect())
}

/// One reverse transition z_t -> z_{t-1}. The noise argument is ignored at
/// t = 1, where the variance is exactly zero.
pub fn reverse_step(
    z_t: &[Vec<f64>],
    t: usize,
    eps_pred: &[Vec<f64>],
    schedule: &NoiseSchedule,
    noise: Option<&[Vec<f64>]>,
) -> Result<Vec<Vec<f64>>, DiffusionError> {
    let mut out = posterior_mean(z_t, t, eps_pred, schedule)?;
    if t > 1 {
        if let Some(noise) = noise {
            check_same_shape(z_t, noise, "reverse_step noise")?;
            let sigma = schedule.posterior_variance(t).sqrt();
            for (oc, nc) in out.iter_mut().zip(noise) {
                for (o, n) in oc.iter_mut().zip(nc) {
                    *o += sigma * n;
                }
            }
        }
    }
    Ok(out)
}

/// Mean squared difference between the injected and predicted noise.
pub fn training_loss(eps: &[Vec<f64>], eps_pred: &[Vec<f64>]) -> Result<f64, DiffusionError> {
    check_same_shape(eps, eps_pred, "training_loss")?;
    let n: usize = eps.iter().map(|c| c.len()).sum();
    if n == 0 {
        return Ok(0.0);
    }
    let sum: f64 = eps
        .iter()
        .zip(eps_pred)
        .flat_map(|(ec, pc)| ec.iter().zip(pc).map(|(e, p)| (e - p) * (e - p)))
        .sum();
    Ok(sum / n as f64)
}

/// Loss plus its gradient with respect to the prediction:
/// d/d eps_pred mean((eps - eps_pred)^2) = 2 (eps_pred - eps) / N.
pub fn training_loss_and_grad(
    eps: &[Vec<f64>],
    eps_pred: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>), DiffusionError> {
    let loss = training_loss(eps, eps_pred)?;
    let n: usize = eps.iter().map(|c| c.len()).sum();
    let k = if n == 0 { 0.0 } else { 2.0 / n as f64 };
    let grad = eps
        .iter()
        .zip(eps_pred)
        .map(|(ec, pc)| ec.iter().zip(pc).map(|(e, p)| k * (p - e)).collect())
        .collect();
    Ok((loss, grad))
}

/// Draws a (channels, len) array of standard normal noise. The element
/// order (channel-major) is part of the reproducibility contract.
pub fn draw_noise<R: Rng>(rng: &mut R, channels: usize, len: usize) -> Vec<Vec<f64>> {
    (0..channels)
        .map(|_| (0..len).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Runs the full reverse process from a standard normal draw.
///
/// The denoiser is called with the current state and its step index in
/// `schedule`; the caller maps that index onto a training schedule when a
/// short inference grid is in use.
pub fn sample<R, D, E>(
    mut denoiser: D,
    schedule: &NoiseSchedule,
    channels: usize,
    len: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, E>
where
    R: Rng,
    D: FnMut(&DiffusionState) -> Result<Vec<Vec<f64>>, E>,
{
    let mut state = DiffusionState { z: draw_noise(rng, channels, len), t: schedule.steps() };
    while state.t >= 1 {
        let eps_pred = denoiser(&state)?;
        let noise = if state.t > 1 { Some(draw_noise(rng, channels, len)) } else { None };
        state.z = reverse_step(&state.z, state.t, &eps_pred, schedule, noise.as_deref())
            .expect("sampler invariants hold");
        state.t -= 1;
    }
    Ok(state.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_step() -> NoiseSchedule {
        NoiseSchedule::make(ScheduleKind::Linear, 2, 1e-4, 0.05).unwrap()
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::make(ScheduleKind::Linear, 1, 0.1, 0.1).unwrap();
        assert_abs_diff_eq!(s.alpha_bar(1), 0.9, epsilon = 1e-15);
    }

    #[test]
    fn two_step_alpha_bar() {
        let s = two_step();
        assert_abs_diff_eq!(s.alpha_bar(2), (1.0 - 1e-4) * 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(s.alpha_bar(2), 0.949905, epsilon = 1e-12);
    }

    #[test]
    fn bad_ranges_rejected() {
        assert!(NoiseSchedule::make(ScheduleKind::Linear, 2, 1e-4, 1.0).is_err());
        assert!(NoiseSchedule::make(ScheduleKind::Linear, 2, 0.0, 0.5).is_err());
        assert!(NoiseSchedule::make(ScheduleKind::Linear, 0, 1e-4, 0.5).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.2, 0.1]).is_err());
    }

    #[test]
    fn forward_noiseless_branch() {
        let s = two_step();
        let z0 = vec![vec![1.0, -2.0]];
        let eps = vec![vec![0.0, 0.0]];
        let zt = forward_sample(&z0, 2, &eps, &s).unwrap();
        let k = s.alpha_bar(2).sqrt();
        assert_abs_diff_eq!(zt[0][0], k, epsilon = 1e-15);
        assert_abs_diff_eq!(zt[0][1], -2.0 * k, epsilon = 1e-15);
    }

    #[test]
    fn forward_zero_signal_branch() {
        let s = two_step();
        let zt = forward_sample(&vec![vec![0.0]], 1, &vec![vec![3.0]], &s).unwrap();
        assert_abs_diff_eq!(zt[0][0], 3.0 * (1.0 - s.alpha_bar(1)).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn forward_numeric_case() {
        let s = two_step();
        let zt = forward_sample(&vec![vec![1.0]], 2, &vec![vec![1.0]], &s).unwrap();
        let expect = 0.949905f64.sqrt() + 0.050095f64.sqrt();
        assert_abs_diff_eq!(zt[0][0], expect, epsilon = 1e-12);
        assert_abs_diff_eq!(zt[0][0], 1.19849, epsilon = 1e-5);
    }

    #[test]
    fn recover_inverts_forward() {
        let s = NoiseSchedule::make(ScheduleKind::Linear, 50, 1e-4, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &t in &[1usize, 7, 50] {
            let z0 = draw_noise(&mut rng, 2, 33);
            let eps = draw_noise(&mut rng, 2, 33);
            let zt = forward_sample(&z0, t, &eps, &s).unwrap();
            let back = recover_x0(&zt, t, &eps, &s).unwrap();
            for (a, b) in back.iter().flatten().zip(z0.iter().flatten()) {
                assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn recover_numeric_case() {
        let s = two_step();
        let zt = vec![vec![0.949905f64.sqrt() + 0.050095f64.sqrt()]];
        let z0 = recover_x0(&zt, 2, &vec![vec![1.0]], &s).unwrap();
        assert_abs_diff_eq!(z0[0][0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn posterior_mean_cases() {
        let s = NoiseSchedule::make(ScheduleKind::Linear, 1, 0.1, 0.1).unwrap();
        // eps_pred = 0 reduces to z_t / sqrt(alpha_t).
        let mu = posterior_mean(&vec![vec![1.0]], 1, &vec![vec![0.0]], &s).unwrap();
        assert_abs_diff_eq!(mu[0][0], 1.0 / 0.9f64.sqrt(), epsilon = 1e-15);
        // Zeros map to zeros.
        let mu0 = posterior_mean(&vec![vec![0.0]], 1, &vec![vec![0.0]], &s).unwrap();
        assert_eq!(mu0[0][0], 0.0);
        // Hand-evaluated value.
        let mu1 = posterior_mean(&vec![vec![1.0]], 1, &vec![vec![1.0]], &s).unwrap();
        let expect = (1.0 - 0.1 / 0.1f64.sqrt()) / 0.9f64.sqrt();
        assert_abs_diff_eq!(mu1[0][0], expect, epsilon = 1e-15);
        assert_abs_diff_eq!(mu1[0][0], 0.72076, epsilon = 1e-5);
    }

    #[test]
    fn reverse_step_variance() {
        let s = two_step();
        // t = 1: exactly deterministic regardless of supplied noise.
        assert_abs_diff_eq!(s.posterior_variance(1), 0.0, epsilon = 1e-18);
        let z = vec![vec![0.7]];
        let e = vec![vec![0.3]];
        let noisy = reverse_step(&z, 1, &e, &s, Some(&vec![vec![100.0]])).unwrap();
        let quiet = reverse_step(&z, 1, &e, &s, None).unwrap();
        assert_eq!(noisy, quiet);
        // t = 2 spot value.
        let expect = (1.0 - 0.9999) / (1.0 - 0.949905) * 0.05;
        assert_abs_diff_eq!(s.posterior_variance(2), expect, epsilon = 1e-15);
        assert_abs_diff_eq!(s.posterior_variance(2), 9.981e-5, epsilon = 1e-8);
    }

    #[test]
    fn posterior_variance_never_exceeds_beta() {
        let s = NoiseSchedule::make(ScheduleKind::Linear, 200, 1e-4, 0.05).unwrap();
        for t in 1..=200 {
            assert!(s.posterior_variance(t) <= s.beta(t) + 1e-15);
        }
    }

    #[test]
    fn loss_cases() {
        assert_eq!(training_loss(&vec![vec![1.0, 1.0]], &vec![vec![1.0, 1.0]]).unwrap(), 0.0);
        assert_eq!(training_loss(&vec![vec![1.0, 1.0]], &vec![vec![0.0, 0.0]]).unwrap(), 1.0);
        assert_eq!(training_loss(&vec![vec![2.0]], &vec![vec![0.0]]).unwrap(), 4.0);
        assert!(training_loss(&vec![vec![0.0; 3]], &vec![vec![0.0; 4]]).is_err());
    }

    #[test]
    fn loss_grad_matches_finite_difference() {
        let eps = vec![vec![0.3, -0.7], vec![0.1, 0.9]];
        let mut pred = vec![vec![0.0, 0.2], vec![-0.4, 0.5]];
        let (_, grad) = training_loss_and_grad(&eps, &pred).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            for i in 0..2 {
                pred[c][i] += h;
                let up = training_loss(&eps, &pred).unwrap();
                pred[c][i] -= 2.0 * h;
                let down = training_loss(&eps, &pred).unwrap();
                pred[c][i] += h;
                assert_abs_diff_eq!(grad[c][i], (up - down) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn sampler_single_step_composes_definitions() {
        let s = NoiseSchedule::make(ScheduleKind::Linear, 1, 0.1, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = sample::<_, _, DiffusionError>(
            |state| Ok(vec![vec![0.0; state.z[0].len()]; state.z.len()]),
            &s,
            1,
            5,
            &mut rng,
        )
        .unwrap();
        // Same draw order as the sampler used.
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let z_t = draw_noise(&mut rng2, 1, 5);
        for (o, z) in out[0].iter().zip(&z_t[0]) {
            assert_abs_diff_eq!(*o, z / 0.9f64.sqrt(), epsilon = 1e-15);
        }
    }

    #[test]
    fn sampler_is_deterministic_under_seed() {
        let s = NoiseSchedule::make(ScheduleKind::Linear, 6, 1e-3, 0.3).unwrap();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            sample::<_, _, DiffusionError>(
                |state| Ok(state.z.iter().map(|c| c.iter().map(|v| 0.1 * v).collect()).collect()),
                &s,
                2,
                16,
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn oracle_denoiser_reconstructs_z0() {
        // A denoiser that always reports the noise consistent with the fixed
        // z0 makes the final (deterministic) step land exactly on z0.
        let s = NoiseSchedule::make(ScheduleKind::Linear, 20, 1e-3, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z0 = draw_noise(&mut rng, 1, 24);
        let z0_ref = z0.clone();
        let out = sample::<_, _, DiffusionError>(
            move |state| {
                let ab = s_alpha_bar(state.t);
                let kn = (1.0 - ab).sqrt();
                Ok(state
                    .z
                    .iter()
                    .zip(&z0_ref)
                    .map(|(zc, z0c)| zc.iter().zip(z0c).map(|(z, x)| (z - ab.sqrt() * x) / kn).collect())
                    .collect())
            },
            &s,
            1,
            24,
            &mut rng,
        )
        .unwrap();
        fn s_alpha_bar(t: usize) -> f64 {
            let s = NoiseSchedule::make(ScheduleKind::Linear, 20, 1e-3, 0.2).unwrap();
            s.alpha_bar(t)
        }
        for (a, b) in out[0].iter().zip(&z0[0]) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-6);
        }
    }

    #[test]
    fn nearest_alpha_bar_alignment() {
        let train = NoiseSchedule::make(ScheduleKind::Linear, 200, 1e-4, 0.05).unwrap();
        // Exact hit maps to itself.
        assert_eq!(train.nearest_step_by_alpha_bar(train.alpha_bar(57)), 57);
        // A value past the end maps to the last step.
        assert_eq!(train.nearest_step_by_alpha_bar(0.0), 200);
        assert_eq!(train.nearest_step_by_alpha_bar(1.0), 1);
    }
}
