//! Relaxed prefix masks over a toy encoder: a C¹ curve s ↦ Ψ̃(s) through the
//! hard-prefix encodings at the sentence boundaries s_t = N_t / N.
//!
//! Token i (1-based) is weighted by m_s(i) = g(sN − i + ½). The half-token
//! shift puts every boundary inside the flat tails of g, so the weights there
//! are exactly 0 or 1 for any δ ≤ ½.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{norm, sub};
use crate::provider::synth_embedding;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmoothError {
    #[error("transition half-width must lie in (0, 0.5], got {0}")]
    BadDelta(f64),
    #[error("boundaries must be strictly increasing counts in 1..={n}, got {found:?}")]
    BadBoundaries { n: usize, found: Vec<usize> },
    #[error("no tokens")]
    NoTokens,
    #[error("schedule is for {expected} tokens, got {found}")]
    TokenCount { expected: usize, found: usize },
    #[error("grid must have at least {min} points, got {found}")]
    GridTooSmall { min: usize, found: usize },
    #[error("s must lie in (0, 1], got {0}")]
    OutOfRange(f64),
}

fn flat(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Smooth step: exactly 0 for x ≤ −δ, exactly 1 for x ≥ δ, C^∞ in between.
pub fn bump(x: f64, delta: f64) -> f64 {
    let a = flat((x + delta) / (2.0 * delta));
    let b = flat((delta - x) / (2.0 * delta));
    a / (a + b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub n_tokens: usize,
    /// Cumulative token counts N_1 < … < N_T.
    pub boundaries: Vec<usize>,
    pub delta: f64,
}

impl MaskSchedule {
    pub const DEFAULT_DELTA: f64 = 0.25;

    pub fn new(n_tokens: usize, boundaries: Vec<usize>, delta: f64) -> Result<Self, SmoothError> {
        if n_tokens == 0 {
            return Err(SmoothError::NoTokens);
        }
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(SmoothError::BadDelta(delta));
        }
        let increasing = boundaries.windows(2).all(|w| w[0] < w[1]);
        let in_range = boundaries.iter().all(|&b| b >= 1 && b <= n_tokens);
        if boundaries.is_empty() || !increasing || !in_range {
            return Err(SmoothError::BadBoundaries {
                n: n_tokens,
                found: boundaries,
            });
        }
        Ok(MaskSchedule {
            n_tokens,
            boundaries,
            delta,
        })
    }

    /// s_t = N_t / N.
    pub fn boundary_s(&self) -> Vec<f64> {
        self.boundaries
            .iter()
            .map(|&b| b as f64 / self.n_tokens as f64)
            .collect()
    }

    /// k(s) = ⌈sN⌉, the number of tokens fed to the encoder.
    pub fn k(&self, s: f64) -> usize {
        ((s * self.n_tokens as f64).ceil() as usize).min(self.n_tokens)
    }

    /// m_s(i) for 1-based token index i.
    pub fn mask(&self, s: f64, i: usize) -> f64 {
        bump(s * self.n_tokens as f64 - i as f64 + 0.5, self.delta)
    }

    pub fn masks(&self, s: f64) -> Vec<f64> {
        (1..=self.k(s)).map(|i| self.mask(s, i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    /// Output dimension.
    pub dim: usize,
    /// Token embedding dimension.
    pub embed_dim: usize,
    /// Hidden width of the tanh layer.
    pub width: usize,
    /// Softmax temperature of the attention pooling.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for ToyEncoderConfig {
    fn default() -> Self {
        ToyEncoderConfig {
            dim: 8,
            embed_dim: 16,
            width: 32,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Token hash embedding + position → affine → tanh → softmax attention
/// pooling (with an always-present start slot) → affine readout.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub cfg: ToyEncoderConfig,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    query: Vec<f64>,
    start: Vec<f64>,
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
                .collect()
        })
        .collect()
}

fn affine(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bias)| row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + bias)
        .collect()
}

fn positional(i: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|j| {
            let freq = 1.0 / 100f64.powf((j / 2) as f64 * 2.0 / dim as f64);
            let angle = i as f64 * freq;
            if j % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

impl ToyEncoder {
    pub fn new(cfg: ToyEncoderConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let e = cfg.embed_dim as f64;
        let h = cfg.width as f64;
        let w1 = gaussian_matrix(&mut rng, cfg.width, cfg.embed_dim, 1.0 / e.sqrt());
        let b1 = gaussian_matrix(&mut rng, 1, cfg.width, 0.1).remove(0);
        let query = gaussian_matrix(&mut rng, 1, cfg.width, 1.0 / h.sqrt()).remove(0);
        let start = gaussian_matrix(&mut rng, 1, cfg.embed_dim, 1.0).remove(0);
        let w2 = gaussian_matrix(&mut rng, cfg.dim, cfg.width, 1.0 / h.sqrt());
        let b2 = gaussian_matrix(&mut rng, 1, cfg.dim, 0.1).remove(0);
        ToyEncoder {
            cfg,
            w1,
            b1,
            query,
            start,
            w2,
            b2,
        }
    }

    /// Same network with the readout zeroed: every input maps to the origin.
    pub fn zero_readout(cfg: ToyEncoderConfig) -> Self {
        let mut enc = Self::new(cfg);
        enc.w2.iter_mut().flatten().for_each(|x| *x = 0.0);
        enc.b2.iter_mut().for_each(|x| *x = 0.0);
        enc
    }

    fn hidden(&self, z: &[f64]) -> Vec<f64> {
        affine(&self.w1, &self.b1, z).into_iter().map(f64::tanh).collect()
    }

    fn score(&self, h: &[f64]) -> f64 {
        (self.query.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / self.cfg.temperature).exp()
    }

    fn token_input(&self, token: &str, i: usize) -> Vec<f64> {
        let e = synth_embedding(token, self.cfg.embed_dim, self.cfg.seed);
        e.iter().zip(positional(i, self.cfg.embed_dim)).map(|(a, p)| a + p).collect()
    }

    fn start_slot(&self) -> (f64, Vec<f64>) {
        let h = self.hidden(&self.start);
        (self.score(&h), h)
    }

    /// Plain encoding of a token sequence, no masking involved.
    pub fn encode(&self, tokens: &[String]) -> Vec<f64> {
        let (w0, h0) = self.start_slot();
        let mut num: Vec<f64> = h0.iter().map(|x| w0 * x).collect();
        let mut den = w0;
        for (i, tok) in tokens.iter().enumerate() {
            let h = self.hidden(&self.token_input(tok, i + 1));
            let w = self.score(&h);
            for (n, x) in num.iter_mut().zip(&h) {
                *n += w * x;
            }
            den += w;
        }
        let pooled: Vec<f64> = num.iter().map(|n| n / den).collect();
        affine(&self.w2, &self.b2, &pooled)
    }

    /// Encoding with per-token weights scaling both the inputs and the
    /// attention weights. With all weights 1 this reproduces [`Self::encode`].
    pub fn encode_masked(&self, tokens: &[String], masks: &[f64]) -> Vec<f64> {
        let (w0, h0) = self.start_slot();
        let mut num: Vec<f64> = h0.iter().map(|x| w0 * x).collect();
        let mut den = w0;
        for (i, (tok, &m)) in tokens.iter().zip(masks).enumerate() {
            let z: Vec<f64> = self.token_input(tok, i + 1).iter().map(|x| m * x).collect();
            let h = self.hidden(&z);
            let w = m * self.score(&h);
            for (n, x) in num.iter_mut().zip(&h) {
                *n += w * x;
            }
            den += w;
        }
        let pooled: Vec<f64> = num.iter().map(|n| n / den).collect();
        affine(&self.w2, &self.b2, &pooled)
    }
}

/// Ψ̃(s): the first k(s) tokens, weighted by m_s, through the encoder.
pub fn trajectory_point(
    tokens: &[String],
    schedule: &MaskSchedule,
    encoder: &ToyEncoder,
    s: f64,
) -> Result<Vec<f64>, SmoothError> {
    if tokens.len() != schedule.n_tokens {
        return Err(SmoothError::TokenCount {
            expected: schedule.n_tokens,
            found: tokens.len(),
        });
    }
    if !(s > 0.0 && s <= 1.0) {
        return Err(SmoothError::OutOfRange(s));
    }
    let masks = schedule.masks(s);
    Ok(encoder.encode_masked(&tokens[..masks.len()], &masks))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLevel {
    pub grid: usize,
    /// max_g ‖Ψ̃(s_{g+1}) − Ψ̃(s_g)‖.
    pub max_first_difference: f64,
    /// max_g ‖Ψ̃(s_{g+1}) − 2Ψ̃(s_g) + Ψ̃(s_{g−1})‖ / h.
    pub max_second_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Report {
    pub n_tokens: usize,
    pub boundaries: Vec<usize>,
    pub delta: f64,
    /// ‖Ψ̃(s_t) − y_t‖ per boundary, y_t from the unmasked encoder.
    pub boundary_errors: Vec<f64>,
    pub boundary_exactness: f64,
    /// The requested grid and two successive doublings.
    pub levels: Vec<GridLevel>,
    /// Ratios of max first differences between consecutive levels.
    pub first_difference_ratios: Vec<f64>,
    pub second_difference_ratios: Vec<f64>,
}

pub const MIN_GRID: usize = 100;

fn grid_level(tokens: &[String], schedule: &MaskSchedule, encoder: &ToyEncoder, grid: usize) -> Result<GridLevel, SmoothError> {
    let h = 1.0 / grid as f64;
    let samples: Vec<Vec<f64>> = (1..=grid)
        .into_par_iter()
        .map(|g| trajectory_point(tokens, schedule, encoder, g as f64 * h))
        .collect::<Result<_, _>>()?;
    let first = samples
        .windows(2)
        .map(|w| norm(&sub(&w[1], &w[0])))
        .fold(0.0, f64::max);
    let second = samples
        .windows(3)
        .map(|w| {
            let d: Vec<f64> = (0..w[0].len()).map(|j| w[2][j] - 2.0 * w[1][j] + w[0][j]).collect();
            norm(&d) / h
        })
        .fold(0.0, f64::max);
    Ok(GridLevel {
        grid,
        max_first_difference: first,
        max_second_difference: second,
    })
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

/// Boundary exactness plus difference statistics on G, 2G and 4G uniform
/// samples s = g/G, g = 1..G.
pub fn c1_report(
    tokens: &[String],
    schedule: &MaskSchedule,
    encoder: &ToyEncoder,
    grid: usize,
) -> Result<C1Report, SmoothError> {
    if grid < MIN_GRID {
        return Err(SmoothError::GridTooSmall {
            min: MIN_GRID,
            found: grid,
        });
    }
    let boundary_errors = schedule
        .boundaries
        .iter()
        .zip(schedule.boundary_s())
        .map(|(&n_t, s)| {
            let smooth = trajectory_point(tokens, schedule, encoder, s)?;
            let hard = encoder.encode(&tokens[..n_t]);
            Ok(norm(&sub(&smooth, &hard)))
        })
        .collect::<Result<Vec<f64>, SmoothError>>()?;
    let levels = [grid, 2 * grid, 4 * grid]
        .iter()
        .map(|&g| grid_level(tokens, schedule, encoder, g))
        .collect::<Result<Vec<_>, _>>()?;
    let first_difference_ratios = levels
        .windows(2)
        .map(|w| ratio(w[0].max_first_difference, w[1].max_first_difference))
        .collect();
    let second_difference_ratios = levels
        .windows(2)
        .map(|w| ratio(w[0].max_second_difference, w[1].max_second_difference))
        .collect();
    Ok(C1Report {
        n_tokens: schedule.n_tokens,
        boundaries: schedule.boundaries.clone(),
        delta: schedule.delta,
        boundary_exactness: boundary_errors.iter().copied().fold(0.0, f64::max),
        boundary_errors,
        levels,
        first_difference_ratios,
        second_difference_ratios,
    })
}

/// Splits text into whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<String>, MaskSchedule) {
        let tokens = tokenize("rain falls . the ground gets wet . wet ground is slippery today");
        let schedule = MaskSchedule::new(tokens.len(), vec![3, 7, 13], 0.25).unwrap();
        (tokens, schedule)
    }

    #[test]
    fn bump_values() {
        let d = 0.25;
        assert_eq!(bump(-d, d), 0.0);
        assert_eq!(bump(d, d), 1.0);
        assert_eq!(bump(-1.0, d), 0.0);
        assert_eq!(bump(3.0, d), 1.0);
        assert!((bump(0.0, d) - 0.5).abs() < 1e-15);
        let h = 1e-5;
        for x in [-d, d] {
            let slope = (bump(x + h, d) - bump(x - h, d)) / (2.0 * h);
            assert!(slope.abs() < 1e-8);
        }
        for x in [-0.2, -0.1, 0.05, 0.2] {
            assert!((bump(x, d) + bump(-x, d) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn schedule_checks() {
        assert!(MaskSchedule::new(5, vec![2, 5], 0.25).is_ok());
        assert_eq!(MaskSchedule::new(5, vec![2, 5], 0.6), Err(SmoothError::BadDelta(0.6)));
        assert!(MaskSchedule::new(5, vec![3, 2], 0.25).is_err());
        assert!(MaskSchedule::new(5, vec![2, 6], 0.25).is_err());
        assert!(MaskSchedule::new(5, vec![], 0.25).is_err());
    }

    #[test]
    fn masks_are_hard_at_boundaries() {
        let (_, sched) = toy();
        for (&n_t, s) in sched.boundaries.iter().zip(sched.boundary_s()) {
            for i in 1..=sched.n_tokens {
                let expected = if i <= n_t { 1.0 } else { 0.0 };
                assert_eq!(sched.mask(s, i), expected, "token {i} at N_t={n_t}");
            }
        }
    }

    #[test]
    fn masks_are_monotone_in_s() {
        let (_, sched) = toy();
        for i in 1..=sched.n_tokens {
            let mut prev = 0.0;
            for g in 1..=2000 {
                let m = sched.mask(g as f64 / 2000.0, i);
                assert!(m >= prev);
                prev = m;
            }
        }
    }

    #[test]
    fn newly_included_token_has_zero_weight() {
        let (_, sched) = toy();
        let n = sched.n_tokens as f64;
        // just past a boundary k(s) jumps by one; the new token is still masked out
        let s = (7.0 + 0.1) / n;
        assert_eq!(sched.k(s), 8);
        assert_eq!(sched.mask(s, 8), 0.0);
    }

    #[test]
    fn boundaries_reproduce_hard_prefixes() {
        let (tokens, sched) = toy();
        let enc = ToyEncoder::new(ToyEncoderConfig::default());
        let full = trajectory_point(&tokens, &sched, &enc, 1.0).unwrap();
        assert_eq!(full, enc.encode(&tokens));
        let first = trajectory_point(&tokens, &sched, &enc, 3.0 / 13.0).unwrap();
        let alone = enc.encode(&tokens[..3]);
        assert!(norm(&sub(&first, &alone)) <= 1e-10);
    }

    #[test]
    fn midpoint_is_between_neighbours() {
        let (tokens, sched) = toy();
        let enc = ToyEncoder::new(ToyEncoderConfig::default());
        let h = 1e-4;
        for s0 in [0.31, 0.5, 0.77] {
            let a = trajectory_point(&tokens, &sched, &enc, s0).unwrap();
            let b = trajectory_point(&tokens, &sched, &enc, s0 + h).unwrap();
            let mid = trajectory_point(&tokens, &sched, &enc, s0 + h / 2.0).unwrap();
            for j in 0..mid.len() {
                let (lo, hi) = (a[j].min(b[j]), a[j].max(b[j]));
                assert!(mid[j] >= lo - 1e-6 && mid[j] <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn zero_readout_is_constant() {
        let (tokens, sched) = toy();
        let enc = ToyEncoder::zero_readout(ToyEncoderConfig::default());
        let report = c1_report(&tokens, &sched, &enc, 128).unwrap();
        assert!(report.levels.iter().all(|l| l.max_second_difference == 0.0));
        assert!(report.levels.iter().all(|l| l.max_first_difference == 0.0));
    }

    #[test]
    fn report_shape() {
        let (tokens, sched) = toy();
        let enc = ToyEncoder::new(ToyEncoderConfig::default());
        let r = c1_report(&tokens, &sched, &enc, 256).unwrap();
        assert_eq!(r.levels.iter().map(|l| l.grid).collect::<Vec<_>>(), vec![256, 512, 1024]);
        assert!(r.boundary_exactness <= 1e-10);
        for q in &r.first_difference_ratios {
            assert!((1.6..=2.5).contains(q), "{q}");
        }
        assert!(matches!(
            c1_report(&tokens, &sched, &enc, 50),
            Err(SmoothError::GridTooSmall { .. })
        ));
        assert!(matches!(
            trajectory_point(&tokens[..4], &sched, &enc, 0.5),
            Err(SmoothError::TokenCount { .. })
        ));
    }
}
