use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Laplace(0, scale) by inverse CDF from `u` in (0, 1).
pub fn laplace_from_uniform(scale: f64, u: f64) -> f64 {
    if u < 0.5 {
        scale * (2.0 * u).ln()
    } else {
        -scale * (2.0 * (1.0 - u)).ln()
    }
}

pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    debug_assert!(scale > 0.0);
    // Open interval (0, 1): avoids ln(0).
    let u = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    laplace_from_uniform(scale, u)
}

/// Source of the two noise terms of a monitor query.
pub trait NoiseSource: Send {
    /// Draws `(a, b)` with a ~ Lap(scale_a) and b ~ Lap(scale_b), before clipping.
    fn draw(&mut self, scale_a: f64, scale_b: f64) -> (f64, f64);

    /// A uniform draw in [0, 1), used by samplers that replace a run of queries.
    fn uniform(&mut self) -> f64;

    /// Pr[a + min(delta, b) >= theta] under this source, when it is known in closed form.
    fn upper_tail(&self, theta: f64, scale_a: f64, scale_b: f64, delta: f64) -> Option<f64>;
}

/// Independent Laplace draws from a seeded ChaCha stream.
#[derive(Clone, Debug)]
pub struct LaplaceNoise {
    rng: ChaCha8Rng,
}

impl LaplaceNoise {
    pub fn new(seed: u64) -> Self {
        LaplaceNoise {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl NoiseSource for LaplaceNoise {
    fn draw(&mut self, scale_a: f64, scale_b: f64) -> (f64, f64) {
        let a = sample_laplace(scale_a, &mut self.rng);
        let b = sample_laplace(scale_b, &mut self.rng);
        (a, b)
    }

    fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    fn upper_tail(&self, theta: f64, scale_a: f64, scale_b: f64, delta: f64) -> Option<f64> {
        Some(laplace_clipped_upper_tail(theta, scale_a, scale_b, delta))
    }
}

/// No noise at all: the monitor answers exactly.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw(&mut self, _: f64, _: f64) -> (f64, f64) {
        (0.0, 0.0)
    }

    fn uniform(&mut self) -> f64 {
        0.5
    }

    fn upper_tail(&self, theta: f64, _: f64, _: f64, _: f64) -> Option<f64> {
        Some(if theta <= 0.0 { 1.0 } else { 0.0 })
    }
}

/// Replays fixed `(a, b)` pairs, then zeros.
#[derive(Clone, Debug, Default)]
pub struct ScriptedNoise {
    pairs: VecDeque<(f64, f64)>,
}

impl ScriptedNoise {
    pub fn new(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        ScriptedNoise {
            pairs: pairs.into_iter().collect(),
        }
    }

    pub fn remaining(&self) -> usize {
        self.pairs.len()
    }
}

impl NoiseSource for ScriptedNoise {
    fn draw(&mut self, _: f64, _: f64) -> (f64, f64) {
        self.pairs.pop_front().unwrap_or((0.0, 0.0))
    }

    fn uniform(&mut self) -> f64 {
        0.5
    }

    fn upper_tail(&self, _: f64, _: f64, _: f64, _: f64) -> Option<f64> {
        None
    }
}

/// c * integral over [lo, hi] of exp(k y + m) dy, where k y + m <= 0 on the interval.
fn int_exp(c: f64, k: f64, m: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    if lo == f64::NEG_INFINITY {
        debug_assert!(k > 0.0);
        return c * (k * hi + m).exp() / k;
    }
    let w = hi - lo;
    if k.abs() * w < 1e-300 || k == 0.0 {
        return c * m.exp() * w;
    }
    if k > 0.0 {
        c * (k * hi + m).exp() * -(-k * w).exp_m1() / k
    } else {
        c * (k * lo + m).exp() * -(k * w).exp_m1() / -k
    }
}

/// Pr[A + min(delta, B) >= theta] with A ~ Lap(alpha), B ~ Lap(beta), independent.
///
/// Integrates the Laplace tail of A against the density of B piecewise in closed
/// form, plus the point mass of the clipped part at B = delta.
pub fn laplace_clipped_upper_tail(theta: f64, alpha: f64, beta: f64, delta: f64) -> f64 {
    let sa = |z: f64| {
        if z >= 0.0 {
            0.5 * (-z / alpha).exp()
        } else {
            1.0 - 0.5 * (z / alpha).exp()
        }
    };
    let point = if delta >= 0.0 {
        0.5 * (-delta / beta).exp()
    } else {
        1.0 - 0.5 * (delta / beta).exp()
    } * sa(theta - delta);

    let h = 1.0 / (2.0 * beta);
    let (ia, ib) = (1.0 / alpha, 1.0 / beta);
    let mut cuts = vec![f64::NEG_INFINITY, delta];
    for c in [0.0, theta] {
        if c < delta {
            cuts.push(c);
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        let mid = if lo == f64::NEG_INFINITY { hi - 1.0 } else { 0.5 * (lo + hi) };
        let neg = mid < 0.0;
        let below = mid <= theta;
        // density of B: h exp(+-y/beta); tail of A at theta - y.
        let kb = if neg { ib } else { -ib };
        total += if below {
            int_exp(0.5 * h, kb + ia, -theta * ia, lo, hi)
        } else {
            int_exp(h, kb, 0.0, lo, hi) - int_exp(0.5 * h, kb - ia, theta * ia, lo, hi)
        };
    }
    (total + point).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_median() {
        assert_eq!(laplace_from_uniform(3.0, 0.5), 0.0);
        assert!(laplace_from_uniform(1.0, 0.25) < 0.0);
        assert!((laplace_from_uniform(1.0, 0.75) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn laplace_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let scale = 3.0;
        let mut sum = 0.0;
        let mut beyond = 0usize;
        for _ in 0..n {
            let x = sample_laplace(scale, &mut rng);
            sum += x;
            if x.abs() > scale * 2f64.ln() {
                beyond += 1;
            }
        }
        let mean = sum / n as f64;
        assert!(mean.abs() < 5.0 * scale * 2f64.sqrt() / 1000.0, "mean {mean}");
        let frac = beyond as f64 / n as f64;
        assert!((frac - 0.5).abs() < 5.0 * (0.25 / n as f64).sqrt(), "frac {frac}");
    }

    fn numeric_tail(theta: f64, alpha: f64, beta: f64, delta: f64) -> f64 {
        // Midpoint rule over B, exact tail for A.
        let sa = |z: f64| if z >= 0.0 { 0.5 * (-z / alpha).exp() } else { 1.0 - 0.5 * (z / alpha).exp() };
        let (lo, steps) = (-60.0 * beta, 400_000);
        let dy = (delta - lo) / steps as f64;
        let mut acc = 0.0;
        for j in 0..steps {
            let y = lo + (j as f64 + 0.5) * dy;
            acc += (-(y.abs()) / beta).exp() / (2.0 * beta) * sa(theta - y) * dy;
        }
        acc + 0.5 * (-delta / beta).exp() * sa(theta - delta)
    }

    #[test]
    fn clipped_tail_matches_quadrature() {
        for &(theta, alpha, beta, delta) in &[
            (0.0, 10.0, 1.0, 2.0),
            (5.0, 10.0, 1.0, 2.0),
            (-7.0, 3.0, 2.0, 1.5),
            (1.5, 3.0, 2.0, 1.5),
            (40.0, 30.0, 5.0, 8.0),
            (-40.0, 30.0, 5.0, 8.0),
            (0.3, 1.0, 1.0, 0.5),
        ] {
            let got = laplace_clipped_upper_tail(theta, alpha, beta, delta);
            let want = numeric_tail(theta, alpha, beta, delta);
            assert!((got - want).abs() < 1e-6, "theta {theta}: {got} vs {want}");
        }
    }

    #[test]
    fn clipped_tail_matches_monte_carlo() {
        let mut src = LaplaceNoise::new(3);
        let (alpha, beta, delta, theta) = (4.0, 2.0, 1.0, 2.5);
        let n = 400_000;
        let hits = (0..n)
            .filter(|_| {
                let (a, b) = src.draw(alpha, beta);
                a + b.min(delta) >= theta
            })
            .count();
        let p = laplace_clipped_upper_tail(theta, alpha, beta, delta);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 5.0 * se);
    }

    #[test]
    fn clipped_tail_limits() {
        assert!(laplace_clipped_upper_tail(-1e6, 10.0, 1.0, 2.0) > 1.0 - 1e-12);
        assert!(laplace_clipped_upper_tail(1e6, 10.0, 1.0, 2.0) < 1e-12);
        let mut last = 1.0;
        for j in -50..50 {
            let p = laplace_clipped_upper_tail(j as f64, 5.0, 2.0, 3.0);
            assert!(p <= last + 1e-15);
            last = p;
        }
    }

    #[test]
    fn scripted_then_zero() {
        let mut s = ScriptedNoise::new([(1.0, 2.0)]);
        assert_eq!(s.draw(1.0, 1.0), (1.0, 2.0));
        assert_eq!(s.draw(1.0, 1.0), (0.0, 0.0));
    }
}
