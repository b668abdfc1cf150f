//! Reverse-time Euler-Maruyama sampling and histogram total-variation distance.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dsm::ScoreModel;
use crate::error::{Error, Result};
use crate::exec;
use crate::generator::GeneratorSpec;
use crate::rng::{self, StreamRng};
use crate::schedule::DiffusionSchedule;
use crate::stats;

/// Trajectories advanced together so batched score backends see wide batches.
const TRAJ_CHUNK: usize = 256;

const BLOW_UP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReverseRunConfig {
    pub n_steps: usize,
    pub n_samples: usize,
    pub seed: u64,
}

/// Euler-Maruyama for `dZ = (Z + 2 s(Z, T - tau)) dtau + sqrt(2) dB` on `[0, T - t0]`,
/// started from `N(0, I_D)`. Trajectory `i` draws from stream `i`.
pub fn reverse_sample(score: &ScoreModel, sched: &DiffusionSchedule, cfg: &ReverseRunConfig) -> Result<Vec<Vec<f64>>> {
    if cfg.n_steps == 0 {
        return Err(Error::invalid("reverse sampling needs n_steps >= 1"));
    }
    if cfg.n_samples == 0 {
        return Err(Error::invalid("reverse sampling needs n_samples >= 1"));
    }
    sched.validate()?;
    let dim = score.dim;
    let h = (sched.t_max - sched.t0) / cfg.n_steps as f64;
    let noise = (2.0 * h).sqrt();
    let chunks = exec::map_chunks(cfg.n_samples, TRAJ_CHUNK, |range| -> Result<Vec<Vec<f64>>> {
        let n = range.len();
        let mut rngs: Vec<StreamRng> = range.clone().map(|i| rng::stream(cfg.seed, i as u64)).collect();
        let mut z = vec![0.0; n * dim];
        for (j, r) in rngs.iter_mut().enumerate() {
            rng::fill_normal(r, &mut z[j * dim..(j + 1) * dim]);
        }
        let mut ts = vec![0.0; n];
        for k in 0..cfg.n_steps {
            let t = sched.t_max - k as f64 * h;
            ts.fill(t);
            let s = score.score_batch(sched, &z, &ts)?;
            for (j, r) in rngs.iter_mut().enumerate() {
                let mut norm2 = 0.0;
                for l in 0..dim {
                    let i = j * dim + l;
                    z[i] += h * (z[i] + 2.0 * s[i]) + noise * rng::normal(r);
                    norm2 += z[i] * z[i];
                }
                if !(norm2 <= BLOW_UP * BLOW_UP) {
                    return Err(Error::numerical(format!(
                        "reverse trajectory {} left the ball of radius 1e6 at step {k}",
                        range.start + j
                    )));
                }
            }
        }
        Ok(z.chunks(dim).map(|c| c.to_vec()).collect())
    });
    let mut out = Vec::with_capacity(cfg.n_samples);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Forward OU draws `m_t x + sigma_t z` for every point, point `i` on stream `i`.
pub fn forward_push(points: &[Vec<f64>], sched: &DiffusionSchedule, t: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    exec::map_range(points.len(), |i| sched.forward_sample(&points[i], t, &mut rng::stream(seed, i as u64)))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvEstimate {
    pub tv: f64,
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
    /// True when the value is the largest per-coordinate marginal TV (`D >= 3`).
    pub marginal: bool,
}

/// Histogram TV with `bins` cells per axis on `[lo, hi]^D`, plus one overflow cell.
///
/// For `D <= 2` the full histogram is used; otherwise the maximum marginal TV.
pub fn tv_histogram(a: &[Vec<f64>], b: &[Vec<f64>], bins: usize, lo: f64, hi: f64) -> Result<TvEstimate> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("TV needs two nonempty sample sets"));
    }
    if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::invalid(format!("TV needs bins >= 1 and a nonempty box, got [{lo}, {hi}]")));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|p| p.len() != dim) {
        return Err(Error::invalid("TV sample sets must share one dimension"));
    }
    let cell = |x: f64| -> Option<usize> {
        if x < lo || x > hi || !x.is_finite() {
            None
        } else {
            Some((((x - lo) / (hi - lo)) * bins as f64).floor().min(bins as f64 - 1.0) as usize)
        }
    };
    let tv_of = |axes: &[usize]| -> f64 {
        let n_cells = bins.pow(axes.len() as u32) + 1;
        let count = |s: &[Vec<f64>]| {
            let mut h = vec![0.0; n_cells];
            for p in s {
                let mut idx = 0;
                let mut inside = true;
                for &ax in axes {
                    match cell(p[ax]) {
                        Some(c) => idx = idx * bins + c,
                        None => inside = false,
                    }
                }
                h[if inside { idx } else { n_cells - 1 }] += 1.0;
            }
            let n = s.len() as f64;
            h.iter_mut().for_each(|v| *v /= n);
            h
        };
        let (ha, hb) = (count(a), count(b));
        0.5 * ha.iter().zip(&hb).map(|(x, y)| (x - y).abs()).sum::<f64>()
    };
    let (tv, marginal) = if dim <= 2 {
        (tv_of(&(0..dim).collect::<Vec<_>>()), false)
    } else {
        ((0..dim).map(|ax| tv_of(&[ax])).fold(0.0, f64::max), true)
    };
    Ok(TvEstimate {
        tv,
        bins,
        lo,
        hi,
        marginal,
    })
}

/// Common box covering the 0.1% to 99.9% coordinate quantiles of both sets, padded by 5%.
pub fn auto_box(a: &[Vec<f64>], b: &[Vec<f64>]) -> (f64, f64) {
    let all: Vec<f64> = a.iter().chain(b).flat_map(|p| p.iter().copied()).collect();
    let lo = stats::quantile(&all, 0.001);
    let hi = stats::quantile(&all, 0.999);
    let pad = 0.05 * (hi - lo).max(1e-9);
    (lo - pad, hi + pad)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndToEnd {
    pub tv: TvEstimate,
    /// Spread of the TV over 5 disjoint sub-samples, divided by `sqrt(5)`.
    pub tv_std_error: f64,
    pub runtime: Duration,
}

/// Draws `n` data points and `n` reverse samples and compares their histograms.
pub fn end_to_end(
    gen: &GeneratorSpec,
    sched: &DiffusionSchedule,
    score: &ScoreModel,
    n: usize,
    steps: usize,
    bins: usize,
    seed: u64,
) -> Result<EndToEnd> {
    if !(sched.sigma_data > 0.0) {
        return Err(Error::precondition("end-to-end TV needs sigma_data > 0"));
    }
    let start = Instant::now();
    let data = gen.sample_data(sched.sigma_data, n, &mut rng::stream(seed, u64::MAX))?;
    let cfg = ReverseRunConfig {
        n_steps: steps,
        n_samples: n,
        seed: rng::mix(seed, 1),
    };
    let gen_samples = reverse_sample(score, sched, &cfg)?;
    let (lo, hi) = auto_box(&data, &gen_samples);
    let tv = tv_histogram(&data, &gen_samples, bins, lo, hi)?;
    const GROUPS: usize = 5;
    let size = n / GROUPS;
    let tv_std_error = if size >= 2 {
        let parts: Vec<f64> = (0..GROUPS)
            .map(|g| {
                let r = g * size..(g + 1) * size;
                tv_histogram(&data[r.clone()], &gen_samples[r], bins, lo, hi).map(|e| e.tv)
            })
            .collect::<Result<_>>()?;
        stats::std_error(&parts)
    } else {
        0.0
    };
    Ok(EndToEnd {
        tv,
        tv_std_error,
        runtime: start.elapsed(),
    })
}

/// Kolmogorov-Smirnov distance between a sample and `N(0, 1)`.
pub fn ks_standard_normal(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let nd = Normal::standard();
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = nd.cdf(x);
            (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::zoo;

    fn gauss(n: usize, dim: usize, mean: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, 0);
        (0..n).map(|_| (0..dim).map(|_| mean + rng::normal(&mut r)).collect()).collect()
    }

    #[test]
    fn rejects_zero_steps() {
        let s = DiffusionSchedule::new(0.3, 0.1, 1.0).unwrap();
        let cfg = ReverseRunConfig {
            n_steps: 0,
            n_samples: 4,
            seed: 1,
        };
        assert!(reverse_sample(&ScoreModel::zero(1), &s, &cfg).is_err());
    }

    #[test]
    fn tiny_horizon_returns_initial_gaussian() {
        let s = DiffusionSchedule::new(0.3, 1.0 - 1e-9, 1.0).unwrap();
        let cfg = ReverseRunConfig {
            n_steps: 1,
            n_samples: 20_000,
            seed: 3,
        };
        let out = reverse_sample(&ScoreModel::zero(2), &s, &cfg).unwrap();
        let xs: Vec<f64> = out.iter().map(|p| p[1]).collect();
        assert!(ks_standard_normal(&xs) < 1.63 / (20_000f64).sqrt());
    }

    #[test]
    fn same_seed_same_samples() {
        let s = DiffusionSchedule::new(0.3, 0.1, 1.0).unwrap();
        let gen = zoo::constant(vec![0.5]);
        let m = ScoreModel::oracle(&gen, &s).unwrap();
        let cfg = ReverseRunConfig {
            n_steps: 20,
            n_samples: 600,
            seed: 9,
        };
        assert_eq!(reverse_sample(&m, &s, &cfg).unwrap(), reverse_sample(&m, &s, &cfg).unwrap());
    }

    #[test]
    fn blow_up_is_reported() {
        // zero score: z doubles every unit step
        let s = DiffusionSchedule::new(0.0, 1e-4, 40.0).unwrap();
        let cfg = ReverseRunConfig {
            n_steps: 40,
            n_samples: 10,
            seed: 1,
        };
        let err = reverse_sample(&ScoreModel::zero(1), &s, &cfg).unwrap_err();
        assert!(err.to_string().contains("1e6"));
    }

    #[test]
    fn tv_identity_disjoint_and_symmetry() {
        let a = gauss(5000, 2, 0.0, 1);
        let t = tv_histogram(&a, &a, 20, -4.0, 4.0).unwrap();
        assert_eq!(t.tv, 0.0);
        let b = gauss(5000, 2, 50.0, 2);
        let t = tv_histogram(&a, &b, 20, -60.0, 60.0).unwrap();
        assert!(t.tv > 0.99);
        let c = gauss(4000, 2, 0.5, 3);
        let ab = tv_histogram(&a, &c, 20, -4.0, 4.0).unwrap().tv;
        let ba = tv_histogram(&c, &a, 20, -4.0, 4.0).unwrap().tv;
        assert_eq!(ab, ba);
        let mut ar = a.clone();
        ar.reverse();
        assert_eq!(tv_histogram(&ar, &c, 20, -4.0, 4.0).unwrap().tv, ab);
        assert!(tv_histogram(&a, &c, 20, 1.0, 1.0).is_err());
        assert!(tv_histogram(&[], &c, 20, 0.0, 1.0).is_err());
    }

    #[test]
    fn tv_falls_back_to_marginals_in_three_dimensions() {
        let a = gauss(2000, 3, 0.0, 4);
        let b = gauss(2000, 3, 0.0, 5);
        let t = tv_histogram(&a, &b, 10, -4.0, 4.0).unwrap();
        assert!(t.marginal && t.tv < 0.1);
    }

    #[test]
    fn ks_detects_shift() {
        let a: Vec<f64> = gauss(5000, 1, 0.0, 1).into_iter().map(|p| p[0]).collect();
        let b: Vec<f64> = gauss(5000, 1, 0.2, 1).into_iter().map(|p| p[0]).collect();
        let crit = 1.63 / (5000f64).sqrt();
        assert!(ks_standard_normal(&a) < crit);
        assert!(ks_standard_normal(&b) > crit);
    }
}
