//! Brute-force reference implementations used as test oracles.
//!
//! Everything here is written directly from the textbook definitions with
//! plain loops and no shared code with the library.

#![allow(dead_code)]

use crisp_nam::model::{Architecture, Mode, ModelParams};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Per-risk negative log partial likelihood with Breslow ties, unweighted.
pub fn cox_loss(eta: &Array2<f64>, times: &[f64], events: &[usize]) -> Vec<f64> {
    let (n, k_risks) = eta.dim();
    let mut out = vec![0.0; k_risks];
    for k in 0..k_risks {
        for i in 0..n {
            if events[i] != k + 1 {
                continue;
            }
            let mut denom = 0.0;
            for j in 0..n {
                if times[j] >= times[i] {
                    denom += eta[[j, k]].exp();
                }
            }
            out[k] -= eta[[i, k]] - denom.ln();
        }
    }
    out
}

/// Distinct event times and `K x M` Breslow increments.
pub fn breslow(eta: &Array2<f64>, times: &[f64], events: &[usize]) -> (Vec<f64>, Array2<f64>) {
    let k_risks = eta.ncols();
    let mut grid: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, &e)| e > 0)
        .map(|(&t, _)| t)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut inc = Array2::zeros((k_risks, grid.len()));
    for (m, &t) in grid.iter().enumerate() {
        for k in 0..k_risks {
            let d = (0..times.len())
                .filter(|&i| times[i] == t && events[i] == k + 1)
                .count() as f64;
            let at_risk: f64 = (0..times.len())
                .filter(|&j| times[j] >= t)
                .map(|j| eta[[j, k]].exp())
                .sum();
            inc[[k, m]] = d / at_risk;
        }
    }
    (grid, inc)
}

/// Nelson-Aalen cumulative hazard of cause `k` (1-based) at `t`.
pub fn nelson_aalen(times: &[f64], events: &[usize], k: usize, t: f64) -> f64 {
    let mut grid: Vec<f64> = times.iter().copied().filter(|&s| s <= t).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.iter()
        .map(|&s| {
            let d = (0..times.len()).filter(|&i| times[i] == s && events[i] == k).count() as f64;
            let r = times.iter().filter(|&&x| x >= s).count() as f64;
            d / r
        })
        .sum()
}

/// `(F_1(t), ..., F_K(t), S(t))` by expanding the discrete-time product.
pub fn cif(grid: &[f64], inc: &Array2<f64>, eta_row: &[f64], t: f64) -> (Vec<f64>, f64) {
    let k_risks = inc.nrows();
    let mut f = vec![0.0; k_risks];
    let mut survival = 1.0;
    for m in 0..grid.len() {
        if grid[m] > t {
            break;
        }
        // survival just before grid[m]: exp(-sum over earlier times and all causes)
        let mut cum = 0.0;
        for l in 0..m {
            for j in 0..k_risks {
                cum += inc[[j, l]] * eta_row[j].exp();
            }
        }
        let before = (-cum).exp();
        for k in 0..k_risks {
            f[k] += before * inc[[k, m]] * eta_row[k].exp();
        }
        let here: f64 = (0..k_risks).map(|j| inc[[j, m]] * eta_row[j].exp()).sum();
        survival = (-(cum + here)).exp();
    }
    (f, survival)
}

/// Kaplan-Meier censoring survival `G(t)`; `strict` gives `G(t-)`.
pub fn censoring_km(times: &[f64], events: &[usize], t: f64, strict: bool) -> f64 {
    let mut cens: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(&s, &e)| e == 0 && if strict { s < t } else { s <= t })
        .map(|(&s, _)| s)
        .collect();
    cens.sort_by(f64::total_cmp);
    cens.dedup();
    cens.iter()
        .map(|&c| {
            let d = (0..times.len()).filter(|&i| times[i] == c && events[i] == 0).count() as f64;
            let r = times.iter().filter(|&&x| x >= c).count() as f64;
            1.0 - d / r
        })
        .product()
}

/// Cumulative/dynamic AUC by enumerating every (case, control) pair.
pub fn auc_pairs(scores: &[f64], times: &[f64], events: &[usize], t: f64, risk: usize, ipcw: bool) -> Option<f64> {
    let n = scores.len();
    let w = |i: usize| -> f64 {
        if !ipcw {
            return 1.0;
        }
        let g = if times[i] > t {
            censoring_km(times, events, t, false)
        } else {
            censoring_km(times, events, times[i], true)
        };
        if g > 0.0 {
            1.0 / g
        } else {
            0.0
        }
    };
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        if !(times[i] <= t && events[i] == risk) {
            continue;
        }
        for j in 0..n {
            let control = times[j] > t || (events[j] != 0 && events[j] != risk);
            if !control {
                continue;
            }
            let pair = w(i) * w(j);
            den += pair;
            num += pair
                * if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Antolini concordance with `score(subject, time)` as the cause-specific CIF.
pub fn concordance_pairs(
    score: impl Fn(usize, f64) -> f64,
    times: &[f64],
    events: &[usize],
    risk: usize,
    horizon: f64,
) -> Option<f64> {
    let n = times.len();
    let (mut num, mut den) = (0.0, 0.0);
    for a in 0..n {
        if events[a] != risk || times[a] > horizon {
            continue;
        }
        for b in 0..n {
            if a == b {
                continue;
            }
            let comparable = times[a] < times[b] || (times[a] == times[b] && events[b] != risk);
            if !comparable {
                continue;
            }
            den += 1.0;
            let (sa, sb) = (score(a, times[a]), score(b, times[a]));
            num += if sa > sb {
                1.0
            } else if sa == sb {
                0.5
            } else {
                0.0
            };
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Times on a coarse lattice (so ties occur) and labels with every risk
/// present: the first `k_risks` subjects carry labels `1..=k_risks`.
pub fn outcomes(rng: &mut impl Rng, n: usize, k_risks: usize) -> (Vec<f64>, Vec<usize>) {
    assert!(n >= k_risks);
    let times = (0..n).map(|_| rng.random_range(1..=6) as f64 * 0.5).collect();
    let events = (0..n)
        .map(|i| {
            if i < k_risks {
                i + 1
            } else {
                rng.random_range(0..=k_risks)
            }
        })
        .collect();
    (times, events)
}

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Random small architecture; widths in `1..=4`.
pub fn small_arch(rng: &mut impl Rng, batch_norm: bool, dropout: f64, feature_dropout: f64) -> Architecture {
    let layers = rng.random_range(1..=2);
    Architecture {
        hidden: (0..layers).map(|_| rng.random_range(1..=4)).collect(),
        batch_norm,
        dropout,
        feature_dropout,
    }
}

/// Train-mode forward with a fixed dropout stream, so the output is a
/// deterministic function of the parameters.
pub fn eta_train(params: &ModelParams, x: &Array2<f64>, dropout_seed: u64) -> Array2<f64> {
    params
        .forward(x.view(), Mode::Train, &mut rng(dropout_seed))
        .expect("forward")
        .0
        .eta
}

/// Five-point central difference of `f` with respect to every trainable scalar.
pub fn numeric_gradient(params: &ModelParams, h: f64, f: impl Fn(&ModelParams) -> f64) -> Vec<Vec<f64>> {
    let shapes: Vec<usize> = params.trainable().iter().map(|(_, s)| s.len()).collect();
    let mut out = Vec::with_capacity(shapes.len());
    for (b, &len) in shapes.iter().enumerate() {
        let mut block = Vec::with_capacity(len);
        for j in 0..len {
            let at = |delta: f64| {
                let mut p = params.clone();
                p.trainable_mut()[b].1[j] += delta;
                f(&p)
            };
            block.push((-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h));
        }
        out.push(block);
    }
    out
}

/// Relative error with a floor on the scale, so exact zeros compare cleanly.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
        let mut r = vec![0.0; v.len()];
        let mut pos = 0;
        while pos < idx.len() {
            let mut end = pos;
            while end + 1 < idx.len() && v[idx[end + 1]] == v[idx[pos]] {
                end += 1;
            }
            let avg = (pos + end) as f64 / 2.0;
            for &i in &idx[pos..=end] {
                r[i] = avg;
            }
            pos = end + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
