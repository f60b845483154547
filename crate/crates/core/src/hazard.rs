//! Breslow baselines and absolute-risk prediction.
//!
//! Baselines are stored as hazard increments on the grid of distinct
//! observed event times (any cause). For a subject with scores `eta`,
//! the discrete cause-specific hazard at grid time `t_m` is
//! `dH_k(t_m) * exp(eta_k)`, survival just before `t_m` is
//! `exp(-sum_{l < m} sum_k hazard_k(t_l))`, and the cumulative incidence is
//! `F_k(t) = sum_{t_m <= t} S(t_{m-1}) * hazard_k(t_m)`.
//!
//! Nothing caps `F_k` at 1. Because a discrete increment may exceed 1, the
//! sum `sum_k F_k(t)` always bounds `1 - S(t)` from above and can itself
//! pass 1 when hazards are large.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineHazards {
    /// Strictly increasing distinct event times.
    pub times: Vec<f64>,
    /// `K x M` baseline hazard increments; row `k` is risk `k + 1`.
    pub increments: Array2<f64>,
}

impl BaselineHazards {
    pub fn num_risks(&self) -> usize {
        self.increments.nrows()
    }

    /// Baseline cumulative hazard of risk index `k` at time `t` (step function).
    pub fn cumulative(&self, k: usize, t: f64) -> f64 {
        let m = self.times.partition_point(|&g| g <= t);
        self.increments.row(k).iter().take(m).sum()
    }

    /// Grid index one past the last time `<= t`.
    pub fn grid_end(&self, t: f64) -> usize {
        self.times.partition_point(|&g| g <= t)
    }
}

/// Breslow increments `d_k(t) / sum_{j : T_j >= t} exp(eta_k(x_j))`.
pub fn breslow(eta: ArrayView2<f64>, times: &[f64], events: &[usize]) -> Result<BaselineHazards> {
    let (n, k_risks) = eta.dim();
    if times.len() != n || events.len() != n {
        return Err(Error::Shape(format!("eta has {n} rows but {} times", times.len())));
    }
    if let Some(((row, column), _)) = eta.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row, column });
    }
    let mut counts = vec![0usize; k_risks + 1];
    for &e in events {
        if e > k_risks {
            return Err(Error::validation(format!("event label {e} exceeds {k_risks} risks")));
        }
        counts[e] += 1;
    }
    if let Some(risk) = (1..=k_risks).find(|&k| counts[k] == 0) {
        return Err(Error::MissingRisk {
            risk,
            hint: "the baseline hazard needs at least one event per risk".into(),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));

    let mut grid: Vec<f64> = order.iter().filter(|&&i| events[i] != 0).map(|&i| times[i]).collect();
    grid.dedup();
    let m_len = grid.len();
    let mut increments = Array2::zeros((k_risks, m_len));

    // Suffix sums of relative risk, walked from the latest time down.
    let mut at_risk = vec![0.0; k_risks];
    let mut pos = n;
    for m in (0..m_len).rev() {
        let t = grid[m];
        let mut deaths = vec![0usize; k_risks];
        while pos > 0 && times[order[pos - 1]] >= t {
            pos -= 1;
            let j = order[pos];
            for (k, acc) in at_risk.iter_mut().enumerate() {
                *acc += eta[[j, k]].exp();
            }
            if times[j] == t && events[j] > 0 {
                deaths[events[j] - 1] += 1;
            }
        }
        for k in 0..k_risks {
            if deaths[k] > 0 {
                if at_risk[k] <= 0.0 {
                    return Err(Error::Internal(format!("empty risk set at event time {t}")));
                }
                increments[[k, m]] = deaths[k] as f64 / at_risk[k];
            }
        }
    }
    Ok(BaselineHazards {
        times: grid,
        increments,
    })
}

/// Cumulative incidence and overall survival on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CifCurves {
    pub times: Vec<f64>,
    /// `K x M`
    pub cif: Array2<f64>,
    /// Survival at each grid time, after that time's events.
    pub survival: Vec<f64>,
}

impl CifCurves {
    /// `F_k(t)` as a right-continuous step function (0 before the first grid time).
    pub fn cif_at(&self, k: usize, t: f64) -> f64 {
        match self.times.partition_point(|&g| g <= t) {
            0 => 0.0,
            m => self.cif[[k, m - 1]],
        }
    }

    pub fn survival_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&g| g <= t) {
            0 => 1.0,
            m => self.survival[m - 1],
        }
    }
}

/// Curves for one subject, truncated to grid times `<= horizon`.
pub fn predict_cif(baseline: &BaselineHazards, eta_row: ArrayView1<f64>, horizon: f64) -> Result<CifCurves> {
    let k_risks = baseline.num_risks();
    if eta_row.len() != k_risks {
        return Err(Error::Shape(format!("{} scores for {k_risks} risks", eta_row.len())));
    }
    if horizon.is_nan() || horizon < 0.0 {
        return Err(Error::validation(format!("horizon must be >= 0, got {horizon}")));
    }
    let m_len = baseline.grid_end(horizon);
    let rel: Vec<f64> = eta_row.iter().map(|e| e.exp()).collect();
    let mut cif = Array2::zeros((k_risks, m_len));
    let mut survival = Vec::with_capacity(m_len);
    let mut running = vec![0.0; k_risks];
    let mut cum_hazard = 0.0_f64;
    for m in 0..m_len {
        let s_before = (-cum_hazard).exp();
        for k in 0..k_risks {
            let h = baseline.increments[[k, m]] * rel[k];
            running[k] += s_before * h;
            cif[[k, m]] = running[k];
            cum_hazard += h;
        }
        survival.push((-cum_hazard).exp());
    }
    Ok(CifCurves {
        times: baseline.times[..m_len].to_vec(),
        cif,
        survival,
    })
}

/// `F_k(t | x_n)` for every subject at one time.
pub fn cif_at_time(baseline: &BaselineHazards, eta: ArrayView2<f64>, k: usize, t: f64) -> Result<Vec<f64>> {
    eta.rows()
        .into_iter()
        .map(|row| predict_cif(baseline, row, t).map(|c| c.cif_at(k, t)))
        .collect()
}

/// Full-grid CIF of risk index `k` for every subject, `N x M`.
pub fn cif_matrix(baseline: &BaselineHazards, eta: ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    let m_len = baseline.times.len();
    let mut out = Array2::zeros((eta.nrows(), m_len));
    for (n, row) in eta.rows().into_iter().enumerate() {
        let curves = predict_cif(baseline, row, f64::INFINITY)?;
        out.row_mut(n).assign(&curves.cif.row(k));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn one_step(increments: Array2<f64>) -> BaselineHazards {
        BaselineHazards {
            times: vec![1.0],
            increments,
        }
    }

    #[test]
    fn two_subject_increment() {
        let bh = breslow(Array2::zeros((2, 1)).view(), &[1.0, 2.0], &[1, 0]).unwrap();
        assert_eq!(bh.times, vec![1.0]);
        assert_abs_diff_eq!(bh.increments[[0, 0]], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn shifting_eta_rescales_increments() {
        let eta = array![[0.2, 1.0], [-0.5, 0.3], [1.1, -0.2], [0.0, 0.4]];
        let times = [1.0, 2.0, 2.0, 4.0];
        let events = [1, 2, 1, 0];
        let base = breslow(eta.view(), &times, &events).unwrap();
        let c = 0.7;
        let shifted = breslow((&eta + c).view(), &times, &events).unwrap();
        for k in 0..2 {
            for m in 0..base.times.len() {
                let a = base.increments[[k, m]] * eta[[0, k]].exp();
                let b = shifted.increments[[k, m]] * (eta[[0, k]] + c).exp();
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                assert_abs_diff_eq!(
                    shifted.increments[[k, m]],
                    base.increments[[k, m]] * (-c).exp(),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn missing_risk_is_error() {
        assert!(breslow(Array2::zeros((2, 2)).view(), &[1.0, 2.0], &[1, 0]).is_err());
    }

    #[test]
    fn one_step_single_risk() {
        let c = predict_cif(&one_step(array![[0.1]]), array![0.0].view(), 5.0).unwrap();
        assert_abs_diff_eq!(c.cif[[0, 0]], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.survival[0], (-0.1f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(c.survival[0], 0.904837, epsilon = 1e-6);
    }

    #[test]
    fn one_step_two_risks() {
        let c = predict_cif(&one_step(array![[0.1], [0.1]]), array![0.0, 0.0].view(), 1.0).unwrap();
        assert_abs_diff_eq!(c.cif[[0, 0]], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.cif[[1, 0]], 0.1, epsilon = 1e-15);
        let total = c.cif[[0, 0]] + c.cif[[1, 0]];
        assert!(total >= 1.0 - c.survival[0]);
        assert_abs_diff_eq!(1.0 - c.survival[0], 0.18127, epsilon = 1e-5);
    }

    #[test]
    fn zero_hazard_is_flat() {
        let bh = BaselineHazards {
            times: vec![1.0, 2.0],
            increments: Array2::zeros((2, 2)),
        };
        let c = predict_cif(&bh, array![3.0, -1.0].view(), 10.0).unwrap();
        assert!(c.cif.iter().all(|&v| v == 0.0));
        assert!(c.survival.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn horizon_before_grid() {
        let bh = one_step(array![[0.3]]);
        let c = predict_cif(&bh, array![0.0].view(), 0.5).unwrap();
        assert!(c.times.is_empty());
        assert_eq!(c.cif_at(0, 0.5), 0.0);
        assert_eq!(c.survival_at(0.5), 1.0);
        assert!(predict_cif(&bh, array![0.0].view(), -1.0).is_err());
    }

    #[test]
    fn step_function_lookup() {
        let bh = BaselineHazards {
            times: vec![1.0, 3.0],
            increments: array![[0.1, 0.2]],
        };
        let c = predict_cif(&bh, array![0.0].view(), f64::INFINITY).unwrap();
        assert_eq!(c.cif_at(0, 2.0), c.cif[[0, 0]]);
        assert_eq!(c.cif_at(0, 3.0), c.cif[[0, 1]]);
        assert_abs_diff_eq!(bh.cumulative(0, 2.5), 0.1);
    }
}
