//! Cause-specific Cox partial likelihood with risk-frequency weights.
//!
//! For risk `k`, the weighted negative log partial likelihood is
//!
//! ```text
//! L_k = -w_k * sum_{n : E_n = k} [ eta_k(x_n) - log sum_{j : T_j >= T_n} exp(eta_k(x_j)) ]
//! ```
//!
//! Subjects tied with an event time belong to its risk set (Breslow ties).

use ndarray::{Array1, Array2, ArrayView2};

use crate::data::event_counts;
use crate::error::{Error, Result};
use crate::model::{Gradients, ModelParams};

/// Per-risk weights `w_k`, proportional to `1 / count(E = k)` and scaled to
/// sum to `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskWeights(pub Vec<f64>);

impl RiskWeights {
    pub fn compute(events: &[usize], num_risks: usize) -> Result<Self> {
        let counts = event_counts(events, num_risks);
        if let Some(risk) = (1..=num_risks).find(|&k| counts[k] == 0) {
            return Err(Error::MissingRisk {
                risk,
                hint: "risk weights need at least one event per risk".into(),
            });
        }
        let inv: Vec<f64> = counts[1..].iter().map(|&c| 1.0 / c as f64).collect();
        let total: f64 = inv.iter().sum();
        let scale = num_risks as f64 / total;
        Ok(Self(inv.into_iter().map(|w| w * scale).collect()))
    }

    pub fn uniform(num_risks: usize) -> Self {
        Self(vec![1.0; num_risks])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_risk: Vec<f64>,
    pub penalty: f64,
}

impl LossValue {
    pub fn with_penalty(mut self, penalty: f64) -> Self {
        self.penalty = penalty;
        self.total = self.per_risk.iter().sum::<f64>() + penalty;
        self
    }
}

/// Weighted loss and its gradient with respect to `eta` (`N x K`).
///
/// Rows may come in any order; the risk sets are built from `times`.
pub fn neg_log_partial_likelihood(
    eta: ArrayView2<f64>,
    times: &[f64],
    events: &[usize],
    weights: &RiskWeights,
) -> Result<(LossValue, Array2<f64>)> {
    let (n, k_risks) = eta.dim();
    if times.len() != n || events.len() != n {
        return Err(Error::Shape(format!(
            "eta has {n} rows but {} times and {} events",
            times.len(),
            events.len()
        )));
    }
    if weights.len() != k_risks {
        return Err(Error::Shape(format!("{} weights for {k_risks} risks", weights.len())));
    }
    if let Some(((row, column), _)) = eta.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { row, column });
    }

    // Descending time; ties are contiguous.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let groups = tie_groups(&order, times);

    let mut per_risk = vec![0.0; k_risks];
    let mut grad = Array2::zeros((n, k_risks));
    let mut log_denom = vec![f64::NEG_INFINITY; groups.len()];

    for k in 0..k_risks {
        let label = k + 1;
        let w = weights.0[k];

        // Walk from the latest time backwards, growing the risk set.
        let mut acc = LogSumExp::default();
        let mut loss = 0.0;
        for (g, range) in groups.iter().enumerate() {
            for &j in &order[range.clone()] {
                acc.push(eta[[j, k]]);
            }
            log_denom[g] = acc.value();
            for &j in &order[range.clone()] {
                if events[j] == label {
                    loss -= eta[[j, k]] - log_denom[g];
                }
            }
        }
        per_risk[k] = w * loss;

        // d/d eta_j = w * (-[E_j = k] + sum over event times t <= T_j of d(t) exp(eta_j) / S(t)),
        // accumulated in log space from the earliest time forwards.
        let mut inv_mass = LogSumExp::default();
        for (g, range) in groups.iter().enumerate().rev() {
            let d = order[range.clone()].iter().filter(|&&j| events[j] == label).count();
            if d > 0 {
                inv_mass.push((d as f64).ln() - log_denom[g]);
            }
            let a = inv_mass.value();
            for &j in &order[range.clone()] {
                let mut gj = if a.is_finite() { (eta[[j, k]] + a).exp() } else { 0.0 };
                if events[j] == label {
                    gj -= 1.0;
                }
                grad[[j, k]] = w * gj;
            }
        }
    }

    let total = per_risk.iter().sum();
    Ok((
        LossValue {
            total,
            per_risk,
            penalty: 0.0,
        },
        grad,
    ))
}

fn tie_groups(order: &[usize], times: &[f64]) -> Vec<std::ops::Range<usize>> {
    let mut groups = Vec::new();
    let mut start = 0;
    for pos in 1..=order.len() {
        if pos == order.len() || times[order[pos]] != times[order[start]] {
            groups.push(start..pos);
            start = pos;
        }
    }
    groups
}

/// Streaming log-sum-exp with a running maximum.
#[derive(Debug, Clone, Copy)]
struct LogSumExp {
    max: f64,
    sum: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }
}

impl LogSumExp {
    fn push(&mut self, v: f64) {
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + 1.0;
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// `gamma * sum theta^2` over the selected parameters, and its gradient `2 gamma theta`.
///
/// By default only weight matrices and projection vectors are penalized;
/// `all_params` extends the sum to biases and batch-norm scale/shift.
pub fn l2_penalty(params: &ModelParams, gamma: f64, all_params: bool) -> (f64, Vec<Array1<f64>>) {
    let mut value = 0.0;
    let mut grads = Vec::new();
    for (kind, block) in params.trainable() {
        if all_params || kind.is_weight() {
            value += block.iter().map(|v| v * v).sum::<f64>();
            grads.push(block.iter().map(|v| 2.0 * gamma * v).collect());
        } else {
            grads.push(Array1::zeros(block.len()));
        }
    }
    (gamma * value, grads)
}

/// Add a penalty gradient from [`l2_penalty`] into model gradients.
pub fn add_penalty_gradient(grads: &mut Gradients, penalty: &[Array1<f64>]) {
    let mut blocks = penalty.iter();
    let mut add = |dst: &mut [f64]| {
        let src = blocks.next().expect("penalty blocks match parameter blocks");
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    };
    for net in &mut grads.nets {
        for g in net {
            add(g.weight.as_slice_mut().expect("standard layout"));
            add(g.bias.as_slice_mut().expect("standard layout"));
            if let (Some(sc), Some(sh)) = (&mut g.scale, &mut g.shift) {
                add(sc.as_slice_mut().expect("standard layout"));
                add(sh.as_slice_mut().expect("standard layout"));
            }
        }
    }
    add(grads.projections.as_slice_mut().expect("standard layout"));
}
