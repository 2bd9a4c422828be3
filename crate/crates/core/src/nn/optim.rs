//! Optimizers over the parameter visitor: SGD with momentum and AdamW.

use std::collections::BTreeMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::{Layer, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    AdamW { beta1: f64, beta2: f64, eps: f64, weight_decay: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }
}

impl OptimizerKind {
    pub fn adamw() -> Self {
        OptimizerKind::AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
struct ParamState<S> {
    /// Momentum buffer (SGD) or first moment (AdamW).
    m: ArrayD<S>,
    /// Second moment (AdamW only).
    v: Option<ArrayD<S>>,
    /// AdamW step counter for bias correction.
    t: u64,
}

/// Holds per-parameter state keyed by visitor path, so the same optimizer
/// instance must be reused across steps. Parameters filtered out of a step
/// keep their state untouched.
#[derive(Debug, Clone)]
pub struct Optimizer<S: Scalar> {
    kind: OptimizerKind,
    lr: f64,
    state: BTreeMap<String, ParamState<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            state: BTreeMap::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Apply one update from the accumulated gradients of every parameter
    /// whose path passes `filter`. Does not zero gradients.
    pub fn step<L: Layer<S> + ?Sized>(&mut self, model: &mut L, filter: &dyn Fn(&str) -> bool) {
        let lr = S::c(self.lr);
        let kind = self.kind;
        let state = &mut self.state;
        model.visit_params("", &mut |name, mut p, g| {
            if !filter(name) {
                return;
            }
            let entry = state.entry(name.to_string()).or_insert_with(|| ParamState {
                m: ArrayD::zeros(g.raw_dim()),
                v: matches!(kind, OptimizerKind::AdamW { .. }).then(|| ArrayD::zeros(g.raw_dim())),
                t: 0,
            });
            match kind {
                OptimizerKind::Sgd { momentum } => {
                    let mom = S::c(momentum);
                    ndarray::Zip::from(&mut entry.m).and(&g).for_each(|m, &gv| {
                        *m = *m * mom + gv;
                    });
                    ndarray::Zip::from(&mut p).and(&entry.m).for_each(|pv, &m| {
                        *pv = *pv - lr * m;
                    });
                }
                OptimizerKind::AdamW { beta1, beta2, eps, weight_decay } => {
                    entry.t += 1;
                    let (b1, b2) = (S::c(beta1), S::c(beta2));
                    let corr1 = S::c(1.0 - beta1.powi(entry.t as i32));
                    let corr2 = S::c(1.0 - beta2.powi(entry.t as i32));
                    let eps = S::c(eps);
                    let wd = S::c(weight_decay);
                    let v = entry.v.as_mut().expect("adamw state has second moment");
                    ndarray::Zip::from(&mut entry.m).and(&g).for_each(|m, &gv| {
                        *m = b1 * *m + (S::one() - b1) * gv;
                    });
                    ndarray::Zip::from(&mut *v).and(&g).for_each(|vv, &gv| {
                        *vv = b2 * *vv + (S::one() - b2) * gv * gv;
                    });
                    ndarray::Zip::from(&mut p).and(&entry.m).and(&*v).for_each(|pv, &m, &vv| {
                        let mhat = m / corr1;
                        let vhat = vv / corr2;
                        *pv = *pv - lr * (mhat / (vhat.sqrt() + eps) + wd * *pv);
                    });
                }
            }
        });
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm<S: Scalar, L: Layer<S> + ?Sized>(model: &mut L, max_norm: f64) -> f64 {
    let mut sq = 0.0f64;
    model.visit_params("", &mut |_, _, g| {
        for v in g.iter() {
            let v = v.to_f64().expect("finite grad");
            sq += v * v;
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = S::c(max_norm / norm);
        model.visit_params("", &mut |_, _, mut g| {
            g.mapv_inplace(|v| v * scale);
        });
    }
    norm
}
