//! Small fully-connected delta-dynamics network.
//!
//! Input: the observed grid max-pooled to 32×32 per channel, followed by the
//! delta action. Output: 32×32 occupancy logits per channel. One tanh hidden
//! layer, per-cell binary cross-entropy, AdamW.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model_io::{bytes_to_f64s, f64s_to_bytes, ModelBlob};
use super::{Prediction, Predictor};
use crate::action::{DeltaAction, Task};
use crate::dataset::Dataset;
use crate::error::{IrpError, Result};
use crate::raster::{track_cells, GridSpec, OccupancyGrid, SparseGrid};
use crate::rng::RngStream;

/// Side of the pooled input and of the output grid.
pub const COARSE: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub hidden: usize,
    pub batch: usize,
    /// Training pairs drawn once and reused every epoch.
    pub pairs: usize,
    /// SD of the Gaussian used to draw delta actions.
    pub delta_sd: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 20,
            hidden: 64,
            batch: 16,
            pairs: 2000,
            delta_sd: 0.125,
            lr: 1e-3,
            weight_decay: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean training loss before any update, then after each epoch.
    pub losses: Vec<f64>,
}

/// Parameters stored flat: `w1 [hidden × n_in]`, `b1`, `w2 [n_out × hidden]`,
/// `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    pub n_in: usize,
    pub hidden: usize,
    pub n_out: usize,
    pub params: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Numerically stable `BCE(sigmoid(z), y)`.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

impl MlpNet {
    pub fn new(n_in: usize, hidden: usize, n_out: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed, "mlp-init");
        let n = hidden * n_in + hidden + n_out * hidden + n_out;
        let mut params = vec![0.0; n];
        let s1 = (1.0 / n_in as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        for w in params[..hidden * n_in].iter_mut() {
            *w = rng.normal() * s1;
        }
        let o2 = hidden * n_in + hidden;
        for w in params[o2..o2 + n_out * hidden].iter_mut() {
            *w = rng.normal() * s2;
        }
        MlpNet {
            n_in,
            hidden,
            n_out,
            params,
        }
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.n_in;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.n_out * self.hidden;
        (b1, w2, b2)
    }

    fn hidden_act(&self, x: &[f64]) -> Vec<f64> {
        let (b1, _, _) = self.offsets();
        let nz: Vec<(usize, f64)> = x.iter().copied().enumerate().filter(|&(_, v)| v != 0.0).collect();
        (0..self.hidden)
            .map(|j| {
                let row = &self.params[j * self.n_in..(j + 1) * self.n_in];
                let s: f64 = nz.iter().map(|&(i, v)| row[i] * v).sum();
                (s + self.params[b1 + j]).tanh()
            })
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden_act(x);
        let (_, w2, b2) = self.offsets();
        (0..self.n_out)
            .map(|k| {
                let row = &self.params[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
                row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + self.params[b2 + k]
            })
            .collect()
    }

    /// Mean per-cell BCE of one example.
    pub fn loss(&self, x: &[f64], y: &[f64]) -> f64 {
        self.logits(x)
            .iter()
            .zip(y)
            .map(|(&z, &t)| bce_logit(z, t))
            .sum::<f64>()
            / self.n_out as f64
    }

    /// Loss of one example and its gradient accumulated into `grad`.
    pub fn loss_and_grad(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        let (b1, w2, b2) = self.offsets();
        let h = self.hidden_act(x);
        let mut dh = vec![0.0; self.hidden];
        let mut loss = 0.0;
        let inv = 1.0 / self.n_out as f64;
        for k in 0..self.n_out {
            let row = w2 + k * self.hidden;
            let z = self.params[row..row + self.hidden]
                .iter()
                .zip(&h)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + self.params[b2 + k];
            loss += bce_logit(z, y[k]);
            let dz = (sigmoid(z) - y[k]) * inv;
            grad[b2 + k] += dz;
            for j in 0..self.hidden {
                grad[row + j] += dz * h[j];
                dh[j] += dz * self.params[row + j];
            }
        }
        for j in 0..self.hidden {
            let da = dh[j] * (1.0 - h[j] * h[j]);
            grad[b1 + j] += da;
            let row = j * self.n_in;
            for (i, &v) in x.iter().enumerate() {
                if v != 0.0 {
                    grad[row + i] += da * v;
                }
            }
        }
        loss * inv
    }

    /// Writes `layer,row,col,value` for every weight and bias.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let (b1, w2, b2) = self.offsets();
        let mut out = String::from("layer,row,col,value\n");
        use std::fmt::Write as _;
        for j in 0..self.hidden {
            for i in 0..self.n_in {
                let _ = writeln!(out, "w1,{j},{i},{}", self.params[j * self.n_in + i]);
            }
        }
        for j in 0..self.hidden {
            let _ = writeln!(out, "b1,{j},0,{}", self.params[b1 + j]);
        }
        for k in 0..self.n_out {
            for j in 0..self.hidden {
                let _ = writeln!(out, "w2,{k},{j},{}", self.params[w2 + k * self.hidden + j]);
            }
        }
        for k in 0..self.n_out {
            let _ = writeln!(out, "b2,{k},0,{}", self.params[b2 + k]);
        }
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| IrpError::io(path, e))
    }
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
    wd: f64,
}

impl AdamW {
    fn new(n: usize, lr: f64, wd: f64) -> Self {
        AdamW {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
            wd,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            let upd = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
            params[i] -= self.lr * (upd + self.wd * params[i]);
        }
    }
}

/// Max-pools on-cells of a `H × W` grid onto `COARSE × COARSE`.
fn pool_cells(cells: &[u32], spec: &GridSpec, out: &mut [f64]) {
    for &i in cells {
        let (r, c) = (i as usize / spec.width, i as usize % spec.width);
        out[r * COARSE / spec.height * COARSE + c * COARSE / spec.width] = 1.0;
    }
}

pub struct MlpPredictor {
    pub net: MlpNet,
    pub task: Task,
    pub spec: GridSpec,
    pub cfg: TrainConfig,
}

impl MlpPredictor {
    fn coarse_spec(&self) -> GridSpec {
        self.spec.with_resolution(COARSE)
    }

    fn input(spec: &GridSpec, cells: &[Vec<u32>], delta: &[f64]) -> Vec<f64> {
        let cc = COARSE * COARSE;
        let mut x = vec![0.0; spec.channels * cc + delta.len()];
        for (c, cl) in cells.iter().enumerate() {
            pool_cells(cl, spec, &mut x[c * cc..(c + 1) * cc]);
        }
        x[spec.channels * cc..].copy_from_slice(delta);
        x
    }

    /// Trains on pairs (grid of (p, a), a′ − a, grid of (p, a′)) with a′ the
    /// grid action nearest to a Gaussian perturbation of a, over the
    /// training split.
    pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(Self, TrainReport)> {
        let train = ds.train_cells()?;
        let spec = ds.grid_spec;
        let na = ds.actions.dim();
        let mut rng = RngStream::new(cfg.seed, "mlp-pairs");
        let cells_of = |p: usize, a: usize, r: usize| -> Vec<Vec<u32>> {
            let rec = ds.record(p, a, r);
            (0..rec.tracks.len())
                .map(|c| track_cells(rec.points(c).into_iter(), &spec))
                .collect()
        };
        let cc = COARSE * COARSE;
        let mut xs = Vec::with_capacity(cfg.pairs);
        let mut ys = Vec::with_capacity(cfg.pairs);
        let mut guard = 0;
        while xs.len() < cfg.pairs {
            guard += 1;
            if guard > 100 * cfg.pairs.max(1) {
                return Err(IrpError::contract("too few valid training records for mlp pairs"));
            }
            let p = train[rng.index(train.len())];
            let a = rng.index(ds.n_actions());
            let r = rng.index(ds.repeats);
            let act = ds.actions.action(a);
            let pert: Vec<f64> = act.iter().map(|&u| u + cfg.delta_sd * rng.normal()).collect();
            let a2 = ds.actions.nearest(&pert);
            if !(ds.record(p, a, r).valid && ds.record(p, a2, r).valid) {
                continue;
            }
            let delta: Vec<f64> = ds.actions.action(a2).iter().zip(&act).map(|(x, y)| x - y).collect();
            xs.push(Self::input(&spec, &cells_of(p, a, r), &delta));
            let mut y = vec![0.0; spec.channels * cc];
            for (c, cl) in cells_of(p, a2, r).iter().enumerate() {
                pool_cells(cl, &spec, &mut y[c * cc..(c + 1) * cc]);
            }
            ys.push(y);
        }
        let mut net = MlpNet::new(spec.channels * cc + na, cfg.hidden, spec.channels * cc, cfg.seed);
        let mean_loss = |net: &MlpNet| -> f64 {
            xs.iter().zip(&ys).map(|(x, y)| net.loss(x, y)).sum::<f64>() / xs.len() as f64
        };
        let mut losses = vec![mean_loss(&net)];
        let mut opt = AdamW::new(net.params.len(), cfg.lr, cfg.weight_decay);
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut grad = vec![0.0; net.params.len()];
        for epoch in 1..=cfg.epochs {
            for i in (1..order.len()).rev() {
                order.swap(i, rng.index(i + 1));
            }
            let mut total = 0.0;
            for chunk in order.chunks(cfg.batch.max(1)) {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in chunk {
                    total += net.loss_and_grad(&xs[i], &ys[i], &mut grad);
                }
                let inv = 1.0 / chunk.len() as f64;
                grad.iter_mut().for_each(|g| *g *= inv);
                opt.step(&mut net.params, &grad);
            }
            let epoch_loss = total / xs.len() as f64;
            if !epoch_loss.is_finite() || net.params.iter().any(|w| !w.is_finite()) {
                return Err(IrpError::TrainingDiverged { epoch });
            }
            losses.push(mean_loss(&net));
            log::debug!("mlp epoch {epoch}: loss {:.5}", losses[epoch]);
        }
        Ok((
            MlpPredictor {
                net,
                task: ds.task,
                spec,
                cfg: cfg.clone(),
            },
            TrainReport { losses },
        ))
    }

    pub fn to_blob(&self) -> ModelBlob {
        ModelBlob::new(
            "mlp",
            serde_json::json!({
                "task": self.task,
                "spec": self.spec,
                "train": self.cfg,
                "n_in": self.net.n_in,
                "hidden": self.net.hidden,
                "n_out": self.net.n_out,
            }),
            f64s_to_bytes(&self.net.params),
        )
    }

    pub fn from_blob(blob: &ModelBlob) -> Result<Self> {
        blob.expect_tag("mlp")?;
        let h = &blob.hyper;
        let field = |k: &str| -> Result<usize> {
            h[k].as_u64()
                .map(|v| v as usize)
                .ok_or_else(|| IrpError::format(format!("mlp model lacks '{k}'")))
        };
        let parse = |k: &str| IrpError::format(format!("mlp model field '{k}' is malformed"));
        let net = MlpNet {
            n_in: field("n_in")?,
            hidden: field("hidden")?,
            n_out: field("n_out")?,
            params: bytes_to_f64s(&blob.payload)?,
        };
        let (_, _, b2) = net.offsets();
        if net.params.len() != b2 + net.n_out {
            return Err(IrpError::format("mlp weight count does not match its shape"));
        }
        Ok(MlpPredictor {
            net,
            task: serde_json::from_value(h["task"].clone()).map_err(|_| parse("task"))?,
            spec: serde_json::from_value(h["spec"].clone()).map_err(|_| parse("spec"))?,
            cfg: serde_json::from_value(h["train"].clone()).map_err(|_| parse("train"))?,
        })
    }
}

impl Predictor for MlpPredictor {
    fn tag(&self) -> &'static str {
        "mlp"
    }

    fn task(&self) -> Task {
        self.task
    }

    fn predict(&self, observed: &OccupancyGrid, delta: &DeltaAction) -> Result<Prediction> {
        if observed.spec != self.spec {
            return Err(IrpError::contract("observed grid spec differs from the model's"));
        }
        if delta.dim() != self.task.action_dim() {
            return Err(IrpError::contract("delta dimension does not match the task"));
        }
        let cells: Vec<Vec<u32>> = (0..self.spec.channels).map(|c| observed.on_cells(c)).collect();
        let x = Self::input(&self.spec, &cells, delta.as_slice());
        let cc = COARSE * COARSE;
        let logits = self.net.logits(&x);
        let grid = SparseGrid {
            spec: self.coarse_spec(),
            channels: (0..self.spec.channels)
                .map(|c| {
                    (0..cc)
                        .map(|i| (i as u32, sigmoid(logits[c * cc + i]) as f32))
                        .collect()
                })
                .collect(),
        };
        Ok(Prediction {
            grid,
            final_keypoints: None,
            trajectory: None,
            provenance: "mlp",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_central_differences() {
        let net = MlpNet::new(12, 5, 7, 3);
        let mut rng = RngStream::new(4, "gc");
        let x: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { rng.normal() }).collect();
        let y: Vec<f64> = (0..7).map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).collect();
        let mut grad = vec![0.0; net.params.len()];
        net.loss_and_grad(&x, &y, &mut grad);
        for _ in 0..10 {
            let i = rng.index(net.params.len());
            let eps = 1e-4;
            let mut plus = net.clone();
            plus.params[i] += eps;
            let mut minus = net.clone();
            minus.params[i] -= eps;
            let fd = (plus.loss(&x, &y) - minus.loss(&x, &y)) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-3 || (fd - grad[i]).abs() < 1e-10, "param {i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn stable_bce() {
        assert!((bce_logit(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(bce_logit(800.0, 1.0) < 1e-300 + 1e-12);
        assert!((bce_logit(-800.0, 1.0) - 800.0).abs() < 1e-9);
    }
}
