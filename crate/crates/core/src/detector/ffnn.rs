use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{derive_seed, AdamConfig, AdamState, Reduction, SeededRng, Tape, Tensor, Var};

use super::spec::FfnnParams;

/// Standardization and layer shapes; weights travel separately.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub(crate) struct NetworkMeta {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Network {
    pub meta: NetworkMeta,
    pub params: Vec<Tensor>,
}

fn logits(tape: &mut Tape<f32>, params: &[Var], x: Var) -> Result<Var> {
    let mut act = x;
    let layers = params.len() / 2;
    for l in 0..layers {
        let y = tape.matmul(act, params[2 * l])?;
        act = tape.add_bias(y, params[2 * l + 1])?;
        if l + 1 < layers {
            act = tape.relu(act);
        }
    }
    Ok(act)
}

impl Network {
    fn standardize(&self, rows: &[&[f64]]) -> Result<Tensor> {
        let d = self.meta.mean.len();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            data.extend(r.iter().zip(&self.meta.mean).zip(&self.meta.scale).map(|((v, m), s)| ((v - m) / s) as f32));
        }
        Tensor::new(vec![rows.len(), d], data)
    }

    pub fn scores(&self, rows: &[&[f64]]) -> Result<Vec<f64>> {
        let mut tape = Tape::<f32>::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let x = tape.constant(self.standardize(rows)?);
        let z = logits(&mut tape, &vars, x)?;
        Ok(tape.value(z).data().iter().map(|&v| 1.0 / (1.0 + (-(v as f64)).exp())).collect())
    }

    pub fn train(x: &[Vec<f64>], y: &[u8], p: &FfnnParams, seed: u64) -> Result<Network> {
        let (n, d) = (x.len(), x[0].len());
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        for r in x {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        let scale: Vec<f64> = var.iter().map(|&v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();

        let mut widths = vec![d];
        widths.extend(&p.hidden);
        widths.push(1);
        let mut rng = SeededRng::new(seed);
        let mut params = Vec::new();
        let mut shapes = Vec::new();
        for win in widths.windows(2) {
            let bound = 1.0 / (win[0] as f64).sqrt();
            let w = (0..win[0] * win[1]).map(|_| rng.uniform_range(-bound, bound) as f32).collect();
            params.push(Tensor::new(vec![win[0], win[1]], w)?);
            params.push(Tensor::zeros(&[win[1]]));
            shapes.push(vec![win[0], win[1]]);
            shapes.push(vec![win[1]]);
        }
        let mut net = Network { meta: NetworkMeta { mean, scale, shapes }, params };
        let rows: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let xs = net.standardize(&rows)?;
        let mut adam = AdamState::new(AdamConfig::with_learning_rate(p.learning_rate), &net.params);
        let mut order: Vec<usize> = (0..n).collect();
        for epoch in 1..=p.epochs {
            SeededRng::new(derive_seed(seed, epoch as u64)).shuffle(&mut order);
            for batch in order.chunks(p.batch_size) {
                let mut data = Vec::with_capacity(batch.len() * d);
                for &i in batch {
                    data.extend_from_slice(&xs.data()[i * d..(i + 1) * d]);
                }
                let targets: Vec<f64> = batch.iter().map(|&i| y[i] as f64).collect();
                let mut tape = Tape::<f32>::new();
                let vars: Vec<Var> = net.params.iter().map(|p| tape.param(p.clone())).collect();
                let xv = tape.constant(Tensor::new(vec![batch.len(), d], data)?);
                let z = logits(&mut tape, &vars, xv)?;
                let loss = tape.bce_with_logits(z, &targets, Reduction::Mean)?;
                if !tape.value(loss).is_finite() {
                    return Err(Error::Divergence { epoch, loss: tape.value(loss).item() as f64 });
                }
                let mut grads = tape.backward(loss)?;
                let owned: Vec<Option<Tensor>> = vars.iter().map(|&v| grads.take(v)).collect();
                let refs: Vec<Option<&Tensor>> = owned.iter().map(Option::as_ref).collect();
                adam.step(&mut net.params, &refs)?;
            }
        }
        Ok(net)
    }
}
