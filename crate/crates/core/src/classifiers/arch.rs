use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_CLASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lstm,
    Gru,
    CnnLstm,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Lstm => "lstm",
            Family::Gru => "gru",
            Family::CnnLstm => "cnn_lstm",
        }
    }

    /// Gate blocks per recurrent cell.
    pub(crate) fn gates(self) -> usize {
        match self {
            Family::Gru => 3,
            Family::Lstm | Family::CnnLstm => 4,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "lstm" => Ok(Family::Lstm),
            "gru" => Ok(Family::Gru),
            "cnn_lstm" | "cnnlstm" => Ok(Family::CnnLstm),
            other => Err(Error::config(format!("unknown model family {other:?}"))),
        }
    }
}

/// Layer layout of a severity classifier.
///
/// Convolutions (CNN-LSTM only) run first, each followed by ReLU, then one
/// max-pool. Recurrent layers pass full sequences to each other; the last
/// one's final hidden state goes through dropout and the ReLU dense layers.
/// The output layer maps the last hidden activation to `n_classes` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub family: Family,
    pub timestep: usize,
    pub n_features: usize,
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    /// Recurrent widths, input side first.
    pub recurrent: Vec<usize>,
    #[serde(default)]
    pub conv_filters: Vec<usize>,
    #[serde(default)]
    pub kernel: usize,
    #[serde(default)]
    pub pool: usize,
    /// Hidden dense widths between the recurrent stack and the output layer.
    #[serde(default)]
    pub dense: Vec<usize>,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub recurrent_dropout: f64,
}

fn default_classes() -> usize {
    N_CLASSES
}

impl ArchSpec {
    fn base(family: Family, timestep: usize, n_features: usize) -> Self {
        ArchSpec {
            family,
            timestep,
            n_features,
            n_classes: N_CLASSES,
            recurrent: vec![32],
            conv_filters: Vec::new(),
            kernel: 0,
            pool: 0,
            dense: vec![32],
            dropout: 0.0,
            recurrent_dropout: 0.0,
        }
    }

    /// One 32-unit LSTM layer with a 32-unit dense layer.
    pub fn desk_lstm(timestep: usize, n_features: usize) -> Self {
        Self::base(Family::Lstm, timestep, n_features)
    }

    pub fn desk_gru(timestep: usize, n_features: usize) -> Self {
        ArchSpec { recurrent: vec![16, 32], ..Self::base(Family::Gru, timestep, n_features) }
    }

    pub fn desk_cnn_lstm(timestep: usize, n_features: usize) -> Self {
        ArchSpec {
            conv_filters: vec![16],
            kernel: 3,
            pool: 2,
            ..Self::base(Family::CnnLstm, timestep, n_features)
        }
    }

    /// Six stacked 128-unit LSTM layers with 15% recurrent dropout.
    pub fn full_lstm(timestep: usize, n_features: usize) -> Self {
        ArchSpec {
            recurrent: vec![128; 6],
            dense: vec![128, 64],
            recurrent_dropout: 0.15,
            ..Self::base(Family::Lstm, timestep, n_features)
        }
    }

    /// Three GRU layers of 32, 64 and 128 units with 20% dropout.
    pub fn full_gru(timestep: usize, n_features: usize) -> Self {
        ArchSpec {
            recurrent: vec![32, 64, 128],
            dense: vec![64],
            dropout: 0.2,
            ..Self::base(Family::Gru, timestep, n_features)
        }
    }

    /// 64 filters of width 3, pooling 2, one 128-unit LSTM.
    pub fn full_cnn_lstm(timestep: usize, n_features: usize) -> Self {
        ArchSpec {
            conv_filters: vec![64],
            kernel: 3,
            pool: 2,
            recurrent: vec![128],
            dense: vec![64],
            dropout: 0.2,
            ..Self::base(Family::CnnLstm, timestep, n_features)
        }
    }

    pub fn preset(name: &str, timestep: usize, n_features: usize) -> Result<Self> {
        Ok(match name {
            "desk_lstm" => Self::desk_lstm(timestep, n_features),
            "desk_gru" => Self::desk_gru(timestep, n_features),
            "desk_cnn_lstm" => Self::desk_cnn_lstm(timestep, n_features),
            "full_lstm" => Self::full_lstm(timestep, n_features),
            "full_gru" => Self::full_gru(timestep, n_features),
            "full_cnn_lstm" => Self::full_cnn_lstm(timestep, n_features),
            other => return Err(Error::config(format!("unknown architecture preset {other:?}"))),
        })
    }

    #[cfg(test)]
    /// Steps seen by the recurrent stack after convolution and pooling.
    pub(crate) fn recurrent_steps(&self) -> usize {
        let mut t = self.timestep;
        for _ in &self.conv_filters {
            t = t + 1 - self.kernel;
        }
        if !self.conv_filters.is_empty() {
            t /= self.pool;
        }
        t
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::config(format!("{} spec: {m}", self.family)));
        if self.timestep == 0 || self.n_features == 0 {
            return fail("timestep and feature count must be positive".into());
        }
        if self.n_classes != N_CLASSES {
            return fail(format!("head must have {N_CLASSES} classes, not {}", self.n_classes));
        }
        if self.recurrent.is_empty() || self.recurrent.contains(&0) {
            return fail("needs at least one recurrent layer, all widths positive".into());
        }
        if self.dense.contains(&0) {
            return fail("dense widths must be positive".into());
        }
        for (name, p) in [("dropout", self.dropout), ("recurrent_dropout", self.recurrent_dropout)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} {p} outside [0,1)"));
            }
        }
        match self.family {
            Family::CnnLstm => {
                if self.conv_filters.is_empty() || self.conv_filters.contains(&0) {
                    return fail("needs at least one convolution with positive filter count".into());
                }
                if self.kernel == 0 || self.pool == 0 {
                    return fail("kernel and pool sizes must be positive".into());
                }
                let mut t = self.timestep;
                for _ in &self.conv_filters {
                    if self.kernel > t {
                        return fail(format!("kernel {} exceeds sequence length {t}", self.kernel));
                    }
                    t = t + 1 - self.kernel;
                }
                if t < self.pool {
                    return fail(format!("pool {} exceeds convolved length {t}", self.pool));
                }
            }
            _ => {
                if !self.conv_filters.is_empty() {
                    return fail("convolution layers are only valid for cnn_lstm".into());
                }
            }
        }
        Ok(())
    }

    /// Width of the activation entering the output layer.
    pub fn penultimate_width(&self) -> usize {
        *self.dense.last().unwrap_or_else(|| self.recurrent.last().expect("validated"))
    }

    /// Named parameter shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut width = self.n_features;
        for (l, &f) in self.conv_filters.iter().enumerate() {
            out.push((format!("conv{l}.w"), vec![self.kernel * width, f]));
            out.push((format!("conv{l}.b"), vec![f]));
            width = f;
        }
        let g = self.family.gates();
        for (l, &h) in self.recurrent.iter().enumerate() {
            out.push((format!("rnn{l}.w"), vec![width, g * h]));
            out.push((format!("rnn{l}.u"), vec![h, g * h]));
            out.push((format!("rnn{l}.b"), vec![g * h]));
            width = h;
        }
        for (l, &d) in self.dense.iter().enumerate() {
            out.push((format!("dense{l}.w"), vec![width, d]));
            out.push((format!("dense{l}.b"), vec![d]));
            width = d;
        }
        out.push(("out.w".into(), vec![width, self.n_classes]));
        out.push(("out.b".into(), vec![self.n_classes]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}
