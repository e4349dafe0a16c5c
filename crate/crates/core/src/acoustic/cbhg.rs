//! Convolution-bank + highway + bidirectional-GRU encoder block.
//!
//! Desk-scale variant of the Tacotron encoder block: a pre-projection,
//! a bank of 1-D convolutions with widths `1..=bank_k`, a width-3 linear
//! projection with a residual connection, highway layers, then a
//! bidirectional GRU. Output width is `2 * gru_hidden`.

use crate::nn::{Bidirectional, Binding, Conv1d, Graph, Highway, Linear, NodeId, ParamStore};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CbhgConfig {
    pub in_dim: usize,
    pub bank_k: usize,
    pub bank_channels: usize,
    pub proj_dim: usize,
    pub highways: usize,
    pub gru_hidden: usize,
}

impl CbhgConfig {
    pub fn out_dim(&self) -> usize {
        2 * self.gru_hidden
    }
}

pub struct Cbhg {
    pre: Linear,
    bank: Vec<Conv1d>,
    proj: Conv1d,
    highways: Vec<Highway>,
    rnn: Bidirectional,
    pub cfg: CbhgConfig,
}

impl Cbhg {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cfg: CbhgConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let pre = Linear::new(store, &format!("{name}.pre"), cfg.in_dim, cfg.proj_dim, rng);
        let bank = (1..=cfg.bank_k)
            .map(|k| {
                Conv1d::new(
                    store,
                    &format!("{name}.bank{k}"),
                    k,
                    cfg.proj_dim,
                    cfg.bank_channels,
                    rng,
                )
            })
            .collect();
        let proj = Conv1d::new(
            store,
            &format!("{name}.proj"),
            3,
            cfg.bank_k * cfg.bank_channels,
            cfg.proj_dim,
            rng,
        );
        let highways = (0..cfg.highways)
            .map(|i| Highway::new(store, &format!("{name}.hw{i}"), cfg.proj_dim, rng))
            .collect();
        let rnn = Bidirectional::gru(
            store,
            &format!("{name}.gru"),
            cfg.proj_dim,
            cfg.gru_hidden,
            rng,
        );
        Cbhg {
            pre,
            bank,
            proj,
            highways,
            rnn,
            cfg,
        }
    }

    /// A representative parameter of the block (for gradient-flow audits).
    pub fn probe_param(&self) -> crate::nn::ParamId {
        self.pre.w
    }

    /// `x`: N x in_dim, output N x out_dim.
    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let pre = self.pre.apply(g, bind, x);
        let pre = g.relu(pre);
        let bank_outs: Vec<NodeId> = self
            .bank
            .iter()
            .map(|conv| {
                let y = conv.apply(g, bind, pre);
                g.relu(y)
            })
            .collect();
        let stacked = g.concat_cols(&bank_outs);
        let projected = self.proj.apply(g, bind, stacked);
        let mut h = g.add(pre, projected);
        for hw in &self.highways {
            h = hw.apply(g, bind, h);
        }
        self.rnn.apply(g, bind, h)
    }
}
