//! Exact parameter and multiply-accumulate accounting.
//!
//! Parameters count every learnable scalar exactly once (frozen random
//! filters are excluded; they are not learnable). MACs follow the standard
//! convolution arithmetic `H_out * W_out * k_h * k_w * (C_in/g) * C_out` and
//! `in * out` for fully connected layers; pooling, activations, shuffles and
//! transforms are zero-MAC. Counts are per forward pass of a single sample.

use super::{MailModel, StageBlock};
use crate::blocks::{Emcam, Emila, Erla, Msgdc};
use crate::tensor::ConvSpec;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlockCost {
    pub params: u64,
    pub macs: u64,
}

impl std::ops::Add for BlockCost {
    type Output = BlockCost;
    fn add(self, rhs: BlockCost) -> BlockCost {
        BlockCost { params: self.params + rhs.params, macs: self.macs + rhs.macs }
    }
}

#[derive(Debug, Clone)]
pub struct CostReport {
    pub params: u64,
    pub macs: u64,
    pub per_block: Vec<(String, BlockCost)>,
}

impl CostReport {
    pub fn totals_match_breakdown(&self) -> bool {
        let sum = self.per_block.iter().fold(BlockCost::default(), |a, (_, c)| a + *c);
        sum.params == self.params && sum.macs == self.macs
    }
}

/// MACs of one convolution on an `h x w` input, together with the output
/// extent.
pub fn conv_cost(spec: &ConvSpec, h: usize, w: usize) -> (u64, usize, usize) {
    let (_, _, oh, ow) = spec.geometry(h, w).expect("validated spec");
    let (kh, kw) = spec.kernel;
    let macs =
        (oh * ow * kh * kw * (spec.channels_in / spec.groups) * spec.channels_out) as u64;
    (macs, oh, ow)
}

fn msgdc_macs(m: &Msgdc, h: usize, w: usize) -> u64 {
    let mut total = 0u64;
    if m.projection.is_some() {
        // Channel-preserving projection convolution ahead of the branches.
        let c = m.channels;
        total += (h * w * 3 * 3 * c * c) as u64;
    }
    total += conv_cost(&m.gpc.spec(), h, w).0;
    total += conv_cost(&m.dw3.spec(), h, w).0;
    total += conv_cost(&m.dw5.spec(), h, w).0;
    total
}

fn emila_macs(e: &Emila, h: usize, w: usize) -> u64 {
    let c = e.channels;
    let hidden = e.ca.fc1.weight.shape()[0];
    let ca = (c * hidden + hidden * c) as u64;
    msgdc_macs(&e.msgdc, h, w) + ca + conv_cost(&e.gpc_out.spec, h, w).0
}

fn erla_macs(e: &Erla, h: usize, w: usize) -> (u64, usize, usize) {
    let mut total = 0u64;
    let (mut ih, mut iw) = (h, w);
    if let Some(entry) = &e.entry {
        let (m, oh, ow) = conv_cost(&entry.spec, h, w);
        total += m;
        ih = oh;
        iw = ow;
    }
    if let Some(skip) = &e.skip {
        total += conv_cost(&skip.spec, h, w).0;
    }
    total += emila_macs(&e.emila1, ih, iw);
    total += emila_macs(&e.emila2, ih, iw);
    total += conv_cost(&e.gpc_out.spec, ih, iw).0;
    (total, ih, iw)
}

fn emcam_macs(e: &Emcam, h: usize, w: usize) -> u64 {
    let mut total = 0u64;
    if let Some(sp) = &e.emsca {
        // S on the full map plus S on the halved map, per modality.
        for _ in 0..e.modalities {
            total += msgdc_macs(&sp.msgdc, h, w);
            total += msgdc_macs(&sp.msgdc, h / 2, w / 2);
        }
    }
    // Frequency branch is pooling, subtraction and scalar modulation only.
    total
}

fn params_of(ps: &[crate::nn::Param]) -> u64 {
    ps.iter().map(|p| p.numel() as u64).sum()
}

/// Exact learnable-parameter count.
pub fn count_params(model: &MailModel) -> CostReport {
    build_report(model, None)
}

/// Parameter and MAC accounting for a single forward pass at the given
/// square input extent (defaults to the configured input size).
pub fn count_flops(model: &MailModel, input_size: Option<usize>) -> CostReport {
    build_report(model, Some(input_size.unwrap_or(model.config.input_size)))
}

fn build_report(model: &MailModel, input_size: Option<usize>) -> CostReport {
    let mut per_block: Vec<(String, BlockCost)> = Vec::new();
    let size = input_size.unwrap_or(model.config.input_size);
    let with_macs = input_size.is_some();

    let mut h = size;
    let mut w = size;
    // Stems.
    for (b, (conv, bn)) in model.stems.iter().enumerate() {
        let (m, oh, ow) = conv_cost(&conv.spec, size, size);
        let cost = BlockCost {
            params: params_of(&conv.params()) + params_of(&bn.params()),
            macs: if with_macs { m } else { 0 },
        };
        per_block.push((format!("branch{b}.stem"), cost));
        h = oh;
        w = ow;
    }

    for (s, stage) in model.stages.iter().enumerate() {
        let (mut sh, mut sw) = (h, w);
        for (b, chain) in stage.blocks.iter().enumerate() {
            let (mut bh, mut bw) = (h, w);
            for (d, block) in chain.iter().enumerate() {
                let (macs, oh, ow) = match block {
                    StageBlock::Attention(e) => {
                        let (m, oh, ow) = erla_macs(e, bh, bw);
                        (m, oh, ow)
                    }
                    StageBlock::Plain(p) => {
                        let (m1, oh, ow) = conv_cost(&p.conv1.spec, bh, bw);
                        let (m2, _, _) = conv_cost(&p.conv2.spec, oh, ow);
                        let ms = p.skip.as_ref().map(|sk| conv_cost(&sk.spec, bh, bw).0).unwrap_or(0);
                        (m1 + m2 + ms, oh, ow)
                    }
                };
                per_block.push((
                    format!("branch{b}.stage{s}.block{d}"),
                    BlockCost { params: params_of(&block.params()), macs: if with_macs { macs } else { 0 } },
                ));
                bh = oh;
                bw = ow;
            }
            sh = bh;
            sw = bw;
        }
        if let Some(emcam) = &stage.emcam {
            per_block.push((
                format!("stage{s}.fusion"),
                BlockCost {
                    params: params_of(&emcam.params()),
                    macs: if with_macs { emcam_macs(emcam, sh, sw) } else { 0 },
                },
            ));
        }
        h = sh;
        w = sw;
    }

    for (head, task) in model.heads.iter().zip(&model.config.tasks) {
        let inf = head.weight.shape()[1];
        let outf = head.weight.shape()[0];
        per_block.push((
            format!("head.{}", task.name),
            BlockCost {
                params: params_of(&head.params()),
                macs: if with_macs { (inf * outf) as u64 } else { 0 },
            },
        ));
    }

    let params = per_block.iter().map(|(_, c)| c.params).sum();
    let macs = per_block.iter().map(|(_, c)| c.macs).sum();
    CostReport { params, macs, per_block }
}
