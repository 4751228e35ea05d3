//! Network assembly: modality branches of residual attention blocks with a
//! cross-modal fusion block after every stage, multitask heads, the weighted
//! multitask loss, cost accounting and checkpoints.

mod checkpoint;
mod cost;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use cost::{count_flops, count_params, BlockCost, CostReport};

use std::cell::{Cell, RefCell};
use std::rc::Rc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{BuildCtx, Emcam, EmcamOptions, Erla, FusionMode, RobustBuild};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, Linear, Mode, Param};
use crate::rng::{mix, SeedSplitter};
use crate::robust::{NoiseMode, Phase, Registry};
use crate::tensor::{
    add_n, global_pool, relu, reshape, softmax_cross_entropy, ConvSpec, GlobalPoolKind, Tensor,
};

#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub classes: usize,
}

/// Robust-extension settings carried by the network configuration.
#[derive(Debug, Clone)]
pub struct RobustConfig {
    /// Share of each multi-scale conv's filters that are frozen random.
    pub rpf_fraction: f64,
    /// Random filter std; `None` uses `1/sqrt(fan_in)` per layer.
    pub sigma: Option<f64>,
    /// Weight decay applied to trainable mixed filters and the noise-layer
    /// parameter group during adversarial training.
    pub weight_decay: f64,
    /// Std of the attention noise draw around its unit mean.
    pub noise_sigma: f64,
    /// Insert random projection convolutions ahead of multi-scale branches.
    pub projection: bool,
    pub projection_kernel: usize,
    /// Keep attention noise and filter resampling active at evaluation.
    pub stochastic_inference: bool,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self {
            rpf_fraction: 0.5,
            sigma: None,
            weight_decay: 1e-4,
            noise_sigma: 0.25,
            projection: true,
            projection_kernel: 3,
            stochastic_inference: true,
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rpf_fraction) {
            return Err(Error::config("robust.rpf_fraction must lie in [0, 1]"));
        }
        if let Some(s) = self.sigma {
            if s <= 0.0 {
                return Err(Error::config("robust.sigma must be positive"));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("robust.weight_decay must be non-negative"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::config("robust.noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NetworkConfig {
    pub modalities: usize,
    pub input_channels: usize,
    /// Square input extent.
    pub input_size: usize,
    pub stage_channels: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub tasks: Vec<TaskSpec>,
    /// Task-by-modality loss weights.
    pub lambda: Vec<Vec<f64>>,
    pub use_dct: bool,
    pub gpc_groups: usize,
    pub shuffle_groups: usize,
    pub ca_reduction: usize,
    /// Residual attention blocks; plain residual conv blocks when false.
    pub with_erla: bool,
    pub with_mfifa: bool,
    pub with_emsca: bool,
    pub fusion: FusionMode,
    pub robust: Option<RobustConfig>,
}

impl NetworkConfig {
    fn base(stage_channels: Vec<usize>, stage_depths: Vec<usize>, input_size: usize) -> Self {
        let modalities = 2;
        let tasks = vec![TaskSpec { name: "class".into(), classes: 4 }];
        let lambda = vec![vec![1.0; modalities]; tasks.len()];
        Self {
            modalities,
            input_channels: 3,
            input_size,
            stage_channels,
            stage_depths,
            tasks,
            lambda,
            use_dct: true,
            gpc_groups: 1,
            shuffle_groups: 4,
            ca_reduction: 4,
            with_erla: true,
            with_mfifa: true,
            with_emsca: true,
            fusion: FusionMode::Parallel,
            robust: None,
        }
    }

    /// Desk-scale preset: narrow four-stage network on 64x64 inputs, sized so
    /// training runs finish in minutes on one CPU core.
    pub fn desk() -> Self {
        Self::base(vec![8, 16, 32, 64], vec![1, 1, 1, 1], 64)
    }

    /// Full-scale preset used for cost reporting: the stage layout of an
    /// 18-layer residual network on 128x128 inputs.
    pub fn full() -> Self {
        Self::base(vec![64, 128, 256, 512], vec![2, 2, 2, 2], 128)
    }

    /// Two-stage miniature for ablation sweeps on 24x24 inputs.
    pub fn tiny() -> Self {
        Self::base(vec![8, 16], vec![1, 1], 24)
    }

    pub fn set_lambda_ones(&mut self) {
        self.lambda = vec![vec![1.0; self.modalities]; self.tasks.len()];
    }

    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    /// Spatial extent of the stage-`s` feature maps.
    pub fn stage_extent(&self, s: usize) -> usize {
        // Stem halves; every stage after the first halves again.
        self.input_size / 2 / (1 << s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities == 0 {
            return Err(Error::config("modalities must be at least 1"));
        }
        if self.stage_channels.is_empty() {
            return Err(Error::config("stage_channels must not be empty"));
        }
        if self.stage_channels.len() != self.stage_depths.len() {
            return Err(Error::config("stage_depths must match stage_channels in length"));
        }
        if self.stage_depths.iter().any(|&d| d == 0) {
            return Err(Error::config("stage_depths entries must be positive"));
        }
        if self.tasks.is_empty() {
            return Err(Error::config("tasks must not be empty"));
        }
        for t in &self.tasks {
            if t.classes < 2 {
                return Err(Error::config(format!("tasks: {} needs at least 2 classes", t.name)));
            }
        }
        if self.lambda.len() != self.tasks.len()
            || self.lambda.iter().any(|row| row.len() != self.modalities)
        {
            return Err(Error::config("lambda must be a tasks-by-modalities matrix"));
        }
        if self.lambda.iter().flatten().any(|&l| l < 0.0) {
            return Err(Error::config("lambda entries must be non-negative"));
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c % self.gpc_groups != 0 {
                return Err(Error::config(format!(
                    "gpc_groups {} must divide stage_channels[{}] = {}",
                    self.gpc_groups, i, c
                )));
            }
            if c % self.shuffle_groups != 0 {
                return Err(Error::config(format!(
                    "shuffle_groups {} must divide stage_channels[{}] = {}",
                    self.shuffle_groups, i, c
                )));
            }
        }
        let last = self.stage_extent(self.stages() - 1);
        if self.with_emsca && (self.with_mfifa || self.with_emsca) && last < 4 {
            return Err(Error::config(format!(
                "input_size {} leaves {}x{} maps at the last stage; spatial attention needs at least 4x4",
                self.input_size, last, last
            )));
        }
        if last == 0 {
            return Err(Error::config("input_size too small for the configured stage count"));
        }
        if let Some(r) = &self.robust {
            r.validate()?;
        }
        Ok(())
    }
}

/// Plain residual block used when the attention block is ablated.
pub struct BasicBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub skip: Option<Conv2d>,
}

impl BasicBlock {
    pub fn new(name: &str, c_in: usize, c_out: usize, stride: usize, init_seed: u64) -> Result<Self> {
        let transition = c_in != c_out || stride != 1;
        Ok(Self {
            conv1: Conv2d::new(
                &format!("{name}.conv1"),
                ConvSpec::new((3, 3), c_in, c_out).with_stride(stride),
                init_seed,
            )?,
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), c_out)?,
            conv2: Conv2d::new(&format!("{name}.conv2"), ConvSpec::new((3, 3), c_out, c_out), init_seed)?,
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), c_out)?,
            skip: if transition {
                Some(Conv2d::new(
                    &format!("{name}.skip"),
                    ConvSpec::new((1, 1), c_in, c_out).with_stride(stride).with_padding(crate::tensor::Padding::Explicit(0)),
                    init_seed,
                )?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = relu(&self.bn1.forward(&self.conv1.forward(x)?, mode)?);
        let h = self.bn2.forward(&self.conv2.forward(&h)?, mode)?;
        let s = match &self.skip {
            Some(p) => p.forward(x)?,
            None => x.clone(),
        };
        Ok(relu(&crate::tensor::add(&s, &h)?))
    }

    pub fn params(&self) -> Vec<Param> {
        let mut ps = self.conv1.params();
        ps.extend(self.bn1.params());
        ps.extend(self.conv2.params());
        ps.extend(self.bn2.params());
        if let Some(s) = &self.skip {
            ps.extend(s.params());
        }
        ps
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        vec![&self.bn1, &self.bn2]
    }
}

pub enum StageBlock {
    Attention(Erla),
    Plain(BasicBlock),
}

impl StageBlock {
    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            StageBlock::Attention(b) => b.forward(x, mode),
            StageBlock::Plain(b) => b.forward(x, mode),
        }
    }

    pub fn params(&self) -> Vec<Param> {
        match self {
            StageBlock::Attention(b) => b.params(),
            StageBlock::Plain(b) => b.params(),
        }
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        match self {
            StageBlock::Attention(b) => b.batch_norms(),
            StageBlock::Plain(b) => b.batch_norms(),
        }
    }
}

pub struct Stage {
    /// `[modality][depth]` blocks.
    pub blocks: Vec<Vec<StageBlock>>,
    pub emcam: Option<Emcam>,
}

pub struct MailModel {
    pub config: NetworkConfig,
    pub stems: Vec<(Conv2d, BatchNorm2d)>,
    pub stages: Vec<Stage>,
    pub heads: Vec<Linear>,
    pub registry: Registry,
    seeds: SeedSplitter,
    phase: Cell<Phase>,
    resamples: Cell<u64>,
    /// Per-phase attention-noise streams (attack, inference).
    man_rngs: [Rc<RefCell<ChaCha8Rng>>; 2],
}

/// Stage outputs per modality, for composition tests.
pub struct ForwardTrace {
    pub stage_outputs: Vec<Vec<Tensor>>,
}

/// Build the network described by `config`; all randomness derives from
/// `seed`.
pub fn build_mail(config: &NetworkConfig, seed: u64) -> Result<MailModel> {
    config.validate()?;
    let seeds = SeedSplitter::new(seed);
    let init_seed = seeds.seed_for("init");
    let mut ctx = BuildCtx::new(init_seed);
    ctx.gpc_groups = config.gpc_groups;
    ctx.shuffle_groups = config.shuffle_groups;
    ctx.ca_reduction = config.ca_reduction;
    ctx.robust = config.robust.as_ref().map(|r| RobustBuild {
        rpf_fraction: r.rpf_fraction,
        projection: r.projection,
        projection_kernel: r.projection_kernel,
        sigma: r.sigma,
        noise_sigma: r.noise_sigma,
    });

    let mut stems = Vec::with_capacity(config.modalities);
    for b in 0..config.modalities {
        let conv = Conv2d::new(
            &format!("branch{b}.stem"),
            ConvSpec::new((7, 7), config.input_channels, config.stage_channels[0]).with_stride(2),
            init_seed,
        )?;
        let bn = BatchNorm2d::new(&format!("branch{b}.stem_bn"), config.stage_channels[0])?;
        stems.push((conv, bn));
    }

    let mut stages = Vec::with_capacity(config.stages());
    let mut c_prev = config.stage_channels[0];
    for (s, &c_out) in config.stage_channels.iter().enumerate() {
        let stride = if s == 0 { 1 } else { 2 };
        let mut blocks = Vec::with_capacity(config.modalities);
        for b in 0..config.modalities {
            let mut chain = Vec::with_capacity(config.stage_depths[s]);
            for d in 0..config.stage_depths[s] {
                let (ci, st) = if d == 0 { (c_prev, stride) } else { (c_out, 1) };
                let name = format!("branch{b}.stage{s}.block{d}");
                let block = if config.with_erla {
                    StageBlock::Attention(Erla::new(&name, ci, c_out, st, &ctx)?)
                } else {
                    StageBlock::Plain(BasicBlock::new(&name, ci, c_out, st, init_seed)?)
                };
                chain.push(block);
            }
            blocks.push(chain);
        }
        let emcam = if config.with_mfifa || config.with_emsca {
            Some(Emcam::new(
                &format!("stage{s}.fusion"),
                c_out,
                config.modalities,
                &EmcamOptions {
                    use_dct: config.use_dct,
                    with_mfifa: config.with_mfifa,
                    with_emsca: config.with_emsca,
                    mode: config.fusion,
                },
                &ctx,
            )?)
        } else {
            None
        };
        stages.push(Stage { blocks, emcam });
        c_prev = c_out;
    }

    let mut heads = Vec::with_capacity(config.tasks.len());
    for t in &config.tasks {
        heads.push(Linear::new(&format!("head.{}", t.name), c_prev, t.classes, init_seed)?);
    }

    let man_rngs = [
        Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(seeds.seed_for("man-attack")))),
        Rc::new(RefCell::new(ChaCha8Rng::seed_from_u64(seeds.seed_for("man-inference")))),
    ];
    let registry = std::mem::take(&mut ctx.registry);

    let model = MailModel {
        config: config.clone(),
        stems,
        stages,
        heads,
        registry,
        seeds,
        phase: Cell::new(Phase::Inference),
        resamples: Cell::new(0),
        man_rngs,
    };
    model.set_phase(Phase::Inference);
    if model.is_robust() {
        model.resample(Phase::Attack);
        model.resample(Phase::Inference);
    }
    Ok(model)
}

impl MailModel {
    pub fn is_robust(&self) -> bool {
        self.config.robust.is_some()
    }

    pub fn phase(&self) -> Phase {
        self.phase.get()
    }

    /// Select which phase's banks and noise stream subsequent forwards use,
    /// without redrawing anything.
    pub fn set_phase(&self, phase: Phase) {
        self.phase.set(phase);
        self.registry.set_phase(phase);
        let rng = self.man_rngs[phase.tag() as usize].clone();
        for site in self.registry.sites() {
            site.attach_rng(rng.clone());
        }
    }

    /// Redraw one phase's frozen filter banks and reseed its noise stream,
    /// then make that phase active. Attack and inference phases use
    /// independent draws.
    pub fn resample(&self, phase: Phase) {
        let n = self.resamples.get() + 1;
        self.resamples.set(n);
        let mut bank_rng = ChaCha8Rng::seed_from_u64(mix(
            self.seeds.seed_for("rpf") ^ mix(phase.tag().wrapping_add(n << 1)),
        ));
        self.registry.resample_banks(phase, &mut bank_rng);
        *self.man_rngs[phase.tag() as usize].borrow_mut() = ChaCha8Rng::seed_from_u64(mix(
            self.seeds.seed_for("man") ^ mix(phase.tag().wrapping_add(n << 1)),
        ));
        if self.is_robust() {
            for p in self.registry.projections() {
                p.set_mode(crate::robust::RpfMode::Random);
            }
        }
        self.set_phase(phase);
    }

    /// Noise behaviour for subsequent forwards.
    pub fn set_noise_mode(&self, mode: NoiseMode) {
        self.registry.set_noise_mode(mode);
    }

    fn check_inputs(&self, xs: &[Tensor]) -> Result<()> {
        if xs.len() != self.config.modalities {
            return Err(Error::contract(format!(
                "model expects {} modalities, got {}",
                self.config.modalities,
                xs.len()
            )));
        }
        let want = [
            xs[0].shape()[0],
            self.config.input_channels,
            self.config.input_size,
            self.config.input_size,
        ];
        for x in xs {
            if x.shape() != want {
                return Err(Error::dimension(format!(
                    "input shape {:?} does not match configured {:?}",
                    x.shape(),
                    want
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, xs: &[Tensor], mode: Mode) -> Result<Vec<Tensor>> {
        Ok(self.forward_with_trace(xs, mode)?.0)
    }

    pub fn forward_with_trace(&self, xs: &[Tensor], mode: Mode) -> Result<(Vec<Tensor>, ForwardTrace)> {
        self.check_inputs(xs)?;
        let mut hs: Vec<Tensor> = Vec::with_capacity(xs.len());
        for (x, (conv, bn)) in xs.iter().zip(&self.stems) {
            hs.push(relu(&bn.forward(&conv.forward(x)?, mode)?));
        }
        let mut trace = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for (b, chain) in stage.blocks.iter().enumerate() {
                for block in chain {
                    hs[b] = block.forward(&hs[b], mode)?;
                }
            }
            if let Some(emcam) = &stage.emcam {
                hs = emcam.forward(&hs)?;
            }
            trace.push(hs.clone());
        }
        let refs: Vec<&Tensor> = hs.iter().collect();
        let fused = add_n(&refs)?;
        let pooled = global_pool(&fused, GlobalPoolKind::Avg)?;
        let feat = reshape(&pooled, &[pooled.shape()[0], pooled.shape()[1]])?;
        let mut logits = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            logits.push(head.forward(&feat)?);
        }
        Ok((logits, ForwardTrace { stage_outputs: trace }))
    }

    /// Training loss: per-task cross-entropies weighted by the summed
    /// modality weights of the lambda matrix.
    pub fn loss(&self, logits: &[Tensor], labels: &[Vec<usize>]) -> Result<Tensor> {
        if logits.len() != self.config.tasks.len() || labels.len() != logits.len() {
            return Err(Error::contract("loss needs one logit matrix and label set per task"));
        }
        let mut acc: Option<Tensor> = None;
        for (t, lg) in logits.iter().enumerate() {
            let weight: f64 = self.config.lambda[t].iter().sum();
            let ce = softmax_cross_entropy(lg, &labels[t])?;
            let term = crate::tensor::scale_const(&ce, weight);
            acc = Some(match acc {
                Some(prev) => crate::tensor::add(&prev, &term)?,
                None => term,
            });
        }
        Ok(acc.expect("at least one task"))
    }

    /// All trainable parameters in deterministic construction order.
    pub fn params(&self) -> Vec<Param> {
        let mut ps = Vec::new();
        for (conv, bn) in &self.stems {
            ps.extend(conv.params());
            ps.extend(bn.params());
        }
        for stage in &self.stages {
            for chain in &stage.blocks {
                for block in chain {
                    ps.extend(block.params());
                }
            }
            if let Some(e) = &stage.emcam {
                ps.extend(e.params());
            }
        }
        for head in &self.heads {
            ps.extend(head.params());
        }
        ps
    }

    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        let mut bns = Vec::new();
        for (_, bn) in &self.stems {
            bns.push(bn);
        }
        for stage in &self.stages {
            for chain in &stage.blocks {
                for block in chain {
                    bns.extend(block.batch_norms());
                }
            }
        }
        bns
    }

    pub fn zero_grad(&self) {
        for p in self.params() {
            p.zero_grad();
        }
    }

    /// Enable or disable gradient tracking on every trainable parameter
    /// (used to cheapen attack generation).
    pub fn set_param_tracking(&self, track: bool) {
        for p in self.params() {
            p.set_tracking(track);
        }
    }

    /// Enable or disable running-statistic updates in every batch norm.
    pub fn set_stat_tracking(&self, track: bool) {
        for bn in self.batch_norms() {
            bn.set_stat_tracking(track);
        }
    }

    /// The regularized noise-layer parameter group: learnable noise weights
    /// plus the modulation scalars of robustified attention blocks.
    pub fn rpan_parameter_group(&self) -> Vec<Param> {
        let mut ps: Vec<Param> = self.registry.sites().iter().map(|s| s.delta()).collect();
        ps.extend(self.registry.rpan_scalars());
        ps
    }

    /// Total number of attention and fusion blocks (the layer count of the
    /// stochastic defense), and the branch count.
    pub fn rpan_extent(&self) -> (usize, usize) {
        let mut e = 0;
        for stage in &self.stages {
            for chain in &stage.blocks {
                e += chain.len();
            }
            if stage.emcam.is_some() {
                e += 1;
            }
        }
        (e, self.config.modalities)
    }

    /// Copy branch-0 parameters into every other branch. Test helper for
    /// symmetry contracts.
    pub fn symmetrize_branches(&self) -> Result<()> {
        use std::collections::HashMap;
        let params = self.params();
        let mut by_name: HashMap<String, Param> = HashMap::new();
        for p in &params {
            by_name.insert(p.name(), p.clone());
        }
        for p in &params {
            let name = p.name();
            if let Some(rest) = name.strip_prefix("branch") {
                if let Some(dot) = rest.find('.') {
                    let idx: usize = rest[..dot].parse().unwrap_or(0);
                    if idx > 0 {
                        let source = format!("branch0{}", &rest[dot..]);
                        if let Some(src) = by_name.get(&source) {
                            p.set_data(src.tensor().data().to_vec())?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Named tensors persisted in checkpoints: trainable parameters plus
    /// batch norm running statistics.
    pub fn state_entries(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut entries = Vec::new();
        for p in self.params() {
            entries.push((p.name(), p.shape(), p.tensor().data().to_vec()));
        }
        for bn in self.batch_norms() {
            for (name, data, shape) in bn.buffers() {
                entries.push((name, shape, data));
            }
        }
        entries
    }

    /// Load named tensors produced by [`MailModel::state_entries`].
    pub fn load_state(&self, entries: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        use std::collections::HashMap;
        let mut by_name: HashMap<&str, &(String, Vec<usize>, Vec<f64>)> = HashMap::new();
        for e in entries {
            by_name.insert(e.0.as_str(), e);
        }
        for p in self.params() {
            let name = p.name();
            let e = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::format(format!("checkpoint is missing tensor {name}")))?;
            if e.1 != p.shape() {
                return Err(Error::format(format!(
                    "checkpoint tensor {name} has shape {:?}, model expects {:?}",
                    e.1,
                    p.shape()
                )));
            }
            p.set_data(e.2.clone())?;
        }
        for bn in self.batch_norms() {
            for (name, _, _) in bn.buffers() {
                let e = by_name
                    .get(name.as_str())
                    .ok_or_else(|| Error::format(format!("checkpoint is missing buffer {name}")))?;
                let suffix = name.rsplit('.').next().unwrap();
                bn.load_buffer(suffix, &e.2)?;
            }
        }
        Ok(())
    }
}

/// Task-modality weighted multitask loss.
///
/// `logits[t][m]` are the modality-`m` logits for task `t`; the total is
/// `sum_t sum_m lambda[t][m] * CE(logits[t][m], labels[t])` with the
/// cross-entropy averaged over the batch.
pub fn tmtl_loss(logits: &[Vec<Tensor>], labels: &[Vec<usize>], lambda: &[Vec<f64>]) -> Result<Tensor> {
    if logits.len() != labels.len() || logits.len() != lambda.len() {
        return Err(Error::contract("tmtl_loss needs aligned logits, labels and weights per task"));
    }
    let mut acc: Option<Tensor> = None;
    for (t, per_modality) in logits.iter().enumerate() {
        if per_modality.len() != lambda[t].len() {
            return Err(Error::contract(format!(
                "task {t}: {} modality logits vs {} weights",
                per_modality.len(),
                lambda[t].len()
            )));
        }
        for (m, lg) in per_modality.iter().enumerate() {
            if lambda[t][m] == 0.0 {
                continue;
            }
            let ce = softmax_cross_entropy(lg, &labels[t])?;
            let term = crate::tensor::scale_const(&ce, lambda[t][m]);
            acc = Some(match acc {
                Some(prev) => crate::tensor::add(&prev, &term)?,
                None => term,
            });
        }
    }
    Ok(match acc {
        Some(t) => t,
        None => Tensor::scalar(0.0),
    })
}
