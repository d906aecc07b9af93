//! The binary-first cell search space.
//!
//! Eight candidate operations: grouped 3x3/5x5 convolutions, their dilated
//! variants, identity, 3x3 max/avg pooling and the zero op. There is no 1x1
//! and no depthwise convolution inside cells, every conv op contributes
//! exactly one convolution of depth to the network, and every stride-1 conv
//! op carries an explicit identity shortcut (`f(x) + x`).
//!
//! A conv op evaluates as BatchNorm -> (Sign when activations are binary) ->
//! Conv (signed weights and a learnable positive scale when weights are
//! binary) -> PReLU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binconv::ScaleFactor;
use crate::error::{Error, Result};
use crate::ops::conv::ConvSpec;
use crate::ops::pool::pool3_out_extent;
use crate::tape::{ParamId, ParamKind, ParamStore, Tape, Vid};
use crate::tensor::Tensor;
use crate::SeedRng;

/// Batch-norm running-stat momentum.
pub const BN_MOMENTUM: f64 = 0.1;

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// The candidate operations, in canonical (tie-breaking) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpKind {
    #[serde(rename = "gconv_3x3")]
    GConv3,
    #[serde(rename = "gconv_5x5")]
    GConv5,
    #[serde(rename = "dil_gconv_3x3")]
    DilGConv3,
    #[serde(rename = "dil_gconv_5x5")]
    DilGConv5,
    #[serde(rename = "skip_connect")]
    Identity,
    #[serde(rename = "max_pool_3x3")]
    MaxPool3,
    #[serde(rename = "avg_pool_3x3")]
    AvgPool3,
    #[serde(rename = "zero")]
    Zero,
}

impl OpKind {
    /// Every op, in enumeration order.
    pub const ALL: [OpKind; 8] = [
        OpKind::GConv3,
        OpKind::GConv5,
        OpKind::DilGConv3,
        OpKind::DilGConv5,
        OpKind::Identity,
        OpKind::MaxPool3,
        OpKind::AvgPool3,
        OpKind::Zero,
    ];

    /// Serialized token, as it appears in genotype files.
    pub fn token(self) -> &'static str {
        match self {
            OpKind::GConv3 => "gconv_3x3",
            OpKind::GConv5 => "gconv_5x5",
            OpKind::DilGConv3 => "dil_gconv_3x3",
            OpKind::DilGConv5 => "dil_gconv_5x5",
            OpKind::Identity => "skip_connect",
            OpKind::MaxPool3 => "max_pool_3x3",
            OpKind::AvgPool3 => "avg_pool_3x3",
            OpKind::Zero => "zero",
        }
    }

    pub fn from_token(token: &str) -> Result<Self> {
        OpKind::ALL
            .iter()
            .copied()
            .find(|k| k.token() == token)
            .ok_or_else(|| Error::Genotype(format!("unknown op token \"{}\"", token)))
    }

    /// Position in the canonical enumeration.
    pub fn index(self) -> usize {
        OpKind::ALL.iter().position(|&k| k == self).expect("member of ALL")
    }

    pub fn is_conv(self) -> bool {
        matches!(self, OpKind::GConv3 | OpKind::GConv5 | OpKind::DilGConv3 | OpKind::DilGConv5)
    }

    /// Kernel side, dilation and the padding that preserves spatial extent.
    pub fn conv_geometry(self) -> Option<(usize, usize, usize)> {
        match self {
            OpKind::GConv3 => Some((3, 1, 1)),
            OpKind::GConv5 => Some((5, 1, 2)),
            OpKind::DilGConv3 => Some((3, 2, 2)),
            OpKind::DilGConv5 => Some((5, 2, 4)),
            _ => None,
        }
    }
}

/// Whether a side of the computation is real-valued or binarized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Real,
    Binary,
}

/// Weight/activation domain combination; the four rows of the search
/// strategy ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainMode {
    pub weights: Domain,
    pub activations: Domain,
}

impl DomainMode {
    /// Real weights, binary activations: the proposed search strategy.
    pub const PROPOSED: DomainMode = DomainMode { weights: Domain::Real, activations: Domain::Binary };
    /// Both binary.
    pub const FULL_BINARY: DomainMode = DomainMode { weights: Domain::Binary, activations: Domain::Binary };
    /// Binary weights, real activations.
    pub const BINARY_WEIGHTS: DomainMode = DomainMode { weights: Domain::Binary, activations: Domain::Real };
    /// Fully real-valued.
    pub const REAL: DomainMode = DomainMode { weights: Domain::Real, activations: Domain::Real };

    /// All four combinations.
    pub fn all_rows() -> [DomainMode; 4] {
        [Self::REAL, Self::FULL_BINARY, Self::BINARY_WEIGHTS, Self::PROPOSED]
    }
}

/// Grouped-convolution configuration: group count and channels per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfig {
    pub groups: usize,
    pub channels_per_group: usize,
}

impl GroupConfig {
    pub const fn new(groups: usize, channels_per_group: usize) -> Self {
        GroupConfig { groups, channels_per_group }
    }

    /// 12 groups of 3 channels (36 channels), the CIFAR configuration.
    pub const fn paper_cifar() -> Self {
        GroupConfig::new(12, 3)
    }

    /// 16 groups of 5 channels (80 channels), the ImageNet configuration.
    pub const fn paper_imagenet() -> Self {
        GroupConfig::new(16, 5)
    }

    /// 4 groups of 3 channels (12 channels), small enough for CPU runs.
    pub const fn desk() -> Self {
        GroupConfig::new(4, 3)
    }

    pub fn channels(&self) -> usize {
        self.groups * self.channels_per_group
    }

    /// Same channels-per-group at a different width.
    pub fn scaled_to(&self, channels: usize) -> Result<GroupConfig> {
        if channels % self.channels_per_group != 0 {
            return Err(Error::Invalid(format!(
                "{} channels cannot keep {} channels per group",
                channels, self.channels_per_group
            )));
        }
        Ok(GroupConfig::new(channels / self.channels_per_group, self.channels_per_group))
    }
}

/// Batch-norm parameter bundle: optional affine plus running statistics.
#[derive(Debug, Clone, Copy)]
pub struct BnParams {
    pub gamma: Option<ParamId>,
    pub beta: Option<ParamId>,
    pub run_mean: ParamId,
    pub run_var: ParamId,
}

impl BnParams {
    pub fn init(store: &mut ParamStore, channels: usize, affine: bool) -> Self {
        let gamma = affine.then(|| store.add(Tensor::full(&[channels], 1.0), ParamKind::Weight));
        let beta = affine.then(|| store.add(Tensor::zeros(&[channels]), ParamKind::Weight));
        let run_mean = store.add(Tensor::zeros(&[channels]), ParamKind::Buffer);
        let run_var = store.add(Tensor::full(&[channels], 1.0), ParamKind::Buffer);
        BnParams { gamma, beta, run_mean, run_var }
    }

    pub fn forward(&self, tape: &mut Tape, x: Vid, training: bool) -> Result<Vid> {
        let affine = match (self.gamma, self.beta) {
            (Some(g), Some(b)) => {
                let gv = tape.param(g);
                let bv = tape.param(b);
                Some((gv, bv))
            }
            _ => None,
        };
        tape.batch_norm(x, affine, (self.run_mean, self.run_var), BN_MOMENTUM, training)
    }
}

/// Kaiming-style normal init for a conv weight `[O, C/g, kh, kw]`.
pub fn conv_weight_init(store: &mut ParamStore, rng: &mut SeedRng, shape: [usize; 4]) -> ParamId {
    let fan_in = (shape[1] * shape[2] * shape[3]) as f64;
    let std = crate::math::sqrt(2.0 / fan_in);
    let dist = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
    store.add(Tensor::new(shape.to_vec(), data).expect("shape matches"), ParamKind::Weight)
}

/// Normal init for a linear weight `[O, F]`.
pub fn linear_weight_init(store: &mut ParamStore, rng: &mut SeedRng, out: usize, fan_in: usize) -> ParamId {
    let std = crate::math::sqrt(1.0 / fan_in as f64);
    let dist = Normal::new(0.0, std).expect("valid std");
    let data: Vec<f64> = (0..out * fan_in).map(|_| dist.sample(rng)).collect();
    store.add(Tensor::new(vec![out, fan_in], data).expect("shape matches"), ParamKind::Weight)
}

#[derive(Debug, Clone)]
enum OpParams {
    None,
    Conv { bn: BnParams, weight: ParamId, alpha: Option<ScaleFactor>, slope: ParamId },
    Pool { bn: BnParams },
    FactorizedReduce { w1: ParamId, w2: ParamId, bn: BnParams },
}

/// One instantiated candidate operation.
#[derive(Debug, Clone)]
pub struct OpInstance {
    pub kind: OpKind,
    pub channels: usize,
    pub groups: usize,
    pub stride: usize,
    pub domains: DomainMode,
    params: OpParams,
}

/// Builds an operation at the given width and stride.
///
/// `affine` selects affine batch norms (evaluation networks) versus plain
/// normalization (supernets, where affine BN would fight the edge weights).
pub fn make_op(
    store: &mut ParamStore,
    rng: &mut SeedRng,
    kind: OpKind,
    channels: usize,
    stride: usize,
    domains: DomainMode,
    group_config: GroupConfig,
    affine: bool,
) -> Result<OpInstance> {
    if stride != 1 && stride != 2 {
        return Err(Error::Invalid(format!("op stride must be 1 or 2, got {}", stride)));
    }
    if kind.is_conv() && channels != group_config.channels() {
        return Err(Error::Invalid(format!(
            "{} channels inconsistent with {} groups x {} channels per group",
            channels, group_config.groups, group_config.channels_per_group
        )));
    }
    let params = match kind {
        OpKind::Zero => OpParams::None,
        OpKind::Identity => {
            if stride == 1 {
                OpParams::None
            } else {
                if channels % 2 != 0 {
                    return Err(Error::Invalid(format!(
                        "factorized reduce needs an even channel count, got {}",
                        channels
                    )));
                }
                let half = channels / 2;
                let w1 = conv_weight_init(store, rng, [half, channels, 1, 1]);
                let w2 = conv_weight_init(store, rng, [half, channels, 1, 1]);
                let bn = BnParams::init(store, channels, affine);
                OpParams::FactorizedReduce { w1, w2, bn }
            }
        }
        OpKind::MaxPool3 | OpKind::AvgPool3 => {
            // Pools stay parameter-free: their stabilizing BN never carries
            // a learnable affine.
            OpParams::Pool { bn: BnParams::init(store, channels, false) }
        }
        _ => {
            let (k, _, _) = kind.conv_geometry().expect("conv kind");
            let bn = BnParams::init(store, channels, affine);
            let weight =
                conv_weight_init(store, rng, [channels, group_config.channels_per_group, k, k]);
            let alpha = (domains.weights == Domain::Binary)
                .then(|| ScaleFactor::init(store, channels, 1.0));
            let slope = store.add(Tensor::full(&[channels], PRELU_INIT), ParamKind::Weight);
            OpParams::Conv { bn, weight, alpha, slope }
        }
    };
    Ok(OpInstance { kind, channels, groups: group_config.groups, stride, domains, params })
}

impl OpInstance {
    /// Number of learnable scalars in this op.
    pub fn param_count(&self, store: &ParamStore) -> usize {
        let bn_count = |bn: &BnParams| {
            bn.gamma.map_or(0, |g| store.get(g).numel()) + bn.beta.map_or(0, |b| store.get(b).numel())
        };
        match &self.params {
            OpParams::None => 0,
            OpParams::Pool { bn } => bn_count(bn),
            OpParams::FactorizedReduce { w1, w2, bn } => {
                store.get(*w1).numel() + store.get(*w2).numel() + bn_count(bn)
            }
            OpParams::Conv { bn, weight, alpha, slope } => {
                store.get(*weight).numel()
                    + alpha.map_or(0, |a| store.get(a.raw_id()).numel())
                    + store.get(*slope).numel()
                    + bn_count(bn)
            }
        }
    }

    /// Runs the op on `x`, recording onto the tape.
    pub fn forward(&self, tape: &mut Tape, x: Vid, training: bool) -> Result<Vid> {
        let xs = tape.value(x).dims4()?;
        if xs[1] != self.channels {
            return Err(Error::Shape(format!(
                "op expects {} channels, input has {}",
                self.channels, xs[1]
            )));
        }
        match (&self.params, self.kind) {
            (OpParams::None, OpKind::Zero) => {
                let shape = [
                    xs[0],
                    xs[1],
                    pool3_out_extent(xs[2], self.stride),
                    pool3_out_extent(xs[3], self.stride),
                ];
                Ok(tape.zeros(&shape))
            }
            (OpParams::None, OpKind::Identity) => Ok(x),
            (OpParams::FactorizedReduce { w1, w2, bn }, _) => {
                let spec = ConvSpec { groups: 1, stride: 2, padding: 0, dilation: 1 };
                let w1v = tape.param(*w1);
                let path1 = tape.conv2d(x, w1v, spec)?;
                let shifted = tape.shift2d(x, 1, 1)?;
                let w2v = tape.param(*w2);
                let path2 = tape.conv2d(shifted, w2v, spec)?;
                let cat = tape.concat_channels(&[path1, path2])?;
                bn.forward(tape, cat, training)
            }
            (OpParams::Pool { bn }, kind) => {
                let pooled = if kind == OpKind::MaxPool3 {
                    tape.max_pool3(x, self.stride)?
                } else {
                    tape.avg_pool3(x, self.stride)?
                };
                bn.forward(tape, pooled, training)
            }
            (OpParams::Conv { bn, weight, alpha, slope }, kind) => {
                let (k, dilation, padding) = kind.conv_geometry().expect("conv kind");
                let _ = k;
                let spec = ConvSpec { groups: self.groups, stride: self.stride, padding, dilation };
                let normed = bn.forward(tape, x, training)?;
                let wv = tape.param(*weight);
                let conv_out = match (self.domains.weights, self.domains.activations) {
                    (Domain::Real, Domain::Real) => tape.conv2d(normed, wv, spec)?,
                    (Domain::Real, Domain::Binary) => {
                        let signed = tape.sign_ste(normed)?;
                        tape.conv2d(signed, wv, spec)?
                    }
                    (Domain::Binary, Domain::Binary) => {
                        let a = alpha.expect("binary weights carry a scale");
                        let av = tape.param(a.raw_id());
                        tape.binary_conv2d(normed, wv, av, spec)?
                    }
                    (Domain::Binary, Domain::Real) => {
                        let a = alpha.expect("binary weights carry a scale");
                        let sw = tape.sign_ste(wv)?;
                        let y = tape.conv2d(normed, sw, spec)?;
                        let av = tape.param(a.raw_id());
                        let eff = tape.abs(av)?;
                        tape.channel_scale(y, eff)?
                    }
                };
                let sv = tape.param(*slope);
                let activated = tape.prelu(conv_out, sv)?;
                if self.stride == 1 {
                    tape.add(activated, x)
                } else {
                    Ok(activated)
                }
            }
            _ => unreachable!("op params match the kind"),
        }
    }

    /// Weight tensor id, for conv ops.
    pub fn conv_weight(&self) -> Option<ParamId> {
        match &self.params {
            OpParams::Conv { weight, .. } => Some(*weight),
            _ => None,
        }
    }

    /// Scale factor, for binary-weight conv ops.
    pub fn scale_factor(&self) -> Option<ScaleFactor> {
        match &self.params {
            OpParams::Conv { alpha, .. } => *alpha,
            _ => None,
        }
    }

    /// Batch-norm parameters, for ops that normalize.
    pub fn bn_params(&self) -> Option<BnParams> {
        match &self.params {
            OpParams::Conv { bn, .. }
            | OpParams::Pool { bn }
            | OpParams::FactorizedReduce { bn, .. } => Some(*bn),
            OpParams::None => None,
        }
    }

    /// PReLU slope parameter, for conv ops.
    pub fn prelu_slope(&self) -> Option<ParamId> {
        match &self.params {
            OpParams::Conv { slope, .. } => Some(*slope),
            _ => None,
        }
    }

    /// Switches a conv op to binary weights, keeping the trained real
    /// weights as latents. A missing scale factor is created analytically
    /// as the per-output-channel mean of `|w|`.
    pub fn binarize_weights(&mut self, store: &mut ParamStore) {
        if let OpParams::Conv { weight, alpha, .. } = &mut self.params {
            if alpha.is_none() {
                let w = store.get(*weight);
                let ws = w.dims4().expect("conv weight is 4-d");
                let values = crate::binconv::analytic_alpha(w.data(), &ws);
                let raw = store.add(
                    Tensor::new(alloc::vec![values.len()], values).expect("alpha shape"),
                    ParamKind::Weight,
                );
                *alpha = Some(ScaleFactor::from_raw(raw));
            }
            self.domains.weights = Domain::Binary;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> SeedRng {
        SeedRng::seed_from_u64(40)
    }

    #[test]
    fn tokens_round_trip() {
        for kind in OpKind::ALL {
            assert_eq!(OpKind::from_token(kind.token()).unwrap(), kind);
        }
        assert!(OpKind::from_token("conv_7x7").is_err());
    }

    #[test]
    fn search_space_has_no_pointwise_and_no_depthwise_convs() {
        // Structural exclusions: no 1x1 kernels, no groups == channels.
        let gc = GroupConfig::desk();
        for kind in OpKind::ALL {
            if let Some((k, _, _)) = kind.conv_geometry() {
                assert!(k > 1, "no 1x1 convolution in the space");
                assert!(gc.groups < gc.channels(), "no depthwise convolution in the space");
            }
        }
        assert_eq!(OpKind::ALL.len(), 8);
    }

    #[test]
    fn zero_op_outputs_zeros_and_strides() {
        let mut store = ParamStore::new();
        let op = make_op(&mut store, &mut rng(), OpKind::Zero, 12, 2, DomainMode::REAL, GroupConfig::desk(), false)
            .unwrap();
        let mut tape = Tape::new(&mut store);
        let x = tape.constant(Tensor::full(&[1, 12, 8, 8], 3.0));
        let y = op.forward(&mut tape, x, true).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 12, 4, 4]);
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_is_exact_at_stride_one() {
        let mut store = ParamStore::new();
        let op = make_op(&mut store, &mut rng(), OpKind::Identity, 12, 1, DomainMode::REAL, GroupConfig::desk(), false)
            .unwrap();
        let mut tape = Tape::new(&mut store);
        let x = tape.constant(Tensor::full(&[2, 12, 4, 4], -1.5));
        let y = op.forward(&mut tape, x, true).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn zero_and_parameterless_ops_have_no_params() {
        let mut store = ParamStore::new();
        let mut r = rng();
        let zero = make_op(&mut store, &mut r, OpKind::Zero, 12, 1, DomainMode::REAL, GroupConfig::desk(), false).unwrap();
        let ident = make_op(&mut store, &mut r, OpKind::Identity, 12, 1, DomainMode::REAL, GroupConfig::desk(), false).unwrap();
        assert_eq!(zero.param_count(&store), 0);
        assert_eq!(ident.param_count(&store), 0);
        // Pools keep zero learnable parameters even when affine BN is asked for.
        let pool = make_op(&mut store, &mut r, OpKind::MaxPool3, 12, 1, DomainMode::REAL, GroupConfig::desk(), true).unwrap();
        assert_eq!(pool.param_count(&store), 0);
    }

    #[test]
    fn conv_op_rejects_inconsistent_channels() {
        let mut store = ParamStore::new();
        let err = make_op(&mut store, &mut rng(), OpKind::GConv3, 10, 1, DomainMode::REAL, GroupConfig::desk(), false);
        assert!(err.is_err());
    }

    #[test]
    fn dilated_op_preserves_spatial_extent_at_stride_one() {
        let mut store = ParamStore::new();
        let op = make_op(&mut store, &mut rng(), OpKind::DilGConv3, 12, 1, DomainMode::REAL, GroupConfig::desk(), false)
            .unwrap();
        let mut tape = Tape::new(&mut store);
        let x = tape.constant(Tensor::full(&[1, 12, 9, 9], 0.3));
        let y = op.forward(&mut tape, x, true).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 12, 9, 9]);
    }

    #[test]
    fn all_ops_match_shape_table() {
        // Closed-form shape oracle: stride 1 preserves H,W; stride 2 halves
        // rounding up.
        let mut store = ParamStore::new();
        let mut r = rng();
        for stride in [1usize, 2] {
            for kind in OpKind::ALL {
                let op = make_op(&mut store, &mut r, kind, 12, stride, DomainMode::PROPOSED, GroupConfig::desk(), false)
                    .unwrap();
                let mut tape = Tape::new(&mut store);
                let x = tape.constant(Tensor::full(&[1, 12, 8, 8], 0.5));
                let y = op.forward(&mut tape, x, true).unwrap();
                let expect = if stride == 1 { 8 } else { 4 };
                assert_eq!(
                    tape.value(y).shape(),
                    &[1, 12, expect, expect],
                    "{:?} stride {}",
                    kind,
                    stride
                );
            }
        }
    }
}
