//! The quadruple encoder network: two weight-sharing encoder pairs
//! (center and neighborhood), per-scale temporal fusion with residual
//! feedback, and per-scale center-neighborhood fusion producing deep
//! supervised attention maps.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::head::{Decoder, Msa};
use crate::nn::{Activation, Bottleneck, Conv2d, ConvBn, ParameterStore};
use crate::rng::{seed_offset, Rng};
use crate::tensor::Tensor;

/// One inverted-residual block of an encoder stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockSpec {
    pub kernel: usize,
    pub expand: usize,
    pub out: usize,
    pub se: bool,
    pub hswish: bool,
    pub stride: usize,
}

impl BlockSpec {
    fn b(kernel: usize, expand: usize, out: usize, se: bool, hswish: bool, stride: usize) -> Self {
        BlockSpec {
            kernel,
            expand,
            out,
            se,
            hswish,
            stride,
        }
    }
}

/// Structural description of the whole network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub patch_size: usize,
    /// Pyramid strides, strictly increasing powers of two.
    pub strides: Vec<usize>,
    /// Feature width at each pyramid tap.
    pub channels: Vec<usize>,
    pub stem_channels: usize,
    /// Encoder stages, one per pyramid scale; the last block of stage `i`
    /// must emit `channels[i]`.
    pub stages: Vec<Vec<BlockSpec>>,
    pub init_seed: u64,
}

impl NetworkConfig {
    /// The default backbone: stem plus the bottleneck stack of
    /// MobileNetV3-Large up to the 112-channel stage, tapped at strides
    /// {2, 4, 8, 16} with widths {16, 24, 40, 112}.
    pub fn default_full(patch_size: usize) -> Self {
        NetworkConfig {
            patch_size,
            strides: vec![2, 4, 8, 16],
            channels: vec![16, 24, 40, 112],
            stem_channels: 16,
            stages: vec![
                vec![BlockSpec::b(3, 16, 16, false, false, 1)],
                vec![
                    BlockSpec::b(3, 64, 24, false, false, 2),
                    BlockSpec::b(3, 72, 24, false, false, 1),
                ],
                vec![
                    BlockSpec::b(5, 72, 40, true, false, 2),
                    BlockSpec::b(5, 120, 40, true, false, 1),
                    BlockSpec::b(5, 120, 40, true, false, 1),
                ],
                vec![
                    BlockSpec::b(3, 240, 80, false, true, 2),
                    BlockSpec::b(3, 200, 80, false, true, 1),
                    BlockSpec::b(3, 184, 80, false, true, 1),
                    BlockSpec::b(3, 184, 80, false, true, 1),
                    BlockSpec::b(3, 480, 112, true, true, 1),
                ],
            ],
            init_seed: 0,
        }
    }

    /// A two-scale configuration small enough for double-precision
    /// finite-difference verification and overfit smoke tests.
    pub fn tiny(patch_size: usize) -> Self {
        NetworkConfig {
            patch_size,
            strides: vec![2, 4],
            channels: vec![4, 8],
            stem_channels: 4,
            stages: vec![
                vec![BlockSpec::b(3, 8, 4, false, false, 1)],
                vec![BlockSpec::b(3, 8, 8, true, true, 2)],
            ],
            init_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.strides.len();
        if n == 0 || self.channels.len() != n || self.stages.len() != n {
            return Err(Error::Config(format!(
                "strides/channels/stages lengths differ: {}/{}/{}",
                n,
                self.channels.len(),
                self.stages.len()
            )));
        }
        let mut prev = 1;
        for &s in &self.strides {
            if s <= prev || !s.is_power_of_two() {
                return Err(Error::Config(format!(
                    "strides must be increasing powers of two, got {:?}",
                    self.strides
                )));
            }
            prev = s;
        }
        // the stem contributes a stride of 2
        let mut cum = 2;
        for (i, stage) in self.stages.iter().enumerate() {
            if stage.is_empty() {
                return Err(Error::Config(format!("stage {} has no blocks", i)));
            }
            for b in stage {
                cum *= b.stride;
            }
            if cum != self.strides[i] {
                return Err(Error::Config(format!(
                    "stage {} reaches stride {} but tap expects {}",
                    i, cum, self.strides[i]
                )));
            }
            if stage.last().unwrap().out != self.channels[i] {
                return Err(Error::Config(format!(
                    "stage {} emits {} channels but tap expects {}",
                    i,
                    stage.last().unwrap().out,
                    self.channels[i]
                )));
            }
        }
        let max_stride = *self.strides.last().unwrap();
        if self.patch_size % max_stride != 0 || self.patch_size < 2 * max_stride {
            return Err(Error::Config(format!(
                "patch size {} incompatible with max stride {}",
                self.patch_size, max_stride
            )));
        }
        Ok(())
    }

    pub fn num_scales(&self) -> usize {
        self.strides.len()
    }

    /// Spatial side of the feature map at scale `i`.
    pub fn feature_side(&self, i: usize) -> usize {
        self.patch_size / self.strides[i]
    }
}

/// Which components are enabled; rows of the ablation study are the five
/// cumulative settings of these flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Components {
    /// Temporal fusion with residual feedback (otherwise plain |t1-t2|).
    pub tf: bool,
    /// Branch predictions, attention reinforcement and multi-scale
    /// aggregation.
    pub mdsa: bool,
    /// The neighborhood encoder pair.
    pub quadruple: bool,
    /// The center-neighborhood fusion block (otherwise, with `quadruple`,
    /// a plain concat + 1x1 projection).
    pub cnf: bool,
}

impl Components {
    pub fn full() -> Self {
        Components {
            tf: true,
            mdsa: true,
            quadruple: true,
            cnf: true,
        }
    }

    pub fn baseline() -> Self {
        Components {
            tf: false,
            mdsa: false,
            quadruple: false,
            cnf: false,
        }
    }

    /// The five cumulative ablation rows: baseline, +TF, +MDSA,
    /// +Quadruple, +CNF.
    pub fn ablation_rows() -> [Components; 5] {
        let mut rows = [Components::baseline(); 5];
        rows[1].tf = true;
        rows[2] = rows[1];
        rows[2].mdsa = true;
        rows[3] = rows[2];
        rows[3].quadruple = true;
        rows[4] = rows[3];
        rows[4].cnf = true;
        rows
    }

    pub fn validate(&self) -> Result<()> {
        if self.cnf && !self.quadruple {
            return Err(Error::Config(
                "cnf requires the quadruple encoders".to_string(),
            ));
        }
        Ok(())
    }

    pub fn label(&self) -> &'static str {
        match (self.tf, self.mdsa, self.quadruple, self.cnf) {
            (false, false, false, false) => "baseline",
            (true, false, false, false) => "+TF",
            (true, true, false, false) => "+MDSA",
            (true, true, true, false) => "+Quadruple",
            (true, true, true, true) => "+CNF (full)",
            _ => "custom",
        }
    }
}

/// Per-scale feature taps of one encoder pass.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub scales: Vec<NodeId>,
}

/// Output of temporal fusion at one scale.
#[derive(Debug, Clone, Copy)]
pub struct TfOutput {
    pub fused: NodeId,
    pub enhanced_t1: NodeId,
    pub enhanced_t2: NodeId,
}

/// Output of center-neighborhood fusion at one scale.
#[derive(Debug, Clone, Copy)]
pub struct CnfOutput {
    pub fused: NodeId,
    pub attention: NodeId,
}

/// A multi-scale encoder: stem convolution plus staged bottleneck blocks,
/// tapped at the last block of each stride level.
pub struct Encoder {
    group: String,
    stem: ConvBn,
    stages: Vec<Vec<Bottleneck>>,
}

impl Encoder {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut Rng,
        group: &str,
        config: &NetworkConfig,
    ) -> Self {
        let stem = ConvBn::new(
            store,
            rng,
            &format!("{group}/stem"),
            3,
            config.stem_channels,
            3,
            2,
            1,
            Activation::HardSwish,
        );
        let mut cin = config.stem_channels;
        let mut stages = Vec::new();
        for (si, stage) in config.stages.iter().enumerate() {
            let mut blocks = Vec::new();
            for (bi, spec) in stage.iter().enumerate() {
                let act = if spec.hswish {
                    Activation::HardSwish
                } else {
                    Activation::Relu
                };
                blocks.push(Bottleneck::new(
                    store,
                    rng,
                    &format!("{group}/stage{si}/block{bi}"),
                    cin,
                    spec.expand,
                    spec.out,
                    spec.kernel,
                    spec.stride,
                    spec.se,
                    act,
                ));
                cin = spec.out;
            }
            stages.push(blocks);
        }
        Encoder {
            group: group.to_string(),
            stem,
            stages,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        image: NodeId,
        train: bool,
    ) -> Result<FeaturePyramid> {
        tape.set_scope(&format!("{}/stem", self.group));
        let mut x = self.stem.forward(tape, store, image, train)?;
        let mut taps = Vec::with_capacity(self.stages.len());
        for (si, stage) in self.stages.iter().enumerate() {
            for (bi, block) in stage.iter().enumerate() {
                tape.set_scope(&format!("{}/stage{}/block{}", self.group, si, bi));
                x = block.forward(tape, store, x, train)?;
            }
            taps.push(x);
        }
        Ok(FeaturePyramid { scales: taps })
    }
}

/// Temporal fusion at one scale: a bottleneck over the concatenated pair
/// plus a zero-initialized residual feedback into both temporal streams.
/// At initialization the enhanced streams equal the inputs exactly.
pub struct TfModule {
    name: String,
    fuse: Bottleneck,
    feedback: Conv2d,
}

impl TfModule {
    pub fn new(store: &mut ParameterStore, rng: &mut Rng, name: &str, channels: usize) -> Self {
        TfModule {
            name: name.to_string(),
            fuse: Bottleneck::new(
                store,
                rng,
                &format!("{name}/fuse"),
                2 * channels,
                2 * channels,
                channels,
                3,
                1,
                false,
                Activation::Relu,
            ),
            feedback: Conv2d::new_zeroed(store, &format!("{name}/feedback"), channels, channels, 1),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        f_t1: NodeId,
        f_t2: NodeId,
        train: bool,
    ) -> Result<TfOutput> {
        if tape.value(f_t1).shape != tape.value(f_t2).shape {
            return Err(Error::Shape("temporal features differ in shape".to_string()));
        }
        tape.set_scope(&self.name);
        let cat = tape.concat_channels(&[f_t1, f_t2])?;
        let fused = self.fuse.forward(tape, store, cat, train)?;
        let r = self.feedback.forward(tape, store, fused)?;
        let enhanced_t1 = tape.add(f_t1, r)?;
        let enhanced_t2 = tape.add(f_t2, r)?;
        Ok(TfOutput {
            fused,
            enhanced_t1,
            enhanced_t2,
        })
    }
}

/// Plain difference fusion for configurations without TF: fused = |t1-t2|,
/// enhanced streams are the raw inputs.
pub fn difference_fusion(tape: &mut Tape, f_t1: NodeId, f_t2: NodeId) -> Result<TfOutput> {
    let fused = tape.abs_diff(f_t1, f_t2)?;
    Ok(TfOutput {
        fused,
        enhanced_t1: f_t1,
        enhanced_t2: f_t2,
    })
}

/// How center and neighborhood features are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CnfVariant {
    /// Difference + fused features of both streams, neighborhood central
    /// third resampled to center resolution, bottleneck fusion.
    Full,
    /// Center difference + fused only (no neighborhood encoders).
    CenterOnly,
    /// Quadruple inputs but a plain 1x1 projection instead of the
    /// bottleneck (the pre-CNF ablation row).
    NaiveConcat,
}

enum CnfFuse {
    Bottleneck(Bottleneck),
    Projection(Conv2d),
}

/// Center-neighborhood fusion at one scale.
pub struct CnfModule {
    name: String,
    variant: CnfVariant,
    fuse: CnfFuse,
    attention_head: Conv2d,
}

/// The neighborhood image covers 3x the ground extent of the center patch,
/// so the center's content sits in the central third of each neighborhood
/// feature map.
const CENTER_THIRD: (f64, f64, f64, f64) = (1.0 / 3.0, 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0);

impl CnfModule {
    pub fn new(
        store: &mut ParameterStore,
        rng: &mut Rng,
        name: &str,
        channels: usize,
        variant: CnfVariant,
    ) -> Self {
        let cin = match variant {
            CnfVariant::CenterOnly => 2 * channels,
            CnfVariant::Full | CnfVariant::NaiveConcat => 4 * channels,
        };
        let fuse = match variant {
            CnfVariant::NaiveConcat => CnfFuse::Projection(Conv2d::new(
                store,
                rng,
                &format!("{name}/project"),
                cin,
                channels,
                1,
                1,
                1,
                true,
            )),
            _ => CnfFuse::Bottleneck(Bottleneck::new(
                store,
                rng,
                &format!("{name}/fuse"),
                cin,
                cin,
                channels,
                3,
                1,
                false,
                Activation::Relu,
            )),
        };
        CnfModule {
            name: name.to_string(),
            variant,
            fuse,
            attention_head: Conv2d::new(store, rng, &format!("{name}/att"), channels, 1, 1, 1, 1, true),
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &mut ParameterStore,
        center: &TfOutput,
        neigh: Option<&TfOutput>,
        train: bool,
    ) -> Result<CnfOutput> {
        tape.set_scope(&self.name);
        let d_center = tape.abs_diff(center.enhanced_t1, center.enhanced_t2)?;
        let cat = match (self.variant, neigh) {
            (CnfVariant::CenterOnly, _) => tape.concat_channels(&[d_center, center.fused])?,
            (CnfVariant::Full | CnfVariant::NaiveConcat, Some(n)) => {
                let [_, _, h, w] = tape.value(center.fused).shape;
                let d_neigh = tape.abs_diff(n.enhanced_t1, n.enhanced_t2)?;
                let rs_diff = tape.bilinear_window(d_neigh, h, w, CENTER_THIRD)?;
                let rs_fused = tape.bilinear_window(n.fused, h, w, CENTER_THIRD)?;
                tape.concat_channels(&[d_center, center.fused, rs_diff, rs_fused])?
            }
            _ => {
                return Err(Error::Contract(
                    "neighborhood features required for this fusion variant".to_string(),
                ))
            }
        };
        let fused = match &self.fuse {
            CnfFuse::Bottleneck(b) => b.forward(tape, store, cat, train)?,
            CnfFuse::Projection(p) => {
                let y = p.forward(tape, store, cat)?;
                tape.relu(y)
            }
        };
        let att_logits = self.attention_head.forward(tape, store, fused)?;
        let attention = tape.sigmoid(att_logits);
        Ok(CnfOutput { fused, attention })
    }
}

/// The whole network, parameterized by the ablation component flags.
pub struct Model {
    pub config: NetworkConfig,
    pub components: Components,
    pub store: ParameterStore,
    encoder_center: Encoder,
    encoder_neigh: Option<Encoder>,
    tf_center: Vec<TfModule>,
    tf_neigh: Vec<TfModule>,
    cnf: Vec<CnfModule>,
    branch_heads: Vec<Conv2d>,
    decoder: Decoder,
    msa: Option<Msa>,
}

/// One batch of network inputs, already normalized to [0, 1].
/// Neighborhood tensors are required only for quadruple configurations.
pub struct BatchInput {
    pub center_t1: Tensor,
    pub center_t2: Tensor,
    pub neigh_t1: Option<Tensor>,
    pub neigh_t2: Option<Tensor>,
}

/// Every intermediate a forward pass exposes for supervision, diagnostics
/// and testing.
pub struct FullOutput {
    /// Final 2-class logits at patch resolution.
    pub final_logits: NodeId,
    /// Main-path (decoder) logits at patch resolution.
    pub main_logits: NodeId,
    /// Per-scale branch prediction logits (empty without MDSA).
    pub branch_logits: Vec<NodeId>,
    /// Per-scale attention maps in [0,1] (empty without MDSA).
    pub attentions: Vec<NodeId>,
    /// Per-scale center temporal fusion outputs.
    pub tf_center: Vec<TfOutput>,
    /// Per-scale center-neighborhood fusion outputs (empty without MDSA).
    pub cnf: Vec<CnfOutput>,
}

impl Model {
    pub fn new(config: NetworkConfig, components: Components) -> Result<Self> {
        config.validate()?;
        components.validate()?;
        let mut store = ParameterStore::new();
        let mut rng = Rng::derive(config.init_seed, seed_offset::INIT, 0);
        let encoder_center = Encoder::new(&mut store, &mut rng, "encoder_center", &config);
        let encoder_neigh = components
            .quadruple
            .then(|| Encoder::new(&mut store, &mut rng, "encoder_neigh", &config));
        let n = config.num_scales();
        let mut tf_center = Vec::new();
        let mut tf_neigh = Vec::new();
        if components.tf {
            for i in 0..n {
                tf_center.push(TfModule::new(
                    &mut store,
                    &mut rng,
                    &format!("tf_center_s{i}"),
                    config.channels[i],
                ));
            }
            if components.quadruple {
                for i in 0..n {
                    tf_neigh.push(TfModule::new(
                        &mut store,
                        &mut rng,
                        &format!("tf_neigh_s{i}"),
                        config.channels[i],
                    ));
                }
            }
        }
        let mut cnf = Vec::new();
        let mut branch_heads = Vec::new();
        if components.mdsa {
            let variant = if !components.quadruple {
                CnfVariant::CenterOnly
            } else if components.cnf {
                CnfVariant::Full
            } else {
                CnfVariant::NaiveConcat
            };
            for i in 0..n {
                cnf.push(CnfModule::new(
                    &mut store,
                    &mut rng,
                    &format!("cnf_s{i}"),
                    config.channels[i],
                    variant,
                ));
                branch_heads.push(Conv2d::new(
                    &mut store,
                    &mut rng,
                    &format!("branch_s{i}"),
                    config.channels[i],
                    2,
                    1,
                    1,
                    1,
                    true,
                ));
            }
        }
        let decoder = Decoder::new(&mut store, &mut rng, "decoder", &config);
        let msa = components
            .mdsa
            .then(|| Msa::new(&mut store, &mut rng, "msa", n));
        Ok(Model {
            config,
            components,
            store,
            encoder_center,
            encoder_neigh,
            tf_center,
            tf_neigh,
            cnf,
            branch_heads,
            decoder,
            msa,
        })
    }

    fn check_input(&self, t: &Tensor, what: &str) -> Result<()> {
        let s = self.config.patch_size;
        if t.c() != 3 || t.h() != s || t.w() != s {
            return Err(Error::Shape(format!(
                "{} has shape {:?}, expected [N,3,{},{}]",
                what, t.shape, s, s
            )));
        }
        Ok(())
    }

    /// Runs the full forward pass, recording it on a fresh tape.
    pub fn forward(&mut self, input: &BatchInput, train: bool) -> Result<(Tape, FullOutput)> {
        let mut tape = Tape::new();
        let out = self.forward_on(&mut tape, input, train)?;
        Ok((tape, out))
    }

    /// Forward pass on a caller-provided tape.
    pub fn forward_on(
        &mut self,
        tape: &mut Tape,
        input: &BatchInput,
        train: bool,
    ) -> Result<FullOutput> {
        self.check_input(&input.center_t1, "center_t1")?;
        self.check_input(&input.center_t2, "center_t2")?;
        if input.center_t1.shape != input.center_t2.shape {
            return Err(Error::Shape("center t1/t2 batch sizes differ".to_string()));
        }
        if self.encoder_neigh.is_some() {
            match (&input.neigh_t1, &input.neigh_t2) {
                (Some(a), Some(b)) => {
                    self.check_input(a, "neigh_t1")?;
                    self.check_input(b, "neigh_t2")?;
                }
                _ => {
                    return Err(Error::Contract(
                        "quadruple configuration needs neighborhood inputs".to_string(),
                    ))
                }
            }
        }
        let store = &mut self.store;
        let c1 = tape.constant(input.center_t1.clone());
        let c2 = tape.constant(input.center_t2.clone());
        let p1 = self.encoder_center.forward(tape, store, c1, train)?;
        let p2 = self.encoder_center.forward(tape, store, c2, train)?;
        let neigh_pyramids = if let Some(enc) = &self.encoder_neigh {
            let (n1, n2) = (
                input.neigh_t1.as_ref().unwrap(),
                input.neigh_t2.as_ref().unwrap(),
            );
            let i1 = tape.constant(n1.clone());
            let i2 = tape.constant(n2.clone());
            Some((
                enc.forward(tape, store, i1, train)?,
                enc.forward(tape, store, i2, train)?,
            ))
        } else {
            None
        };

        let n = self.config.num_scales();
        let mut tf_center_out = Vec::with_capacity(n);
        let mut tf_neigh_out = Vec::with_capacity(n);
        for i in 0..n {
            let tfc = if self.components.tf {
                self.tf_center[i].forward(tape, store, p1.scales[i], p2.scales[i], train)?
            } else {
                difference_fusion(tape, p1.scales[i], p2.scales[i])?
            };
            tf_center_out.push(tfc);
            if let Some((q1, q2)) = &neigh_pyramids {
                let tfn = if self.components.tf {
                    self.tf_neigh[i].forward(tape, store, q1.scales[i], q2.scales[i], train)?
                } else {
                    difference_fusion(tape, q1.scales[i], q2.scales[i])?
                };
                tf_neigh_out.push(tfn);
            }
        }

        let mut cnf_out = Vec::new();
        let mut branch_logits = Vec::new();
        let mut attentions = Vec::new();
        let mut skips = Vec::with_capacity(n);
        for i in 0..n {
            if self.components.mdsa {
                let neigh = tf_neigh_out.get(i);
                let c = self.cnf[i].forward(tape, store, &tf_center_out[i], neigh, train)?;
                let branch = self.branch_heads[i].forward(tape, store, c.fused)?;
                let attention = crate::head::mdsa_attention(tape, &c, branch)?;
                let skip = crate::head::reinforce(tape, tf_center_out[i].fused, attention)?;
                cnf_out.push(c);
                branch_logits.push(branch);
                attentions.push(attention);
                skips.push(skip);
            } else {
                skips.push(tf_center_out[i].fused);
            }
        }

        let main_logits = self.decoder.forward(tape, store, &skips, train)?;
        let final_logits = if let Some(msa) = &self.msa {
            msa.forward(tape, store, main_logits, &branch_logits)?
        } else {
            main_logits
        };
        Ok(FullOutput {
            final_logits,
            main_logits,
            branch_logits,
            attentions,
            tf_center: tf_center_out,
            cnf: cnf_out,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_input(config: &NetworkConfig, batch: usize, seed: u64, quadruple: bool) -> BatchInput {
        let mut rng = Rng::seed(seed);
        let s = config.patch_size;
        let mut t = |_: usize| Tensor {
            shape: [batch, 3, s, s],
            data: (0..batch * 3 * s * s).map(|_| rng.uniform()).collect(),
        };
        BatchInput {
            center_t1: t(0),
            center_t2: t(1),
            neigh_t1: quadruple.then(|| t(2)),
            neigh_t2: quadruple.then(|| t(3)),
        }
    }

    #[test]
    fn tiny_pyramid_shapes() {
        let config = NetworkConfig::tiny(32);
        let mut model = Model::new(config.clone(), Components::full()).unwrap();
        let input = rand_input(&config, 1, 1, true);
        let (tape, out) = model.forward(&input, false).unwrap();
        assert_eq!(tape.value(out.final_logits).shape, [1, 2, 32, 32]);
        assert_eq!(tape.value(out.main_logits).shape, [1, 2, 32, 32]);
        assert_eq!(out.branch_logits.len(), 2);
        assert_eq!(tape.value(out.branch_logits[0]).shape, [1, 2, 16, 16]);
        assert_eq!(tape.value(out.branch_logits[1]).shape, [1, 2, 8, 8]);
        assert_eq!(tape.value(out.tf_center[0].fused).shape, [1, 4, 16, 16]);
        assert_eq!(tape.value(out.tf_center[1].fused).shape, [1, 8, 8, 8]);
    }

    #[test]
    fn default_config_pyramid_contract() {
        let config = NetworkConfig::default_full(256);
        config.validate().unwrap();
        assert_eq!(config.feature_side(0), 128);
        assert_eq!(config.feature_side(3), 16);
        assert_eq!(config.channels, alloc::vec![16, 24, 40, 112]);
    }

    #[test]
    fn weight_sharing_identical_pyramids() {
        let config = NetworkConfig::tiny(16);
        let mut model = Model::new(config.clone(), Components::baseline()).unwrap();
        let mut rng = Rng::seed(9);
        let img = Tensor {
            shape: [1, 3, 16, 16],
            data: (0..768).map(|_| rng.uniform()).collect(),
        };
        let input = BatchInput {
            center_t1: img.clone(),
            center_t2: img,
            neigh_t1: None,
            neigh_t2: None,
        };
        let (tape, out) = model.forward(&input, false).unwrap();
        // identical inputs through the shared encoder give bit-identical taps,
        // so the difference fusion is exactly zero
        for tf in &out.tf_center {
            assert!(tape.value(tf.fused).data.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tf_zero_init_passthrough() {
        let config = NetworkConfig::tiny(16);
        let mut model = Model::new(config.clone(), Components::full()).unwrap();
        let input = rand_input(&config, 1, 3, true);
        let (tape, out) = model.forward(&input, false).unwrap();
        for tf in &out.tf_center {
            // feedback projection is zero-initialized: enhanced == raw taps
            let e1 = tape.value(tf.enhanced_t1);
            let e2 = tape.value(tf.enhanced_t2);
            assert!(e1.all_finite() && e2.all_finite());
        }
    }

    #[test]
    fn attention_in_unit_range() {
        let config = NetworkConfig::tiny(16);
        let mut model = Model::new(config.clone(), Components::full()).unwrap();
        let input = rand_input(&config, 2, 5, true);
        let (tape, out) = model.forward(&input, true).unwrap();
        for &a in &out.attentions {
            assert!(tape
                .value(a)
                .data
                .iter()
                .all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn swap_t1_t2_leaves_difference_unchanged() {
        let config = NetworkConfig::tiny(16);
        let mut model = Model::new(config.clone(), Components::baseline()).unwrap();
        let input = rand_input(&config, 1, 7, false);
        let swapped = BatchInput {
            center_t1: input.center_t2.clone(),
            center_t2: input.center_t1.clone(),
            neigh_t1: None,
            neigh_t2: None,
        };
        let (tape_a, out_a) = model.forward(&input, false).unwrap();
        let (tape_b, out_b) = model.forward(&swapped, false).unwrap();
        for (ta, tb) in out_a.tf_center.iter().zip(&out_b.tf_center) {
            assert_eq!(tape_a.value(ta.fused).data, tape_b.value(tb.fused).data);
        }
    }

    #[test]
    fn fuzz_forward_is_finite() {
        let config = NetworkConfig::tiny(16);
        let mut model = Model::new(config.clone(), Components::full()).unwrap();
        for seed in 0..100 {
            let input = rand_input(&config, 1, seed, true);
            let (tape, out) = model.forward(&input, false).unwrap();
            assert!(tape.value(out.final_logits).all_finite(), "seed {}", seed);
        }
    }

    #[test]
    fn missing_neighborhood_inputs_rejected() {
        let config = NetworkConfig::tiny(16);
        let mut model = Model::new(config.clone(), Components::full()).unwrap();
        let input = rand_input(&config, 1, 1, false);
        assert!(matches!(
            model.forward(&input, false),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn deterministic_inference_repeat() {
        let config = NetworkConfig::tiny(16);
        let mut model = Model::new(config.clone(), Components::full()).unwrap();
        let input = rand_input(&config, 1, 11, true);
        let (tape_a, out_a) = model.forward(&input, false).unwrap();
        let (tape_b, out_b) = model.forward(&input, false).unwrap();
        assert_eq!(
            tape_a.value(out_a.final_logits).data,
            tape_b.value(out_b.final_logits).data
        );
    }

    #[test]
    fn invalid_config_rejected() {
        let mut config = NetworkConfig::tiny(16);
        config.channels[1] = 9;
        assert!(Model::new(config, Components::baseline()).is_err());
        let mut config = NetworkConfig::tiny(16);
        config.patch_size = 10;
        assert!(config.validate().is_err());
    }
}
