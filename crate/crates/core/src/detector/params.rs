//! Model configuration, named parameter layout, initialization and
//! checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::DEFAULT_CUTOFF_FRAC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchMode {
    CnnOnly,
    VitOnly,
    Hybrid,
}

impl BranchMode {
    pub fn uses_cnn(self) -> bool {
        matches!(self, BranchMode::CnnOnly | BranchMode::Hybrid)
    }

    pub fn uses_vit(self) -> bool {
        matches!(self, BranchMode::VitOnly | BranchMode::Hybrid)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            BranchMode::CnnOnly => "cnn_only",
            BranchMode::VitOnly => "vit_only",
            BranchMode::Hybrid => "hybrid",
        }
    }
}

/// Shape of the gated dual-branch detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HybridConfig {
    pub input_size: usize,
    /// Width `d` of the shared space both branches project into.
    pub embed_dim: usize,
    /// Output channels of each conv-ReLU-pool stage; the last entry is the
    /// CNN feature width.
    pub conv_channels: Vec<usize>,
    pub patch_size: usize,
    /// Token width of the attention branch, also its feature width.
    pub vit_dim: usize,
    pub vit_blocks: usize,
    pub vit_heads: usize,
    pub mlp_hidden: usize,
    pub gate_hidden: usize,
    pub freq_enabled: bool,
    pub freq_cutoff: f64,
    pub branch_mode: BranchMode,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self::desk(BranchMode::Hybrid)
    }
}

impl HybridConfig {
    /// CPU-sized defaults: 64x64 input, 32-wide shared space.
    pub fn desk(branch_mode: BranchMode) -> Self {
        Self {
            input_size: 64,
            embed_dim: 32,
            conv_channels: vec![8, 16, 32],
            patch_size: 8,
            vit_dim: 32,
            vit_blocks: 1,
            vit_heads: 2,
            mlp_hidden: 64,
            gate_hidden: 32,
            freq_enabled: false,
            freq_cutoff: DEFAULT_CUTOFF_FRAC,
            branch_mode,
        }
    }

    /// Reference dimensions of the full-size model (2048-d CNN and 768-d ViT
    /// features projected to 512). Kept for documentation; far too large to
    /// train with this crate's CPU kernels.
    pub fn full_scale(branch_mode: BranchMode) -> Self {
        Self {
            input_size: 224,
            embed_dim: 512,
            conv_channels: vec![256, 512, 2048],
            patch_size: 16,
            vit_dim: 768,
            vit_blocks: 12,
            vit_heads: 12,
            mlp_hidden: 3072,
            gate_hidden: 512,
            freq_enabled: false,
            freq_cutoff: DEFAULT_CUTOFF_FRAC,
            branch_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.input_size == 0 || self.patch_size == 0 {
            return bad("input and patch sizes must be positive".into());
        }
        if self.input_size % self.patch_size != 0 {
            return bad(format!(
                "input size {} not divisible by patch size {}",
                self.input_size, self.patch_size
            ));
        }
        if self.embed_dim < 2 {
            return bad("embed_dim must be at least 2".into());
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return bad("conv stages need positive channel counts".into());
        }
        let stride = 1usize << self.conv_channels.len();
        if self.input_size % stride != 0 {
            return bad(format!(
                "input size {} not divisible by 2^{} pooling",
                self.input_size,
                self.conv_channels.len()
            ));
        }
        if self.vit_heads == 0 || self.vit_dim % self.vit_heads != 0 {
            return bad("vit_dim must be a positive multiple of vit_heads".into());
        }
        if self.mlp_hidden == 0 || self.gate_hidden == 0 {
            return bad("hidden widths must be positive".into());
        }
        if !(self.freq_cutoff > 0.0 && self.freq_cutoff < 0.5) {
            return bad("freq_cutoff must be in (0, 0.5)".into());
        }
        Ok(())
    }

    pub fn cnn_dim(&self) -> usize {
        *self.conv_channels.last().expect("validated")
    }

    pub fn n_patches(&self) -> usize {
        let g = self.input_size / self.patch_size;
        g * g
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch_size * self.patch_size
    }

    pub fn input_len(&self) -> usize {
        3 * self.input_size * self.input_size
    }
}

/// Learning-rate group of a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Branch trunks (conv stages, patch embedding, attention blocks).
    Trunk,
    /// Projections, gate and classifier head.
    New,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// He-uniform with the given fan-in.
    HeUniform(usize),
    Zeros,
    Ones,
    /// Fixed 2-D sin-cos table over the patch grid (first half of the
    /// features encodes the row, second half the column).
    Position,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: Init,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offset and length of one tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn range(self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

#[derive(Debug, Clone)]
pub struct ConvSlots {
    pub weight: Slot,
    pub bias: Slot,
    pub cin: usize,
    pub cout: usize,
}

#[derive(Debug, Clone)]
pub struct BlockSlots {
    pub ln1_gamma: Slot,
    pub ln1_beta: Slot,
    pub wq: Slot,
    pub wk: Slot,
    pub wv: Slot,
    pub wo: Slot,
    pub bo: Slot,
    pub ln2_gamma: Slot,
    pub ln2_beta: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

#[derive(Debug, Clone)]
pub struct VitSlots {
    pub embed_w: Slot,
    pub embed_b: Slot,
    pub pos: Slot,
    pub blocks: Vec<BlockSlots>,
}

#[derive(Debug, Clone)]
pub struct GateSlots {
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

/// Where every tensor lives in the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub specs: Vec<ParamSpec>,
    pub total: usize,
    pub convs: Vec<ConvSlots>,
    pub vit: Option<VitSlots>,
    pub proj_cnn: Option<Slot>,
    pub proj_vit: Option<Slot>,
    pub gate: Option<GateSlots>,
    pub head_w: Slot,
    pub head_b: Slot,
}

struct Builder {
    specs: Vec<ParamSpec>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, group: ParamGroup, init: Init) -> Slot {
        let spec = ParamSpec {
            name,
            shape,
            group,
            init,
            offset: self.total,
        };
        let slot = Slot {
            offset: self.total,
            len: spec.len(),
        };
        self.total += spec.len();
        self.specs.push(spec);
        slot
    }
}

impl Layout {
    pub fn new(cfg: &HybridConfig) -> Result<Self> {
        cfg.validate()?;
        use Init::*;
        use ParamGroup::*;
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let d = cfg.embed_dim;

        let mut convs = Vec::new();
        if cfg.branch_mode.uses_cnn() {
            let mut cin = 3;
            for (i, &cout) in cfg.conv_channels.iter().enumerate() {
                let weight = b.add(format!("cnn.conv{i}.weight"), vec![cout, cin, 3, 3], Trunk, HeUniform(cin * 9));
                let bias = b.add(format!("cnn.conv{i}.bias"), vec![cout], Trunk, Zeros);
                convs.push(ConvSlots {
                    weight,
                    bias,
                    cin,
                    cout,
                });
                cin = cout;
            }
        }

        let vit = if cfg.branch_mode.uses_vit() {
            let dv = cfg.vit_dim;
            let pd = cfg.patch_dim();
            let hid = cfg.mlp_hidden;
            let embed_w = b.add("vit.embed.weight".into(), vec![dv, pd], Trunk, HeUniform(pd));
            let embed_b = b.add("vit.embed.bias".into(), vec![dv], Trunk, Zeros);
            let pos = b.add("vit.pos".into(), vec![cfg.n_patches(), dv], Trunk, Position);
            let mut blocks = Vec::new();
            for i in 0..cfg.vit_blocks {
                let p = |s: &str| format!("vit.block{i}.{s}");
                blocks.push(BlockSlots {
                    ln1_gamma: b.add(p("ln1.gamma"), vec![dv], Trunk, Ones),
                    ln1_beta: b.add(p("ln1.beta"), vec![dv], Trunk, Zeros),
                    wq: b.add(p("attn.wq"), vec![dv, dv], Trunk, HeUniform(dv)),
                    wk: b.add(p("attn.wk"), vec![dv, dv], Trunk, HeUniform(dv)),
                    wv: b.add(p("attn.wv"), vec![dv, dv], Trunk, HeUniform(dv)),
                    wo: b.add(p("attn.wo"), vec![dv, dv], Trunk, HeUniform(dv)),
                    bo: b.add(p("attn.bo"), vec![dv], Trunk, Zeros),
                    ln2_gamma: b.add(p("ln2.gamma"), vec![dv], Trunk, Ones),
                    ln2_beta: b.add(p("ln2.beta"), vec![dv], Trunk, Zeros),
                    w1: b.add(p("mlp.w1"), vec![hid, dv], Trunk, HeUniform(dv)),
                    b1: b.add(p("mlp.b1"), vec![hid], Trunk, Zeros),
                    w2: b.add(p("mlp.w2"), vec![dv, hid], Trunk, HeUniform(hid)),
                    b2: b.add(p("mlp.b2"), vec![dv], Trunk, Zeros),
                });
            }
            Some(VitSlots {
                embed_w,
                embed_b,
                pos,
                blocks,
            })
        } else {
            None
        };

        let proj_cnn = cfg
            .branch_mode
            .uses_cnn()
            .then(|| b.add("proj.cnn".into(), vec![d, cfg.cnn_dim()], New, HeUniform(cfg.cnn_dim())));
        let proj_vit = cfg
            .branch_mode
            .uses_vit()
            .then(|| b.add("proj.vit".into(), vec![d, cfg.vit_dim], New, HeUniform(cfg.vit_dim)));
        let gate = (cfg.branch_mode == BranchMode::Hybrid).then(|| GateSlots {
            w1: b.add("gate.w1".into(), vec![cfg.gate_hidden, 2 * d], New, HeUniform(2 * d)),
            b1: b.add("gate.b1".into(), vec![cfg.gate_hidden], New, Zeros),
            w2: b.add("gate.w2".into(), vec![2, cfg.gate_hidden], New, Zeros),
            b2: b.add("gate.b2".into(), vec![2], New, Zeros),
        });
        let head_w = b.add("head.weight".into(), vec![d], New, HeUniform(d));
        let head_b = b.add("head.bias".into(), vec![1], New, Zeros);

        Ok(Self {
            specs: b.specs,
            total: b.total,
            convs,
            vit,
            proj_cnn,
            proj_vit,
            gate,
            head_w,
            head_b,
        })
    }

    pub fn spec(&self, name: &str) -> Option<&ParamSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// Every weight of one detector, flattened, together with its config.
#[derive(Debug, Clone)]
pub struct HybridParams {
    pub config: HybridConfig,
    pub layout: Layout,
    pub values: Vec<f64>,
}

impl PartialEq for HybridParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.values == other.values
    }
}

fn sincos_2d(out: &mut [f64], grid: usize, dim: usize) {
    let quarter = dim / 4;
    for gy in 0..grid {
        for gx in 0..grid {
            let row = &mut out[(gy * grid + gx) * dim..][..dim];
            for k in 0..quarter {
                let omega = 1.0 / 10000f64.powf(k as f64 / quarter as f64);
                let (y, x) = (gy as f64 * omega, gx as f64 * omega);
                row[k] = y.sin();
                row[quarter + k] = y.cos();
                row[2 * quarter + k] = x.sin();
                row[3 * quarter + k] = x.cos();
            }
        }
    }
}

impl HybridParams {
    /// He-uniform weights, zero biases, unit layer-norm gains, and a zero
    /// final gate layer so fusion starts at w = [0.5, 0.5].
    pub fn init(config: &HybridConfig, seed: u64) -> Result<Self> {
        let layout = Layout::new(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = vec![0.0; layout.total];
        for spec in &layout.specs {
            let slice = &mut values[spec.range()];
            match spec.init {
                Init::Zeros => {}
                Init::Ones => slice.fill(1.0),
                Init::HeUniform(fan_in) => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in slice {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                Init::Position => sincos_2d(slice, config.input_size / config.patch_size, spec.shape[1]),
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn zeros(config: &HybridConfig) -> Result<Self> {
        let layout = Layout::new(config)?;
        let values = vec![0.0; layout.total];
        Ok(Self {
            config: config.clone(),
            layout,
            values,
        })
    }

    pub fn slot(&self, s: Slot) -> &[f64] {
        &self.values[s.range()]
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout.spec(name).map(|s| &self.values[s.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.spec(name)?.range();
        Some(&mut self.values[r])
    }

    pub fn set(&mut self, name: &str, data: &[f64]) -> Result<()> {
        let dst = self
            .get_mut(name)
            .ok_or_else(|| Error::Model(format!("no parameter named '{name}'")))?;
        if dst.len() != data.len() {
            return Err(Error::Model(format!(
                "parameter '{name}' has {} values, got {}",
                dst.len(),
                data.len()
            )));
        }
        dst.copy_from_slice(data);
        Ok(())
    }

    /// Copy every tensor whose name also exists in `other`.
    pub fn copy_shared_from(&mut self, other: &HybridParams) {
        for spec in self.layout.specs.clone() {
            if let Some(src) = other.get(&spec.name) {
                if src.len() == spec.len() {
                    self.values[spec.range()].copy_from_slice(src);
                }
            }
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self
                .layout
                .specs
                .iter()
                .map(|s| (s.name.clone(), self.values[s.range()].to_vec()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Model(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut p = Self::zeros(&ck.config)?;
        if ck.params.len() != p.layout.specs.len() {
            return Err(Error::Model(format!(
                "checkpoint has {} tensors, config needs {}",
                ck.params.len(),
                p.layout.specs.len()
            )));
        }
        for (name, data) in &ck.params {
            p.set(name, data)?;
        }
        if p.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("checkpoint contains non-finite weights".into()));
        }
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint())
            .map_err(|e| Error::Model(format!("serializing checkpoint: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Model(format!("{}: {e}", path.display())))?;
        Self::from_checkpoint(ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "fixthresh-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: format tag, version, config header and a name → values
/// weight map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: HybridConfig,
    pub params: BTreeMap<String, Vec<f64>>,
}
