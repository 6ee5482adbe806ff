//! The three-branch quality model.
//!
//! Two full-reference branches encode both the query and the reference image
//! with a four-scale convolutional encoder and pool the absolute feature
//! differences per scale; the FRP branch keeps its encoder frozen, the FRNP
//! branch trains it. The no-reference branch pools features of the query
//! alone. The concatenated branch vectors feed a three-layer fully connected
//! head that regresses a single quality score.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::{Parameter, Real, Shape, Tensor, TensorData};
use crate::weights;

/// Which encoder a call refers to.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Branch {
    Frp,
    Frnp,
    Nr,
}

impl Branch {
    fn prefix(self) -> &'static str {
        match self {
            Branch::Frp => "frp",
            Branch::Frnp => "frnp",
            Branch::Nr => "nr",
        }
    }
}

/// Four-scale encoder layout. Scale `s` halves the spatial size `s` times,
/// so inputs must be divisible by 16.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Output channels at scales 1..4.
    pub channels: [usize; 4],
    pub convs_per_block: usize,
    pub kernel: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            channels: [16, 32, 64, 128],
            convs_per_block: 2,
            kernel: 3,
        }
    }
}

impl EncoderConfig {
    pub fn with_channels(channels: [usize; 4]) -> Self {
        EncoderConfig {
            channels,
            ..Default::default()
        }
    }

    /// Dimension of the pooled-and-concatenated branch vector.
    pub fn feature_dim(&self) -> usize {
        self.channels.iter().sum()
    }

    fn validate_into(&self, prefix: &str, errs: &mut Vec<String>) {
        if self.channels.contains(&0) {
            errs.push(format!("{prefix}.channels: all four entries must be positive"));
        }
        if self.convs_per_block == 0 {
            errs.push(format!("{prefix}.convs_per_block: must be positive"));
        }
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            errs.push(format!(
                "{prefix}.kernel: must be odd and positive, got {}",
                self.kernel
            ));
        }
    }
}

/// Where the frozen FRP encoder weights come from: an imported weights file
/// or a fixed seed. They are frozen either way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightsSource {
    File(PathBuf),
    Seed(u64),
}

impl Default for WeightsSource {
    fn default() -> Self {
        WeightsSource::Seed(0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub use_frp: bool,
    pub use_frnp: bool,
    pub use_nr: bool,
    pub frp_encoder: EncoderConfig,
    pub frnp_encoder: EncoderConfig,
    pub nr_encoder: EncoderConfig,
    /// Hidden widths of the two intermediate fully connected layers.
    pub fc_dims: [usize; 2],
    pub frp_weights_source: WeightsSource,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            use_frp: true,
            use_frnp: true,
            use_nr: true,
            frp_encoder: EncoderConfig::default(),
            frnp_encoder: EncoderConfig::default(),
            nr_encoder: EncoderConfig::default(),
            fc_dims: [256, 64],
            frp_weights_source: WeightsSource::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate_into(&self, prefix: &str, errs: &mut Vec<String>) {
        let p = |field: &str| {
            if prefix.is_empty() {
                field.to_string()
            } else {
                format!("{prefix}.{field}")
            }
        };
        if !(self.use_frp || self.use_frnp || self.use_nr) {
            errs.push(p("use_frp/use_frnp/use_nr: at least one branch must be enabled"));
        }
        if self.use_frp {
            self.frp_encoder.validate_into(&p("frp_encoder"), errs);
        }
        if self.use_frnp {
            self.frnp_encoder.validate_into(&p("frnp_encoder"), errs);
        }
        if self.use_nr {
            self.nr_encoder.validate_into(&p("nr_encoder"), errs);
        }
        if self.fc_dims.contains(&0) {
            errs.push(p("fc_dims: hidden widths must be positive"));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.validate_into("", &mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::ModelConfig(errs.join("; ")))
        }
    }

    fn encoder(&self, branch: Branch) -> &EncoderConfig {
        match branch {
            Branch::Frp => &self.frp_encoder,
            Branch::Frnp => &self.frnp_encoder,
            Branch::Nr => &self.nr_encoder,
        }
    }

    fn branch_enabled(&self, branch: Branch) -> bool {
        match branch {
            Branch::Frp => self.use_frp,
            Branch::Frnp => self.use_frnp,
            Branch::Nr => self.use_nr,
        }
    }

    /// Input width of the regression head: sum of enabled branch dims.
    pub fn head_input_dim(&self) -> usize {
        let mut d = 0;
        if self.use_frp {
            d += self.frp_encoder.feature_dim();
        }
        if self.use_frnp {
            d += self.frnp_encoder.feature_dim();
        }
        if self.use_nr {
            d += self.nr_encoder.feature_dim();
        }
        d
    }
}

/// Per-scale encoder activations, freshest tape ids.
pub struct FeaturePyramid {
    pub scales: [NodeId; 4],
}

/// Pooled branch vectors; fields are present exactly for enabled branches and
/// are always fused in this field order.
pub struct BranchFeatures {
    pub d_frp: Option<NodeId>,
    pub d_frnp: Option<NodeId>,
    pub f_nr: Option<NodeId>,
}

/// Tape ids of the model parameters for one forward pass, in parameter-table
/// order.
pub struct BoundModel {
    ids: Vec<NodeId>,
}

impl BoundModel {
    /// Builds a binding from explicit leaf ids (one per parameter, in
    /// parameter order). Used by the gradient checker to splice in perturbed
    /// parameter values.
    pub fn from_ids(ids: Vec<NodeId>) -> Self {
        BoundModel { ids }
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

#[derive(Clone)]
struct ParamSpec {
    name: String,
    shape: Shape,
    trainable: bool,
    /// Fan-in for He initialization; biases use `None` and start at zero.
    fan_in: Option<usize>,
}

#[derive(Debug)]
pub struct IqaModel {
    config: ModelConfig,
    params: Vec<Parameter>,
    index: BTreeMap<String, usize>,
}

impl IqaModel {
    /// Builds a model with He-initialized trainable weights drawn from
    /// `seed`. FRP weights come from the configured source (file or their own
    /// seed) and are frozen.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let specs = param_table(&config);

        let mut frp_rng = match &config.frp_weights_source {
            WeightsSource::Seed(s) => Some(ChaCha12Rng::seed_from_u64(*s)),
            WeightsSource::File(_) => None,
        };
        let frp_file = match &config.frp_weights_source {
            WeightsSource::File(p) if config.use_frp => Some(load_frp_file(p, &specs)?),
            _ => None,
        };
        let mut rng = ChaCha12Rng::seed_from_u64(seed);

        let mut params = Vec::with_capacity(specs.len());
        let mut index = BTreeMap::new();
        for spec in &specs {
            let value = if !spec.trainable {
                if let Some(file) = &frp_file {
                    file.get(&spec.name)
                        .cloned()
                        .expect("load_frp_file verified the name set")
                } else {
                    init_tensor(spec, frp_rng.as_mut().expect("seed source"))
                }
            } else {
                init_tensor(spec, &mut rng)
            };
            index.insert(spec.name.clone(), params.len());
            params.push(Parameter::new(spec.name.clone(), value, spec.trainable));
        }
        Ok(IqaModel {
            config,
            params,
            index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    /// Replaces a parameter value, keeping its trainable flag.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| {
            Error::InvalidArgument(format!("no parameter named `{name}`"))
        })?;
        if value.shape() != self.params[i].value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_param",
                lhs: self.params[i].value.shape(),
                rhs: value.shape(),
            });
        }
        self.params[i].value = value;
        Ok(())
    }

    pub fn branch_dim(&self, branch: Branch) -> usize {
        self.config.encoder(branch).feature_dim()
    }

    pub fn head_input_dim(&self) -> usize {
        self.config.head_input_dim()
    }

    /// SHA-256 over the FRP parameter bytes in parameter order.
    pub fn frp_param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            if p.name.starts_with("frp.") {
                h.update(p.value.to_le_bytes());
            }
        }
        hex_digest(h)
    }

    /// SHA-256 over all trainable parameter bytes in parameter order.
    pub fn trainable_param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            if p.trainable {
                h.update(p.value.to_le_bytes());
            }
        }
        hex_digest(h)
    }

    /// Inserts every parameter as a tape leaf; trainable ones track gradient.
    pub fn bind<T: Real>(&self, g: &mut Graph<T>) -> BoundModel {
        let ids = self
            .params
            .iter()
            .map(|p| {
                let v = promote_tensor::<T>(&p.value);
                if p.trainable {
                    g.leaf_with_grad(v)
                } else {
                    g.leaf(v)
                }
            })
            .collect();
        BoundModel { ids }
    }

    fn param_id(&self, bound: &BoundModel, name: &str) -> NodeId {
        bound.ids[self.index[name]]
    }

    /// Runs one encoder over an image batch `(n, 3, h, w)`, h and w divisible
    /// by 16, and returns the four per-scale feature maps.
    pub fn encoder_forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        branch: Branch,
        image: NodeId,
    ) -> Result<FeaturePyramid> {
        if !self.config.branch_enabled(branch) {
            return Err(Error::InvalidArgument(format!(
                "branch {:?} is disabled in this configuration",
                branch
            )));
        }
        let shape = g.value(image).shape();
        if shape.c != 3 {
            return Err(Error::ChannelCount {
                shape,
                expected: 3,
            });
        }
        if !shape.h.is_multiple_of(16) || !shape.w.is_multiple_of(16) || shape.h == 0 || shape.w == 0 {
            return Err(Error::NotDivisibleBy16 { shape });
        }
        let cfg = self.config.encoder(branch);
        let pad = cfg.kernel / 2;
        let prefix = branch.prefix();
        let mut x = image;
        let mut scales = Vec::with_capacity(4);
        for s in 0..4 {
            for j in 0..cfg.convs_per_block {
                let w = self.param_id(bound, &format!("{prefix}.s{}.conv{j}.weight", s + 1));
                let b = self.param_id(bound, &format!("{prefix}.s{}.conv{j}.bias", s + 1));
                x = g.conv2d(x, w, b, 1, pad)?;
                x = g.relu(x);
            }
            x = g.maxpool2(x)?;
            scales.push(x);
        }
        Ok(FeaturePyramid {
            scales: [scales[0], scales[1], scales[2], scales[3]],
        })
    }

    /// Full-reference branch: per scale, global average pooling of
    /// `|phi_s(query) - phi_s(reference)|`, concatenated over the four
    /// scales. Zero when query and reference are identical, symmetric in its
    /// arguments.
    pub fn fr_branch<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        branch: Branch,
        query: NodeId,
        reference: NodeId,
    ) -> Result<NodeId> {
        if branch == Branch::Nr {
            return Err(Error::InvalidArgument(
                "fr_branch: expected Frp or Frnp".into(),
            ));
        }
        let qs = g.value(query).shape();
        let rs = g.value(reference).shape();
        if qs != rs {
            return Err(Error::ShapeMismatch {
                op: "fr_branch query/reference",
                lhs: qs,
                rhs: rs,
            });
        }
        let pq = self.encoder_forward(g, bound, branch, query)?;
        let pr = self.encoder_forward(g, bound, branch, reference)?;
        let mut pooled = Vec::with_capacity(4);
        for s in 0..4 {
            let d = g.abs_diff(pq.scales[s], pr.scales[s])?;
            pooled.push(g.global_avg_pool(d)?);
        }
        g.concat(&pooled)
    }

    /// No-reference branch: global average pooling of the query features per
    /// scale, concatenated. Independent of any reference image.
    pub fn nr_branch<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        query: NodeId,
    ) -> Result<NodeId> {
        let p = self.encoder_forward(g, bound, Branch::Nr, query)?;
        let mut pooled = Vec::with_capacity(4);
        for s in 0..4 {
            pooled.push(g.global_avg_pool(p.scales[s])?);
        }
        g.concat(&pooled)
    }

    /// Concatenates the present branch vectors in fixed order
    /// (FRP, FRNP, NR) and applies the three-layer head. No output
    /// activation.
    pub fn fuse_and_score<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        features: &BranchFeatures,
    ) -> Result<NodeId> {
        for (present, enabled, name) in [
            (features.d_frp.is_some(), self.config.use_frp, "d_frp"),
            (features.d_frnp.is_some(), self.config.use_frnp, "d_frnp"),
            (features.f_nr.is_some(), self.config.use_nr, "f_nr"),
        ] {
            if present != enabled {
                return Err(Error::InvalidArgument(format!(
                    "fuse_and_score: `{name}` must be {} for this configuration",
                    if enabled { "present" } else { "absent" }
                )));
            }
        }
        let parts: Vec<NodeId> = [features.d_frp, features.d_frnp, features.f_nr]
            .into_iter()
            .flatten()
            .collect();
        let mut x = g.concat(&parts)?;
        let got = g.value(x).shape().c;
        let want = self.head_input_dim();
        if got != want {
            return Err(Error::ShapeMismatch {
                op: "fuse_and_score head input",
                lhs: Shape::vector(g.value(x).shape().n, got),
                rhs: Shape::vector(g.value(x).shape().n, want),
            });
        }
        for layer in 0..3 {
            let w = self.param_id(bound, &format!("head.fc{layer}.weight"));
            let b = self.param_id(bound, &format!("head.fc{layer}.bias"));
            x = g.linear(x, w, b)?;
            if layer < 2 {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    /// Composes the enabled branches and the head. `reference` is ignored
    /// entirely when only the no-reference branch is enabled.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        bound: &BoundModel,
        query: NodeId,
        reference: NodeId,
    ) -> Result<NodeId> {
        let features = BranchFeatures {
            d_frp: if self.config.use_frp {
                Some(self.fr_branch(g, bound, Branch::Frp, query, reference)?)
            } else {
                None
            },
            d_frnp: if self.config.use_frnp {
                Some(self.fr_branch(g, bound, Branch::Frnp, query, reference)?)
            } else {
                None
            },
            f_nr: if self.config.use_nr {
                Some(self.nr_branch(g, bound, query)?)
            } else {
                None
            },
        };
        self.fuse_and_score(g, bound, &features)
    }

    /// Scores a batch of image pairs, one scalar per row.
    pub fn predict(&self, query: &Tensor, reference: &Tensor) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let bound = self.bind(&mut g);
        let q = g.leaf(query.clone());
        let r = g.leaf(reference.clone());
        let out = self.forward(&mut g, &bound, q, r)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Writes the weights container at `path` and the config sidecar at
    /// `path + ".json"`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let named: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), &p.value))
            .collect();
        weights::save_tensors(path, &named)?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.config)
            .map_err(|e| Error::json(&sidecar, e))?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))
    }

    /// Loads a checkpoint written by [`IqaModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = sidecar_path(path);
        let raw = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let config: ModelConfig =
            serde_json::from_str(&raw).map_err(|e| Error::json(&sidecar, e))?;
        config.validate()?;
        let specs = param_table(&config);
        let loaded = weights::load_tensors(path)?;
        let by_name: BTreeMap<String, Tensor> = loaded.into_iter().collect();
        check_param_set(path, &specs, &by_name)?;

        let mut params = Vec::with_capacity(specs.len());
        let mut index = BTreeMap::new();
        for spec in &specs {
            let value = by_name[&spec.name].clone();
            index.insert(spec.name.clone(), params.len());
            params.push(Parameter::new(spec.name.clone(), value, spec.trainable));
        }
        Ok(IqaModel {
            config,
            params,
            index,
        })
    }
}

fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

fn promote_tensor<T: Real>(t: &Tensor) -> TensorData<T> {
    TensorData::from_vec(
        t.shape(),
        t.data().iter().map(|&v| T::from_f64(v as f64)).collect(),
    )
    .expect("same length")
}

fn encoder_specs(prefix: &str, cfg: &EncoderConfig, trainable: bool, out: &mut Vec<ParamSpec>) {
    let k = cfg.kernel;
    let mut c_prev = 3;
    for s in 0..4 {
        let c_out = cfg.channels[s];
        for j in 0..cfg.convs_per_block {
            let c_in = if j == 0 { c_prev } else { c_out };
            out.push(ParamSpec {
                name: format!("{prefix}.s{}.conv{j}.weight", s + 1),
                shape: Shape::new(c_out, c_in, k, k),
                trainable,
                fan_in: Some(c_in * k * k),
            });
            out.push(ParamSpec {
                name: format!("{prefix}.s{}.conv{j}.bias", s + 1),
                shape: Shape::new(1, c_out, 1, 1),
                trainable,
                fan_in: None,
            });
        }
        c_prev = c_out;
    }
}

fn param_table(config: &ModelConfig) -> Vec<ParamSpec> {
    let mut specs = Vec::new();
    if config.use_frp {
        encoder_specs("frp", &config.frp_encoder, false, &mut specs);
    }
    if config.use_frnp {
        encoder_specs("frnp", &config.frnp_encoder, true, &mut specs);
    }
    if config.use_nr {
        encoder_specs("nr", &config.nr_encoder, true, &mut specs);
    }
    let dims = [
        (config.fc_dims[0], config.head_input_dim()),
        (config.fc_dims[1], config.fc_dims[0]),
        (1, config.fc_dims[1]),
    ];
    for (layer, (d_out, d_in)) in dims.into_iter().enumerate() {
        specs.push(ParamSpec {
            name: format!("head.fc{layer}.weight"),
            shape: Shape::new(d_out, d_in, 1, 1),
            trainable: true,
            fan_in: Some(d_in),
        });
        specs.push(ParamSpec {
            name: format!("head.fc{layer}.bias"),
            shape: Shape::new(1, d_out, 1, 1),
            trainable: true,
            fan_in: None,
        });
    }
    specs
}

/// He fan-in normal init for weights; biases start at zero.
fn init_tensor(spec: &ParamSpec, rng: &mut ChaCha12Rng) -> Tensor {
    match spec.fan_in {
        None => Tensor::zeros(spec.shape),
        Some(fan_in) => {
            let std = (2.0 / fan_in as f64).sqrt() as f32;
            let dist = Normal::new(0.0f32, std).expect("positive std");
            let data = (0..spec.shape.len())
                .map(|_| dist.sample(rng))
                .collect();
            Tensor::from_vec(spec.shape, data).expect("length matches")
        }
    }
}

fn load_frp_file(path: &Path, specs: &[ParamSpec]) -> Result<BTreeMap<String, Tensor>> {
    let loaded = weights::load_tensors(path)?;
    let by_name: BTreeMap<String, Tensor> = loaded.into_iter().collect();
    let frp_specs: Vec<ParamSpec> = specs.iter().filter(|s| !s.trainable).cloned().collect();
    check_param_set(path, &frp_specs, &by_name)?;
    Ok(by_name)
}

fn check_param_set(
    path: &Path,
    specs: &[ParamSpec],
    by_name: &BTreeMap<String, Tensor>,
) -> Result<()> {
    let mut problems = Vec::new();
    for spec in specs {
        match by_name.get(&spec.name) {
            None => problems.push(format!("missing `{}`", spec.name)),
            Some(t) if t.shape() != spec.shape => problems.push(format!(
                "`{}`: expected shape {}, file has {}",
                spec.name,
                spec.shape,
                t.shape()
            )),
            _ => {}
        }
    }
    let expected: std::collections::BTreeSet<&str> =
        specs.iter().map(|s| s.name.as_str()).collect();
    for name in by_name.keys() {
        if !expected.contains(name.as_str()) {
            problems.push(format!("unexpected `{name}`"));
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::WeightsNameMismatch {
            path: path.display().to_string(),
            msg: problems.join(", "),
        })
    }
}
