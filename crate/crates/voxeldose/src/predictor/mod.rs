//! The dose predictor: a shared convolutional feature trunk feeding seven
//! independent dose heads (six organs plus body), each a 256-unit dense layer
//! with leaky ReLU into a single sigmoid output on the normalized dose scale.

pub mod nn;
mod train;

pub use train::{
    augment, dose_loss, dose_loss_gradient, flip_vertical, predict, train, training_log_csv,
    EpochLog, TrainConfig,
};

use serde::{Deserialize, Serialize};

use crate::dosimetry::OrganDoseVector;
use crate::error::{Error, Result};
use crate::phantom::LABEL_NAMES;
use crate::rng::rng_for;
use crate::scout::{ModelInput, ScoutNormBounds, CHANNEL_FRONTAL, CHANNEL_LATERAL, CHANNEL_RANGE};
use nn::{
    avg_pool, conv_out_dim, global_avg_pool, global_avg_pool_backward, leaky_relu,
    leaky_relu_backward, leaky_relu_tensor, leaky_relu_tensor_backward, sigmoid, Conv2d, Dense,
    Tensor3,
};

/// Number of prediction heads: six organs plus the patient body.
pub const NUM_HEADS: usize = 7;

/// Which input channels feed the trunk. Single-view ablations use the scout
/// plus the scan range as a 2-channel input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelSelection {
    All,
    LateralOnly,
    FrontalOnly,
}

impl ChannelSelection {
    pub fn indices(&self) -> Vec<usize> {
        match self {
            ChannelSelection::All => vec![CHANNEL_LATERAL, CHANNEL_FRONTAL, CHANNEL_RANGE],
            ChannelSelection::LateralOnly => vec![CHANNEL_LATERAL, CHANNEL_RANGE],
            ChannelSelection::FrontalOnly => vec![CHANNEL_FRONTAL, CHANNEL_RANGE],
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ChannelSelection::All => "3-channel",
            ChannelSelection::LateralOnly => "lateral-only",
            ChannelSelection::FrontalOnly => "frontal-only",
        }
    }
}

/// Trunk and head hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub input_rows: usize,
    pub input_cols: usize,
    pub channels: ChannelSelection,
    /// Parameter-free average-pool stem factor applied before the trunk.
    pub stem_pool: usize,
    /// Output channels of the stride-2 conv stages.
    pub conv_channels: Vec<usize>,
    /// Hidden width of each dose head.
    pub head_hidden: usize,
    pub leaky_slope: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig {
            input_rows: crate::scout::SCOUT_ROWS,
            input_cols: crate::scout::SCOUT_COLS,
            channels: ChannelSelection::All,
            stem_pool: 4,
            conv_channels: vec![16, 32, 64, 128],
            head_hidden: 256,
            leaky_slope: 0.2,
        }
    }
}

impl PredictorConfig {
    pub fn in_channels(&self) -> usize {
        self.channels.indices().len()
    }

    pub fn feature_dim(&self) -> usize {
        *self.conv_channels.last().expect("at least one conv stage")
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty() {
            return Err(Error::Config("trunk needs at least one conv stage".into()));
        }
        if self.stem_pool == 0 || self.head_hidden == 0 {
            return Err(Error::Config("stem pool and head width must be positive".into()));
        }
        let (mut h, mut w) = (self.input_rows / self.stem_pool, self.input_cols / self.stem_pool);
        for _ in &self.conv_channels {
            h = conv_out_dim(h);
            w = conv_out_dim(w);
        }
        if h == 0 || w == 0 {
            return Err(Error::Config("input too small for the trunk depth".into()));
        }
        Ok(())
    }
}

/// Per-label min-max dose normalization bounds in mGy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoseBounds {
    pub min: [f64; NUM_HEADS],
    pub max: [f64; NUM_HEADS],
}

impl DoseBounds {
    pub fn validate(&self) -> Result<()> {
        for k in 0..NUM_HEADS {
            if !(self.min[k] < self.max[k]) {
                return Err(Error::Config(format!(
                    "degenerate dose bounds for {}: [{}, {}]",
                    LABEL_NAMES[k], self.min[k], self.max[k]
                )));
            }
        }
        Ok(())
    }

    /// Bounds from training doses with a 5% margin on the per-label span.
    pub fn from_training_doses(doses: &[OrganDoseVector]) -> Result<DoseBounds> {
        if doses.is_empty() {
            return Err(Error::Config("no doses to derive bounds from".into()));
        }
        let mut min = [f64::INFINITY; NUM_HEADS];
        let mut max = [f64::NEG_INFINITY; NUM_HEADS];
        for d in doses {
            for k in 0..NUM_HEADS {
                min[k] = min[k].min(d.values[k]);
                max[k] = max[k].max(d.values[k]);
            }
        }
        for k in 0..NUM_HEADS {
            let span = max[k] - min[k];
            let margin = if span > 0.0 {
                0.05 * span
            } else {
                (0.05 * max[k].abs()).max(0.01)
            };
            min[k] -= margin;
            max[k] += margin;
        }
        let b = DoseBounds { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn normalize(&self, v: &OrganDoseVector) -> [f64; NUM_HEADS] {
        std::array::from_fn(|k| (v.values[k] - self.min[k]) / (self.max[k] - self.min[k]))
    }

    pub fn denormalize(&self, n: &[f64; NUM_HEADS]) -> OrganDoseVector {
        OrganDoseVector {
            values: std::array::from_fn(|k| self.min[k] + n[k] * (self.max[k] - self.min[k])),
        }
    }
}

/// Per-label min-max mapping to the normalized (0-1) training scale.
pub fn normalize_dose(v: &OrganDoseVector, bounds: &DoseBounds) -> Result<[f64; NUM_HEADS]> {
    bounds.validate()?;
    Ok(bounds.normalize(v))
}

pub fn denormalize_dose(n: &[f64; NUM_HEADS], bounds: &DoseBounds) -> Result<OrganDoseVector> {
    bounds.validate()?;
    Ok(bounds.denormalize(n))
}

#[derive(Debug)]
struct Head {
    fc1: Dense,
    fc2: Dense,
}

/// The trainable model: shared trunk plus one head per label, with the dose
/// and input normalization metadata needed for inference.
#[derive(Debug)]
pub struct DosePredictor {
    pub config: PredictorConfig,
    convs: Vec<Conv2d>,
    heads: Vec<Head>,
    pub dose_bounds: Option<DoseBounds>,
    pub input_bounds: Option<ScoutNormBounds>,
}

/// Activations cached by a forward pass for the matching backward pass.
pub struct ForwardCache {
    stem: Tensor3,
    conv_pre: Vec<Tensor3>,
    conv_post: Vec<Tensor3>,
    feat: Vec<f64>,
    head_pre: Vec<Vec<f64>>,
    head_post: Vec<Vec<f64>>,
    pub outputs: [f64; NUM_HEADS],
}

/// Flat gradient buffers matching [`DosePredictor::group_sizes`] order.
#[derive(Debug, Clone)]
pub struct GradBuf {
    pub groups: Vec<Vec<f64>>,
}

impl GradBuf {
    pub fn zeros_like(model: &DosePredictor) -> GradBuf {
        GradBuf {
            groups: model.group_sizes().iter().map(|(_, n)| vec![0.0; *n]).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &GradBuf, scale: f64) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * scale;
            }
        }
    }
}

impl DosePredictor {
    pub fn new(config: PredictorConfig, seed: u64) -> Result<DosePredictor> {
        config.validate()?;
        let mut rng = rng_for(seed, "model-init", 0);
        let mut convs = Vec::new();
        let mut in_c = config.in_channels();
        for &out_c in &config.conv_channels {
            convs.push(Conv2d::new(in_c, out_c, &mut rng));
            in_c = out_c;
        }
        let heads = (0..NUM_HEADS)
            .map(|_| Head {
                fc1: Dense::new(config.feature_dim(), config.head_hidden, &mut rng),
                fc2: Dense::new(config.head_hidden, 1, &mut rng),
            })
            .collect();
        Ok(DosePredictor {
            config,
            convs,
            heads,
            dose_bounds: None,
            input_bounds: None,
        })
    }

    /// Assemble the selected channels into the stem input tensor.
    fn stem_input(&self, input: &ModelInput) -> Result<Tensor3> {
        if input.rows != self.config.input_rows || input.cols != self.config.input_cols {
            return Err(Error::DimMismatch(format!(
                "model input {}x{} does not match configured {}x{}",
                input.rows, input.cols, self.config.input_rows, self.config.input_cols
            )));
        }
        let idx = self.config.channels.indices();
        let mut t = Tensor3::zeros(idx.len(), input.rows, input.cols);
        let hw = input.rows * input.cols;
        for (slot, &ch) in idx.iter().enumerate() {
            for (o, &v) in t.data[slot * hw..(slot + 1) * hw]
                .iter_mut()
                .zip(&input.channels[ch])
            {
                *o = v as f64;
            }
        }
        Ok(t)
    }

    /// Forward pass returning normalized (0,1) outputs for all heads.
    pub fn forward(&self, input: &ModelInput) -> Result<[f64; NUM_HEADS]> {
        Ok(self.forward_cached(input)?.outputs)
    }

    pub fn forward_cached(&self, input: &ModelInput) -> Result<ForwardCache> {
        let slope = self.config.leaky_slope;
        let stem = avg_pool(&self.stem_input(input)?, self.config.stem_pool);
        let mut conv_pre = Vec::with_capacity(self.convs.len());
        let mut conv_post = Vec::with_capacity(self.convs.len());
        let mut cur = stem.clone();
        for conv in &self.convs {
            let pre = conv.forward(&cur);
            let post = leaky_relu_tensor(&pre, slope);
            conv_pre.push(pre);
            cur = post.clone();
            conv_post.push(post);
        }
        let feat = global_avg_pool(&cur);
        let mut head_pre = Vec::with_capacity(NUM_HEADS);
        let mut head_post = Vec::with_capacity(NUM_HEADS);
        let mut outputs = [0.0; NUM_HEADS];
        for (k, head) in self.heads.iter().enumerate() {
            let pre = head.fc1.forward(&feat);
            let post = leaky_relu(&pre, slope);
            let o = head.fc2.forward(&post)[0];
            outputs[k] = sigmoid(o);
            head_pre.push(pre);
            head_post.push(post);
        }
        Ok(ForwardCache {
            stem,
            conv_pre,
            conv_post,
            feat,
            head_pre,
            head_post,
            outputs,
        })
    }

    /// Backward pass from per-head gradients w.r.t. the sigmoid outputs,
    /// accumulating parameter gradients into `grads`.
    pub fn backward(&self, cache: &ForwardCache, grad_outputs: &[f64; NUM_HEADS], grads: &mut GradBuf) {
        let slope = self.config.leaky_slope;
        let n_conv = self.convs.len();
        let mut gfeat = vec![0.0; cache.feat.len()];
        for (k, head) in self.heads.iter().enumerate() {
            let s = cache.outputs[k];
            let g_pre = grad_outputs[k] * s * (1.0 - s);
            let (g1_idx, b1_idx, g2_idx, b2_idx) = head_group_indices(n_conv, k);
            let gpost = {
                let (gw2, rest) = split_two(&mut grads.groups, g2_idx, b2_idx);
                head.fc2.backward(&cache.head_post[k], &[g_pre], gw2, rest)
            };
            let gpre = leaky_relu_backward(&cache.head_pre[k], &gpost, slope);
            let gf = {
                let (gw1, gb1) = split_two(&mut grads.groups, g1_idx, b1_idx);
                head.fc1.backward(&cache.feat, &gpre, gw1, gb1)
            };
            for (a, b) in gfeat.iter_mut().zip(&gf) {
                *a += b;
            }
        }
        let last = &cache.conv_post[n_conv - 1];
        let mut gcur = global_avg_pool_backward((last.c, last.h, last.w), &gfeat);
        for i in (0..n_conv).rev() {
            let gpre = leaky_relu_tensor_backward(&cache.conv_pre[i], &gcur, slope);
            let x = if i == 0 { &cache.stem } else { &cache.conv_post[i - 1] };
            let (gw, gb) = split_two(&mut grads.groups, 2 * i, 2 * i + 1);
            gcur = self.convs[i].backward(x, &gpre, gw, gb);
        }
    }

    /// Named parameter groups in checkpoint order.
    pub fn group_sizes(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            out.push((format!("conv{i}.w"), c.w.len()));
            out.push((format!("conv{i}.b"), c.b.len()));
        }
        for (k, h) in self.heads.iter().enumerate() {
            out.push((format!("head{k}.fc1.w"), h.fc1.w.len()));
            out.push((format!("head{k}.fc1.b"), h.fc1.b.len()));
            out.push((format!("head{k}.fc2.w"), h.fc2.w.len()));
            out.push((format!("head{k}.fc2.b"), h.fc2.b.len()));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.group_sizes().iter().map(|(_, n)| n).sum()
    }

    pub fn param_group(&self, idx: usize) -> &[f64] {
        let n_conv = self.convs.len();
        if idx < 2 * n_conv {
            let c = &self.convs[idx / 2];
            if idx % 2 == 0 {
                &c.w
            } else {
                &c.b
            }
        } else {
            let rest = idx - 2 * n_conv;
            let h = &self.heads[rest / 4];
            match rest % 4 {
                0 => &h.fc1.w,
                1 => &h.fc1.b,
                2 => &h.fc2.w,
                _ => &h.fc2.b,
            }
        }
    }

    pub fn param_group_mut(&mut self, idx: usize) -> &mut Vec<f64> {
        let n_conv = self.convs.len();
        if idx < 2 * n_conv {
            let c = &mut self.convs[idx / 2];
            if idx % 2 == 0 {
                &mut c.w
            } else {
                &mut c.b
            }
        } else {
            let rest = idx - 2 * n_conv;
            let h = &mut self.heads[rest / 4];
            match rest % 4 {
                0 => &mut h.fc1.w,
                1 => &mut h.fc1.b,
                2 => &mut h.fc2.w,
                _ => &mut h.fc2.b,
            }
        }
    }

    /// True when the group belongs to head `k` (head-isolation checks).
    pub fn group_is_head(&self, idx: usize, k: usize) -> bool {
        let n_conv = self.convs.len();
        idx >= 2 * n_conv && (idx - 2 * n_conv) / 4 == k
    }

    /// Self-describing binary checkpoint: JSON header plus raw parameter
    /// blobs, little-endian.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        #[derive(Serialize)]
        struct CkptHeader<'a> {
            version: u32,
            config: &'a PredictorConfig,
            labels: [&'static str; 7],
            dose_bounds: &'a Option<DoseBounds>,
            input_bounds: &'a Option<ScoutNormBounds>,
            groups: Vec<(String, usize)>,
        }
        let header = CkptHeader {
            version: 1,
            config: &self.config,
            labels: LABEL_NAMES,
            dose_bounds: &self.dose_bounds,
            input_bounds: &self.input_bounds,
            groups: self.group_sizes(),
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Numeric(format!("checkpoint header: {e}")))?;
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
            }
        }
        let mut w = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| Error::io(path, e))?,
        );
        w.write_all(b"VDOSECKPT1\n").map_err(|e| Error::io(path, e))?;
        w.write_all(&(header_json.len() as u64).to_le_bytes())
            .map_err(|e| Error::io(path, e))?;
        w.write_all(&header_json).map_err(|e| Error::io(path, e))?;
        for i in 0..self.group_sizes().len() {
            let mut buf = Vec::new();
            for v in self.param_group(i) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<DosePredictor> {
        use std::io::Read;
        #[derive(Deserialize)]
        struct CkptHeader {
            version: u32,
            config: PredictorConfig,
            #[allow(dead_code)]
            labels: Vec<String>,
            dose_bounds: Option<DoseBounds>,
            input_bounds: Option<ScoutNormBounds>,
            groups: Vec<(String, usize)>,
        }
        let mut r = std::io::BufReader::new(
            std::fs::File::open(path).map_err(|e| Error::io(path, e))?,
        );
        let mut magic = [0u8; 11];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != b"VDOSECKPT1\n" {
            return Err(Error::parse(path, "bad checkpoint magic"));
        }
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
        let len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; len];
        r.read_exact(&mut header_json).map_err(|e| Error::io(path, e))?;
        let header: CkptHeader = serde_json::from_slice(&header_json)
            .map_err(|e| Error::parse(path, format!("checkpoint header: {e}")))?;
        if header.version != 1 {
            return Err(Error::parse(path, format!("unsupported version {}", header.version)));
        }
        let mut model = DosePredictor::new(header.config, 0)?;
        let expected = model.group_sizes();
        if expected != header.groups {
            return Err(Error::parse(path, "checkpoint groups do not match config"));
        }
        for i in 0..expected.len() {
            let n = expected[i].1;
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
            let vals: Vec<f64> = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            *model.param_group_mut(i) = vals;
        }
        model.dose_bounds = header.dose_bounds;
        model.input_bounds = header.input_bounds;
        Ok(model)
    }
}

fn head_group_indices(n_conv: usize, k: usize) -> (usize, usize, usize, usize) {
    let base = 2 * n_conv + 4 * k;
    (base, base + 1, base + 2, base + 3)
}

/// Disjoint mutable borrows of two gradient groups.
fn split_two(groups: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = groups.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::scout::ScoutNormBounds;

    pub(crate) fn tiny_config() -> PredictorConfig {
        PredictorConfig {
            input_rows: 24,
            input_cols: 20,
            channels: ChannelSelection::All,
            stem_pool: 2,
            conv_channels: vec![2, 3],
            head_hidden: 4,
            leaky_slope: 0.2,
        }
    }

    pub(crate) fn tiny_input(seed: u64) -> ModelInput {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 24 * 20;
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
            (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
        };
        let scout0 = mk(&mut rng);
        let scout1 = mk(&mut rng);
        let range: Vec<f32> = (0..n).map(|i| if (i / 20) % 3 == 0 { 1.0 } else { 0.0 }).collect();
        ModelInput {
            rows: 24,
            cols: 20,
            channels: [scout0, scout1, range],
            bounds: ScoutNormBounds { min: 0.0, max: 1.0 },
        }
    }

    #[test]
    fn outputs_live_in_the_open_unit_interval() {
        let model = DosePredictor::new(tiny_config(), 5).unwrap();
        for seed in 0..4 {
            let out = model.forward(&tiny_input(seed)).unwrap();
            for v in out {
                assert!(v > 0.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn zero_weight_model_outputs_half() {
        let mut model = DosePredictor::new(tiny_config(), 5).unwrap();
        for i in 0..model.group_sizes().len() {
            for v in model.param_group_mut(i).iter_mut() {
                *v = 0.0;
            }
        }
        let out = model.forward(&tiny_input(0)).unwrap();
        for v in out {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn perturbing_one_head_changes_only_that_output() {
        let mut model = DosePredictor::new(tiny_config(), 6).unwrap();
        let input = tiny_input(1);
        let base = model.forward(&input).unwrap();
        let k = 3;
        let groups = model.group_sizes();
        for i in 0..groups.len() {
            if model.group_is_head(i, k) {
                for v in model.param_group_mut(i).iter_mut() {
                    *v += 0.1;
                }
            }
        }
        let out = model.forward(&input).unwrap();
        for j in 0..NUM_HEADS {
            if j == k {
                assert!((out[j] - base[j]).abs() > 1e-9);
            } else {
                assert_eq!(out[j], base[j], "head {j} changed");
            }
        }
    }

    #[test]
    fn head_gradients_are_isolated() {
        // d(output k)/d(head j params) = 0 for j != k
        let model = DosePredictor::new(tiny_config(), 7).unwrap();
        let input = tiny_input(2);
        let cache = model.forward_cached(&input).unwrap();
        let k = 2;
        let mut grad_out = [0.0; NUM_HEADS];
        grad_out[k] = 1.0;
        let mut grads = GradBuf::zeros_like(&model);
        model.backward(&cache, &grad_out, &mut grads);
        for (i, g) in grads.groups.iter().enumerate() {
            let is_other_head = (0..NUM_HEADS).any(|j| j != k && model.group_is_head(i, j));
            if is_other_head {
                assert!(g.iter().all(|&v| v == 0.0), "group {i} leaked gradient");
            }
        }
    }

    #[test]
    fn normalize_denormalize_round_trip() {
        let bounds = DoseBounds {
            min: [2.0; NUM_HEADS],
            max: [10.0; NUM_HEADS],
        };
        let v = OrganDoseVector { values: [6.0; NUM_HEADS] };
        let n = normalize_dose(&v, &bounds).unwrap();
        for x in n {
            assert!((x - 0.5).abs() < 1e-15);
        }
        let back = denormalize_dose(&n, &bounds).unwrap();
        for k in 0..NUM_HEADS {
            assert!((back.values[k] - v.values[k]).abs() < 1e-9);
        }
        // endpoints
        let lo = OrganDoseVector { values: [2.0; NUM_HEADS] };
        assert!(normalize_dose(&lo, &bounds).unwrap().iter().all(|&x| x == 0.0));
        let hi = OrganDoseVector { values: [10.0; NUM_HEADS] };
        assert!(normalize_dose(&hi, &bounds).unwrap().iter().all(|&x| x == 1.0));
        // degenerate bounds rejected
        let bad = DoseBounds { min: [1.0; NUM_HEADS], max: [1.0; NUM_HEADS] };
        assert!(normalize_dose(&v, &bad).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = DosePredictor::new(tiny_config(), 11).unwrap();
        model.dose_bounds = Some(DoseBounds {
            min: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            max: [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6],
        });
        model.input_bounds = Some(ScoutNormBounds { min: 0.0, max: 12.5 });
        let path = dir.path().join("m.ckpt");
        model.save(&path).unwrap();
        let loaded = DosePredictor::load(&path).unwrap();
        assert_eq!(loaded.config, model.config);
        assert_eq!(loaded.dose_bounds, model.dose_bounds);
        assert_eq!(loaded.input_bounds, model.input_bounds);
        for i in 0..model.group_sizes().len() {
            assert_eq!(loaded.param_group(i), model.param_group(i));
        }
        let input = tiny_input(3);
        assert_eq!(loaded.forward(&input).unwrap(), model.forward(&input).unwrap());
    }
}
