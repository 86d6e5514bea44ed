//! The implicit, E1 and E2 encoder/decoder stacks around the quantizer.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::codebook::{Codebook, QuantizeResult, DEFAULT_DECAY, DEFAULT_LAPLACE_EPS, DEFAULT_RESTART_THRESHOLD};
use super::VqError;
use crate::datagen::{Space, TimeSeriesSample, OBSERVED};
use crate::numkernel::{
    conv_block, deconv_block, masked_mse, weighted_bce_logits, Adam, Checkpoint, KernelRng, LayerSpec, Mode,
    Parameter, Sequential, Shape3, Tensor3,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "implicit")]
    Implicit,
    #[serde(rename = "E1", alias = "e1")]
    E1,
    #[serde(rename = "E2", alias = "e2")]
    E2,
}

impl Variant {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Implicit => "implicit",
            Self::E1 => "E1",
            Self::E2 => "E2",
        }
    }

    pub fn all() -> [Variant; 3] {
        [Self::Implicit, Self::E1, Self::E2]
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "implicit" => Some(Self::Implicit),
            "e1" => Some(Self::E1),
            "e2" => Some(Self::E2),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqConfig {
    pub variant: Variant,
    /// `d`; the last encoder block emits this many channels.
    pub embedding_dim: usize,
    /// `w`, the number of codewords.
    pub codebook_size: usize,
    pub beta: f64,
    pub decay: f64,
    pub laplace_eps: f64,
    pub restart_threshold: f64,
}

impl Default for VqConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Implicit,
            embedding_dim: 80,
            codebook_size: 256,
            beta: 0.25,
            decay: DEFAULT_DECAY,
            laplace_eps: DEFAULT_LAPLACE_EPS,
            restart_threshold: DEFAULT_RESTART_THRESHOLD,
        }
    }
}

impl VqConfig {
    pub fn validate(&self) -> Result<(), VqError> {
        if self.embedding_dim == 0 || self.codebook_size == 0 {
            return Err(VqError::InvalidConfig("embedding_dim and codebook_size must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(VqError::InvalidConfig(format!("decay {} outside (0, 1]", self.decay)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(VqError::InvalidConfig(format!("beta {} must be >= 0", self.beta)));
        }
        Ok(())
    }
}

fn stack(pairs: &[(usize, usize)], last_relu: bool, deconv: bool) -> Vec<LayerSpec> {
    let n = pairs.len();
    pairs
        .iter()
        .enumerate()
        .flat_map(|(i, &(a, b))| {
            let relu = i + 1 < n || last_relu;
            if deconv {
                deconv_block(a, b, relu)
            } else {
                conv_block(a, b, relu)
            }
        })
        .collect()
}

pub fn encoder_specs(variant: Variant, f: usize, d: usize) -> Vec<LayerSpec> {
    match variant {
        Variant::Implicit => stack(&[(f, f), (f, 2 * f), (2 * f, 4 * f), (4 * f, d)], true, false),
        Variant::E1 | Variant::E2 => stack(
            &[(2 * f, f), (f, 2 * f), (2 * f, 4 * f), (4 * f, 4 * f), (4 * f, 6 * f), (6 * f, d)],
            true,
            false,
        ),
    }
}

pub fn decoder_specs(variant: Variant, f: usize, d: usize) -> Vec<LayerSpec> {
    stack(
        &[(d, 6 * f), (6 * f, 4 * f), (4 * f, 4 * f), (4 * f, 2 * f), (2 * f, f)],
        variant == Variant::E2,
        true,
    )
}

pub fn mask_specs(f: usize) -> Vec<LayerSpec> {
    stack(&[(f, f), (f, f)], true, false)
}

/// Convolution plus ReLU, identity after the last layer; no normalization.
pub fn finetune_specs(f: usize) -> Vec<LayerSpec> {
    let mut out = Vec::new();
    for (i, (a, b)) in [(2 * f, 2 * f), (2 * f, f), (f, f), (f, f)].into_iter().enumerate() {
        out.push(LayerSpec::conv3(a, b));
        out.push(if i < 3 { LayerSpec::Relu } else { LayerSpec::Identity });
    }
    out
}

/// Zero-imputed inputs, binary mask and observed flags in `[B, F, L]` order.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor3,
    pub mask: Tensor3,
    pub observed: Vec<bool>,
}

impl Batch {
    /// Crops `(sample, window)` pairs of equal length from scaled samples.
    pub fn from_windows(windows: &[(&TimeSeriesSample, Range<usize>)]) -> Result<Self, VqError> {
        let first = windows.first().ok_or_else(|| VqError::Shape("empty batch".into()))?;
        let (f, l) = (first.0.n_vars(), first.1.len());
        let shape = Shape3::new(windows.len(), f, l);
        let mut x = Tensor3::zeros(shape);
        let mut mask = Tensor3::zeros(shape);
        let mut observed = vec![false; shape.numel()];
        for (b, (s, w)) in windows.iter().enumerate() {
            if s.space != Space::Scaled {
                return Err(VqError::WrongSpace(s.key()));
            }
            if s.n_vars() != f || w.len() != l || w.end > s.len() {
                return Err(VqError::Shape(format!("window {w:?} of {} does not fit the batch", s.key())));
            }
            for c in 0..f {
                for (t, day) in w.clone().enumerate() {
                    if s.mask[c][day] == OBSERVED {
                        x.set(b, c, t, s.values[c][day]);
                        mask.set(b, c, t, 1.0);
                        observed[x.index(b, c, t)] = true;
                    }
                }
            }
        }
        Ok(Self { x, mask, observed })
    }

    pub fn from_sample(s: &TimeSeriesSample) -> Result<Self, VqError> {
        Self::from_windows(&[(s, 0..s.len())])
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub continuous: f64,
    pub binary: f64,
    pub commitment: f64,
    pub perplexity: f64,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub z_e: Tensor3,
    pub quant: QuantizeResult,
    pub output: Tensor3,
}

#[derive(Clone, Debug)]
pub struct VqModel {
    pub config: VqConfig,
    pub n_vars: usize,
    pub binary: Vec<bool>,
    pub enc_mask: Option<Sequential>,
    pub encoder: Sequential,
    pub codebook: Codebook,
    pub decoder: Sequential,
    pub dec_mask: Option<Sequential>,
    pub finetune: Option<Sequential>,
}

pub const CHECKPOINT_KIND: &str = "vq-model";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    config: VqConfig,
    n_vars: usize,
    binary: Vec<bool>,
    usage: Vec<u64>,
}

impl VqModel {
    /// `binary[f]` marks channels decoded as logits.
    pub fn new(config: VqConfig, binary: Vec<bool>, rng: &mut KernelRng) -> Result<Self, VqError> {
        config.validate()?;
        let f = binary.len();
        if f == 0 {
            return Err(VqError::InvalidConfig("no variables".into()));
        }
        let (v, d) = (config.variant, config.embedding_dim);
        let explicit = v != Variant::Implicit;
        let enc_mask = explicit.then(|| Sequential::from_specs("enc_mask", &mask_specs(f), rng));
        let encoder = Sequential::from_specs("encoder", &encoder_specs(v, f, d), rng);
        let decoder = Sequential::from_specs("decoder", &decoder_specs(v, f, d), rng);
        let (dec_mask, finetune) = if v == Variant::E2 {
            (
                Some(Sequential::from_specs("dec_mask", &mask_specs(f), rng)),
                Some(Sequential::from_specs("finetune", &finetune_specs(f), rng)),
            )
        } else {
            (None, None)
        };
        let mut codebook = Codebook::random(config.codebook_size, d, 1.0, rng);
        codebook.decay = config.decay;
        codebook.laplace_eps = config.laplace_eps;
        Ok(Self {
            config,
            n_vars: f,
            binary,
            enc_mask,
            encoder,
            codebook,
            decoder,
            dec_mask,
            finetune,
        })
    }

    fn check_batch(&self, batch: &Batch) -> Result<(), VqError> {
        let s = batch.x.shape();
        if s.channels != self.n_vars || batch.mask.shape() != s {
            return Err(VqError::Shape(format!(
                "model expects {} variables, batch is {s} with mask {}",
                self.n_vars,
                batch.mask.shape()
            )));
        }
        Ok(())
    }

    fn sequentials_mut(&mut self) -> Vec<&mut Sequential> {
        let mut v: Vec<&mut Sequential> = Vec::new();
        if let Some(m) = self.enc_mask.as_mut() {
            v.push(m);
        }
        v.push(&mut self.encoder);
        v.push(&mut self.decoder);
        if let Some(m) = self.dec_mask.as_mut() {
            v.push(m);
        }
        if let Some(m) = self.finetune.as_mut() {
            v.push(m);
        }
        v
    }

    fn sequentials(&self) -> Vec<&Sequential> {
        let mut v: Vec<&Sequential> = Vec::new();
        v.extend(self.enc_mask.as_ref());
        v.push(&self.encoder);
        v.push(&self.decoder);
        v.extend(self.dec_mask.as_ref());
        v.extend(self.finetune.as_ref());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.sequentials_mut().into_iter().flat_map(|s| s.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&Parameter> {
        self.sequentials().into_iter().flat_map(|s| s.params()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().filter(|p| p.trainable).map(|p| p.len()).sum()
    }

    /// Recorded encoder pass.
    pub fn encode(&mut self, batch: &Batch, mode: Mode, rng: &mut KernelRng) -> Result<Tensor3, VqError> {
        self.check_batch(batch)?;
        let input = match self.enc_mask.as_mut() {
            Some(m) => {
                let mh = m.forward(&batch.mask, mode, rng)?;
                Tensor3::concat_channels(&[&batch.x, &mh])?
            }
            None => batch.x.clone(),
        };
        Ok(self.encoder.forward(&input, mode, rng)?)
    }

    /// Read-only encoder pass in evaluation mode.
    pub fn encode_infer(&self, batch: &Batch) -> Result<Tensor3, VqError> {
        self.check_batch(batch)?;
        let input = match self.enc_mask.as_ref() {
            Some(m) => Tensor3::concat_channels(&[&batch.x, &m.infer(&batch.mask)?])?,
            None => batch.x.clone(),
        };
        Ok(self.encoder.infer(&input)?)
    }

    pub fn decode(&mut self, z_q: &Tensor3, mask: &Tensor3, mode: Mode, rng: &mut KernelRng) -> Result<Tensor3, VqError> {
        let y = self.decoder.forward(z_q, mode, rng)?;
        match (self.dec_mask.as_mut(), self.finetune.as_mut()) {
            (Some(m), Some(ft)) => {
                let mh = m.forward(mask, mode, rng)?;
                Ok(ft.forward(&Tensor3::concat_channels(&[&y, &mh])?, mode, rng)?)
            }
            _ => Ok(y),
        }
    }

    pub fn decode_infer(&self, z_q: &Tensor3, mask: &Tensor3) -> Result<Tensor3, VqError> {
        let y = self.decoder.infer(z_q)?;
        match (self.dec_mask.as_ref(), self.finetune.as_ref()) {
            (Some(m), Some(ft)) => Ok(ft.infer(&Tensor3::concat_channels(&[&y, &m.infer(mask)?])?)?),
            _ => Ok(y),
        }
    }

    pub fn forward(&mut self, batch: &Batch, mode: Mode, rng: &mut KernelRng) -> Result<ForwardOutput, VqError> {
        let z_e = self.encode(batch, mode, rng)?;
        let quant = self.codebook.quantize(&z_e)?;
        let output = self.decode(&quant.z_q, &batch.mask, mode, rng)?;
        Ok(ForwardOutput { z_e, quant, output })
    }

    pub fn infer(&self, batch: &Batch) -> Result<ForwardOutput, VqError> {
        let z_e = self.encode_infer(batch)?;
        let quant = self.codebook.quantize(&z_e)?;
        let output = self.decode_infer(&quant.z_q, &batch.mask)?;
        Ok(ForwardOutput { z_e, quant, output })
    }

    /// Reconstruction and commitment terms with `d loss / d output` and
    /// `d commitment / d z_e`.
    pub fn loss(&self, fwd: &ForwardOutput, batch: &Batch) -> Result<(LossBreakdown, Tensor3, Tensor3), VqError> {
        let s = fwd.output.shape();
        let n = s.numel();
        let (mut cont_idx, mut bin_idx) = (Vec::new(), Vec::new());
        for b in 0..s.batch {
            for c in 0..s.channels {
                for t in 0..s.len {
                    let i = fwd.output.index(b, c, t);
                    if self.binary[c] {
                        bin_idx.push(i);
                    } else {
                        cont_idx.push(i);
                    }
                }
            }
        }
        let gather = |src: &[f64], idx: &[usize]| idx.iter().map(|&i| src[i]).collect::<Vec<f64>>();
        let obs = |idx: &[usize]| idx.iter().map(|&i| batch.observed[i]).collect::<Vec<bool>>();
        let out = fwd.output.data();
        let tgt = batch.x.data();
        let mse = masked_mse(&gather(out, &cont_idx), &gather(tgt, &cont_idx), &obs(&cont_idx))?;
        let bce = weighted_bce_logits(&gather(out, &bin_idx), &gather(tgt, &bin_idx), &obs(&bin_idx))?;
        let mut g_out = Tensor3::zeros(s);
        {
            let g = g_out.data_mut();
            for (k, &i) in cont_idx.iter().enumerate() {
                g[i] = mse.grad[k];
            }
            for (k, &i) in bin_idx.iter().enumerate() {
                g[i] = bce.grad[k];
            }
        }
        debug_assert_eq!(cont_idx.len() + bin_idx.len(), n);
        let beta = self.config.beta;
        let ze = fwd.z_e.data();
        let zq = fwd.quant.z_q.data();
        let m = ze.len() as f64;
        let commit_sq: f64 = ze.iter().zip(zq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / m;
        let mut g_commit = Tensor3::zeros(fwd.z_e.shape());
        for (g, (a, b)) in g_commit.data_mut().iter_mut().zip(ze.iter().zip(zq)) {
            *g = beta * 2.0 * (a - b) / m;
        }
        let commitment = beta * commit_sq;
        let br = LossBreakdown {
            total: mse.value + bce.value + commitment,
            continuous: mse.value,
            binary: bce.value,
            commitment,
            perplexity: fwd.quant.perplexity,
        };
        Ok((br, g_out, g_commit))
    }

    /// Backpropagates from the output gradient through the decoder, copies
    /// the gradient across the quantizer unchanged, adds the commitment
    /// gradient and continues through the encoder. Returns `d / d z_q`.
    pub fn backward(&mut self, g_out: &Tensor3, g_commit: &Tensor3) -> Result<Tensor3, VqError> {
        let f = self.n_vars;
        let g_y = match (self.dec_mask.as_mut(), self.finetune.as_mut()) {
            (Some(m), Some(ft)) => {
                let g = ft.backward(g_out)?;
                let parts = g.split_channels(&[f, f])?;
                m.backward(&parts[1])?;
                parts[0].clone()
            }
            _ => g_out.clone(),
        };
        let g_zq = self.decoder.backward(&g_y)?;
        let mut g_ze = g_zq.clone();
        g_ze.add_assign(g_commit)?;
        let g_in = self.encoder.backward(&g_ze)?;
        if let Some(m) = self.enc_mask.as_mut() {
            let parts = g_in.split_channels(&[f, f])?;
            m.backward(&parts[1])?;
        }
        Ok(g_zq)
    }

    /// Forward, loss and backward in training mode; gradients are accumulated
    /// into the parameters and the codebook is left untouched.
    pub fn compute_gradients(&mut self, batch: &Batch, rng: &mut KernelRng) -> Result<(LossBreakdown, ForwardOutput), VqError> {
        let fwd = self.forward(batch, Mode::Train, rng)?;
        let (br, g_out, g_commit) = self.loss(&fwd, batch)?;
        self.backward(&g_out, &g_commit)?;
        Ok((br, fwd))
    }

    pub fn evaluate(&self, batch: &Batch) -> Result<LossBreakdown, VqError> {
        let fwd = self.infer(batch)?;
        Ok(self.loss(&fwd, batch)?.0)
    }

    pub fn to_checkpoint(&self, optimizer: Option<Adam>, extra: serde_json::Value) -> Result<Checkpoint, VqError> {
        let mut params: Vec<Parameter> = self.params().into_iter().cloned().collect();
        params.extend(self.codebook.to_parameters());
        let meta = ModelMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            n_vars: self.n_vars,
            binary: self.binary.clone(),
            usage: self.codebook.usage.clone(),
        };
        let mut metadata = serde_json::to_value(meta).map_err(|e| VqError::Checkpoint(e.to_string()))?;
        metadata["extra"] = extra;
        Ok(Checkpoint::new(params.iter(), optimizer, metadata))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, VqError> {
        let meta: ModelMeta =
            serde_json::from_value(ckpt.metadata.clone()).map_err(|e| VqError::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(VqError::Checkpoint(format!("checkpoint kind {:?} is not a VQ model", meta.kind)));
        }
        let mut rng = crate::seed::rng_for(0, "checkpoint-skeleton");
        let mut model = Self::new(meta.config, meta.binary, &mut rng)?;
        if model.n_vars != meta.n_vars {
            return Err(VqError::Checkpoint("variable count does not match binary flags".into()));
        }
        ckpt.restore_into(model.params_mut())?;
        model.codebook.load_parameters(&ckpt.params)?;
        if meta.usage.len() == model.codebook.k {
            model.codebook.usage = meta.usage;
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;

    fn model(v: Variant) -> VqModel {
        let cfg = VqConfig {
            variant: v,
            codebook_size: 16,
            ..VqConfig::default()
        };
        let mut binary = vec![false; 10];
        binary[8] = true;
        binary[9] = true;
        VqModel::new(cfg, binary, &mut rng_for(1, "arch-test")).unwrap()
    }

    fn batch(l: usize) -> Batch {
        let shape = Shape3::new(2, 10, l);
        let mut rng = rng_for(2, "arch-test");
        use rand::Rng;
        let mut x = Tensor3::zeros(shape);
        let mut mask = Tensor3::zeros(shape);
        let mut observed = vec![false; shape.numel()];
        for i in 0..shape.numel() {
            if rng.random::<f64>() < 0.7 {
                let c = (i / l) % 10;
                x.data_mut()[i] = if c >= 8 { f64::from(rng.random::<bool>()) } else { rng.random::<f64>() - 0.5 };
                mask.data_mut()[i] = 1.0;
                observed[i] = true;
            }
        }
        Batch { x, mask, observed }
    }

    #[test]
    fn shapes_follow_the_tables() {
        for v in Variant::all() {
            let mut m = model(v);
            let b = batch(12);
            let fwd = m.forward(&b, Mode::Train, &mut rng_for(3, "t")).unwrap();
            assert_eq!(fwd.z_e.shape(), Shape3::new(2, 80, 12));
            assert_eq!(fwd.output.shape(), Shape3::new(2, 10, 12));
            let n_blocks = m.encoder.layers().len() / 3;
            assert_eq!(n_blocks, if v == Variant::Implicit { 4 } else { 6 });
            assert_eq!(m.encoder.output_shape(Shape3::new(1, if v == Variant::Implicit { 10 } else { 20 }, 5)).unwrap().len, 5);
        }
    }

    #[test]
    fn last_blocks_are_identity() {
        let m = model(Variant::Implicit);
        assert_eq!(m.decoder.layers().last().unwrap().spec(), &LayerSpec::Identity);
        let e2 = model(Variant::E2);
        assert_eq!(e2.decoder.layers().last().unwrap().spec(), &LayerSpec::Relu);
        assert_eq!(e2.finetune.as_ref().unwrap().layers().last().unwrap().spec(), &LayerSpec::Identity);
    }

    #[test]
    fn wide_embedding_widens_final_encoder_block() {
        let cfg = VqConfig {
            embedding_dim: 320,
            codebook_size: 8,
            ..VqConfig::default()
        };
        let m = VqModel::new(cfg, vec![false; 10], &mut rng_for(1, "t")).unwrap();
        assert_eq!(m.encoder.output_shape(Shape3::new(1, 10, 4)).unwrap().channels, 320);
    }

    #[test]
    fn hidden_values_do_not_reach_loss_or_gradients() {
        for v in Variant::all() {
            let b = batch(9);
            let mut perturbed = b.clone();
            for (i, o) in b.observed.iter().enumerate() {
                if !o {
                    perturbed.x.data_mut()[i] = 0.0;
                }
            }
            let mut m1 = model(v);
            let mut m2 = m1.clone();
            let (l1, _) = m1.compute_gradients(&b, &mut rng_for(4, "t")).unwrap();
            let (l2, _) = m2.compute_gradients(&perturbed, &mut rng_for(4, "t")).unwrap();
            assert_eq!(l1.total.to_bits(), l2.total.to_bits());
            for (p, q) in m1.params().iter().zip(m2.params()) {
                assert_eq!(p.grad, q.grad);
            }
        }
    }

    #[test]
    fn straight_through_copies_decoder_gradient() {
        let cfg = VqConfig {
            beta: 0.0,
            codebook_size: 16,
            ..VqConfig::default()
        };
        let mut m = VqModel::new(cfg, vec![false; 10], &mut rng_for(1, "t")).unwrap();
        let b = batch(6);
        let fwd = m.forward(&b, Mode::Eval, &mut rng_for(5, "t")).unwrap();
        let (_, g_out, g_commit) = m.loss(&fwd, &b).unwrap();
        let mut dec = m.decoder.clone();
        dec.forward(&fwd.quant.z_q, Mode::Eval, &mut rng_for(5, "t")).unwrap();
        let g_dec = dec.backward(&g_out).unwrap();
        let g_zq = m.backward(&g_out, &g_commit).unwrap();
        assert_eq!(g_zq, g_dec);
        assert!(g_commit.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn beta_scales_commitment_linearly() {
        let b = batch(5);
        let mut m = model(Variant::Implicit);
        let fwd = m.forward(&b, Mode::Eval, &mut rng_for(6, "t")).unwrap();
        let (l1, _, _) = m.loss(&fwd, &b).unwrap();
        m.config.beta = 0.5;
        let (l2, _, _) = m.loss(&fwd, &b).unwrap();
        assert_eq!(l2.commitment, 2.0 * l1.commitment);
        m.config.beta = 0.0;
        let (l0, _, _) = m.loss(&fwd, &b).unwrap();
        assert_eq!(l0.total, l0.continuous + l0.binary);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_outputs() {
        let m = model(Variant::E2);
        let b = batch(7);
        let ck = m.to_checkpoint(None, serde_json::Value::Null).unwrap();
        let back = VqModel::from_checkpoint(&Checkpoint::from_json(&ck.to_json().unwrap()).unwrap()).unwrap();
        assert_eq!(m.infer(&b).unwrap().output, back.infer(&b).unwrap().output);
    }
}
