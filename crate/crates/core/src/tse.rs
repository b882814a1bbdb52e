//! Target sound extraction: encoder (free conv or GTFB) -> label gating ->
//! pitch concatenation -> dilated-causal-conv stack -> mask -> overlap-add
//! decoder.
//!
//! The pitch one-hot sequence is projected to `pitch_proj_dim` channels and
//! concatenated with the encoded mixture along the channel dimension before
//! the DCC stack; `pitch_proj_dim = 0` disables the pitch path entirely
//! (the ablation switch).

use crate::audio::AudioClip;
use crate::error::{CoreError, Result};
use crate::gtfb::{
    kernels_graph, register_gtfb_params, GammatoneParams, GtfbParamIds,
};
use crate::nn::{Adam, Gradients, Graph, ParamId, ParamStore, Var};
use crate::pitch::{one_hot, PitchGrid, PitchSequence};
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderType {
    Conv,
    GtfbFixed,
    GtfbLearnable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TseConfig {
    pub encoder_type: EncoderType,
    /// Encoder kernel length in samples.
    pub kernel_length: usize,
    /// Number of encoder filters (channel count of the masked representation).
    pub n_filters: usize,
    pub dcc_layers: usize,
    pub dcc_channels: usize,
    pub decoder_layers: usize,
    /// Label embedding width; must equal `n_filters` (the embedding gates the
    /// encoded features elementwise).
    pub label_embed_dim: usize,
    /// Projected pitch channel count; 0 disables pitch conditioning.
    pub pitch_proj_dim: usize,
    pub n_classes: usize,
    pub n_pitch_classes: usize,
    pub sample_rate: u32,
    /// GTFB initialization range.
    pub f_low: f64,
    pub f_high: f64,
    /// Pitch frame hop in samples (10 ms grid).
    pub pitch_hop_samples: usize,
}

impl Default for TseConfig {
    fn default() -> Self {
        TseConfig {
            encoder_type: EncoderType::GtfbLearnable,
            kernel_length: 32,
            n_filters: 256,
            dcc_layers: 10,
            dcc_channels: 256,
            decoder_layers: 1,
            label_embed_dim: 256,
            pitch_proj_dim: 64,
            n_classes: 27,
            n_pitch_classes: 357,
            sample_rate: 16_000,
            f_low: 50.0,
            f_high: 7800.0,
            pitch_hop_samples: 160,
        }
    }
}

impl TseConfig {
    pub fn stride(&self) -> usize {
        self.kernel_length / 2
    }

    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % 10)
    }

    /// DCC receptive field in encoder frames.
    pub fn receptive_field_frames(&self) -> usize {
        1 + 2 * (0..self.dcc_layers).map(|l| self.dilation(l)).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kernel_length == 8 || self.kernel_length == 32) {
            return Err(CoreError::invalid(format!(
                "kernel_length {} not in {{8, 32}}",
                self.kernel_length
            )));
        }
        if self.label_embed_dim != self.n_filters {
            return Err(CoreError::invalid(
                "label_embed_dim must equal n_filters (elementwise gate)",
            ));
        }
        let rf_ms = self.receptive_field_frames() as f64 * self.stride() as f64
            / self.sample_rate as f64
            * 1000.0;
        if rf_ms < 50.0 {
            return Err(CoreError::invalid(format!("DCC receptive field {rf_ms:.1} ms < 50 ms")));
        }
        if self.n_filters < 4 || self.dcc_channels < 4 || self.dcc_layers == 0 {
            return Err(CoreError::invalid("degenerate model sizes"));
        }
        Ok(())
    }
}

/// Hold a pitch one-hot matrix (`frames x classes`) at the encoder frame
/// rate: encoder frame `f` takes pitch frame `f * stride / pitch_hop`.
pub fn upsample_pitch_to_frames<S: Scalar>(
    pitch_onehot: &Array2<S>,
    enc_frames: usize,
    stride: usize,
    pitch_hop_samples: usize,
) -> Array2<S> {
    let p_frames = pitch_onehot.nrows();
    let classes = pitch_onehot.ncols();
    let mut out = Array2::zeros((classes, enc_frames));
    for f in 0..enc_frames {
        let p = ((f * stride) / pitch_hop_samples).min(p_frames.saturating_sub(1));
        for c in 0..classes {
            out[[c, f]] = pitch_onehot[[p, c]];
        }
    }
    out
}

/// Concatenate projected pitch channels onto encoded features (the spec's
/// channel-dimension concatenation), outside the tape. `proj` is
/// `pitch_proj_dim x classes`.
pub fn concat_pitch<S: Scalar>(
    features: &Array2<S>,
    pitch_onehot: &Array2<S>,
    proj: &Array2<S>,
    stride: usize,
    pitch_hop_samples: usize,
) -> Result<Array2<S>> {
    let enc_frames = features.ncols();
    let aligned = upsample_pitch_to_frames(pitch_onehot, enc_frames, stride, pitch_hop_samples);
    if aligned.ncols() != enc_frames {
        return Err(CoreError::invalid("pitch/encoder frame mismatch after alignment"));
    }
    let projected = proj.dot(&aligned);
    let mut out = Array2::zeros((features.nrows() + projected.nrows(), enc_frames));
    out.slice_mut(ndarray::s![..features.nrows(), ..]).assign(features);
    out.slice_mut(ndarray::s![features.nrows().., ..]).assign(&projected);
    Ok(out)
}

/// Overlap-add transposed strided convolution; linear in `masked_features`.
pub fn decode_to_waveform<S: Scalar>(
    masked_features: &Array2<S>,
    decoder_kernels: &Array2<S>,
    stride: usize,
) -> Vec<S> {
    let frames = masked_features.ncols();
    let l = decoder_kernels.ncols();
    let out_len = if frames == 0 { 0 } else { (frames - 1) * stride + l };
    let contrib = decoder_kernels.t().dot(masked_features); // L x F
    let mut out = vec![S::zero(); out_len];
    for f in 0..frames {
        for t in 0..l {
            out[f * stride + t] += contrib[[t, f]];
        }
    }
    out
}

enum EncoderParams {
    Conv { kernels: ParamId },
    Gtfb { ids: GtfbParamIds, order: u32 },
}

struct DccBlock {
    conv_w: ParamId,
    conv_b: ParamId,
    prelu: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// The extraction network: config plus parameter store.
pub struct TseNet<S: Scalar> {
    pub config: TseConfig,
    pub store: ParamStore<S>,
    encoder: EncoderParams,
    label_embed: ParamId,
    pitch_proj: Option<ParamId>,
    in_w: ParamId,
    in_b: ParamId,
    blocks: Vec<DccBlock>,
    mask_w: ParamId,
    mask_b: ParamId,
    dec_kernels: ParamId,
}

impl<S: Scalar> TseNet<S> {
    pub fn new(config: TseConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let k = config.n_filters;
        let l = config.kernel_length;
        let c = config.dcc_channels;

        let encoder = match config.encoder_type {
            EncoderType::Conv => EncoderParams::Conv {
                kernels: store.add_uniform("enc.kernels", k, l, l, rng),
            },
            EncoderType::GtfbFixed | EncoderType::GtfbLearnable => {
                let learnable = config.encoder_type == EncoderType::GtfbLearnable;
                let bank = GammatoneParams::bank(
                    k,
                    l,
                    config.sample_rate,
                    config.f_low,
                    config.f_high,
                    learnable,
                )?;
                EncoderParams::Gtfb {
                    ids: register_gtfb_params(&mut store, "enc.gtfb", &bank)?,
                    order: bank.order,
                }
            }
        };

        // near-unity gate so encoded features pass through at init
        let label_embed = store.add(
            "label_embed",
            Array2::from_shape_fn((config.n_classes, k), |_| {
                S::of_f64(1.0 + rng.gen_range(-0.1..0.1))
            }),
            true,
        );
        let pitch_proj = (config.pitch_proj_dim > 0).then(|| {
            store.add_uniform(
                "pitch_proj.w",
                config.pitch_proj_dim,
                config.n_pitch_classes,
                config.n_pitch_classes,
                rng,
            )
        });
        let in_w = store.add_uniform(
            "in_proj.w",
            c,
            k + config.pitch_proj_dim,
            k + config.pitch_proj_dim,
            rng,
        );
        let in_b = store.add("in_proj.b", Array2::zeros((c, 1)), true);
        let mut blocks = Vec::with_capacity(config.dcc_layers);
        for li in 0..config.dcc_layers {
            blocks.push(DccBlock {
                conv_w: store.add_uniform(format!("dcc{li}.conv.w"), c, c * 3, c * 3, rng),
                conv_b: store.add(format!("dcc{li}.conv.b"), Array2::zeros((c, 1)), true),
                prelu: store.add(
                    format!("dcc{li}.prelu"),
                    Array2::from_elem((c, 1), S::of_f64(0.25)),
                    true,
                ),
                out_w: store.add_uniform(format!("dcc{li}.out.w"), c, c, c, rng),
                out_b: store.add(format!("dcc{li}.out.b"), Array2::zeros((c, 1)), true),
            });
        }
        let mask_w = store.add_uniform("mask.w", k, c, c, rng);
        let mask_b = store.add("mask.b", Array2::zeros((k, 1)), true);
        let dec_kernels = store.add_uniform("dec.kernels", k, l, l, rng);
        Ok(TseNet {
            config,
            store,
            encoder,
            label_embed,
            pitch_proj,
            in_w,
            in_b,
            blocks,
            mask_w,
            mask_b,
            dec_kernels,
        })
    }

    pub fn from_store(config: TseConfig, store: ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            store
                .by_name(name)
                .ok_or_else(|| CoreError::ConfigMismatch(format!("missing parameter {name}")))
        };
        let encoder = match config.encoder_type {
            EncoderType::Conv => EncoderParams::Conv { kernels: find("enc.kernels")? },
            EncoderType::GtfbFixed | EncoderType::GtfbLearnable => EncoderParams::Gtfb {
                ids: GtfbParamIds {
                    fc_raw: find("enc.gtfb.fc_raw")?,
                    bw_raw: find("enc.gtfb.bw_raw")?,
                    amp: find("enc.gtfb.amp")?,
                    phase: find("enc.gtfb.phase")?,
                },
                order: 4,
            },
        };
        let pitch_proj = if config.pitch_proj_dim > 0 { Some(find("pitch_proj.w")?) } else { None };
        let mut blocks = Vec::new();
        for li in 0..config.dcc_layers {
            blocks.push(DccBlock {
                conv_w: find(&format!("dcc{li}.conv.w"))?,
                conv_b: find(&format!("dcc{li}.conv.b"))?,
                prelu: find(&format!("dcc{li}.prelu"))?,
                out_w: find(&format!("dcc{li}.out.w"))?,
                out_b: find(&format!("dcc{li}.out.b"))?,
            });
        }
        Ok(TseNet {
            label_embed: find("label_embed")?,
            in_w: find("in_proj.w")?,
            in_b: find("in_proj.b")?,
            mask_w: find("mask.w")?,
            mask_b: find("mask.b")?,
            dec_kernels: find("dec.kernels")?,
            encoder,
            pitch_proj,
            blocks,
            config,
            store,
        })
    }

    /// Parameter names that belong to the encoder group.
    pub fn encoder_param_names(&self) -> Vec<String> {
        self.store
            .ids()
            .map(|id| self.store.name(id).to_string())
            .filter(|n| n.starts_with("enc."))
            .collect()
    }

    fn encoder_kernels(&self, g: &mut Graph<S>) -> Var {
        match &self.encoder {
            EncoderParams::Conv { kernels } => self.store.bind(g, *kernels),
            EncoderParams::Gtfb { ids, order } => kernels_graph(
                g,
                &self.store,
                ids,
                *order,
                self.config.kernel_length,
                self.config.sample_rate,
            ),
        }
    }

    /// Natural-domain gammatone parameters, if this is a GTFB encoder.
    pub fn gtfb_bank(&self) -> Option<GammatoneParams> {
        let EncoderParams::Gtfb { ids, order } = &self.encoder else { return None };
        let mut g = Graph::new();
        let raw = self.store.bind(&mut g, ids.fc_raw);
        let fc = crate::gtfb::fc_from_raw(&mut g, raw, self.config.sample_rate);
        let bw_raw = self.store.bind(&mut g, ids.bw_raw);
        let bw = g.softplus(bw_raw);
        Some(GammatoneParams {
            fc: g.value(fc).iter().map(|v| v.as_f64()).collect(),
            bw_scale: g.value(bw).iter().map(|v| v.as_f64()).collect(),
            amp: self.store.get(ids.amp).iter().map(|v| v.as_f64()).collect(),
            phase: self.store.get(ids.phase).iter().map(|v| v.as_f64()).collect(),
            order: *order,
            length: self.config.kernel_length,
            sample_rate: self.config.sample_rate,
            learnable: self.config.encoder_type == EncoderType::GtfbLearnable,
        })
    }

    /// Build the estimate graph for one mixture. `pitch_onehot` is the
    /// `frames x classes` matrix at the 10 ms pitch rate.
    pub fn estimate_graph(
        &self,
        g: &mut Graph<S>,
        mixture: &[S],
        class_label: usize,
        pitch_onehot: &Array2<S>,
    ) -> Result<Var> {
        if class_label >= self.config.n_classes {
            return Err(CoreError::invalid(format!(
                "class {class_label} out of range (n_classes {})",
                self.config.n_classes
            )));
        }
        let n = mixture.len();
        let l = self.config.kernel_length;
        let stride = self.config.stride();
        if n < l {
            return Err(CoreError::invalid(format!("mixture of {n} samples shorter than {l}")));
        }
        // left-pad by L so the output aligns with input sample 0
        let mut padded = Array2::zeros((1, n + l));
        for (i, &s) in mixture.iter().enumerate() {
            padded[[0, i + l]] = s;
        }
        let wave = g.constant(padded);
        let enc_kernels = self.encoder_kernels(g);
        let encoded_pre = g.encode_strided(wave, enc_kernels, stride);
        let encoded = g.relu(encoded_pre);
        let enc_frames = g.value(encoded).ncols();

        let label_embed = self.store.bind(g, self.label_embed);
        let gate = g.select_row(label_embed, class_label);
        let gated = g.mul_col(encoded, gate);

        let mixed = if let Some(proj_id) = self.pitch_proj {
            let aligned = upsample_pitch_to_frames(
                pitch_onehot,
                enc_frames,
                stride,
                self.config.pitch_hop_samples,
            );
            let aligned = g.constant(aligned);
            let proj = self.store.bind(g, proj_id);
            let pitch_feat = g.matmul(proj, aligned);
            g.concat_rows(gated, pitch_feat)
        } else {
            gated
        };

        let in_w = self.store.bind(g, self.in_w);
        let in_b = self.store.bind(g, self.in_b);
        let proj = g.matmul(in_w, mixed);
        let mut h = g.add_col(proj, in_b);
        for (li, block) in self.blocks.iter().enumerate() {
            let conv_w = self.store.bind(g, block.conv_w);
            let conv_b = self.store.bind(g, block.conv_b);
            let y = g.conv1d(h, conv_w, conv_b, 3, self.config.dilation(li));
            let alpha = self.store.bind(g, block.prelu);
            let y = g.prelu(y, alpha);
            let out_w = self.store.bind(g, block.out_w);
            let out_b = self.store.bind(g, block.out_b);
            let y = g.matmul(out_w, y);
            let y = g.add_col(y, out_b);
            h = g.add(h, y);
        }
        let mask_w = self.store.bind(g, self.mask_w);
        let mask_b = self.store.bind(g, self.mask_b);
        let mask_logits = g.matmul(mask_w, h);
        let mask_logits = g.add_col(mask_logits, mask_b);
        let mask = g.sigmoid(mask_logits);
        let masked = g.mul(encoded, mask);

        let dec_kernels = self.store.bind(g, self.dec_kernels);
        let full = g.decode_strided(masked, dec_kernels, stride, n + l);
        Ok(g.crop_cols(full, l, n))
    }

    /// Inference: extract the target estimate from a mixture.
    pub fn forward(
        &self,
        mixture: &AudioClip<S>,
        class_label: usize,
        pitch: &PitchSequence,
        grid: &PitchGrid,
    ) -> Result<AudioClip<S>> {
        let onehot = one_hot(pitch, grid)?.mapv(|v| S::of_f64(v));
        let mut g = Graph::new();
        let est = self.estimate_graph(&mut g, &mixture.samples, class_label, &onehot)?;
        let samples = g.value(est).row(0).to_vec();
        AudioClip::new(samples, mixture.sample_rate)
    }

    /// One training example: combined loss on the tape plus gradients.
    pub fn step(
        &self,
        mixture: &[S],
        target: &[S],
        class_label: usize,
        pitch_onehot: &Array2<S>,
        w_snr: f64,
        w_si_snr: f64,
    ) -> Result<(f64, Gradients<S>)> {
        let mut g = Graph::new();
        let est = self.estimate_graph(&mut g, mixture, class_label, pitch_onehot)?;
        let loss = combined_loss_graph(&mut g, est, target, w_snr, w_si_snr)?;
        let value = g.scalar_value(loss);
        let grads = g.backward(loss, self.store.len());
        Ok((value, grads))
    }

    pub fn apply_step(&mut self, adam: &mut Adam<S>, grads: &Gradients<S>) {
        adam.step(&mut self.store, grads);
    }
}

/// Smooth (uncapped) weighted negative SNR / SI-SNR objective on the tape.
/// Stabilized with an epsilon inside every logarithm.
pub fn combined_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    est: Var,
    reference: &[S],
    w_snr: f64,
    w_si_snr: f64,
) -> Result<Var> {
    crate::metrics::check_loss_weights(w_snr, w_si_snr)?;
    let n = reference.len();
    if g.value(est).dim() != (1, n) {
        return Err(CoreError::invalid("estimate/reference length mismatch"));
    }
    const EPS: f64 = 1e-8;
    const DB: f64 = 10.0 / std::f64::consts::LN_10;
    let ref_row = Array2::from_shape_vec((1, n), reference.to_vec())
        .map_err(|e| CoreError::invalid(e.to_string()))?;
    let ref_energy: f64 = reference.iter().map(|&x| x.as_f64().powi(2)).sum();
    if ref_energy <= 0.0 {
        return Err(CoreError::invalid("reference has zero energy"));
    }

    // SNR term: 10 log10(E_ref / (||ref - est||^2 + eps))
    let ref_const = g.constant(ref_row.clone());
    let diff = g.sub(est, ref_const);
    let sq = g.mul(diff, diff);
    let res = g.sum_all(sq);
    let ln_res = g.ln_eps(res, EPS);
    let neg = g.neg(ln_res);
    let shifted = g.add_scalar(neg, (ref_energy + EPS).ln());
    let snr = g.scale(shifted, DB);

    // SI-SNR term on mean-removed signals
    let mean = reference.iter().map(|&x| x.as_f64()).sum::<f64>() / n as f64;
    let zm_ref = ref_row.mapv(|x| x - S::of_f64(mean));
    let zm_ref_energy: f64 = zm_ref.iter().map(|&x| x.as_f64().powi(2)).sum();
    let zm_ref_const = g.constant(zm_ref);
    let zm_est = g.mean_sub(est);
    let prod = g.mul(zm_est, zm_ref_const);
    let dot = g.sum_all(prod);
    let alpha = g.scale(dot, 1.0 / (zm_ref_energy + EPS));
    let projection = g.mul_scalar_var(zm_ref_const, alpha);
    let err = g.sub(zm_est, projection);
    let proj_sq = g.mul(projection, projection);
    let err_sq = g.mul(err, err);
    let e_proj = g.sum_all(proj_sq);
    let e_err = g.sum_all(err_sq);
    let ln_p = g.ln_eps(e_proj, EPS);
    let ln_e = g.ln_eps(e_err, EPS);
    let ratio = g.sub(ln_p, ln_e);
    let si_snr = g.scale(ratio, DB);

    let ws = g.scale(snr, w_snr);
    let wsi = g.scale(si_snr, w_si_snr);
    let total = g.add(ws, wsi);
    Ok(g.neg(total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient_check;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn desk_config(encoder_type: EncoderType, pitch_proj_dim: usize) -> TseConfig {
        TseConfig {
            encoder_type,
            kernel_length: 32,
            n_filters: 16,
            dcc_layers: 5,
            dcc_channels: 12,
            label_embed_dim: 16,
            pitch_proj_dim,
            ..Default::default()
        }
    }

    fn onehot_const(frames: usize) -> Array2<f64> {
        let mut m = Array2::zeros((frames, 357));
        for f in 0..frames {
            m[[f, 100 + (f % 3)]] = 1.0;
        }
        m
    }

    #[test]
    fn output_length_matches_input_for_arbitrary_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = TseNet::<f64>::new(desk_config(EncoderType::Conv, 8), &mut rng).unwrap();
        for n in [32usize, 100, 1000, 1234, 4001] {
            let mix: Vec<f64> = (0..n).map(|i| ((i * 37) % 17) as f64 / 17.0 - 0.5).collect();
            let mut g = Graph::new();
            let est = net
                .estimate_graph(&mut g, &mix, 3, &onehot_const(n / 160 + 1))
                .unwrap();
            assert_eq!(g.value(est).dim(), (1, n), "length {n}");
        }
    }

    #[test]
    fn pitch_upsampling_repeats_each_frame_ten_times() {
        // 10 ms pitch hop (160 samples) vs 16-sample encoder stride
        let pitch = onehot_const(40);
        let up = upsample_pitch_to_frames(&pitch, 400, 16, 160);
        assert_eq!(up.dim(), (357, 400));
        for f in 0..400 {
            let expect = f * 16 / 160;
            for c in 0..357 {
                assert_eq!(up[[c, f]], pitch[[expect.min(39), c]]);
            }
        }
    }

    #[test]
    fn all_unvoiced_pitch_projects_to_constant_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let proj = Array2::from_shape_fn((6, 357), |_| rng.gen_range(-1.0..1.0));
        let grid = PitchGrid::default();
        let seq = PitchSequence::new(vec![grid.unvoiced_index(); 20], 0.01).unwrap();
        let oh = one_hot(&seq, &grid).unwrap();
        let features = Array2::<f64>::zeros((4, 200));
        let out = concat_pitch(&features, &oh, &proj, 16, 160).unwrap();
        assert_eq!(out.nrows(), 10);
        // pitch rows constant across frames
        for r in 4..10 {
            let first = out[[r, 0]];
            for f in 0..200 {
                assert_eq!(out[[r, f]], first);
            }
        }
    }

    #[test]
    fn zero_pitch_proj_dim_degenerates_to_pitch_free_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = TseNet::<f64>::new(desk_config(EncoderType::Conv, 0), &mut rng).unwrap();
        assert!(net.store.by_name("pitch_proj.w").is_none());
        let mix: Vec<f64> = (0..640).map(|i| (i as f64 * 0.01).sin()).collect();
        // two different pitch inputs give identical output
        let mut g1 = Graph::new();
        let e1 = net.estimate_graph(&mut g1, &mix, 0, &onehot_const(5)).unwrap();
        let mut other = Array2::zeros((5, 357));
        for f in 0..5 {
            other[[f, 9]] = 1.0;
        }
        let mut g2 = Graph::new();
        let e2 = net.estimate_graph(&mut g2, &mix, 0, &other).unwrap();
        assert_eq!(g1.value(e1), g2.value(e2));
    }

    #[test]
    fn decoder_is_linear_and_zero_maps_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kern = Array2::from_shape_fn((3, 8), |_| rng.gen_range(-1.0..1.0));
        let feat = Array2::from_shape_fn((3, 5), |_| rng.gen_range(-1.0..1.0));
        let zero = Array2::<f64>::zeros((3, 5));
        assert!(decode_to_waveform(&zero, &kern, 4).iter().all(|&v| v == 0.0));
        let y = decode_to_waveform(&feat, &kern, 4);
        let y2 = decode_to_waveform(&feat.mapv(|v| 2.5 * v), &kern, 4);
        assert_eq!(y.len(), 4 * 4 + 8);
        for (a, b) in y.iter().zip(&y2) {
            assert!((2.5 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn every_parameter_group_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = TseNet::<f64>::new(desk_config(EncoderType::GtfbLearnable, 8), &mut rng).unwrap();
        let n = 800;
        let mix: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let (_, grads) = net
            .step(&mix, &target, 2, &onehot_const(n / 160 + 1), 0.9, 0.1)
            .unwrap();
        for id in net.store.ids() {
            let name = net.store.name(id);
            if name == "label_embed" || name.starts_with("enc.gtfb") {
                // gradient flows to the selected row / all four gtfb vectors
                let g = grads.get(id).unwrap_or_else(|| panic!("no grad for {name}"));
                assert!(g.iter().any(|&v| v != 0.0), "all-zero grad for {name}");
            } else {
                let g = grads.get(id).unwrap_or_else(|| panic!("no grad for {name}"));
                assert!(g.iter().any(|&v| v != 0.0), "all-zero grad for {name}");
            }
        }
    }

    #[test]
    fn combined_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = crate::nn::ParamStore::<f64>::new();
        let est = store.add(
            "est",
            Array2::from_shape_fn((1, 64), |_| rng.gen_range(-1.0..1.0)),
            true,
        );
        let reference: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = gradient_check(&mut store, est, 1e-5, |store| {
            let mut g = Graph::new();
            let ev = store.bind(&mut g, est);
            let loss = combined_loss_graph(&mut g, ev, &reference, 0.9, 0.1).unwrap();
            (g, loss)
        });
        assert!(err < 1e-3, "combined loss grad err {err}");
    }

    #[test]
    fn combined_loss_agrees_with_reporting_metrics_away_from_caps() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let reference: Vec<f64> = (0..256).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let est: Vec<f64> = reference.iter().map(|&r| r + rng.gen_range(-0.3..0.3)).collect();
        let mut g = Graph::new();
        let ev = g.constant(Array2::from_shape_vec((1, 256), est.clone()).unwrap());
        let loss = combined_loss_graph(&mut g, ev, &reference, 0.9, 0.1).unwrap();
        let smooth = g.scalar_value(loss);
        let ec = crate::audio::AudioClip::new(est, 16_000).unwrap();
        let rc = crate::audio::AudioClip::new(reference, 16_000).unwrap();
        let reported = crate::metrics::combined_loss(&ec, &rc, 0.9, 0.1).unwrap();
        assert!((smooth - reported).abs() < 1e-6, "{smooth} vs {reported}");
    }

    #[test]
    fn causal_prefix_unchanged_by_future_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let net = TseNet::<f64>::new(desk_config(EncoderType::Conv, 4), &mut rng).unwrap();
        let n = 2000;
        let mix: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let oh = onehot_const(n / 160 + 1);
        let mut g1 = Graph::new();
        let e1 = net.estimate_graph(&mut g1, &mix, 1, &oh).unwrap();
        let t = 1200;
        let mut mix2 = mix.clone();
        for sample in mix2.iter_mut().skip(t) {
            *sample += 0.7;
        }
        let mut g2 = Graph::new();
        let e2 = net.estimate_graph(&mut g2, &mix2, 1, &oh).unwrap();
        let y1 = g1.value(e1);
        let y2 = g2.value(e2);
        let margin = net.config.stride();
        for i in 0..t - margin {
            assert_eq!(y1[[0, i]], y2[[0, i]], "sample {i} changed");
        }
        let changed = (t..n).any(|i| y1[[0, i]] != y2[[0, i]]);
        assert!(changed, "future samples should change");
    }

    #[test]
    fn non_encoder_parameter_shapes_invariant_across_encoder_types() {
        let mut shapes: Vec<Vec<(String, (usize, usize))>> = Vec::new();
        for et in [EncoderType::Conv, EncoderType::GtfbFixed, EncoderType::GtfbLearnable] {
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let net = TseNet::<f64>::new(desk_config(et, 8), &mut rng).unwrap();
            let mut rows: Vec<(String, (usize, usize))> = net
                .store
                .ids()
                .filter(|&id| !net.store.name(id).starts_with("enc."))
                .map(|id| (net.store.name(id).to_string(), net.store.get(id).dim()))
                .collect();
            rows.sort();
            shapes.push(rows);
        }
        assert_eq!(shapes[0], shapes[1]);
        assert_eq!(shapes[1], shapes[2]);
    }

    #[test]
    fn fixed_gtfb_parameters_bit_stable_under_training() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut net = TseNet::<f64>::new(desk_config(EncoderType::GtfbFixed, 4), &mut rng).unwrap();
        let frozen: Vec<(String, Array2<f64>)> = net
            .store
            .ids()
            .filter(|&id| net.store.name(id).starts_with("enc.gtfb"))
            .map(|id| (net.store.name(id).to_string(), net.store.get(id).clone()))
            .collect();
        let n = 640;
        let mix: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let target: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut adam = Adam::new(crate::nn::AdamConfig { lr: 1e-3, ..Default::default() });
        let oh = onehot_const(n / 160 + 1);
        for _ in 0..20 {
            let (_, grads) = net.step(&mix, &target, 0, &oh, 0.9, 0.1).unwrap();
            net.apply_step(&mut adam, &grads);
        }
        for (name, before) in &frozen {
            let id = net.store.by_name(name).unwrap();
            assert_eq!(net.store.get(id), before, "{name} drifted");
        }
        // a learnable net trained the same way moves its gtfb parameters
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut net2 =
            TseNet::<f64>::new(desk_config(EncoderType::GtfbLearnable, 4), &mut rng).unwrap();
        let before: Array2<f64> = net2.store.get(net2.store.by_name("enc.gtfb.fc_raw").unwrap()).clone();
        let mut adam2 = Adam::new(crate::nn::AdamConfig { lr: 1e-3, ..Default::default() });
        for _ in 0..20 {
            let (_, grads) = net2.step(&mix, &target, 0, &oh, 0.9, 0.1).unwrap();
            net2.apply_step(&mut adam2, &grads);
        }
        let after = net2.store.get(net2.store.by_name("enc.gtfb.fc_raw").unwrap());
        assert_ne!(&before, after);
    }

    #[test]
    fn autoencoder_round_trip_learns_reasonable_reconstruction() {
        // encoder -> identity mask -> decoder, jointly fit on white noise
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 4000;
        let wave: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let mut store = crate::nn::ParamStore::<f64>::new();
        let enc = store.add_uniform("enc", 24, 16, 16, &mut rng);
        let dec = store.add_uniform("dec", 24, 16, 16, &mut rng);
        let mut adam = Adam::new(crate::nn::AdamConfig { lr: 3e-3, ..Default::default() });
        let target = wave.clone();
        for _ in 0..200 {
            let mut g = Graph::new();
            let mut padded = Array2::zeros((1, n + 16));
            for (i, &s) in wave.iter().enumerate() {
                padded[[0, i + 16]] = s;
            }
            let wv = g.constant(padded);
            let ek = store.bind(&mut g, enc);
            let dk = store.bind(&mut g, dec);
            let feat = g.encode_strided(wv, ek, 8);
            let feat = g.relu(feat);
            let full = g.decode_strided(feat, dk, 8, n + 16);
            let est = g.crop_cols(full, 16, n);
            let ref_const =
                g.constant(Array2::from_shape_vec((1, n), target.clone()).unwrap());
            let diff = g.sub(est, ref_const);
            let sq = g.mul(diff, diff);
            let loss = g.mean_all(sq);
            let grads = g.backward(loss, store.len());
            adam.step(&mut store, &grads);
        }
        // measure reconstruction SI-SNR
        let mut g = Graph::new();
        let mut padded = Array2::zeros((1, n + 16));
        for (i, &s) in wave.iter().enumerate() {
            padded[[0, i + 16]] = s;
        }
        let wv = g.constant(padded);
        let ek = store.bind(&mut g, enc);
        let dk = store.bind(&mut g, dec);
        let feat = g.encode_strided(wv, ek, 8);
        let feat = g.relu(feat);
        let full = g.decode_strided(feat, dk, 8, n + 16);
        let est = g.crop_cols(full, 16, n);
        let est_clip =
            crate::audio::AudioClip::new(g.value(est).row(0).to_vec(), 16_000).unwrap();
        let ref_clip = crate::audio::AudioClip::new(target, 16_000).unwrap();
        let si = crate::metrics::si_snr_db(&est_clip, &ref_clip).unwrap();
        assert!(si > -10.0, "reconstruction SI-SNR {si} dB");
    }

    #[test]
    fn inference_deterministic_and_seeded_init_reproducible() {
        let cfg = desk_config(EncoderType::GtfbLearnable, 8);
        let mut r1 = ChaCha8Rng::seed_from_u64(23);
        let mut r2 = ChaCha8Rng::seed_from_u64(23);
        let a = TseNet::<f64>::new(cfg.clone(), &mut r1).unwrap();
        let b = TseNet::<f64>::new(cfg, &mut r2).unwrap();
        for (ia, ib) in a.store.ids().zip(b.store.ids()) {
            assert_eq!(a.store.get(ia), b.store.get(ib));
        }
        let mix: Vec<f64> = (0..640).map(|i| (i as f64 * 0.013).sin() * 0.3).collect();
        let oh = onehot_const(5);
        let mut g1 = Graph::new();
        let e1 = a.estimate_graph(&mut g1, &mix, 1, &oh).unwrap();
        let mut g2 = Graph::new();
        let e2 = b.estimate_graph(&mut g2, &mix, 1, &oh).unwrap();
        assert_eq!(g1.value(e1), g2.value(e2));
    }
}
