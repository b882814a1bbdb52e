//! Class-conditional pitch extraction: a dilated temporal convolutional
//! network over the log-magnitude spectrogram whose every convolutional
//! layer is FiLM-modulated by the target-class embedding.
//!
//! Block layout: dilated conv (kernel 3, dilation `2^(l mod 8)`) -> FiLM ->
//! PReLU -> 1x1 conv, with a residual add. The head maps per-frame features
//! to `n_bins + 1` logits (voiced bins plus the unvoiced class).

use crate::audio::Spectrogram;
use crate::error::{CoreError, Result};
use crate::nn::{Adam, Gradients, Graph, ParamId, ParamStore, Var};
use crate::pitch::PitchSequence;
use crate::scalar::Scalar;
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchNetConfig {
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub n_input_bins: usize,
    pub n_output_classes: usize,
    /// STFT frame hop in seconds (for receptive-field accounting).
    pub frame_hop_seconds: f64,
}

impl Default for PitchNetConfig {
    fn default() -> Self {
        PitchNetConfig {
            depth: 9,
            channels: 64,
            kernel: 3,
            embed_dim: 64,
            n_classes: 27,
            n_input_bins: 513,
            n_output_classes: 357,
            frame_hop_seconds: 0.01,
        }
    }
}

impl PitchNetConfig {
    pub fn dilation(&self, layer: usize) -> usize {
        1 << (layer % 8)
    }

    /// Receptive field in frames: `1 + (k-1) * sum(dilations)`.
    pub fn receptive_field_frames(&self) -> usize {
        1 + (self.kernel - 1) * (0..self.depth).map(|l| self.dilation(l)).sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if !(4..=10).contains(&self.depth) {
            return Err(CoreError::invalid(format!("depth {} outside 4..=10", self.depth)));
        }
        let rf_ms = self.receptive_field_frames() as f64 * self.frame_hop_seconds * 1000.0;
        if rf_ms < 100.0 {
            return Err(CoreError::invalid(format!("receptive field {rf_ms:.1} ms < 100 ms")));
        }
        if self.channels == 0 || self.embed_dim == 0 || self.kernel < 2 {
            return Err(CoreError::invalid("degenerate layer sizes"));
        }
        Ok(())
    }
}

/// Frame-wise class posterior: `n_frames x (n_bins + 1)`, rows normalized.
#[derive(Debug, Clone)]
pub struct PitchPosterior<S: Scalar> {
    pub probs: Array2<S>,
}

impl<S: Scalar> PitchPosterior<S> {
    pub fn n_frames(&self) -> usize {
        self.probs.nrows()
    }

    /// Argmax decode with an unvoiced fallback: a frame is unvoiced when the
    /// argmax is the unvoiced class or the winning probability is below the
    /// threshold.
    pub fn decode(&self, unvoiced_threshold: f64, hop: f64) -> PitchSequence {
        let unvoiced = self.probs.ncols() - 1;
        let bins = self
            .probs
            .rows()
            .into_iter()
            .map(|row| {
                let (argmax, &p) = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap();
                if argmax == unvoiced || p.as_f64() < unvoiced_threshold {
                    unvoiced
                } else {
                    argmax
                }
            })
            .collect();
        PitchSequence { bins, hop }
    }
}

/// Mean negative log-probability of the reference bin per frame.
pub fn pitch_ce_loss<S: Scalar>(
    posterior: &PitchPosterior<S>,
    reference: &PitchSequence,
) -> Result<f64> {
    if posterior.n_frames() != reference.len() {
        return Err(CoreError::invalid(format!(
            "frame mismatch: posterior {} vs reference {}",
            posterior.n_frames(),
            reference.len()
        )));
    }
    let mut acc = 0.0;
    for (row, &bin) in posterior.probs.rows().into_iter().zip(&reference.bins) {
        if bin >= row.len() {
            return Err(CoreError::invalid(format!("reference bin {bin} out of range")));
        }
        acc -= row[bin].as_f64().max(1e-300).ln();
    }
    Ok(acc / reference.len() as f64)
}

/// Per-channel affine modulation: `out[c, t] = gamma[c] * x[c, t] + beta[c]`.
pub fn film_modulate<S: Scalar>(
    features: &Array2<S>,
    gamma: &[S],
    beta: &[S],
) -> Result<Array2<S>> {
    if gamma.len() != features.nrows() || beta.len() != features.nrows() {
        return Err(CoreError::invalid(format!(
            "FiLM shape mismatch: {} channels vs gamma {} / beta {}",
            features.nrows(),
            gamma.len(),
            beta.len()
        )));
    }
    let mut out = features.clone();
    for (r, mut row) in out.rows_mut().into_iter().enumerate() {
        row.mapv_inplace(|x| gamma[r] * x + beta[r]);
    }
    Ok(out)
}

/// Log-compressed model input: `ln(1 + magnitude)`, transposed to
/// `bins x frames`.
pub fn log_magnitude_input<S: Scalar>(spec: &Spectrogram<S>) -> Array2<S> {
    let mut out = Array2::zeros((spec.n_bins(), spec.n_frames()));
    for f in 0..spec.n_frames() {
        for b in 0..spec.n_bins() {
            out[[b, f]] = (S::one() + spec.frames[[f, b]]).ln();
        }
    }
    out
}

struct Block {
    conv_w: ParamId,
    conv_b: ParamId,
    gamma_w: ParamId,
    gamma_b: ParamId,
    beta_w: ParamId,
    beta_b: ParamId,
    prelu: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

/// The FiLM-TCN model: config plus parameter store.
pub struct PitchNet<S: Scalar> {
    pub config: PitchNetConfig,
    pub store: ParamStore<S>,
    embed: ParamId,
    in_w: ParamId,
    in_b: ParamId,
    blocks: Vec<Block>,
    head_w: ParamId,
    head_b: ParamId,
}

impl<S: Scalar> PitchNet<S> {
    pub fn new(config: PitchNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let c = config.channels;
        let e = config.embed_dim;
        let embed = store.add(
            "embed",
            Array2::from_shape_fn((config.n_classes, e), |_| S::of_f64(rng.gen_range(-1.0..1.0))),
            true,
        );
        let in_w = store.add_uniform("in_proj.w", c, config.n_input_bins, config.n_input_bins, rng);
        let in_b = store.add("in_proj.b", Array2::zeros((c, 1)), true);
        let mut blocks = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            // FiLM generator weights start near zero so training begins at
            // (approximately) the unconditional identity, while staying
            // label-sensitive enough to break symmetry.
            let film_scale = 1e-3;
            let film_init = |rng: &mut ChaCha8Rng| {
                Array2::from_shape_fn((c, e), |_| S::of_f64(rng.gen_range(-film_scale..film_scale)))
            };
            blocks.push(Block {
                conv_w: store.add_uniform(
                    format!("block{l}.conv.w"),
                    c,
                    c * config.kernel,
                    c * config.kernel,
                    rng,
                ),
                conv_b: store.add(format!("block{l}.conv.b"), Array2::zeros((c, 1)), true),
                gamma_w: store.add(format!("block{l}.film.gamma.w"), film_init(rng), true),
                gamma_b: store.add(
                    format!("block{l}.film.gamma.b"),
                    Array2::from_elem((c, 1), S::one()),
                    true,
                ),
                beta_w: store.add(format!("block{l}.film.beta.w"), film_init(rng), true),
                beta_b: store.add(format!("block{l}.film.beta.b"), Array2::zeros((c, 1)), true),
                prelu: store.add(
                    format!("block{l}.prelu"),
                    Array2::from_elem((c, 1), S::of_f64(0.25)),
                    true,
                ),
                out_w: store.add_uniform(format!("block{l}.out.w"), c, c, c, rng),
                out_b: store.add(format!("block{l}.out.b"), Array2::zeros((c, 1)), true),
            });
        }
        let head_w = store.add_uniform("head.w", config.n_output_classes, c, c, rng);
        let head_b = store.add("head.b", Array2::zeros((config.n_output_classes, 1)), true);
        Ok(PitchNet { config, store, embed, in_w, in_b, blocks, head_w, head_b })
    }

    /// Rebuild from a loaded parameter store (checkpoint path).
    pub fn from_store(config: PitchNetConfig, store: ParamStore<S>) -> Result<Self> {
        config.validate()?;
        let find = |name: &str| {
            store
                .by_name(name)
                .ok_or_else(|| CoreError::ConfigMismatch(format!("missing parameter {name}")))
        };
        let embed = find("embed")?;
        let in_w = find("in_proj.w")?;
        let in_b = find("in_proj.b")?;
        let mut blocks = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            blocks.push(Block {
                conv_w: find(&format!("block{l}.conv.w"))?,
                conv_b: find(&format!("block{l}.conv.b"))?,
                gamma_w: find(&format!("block{l}.film.gamma.w"))?,
                gamma_b: find(&format!("block{l}.film.gamma.b"))?,
                beta_w: find(&format!("block{l}.film.beta.w"))?,
                beta_b: find(&format!("block{l}.film.beta.b"))?,
                prelu: find(&format!("block{l}.prelu"))?,
                out_w: find(&format!("block{l}.out.w"))?,
                out_b: find(&format!("block{l}.out.b"))?,
            });
        }
        let head_w = find("head.w")?;
        let head_b = find("head.b")?;
        Ok(PitchNet { config, store, embed, in_w, in_b, blocks, head_w, head_b })
    }

    /// Force the conditioning path to the exact identity (gamma = 1,
    /// beta = 0 for every class).
    pub fn set_film_identity(&mut self) {
        for l in 0..self.blocks.len() {
            let (c, e) = (self.config.channels, self.config.embed_dim);
            self.store.set(self.blocks[l].gamma_w, Array2::zeros((c, e)));
            self.store.set(self.blocks[l].gamma_b, Array2::from_elem((c, 1), S::one()));
            self.store.set(self.blocks[l].beta_w, Array2::zeros((c, e)));
            self.store.set(self.blocks[l].beta_b, Array2::zeros((c, 1)));
        }
    }

    /// Build the logits graph for one input (`bins x frames`).
    pub fn logits_graph(&self, g: &mut Graph<S>, input: Var, class_label: usize) -> Result<Var> {
        if class_label >= self.config.n_classes {
            return Err(CoreError::invalid(format!(
                "class {class_label} out of range (n_classes {})",
                self.config.n_classes
            )));
        }
        let embed = self.store.bind(g, self.embed);
        let class_vec = g.select_row(embed, class_label);

        let in_w = self.store.bind(g, self.in_w);
        let in_b = self.store.bind(g, self.in_b);
        let proj = g.matmul(in_w, input);
        let mut h = g.add_col(proj, in_b);

        for (l, block) in self.blocks.iter().enumerate() {
            let conv_w = self.store.bind(g, block.conv_w);
            let conv_b = self.store.bind(g, block.conv_b);
            let y = g.conv1d(h, conv_w, conv_b, self.config.kernel, self.config.dilation(l));

            let gamma_w = self.store.bind(g, block.gamma_w);
            let gamma_b = self.store.bind(g, block.gamma_b);
            let gw = g.matmul(gamma_w, class_vec);
            let gamma = g.add(gw, gamma_b);
            let beta_w = self.store.bind(g, block.beta_w);
            let beta_b = self.store.bind(g, block.beta_b);
            let bw = g.matmul(beta_w, class_vec);
            let beta = g.add(bw, beta_b);
            let y = g.mul_col(y, gamma);
            let y = g.add_col(y, beta);

            let alpha = self.store.bind(g, block.prelu);
            let y = g.prelu(y, alpha);
            let out_w = self.store.bind(g, block.out_w);
            let out_b = self.store.bind(g, block.out_b);
            let y = g.matmul(out_w, y);
            let y = g.add_col(y, out_b);
            h = g.add(h, y);
        }

        let head_w = self.store.bind(g, self.head_w);
        let head_b = self.store.bind(g, self.head_b);
        let logits = g.matmul(head_w, h);
        Ok(g.add_col(logits, head_b))
    }

    /// Inference: normalized posterior for one spectrogram input.
    pub fn forward(&self, input: &Array2<S>, class_label: usize) -> Result<PitchPosterior<S>> {
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let logits = self.logits_graph(&mut g, x, class_label)?;
        let lv = g.value(logits);
        let frames = lv.ncols();
        let classes = lv.nrows();
        let mut probs = Array2::zeros((frames, classes));
        for t in 0..frames {
            let col = lv.column(t);
            let max = col.iter().cloned().fold(S::neg_infinity(), S::max);
            let denom: S = col.iter().map(|&v| (v - max).exp()).sum();
            for c in 0..classes {
                probs[[t, c]] = (lv[[c, t]] - max).exp() / denom;
            }
        }
        Ok(PitchPosterior { probs })
    }

    /// One training example's cross-entropy loss on the tape.
    pub fn loss_graph(
        &self,
        g: &mut Graph<S>,
        input: &Array2<S>,
        class_label: usize,
        targets: &PitchSequence,
    ) -> Result<Var> {
        if targets.len() != input.ncols() {
            return Err(CoreError::invalid(format!(
                "frame mismatch: input {} vs targets {}",
                input.ncols(),
                targets.len()
            )));
        }
        let x = g.constant(input.clone());
        let logits = self.logits_graph(g, x, class_label)?;
        Ok(g.cross_entropy_cols(logits, &targets.bins))
    }

    /// Mean loss over a batch; returns the gradients alongside.
    pub fn batch_step(
        &self,
        batch: &[(Array2<S>, usize, PitchSequence)],
    ) -> Result<(f64, Gradients<S>)> {
        assert!(!batch.is_empty());
        let mut g = Graph::new();
        let mut total: Option<Var> = None;
        for (input, class, targets) in batch {
            let loss = self.loss_graph(&mut g, input, *class, targets)?;
            total = Some(match total {
                None => loss,
                Some(acc) => g.add(acc, loss),
            });
        }
        let total = total.unwrap();
        let mean = g.scale(total, 1.0 / batch.len() as f64);
        let value = g.scalar_value(mean);
        let grads = g.backward(mean, self.store.len());
        Ok((value, grads))
    }

    pub fn apply_step(&mut self, adam: &mut Adam<S>, grads: &Gradients<S>) {
        adam.step(&mut self.store, grads);
    }
}
