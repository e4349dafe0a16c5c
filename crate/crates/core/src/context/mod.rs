//! Speaker-independent acoustic context encoder.
//!
//! A reference encoder (strided 2-D convolutions over the mel, then a GRU
//! whose final state is the reference vector `r`), a global-style-token
//! layer producing the fixed-length acoustic embedding the decoder
//! conditions on, a speaker classifier attached to `r` through a gradient
//! reversal layer, and the next-embedding predictor.
//!
//! The embedding fed downstream is the GST output; the adversarial
//! classifier grips `r` upstream of the token bottleneck, so speaker
//! erasure happens before style quantization.

use crate::corpus::Mel;
use crate::nn::{
    Binding, Conv2d, Conv2dSpec, Graph, GruCell, Linear, NodeId, ParamId, ParamStore,
};
use crate::{Error, Mat, Real, Result};
use rand_chacha::ChaCha8Rng;

/// Context encoder dimensions. Two independent instances exist during
/// training: one over the previous utterance (whose embedding conditions
/// the decoder) and one over the current utterance (the training-only
/// target of the next predictor).
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ContextConfig {
    pub d_mel: usize,
    /// Channel progression of the strided conv stack (stride 2 in time).
    pub conv_channels: Vec<usize>,
    pub ref_gru_hidden: usize,
    /// Global style token count.
    pub n_tokens: usize,
    pub n_heads: usize,
    pub token_dim: usize,
    /// Output embedding width.
    pub d_e: usize,
    /// Hidden widths of the speaker classifier stack.
    pub cls_dims: Vec<usize>,
    pub n_speakers: usize,
    /// Base gradient-reversal strength.
    pub grl_scale: Real,
    /// Feed-forward layer count of the next predictor.
    pub next_layers: usize,
    pub next_hidden: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        ContextConfig {
            d_mel: 16,
            conv_channels: vec![8, 8, 16, 16],
            ref_gru_hidden: 64,
            n_tokens: 10,
            n_heads: 4,
            token_dim: 64,
            d_e: 64,
            cls_dims: vec![32, 16],
            n_speakers: 2,
            grl_scale: 1.0,
            next_layers: 3,
            next_hidden: 64,
        }
    }
}

impl ContextConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "token_dim {} not divisible by heads {}",
                self.token_dim, self.n_heads
            )));
        }
        if self.conv_channels.is_empty() || self.n_tokens == 0 || self.n_speakers == 0 {
            return Err(Error::Config("empty context encoder stage".into()));
        }
        Ok(())
    }
}

/// Parameter handles of one context encoder instance.
pub struct ContextEncoder {
    pub cfg: ContextConfig,
    convs: Vec<Conv2d>,
    gru: GruCell,
    tokens: ParamId,
    wq: Linear,
    wk: ParamId,
    wv: ParamId,
    out_proj: Linear,
    cls: Vec<Linear>,
    cls_out: Linear,
}

impl ContextEncoder {
    pub fn init(
        store: &mut ParamStore,
        name: &str,
        cfg: &ContextConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        cfg.validate().expect("valid context config");
        let mut convs = Vec::new();
        let mut cin = 1;
        for (i, &cout) in cfg.conv_channels.iter().enumerate() {
            convs.push(Conv2d::new(
                store,
                &format!("{name}.conv{i}"),
                Conv2dSpec {
                    cin,
                    cout,
                    f: cfg.d_mel,
                    kt: 3,
                    kf: 3,
                    stride_t: 2,
                },
                rng,
            ));
            cin = cout;
        }
        let gru_in = cfg.d_mel * cin;
        let gru = GruCell::new(store, &format!("{name}.gru"), gru_in, cfg.ref_gru_hidden, rng);
        let tokens = store.add(
            &format!("{name}.tokens"),
            crate::nn::xavier(cfg.n_tokens, cfg.token_dim, rng),
        );
        let wq = Linear::new(
            store,
            &format!("{name}.wq"),
            cfg.ref_gru_hidden,
            cfg.token_dim,
            rng,
        );
        let wk = store.add(
            &format!("{name}.wk"),
            crate::nn::xavier(cfg.token_dim, cfg.token_dim, rng),
        );
        let wv = store.add(
            &format!("{name}.wv"),
            crate::nn::xavier(cfg.token_dim, cfg.token_dim, rng),
        );
        let out_proj = Linear::new(store, &format!("{name}.out"), cfg.token_dim, cfg.d_e, rng);
        let mut cls = Vec::new();
        let mut din = cfg.ref_gru_hidden;
        for (i, &d) in cfg.cls_dims.iter().enumerate() {
            cls.push(Linear::new(store, &format!("{name}.cls{i}"), din, d, rng));
            din = d;
        }
        let cls_out = Linear::new(store, &format!("{name}.cls_out"), din, cfg.n_speakers, rng);
        ContextEncoder {
            cfg: cfg.clone(),
            convs,
            gru,
            tokens,
            wq,
            wk,
            wv,
            out_proj,
            cls,
            cls_out,
        }
    }

    /// A representative parameter of the reference encoder (for gradient
    /// audits).
    pub fn probe_param(&self) -> ParamId {
        self.convs[0].w
    }

    /// Compresses a variable-length mel to the fixed-length reference
    /// vector `r` (1 x ref_gru_hidden). Short inputs are handled by the
    /// zero padding of the convolutions; this never fails on length.
    pub fn reference_encode(&self, g: &mut Graph, bind: &Binding, mel: &Mel) -> Result<NodeId> {
        if mel.dim() != self.cfg.d_mel {
            return Err(Error::Shape(format!(
                "mel width {} != configured {}",
                mel.dim(),
                self.cfg.d_mel
            )));
        }
        let mut h = g.constant(mel.data().clone());
        for conv in &self.convs {
            let y = conv.apply(g, bind, h);
            h = g.relu(y);
        }
        let states = self.gru.run(g, bind, h);
        let t_len = g.value(states).nrows();
        Ok(g.slice_rows(states, t_len - 1, 1))
    }

    /// Multi-head attention of `r` over the style tokens; returns the
    /// embedding (1 x d_e) and the per-head token weights (heads x tokens).
    pub fn style_embed(&self, g: &mut Graph, bind: &Binding, r: NodeId) -> (NodeId, Mat) {
        let heads = self.cfg.n_heads;
        let d_head = self.cfg.token_dim / heads;
        let toks = g.tanh(bind.node(self.tokens));
        let q = self.wq.apply(g, bind, r); // 1 x token_dim
        let k = g.matmul(toks, bind.node(self.wk)); // tokens x token_dim
        let v = g.matmul(toks, bind.node(self.wv)); // tokens x token_dim
        let scale = 1.0 / (d_head as Real).sqrt();
        let mut parts = Vec::with_capacity(heads);
        let mut weights = Mat::zeros((heads, self.cfg.n_tokens));
        for hd in 0..heads {
            let qh = g.slice_cols(q, hd * d_head, d_head); // 1 x d_head
            let kh = g.slice_cols(k, hd * d_head, d_head); // tokens x d_head
            let kht = g.transpose(kh); // d_head x tokens
            let scores = g.matmul(qh, kht); // 1 x tokens
            let scaled = g.scale(scores, scale);
            let alpha = g.row_softmax(scaled); // 1 x tokens
            for t in 0..self.cfg.n_tokens {
                weights[[hd, t]] = g.value(alpha)[[0, t]];
            }
            let vh = g.slice_cols(v, hd * d_head, d_head); // tokens x d_head
            parts.push(g.matmul(alpha, vh)); // 1 x d_head
        }
        let ctx = g.concat_cols(&parts); // 1 x token_dim
        (self.out_proj.apply(g, bind, ctx), weights)
    }

    /// Style embedding from externally supplied head weights (tests force
    /// one-hot attention through this seam).
    pub fn style_from_head_weights(
        &self,
        g: &mut Graph,
        bind: &Binding,
        head_weights: &Mat,
    ) -> NodeId {
        assert_eq!(head_weights.dim(), (self.cfg.n_heads, self.cfg.n_tokens));
        let d_head = self.cfg.token_dim / self.cfg.n_heads;
        let toks = g.tanh(bind.node(self.tokens));
        let v = g.matmul(toks, bind.node(self.wv));
        let mut parts = Vec::with_capacity(self.cfg.n_heads);
        for hd in 0..self.cfg.n_heads {
            let alpha = g.constant(
                head_weights
                    .row(hd)
                    .to_owned()
                    .insert_axis(ndarray::Axis(0)),
            );
            let vh = g.slice_cols(v, hd * d_head, d_head);
            parts.push(g.matmul(alpha, vh));
        }
        let ctx = g.concat_cols(&parts);
        self.out_proj.apply(g, bind, ctx)
    }

    /// Speaker logits from `r` through the gradient reversal layer.
    /// `grl_scale` 1.0 is adversarial training; -1.0 wires the classifier
    /// cooperatively (the "no GRL" ablation).
    pub fn speaker_classify(
        &self,
        g: &mut Graph,
        bind: &Binding,
        r: NodeId,
        grl_scale: Real,
    ) -> NodeId {
        let mut h = g.grl(r, grl_scale);
        for fc in &self.cls {
            let pre = fc.apply(g, bind, h);
            h = g.relu(pre);
        }
        self.cls_out.apply(g, bind, h)
    }

    /// Cross entropy of the classifier against the true speaker.
    pub fn speaker_loss(
        &self,
        g: &mut Graph,
        bind: &Binding,
        r: NodeId,
        speaker_id: usize,
        grl_scale: Real,
    ) -> Result<NodeId> {
        if speaker_id >= self.cfg.n_speakers {
            return Err(Error::Config(format!("speaker id {speaker_id} out of range")));
        }
        let logits = self.speaker_classify(g, bind, r, grl_scale);
        Ok(g.cross_entropy(logits, &[speaker_id], &[1.0]))
    }

    /// Full inference path: mel to acoustic embedding (1 x d_e values).
    pub fn embed_mel(&self, store: &ParamStore, mel: &Mel) -> Result<Vec<Real>> {
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let r = self.reference_encode(&mut g, &bind, mel)?;
        let (e, _) = self.style_embed(&mut g, &bind, r);
        Ok(g.value(e).row(0).to_vec())
    }
}

/// Feed-forward next-embedding predictor (d_e to d_e).
pub struct NextPredictor {
    layers: Vec<Linear>,
    pub d_e: usize,
}

impl NextPredictor {
    pub fn init(store: &mut ParamStore, name: &str, cfg: &ContextConfig, rng: &mut ChaCha8Rng) -> Self {
        assert!(cfg.next_layers >= 1);
        let mut layers = Vec::new();
        let mut din = cfg.d_e;
        for i in 0..cfg.next_layers {
            let dout = if i + 1 == cfg.next_layers {
                cfg.d_e
            } else {
                cfg.next_hidden
            };
            layers.push(Linear::new(store, &format!("{name}.fc{i}"), din, dout, rng));
            din = dout;
        }
        NextPredictor {
            layers,
            d_e: cfg.d_e,
        }
    }

    /// Exact-identity construction (test mode): splits the input into
    /// positive/negative parts so the interior ReLUs pass the value
    /// through unchanged.
    pub fn identity(store: &mut ParamStore, name: &str, d_e: usize) -> Self {
        let mut w1 = Mat::zeros((d_e, 2 * d_e));
        for i in 0..d_e {
            w1[[i, i]] = 1.0;
            w1[[i, d_e + i]] = -1.0;
        }
        let mut w2 = Mat::zeros((2 * d_e, 2 * d_e));
        for i in 0..2 * d_e {
            w2[[i, i]] = 1.0;
        }
        let mut w3 = Mat::zeros((2 * d_e, d_e));
        for i in 0..d_e {
            w3[[i, i]] = 1.0;
            w3[[d_e + i, i]] = -1.0;
        }
        let layers = vec![
            Linear::from_values(store, &format!("{name}.fc0"), w1, Mat::zeros((1, 2 * d_e))),
            Linear::from_values(store, &format!("{name}.fc1"), w2, Mat::zeros((1, 2 * d_e))),
            Linear::from_values(store, &format!("{name}.fc2"), w3, Mat::zeros((1, d_e))),
        ];
        NextPredictor { layers, d_e }
    }

    pub fn probe_param(&self) -> ParamId {
        self.layers[0].w
    }

    /// Predicts the next embedding from the previous one (1 x d_e).
    pub fn apply(&self, g: &mut Graph, bind: &Binding, e_prev: NodeId) -> Result<NodeId> {
        if g.value(e_prev).dim() != (1, self.d_e) {
            return Err(Error::Shape(format!(
                "next predictor wants 1x{}, got {:?}",
                self.d_e,
                g.value(e_prev).dim()
            )));
        }
        let mut h = e_prev;
        for (i, fc) in self.layers.iter().enumerate() {
            h = fc.apply(g, bind, h);
            if i + 1 < self.layers.len() {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}

/// Mean squared difference between the predicted and the observed
/// embedding; the training-side target is gradient-stopped by the caller.
pub fn embedding_loss(predicted: &[Real], target: &[Real]) -> Result<Real> {
    if predicted.len() != target.len() {
        return Err(Error::Shape(format!(
            "embedding lengths differ: {} vs {}",
            predicted.len(),
            target.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Shape("empty embeddings".into()));
    }
    Ok(predicted
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<Real>()
        / predicted.len() as Real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DEFAULT_FRAME_SHIFT_MS;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;

    fn encoder() -> (ParamStore, ContextEncoder) {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut store = ParamStore::new();
        let enc = ContextEncoder::init(&mut store, "fp", &ContextConfig::default(), &mut rng);
        (store, enc)
    }

    fn mel_of(t: usize, fill: Real) -> Mel {
        Mel::new(Array2::from_elem((t, 16), fill), DEFAULT_FRAME_SHIFT_MS).unwrap()
    }

    #[test]
    fn reference_vector_length_is_independent_of_duration() {
        let (store, enc) = encoder();
        let mut lens = Vec::new();
        for t in [4usize, 20, 40, 200, 400] {
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let r = enc.reference_encode(&mut g, &bind, &mel_of(t, 0.3)).unwrap();
            lens.push(g.value(r).dim());
        }
        assert!(lens.iter().all(|d| *d == (1, 64)));
    }

    #[test]
    fn zero_mel_gives_finite_embedding_deterministically() {
        let (store, enc) = encoder();
        let run = || {
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let r = enc.reference_encode(&mut g, &bind, &mel_of(12, 0.0)).unwrap();
            let (e, _) = enc.style_embed(&mut g, &bind, r);
            g.value(e).clone()
        };
        let a = run();
        assert!(a.iter().all(|v| v.is_finite()));
        assert_eq!(a, run());
    }

    #[test]
    fn very_short_mels_are_padded_not_rejected() {
        let (store, enc) = encoder();
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let r = enc.reference_encode(&mut g, &bind, &mel_of(1, 0.5)).unwrap();
        assert_eq!(g.value(r).dim(), (1, 64));
    }

    #[test]
    fn style_weights_form_a_simplex_and_output_has_fixed_width() {
        let (store, enc) = encoder();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let r = g.constant(Mat::from_shape_fn((1, 64), |_| rng.random_range(-2.0..2.0)));
            let (e, w) = enc.style_embed(&mut g, &bind, r);
            assert_eq!(g.value(e).dim(), (1, 64));
            for hd in 0..w.nrows() {
                let s: Real = w.row(hd).sum();
                assert!((s - 1.0).abs() < 1e-6, "head {hd} sums to {s}");
                assert!(w.row(hd).iter().all(|x| *x >= 0.0));
            }
        }
    }

    #[test]
    fn one_hot_attention_returns_that_tokens_value_projection() {
        let (store, enc) = encoder();
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let token = 7usize;
        let mut forced = Mat::zeros((4, 10));
        for hd in 0..4 {
            forced[[hd, token]] = 1.0;
        }
        let e = enc.style_from_head_weights(&mut g, &bind, &forced);

        // Independent route: tanh(token row) through the value and output
        // projections.
        let toks = store.value(enc.tokens);
        let row = toks.row(token).mapv(Real::tanh).insert_axis(ndarray::Axis(0));
        let v = row.dot(store.value(enc.wv));
        let expect = v.dot(store.value(enc.out_proj.w)) + store.value(enc.out_proj.b);
        for (a, b) in g.value(e).iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn speaker_loss_rejects_out_of_range_speaker() {
        let (store, enc) = encoder();
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let r = g.constant(Mat::zeros((1, 64)));
        assert!(enc.speaker_loss(&mut g, &bind, r, 2, 1.0).is_err());
    }

    #[test]
    fn cross_entropy_identities_for_the_classifier() {
        // uniform logits over 2 speakers -> ln 2
        let mut g = Graph::new();
        let logits = g.constant(Mat::zeros((1, 2)));
        let ce = g.cross_entropy(logits, &[0], &[1.0]);
        assert!((g.value(ce)[[0, 0]] - (2.0f64).ln()).abs() < 1e-12);
        // confident correct logits -> ~0
        let strong = g.constant(Mat::from_shape_vec((1, 2), vec![12.0, -12.0]).unwrap());
        let ce = g.cross_entropy(strong, &[0], &[1.0]);
        assert!(g.value(ce)[[0, 0]] < 1e-9);
    }

    #[test]
    fn grl_classifier_gradient_is_minus_scale_times_plain_wiring() {
        // Twin graphs on the same parameters and batch: the only difference
        // is the GRL scale. The reference-encoder gradient must be exactly
        // -scale times the pass-through (-1) wiring's gradient.
        let (store, enc) = encoder();
        let mel = mel_of(9, 0.4);
        let grad_for = |scale: Real| {
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let r = enc.reference_encode(&mut g, &bind, &mel).unwrap();
            let loss = enc.speaker_loss(&mut g, &bind, r, 1, scale).unwrap();
            let grads = g.backward(loss);
            bind.grad(&grads, enc.probe_param()).unwrap().clone()
        };
        let plain = grad_for(-1.0); // gradient passes unreversed
        for scale in [1.0, 0.5] {
            let reversed = grad_for(scale);
            for (a, b) in reversed.iter().zip(plain.iter()) {
                assert!(
                    (a + scale * b).abs() <= 1e-6 * b.abs().max(1.0),
                    "scale {scale}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn identity_next_predictor_is_exact() {
        let mut store = ParamStore::new();
        let h = NextPredictor::identity(&mut store, "h", 6);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let e = g.constant(Mat::from_shape_vec((1, 6), vec![0.5, -1.25, 0.0, 3.0, -0.75, 2.5]).unwrap());
        let out = h.apply(&mut g, &bind, e).unwrap();
        assert_eq!(g.value(out), g.value(e));
    }

    #[test]
    fn next_predictor_is_deterministic_and_differentiable() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let h = NextPredictor::init(&mut store, "h", &ContextConfig::default(), &mut rng);
        let input = Mat::from_shape_fn((1, 64), |_| rng.random_range(-1.0..1.0));
        let target = Mat::from_shape_fn((1, 64), |_| rng.random_range(-1.0..1.0));

        let run = || {
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let e = g.constant(input.clone());
            let out = h.apply(&mut g, &bind, e).unwrap();
            g.value(out).clone()
        };
        assert_eq!(run(), run());

        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let e = g.constant(input.clone());
        let out = h.apply(&mut g, &bind, e).unwrap();
        let t = g.constant(target);
        let loss = g.mse(out, t);
        let grads = g.backward(loss);
        let gm = bind.grad(&grads, h.probe_param()).expect("grad flows");
        assert!(gm.iter().any(|v| v.abs() > 0.0));
    }

    #[test]
    fn next_predictor_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::new();
        let h = NextPredictor::init(&mut store, "h", &ContextConfig::default(), &mut rng);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let e = g.constant(Mat::zeros((1, 32)));
        assert!(h.apply(&mut g, &bind, e).is_err());
    }

    #[test]
    fn embedding_loss_examples() {
        assert_eq!(embedding_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        // hand computation: ((0-3)^2 + (0-4)^2) / 2 = 12.5
        assert_eq!(embedding_loss(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        // homogeneity: scaling both inputs by c scales the loss by c^2
        let base = embedding_loss(&[1.0, -2.0, 0.5], &[0.0, 1.0, 2.0]).unwrap();
        let scaled = embedding_loss(&[3.0, -6.0, 1.5], &[0.0, 3.0, 6.0]).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12);
        assert!(embedding_loss(&[1.0], &[1.0, 2.0]).is_err());
    }
}
