//! Spontaneous-behavior prediction and frequency control.
//!
//! A per-token 4-way classifier (NONE / FILLED_PAUSE / PROLONGATION / BOTH)
//! over semantic embeddings plus word-boundary and prosody features, the
//! top-N frequency-controlled selector, and precision/recall/F1 evaluation.

use crate::corpus::{BehaviorTag, Conversation, TextToken};
use crate::frontend::EmbeddingProvider;
use crate::nn::{Adam, AdamConfig, Bidirectional, Binding, Graph, Linear, NodeId, ParamStore};
use crate::util::splitmix64;
use crate::{Error, Mat, Real, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Class count of the behavior label set.
pub const NUM_CLASSES: usize = 4;

/// Per-token probability rows over the four classes, in the fixed order
/// (NONE, FILLED_PAUSE, PROLONGATION, BOTH).
#[derive(Debug, Clone, PartialEq)]
pub struct TagDistribution {
    probs: Mat,
}

impl TagDistribution {
    /// Validates the simplex property row by row.
    pub fn new(probs: Mat) -> Result<Self> {
        if probs.ncols() != NUM_CLASSES {
            return Err(Error::Shape(format!(
                "distribution needs {NUM_CLASSES} columns, got {}",
                probs.ncols()
            )));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::Numerical(format!(
                    "row {i} has negative or non-finite probabilities"
                )));
            }
            let s: Real = row.sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Numerical(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(TagDistribution { probs })
    }

    pub fn probs(&self) -> &Mat {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }
}

/// Architecture and training settings of the behavior predictor:
/// a stack of fully connected layers, bidirectional LSTM layers, and a
/// 4-way output layer.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TaggerConfig {
    pub d_sem: usize,
    pub fc_dims: Vec<usize>,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub lr: Real,
    pub epochs: usize,
    pub seed: u64,
    /// Inverse-frequency class weighting for the training loss; behaviors
    /// are rare relative to NONE.
    pub class_weighting: bool,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            d_sem: crate::frontend::DEFAULT_SEMANTIC_DIM,
            fc_dims: vec![64, 64, 64],
            lstm_hidden: 32,
            lstm_layers: 2,
            lr: 1e-3,
            epochs: 40,
            seed: 0,
            class_weighting: true,
        }
    }
}

impl TaggerConfig {
    /// Input width per token: semantic embedding, word boundary, prosody
    /// one-hot.
    pub fn input_dim(&self) -> usize {
        self.d_sem + 1 + 4
    }
}

/// The trained predictor.
pub struct TaggerModel {
    store: ParamStore,
    fcs: Vec<Linear>,
    rnns: Vec<Bidirectional>,
    out: Linear,
    pub cfg: TaggerConfig,
    /// Mean training loss per epoch, recorded by [`train_tagger`].
    pub epoch_losses: Vec<Real>,
}

impl TaggerModel {
    /// Freshly initialized model (what zero training epochs returns).
    pub fn init(cfg: &TaggerConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7467_6d6f_6465_6c00));
        let mut store = ParamStore::new();
        let mut fcs = Vec::new();
        let mut din = cfg.input_dim();
        for (i, &dout) in cfg.fc_dims.iter().enumerate() {
            fcs.push(Linear::new(&mut store, &format!("fc{i}"), din, dout, &mut rng));
            din = dout;
        }
        let mut rnns = Vec::new();
        for i in 0..cfg.lstm_layers {
            rnns.push(Bidirectional::lstm(
                &mut store,
                &format!("blstm{i}"),
                din,
                cfg.lstm_hidden,
                &mut rng,
            ));
            din = 2 * cfg.lstm_hidden;
        }
        let out = Linear::new(&mut store, "out", din, NUM_CLASSES, &mut rng);
        TaggerModel {
            store,
            fcs,
            rnns,
            out,
            cfg: cfg.clone(),
            epoch_losses: Vec::new(),
        }
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn features(&self, tokens: &[TextToken], provider: &dyn EmbeddingProvider) -> Result<Mat> {
        if provider.dim() != self.cfg.d_sem {
            return Err(Error::Shape(format!(
                "provider width {} != model semantic width {}",
                provider.dim(),
                self.cfg.d_sem
            )));
        }
        let emb = provider.embed(tokens)?;
        let mut x = Mat::zeros((tokens.len(), self.cfg.input_dim()));
        for (i, tok) in tokens.iter().enumerate() {
            for d in 0..self.cfg.d_sem {
                x[[i, d]] = emb[[i, d]];
            }
            x[[i, self.cfg.d_sem]] = tok.word_boundary as u8 as Real;
            let level = (tok.prosody_level as usize).min(3);
            x[[i, self.cfg.d_sem + 1 + level]] = 1.0;
        }
        Ok(x)
    }

    fn logits(&self, g: &mut Graph, bind: &Binding, features: Mat) -> NodeId {
        let mut h = g.constant(features);
        for fc in &self.fcs {
            let pre = fc.apply(g, bind, h);
            h = g.relu(pre);
        }
        for rnn in &self.rnns {
            h = rnn.apply(g, bind, h);
        }
        self.out.apply(g, bind, h)
    }
}

/// Per-token class probabilities for one sentence.
pub fn predict_distribution(
    model: &TaggerModel,
    tokens: &[TextToken],
    provider: &dyn EmbeddingProvider,
) -> Result<TagDistribution> {
    if tokens.is_empty() {
        return Err(Error::Shape("cannot predict on an empty sentence".into()));
    }
    let features = model.features(tokens, provider)?;
    let mut g = Graph::new();
    let bind = model.store.bind(&mut g);
    let logits = model.logits(&mut g, &bind, features);
    let probs = g.row_softmax(logits);
    TagDistribution::new(g.value(probs).clone())
}

/// Highest-probability class per token; ties resolve to the lowest class
/// index, so NONE wins a full tie.
pub fn argmax_tags(dist: &TagDistribution) -> Vec<BehaviorTag> {
    dist.probs()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if row[c] > row[best] {
                    best = c;
                }
            }
            BehaviorTag::from_index(best).expect("class index")
        })
        .collect()
}

/// Frequency-controlled behavior selection. Exactly `floor(p * M)` tokens
/// receive their best *behavior* class (NONE excluded from the max); the
/// chosen tokens are those with the highest behavior probability, ranked
/// descending with index order breaking probability ties.
pub fn select_behaviors(dist: &TagDistribution, p: Real) -> Result<Vec<BehaviorTag>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Config(format!("frequency p={p} outside [0, 1]")));
    }
    let m = dist.len();
    let n = ((p * m as Real).floor() as usize).min(m);
    // Best behavior class per token; label ties break toward the lower
    // class index (FILLED_PAUSE < PROLONGATION < BOTH).
    let mut best: Vec<(usize, Real, usize)> = dist
        .probs()
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut class = 1;
            for c in 2..NUM_CLASSES {
                if row[c] > row[class] {
                    class = c;
                }
            }
            (i, row[class], class)
        })
        .collect();
    best.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite probs").then(a.0.cmp(&b.0)));
    let mut out = vec![BehaviorTag::None; m];
    for &(i, _, class) in best.iter().take(n) {
        out[i] = BehaviorTag::from_index(class).expect("class index");
    }
    Ok(out)
}

/// Per-class precision/recall/F1 with support counts.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ClassMetrics {
    pub precision: Real,
    pub recall: Real,
    pub f1: Real,
    pub support: usize,
}

/// Metrics for all four classes, indexed by [`BehaviorTag::index`].
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TagMetrics {
    pub per_class: [ClassMetrics; 4],
}

impl TagMetrics {
    pub fn class(&self, tag: BehaviorTag) -> &ClassMetrics {
        &self.per_class[tag.index()]
    }
}

/// One-vs-rest precision, recall and F1 per class over parallel sentence
/// lists. `F1 = 2PR/(P+R)` when `P+R > 0`, else 0.
pub fn evaluate_tags(
    pred: &[Vec<BehaviorTag>],
    gold: &[Vec<BehaviorTag>],
) -> Result<TagMetrics> {
    if pred.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences vs {} gold",
            pred.len(),
            gold.len()
        )));
    }
    let mut tp = [0usize; 4];
    let mut fp = [0usize; 4];
    let mut fnn = [0usize; 4];
    let mut support = [0usize; 4];
    for (s, (ps, gs)) in pred.iter().zip(gold).enumerate() {
        if ps.len() != gs.len() {
            return Err(Error::Shape(format!(
                "sentence {s}: {} predicted tokens vs {} gold",
                ps.len(),
                gs.len()
            )));
        }
        for (p, g) in ps.iter().zip(gs) {
            support[g.index()] += 1;
            if p == g {
                tp[p.index()] += 1;
            } else {
                fp[p.index()] += 1;
                fnn[g.index()] += 1;
            }
        }
    }
    let per_class = std::array::from_fn(|c| {
        let precision = if tp[c] + fp[c] > 0 {
            tp[c] as Real / (tp[c] + fp[c]) as Real
        } else {
            0.0
        };
        let recall = if tp[c] + fnn[c] > 0 {
            tp[c] as Real / (tp[c] + fnn[c]) as Real
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: support[c],
        }
    });
    Ok(TagMetrics { per_class })
}

/// Labeled sentences of a corpus (token sequences carrying gold tags).
pub fn corpus_sentences(convs: &[Conversation]) -> Vec<Vec<TextToken>> {
    convs
        .iter()
        .flat_map(|c| c.utterances.iter().map(|u| u.tokens.clone()))
        .collect()
}

fn class_weights(sentences: &[&Vec<TextToken>], enabled: bool) -> [Real; 4] {
    if !enabled {
        return [1.0; 4];
    }
    let mut counts = [0usize; 4];
    let mut total = 0usize;
    for s in sentences {
        for t in *s {
            counts[t.tag.index()] += 1;
            total += 1;
        }
    }
    let mut w = [0.0; 4];
    for c in 0..4 {
        w[c] = if counts[c] > 0 {
            total as Real / (4.0 * counts[c] as Real)
        } else {
            0.0
        };
    }
    w
}

/// Trains the predictor with weighted cross entropy, one optimizer update
/// per sentence; sentence order reshuffles deterministically each epoch.
pub fn train_tagger(
    sentences: &[Vec<TextToken>],
    cfg: &TaggerConfig,
    provider: &dyn EmbeddingProvider,
) -> Result<TaggerModel> {
    let sentences: Vec<&Vec<TextToken>> = sentences.iter().filter(|s| !s.is_empty()).collect();
    if sentences.is_empty() {
        return Err(Error::Config("empty tagger training corpus".into()));
    }
    let mut model = TaggerModel::init(cfg);
    let weights = class_weights(&sentences, cfg.class_weighting);
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.store,
    );
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(splitmix64(cfg.seed ^ 0x7467_6570 ^ ((epoch as u64) << 8)));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &si in &order {
            let tokens = sentences[si];
            let features = model.features(tokens, provider)?;
            let targets: Vec<usize> = tokens.iter().map(|t| t.tag.index()).collect();
            let token_weights: Vec<Real> = targets.iter().map(|&t| weights[t]).collect();
            let mut g = Graph::new();
            let bind = model.store.bind(&mut g);
            let logits = model.logits(&mut g, &bind, features);
            let loss = g.cross_entropy(logits, &targets, &token_weights);
            let loss_value = g.value(loss)[[0, 0]];
            if !loss_value.is_finite() {
                return Err(Error::Numerical(format!(
                    "tagger loss diverged at epoch {epoch}"
                )));
            }
            let grads = g.backward(loss);
            opt.step(&mut model.store, &bind, &grads);
            epoch_loss += loss_value;
        }
        model.epoch_losses.push(epoch_loss / order.len() as Real);
    }
    Ok(model)
}

/// Fraction of tokens whose argmax prediction matches the gold tag.
pub fn token_accuracy(
    model: &TaggerModel,
    sentences: &[Vec<TextToken>],
    provider: &dyn EmbeddingProvider,
) -> Result<Real> {
    let mut hit = 0usize;
    let mut total = 0usize;
    for s in sentences {
        if s.is_empty() {
            continue;
        }
        let dist = predict_distribution(model, s, provider)?;
        let pred = argmax_tags(&dist);
        for (p, t) in pred.iter().zip(s) {
            hit += (*p == t.tag) as usize;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Config("no tokens to score".into()));
    }
    Ok(hit as Real / total as Real)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic_corpus, SynthConfig};
    use crate::frontend::HashEmbedding;
    use proptest::prelude::*;

    fn dist_from(rows: Vec<[Real; 4]>) -> TagDistribution {
        let m = rows.len();
        let mut probs = Mat::zeros((m, 4));
        for (i, r) in rows.iter().enumerate() {
            for c in 0..4 {
                probs[[i, c]] = r[c];
            }
        }
        TagDistribution::new(probs).unwrap()
    }

    /// Literal restatement of the selection procedure, kept independent of
    /// the implementation: compute each token's behavior max, sort an index
    /// set by probability, assign the top floor(p*M).
    fn select_bruteforce(dist: &TagDistribution, p: Real) -> Vec<BehaviorTag> {
        let m = dist.len();
        let n = ((p * m as Real).floor() as usize).min(m);
        let probs = dist.probs();
        let mut scored: Vec<(usize, Real, usize)> = (0..m)
            .map(|i| {
                let (mut class, mut best) = (1usize, probs[[i, 1]]);
                for c in [2usize, 3] {
                    if probs[[i, c]] > best {
                        class = c;
                        best = probs[[i, c]];
                    }
                }
                (i, best, class)
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let mut out = vec![BehaviorTag::None; m];
        for &(i, _, class) in scored.iter().take(n) {
            out[i] = BehaviorTag::from_index(class).unwrap();
        }
        out
    }

    #[test]
    fn argmax_follows_rows_with_tie_to_none() {
        let dist = dist_from(vec![
            [0.7, 0.1, 0.1, 0.1],
            [0.1, 0.6, 0.2, 0.1],
            [0.25, 0.25, 0.25, 0.25],
        ]);
        assert_eq!(
            argmax_tags(&dist),
            vec![BehaviorTag::None, BehaviorTag::FilledPause, BehaviorTag::None]
        );
    }

    #[test]
    fn select_with_p_zero_is_all_none() {
        let dist = dist_from(vec![[0.1, 0.3, 0.3, 0.3]; 5]);
        let tags = select_behaviors(&dist, 0.0).unwrap();
        assert_eq!(tags, vec![BehaviorTag::None; 5]);
    }

    #[test]
    fn select_with_p_one_matches_behavior_argmax() {
        let dist = dist_from(vec![
            [0.2, 0.5, 0.2, 0.1], // fp
            [0.1, 0.2, 0.6, 0.1], // pl
            [0.1, 0.1, 0.2, 0.6], // pl+fp
        ]);
        let tags = select_behaviors(&dist, 1.0).unwrap();
        assert_eq!(
            tags,
            vec![
                BehaviorTag::FilledPause,
                BehaviorTag::Prolongation,
                BehaviorTag::Both
            ]
        );
    }

    #[test]
    fn select_half_of_four_takes_the_top_two() {
        // behavior-max probs (0.9, 0.2, 0.7, 0.1), labels (fp, pl, pl+fp, fp)
        let dist = dist_from(vec![
            [0.05, 0.9, 0.03, 0.02],
            [0.7, 0.05, 0.2, 0.05],
            [0.2, 0.05, 0.05, 0.7],
            [0.8, 0.1, 0.05, 0.05],
        ]);
        let tags = select_behaviors(&dist, 0.5).unwrap();
        assert_eq!(
            tags,
            vec![
                BehaviorTag::FilledPause,
                BehaviorTag::None,
                BehaviorTag::Both,
                BehaviorTag::None
            ]
        );
    }

    #[test]
    fn select_rejects_out_of_range_p() {
        let dist = dist_from(vec![[0.25; 4]]);
        assert!(select_behaviors(&dist, -0.1).is_err());
        assert!(select_behaviors(&dist, 1.1).is_err());
    }

    #[test]
    fn evaluate_perfect_prediction_scores_one() {
        let gold = vec![vec![
            BehaviorTag::None,
            BehaviorTag::FilledPause,
            BehaviorTag::Prolongation,
            BehaviorTag::Both,
        ]];
        let m = evaluate_tags(&gold, &gold).unwrap();
        for tag in BehaviorTag::ALL {
            let c = m.class(tag);
            assert_eq!((c.precision, c.recall, c.f1), (1.0, 1.0, 1.0));
            assert_eq!(c.support, 1);
        }
    }

    #[test]
    fn evaluate_all_none_prediction_has_zero_recall() {
        let gold = vec![vec![
            BehaviorTag::FilledPause,
            BehaviorTag::FilledPause,
            BehaviorTag::None,
        ]];
        let pred = vec![vec![BehaviorTag::None; 3]];
        let m = evaluate_tags(&pred, &gold).unwrap();
        assert_eq!(m.class(BehaviorTag::FilledPause).recall, 0.0);
    }

    #[test]
    fn evaluate_hand_counted_example() {
        // pred (fp, none, none), gold (fp, fp, none)
        let pred = vec![vec![
            BehaviorTag::FilledPause,
            BehaviorTag::None,
            BehaviorTag::None,
        ]];
        let gold = vec![vec![
            BehaviorTag::FilledPause,
            BehaviorTag::FilledPause,
            BehaviorTag::None,
        ]];
        let m = evaluate_tags(&pred, &gold).unwrap();
        let fp = m.class(BehaviorTag::FilledPause);
        assert_eq!(fp.precision, 1.0);
        assert_eq!(fp.recall, 0.5);
        assert!((fp.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rejects_length_mismatch() {
        let a = vec![vec![BehaviorTag::None; 3]];
        let b = vec![vec![BehaviorTag::None; 2]];
        assert!(evaluate_tags(&a, &b).is_err());
    }

    #[test]
    fn evaluate_matches_bruteforce_confusion_matrix_exhaustively() {
        // All (pred, gold) pairs for sentences up to length 3; the full
        // exhaustive sweep to length 6 runs in the integration suite.
        fn brute(pred: &[BehaviorTag], gold: &[BehaviorTag]) -> TagMetrics {
            let mut confusion = [[0usize; 4]; 4];
            for (p, g) in pred.iter().zip(gold) {
                confusion[g.index()][p.index()] += 1;
            }
            let per_class = std::array::from_fn(|c| {
                let tp = confusion[c][c];
                let pred_c: usize = (0..4).map(|g| confusion[g][c]).sum();
                let gold_c: usize = (0..4).map(|p| confusion[c][p]).sum();
                let precision = if pred_c > 0 { tp as Real / pred_c as Real } else { 0.0 };
                let recall = if gold_c > 0 { tp as Real / gold_c as Real } else { 0.0 };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                ClassMetrics { precision, recall, f1, support: gold_c }
            });
            TagMetrics { per_class }
        }

        for m in 1..=3usize {
            let seqs: Vec<Vec<BehaviorTag>> = (0..4usize.pow(m as u32))
                .map(|mut code| {
                    (0..m)
                        .map(|_| {
                            let t = BehaviorTag::from_index(code % 4).unwrap();
                            code /= 4;
                            t
                        })
                        .collect()
                })
                .collect();
            for p in &seqs {
                for g in &seqs {
                    let ours = evaluate_tags(
                        std::slice::from_ref(p),
                        std::slice::from_ref(g),
                    )
                    .unwrap();
                    assert_eq!(ours, brute(p, g));
                }
            }
        }
    }

    #[test]
    fn untrained_model_predicts_valid_simplex_rows_deterministically() {
        let cfg = TaggerConfig::default();
        let model = TaggerModel::init(&cfg);
        let provider = HashEmbedding::default();
        let corpus = gen_synthetic_corpus(&SynthConfig::default(), 3).unwrap();
        let tokens = &corpus[0].utterances[0].tokens;
        let d1 = predict_distribution(&model, tokens, &provider).unwrap();
        let d2 = predict_distribution(&model, tokens, &provider).unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), tokens.len());
    }

    #[test]
    fn predict_rejects_provider_width_mismatch() {
        let cfg = TaggerConfig::default();
        let model = TaggerModel::init(&cfg);
        let provider = HashEmbedding::new(16); // != 32
        let corpus = gen_synthetic_corpus(&SynthConfig::default(), 3).unwrap();
        let tokens = &corpus[0].utterances[0].tokens;
        assert!(predict_distribution(&model, tokens, &provider).is_err());
    }

    #[test]
    fn zero_epochs_returns_the_initial_model() {
        let cfg = TaggerConfig {
            epochs: 0,
            ..TaggerConfig::default()
        };
        let provider = HashEmbedding::default();
        let corpus = gen_synthetic_corpus(&SynthConfig::default(), 3).unwrap();
        let sentences = corpus_sentences(&corpus);
        let trained = train_tagger(&sentences, &cfg, &provider).unwrap();
        let fresh = TaggerModel::init(&cfg);
        for ((_, a), (_, b)) in trained.store.iter().zip(fresh.store.iter()) {
            assert_eq!(a, b);
        }
        assert!(trained.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_loss_does_not_increase_early() {
        let cfg = TaggerConfig {
            epochs: 5,
            ..TaggerConfig::default()
        };
        let provider = HashEmbedding::default();
        let corpus = gen_synthetic_corpus(
            &SynthConfig {
                conversations: 6,
                ..SynthConfig::default()
            },
            9,
        )
        .unwrap();
        let sentences = corpus_sentences(&corpus);
        let a = train_tagger(&sentences, &cfg, &provider).unwrap();
        let b = train_tagger(&sentences, &cfg, &provider).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses, "fixed seed, identical losses");
        for w in a.epoch_losses.windows(2) {
            assert!(
                w[1] <= w[0] + 1e-9,
                "epoch loss increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let provider = HashEmbedding::default();
        assert!(train_tagger(&[], &TaggerConfig::default(), &provider).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Exactly floor(p*M) behaviors, matching the brute-force procedure,
        // every non-NONE equal to the behavior argmax, and monotone growth
        // of the tagged set with p.
        #[test]
        fn selector_properties(
            raw in proptest::collection::vec(proptest::collection::vec(0.01f64..1.0, 4), 1..16),
            p1 in 0.0f64..1.0,
            p2 in 0.0f64..1.0,
        ) {
            let m = raw.len();
            let mut probs = Mat::zeros((m, 4));
            for (i, row) in raw.iter().enumerate() {
                let s: f64 = row.iter().sum();
                for c in 0..4 {
                    probs[[i, c]] = row[c] / s;
                }
            }
            let dist = TagDistribution::new(probs).unwrap();
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };

            for p in [lo, hi] {
                let tags = select_behaviors(&dist, p).unwrap();
                let n = (p * m as f64).floor() as usize;
                prop_assert_eq!(tags.iter().filter(|t| **t != BehaviorTag::None).count(), n);
                prop_assert_eq!(&tags, &select_bruteforce(&dist, p));
                for (i, t) in tags.iter().enumerate() {
                    if *t != BehaviorTag::None {
                        let row = dist.probs().row(i);
                        let mut best = 1;
                        for c in 2..4 {
                            if row[c] > row[best] { best = c; }
                        }
                        prop_assert_eq!(t.index(), best);
                    }
                }
            }

            let tags_lo = select_behaviors(&dist, lo).unwrap();
            let tags_hi = select_behaviors(&dist, hi).unwrap();
            for i in 0..m {
                if tags_lo[i] != BehaviorTag::None {
                    prop_assert_eq!(tags_lo[i], tags_hi[i], "tagged set must grow with p");
                }
            }
        }
    }
}
