//! The conditional VAE that maps (initial configuration, sentence) to goal
//! configurations.
//!
//! The encoder reads the final configuration concatenated with its two
//! conditions (initial configuration and recurrent sentence embedding) and
//! produces a 27-dimensional Gaussian posterior; the decoder reads a latent
//! draw plus the same conditions and emits nine Bernoulli probabilities. At
//! generation time the latent is drawn from the prior and the probabilities
//! are thresholded at 0.5 — validity of the result is measured downstream,
//! never enforced here.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Triplet;
use crate::instructions::{instruction_set, Sentence, UnknownTokenError, Vocabulary};
use crate::nn::{
    adam_step, bce_backward, bce_loss, gradient_check_sampled, kl_backward, kl_loss, linear,
    linear_backward, relu, relu_backward, rnn_backward, rnn_forward, sigmoid, sigmoid_backward,
    AdamState, GradCheckReport, ParamStore, RnnTrace, Tensor, LOGVAR_CLAMP,
};
use crate::semantics::SemanticConfig;

/// Architecture and training scalars. The recurrent hidden state shares the
/// embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hyperparams {
    pub hidden: usize,
    pub latent: usize,
    pub embed: usize,
    pub beta: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            hidden: 128,
            latent: 27,
            embed: 100,
            beta: 0.6,
            lr: 5e-4,
            batch: 128,
            epochs: 150,
            seed: 0,
        }
    }
}

/// A hyperparameter violated its range.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid hyperparameter {name}: {value} ({constraint})")]
pub struct InvalidHyperparams {
    pub name: &'static str,
    pub value: f64,
    pub constraint: &'static str,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), InvalidHyperparams> {
        let positive: [(&str, f64); 5] = [
            ("hidden", self.hidden as f64),
            ("latent", self.latent as f64),
            ("embed", self.embed as f64),
            ("batch", self.batch as f64),
            ("epochs", self.epochs as f64),
        ];
        for (name, value) in positive {
            if value < 1.0 {
                return Err(InvalidHyperparams { name, value, constraint: "must be >= 1" });
            }
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(InvalidHyperparams {
                name: "beta",
                value: self.beta,
                constraint: "must be in (0, 1]",
            });
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(InvalidHyperparams {
                name: "lr",
                value: self.lr,
                constraint: "must be positive and finite",
            });
        }
        Ok(())
    }

    fn encoder_in(&self) -> usize {
        9 + 9 + self.embed
    }

    fn decoder_in(&self) -> usize {
        self.latent + 9 + self.embed
    }
}

/// Names of the learned tensors, in canonical (storage) order.
const PARAM_NAMES: [&str; 18] = [
    "embed", "rnn.wx", "rnn.wh", "rnn.b", "enc.w1", "enc.b1", "enc.w2", "enc.b2", "enc.mu_w",
    "enc.mu_b", "enc.lv_w", "enc.lv_b", "dec.w1", "dec.b1", "dec.w2", "dec.b2", "dec.w3",
    "dec.b3",
];

/// The goal generator: vocabulary, learned parameters, hyperparameters.
#[derive(Debug, Clone)]
pub struct CVAEModel {
    vocab: Vocabulary,
    hp: Hyperparams,
    params: ParamStore,
}

impl CVAEModel {
    /// Fresh model over the canonical instruction vocabulary,
    /// Glorot-initialized from `rng` (biases zero).
    pub fn new(hp: &Hyperparams, rng: &mut impl Rng) -> Self {
        hp.validate().expect("hyperparameters must be valid");
        let vocab = instruction_set().vocab().clone();
        let (v, e, h, l) = (vocab.len(), hp.embed, hp.hidden, hp.latent);
        let mut params = ParamStore::new();
        for name in PARAM_NAMES {
            let tensor = match name {
                "embed" => Tensor::glorot(v, e, rng),
                "rnn.wx" | "rnn.wh" => Tensor::glorot(e, e, rng),
                "rnn.b" => Tensor::zeros(&[e]),
                "enc.w1" => Tensor::glorot(hp.encoder_in(), h, rng),
                "enc.w2" | "dec.w2" => Tensor::glorot(h, h, rng),
                "enc.b1" | "enc.b2" | "dec.b1" | "dec.b2" => Tensor::zeros(&[h]),
                "enc.mu_w" | "enc.lv_w" => Tensor::glorot(h, l, rng),
                "enc.mu_b" | "enc.lv_b" => Tensor::zeros(&[l]),
                "dec.w1" => Tensor::glorot(hp.decoder_in(), h, rng),
                "dec.w3" => Tensor::glorot(h, 9, rng),
                "dec.b3" => Tensor::zeros(&[9]),
                _ => unreachable!(),
            };
            params.insert(name, tensor);
        }
        CVAEModel { vocab, hp: *hp, params }
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Recurrent sentence embedding (final hidden state).
    fn embed_tokens(&self, tokens: &[usize]) -> Tensor {
        let p = &self.params;
        crate::nn::rnn_encode(tokens, p.get("embed"), p.get("rnn.wx"), p.get("rnn.wh"), p.get("rnn.b"))
            .expect("instruction sentences are nonempty")
    }

    /// Posterior parameters for one triplet; returns `(mu, logvar)`, each
    /// `[latent]`. The log-variance is already clamped.
    pub fn encode(
        &self,
        c_f: &SemanticConfig,
        c_i: &SemanticConfig,
        sentence: &str,
    ) -> Result<(Tensor, Tensor), UnknownTokenError> {
        let tokens = self.vocab.tokenize(sentence)?;
        let s_emb = self.embed_tokens(&tokens);
        let mut x = Vec::with_capacity(self.hp.encoder_in());
        x.extend_from_slice(&c_f.to_f64());
        x.extend_from_slice(&c_i.to_f64());
        x.extend_from_slice(s_emb.data());
        let x = Tensor::from_vec(&[1, self.hp.encoder_in()], x);

        let p = &self.params;
        let h1 = relu(&linear(&x, p.get("enc.w1"), p.get("enc.b1")).expect("fixed widths"));
        let h2 = relu(&linear(&h1, p.get("enc.w2"), p.get("enc.b2")).expect("fixed widths"));
        let mu = linear(&h2, p.get("enc.mu_w"), p.get("enc.mu_b")).expect("fixed widths");
        let mut lv = linear(&h2, p.get("enc.lv_w"), p.get("enc.lv_b")).expect("fixed widths");
        for v in lv.data_mut() {
            *v = v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
        }
        let l = self.hp.latent;
        Ok((
            Tensor::from_vec(&[l], mu.data().to_vec()),
            Tensor::from_vec(&[l], lv.data().to_vec()),
        ))
    }

    /// Bernoulli probabilities for the nine predicates; `z` is `[latent]`.
    pub fn decode(
        &self,
        z: &Tensor,
        c_i: &SemanticConfig,
        sentence: &str,
    ) -> Result<Tensor, UnknownTokenError> {
        let tokens = self.vocab.tokenize(sentence)?;
        let s_emb = self.embed_tokens(&tokens);
        Ok(self.decode_with_embedding(z, c_i, &s_emb))
    }

    fn decode_with_embedding(&self, z: &Tensor, c_i: &SemanticConfig, s_emb: &Tensor) -> Tensor {
        assert_eq!(z.shape(), [self.hp.latent], "latent draw must be [latent]");
        let mut x = Vec::with_capacity(self.hp.decoder_in());
        x.extend_from_slice(z.data());
        x.extend_from_slice(&c_i.to_f64());
        x.extend_from_slice(s_emb.data());
        let x = Tensor::from_vec(&[1, self.hp.decoder_in()], x);

        let p = &self.params;
        let h1 = relu(&linear(&x, p.get("dec.w1"), p.get("dec.b1")).expect("fixed widths"));
        let h2 = relu(&linear(&h1, p.get("dec.w2"), p.get("dec.b2")).expect("fixed widths"));
        let probs = sigmoid(&linear(&h2, p.get("dec.w3"), p.get("dec.b3")).expect("fixed widths"));
        Tensor::from_vec(&[9], probs.data().to_vec())
    }

    /// Draws `n` goal configurations: `z ~ N(0, I)`, decode, threshold each
    /// probability at 0.5. Draws may repeat and may be invalid.
    pub fn sample_goals(
        &self,
        c_i: &SemanticConfig,
        sentence: &str,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<SemanticConfig>, UnknownTokenError> {
        let tokens = self.vocab.tokenize(sentence)?;
        Ok(self.sample_goals_tokens(c_i, &tokens, n, rng))
    }

    /// [`Self::sample_goals`] over pre-tokenized input (instruction-set
    /// sentences carry their tokens, so this path cannot fail).
    pub fn sample_goals_tokens(
        &self,
        c_i: &SemanticConfig,
        tokens: &[usize],
        n: usize,
        rng: &mut impl Rng,
    ) -> Vec<SemanticConfig> {
        assert!(n >= 1, "must draw at least one goal");
        let s_emb = self.embed_tokens(tokens);
        (0..n)
            .map(|_| {
                let z = standard_normal(&[self.hp.latent], rng);
                let probs = self.decode_with_embedding(&z, c_i, &s_emb);
                let mut bits = [false; 9];
                for (bit, p) in bits.iter_mut().zip(probs.data()) {
                    *bit = *p > 0.5;
                }
                SemanticConfig::from_bits(bits)
            })
            .collect()
    }
}

/// Anything that proposes goal configurations for an instruction — the
/// trained generator in production, stubs and oracles in tests and
/// baselines.
pub trait GoalSource {
    fn draw_goals(
        &mut self,
        c_i: &SemanticConfig,
        sentence: &Sentence,
        n: usize,
    ) -> Vec<SemanticConfig>;
}

/// A model paired with its own random stream; the canonical [`GoalSource`].
pub struct ModelSampler<'a, R> {
    model: &'a CVAEModel,
    rng: R,
}

impl<'a, R: Rng> ModelSampler<'a, R> {
    pub fn new(model: &'a CVAEModel, rng: R) -> Self {
        ModelSampler { model, rng }
    }
}

impl<R: Rng> GoalSource for ModelSampler<'_, R> {
    fn draw_goals(
        &mut self,
        c_i: &SemanticConfig,
        sentence: &Sentence,
        n: usize,
    ) -> Vec<SemanticConfig> {
        self.model.sample_goals_tokens(c_i, &sentence.tokens, n, &mut self.rng)
    }
}

/// Standard-normal tensor of the given shape.
fn standard_normal(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect())
}

/// `z = mu + exp(logvar / 2) ⊙ ε`, `ε ~ N(0, I)` from `rng`.
pub fn reparameterize(mu: &Tensor, logvar: &Tensor, rng: &mut impl Rng) -> Tensor {
    assert_eq!(mu.shape(), logvar.shape(), "mu and logvar must agree");
    let eps = standard_normal(mu.shape(), rng);
    reparameterize_with(mu, logvar, &eps)
}

fn reparameterize_with(mu: &Tensor, logvar: &Tensor, eps: &Tensor) -> Tensor {
    let data = mu
        .data()
        .iter()
        .zip(logvar.data())
        .zip(eps.data())
        .map(|((m, l), e)| m + (l / 2.0).exp() * e)
        .collect();
    Tensor::from_vec(mu.shape(), data)
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// A minibatch in tensor form.
struct Batch {
    cf: Tensor,
    ci: Tensor,
    tokens: Vec<Vec<usize>>,
}

impl Batch {
    fn from_triplets(triplets: &[&Triplet]) -> Self {
        let b = triplets.len();
        let mut cf = Vec::with_capacity(b * 9);
        let mut ci = Vec::with_capacity(b * 9);
        let mut tokens = Vec::with_capacity(b);
        for t in triplets {
            cf.extend_from_slice(&t.c_f.to_f64());
            ci.extend_from_slice(&t.c_i.to_f64());
            tokens.push(t.sentence.tokens.clone());
        }
        Batch {
            cf: Tensor::from_vec(&[b, 9], cf),
            ci: Tensor::from_vec(&[b, 9], ci),
            tokens,
        }
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// Everything the backward pass needs from one batch forward pass. The
/// embedding matrix and latent draws live on inside `x_enc`/`x_dec`.
struct Forward {
    traces: Vec<RnnTrace>,
    x_enc: Tensor,
    e1p: Tensor,
    e1: Tensor,
    e2p: Tensor,
    e2: Tensor,
    mu: Tensor,
    lv_raw: Tensor,
    lv: Tensor,
    x_dec: Tensor,
    d1p: Tensor,
    d1: Tensor,
    d2p: Tensor,
    d2: Tensor,
    d3p: Tensor,
    probs: Tensor,
    bce: f64,
    kl: f64,
}

impl Forward {
    fn total(&self, beta: f64) -> f64 {
        self.bce + beta * self.kl
    }
}

fn hstack(parts: &[&Tensor]) -> Tensor {
    let rows = parts[0].shape()[0];
    let width: usize = parts.iter().map(|p| p.shape()[1]).sum();
    let mut out = Vec::with_capacity(rows * width);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row(r));
        }
    }
    Tensor::from_vec(&[rows, width], out)
}

fn hsplit(t: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let rows = t.shape()[0];
    assert_eq!(widths.iter().sum::<usize>(), t.shape()[1]);
    let mut parts: Vec<Tensor> = widths.iter().map(|w| Tensor::zeros(&[rows, *w])).collect();
    for r in 0..rows {
        let mut offset = 0;
        for (part, w) in parts.iter_mut().zip(widths) {
            let src = &t.row(r)[offset..offset + w];
            part.data_mut()[r * w..(r + 1) * w].copy_from_slice(src);
            offset += w;
        }
    }
    parts
}

/// Forward pass of the composite loss over one batch with externally-drawn
/// noise `eps [B, latent]`; pure in the parameters.
fn batch_forward(params: &ParamStore, hp: &Hyperparams, batch: &Batch, eps: &Tensor) -> Forward {
    let b = batch.len();
    let mut s_emb = Tensor::zeros(&[b, hp.embed]);
    let mut traces = Vec::with_capacity(b);
    for (r, tokens) in batch.tokens.iter().enumerate() {
        let (h, trace) = rnn_forward(
            tokens,
            params.get("embed"),
            params.get("rnn.wx"),
            params.get("rnn.wh"),
            params.get("rnn.b"),
        )
        .expect("instruction sentences are nonempty");
        s_emb.data_mut()[r * hp.embed..(r + 1) * hp.embed].copy_from_slice(h.data());
        traces.push(trace);
    }

    let x_enc = hstack(&[&batch.cf, &batch.ci, &s_emb]);
    let e1p = linear(&x_enc, params.get("enc.w1"), params.get("enc.b1")).expect("fixed widths");
    let e1 = relu(&e1p);
    let e2p = linear(&e1, params.get("enc.w2"), params.get("enc.b2")).expect("fixed widths");
    let e2 = relu(&e2p);
    let mu = linear(&e2, params.get("enc.mu_w"), params.get("enc.mu_b")).expect("fixed widths");
    let lv_raw = linear(&e2, params.get("enc.lv_w"), params.get("enc.lv_b")).expect("fixed widths");
    let mut lv = lv_raw.clone();
    for v in lv.data_mut() {
        *v = v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
    }

    let z = reparameterize_with(&mu, &lv, eps);
    let x_dec = hstack(&[&z, &batch.ci, &s_emb]);
    let d1p = linear(&x_dec, params.get("dec.w1"), params.get("dec.b1")).expect("fixed widths");
    let d1 = relu(&d1p);
    let d2p = linear(&d1, params.get("dec.w2"), params.get("dec.b2")).expect("fixed widths");
    let d2 = relu(&d2p);
    let d3p = linear(&d2, params.get("dec.w3"), params.get("dec.b3")).expect("fixed widths");
    let probs = sigmoid(&d3p);

    let bce = bce_loss(&probs, &batch.cf).expect("shapes agree");
    let kl = kl_loss(&mu, &lv).expect("shapes agree");
    Forward {
        traces, x_enc, e1p, e1, e2p, e2, mu, lv_raw, lv, x_dec, d1p, d1, d2p, d2, d3p, probs,
        bce, kl,
    }
}

/// Accumulates the gradients of `bce + beta * kl` into `params`.
fn batch_backward(params: &mut ParamStore, hp: &Hyperparams, batch: &Batch, eps: &Tensor, fwd: &Forward) {
    let beta = hp.beta;

    // Decoder.
    let d_probs = bce_backward(&fwd.probs, &batch.cf);
    let d_d3p = sigmoid_backward(&fwd.d3p, &d_probs);
    let (d_d2, d_w3, d_b3) = linear_backward(&fwd.d2, params.get("dec.w3"), &d_d3p);
    params.add_grad("dec.w3", &d_w3);
    params.add_grad("dec.b3", &d_b3);
    let d_d2p = relu_backward(&fwd.d2p, &d_d2);
    let (d_d1, d_w2, d_b2) = linear_backward(&fwd.d1, params.get("dec.w2"), &d_d2p);
    params.add_grad("dec.w2", &d_w2);
    params.add_grad("dec.b2", &d_b2);
    let d_d1p = relu_backward(&fwd.d1p, &d_d1);
    let (d_xdec, d_w1, d_b1) = linear_backward(&fwd.x_dec, params.get("dec.w1"), &d_d1p);
    params.add_grad("dec.w1", &d_w1);
    params.add_grad("dec.b1", &d_b1);
    let dec_split = hsplit(&d_xdec, &[hp.latent, 9, hp.embed]);
    let d_z = &dec_split[0];
    let d_semb_dec = &dec_split[2];

    // Through the reparameterization and the KL term.
    let (kl_mu, kl_lv) = kl_backward(&fwd.mu, &fwd.lv);
    let mut d_mu = d_z.clone();
    for (g, k) in d_mu.data_mut().iter_mut().zip(kl_mu.data()) {
        *g += beta * k;
    }
    // dz/d logvar = ε · exp(logvar/2) / 2; the clamp zeroes saturated dims.
    let mut d_lv_raw = Tensor::zeros(fwd.lv.shape());
    for i in 0..d_lv_raw.len() {
        let through_z = d_z.data()[i] * eps.data()[i] * (fwd.lv.data()[i] / 2.0).exp() / 2.0;
        let total = through_z + beta * kl_lv.data()[i];
        d_lv_raw.data_mut()[i] =
            if fwd.lv_raw.data()[i].abs() < LOGVAR_CLAMP { total } else { 0.0 };
    }

    // Encoder heads and trunk.
    let (d_e2_mu, d_mu_w, d_mu_b) = linear_backward(&fwd.e2, params.get("enc.mu_w"), &d_mu);
    params.add_grad("enc.mu_w", &d_mu_w);
    params.add_grad("enc.mu_b", &d_mu_b);
    let (d_e2_lv, d_lv_w, d_lv_b) = linear_backward(&fwd.e2, params.get("enc.lv_w"), &d_lv_raw);
    params.add_grad("enc.lv_w", &d_lv_w);
    params.add_grad("enc.lv_b", &d_lv_b);
    let mut d_e2 = d_e2_mu;
    for (a, b) in d_e2.data_mut().iter_mut().zip(d_e2_lv.data()) {
        *a += b;
    }
    let d_e2p = relu_backward(&fwd.e2p, &d_e2);
    let (d_e1, d_ew2, d_eb2) = linear_backward(&fwd.e1, params.get("enc.w2"), &d_e2p);
    params.add_grad("enc.w2", &d_ew2);
    params.add_grad("enc.b2", &d_eb2);
    let d_e1p = relu_backward(&fwd.e1p, &d_e1);
    let (d_xenc, d_ew1, d_eb1) = linear_backward(&fwd.x_enc, params.get("enc.w1"), &d_e1p);
    params.add_grad("enc.w1", &d_ew1);
    params.add_grad("enc.b1", &d_eb1);
    let enc_split = hsplit(&d_xenc, &[9, 9, hp.embed]);
    let d_semb_enc = &enc_split[2];

    // Sentence embeddings feed both networks; backpropagate the summed
    // gradient through each sample's recurrence.
    for (r, tokens) in batch.tokens.iter().enumerate() {
        let mut d_h = Vec::with_capacity(hp.embed);
        for i in 0..hp.embed {
            d_h.push(d_semb_enc.row(r)[i] + d_semb_dec.row(r)[i]);
        }
        let grads = rnn_backward(
            tokens,
            params.get("embed"),
            params.get("rnn.wx"),
            params.get("rnn.wh"),
            &fwd.traces[r],
            &Tensor::from_vec(&[hp.embed], d_h),
        );
        params.add_grad("rnn.wx", &grads.d_wx);
        params.add_grad("rnn.wh", &grads.d_wh);
        params.add_grad("rnn.b", &grads.d_b);
        params.add_grad_rows("embed", &grads.d_embed_rows);
    }
}

/// Per-epoch mean losses, one JSON object per line when exported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_bce: f64,
    pub mean_kl: f64,
    pub mean_total: f64,
}

/// A trained model together with its training curve.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub model: CVAEModel,
    pub log: Vec<EpochStats>,
}

/// Trains a fresh model on the triplets: `epochs` passes over shuffled
/// minibatches (remainder kept), Adam on `bce + beta * kl`. Deterministic in
/// `hp.seed`.
pub fn train(data: &[Triplet], hp: &Hyperparams) -> TrainRun {
    assert!(!data.is_empty(), "training data must be nonempty");
    hp.validate().expect("hyperparameters must be valid");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = CVAEModel::new(hp, &mut rng);
    let mut adam = AdamState::new(&model.params, hp.lr);

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut log = Vec::with_capacity(hp.epochs);
    for epoch in 0..hp.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let (mut sum_bce, mut sum_kl) = (0.0, 0.0);
        for chunk in order.chunks(hp.batch) {
            let triplets: Vec<&Triplet> = chunk.iter().map(|i| &data[*i]).collect();
            let batch = Batch::from_triplets(&triplets);
            let eps = standard_normal(&[batch.len(), hp.latent], &mut rng);
            let fwd = batch_forward(&model.params, hp, &batch, &eps);
            sum_bce += fwd.bce * batch.len() as f64;
            sum_kl += fwd.kl * batch.len() as f64;
            model.params.zero_grads();
            batch_backward(&mut model.params, hp, &batch, &eps, &fwd);
            adam_step(&mut model.params, &mut adam).expect("state covers all params");
        }
        let n = data.len() as f64;
        log.push(EpochStats {
            epoch,
            mean_bce: sum_bce / n,
            mean_kl: sum_kl / n,
            mean_total: (sum_bce + hp.beta * sum_kl) / n,
        });
    }
    TrainRun { model, log }
}

/// Runs the composite loss and its backward over `data` as one batch, then
/// sweeps the analytic gradients against central finite differences
/// ([`gradient_check_sampled`] semantics; `usize::MAX` checks every
/// coordinate).
pub fn check_gradients(
    model: &mut CVAEModel,
    data: &[Triplet],
    noise_seed: u64,
    tolerance: f64,
    max_per_tensor: usize,
) -> GradCheckReport {
    assert!(!data.is_empty(), "need at least one triplet");
    let hp = model.hp;
    let triplets: Vec<&Triplet> = data.iter().collect();
    let batch = Batch::from_triplets(&triplets);
    let eps = standard_normal(
        &[batch.len(), hp.latent],
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed),
    );

    model.params.zero_grads();
    let fwd = batch_forward(&model.params, &hp, &batch, &eps);
    batch_backward(&mut model.params, &hp, &batch, &eps, &fwd);
    gradient_check_sampled(
        &mut model.params,
        |p| batch_forward(p, &hp, &batch, &eps).total(hp.beta),
        tolerance,
        max_per_tensor,
    )
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Weight file format version this build reads and writes.
pub const FORMAT_VERSION: u8 = 1;

const MAGIC: &[u8; 4] = b"CVAE";
const DTYPE_F64: u8 = 1;

/// Loading or validating a weight file failed.
#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u8),
    #[error("checksum mismatch: header says {expected:#010x}, payload hashes to {found:#010x}")]
    ChecksumMismatch { expected: u32, found: u32 },
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),
}

fn push_section(payload: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
    payload.extend_from_slice(name.as_bytes());
    payload.push(DTYPE_F64);
    payload.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
    for d in tensor.shape() {
        payload.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    for v in tensor.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

impl CVAEModel {
    /// Serializes the model: magic, version byte, CRC32 of the payload, then
    /// named tensor sections (hyperparameters ride along as scalar
    /// sections; the seed is stored through its raw bit pattern).
    pub fn save_to_bytes(&self) -> Vec<u8> {
        let hp = &self.hp;
        let scalars: [(&str, f64); 9] = [
            ("hp.hidden", hp.hidden as f64),
            ("hp.latent", hp.latent as f64),
            ("hp.embed", hp.embed as f64),
            ("hp.beta", hp.beta),
            ("hp.lr", hp.lr),
            ("hp.batch", hp.batch as f64),
            ("hp.epochs", hp.epochs as f64),
            ("hp.seed", f64::from_bits(hp.seed)),
            ("hp.vocab_len", self.vocab.len() as f64),
        ];
        let mut payload = Vec::new();
        payload.extend_from_slice(&((scalars.len() + PARAM_NAMES.len()) as u32).to_le_bytes());
        for (name, value) in scalars {
            push_section(&mut payload, name, &Tensor::from_vec(&[1], vec![value]));
        }
        for name in PARAM_NAMES {
            push_section(&mut payload, name, self.params.get(name));
        }

        let mut out = Vec::with_capacity(payload.len() + 9);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        std::fs::write(path, self.save_to_bytes())?;
        Ok(())
    }

    /// Parses a weight file. Every byte is validated: magic, version,
    /// checksum, section structure, then the exact expected tensor set with
    /// the shapes the stored hyperparameters dictate.
    pub fn load_from_bytes(bytes: &[u8]) -> Result<Self, ModelFileError> {
        if bytes.len() < 4 || &bytes[..4] != MAGIC {
            return Err(ModelFileError::BadMagic);
        }
        if bytes.len() < 9 {
            return Err(ModelFileError::Malformed("truncated header"));
        }
        if bytes[4] != FORMAT_VERSION {
            return Err(ModelFileError::UnsupportedVersion(bytes[4]));
        }
        let expected = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let payload = &bytes[9..];
        let found = crc32fast::hash(payload);
        if expected != found {
            return Err(ModelFileError::ChecksumMismatch { expected, found });
        }

        let mut sections = parse_sections(payload)?;
        let hp = read_hyperparams(&mut sections)?;
        let vocab = instruction_set().vocab().clone();
        let vocab_len = take_scalar(&mut sections, "hp.vocab_len")?;
        if vocab_len != vocab.len() as f64 {
            return Err(ModelFileError::MetadataMismatch(format!(
                "vocabulary length {vocab_len} != canonical {}",
                vocab.len(),
            )));
        }

        let (v, e, h, l) = (vocab.len(), hp.embed, hp.hidden, hp.latent);
        let expected_shapes: [(&str, Vec<usize>); 18] = [
            ("embed", vec![v, e]),
            ("rnn.wx", vec![e, e]),
            ("rnn.wh", vec![e, e]),
            ("rnn.b", vec![e]),
            ("enc.w1", vec![hp.encoder_in(), h]),
            ("enc.b1", vec![h]),
            ("enc.w2", vec![h, h]),
            ("enc.b2", vec![h]),
            ("enc.mu_w", vec![h, l]),
            ("enc.mu_b", vec![l]),
            ("enc.lv_w", vec![h, l]),
            ("enc.lv_b", vec![l]),
            ("dec.w1", vec![hp.decoder_in(), h]),
            ("dec.b1", vec![h]),
            ("dec.w2", vec![h, h]),
            ("dec.b2", vec![h]),
            ("dec.w3", vec![h, 9]),
            ("dec.b3", vec![9]),
        ];
        let mut params = ParamStore::new();
        for (name, shape) in expected_shapes {
            let tensor = sections
                .remove(name)
                .ok_or(ModelFileError::Malformed("missing parameter section"))?;
            if tensor.shape() != shape {
                return Err(ModelFileError::MetadataMismatch(format!(
                    "section {name:?} has shape {:?}, expected {shape:?}",
                    tensor.shape(),
                )));
            }
            params.insert(name, tensor);
        }
        if !sections.is_empty() {
            return Err(ModelFileError::Malformed("unexpected extra sections"));
        }
        Ok(CVAEModel { vocab, hp, params })
    }

    pub fn load(path: &Path) -> Result<Self, ModelFileError> {
        Self::load_from_bytes(&std::fs::read(path)?)
    }
}

fn take<'a>(payload: &'a [u8], cursor: &mut usize, n: usize) -> Result<&'a [u8], ModelFileError> {
    let end = cursor.checked_add(n).ok_or(ModelFileError::Malformed("length overflow"))?;
    if end > payload.len() {
        return Err(ModelFileError::Malformed("truncated section"));
    }
    let slice = &payload[*cursor..end];
    *cursor = end;
    Ok(slice)
}

fn take_u32(payload: &[u8], cursor: &mut usize) -> Result<u32, ModelFileError> {
    Ok(u32::from_le_bytes(take(payload, cursor, 4)?.try_into().unwrap()))
}

fn parse_sections(payload: &[u8]) -> Result<HashMap<String, Tensor>, ModelFileError> {
    use ModelFileError::Malformed;
    let mut cursor = 0usize;
    let n_sections = take_u32(payload, &mut cursor)?;
    if n_sections as usize > 10_000 {
        return Err(Malformed("implausible section count"));
    }
    let mut sections = HashMap::new();
    for _ in 0..n_sections {
        let name_len = take_u32(payload, &mut cursor)? as usize;
        if name_len > 1024 {
            return Err(Malformed("implausible section name length"));
        }
        let name = std::str::from_utf8(take(payload, &mut cursor, name_len)?)
            .map_err(|_| Malformed("section name is not utf-8"))?
            .to_string();
        if take(payload, &mut cursor, 1)?[0] != DTYPE_F64 {
            return Err(Malformed("unknown dtype tag"));
        }
        let rank = take_u32(payload, &mut cursor)? as usize;
        if rank > 8 {
            return Err(Malformed("implausible tensor rank"));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count = 1usize;
        for _ in 0..rank {
            let dim = take_u32(payload, &mut cursor)? as usize;
            count = count.checked_mul(dim).ok_or(Malformed("shape overflow"))?;
            shape.push(dim);
        }
        if count > payload.len() / 8 + 1 {
            return Err(Malformed("tensor larger than payload"));
        }
        let raw = take(payload, &mut cursor, count * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if sections.insert(name, Tensor::from_vec(&shape, data)).is_some() {
            return Err(Malformed("duplicate section name"));
        }
    }
    if cursor != payload.len() {
        return Err(Malformed("trailing bytes after sections"));
    }
    Ok(sections)
}

fn take_scalar(
    sections: &mut HashMap<String, Tensor>,
    name: &str,
) -> Result<f64, ModelFileError> {
    let t = sections
        .remove(name)
        .ok_or(ModelFileError::Malformed("missing hyperparameter section"))?;
    if t.len() != 1 {
        return Err(ModelFileError::Malformed("hyperparameter section is not scalar"));
    }
    Ok(t.data()[0])
}

fn take_count(sections: &mut HashMap<String, Tensor>, name: &str) -> Result<usize, ModelFileError> {
    let v = take_scalar(sections, name)?;
    if !v.is_finite() || v.fract() != 0.0 || !(1.0..=1e9).contains(&v) {
        return Err(ModelFileError::MetadataMismatch(format!("{name} = {v} is not a count")));
    }
    Ok(v as usize)
}

fn read_hyperparams(sections: &mut HashMap<String, Tensor>) -> Result<Hyperparams, ModelFileError> {
    let hp = Hyperparams {
        hidden: take_count(sections, "hp.hidden")?,
        latent: take_count(sections, "hp.latent")?,
        embed: take_count(sections, "hp.embed")?,
        beta: take_scalar(sections, "hp.beta")?,
        lr: take_scalar(sections, "hp.lr")?,
        batch: take_count(sections, "hp.batch")?,
        epochs: take_count(sections, "hp.epochs")?,
        seed: take_scalar(sections, "hp.seed")?.to_bits(),
    };
    hp.validate().map_err(|e| ModelFileError::MetadataMismatch(e.to_string()))?;
    // Sanity bound: dimensions anywhere near the u32 shape limit would make
    // section shapes inconsistent long before memory became a problem.
    if hp.hidden > 1 << 20 || hp.latent > 1 << 20 || hp.embed > 1 << 20 {
        return Err(ModelFileError::MetadataMismatch("dimensions out of range".into()));
    }
    Ok(hp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_dataset;
    use crate::semantics::valid_configs;
    use rand_chacha::ChaCha8Rng;

    fn small_hp() -> Hyperparams {
        Hyperparams { hidden: 16, latent: 6, embed: 10, batch: 32, epochs: 4, ..Default::default() }
    }

    #[test]
    fn default_model_has_the_documented_widths() {
        let hp = Hyperparams::default();
        assert_eq!(hp.encoder_in(), 118);
        assert_eq!(hp.decoder_in(), 136);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = CVAEModel::new(&hp, &mut rng);
        assert_eq!(model.params().get("enc.w1").shape(), [118, 128]);
        assert_eq!(model.params().get("dec.w1").shape(), [136, 128]);
        assert_eq!(model.params().get("embed").shape(), [22, 100]);
        assert_eq!(model.params().n_scalars(), 96_219);
    }

    #[test]
    fn hyperparams_are_range_checked() {
        assert!(Hyperparams::default().validate().is_ok());
        let bad = Hyperparams { beta: 0.0, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().name, "beta");
        let bad = Hyperparams { epochs: 0, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().name, "epochs");
        let bad = Hyperparams { lr: f64::NAN, ..Default::default() };
        assert_eq!(bad.validate().unwrap_err().name, "lr");
    }

    #[test]
    fn zeroed_model_encodes_to_its_head_biases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = CVAEModel::new(&small_hp(), &mut rng);
        for name in PARAM_NAMES {
            model.params.get_mut(name).data_mut().fill(0.0);
        }
        model.params.get_mut("enc.mu_b").data_mut().fill(0.25);
        model.params.get_mut("enc.lv_b").data_mut().fill(-0.5);

        let c = valid_configs()[0];
        let (mu, lv) = model.encode(&c, &c, "put red close_to green").unwrap();
        assert_eq!(mu.data(), &[0.25; 6]);
        assert_eq!(lv.data(), &[-0.5; 6]);
    }

    #[test]
    fn encode_and_decode_are_deterministic_and_shaped() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = CVAEModel::new(&small_hp(), &mut rng);
        let c_i = valid_configs()[3];
        let c_f = valid_configs()[10];
        let (mu, lv) = model.encode(&c_f, &c_i, "put blue on_top_of green").unwrap();
        assert_eq!(mu.shape(), [6]);
        assert_eq!(lv.shape(), [6]);
        let again = model.encode(&c_f, &c_i, "put blue on_top_of green").unwrap();
        assert_eq!((mu.clone(), lv.clone()), again);

        let probs = model.decode(&mu, &c_i, "put blue on_top_of green").unwrap();
        assert_eq!(probs.shape(), [9]);
        assert!(probs.data().iter().all(|p| *p > 0.0 && *p < 1.0));
        assert_eq!(model.decode(&mu, &c_i, "put blue on_top_of green").unwrap(), probs);

        let err = model.encode(&c_f, &c_i, "put red onto green").unwrap_err();
        assert_eq!(err, UnknownTokenError("onto".into()));
    }

    #[test]
    fn reparameterization_follows_the_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = Tensor::from_vec(&[8], vec![1.5; 8]);
        let lv = Tensor::from_vec(&[8], vec![-LOGVAR_CLAMP; 8]);
        let z = reparameterize(&mu, &lv, &mut rng);
        for v in z.data() {
            // exp(-10/2) ≈ 6.7e-3 scales the unit noise down to near mu.
            assert!((v - 1.5).abs() <= 6.0 * (-5.0_f64).exp(), "z strays from mu: {v}");
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = 27;
        let n = 10_000;
        let mu = Tensor::zeros(&[dims]);
        let lv = Tensor::zeros(&[dims]);
        let mut sums = vec![0.0; dims];
        let mut sq = vec![0.0; dims];
        for _ in 0..n {
            let z = reparameterize(&mu, &lv, &mut rng);
            for (i, v) in z.data().iter().enumerate() {
                sums[i] += v;
                sq[i] += v * v;
            }
        }
        for i in 0..dims {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            assert!(mean.abs() < 0.05, "dim {i} mean {mean}");
            assert!((0.9..1.1).contains(&var), "dim {i} var {var}");
        }

        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(reparameterize(&mu, &lv, &mut a), reparameterize(&mu, &lv, &mut b));
    }

    #[test]
    fn sampling_yields_reproducible_well_formed_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let model = CVAEModel::new(&small_hp(), &mut rng);
        let c_i = valid_configs()[0];
        let mut draw_rng = ChaCha8Rng::seed_from_u64(7);
        let goals = model.sample_goals(&c_i, "put green far_from blue", 100, &mut draw_rng).unwrap();
        assert_eq!(goals.len(), 100);

        let mut draw_rng = ChaCha8Rng::seed_from_u64(7);
        let again = model.sample_goals(&c_i, "put green far_from blue", 100, &mut draw_rng).unwrap();
        assert_eq!(goals, again);
    }

    #[test]
    fn untrained_model_handles_every_sentence_and_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = CVAEModel::new(&small_hp(), &mut rng);
        let mut draw_rng = ChaCha8Rng::seed_from_u64(9);
        for sentence in instruction_set().sentences() {
            for c_i in valid_configs() {
                let goals = model.sample_goals_tokens(c_i, &sentence.tokens, 1, &mut draw_rng);
                assert_eq!(goals.len(), 1);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_exhaustively_at_small_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let hp = Hyperparams { hidden: 8, latent: 4, embed: 6, ..Default::default() };
        let mut model = CVAEModel::new(&hp, &mut rng);
        let data = generate_dataset(4, &mut rng);
        let report = check_gradients(&mut model, &data, 11, 1e-4, usize::MAX);
        assert!(report.passed, "{report}");
        assert_eq!(report.n_checked, model.params().n_scalars());
    }

    #[test]
    fn gradients_match_finite_differences_at_full_width_on_a_stride() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut model = CVAEModel::new(&Hyperparams::default(), &mut rng);
        let data = generate_dataset(4, &mut rng);
        let report = check_gradients(&mut model, &data, 13, 1e-4, 6);
        assert!(report.passed, "{report}");
        assert_eq!(report.n_checked, 18 * 6, "six coordinates from each of the 18 tensors");
    }

    #[test]
    fn training_reduces_the_loss_and_is_bitwise_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let data = generate_dataset(256, &mut rng);
        let hp = Hyperparams { epochs: 6, lr: 3e-3, ..small_hp() };
        let run = train(&data, &hp);
        assert_eq!(run.log.len(), 6);
        let first = run.log.first().unwrap().mean_total;
        let last = run.log.last().unwrap().mean_total;
        assert!(last < first, "loss should fall: {first} -> {last}");
        for s in &run.log {
            assert!(s.mean_bce.is_finite() && s.mean_kl >= 0.0);
            assert!((s.mean_total - (s.mean_bce + hp.beta * s.mean_kl)).abs() < 1e-9);
        }

        let rerun = train(&data, &hp);
        for name in PARAM_NAMES {
            assert_eq!(
                run.model.params().get(name).data(),
                rerun.model.params().get(name).data(),
                "{name} differs between identical runs",
            );
        }
    }

    #[test]
    fn model_files_round_trip_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let hp = Hyperparams { seed: u64::MAX - 7, ..small_hp() };
        let model = CVAEModel::new(&hp, &mut rng);
        let bytes = model.save_to_bytes();
        let back = CVAEModel::load_from_bytes(&bytes).unwrap();
        assert_eq!(back.hyperparams(), &hp, "seed survives through its bit pattern");
        for name in PARAM_NAMES {
            assert_eq!(model.params().get(name), back.params().get(name));
        }
        assert_eq!(back.save_to_bytes(), bytes, "re-serialization is identical");

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        let loaded = CVAEModel::load(&path).unwrap();
        assert_eq!(loaded.save_to_bytes(), bytes);
    }

    #[test]
    fn corrupted_model_files_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let model = CVAEModel::new(&small_hp(), &mut rng);
        let bytes = model.save_to_bytes();

        let truncated = &bytes[..bytes.len() - 100];
        assert!(matches!(
            CVAEModel::load_from_bytes(truncated),
            Err(ModelFileError::ChecksumMismatch { .. }),
        ));

        let mut flipped = bytes.clone();
        let mid = flipped.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(matches!(
            CVAEModel::load_from_bytes(&flipped),
            Err(ModelFileError::ChecksumMismatch { .. }),
        ));

        let mut wrong_version = bytes.clone();
        wrong_version[4] = 9;
        assert!(matches!(
            CVAEModel::load_from_bytes(&wrong_version),
            Err(ModelFileError::UnsupportedVersion(9)),
        ));

        assert!(matches!(
            CVAEModel::load_from_bytes(b"WXYZ rest"),
            Err(ModelFileError::BadMagic),
        ));
        assert!(matches!(CVAEModel::load_from_bytes(b"CV"), Err(ModelFileError::BadMagic)));
    }
}
