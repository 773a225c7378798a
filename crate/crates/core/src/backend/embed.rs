use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tokenize::{ToyTokenizer, Vocabulary};
use super::{
    check_request, Backend, BackendCapabilities, DifferentiableBackend, EmbeddingBlock,
    EncoderInput, EncoderSegment, TokenId, TokenizedText,
};
use crate::error::{Error, Result};

/// Hyper-parameters of [`EmbeddingToyBackend`]. All frozen tables are drawn
/// from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingToyParams {
    /// Total vocabulary size including `<sep>` and `<unk>`. Ignored when
    /// `words` is given.
    pub vocab_size: usize,
    /// Explicit word list. Defaults to `w0, w1, ...`.
    pub words: Option<Vec<String>>,
    pub dim: usize,
    pub copy_mass: f64,
    /// Scale of the context term in the generation logits.
    pub context_gain: f64,
    /// Standard deviation of the language-prior logits.
    pub prior_scale: f64,
    /// Scale of the attention query.
    pub attention_scale: f64,
    pub max_encoder_length: usize,
    pub seed: u64,
}

impl Default for EmbeddingToyParams {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            words: None,
            dim: 16,
            copy_mass: 0.6,
            context_gain: 1.0,
            prior_scale: 2.0,
            attention_scale: 1.0,
            max_encoder_length: 1024,
            seed: 0,
        }
    }
}

impl EmbeddingToyParams {
    /// Names of the generated vocabulary, `w{i}`.
    pub fn synthetic_word(i: usize) -> String {
        format!("w{i}")
    }

    fn validate(&self) -> Result<()> {
        if !(self.copy_mass > 0.0 && self.copy_mass < 1.0) {
            return Err(Error::config(format!(
                "copy_mass must lie in (0, 1), got {}",
                self.copy_mass
            )));
        }
        if self.dim == 0 {
            return Err(Error::config("dim must be positive"));
        }
        if self.words.is_none() && self.vocab_size < 3 {
            return Err(Error::config("vocab_size must be at least 3"));
        }
        if self.max_encoder_length == 0 {
            return Err(Error::config("max_encoder_length must be at least 1"));
        }
        Ok(())
    }
}

/// Attention/copy model over a frozen embedding table.
///
/// For encoder rows `h_1..h_L` (token embeddings or injected vectors):
///
/// ```text
/// a      = softmax_j(u · h_j)
/// c      = mean_j h_j
/// g      = softmax_v(b_v + γ · E_v · c)
/// P(y)   = λ Σ_{j copyable, x_j = y} a_j + (λ · A_free + 1 − λ) · g_y
/// ```
///
/// Token positions copy their own id; injected rows and the separator copy
/// nothing and hand their attention mass `A_free` to the generator `g`.
/// Every target position is scored against the same distribution.
#[derive(Debug)]
pub struct EmbeddingToyBackend {
    params: EmbeddingToyParams,
    tokenizer: ToyTokenizer,
    vocab_size: usize,
    dim: usize,
    embeddings: Vec<f64>,
    prior: Vec<f64>,
    query: Vec<f64>,
}

enum RowKind {
    Copy(TokenId),
    Free(Option<(usize, usize)>),
}

struct Forward {
    attention: Vec<f64>,
    generator: Vec<f64>,
    free_mass: f64,
    probs: Vec<f64>,
}

impl EmbeddingToyBackend {
    pub fn new(params: EmbeddingToyParams) -> Result<Self> {
        params.validate()?;
        let vocab = match &params.words {
            Some(words) => Vocabulary::closed(words.iter().cloned()),
            None => Vocabulary::closed((0..params.vocab_size - 2).map(EmbeddingToyParams::synthetic_word)),
        };
        let vocab_size = vocab.len();
        let dim = params.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };

        let row_scale = 1.0 / (dim as f64).sqrt();
        let embeddings: Vec<f64> = (0..vocab_size * dim).map(|_| normal() * row_scale).collect();

        // The prior lives along one hidden direction of the embedding space.
        let mut direction: Vec<f64> = (0..dim).map(|_| normal()).collect();
        let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
        direction.iter_mut().for_each(|x| *x /= norm);
        let prior = (0..vocab_size)
            .map(|v| {
                let row = &embeddings[v * dim..(v + 1) * dim];
                params.prior_scale * (dim as f64).sqrt() * dot(row, &direction)
            })
            .collect();

        let query = (0..dim)
            .map(|_| normal() * params.attention_scale)
            .collect();

        Ok(Self {
            tokenizer: ToyTokenizer::new(vocab),
            vocab_size,
            dim,
            embeddings,
            prior,
            query,
            params,
        })
    }

    pub fn params(&self) -> &EmbeddingToyParams {
        &self.params
    }

    pub fn prior_logit(&self, id: TokenId) -> f64 {
        self.prior[id as usize]
    }

    fn embedding(&self, id: TokenId) -> &[f64] {
        let i = id as usize;
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    fn rows<'a>(&'a self, input: &'a EncoderInput) -> (Vec<&'a [f64]>, Vec<RowKind>) {
        let sep = self.separator();
        let mut rows = Vec::with_capacity(input.len());
        let mut kinds = Vec::with_capacity(input.len());
        for (s, seg) in input.segments().iter().enumerate() {
            match seg {
                EncoderSegment::Tokens(ids) => {
                    for &id in ids {
                        rows.push(self.embedding(id));
                        kinds.push(if id == sep {
                            RowKind::Free(None)
                        } else {
                            RowKind::Copy(id)
                        });
                    }
                }
                EncoderSegment::Embeddings(block) => {
                    for r in 0..block.rows() {
                        rows.push(block.row(r));
                        kinds.push(RowKind::Free(Some((s, r))));
                    }
                }
            }
        }
        (rows, kinds)
    }

    fn forward(&self, rows: &[&[f64]], kinds: &[RowKind]) -> Result<Forward> {
        if rows.is_empty() {
            return Err(Error::shape("encoder input is empty"));
        }
        let scores: Vec<f64> = rows.iter().map(|h| dot(h, &self.query)).collect();
        let attention = softmax(&scores);

        let mut context = vec![0.0; self.dim];
        for h in rows {
            for (c, x) in context.iter_mut().zip(h.iter()) {
                *c += x;
            }
        }
        let inv_len = 1.0 / rows.len() as f64;
        context.iter_mut().for_each(|c| *c *= inv_len);

        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|v| self.prior[v] + self.params.context_gain * dot(self.embedding(v as TokenId), &context))
            .collect();
        let generator = softmax(&logits);

        let mut copy = vec![0.0; self.vocab_size];
        let mut free_mass = 0.0;
        for (a, kind) in attention.iter().zip(kinds) {
            match kind {
                RowKind::Copy(id) => copy[*id as usize] += a,
                RowKind::Free(_) => free_mass += a,
            }
        }
        let lambda = self.params.copy_mass;
        let keep = lambda * free_mass + 1.0 - lambda;
        let probs = copy
            .iter()
            .zip(&generator)
            .map(|(m, g)| lambda * m + keep * g)
            .collect();
        Ok(Forward {
            attention,
            generator,
            free_mass,
            probs,
        })
    }
}

impl Backend for EmbeddingToyBackend {
    fn name(&self) -> &str {
        "toy-embedding"
    }

    fn capabilities(&self) -> BackendCapabilities {
        BackendCapabilities {
            vocab_size: self.vocab_size,
            max_encoder_length: self.params.max_encoder_length,
            supports_embedding_injection: true,
            supports_gradients: true,
            thread_safe: true,
        }
    }

    fn tokenize(&self, text: &str) -> Result<TokenizedText> {
        self.tokenizer.tokenize(text)
    }

    fn separator(&self) -> TokenId {
        self.tokenizer.separator()
    }

    fn logprobs(&self, input: &EncoderInput, target: &[TokenId]) -> Result<Vec<f64>> {
        check_request(&self.capabilities(), input, target, Some(self.dim))?;
        let (rows, kinds) = self.rows(input);
        let fwd = self.forward(&rows, &kinds)?;
        Ok(target.iter().map(|&t| fwd.probs[t as usize].ln()).collect())
    }

    fn fingerprint(&self) -> String {
        format!("toy-embedding:{}", &self.backbone_checksum()[..16])
    }

    fn differentiable(&self) -> Option<&dyn DifferentiableBackend> {
        Some(self)
    }
}

impl DifferentiableBackend for EmbeddingToyBackend {
    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn token_embedding(&self, id: TokenId) -> Result<Vec<f64>> {
        if id as usize >= self.vocab_size {
            return Err(Error::shape(format!("token id {id} outside vocabulary")));
        }
        Ok(self.embedding(id).to_vec())
    }

    fn logprobs_vjp(
        &self,
        input: &EncoderInput,
        target: &[TokenId],
        weights: &[f64],
    ) -> Result<(Vec<f64>, Vec<EmbeddingBlock>)> {
        check_request(&self.capabilities(), input, target, Some(self.dim))?;
        if weights.len() != target.len() {
            return Err(Error::shape(format!(
                "{} weights for {} target tokens",
                weights.len(),
                target.len()
            )));
        }
        let (rows, kinds) = self.rows(input);
        let fwd = self.forward(&rows, &kinds)?;
        let logprobs: Vec<f64> = target.iter().map(|&t| fwd.probs[t as usize].ln()).collect();

        let lambda = self.params.copy_mass;
        let keep = lambda * fwd.free_mass + 1.0 - lambda;

        // dO/dP(y), accumulated over repeated target tokens.
        let mut upstream = vec![0.0; self.vocab_size];
        for (&t, &w) in target.iter().zip(weights) {
            upstream[t as usize] += w / fwd.probs[t as usize];
        }
        let through_generator: f64 = upstream.iter().zip(&fwd.generator).map(|(r, g)| r * g).sum();

        // Attention branch.
        let grad_attention: Vec<f64> = kinds
            .iter()
            .map(|k| match k {
                RowKind::Copy(id) => lambda * upstream[*id as usize],
                RowKind::Free(_) => lambda * through_generator,
            })
            .collect();
        let mean_grad: f64 = fwd
            .attention
            .iter()
            .zip(&grad_attention)
            .map(|(a, g)| a * g)
            .sum();

        // Generator branch, through the mean-pooled context.
        let mut grad_context = vec![0.0; self.dim];
        for v in 0..self.vocab_size {
            let gs = keep * fwd.generator[v] * (upstream[v] - through_generator);
            if gs != 0.0 {
                for (gc, e) in grad_context.iter_mut().zip(self.embedding(v as TokenId)) {
                    *gc += gs * e;
                }
            }
        }
        let ctx_scale = self.params.context_gain / rows.len() as f64;

        let mut grads: Vec<Option<EmbeddingBlock>> = input
            .segments()
            .iter()
            .map(|s| match s {
                EncoderSegment::Embeddings(b) => Some(EmbeddingBlock::zeros(b.rows(), self.dim)),
                EncoderSegment::Tokens(_) => None,
            })
            .collect();
        for (j, kind) in kinds.iter().enumerate() {
            if let RowKind::Free(Some((s, r))) = kind {
                let dz = fwd.attention[j] * (grad_attention[j] - mean_grad);
                let row = grads[*s].as_mut().expect("embedding segment").row_mut(*r);
                for ((g, q), gc) in row.iter_mut().zip(&self.query).zip(&grad_context) {
                    *g = dz * q + ctx_scale * gc;
                }
            }
        }
        Ok((logprobs, grads.into_iter().flatten().collect()))
    }

    fn backbone_checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.params.copy_mass.to_le_bytes());
        h.update(self.params.context_gain.to_le_bytes());
        for x in self.embeddings.iter().chain(&self.prior).chain(&self.query) {
            h.update(x.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn num_backbone_parameters(&self) -> usize {
        self.embeddings.len() + self.prior.len() + self.query.len()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn backend() -> EmbeddingToyBackend {
        EmbeddingToyBackend::new(EmbeddingToyParams {
            vocab_size: 24,
            dim: 6,
            seed: 7,
            ..Default::default()
        })
        .unwrap()
    }

    fn block(rows: usize, dim: usize, seed: u64) -> EmbeddingBlock {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .map(|x: f64| x * 0.5)
            .collect();
        EmbeddingBlock::new(dim, data).unwrap()
    }

    #[test]
    fn distribution_is_normalized() {
        let b = backend();
        let doc = b.tokenize("w1 w2 w3 w2").unwrap();
        let input = EncoderInput::new()
            .with(EncoderSegment::Embeddings(block(2, 6, 1)))
            .with(EncoderSegment::Tokens(vec![b.separator()]))
            .with(EncoderSegment::Tokens(doc.ids().to_vec()));
        let all: Vec<TokenId> = (0..b.capabilities().vocab_size as TokenId).collect();
        let total: f64 = b.logprobs(&input, &all).unwrap().iter().map(|l| l.exp()).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unknown_words_map_to_unk() {
        let b = backend();
        let t = b.tokenize("w1 nope").unwrap();
        assert_eq!(t.ids()[1], 1);
    }

    #[test]
    fn seed_determines_tables() {
        let a = backend();
        let b = backend();
        assert_eq!(a.backbone_checksum(), b.backbone_checksum());
        let c = EmbeddingToyBackend::new(EmbeddingToyParams {
            vocab_size: 24,
            dim: 6,
            seed: 8,
            ..Default::default()
        })
        .unwrap();
        assert_ne!(a.backbone_checksum(), c.backbone_checksum());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let b = backend();
        let input = EncoderInput::new().with(EncoderSegment::Embeddings(block(1, 5, 0)));
        assert!(matches!(
            b.logprobs(&input, &[2]),
            Err(Error::Dimension { expected: 6, got: 5 })
        ));
    }

    #[test]
    fn vjp_matches_central_differences() {
        let b = backend();
        let doc = b.tokenize("w3 w4 w5 w6 w4").unwrap();
        let target = b.tokenize("w4 w9 w3").unwrap();
        let weights = [0.7, -1.3, 0.4];
        let make = |v: &EmbeddingBlock, w: &EmbeddingBlock| {
            EncoderInput::new()
                .with(EncoderSegment::Embeddings(v.clone()))
                .with(EncoderSegment::Tokens(vec![5, 7, b.separator()]))
                .with(EncoderSegment::Embeddings(w.clone()))
                .with(EncoderSegment::Tokens(doc.ids().to_vec()))
        };
        let v = block(2, 6, 11);
        let w = block(3, 6, 12);
        let (_, grads) = b.logprobs_vjp(&make(&v, &w), target.ids(), &weights).unwrap();
        assert_eq!(grads.len(), 2);
        let objective = |v: &EmbeddingBlock, w: &EmbeddingBlock| -> f64 {
            b.logprobs(&make(v, w), target.ids())
                .unwrap()
                .iter()
                .zip(&weights)
                .map(|(l, w)| l * w)
                .sum()
        };
        let h = 1e-5;
        for i in 0..v.as_slice().len() {
            let (mut p, mut m) = (v.clone(), v.clone());
            p.as_mut_slice()[i] += h;
            m.as_mut_slice()[i] -= h;
            let fd = (objective(&p, &w) - objective(&m, &w)) / (2.0 * h);
            assert_relative_eq!(grads[0].as_slice()[i], fd, epsilon = 1e-7, max_relative = 1e-5);
        }
        for i in 0..w.as_slice().len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p.as_mut_slice()[i] += h;
            m.as_mut_slice()[i] -= h;
            let fd = (objective(&v, &p) - objective(&v, &m)) / (2.0 * h);
            assert_relative_eq!(grads[1].as_slice()[i], fd, epsilon = 1e-7, max_relative = 1e-5);
        }
    }
}
