use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_context, check_token, LanguageModel, TokenDistribution, TokenId};
use crate::policy::log_softmax;
use crate::{Error, Result};

/// Architecture of the windowed feed-forward policy.
///
/// The last `context` tokens are embedded (`embed` dims each), concatenated,
/// passed through one `tanh` hidden layer of width `hidden`, and projected
/// to `vocab` logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PolicyShape {
    pub vocab: usize,
    pub context: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Default for PolicyShape {
    fn default() -> Self {
        PolicyShape {
            vocab: super::tokenizer::VOCAB_SIZE,
            context: 8,
            embed: 32,
            hidden: 128,
        }
    }
}

impl PolicyShape {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 3 || self.context == 0 || self.embed == 0 || self.hidden == 0 {
            return Err(Error::Config(format!("degenerate policy shape {self:?}")));
        }
        Ok(())
    }

    fn input_width(&self) -> usize {
        self.context * self.embed
    }

    /// Offsets of (embedding, hidden weight, hidden bias, output weight, output bias, end).
    fn offsets(&self) -> [usize; 6] {
        let emb = 0;
        let w1 = emb + self.vocab * self.embed;
        let b1 = w1 + self.input_width() * self.hidden;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden * self.vocab;
        let end = b2 + self.vocab;
        [emb, w1, b1, w2, b2, end]
    }

    pub fn param_count(&self) -> usize {
        self.offsets()[5]
    }
}

/// Flat parameter vector with named views.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    shape: PolicyShape,
    values: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(shape: PolicyShape) -> Result<Self> {
        shape.validate()?;
        Ok(PolicyParams {
            shape,
            values: vec![0.0; shape.param_count()],
        })
    }

    /// Uniform initialization in `[-0.05, 0.05]`.
    pub fn init(shape: PolicyShape, seed: u64) -> Result<Self> {
        let mut params = Self::zeros(shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut params.values {
            *v = rng.gen_range(-0.05..=0.05);
        }
        Ok(params)
    }

    pub fn from_values(shape: PolicyShape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.param_count() {
            return Err(Error::Contract(format!(
                "expected {} parameters for {shape:?}, got {}",
                shape.param_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("parameter {i} is not finite")));
        }
        Ok(PolicyParams { shape, values })
    }

    pub fn shape(&self) -> PolicyShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn embedding(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[0]..o[1]]
    }

    pub fn hidden_weight(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[1]..o[2]]
    }

    pub fn hidden_bias(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[2]..o[3]]
    }

    pub fn output_weight(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[3]..o[4]]
    }

    pub fn output_bias(&self) -> &[f64] {
        let o = self.shape.offsets();
        &self.values[o[4]..o[5]]
    }

    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let o = self.shape.offsets();
        &mut self.values[o[4]..o[5]]
    }

    /// Last `context` tokens, left-padded with PAD.
    fn window(&self, context: &[TokenId]) -> Vec<usize> {
        let k = self.shape.context;
        let pad = self.specials().pad as usize;
        let mut window = vec![pad; k.saturating_sub(context.len())];
        let start = context.len().saturating_sub(k);
        window.extend(context[start..].iter().map(|&t| t as usize));
        window
    }

    fn forward(&self, window: &[usize]) -> Activations {
        let s = &self.shape;
        let (emb, w1, b1, w2, b2) = (
            self.embedding(),
            self.hidden_weight(),
            self.hidden_bias(),
            self.output_weight(),
            self.output_bias(),
        );
        let mut hidden = b1.to_vec();
        for (slot, &tok) in window.iter().enumerate() {
            let x = &emb[tok * s.embed..(tok + 1) * s.embed];
            for (i, &xi) in x.iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let row = &w1[(slot * s.embed + i) * s.hidden..][..s.hidden];
                for (h, &w) in hidden.iter_mut().zip(row) {
                    *h += xi * w;
                }
            }
        }
        for h in &mut hidden {
            *h = h.tanh();
        }
        let mut logits = b2.to_vec();
        for (j, &hj) in hidden.iter().enumerate() {
            if hj == 0.0 {
                continue;
            }
            let row = &w2[j * s.vocab..][..s.vocab];
            for (l, &w) in logits.iter_mut().zip(row) {
                *l += hj * w;
            }
        }
        Activations { hidden, logits }
    }

    /// Adds `coef * d log p(target | window) / d theta` to `grad`, reusing a cached forward pass.
    fn backward(
        &self,
        window: &[usize],
        acts: &Activations,
        log_probs: &[f64],
        target: usize,
        coef: f64,
        grad: &mut [f64],
    ) {
        let s = &self.shape;
        let o = s.offsets();
        // d(coef * log p_target) / d logits = coef * (onehot - softmax)
        let dlogits: Vec<f64> = log_probs
            .iter()
            .enumerate()
            .map(|(v, lp)| coef * (f64::from(u8::from(v == target)) - lp.exp()))
            .collect();

        let (head, tail) = grad.split_at_mut(o[3]);
        let (gw2, gb2) = tail.split_at_mut(o[4] - o[3]);
        for (g, d) in gb2.iter_mut().zip(&dlogits) {
            *g += d;
        }
        let w2 = self.output_weight();
        let mut dz = vec![0.0; s.hidden];
        for (j, &hj) in acts.hidden.iter().enumerate() {
            let grow = &mut gw2[j * s.vocab..][..s.vocab];
            let wrow = &w2[j * s.vocab..][..s.vocab];
            let mut dh = 0.0;
            for v in 0..s.vocab {
                grow[v] += hj * dlogits[v];
                dh += wrow[v] * dlogits[v];
            }
            dz[j] = dh * (1.0 - hj * hj);
        }

        let (gemb_w1, gb1) = head.split_at_mut(o[2]);
        for (g, d) in gb1.iter_mut().zip(&dz) {
            *g += d;
        }
        let (gemb, gw1) = gemb_w1.split_at_mut(o[1]);
        let emb = self.embedding();
        let w1 = self.hidden_weight();
        for (slot, &tok) in window.iter().enumerate() {
            let x = &emb[tok * s.embed..(tok + 1) * s.embed];
            for i in 0..s.embed {
                let r = (slot * s.embed + i) * s.hidden;
                let grow = &mut gw1[r..r + s.hidden];
                let wrow = &w1[r..r + s.hidden];
                let xi = x[i];
                let mut dx = 0.0;
                for j in 0..s.hidden {
                    grow[j] += xi * dz[j];
                    dx += wrow[j] * dz[j];
                }
                gemb[tok * s.embed + i] += dx;
            }
        }
    }
}

struct Activations {
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

impl LanguageModel for PolicyParams {
    fn vocab_size(&self) -> usize {
        self.shape.vocab
    }

    fn next_token_logits(&self, context: &[TokenId]) -> Result<TokenDistribution> {
        check_context(context, self.shape.vocab)?;
        let acts = self.forward(&self.window(context));
        Ok(TokenDistribution::from_logits(acts.logits))
    }
}

/// A differentiable scalar objective over the per-token log-probabilities of a
/// fixed set of `(prompt, output)` sequences.
///
/// Gradients flow only through the log-probabilities; the token sequences
/// themselves are constants.
pub trait SequenceObjective {
    fn sequences(&self) -> Vec<(&[TokenId], &[TokenId])>;

    /// Returns the loss and `d loss / d log_probs[s][t]` for every sequence `s`
    /// and output position `t`.
    fn evaluate(&self, log_probs: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>);
}

/// Loss and exact gradient of `objective` with respect to every parameter.
pub fn loss_and_gradient(
    params: &PolicyParams,
    objective: &dyn SequenceObjective,
) -> Result<(f64, Vec<f64>)> {
    struct Position {
        window: Vec<usize>,
        acts: Activations,
        log_probs: Vec<f64>,
        target: usize,
    }

    let vocab = params.shape.vocab;
    let sequences = objective.sequences();
    let mut cached: Vec<Vec<Position>> = Vec::with_capacity(sequences.len());
    let mut seq_log_probs = Vec::with_capacity(sequences.len());
    for (prompt, output) in &sequences {
        if output.is_empty() {
            return Err(Error::Contract("output sequence is empty".into()));
        }
        check_context(prompt, vocab)?;
        let mut context = prompt.to_vec();
        let mut positions = Vec::with_capacity(output.len());
        let mut lps = Vec::with_capacity(output.len());
        for &tok in output.iter() {
            check_token(tok, vocab)?;
            let window = params.window(&context);
            let acts = params.forward(&window);
            let log_probs = log_softmax(&acts.logits);
            lps.push(log_probs[tok as usize]);
            positions.push(Position {
                window,
                acts,
                log_probs,
                target: tok as usize,
            });
            context.push(tok);
        }
        cached.push(positions);
        seq_log_probs.push(lps);
    }

    let (loss, coefs) = objective.evaluate(&seq_log_probs);
    if !loss.is_finite() {
        return Err(Error::Numerical {
            message: format!("loss is {loss}"),
            param_norm: params.l2_norm(),
        });
    }

    let mut grad = vec![0.0; params.values.len()];
    for (positions, seq_coefs) in cached.iter().zip(&coefs) {
        for (pos, &coef) in positions.iter().zip(seq_coefs) {
            if coef == 0.0 {
                continue;
            }
            params.backward(&pos.window, &pos.acts, &pos.log_probs, pos.target, coef, &mut grad);
        }
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical {
            message: format!("gradient entry {i} is not finite"),
            param_norm: params.l2_norm(),
        });
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tokenizer::{BOS, EOS, VOCAB_SIZE};
    use rand::Rng;

    fn tiny() -> PolicyShape {
        PolicyShape {
            vocab: 7,
            context: 3,
            embed: 4,
            hidden: 5,
        }
    }

    /// Negative sum of log-probs with fixed per-position weights.
    struct Weighted {
        seqs: Vec<(Vec<TokenId>, Vec<TokenId>)>,
        weights: Vec<Vec<f64>>,
    }

    impl SequenceObjective for Weighted {
        fn sequences(&self) -> Vec<(&[TokenId], &[TokenId])> {
            self.seqs.iter().map(|(p, o)| (p.as_slice(), o.as_slice())).collect()
        }
        fn evaluate(&self, lps: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
            let mut loss = 0.0;
            for (l, w) in lps.iter().zip(&self.weights) {
                for (a, b) in l.iter().zip(w) {
                    loss -= a * b;
                }
            }
            (loss, self.weights.iter().map(|w| w.iter().map(|x| -x).collect()).collect())
        }
    }

    #[test]
    fn zero_params_give_uniform_distribution() {
        let p = PolicyParams::zeros(PolicyShape::default()).unwrap();
        let d = p.next_token_logits(&[BOS, 10, 20]).unwrap();
        let expected = -(VOCAB_SIZE as f64).ln();
        assert!(d.log_probs.iter().all(|&lp| (lp - expected).abs() < 1e-12));
    }

    #[test]
    fn output_bias_alone_is_context_independent() {
        let mut p = PolicyParams::zeros(PolicyShape::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for b in p.output_bias_mut() {
            *b = rng.gen_range(-2.0..2.0);
        }
        let expected = log_softmax(p.output_bias());
        for ctx in [vec![BOS], vec![BOS, 1, 2, 3, 4, 5, 6, 7, 8, 9], vec![BOS, 255, EOS]] {
            let d = p.next_token_logits(&ctx).unwrap();
            assert_eq!(d.log_probs, expected);
        }
    }

    #[test]
    fn random_params_normalize() {
        let p = PolicyParams::init(PolicyShape::default(), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let len = rng.gen_range(1..20);
            let mut ctx = vec![BOS];
            ctx.extend((0..len).map(|_| rng.gen_range(0..VOCAB_SIZE as TokenId)));
            let d = p.next_token_logits(&ctx).unwrap();
            let total: f64 = d.log_probs.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_token_is_contract_violation() {
        let p = PolicyParams::zeros(tiny()).unwrap();
        assert!(matches!(p.next_token_logits(&[4, 7]), Err(Error::Contract(_))));
        assert!(matches!(p.next_token_logits(&[]), Err(Error::Contract(_))));
    }

    #[test]
    fn sequence_log_probs_match_positionwise_recomputation() {
        let p = PolicyParams::init(tiny(), 1).unwrap();
        let prompt = vec![4, 0, 1];
        let output = vec![2, 3, 0, 5];
        let lps = p.sequence_log_probs(&prompt, &output).unwrap();
        let mut ctx = prompt.clone();
        for (t, &tok) in output.iter().enumerate() {
            let d = p.next_token_logits(&ctx).unwrap();
            assert_eq!(lps[t], d.log_probs[tok as usize]);
            ctx.push(tok);
        }
        assert!(lps.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn zero_params_sequence_log_probs() {
        let p = PolicyParams::zeros(PolicyShape::default()).unwrap();
        let lps = p.sequence_log_probs(&[BOS], &[1, 2, EOS]).unwrap();
        assert_eq!(lps.len(), 3);
        for lp in lps {
            assert!((lp + (259f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let mut p = PolicyParams::init(tiny(), 9).unwrap();
        // larger weights so the hidden layer is well away from linear
        for v in p.values_mut() {
            *v *= 20.0;
        }
        let obj = Weighted {
            seqs: vec![(vec![4, 1], vec![2, 0, 5]), (vec![4], vec![3, 3])],
            weights: vec![vec![1.0, 0.5, 2.0], vec![1.0, -0.3]],
        };
        let (loss, grad) = loss_and_gradient(&p, &obj).unwrap();
        assert!(loss.is_finite());
        let h = 1e-5;
        for i in 0..p.values().len() {
            let mut plus = p.clone();
            plus.values_mut()[i] += h;
            let mut minus = p.clone();
            minus.values_mut()[i] -= h;
            let fd = (loss_and_gradient(&plus, &obj).unwrap().0
                - loss_and_gradient(&minus, &obj).unwrap().0)
                / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-6);
            assert!((grad[i] - fd).abs() / denom < 1e-5, "coord {i}: {} vs {fd}", grad[i]);
        }
    }
}
