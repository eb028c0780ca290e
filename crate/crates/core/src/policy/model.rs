use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{entropy_from_log_probs, log_softmax_into};

/// Largest parameter count for which dense logit Jacobians are materialised.
pub const DENSE_JACOBIAN_PARAM_CAP: usize = 50_000;

/// Half-width of the uniform initialisation interval.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Input(format!(
                "vocabulary size must be >= 2, got {size}"
            )));
        }
        Ok(Self { size })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn check(&self, seq: &TokenSequence) -> Result<()> {
        match seq.tokens().iter().find(|&&t| t as usize >= self.size) {
            Some(t) => Err(Error::Input(format!(
                "token {t} outside vocabulary of size {}",
                self.size
            ))),
            None => Ok(()),
        }
    }
}

/// A non-empty list of token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(tokens: Vec<u32>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Input("token sequences must be non-empty".into()));
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; present for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of positions at which two equal-length sequences differ.
    /// Length mismatch counts every surplus position as a difference.
    pub fn hamming(&self, other: &TokenSequence) -> usize {
        let common = self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count();
        common + self.len().abs_diff(other.len())
    }
}

impl TryFrom<Vec<u32>> for TokenSequence {
    type Error = Error;
    fn try_from(v: Vec<u32>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TokenSequence> for Vec<u32> {
    fn from(s: TokenSequence) -> Self {
        s.0
    }
}

/// Shape of the policy.
///
/// With `hidden_dim > 0` the model is: token embedding, mean pooling over the
/// last `window` prefix tokens, a tanh hidden layer fed by both the pooled
/// vector and the last token's embedding, and a linear read-out to logits.
///
/// With `hidden_dim == 0` (and `embed_dim == 0`) the model is the zero-depth
/// linear policy `z = Θ φ + b` over fixed features
/// `φ = [one_hot(last token); mean one_hot(window)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub window: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self::mlp(32, 8, 32, 16)
    }
}

impl Architecture {
    pub fn mlp(vocab_size: usize, embed_dim: usize, hidden_dim: usize, window: usize) -> Self {
        Self {
            vocab_size,
            embed_dim,
            hidden_dim,
            window,
        }
    }

    pub fn linear(vocab_size: usize, window: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: 0,
            hidden_dim: 0,
            window,
        }
    }

    pub fn is_linear(&self) -> bool {
        self.hidden_dim == 0
    }

    pub fn validate(&self) -> Result<()> {
        Vocabulary::new(self.vocab_size)?;
        if self.window == 0 {
            return Err(Error::Config("context window must be >= 1".into()));
        }
        match (self.embed_dim, self.hidden_dim) {
            (0, 0) => Ok(()),
            (0, _) | (_, 0) => Err(Error::Config(
                "embed_dim and hidden_dim must both be zero (linear) or both positive".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary {
            size: self.vocab_size,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    /// Width of the fixed feature vector of the linear policy.
    pub fn linear_feature_dim(&self) -> usize {
        2 * self.vocab_size
    }

    pub(crate) fn layout(&self) -> Layout {
        let (v, d, h) = (self.vocab_size, self.embed_dim, self.hidden_dim);
        if self.is_linear() {
            let w_out = 0;
            let b_out = v * 2 * v;
            return Layout {
                embed: 0,
                w_pool: 0,
                w_last: 0,
                b_hidden: 0,
                w_out,
                b_out,
                total: b_out + v,
            };
        }
        let embed = 0;
        let w_pool = embed + v * d;
        let w_last = w_pool + h * d;
        let b_hidden = w_last + h * d;
        let w_out = b_hidden + h;
        let b_out = w_out + v * h;
        Layout {
            embed,
            w_pool,
            w_last,
            b_hidden,
            w_out,
            b_out,
            total: b_out + v,
        }
    }
}

/// Offsets of each weight block inside the flat parameter vector.
///
/// MLP: `E (V×d) | W_pool (h×d) | W_last (h×d) | b_hidden (h) | W_out (V×h) | b_out (V)`,
/// all row-major. Linear: `Θ (V×2V) | b (V)` with `Θ` starting at `w_out`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub embed: usize,
    pub w_pool: usize,
    pub w_last: usize,
    pub b_hidden: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub total: usize,
}

/// Learnable weights of the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParameters {
    arch: Architecture,
    theta: Vec<f64>,
}

impl PolicyParameters {
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            theta: vec![0.0; arch.param_count()],
        })
    }

    /// Uniform initialisation in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init_uniform(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..arch.param_count())
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Ok(Self { arch, theta })
    }

    pub fn from_vec(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::Input(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                theta.len()
            )));
        }
        if let Some(i) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!("parameter {i} is not finite")));
        }
        Ok(Self { arch, theta })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn vocabulary(&self) -> Vocabulary {
        self.arch.vocabulary()
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// Raw mutable access for optimisers and finite-difference probes.
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// `θ ← θ + alpha · direction`.
    pub fn axpy(&mut self, alpha: f64, direction: &[f64]) {
        for (t, d) in self.theta.iter_mut().zip(direction) {
            *t += alpha * d;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.theta.iter().all(|v| v.is_finite())
    }

    /// Next-token log-probabilities after an arbitrary non-empty prefix.
    pub fn next_token_log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        if prefix.is_empty() {
            return Err(Error::Input("prefix must be non-empty".into()));
        }
        let vocab = self.vocabulary();
        if let Some(t) = prefix.iter().find(|&&t| t as usize >= vocab.size()) {
            return Err(Error::Input(format!(
                "token {t} outside vocabulary of size {}",
                vocab.size()
            )));
        }
        let mut pos = PositionState::new(&self.arch);
        self.position_forward(prefix, prefix.len(), &mut pos);
        let mut out = vec![0.0; self.arch.vocab_size];
        log_softmax_into(&pos.logits, &mut out);
        Ok(out)
    }

    /// Logits for one position whose prefix is `seq[..end]`.
    fn position_forward(&self, seq: &[u32], end: usize, st: &mut PositionState) {
        let a = &self.arch;
        let lay = a.layout();
        let th = &self.theta;
        let start = end.saturating_sub(a.window);
        let window = &seq[start..end];
        let last = seq[end - 1] as usize;
        let n = window.len() as f64;
        let v = a.vocab_size;
        st.window = (start, end);
        if a.is_linear() {
            let f = a.linear_feature_dim();
            for (out, k) in st.logits.iter_mut().zip(0..v) {
                let row = lay.w_out + k * f;
                let mut acc = th[lay.b_out + k] + th[row + last];
                for &t in window {
                    acc += th[row + v + t as usize] / n;
                }
                *out = acc;
            }
            return;
        }
        let (d, h) = (a.embed_dim, a.hidden_dim);
        st.pooled.iter_mut().for_each(|x| *x = 0.0);
        for &t in window {
            let e = &th[lay.embed + t as usize * d..lay.embed + (t as usize + 1) * d];
            for (p, x) in st.pooled.iter_mut().zip(e) {
                *p += x;
            }
        }
        st.pooled.iter_mut().for_each(|x| *x /= n);
        let e_last = &th[lay.embed + last * d..lay.embed + (last + 1) * d];
        for j in 0..h {
            let wp = &th[lay.w_pool + j * d..lay.w_pool + (j + 1) * d];
            let wl = &th[lay.w_last + j * d..lay.w_last + (j + 1) * d];
            let mut acc = th[lay.b_hidden + j];
            for ((w, x), (v, y)) in wp.iter().zip(&st.pooled).zip(wl.iter().zip(e_last)) {
                acc += w * x + v * y;
            }
            st.hidden[j] = acc.tanh();
        }
        for (k, out) in st.logits.iter_mut().enumerate() {
            let wo = &th[lay.w_out + k * h..lay.w_out + (k + 1) * h];
            *out = wo
                .iter()
                .zip(&st.hidden)
                .fold(th[lay.b_out + k], |acc, (w, x)| acc + w * x);
        }
    }

    /// Teacher-forced forward pass over `target` given `context`.
    ///
    /// Position `l` predicts `target[l]` from `context ++ target[..l]`.
    pub fn forward(&self, context: &TokenSequence, target: &TokenSequence) -> Result<Forward> {
        let vocab = self.vocabulary();
        vocab.check(context)?;
        vocab.check(target)?;
        let a = self.arch;
        let l_len = target.len();
        let v = a.vocab_size;
        let mut seq = Vec::with_capacity(context.len() + l_len);
        seq.extend_from_slice(context.tokens());
        seq.extend_from_slice(target.tokens());
        let mut fwd = Forward {
            arch: a,
            len: l_len,
            context_len: context.len(),
            seq,
            target: target.tokens().to_vec(),
            logits: vec![0.0; l_len * v],
            log_probs: vec![0.0; l_len * v],
            pooled: vec![0.0; l_len * a.embed_dim],
            hidden: vec![0.0; l_len * a.hidden_dim],
            windows: Vec::with_capacity(l_len),
        };
        let mut st = PositionState::new(&a);
        for l in 0..l_len {
            let end = context.len() + l;
            self.position_forward(&fwd.seq, end, &mut st);
            fwd.logits[l * v..(l + 1) * v].copy_from_slice(&st.logits);
            log_softmax_into(&st.logits, &mut fwd.log_probs[l * v..(l + 1) * v]);
            fwd.pooled[l * a.embed_dim..(l + 1) * a.embed_dim].copy_from_slice(&st.pooled);
            fwd.hidden[l * a.hidden_dim..(l + 1) * a.hidden_dim].copy_from_slice(&st.hidden);
            fwd.windows.push(st.window);
        }
        Ok(fwd)
    }

    /// Accumulate `J_lᵀ g` for a single position into `out`.
    fn backward_position(
        &self,
        fwd: &Forward,
        l: usize,
        g_z: &[f64],
        out: &mut [f64],
        scratch: &mut Scratch,
    ) {
        let a = &self.arch;
        let lay = a.layout();
        let th = &self.theta;
        let v = a.vocab_size;
        let (start, end) = fwd.windows[l];
        let window = &fwd.seq[start..end];
        let last = fwd.seq[end - 1] as usize;
        let n = window.len() as f64;
        for k in 0..v {
            out[lay.b_out + k] += g_z[k];
        }
        if a.is_linear() {
            let f = a.linear_feature_dim();
            for (k, &g) in g_z.iter().enumerate() {
                let row = lay.w_out + k * f;
                out[row + last] += g;
                for &t in window {
                    out[row + v + t as usize] += g / n;
                }
            }
            return;
        }
        let (d, h) = (a.embed_dim, a.hidden_dim);
        let hid = &fwd.hidden[l * h..(l + 1) * h];
        let pooled = &fwd.pooled[l * d..(l + 1) * d];
        let g_a = &mut scratch.g_a;
        g_a.iter_mut().for_each(|x| *x = 0.0);
        for (k, &g) in g_z.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = lay.w_out + k * h;
            for j in 0..h {
                out[row + j] += g * hid[j];
                g_a[j] += g * th[row + j];
            }
        }
        for j in 0..h {
            g_a[j] *= 1.0 - hid[j] * hid[j];
        }
        let e_last_off = lay.embed + last * d;
        let g_u = &mut scratch.g_u;
        let g_v = &mut scratch.g_v;
        g_u.iter_mut().for_each(|x| *x = 0.0);
        g_v.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..h {
            let ga = g_a[j];
            out[lay.b_hidden + j] += ga;
            if ga == 0.0 {
                continue;
            }
            let wp = lay.w_pool + j * d;
            let wl = lay.w_last + j * d;
            for k in 0..d {
                out[wp + k] += ga * pooled[k];
                out[wl + k] += ga * th[e_last_off + k];
                g_u[k] += ga * th[wp + k];
                g_v[k] += ga * th[wl + k];
            }
        }
        for k in 0..d {
            out[e_last_off + k] += g_v[k];
        }
        for &t in window {
            let off = lay.embed + t as usize * d;
            for k in 0..d {
                out[off + k] += g_u[k] / n;
            }
        }
    }

    /// Vector-Jacobian product: accumulate `Jᵀ g` into `out`, where `g` is a
    /// gradient with respect to the flattened `L×|V|` logits of `fwd`.
    pub fn accumulate_vjp(&self, fwd: &Forward, grad_logits: &[f64], out: &mut [f64]) {
        assert_eq!(
            grad_logits.len(),
            fwd.len * self.arch.vocab_size,
            "logit gradient shape"
        );
        assert_eq!(out.len(), self.theta.len(), "parameter gradient shape");
        let v = self.arch.vocab_size;
        let mut scratch = Scratch::new(&self.arch);
        for l in 0..fwd.len {
            let g = &grad_logits[l * v..(l + 1) * v];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            self.backward_position(fwd, l, g, out, &mut scratch);
        }
    }

    pub fn vjp(&self, fwd: &Forward, grad_logits: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.theta.len()];
        self.accumulate_vjp(fwd, grad_logits, &mut out);
        out
    }

    /// Dense logit Jacobian `∂z/∂θ` of shape `(L·|V|) × dim(θ)`.
    pub fn logit_jacobian(
        &self,
        context: &TokenSequence,
        target: &TokenSequence,
    ) -> Result<DMatrix<f64>> {
        let fwd = self.forward(context, target)?;
        self.jacobian_of(&fwd)
    }

    pub fn jacobian_of(&self, fwd: &Forward) -> Result<DMatrix<f64>> {
        self.ensure_dense_capable()?;
        let v = self.arch.vocab_size;
        let p = self.theta.len();
        let rows = fwd.len * v;
        let mut jac = DMatrix::zeros(rows, p);
        let mut row = vec![0.0; p];
        let mut g = vec![0.0; v];
        let mut scratch = Scratch::new(&self.arch);
        for l in 0..fwd.len {
            for k in 0..v {
                row.iter_mut().for_each(|x| *x = 0.0);
                g[k] = 1.0;
                self.backward_position(fwd, l, &g, &mut row, &mut scratch);
                g[k] = 0.0;
                let r = l * v + k;
                for (c, &x) in row.iter().enumerate() {
                    jac[(r, c)] = x;
                }
            }
        }
        Ok(jac)
    }

    pub fn ensure_dense_capable(&self) -> Result<()> {
        if self.theta.len() > DENSE_JACOBIAN_PARAM_CAP {
            return Err(Error::Capability(format!(
                "{} parameters exceed the dense-Jacobian cap of {DENSE_JACOBIAN_PARAM_CAP}; \
                 use the matrix-free inner-product path",
                self.theta.len()
            )));
        }
        Ok(())
    }
}

struct PositionState {
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
    window: (usize, usize),
}

impl PositionState {
    fn new(a: &Architecture) -> Self {
        Self {
            pooled: vec![0.0; a.embed_dim],
            hidden: vec![0.0; a.hidden_dim],
            logits: vec![0.0; a.vocab_size],
            window: (0, 0),
        }
    }
}

struct Scratch {
    g_a: Vec<f64>,
    g_u: Vec<f64>,
    g_v: Vec<f64>,
}

impl Scratch {
    fn new(a: &Architecture) -> Self {
        Self {
            g_a: vec![0.0; a.hidden_dim],
            g_u: vec![0.0; a.embed_dim],
            g_v: vec![0.0; a.embed_dim],
        }
    }
}

/// Cached activations of one teacher-forced pass; also the logit sequence.
#[derive(Debug, Clone)]
pub struct Forward {
    arch: Architecture,
    len: usize,
    context_len: usize,
    seq: Vec<u32>,
    target: Vec<u32>,
    logits: Vec<f64>,
    log_probs: Vec<f64>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    windows: Vec<(usize, usize)>,
}

/// Alias used where only the logits matter.
pub type LogitSequence = Forward;

impl Forward {
    /// Number of target positions `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn vocab_size(&self) -> usize {
        self.arch.vocab_size
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn target(&self) -> &[u32] {
        &self.target
    }

    /// Flattened `L×|V|` logits.
    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_at(&self, l: usize) -> &[f64] {
        let v = self.arch.vocab_size;
        &self.logits[l * v..(l + 1) * v]
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn log_probs_at(&self, l: usize) -> &[f64] {
        let v = self.arch.vocab_size;
        &self.log_probs[l * v..(l + 1) * v]
    }

    pub fn probs_at(&self, l: usize) -> Vec<f64> {
        self.log_probs_at(l).iter().map(|x| x.exp()).collect()
    }

    /// Per-token log-probabilities of the target tokens.
    pub fn token_log_probs(&self) -> Vec<f64> {
        (0..self.len)
            .map(|l| self.log_probs_at(l)[self.target[l] as usize])
            .collect()
    }

    /// `log π(y | x)`, summed over positions.
    pub fn sequence_log_prob(&self) -> f64 {
        self.token_log_probs().iter().sum()
    }

    /// `ℓ̄(y | x)`: mean per-token log-probability.
    pub fn avg_token_log_prob(&self) -> f64 {
        self.sequence_log_prob() / self.len as f64
    }

    pub fn entropy_at(&self, l: usize) -> f64 {
        entropy_from_log_probs(self.log_probs_at(l))
    }

    /// `∇_z log π(y|x) = one_hot(y_l) − softmax(z_l)` for every position, flattened.
    pub fn grad_sequence_log_prob(&self) -> Vec<f64> {
        let v = self.arch.vocab_size;
        let mut g = vec![0.0; self.len * v];
        for l in 0..self.len {
            for k in 0..v {
                g[l * v + k] = -self.log_probs[l * v + k].exp();
            }
            g[l * v + self.target[l] as usize] += 1.0;
        }
        g
    }
}

/// Logits for every target position.
pub fn forward_logits(
    params: &PolicyParameters,
    context: &TokenSequence,
    target: &TokenSequence,
) -> Result<LogitSequence> {
    params.forward(context, target)
}

/// `ℓ̄_θ(y|x) = (1/L) Σ_l log π_θ(y_l | x, y_<l)`.
pub fn avg_token_log_prob(
    params: &PolicyParameters,
    context: &TokenSequence,
    y: &TokenSequence,
) -> Result<f64> {
    Ok(params.forward(context, y)?.avg_token_log_prob())
}

pub fn sequence_log_prob(
    params: &PolicyParameters,
    context: &TokenSequence,
    y: &TokenSequence,
) -> Result<f64> {
    Ok(params.forward(context, y)?.sequence_log_prob())
}

/// Entropy (nats) of the next-token distribution after the first `position`
/// tokens of `context`; `position` ranges over `1..=context.len()`.
pub fn predictive_entropy(
    params: &PolicyParameters,
    context: &TokenSequence,
    position: usize,
) -> Result<f64> {
    if position == 0 || position > context.len() {
        return Err(Error::Input(format!(
            "position {position} outside 1..={}",
            context.len()
        )));
    }
    let lp = params.next_token_log_probs(&context.tokens()[..position])?;
    Ok(entropy_from_log_probs(&lp))
}

pub fn logit_jacobian(
    params: &PolicyParameters,
    context: &TokenSequence,
    target: &TokenSequence,
) -> Result<DMatrix<f64>> {
    params.logit_jacobian(context, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(v: &[u32]) -> TokenSequence {
        TokenSequence::new(v.to_vec()).unwrap()
    }

    #[test]
    fn rejects_empty_and_out_of_vocab() {
        assert!(TokenSequence::new(vec![]).is_err());
        assert!(Vocabulary::new(1).is_err());
        let p = PolicyParameters::zeros(Architecture::mlp(4, 2, 3, 4)).unwrap();
        assert!(matches!(
            p.forward(&seq(&[0]), &seq(&[4])),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_parameters_give_uniform() {
        let p = PolicyParameters::zeros(Architecture::default()).unwrap();
        let f = p.forward(&seq(&[1, 2, 3]), &seq(&[4, 5])).unwrap();
        assert!(f.logits().iter().all(|&z| z == 0.0));
        let expected = -(32f64).ln();
        assert!((f.avg_token_log_prob() - expected).abs() < 1e-12);
        assert!(
            (avg_token_log_prob(&p, &seq(&[1]), &seq(&[9, 9, 9])).unwrap() + 3.4657).abs() < 1e-4
        );
        let h = predictive_entropy(&p, &seq(&[7, 8]), 2).unwrap();
        assert!((h - (32f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_token_uniform_vocab_four() {
        let p = PolicyParameters::zeros(Architecture::mlp(4, 2, 2, 3)).unwrap();
        let lp = sequence_log_prob(&p, &seq(&[0]), &seq(&[3])).unwrap();
        assert!((lp + 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn certainty_gives_zero_log_prob() {
        // Linear policy with a huge bias on token 2: every position predicts 2.
        let arch = Architecture::linear(3, 4);
        let mut p = PolicyParameters::zeros(arch).unwrap();
        let b_out = arch.layout().b_out;
        p.as_mut_slice()[b_out + 2] = 800.0;
        let lp = avg_token_log_prob(&p, &seq(&[0, 1]), &seq(&[2, 2, 2])).unwrap();
        assert_eq!(lp, 0.0);
        assert_eq!(predictive_entropy(&p, &seq(&[0]), 1).unwrap(), 0.0);
    }

    #[test]
    fn entropy_position_validated() {
        let p = PolicyParameters::zeros(Architecture::default()).unwrap();
        assert!(predictive_entropy(&p, &seq(&[1, 2]), 0).is_err());
        assert!(predictive_entropy(&p, &seq(&[1, 2]), 3).is_err());
    }

    #[test]
    fn jacobian_shape_and_cap() {
        let p = PolicyParameters::init_uniform(Architecture::mlp(5, 2, 3, 4), 1).unwrap();
        let j = p.logit_jacobian(&seq(&[1, 2]), &seq(&[3, 4, 0])).unwrap();
        assert_eq!(j.nrows(), 3 * 5);
        assert_eq!(j.ncols(), p.len());
        let big = PolicyParameters::zeros(Architecture::mlp(400, 64, 64, 4)).unwrap();
        assert!(big.len() > DENSE_JACOBIAN_PARAM_CAP);
        assert!(matches!(
            big.logit_jacobian(&seq(&[1]), &seq(&[2])),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn linear_jacobian_is_feature_matrix() {
        let arch = Architecture::linear(4, 3);
        let p = PolicyParameters::init_uniform(arch, 3).unwrap();
        let ctx = seq(&[0, 1, 1]);
        let tgt = seq(&[2, 3]);
        let j = p.logit_jacobian(&ctx, &tgt).unwrap();
        let full = [0u32, 1, 1, 2, 3];
        let f = arch.linear_feature_dim();
        for l in 0..2 {
            let end: usize = 3 + l;
            let start = end.saturating_sub(3);
            let mut phi = vec![0.0; f];
            phi[full[end - 1] as usize] += 1.0;
            for &t in &full[start..end] {
                phi[4 + t as usize] += 1.0 / (end - start) as f64;
            }
            for k in 0..4 {
                for c in 0..p.len() {
                    let expected = if c >= k * f && c < (k + 1) * f {
                        phi[c - k * f]
                    } else if c == 4 * f + k {
                        1.0
                    } else {
                        0.0
                    };
                    assert_eq!(j[(l * 4 + k, c)], expected, "row ({l},{k}) col {c}");
                }
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = PolicyParameters::init_uniform(Architecture::default(), 11).unwrap();
        let b = PolicyParameters::init_uniform(Architecture::default(), 11).unwrap();
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|x| x.abs() <= INIT_SCALE));
        let c = PolicyParameters::init_uniform(Architecture::default(), 12).unwrap();
        assert_ne!(a, c);
    }
}
