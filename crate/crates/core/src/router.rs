//! The routing policy: a single actor-critic MLP shared across all
//! five modules. States concatenate query, module-input, and learned
//! module-descriptor embeddings; the network emits three tier logits
//! and a value estimate. Parameters live in one flat f32 vector (the
//! checkpoint layout) while all arithmetic runs in f64.

use crate::corpus::Embedder;
use crate::error::{Error, Result};
use crate::types::{ModuleId, Strategy, Tier};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Network shape: embedding width E (three concatenated embeddings
/// make the 3E input) and trunk width H.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterArch {
    pub embed_dim: usize,
    pub hidden: usize,
}

impl Default for RouterArch {
    fn default() -> RouterArch {
        RouterArch { embed_dim: crate::corpus::EMBED_DIM, hidden: 256 }
    }
}

/// Flat-parameter segment offsets, in checkpoint order.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    pub e: usize,
    pub h: usize,
    pub desc: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub wp: usize,
    pub bp: usize,
    pub wv: usize,
    pub bv: usize,
    pub total: usize,
}

impl RouterArch {
    pub fn layout(&self) -> Layout {
        let e = self.embed_dim;
        let h = self.hidden;
        let desc = 0;
        let w1 = desc + 5 * e;
        let b1 = w1 + 3 * e * h;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let wp = b2 + h;
        let bp = wp + h * 3;
        let wv = bp + 3;
        let bv = wv + h;
        let total = bv + 1;
        Layout { e, h, desc, w1, b1, w2, b2, wp, bp, wv, bv, total }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// The policy-network parameters as one flat little-endian-friendly
/// f32 vector in `Layout` order.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    pub arch: RouterArch,
    pub data: Vec<f32>,
}

impl RouterParams {
    /// All-zero parameters: uniform policy, zero value.
    pub fn zeros(arch: RouterArch) -> RouterParams {
        RouterParams { arch, data: vec![0.0; arch.param_count()] }
    }

    /// Scaled-normal initialization: trunk and value weights at
    /// gain/sqrt(fan_in) with gain 1, the policy head at gain 0.01 so
    /// early policies stay near-uniform, descriptor rows at 1/sqrt(E),
    /// biases zero.
    pub fn init(arch: RouterArch, seed: u64) -> RouterParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = arch.layout();
        let mut data = vec![0.0f32; l.total];
        let mut fill = |range: std::ops::Range<usize>, std: f64, rng: &mut ChaCha8Rng| {
            for slot in &mut data[range] {
                let z: f64 = rng.sample(StandardNormal);
                *slot = (z * std) as f32;
            }
        };
        let e = l.e as f64;
        let h = l.h as f64;
        fill(l.desc..l.w1, 1.0 / e.sqrt(), &mut rng);
        fill(l.w1..l.b1, 1.0 / (3.0 * e).sqrt(), &mut rng);
        fill(l.w2..l.b2, 1.0 / h.sqrt(), &mut rng);
        fill(l.wp..l.bp, 0.01 / h.sqrt(), &mut rng);
        fill(l.wv..l.bv, 1.0 / h.sqrt(), &mut rng);
        RouterParams { arch, data }
    }

    pub fn layout(&self) -> Layout {
        self.arch.layout()
    }

    /// The learned descriptor row for a module.
    pub fn module_descriptor(&self, module: ModuleId) -> &[f32] {
        let l = self.layout();
        let start = l.desc + module.index() * l.e;
        &self.data[start..start + l.e]
    }
}

/// One module decision's encoded state. The descriptor embedding is
/// looked up from the current parameters at forward time so descriptor
/// learning stays live across optimization steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterState {
    pub module: ModuleId,
    pub query_emb: Vec<f32>,
    pub input_emb: Vec<f32>,
}

impl RouterState {
    /// The descriptor row this state will read under given parameters.
    pub fn module_emb<'p>(&self, params: &'p RouterParams) -> &'p [f32] {
        params.module_descriptor(self.module)
    }
}

/// Embeds query and module input for one routing decision.
pub fn encode_state(
    query: &str,
    module: ModuleId,
    module_input: &str,
    embedder: &Embedder,
) -> RouterState {
    RouterState {
        module,
        query_emb: embedder.embed(query),
        input_emb: embedder.embed(module_input),
    }
}

/// Logits, probabilities, and value for one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub logits: [f64; 3],
    pub probs: [f64; 3],
    pub value: f64,
}

/// Numerically stable three-way softmax.
pub fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let m = logits[0].max(logits[1]).max(logits[2]);
    let e = [
        (logits[0] - m).exp(),
        (logits[1] - m).exp(),
        (logits[2] - m).exp(),
    ];
    let z = e[0] + e[1] + e[2];
    [e[0] / z, e[1] / z, e[2] / z]
}

/// Entropy of a probability triple, in nats.
pub fn entropy3(probs: [f64; 3]) -> f64 {
    -probs
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p * p.ln())
        .sum::<f64>()
}

/// Forward-pass activations cached for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: PolicyOutput,
    module: ModuleId,
    x: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
}

/// Evaluates the network on one state.
pub fn forward(params: &RouterParams, state: &RouterState) -> Result<ForwardPass> {
    let l = params.layout();
    assert_eq!(state.query_emb.len(), l.e, "query embedding width mismatch");
    assert_eq!(state.input_emb.len(), l.e, "input embedding width mismatch");
    let p = &params.data;

    let mut x = Vec::with_capacity(3 * l.e);
    x.extend(state.query_emb.iter().map(|v| *v as f64));
    x.extend(state.input_emb.iter().map(|v| *v as f64));
    let desc = l.desc + state.module.index() * l.e;
    x.extend(p[desc..desc + l.e].iter().map(|v| *v as f64));

    let mut h1: Vec<f64> = p[l.b1..l.b1 + l.h].iter().map(|b| *b as f64).collect();
    for (i, xi) in x.iter().enumerate() {
        let row = &p[l.w1 + i * l.h..l.w1 + (i + 1) * l.h];
        for (acc, w) in h1.iter_mut().zip(row) {
            *acc += xi * *w as f64;
        }
    }
    for h in h1.iter_mut() {
        *h = h.tanh();
    }
    let mut h2: Vec<f64> = p[l.b2..l.b2 + l.h].iter().map(|b| *b as f64).collect();
    for (i, hi) in h1.iter().enumerate() {
        let row = &p[l.w2 + i * l.h..l.w2 + (i + 1) * l.h];
        for (acc, w) in h2.iter_mut().zip(row) {
            *acc += hi * *w as f64;
        }
    }
    for h in h2.iter_mut() {
        *h = h.tanh();
    }
    let mut logits = [
        p[l.bp] as f64,
        p[l.bp + 1] as f64,
        p[l.bp + 2] as f64,
    ];
    for (i, hi) in h2.iter().enumerate() {
        let row = &p[l.wp + i * 3..l.wp + i * 3 + 3];
        logits[0] += hi * row[0] as f64;
        logits[1] += hi * row[1] as f64;
        logits[2] += hi * row[2] as f64;
    }
    let mut value = p[l.bv] as f64;
    for (hi, w) in h2.iter().zip(&p[l.wv..l.wv + l.h]) {
        value += hi * *w as f64;
    }

    if !logits.iter().all(|v| v.is_finite()) || !value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite forward output for {} (logits {logits:?}, value {value})",
            state.module
        )));
    }
    let probs = softmax3(logits);
    Ok(ForwardPass {
        output: PolicyOutput { logits, probs, value },
        module: state.module,
        x,
        h1,
        h2,
    })
}

/// Accumulates d(loss)/d(params) into `grads` (flat, layout order)
/// given upstream gradients on the logits and the value.
pub fn backward(params: &RouterParams, pass: &ForwardPass, dlogits: [f64; 3], dvalue: f64, grads: &mut [f64]) {
    let l = params.layout();
    assert_eq!(grads.len(), l.total, "gradient buffer shape mismatch");
    let p = &params.data;

    let mut dh2 = vec![0.0f64; l.h];
    for i in 0..l.h {
        let wp_row = &p[l.wp + i * 3..l.wp + i * 3 + 3];
        let g_row = &mut grads[l.wp + i * 3..l.wp + i * 3 + 3];
        let mut acc = p[l.wv + i] as f64 * dvalue;
        for j in 0..3 {
            acc += wp_row[j] as f64 * dlogits[j];
            g_row[j] += pass.h2[i] * dlogits[j];
        }
        grads[l.wv + i] += pass.h2[i] * dvalue;
        dh2[i] = acc;
    }
    for j in 0..3 {
        grads[l.bp + j] += dlogits[j];
    }
    grads[l.bv] += dvalue;

    let mut dpre2 = vec![0.0f64; l.h];
    for j in 0..l.h {
        dpre2[j] = dh2[j] * (1.0 - pass.h2[j] * pass.h2[j]);
        grads[l.b2 + j] += dpre2[j];
    }
    let mut dh1 = vec![0.0f64; l.h];
    for i in 0..l.h {
        let w_row = &p[l.w2 + i * l.h..l.w2 + (i + 1) * l.h];
        let g_row = &mut grads[l.w2 + i * l.h..l.w2 + (i + 1) * l.h];
        let hi = pass.h1[i];
        let mut acc = 0.0;
        for ((g, w), d) in g_row.iter_mut().zip(w_row).zip(&dpre2) {
            *g += hi * *d;
            acc += *w as f64 * *d;
        }
        dh1[i] = acc;
    }
    let mut dpre1 = vec![0.0f64; l.h];
    for j in 0..l.h {
        dpre1[j] = dh1[j] * (1.0 - pass.h1[j] * pass.h1[j]);
        grads[l.b1 + j] += dpre1[j];
    }
    let desc = l.desc + pass.module.index() * l.e;
    for i in 0..3 * l.e {
        let w_row = &p[l.w1 + i * l.h..l.w1 + (i + 1) * l.h];
        let g_row = &mut grads[l.w1 + i * l.h..l.w1 + (i + 1) * l.h];
        let xi = pass.x[i];
        let mut dx = 0.0;
        for ((g, w), d) in g_row.iter_mut().zip(w_row).zip(&dpre1) {
            *g += xi * *d;
            dx += *w as f64 * *d;
        }
        if i >= 2 * l.e {
            grads[desc + (i - 2 * l.e)] += dx;
        }
    }
}

/// How an action is drawn from a policy output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionMode {
    Sample,
    Greedy,
}

/// A selected tier with its log-probability and the decision entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionChoice {
    pub tier: Tier,
    pub log_prob: f64,
    pub entropy: f64,
}

/// Draws a tier: SAMPLE follows the probabilities using the rng
/// stream, GREEDY takes the argmax logit with ties to the lowest tier.
pub fn select_action(output: &PolicyOutput, mode: ActionMode, rng: &mut impl Rng) -> ActionChoice {
    let tier = match mode {
        ActionMode::Greedy => {
            let mut best = 0;
            for i in 1..3 {
                if output.logits[i] > output.logits[best] {
                    best = i;
                }
            }
            Tier::from_index(best).unwrap()
        }
        ActionMode::Sample => {
            let u: f64 = rng.random();
            let mut cum = 0.0;
            let mut pick = 2;
            for (i, p) in output.probs.iter().enumerate() {
                cum += p;
                if u < cum {
                    pick = i;
                    break;
                }
            }
            Tier::from_index(pick).unwrap()
        }
    };
    ActionChoice {
        tier,
        log_prob: output.probs[tier.index()].ln(),
        entropy: entropy3(output.probs),
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TIERCKPT";
const CHECKPOINT_VERSION: u32 = 1;

/// Run metadata stored in the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub strategy: Strategy,
    pub lambda: f64,
    pub step: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: RouterArch,
    #[serde(flatten)]
    meta: CheckpointMeta,
    param_count: usize,
}

/// Writes magic, version, a JSON header, and the flat little-endian
/// f32 parameter array.
pub fn save_checkpoint(path: &Path, params: &RouterParams, meta: &CheckpointMeta) -> Result<()> {
    let header = CheckpointHeader {
        arch: params.arch,
        meta: meta.clone(),
        param_count: params.data.len(),
    };
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    file.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    file.write_all(&header_bytes)?;
    for v in &params.data {
        file.write_all(&v.to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

/// Reads and validates a checkpoint.
pub fn load_checkpoint(path: &Path) -> Result<(RouterParams, CheckpointMeta)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let mut word = [0u8; 4];
    file.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    file.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    file.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
    if header.param_count != header.arch.param_count() {
        return Err(Error::Checkpoint(format!(
            "param count {} does not match architecture ({})",
            header.param_count,
            header.arch.param_count()
        )));
    }
    let mut data = vec![0.0f32; header.param_count];
    for v in &mut data {
        file.read_exact(&mut word)?;
        *v = f32::from_le_bytes(word);
    }
    let mut trailing = [0u8; 1];
    if file.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::Checkpoint("non-finite parameter".into()));
    }
    Ok((RouterParams { arch: header.arch, data }, header.meta))
}
