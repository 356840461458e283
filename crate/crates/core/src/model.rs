//! Directional sound-change model: a feed-forward network trained on a
//! typological database to predict, per source phone, the probability of each
//! articulatory feature increasing or decreasing; DWFED is the derived
//! directed phone-pair cost (one minus the probability of each needed edit).

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::phonology::{one_hot, OneHotEncoding, PhoneFeatureTable};

pub const SUPPORTED_DEPTHS: [usize; 4] = [1, 4, 8, 16];

/// Families dropped from the training database by default.
pub const DEFAULT_EXCLUDED_FAMILIES: &[&str] = &["Altaic"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoundChangeRecord {
    pub source: String,
    pub target: String,
    pub family: String,
}

#[derive(Debug, Default)]
pub struct LoadedChanges {
    pub records: Vec<SoundChangeRecord>,
    pub skipped_unknown_phone: usize,
    pub dropped_family: usize,
    pub dropped_identity: usize,
}

/// Load `source<TAB>target<TAB>family` rows. Rows with phones absent from the
/// feature table are skipped (counted), rows from excluded families and rows
/// whose phones share a feature vector (no direction signal) are dropped.
pub fn load_sound_changes(
    path: impl AsRef<Path>,
    table: &PhoneFeatureTable,
    excluded_families: &[String],
) -> Result<LoadedChanges> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_sound_changes(&text, &path.display().to_string(), table, excluded_families)
}

pub fn parse_sound_changes(
    text: &str,
    source_name: &str,
    table: &PhoneFeatureTable,
    excluded_families: &[String],
) -> Result<LoadedChanges> {
    let mut out = LoadedChanges::default();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split('\t');
        let (src, tgt, family) = match (cells.next(), cells.next(), cells.next()) {
            (Some(s), Some(t), Some(f)) => (s.trim(), t.trim(), f.trim()),
            _ => {
                return Err(Error::parse(
                    source_name,
                    idx + 1,
                    "expected source<TAB>target<TAB>family",
                ))
            }
        };
        if excluded_families.iter().any(|f| f == family) {
            out.dropped_family += 1;
            continue;
        }
        if !table.contains(src) || !table.contains(tgt) {
            out.skipped_unknown_phone += 1;
            continue;
        }
        if table.encode(src)? == table.encode(tgt)? {
            out.dropped_identity += 1;
            continue;
        }
        out.records.push(SoundChangeRecord {
            source: src.to_string(),
            target: tgt.to_string(),
            family: family.to_string(),
        });
    }
    if out.records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no usable sound-change rows in {source_name}"
        )));
    }
    Ok(out)
}

/// Ground-truth direction bits: position 2f = feature f increased,
/// position 2f+1 = feature f decreased.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionVector(Vec<u8>);

impl DirectionVector {
    pub fn bits(&self) -> &[u8] {
        &self.0
    }
}

pub fn make_training_pair(
    record: &SoundChangeRecord,
    table: &PhoneFeatureTable,
) -> Result<(OneHotEncoding, DirectionVector)> {
    let src = table.encode(&record.source)?;
    let tgt = table.encode(&record.target)?;
    let mut bits = vec![0u8; 2 * src.len()];
    for f in 0..src.len() {
        if tgt.get(f) > src.get(f) {
            bits[2 * f] = 1;
        } else if tgt.get(f) < src.get(f) {
            bits[2 * f + 1] = 1;
        }
    }
    Ok((one_hot(src), DirectionVector(bits)))
}

#[derive(Debug, Clone)]
pub struct Hyperparams {
    pub depth: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            depth: 1,
            epochs: 25,
            batch_size: 5,
            learning_rate: 0.001,
            train_fraction: 0.9,
            seed: 411,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Layer {
    rows: usize,
    cols: usize,
    w: Vec<f64>, // row-major rows x cols
    b: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut out = self.b.clone();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (wv, xv) in row.iter().zip(x) {
                acc += wv * xv;
            }
            out[r] += acc;
        }
        out
    }

    // delta (len rows) pulled back through the weights: W^T delta
    fn back(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let d = delta[r];
            for (o, wv) in out.iter_mut().zip(row) {
                *o += wv * d;
            }
        }
        out
    }
}

// How the hidden layers are traversed: residual pairs when the depth calls
// for skip connections, plain singles otherwise. The identity shortcut spans
// two hidden layers and is added before the pair's final activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Single(usize),
    Pair(usize),
}

fn blocks(depth: usize) -> Vec<Block> {
    let hidden = depth - 1;
    let mut out = Vec::new();
    if depth >= 8 {
        let mut i = 0;
        while i + 1 < hidden {
            out.push(Block::Pair(i));
            i += 2;
        }
        if i < hidden {
            out.push(Block::Single(i));
        }
    } else {
        for i in 0..hidden {
            out.push(Block::Single(i));
        }
    }
    out
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect()
}

/// Trained feature-edit network. Input width 3N (one-hot source phone),
/// output width 2N of per-feature direction probabilities; hidden width 3N.
#[derive(Debug, Clone)]
pub struct FeatureEditModel {
    n_features: usize,
    depth: usize,
    layers: Vec<Layer>,
    seed: u64,
    feature_names_hash: u64,
    pub train_loss: Vec<f64>,
    pub test_loss: Vec<f64>,
}

struct Trace {
    // input activation fed into each layer, plus the final hidden activation
    inputs: Vec<Vec<f64>>,
    // pre-activations per layer (with the skip term already added where one lands)
    pres: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

struct Grads {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

impl Grads {
    fn zeros(layers: &[Layer]) -> Self {
        Grads {
            w: layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }
}

impl FeatureEditModel {
    fn layer_shapes(depth: usize, n: usize) -> Vec<(usize, usize)> {
        let din = 3 * n;
        let dout = 2 * n;
        let mut shapes = Vec::with_capacity(depth);
        for _ in 0..depth - 1 {
            shapes.push((din, din));
        }
        shapes.push((dout, din));
        shapes
    }

    fn check_depth(depth: usize) -> Result<()> {
        if SUPPORTED_DEPTHS.contains(&depth) {
            Ok(())
        } else {
            Err(Error::InvalidArg(format!(
                "unsupported depth {depth}; expected one of {SUPPORTED_DEPTHS:?}"
            )))
        }
    }

    fn init(depth: usize, table: &PhoneFeatureTable, seed: u64, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::check_depth(depth)?;
        let n = table.feature_count();
        let layers = Self::layer_shapes(depth, n)
            .into_iter()
            .map(|(rows, cols)| {
                let bound = 1.0 / (cols as f64).sqrt();
                let w = (0..rows * cols)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect();
                let b = (0..rows).map(|_| rng.gen_range(-bound..bound)).collect();
                Layer { rows, cols, w, b }
            })
            .collect();
        Ok(FeatureEditModel {
            n_features: n,
            depth,
            layers,
            seed,
            feature_names_hash: feature_names_hash(table),
            train_loss: Vec::new(),
            test_loss: Vec::new(),
        })
    }

    /// A model of the given depth with every weight and bias at zero; its
    /// outputs are all exactly 0.5.
    pub fn zeroed(depth: usize, table: &PhoneFeatureTable) -> Result<Self> {
        Self::check_depth(depth)?;
        let n = table.feature_count();
        let layers = Self::layer_shapes(depth, n)
            .into_iter()
            .map(|(rows, cols)| Layer {
                rows,
                cols,
                w: vec![0.0; rows * cols],
                b: vec![0.0; rows],
            })
            .collect();
        Ok(FeatureEditModel {
            n_features: n,
            depth,
            layers,
            seed: 0,
            feature_names_hash: feature_names_hash(table),
            train_loss: Vec::new(),
            test_loss: Vec::new(),
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let mut inputs: Vec<Vec<f64>> = vec![x.to_vec()];
        let mut pres: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for block in blocks(self.depth) {
            match block {
                Block::Single(i) => {
                    let pre = self.layers[i].affine(inputs.last().unwrap());
                    let act = relu(&pre);
                    pres.push(pre);
                    inputs.push(act);
                }
                Block::Pair(i) => {
                    let hin = inputs.last().unwrap().clone();
                    let pre1 = self.layers[i].affine(&hin);
                    let a1 = relu(&pre1);
                    let mut pre2 = self.layers[i + 1].affine(&a1);
                    for (p, h) in pre2.iter_mut().zip(&hin) {
                        *p += h;
                    }
                    let a2 = relu(&pre2);
                    pres.push(pre1);
                    inputs.push(a1);
                    pres.push(pre2);
                    inputs.push(a2);
                }
            }
        }
        let out_layer = self.layers.last().unwrap();
        let zout = out_layer.affine(inputs.last().unwrap());
        let probs = sigmoid(&zout);
        pres.push(zout);
        Trace { inputs, pres, probs }
    }

    /// Forward pass on a raw 3N-bit input.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.trace(input).probs
    }

    /// Mean binary cross entropy over all outputs of all given pairs.
    pub fn loss_on(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        let mut count = 0usize;
        for (x, y) in inputs.iter().zip(targets) {
            let p = self.forward(x);
            for (pi, yi) in p.iter().zip(y) {
                let pc = pi.clamp(1e-12, 1.0 - 1e-12);
                total -= yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln();
                count += 1;
            }
        }
        total / count as f64
    }

    // Accumulate gradients of the mean BCE over the batch.
    fn batch_grads(&self, inputs: &[&Vec<f64>], targets: &[&Vec<f64>]) -> Grads {
        let mut grads = Grads::zeros(&self.layers);
        let scale = 1.0 / (inputs.len() * 2 * self.n_features) as f64;
        let blist = blocks(self.depth);
        for (x, y) in inputs.iter().zip(targets) {
            let tr = self.trace(x);
            let out_idx = self.layers.len() - 1;
            // sigmoid + BCE: dL/dz = (p - y) * scale
            let mut delta: Vec<f64> = tr
                .probs
                .iter()
                .zip(y.iter())
                .map(|(p, yv)| (p - yv) * scale)
                .collect();
            accumulate(&mut grads, out_idx, &delta, &tr.inputs[out_idx]);
            delta = self.layers[out_idx].back(&delta);

            for block in blist.iter().rev() {
                match *block {
                    Block::Single(i) => {
                        let dpre: Vec<f64> = delta
                            .iter()
                            .zip(&tr.pres[i])
                            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, i, &dpre, &tr.inputs[i]);
                        delta = self.layers[i].back(&dpre);
                    }
                    Block::Pair(i) => {
                        let dpre2: Vec<f64> = delta
                            .iter()
                            .zip(&tr.pres[i + 1])
                            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, i + 1, &dpre2, &tr.inputs[i + 1]);
                        let da1 = self.layers[i + 1].back(&dpre2);
                        let dpre1: Vec<f64> = da1
                            .iter()
                            .zip(&tr.pres[i])
                            .map(|(d, p)| if *p > 0.0 { *d } else { 0.0 })
                            .collect();
                        accumulate(&mut grads, i, &dpre1, &tr.inputs[i]);
                        let mut back = self.layers[i].back(&dpre1);
                        // the identity shortcut feeds dpre2 straight to the pair input
                        for (bv, d) in back.iter_mut().zip(&dpre2) {
                            *bv += d;
                        }
                        delta = back;
                    }
                }
            }
        }
        grads
    }

    // -- flat parameter view, used by the gradient-check tests ---------------

    #[doc(hidden)]
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    #[doc(hidden)]
    pub fn get_param(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.w.len() {
                return l.w[idx];
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                return l.b[idx];
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    #[doc(hidden)]
    pub fn set_param(&mut self, mut idx: usize, v: f64) {
        for l in &mut self.layers {
            if idx < l.w.len() {
                l.w[idx] = v;
                return;
            }
            idx -= l.w.len();
            if idx < l.b.len() {
                l.b[idx] = v;
                return;
            }
            idx -= l.b.len();
        }
        panic!("parameter index out of range");
    }

    #[doc(hidden)]
    pub fn flat_gradients(&self, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<f64> {
        let xi: Vec<&Vec<f64>> = inputs.iter().collect();
        let yi: Vec<&Vec<f64>> = targets.iter().collect();
        let grads = self.batch_grads(&xi, &yi);
        let mut flat = Vec::with_capacity(self.param_count());
        for (gw, gb) in grads.w.iter().zip(&grads.b) {
            flat.extend_from_slice(gw);
            flat.extend_from_slice(gb);
        }
        flat
    }

    // -- serialization --------------------------------------------------------

    const MAGIC: &'static [u8; 6] = b"PHFEM\0";
    const VERSION: u16 = 1;

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&Self::VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.depth as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_features as u32).to_le_bytes());
        buf.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        buf.extend_from_slice(&self.feature_names_hash.to_le_bytes());
        for l in &self.layers {
            buf.extend_from_slice(&(l.rows as u32).to_le_bytes());
            buf.extend_from_slice(&(l.cols as u32).to_le_bytes());
            for v in &l.w {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &l.b {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf.extend_from_slice(&(self.train_loss.len() as u32).to_le_bytes());
        for v in self.train_loss.iter().chain(&self.test_loss) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cur = Cursor { bytes: &bytes, pos: 0 };
        if cur.take(6)? != Self::MAGIC {
            return Err(Error::Model(format!(
                "{}: not a model file (bad magic)",
                path.display()
            )));
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != Self::VERSION {
            return Err(Error::Model(format!("unsupported model version {version}")));
        }
        let depth = cur.u32()? as usize;
        let n_features = cur.u32()? as usize;
        let n_layers = cur.u32()? as usize;
        let seed = cur.u64()?;
        let feature_names_hash = cur.u64()?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let rows = cur.u32()? as usize;
            let cols = cur.u32()? as usize;
            let w = cur.f64s(rows * cols)?;
            let b = cur.f64s(rows)?;
            layers.push(Layer { rows, cols, w, b });
        }
        let epochs = cur.u32()? as usize;
        let train_loss = cur.f64s(epochs)?;
        let test_loss = cur.f64s(epochs)?;
        Ok(FeatureEditModel {
            n_features,
            depth,
            layers,
            seed,
            feature_names_hash,
            train_loss,
            test_loss,
        })
    }

    fn check_table(&self, table: &PhoneFeatureTable) -> Result<()> {
        if table.feature_count() != self.n_features
            || feature_names_hash(table) != self.feature_names_hash
        {
            return Err(Error::Model(
                "feature table does not match the one the model was trained on".into(),
            ));
        }
        Ok(())
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Model("truncated model file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn accumulate(grads: &mut Grads, layer: usize, delta: &[f64], input: &[f64]) {
    let cols = input.len();
    let gw = &mut grads.w[layer];
    for (r, d) in delta.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, x) in row.iter_mut().zip(input) {
            *g += d * x;
        }
    }
    for (g, d) in grads.b[layer].iter_mut().zip(delta) {
        *g += d;
    }
}

pub fn feature_names_hash(table: &PhoneFeatureTable) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for name in table.feature_names() {
        for b in name.as_bytes().iter().chain(b"\x1f") {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

// In-place Fisher-Yates; pinned here so shuffling does not depend on rand's
// own shuffle implementation.
fn fisher_yates<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

struct Adam {
    mw: Vec<Vec<f64>>,
    vw: Vec<Vec<f64>>,
    mb: Vec<Vec<f64>>,
    vb: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    fn new(layers: &[Layer]) -> Self {
        Adam {
            mw: layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            vw: layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            mb: layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
            vb: layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
            t: 0,
        }
    }

    fn step(&mut self, layers: &mut [Layer], grads: &Grads, hp: &Hyperparams) {
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for (li, layer) in layers.iter_mut().enumerate() {
            adam_update(
                &mut layer.w,
                &grads.w[li],
                &mut self.mw[li],
                &mut self.vw[li],
                hp,
                bc1,
                bc2,
            );
            adam_update(
                &mut layer.b,
                &grads.b[li],
                &mut self.mb[li],
                &mut self.vb[li],
                hp,
                bc1,
                bc2,
            );
        }
    }
}

fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    hp: &Hyperparams,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grads[i];
        v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        params[i] -= hp.learning_rate * mhat / (vhat.sqrt() + hp.epsilon);
    }
}

/// Train a feature-edit model. Deterministic for a fixed seed: weight
/// initialization, the train/test split, and every epoch's batch order all
/// draw from one seeded stream, in that order.
pub fn train(
    records: &[SoundChangeRecord],
    table: &PhoneFeatureTable,
    hp: &Hyperparams,
) -> Result<FeatureEditModel> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no training records".into()));
    }
    let mut inputs = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    for r in records {
        let (x, y) = make_training_pair(r, table)?;
        inputs.push(x.as_f64());
        targets.push(y.bits().iter().map(|b| *b as f64).collect::<Vec<f64>>());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut model = FeatureEditModel::init(hp.depth, table, hp.seed, &mut rng)?;

    let mut order: Vec<usize> = (0..records.len()).collect();
    fisher_yates(&mut order, &mut rng);
    let n_train = ((records.len() as f64 * hp.train_fraction).round() as usize)
        .clamp(1, records.len());
    let (train_idx, test_idx) = order.split_at(n_train);
    let pick = |idxs: &[usize]| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            idxs.iter().map(|i| inputs[*i].clone()).collect(),
            idxs.iter().map(|i| targets[*i].clone()).collect(),
        )
    };
    let (train_x, train_y) = pick(train_idx);
    let (test_x, test_y) = pick(test_idx);

    let mut adam = Adam::new(&model.layers);
    let mut epoch_order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 0..hp.epochs {
        fisher_yates(&mut epoch_order, &mut rng);
        for batch in epoch_order.chunks(hp.batch_size.max(1)) {
            let bx: Vec<&Vec<f64>> = batch.iter().map(|i| &train_x[*i]).collect();
            let by: Vec<&Vec<f64>> = batch.iter().map(|i| &train_y[*i]).collect();
            let grads = model.batch_grads(&bx, &by);
            adam.step(&mut model.layers, &grads, hp);
        }
        let tr = model.loss_on(&train_x, &train_y);
        if !tr.is_finite() {
            return Err(Error::Training(format!(
                "non-finite training loss at epoch {}",
                epoch + 1
            )));
        }
        let te = if test_x.is_empty() {
            f64::NAN
        } else {
            model.loss_on(&test_x, &test_y)
        };
        model.train_loss.push(tr);
        model.test_loss.push(te);
    }
    Ok(model)
}

/// Per-feature direction probabilities for a source phone: entry 2f is
/// P(feature f increases | source), entry 2f+1 is P(it decreases).
pub fn predict(
    model: &FeatureEditModel,
    source: &str,
    table: &PhoneFeatureTable,
) -> Result<Vec<f64>> {
    model.check_table(table)?;
    let enc = one_hot(table.encode(source)?);
    Ok(model.forward(&enc.as_f64()))
}

/// Directional weighted feature edit distance: the sum, over features that
/// must change to turn `s` into `t`, of one minus the predicted probability
/// of that directed change. Not symmetric and not divided by N.
pub fn dwfed(
    model: &FeatureEditModel,
    table: &PhoneFeatureTable,
    s: &str,
    t: &str,
) -> Result<f64> {
    let vs = table.encode(s)?;
    let vt = table.encode(t)?;
    if vs == vt {
        return Ok(0.0);
    }
    let probs = predict(model, s, table)?;
    Ok(dwfed_from_probs(&probs, vs.values(), vt.values()))
}

/// The DWFED sum given already-predicted probabilities for the source phone.
pub fn dwfed_from_probs(source_probs: &[f64], vs: &[i8], vt: &[i8]) -> f64 {
    let mut cost = 0.0;
    for f in 0..vs.len() {
        if vt[f] > vs[f] {
            cost += 1.0 - source_probs[2 * f];
        } else if vt[f] < vs[f] {
            cost += 1.0 - source_probs[2 * f + 1];
        }
    }
    cost
}

/// Write `epoch<TAB>train_bce<TAB>test_bce` rows.
pub fn write_loss_curve(model: &FeatureEditModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch\ttrain_bce\ttest_bce\n");
    for (i, (tr, te)) in model.train_loss.iter().zip(&model.test_loss).enumerate() {
        out.push_str(&format!("{}\t{}\t{}\n", i + 1, tr, te));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
