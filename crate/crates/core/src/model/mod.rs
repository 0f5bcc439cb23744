//! A tiny autoregressive language model: token embedding, one LSTM cell and
//! a linear output projection, with hand-written backpropagation through time.

mod adam;
mod checkpoint;
mod train;

pub use adam::{AdamState, GradReport};
pub use checkpoint::{load_checkpoint, parse_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{
    backward_and_update, batch_objective_grads, ALPHA_GRID, GAMMA_GRID, eval_nll, evaluate_teacher_forced, model_gradcheck, train_epochs,
    train_epochs_with, EpochLog, NovelScope, StepGrads, TeacherForcedEval, TrainConfig, TrainLog,
};

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::vocab::Batch;
use crate::{digest_hex, Error, Result, TokenId};

pub const INIT_RANGE: f64 = 0.08;

/// Gate blocks inside the fused gate matrix, in row order.
pub const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl ModelDims {
    pub fn new(vocab: usize, embed: usize, hidden: usize) -> Result<Self> {
        if vocab == 0 || embed == 0 || hidden == 0 {
            return Err(Error::ZeroDim {
                vocab,
                embed,
                hidden,
            });
        }
        Ok(Self { vocab, embed, hidden })
    }

    pub fn param_count(&self) -> usize {
        let (v, e, h) = (self.vocab, self.embed, self.hidden);
        v * e + 4 * h * (e + h) + 4 * h + v * h + v
    }
}

/// All trainable tensors. Also used for gradients and Adam moments.
///
/// The four gate weight matrices `[hidden x (embed + hidden)]` are stacked
/// into `w_gates` in [`GATES`] order, biases likewise into `b_gates`.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embed: Array2<f64>,
    pub w_gates: Array2<f64>,
    pub b_gates: Array2<f64>,
    pub proj: Array2<f64>,
    pub proj_b: Array2<f64>,
}

impl Weights {
    pub const NAMES: [&'static str; 5] = ["embed", "w_gates", "b_gates", "proj", "proj_b"];

    pub fn zeros(d: ModelDims) -> Self {
        let z = |r, c| Array2::zeros((r, c));
        Self {
            embed: z(d.vocab, d.embed),
            w_gates: z(4 * d.hidden, d.embed + d.hidden),
            b_gates: z(1, 4 * d.hidden),
            proj: z(d.vocab, d.hidden),
            proj_b: z(1, d.vocab),
        }
    }

    pub fn tensors(&self) -> [&Array2<f64>; 5] {
        [&self.embed, &self.w_gates, &self.b_gates, &self.proj, &self.proj_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 5] {
        [
            &mut self.embed,
            &mut self.w_gates,
            &mut self.b_gates,
            &mut self.proj,
            &mut self.proj_b,
        ]
    }

    pub fn sum_squares(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum()
    }

    pub fn first_non_finite(&self) -> Option<&'static str> {
        Self::NAMES
            .iter()
            .zip(self.tensors())
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| *n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLM {
    pub dims: ModelDims,
    pub weights: Weights,
}

/// Activations of one time step kept for the backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    /// `[x_t, h_{t-1}]`, rows x (embed + hidden)
    pub z: Array2<f64>,
    /// activated gates in [`GATES`] order, rows x 4*hidden
    pub gates: Array2<f64>,
    pub c: Array2<f64>,
    pub tanh_c: Array2<f64>,
    pub h: Array2<f64>,
}

/// Logits of every step (`rows x vocab` each) plus cached activations.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Vec<Array2<f64>>,
    pub steps: Vec<StepCache>,
    pub inputs: Array2<TokenId>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl TinyLM {
    /// Uniform initialization in `[-0.08, 0.08]`, filled tensor by tensor in
    /// row-major order from a ChaCha8 stream seeded with `seed`.
    pub fn init(vocab_size: usize, d_embed: usize, d_hidden: usize, seed: u64) -> Result<Self> {
        let dims = ModelDims::new(vocab_size, d_embed, d_hidden)?;
        let mut weights = Weights::zeros(dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in weights.tensors_mut() {
            t.iter_mut()
                .for_each(|x| *x = rng.random_range(-INIT_RANGE..=INIT_RANGE));
        }
        Ok(Self { dims, weights })
    }

    pub fn param_count(&self) -> usize {
        self.weights.tensors().iter().map(|t| t.len()).sum()
    }

    /// SHA-256 over the little-endian bit patterns of every parameter.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::with_capacity(self.param_count() * 8);
        for t in self.weights.tensors() {
            for x in t.iter() {
                bytes.extend_from_slice(&x.to_bits().to_le_bytes());
            }
        }
        digest_hex(&bytes)
    }

    fn check_ids(&self, ids: impl IntoIterator<Item = TokenId>) -> Result<()> {
        for id in ids {
            if id as usize >= self.dims.vocab {
                return Err(Error::IdOutOfRange {
                    id: id as usize,
                    size: self.dims.vocab,
                });
            }
        }
        Ok(())
    }

    /// Runs the cell over `x` (embedded inputs) from state `(h, c)`.
    fn cell(&self, x: ndarray::ArrayView2<f64>, h_prev: &Array2<f64>, c_prev: &Array2<f64>) -> StepCache {
        let (e, hd) = (self.dims.embed, self.dims.hidden);
        let rows = x.nrows();
        let mut z = Array2::zeros((rows, e + hd));
        z.slice_mut(s![.., ..e]).assign(&x);
        z.slice_mut(s![.., e..]).assign(h_prev);
        let mut gates = z.dot(&self.weights.w_gates.t());
        gates += &self.weights.b_gates;
        gates.slice_mut(s![.., ..3 * hd]).mapv_inplace(sigmoid);
        gates.slice_mut(s![.., 3 * hd..]).mapv_inplace(f64::tanh);

        let mut c = Array2::zeros((rows, hd));
        let mut tanh_c = Array2::zeros((rows, hd));
        let mut h = Array2::zeros((rows, hd));
        let (gi, gf) = (gates.slice(s![.., ..hd]), gates.slice(s![.., hd..2 * hd]));
        let (go, gg) = (gates.slice(s![.., 2 * hd..3 * hd]), gates.slice(s![.., 3 * hd..]));
        Zip::from(&mut c)
            .and(&gi)
            .and(&gf)
            .and(&gg)
            .and(c_prev)
            .for_each(|c, &i, &f, &g, &cp| *c = f * cp + i * g);
        Zip::from(&mut tanh_c).and(&c).for_each(|t, &c| *t = c.tanh());
        Zip::from(&mut h)
            .and(&go)
            .and(&tanh_c)
            .for_each(|h, &o, &tc| *h = o * tc);
        StepCache { z, gates, c, tanh_c, h }
    }

    fn project(&self, h: &Array2<f64>) -> Array2<f64> {
        let mut logits = h.dot(&self.weights.proj.t());
        logits += &self.weights.proj_b;
        logits
    }

    fn embed_rows(&self, ids: impl Iterator<Item = TokenId>) -> Array2<f64> {
        let ids: Vec<usize> = ids.map(|i| i as usize).collect();
        self.weights.embed.select(Axis(0), &ids)
    }

    /// Teacher-forced forward pass from a zero state. Padded positions are
    /// computed but must be excluded from any loss by the caller.
    pub fn forward(&self, batch: &Batch) -> Result<ForwardPass> {
        if batch.targets.dim() != batch.inputs.dim() || batch.pad_mask.dim() != batch.inputs.dim() {
            return Err(Error::LengthMismatch {
                what: "batch tensor shapes",
                left: batch.inputs.len(),
                right: batch.targets.len(),
            });
        }
        self.check_ids(batch.inputs.iter().copied())?;
        self.check_ids(batch.targets.iter().copied())?;
        let (rows, steps) = batch.inputs.dim();
        let hd = self.dims.hidden;
        let mut h = Array2::zeros((rows, hd));
        let mut c = Array2::zeros((rows, hd));
        let mut caches = Vec::with_capacity(steps);
        let mut logits = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = self.embed_rows(batch.inputs.column(t).iter().copied());
            let cache = self.cell(x.view(), &h, &c);
            logits.push(self.project(&cache.h));
            h = cache.h.clone();
            c = cache.c.clone();
            caches.push(cache);
        }
        Ok(ForwardPass {
            logits,
            steps: caches,
            inputs: batch.inputs.clone(),
        })
    }

    /// Gradients of `sum_t <dlogits_t, logits_t>` with respect to every
    /// parameter.
    pub fn backward(&self, fwd: &ForwardPass, dlogits: &[Array2<f64>]) -> Result<Weights> {
        if dlogits.len() != fwd.steps.len() {
            return Err(Error::LengthMismatch {
                what: "logit gradients vs steps",
                left: dlogits.len(),
                right: fwd.steps.len(),
            });
        }
        let (e, hd) = (self.dims.embed, self.dims.hidden);
        let rows = fwd.inputs.nrows();
        let w = &self.weights;
        let mut g = Weights::zeros(self.dims);
        let mut dh_next = Array2::<f64>::zeros((rows, hd));
        let mut dc_next = Array2::<f64>::zeros((rows, hd));
        let zero_c = Array2::<f64>::zeros((rows, hd));
        let mut da = Array2::<f64>::zeros((rows, 4 * hd));

        for t in (0..fwd.steps.len()).rev() {
            let cache = &fwd.steps[t];
            let dl = &dlogits[t];
            g.proj += &dl.t().dot(&cache.h);
            g.proj_b += &dl.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut dh = dl.dot(&w.proj);
            dh += &dh_next;

            let c_prev = if t > 0 { &fwd.steps[t - 1].c } else { &zero_c };
            let gates = &cache.gates;
            for r in 0..rows {
                let gr = gates.row(r);
                let (gi, gf, go, gg) = (
                    gr.slice(s![..hd]),
                    gr.slice(s![hd..2 * hd]),
                    gr.slice(s![2 * hd..3 * hd]),
                    gr.slice(s![3 * hd..]),
                );
                let (tc, cp) = (cache.tanh_c.row(r), c_prev.row(r));
                let mut dar = da.row_mut(r);
                for j in 0..hd {
                    let dhj = dh[[r, j]];
                    let d_o = dhj * tc[j];
                    let dc = dhj * go[j] * (1.0 - tc[j] * tc[j]) + dc_next[[r, j]];
                    dar[j] = dc * gg[j] * gi[j] * (1.0 - gi[j]);
                    dar[hd + j] = dc * cp[j] * gf[j] * (1.0 - gf[j]);
                    dar[2 * hd + j] = d_o * go[j] * (1.0 - go[j]);
                    dar[3 * hd + j] = dc * gi[j] * (1.0 - gg[j] * gg[j]);
                    dc_next[[r, j]] = dc * gf[j];
                }
            }
            g.w_gates += &da.t().dot(&cache.z);
            g.b_gates += &da.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dz = da.dot(&w.w_gates);
            dh_next.assign(&dz.slice(s![.., e..]));
            for (r, &id) in fwd.inputs.column(t).iter().enumerate() {
                let mut row = g.embed.row_mut(id as usize);
                row += &dz.slice(s![r, ..e]);
            }
        }
        Ok(g)
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState {
            h: Array1::zeros(self.dims.hidden),
            c: Array1::zeros(self.dims.hidden),
        }
    }

    /// Feeds one token and returns the next-token logits with the new state.
    pub fn step(&self, state: &LstmState, token: TokenId) -> (Vec<f64>, LstmState) {
        let x = self.weights.embed.row(token as usize).insert_axis(Axis(0));
        let h = state.h.view().insert_axis(Axis(0)).to_owned();
        let c = state.c.view().insert_axis(Axis(0)).to_owned();
        let cache = self.cell(x, &h, &c);
        let logits = self.project(&cache.h);
        (
            logits.row(0).to_vec(),
            LstmState {
                h: cache.h.row(0).to_owned(),
                c: cache.c.row(0).to_owned(),
            },
        )
    }
}

/// Recurrent state of a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
