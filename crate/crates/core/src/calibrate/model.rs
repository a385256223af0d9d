//! The baseline feed-forward net, the residual recurrent net and their
//! softmax composition.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{prepare_contracts, SequenceBatch};
use super::features::{encode_baseline, BASELINE_FEATURES, RESIDUAL_FEATURES};
use crate::actuarial::{Contract, Gender, PaymentStyle, TransitionMatrix, TransitionSource};
use crate::error::{Error, Result};
use crate::mortality::baseline_scaler;
use crate::nn::{softmax_rows, Activation, Bound, Dense, Gru, MinMaxScaler, NamedTensor, ParamSet, Tape, Tensor, Var};

/// Widths of the pre-training network: input, hidden layers, output.
pub const BASELINE_WIDTHS: [usize; 5] = [2, 40, 40, 20, 2];
/// Widths of the residual network: input, four dense layers, the recurrent
/// layer, output.
pub const RESIDUAL_WIDTHS: [usize; 7] = [4, 50, 50, 50, 50, 50, 2];

/// Dense ReLU stack with a linear output producing two logits per row.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    widths: Vec<usize>,
    gender: Gender,
    scaler: MinMaxScaler,
    params: ParamSet,
    layers: Vec<Dense>,
}

impl BaselineModel {
    pub fn new(widths: &[usize], gender: Gender, seed: u64) -> Result<Self> {
        if widths.len() < 2 || widths[0] != BASELINE_FEATURES || *widths.last().unwrap() != 2 || widths.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "baseline widths must run from {BASELINE_FEATURES} inputs to 2 outputs, got {widths:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last { Activation::Linear } else { Activation::Relu };
                Dense::new(&mut params, &format!("base.layer{}", i + 1), w[0], w[1], act, &mut rng)
            })
            .collect();
        Ok(BaselineModel {
            widths: widths.to_vec(),
            gender,
            scaler: baseline_scaler(),
            params,
            layers,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Table column the model was pre-trained on.
    pub fn gender(&self) -> Gender {
        self.gender
    }

    pub fn scaler(&self) -> &MinMaxScaler {
        &self.scaler
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Dense::num_params).sum()
    }

    /// Logits for scaled inputs `x` (`rows x 2`).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, bound, h)?;
        }
        Ok(h)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, &bound, xv)?;
        Ok(tape.value(out).clone())
    }

    /// One-step death probabilities for raw `(age, m)` pairs.
    pub fn death_probs(&self, points: &[(f64, PaymentStyle)]) -> Result<Vec<f64>> {
        let data = points
            .iter()
            .flat_map(|&(a, m)| encode_baseline(a, m, &self.scaler))
            .collect();
        let x = Tensor::matrix(points.len(), BASELINE_FEATURES, data)?;
        let probs = softmax_rows(&self.logits(&x)?);
        Ok(probs.data().chunks(2).map(|r| r[1]).collect())
    }
}

/// Dense ReLU layers, one GRU layer and a linear output, run over the
/// iterations of a contract. The recurrent state starts at zero for every
/// contract.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualModel {
    widths: Vec<usize>,
    params: ParamSet,
    dense: Vec<Dense>,
    gru: Gru,
    out: Dense,
}

impl ResidualModel {
    /// With `zero_output` the output layer starts at zero, so an untrained
    /// residual leaves the baseline unchanged.
    pub fn new(widths: &[usize], seed: u64, zero_output: bool) -> Result<Self> {
        let n = widths.len();
        if n < 3 || widths[0] != RESIDUAL_FEATURES || widths[n - 1] != 2 || widths.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "residual widths must run from {RESIDUAL_FEATURES} inputs through a recurrent layer to 2 outputs, got {widths:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let dense: Vec<Dense> = widths[..n - 2]
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::new(&mut params, &format!("res.layer{}", i + 1), w[0], w[1], Activation::Relu, &mut rng))
            .collect();
        let gru_index = dense.len() + 1;
        let gru = Gru::new(&mut params, &format!("res.layer{gru_index}"), widths[n - 3], widths[n - 2], &mut rng);
        let out = Dense::new(
            &mut params,
            &format!("res.layer{}", gru_index + 1),
            widths[n - 2],
            2,
            Activation::Linear,
            &mut rng,
        );
        if zero_output {
            let shape = params.get(out.w).shape().to_vec();
            *params.get_mut(out.w) = Tensor::zeros(&shape);
        }
        Ok(ResidualModel {
            widths: widths.to_vec(),
            params,
            dense,
            gru,
            out,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.dense.iter().map(Dense::num_params).sum::<usize>() + self.gru.num_params() + self.out.num_params()
    }

    /// Logits for step-major inputs `xs` (`steps*batch x 4`).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, xs: Var, batch: usize) -> Result<Var> {
        let mut h = xs;
        for layer in &self.dense {
            h = layer.forward(tape, bound, h)?;
        }
        let states = self.gru.forward_sequence(tape, bound, h, batch)?;
        self.out.forward(tape, bound, states)
    }
}

/// Where the baseline logits of a batch come from.
pub enum BaseLogits<'a> {
    /// Precomputed with the frozen baseline.
    Cached,
    /// Recomputed on the tape from the given binding of the baseline
    /// parameters.
    OnTape(&'a Bound),
}

/// Joint model: alive row `softmax(base + res)`, dead row `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub base: BaselineModel,
    pub res: ResidualModel,
    pub res_scaler: MinMaxScaler,
}

/// Contracts evaluated together during inference.
const PREDICT_CHUNK: usize = 64;

impl Model {
    /// Alive-row probabilities of `batch` on `tape` (`steps*batch x 2`).
    pub fn joint_probs(&self, tape: &mut Tape, res: &Bound, base: BaseLogits<'_>, batch: &SequenceBatch) -> Result<Var> {
        let xs = tape.constant(batch.res_features.clone());
        let res_logits = self.res.forward(tape, res, xs, batch.batch)?;
        let base_logits = match base {
            BaseLogits::Cached => tape.constant(batch.base_logits.clone()),
            BaseLogits::OnTape(bound) => {
                let x = tape.constant(batch.base_features.clone());
                self.base.forward(tape, bound, x)?
            }
        };
        let z = tape.add(base_logits, res_logits)?;
        Ok(tape.softmax(z))
    }

    /// Mean absolute expected cash flow of `batch`, and the per-contract
    /// values `psi` (`batch x 1`).
    pub fn risk_on_tape(&self, tape: &mut Tape, res: &Bound, base: BaseLogits<'_>, batch: &SequenceBatch) -> Result<(Var, Var)> {
        let probs = self.joint_probs(tape, res, base, batch)?;
        let psi = tape.expected_cash_flow(probs, batch.flows.clone())?;
        let abs = tape.abs(psi);
        Ok((tape.mean(abs), psi))
    }

    /// One-step matrices `pi^(k)(c)`, `k = 0..n*m`, for every contract.
    pub fn predict_sequences(&self, contracts: &[Contract]) -> Result<Vec<Vec<TransitionMatrix>>> {
        let mut out = Vec::with_capacity(contracts.len());
        for chunk in contracts.chunks(PREDICT_CHUNK) {
            let prepared = prepare_contracts(&self.base, &self.res_scaler, chunk, None)?;
            let refs: Vec<_> = prepared.iter().collect();
            let batch = SequenceBatch::assemble(&refs, None)?;
            let mut tape = Tape::new();
            let bound = self.res.params.bind_frozen(&mut tape);
            let probs = self.joint_probs(&mut tape, &bound, BaseLogits::Cached, &batch)?;
            let p = tape.value(probs).data();
            for (b, c) in chunk.iter().enumerate() {
                let seq = (0..c.iterations())
                    .map(|k| {
                        let row = 2 * (k * batch.batch + b);
                        alive_row_matrix(p[row], p[row + 1])
                    })
                    .collect::<Result<Vec<_>>>()?;
                out.push(seq);
            }
        }
        Ok(out)
    }

    pub fn predict_sequence(&self, c: &Contract) -> Result<Vec<TransitionMatrix>> {
        Ok(self.predict_sequences(std::slice::from_ref(c))?.remove(0))
    }
}

/// Matrix from a softmax row; the row sum can miss one by an ulp, which is
/// absorbed into the survival entry.
fn alive_row_matrix(p00: f64, p01: f64) -> Result<TransitionMatrix> {
    if !(p00.is_finite() && p01.is_finite()) {
        return Err(Error::Numerical("non-finite transition probability".into()));
    }
    TransitionMatrix::from_alive_row(1.0 - p01, p01).or_else(|_| TransitionMatrix::from_alive_row(p00, 1.0 - p00))
}

impl TransitionSource for Model {
    fn transition_sequence(&self, c: &Contract) -> Result<Vec<TransitionMatrix>> {
        self.predict_sequence(c)
    }

    fn transition_sequences(&self, cs: &[Contract]) -> Result<Vec<Vec<TransitionMatrix>>> {
        self.predict_sequences(cs)
    }
}

/// Self-describing model file: architecture, scalers and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub baseline: BaselineSection,
    pub residual: Option<ResidualSection>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineSection {
    pub widths: Vec<usize>,
    pub gender: Gender,
    pub scaler: MinMaxScaler,
    pub params: Vec<NamedTensor>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualSection {
    pub widths: Vec<usize>,
    pub scaler: MinMaxScaler,
    pub params: Vec<NamedTensor>,
}

impl BaselineModel {
    pub fn to_section(&self) -> BaselineSection {
        BaselineSection {
            widths: self.widths.clone(),
            gender: self.gender,
            scaler: self.scaler.clone(),
            params: self.params.to_named(),
        }
    }

    pub fn from_section(s: &BaselineSection) -> Result<Self> {
        let mut m = BaselineModel::new(&s.widths, s.gender, 0)?;
        m.params.load_named(&s.params)?;
        m.scaler = s.scaler.clone();
        Ok(m)
    }
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            baseline: self.base.to_section(),
            residual: Some(ResidualSection {
                widths: self.res.widths.clone(),
                scaler: self.res_scaler.clone(),
                params: self.res.params.to_named(),
            }),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let base = BaselineModel::from_section(&ck.baseline)?;
        let r = ck
            .residual
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("checkpoint holds no residual network".into()))?;
        let mut res = ResidualModel::new(&r.widths, 0, false)?;
        res.params.load_named(&r.params)?;
        Ok(Model {
            base,
            res,
            res_scaler: r.scaler.clone(),
        })
    }
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numerical(format!("cannot serialise checkpoint: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter(format!("malformed checkpoint: {e}")))
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = crate::io::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e))
    }
}
