//! Two-stage training: the baseline on a mortality table, then the residual
//! network on a portfolio under the absolute expected-cash-flow loss.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{prepare_contracts, PreparedContract, SequenceBatch};
use super::features::fit_residual_scaler;
use super::model::{BaseLogits, BaselineModel, Model, ResidualModel, BASELINE_WIDTHS, RESIDUAL_WIDTHS};
use crate::actuarial::{psi, Gender, PaymentStyle};
use crate::error::{Error, Result};
use crate::mortality::{MortalityTable, TableDataset};
use crate::nn::{clip_gradients, lr_schedule, Adam, AdamConfig, EarlyStopping, Tape, Tensor};
use crate::portfolio::Portfolio;

/// Stage-1 hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub widths: Vec<usize>,
    pub gender: Gender,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Stop once every one-step death probability on `fit_ages` is within
    /// this relative error of the table...
    pub tolerance: f64,
    /// ...and the monthly-to-annual ratio is within this relative error of 1/12.
    pub ratio_tolerance: f64,
    pub fit_ages: (u32, u32),
    pub clip: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            widths: BASELINE_WIDTHS.to_vec(),
            gender: Gender::Male,
            batch_size: 32,
            lr: 1e-3,
            max_epochs: 5000,
            tolerance: 0.10,
            ratio_tolerance: 0.15,
            fit_ages: (18, 66),
            clip: 100.0,
            seed: 1,
        }
    }
}

/// Stage-2 hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualConfig {
    pub widths: Vec<usize>,
    pub batch_size: usize,
    /// Defaults to 0.005 on a male and 0.001 on a female baseline.
    pub lr: Option<f64>,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip: f64,
    pub warmup: usize,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
    /// Start the output layer at zero so training begins at the baseline.
    pub zero_init_output: bool,
}

impl Default for ResidualConfig {
    fn default() -> Self {
        ResidualConfig {
            widths: RESIDUAL_WIDTHS.to_vec(),
            batch_size: 32,
            lr: None,
            max_epochs: 1000,
            patience: 50,
            clip: 100.0,
            warmup: 50,
            decay_every: 15,
            decay_factor: 0.9,
            seed: 2,
            zero_init_output: true,
        }
    }
}

impl ResidualConfig {
    pub fn learning_rate(&self, baseline_gender: Gender) -> f64 {
        self.lr.unwrap_or(match baseline_gender {
            Gender::Male => 0.005,
            Gender::Female => 0.001,
        })
    }
}

/// Both stages, as read from a TOML file with `[baseline]` and `[residual]` tables.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub baseline: BaselineConfig,
    pub residual: ResidualConfig,
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidParameter(format!("training config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's batches (KL in stage 1, `R_emp` in stage 2).
    pub loss: f64,
    /// Largest global gradient norm before clipping within the epoch.
    pub grad_norm: f64,
    pub wall_time_s: f64,
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,lr,R_emp,grad_norm,wall_time_s\n");
    for r in log {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.lr, r.loss, r.grad_norm, r.wall_time_s));
    }
    out
}

/// Worst relative errors of a baseline against its table on a set of ages.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineFit {
    /// `max |pi_hat_01 - q/m| / (q/m)` over ages and payment styles.
    pub max_rel_error: f64,
    /// `max |12 pi_hat_01(a, 12) / pi_hat_01(a, 1) - 1|` over ages.
    pub ratio_error: f64,
}

pub fn baseline_fit(model: &BaselineModel, table: &MortalityTable, ages: (u32, u32)) -> Result<BaselineFit> {
    let g = model.gender();
    let mut points = Vec::new();
    for a in ages.0..=ages.1 {
        for m in PaymentStyle::ALL {
            points.push((a as f64, m));
        }
    }
    let probs = model.death_probs(&points)?;
    let mut max_rel_error: f64 = 0.0;
    let mut ratio_error: f64 = 0.0;
    for (chunk, a) in probs.chunks(4).zip(ages.0..) {
        let q = table.q(a, g)?;
        for (p, m) in chunk.iter().zip(PaymentStyle::ALL) {
            let target = q / m.per_year() as f64;
            max_rel_error = max_rel_error.max((p - target).abs() / target);
        }
        let ratio = chunk[3] / chunk[0];
        ratio_error = ratio_error.max((12.0 * ratio - 1.0).abs());
    }
    if !(max_rel_error.is_finite() && ratio_error.is_finite()) {
        return Err(Error::Numerical("baseline predicts non-finite probabilities".into()));
    }
    Ok(BaselineFit {
        max_rel_error,
        ratio_error,
    })
}

#[derive(Clone, Debug)]
pub struct BaselineRun {
    pub model: BaselineModel,
    pub log: Vec<EpochLog>,
    pub fit: BaselineFit,
    /// Whether the tolerances were met before `max_epochs`.
    pub converged: bool,
}

/// Fits the baseline to the table dataset by minimising the mean KL
/// divergence of its softmax output from the table rows.
pub fn fit_baseline(
    ds: &TableDataset,
    table: &MortalityTable,
    cfg: &BaselineConfig,
    mut observer: impl FnMut(&EpochLog),
) -> Result<BaselineRun> {
    if ds.records.is_empty() {
        return Err(Error::InvalidParameter("empty table dataset".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let mut model = BaselineModel::new(&cfg.widths, ds.gender, cfg.seed)?;
    let mut adam = Adam::new(AdamConfig::default(), model.params().values());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut order: Vec<usize> = (0..ds.records.len()).collect();
    let mut log = Vec::new();
    let start = Instant::now();
    let mut fit = baseline_fit(&model, table, cfg.fit_ages)?;
    let tolerances_met = |f: &BaselineFit| f.max_rel_error <= cfg.tolerance && f.ratio_error <= cfg.ratio_tolerance;
    let mut converged = tolerances_met(&fit);
    let mut epoch = 0;
    while !converged && epoch < cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut max_norm: f64 = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x: Vec<f64> = idx.iter().flat_map(|&i| ds.records[i].features).collect();
            let y: Vec<f64> = idx.iter().flat_map(|&i| ds.records[i].target).collect();
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape);
            let xv = tape.constant(Tensor::matrix(idx.len(), 2, x)?);
            let logits = model.forward(&mut tape, &bound, xv)?;
            let q = tape.softmax(logits);
            let loss = tape.kl_div(q, Tensor::matrix(idx.len(), 2, y)?)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("baseline loss became {value} in epoch {epoch}")));
            }
            let mut grads = bound.gradients(model.params(), &tape.backward(loss)?);
            drop(tape);
            max_norm = max_norm.max(clip_gradients(&mut grads, cfg.clip));
            adam.update(model.params_mut().values_mut(), &grads, cfg.lr);
            total += value * idx.len() as f64;
        }
        let entry = EpochLog {
            epoch,
            lr: cfg.lr,
            loss: total / ds.records.len() as f64,
            grad_norm: max_norm,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        observer(&entry);
        log.push(entry);
        fit = baseline_fit(&model, table, cfg.fit_ages)?;
        converged = tolerances_met(&fit);
        epoch += 1;
    }
    if !model.params().is_finite() {
        return Err(Error::Numerical("baseline parameters are not finite".into()));
    }
    Ok(BaselineRun {
        model,
        log,
        fit,
        converged,
    })
}

#[derive(Clone, Debug)]
pub struct ResidualRun {
    pub model: Model,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were restored.
    pub best_epoch: Option<usize>,
    /// Empirical risk of the restored parameters over the whole portfolio.
    pub final_risk: f64,
}

/// Groups contracts of similar length into batches: sort by length with
/// random tie-breaks, cut into consecutive batches, shuffle the batches.
pub fn batch_order(lengths: &[usize], batch_size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut keyed: Vec<(usize, u64, usize)> = lengths.iter().enumerate().map(|(i, &l)| (l, rng.random(), i)).collect();
    keyed.sort_unstable();
    let mut batches: Vec<Vec<usize>> = keyed
        .chunks(batch_size.max(1))
        .map(|c| c.iter().map(|&(_, _, i)| i).collect())
        .collect();
    batches.shuffle(rng);
    batches
}

/// Encodes every contract of `portfolio` for the given baseline.
pub fn prepare_portfolio(base: &BaselineModel, scaler: &crate::nn::MinMaxScaler, portfolio: &Portfolio) -> Result<Vec<PreparedContract>> {
    let mut out = Vec::with_capacity(portfolio.len());
    for (chunk_no, chunk) in portfolio.contracts.chunks(256).enumerate() {
        let flows = (0..chunk.len())
            .map(|j| portfolio.cash_flows(chunk_no * 256 + j))
            .collect::<Result<Vec<_>>>()?;
        out.extend(prepare_contracts(base, scaler, chunk, Some(&flows))?);
    }
    Ok(out)
}

/// Trains the residual network on top of the frozen `base`.
///
/// Each optimiser step uses one batch: gradients are clipped to global norm
/// `clip` and fed to Adam with the scheduled learning rate. Early stopping
/// watches the epoch's mean loss and the best epoch's parameters are
/// restored at the end.
pub fn fit_residual(
    portfolio: &Portfolio,
    base: BaselineModel,
    cfg: &ResidualConfig,
    mut observer: impl FnMut(&EpochLog, &Model) -> Result<()>,
) -> Result<ResidualRun> {
    if portfolio.is_empty() {
        return Err(Error::InvalidParameter("empty portfolio".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let res_scaler = fit_residual_scaler(&portfolio.contracts)?;
    let prepared = prepare_portfolio(&base, &res_scaler, portfolio)?;
    let lengths: Vec<usize> = prepared.iter().map(|p| p.len).collect();
    let base_lr = cfg.learning_rate(base.gender());
    let mut model = Model {
        base,
        res: ResidualModel::new(&cfg.widths, cfg.seed, cfg.zero_init_output)?,
        res_scaler,
    };
    let mut adam = Adam::new(AdamConfig::default(), model.res.params().values());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.res.params().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let mut log = Vec::new();
    let start = Instant::now();
    let n = prepared.len() as f64;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_schedule(epoch, base_lr, cfg.warmup, cfg.decay_every, cfg.decay_factor);
        let mut total = 0.0;
        let mut max_norm: f64 = 0.0;
        for idx in batch_order(&lengths, cfg.batch_size, &mut rng) {
            let items: Vec<&PreparedContract> = idx.iter().map(|&i| &prepared[i]).collect();
            let batch = SequenceBatch::assemble(&items, None)?;
            let mut tape = Tape::new();
            let bound = model.res.params().bind(&mut tape);
            let (loss, _) = model.risk_on_tape(&mut tape, &bound, BaseLogits::Cached, &batch)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Numerical(format!("empirical risk became {value} in epoch {epoch}")));
            }
            let mut grads = bound.gradients(model.res.params(), &tape.backward(loss)?);
            drop(tape);
            let norm = clip_gradients(&mut grads, cfg.clip);
            if !norm.is_finite() {
                return Err(Error::Numerical(format!("gradient norm became {norm} in epoch {epoch}")));
            }
            max_norm = max_norm.max(norm);
            adam.update(model.res.params_mut().values_mut(), &grads, lr);
            total += value * items.len() as f64;
        }
        let entry = EpochLog {
            epoch,
            lr,
            loss: total / n,
            grad_norm: max_norm,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        if max_norm > 1e3 * cfg.clip {
            log::warn!("epoch {epoch}: gradient norm {max_norm:.3e} before clipping");
        }
        if stopper.record(epoch, entry.loss) {
            best = model.res.params().clone();
        }
        observer(&entry, &model)?;
        log.push(entry);
        if stopper.should_stop() {
            log::info!("early stop after epoch {epoch}; best epoch {:?}", stopper.best_epoch());
            break;
        }
    }
    *model.res.params_mut() = best;
    let final_risk = empirical_risk(&model, portfolio)?;
    Ok(ResidualRun {
        model,
        log,
        best_epoch: stopper.best_epoch(),
        final_risk,
    })
}

/// `R_emp = mean_c |psi(pi_hat(c), c, y(c))|` over the portfolio.
pub fn empirical_risk(model: &Model, portfolio: &Portfolio) -> Result<f64> {
    let seqs = model.predict_sequences(&portfolio.contracts)?;
    let mut total = 0.0;
    for (i, (c, seq)) in portfolio.contracts.iter().zip(&seqs).enumerate() {
        total += psi(seq, c, &portfolio.cash_flows(i)?)?.abs();
    }
    Ok(total / portfolio.len() as f64)
}
