//! Padded, step-major batches of contract sequences.

use std::rc::Rc;

use super::features::{encode_baseline, encode_step, BASELINE_FEATURES, RESIDUAL_FEATURES};
use super::model::BaselineModel;
use crate::actuarial::{Contract, DiscountedCashFlowTensor};
use crate::error::Result;
use crate::nn::{CashFlowBatch, MinMaxScaler, Tensor};

/// Network inputs and cash flows of one contract, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedContract {
    /// Number of transitions `n*m`.
    pub len: usize,
    pub res_features: Vec<[f64; RESIDUAL_FEATURES]>,
    pub base_features: Vec<[f64; BASELINE_FEATURES]>,
    /// Frozen-baseline logits per iteration.
    pub base_logits: Vec<[f64; 2]>,
    /// `y_00^(k)` and `y_01^(k)` for `k = 0..=len`; empty when unknown.
    pub y00: Vec<f64>,
    pub y01: Vec<f64>,
}

/// Encodes `contracts` and evaluates the frozen baseline on every iteration.
/// `flows[i]`, when given, are the discounted cash flows of contract `i`.
pub fn prepare_contracts(
    base: &BaselineModel,
    res_scaler: &MinMaxScaler,
    contracts: &[Contract],
    flows: Option<&[DiscountedCashFlowTensor]>,
) -> Result<Vec<PreparedContract>> {
    let mut out: Vec<PreparedContract> = contracts
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let len = c.iterations();
            let (y00, y01) = match flows {
                Some(f) => (0..=len).map(|k| (f[i].get(0, 0, k), f[i].get(0, 1, k))).unzip(),
                None => (Vec::new(), Vec::new()),
            };
            PreparedContract {
                len,
                res_features: (0..len).map(|k| encode_step(c, k, res_scaler)).collect(),
                base_features: (0..len).map(|k| encode_baseline(c.age_at(k), c.m, base.scaler())).collect(),
                base_logits: Vec::new(),
                y00,
                y01,
            }
        })
        .collect();

    let rows: usize = out.iter().map(|p| p.len).sum();
    let x = Tensor::matrix(
        rows,
        BASELINE_FEATURES,
        out.iter().flat_map(|p| p.base_features.iter().flatten().copied()).collect(),
    )?;
    let logits = base.logits(&x)?;
    let mut r = 0;
    for p in &mut out {
        p.base_logits = (r..r + p.len)
            .map(|i| {
                let row = logits.row_slice(i);
                [row[0], row[1]]
            })
            .collect();
        r += p.len;
    }
    Ok(out)
}

/// Contracts padded to a common number of steps.
///
/// Row `k * batch + b` of every matrix belongs to contract `b` at iteration
/// `k`. Steps at or beyond a contract's length hold zeros and carry no cash
/// flow, so they do not influence the loss or its gradient.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    pub batch: usize,
    pub steps: usize,
    pub lengths: Vec<usize>,
    pub res_features: Tensor,
    pub base_features: Tensor,
    pub base_logits: Tensor,
    pub flows: Rc<CashFlowBatch>,
}

impl SequenceBatch {
    /// Pads to `steps`, or to the longest contract when `None`.
    pub fn assemble(items: &[&PreparedContract], steps: Option<usize>) -> Result<Self> {
        let batch = items.len();
        let longest = items.iter().map(|p| p.len).max().unwrap_or(0);
        let steps = steps.unwrap_or(longest).max(longest);
        let rows = steps * batch;
        let mut res = vec![0.0; rows * RESIDUAL_FEATURES];
        let mut base_x = vec![0.0; rows * BASELINE_FEATURES];
        let mut base_l = vec![0.0; rows * 2];
        let per = steps + 1;
        let mut y00 = vec![0.0; batch * per];
        let mut y01 = vec![0.0; batch * per];
        for (b, p) in items.iter().enumerate() {
            for k in 0..p.len {
                let row = k * batch + b;
                res[row * RESIDUAL_FEATURES..(row + 1) * RESIDUAL_FEATURES].copy_from_slice(&p.res_features[k]);
                base_x[row * BASELINE_FEATURES..(row + 1) * BASELINE_FEATURES].copy_from_slice(&p.base_features[k]);
                base_l[row * 2..row * 2 + 2].copy_from_slice(&p.base_logits[k]);
            }
            let n = p.y00.len().min(per);
            y00[b * per..b * per + n].copy_from_slice(&p.y00[..n]);
            y01[b * per..b * per + n].copy_from_slice(&p.y01[..n]);
        }
        let flows = CashFlowBatch {
            batch,
            steps,
            lengths: items.iter().map(|p| p.len).collect(),
            y00,
            y01,
        };
        flows.validate()?;
        Ok(SequenceBatch {
            batch,
            steps,
            lengths: flows.lengths.clone(),
            res_features: Tensor::matrix(rows, RESIDUAL_FEATURES, res)?,
            base_features: Tensor::matrix(rows, BASELINE_FEATURES, base_x)?,
            base_logits: Tensor::matrix(rows, 2, base_l)?,
            flows: Rc::new(flows),
        })
    }

    /// Whether row `k * batch + b` is a real iteration.
    pub fn is_valid(&self, k: usize, b: usize) -> bool {
        k < self.lengths[b]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actuarial::{discounted_cash_flows, DiscountFactor, ExpenseStructure, Gender, PaymentStyle};

    fn contracts() -> Vec<Contract> {
        let c = Contract {
            year: 2015,
            month: 3,
            a0: 35,
            n: 2,
            t: 1,
            sum_insured: 1e4,
            premium: Some(20.0),
            m: PaymentStyle::Quarterly,
            gender: Gender::Male,
            smoker: false,
        };
        vec![c.clone(), Contract { n: 3, m: PaymentStyle::Annual, smoker: true, ..c }]
    }

    #[test]
    fn layout_and_padding() {
        let cs = contracts();
        let e = ExpenseStructure::default();
        let ys: Vec<_> = cs.iter().map(|c| discounted_cash_flows(c, &e, DiscountFactor::default()).unwrap()).collect();
        let base = BaselineModel::new(&[2, 3, 2], Gender::Male, 0).unwrap();
        let scaler = super::super::features::fit_residual_scaler(&cs).unwrap();
        let prepared = prepare_contracts(&base, &scaler, &cs, Some(&ys)).unwrap();
        assert_eq!(prepared[0].len, 8);
        assert_eq!(prepared[0].y00.len(), 9);

        let refs: Vec<_> = prepared.iter().collect();
        let batch = SequenceBatch::assemble(&refs, Some(10)).unwrap();
        assert_eq!((batch.batch, batch.steps), (2, 10));
        assert_eq!(batch.lengths, vec![8, 3]);
        // Contract 1 at k = 2 is row 2*2+1.
        assert_eq!(batch.res_features.row_slice(5), &prepared[1].res_features[2]);
        // Padding rows are zero.
        assert!(batch.res_features.row_slice(7).iter().all(|&x| x == 0.0));
        assert!(batch.base_logits.row_slice(19).iter().all(|&x| x == 0.0));
        assert_eq!(batch.flows.y00[11 + 3], ys[1].get(0, 0, 3));
        assert!(batch.flows.y01[11 + 4..].iter().all(|&x| x == 0.0));
        assert!(batch.is_valid(7, 0) && !batch.is_valid(8, 0) && !batch.is_valid(3, 1));

        // Cached logits agree with a direct evaluation.
        let direct = base.logits(&Tensor::matrix(1, 2, prepared[1].base_features[2].to_vec()).unwrap()).unwrap();
        assert_eq!(direct.data(), &prepared[1].base_logits[2]);
    }
}
