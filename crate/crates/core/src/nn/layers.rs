//! Parameter storage, dense layers and the gated recurrent unit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a tensor inside a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(usize);

/// Named trainable tensors in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

/// A parameter as stored in checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Tape handles for every tensor of a [`ParamSet`].
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter, zeros where the output did not depend on it.
    pub fn gradients(&self, params: &ParamSet, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(&params.values)
            .map(|(&v, p)| grads.get_or_zeros(v, p.shape()))
            .collect()
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Registers every tensor as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.param(v.clone())).collect(),
        }
    }

    /// Registers every tensor as a constant (frozen parameters).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        Bound {
            vars: self.values.iter().map(|v| tape.constant(v.clone())).collect(),
        }
    }

    /// All parameters flattened in declaration order.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_scalars()
            )));
        }
        let mut offset = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Replaces the tensor named `name`; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let i = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown parameter `{name}`")))?;
        if self.values[i].shape() != value.shape() {
            return Err(Error::Shape(format!(
                "parameter `{name}` has shape {:?}, got {:?}",
                self.values[i].shape(),
                value.shape()
            )));
        }
        self.values[i] = value;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Tensor::is_finite)
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        self.iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().to_vec(),
            })
            .collect()
    }

    /// Overwrites every parameter from `named`, which must list the same
    /// names in the same order with matching shapes.
    pub fn load_named(&mut self, named: &[NamedTensor]) -> Result<()> {
        if named.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} stored parameters for an architecture with {}",
                named.len(),
                self.len()
            )));
        }
        for (i, nt) in named.iter().enumerate() {
            if nt.name != self.names[i] {
                return Err(Error::Shape(format!(
                    "expected parameter `{}`, found `{}`",
                    self.names[i], nt.name
                )));
            }
            self.set(&nt.name, Tensor::new(nt.shape.clone(), nt.data.clone())?)?;
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, limit: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..=limit)).collect();
    Tensor::new(vec![rows, cols], data).expect("consistent shape")
}

/// He-style uniform limit for a layer with `fan_in` inputs.
fn he_limit(fan_in: usize) -> f64 {
    (6.0 / fan_in.max(1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

/// `act(x W + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

impl Dense {
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        n_in: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let w = params.add(format!("{prefix}.W"), uniform(rng, n_in, n_out, he_limit(n_in)));
        let b = params.add(format!("{prefix}.b"), Tensor::zeros(&[1, n_out]));
        Dense {
            w,
            b,
            n_in,
            n_out,
            activation,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        if tape.value(x).cols() != self.n_in {
            return Err(Error::Shape(format!(
                "dense layer expects {} inputs, got {:?}",
                self.n_in,
                tape.value(x).shape()
            )));
        }
        let xw = tape.matmul(x, bound.var(self.w))?;
        let z = tape.add_row(xw, bound.var(self.b))?;
        Ok(match self.activation {
            Activation::Relu => tape.relu(z),
            Activation::Linear => z,
        })
    }

    pub fn num_params(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
}

/// Gated recurrent unit with one bias per gate:
///
/// ```text
/// z  = sigmoid(x W_z + h U_z + b_z)
/// r  = sigmoid(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r * h) U_h + b_h)
/// h' = (1 - z) * h + z * h~
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct Gru {
    pub w: [ParamId; 3],
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
    pub n_in: usize,
    pub n_hidden: usize,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl Gru {
    pub fn new(params: &mut ParamSet, prefix: &str, n_in: usize, n_hidden: usize, rng: &mut impl Rng) -> Self {
        let w = GATES.map(|g| params.add(format!("{prefix}.W_{g}"), uniform(rng, n_in, n_hidden, he_limit(n_in))));
        let recurrent = 1.0 / (n_hidden.max(1) as f64).sqrt();
        let u = GATES.map(|g| params.add(format!("{prefix}.U_{g}"), uniform(rng, n_hidden, n_hidden, recurrent)));
        let b = GATES.map(|g| params.add(format!("{prefix}.b_{g}"), Tensor::zeros(&[1, n_hidden])));
        Gru {
            w,
            u,
            b,
            n_in,
            n_hidden,
        }
    }

    pub fn num_params(&self) -> usize {
        3 * (self.n_in * self.n_hidden + self.n_hidden * self.n_hidden + self.n_hidden)
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        if tape.value(x).cols() != self.n_in {
            return Err(Error::Shape(format!(
                "GRU expects {} inputs, got {:?}",
                self.n_in,
                tape.value(x).shape()
            )));
        }
        Ok(())
    }

    /// One step from raw input `x_t` (`batch x n_in`).
    pub fn step(&self, tape: &mut Tape, bound: &Bound, x: Var, h_prev: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        let mut proj = [x; 3];
        for (g, p) in proj.iter_mut().enumerate() {
            let xw = tape.matmul(x, bound.var(self.w[g]))?;
            *p = tape.add_row(xw, bound.var(self.b[g]))?;
        }
        self.step_projected(tape, bound, proj, h_prev)
    }

    /// One step given the input projections `x W_g + b_g` of the three gates.
    fn step_projected(&self, tape: &mut Tape, bound: &Bound, proj: [Var; 3], h_prev: Var) -> Result<Var> {
        if tape.value(h_prev).cols() != self.n_hidden {
            return Err(Error::Shape(format!(
                "GRU state has {:?}, expected {} columns",
                tape.value(h_prev).shape(),
                self.n_hidden
            )));
        }
        let hz = tape.matmul(h_prev, bound.var(self.u[0]))?;
        let z_pre = tape.add(proj[0], hz)?;
        let z = tape.sigmoid(z_pre);
        let hr = tape.matmul(h_prev, bound.var(self.u[1]))?;
        let r_pre = tape.add(proj[1], hr)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h_prev)?;
        let rhu = tape.matmul(rh, bound.var(self.u[2]))?;
        let c_pre = tape.add(proj[2], rhu)?;
        let candidate = tape.tanh(c_pre);
        // h' = h + z * (h~ - h)
        let delta = tape.sub(candidate, h_prev)?;
        let gated = tape.mul(z, delta)?;
        tape.add(h_prev, gated)
    }

    /// Runs the unit over a step-major sequence: rows `k*batch..(k+1)*batch`
    /// of `xs` are the inputs at step `k`. Returns the hidden states stacked
    /// the same way. The state starts at zero.
    pub fn forward_sequence(&self, tape: &mut Tape, bound: &Bound, xs: Var, batch: usize) -> Result<Var> {
        self.check_input(tape, xs)?;
        let rows = tape.value(xs).rows();
        if batch == 0 || !rows.is_multiple_of(batch) {
            return Err(Error::Shape(format!("{rows} rows do not split into batches of {batch}")));
        }
        let steps = rows / batch;
        let mut proj_all = [xs; 3];
        for (g, p) in proj_all.iter_mut().enumerate() {
            let xw = tape.matmul(xs, bound.var(self.w[g]))?;
            *p = tape.add_row(xw, bound.var(self.b[g]))?;
        }
        let mut h = tape.constant(Tensor::zeros(&[batch, self.n_hidden]));
        let mut states = Vec::with_capacity(steps);
        for k in 0..steps {
            let mut proj = [xs; 3];
            for g in 0..3 {
                proj[g] = tape.slice_rows(proj_all[g], k * batch, batch)?;
            }
            h = self.step_projected(tape, bound, proj, h)?;
            states.push(h);
        }
        tape.concat_rows(&states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_dense() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Dense::new(&mut params, "l", 2, 2, Activation::Linear, &mut rng);
        params.set("l.W", Tensor::identity(2)).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(Tensor::row(vec![-1.0, 2.0]));
        let y = layer.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).data(), &[-1.0, 2.0]);

        let relu = Dense { activation: Activation::Relu, ..layer.clone() };
        let y = relu.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 2.0]);

        let wrong = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        assert!(layer.forward(&mut tape, &bound, wrong).is_err());
    }

    #[test]
    fn dense_input_gradient_matches_differences() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = Dense::new(&mut params, "l", 3, 4, Activation::Relu, &mut rng);
        let x0 = vec![0.3, -0.8, 0.5, 1.2, 0.1, -0.4];
        let f = |x: &[f64]| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let xv = tape.param(Tensor::matrix(2, 3, x.to_vec()).unwrap());
            let y = layer.forward(&mut tape, &bound, xv).unwrap();
            let s = tape.sum(y);
            let g = tape.backward(s).unwrap();
            (tape.value(s).item(), g.get_or_zeros(xv, &[2, 3]).into_data())
        };
        assert!(grad_check(f, &x0, 1e-5) <= 1e-6);
    }

    fn tiny_gru(seed: u64) -> (ParamSet, Gru) {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gru = Gru::new(&mut params, "gru", 2, 3, &mut rng);
        // Non-zero biases so every path is exercised.
        for id in gru.b {
            for (i, v) in params.get_mut(id).data_mut().iter_mut().enumerate() {
                *v = 0.1 * (i as f64 + 1.0) - 0.15;
            }
        }
        (params, gru)
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let (mut params, gru) = tiny_gru(3);
        let zeros = vec![0.0; params.num_scalars()];
        params.assign_flat(&zeros).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let x = tape.constant(Tensor::row(vec![0.7, -1.3]));
        let h0 = tape.constant(Tensor::zeros(&[1, 3]));
        let h1 = gru.step(&mut tape, &bound, x, h0).unwrap();
        assert_eq!(tape.value(h1).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_state_step_formula() {
        let (params, gru) = tiny_gru(4);
        let x = Tensor::row(vec![0.7, -1.3]);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let h0 = tape.constant(Tensor::zeros(&[1, 3]));
        let h1 = gru.step(&mut tape, &bound, xv, h0).unwrap();
        let pre = |g: usize| {
            let mut v = x.matmul(params.get(gru.w[g])).unwrap();
            v.add_assign(params.get(gru.b[g]));
            v
        };
        let z = pre(0).map(|v| 1.0 / (1.0 + (-v).exp()));
        let c = pre(2).map(f64::tanh);
        for j in 0..3 {
            let expected = z.data()[j] * c.data()[j];
            assert!((tape.value(h1).data()[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sequence_equals_repeated_steps() {
        let (params, gru) = tiny_gru(5);
        let xs = Tensor::matrix(6, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8, -0.9, 1.0, 0.0, 0.3]).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xv = tape.constant(xs.clone());
        let seq = gru.forward_sequence(&mut tape, &bound, xv, 2).unwrap();
        let mut h = tape.constant(Tensor::zeros(&[2, 3]));
        let mut rows = Vec::new();
        for k in 0..3 {
            let xk = tape.slice_rows(xv, 2 * k, 2).unwrap();
            h = gru.step(&mut tape, &bound, xk, h).unwrap();
            rows.extend_from_slice(tape.value(h).data());
        }
        let got = tape.value(seq).data();
        for (a, b) in got.iter().zip(&rows) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn unrolled_gradient_matches_differences() {
        let (params, gru) = tiny_gru(6);
        let xs = Tensor::matrix(3, 2, vec![0.4, -0.2, 0.9, 0.1, -0.5, 0.6]).unwrap();
        let f = |theta: &[f64]| {
            let mut p = params.clone();
            p.assign_flat(theta).unwrap();
            let mut tape = Tape::new();
            let bound = p.bind(&mut tape);
            let xv = tape.constant(xs.clone());
            let hs = gru.forward_sequence(&mut tape, &bound, xv, 1).unwrap();
            let sq = tape.mul(hs, hs).unwrap();
            let loss = tape.sum(sq);
            let g = tape.backward(loss).unwrap();
            let flat = bound.gradients(&p, &g).iter().flat_map(|t| t.data().to_vec()).collect();
            (tape.value(loss).item(), flat)
        };
        assert!(grad_check(f, &params.flatten(), 1e-5) <= 1e-5);
    }

    #[test]
    fn named_round_trip() {
        let (params, _) = tiny_gru(7);
        let mut other = tiny_gru(8).0;
        assert_ne!(params, other);
        other.load_named(&params.to_named()).unwrap();
        assert_eq!(params, other);
        let mut wrong = params.to_named();
        wrong.swap(0, 1);
        assert!(other.load_named(&wrong).is_err());
    }

    #[test]
    fn parameter_counts() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = Dense::new(&mut params, "d", 4, 50, Activation::Relu, &mut rng);
        let g = Gru::new(&mut params, "g", 50, 50, &mut rng);
        assert_eq!(d.num_params(), 250);
        assert_eq!(g.num_params(), 15_150);
        assert_eq!(params.num_scalars(), 15_400);
    }
}
