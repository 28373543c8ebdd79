use rand::Rng;

use super::{shape_err, NnError, ParamSet, Tensor2};

/// Fully connected layer `x·W + B`, with `W: (in, out)` and `B: (1, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub w: Tensor2,
    pub b: Tensor2,
}

impl DenseParams {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams { w: Tensor2::zeros(input, output), b: Tensor2::zeros(1, output) }
    }

    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        DenseParams { w: Tensor2::xavier(input, output, rng), b: Tensor2::zeros(1, output) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        if x.len() != self.input_dim() {
            return Err(shape_err("dense forward", self.input_dim(), x.len()));
        }
        let mut out = self.b.data().to_vec();
        self.w.vec_mat_acc(x, &mut out);
        Ok(out)
    }

    /// Adds `scale` times the parameter gradients for upstream `dlogits` to
    /// `grads` and returns the input gradient, also multiplied by `scale`.
    pub fn backward_acc(&self, x: &[f64], dlogits: &[f64], scale: f64, grads: &mut DenseParams) -> Vec<f64> {
        grads.w.add_outer(x, dlogits, scale);
        for (g, d) in grads.b.data_mut().iter_mut().zip(dlogits) {
            *g += scale * d;
        }
        let mut dx = vec![0.0; x.len()];
        self.w.mat_vec_acc(dlogits, &mut dx);
        if scale != 1.0 {
            dx.iter_mut().for_each(|v| *v *= scale);
        }
        dx
    }
}

impl ParamSet for DenseParams {
    fn blocks(&self) -> Vec<(String, &Tensor2)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn blocks_mut(&mut self) -> Vec<&mut Tensor2> {
        vec![&mut self.w, &mut self.b]
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseXent {
    pub probs: Vec<f64>,
    pub loss: f64,
    pub grads: DenseParams,
    pub d_input: Vec<f64>,
}

/// Softmax cross-entropy of a dense layer's output against `target`.
pub fn dense_softmax_xent(params: &DenseParams, input: &[f64], target: usize) -> Result<DenseXent, NnError> {
    if target >= params.output_dim() {
        return Err(shape_err("dense_softmax_xent target", format!("< {}", params.output_dim()), target));
    }
    let logits = params.logits(input)?;
    let logp = log_softmax(&logits);
    let probs = softmax(&logits);
    let mut dlogits = probs.clone();
    dlogits[target] -= 1.0;
    let mut grads = DenseParams::zeros(params.input_dim(), params.output_dim());
    let d_input = params.backward_acc(input, &dlogits, 1.0, &mut grads);
    Ok(DenseXent { probs, loss: -logp[target], grads, d_input })
}
