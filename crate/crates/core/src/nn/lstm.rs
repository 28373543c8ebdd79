use rand::Rng;

use super::{shape_err, sigmoid, NnError, ParamSet, Tensor2};

/// One LSTM layer. Gate blocks are laid out as `[input | forget | cell | output]`
/// along the columns of `w_x: (in, 4h)`, `w_h: (h, 4h)` and `b: (1, 4h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayerParams {
    pub w_x: Tensor2,
    pub w_h: Tensor2,
    pub b: Tensor2,
}

impl LstmLayerParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmLayerParams {
            w_x: Tensor2::zeros(input, 4 * hidden),
            w_h: Tensor2::zeros(hidden, 4 * hidden),
            b: Tensor2::zeros(1, 4 * hidden),
        }
    }

    /// Xavier weights and a forget-gate bias of +1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Tensor2::zeros(1, 4 * hidden);
        b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        LstmLayerParams {
            w_x: Tensor2::xavier(input, 4 * hidden, rng),
            w_h: Tensor2::xavier(hidden, 4 * hidden, rng),
            b,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_h.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmLayerParams>,
}

impl LstmStack {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        let layers = (0..layers)
            .map(|l| LstmLayerParams::init(if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        LstmStack { layers }
    }

    pub fn zeros(input: usize, hidden: usize, layers: usize) -> Self {
        let layers = (0..layers)
            .map(|l| LstmLayerParams::zeros(if l == 0 { input } else { hidden }, hidden))
            .collect();
        LstmStack { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden(), self.layers.len())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }
}

impl ParamSet for LstmStack {
    fn blocks(&self) -> Vec<(String, &Tensor2)> {
        let mut out = Vec::new();
        for (l, p) in self.layers.iter().enumerate() {
            out.push((format!("lstm.{l}.w_x"), &p.w_x));
            out.push((format!("lstm.{l}.w_h"), &p.w_h));
            out.push((format!("lstm.{l}.b"), &p.b));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out = Vec::new();
        for p in &mut self.layers {
            out.push(&mut p.w_x);
            out.push(&mut p.w_h);
            out.push(&mut p.b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerCache {
    inputs: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
    /// Activated gates `[i | f | g | o]` per step.
    gates: Vec<Vec<f64>>,
    tanh_c: Vec<Vec<f64>>,
}

/// Forward activations kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCache {
    layers: Vec<LayerCache>,
}

impl LstmCache {
    pub fn len(&self) -> usize {
        self.layers[0].hidden.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hidden states of `layer` at every step.
    pub fn hidden(&self, layer: usize) -> &[Vec<f64>] {
        &self.layers[layer].hidden
    }

    pub fn cells(&self, layer: usize) -> &[Vec<f64>] {
        &self.layers[layer].cells
    }

    pub fn top_hidden(&self) -> &[Vec<f64>] {
        &self.layers.last().unwrap().hidden
    }

    pub fn last_hidden(&self) -> &[f64] {
        self.top_hidden().last().unwrap()
    }
}

/// Runs the stack over a sequence from zero initial state.
pub fn lstm_forward(stack: &LstmStack, inputs: &[Vec<f64>]) -> Result<LstmCache, NnError> {
    if inputs.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let mut layers = Vec::with_capacity(stack.layers.len());
    let mut xs: Vec<Vec<f64>> = inputs.to_vec();
    for p in &stack.layers {
        let h = p.hidden();
        let mut cache = LayerCache {
            inputs: Vec::with_capacity(xs.len()),
            hidden: Vec::with_capacity(xs.len()),
            cells: Vec::with_capacity(xs.len()),
            gates: Vec::with_capacity(xs.len()),
            tanh_c: Vec::with_capacity(xs.len()),
        };
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        for x in xs {
            if x.len() != p.input_dim() {
                return Err(shape_err("lstm_forward input", p.input_dim(), x.len()));
            }
            let mut z = p.b.data().to_vec();
            p.w_x.vec_mat_acc(&x, &mut z);
            p.w_h.vec_mat_acc(&h_prev, &mut z);
            for k in 0..h {
                z[k] = sigmoid(z[k]);
                z[h + k] = sigmoid(z[h + k]);
                z[2 * h + k] = z[2 * h + k].tanh();
                z[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            let c: Vec<f64> = (0..h).map(|k| z[h + k] * c_prev[k] + z[k] * z[2 * h + k]).collect();
            let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let hn: Vec<f64> = (0..h).map(|k| z[3 * h + k] * tc[k]).collect();
            cache.inputs.push(x);
            cache.gates.push(z);
            cache.tanh_c.push(tc);
            cache.cells.push(c.clone());
            cache.hidden.push(hn.clone());
            h_prev = hn;
            c_prev = c;
        }
        xs = cache.hidden.clone();
        layers.push(cache);
    }
    Ok(LstmCache { layers })
}

/// Backpropagates `upstream[t]` (gradient w.r.t. the top layer's hidden state
/// at step `t`, `None` for no injection) through time and the stack.
/// Parameter gradients are added to `grads`; input gradients are returned.
pub fn lstm_backward(
    stack: &LstmStack,
    cache: &LstmCache,
    upstream: &[Option<Vec<f64>>],
    grads: &mut LstmStack,
) -> Result<Vec<Vec<f64>>, NnError> {
    let n = cache.len();
    if upstream.len() != n {
        return Err(shape_err("lstm_backward upstream", n, upstream.len()));
    }
    let top = stack.hidden();
    let mut dh_out: Vec<Vec<f64>> = upstream
        .iter()
        .map(|u| match u {
            Some(v) if v.len() == top => Ok(v.clone()),
            Some(v) => Err(shape_err("lstm_backward upstream", top, v.len())),
            None => Ok(vec![0.0; top]),
        })
        .collect::<Result<_, _>>()?;

    for l in (0..stack.layers.len()).rev() {
        let p = &stack.layers[l];
        let g = &mut grads.layers[l];
        let lc = &cache.layers[l];
        let h = p.hidden();
        let zero = vec![0.0; h];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dxs = vec![Vec::new(); n];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..n).rev() {
            let gt = &lc.gates[t];
            let c_prev = if t > 0 { &lc.cells[t - 1] } else { &zero };
            let h_prev = if t > 0 { &lc.hidden[t - 1] } else { &zero };
            for k in 0..h {
                let (i, f, gg, o) = (gt[k], gt[h + k], gt[2 * h + k], gt[3 * h + k]);
                let tc = lc.tanh_c[t][k];
                let dh = dh_out[t][k] + dh_next[k];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * gg * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            g.w_x.add_outer(&lc.inputs[t], &dz, 1.0);
            g.w_h.add_outer(h_prev, &dz, 1.0);
            for (gb, d) in g.b.data_mut().iter_mut().zip(&dz) {
                *gb += d;
            }
            let mut dx = vec![0.0; p.input_dim()];
            p.w_x.mat_vec_acc(&dz, &mut dx);
            dxs[t] = dx;
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            p.w_h.mat_vec_acc(&dz, &mut dh_next);
        }
        dh_out = dxs;
    }
    Ok(dh_out)
}
