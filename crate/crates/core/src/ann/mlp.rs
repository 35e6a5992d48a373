use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn slope(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

/// Layer sizes of the imitation controller: 35 inputs, hidden layers of
/// 50, 25 and 10 neurons, and 10 outputs.
pub const STANDARD_SIZES: [usize; 5] = [35, 50, 25, 10, 10];

/// Fully connected feed-forward network.
///
/// All weights and biases live in one flat vector, layer by layer, each layer
/// as a row-major `out × in` weight block followed by its biases. The
/// trainer works directly on that vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Scratch buffers for allocation-free evaluation.
#[derive(Debug, Clone, Default)]
pub struct Workspace {
    activations: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Mlp {
    /// Network with all parameters zero.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!("invalid layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; n],
        })
    }

    pub fn standard() -> Self {
        Self::new(&STANDARD_SIZES, Activation::Tanh, Activation::Linear).expect("valid sizes")
    }

    /// Uniform initialisation in `±1/√fan_in` for weights and biases.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        for l in 0..self.n_layers() {
            let bound = 1.0 / (self.sizes[l] as f64).sqrt();
            let (start, end) = (self.weight_offset(l), self.weight_offset(l + 1));
            for p in &mut self.params[start..end] {
                *p = rng.gen_range(-bound..=bound);
            }
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.sizes.last().expect("sizes nonempty")
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape {
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Offset of layer `l`'s weight block; `l == n_layers()` gives the total.
    fn weight_offset(&self, l: usize) -> usize {
        self.sizes[..l + 1]
            .windows(2)
            .map(|w| w[1] * (w[0] + 1))
            .sum()
    }

    pub fn weights(&self, l: usize) -> &[f64] {
        let start = self.weight_offset(l);
        &self.params[start..start + self.sizes[l] * self.sizes[l + 1]]
    }

    pub fn biases(&self, l: usize) -> &[f64] {
        let start = self.weight_offset(l) + self.sizes[l] * self.sizes[l + 1];
        &self.params[start..start + self.sizes[l + 1]]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.weight_offset(l);
        let len = self.sizes[l] * self.sizes[l + 1];
        &mut self.params[start..start + len]
    }

    pub fn biases_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.weight_offset(l) + self.sizes[l] * self.sizes[l + 1];
        let len = self.sizes[l + 1];
        &mut self.params[start..start + len]
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            activations: self.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            deltas: self.sizes[1..].iter().map(|&n| vec![0.0; n * self.n_outputs()]).collect(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs() {
            return Err(Error::Shape {
                expected: self.n_inputs(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ws = self.workspace();
        self.check_input(x)?;
        self.forward_ws(x, &mut ws);
        Ok(ws.activations.last().expect("output layer").clone())
    }

    /// Forward pass into the workspace; the output is the last activation.
    pub fn forward_ws<'w>(&self, x: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        ws.activations[0].copy_from_slice(x);
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_out * (n_in + 1);
            let act = self.activation(l);
            let (prev, rest) = ws.activations.split_at_mut(l + 1);
            let input = &prev[l];
            for (i, out) in rest[0].iter_mut().enumerate() {
                let row = &w[i * n_in..(i + 1) * n_in];
                let z = b[i] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                *out = act.apply(z);
            }
        }
        ws.activations.last().expect("output layer")
    }

    /// Output and Jacobian of every output with respect to every parameter.
    ///
    /// `jac` receives `n_outputs` rows of `n_params` entries (row-major).
    pub fn jacobian_ws(&self, x: &[f64], ws: &mut Workspace, y: &mut [f64], jac: &mut [f64]) {
        let n_out = self.n_outputs();
        let n_p = self.n_params();
        debug_assert_eq!(jac.len(), n_out * n_p);
        y.copy_from_slice(self.forward_ws(x, ws));

        // deltas[l] holds ∂y_k/∂z_l as an (n_l × n_out) block, column k per output
        let last = self.n_layers() - 1;
        {
            let act = self.activation(last);
            let d = &mut ws.deltas[last];
            d.fill(0.0);
            for i in 0..n_out {
                d[i * n_out + i] = act.slope(ws.activations[last + 1][i]);
            }
        }
        for l in (0..last).rev() {
            let (n_mid, n_next) = (self.sizes[l + 1], self.sizes[l + 2]);
            let w_next = self.weights(l + 1);
            let act = self.activation(l);
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let (d, d_next) = (&mut lower[l], &upper[0]);
            for j in 0..n_mid {
                let slope = act.slope(ws.activations[l + 1][j]);
                let row = &mut d[j * n_out..(j + 1) * n_out];
                row.fill(0.0);
                for i in 0..n_next {
                    let wij = w_next[i * n_mid + j];
                    let src = &d_next[i * n_out..(i + 1) * n_out];
                    for (r, s) in row.iter_mut().zip(src) {
                        *r += wij * s;
                    }
                }
                for r in row.iter_mut() {
                    *r *= slope;
                }
            }
        }
        let mut offset = 0;
        for l in 0..self.n_layers() {
            let (n_in, n_l) = (self.sizes[l], self.sizes[l + 1]);
            let a_prev = &ws.activations[l];
            let d = &ws.deltas[l];
            for k in 0..n_out {
                let row = &mut jac[k * n_p + offset..k * n_p + offset + n_l * (n_in + 1)];
                let (wpart, bpart) = row.split_at_mut(n_l * n_in);
                for i in 0..n_l {
                    let dik = d[i * n_out + k];
                    let dst = &mut wpart[i * n_in..(i + 1) * n_in];
                    for (dst, a) in dst.iter_mut().zip(a_prev) {
                        *dst = dik * a;
                    }
                    bpart[i] = dik;
                }
            }
            offset += n_l * (n_in + 1);
        }
    }

    pub fn jacobian(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_input(x)?;
        let mut ws = self.workspace();
        let mut y = vec![0.0; self.n_outputs()];
        let mut jac = vec![0.0; self.n_outputs() * self.n_params()];
        self.jacobian_ws(x, &mut ws, &mut y, &mut jac);
        Ok((y, jac))
    }
}
