//! Multi-layer, optionally bidirectional GRU over variable-length batches.
//!
//! Gate equations (row-vector convention, `x` is `1 x input`):
//!
//! ```text
//! z = sigmoid(x W_z + h U_z + b_z)
//! r = sigmoid(x W_r + h U_r + b_r)
//! c = tanh(x W_h + (r * h) U_h + b_h)
//! h' = (1 - z) * h + z * c
//! ```
//!
//! Batches are processed in packed form: sequences are sorted by length and
//! at step `t` only the rows still active take part in the update. Rows that
//! already ended carry their state forward untouched, so no padding ever
//! reaches an output.

use rand::Rng;

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub bidirectional: bool,
}

impl GruConfig {
    pub fn directions(&self) -> usize {
        if self.bidirectional {
            2
        } else {
            1
        }
    }

    /// Width of the concatenated final hidden state.
    pub fn output_size(&self) -> usize {
        self.hidden_size * self.directions()
    }
}

/// Parameter ids of one layer/direction.
#[derive(Debug, Clone, Copy)]
pub struct GruCell {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub b_z: ParamId,
    pub b_r: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone)]
pub struct Gru {
    config: GruConfig,
    // [layer][direction]
    cells: Vec<Vec<GruCell>>,
}

/// Result of a packed forward pass.
pub struct PackedOutput {
    /// `batch x output_size`, rows in the caller's original order.
    pub final_hidden: Var,
    /// Last-layer per-step outputs, `[direction][step]`, each `active x hidden`
    /// in sorted (length-descending) row order.
    pub steps: Vec<Vec<Var>>,
    /// Original index of each sorted row.
    pub order: Vec<usize>,
    /// Lengths in sorted order.
    pub lengths: Vec<usize>,
}

/// Plain-number trace of a single sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GruTrace {
    /// `[direction][step]` hidden states of the last layer, in processing
    /// order (the backward direction starts at the last element).
    pub states: Vec<Vec<Vec<f64>>>,
    /// Concatenated final hidden state over directions.
    pub final_hidden: Vec<f64>,
}

impl Gru {
    /// Registers parameters under `prefix`. Weights are drawn from
    /// `uniform(-1/sqrt(hidden), 1/sqrt(hidden))`, biases start at zero.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, config: GruConfig, rng: &mut R) -> Self {
        let h = config.hidden_size;
        let bound = 1.0 / (h as f64).sqrt();
        let mut cells = Vec::with_capacity(config.num_layers);
        for layer in 0..config.num_layers {
            let input = if layer == 0 {
                config.input_size
            } else {
                config.output_size()
            };
            let mut dirs = Vec::new();
            for dir in 0..config.directions() {
                let p = format!("{prefix}.l{layer}.d{dir}");
                let w_z = store.add_uniform(format!("{p}.w_z"), &[input, h], bound, rng);
                let w_r = store.add_uniform(format!("{p}.w_r"), &[input, h], bound, rng);
                let w_h = store.add_uniform(format!("{p}.w_h"), &[input, h], bound, rng);
                let u_z = store.add_uniform(format!("{p}.u_z"), &[h, h], bound, rng);
                let u_r = store.add_uniform(format!("{p}.u_r"), &[h, h], bound, rng);
                let u_h = store.add_uniform(format!("{p}.u_h"), &[h, h], bound, rng);
                let b_z = store.add(format!("{p}.b_z"), Tensor::zeros(&[1, h]));
                let b_r = store.add(format!("{p}.b_r"), Tensor::zeros(&[1, h]));
                let b_h = store.add(format!("{p}.b_h"), Tensor::zeros(&[1, h]));
                dirs.push(GruCell {
                    w_z,
                    w_r,
                    w_h,
                    u_z,
                    u_r,
                    u_h,
                    b_z,
                    b_r,
                    b_h,
                });
            }
            cells.push(dirs);
        }
        Self { config, cells }
    }

    /// Re-binds a GRU to parameters already present in `store` (for example
    /// after loading a checkpoint).
    pub fn bind(store: &ParamStore, prefix: &str, config: GruConfig) -> Result<Self> {
        let mut cells = Vec::with_capacity(config.num_layers);
        for layer in 0..config.num_layers {
            let mut dirs = Vec::new();
            for dir in 0..config.directions() {
                let p = format!("{prefix}.l{layer}.d{dir}");
                let f = |n: &str| store.find(&format!("{p}.{n}"));
                dirs.push(GruCell {
                    w_z: f("w_z")?,
                    w_r: f("w_r")?,
                    w_h: f("w_h")?,
                    u_z: f("u_z")?,
                    u_r: f("u_r")?,
                    u_h: f("u_h")?,
                    b_z: f("b_z")?,
                    b_r: f("b_r")?,
                    b_h: f("b_h")?,
                });
            }
            cells.push(dirs);
        }
        Ok(Self { config, cells })
    }

    pub fn config(&self) -> &GruConfig {
        &self.config
    }

    pub fn cell(&self, layer: usize, direction: usize) -> &GruCell {
        &self.cells[layer][direction]
    }

    /// Runs one cell over packed steps. `steps[t]` holds the inputs of the
    /// first `b_t` rows (non-increasing in `t`), `h0` is `batch x hidden`.
    /// Returns each step's new hidden rows and the full final state.
    pub fn cell_forward(&self, g: &mut Graph<'_>, cell: &GruCell, steps: &[Var], h0: Var) -> Result<(Vec<Var>, Var)> {
        let w_z = g.param(cell.w_z);
        let w_r = g.param(cell.w_r);
        let w_h = g.param(cell.w_h);
        let u_z = g.param(cell.u_z);
        let u_r = g.param(cell.u_r);
        let u_h = g.param(cell.u_h);
        let b_z = g.param(cell.b_z);
        let b_r = g.param(cell.b_r);
        let b_h = g.param(cell.b_h);

        let batch = g.value(h0).rows();
        let mut state = h0;
        let mut outs = Vec::with_capacity(steps.len());
        for &x in steps {
            let active = g.value(x).rows();
            if active > batch || active == 0 {
                return Err(NnError::shape("gru step", &[active], &[batch]));
            }
            let h = if active == batch {
                state
            } else {
                let rows: Vec<_> = (0..active).map(|r| (state, r)).collect();
                g.gather_rows(&rows)?
            };
            let z = gate(g, x, w_z, h, u_z, b_z)?;
            let z = g.sigmoid(z);
            let r = gate(g, x, w_r, h, u_r, b_r)?;
            let r = g.sigmoid(r);
            let rh = g.mul(r, h)?;
            let c = gate(g, x, w_h, rh, u_h, b_h)?;
            let c = g.tanh(c);
            // (1 - z) * h + z * c
            let keep = g.one_minus(z);
            let keep = g.mul(keep, h)?;
            let take = g.mul(z, c)?;
            let h_new = g.add(keep, take)?;
            outs.push(h_new);
            state = if active == batch {
                h_new
            } else {
                let rows: Vec<_> = (0..active)
                    .map(|r| (h_new, r))
                    .chain((active..batch).map(|r| (state, r)))
                    .collect();
                g.gather_rows(&rows)?
            };
        }
        Ok((outs, state))
    }

    /// Packed forward over `inputs`, each an `L_i x input_size` node with
    /// `L_i >= 1`. Initial hidden states are zero.
    pub fn forward_packed(&self, g: &mut Graph<'_>, inputs: &[Var]) -> Result<PackedOutput> {
        self.forward_packed_with_h0(g, inputs, None)
    }

    /// As [`Gru::forward_packed`]; `h0`, if given, is `batch x hidden` in the
    /// original row order and seeds every layer and direction.
    pub fn forward_packed_with_h0(&self, g: &mut Graph<'_>, inputs: &[Var], h0: Option<Var>) -> Result<PackedOutput> {
        if inputs.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let h = self.config.hidden_size;
        let mut lens = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let t = g.value(v);
            if t.rows() == 0 {
                return Err(NnError::EmptySequence);
            }
            if t.cols() != self.config.input_size {
                return Err(NnError::shape("gru input", t.shape(), &[self.config.input_size]));
            }
            lens.push(t.rows());
        }
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.sort_by(|&a, &b| lens[b].cmp(&lens[a]).then(a.cmp(&b)));
        let lengths: Vec<usize> = order.iter().map(|&i| lens[i]).collect();
        let batch = inputs.len();
        let max_len = lengths[0];

        let h0 = match h0 {
            Some(v) => {
                let t = g.value(v);
                if t.rows() != batch || t.cols() != h {
                    return Err(NnError::shape("gru h0", t.shape(), &[batch, h]));
                }
                let rows: Vec<_> = order.iter().map(|&i| (v, i)).collect();
                g.gather_rows(&rows)?
            }
            None => g.constant(Tensor::zeros(&[batch, h])),
        };

        // pieces[r][p]: sources concatenated to form the input of sorted row
        // `r` at position `p`.
        let mut pieces: Vec<Vec<Vec<(Var, usize)>>> = order
            .iter()
            .map(|&i| (0..lens[i]).map(|p| vec![(inputs[i], p)]).collect())
            .collect();

        let mut finals = Vec::new();
        let mut layer_steps = Vec::new();
        for layer in 0..self.config.num_layers {
            finals.clear();
            layer_steps = Vec::with_capacity(self.config.directions());
            for dir in 0..self.config.directions() {
                let mut steps = Vec::with_capacity(max_len);
                for t in 0..max_len {
                    let active = lengths.iter().take_while(|&&l| l > t).count();
                    let n_parts = pieces[0][0].len();
                    let mut parts = Vec::with_capacity(n_parts);
                    for part in 0..n_parts {
                        let rows: Vec<_> = (0..active)
                            .map(|r| {
                                let p = if dir == 0 { t } else { lengths[r] - 1 - t };
                                pieces[r][p][part]
                            })
                            .collect();
                        parts.push(g.gather_rows(&rows)?);
                    }
                    let x = if parts.len() == 1 {
                        parts[0]
                    } else {
                        g.concat_cols(&parts)?
                    };
                    steps.push(x);
                }
                let (outs, fin) = self.cell_forward(g, &self.cells[layer][dir], &steps, h0)?;
                finals.push(fin);
                layer_steps.push(outs);
            }
            if layer + 1 < self.config.num_layers {
                pieces = (0..batch)
                    .map(|r| {
                        (0..lengths[r])
                            .map(|p| {
                                let mut v = vec![(layer_steps[0][p], r)];
                                if self.config.bidirectional {
                                    v.push((layer_steps[1][lengths[r] - 1 - p], r));
                                }
                                v
                            })
                            .collect()
                    })
                    .collect();
            }
        }

        let sorted_final = if finals.len() == 1 {
            finals[0]
        } else {
            g.concat_cols(&finals)?
        };
        let mut sorted_pos = vec![0; batch];
        for (r, &i) in order.iter().enumerate() {
            sorted_pos[i] = r;
        }
        let rows: Vec<_> = sorted_pos.iter().map(|&r| (sorted_final, r)).collect();
        let final_hidden = g.gather_rows(&rows)?;
        Ok(PackedOutput {
            final_hidden,
            steps: layer_steps,
            order,
            lengths,
        })
    }

    /// Evaluates a single sequence and returns plain numbers.
    pub fn forward_sequence(&self, store: &ParamStore, seq: &[Vec<f64>], h0: Option<&[f64]>) -> Result<GruTrace> {
        if seq.is_empty() {
            return Err(NnError::EmptySequence);
        }
        let mut g = Graph::new(store);
        let x = g.constant(Tensor::from_rows(seq)?);
        let h0 = match h0 {
            Some(h) => Some(g.constant(Tensor::row_vector(h.to_vec()))),
            None => None,
        };
        let out = self.forward_packed_with_h0(&mut g, &[x], h0)?;
        let states = out
            .steps
            .iter()
            .map(|dir| dir.iter().map(|&v| g.value(v).row(0).to_vec()).collect())
            .collect();
        Ok(GruTrace {
            states,
            final_hidden: g.value(out.final_hidden).row(0).to_vec(),
        })
    }
}

fn gate(g: &mut Graph<'_>, x: Var, w: Var, h: Var, u: Var, b: Var) -> Result<Var> {
    let xw = g.matmul(x, w)?;
    let hu = g.matmul(h, u)?;
    let s = g.add(xw, hu)?;
    g.add_row(s, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn config(input: usize, hidden: usize, layers: usize, bidi: bool) -> GruConfig {
        GruConfig {
            input_size: input,
            hidden_size: hidden,
            num_layers: layers,
            bidirectional: bidi,
        }
    }

    #[test]
    fn zero_parameters_keep_zero_state() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = Gru::new(&mut store, "g", config(3, 4, 1, false), &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let seq = vec![vec![1.0, -2.0, 0.5], vec![3.0, 0.1, -1.0], vec![0.2, 0.2, 0.2]];
        let trace = gru.forward_sequence(&store, &seq, None).unwrap();
        for h in &trace.states[0] {
            assert!(h.iter().all(|&v| v == 0.0));
        }
        assert!(trace.final_hidden.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_recurrence_matches_hand_evaluation() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = Gru::new(&mut store, "g", config(1, 1, 1, false), &mut rng);
        let cell = *gru.cell(0, 0);
        let set = |store: &mut ParamStore, id, v: f64| store.get_mut(id).data_mut()[0] = v;
        set(&mut store, cell.w_z, 0.5);
        set(&mut store, cell.u_z, -0.3);
        set(&mut store, cell.b_z, 0.1);
        set(&mut store, cell.w_r, 0.8);
        set(&mut store, cell.u_r, 0.2);
        set(&mut store, cell.b_r, -0.1);
        set(&mut store, cell.w_h, 1.2);
        set(&mut store, cell.u_h, 0.7);
        set(&mut store, cell.b_h, 0.05);

        // h1 from x=1.0, h0=0:
        //   z = sig(0.6) = 0.645656, c = tanh(1.25) = 0.848284, h1 = 0.547700
        // h2 from x=-0.5, h1:
        //   z = sig(-0.314310) = 0.422063
        //   r = sig(-0.390460) = 0.403607
        //   c = tanh(-0.6 + 0.7 * r * h1 + 0.05) = -0.375887
        //   h2 = (1 - z) h1 + z c = 0.157888
        let trace = gru
            .forward_sequence(&store, &[vec![1.0], vec![-0.5]], None)
            .unwrap();
        let z1 = sig(0.6);
        let c1 = 1.25f64.tanh();
        let h1 = z1 * c1;
        assert!((h1 - 0.547700).abs() < 1e-6);
        let h2 = trace.final_hidden[0];
        assert!((trace.states[0][0][0] - h1).abs() < 1e-12);
        assert!((h2 - 0.157888).abs() < 1e-6, "h2 = {h2}");
    }

    #[test]
    fn palindrome_with_tied_directions_gives_equal_finals() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let gru = Gru::new(&mut store, "g", config(2, 3, 1, true), &mut rng);
        let (f, b) = (*gru.cell(0, 0), *gru.cell(0, 1));
        let pairs = [
            (f.w_z, b.w_z),
            (f.w_r, b.w_r),
            (f.w_h, b.w_h),
            (f.u_z, b.u_z),
            (f.u_r, b.u_r),
            (f.u_h, b.u_h),
            (f.b_z, b.b_z),
            (f.b_r, b.b_r),
            (f.b_h, b.b_h),
        ];
        for (src, dst) in pairs {
            let t = store.get(src).clone();
            *store.get_mut(dst) = t;
        }
        let seq = vec![vec![0.3, -1.0], vec![2.0, 0.5], vec![0.3, -1.0]];
        let trace = gru.forward_sequence(&store, &seq, None).unwrap();
        let (fwd, bwd) = trace.final_hidden.split_at(3);
        assert_eq!(fwd, bwd);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = Gru::new(&mut store, "g", config(2, 2, 1, false), &mut rng);
        assert!(gru.forward_sequence(&store, &[], None).is_err());
        assert!(gru.forward_sequence(&store, &[vec![1.0]], None).is_err());
    }
}
