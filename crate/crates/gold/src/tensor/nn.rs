//! Small neural building blocks on top of the tape: linear layers, MLPs,
//! GRU cells, layer norm and fixed positional encodings.

use ndarray::Array2;
use rand::Rng;

use super::params::{normal_init, xavier_init, Binding, ParamGroup, ParamId, ParamStore};
use super::{Tape, Var};

/// Everything a module needs during one forward pass.
pub struct Fwd<'a> {
    pub tape: &'a mut Tape,
    pub store: &'a ParamStore,
    pub binding: &'a mut Binding,
}

impl<'a> Fwd<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, binding: &'a mut Binding) -> Self {
        Self {
            tape,
            store,
            binding,
        }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.binding.get(self.tape, self.store, id)
    }
}

/// `x @ W + b` over row-major batches.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        d_in: usize,
        d_out: usize,
    ) -> Self {
        let w = store.register(format!("{name}.w"), group, xavier_init(rng, d_in, d_out));
        let b = store.register(format!("{name}.b"), group, Array2::zeros((1, d_out)));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let w = f.p(self.w);
        let b = f.p(self.b);
        let xw = f.tape.matmul(x, w);
        f.tape.add_row(xw, b)
    }
}

/// Fully connected stack with ReLU between layers, linear output.
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        dims: &[usize],
    ) -> Self {
        assert!(dims.len() >= 2);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), group, w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(f, h);
            if i != last {
                h = f.tape.relu(h);
            }
        }
        h
    }
}

/// GRU cell over rows (each row an independent state).
///
/// Gate convention: `h' = z ⊙ h + (1 − z) ⊙ h̃`, so an update gate of 1
/// carries the previous state unchanged.
pub struct GruCell {
    pub wz: ParamId,
    pub uz: ParamId,
    pub bz: ParamId,
    pub wr: ParamId,
    pub ur: ParamId,
    pub br: ParamId,
    pub wh: ParamId,
    pub uh: ParamId,
    pub bh: ParamId,
    pub d_state: usize,
    pub d_input: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        group: ParamGroup,
        d_state: usize,
        d_input: usize,
    ) -> Self {
        let wz = store.register(format!("{name}.wz"), group, xavier_init(rng, d_input, d_state));
        let uz = store.register(format!("{name}.uz"), group, xavier_init(rng, d_state, d_state));
        let wr = store.register(format!("{name}.wr"), group, xavier_init(rng, d_input, d_state));
        let ur = store.register(format!("{name}.ur"), group, xavier_init(rng, d_state, d_state));
        let wh = store.register(format!("{name}.wh"), group, xavier_init(rng, d_input, d_state));
        let uh = store.register(format!("{name}.uh"), group, xavier_init(rng, d_state, d_state));
        let bz = store.register(format!("{name}.bz"), group, Array2::zeros((1, d_state)));
        let br = store.register(format!("{name}.br"), group, Array2::zeros((1, d_state)));
        let bh = store.register(format!("{name}.bh"), group, Array2::zeros((1, d_state)));
        Self {
            wz,
            uz,
            bz,
            wr,
            ur,
            br,
            wh,
            uh,
            bh,
            d_state,
            d_input,
        }
    }

    pub fn forward(&self, f: &mut Fwd, state: Var, input: Var) -> Var {
        let gate = |f: &mut Fwd, w, u, b, x: Var, h: Var| {
            let (w, u, b) = (f.p(w), f.p(u), f.p(b));
            let xw = f.tape.matmul(x, w);
            let hu = f.tape.matmul(h, u);
            let s = f.tape.add(xw, hu);
            f.tape.add_row(s, b)
        };
        let z_pre = gate(f, self.wz, self.uz, self.bz, input, state);
        let z = f.tape.sigmoid(z_pre);
        let r_pre = gate(f, self.wr, self.ur, self.br, input, state);
        let r = f.tape.sigmoid(r_pre);
        let rh = f.tape.mul(r, state);
        let cand_pre = gate(f, self.wh, self.uh, self.bh, input, rh);
        let cand = f.tape.tanh(cand_pre);
        let keep = f.tape.mul(z, state);
        let one_minus_z = {
            let nz = f.tape.neg(z);
            f.tape.add_scalar(nz, 1.0)
        };
        let take = f.tape.mul(one_minus_z, cand);
        f.tape.add(keep, take)
    }
}

/// Layer norm over each row with learnable gain and bias.
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, d: usize) -> Self {
        let gain = store.register(format!("{name}.gain"), group, Array2::ones((1, d)));
        let bias = store.register(format!("{name}.bias"), group, Array2::zeros((1, d)));
        Self {
            gain,
            bias,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, f: &mut Fwd, x: Var) -> Var {
        let normed = normalize_rows(f.tape, x, self.eps);
        let gain = f.p(self.gain);
        let bias = f.p(self.bias);
        let g = f.tape.broadcast_rows(gain, f.tape.value(normed).nrows());
        let scaled = f.tape.mul(normed, g);
        f.tape.add_row(scaled, bias)
    }
}

/// Row-wise standardization `(x - mean) / sqrt(var + eps)` as a tape graph.
pub fn normalize_rows(tape: &mut Tape, x: Var, eps: f64) -> Var {
    let d = tape.value(x).ncols();
    let mean = tape.row_mean(x);
    let mean_b = tape.broadcast_cols(mean, d);
    let centered = tape.sub(x, mean_b);
    let sq = tape.square(centered);
    let var = tape.row_mean(sq);
    let var_eps = tape.add_scalar(var, eps);
    let std = tape.sqrt(var_eps);
    let inv = tape.recip(std);
    tape.mul_col(centered, inv)
}

/// Fixed sinusoidal positional encoding for a 2-D patch grid, one row per
/// patch in row-major order. The first half of the channels encodes the
/// row coordinate, the second half the column coordinate.
pub fn grid_posenc(rows: usize, cols: usize, d: usize) -> Array2<f64> {
    assert!(d >= 4, "positional encoding needs at least 4 channels");
    let half = d / 2;
    let mut out = Array2::zeros((rows * cols, d));
    let encode = |mut slot: ndarray::ArrayViewMut1<f64>, pos: f64, width: usize| {
        for k in 0..width {
            let freq = 10000f64.powf(-((k / 2 * 2) as f64) / width as f64);
            let angle = pos * freq;
            slot[k] = if k % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    };
    for r in 0..rows {
        for c in 0..cols {
            let n = r * cols + c;
            let mut row = out.row_mut(n);
            let (left, right) = row.view_mut().split_at(ndarray::Axis(0), half);
            encode(left, r as f64 / rows.max(1) as f64 * 8.0, half);
            encode(right, c as f64 / cols.max(1) as f64 * 8.0, d - half);
        }
    }
    out
}

/// Gaussian-initialized parameter helper for non-layer parameters.
pub fn gaussian_param(
    store: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    group: ParamGroup,
    rows: usize,
    cols: usize,
    std: f64,
) -> ParamId {
    store.register(name, group, normal_init(rng, rows, cols, std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::check_gradients;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fwd_env() -> (Tape, ParamStore, Binding) {
        (Tape::new(), ParamStore::new(), Binding::new())
    }

    #[test]
    fn linear_matches_hand_computation() {
        let (mut tape, mut store, mut binding) = fwd_env();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new(&mut store, &mut rng, "l", ParamGroup::ObjectModel, 2, 2);
        store.set_value(lin.w, array![[1.0, 2.0], [3.0, 4.0]]);
        store.set_value(lin.b, array![[0.5, -0.5]]);
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let x = f.tape.leaf(array![[1.0, 1.0]]);
        let y = lin.forward(&mut f, x);
        let out = tape.value(y);
        assert_eq!(out[[0, 0]], 4.5);
        assert_eq!(out[[0, 1]], 5.5);
    }

    #[test]
    fn gru_update_gate_one_carries_state() {
        // Force z = sigmoid(large) ~= 1 via the bias; state must pass through.
        let (mut tape, mut store, mut binding) = fwd_env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gru = GruCell::new(&mut store, &mut rng, "g", ParamGroup::ObjectModel, 3, 3);
        store.set_value(gru.bz, Array2::from_elem((1, 3), 500.0));
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let h = f.tape.leaf(array![[0.3, -1.2, 2.0]]);
        let u = f.tape.leaf(array![[5.0, -5.0, 1.0]]);
        let h2 = gru.forward(&mut f, h, u);
        let before = tape.value(h).clone();
        let after = tape.value(h2).clone();
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_scalar_matches_hand_recurrence() {
        let (mut tape, mut store, mut binding) = fwd_env();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gru = GruCell::new(&mut store, &mut rng, "g", ParamGroup::ObjectModel, 1, 1);
        let set = |store: &mut ParamStore, id, v: f64| store.set_value(id, array![[v]]);
        set(&mut store, gru.wz, 0.5);
        set(&mut store, gru.uz, -0.3);
        set(&mut store, gru.bz, 0.1);
        set(&mut store, gru.wr, 0.7);
        set(&mut store, gru.ur, 0.2);
        set(&mut store, gru.br, -0.1);
        set(&mut store, gru.wh, 1.1);
        set(&mut store, gru.uh, -0.6);
        set(&mut store, gru.bh, 0.05);
        let (hv, uv) = (0.4f64, -0.8f64);
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let h = f.tape.leaf(array![[hv]]);
        let u = f.tape.leaf(array![[uv]]);
        let h2 = gru.forward(&mut f, h, u);

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let z = sig(uv * 0.5 + hv * -0.3 + 0.1);
        let r = sig(uv * 0.7 + hv * 0.2 - 0.1);
        let cand = (uv * 1.1 + r * hv * -0.6 + 0.05).tanh();
        let expect = z * hv + (1.0 - z) * cand;
        assert!((tape.value(h2)[[0, 0]] - expect).abs() < 1e-12);
    }

    #[test]
    fn gru_output_shape_matches_state() {
        let (mut tape, mut store, mut binding) = fwd_env();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gru = GruCell::new(&mut store, &mut rng, "g", ParamGroup::ObjectModel, 4, 6);
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let h = f.tape.leaf(Array2::zeros((3, 4)));
        let u = f.tape.leaf(Array2::ones((3, 6)));
        let h2 = gru.forward(&mut f, h, u);
        assert_eq!(tape.value(h2).dim(), (3, 4));
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let (mut tape, mut store, mut binding) = fwd_env();
        let ln = LayerNorm::new(&mut store, "ln", ParamGroup::ObjectModel, 4);
        let mut f = Fwd::new(&mut tape, &store, &mut binding);
        let x = f.tape.leaf(array![[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 30.0, 30.0]]);
        let y = ln.forward(&mut f, x);
        for row in tape.value(y).rows() {
            assert!(row.sum().abs() < 1e-9);
            let var = row.mapv(|v| v * v).sum() / 4.0;
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let rep = check_gradients(
            &[array![[0.3, -1.0, 2.0], [0.1, 0.5, -0.5]]],
            1e-6,
            1e-6,
            |t, v| {
                let y = normalize_rows(t, v[0], 1e-5);
                let w = t.leaf(array![[0.7, -1.3, 0.2], [0.4, 0.9, -0.6]]);
                let y = t.mul(y, w);
                let y = t.exp(y);
                t.sum_all(y)
            },
        );
        assert!(rep.max_rel_err < 1e-4, "rel {}", rep.max_rel_err);
    }

    #[test]
    fn posenc_is_deterministic_and_position_dependent() {
        let a = grid_posenc(4, 4, 16);
        let b = grid_posenc(4, 4, 16);
        assert_eq!(a, b);
        assert_eq!(a.dim(), (16, 16));
        // distinct patches get distinct encodings
        for i in 0..16 {
            for j in (i + 1)..16 {
                let diff: f64 = (&a.row(i) - &a.row(j)).mapv(f64::abs).sum();
                assert!(diff > 1e-6, "rows {i} and {j} identical");
            }
        }
    }

    #[test]
    fn adam_reduces_simple_quadratic() {
        use super::super::params::Adam;
        use std::collections::HashMap;
        let mut store = ParamStore::new();
        let p = store.register("p", ParamGroup::ObjectModel, array![[4.0, -3.0]]);
        let adam = Adam::default();
        for _ in 0..500 {
            let mut tape = Tape::new();
            let mut binding = Binding::new();
            let v = binding.get(&mut tape, &store, p);
            let sq = tape.square(v);
            let loss = tape.sum_all(sq);
            let grads = tape.backward(loss);
            let gmap: HashMap<_, _> = binding.gradients(&grads);
            adam.step(&mut store, &gmap, 0.05, &[ParamGroup::ObjectModel]);
        }
        let v = store.value(p);
        assert!(v[[0, 0]].abs() < 0.05 && v[[0, 1]].abs() < 0.05);
    }

    #[test]
    fn adam_skips_inactive_groups() {
        use super::super::params::Adam;
        use std::collections::HashMap;
        let mut store = ParamStore::new();
        let a = store.register("a", ParamGroup::ObjectModel, array![[1.0]]);
        let b = store.register("b", ParamGroup::CodecDecoder, array![[1.0]]);
        let mut gmap = HashMap::new();
        gmap.insert(a, array![[1.0]]);
        gmap.insert(b, array![[1.0]]);
        Adam::default().step(&mut store, &gmap, 0.1, &[ParamGroup::ObjectModel]);
        assert!(store.value(a)[[0, 0]] < 1.0);
        assert_eq!(store.value(b)[[0, 0]], 1.0);
    }
}
