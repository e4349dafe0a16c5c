//! Reusable layers built on the graph: linear, recurrent cells, highway
//! and convolution wrappers.

use super::graph::{Conv2dSpec, Graph, NodeId};
use super::params::{Binding, ParamId, ParamStore};
use crate::{Mat, Real};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Xavier-uniform initialization.
pub fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat {
    let a = (6.0 / (rows + cols) as Real).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

/// Fully connected layer.
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Linear {
            w: store.add(&format!("{name}.w"), xavier(din, dout, rng)),
            b: store.add(&format!("{name}.b"), Mat::zeros((1, dout))),
        }
    }

    /// Like [`Linear::new`] but with explicit weights; used by test-mode
    /// constructors.
    pub fn from_values(store: &mut ParamStore, name: &str, w: Mat, b: Mat) -> Self {
        Linear {
            w: store.add(&format!("{name}.w"), w),
            b: store.add(&format!("{name}.b"), b),
        }
    }

    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let y = g.matmul(x, bind.node(self.w));
        g.add_row(y, bind.node(self.b))
    }
}

/// Gated recurrent unit cell; gate layout along columns is `[z | r | n]`.
pub struct GruCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        GruCell {
            wx: store.add(&format!("{name}.wx"), xavier(din, 3 * hidden, rng)),
            wh: store.add(&format!("{name}.wh"), xavier(hidden, 3 * hidden, rng)),
            b: store.add(&format!("{name}.b"), Mat::zeros((1, 3 * hidden))),
            hidden,
        }
    }

    /// One step: `x` is 1 x din, `h` is 1 x hidden; returns the next state.
    pub fn step(&self, g: &mut Graph, bind: &Binding, x: NodeId, h: NodeId) -> NodeId {
        let hsize = self.hidden;
        let xg = g.matmul(x, bind.node(self.wx));
        let xg = g.add_row(xg, bind.node(self.b));
        let hg = g.matmul(h, bind.node(self.wh));
        let xz = g.slice_cols(xg, 0, hsize);
        let hz = g.slice_cols(hg, 0, hsize);
        let zsum = g.add(xz, hz);
        let z = g.sigmoid(zsum);
        let xr = g.slice_cols(xg, hsize, hsize);
        let hr = g.slice_cols(hg, hsize, hsize);
        let rsum = g.add(xr, hr);
        let r = g.sigmoid(rsum);
        let xn = g.slice_cols(xg, 2 * hsize, hsize);
        let hn = g.slice_cols(hg, 2 * hsize, hsize);
        let rhn = g.mul(r, hn);
        let nsum = g.add(xn, rhn);
        let n = g.tanh(nsum);
        // h' = n + z * (h - n)
        let hmn = g.sub(h, n);
        let zh = g.mul(z, hmn);
        g.add(n, zh)
    }

    /// Runs over the rows of `x` (T x din) and returns all states (T x H).
    pub fn run(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let t_len = g.value(x).nrows();
        let mut h = g.constant(Mat::zeros((1, self.hidden)));
        let mut states = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = g.slice_rows(x, t, 1);
            h = self.step(g, bind, xt, h);
            states.push(h);
        }
        g.concat_rows(&states)
    }
}

/// LSTM cell; gate layout `[i | f | g | o]`. Forget-gate bias starts at 1.
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut b = Mat::zeros((1, 4 * hidden));
        for c in hidden..2 * hidden {
            b[[0, c]] = 1.0;
        }
        LstmCell {
            wx: store.add(&format!("{name}.wx"), xavier(din, 4 * hidden, rng)),
            wh: store.add(&format!("{name}.wh"), xavier(hidden, 4 * hidden, rng)),
            b: store.add(&format!("{name}.b"), b),
            hidden,
        }
    }

    pub fn step(
        &self,
        g: &mut Graph,
        bind: &Binding,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> (NodeId, NodeId) {
        let hsize = self.hidden;
        let xg = g.matmul(x, bind.node(self.wx));
        let xg = g.add_row(xg, bind.node(self.b));
        let hg = g.matmul(h, bind.node(self.wh));
        let gates = g.add(xg, hg);
        let i_gate = g.slice_cols(gates, 0, hsize);
        let i_gate = g.sigmoid(i_gate);
        let f_gate = g.slice_cols(gates, hsize, hsize);
        let f_gate = g.sigmoid(f_gate);
        let g_gate = g.slice_cols(gates, 2 * hsize, hsize);
        let g_gate = g.tanh(g_gate);
        let o_gate = g.slice_cols(gates, 3 * hsize, hsize);
        let o_gate = g.sigmoid(o_gate);
        let fc = g.mul(f_gate, c);
        let ig = g.mul(i_gate, g_gate);
        let c_next = g.add(fc, ig);
        let tc = g.tanh(c_next);
        let h_next = g.mul(o_gate, tc);
        (h_next, c_next)
    }

    pub fn run(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let t_len = g.value(x).nrows();
        let mut h = g.constant(Mat::zeros((1, self.hidden)));
        let mut c = g.constant(Mat::zeros((1, self.hidden)));
        let mut states = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let xt = g.slice_rows(x, t, 1);
            let (hn, cn) = self.step(g, bind, xt, h, c);
            h = hn;
            c = cn;
            states.push(h);
        }
        g.concat_rows(&states)
    }
}

/// Bidirectional wrapper over two recurrent cells; output is the column
/// concatenation of the forward and the reversed backward state sequences.
pub enum RecurrentCell {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl RecurrentCell {
    fn hidden(&self) -> usize {
        match self {
            RecurrentCell::Gru(c) => c.hidden,
            RecurrentCell::Lstm(c) => c.hidden,
        }
    }

    fn run_rows(&self, g: &mut Graph, bind: &Binding, rows: &[NodeId]) -> Vec<NodeId> {
        let mut h = g.constant(Mat::zeros((1, self.hidden())));
        let mut c = g.constant(Mat::zeros((1, self.hidden())));
        let mut out = Vec::with_capacity(rows.len());
        for &xt in rows {
            match self {
                RecurrentCell::Gru(cell) => h = cell.step(g, bind, xt, h),
                RecurrentCell::Lstm(cell) => {
                    let (hn, cn) = cell.step(g, bind, xt, h, c);
                    h = hn;
                    c = cn;
                }
            }
            out.push(h);
        }
        out
    }
}

pub struct Bidirectional {
    pub fwd: RecurrentCell,
    pub bwd: RecurrentCell,
}

impl Bidirectional {
    pub fn gru(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Bidirectional {
            fwd: RecurrentCell::Gru(GruCell::new(store, &format!("{name}.fwd"), din, hidden, rng)),
            bwd: RecurrentCell::Gru(GruCell::new(store, &format!("{name}.bwd"), din, hidden, rng)),
        }
    }

    pub fn lstm(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Bidirectional {
            fwd: RecurrentCell::Lstm(LstmCell::new(
                store,
                &format!("{name}.fwd"),
                din,
                hidden,
                rng,
            )),
            bwd: RecurrentCell::Lstm(LstmCell::new(
                store,
                &format!("{name}.bwd"),
                din,
                hidden,
                rng,
            )),
        }
    }

    /// `x`: T x din, output T x (2*hidden).
    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let t_len = g.value(x).nrows();
        let rows: Vec<NodeId> = (0..t_len).map(|t| g.slice_rows(x, t, 1)).collect();
        let fwd_states = self.fwd.run_rows(g, bind, &rows);
        let rev: Vec<NodeId> = rows.iter().rev().cloned().collect();
        let mut bwd_states = self.bwd.run_rows(g, bind, &rev);
        bwd_states.reverse();
        let joined: Vec<NodeId> = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect();
        g.concat_rows(&joined)
    }
}

/// Highway layer: `y = x + T(x) * (H(x) - x)` with a transform gate biased
/// toward pass-through at initialization.
pub struct Highway {
    pub h: Linear,
    pub t: Linear,
}

impl Highway {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let h = Linear::new(store, &format!("{name}.h"), dim, dim, rng);
        let t = Linear::new(store, &format!("{name}.t"), dim, dim, rng);
        store.value_mut(t.b).fill(-1.0);
        Highway { h, t }
    }

    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let hpre = self.h.apply(g, bind, x);
        let hout = g.relu(hpre);
        let tpre = self.t.apply(g, bind, x);
        let tgate = g.sigmoid(tpre);
        let diff = g.sub(hout, x);
        let gated = g.mul(tgate, diff);
        g.add(x, gated)
    }
}

/// 1-D convolution layer (same-length output) with bias.
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub k: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Conv1d {
            w: store.add(&format!("{name}.w"), xavier(k * cin, cout, rng)),
            b: store.add(&format!("{name}.b"), Mat::zeros((1, cout))),
            k,
        }
    }

    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let y = g.conv1d_same(x, bind.node(self.w), self.k);
        g.add_row(y, bind.node(self.b))
    }
}

/// Strided 2-D convolution layer over packed (freq, channel) columns.
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: Conv2dSpec,
}

impl Conv2d {
    pub fn new(store: &mut ParamStore, name: &str, spec: Conv2dSpec, rng: &mut ChaCha8Rng) -> Self {
        let (kr, kc) = spec.kernel_shape();
        Conv2d {
            w: store.add(&format!("{name}.w"), xavier(kr, kc, rng)),
            b: store.add(&format!("{name}.b"), Mat::zeros((1, spec.f * spec.cout))),
            spec,
        }
    }

    pub fn apply(&self, g: &mut Graph, bind: &Binding, x: NodeId) -> NodeId {
        let y = g.conv2d(x, bind.node(self.w), self.spec);
        g.add_row(y, bind.node(self.b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn gru_and_lstm_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "gru", 5, 7, &mut rng);
        let lstm = LstmCell::new(&mut store, "lstm", 5, 7, &mut rng);
        let bi = Bidirectional::gru(&mut store, "bi", 5, 4, &mut rng);

        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let x = g.constant(xavier(6, 5, &mut rng));
        let hs = gru.run(&mut g, &bind, x);
        assert_eq!(g.value(hs).dim(), (6, 7));
        let hs = lstm.run(&mut g, &bind, x);
        assert_eq!(g.value(hs).dim(), (6, 7));
        let hs = bi.apply(&mut g, &bind, x);
        assert_eq!(g.value(hs).dim(), (6, 8));
    }

    #[test]
    fn bidirectional_sees_the_future() {
        // Changing the last input row must change the first output row
        // through the backward direction.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let bi = Bidirectional::gru(&mut store, "bi", 3, 4, &mut rng);

        let base = xavier(5, 3, &mut rng);
        let mut changed = base.clone();
        changed[[4, 0]] += 1.0;

        let run = |input: &Mat| {
            let mut g = Graph::new();
            let bind = store.bind(&mut g);
            let x = g.constant(input.clone());
            let out = bi.apply(&mut g, &bind, x);
            g.value(out).row(0).to_owned()
        };
        assert_ne!(run(&base), run(&changed));
    }

    #[test]
    fn highway_starts_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let hw = Highway::new(&mut store, "hw", 6, &mut rng);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let xv = xavier(4, 6, &mut rng);
        let x = g.constant(xv.clone());
        let y = hw.apply(&mut g, &bind, x);
        // transform gate biased to sigmoid(-1) ~ 0.27: output stays close
        // to the input at init.
        for (a, b) in g.value(y).iter().zip(xv.iter()) {
            assert!((a - b).abs() < 0.75, "{a} vs {b}");
        }
    }

    #[test]
    fn recurrent_cells_backprop_to_all_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let gru = GruCell::new(&mut store, "gru", 3, 4, &mut rng);
        let mut g = Graph::new();
        let bind = store.bind(&mut g);
        let x = g.constant(xavier(5, 3, &mut rng));
        let hs = gru.run(&mut g, &bind, x);
        let sq = g.mul(hs, hs);
        let loss = g.mean_all(sq);
        let grads = g.backward(loss);
        for pid in [gru.wx, gru.wh, gru.b] {
            let gm = bind.grad(&grads, pid).expect("gradient present");
            assert!(gm.iter().any(|v| v.abs() > 0.0));
        }
    }
}
