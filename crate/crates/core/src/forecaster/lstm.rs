//! Two stacked LSTM layers and a linear head, with backpropagation through time.
//!
//! Activations are laid out time-major: row `t * batch + b` holds step `t`
//! of sequence `b`. Each layer keeps one combined weight matrix of shape
//! `(input + hidden) x 4*hidden` whose columns are the gates `[i f g o]`.

use ndarray::{linalg::general_mat_mul, s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Debug;

pub trait Real:
    Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::MulAssign
    + Debug
    + Send
    + Sync
    + 'static
{
    fn of(v: f64) -> Self;
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LstmShape {
    pub input: usize,
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for LstmShape {
    fn default() -> Self {
        LstmShape {
            input: 4,
            hidden1: 128,
            hidden2: 64,
        }
    }
}

impl LstmShape {
    fn layer(&self, l: usize) -> (usize, usize) {
        if l == 0 {
            (self.input, self.hidden1)
        } else {
            (self.hidden1, self.hidden2)
        }
    }

    /// Names and dimensions of the parameter tensors in storage order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>)> {
        let (i1, h1) = self.layer(0);
        let (i2, h2) = self.layer(1);
        vec![
            ("lstm1.weight", vec![i1 + h1, 4 * h1]),
            ("lstm1.bias", vec![4 * h1]),
            ("lstm2.weight", vec![i2 + h2, 4 * h2]),
            ("lstm2.bias", vec![4 * h2]),
            ("head.weight", vec![h2]),
            ("head.bias", vec![1]),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors()
            .iter()
            .map(|(_, d)| d.iter().product::<usize>())
            .sum()
    }

    fn offsets(&self) -> [usize; 7] {
        let mut out = [0; 7];
        for (k, (_, d)) in self.tensors().iter().enumerate() {
            out[k + 1] = out[k] + d.iter().product::<usize>();
        }
        out
    }
}

/// All weights in one flat buffer, in [`LstmShape::tensors`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub shape: LstmShape,
    pub data: Vec<F>,
}

pub struct ParamsMut<'a, F> {
    pub w: [ArrayViewMut2<'a, F>; 2],
    pub b: [ArrayViewMut1<'a, F>; 2],
    pub wo: ArrayViewMut1<'a, F>,
    pub bo: &'a mut F,
}

impl<F: Real> Params<F> {
    pub fn zeros(shape: LstmShape) -> Self {
        Params {
            shape,
            data: vec![F::zero(); shape.parameter_count()],
        }
    }

    /// Uniform ±1/√fan_in weights, zero biases except forget gates at 1.
    pub fn init(shape: LstmShape, rng: &mut impl Rng) -> Self {
        let mut p = Params::zeros(shape);
        let (i1, h1) = shape.layer(0);
        let (i2, h2) = shape.layer(1);
        let mut v = p.views_mut();
        for (l, (inp, hid)) in [(i1, h1), (i2, h2)].into_iter().enumerate() {
            let bound = 1.0 / ((inp + hid) as f64).sqrt();
            v.w[l].map_inplace(|x| *x = F::of(rng.random_range(-bound..bound)));
            v.b[l].slice_mut(s![hid..2 * hid]).fill(F::one());
        }
        let bound = 1.0 / (h2 as f64).sqrt();
        v.wo.map_inplace(|x| *x = F::of(rng.random_range(-bound..bound)));
        p
    }

    pub fn w(&self, l: usize) -> ArrayView2<'_, F> {
        let o = self.shape.offsets();
        let (inp, hid) = self.shape.layer(l);
        let k = 2 * l;
        ArrayView2::from_shape((inp + hid, 4 * hid), &self.data[o[k]..o[k + 1]]).unwrap()
    }

    pub fn b(&self, l: usize) -> ArrayView1<'_, F> {
        let o = self.shape.offsets();
        let k = 2 * l + 1;
        ArrayView1::from(&self.data[o[k]..o[k + 1]])
    }

    pub fn wo(&self) -> ArrayView1<'_, F> {
        let o = self.shape.offsets();
        ArrayView1::from(&self.data[o[4]..o[5]])
    }

    pub fn bo(&self) -> F {
        self.data[self.shape.offsets()[5]]
    }

    pub fn views_mut(&mut self) -> ParamsMut<'_, F> {
        let shape = self.shape;
        let o = shape.offsets();
        let (i1, h1) = shape.layer(0);
        let (i2, h2) = shape.layer(1);
        let rest = self.data.as_mut_slice();
        let (w1, rest) = rest.split_at_mut(o[1]);
        let (b1, rest) = rest.split_at_mut(o[2] - o[1]);
        let (w2, rest) = rest.split_at_mut(o[3] - o[2]);
        let (b2, rest) = rest.split_at_mut(o[4] - o[3]);
        let (wo, rest) = rest.split_at_mut(o[5] - o[4]);
        ParamsMut {
            w: [
                ArrayViewMut2::from_shape((i1 + h1, 4 * h1), w1).unwrap(),
                ArrayViewMut2::from_shape((i2 + h2, 4 * h2), w2).unwrap(),
            ],
            b: [ArrayViewMut1::from(b1), ArrayViewMut1::from(b2)],
            wo: ArrayViewMut1::from(wo),
            bo: &mut rest[0],
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = F::zero());
    }

    pub fn norm(&self) -> F {
        self.data.iter().map(|&x| x * x).sum::<F>().sqrt()
    }

    pub fn cast<G: Real>(&self) -> Params<G> {
        Params {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|x| G::of(x.to_f64().unwrap()))
                .collect(),
        }
    }
}

fn sigmoid<F: Real>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

struct LayerCache<F> {
    x: Array2<F>,
    h: Array2<F>,
    c: Array2<F>,
    tc: Array2<F>,
    /// Activated gates `[i f g o]`.
    a: Array2<F>,
}

fn layer_forward<F: Real>(
    w: ArrayView2<F>,
    b: ArrayView1<F>,
    x: Array2<F>,
    steps: usize,
    batch: usize,
) -> LayerCache<F> {
    let input = x.ncols();
    let hidden = w.ncols() / 4;
    let wx = w.slice(s![..input, ..]);
    let wh = w.slice(s![input.., ..]);
    let rows = steps * batch;
    let mut a = Array2::from_shape_fn((rows, 4 * hidden), |(_, j)| b[j]);
    general_mat_mul(F::one(), &x, &wx, F::one(), &mut a);
    let mut h = Array2::zeros((rows, hidden));
    let mut c = Array2::zeros((rows, hidden));
    let mut tc = Array2::zeros((rows, hidden));
    for t in 0..steps {
        let cur = t * batch..(t + 1) * batch;
        if t > 0 {
            let prev = h.slice(s![(t - 1) * batch..t * batch, ..]);
            let mut z = a.slice_mut(s![cur.clone(), ..]);
            general_mat_mul(F::one(), &prev, &wh, F::one(), &mut z);
        }
        let a_s = a.as_slice_mut().unwrap();
        let c_s = c.as_slice_mut().unwrap();
        let tc_s = tc.as_slice_mut().unwrap();
        let h_s = h.as_slice_mut().unwrap();
        for r in cur {
            let ar = &mut a_s[r * 4 * hidden..(r + 1) * 4 * hidden];
            for j in 0..hidden {
                let i = sigmoid(ar[j]);
                let f = sigmoid(ar[hidden + j]);
                let g = ar[2 * hidden + j].tanh();
                let o = sigmoid(ar[3 * hidden + j]);
                ar[j] = i;
                ar[hidden + j] = f;
                ar[2 * hidden + j] = g;
                ar[3 * hidden + j] = o;
                let c_prev = if t > 0 {
                    c_s[(r - batch) * hidden + j]
                } else {
                    F::zero()
                };
                let cell = f * c_prev + i * g;
                let th = cell.tanh();
                c_s[r * hidden + j] = cell;
                tc_s[r * hidden + j] = th;
                h_s[r * hidden + j] = o * th;
            }
        }
    }
    LayerCache { x, h, c, tc, a }
}

/// Accumulates weight gradients and returns the gradient w.r.t. the layer input.
fn layer_backward<F: Real>(
    w: ArrayView2<F>,
    cache: &LayerCache<F>,
    dh_out: &Array2<F>,
    steps: usize,
    batch: usize,
    mut dw: ArrayViewMut2<F>,
    mut db: ArrayViewMut1<F>,
    need_dx: bool,
) -> Option<Array2<F>> {
    let input = cache.x.ncols();
    let hidden = w.ncols() / 4;
    let wh = w.slice(s![input.., ..]);
    let mut dz = Array2::<F>::zeros((steps * batch, 4 * hidden));
    let mut dh_next = Array2::<F>::zeros((batch, hidden));
    let mut dc_next = vec![F::zero(); batch * hidden];
    let one = F::one();
    let a_s = cache.a.as_slice().unwrap();
    let c_s = cache.c.as_slice().unwrap();
    let tc_s = cache.tc.as_slice().unwrap();
    let dho = dh_out.as_slice().unwrap();
    for t in (0..steps).rev() {
        {
            let dz_s = dz.as_slice_mut().unwrap();
            let dhn = dh_next.as_slice().unwrap();
            for bi in 0..batch {
                let r = t * batch + bi;
                let ar = &a_s[r * 4 * hidden..(r + 1) * 4 * hidden];
                let dzr = &mut dz_s[r * 4 * hidden..(r + 1) * 4 * hidden];
                for j in 0..hidden {
                    let k = r * hidden + j;
                    let dh = dho[k] + dhn[bi * hidden + j];
                    let (i, f, g, o) = (ar[j], ar[hidden + j], ar[2 * hidden + j], ar[3 * hidden + j]);
                    let th = tc_s[k];
                    let c_prev = if t > 0 { c_s[k - batch * hidden] } else { F::zero() };
                    let dc = dc_next[bi * hidden + j] + dh * o * (one - th * th);
                    dc_next[bi * hidden + j] = dc * f;
                    dzr[j] = dc * g * i * (one - i);
                    dzr[hidden + j] = dc * c_prev * f * (one - f);
                    dzr[2 * hidden + j] = dc * i * (one - g * g);
                    dzr[3 * hidden + j] = dh * th * o * (one - o);
                }
            }
        }
        if t > 0 {
            let dzt = dz.slice(s![t * batch..(t + 1) * batch, ..]);
            general_mat_mul(one, &dzt, &wh.t(), F::zero(), &mut dh_next);
        }
    }
    general_mat_mul(
        one,
        &cache.x.t(),
        &dz,
        one,
        &mut dw.slice_mut(s![..input, ..]),
    );
    if steps > 1 {
        let hprev = cache.h.slice(s![..(steps - 1) * batch, ..]);
        let dz_later = dz.slice(s![batch.., ..]);
        general_mat_mul(one, &hprev.t(), &dz_later, one, &mut dw.slice_mut(s![input.., ..]));
    }
    db += &dz.sum_axis(Axis(0));
    need_dx.then(|| dz.dot(&w.slice(s![..input, ..]).t()))
}

/// Inverted-dropout masks: entries are 0 or `1 / (1 - rate)`.
#[derive(Debug, Clone)]
pub struct DropoutMasks<F> {
    /// On layer 1 outputs, `steps*batch x hidden1`.
    pub m1: Array2<F>,
    /// On the final layer 2 output, `batch x hidden2`.
    pub m2: Array2<F>,
}

impl<F: Real> DropoutMasks<F> {
    pub fn sample(shape: LstmShape, steps: usize, batch: usize, rate: f64, rng: &mut impl Rng) -> Self {
        let keep = F::of(1.0 / (1.0 - rate));
        let mut draw = |r, c| {
            Array2::from_shape_simple_fn((r, c), || {
                if rng.random::<f64>() < rate {
                    F::zero()
                } else {
                    keep
                }
            })
        };
        DropoutMasks {
            m1: draw(steps * batch, shape.hidden1),
            m2: draw(batch, shape.hidden2),
        }
    }
}

pub struct ForwardCache<F> {
    steps: usize,
    batch: usize,
    l1: LayerCache<F>,
    l2: LayerCache<F>,
    /// Final layer 2 output after dropout.
    top: Array2<F>,
    masks: Option<DropoutMasks<F>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm<F> {
    pub params: Params<F>,
}

impl<F: Real> Lstm<F> {
    pub fn new(params: Params<F>) -> Self {
        Lstm { params }
    }

    pub fn shape(&self) -> LstmShape {
        self.params.shape
    }

    /// Raw head outputs for a time-major input of `steps*batch x input` rows.
    pub fn forward(
        &self,
        x: Array2<F>,
        steps: usize,
        batch: usize,
        masks: Option<DropoutMasks<F>>,
    ) -> (Array1<F>, ForwardCache<F>) {
        let p = &self.params;
        let l1 = layer_forward(p.w(0), p.b(0), x, steps, batch);
        let x2 = match &masks {
            Some(m) => &l1.h * &m.m1,
            None => l1.h.clone(),
        };
        let l2 = layer_forward(p.w(1), p.b(1), x2, steps, batch);
        let last = l2.h.slice(s![(steps - 1) * batch.., ..]);
        let top = match &masks {
            Some(m) => &last * &m.m2,
            None => last.to_owned(),
        };
        let y = top.dot(&p.wo()) + p.bo();
        let cache = ForwardCache {
            steps,
            batch,
            l1,
            l2,
            top,
            masks,
        };
        (y, cache)
    }

    /// Adds d(loss)/d(params) to `grads` given d(loss)/d(outputs).
    pub fn backward(&self, cache: ForwardCache<F>, dy: &Array1<F>, grads: &mut Params<F>) {
        let p = &self.params;
        let (steps, batch) = (cache.steps, cache.batch);
        let h2 = p.shape.hidden2;
        let mut g = grads.views_mut();
        g.wo.scaled_add(F::one(), &cache.top.t().dot(dy));
        *g.bo += dy.sum();

        let mut dtop = Array2::zeros((batch, h2));
        for (bi, &d) in dy.iter().enumerate() {
            dtop.row_mut(bi).scaled_add(d, &p.wo());
        }
        if let Some(m) = &cache.masks {
            dtop *= &m.m2;
        }
        let mut dh2 = Array2::zeros((steps * batch, h2));
        dh2.slice_mut(s![(steps - 1) * batch.., ..]).assign(&dtop);

        let [gw1, gw2] = g.w;
        let [gb1, gb2] = g.b;
        let mut dx2 = layer_backward(p.w(1), &cache.l2, &dh2, steps, batch, gw2, gb2, true)
            .expect("dx requested");
        if let Some(m) = &cache.masks {
            dx2 *= &m.m1;
        }
        layer_backward(p.w(0), &cache.l1, &dx2, steps, batch, gw1, gb1, false);
    }
}

/// Stacks row-major `steps x input` sequences into the time-major layout.
pub fn stack<F: Real>(seqs: &[&[f32]], steps: usize, input: usize) -> Array2<F> {
    let batch = seqs.len();
    let mut x = Array2::zeros((steps * batch, input));
    for (b, seq) in seqs.iter().enumerate() {
        for t in 0..steps {
            for c in 0..input {
                x[[t * batch + b, c]] = F::of(f64::from(seq[t * input + c]));
            }
        }
    }
    x
}
