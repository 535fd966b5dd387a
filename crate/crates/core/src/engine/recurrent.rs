//! LSTM and GRU layers with backpropagation through time.
//!
//! Gate blocks are packed column-wise: LSTM uses `[i | f | g | o]`, GRU uses
//! `[z | r | n]`, each block `H` wide. Inputs are `B × T × D`.
//!
//! With a mask, a padded step carries the previous state through unchanged,
//! so the state at `T − 1` equals the state after the last real frame.

use ndarray::{s, Array2, Array3, ArrayView2, Axis};

use crate::error::{Error, Result};

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Clone, Copy, Debug)]
pub struct LstmParams<'a> {
    /// `D × 4H`
    pub wx: &'a Array2<f64>,
    /// `H × 4H`
    pub wh: &'a Array2<f64>,
    /// `1 × 4H`
    pub b: &'a Array2<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct GruParams<'a> {
    /// `D × 3H`
    pub wx: &'a Array2<f64>,
    /// `H × 3H`
    pub wh: &'a Array2<f64>,
    /// `1 × 3H`
    pub b: &'a Array2<f64>,
}

fn check_params(wx: &Array2<f64>, wh: &Array2<f64>, b: &Array2<f64>, gates: usize, input: usize) -> Result<usize> {
    let hidden = wh.nrows();
    let width = gates * hidden;
    if hidden == 0 || wh.ncols() != width || wx.dim() != (input, width) || b.dim() != (1, width) {
        return Err(Error::ShapeMismatch(format!(
            "recurrent params: Wx {:?}, Wh {:?}, b {:?} for input width {input}",
            wx.dim(),
            wh.dim(),
            b.dim()
        )));
    }
    Ok(hidden)
}

fn check_state(state: &Array2<f64>, batch: usize, hidden: usize, what: &str) -> Result<()> {
    if state.dim() != (batch, hidden) {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {:?}, expected {:?}",
            state.dim(),
            (batch, hidden)
        )));
    }
    Ok(())
}

fn step_mask(mask: Option<&Array2<bool>>, t: usize, batch: usize) -> Option<Array2<f64>> {
    mask.map(|m| Array2::from_shape_fn((batch, 1), |(b, _)| if m[[b, t]] { 1.0 } else { 0.0 }))
}

fn check_mask(mask: Option<&Array2<bool>>, batch: usize, steps: usize) -> Result<()> {
    match mask {
        Some(m) if m.dim() != (batch, steps) => Err(Error::ShapeMismatch(format!(
            "mask is {:?}, expected {:?}",
            m.dim(),
            (batch, steps)
        ))),
        _ => Ok(()),
    }
}

/// `(B·T) × D` view of the input, then one matmul for every time step.
fn project_inputs(x: &Array3<f64>, wx: &Array2<f64>, b: &Array2<f64>) -> Array3<f64> {
    let (batch, steps, dim) = x.dim();
    let flat = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((batch * steps, dim))
        .expect("contiguous input");
    let proj = flat.dot(wx) + b;
    proj.into_shape_with_order((batch, steps, wx.ncols()))
        .expect("contiguous projection")
}

fn input_weight_grads(x: &Array3<f64>, dgates: &Array3<f64>, wx: &Array2<f64>) -> (Array2<f64>, Array3<f64>) {
    let (batch, steps, dim) = x.dim();
    let width = dgates.dim().2;
    let xf = x
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((batch * steps, dim))
        .expect("contiguous input");
    let gf = dgates
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((batch * steps, width))
        .expect("contiguous gates");
    let dwx = xf.t().dot(&gf);
    let dx = gf
        .dot(&wx.t())
        .into_shape_with_order((batch, steps, dim))
        .expect("contiguous dx");
    (dwx, dx)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentGrads {
    pub dwx: Array2<f64>,
    pub dwh: Array2<f64>,
    pub db: Array2<f64>,
    /// Gradient with respect to the input sequence, `B × T × D`.
    pub dx: Array3<f64>,
    pub dh0: Array2<f64>,
    /// LSTM only.
    pub dc0: Option<Array2<f64>>,
}

struct LstmGates {
    i: Array2<f64>,
    f: Array2<f64>,
    g: Array2<f64>,
    o: Array2<f64>,
}

fn lstm_gates(pre: Array2<f64>, hidden: usize) -> LstmGates {
    let block = |k: usize| pre.slice(s![.., k * hidden..(k + 1) * hidden]).to_owned();
    LstmGates {
        i: block(0).mapv(sigmoid),
        f: block(1).mapv(sigmoid),
        g: block(2).mapv(f64::tanh),
        o: block(3).mapv(sigmoid),
    }
}

/// A single LSTM step on a batch: returns `(h', c')`.
pub fn lstm_cell_step(
    x_t: &Array2<f64>,
    h: &Array2<f64>,
    c: &Array2<f64>,
    params: &LstmParams<'_>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let hidden = check_params(params.wx, params.wh, params.b, 4, x_t.ncols())?;
    check_state(h, x_t.nrows(), hidden, "h")?;
    check_state(c, x_t.nrows(), hidden, "c")?;
    let gates = lstm_gates(x_t.dot(params.wx) + h.dot(params.wh) + params.b, hidden);
    let c_new = &gates.f * c + &gates.i * &gates.g;
    let h_new = &gates.o * &c_new.mapv(f64::tanh);
    Ok((h_new, c_new))
}

struct LstmStep {
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    gates: LstmGates,
    tanh_c: Array2<f64>,
    mask: Option<Array2<f64>>,
}

pub struct LstmSequenceCache {
    x: Array3<f64>,
    steps: Vec<LstmStep>,
    hidden: usize,
}

/// Runs the LSTM over every step. Returns all hidden states (`B × T × H`),
/// the final cell state and the cache for the backward pass.
pub fn lstm_sequence_forward(
    x: &Array3<f64>,
    params: &LstmParams<'_>,
    init: Option<(&Array2<f64>, &Array2<f64>)>,
    mask: Option<&Array2<bool>>,
) -> Result<(Array3<f64>, Array2<f64>, LstmSequenceCache)> {
    let (batch, steps, dim) = x.dim();
    let hidden = check_params(params.wx, params.wh, params.b, 4, dim)?;
    check_mask(mask, batch, steps)?;
    let (mut h, mut c) = match init {
        Some((h0, c0)) => {
            check_state(h0, batch, hidden, "h0")?;
            check_state(c0, batch, hidden, "c0")?;
            (h0.clone(), c0.clone())
        }
        None => (Array2::zeros((batch, hidden)), Array2::zeros((batch, hidden))),
    };

    let proj = project_inputs(x, params.wx, params.b);
    let mut hs = Array3::zeros((batch, steps, hidden));
    let mut cache = Vec::with_capacity(steps);
    for t in 0..steps {
        let pre = &proj.index_axis(Axis(1), t) + &h.dot(params.wh);
        let gates = lstm_gates(pre, hidden);
        let c_new = &gates.f * &c + &gates.i * &gates.g;
        let tanh_c = c_new.mapv(f64::tanh);
        let h_new = &gates.o * &tanh_c;
        let m = step_mask(mask, t, batch);
        let (h_next, c_next) = match &m {
            Some(m) => (
                &h_new * m + &h * &m.mapv(|v| 1.0 - v),
                &c_new * m + &c * &m.mapv(|v| 1.0 - v),
            ),
            None => (h_new, c_new),
        };
        hs.index_axis_mut(Axis(1), t).assign(&h_next);
        cache.push(LstmStep {
            h_prev: std::mem::replace(&mut h, h_next),
            c_prev: std::mem::replace(&mut c, c_next),
            gates,
            tanh_c,
            mask: m,
        });
    }
    Ok((
        hs,
        c,
        LstmSequenceCache {
            x: x.clone(),
            steps: cache,
            hidden,
        },
    ))
}

/// Backpropagation through time. `dhs` is the loss gradient with respect to
/// every returned hidden state; `dc_last` optionally adds a gradient on the
/// final cell state.
pub fn lstm_sequence_backward(
    params: &LstmParams<'_>,
    cache: &LstmSequenceCache,
    dhs: &Array3<f64>,
    dc_last: Option<&Array2<f64>>,
) -> Result<RecurrentGrads> {
    let (batch, steps, _) = cache.x.dim();
    let hidden = cache.hidden;
    if dhs.dim() != (batch, steps, hidden) {
        return Err(Error::ShapeMismatch(format!(
            "dhs is {:?}, expected {:?}",
            dhs.dim(),
            (batch, steps, hidden)
        )));
    }
    let mut dh_next = Array2::<f64>::zeros((batch, hidden));
    let mut dc_next = match dc_last {
        Some(d) => {
            check_state(d, batch, hidden, "dc_last")?;
            d.clone()
        }
        None => Array2::zeros((batch, hidden)),
    };
    let mut dgates = Array3::zeros((batch, steps, 4 * hidden));
    let mut dwh = Array2::zeros(params.wh.raw_dim());

    for t in (0..steps).rev() {
        let st = &cache.steps[t];
        let dh = &dh_next + &dhs.index_axis(Axis(1), t);
        let dc = dc_next;
        let (dh_new, dc_new, dh_carry, dc_carry) = match &st.mask {
            Some(m) => {
                let keep = m.mapv(|v| 1.0 - v);
                (&dh * m, &dc * m, &dh * &keep, &dc * &keep)
            }
            None => (dh, dc, Array2::zeros((batch, hidden)), Array2::zeros((batch, hidden))),
        };
        let LstmGates { i, f, g, o } = &st.gates;
        let d_o = &dh_new * &st.tanh_c;
        let dc_total = dc_new + &dh_new * o * &st.tanh_c.mapv(|v| 1.0 - v * v);
        let d_i = &dc_total * g;
        let d_g = &dc_total * i;
        let d_f = &dc_total * &st.c_prev;

        let mut block = dgates.index_axis_mut(Axis(1), t);
        block
            .slice_mut(s![.., 0..hidden])
            .assign(&(d_i * i * &i.mapv(|v| 1.0 - v)));
        block
            .slice_mut(s![.., hidden..2 * hidden])
            .assign(&(d_f * f * &f.mapv(|v| 1.0 - v)));
        block
            .slice_mut(s![.., 2 * hidden..3 * hidden])
            .assign(&(d_g * &g.mapv(|v| 1.0 - v * v)));
        block
            .slice_mut(s![.., 3 * hidden..])
            .assign(&(d_o * o * &o.mapv(|v| 1.0 - v)));

        let da: ArrayView2<f64> = dgates.index_axis(Axis(1), t);
        dwh = dwh + st.h_prev.t().dot(&da);
        dh_next = da.dot(&params.wh.t()) + dh_carry;
        dc_next = &dc_total * f + dc_carry;
    }

    let db = dgates.sum_axis(Axis(0)).sum_axis(Axis(0)).insert_axis(Axis(0));
    let (dwx, dx) = input_weight_grads(&cache.x, &dgates, params.wx);
    Ok(RecurrentGrads {
        dwx,
        dwh,
        db,
        dx,
        dh0: dh_next,
        dc0: Some(dc_next),
    })
}

/// A single GRU step on a batch: returns `h'`.
pub fn gru_cell_step(x_t: &Array2<f64>, h: &Array2<f64>, params: &GruParams<'_>) -> Result<Array2<f64>> {
    let hidden = check_params(params.wx, params.wh, params.b, 3, x_t.ncols())?;
    check_state(h, x_t.nrows(), hidden, "h")?;
    let xw = x_t.dot(params.wx) + params.b;
    let step = gru_step(xw.view(), h, params.wh, hidden);
    Ok(step.h_new)
}

struct GruStep {
    h_prev: Array2<f64>,
    z: Array2<f64>,
    r: Array2<f64>,
    n: Array2<f64>,
    h_new: Array2<f64>,
    mask: Option<Array2<f64>>,
}

fn gru_step(xw: ArrayView2<f64>, h: &Array2<f64>, wh: &Array2<f64>, hidden: usize) -> GruStep {
    let hzr = h.dot(&wh.slice(s![.., 0..2 * hidden]));
    let z = (&xw.slice(s![.., 0..hidden]) + &hzr.slice(s![.., 0..hidden])).mapv(sigmoid);
    let r = (&xw.slice(s![.., hidden..2 * hidden]) + &hzr.slice(s![.., hidden..])).mapv(sigmoid);
    let rh = &r * h;
    let n = (&xw.slice(s![.., 2 * hidden..]) + &rh.dot(&wh.slice(s![.., 2 * hidden..]))).mapv(f64::tanh);
    let h_new = &z.mapv(|v| 1.0 - v) * h + &z * &n;
    GruStep {
        h_prev: h.clone(),
        z,
        r,
        n,
        h_new,
        mask: None,
    }
}

pub struct GruSequenceCache {
    x: Array3<f64>,
    steps: Vec<GruStep>,
    hidden: usize,
}

pub fn gru_sequence_forward(
    x: &Array3<f64>,
    params: &GruParams<'_>,
    h0: Option<&Array2<f64>>,
    mask: Option<&Array2<bool>>,
) -> Result<(Array3<f64>, GruSequenceCache)> {
    let (batch, steps, dim) = x.dim();
    let hidden = check_params(params.wx, params.wh, params.b, 3, dim)?;
    check_mask(mask, batch, steps)?;
    let mut h = match h0 {
        Some(h0) => {
            check_state(h0, batch, hidden, "h0")?;
            h0.clone()
        }
        None => Array2::zeros((batch, hidden)),
    };

    let proj = project_inputs(x, params.wx, params.b);
    let mut hs = Array3::zeros((batch, steps, hidden));
    let mut cache = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut step = gru_step(proj.index_axis(Axis(1), t), &h, params.wh, hidden);
        step.mask = step_mask(mask, t, batch);
        h = match &step.mask {
            Some(m) => &step.h_new * m + &h * &m.mapv(|v| 1.0 - v),
            None => step.h_new.clone(),
        };
        hs.index_axis_mut(Axis(1), t).assign(&h);
        cache.push(step);
    }
    Ok((
        hs,
        GruSequenceCache {
            x: x.clone(),
            steps: cache,
            hidden,
        },
    ))
}

pub fn gru_sequence_backward(
    params: &GruParams<'_>,
    cache: &GruSequenceCache,
    dhs: &Array3<f64>,
) -> Result<RecurrentGrads> {
    let (batch, steps, _) = cache.x.dim();
    let hidden = cache.hidden;
    if dhs.dim() != (batch, steps, hidden) {
        return Err(Error::ShapeMismatch(format!(
            "dhs is {:?}, expected {:?}",
            dhs.dim(),
            (batch, steps, hidden)
        )));
    }
    let wh_zr = params.wh.slice(s![.., 0..2 * hidden]);
    let wh_n = params.wh.slice(s![.., 2 * hidden..]);
    let mut dh_next = Array2::<f64>::zeros((batch, hidden));
    let mut dgates = Array3::zeros((batch, steps, 3 * hidden));
    let mut dwh = Array2::<f64>::zeros(params.wh.raw_dim());

    for t in (0..steps).rev() {
        let st = &cache.steps[t];
        let dh = &dh_next + &dhs.index_axis(Axis(1), t);
        let (dh_new, dh_carry) = match &st.mask {
            Some(m) => (&dh * m, &dh * &m.mapv(|v| 1.0 - v)),
            None => (dh, Array2::zeros((batch, hidden))),
        };
        let (z, r, n, h) = (&st.z, &st.r, &st.n, &st.h_prev);

        let dz = &dh_new * &(n - h);
        let dn = &dh_new * z;
        let dan = dn * &n.mapv(|v| 1.0 - v * v);
        let drh = dan.dot(&wh_n.t());
        let dr = &drh * h;
        let daz = dz * z * &z.mapv(|v| 1.0 - v);
        let dar = dr * r * &r.mapv(|v| 1.0 - v);

        let mut block = dgates.index_axis_mut(Axis(1), t);
        block.slice_mut(s![.., 0..hidden]).assign(&daz);
        block.slice_mut(s![.., hidden..2 * hidden]).assign(&dar);
        block.slice_mut(s![.., 2 * hidden..]).assign(&dan);
        let dzr = dgates.slice(s![.., t, 0..2 * hidden]);

        {
            let mut zr = dwh.slice_mut(s![.., 0..2 * hidden]);
            zr += &h.t().dot(&dzr);
        }
        {
            let mut nn = dwh.slice_mut(s![.., 2 * hidden..]);
            nn += &(r * h).t().dot(&dan);
        }
        dh_next = dzr.dot(&wh_zr.t()) + &drh * r + &dh_new * &z.mapv(|v| 1.0 - v) + dh_carry;
    }

    let db = dgates.sum_axis(Axis(0)).sum_axis(Axis(0)).insert_axis(Axis(0));
    let (dwx, dx) = input_weight_grads(&cache.x, &dgates, params.wx);
    Ok(RecurrentGrads {
        dwx,
        dwh,
        db,
        dx,
        dh0: dh_next,
        dc0: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::gradient_check;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random2(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || rng.gen_range(-0.8..0.8))
    }

    fn random3(shape: (usize, usize, usize), rng: &mut ChaCha8Rng) -> Array3<f64> {
        Array3::from_shape_simple_fn(shape, || rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn lstm_zero_params() {
        let (wx, wh, b) = (Array2::zeros((2, 12)), Array2::zeros((3, 12)), Array2::zeros((1, 12)));
        let p = LstmParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let x = array![[0.4, -1.0]];
        let (h, c) = lstm_cell_step(&x, &Array2::zeros((1, 3)), &Array2::zeros((1, 3)), &p).unwrap();
        assert!(h.iter().chain(c.iter()).all(|&v| v == 0.0));

        // f = 0.5, i·g = 0 -> c' = 0.5; h' = 0.5·tanh(0.5)
        let (h, c) = lstm_cell_step(&x, &Array2::zeros((1, 3)), &Array2::ones((1, 3)), &p).unwrap();
        assert!(c.iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(h.iter().all(|&v| (v - 0.5 * 0.5f64.tanh()).abs() < 1e-15));
    }

    #[test]
    fn gru_zero_params() {
        let (wx, wh, b) = (Array2::zeros((2, 9)), Array2::zeros((3, 9)), Array2::zeros((1, 9)));
        let p = GruParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let x = array![[0.4, -1.0]];
        let h = gru_cell_step(&x, &Array2::zeros((1, 3)), &p).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
        let h = gru_cell_step(&x, &Array2::ones((1, 3)), &p).unwrap();
        assert!(h.iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn shape_errors() {
        let (wx, wh, b) = (Array2::zeros((2, 12)), Array2::zeros((3, 12)), Array2::zeros((1, 12)));
        let p = LstmParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let h = Array2::zeros((1, 3));
        assert!(lstm_cell_step(&Array2::zeros((1, 5)), &h, &h, &p).is_err());
        assert!(lstm_cell_step(&Array2::zeros((1, 2)), &Array2::zeros((1, 4)), &h, &p).is_err());
        let g = GruParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        assert!(gru_cell_step(&Array2::zeros((1, 2)), &h, &g).is_err());
    }

    #[test]
    fn sequence_forward_matches_cell_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (wx, wh, b) = (
            random2((2, 12), &mut rng),
            random2((3, 12), &mut rng),
            random2((1, 12), &mut rng),
        );
        let p = LstmParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let x = random3((2, 4, 2), &mut rng);
        let (hs, c_last, _) = lstm_sequence_forward(&x, &p, None, None).unwrap();
        let (mut h, mut c) = (Array2::zeros((2, 3)), Array2::zeros((2, 3)));
        for t in 0..4 {
            (h, c) = lstm_cell_step(&x.index_axis(Axis(1), t).to_owned(), &h, &c, &p).unwrap();
            let diff = (&hs.index_axis(Axis(1), t) - &h).mapv(f64::abs).sum();
            assert!(diff < 1e-12);
        }
        assert!((&c_last - &c).mapv(f64::abs).sum() < 1e-12);

        let (wx, wh, b) = (
            random2((2, 9), &mut rng),
            random2((3, 9), &mut rng),
            random2((1, 9), &mut rng),
        );
        let g = GruParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let (hs, _) = gru_sequence_forward(&x, &g, None, None).unwrap();
        let mut h = Array2::zeros((2, 3));
        for t in 0..4 {
            h = gru_cell_step(&x.index_axis(Axis(1), t).to_owned(), &h, &g).unwrap();
            assert!((&hs.index_axis(Axis(1), t) - &h).mapv(f64::abs).sum() < 1e-12);
        }
    }

    #[test]
    fn mask_freezes_state_after_last_real_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (wx, wh, b) = (
            random2((2, 12), &mut rng),
            random2((3, 12), &mut rng),
            random2((1, 12), &mut rng),
        );
        let p = LstmParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let x = random3((1, 5, 2), &mut rng);
        let mask = array![[true, true, false, false, false]];
        let (hs, _, _) = lstm_sequence_forward(&x, &p, None, Some(&mask)).unwrap();
        let (short, _, _) = lstm_sequence_forward(&x.slice(s![.., 0..2, ..]).to_owned(), &p, None, None).unwrap();
        for t in 2..5 {
            assert_eq!(hs.index_axis(Axis(1), t), short.index_axis(Axis(1), 1));
        }
    }

    /// Loss = Σ probe ⊙ hs (+ Σ probe_c ⊙ c_last), checked against every
    /// parameter, the inputs, and the initial state.
    fn check_lstm(batch: usize, steps: usize, masked: bool, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (3, 4);
        let wx = random2((d, 4 * h), &mut rng);
        let wh = random2((h, 4 * h), &mut rng);
        let b = random2((1, 4 * h), &mut rng);
        let x = random3((batch, steps, d), &mut rng);
        let h0 = random2((batch, h), &mut rng);
        let c0 = random2((batch, h), &mut rng);
        let probe = random3((batch, steps, h), &mut rng);
        let probe_c = random2((batch, h), &mut rng);
        let mask = masked.then(|| Array2::from_shape_fn((batch, steps), |(i, t)| t < steps - i % steps.max(1)));

        let loss = |wx: &Array2<f64>,
                    wh: &Array2<f64>,
                    b: &Array2<f64>,
                    x: &Array3<f64>,
                    h0: &Array2<f64>,
                    c0: &Array2<f64>| {
            let p = LstmParams { wx, wh, b };
            let (hs, c, _) = lstm_sequence_forward(x, &p, Some((h0, c0)), mask.as_ref()).unwrap();
            (hs * &probe).sum() + (c * &probe_c).sum()
        };
        let p = LstmParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let (_, _, cache) = lstm_sequence_forward(&x, &p, Some((&h0, &c0)), mask.as_ref()).unwrap();
        let g = lstm_sequence_backward(&p, &cache, &probe, Some(&probe_c)).unwrap();

        let mut worst = 0.0f64;
        let as2 = |v: &[f64], shape: (usize, usize)| Array2::from_shape_vec(shape, v.to_vec()).unwrap();
        worst = worst.max(
            gradient_check(
                |v| loss(&as2(v, wx.dim()), &wh, &b, &x, &h0, &c0),
                wx.as_slice().unwrap(),
                g.dwx.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &as2(v, wh.dim()), &b, &x, &h0, &c0),
                wh.as_slice().unwrap(),
                g.dwh.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &wh, &as2(v, b.dim()), &x, &h0, &c0),
                b.as_slice().unwrap(),
                g.db.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| {
                    loss(
                        &wx,
                        &wh,
                        &b,
                        &Array3::from_shape_vec(x.dim(), v.to_vec()).unwrap(),
                        &h0,
                        &c0,
                    )
                },
                x.as_slice().unwrap(),
                g.dx.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &wh, &b, &x, &as2(v, h0.dim()), &c0),
                h0.as_slice().unwrap(),
                g.dh0.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &wh, &b, &x, &h0, &as2(v, c0.dim())),
                c0.as_slice().unwrap(),
                g.dc0.as_ref().unwrap().as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst
    }

    fn check_gru(batch: usize, steps: usize, masked: bool, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (3, 4);
        let wx = random2((d, 3 * h), &mut rng);
        let wh = random2((h, 3 * h), &mut rng);
        let b = random2((1, 3 * h), &mut rng);
        let x = random3((batch, steps, d), &mut rng);
        let h0 = random2((batch, h), &mut rng);
        let probe = random3((batch, steps, h), &mut rng);
        let mask = masked.then(|| Array2::from_shape_fn((batch, steps), |(i, t)| t < steps - i % steps.max(1)));

        let loss = |wx: &Array2<f64>, wh: &Array2<f64>, b: &Array2<f64>, x: &Array3<f64>, h0: &Array2<f64>| {
            let p = GruParams { wx, wh, b };
            let (hs, _) = gru_sequence_forward(x, &p, Some(h0), mask.as_ref()).unwrap();
            (hs * &probe).sum()
        };
        let p = GruParams {
            wx: &wx,
            wh: &wh,
            b: &b,
        };
        let (_, cache) = gru_sequence_forward(&x, &p, Some(&h0), mask.as_ref()).unwrap();
        let g = gru_sequence_backward(&p, &cache, &probe).unwrap();

        let mut worst = 0.0f64;
        let as2 = |v: &[f64], shape: (usize, usize)| Array2::from_shape_vec(shape, v.to_vec()).unwrap();
        worst = worst.max(
            gradient_check(
                |v| loss(&as2(v, wx.dim()), &wh, &b, &x, &h0),
                wx.as_slice().unwrap(),
                g.dwx.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &as2(v, wh.dim()), &b, &x, &h0),
                wh.as_slice().unwrap(),
                g.dwh.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &wh, &as2(v, b.dim()), &x, &h0),
                b.as_slice().unwrap(),
                g.db.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &wh, &b, &Array3::from_shape_vec(x.dim(), v.to_vec()).unwrap(), &h0),
                x.as_slice().unwrap(),
                g.dx.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst = worst.max(
            gradient_check(
                |v| loss(&wx, &wh, &b, &x, &as2(v, h0.dim())),
                h0.as_slice().unwrap(),
                g.dh0.as_slice().unwrap(),
                1e-5,
            )
            .unwrap(),
        );
        worst
    }

    #[test]
    fn lstm_single_step_gradients() {
        let err = check_lstm(2, 1, false, 21);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn lstm_sequence_gradients() {
        assert!(check_lstm(3, 5, false, 22) < 1e-4);
        assert!(check_lstm(3, 5, true, 23) < 1e-4);
    }

    #[test]
    fn gru_single_step_gradients() {
        let err = check_gru(2, 1, false, 31);
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn gru_sequence_gradients() {
        assert!(check_gru(3, 5, false, 32) < 1e-4);
        assert!(check_gru(3, 5, true, 33) < 1e-4);
    }
}
