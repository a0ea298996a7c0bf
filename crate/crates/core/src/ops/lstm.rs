//! Bidirectional LSTM over a [T, N, C] sequence batch. Gate layout in the
//! stacked weight matrices is i, f, g, o from the top. The two directions
//! have independent weights and their hidden-state sequences are summed into
//! the [T, N, H] output.

use crate::error::{FotsError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::activation::sigmoid_scalar;

#[inline]
fn gemv_acc<T: Scalar>(out: &mut [T], a: &[T], x: &[T]) {
    let c = x.len();
    for (o, row) in out.iter_mut().zip(a.chunks_exact(c)) {
        let mut acc = T::zero();
        for (&av, &xv) in row.iter().zip(x) {
            acc += av * xv;
        }
        *o += acc;
    }
}

#[inline]
fn gemv_t_acc<T: Scalar>(out: &mut [T], a: &[T], g: &[T]) {
    let c = out.len();
    for (&gv, row) in g.iter().zip(a.chunks_exact(c)) {
        for (o, &av) in out.iter_mut().zip(row) {
            *o += gv * av;
        }
    }
}

#[inline]
fn outer_acc<T: Scalar>(gw: &mut [T], g: &[T], x: &[T]) {
    let c = x.len();
    for (&gv, row) in g.iter().zip(gw.chunks_exact_mut(c)) {
        for (o, &xv) in row.iter_mut().zip(x) {
            *o += gv * xv;
        }
    }
}

/// Per-direction, per-item activations kept for backward; arrays are [T, H].
struct DirCache<T> {
    i: Vec<T>,
    f: Vec<T>,
    g: Vec<T>,
    o: Vec<T>,
    c: Vec<T>,
    tc: Vec<T>,
    h: Vec<T>,
}

pub struct BiLstmCache<T> {
    // indexed [item][direction 0=fwd 1=bwd]
    dirs: Vec<[DirCache<T>; 2]>,
}

pub struct LstmGrads<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub b: Tensor<T>,
}

type LstmWeights<'a, T> = (&'a Tensor<T>, &'a Tensor<T>, &'a Tensor<T>);

fn run_dir<T: Scalar>(
    x: &[T], // [T, C] contiguous
    steps: usize,
    cin: usize,
    (w_ih, w_hh, b): LstmWeights<T>,
    reverse: bool,
) -> DirCache<T> {
    let hd = w_hh.shape()[1];
    let mut cache = DirCache {
        i: vec![T::zero(); steps * hd],
        f: vec![T::zero(); steps * hd],
        g: vec![T::zero(); steps * hd],
        o: vec![T::zero(); steps * hd],
        c: vec![T::zero(); steps * hd],
        tc: vec![T::zero(); steps * hd],
        h: vec![T::zero(); steps * hd],
    };
    let mut h_prev = vec![T::zero(); hd];
    let mut c_prev = vec![T::zero(); hd];
    let mut z = vec![T::zero(); 4 * hd];
    for step in 0..steps {
        let t = if reverse { steps - 1 - step } else { step };
        z.copy_from_slice(b.data());
        gemv_acc(&mut z, w_ih.data(), &x[t * cin..(t + 1) * cin]);
        gemv_acc(&mut z, w_hh.data(), &h_prev);
        let lo = t * hd;
        for j in 0..hd {
            let iv = sigmoid_scalar(z[j]);
            let fv = sigmoid_scalar(z[hd + j]);
            let gv = z[2 * hd + j].tanh();
            let ov = sigmoid_scalar(z[3 * hd + j]);
            let cv = fv * c_prev[j] + iv * gv;
            let tcv = cv.tanh();
            let hv = ov * tcv;
            cache.i[lo + j] = iv;
            cache.f[lo + j] = fv;
            cache.g[lo + j] = gv;
            cache.o[lo + j] = ov;
            cache.c[lo + j] = cv;
            cache.tc[lo + j] = tcv;
            cache.h[lo + j] = hv;
            h_prev[j] = hv;
            c_prev[j] = cv;
        }
    }
    cache
}

fn check_weights<T: Scalar>(w: LstmWeights<T>, cin: usize, label: &str) -> Result<usize> {
    let hd = w.1.shape()[1];
    if w.0.shape() != [4 * hd, cin] || w.1.shape() != [4 * hd, hd] || w.2.len() != 4 * hd {
        return Err(FotsError::Invalid(format!(
            "bilstm {label} weight shapes inconsistent (hidden {hd}, input {cin})"
        )));
    }
    Ok(hd)
}

/// Forward pass over [T, N, C]; weight triples are
/// (w_ih [4H, C], w_hh [4H, H], b [4H]). Output is [T, N, H].
pub fn bilstm_forward<T: Scalar>(
    x: &Tensor<T>,
    wf: LstmWeights<T>,
    wb: LstmWeights<T>,
) -> Result<(Tensor<T>, BiLstmCache<T>)> {
    if x.shape().len() != 3 || x.shape()[0] == 0 {
        return Err(FotsError::Invalid(format!(
            "bilstm needs a nonempty [T, N, C] sequence, got {:?}",
            x.shape()
        )));
    }
    let (steps, n, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hd = check_weights(wf, cin, "forward")?;
    let hd2 = check_weights(wb, cin, "backward")?;
    if hd != hd2 {
        return Err(FotsError::Invalid(
            "bilstm direction hidden sizes differ".into(),
        ));
    }
    let mut out = Tensor::zeros(&[steps, n, hd]);
    let mut dirs = Vec::with_capacity(n);
    let mut xseq = vec![T::zero(); steps * cin];
    for item in 0..n {
        for t in 0..steps {
            let src = (t * n + item) * cin;
            xseq[t * cin..(t + 1) * cin].copy_from_slice(&x.data()[src..src + cin]);
        }
        let fc = run_dir(&xseq, steps, cin, wf, false);
        let bc = run_dir(&xseq, steps, cin, wb, true);
        for t in 0..steps {
            let dst = (t * n + item) * hd;
            for j in 0..hd {
                out.data_mut()[dst + j] = fc.h[t * hd + j] + bc.h[t * hd + j];
            }
        }
        dirs.push([fc, bc]);
    }
    Ok((out, BiLstmCache { dirs }))
}

#[allow(clippy::too_many_arguments)]
fn backward_dir<T: Scalar>(
    xseq: &[T],
    steps: usize,
    cin: usize,
    (w_ih, w_hh, _b): LstmWeights<T>,
    cache: &DirCache<T>,
    grad_h: &[T], // [T, H]
    reverse: bool,
    gx: &mut [T], // [T, C], accumulated
    grads: &mut LstmGrads<T>,
) {
    let hd = w_hh.shape()[1];
    let mut dh_next = vec![T::zero(); hd];
    let mut dc_next = vec![T::zero(); hd];
    let mut dz = vec![T::zero(); 4 * hd];
    let zero = vec![T::zero(); hd];
    for step in (0..steps).rev() {
        let t = if reverse { steps - 1 - step } else { step };
        // state feeding this step: the step processed just before it
        let (h_prev, c_prev) = if step == 0 {
            (&zero[..], &zero[..])
        } else {
            let tp = if reverse { steps - step } else { step - 1 };
            (
                &cache.h[tp * hd..(tp + 1) * hd],
                &cache.c[tp * hd..(tp + 1) * hd],
            )
        };
        let lo = t * hd;
        for j in 0..hd {
            let dh = grad_h[lo + j] + dh_next[j];
            let (iv, fv, gv, ov) = (
                cache.i[lo + j],
                cache.f[lo + j],
                cache.g[lo + j],
                cache.o[lo + j],
            );
            let tcv = cache.tc[lo + j];
            let dov = dh * tcv;
            let dc = dh * ov * (T::one() - tcv * tcv) + dc_next[j];
            let div = dc * gv;
            let dgv = dc * iv;
            let dfv = dc * c_prev[j];
            dc_next[j] = dc * fv;
            dz[j] = div * iv * (T::one() - iv);
            dz[hd + j] = dfv * fv * (T::one() - fv);
            dz[2 * hd + j] = dgv * (T::one() - gv * gv);
            dz[3 * hd + j] = dov * ov * (T::one() - ov);
        }
        for (g, &d) in grads.b.data_mut().iter_mut().zip(&dz) {
            *g += d;
        }
        outer_acc(grads.w_ih.data_mut(), &dz, &xseq[t * cin..(t + 1) * cin]);
        outer_acc(grads.w_hh.data_mut(), &dz, h_prev);
        gemv_t_acc(&mut gx[t * cin..(t + 1) * cin], w_ih.data(), &dz);
        for d in &mut dh_next {
            *d = T::zero();
        }
        gemv_t_acc(&mut dh_next, w_hh.data(), &dz);
    }
}

pub fn bilstm_backward<T: Scalar>(
    x: &Tensor<T>,
    wf: LstmWeights<T>,
    wb: LstmWeights<T>,
    cache: &BiLstmCache<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, LstmGrads<T>, LstmGrads<T>)> {
    let (steps, n, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let hd = wf.1.shape()[1];
    if grad_out.shape() != [steps, n, hd] {
        return Err(FotsError::Invalid("bilstm_backward grad shape mismatch".into()));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gf = LstmGrads {
        w_ih: Tensor::zeros(wf.0.shape()),
        w_hh: Tensor::zeros(wf.1.shape()),
        b: Tensor::zeros(&[4 * hd]),
    };
    let mut gb = LstmGrads {
        w_ih: Tensor::zeros(wb.0.shape()),
        w_hh: Tensor::zeros(wb.1.shape()),
        b: Tensor::zeros(&[4 * hd]),
    };
    let mut xseq = vec![T::zero(); steps * cin];
    let mut gh = vec![T::zero(); steps * hd];
    let mut gxseq = vec![T::zero(); steps * cin];
    for item in 0..n {
        for t in 0..steps {
            let src = (t * n + item) * cin;
            xseq[t * cin..(t + 1) * cin].copy_from_slice(&x.data()[src..src + cin]);
            let gsrc = (t * n + item) * hd;
            gh[t * hd..(t + 1) * hd].copy_from_slice(&grad_out.data()[gsrc..gsrc + hd]);
        }
        gxseq.iter_mut().for_each(|v| *v = T::zero());
        // summed output: both directions receive the same output gradient
        backward_dir(&xseq, steps, cin, wf, &cache.dirs[item][0], &gh, false, &mut gxseq, &mut gf);
        backward_dir(&xseq, steps, cin, wb, &cache.dirs[item][1], &gh, true, &mut gxseq, &mut gb);
        for t in 0..steps {
            let dst = (t * n + item) * cin;
            for j in 0..cin {
                gx.data_mut()[dst + j] += gxseq[t * cin + j];
            }
        }
    }
    Ok((gx, gf, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_weights(hd: usize, cin: usize) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        (
            Tensor::zeros(&[4 * hd, cin]),
            Tensor::zeros(&[4 * hd, hd]),
            Tensor::zeros(&[4 * hd]),
        )
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let x = Tensor::from_vec(&[3, 1, 2], vec![1.0f64, -1.0, 2.0, 0.5, 0.0, 3.0]);
        let (wi, wh, b) = zero_weights(4, 2);
        let (y, _) = bilstm_forward(&x, (&wi, &wh, &b), (&wi, &wh, &b)).unwrap();
        // gates: i = f = o = 0.5, g = 0 -> c = 0 -> h = 0
        for &v in y.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn empty_sequence_is_rejected() {
        let x: Tensor<f64> = Tensor::zeros(&[0, 1, 2]);
        let (wi, wh, b) = zero_weights(4, 2);
        assert!(bilstm_forward(&x, (&wi, &wh, &b), (&wi, &wh, &b)).is_err());
    }

    #[test]
    fn swapping_directions_on_reversed_input_matches() {
        let mut wi_f = Tensor::zeros(&[8, 1]);
        wi_f.data_mut().copy_from_slice(&[1.0, 0.7, 0.3, -0.2, 0.5, -0.5, 0.8, 0.1]);
        let mut wh_f = Tensor::zeros(&[8, 2]);
        for (k, v) in wh_f.data_mut().iter_mut().enumerate() {
            *v = 0.05 * (k as f64) - 0.3;
        }
        let b_f = Tensor::from_vec(&[8], vec![0.1f64, 0.2, 0.3, 0.4, -0.1, -0.2, -0.3, -0.4]);
        let mut wi_b = wi_f.clone();
        wi_b.data_mut()[0] = -0.9;
        let wh_b = wh_f.map(|v| -v);
        let b_b = b_f.map(|v| v * 0.5);

        let x = Tensor::from_vec(&[4, 1, 1], vec![1.0f64, -0.5, 2.0, 0.25]);
        let xr = Tensor::from_vec(&[4, 1, 1], vec![0.25f64, 2.0, -0.5, 1.0]);
        let (y, _) =
            bilstm_forward(&x, (&wi_f, &wh_f, &b_f), (&wi_b, &wh_b, &b_b)).unwrap();
        let (yr, _) =
            bilstm_forward(&xr, (&wi_b, &wh_b, &b_b), (&wi_f, &wh_f, &b_f)).unwrap();
        // time-reversing the input and swapping direction weights reverses
        // the summed output sequence
        for t in 0..4 {
            for j in 0..2 {
                assert!((y.data()[t * 2 + j] - yr.data()[(3 - t) * 2 + j]).abs() < 1e-12);
            }
        }
    }
}
