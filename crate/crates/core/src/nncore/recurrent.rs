//! LSTM and GRU cells run over one direction of a sequence.
//!
//! Gate layout in the stacked weight matrices: LSTM rows are
//! `[input, forget, cell, output]`, GRU rows are `[update, reset, candidate]`.
//! Each direction consumes pre-masked inputs in processing order.

use super::ops::{affine, axpy, matvec_add, matvec_backward, sigmoid};
use super::Real;

/// Borrowed weights of one recurrent direction.
pub(crate) struct CellWeights<'a, F> {
    /// `gates*units x input_width`
    pub w: &'a [F],
    /// `gates*units x units`
    pub u: &'a [F],
    pub b: &'a [F],
    pub units: usize,
}

/// Gradient buffers matching [`CellWeights`].
pub(crate) struct CellGrads<'a, F> {
    pub w: &'a mut [F],
    pub u: &'a mut [F],
    pub b: &'a mut [F],
}

#[derive(Clone, Debug)]
pub(crate) struct LstmStep<F> {
    x: Vec<F>,
    /// Activated gates, `4 * units`.
    gates: Vec<F>,
    c: Vec<F>,
    tanh_c: Vec<F>,
    pub h: Vec<F>,
}

pub(crate) fn lstm_forward<F: Real>(p: &CellWeights<F>, inputs: Vec<Vec<F>>) -> Vec<LstmStep<F>> {
    let u = p.units;
    let zeros = vec![F::zero(); u];
    let mut steps: Vec<LstmStep<F>> = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (h_prev, c_prev) = match steps.last() {
            Some(s) => (s.h.as_slice(), s.c.as_slice()),
            None => (zeros.as_slice(), zeros.as_slice()),
        };
        let mut z = vec![F::zero(); 4 * u];
        affine(p.w, p.b, &x, &mut z);
        matvec_add(p.u, h_prev, &mut z);
        for (k, g) in z.iter_mut().enumerate() {
            *g = if (2 * u..3 * u).contains(&k) {
                g.tanh()
            } else {
                sigmoid(*g)
            };
        }
        let mut c = vec![F::zero(); u];
        let mut tanh_c = vec![F::zero(); u];
        let mut h = vec![F::zero(); u];
        for j in 0..u {
            c[j] = z[u + j] * c_prev[j] + z[j] * z[2 * u + j];
            tanh_c[j] = c[j].tanh();
            h[j] = z[3 * u + j] * tanh_c[j];
        }
        steps.push(LstmStep {
            x,
            gates: z,
            c,
            tanh_c,
            h,
        });
    }
    steps
}

/// Backpropagates through time. `dh_out[k]` is the gradient arriving at the
/// output of processing step `k`. Returns input gradients per step.
pub(crate) fn lstm_backward<F: Real>(
    p: &CellWeights<F>,
    steps: &[LstmStep<F>],
    dh_out: &[Option<&[F]>],
    g: CellGrads<F>,
) -> Vec<Vec<F>> {
    let u = p.units;
    let zeros = vec![F::zero(); u];
    let mut dh_next = vec![F::zero(); u];
    let mut dc_next = vec![F::zero(); u];
    let mut dx_all = vec![Vec::new(); steps.len()];
    for k in (0..steps.len()).rev() {
        let s = &steps[k];
        let (h_prev, c_prev) = if k > 0 {
            (steps[k - 1].h.as_slice(), steps[k - 1].c.as_slice())
        } else {
            (zeros.as_slice(), zeros.as_slice())
        };
        let mut dh = std::mem::replace(&mut dh_next, vec![F::zero(); u]);
        if let Some(d) = dh_out[k] {
            axpy(&mut dh, F::one(), d);
        }
        let mut dz = vec![F::zero(); 4 * u];
        for j in 0..u {
            let (i, f, gg, o) = (s.gates[j], s.gates[u + j], s.gates[2 * u + j], s.gates[3 * u + j]);
            let tc = s.tanh_c[j];
            let dc = dc_next[j] + dh[j] * o * (F::one() - tc * tc);
            dz[j] = dc * gg * i * (F::one() - i);
            dz[u + j] = dc * c_prev[j] * f * (F::one() - f);
            dz[2 * u + j] = dc * i * (F::one() - gg * gg);
            dz[3 * u + j] = dh[j] * tc * o * (F::one() - o);
            dc_next[j] = dc * f;
        }
        axpy(g.b, F::one(), &dz);
        let mut dx = vec![F::zero(); s.x.len()];
        matvec_backward(p.w, &s.x, &dz, g.w, Some(&mut dx));
        matvec_backward(p.u, h_prev, &dz, g.u, Some(&mut dh_next));
        dx_all[k] = dx;
    }
    dx_all
}

#[derive(Clone, Debug)]
pub(crate) struct GruStep<F> {
    x: Vec<F>,
    z: Vec<F>,
    r: Vec<F>,
    candidate: Vec<F>,
    /// `r ⊙ h_prev`
    rh: Vec<F>,
    pub h: Vec<F>,
}

pub(crate) fn gru_forward<F: Real>(p: &CellWeights<F>, inputs: Vec<Vec<F>>) -> Vec<GruStep<F>> {
    let u = p.units;
    let zeros = vec![F::zero(); u];
    let (u_zr, u_h) = p.u.split_at(2 * u * u);
    let mut steps: Vec<GruStep<F>> = Vec::with_capacity(inputs.len());
    for x in inputs {
        let h_prev = steps.last().map_or(zeros.as_slice(), |s| s.h.as_slice());
        let mut a = vec![F::zero(); 3 * u];
        affine(p.w, p.b, &x, &mut a);
        matvec_add(u_zr, h_prev, &mut a[..2 * u]);
        let z: Vec<F> = a[..u].iter().map(|&v| sigmoid(v)).collect();
        let r: Vec<F> = a[u..2 * u].iter().map(|&v| sigmoid(v)).collect();
        let rh: Vec<F> = r.iter().zip(h_prev).map(|(&r, &h)| r * h).collect();
        matvec_add(u_h, &rh, &mut a[2 * u..]);
        let candidate: Vec<F> = a[2 * u..].iter().map(|v| v.tanh()).collect();
        let h = (0..u)
            .map(|j| z[j] * h_prev[j] + (F::one() - z[j]) * candidate[j])
            .collect();
        steps.push(GruStep {
            x,
            z,
            r,
            candidate,
            rh,
            h,
        });
    }
    steps
}

pub(crate) fn gru_backward<F: Real>(
    p: &CellWeights<F>,
    steps: &[GruStep<F>],
    dh_out: &[Option<&[F]>],
    g: CellGrads<F>,
) -> Vec<Vec<F>> {
    let u = p.units;
    let zeros = vec![F::zero(); u];
    let (u_zr, u_h) = p.u.split_at(2 * u * u);
    let (du_zr, du_h) = g.u.split_at_mut(2 * u * u);
    let mut dh_next = vec![F::zero(); u];
    let mut dx_all = vec![Vec::new(); steps.len()];
    for k in (0..steps.len()).rev() {
        let s = &steps[k];
        let h_prev = if k > 0 { steps[k - 1].h.as_slice() } else { zeros.as_slice() };
        let mut dh = std::mem::replace(&mut dh_next, vec![F::zero(); u]);
        if let Some(d) = dh_out[k] {
            axpy(&mut dh, F::one(), d);
        }
        let mut da = vec![F::zero(); 3 * u];
        for j in 0..u {
            let dz = dh[j] * (h_prev[j] - s.candidate[j]);
            let dcand = dh[j] * (F::one() - s.z[j]);
            dh_next[j] = dh[j] * s.z[j];
            da[j] = dz * s.z[j] * (F::one() - s.z[j]);
            da[2 * u + j] = dcand * (F::one() - s.candidate[j] * s.candidate[j]);
        }
        let mut d_rh = vec![F::zero(); u];
        matvec_backward(u_h, &s.rh, &da[2 * u..], du_h, Some(&mut d_rh));
        for j in 0..u {
            let dr = d_rh[j] * h_prev[j];
            dh_next[j] += d_rh[j] * s.r[j];
            da[u + j] = dr * s.r[j] * (F::one() - s.r[j]);
        }
        matvec_backward(u_zr, h_prev, &da[..2 * u], du_zr, Some(&mut dh_next));
        axpy(g.b, F::one(), &da);
        let mut dx = vec![F::zero(); s.x.len()];
        matvec_backward(p.w, &s.x, &da, g.w, Some(&mut dx));
        dx_all[k] = dx;
    }
    dx_all
}
