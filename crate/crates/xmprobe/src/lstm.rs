//! The recurrent cell behind the probe: a standard LSTM with input, forget,
//! and output gates plus a tanh candidate update, implemented with explicit
//! analytic gradients.
//!
//! Gate blocks are stored stacked in `[input | forget | candidate | output]`
//! order along the first axis of the weight matrices, so `w_ih` is
//! `4H x input_dim`, `w_hh` is `4H x H`, and `bias` is `1 x 4H`.

use crate::error::{Error, Result};
use crate::tensor::{ParamBlock, Scalar, Tensor2D};
use rand::Rng;

/// LSTM cell parameters for one layer.
#[derive(Debug, Clone)]
pub struct LstmCell<F> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_ih: ParamBlock<F>,
    pub w_hh: ParamBlock<F>,
    pub bias: ParamBlock<F>,
}

/// Everything the backward pass needs from one forward step.
#[derive(Debug, Clone)]
pub struct StepCache<F> {
    pub x: Vec<F>,
    pub h_prev: Vec<F>,
    pub c_prev: Vec<F>,
    pub gate_in: Vec<F>,
    pub gate_forget: Vec<F>,
    pub gate_cand: Vec<F>,
    pub gate_out: Vec<F>,
    pub c_next: Vec<F>,
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

impl<F: Scalar> LstmCell<F> {
    /// Seeded initialization: weights uniform in `(-1/sqrt(H), 1/sqrt(H))`,
    /// biases zero except the forget-gate block, which starts at 1.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let w_ih = Tensor2D::uniform(4 * hidden_dim, input_dim, -bound, bound, rng);
        let w_hh = Tensor2D::uniform(4 * hidden_dim, hidden_dim, -bound, bound, rng);
        let mut bias = Tensor2D::zeros(1, 4 * hidden_dim);
        for i in hidden_dim..2 * hidden_dim {
            bias.set(0, i, F::one());
        }
        LstmCell {
            input_dim,
            hidden_dim,
            w_ih: ParamBlock::new("lstm.w_ih", w_ih),
            w_hh: ParamBlock::new("lstm.w_hh", w_hh),
            bias: ParamBlock::new("lstm.bias", bias),
        }
    }

    /// All-zero parameters; useful for degenerate-case tests.
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmCell {
            input_dim,
            hidden_dim,
            w_ih: ParamBlock::new("lstm.w_ih", Tensor2D::zeros(4 * hidden_dim, input_dim)),
            w_hh: ParamBlock::new("lstm.w_hh", Tensor2D::zeros(4 * hidden_dim, hidden_dim)),
            bias: ParamBlock::new("lstm.bias", Tensor2D::zeros(1, 4 * hidden_dim)),
        }
    }

    fn check_step_shapes(&self, x: &[F], h: &[F], c: &[F]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape(
                "recurrent step: input x",
                format!("{}", self.input_dim),
                format!("{}", x.len()),
            ));
        }
        if h.len() != self.hidden_dim {
            return Err(Error::shape(
                "recurrent step: hidden state h",
                format!("{}", self.hidden_dim),
                format!("{}", h.len()),
            ));
        }
        if c.len() != self.hidden_dim {
            return Err(Error::shape(
                "recurrent step: cell state c",
                format!("{}", self.hidden_dim),
                format!("{}", c.len()),
            ));
        }
        Ok(())
    }

    /// One recurrence step. Purely functional: returns `(h_next, c_next)`
    /// without touching the inputs.
    pub fn step(&self, x: &[F], h: &[F], c: &[F]) -> Result<(Vec<F>, Vec<F>)> {
        let (h_next, cache) = self.step_cached(x, h, c)?;
        Ok((h_next, cache.c_next))
    }

    /// One step, returning the activations the backward pass will need.
    pub fn step_cached(&self, x: &[F], h: &[F], c: &[F]) -> Result<(Vec<F>, StepCache<F>)> {
        self.check_step_shapes(x, h, c)?;
        let hd = self.hidden_dim;

        let mut pre = self.w_ih.value.matvec(x);
        let rec = self.w_hh.value.matvec(h);
        for (p, (r, b)) in pre.iter_mut().zip(rec.iter().zip(self.bias.value.row(0))) {
            *p = *p + *r + *b;
        }

        let gate_in: Vec<F> = pre[..hd].iter().map(|&a| sigmoid(a)).collect();
        let gate_forget: Vec<F> = pre[hd..2 * hd].iter().map(|&a| sigmoid(a)).collect();
        let gate_cand: Vec<F> = pre[2 * hd..3 * hd].iter().map(|&a| a.tanh()).collect();
        let gate_out: Vec<F> = pre[3 * hd..].iter().map(|&a| sigmoid(a)).collect();

        let mut c_next = vec![F::zero(); hd];
        let mut h_next = vec![F::zero(); hd];
        for j in 0..hd {
            c_next[j] = gate_forget[j] * c[j] + gate_in[j] * gate_cand[j];
            h_next[j] = gate_out[j] * c_next[j].tanh();
        }

        let cache = StepCache {
            x: x.to_vec(),
            h_prev: h.to_vec(),
            c_prev: c.to_vec(),
            gate_in,
            gate_forget,
            gate_cand,
            gate_out,
            c_next,
        };
        Ok((h_next, cache))
    }

    /// Backward through one step. `dh` and `dc` are the gradients flowing into
    /// `h_next` and `c_next`; parameter gradients are accumulated into the
    /// blocks and the gradients w.r.t. `h_prev` and `c_prev` are returned.
    ///
    /// Gradients w.r.t. the input `x` are not computed: the upstream features
    /// are frozen data.
    pub fn backward_step(&mut self, cache: &StepCache<F>, dh: &[F], dc: &[F]) -> (Vec<F>, Vec<F>) {
        let hd = self.hidden_dim;
        debug_assert_eq!(dh.len(), hd);
        debug_assert_eq!(dc.len(), hd);

        let one = F::one();
        let mut d_pre = vec![F::zero(); 4 * hd];
        let mut dc_prev = vec![F::zero(); hd];

        for j in 0..hd {
            let i = cache.gate_in[j];
            let f = cache.gate_forget[j];
            let g = cache.gate_cand[j];
            let o = cache.gate_out[j];
            let tanh_c = cache.c_next[j].tanh();

            let d_o = dh[j] * tanh_c;
            let dc_total = dc[j] + dh[j] * o * (one - tanh_c * tanh_c);
            let d_f = dc_total * cache.c_prev[j];
            let d_i = dc_total * g;
            let d_g = dc_total * i;

            d_pre[j] = d_i * i * (one - i);
            d_pre[hd + j] = d_f * f * (one - f);
            d_pre[2 * hd + j] = d_g * (one - g * g);
            d_pre[3 * hd + j] = d_o * o * (one - o);

            dc_prev[j] = dc_total * f;
        }

        self.w_ih.grad.add_outer(&d_pre, &cache.x);
        self.w_hh.grad.add_outer(&d_pre, &cache.h_prev);
        for (b, d) in self.bias.grad.row_mut(0).iter_mut().zip(&d_pre) {
            *b = *b + *d;
        }

        let dh_prev = self.w_hh.value.matvec_t(&d_pre);
        (dh_prev, dc_prev)
    }

    pub fn cast<T: Scalar>(&self) -> LstmCell<T> {
        LstmCell {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_ih: self.w_ih.cast(),
            w_hh: self.w_hh.cast(),
            bias: self.bias.cast(),
        }
    }
}
