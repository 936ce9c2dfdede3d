//! Layers built from tape operations.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::array::NdArray;
use crate::autodiff::params::{ModelParams, ParamId};
use crate::autodiff::tape::{Tape, Var};
use crate::error::Result;

/// Registers a `rows x cols` weight with the usual `±1/√fan_in` uniform init.
fn init<R: Rng + ?Sized>(
    params: &mut ModelParams,
    name: String,
    rows: usize,
    cols: usize,
    fan_in: usize,
    rng: &mut R,
) -> Result<ParamId> {
    params.register_uniform(name, rows, cols, 1.0 / (fan_in.max(1) as f64).sqrt(), rng)
}

/// `W x + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = init(params, format!("{name}.w"), output, input, input, rng)?;
        let b = init(params, format!("{name}.b"), output, 1, input, rng)?;
        Ok(Linear { w, b, input, output })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let wx = tape.matmul(w, x)?;
        tape.add(wx, b)
    }
}

/// Gated recurrent unit with reset, update and candidate blocks stacked in
/// that order.
#[derive(Clone, Debug)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GruCell {
            w_ih: init(params, format!("{name}.w_ih"), 3 * hidden, input, hidden, rng)?,
            w_hh: init(params, format!("{name}.w_hh"), 3 * hidden, hidden, hidden, rng)?,
            b_ih: init(params, format!("{name}.b_ih"), 3 * hidden, 1, hidden, rng)?,
            b_hh: init(params, format!("{name}.b_hh"), 3 * hidden, 1, hidden, rng)?,
            input,
            hidden,
        })
    }

    /// r = σ(W_ir x + W_hr h), u = σ(W_iu x + W_hu h),
    /// c = tanh(W_ic x + r ⊙ (W_hc h)), h' = (1 − u) ⊙ c + u ⊙ h.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, h: Var) -> Result<Var> {
        let hs = self.hidden;
        let (w_ih, b_ih) = (tape.param(self.w_ih), tape.param(self.b_ih));
        let (w_hh, b_hh) = (tape.param(self.w_hh), tape.param(self.b_hh));
        let gi = tape.matmul(w_ih, x)?;
        let gi = tape.add(gi, b_ih)?;
        let gh = tape.matmul(w_hh, h)?;
        let gh = tape.add(gh, b_hh)?;
        let gates = {
            let gi_ru = tape.slice(gi, 0, 2 * hs)?;
            let gh_ru = tape.slice(gh, 0, 2 * hs)?;
            let s = tape.add(gi_ru, gh_ru)?;
            tape.sigmoid(s)?
        };
        let r = tape.slice(gates, 0, hs)?;
        let u = tape.slice(gates, hs, hs)?;
        let gi_c = tape.slice(gi, 2 * hs, hs)?;
        let gh_c = tape.slice(gh, 2 * hs, hs)?;
        let rc = tape.mul(r, gh_c)?;
        let pre = tape.add(gi_c, rc)?;
        let c = tape.tanh(pre)?;
        // h' = c + u ⊙ (h − c)
        let diff = tape.sub(h, c)?;
        let ud = tape.mul(u, diff)?;
        tape.add(c, ud)
    }
}

/// Σ_j σ(g(h_j)) ⊙ m(h_j) with one-layer gate and map networks.
#[derive(Clone, Debug)]
pub struct GatedSum {
    pub gate: Linear,
    pub map: Linear,
}

impl GatedSum {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(GatedSum {
            gate: Linear::new(params, &format!("{name}.gate"), input, output, rng)?,
            map: Linear::new(params, &format!("{name}.map"), input, output, rng)?,
        })
    }

    /// Aggregates `inputs` in the given order; an empty set gives zeros.
    pub fn forward(&self, tape: &mut Tape<'_>, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Ok(tape.zeros(self.map.output));
        }
        let mut terms = Vec::with_capacity(inputs.len());
        for &h in inputs {
            let g = self.gate.forward(tape, h)?;
            let g = tape.sigmoid(g)?;
            let m = self.map.forward(tape, h)?;
            terms.push(tape.mul(g, m)?);
        }
        if terms.len() == 1 {
            Ok(terms[0])
        } else {
            tape.add_n(&terms)
        }
    }
}

/// One hidden layer with tanh, linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Mlp {
            hidden: Linear::new(params, &format!("{name}.0"), input, hidden, rng)?,
            out: Linear::new(params, &format!("{name}.1"), hidden, output, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, x)?;
        let h = tape.tanh(h)?;
        self.out.forward(tape, h)
    }
}

/// KL(N(μq, e^lvq) ‖ N(μp, e^lvp)) summed over dimensions.
pub fn gaussian_kl(tape: &mut Tape<'_>, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var) -> Result<Var> {
    let d = tape.sub(mu_q, mu_p)?;
    let d2 = tape.mul(d, d)?;
    let var_q = tape.exp(lv_q)?;
    let num = tape.add(var_q, d2)?;
    let neg_lv_p = tape.scale(lv_p, -1.0)?;
    let inv_var_p = tape.exp(neg_lv_p)?;
    let ratio = tape.mul(num, inv_var_p)?;
    let lv_diff = tape.sub(lv_p, lv_q)?;
    let t = tape.add(lv_diff, ratio)?;
    let t = tape.affine(t, 0.5, -0.5)?;
    tape.sum(t)
}

/// KL to the standard normal.
pub fn standard_normal_kl(tape: &mut Tape<'_>, mu: Var, logvar: Var) -> Result<Var> {
    let d = tape.value(mu).rows();
    let zero_mu = tape.zeros(d);
    let zero_lv = tape.zeros(d);
    gaussian_kl(tape, mu, logvar, zero_mu, zero_lv)
}

/// Plain-value diagonal Gaussian KL.
pub fn gaussian_kl_value(mu_q: &[f64], lv_q: &[f64], mu_p: &[f64], lv_p: &[f64]) -> f64 {
    (0..mu_q.len())
        .map(|i| {
            let d = mu_q[i] - mu_p[i];
            0.5 * (lv_p[i] - lv_q[i] + (lv_q[i].exp() + d * d) / lv_p[i].exp() - 1.0)
        })
        .sum()
}

/// Standard normal noise vector.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// μ + exp(logvar / 2) ⊙ ε with ε drawn from `rng`.
pub fn reparameterize<R: Rng + ?Sized>(tape: &mut Tape<'_>, mu: Var, logvar: Var, rng: &mut R) -> Result<Var> {
    let eps = standard_normal(rng, tape.value(mu).rows());
    let eps = tape.constant(NdArray::vector(eps));
    let half = tape.scale(logvar, 0.5)?;
    let std = tape.exp(half)?;
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn kl_examples() {
        let mut t = Tape::new();
        let z = t.vector(vec![0.0]);
        let one = t.vector(vec![1.0]);
        let k0 = gaussian_kl(&mut t, z, z, z, z).unwrap();
        assert_eq!(t.scalar(k0), 0.0);
        let k1 = gaussian_kl(&mut t, one, z, z, z).unwrap();
        assert!((t.scalar(k1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn kl_matches_value_form_and_is_non_negative() {
        let mut rng = stream_rng(4, 0);
        for _ in 0..20 {
            let v: Vec<Vec<f64>> = (0..4).map(|_| standard_normal(&mut rng, 3)).collect();
            let mut t = Tape::new();
            let vars: Vec<Var> = v.iter().map(|x| t.vector(x.clone())).collect();
            let k = gaussian_kl(&mut t, vars[0], vars[1], vars[2], vars[3]).unwrap();
            let expected = gaussian_kl_value(&v[0], &v[1], &v[2], &v[3]);
            assert!((t.scalar(k) - expected).abs() < 1e-12);
            assert!(expected >= 0.0);
        }
    }

    #[test]
    fn reparameterize_with_zero_logvar_adds_unit_noise() {
        let mut t = Tape::new();
        let mu = t.vector(vec![1.0, 2.0]);
        let lv = t.vector(vec![0.0, 0.0]);
        let z = reparameterize(&mut t, mu, lv, &mut stream_rng(9, 1)).unwrap();
        let eps = standard_normal(&mut stream_rng(9, 1), 2);
        assert_eq!(t.value(z).data(), &[1.0 + eps[0], 2.0 + eps[1]]);
    }

    #[test]
    fn gated_sum_of_nothing_is_zero() {
        let mut p = ModelParams::new();
        let gs = GatedSum::new(&mut p, "g", 3, 4, &mut stream_rng(0, 0)).unwrap();
        let mut t = Tape::with_params(&p);
        let out = gs.forward(&mut t, &[]).unwrap();
        assert_eq!(t.value(out).data(), &[0.0; 4]);
    }
}
