//! Numerical-integration oracles that share no code with the closed forms
//! they check.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use mtnp_core::context::SummaryRole;
use mtnp_core::data::{Set, TaskData};
use mtnp_core::model::{ForwardConfig, Model, Nets};
use mtnp_core::{Tape, Tensor};

use crate::RunError;

/// Composite Gauss–Legendre rule: `panels` equal panels of `degree` nodes.
#[derive(Debug, Clone)]
pub struct Composite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Composite {
    pub fn new(degree: usize, panels: usize) -> Self {
        let rule = GaussLegendre::new(NonZeroUsize::new(degree).expect("degree >= 1"));
        let (mut nodes, mut weights) = (Vec::new(), Vec::new());
        for (x, w) in rule.iter() {
            nodes.push(*x);
            weights.push(*w);
        }
        let mut cn = Vec::with_capacity(degree * panels);
        let mut cw = Vec::with_capacity(degree * panels);
        let h = 2.0 / panels as f64;
        for p in 0..panels {
            let lo = -1.0 + p as f64 * h;
            for (x, w) in nodes.iter().zip(&weights) {
                cn.push(lo + 0.5 * h * (x + 1.0));
                cw.push(0.5 * h * w);
            }
        }
        Self { nodes: cn, weights: cw }
    }

    /// Nodes and weights mapped to `[lo, hi]`.
    pub fn on(&self, lo: f64, hi: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (lo + hi);
        let r = 0.5 * (hi - lo);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (c + r * x, r * w))
    }

    pub fn integrate(&self, lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.on(lo, hi).map(|(x, w)| w * f(x)).sum()
    }
}

pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// `∫ q ln(q / p)` for one-dimensional Gaussians by quadrature over
/// `mean_q ± 20 sd_q`.
pub fn kl_1d_quadrature(mean_q: f64, var_q: f64, mean_p: f64, var_p: f64) -> f64 {
    let rule = Composite::new(20, 40);
    let s = var_q.sqrt();
    rule.integrate(mean_q - 20.0 * s, mean_q + 20.0 * s, |x| {
        let lq = normal_log_pdf(x, mean_q, var_q);
        lq.exp() * (lq - normal_log_pdf(x, mean_p, var_p))
    })
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Per-task quadrature values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboOracle {
    pub elbo: f64,
    pub log_marginal: f64,
}

/// Diagonal Gaussian as `(means, variances)` from a model output.
fn gauss(g: &mtnp_core::DiagGaussian) -> (Vec<f64>, Vec<f64>) {
    (
        g.mean.to_f64_vec(),
        g.log_var.data().iter().map(|l| l.exp()).collect(),
    )
}

/// ELBO and log marginal likelihood of each task's target labels under a
/// frozen hierarchical model with a scalar task summary and a
/// two-dimensional function latent (regression, `d = 2`), by nested
/// Gauss–Legendre quadrature of log-densities.
///
/// `ELBO = ∫∫ q(α) q(ψ) [ln p(Y|ψ) + ln p(ψ|α) + ln p(α) − ln q(ψ) − ln q(α)]`
/// and `ln p(Y) = ln ∫∫ p(α) p(ψ|α) p(Y|ψ)`, with every Gaussian density
/// written out pointwise.
pub fn hierarchy_elbo_quadrature(
    model: &Model<f64>,
    episode: &[TaskData<f64>],
    cfg: &ForwardConfig,
) -> Result<Vec<ElboOracle>, RunError> {
    let Nets::Mtnp(nets) = &model.nets else {
        return Err(RunError::Config("quadrature oracle needs the mtnp variant".into()));
    };
    if model.arch.alpha_dim != 1 || model.arch.feature_dim != 2 || model.kind.is_classification() {
        return Err(RunError::Config(
            "quadrature oracle needs alpha_dim = 1, feature_dim = 2 and real labels".into(),
        ));
    }
    let tape = Tape::new();
    let p = model.store.constants();
    let (ctx, m) = nets.global_context(model, &tape, &p, episode, cfg)?;
    let h = &nets.hierarchy;
    let s2 = cfg.sigma2;
    let alpha_rule = Composite::new(16, 16);
    let elbo_psi_rule = Composite::new(16, 6);
    let ml_psi_rule = Composite::new(16, 24);

    let mut out = Vec::new();
    for (l, task) in episode.iter().enumerate() {
        let tgt = nets.features.apply(&tape, &p, &task.target_x)?;
        let xs: Vec<[f64; 2]> = (0..tgt.rows()).map(|i| [tgt.at(i, 0), tgt.at(i, 1)]).collect();
        let ys = task.target_y.to_f64_vec();
        let log_lik = |psi: [f64; 2]| -> f64 {
            xs.iter()
                .zip(&ys)
                .map(|(x, y)| normal_log_pdf(*y, x[0] * psi[0] + x[1] * psi[1], s2))
                .sum()
        };
        let (qa_m, qa_v) = gauss(&h.encode_summary(&tape, &p, &tgt, &task.target_y, SummaryRole::Posterior, None)?);
        let (pa_m, pa_v) = gauss(&h.encode_summary(&tape, &p, &ctx[l], &task.context_y, SummaryRole::Prior, None)?);
        let (qf_m, qf_v) = gauss(&h.encode_function_posterior(
            &tape,
            &p,
            &tgt,
            &task.target_y,
            &task.rows_by_class(Set::Target),
            None,
        )?);
        let prior_psi = |a: f64| -> Result<(Vec<f64>, Vec<f64>), RunError> {
            let adapted = nets.adapted(model, &tape, &p, &Tensor::from_f64(vec![1, 1], &[a]).map_err(mtnp_core::Error::from)?, &m, l)?;
            Ok(gauss(&h.function_prior(&tape, &p, &adapted)?))
        };
        let box_of = |mean: f64, var: f64| (mean - 12.0 * var.sqrt(), mean + 12.0 * var.sqrt());

        // ELBO: the ψ grid under q(ψ) is shared by every α node.
        let (a0, a1) = box_of(qf_m[0], qf_v[0]);
        let (b0, b1) = box_of(qf_m[1], qf_v[1]);
        let mut grid = Vec::new();
        for (u, wu) in elbo_psi_rule.on(a0, a1) {
            for (v, wv) in elbo_psi_rule.on(b0, b1) {
                let lq = normal_log_pdf(u, qf_m[0], qf_v[0]) + normal_log_pdf(v, qf_m[1], qf_v[1]);
                grid.push(([u, v], wu * wv * lq.exp(), lq, log_lik([u, v])));
            }
        }
        let (lo, hi) = box_of(qa_m[0], qa_v[0]);
        let mut elbo = 0.0;
        for (a, wa) in alpha_rule.on(lo, hi) {
            let (pm, pv) = prior_psi(a)?;
            let inner: f64 = grid
                .iter()
                .map(|(psi, w, lq, ll)| {
                    let lp = normal_log_pdf(psi[0], pm[0], pv[0]) + normal_log_pdf(psi[1], pm[1], pv[1]);
                    w * (ll + lp - lq)
                })
                .sum();
            let lqa = normal_log_pdf(a, qa_m[0], qa_v[0]);
            elbo += wa * lqa.exp() * (inner + normal_log_pdf(a, pa_m[0], pa_v[0]) - lqa);
        }

        // Marginal likelihood: ψ grid follows p(ψ|α) at each α node.
        let (lo, hi) = box_of(pa_m[0], pa_v[0]);
        let mut outer = Vec::new();
        for (a, wa) in alpha_rule.on(lo, hi) {
            let (pm, pv) = prior_psi(a)?;
            let (a0, a1) = box_of(pm[0], pv[0]);
            let (b0, b1) = box_of(pm[1], pv[1]);
            let mut terms = Vec::new();
            for (u, wu) in ml_psi_rule.on(a0, a1) {
                for (v, wv) in ml_psi_rule.on(b0, b1) {
                    let lp = normal_log_pdf(u, pm[0], pv[0]) + normal_log_pdf(v, pm[1], pv[1]);
                    terms.push((wu * wv).ln() + lp + log_lik([u, v]));
                }
            }
            outer.push(wa.ln() + normal_log_pdf(a, pa_m[0], pa_v[0]) + log_sum_exp(&terms));
        }
        out.push(ElboOracle {
            elbo,
            log_marginal: log_sum_exp(&outer),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_rule_integrates_gaussian_moments() {
        let r = Composite::new(16, 8);
        let z = r.integrate(-15.0, 15.0, |x| normal_log_pdf(x, 0.5, 2.0).exp());
        assert!((z - 1.0).abs() < 1e-13);
        let m2 = r.integrate(-15.0, 15.0, |x| x * x * normal_log_pdf(x, 0.5, 2.0).exp());
        assert!((m2 - 2.25).abs() < 1e-12);
    }

    #[test]
    fn kl_quadrature_worked_value() {
        let v = kl_1d_quadrature(0.0, 4.0, 0.0, 1.0);
        assert!((v - (1.5 - 2f64.ln())).abs() < 1e-12, "{v}");
    }
}
