//! Forward pass, loss assembly and the hand-written backward pass.

use rayon::prelude::*;

use crate::error::Result;
use crate::losses::{
    bpr_with_grad, contrastive_impl, irm_impl, kl_impl, orthogonal_impl, BundleGrads, Coefficients, LossReport,
    PreferenceBundle,
};
use crate::recommender::aggregate_singleton_items;
use crate::tensor::{axpy, dot, EmbeddingTable};
use crate::trainer::params::Params;
use crate::trainer::sampling::BatchPlan;
use crate::trainer::{Trainer, Variant};
use crate::vae::{self, GaussianLatent, VaeParams, VaeTrace};

impl Trainer {
    /// Loss report for one plan and, if asked, the gradient of
    /// `report.total` with respect to every parameter.
    pub fn objective(
        &self,
        params: &Params,
        plan: &BatchPlan,
        coef: &Coefficients,
        want_grad: bool,
    ) -> Result<(LossReport, Option<Params>)> {
        if plan.pretrain || self.config().variant == Variant::LightGcn {
            self.dot_product_objective(params, plan, coef, want_grad)
        } else {
            self.full_objective(params, plan, coef, want_grad)
        }
    }

    /// BPR over `P_pt . Q_pt` on the all-behavior graph.
    fn dot_product_objective(
        &self,
        params: &Params,
        plan: &BatchPlan,
        coef: &Coefficients,
        want_grad: bool,
    ) -> Result<(LossReport, Option<Params>)> {
        let layers = self.config().layers;
        let graph = self.union_graph();
        let (ppt, qpt) = graph.layer_sum(&params.users, &params.items, layers)?;
        let scores: Vec<(f64, f64)> = plan
            .bpr
            .iter()
            .map(|t| {
                let p = ppt.row(plan.users[t.slot]);
                (dot(p, qpt.row(t.pos)), dot(p, qpt.row(t.neg)))
            })
            .collect();
        if scores.is_empty() {
            let report = LossReport::new(0.0, 0.0, 0.0, 0.0, 0.0, coef);
            return Ok((report, want_grad.then(|| params.zeros_like())));
        }
        let (rec, d_diff) = bpr_with_grad(&scores)?;
        let report = LossReport::new(rec, 0.0, 0.0, 0.0, 0.0, coef);
        if !want_grad {
            return Ok((report, None));
        }
        let mut gu = EmbeddingTable::zeros(ppt.rows(), ppt.dim());
        let mut gi = EmbeddingTable::zeros(qpt.rows(), qpt.dim());
        for (t, &d) in plan.bpr.iter().zip(&d_diff) {
            let k = coef.rec * d;
            let u = plan.users[t.slot];
            axpy(k, qpt.row(t.pos), gu.row_mut(u));
            axpy(-k, qpt.row(t.neg), gu.row_mut(u));
            axpy(k, ppt.row(u), gi.row_mut(t.pos));
            axpy(-k, ppt.row(u), gi.row_mut(t.neg));
        }
        let (dp, dq) = graph.layer_sum(&gu, &gi, layers)?;
        let mut grads = params.zeros_like();
        grads.users = dp;
        grads.items = dq;
        Ok((report, Some(grads)))
    }

    fn full_objective(
        &self,
        params: &Params,
        plan: &BatchPlan,
        coef: &Coefficients,
        want_grad: bool,
    ) -> Result<(LossReport, Option<Params>)> {
        let cfg = self.config();
        let layers = cfg.layers;
        let set = self.environments();
        let envs = set.len();
        let dim = params.dim();
        let slots = plan.users.len();

        let (ppt, qpt) = self.union_graph().layer_sum(&params.users, &params.items, layers)?;
        let reps = self.environment_graphs().representations(&ppt, &qpt, layers)?;
        let q_hat = aggregate_singleton_items(set, &reps.items)?;

        let traces: Vec<Vec<VaeTrace>> = plan
            .users
            .par_iter()
            .zip(plan.eps.par_iter())
            .map(|(&u, eps)| (0..envs).map(|m| vae::forward(reps.users[m].row(u), &eps[m], &params.vae)).collect())
            .collect();
        let bundles: Vec<PreferenceBundle> = traces
            .iter()
            .map(|ts| {
                PreferenceBundle::new(
                    ts.iter().map(|t| t.input.clone()).collect(),
                    ts.iter().map(|t| t.output.clone()).collect(),
                )
            })
            .collect();
        let latents: Vec<Vec<GaussianLatent>> =
            traces.iter().map(|ts| ts.iter().map(VaeTrace::latent).collect()).collect();

        let mut grads = want_grad.then(|| BundleGrads::zeros(slots, envs, dim, dim / 4, q_hat.rows()));
        let active = |c: f64| c != 0.0;

        // Recommendation term over the combined score.
        let target_env = self.target_environment();
        let score_vecs: Vec<Vec<f64>> = bundles.iter().map(|b| self.score_vector(b, target_env)).collect();
        let pairs: Vec<(f64, f64)> = plan
            .bpr
            .iter()
            .map(|t| {
                let s = &score_vecs[t.slot];
                (dot(s, q_hat.row(t.pos)), dot(s, q_hat.row(t.neg)))
            })
            .collect();
        let rec = if pairs.is_empty() {
            0.0
        } else {
            let (loss, d_diff) = bpr_with_grad(&pairs)?;
            if let Some(g) = grads.as_mut().filter(|_| active(coef.rec)) {
                let mut d_score = vec![vec![0.0; dim]; slots];
                for (t, &d) in plan.bpr.iter().zip(&d_diff) {
                    let k = coef.rec * d;
                    let s = &score_vecs[t.slot];
                    axpy(k, q_hat.row(t.pos), &mut d_score[t.slot]);
                    axpy(-k, q_hat.row(t.neg), &mut d_score[t.slot]);
                    axpy(k, s, g.items.row_mut(t.pos));
                    axpy(-k, s, g.items.row_mut(t.neg));
                }
                for (slot, ds) in d_score.iter().enumerate() {
                    if cfg.terms.invariant {
                        for m in 0..envs {
                            axpy(1.0, ds, &mut g.invariant[slot][m]);
                        }
                    }
                    if cfg.terms.specific {
                        axpy(1.0, ds, &mut g.specific[slot][target_env]);
                    }
                }
            }
            loss
        };

        let has_irm = plan.irm.pairs.iter().any(|&(_, n)| !plan.irm.by_env[n].is_empty());
        let irm = if has_irm {
            irm_impl(&bundles, &q_hat, &plan.irm, grads.as_mut().filter(|_| active(coef.irm)).map(|g| (g, coef.irm)))?
        } else {
            0.0
        };
        let ort = if slots > 0 {
            orthogonal_impl(&bundles, grads.as_mut().filter(|_| active(coef.ort)).map(|g| (g, coef.ort)))?
        } else {
            0.0
        };
        let con = if slots > 0 && envs >= 2 {
            contrastive_impl(
                &bundles,
                cfg.weights.tau,
                grads.as_mut().filter(|_| active(coef.con)).map(|g| (g, coef.con)),
            )?
        } else {
            0.0
        };
        let kl = kl_impl(&latents, grads.as_mut().filter(|_| active(coef.kl)).map(|g| (g, coef.kl)));

        let report = LossReport::new(rec, irm, ort, con, kl, coef);
        let Some(g) = grads else {
            return Ok((report, None));
        };

        // Through the decoder/encoder: p^ = p - p~ sends its gradient to
        // both the input and (negated) the output.
        let per_slot: Vec<(VaeParams, Vec<Vec<f64>>)> = traces
            .par_iter()
            .enumerate()
            .map(|(slot, ts)| {
                let mut vg = params.vae.zeros_like();
                let inputs = ts
                    .iter()
                    .enumerate()
                    .map(|(m, t)| {
                        let g_out: Vec<f64> =
                            g.invariant[slot][m].iter().zip(&g.specific[slot][m]).map(|(a, b)| a - b).collect();
                        let mut g_p = vae::backward(t, &g_out, &g.mu[slot][m], &g.logvar[slot][m], &params.vae, &mut vg);
                        axpy(1.0, &g.specific[slot][m], &mut g_p);
                        g_p
                    })
                    .collect();
                (vg, inputs)
            })
            .collect();

        let mut out = params.zeros_like();
        let mut d_users: Vec<EmbeddingTable> = (0..envs).map(|_| EmbeddingTable::zeros(ppt.rows(), dim)).collect();
        for (slot, (vg, inputs)) in per_slot.iter().enumerate() {
            add_vae(&mut out.vae, vg);
            let u = plan.users[slot];
            for (m, g_p) in inputs.iter().enumerate() {
                axpy(1.0, g_p, d_users[m].row_mut(u));
            }
        }
        let d_items: Vec<EmbeddingTable> = (0..envs)
            .map(|m| {
                if m < set.num_behaviors() {
                    g.items.clone()
                } else {
                    EmbeddingTable::zeros(qpt.rows(), dim)
                }
            })
            .collect();
        let (d_ppt, d_qpt) = self.environment_graphs().backward(&d_users, &d_items, layers)?;
        let (dp, dq) = self.union_graph().layer_sum(&d_ppt, &d_qpt, layers)?;
        out.users = dp;
        out.items = dq;
        Ok((report, Some(out)))
    }

    /// `sum_m p~^m + p^_target`, honoring the configured score terms.
    pub(crate) fn score_vector(&self, bundle: &PreferenceBundle, target_env: usize) -> Vec<f64> {
        let terms = self.config().terms;
        let mut s = vec![0.0; bundle.invariant[0].len()];
        if terms.invariant {
            for inv in &bundle.invariant {
                axpy(1.0, inv, &mut s);
            }
        }
        if terms.specific {
            axpy(1.0, &bundle.specific[target_env], &mut s);
        }
        s
    }
}

fn add_vae(acc: &mut VaeParams, other: &VaeParams) {
    for ((_, a), (_, b)) in acc.layers_mut().into_iter().zip(other.layers()) {
        axpy(1.0, &b.weight, &mut a.weight);
        axpy(1.0, &b.bias, &mut a.bias);
    }
}
