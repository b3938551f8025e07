//! Variational training: the per-scene objective, the positive/negative-phase
//! cost-head gradient, ablation wirings, and the end-to-end optimization loop.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::dataio::{extract_plan, normalize_scene, TrajectoryScene, Units};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{
    self, EbmEnergy, GaussianPosterior, Heads, ModelConfig, PriorKind, Wiring,
};
use crate::numerics::adam::{adam_step, AdamState};
use crate::numerics::checkpoint;
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{mlp_forward, NodeId, Tape};
use crate::sampler::{langevin_from_prior, sample_posterior, LangevinConfig, NoiseStream};

/// Scalar pieces of one objective evaluation, averaged per agent.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub plan_recon: f64,
    pub traj_pred: f64,
    pub kl_to_prior: f64,
    pub ebm_positive: f64,
    pub ebm_negative: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add(&mut self, other: &LossBreakdown) {
        self.plan_recon += other.plan_recon;
        self.traj_pred += other.traj_pred;
        self.kl_to_prior += other.kl_to_prior;
        self.ebm_positive += other.ebm_positive;
        self.ebm_negative += other.ebm_negative;
        self.total += other.total;
    }

    fn scale(&mut self, c: f64) {
        self.plan_recon *= c;
        self.traj_pred *= c;
        self.kl_to_prior *= c;
        self.ebm_positive *= c;
        self.ebm_negative *= c;
        self.total *= c;
    }
}

/// Optimization settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub kl_weight: f64,
    /// Feed the ground-truth plan (not the generated one) to the trajectory
    /// decoder during training.
    pub teacher_force_plan: bool,
    pub langevin: LangevinConfig,
    /// Write a checkpoint every this many epochs (0 = only init and final).
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Defaults: lr 3e-4; batch 512 in pixels (SDD), 70 in meters (ETH-UCY).
    pub fn default_for(units: Units) -> Self {
        TrainConfig {
            lr: 0.0003,
            batch_size: match units {
                Units::Pixels => 512,
                Units::Meters => 70,
            },
            epochs: 100,
            seed: 1,
            kl_weight: 1.0,
            teacher_force_plan: false,
            langevin: LangevinConfig::default(),
            checkpoint_every: 0,
        }
    }
}

/// Ablation conditions over the objective and wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    EbmPlan,
    GaussianPlan,
    EbmNoPlan,
    GaussianNoPlan,
    EbmPlanNoSocial,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::EbmPlan,
        Ablation::GaussianPlan,
        Ablation::EbmNoPlan,
        Ablation::GaussianNoPlan,
        Ablation::EbmPlanNoSocial,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Ablation::EbmPlan => "ebm-plan",
            Ablation::GaussianPlan => "gaussian-plan",
            Ablation::EbmNoPlan => "ebm-no-plan",
            Ablation::GaussianNoPlan => "gaussian-no-plan",
            Ablation::EbmPlanNoSocial => "ebm-plan-no-social",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation {s:?}; expected one of {:?}",
                    Ablation::ALL.map(|a| a.name())
                ))
            })
    }
}

/// Model wiring for an ablation condition.
pub fn ablation_wiring(ablation: Ablation) -> Wiring {
    match ablation {
        Ablation::EbmPlan => Wiring::default(),
        Ablation::GaussianPlan => Wiring {
            prior: PriorKind::Gaussian,
            ..Wiring::default()
        },
        Ablation::EbmNoPlan => Wiring {
            two_step_plan: false,
            ..Wiring::default()
        },
        Ablation::GaussianNoPlan => Wiring {
            prior: PriorKind::Gaussian,
            two_step_plan: false,
            ..Wiring::default()
        },
        Ablation::EbmPlanNoSocial => Wiring {
            social: false,
            ..Wiring::default()
        },
    }
}

/// `0.5 * sum((pred - target)^2)` on the tape, target constant.
fn half_sq_err(tape: &mut Tape, pred: NodeId, target: &Matrix) -> Result<NodeId> {
    let t = tape.constant(target.clone());
    let diff = tape.sub(pred, t)?;
    let sq = tape.square(diff);
    let s = tape.sum_all(sq);
    Ok(tape.scale(s, 0.5))
}

/// Analytic `KL(q || N(0, I))` summed over agents and dimensions:
/// `0.5 * sum(sigma^2 + mu^2 - 1 - log sigma^2)`.
pub fn kl_standard_normal(tape: &mut Tape, post: &GaussianPosterior) -> Result<NodeId> {
    let numel = tape.value(post.mu).len() as f64;
    let var = tape.exp(post.log_var);
    let mu2 = tape.square(post.mu);
    let s_var = tape.sum_all(var);
    let s_mu2 = tape.sum_all(mu2);
    let s_lv = tape.sum_all(post.log_var);
    let a = tape.add(s_var, s_mu2)?;
    let b = tape.sub(a, s_lv)?;
    let c = tape.add_scalar(b, -numel);
    Ok(tape.scale(c, 0.5))
}

/// Analytic KL between two diagonal Gaussians, summed over agents and dims:
/// `0.5 * sum(lv_p - lv_q + exp(lv_q - lv_p) + (mu_q - mu_p)^2 exp(-lv_p) - 1)`.
pub fn kl_diag_gaussians(
    tape: &mut Tape,
    q: &GaussianPosterior,
    p: &GaussianPosterior,
) -> Result<NodeId> {
    let numel = tape.value(q.mu).len() as f64;
    let d_lv = tape.sub(q.log_var, p.log_var)?;
    let ratio = tape.exp(d_lv);
    let d_mu = tape.sub(q.mu, p.mu)?;
    let d_mu2 = tape.square(d_mu);
    let neg_lvp = tape.scale(p.log_var, -1.0);
    let inv_var_p = tape.exp(neg_lvp);
    let mahal = tape.mul(d_mu2, inv_var_p)?;
    let lv_diff = tape.sub(p.log_var, q.log_var)?;
    let a = tape.add(lv_diff, ratio)?;
    let b = tape.add(a, mahal)?;
    let s = tape.sum_all(b);
    let c = tape.add_scalar(s, -numel);
    Ok(tape.scale(c, 0.5))
}

/// The objective of one scene, recorded on the tape.
pub struct ElboTerms {
    pub breakdown: LossBreakdown,
    /// Scalar node: backward from here trains every reachable head.
    pub total_node: NodeId,
    /// Posterior samples (values) and the frozen context, for `ebm_grad` use.
    pub z_pos: Matrix,
    pub z_neg: Option<Matrix>,
    pub ctx: Matrix,
    pub langevin_calls: usize,
}

/// Where the negative-phase samples come from.
pub enum NegativePhase<'a> {
    /// Fresh short-run Langevin chains guided by the current cost head.
    Fresh,
    /// Injected constants (finite-difference checking snapshots them once so
    /// the checked scalar treats them as fixed).
    Frozen { z_neg: &'a Matrix },
}

/// Build the per-scene variational objective on the tape.
///
/// Terms, each summed over agents then divided by the agent count:
/// plan reconstruction (or direct trajectory reconstruction without a plan),
/// trajectory prediction fed by the generated plan mean, analytic KL to the
/// prior, the cost head's positive phase on reparameterized posterior
/// samples, and, for the EBM prior, minus the cost of short-run Langevin
/// samples standing in for the partition gradient. The chain outputs enter
/// the tape as constants, so one backward pass from `total_node` reproduces
/// the positive-minus-negative update on the cost head.
///
/// Noise draw order (fixed, so runs replay exactly): posterior epsilon
/// `[n x latent]` row-major, then for the EBM route the Langevin
/// initialization `[n x latent]` and one `[n x latent]` draw per step.
pub fn elbo_loss(
    tape: &mut Tape,
    scene: &TrajectoryScene,
    params: &ParamStore,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    noise: &mut NoiseStream,
) -> Result<ElboTerms> {
    elbo_loss_with(
        tape,
        scene,
        params,
        model_cfg,
        train_cfg,
        noise,
        NegativePhase::Fresh,
    )
}

/// [`elbo_loss`] with explicit control over the negative phase.
pub fn elbo_loss_with(
    tape: &mut Tape,
    scene: &TrajectoryScene,
    params: &ParamStore,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    noise: &mut NoiseStream,
    negative: NegativePhase,
) -> Result<ElboTerms> {
    let heads = Heads::new(model_cfg);
    let wiring = model_cfg.wiring;
    let norm = normalize_scene(scene);
    let n = norm.n_agents();
    let n_f = n as f64;

    let mask = model::scene_mask(scene, model_cfg);
    let past = tape.constant(norm.past_matrix());
    let ctx = model::social_context(tape, params, &heads, past, &mask)?;

    // target and its encoder depend on the plan wiring
    let (target_mat, encoded_target) = if wiring.two_step_plan {
        let plan = extract_plan(&norm, &model_cfg.plan_indices)?;
        let m = plan.matrix();
        let t = tape.constant(m.clone());
        let enc = mlp_forward(tape, params, t, &heads.enc_plan)?;
        (m, enc)
    } else {
        let m = norm.future_matrix();
        let t = tape.constant(m.clone());
        let enc = mlp_forward(tape, params, t, &heads.enc_future)?;
        (m, enc)
    };

    let post = model::infer_posterior(tape, params, &heads, encoded_target, ctx)?;
    let z = sample_posterior(tape, post.mu, post.log_var, noise)?;

    // KL to the configured prior
    let kl_node = match wiring.prior {
        PriorKind::Ebm => kl_standard_normal(tape, &post)?,
        PriorKind::Gaussian => {
            let prior = model::gaussian_prior(tape, params, &heads, ctx)?;
            kl_diag_gaussians(tape, &post, &prior)?
        }
    };

    // reconstruction and prediction terms
    let future_mat = norm.future_matrix();
    let (plan_recon_node, traj_pred_node) = if wiring.two_step_plan {
        let plan_mean = model::decode_plan(tape, params, &heads, z, ctx)?;
        let plan_recon = half_sq_err(tape, plan_mean, &target_mat)?;
        let decoder_plan = if train_cfg.teacher_force_plan {
            tape.constant(target_mat.clone())
        } else {
            plan_mean
        };
        let traj_mean = model::decode_trajectory(tape, params, &heads, decoder_plan, ctx)?;
        let traj_pred = half_sq_err(tape, traj_mean, &future_mat)?;
        (Some(plan_recon), traj_pred)
    } else {
        let traj_mean = model::decode_direct(tape, params, &heads, z, ctx)?;
        let traj_pred = half_sq_err(tape, traj_mean, &future_mat)?;
        (None, traj_pred)
    };

    // cost head phases (EBM prior only). The chain output is a constant on
    // the tape; the context stays live in both phases so the two energy
    // terms exert opposing forces on the encoders, pinning the scale of the
    // learned features (detaching it leaves the positive phase free to sink
    // the energy by inflating the context, and training runs away).
    let mut langevin_calls = 0usize;
    let (pos_node, neg_node, z_neg) = match wiring.prior {
        PriorKind::Ebm => {
            let e_pos = model::energy(tape, params, &heads, z, ctx)?;
            let pos = tape.sum_all(e_pos);
            let z_neg = match negative {
                NegativePhase::Fresh => {
                    let ctx_vals = tape.value(ctx).clone();
                    let provider = EbmEnergy::new(params, &heads, ctx_vals);
                    langevin_calls += 1;
                    langevin_from_prior(
                        &provider,
                        n,
                        model_cfg.latent_dim,
                        &train_cfg.langevin,
                        noise,
                    )?
                }
                NegativePhase::Frozen { z_neg } => z_neg.clone(),
            };
            let zn = tape.constant(z_neg.clone());
            let e_neg = model::energy(tape, params, &heads, zn, ctx)?;
            let neg = tape.sum_all(e_neg);
            (Some(pos), Some(neg), Some(z_neg))
        }
        PriorKind::Gaussian => (None, None, None),
    };

    // total = (recon + pred + w*kl + pos - neg) / n
    let kl_w = tape.scale(kl_node, train_cfg.kl_weight);
    let mut acc = traj_pred_node;
    if let Some(p) = plan_recon_node {
        acc = tape.add(acc, p)?;
    }
    acc = tape.add(acc, kl_w)?;
    if let Some(p) = pos_node {
        acc = tape.add(acc, p)?;
    }
    if let Some(ng) = neg_node {
        acc = tape.sub(acc, ng)?;
    }
    let total_node = tape.scale(acc, 1.0 / n_f);

    let breakdown = LossBreakdown {
        plan_recon: plan_recon_node.map(|id| tape.scalar(id) / n_f).unwrap_or(0.0),
        traj_pred: tape.scalar(traj_pred_node) / n_f,
        kl_to_prior: tape.scalar(kl_node) / n_f,
        ebm_positive: pos_node.map(|id| tape.scalar(id) / n_f).unwrap_or(0.0),
        ebm_negative: neg_node.map(|id| tape.scalar(id) / n_f).unwrap_or(0.0),
        total: tape.scalar(total_node),
    };
    for (value, term) in [
        (breakdown.plan_recon, "plan_recon"),
        (breakdown.traj_pred, "traj_pred"),
        (breakdown.kl_to_prior, "kl_to_prior"),
        (breakdown.ebm_positive, "ebm_positive"),
        (breakdown.ebm_negative, "ebm_negative"),
    ] {
        if !value.is_finite() {
            return Err(Error::Numerical(format!("non-finite loss term {term}")));
        }
    }

    Ok(ElboTerms {
        breakdown,
        total_node,
        z_pos: tape.value(z).clone(),
        z_neg,
        ctx: tape.value(ctx).clone(),
        langevin_calls,
    })
}

/// Parameter gradients of the summed cost over a batch of latents, keyed by
/// store index. Only cost-head entries appear on the tape, so only they show
/// up here.
fn energy_param_grads(
    z: &Matrix,
    ctx: &Matrix,
    params: &ParamStore,
    heads: &Heads,
) -> Result<BTreeMap<usize, Matrix>> {
    let mut tape = Tape::new();
    let zn = tape.constant(z.clone());
    let cn = tape.constant(ctx.clone());
    let joint = tape.concat(zn, cn)?;
    let e = mlp_forward(&mut tape, params, joint, &heads.ebm)?;
    let s = tape.sum_all(e);

    // collect param-node gradients without touching the store
    let mut probe = params.clone();
    probe.zero_grads();
    tape.backward(s, &mut probe)?;
    let mut out = BTreeMap::new();
    for (i, e) in probe.iter().enumerate() {
        if e.name.starts_with("ebm.") {
            out.insert(i, e.grads.clone());
        }
    }
    Ok(out)
}

/// Accumulate the cost-head learning gradient
/// `mean_pos[grad C] - mean_neg[grad C]` into the cost head's gradient
/// buffers only. Identical positive and negative sample sets cancel exactly.
pub fn ebm_grad(
    z_pos: &Matrix,
    z_neg: &Matrix,
    ctx: &Matrix,
    params: &mut ParamStore,
    heads: &Heads,
) -> Result<()> {
    if z_pos.rows == 0 || z_neg.rows == 0 {
        return Err(Error::Usage("ebm_grad: empty sample set".into()));
    }
    let g_pos = energy_param_grads(z_pos, ctx, params, heads)?;
    let g_neg = energy_param_grads(z_neg, ctx, params, heads)?;
    let np = z_pos.rows as f64;
    let nn = z_neg.rows as f64;
    for (idx, gp) in &g_pos {
        let gn = &g_neg[idx];
        let entry = params.entry_mut(*idx);
        for j in 0..entry.grads.data.len() {
            entry.grads.data[j] += gp.data[j] / np - gn.data[j] / nn;
        }
    }
    Ok(())
}

/// Per-epoch averaged losses.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub breakdown: LossBreakdown,
    pub wall_time_s: f64,
}

/// Metrics log in the run-directory CSV layout.
pub fn metrics_csv_string(stats: &[EpochStats]) -> String {
    let mut out =
        String::from("epoch,plan_recon,traj_pred,kl,ebm_pos,ebm_neg_energy_mean,total,wall_time_s\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.3}\n",
            s.epoch,
            s.breakdown.plan_recon,
            s.breakdown.traj_pred,
            s.breakdown.kl_to_prior,
            s.breakdown.ebm_positive,
            s.breakdown.ebm_negative,
            s.breakdown.total,
            s.wall_time_s
        ));
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: ParamStore,
    pub stats: Vec<EpochStats>,
    pub langevin_calls: usize,
}

/// End-to-end optimization: shuffled mini-batches, one backward pass per
/// scene scaled by the batch size, Adam per batch. Checkpoints go to
/// `ckpt_dir` when given (`init.lbebm`, periodic `epoch_XXXX.lbebm`,
/// `final.lbebm`); a non-finite loss aborts with the last good parameters
/// saved as `last_good.lbebm`.
pub fn train(
    scenes: &[TrajectoryScene],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if scenes.is_empty() {
        return Err(Error::Data("train: no scenes".into()));
    }
    let mut params = model::init_params(model_cfg, cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut noise = NoiseStream::new(cfg.seed);

    let write_ckpt = |params: &ParamStore, name: &str| -> Result<()> {
        if let Some(dir) = ckpt_dir {
            checkpoint::save(params, &dir.join(name))?;
        }
        Ok(())
    };
    write_ckpt(&params, "init.lbebm")?;

    let mut stats = Vec::with_capacity(cfg.epochs);
    let mut langevin_calls = 0usize;
    let batch_size = cfg.batch_size.max(1);
    let started = Instant::now();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(noise.rng());

        let mut epoch_sum = LossBreakdown::default();
        for batch in order.chunks(batch_size) {
            params.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            for &si in batch {
                let mut tape = Tape::new();
                let terms = elbo_loss(&mut tape, &scenes[si], &params, model_cfg, cfg, &mut noise)
                    .inspect_err(|_| {
                        let _ = write_ckpt(&params, "last_good.lbebm");
                    })?;
                tape.backward_scaled(terms.total_node, scale, &mut params)
                    .inspect_err(|_| {
                        let _ = write_ckpt(&params, "last_good.lbebm");
                    })?;
                langevin_calls += terms.langevin_calls;
                epoch_sum.add(&terms.breakdown);
            }
            adam_step(&mut params, &mut adam).inspect_err(|_| {
                let _ = write_ckpt(&params, "last_good.lbebm");
            })?;
        }
        epoch_sum.scale(1.0 / scenes.len() as f64);
        stats.push(EpochStats {
            epoch,
            breakdown: epoch_sum,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        if cfg.checkpoint_every > 0 && (epoch + 1).is_multiple_of(cfg.checkpoint_every) {
            write_ckpt(&params, &format!("epoch_{:04}.lbebm", epoch + 1))?;
        }
    }
    if cfg.epochs > 0 {
        write_ckpt(&params, "final.lbebm")?;
    }
    Ok(TrainOutcome {
        params,
        stats,
        langevin_calls,
    })
}
