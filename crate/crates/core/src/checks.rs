//! Finite-difference verification of every head and of the full objective,
//! at desk scale. Backs the `gradcheck` command and the acceptance suite.

use crate::dataio::{TrajectoryScene, Units};
use crate::error::Result;
use crate::linalg::Matrix;
use crate::model::{self, Heads, ModelConfig, PriorKind};
use crate::numerics::gradcheck::{grad_check_with_corruption, GradCheckReport};
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{mlp_forward, NodeId, Tape};
use crate::pooling::{self, PoolingMask};
use crate::sampler::NoiseStream;
use crate::training::{self, Ablation, NegativePhase, TrainConfig};

/// One named check: a head (or the whole objective) against central
/// finite differences.
pub struct HeadCheck {
    pub name: String,
    pub report: GradCheckReport,
}

pub struct GradCheckSuite {
    pub tolerance: f64,
    pub checks: Vec<HeadCheck>,
}

impl GradCheckSuite {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.report.passed())
    }

    /// One line per check.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.report.passed() { "pass" } else { "FAIL" };
            out.push_str(&format!(
                "{status}  {:<28} max_rel_err {:.3e}\n",
                c.name,
                c.report.max_rel_err()
            ));
            for f in c.report.failures() {
                out.push_str(&format!(
                    "      {} [{}]: analytic {:.6e} vs numeric {:.6e}\n",
                    f.name, f.worst_index, f.analytic, f.numeric
                ));
            }
        }
        out
    }
}

/// Instance sizes for the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckScale {
    /// 2 agents, latent dim 2, hidden 6.
    Tiny,
    /// 2 agents, latent dim 4, hidden 12.
    Small,
}

impl std::str::FromStr for CheckScale {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(CheckScale::Tiny),
            "small" => Ok(CheckScale::Small),
            other => Err(crate::error::Error::Config(format!(
                "unknown gradcheck scale {other:?} (expected tiny|small)"
            ))),
        }
    }
}

fn scaled_model_cfg(scale: CheckScale) -> ModelConfig {
    match scale {
        CheckScale::Tiny => ModelConfig {
            latent_dim: 2,
            hidden: 6,
            layers: 2,
            enc_dim: 4,
            pool_d: 5.0,
            ..Default::default()
        },
        CheckScale::Small => ModelConfig {
            latent_dim: 4,
            hidden: 12,
            layers: 3,
            enc_dim: 8,
            pool_d: 5.0,
            ..Default::default()
        },
    }
}

fn tiny_scene() -> TrajectoryScene {
    let mut past = Vec::new();
    let mut future = Vec::new();
    for a in 0..2usize {
        for t in 0..8 {
            past.push([0.4 * t as f64 + 0.1 * a as f64, 0.3 * a as f64]);
        }
        for t in 0..12 {
            future.push([
                0.4 * (8 + t) as f64,
                0.3 * a as f64 + 0.05 * t as f64 * if a == 0 { 1.0 } else { -1.0 },
            ]);
        }
    }
    TrajectoryScene {
        scene_id: "gradcheck".into(),
        units: Units::Meters,
        t_past: 8,
        t_pred: 12,
        past,
        future,
        origin_offsets: vec![[0.0, 0.0]; 2],
    }
}

fn sum_sq(tape: &mut Tape, x: NodeId) -> NodeId {
    let sq = tape.square(x);
    tape.sum_all(sq)
}

/// A corrupted-gradient injection point: (check name, parameter, flat index).
pub type Fault<'a> = (&'a str, &'a str, usize);

/// Run the whole verification suite. Every check differentiates a scalar
/// built from frozen inputs (noise replayed per evaluation; Langevin
/// negatives snapshotted once) and compares against central differences at
/// the given tolerance.
pub fn run_gradcheck_suite(
    scale: CheckScale,
    tolerance: f64,
    fault: Option<Fault>,
) -> Result<GradCheckSuite> {
    let cfg = scaled_model_cfg(scale);
    let heads = Heads::new(&cfg);
    let mut params = model::init_params(&cfg, 12345)?;
    let mut seed_noise = NoiseStream::new(777);
    let n = 2usize;
    let x_in = seed_noise.normal_matrix(n, cfg.t_past * 2);
    let plan_in = seed_noise.normal_matrix(n, cfg.plan_width());
    let future_in = seed_noise.normal_matrix(n, cfg.future_width());
    let z_in = seed_noise.normal_matrix(n, cfg.latent_dim);
    let ctx_in = seed_noise.normal_matrix(n, cfg.enc_dim);
    let mut mask = PoolingMask::identity(n);
    *mask.m.at_mut(0, 1) = 1.0;
    *mask.m.at_mut(1, 0) = 1.0;

    let mut checks: Vec<HeadCheck> = Vec::new();
    let fault_for = |check: &str| -> Option<(&str, usize)> {
        fault.and_then(|(c, p, i)| if c == check { Some((p, i)) } else { None })
    };

    macro_rules! check {
        ($name:expr, $builder:expr) => {{
            let mut builder = $builder;
            let report =
                grad_check_with_corruption(&mut params, tolerance, &mut builder, fault_for($name))?;
            checks.push(HeadCheck {
                name: $name.to_string(),
                report,
            });
        }};
    }

    check!("enc_past", |tape: &mut Tape, params: &ParamStore| {
        let x = tape.constant(x_in.clone());
        let out = mlp_forward(tape, params, x, &heads.enc_past)?;
        Ok(sum_sq(tape, out))
    });

    check!("social_pool", |tape: &mut Tape, params: &ParamStore| {
        let x = tape.constant(x_in.clone());
        let enc = pooling::encode_past(tape, params, x, &heads.enc_past)?;
        let ctx = pooling::social_pool(tape, params, enc, &mask, &heads.attention)?;
        Ok(sum_sq(tape, ctx))
    });

    check!("enc_plan", |tape: &mut Tape, params: &ParamStore| {
        let p = tape.constant(plan_in.clone());
        let out = mlp_forward(tape, params, p, &heads.enc_plan)?;
        Ok(sum_sq(tape, out))
    });

    check!("enc_future", |tape: &mut Tape, params: &ParamStore| {
        let f = tape.constant(future_in.clone());
        let out = mlp_forward(tape, params, f, &heads.enc_future)?;
        Ok(sum_sq(tape, out))
    });

    check!("q_phi", |tape: &mut Tape, params: &ParamStore| {
        let p = tape.constant(plan_in.clone());
        let enc = mlp_forward(tape, params, p, &heads.enc_plan)?;
        let ctx = tape.constant(ctx_in.clone());
        let post = model::infer_posterior(tape, params, &heads, enc, ctx)?;
        let a = sum_sq(tape, post.mu);
        let b = sum_sq(tape, post.log_var);
        tape.add(a, b)
    });

    check!("gaussian_prior", |tape: &mut Tape, params: &ParamStore| {
        let ctx = tape.constant(ctx_in.clone());
        let prior = model::gaussian_prior(tape, params, &heads, ctx)?;
        let a = sum_sq(tape, prior.mu);
        let b = sum_sq(tape, prior.log_var);
        tape.add(a, b)
    });

    check!("energy", |tape: &mut Tape, params: &ParamStore| {
        let z = tape.constant(z_in.clone());
        let ctx = tape.constant(ctx_in.clone());
        let e = model::energy(tape, params, &heads, z, ctx)?;
        Ok(tape.sum_all(e))
    });

    check!("dec_plan", |tape: &mut Tape, params: &ParamStore| {
        let z = tape.constant(z_in.clone());
        let ctx = tape.constant(ctx_in.clone());
        let out = model::decode_plan(tape, params, &heads, z, ctx)?;
        Ok(sum_sq(tape, out))
    });

    check!("dec_traj", |tape: &mut Tape, params: &ParamStore| {
        let p = tape.constant(plan_in.clone());
        let ctx = tape.constant(ctx_in.clone());
        let out = model::decode_trajectory(tape, params, &heads, p, ctx)?;
        Ok(sum_sq(tape, out))
    });

    check!("dec_direct", |tape: &mut Tape, params: &ParamStore| {
        let z = tape.constant(z_in.clone());
        let ctx = tape.constant(ctx_in.clone());
        let out = model::decode_direct(tape, params, &heads, z, ctx)?;
        Ok(sum_sq(tape, out))
    });

    // full objective per ablation wiring, frozen noise, negatives snapshotted
    let scene = tiny_scene();
    for ablation in [Ablation::EbmPlan, Ablation::GaussianPlan, Ablation::EbmNoPlan] {
        let mut obj_cfg = cfg.clone();
        obj_cfg.wiring = training::ablation_wiring(ablation);
        let train_cfg = TrainConfig {
            langevin: crate::sampler::LangevinConfig {
                steps: 4,
                step_size: 0.1,
                noise_on: true,
            },
            ..TrainConfig::default_for(Units::Meters)
        };
        let noise_seed = 4242u64;
        // snapshot the negative-phase samples once
        let frozen_z = {
            let mut tape = Tape::new();
            let mut noise = NoiseStream::new(noise_seed);
            let terms = training::elbo_loss(
                &mut tape,
                &scene,
                &params,
                &obj_cfg,
                &train_cfg,
                &mut noise,
            )?;
            terms
                .z_neg
                .unwrap_or_else(|| Matrix::zeros(n, obj_cfg.latent_dim))
        };
        let name = format!("full_objective[{}]", ablation.name());
        let obj_cfg2 = obj_cfg.clone();
        let train_cfg2 = train_cfg.clone();
        let scene2 = scene.clone();
        check!(name.as_str(), move |tape: &mut Tape,
                                    params: &ParamStore| {
            let mut noise = NoiseStream::new(noise_seed);
            let terms = training::elbo_loss_with(
                tape,
                &scene2,
                params,
                &obj_cfg2,
                &train_cfg2,
                &mut noise,
                match obj_cfg2.wiring.prior {
                    PriorKind::Ebm => NegativePhase::Frozen { z_neg: &frozen_z },
                    PriorKind::Gaussian => NegativePhase::Fresh,
                },
            )?;
            Ok(terms.total_node)
        });
    }

    Ok(GradCheckSuite {
        tolerance,
        checks,
    })
}
