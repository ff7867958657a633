//! Full estimator: scale construction, per-scale attention, fusion, and
//! the expert head, plus parameter initialization and flattening for the
//! optimizer and checkpoints.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::encoding::FEATURE_DIM;
use crate::error::{Error, Result};
use crate::fusion::{fuse_uniform_var, fuse_var, FusionParams};
use crate::gat::{gat_level_var, GatParams, GatVars};
use crate::multiscale::{assignment_var, coarsen_var, level_schedule, CoarsenParams, ScaleLevel};
use crate::numerics::{Matrix, Tape, Var};
use crate::scene::{estimate_var, expert_var, ExpertParams, ExpertVars, SceneParams, SceneVars};

/// Model variants used by the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Three scales, learned fusion, mixture of experts.
    Full,
    /// Original-granularity scale only.
    NoMultiscale,
    /// Fixed uniform fusion weights.
    NoFusion,
    /// Single expert instead of the gated mixture.
    NoScene,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::NoMultiscale => "no_multiscale",
            Variant::NoFusion => "no_fusion",
            Variant::NoScene => "no_scene",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_multiscale" => Ok(Variant::NoMultiscale),
            "no_fusion" => Ok(Variant::NoFusion),
            "no_scene" => Ok(Variant::NoScene),
            other => Err(Error::Config(format!("unknown variant '{other}'"))),
        }
    }
}

/// Architecture hyperparameters for a fixed node count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_nodes: usize,
    pub feature_dim: usize,
    /// h: embedding width inside each attention level.
    pub embed_dim: usize,
    /// d': attention/aggregation width and fused-embedding width.
    pub attn_dim: usize,
    /// d_s1: recognizer hidden width.
    pub scene_hidden: usize,
    /// d_s: scene feature width.
    pub scene_dim: usize,
    /// h_e: expert hidden width.
    pub expert_hidden: usize,
    pub n_experts: usize,
    pub n_levels: usize,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn new(n_nodes: usize, variant: Variant) -> Self {
        ModelConfig {
            n_nodes,
            feature_dim: FEATURE_DIM,
            embed_dim: 64,
            attn_dim: 64,
            scene_hidden: 64,
            scene_dim: 32,
            expert_hidden: 64,
            n_experts: 4,
            n_levels: 3,
            variant,
        }
    }

    /// Effective level count after the variant is applied.
    pub fn effective_levels(&self) -> usize {
        match self.variant {
            Variant::NoMultiscale => 1,
            _ => self.n_levels,
        }
    }

    /// Effective expert count after the variant is applied.
    pub fn effective_experts(&self) -> usize {
        match self.variant {
            Variant::NoScene => 1,
            _ => self.n_experts,
        }
    }

    pub fn schedule(&self) -> Result<Vec<(ScaleLevel, usize)>> {
        level_schedule(self.n_nodes, self.effective_levels())
    }
}

/// Estimator head: gated mixture or the scene-ablated single expert.
#[derive(Clone, Debug)]
pub enum Head {
    Mixture(SceneParams),
    Single(ExpertParams),
}

/// Every learnable tensor of the pipeline.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub schedule: Vec<(ScaleLevel, usize)>,
    /// Assignment parameters for each non-micro level.
    pub coarsen: Vec<CoarsenParams>,
    /// One attention level per scale.
    pub gat: Vec<GatParams>,
    /// Absent for the fusion-ablated variant.
    pub fusion: Option<FusionParams>,
    pub head: Head,
}

fn xavier(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .expect("finite init")
}

impl ModelParams {
    /// Deterministic initialization: Xavier-uniform weights, zero biases,
    /// drawn in canonical tensor order from a seeded stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let schedule = config.schedule()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = config.feature_dim;

        let coarsen = schedule[1..]
            .iter()
            .map(|&(_, k)| CoarsenParams {
                w_p: xavier(&mut rng, d, k),
                b_p: Matrix::zeros(1, k),
            })
            .collect();

        let gat = schedule
            .iter()
            .map(|_| GatParams {
                w_embed: xavier(&mut rng, d, config.embed_dim),
                w_attn: xavier(&mut rng, config.embed_dim, config.attn_dim),
                a: xavier(&mut rng, 2 * config.attn_dim, 1),
            })
            .collect();

        let fusion = match config.variant {
            Variant::NoFusion => None,
            _ => Some(FusionParams {
                w_beta: xavier(&mut rng, 1, config.attn_dim),
                b_beta: Matrix::zeros(1, 1),
            }),
        };

        let expert = |rng: &mut ChaCha20Rng| ExpertParams {
            w1: xavier(rng, config.attn_dim, config.expert_hidden),
            b1: Matrix::zeros(1, config.expert_hidden),
            w2: xavier(rng, config.expert_hidden, 1),
            b2: Matrix::zeros(1, 1),
        };

        let head = match config.variant {
            Variant::NoScene => Head::Single(expert(&mut rng)),
            _ => Head::Mixture(SceneParams {
                w_s1: xavier(&mut rng, config.attn_dim, config.scene_hidden),
                b_s1: Matrix::zeros(1, config.scene_hidden),
                w_s2: xavier(&mut rng, config.scene_hidden, config.scene_dim),
                b_s2: Matrix::zeros(1, config.scene_dim),
                w_gate: xavier(&mut rng, config.scene_dim, config.n_experts),
                b_gate: Matrix::zeros(1, config.n_experts),
                experts: (0..config.n_experts).map(|_| expert(&mut rng)).collect(),
            }),
        };

        Ok(ModelParams {
            config: config.clone(),
            schedule,
            coarsen,
            gat,
            fusion,
            head,
        })
    }

    /// Tensors in canonical order with their checkpoint names.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, c) in self.coarsen.iter().enumerate() {
            let li = i + 1;
            out.push((format!("coarsen.{li}.w_p"), &c.w_p));
            out.push((format!("coarsen.{li}.b_p"), &c.b_p));
        }
        for (i, g) in self.gat.iter().enumerate() {
            out.push((format!("gat.{i}.w_embed"), &g.w_embed));
            out.push((format!("gat.{i}.w_attn"), &g.w_attn));
            out.push((format!("gat.{i}.a"), &g.a));
        }
        if let Some(f) = &self.fusion {
            out.push(("fusion.w_beta".into(), &f.w_beta));
            out.push(("fusion.b_beta".into(), &f.b_beta));
        }
        match &self.head {
            Head::Mixture(s) => {
                out.push(("scene.w_s1".into(), &s.w_s1));
                out.push(("scene.b_s1".into(), &s.b_s1));
                out.push(("scene.w_s2".into(), &s.w_s2));
                out.push(("scene.b_s2".into(), &s.b_s2));
                out.push(("scene.w_gate".into(), &s.w_gate));
                out.push(("scene.b_gate".into(), &s.b_gate));
                for (i, e) in s.experts.iter().enumerate() {
                    out.push((format!("expert.{i}.w1"), &e.w1));
                    out.push((format!("expert.{i}.b1"), &e.b1));
                    out.push((format!("expert.{i}.w2"), &e.w2));
                    out.push((format!("expert.{i}.b2"), &e.b2));
                }
            }
            Head::Single(e) => {
                out.push(("expert.0.w1".into(), &e.w1));
                out.push(("expert.0.b1".into(), &e.b1));
                out.push(("expert.0.w2".into(), &e.w2));
                out.push(("expert.0.b2".into(), &e.b2));
            }
        }
        out
    }

    /// Mutable tensor references, same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for c in &mut self.coarsen {
            out.push(&mut c.w_p);
            out.push(&mut c.b_p);
        }
        for g in &mut self.gat {
            out.push(&mut g.w_embed);
            out.push(&mut g.w_attn);
            out.push(&mut g.a);
        }
        if let Some(f) = &mut self.fusion {
            out.push(&mut f.w_beta);
            out.push(&mut f.b_beta);
        }
        match &mut self.head {
            Head::Mixture(s) => {
                out.push(&mut s.w_s1);
                out.push(&mut s.b_s1);
                out.push(&mut s.w_s2);
                out.push(&mut s.b_s2);
                out.push(&mut s.w_gate);
                out.push(&mut s.b_gate);
                for e in &mut s.experts {
                    out.push(&mut e.w1);
                    out.push(&mut e.b1);
                    out.push(&mut e.w2);
                    out.push(&mut e.b2);
                }
            }
            Head::Single(e) => {
                out.push(&mut e.w1);
                out.push(&mut e.b1);
                out.push(&mut e.w2);
                out.push(&mut e.b2);
            }
        }
        out
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data().len()).sum()
    }

    /// Overwrites every tensor from named entries. The name set and all
    /// shapes must match this parameter set exactly.
    pub fn load_tensors(&mut self, entries: &[(String, Matrix)]) -> Result<()> {
        let names: Vec<String> = self.tensors().iter().map(|(n, _)| n.clone()).collect();
        if entries.len() != names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, got {}",
                names.len(),
                entries.len()
            )));
        }
        let mut slots = self.tensors_mut();
        for (name, value) in entries {
            let idx = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor '{name}'")))?;
            if slots[idx].shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor '{name}' has shape {:?}, expected {:?}",
                    value.shape(),
                    slots[idx].shape()
                )));
            }
            *slots[idx] = value.clone();
        }
        Ok(())
    }

    /// Largest tensor norms, for diagnostics when training aborts.
    pub fn norm_summary(&self) -> String {
        let mut norms: Vec<(String, f64)> = self
            .tensors()
            .iter()
            .map(|(n, m)| (n.clone(), m.norm()))
            .collect();
        norms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        norms
            .iter()
            .take(5)
            .map(|(n, v)| format!("{n}={v:.3e}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Tape handles for every tensor, in canonical order in `flat`.
pub struct ModelVars {
    pub coarsen: Vec<(Var, Var)>,
    pub gat: Vec<GatVars>,
    pub fusion: Option<(Var, Var)>,
    pub head: HeadVars,
    pub flat: Vec<Var>,
}

pub enum HeadVars {
    Mixture(SceneVars),
    Single(ExpertVars),
}

impl ModelParams {
    /// Loads every tensor onto the tape as leaves.
    pub fn to_vars(&self, tape: &mut Tape) -> ModelVars {
        let mut flat = Vec::new();
        let coarsen = self
            .coarsen
            .iter()
            .map(|c| {
                let w = tape.leaf(c.w_p.clone());
                let b = tape.leaf(c.b_p.clone());
                flat.push(w);
                flat.push(b);
                (w, b)
            })
            .collect();
        let gat = self
            .gat
            .iter()
            .map(|g| {
                let vars = GatVars {
                    w_embed: tape.leaf(g.w_embed.clone()),
                    w_attn: tape.leaf(g.w_attn.clone()),
                    a: tape.leaf(g.a.clone()),
                };
                flat.push(vars.w_embed);
                flat.push(vars.w_attn);
                flat.push(vars.a);
                vars
            })
            .collect();
        let fusion = self.fusion.as_ref().map(|f| {
            let w = tape.leaf(f.w_beta.clone());
            let b = tape.leaf(f.b_beta.clone());
            flat.push(w);
            flat.push(b);
            (w, b)
        });
        let head = match &self.head {
            Head::Mixture(s) => {
                let vars = SceneVars {
                    w_s1: tape.leaf(s.w_s1.clone()),
                    b_s1: tape.leaf(s.b_s1.clone()),
                    w_s2: tape.leaf(s.w_s2.clone()),
                    b_s2: tape.leaf(s.b_s2.clone()),
                    w_gate: tape.leaf(s.w_gate.clone()),
                    b_gate: tape.leaf(s.b_gate.clone()),
                    experts: s
                        .experts
                        .iter()
                        .map(|e| ExpertVars {
                            w1: tape.leaf(e.w1.clone()),
                            b1: tape.leaf(e.b1.clone()),
                            w2: tape.leaf(e.w2.clone()),
                            b2: tape.leaf(e.b2.clone()),
                        })
                        .collect(),
                };
                flat.push(vars.w_s1);
                flat.push(vars.b_s1);
                flat.push(vars.w_s2);
                flat.push(vars.b_s2);
                flat.push(vars.w_gate);
                flat.push(vars.b_gate);
                for e in &vars.experts {
                    flat.push(e.w1);
                    flat.push(e.b1);
                    flat.push(e.w2);
                    flat.push(e.b2);
                }
                HeadVars::Mixture(vars)
            }
            Head::Single(e) => {
                let vars = ExpertVars {
                    w1: tape.leaf(e.w1.clone()),
                    b1: tape.leaf(e.b1.clone()),
                    w2: tape.leaf(e.w2.clone()),
                    b2: tape.leaf(e.b2.clone()),
                };
                flat.push(vars.w1);
                flat.push(vars.b1);
                flat.push(vars.w2);
                flat.push(vars.b2);
                HeadVars::Single(vars)
            }
        };
        ModelVars {
            coarsen,
            gat,
            fusion,
            head,
            flat,
        }
    }
}

/// Tape handles produced by one forward pass.
pub struct ForwardOut {
    /// 1 x 1 estimate in target space.
    pub l_hat: Var,
    /// 1 x K expert estimates.
    pub expert_outputs: Var,
    /// 1 x L fusion weights.
    pub beta: Var,
    /// 1 x K gate weights.
    pub omega: Var,
    /// Per-level assignment matrices (micro omitted).
    pub assignments: Vec<Var>,
    /// Per-level attention matrices.
    pub alphas: Vec<Var>,
    /// Per-level pooled embeddings.
    pub pooled: Vec<Var>,
}

/// Runs the full pipeline for one sample already on the tape.
pub fn forward_var(
    tape: &mut Tape,
    vars: &ModelVars,
    schedule: &[(ScaleLevel, usize)],
    x: Var,
    adjacency: Var,
) -> ForwardOut {
    let mut assignments = Vec::new();
    let mut alphas = Vec::new();
    let mut pooled = Vec::new();
    for (idx, _) in schedule.iter().enumerate() {
        let (x_c, a_c) = if idx == 0 {
            (x, adjacency)
        } else {
            let (w_p, b_p) = vars.coarsen[idx - 1];
            let p = assignment_var(tape, x, w_p, b_p);
            assignments.push(p);
            coarsen_var(tape, x, adjacency, p)
        };
        let out = gat_level_var(tape, x_c, a_c, vars.gat[idx]);
        alphas.push(out.alpha);
        pooled.push(out.pooled);
    }

    let fused = match vars.fusion {
        Some((w, b)) => fuse_var(tape, &pooled, w, b),
        None => fuse_uniform_var(tape, &pooled),
    };

    let (l_hat, expert_outputs, omega) = match &vars.head {
        HeadVars::Mixture(scene) => {
            let out = estimate_var(tape, fused.fused, scene);
            (out.l_hat, out.expert_outputs, out.omega)
        }
        HeadVars::Single(e) => {
            let out = expert_var(tape, fused.fused, *e);
            let omega = tape.leaf(Matrix::from_vec(1, 1, vec![1.0]).unwrap());
            (out, out, omega)
        }
    };

    ForwardOut {
        l_hat,
        expert_outputs,
        beta: fused.beta,
        omega,
        assignments,
        alphas,
        pooled,
    }
}

/// Non-tape prediction detail for one sample in target space.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub l_hat: f64,
    pub beta: Vec<f64>,
    pub omega: Vec<f64>,
    pub expert_outputs: Vec<f64>,
}

/// Forward pass over plain matrices; `x` must already be normalized.
pub fn predict_one(params: &ModelParams, x: &Matrix, adjacency: &Matrix) -> Prediction {
    let mut tape = Tape::new();
    let vars = params.to_vars(&mut tape);
    let xv = tape.leaf(x.clone());
    let av = tape.leaf(adjacency.clone());
    let out = forward_var(&mut tape, &vars, &params.schedule, xv, av);
    Prediction {
        l_hat: tape.scalar_value(out.l_hat),
        beta: tape.value(out.beta).data().to_vec(),
        omega: tape.value(out.omega).data().to_vec(),
        expert_outputs: tape.value(out.expert_outputs).data().to_vec(),
    }
}
