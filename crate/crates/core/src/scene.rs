//! Scene recognition, expert gating, and the mixture-of-experts latency
//! head.
//!
//! A two-layer recognizer maps the fused graph embedding to scene
//! features, a softmax gate turns those into expert weights, and K
//! two-layer ReLU experts produce candidate estimates that are combined
//! by the gate. Experts receive no scene labels; specialization comes
//! from the diversity term in the training loss.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Number of experts in the full model, one per operational scene family.
pub const DEFAULT_EXPERTS: usize = 4;

/// One two-layer feed-forward expert ending in ReLU.
#[derive(Clone, Debug)]
pub struct ExpertParams {
    /// d' x h_e.
    pub w1: Matrix,
    /// 1 x h_e.
    pub b1: Matrix,
    /// h_e x 1.
    pub w2: Matrix,
    /// 1 x 1.
    pub b2: Matrix,
}

/// Recognizer, gate, and expert parameters.
#[derive(Clone, Debug)]
pub struct SceneParams {
    /// d' x d_s1.
    pub w_s1: Matrix,
    /// 1 x d_s1.
    pub b_s1: Matrix,
    /// d_s1 x d_s.
    pub w_s2: Matrix,
    /// 1 x d_s.
    pub b_s2: Matrix,
    /// d_s x K.
    pub w_gate: Matrix,
    /// 1 x K.
    pub b_gate: Matrix,
    pub experts: Vec<ExpertParams>,
}

impl SceneParams {
    pub fn n_experts(&self) -> usize {
        self.experts.len()
    }
}

/// Full per-call output of the estimator head.
#[derive(Clone, Debug)]
pub struct SceneOutput {
    /// Scene feature vector (1 x d_s).
    pub scene: Matrix,
    /// Gate weights; positive, sum to 1.
    pub omega: Vec<f64>,
    /// Raw expert estimates.
    pub expert_outputs: Vec<f64>,
    /// Convex combination of the expert outputs; never negative.
    pub l_hat: f64,
}

/// Tape vars for one expert.
#[derive(Clone, Copy)]
pub struct ExpertVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape vars for the full head.
pub struct SceneVars {
    pub w_s1: Var,
    pub b_s1: Var,
    pub w_s2: Var,
    pub b_s2: Var,
    pub w_gate: Var,
    pub b_gate: Var,
    pub experts: Vec<ExpertVars>,
}

/// Tape handles for the head outputs.
pub struct SceneOut {
    pub scene: Var,
    /// 1 x K gate row.
    pub omega: Var,
    /// 1 x K expert estimates.
    pub expert_outputs: Var,
    /// 1 x 1 estimate.
    pub l_hat: Var,
}

/// s = W_s2^T relu(W_s1^T f + b_s1) + b_s2, rows as samples.
pub fn recognize_var(tape: &mut Tape, fused: Var, vars: &SceneVars) -> Var {
    let s1 = tape.matmul(fused, vars.w_s1);
    let s1 = tape.add_row_broadcast(s1, vars.b_s1);
    let s1 = tape.relu(s1);
    let s = tape.matmul(s1, vars.w_s2);
    tape.add_row_broadcast(s, vars.b_s2)
}

/// omega = softmax(W_gate^T s + b_gate).
pub fn gate_var(tape: &mut Tape, scene: Var, vars: &SceneVars) -> Var {
    let logits = tape.matmul(scene, vars.w_gate);
    let logits = tape.add_row_broadcast(logits, vars.b_gate);
    tape.row_softmax(logits)
}

/// E_i(x) = relu(relu(x W1 + b1) W2 + b2).
pub fn expert_var(tape: &mut Tape, input: Var, vars: ExpertVars) -> Var {
    let h = tape.matmul(input, vars.w1);
    let h = tape.add_row_broadcast(h, vars.b1);
    let h = tape.relu(h);
    let out = tape.matmul(h, vars.w2);
    let out = tape.add_row_broadcast(out, vars.b2);
    tape.relu(out)
}

/// Full head: recognize, gate, run every expert, combine.
pub fn estimate_var(tape: &mut Tape, fused: Var, vars: &SceneVars) -> SceneOut {
    let scene = recognize_var(tape, fused, vars);
    let omega = gate_var(tape, scene, vars);
    let mut outputs = expert_var(tape, fused, vars.experts[0]);
    for &e in &vars.experts[1..] {
        let out = expert_var(tape, fused, e);
        outputs = tape.concat_cols(outputs, out);
    }
    let weighted = tape.mul(omega, outputs);
    let l_hat = tape.sum(weighted);
    SceneOut {
        scene,
        omega,
        expert_outputs: outputs,
        l_hat,
    }
}

fn scene_vars(tape: &mut Tape, params: &SceneParams) -> SceneVars {
    SceneVars {
        w_s1: tape.leaf(params.w_s1.clone()),
        b_s1: tape.leaf(params.b_s1.clone()),
        w_s2: tape.leaf(params.w_s2.clone()),
        b_s2: tape.leaf(params.b_s2.clone()),
        w_gate: tape.leaf(params.w_gate.clone()),
        b_gate: tape.leaf(params.b_gate.clone()),
        experts: params
            .experts
            .iter()
            .map(|e| ExpertVars {
                w1: tape.leaf(e.w1.clone()),
                b1: tape.leaf(e.b1.clone()),
                w2: tape.leaf(e.w2.clone()),
                b2: tape.leaf(e.b2.clone()),
            })
            .collect(),
    }
}

/// Scene features for a fused embedding (1 x d').
pub fn recognize(fused: &Matrix, params: &SceneParams) -> Result<Matrix> {
    let mut tape = Tape::new();
    let f = tape.leaf(fused.clone());
    let vars = scene_vars(&mut tape, params);
    let s = recognize_var(&mut tape, f, &vars);
    Ok(tape.value(s).clone())
}

/// Gate weights for a scene feature vector (1 x d_s).
pub fn gate(scene: &Matrix, params: &SceneParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let s = tape.leaf(scene.clone());
    let vars = scene_vars(&mut tape, params);
    let w = gate_var(&mut tape, s, &vars);
    Ok(tape.value(w).data().to_vec())
}

/// Runs expert `i` (zero-based) on an input row.
pub fn expert(i: usize, input: &Matrix, params: &SceneParams) -> Result<f64> {
    if i >= params.n_experts() {
        return Err(Error::Config(format!(
            "expert index {i} out of range for {} experts",
            params.n_experts()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let vars = scene_vars(&mut tape, params);
    let out = expert_var(&mut tape, x, vars.experts[i]);
    Ok(tape.scalar_value(out))
}

/// Full estimate with all intermediates.
pub fn estimate(fused: &Matrix, params: &SceneParams) -> Result<SceneOutput> {
    let mut tape = Tape::new();
    let f = tape.leaf(fused.clone());
    let vars = scene_vars(&mut tape, params);
    let out = estimate_var(&mut tape, f, &vars);
    Ok(SceneOutput {
        scene: tape.value(out.scene).clone(),
        omega: tape.value(out.omega).data().to_vec(),
        expert_outputs: tape.value(out.expert_outputs).data().to_vec(),
        l_hat: tape.scalar_value(out.l_hat),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_matrix(rng: &mut StdRng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_params(rng: &mut StdRng, d: usize, d_s1: usize, d_s: usize, h_e: usize, k: usize) -> SceneParams {
        SceneParams {
            w_s1: rand_matrix(rng, d, d_s1),
            b_s1: rand_matrix(rng, 1, d_s1),
            w_s2: rand_matrix(rng, d_s1, d_s),
            b_s2: rand_matrix(rng, 1, d_s),
            w_gate: rand_matrix(rng, d_s, k),
            b_gate: rand_matrix(rng, 1, k),
            experts: (0..k)
                .map(|_| ExpertParams {
                    w1: rand_matrix(rng, d, h_e),
                    b1: rand_matrix(rng, 1, h_e),
                    w2: rand_matrix(rng, h_e, 1),
                    b2: rand_matrix(rng, 1, 1),
                })
                .collect(),
        }
    }

    fn zero_params(d: usize, d_s1: usize, d_s: usize, h_e: usize, k: usize) -> SceneParams {
        SceneParams {
            w_s1: Matrix::zeros(d, d_s1),
            b_s1: Matrix::zeros(1, d_s1),
            w_s2: Matrix::zeros(d_s1, d_s),
            b_s2: Matrix::zeros(1, d_s),
            w_gate: Matrix::zeros(d_s, k),
            b_gate: Matrix::zeros(1, k),
            experts: (0..k)
                .map(|_| ExpertParams {
                    w1: Matrix::zeros(d, h_e),
                    b1: Matrix::zeros(1, h_e),
                    w2: Matrix::zeros(h_e, 1),
                    b2: Matrix::zeros(1, 1),
                })
                .collect(),
        }
    }

    #[test]
    fn zero_input_zero_bias_recognizer_outputs_zero() {
        let params = zero_params(4, 3, 2, 3, 4);
        let s = recognize(&Matrix::zeros(1, 4), &params).unwrap();
        assert_eq!(s, Matrix::zeros(1, 2));
    }

    #[test]
    fn identity_recognizer_passes_nonnegative_input_through() {
        let mut params = zero_params(3, 3, 3, 3, 4);
        params.w_s1 = Matrix::identity(3);
        params.w_s2 = Matrix::identity(3);
        let f = Matrix::row(&[0.5, 2.0, 0.0]).unwrap();
        let s = recognize(&f, &params).unwrap();
        assert_eq!(s, f);
    }

    #[test]
    fn recognizer_matches_manual_two_layer_oracle() {
        let mut rng = StdRng::seed_from_u64(51);
        let params = rand_params(&mut rng, 4, 3, 2, 3, 4);
        let f = rand_matrix(&mut rng, 1, 4);
        let s = recognize(&f, &params).unwrap();

        // manual composition
        let mut hidden = vec![0.0; 3];
        for j in 0..3 {
            let mut v = params.b_s1.get(0, j);
            for t in 0..4 {
                v += f.get(0, t) * params.w_s1.get(t, j);
            }
            hidden[j] = v.max(0.0);
        }
        for j in 0..2 {
            let mut v = params.b_s2.get(0, j);
            for t in 0..3 {
                v += hidden[t] * params.w_s2.get(t, j);
            }
            assert!((s.get(0, j) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gate_is_uniform() {
        let params = zero_params(4, 3, 2, 3, 4);
        let omega = gate(&Matrix::zeros(1, 2), &params).unwrap();
        for w in omega {
            assert!((w - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_bias_matches_manual_softmax() {
        let mut params = zero_params(4, 3, 2, 3, 4);
        params.b_gate = Matrix::row(&[4.0f64.ln(), 0.0, 0.0, 0.0]).unwrap();
        let omega = gate(&Matrix::zeros(1, 2), &params).unwrap();
        assert!((omega[0] - 4.0 / 7.0).abs() < 1e-12);
        for w in &omega[1..] {
            assert!((w - 1.0 / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gate_is_a_distribution_for_any_scene() {
        let mut rng = StdRng::seed_from_u64(53);
        let params = rand_params(&mut rng, 4, 3, 2, 3, 4);
        for _ in 0..10 {
            let s = rand_matrix(&mut rng, 1, 2);
            let omega = gate(&s, &params).unwrap();
            let sum: f64 = omega.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
            assert!(omega.iter().all(|&w| w > 0.0));
        }
    }

    #[test]
    fn zero_expert_outputs_zero() {
        let params = zero_params(4, 3, 2, 3, 4);
        assert_eq!(expert(0, &Matrix::zeros(1, 4), &params).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_expert_is_relu() {
        let mut params = zero_params(1, 1, 1, 1, 1);
        params.experts[0].w1 = Matrix::row(&[1.0]).unwrap();
        params.experts[0].w2 = Matrix::row(&[1.0]).unwrap().transpose();
        for x in [-2.0, 0.0, 3.5] {
            let out = expert(0, &Matrix::row(&[x]).unwrap(), &params).unwrap();
            assert_eq!(out, x.max(0.0));
        }
    }

    #[test]
    fn expert_matches_manual_oracle() {
        let mut rng = StdRng::seed_from_u64(57);
        let params = rand_params(&mut rng, 3, 2, 2, 4, 2);
        let x = rand_matrix(&mut rng, 1, 3);
        let out = expert(1, &x, &params).unwrap();

        let e = &params.experts[1];
        let mut hidden = vec![0.0; 4];
        for j in 0..4 {
            let mut v = e.b1.get(0, j);
            for t in 0..3 {
                v += x.get(0, t) * e.w1.get(t, j);
            }
            hidden[j] = v.max(0.0);
        }
        let mut v = e.b2.get(0, 0);
        for t in 0..4 {
            v += hidden[t] * e.w2.get(t, 0);
        }
        assert!((out - v.max(0.0)).abs() < 1e-12);
    }

    #[test]
    fn expert_index_out_of_range_rejected() {
        let params = zero_params(2, 2, 2, 2, 4);
        assert!(expert(4, &Matrix::zeros(1, 2), &params).is_err());
    }

    #[test]
    fn constant_experts_make_gate_irrelevant() {
        let mut rng = StdRng::seed_from_u64(59);
        let mut params = rand_params(&mut rng, 3, 2, 2, 4, 4);
        for e in &mut params.experts {
            e.w1 = Matrix::zeros(3, 4);
            e.b1 = Matrix::zeros(1, 4);
            e.w2 = Matrix::zeros(4, 1);
            e.b2 = Matrix::from_vec(1, 1, vec![5.0]).unwrap();
        }
        let out = estimate(&rand_matrix(&mut rng, 1, 3), &params).unwrap();
        assert!((out.l_hat - 5.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_gate_selects_single_expert() {
        let mut rng = StdRng::seed_from_u64(61);
        let mut params = rand_params(&mut rng, 3, 2, 2, 4, 4);
        params.w_gate = Matrix::zeros(2, 4);
        params.b_gate = Matrix::row(&[0.0, 60.0, 0.0, 0.0]).unwrap();
        let f = rand_matrix(&mut rng, 1, 3);
        let out = estimate(&f, &params).unwrap();
        let e1 = expert(1, &f, &params).unwrap();
        assert!((out.l_hat - e1).abs() < 1e-6);
    }

    #[test]
    fn uniform_gate_averages_expert_outputs() {
        let mut params = zero_params(2, 2, 2, 2, 4);
        for (i, e) in params.experts.iter_mut().enumerate() {
            e.b2 = Matrix::from_vec(1, 1, vec![(i + 1) as f64]).unwrap();
        }
        let out = estimate(&Matrix::zeros(1, 2), &params).unwrap();
        assert_eq!(out.expert_outputs, vec![1.0, 2.0, 3.0, 4.0]);
        assert!((out.l_hat - 2.5).abs() < 1e-12);
    }

    #[test]
    fn estimate_stays_within_expert_range() {
        let mut rng = StdRng::seed_from_u64(67);
        let params = rand_params(&mut rng, 3, 2, 2, 4, 4);
        for _ in 0..20 {
            let f = rand_matrix(&mut rng, 1, 3);
            let out = estimate(&f, &params).unwrap();
            let lo = out.expert_outputs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = out.expert_outputs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(out.l_hat >= lo - 1e-10 && out.l_hat <= hi + 1e-10);
            assert!(out.l_hat >= 0.0);
            let sum: f64 = out.omega.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
        }
    }
}
