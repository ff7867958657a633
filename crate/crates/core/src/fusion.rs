//! Adaptive weighting and combination of the per-scale graph embeddings.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Learnable scoring parameters: one scalar logit per scale embedding.
#[derive(Clone, Debug)]
pub struct FusionParams {
    /// 1 x d' scoring vector.
    pub w_beta: Matrix,
    /// 1 x 1 bias.
    pub b_beta: Matrix,
}

/// Fusion weights and the fused representation.
#[derive(Clone, Debug)]
pub struct FusedState {
    /// Positive, sums to 1.
    pub beta: Vec<f64>,
    /// 1 x d' convex combination of the level embeddings.
    pub fused: Matrix,
}

/// Outputs of the tape-level fusion step.
pub struct FusionOut {
    /// 1 x L weight row.
    pub beta: Var,
    /// 1 x d' fused embedding.
    pub fused: Var,
}

/// beta = softmax_l(w_beta . h_l + b_beta); fused = sum_l beta_l h_l.
pub fn fuse_var(tape: &mut Tape, embeddings: &[Var], w_beta: Var, b_beta: Var) -> FusionOut {
    assert!(!embeddings.is_empty(), "fusion requires at least one level");
    let w_col = tape.transpose(w_beta);
    let mut scores = Vec::with_capacity(embeddings.len());
    for &h in embeddings {
        let s = tape.matmul(h, w_col);
        let s = tape.add(s, b_beta);
        scores.push(s);
    }
    let mut logits = scores[0];
    for &s in &scores[1..] {
        logits = tape.concat_cols(logits, s);
    }
    let beta = tape.row_softmax(logits);
    let mut stacked = embeddings[0];
    for &h in &embeddings[1..] {
        stacked = tape.concat_rows(stacked, h);
    }
    let fused = tape.matmul(beta, stacked);
    FusionOut { beta, fused }
}

/// Uniform-weight combination used by the fusion-ablated model.
pub fn fuse_uniform_var(tape: &mut Tape, embeddings: &[Var]) -> FusionOut {
    assert!(!embeddings.is_empty(), "fusion requires at least one level");
    let l = embeddings.len();
    let beta = tape.leaf(Matrix::filled(1, l, 1.0 / l as f64));
    let mut stacked = embeddings[0];
    for &h in &embeddings[1..] {
        stacked = tape.concat_rows(stacked, h);
    }
    let fused = tape.matmul(beta, stacked);
    FusionOut { beta, fused }
}

/// Plain-value fusion of level embeddings (each 1 x d').
pub fn fuse(embeddings: &[Matrix], params: &FusionParams) -> Result<FusedState> {
    if embeddings.is_empty() {
        return Err(Error::Config("fusion requires at least one level".into()));
    }
    let d = embeddings[0].cols();
    for h in embeddings {
        if h.shape() != (1, d) {
            return Err(Error::Numerics(crate::error::NumericsError::ShapeMismatch {
                op: "fuse",
                lhs: (1, d),
                rhs: h.shape(),
            }));
        }
    }
    if params.w_beta.shape() != (1, d) {
        return Err(Error::Numerics(crate::error::NumericsError::ShapeMismatch {
            op: "fuse",
            lhs: (1, d),
            rhs: params.w_beta.shape(),
        }));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = embeddings.iter().map(|h| tape.leaf(h.clone())).collect();
    let w = tape.leaf(params.w_beta.clone());
    let b = tape.leaf(params.b_beta.clone());
    let out = fuse_var(&mut tape, &vars, w, b);
    Ok(FusedState {
        beta: tape.value(out.beta).data().to_vec(),
        fused: tape.value(out.fused).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_row(rng: &mut StdRng, d: usize) -> Matrix {
        Matrix::from_vec(1, d, (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn identical_embeddings_fuse_to_themselves() {
        let mut rng = StdRng::seed_from_u64(1);
        let h = rand_row(&mut rng, 6);
        let params = FusionParams {
            w_beta: rand_row(&mut rng, 6),
            b_beta: Matrix::zeros(1, 1),
        };
        let out = fuse(&[h.clone(), h.clone(), h.clone()], &params).unwrap();
        for b in &out.beta {
            assert!((b - 1.0 / 3.0).abs() < 1e-12);
        }
        for (a, b) in out.fused.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_uniform_beta() {
        let mut rng = StdRng::seed_from_u64(2);
        let hs = vec![rand_row(&mut rng, 4), rand_row(&mut rng, 4), rand_row(&mut rng, 4)];
        let params = FusionParams {
            w_beta: Matrix::zeros(1, 4),
            b_beta: Matrix::from_vec(1, 1, vec![0.7]).unwrap(),
        };
        let out = fuse(&hs, &params).unwrap();
        for b in &out.beta {
            assert!((b - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn manual_softmax_scores() {
        // Logits (ln 2, ln 1, ln 1) -> beta (0.5, 0.25, 0.25).
        let h1 = Matrix::row(&[2.0f64.ln()]).unwrap();
        let h2 = Matrix::row(&[0.0]).unwrap();
        let h3 = Matrix::row(&[0.0]).unwrap();
        let params = FusionParams {
            w_beta: Matrix::row(&[1.0]).unwrap(),
            b_beta: Matrix::zeros(1, 1),
        };
        let out = fuse(&[h1.clone(), h2.clone(), h3.clone()], &params).unwrap();
        assert!((out.beta[0] - 0.5).abs() < 1e-12);
        assert!((out.beta[1] - 0.25).abs() < 1e-12);
        assert!((out.beta[2] - 0.25).abs() < 1e-12);
        let expect = 0.5 * h1.get(0, 0) + 0.25 * h2.get(0, 0) + 0.25 * h3.get(0, 0);
        assert!((out.fused.get(0, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn fused_stays_in_convex_hull() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let hs = vec![rand_row(&mut rng, 5), rand_row(&mut rng, 5), rand_row(&mut rng, 5)];
            let params = FusionParams {
                w_beta: rand_row(&mut rng, 5),
                b_beta: Matrix::from_vec(1, 1, vec![rng.gen_range(-1.0..1.0)]).unwrap(),
            };
            let out = fuse(&hs, &params).unwrap();
            let sum: f64 = out.beta.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
            assert!(out.beta.iter().all(|&b| b > 0.0 && b < 1.0));
            for c in 0..5 {
                let lo = hs.iter().map(|h| h.get(0, c)).fold(f64::INFINITY, f64::min);
                let hi = hs.iter().map(|h| h.get(0, c)).fold(f64::NEG_INFINITY, f64::max);
                let v = out.fused.get(0, c);
                assert!(v >= lo - 1e-10 && v <= hi + 1e-10);
            }
        }
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let h1 = Matrix::row(&[1.0, 2.0]).unwrap();
        let h2 = Matrix::row(&[1.0]).unwrap();
        let params = FusionParams {
            w_beta: Matrix::row(&[1.0, 1.0]).unwrap(),
            b_beta: Matrix::zeros(1, 1),
        };
        assert!(fuse(&[h1, h2], &params).is_err());
    }

    #[test]
    fn fusion_gradients_pass_grad_check() {
        let mut rng = StdRng::seed_from_u64(4);
        let hs: Vec<Matrix> = (0..3).map(|_| rand_row(&mut rng, 5)).collect();
        let w = rand_row(&mut rng, 5);
        let b = Matrix::from_vec(1, 1, vec![0.2]).unwrap();
        let err = grad_check(
            |tape, vars| {
                let embeddings: Vec<Var> = hs.iter().map(|h| tape.leaf(h.clone())).collect();
                let out = fuse_var(tape, &embeddings, vars[0], vars[1]);
                let sq = tape.mul(out.fused, out.fused);
                tape.sum(sq)
            },
            &[w, b],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }

    #[test]
    fn uniform_fusion_averages() {
        let mut tape = Tape::new();
        let h1 = tape.leaf(Matrix::row(&[2.0, 4.0]).unwrap());
        let h2 = tape.leaf(Matrix::row(&[4.0, 8.0]).unwrap());
        let out = fuse_uniform_var(&mut tape, &[h1, h2]);
        assert_eq!(tape.value(out.fused).data(), &[3.0, 6.0]);
        assert_eq!(tape.value(out.beta).data(), &[0.5, 0.5]);
    }
}
