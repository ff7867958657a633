//! Per-scale graph attention feature learning and mean-pooled graph
//! embeddings.
//!
//! One single-head attention layer per scale: embed node features, score
//! each directed neighbor pair with a shared attention vector, normalize
//! scores over the neighborhood, aggregate, then mean-pool to a graph
//! embedding.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Tape, Var};

/// Standard GAT convention for the scoring nonlinearity.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Entries of a coarsened adjacency above this count as edges.
pub const NEIGHBOR_THRESHOLD: f64 = 1e-6;

/// Parameters of one attention level.
#[derive(Clone, Debug)]
pub struct GatParams {
    /// (d+2) x h node embedding.
    pub w_embed: Matrix,
    /// h x d' transform used inside the attention scores and aggregation.
    pub w_attn: Matrix,
    /// 2d' x 1 attention vector.
    pub a: Matrix,
}

impl GatParams {
    pub fn embed_dim(&self) -> usize {
        self.w_embed.cols()
    }

    pub fn attn_dim(&self) -> usize {
        self.w_attn.cols()
    }
}

/// Per-node neighbor index lists derived from a (possibly weighted)
/// adjacency. Self-loops are always injected, so no neighborhood is empty.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    lists: Vec<Vec<usize>>,
}

impl Neighborhood {
    pub fn from_adjacency(a_c: &Matrix) -> Self {
        let k = a_c.rows();
        let lists = (0..k)
            .map(|i| {
                (0..k)
                    .filter(|&j| j == i || a_c.get(i, j) > NEIGHBOR_THRESHOLD)
                    .collect()
            })
            .collect();
        Neighborhood { lists }
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.lists[i]
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    /// Row-major boolean mask for masked softmax.
    pub fn mask(&self) -> Vec<bool> {
        let k = self.lists.len();
        let mut mask = vec![false; k * k];
        for (i, list) in self.lists.iter().enumerate() {
            for &j in list {
                mask[i * k + j] = true;
            }
        }
        mask
    }
}

/// Group of tape vars for one level's parameters.
#[derive(Clone, Copy)]
pub struct GatVars {
    pub w_embed: Var,
    pub w_attn: Var,
    pub a: Var,
}

/// Output handles of one attention level on the tape.
pub struct GatLevelOut {
    /// k x d' aggregated node features.
    pub node_features: Var,
    /// 1 x d' pooled graph embedding.
    pub pooled: Var,
    /// k x k attention coefficients (zero outside neighborhoods).
    pub alpha: Var,
}

/// Runs one attention level on the tape. The neighborhood mask is a
/// function of the coarsened adjacency values, not a differentiable input.
pub fn gat_level_var(tape: &mut Tape, x_c: Var, a_c: Var, params: GatVars) -> GatLevelOut {
    let k = tape.value(x_c).rows();
    let d_attn = tape.value(params.w_attn).cols();
    let nbh = Neighborhood::from_adjacency(tape.value(a_c));
    let mask = nbh.mask();

    let h = tape.matmul(x_c, params.w_embed);
    let z = tape.matmul(h, params.w_attn);

    // a^T [z_i ; z_j] = z_i . a_src + z_j . a_dst, via constant selectors
    let mut sel_src = Matrix::zeros(2 * d_attn, d_attn);
    let mut sel_dst = Matrix::zeros(2 * d_attn, d_attn);
    for i in 0..d_attn {
        sel_src.set(i, i, 1.0);
        sel_dst.set(d_attn + i, i, 1.0);
    }
    let sel_src = tape.leaf(sel_src.transpose());
    let sel_dst = tape.leaf(sel_dst.transpose());
    let a_src = tape.matmul(sel_src, params.a);
    let a_dst = tape.matmul(sel_dst, params.a);
    let u = tape.matmul(z, a_src);
    let v = tape.matmul(z, a_dst);

    let ones_row = tape.leaf(Matrix::filled(1, k, 1.0));
    let u_cols = tape.matmul(u, ones_row);
    let v_cols = tape.matmul(v, ones_row);
    let v_rows = tape.transpose(v_cols);
    let scores = tape.add(u_cols, v_rows);
    let scores = tape.leaky_relu(scores, LEAKY_SLOPE);

    let alpha = tape.masked_row_softmax(scores, &mask);
    let agg = tape.matmul(alpha, z);
    let node_features = tape.elu(agg);
    let pooled = tape.mean_pool_rows(node_features);
    GatLevelOut {
        node_features,
        pooled,
        alpha,
    }
}

/// H = X_c * W_embed.
pub fn embed(x_c: &Matrix, params: &GatParams) -> Result<Matrix> {
    x_c.matmul(&params.w_embed).map_err(Error::from)
}

/// Softmax-normalized attention coefficients as a dense k x k matrix with
/// zeros outside each neighborhood. Row sums over neighborhoods are 1.
pub fn attention_scores(h: &Matrix, params: &GatParams, nbh: &Neighborhood) -> Result<Matrix> {
    let z = h.matmul(&params.w_attn)?;
    let d_attn = params.attn_dim();
    let k = z.rows();
    let mut alpha = Matrix::zeros(k, k);
    for i in 0..k {
        let neighbors = nbh.neighbors(i);
        let mut scores: Vec<f64> = neighbors
            .iter()
            .map(|&j| {
                let mut e = 0.0;
                for t in 0..d_attn {
                    e += params.a.get(t, 0) * z.get(i, t);
                    e += params.a.get(d_attn + t, 0) * z.get(j, t);
                }
                if e >= 0.0 {
                    e
                } else {
                    LEAKY_SLOPE * e
                }
            })
            .collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in &mut scores {
            *s = (*s - max).exp();
            sum += *s;
        }
        for (&j, s) in neighbors.iter().zip(&scores) {
            alpha.set(i, j, s / sum);
        }
    }
    Ok(alpha)
}

/// H' = ELU(alpha * H * W_attn).
pub fn aggregate(h: &Matrix, alpha: &Matrix, params: &GatParams) -> Result<Matrix> {
    let z = h.matmul(&params.w_attn)?;
    let mut out = alpha.matmul(&z)?;
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = v.exp() - 1.0;
        }
    }
    Ok(out)
}

/// Column-mean graph embedding, 1 x d'.
pub fn pool(node_features: &Matrix) -> Matrix {
    node_features.col_mean()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn rand_matrix(rng: &mut StdRng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn rand_params(rng: &mut StdRng, d_in: usize, h: usize, d_attn: usize) -> GatParams {
        GatParams {
            w_embed: rand_matrix(rng, d_in, h),
            w_attn: rand_matrix(rng, h, d_attn),
            a: rand_matrix(rng, 2 * d_attn, 1),
        }
    }

    #[test]
    fn identity_embed_is_noop() {
        let x = Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let params = GatParams {
            w_embed: Matrix::identity(2),
            w_attn: Matrix::identity(2),
            a: Matrix::zeros(4, 1),
        };
        assert_eq!(embed(&x, &params).unwrap(), x);
        assert_eq!(embed(&Matrix::zeros(2, 2), &params).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn embed_matches_manual_matmul() {
        let mut rng = StdRng::seed_from_u64(5);
        let x = rand_matrix(&mut rng, 3, 9);
        let params = rand_params(&mut rng, 9, 4, 4);
        let h = embed(&x, &params).unwrap();
        for r in 0..3 {
            for c in 0..4 {
                let mut expect = 0.0;
                for t in 0..9 {
                    expect += x.get(r, t) * params.w_embed.get(t, c);
                }
                assert!((h.get(r, c) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_attention_vector_gives_uniform_weights() {
        let mut rng = StdRng::seed_from_u64(9);
        let mut params = rand_params(&mut rng, 3, 4, 4);
        params.a = Matrix::zeros(8, 1);
        let x = rand_matrix(&mut rng, 3, 3);
        let h = embed(&x, &params).unwrap();
        // fully connected
        let a_c = Matrix::filled(3, 3, 1.0);
        let nbh = Neighborhood::from_adjacency(&a_c);
        let alpha = attention_scores(&h, &params, &nbh).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((alpha.get(i, j) - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_node_attention_is_one() {
        let mut rng = StdRng::seed_from_u64(13);
        let params = rand_params(&mut rng, 2, 3, 3);
        let h = rand_matrix(&mut rng, 1, 2);
        let h = embed(&h, &params).unwrap();
        let nbh = Neighborhood::from_adjacency(&Matrix::zeros(1, 1));
        let alpha = attention_scores(&h, &params, &nbh).unwrap();
        assert!((alpha.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mutual_edge_identical_features_gives_half() {
        let mut rng = StdRng::seed_from_u64(17);
        let params = rand_params(&mut rng, 2, 3, 3);
        let row = vec![0.7, -0.3];
        let x = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let h = embed(&x, &params).unwrap();
        let a_c = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let nbh = Neighborhood::from_adjacency(&a_c);
        let alpha = attention_scores(&h, &params, &nbh).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((alpha.get(i, j) - 0.5).abs() < 1e-12, "alpha[{i}][{j}]");
            }
        }
    }

    #[test]
    fn neighborhoods_inject_self_loops() {
        let a_c = Matrix::zeros(3, 3);
        let nbh = Neighborhood::from_adjacency(&a_c);
        for i in 0..3 {
            assert_eq!(nbh.neighbors(i), &[i]);
        }
    }

    #[test]
    fn single_node_aggregate_is_elu_transform() {
        let mut rng = StdRng::seed_from_u64(23);
        let params = rand_params(&mut rng, 2, 3, 3);
        let x = rand_matrix(&mut rng, 1, 2);
        let h = embed(&x, &params).unwrap();
        let alpha = Matrix::identity(1);
        let out = aggregate(&h, &alpha, &params).unwrap();
        let z = h.matmul(&params.w_attn).unwrap();
        for c in 0..3 {
            let v = z.get(0, c);
            let expect = if v > 0.0 { v } else { v.exp() - 1.0 };
            assert!((out.get(0, c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_alpha_identical_neighbors_is_row_constant() {
        let mut rng = StdRng::seed_from_u64(29);
        let params = rand_params(&mut rng, 2, 3, 3);
        let row = vec![0.4, 1.1];
        let x = Matrix::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let h = embed(&x, &params).unwrap();
        let alpha = Matrix::filled(3, 3, 1.0 / 3.0);
        let out = aggregate(&h, &alpha, &params).unwrap();
        for i in 1..3 {
            for c in 0..3 {
                assert!((out.get(i, c) - out.get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tape_level_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(31);
        let params = rand_params(&mut rng, 4, 5, 3);
        let x = rand_matrix(&mut rng, 3, 4);
        let mut a_c = Matrix::zeros(3, 3);
        a_c.set(0, 1, 0.8);
        a_c.set(1, 2, 0.4);
        a_c.set(2, 0, 1.5);

        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let av = tape.leaf(a_c.clone());
        let vars = GatVars {
            w_embed: tape.leaf(params.w_embed.clone()),
            w_attn: tape.leaf(params.w_attn.clone()),
            a: tape.leaf(params.a.clone()),
        };
        let out = gat_level_var(&mut tape, xv, av, vars);

        let h = embed(&x, &params).unwrap();
        let nbh = Neighborhood::from_adjacency(&a_c);
        let alpha = attention_scores(&h, &params, &nbh).unwrap();
        let dense = aggregate(&h, &alpha, &params).unwrap();
        let pooled = pool(&dense);

        for (a, b) in tape.value(out.node_features).data().iter().zip(dense.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tape.value(out.pooled).data().iter().zip(pooled.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tape.value(out.alpha).data().iter().zip(alpha.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_examples() {
        let single = Matrix::row(&[2.0, -1.0]).unwrap();
        assert_eq!(pool(&single), single);

        let sym = Matrix::from_rows(&[vec![1.0, -3.0], vec![-1.0, 3.0]]).unwrap();
        assert_eq!(pool(&sym), Matrix::zeros(1, 2));

        let m = Matrix::from_rows(&[vec![1.0, 3.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(pool(&m).data(), &[2.0, 4.0]);
    }

    #[test]
    fn attention_rows_sum_to_one_over_neighborhoods() {
        let mut rng = StdRng::seed_from_u64(37);
        let params = rand_params(&mut rng, 4, 5, 3);
        let x = rand_matrix(&mut rng, 5, 4);
        let mut a_c = Matrix::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                if i != j && rng.gen_bool(0.4) {
                    a_c.set(i, j, rng.gen_range(0.1..2.0));
                }
            }
        }
        let h = embed(&x, &params).unwrap();
        let nbh = Neighborhood::from_adjacency(&a_c);
        let alpha = attention_scores(&h, &params, &nbh).unwrap();
        for i in 0..5 {
            let s: f64 = (0..5).map(|j| alpha.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn full_level_gradients_pass_grad_check() {
        let mut rng = StdRng::seed_from_u64(41);
        let x = rand_matrix(&mut rng, 4, 3);
        let mut a_c = Matrix::zeros(4, 4);
        for i in 0..4 {
            for j in 0..4 {
                if i != j && rng.gen_bool(0.5) {
                    a_c.set(i, j, 1.0);
                }
            }
        }
        let params = rand_params(&mut rng, 3, 4, 3);
        let err = grad_check(
            |tape, vars| {
                let xv = tape.leaf(x.clone());
                let av = tape.leaf(a_c.clone());
                let out = gat_level_var(
                    tape,
                    xv,
                    av,
                    GatVars {
                        w_embed: vars[0],
                        w_attn: vars[1],
                        a: vars[2],
                    },
                );
                let sq = tape.mul(out.pooled, out.pooled);
                tape.sum(sq)
            },
            &[params.w_embed, params.w_attn, params.a],
            1e-6,
        )
        .unwrap();
        assert!(err <= 1e-4, "err = {err}");
    }

    #[test]
    fn permutation_leaves_pooled_embedding_unchanged() {
        let mut rng = StdRng::seed_from_u64(43);
        let n = 5;
        let x = rand_matrix(&mut rng, n, 4);
        let mut a_c = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.4) {
                    a_c.set(i, j, 1.0);
                }
            }
        }
        let params = rand_params(&mut rng, 4, 5, 3);

        let run = |x: &Matrix, a: &Matrix| {
            let h = embed(x, &params).unwrap();
            let nbh = Neighborhood::from_adjacency(a);
            let alpha = attention_scores(&h, &params, &nbh).unwrap();
            pool(&aggregate(&h, &alpha, &params).unwrap())
        };
        let base = run(&x, &a_c);

        let perm = [2usize, 0, 4, 1, 3];
        let mut xp = Matrix::zeros(n, 4);
        let mut ap = Matrix::zeros(n, n);
        for i in 0..n {
            for c in 0..4 {
                xp.set(i, c, x.get(perm[i], c));
            }
            for j in 0..n {
                ap.set(i, j, a_c.get(perm[i], perm[j]));
            }
        }
        let permuted = run(&xp, &ap);
        for (a, b) in base.data().iter().zip(permuted.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
