//! Tensor product representations over Hadamard role bases.
//!
//! A sequence of filler vectors is stored as `S = Σ fᵢ ⊗ uᵢ`, where the
//! roles `uᵢ` are columns of a normalized Hadamard matrix. Because the
//! roles are exactly orthonormal, `S·uⱼ` recovers filler `j` to rounding
//! error, and nearest-neighbor lookup against the embedding table turns
//! that back into a token id.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{matvec, outer, ElemOp, Tensor};

/// Sylvester–Hadamard matrix of order 2^k, entries exactly ±1.
///
/// Built by the doubling recursion `H_{2n} = [[H, H], [H, −H]]`. All
/// entries and all inner products are small integers, so `H·Hᵀ = 2^k·I`
/// holds exactly in floating point.
pub fn sylvester_hadamard(k: u32) -> Tensor {
    let mut h = vec![1.0f64];
    let mut n = 1usize;
    for _ in 0..k {
        let m = 2 * n;
        let mut next = vec![0.0f64; m * m];
        for i in 0..n {
            for j in 0..n {
                let v = h[i * n + j];
                next[i * m + j] = v;
                next[i * m + (j + n)] = v;
                next[(i + n) * m + j] = v;
                next[(i + n) * m + (j + n)] = -v;
            }
        }
        h = next;
        n = m;
    }
    Tensor::new(vec![n, n], h).expect("square buffer")
}

/// Orthonormal role basis `U = H/√d` for a `d×d` Hadamard `H`.
#[derive(Clone, Debug)]
pub struct RoleBasis {
    u: Tensor,
    d: usize,
}

impl RoleBasis {
    /// Normalizes a ±1 Hadamard matrix into an orthonormal basis.
    ///
    /// Rejects anything that is not square, not ±1-valued, or whose rows
    /// are not mutually orthogonal (`H·Hᵀ ≠ d·I`).
    pub fn normalize(h: &Tensor) -> Result<RoleBasis> {
        if h.rank() != 2 || h.shape()[0] != h.shape()[1] {
            return Err(Error::Validation(format!(
                "role basis requires a square matrix, got shape {:?}",
                h.shape()
            )));
        }
        let d = h.shape()[0];
        if h.data().iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Validation("Hadamard entries must be ±1".into()));
        }
        // Integer arithmetic throughout, so the check can be exact.
        for i in 0..d {
            for j in 0..d {
                let dot: f64 = (0..d).map(|l| h.data()[i * d + l] * h.data()[j * d + l]).sum();
                let want = if i == j { d as f64 } else { 0.0 };
                if dot != want {
                    return Err(Error::Validation(format!(
                        "not a Hadamard matrix: rows {i} and {j} have product {dot}"
                    )));
                }
            }
        }
        let scale = 1.0 / (d as f64).sqrt();
        Ok(RoleBasis { u: h.map(|v| v * scale), d })
    }

    /// Sylvester basis of dimension `d`; `d` must be a power of two.
    pub fn sylvester(d: usize) -> Result<RoleBasis> {
        if d == 0 || !d.is_power_of_two() {
            return Err(Error::Validation(format!(
                "role dimension must be a power of two, got {d}"
            )));
        }
        RoleBasis::normalize(&sylvester_hadamard(d.trailing_zeros()))
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// The full `d×d` basis matrix `U`.
    pub fn matrix(&self) -> &Tensor {
        &self.u
    }

    /// Role vector for position `t` (column `t` of `U`).
    pub fn role(&self, t: usize) -> Result<Tensor> {
        if t >= self.d {
            return Err(Error::Capacity { requested: t, capacity: self.d });
        }
        self.u.col(t)
    }
}

/// A bound structure `S ∈ R^{e×d}`: sum of filler ⊗ role outer products.
#[derive(Clone, Debug, PartialEq)]
pub struct Tpr {
    s: Tensor,
}

impl Tpr {
    /// The empty structure: an all-zero matrix.
    pub fn zero(e: usize, d: usize) -> Result<Tpr> {
        Ok(Tpr { s: Tensor::new(vec![e, d], vec![0.0; e * d])? })
    }

    /// Wraps an existing `e×d` matrix.
    pub fn from_matrix(s: Tensor) -> Result<Tpr> {
        if s.rank() != 2 {
            return Err(Error::Rank { op: "tpr", expected: "a matrix", got: s.shape().to_vec() });
        }
        Ok(Tpr { s })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.s
    }

    pub fn into_matrix(self) -> Tensor {
        self.s
    }

    pub fn filler_dim(&self) -> usize {
        self.s.shape()[0]
    }

    pub fn role_dim(&self) -> usize {
        self.s.shape()[1]
    }

    /// `self + x ⊗ U[:,t]`: stores `x` at position role `t`.
    pub fn accumulate(&self, x: &Tensor, t: usize, basis: &RoleBasis) -> Result<Tpr> {
        if basis.dim() != self.role_dim() {
            return Err(Error::Shape {
                op: "accumulate",
                detail: format!(
                    "basis dimension {} does not match TPR role dimension {}",
                    basis.dim(),
                    self.role_dim()
                ),
            });
        }
        if x.rank() != 1 || x.numel() != self.filler_dim() {
            return Err(Error::Shape {
                op: "accumulate",
                detail: format!(
                    "filler shape {:?} does not match filler dimension {}",
                    x.shape(),
                    self.filler_dim()
                ),
            });
        }
        let role = basis.role(t)?;
        let bound = outer(x, &role)?;
        Ok(Tpr { s: crate::tensor::elementwise(&self.s, &bound, ElemOp::Add)? })
    }

    /// Retrieves the filler stored at role `j`: `S·U[:,j]`.
    pub fn unbind(&self, j: usize, basis: &RoleBasis) -> Result<Tensor> {
        if j >= basis.dim() {
            return Err(Error::Index { index: j, len: basis.dim() });
        }
        if basis.dim() != self.role_dim() {
            return Err(Error::Shape {
                op: "unbind",
                detail: format!(
                    "basis dimension {} does not match TPR role dimension {}",
                    basis.dim(),
                    self.role_dim()
                ),
            });
        }
        matvec(&self.s, &basis.role(j)?)
    }
}

/// Binds a sequence of filler vectors of dimension `e` at positions 0..n.
///
/// The binding capacity is the role dimension; longer sequences are
/// rejected because reusing a role silently corrupts every retrieval.
pub fn bind(e: usize, fillers: &[Tensor], basis: &RoleBasis) -> Result<Tpr> {
    if fillers.len() > basis.dim() {
        return Err(Error::Capacity { requested: fillers.len() - 1, capacity: basis.dim() });
    }
    let mut s = Tpr::zero(e, basis.dim())?;
    for (t, f) in fillers.iter().enumerate() {
        s = s.accumulate(f, t, basis)?;
    }
    Ok(s)
}

/// Index of the embedding column closest to `v` in Euclidean distance.
///
/// Ties go to the lowest index.
pub fn retrieve_nearest(v: &Tensor, embeddings: &Tensor) -> Result<usize> {
    if embeddings.rank() != 2 {
        return Err(Error::Rank {
            op: "retrieve_nearest",
            expected: "an e x V embedding matrix",
            got: embeddings.shape().to_vec(),
        });
    }
    let (e, vocab) = (embeddings.shape()[0], embeddings.shape()[1]);
    if v.rank() != 1 || v.numel() != e {
        return Err(Error::Shape {
            op: "retrieve_nearest",
            detail: format!("query shape {:?} vs embedding rows {e}", v.shape()),
        });
    }
    // Accumulate per-column distances row by row so the embedding
    // matrix streams sequentially instead of striding by `vocab`.
    let mut d2 = vec![0.0; vocab];
    for i in 0..e {
        let vi = v.data()[i];
        let row = &embeddings.data()[i * vocab..(i + 1) * vocab];
        for (acc, &x) in d2.iter_mut().zip(row) {
            let diff = vi - x;
            *acc += diff * diff;
        }
    }
    let mut best = 0usize;
    let mut best_d2 = f64::INFINITY;
    for (j, &dist) in d2.iter().enumerate() {
        // Strict improvement only, so the first of any tied pair wins.
        if dist < best_d2 {
            best_d2 = dist;
            best = j;
        }
    }
    Ok(best)
}

/// Outcome of repeated bind → unbind → retrieve trials.
#[derive(Clone, Copy, Debug)]
pub struct RetrievalReport {
    pub trials: usize,
    /// Trials in which every position retrieved its original token id.
    pub correct: usize,
}

impl RetrievalReport {
    pub fn accuracy(&self) -> f64 {
        if self.trials == 0 { 0.0 } else { self.correct as f64 / self.trials as f64 }
    }
}

/// Binds `n` random token embeddings, unbinds all roles, and retrieves
/// each against the table; a trial counts as correct only if every
/// position comes back as the original id.
pub fn retrieval_experiment<R: Rng>(
    embeddings: &Tensor,
    basis: &RoleBasis,
    n: usize,
    trials: usize,
    rng: &mut R,
) -> Result<RetrievalReport> {
    if embeddings.rank() != 2 {
        return Err(Error::Rank {
            op: "retrieval_experiment",
            expected: "an e x V embedding matrix",
            got: embeddings.shape().to_vec(),
        });
    }
    let (e, vocab) = (embeddings.shape()[0], embeddings.shape()[1]);
    if n > basis.dim() {
        return Err(Error::Capacity { requested: n - 1, capacity: basis.dim() });
    }
    let mut correct = 0usize;
    for _ in 0..trials {
        let ids: Vec<usize> = (0..n).map(|_| rng.random_range(0..vocab)).collect();
        let fillers: Vec<Tensor> =
            ids.iter().map(|&id| embeddings.col(id)).collect::<Result<_>>()?;
        let s = bind(e, &fillers, basis)?;
        let ok = ids.iter().enumerate().all(|(t, &id)| {
            s.unbind(t, basis)
                .and_then(|f| retrieve_nearest(&f, embeddings))
                .map(|got| got == id)
                .unwrap_or(false)
        });
        if ok {
            correct += 1;
        }
    }
    Ok(RetrievalReport { trials, correct })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hadamard_base_cases() {
        assert_eq!(sylvester_hadamard(0).data(), &[1.0]);
        assert_eq!(sylvester_hadamard(1).data(), &[1.0, 1.0, 1.0, -1.0]);
    }

    #[test]
    fn hadamard_32_self_product_is_exactly_scaled_identity() {
        let h = sylvester_hadamard(5);
        let prod = crate::tensor::matmul(&h, &h.transpose().unwrap()).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let want = if i == j { 32.0 } else { 0.0 };
                assert_eq!(prod.at2(i, j), want, "exact at ({i},{j})");
            }
        }
    }

    #[test]
    fn normalized_basis_columns_are_unit() {
        let b = RoleBasis::sylvester(2).unwrap();
        for j in 0..2 {
            let c = b.role(j).unwrap();
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_basis_is_orthonormal() {
        let b = RoleBasis::sylvester(32).unwrap();
        let ut_u =
            crate::tensor::matmul(&b.matrix().transpose().unwrap(), b.matrix()).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((ut_u.at2(i, j) - want).abs() < 1e-12, "UᵀU deviates at ({i},{j})");
            }
        }
    }

    #[test]
    fn perturbed_hadamard_is_rejected() {
        let mut h = sylvester_hadamard(2);
        h.data_mut()[5] = -h.data()[5];
        assert!(matches!(RoleBasis::normalize(&h), Err(Error::Validation(_))));
        let mut bad_entries = sylvester_hadamard(2);
        bad_entries.data_mut()[0] = 0.5;
        assert!(matches!(RoleBasis::normalize(&bad_entries), Err(Error::Validation(_))));
    }

    #[test]
    fn non_power_of_two_dimension_rejected() {
        assert!(matches!(RoleBasis::sylvester(12), Err(Error::Validation(_))));
        assert!(matches!(RoleBasis::sylvester(0), Err(Error::Validation(_))));
    }

    #[test]
    fn empty_bind_is_zero_matrix() {
        let b = RoleBasis::sylvester(4).unwrap();
        let s = bind(3, &[], &b).unwrap();
        assert!(s.matrix().data().iter().all(|&v| v == 0.0));
        assert_eq!(s.matrix().shape(), &[3, 4]);
    }

    #[test]
    fn single_filler_binds_to_outer_product() {
        let b = RoleBasis::sylvester(4).unwrap();
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let s = bind(3, std::slice::from_ref(&x), &b).unwrap();
        let expect = outer(&x, &b.role(0).unwrap()).unwrap();
        assert_eq!(s.matrix(), &expect);
        let back = s.unbind(0, &b).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn over_capacity_bind_rejected() {
        let b = RoleBasis::sylvester(4).unwrap();
        let fillers: Vec<Tensor> = (0..5).map(|i| Tensor::vector(vec![i as f64; 3])).collect();
        assert!(matches!(
            bind(3, &fillers, &b),
            Err(Error::Capacity { requested: 4, capacity: 4 })
        ));
    }

    #[test]
    fn full_capacity_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = RoleBasis::sylvester(32).unwrap();
        let fillers: Vec<Tensor> =
            (0..32).map(|_| Tensor::uniform(&[50], -1.0, 1.0, &mut rng)).collect();
        let s = bind(50, &fillers, &b).unwrap();
        for (t, f) in fillers.iter().enumerate() {
            let back = s.unbind(t, &b).unwrap();
            assert!(back.max_abs_diff(f) < 1e-10, "role {t} deviates by {}", back.max_abs_diff(f));
        }
    }

    #[test]
    fn unbind_from_zero_or_unused_role_is_zero() {
        let b = RoleBasis::sylvester(8).unwrap();
        let zero = Tpr::zero(5, 8).unwrap();
        assert!(zero.unbind(3, &b).unwrap().data().iter().all(|&v| v == 0.0));

        let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let s = bind(5, std::slice::from_ref(&x), &b).unwrap();
        let unused = s.unbind(6, &b).unwrap();
        assert!(unused.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn unbind_index_out_of_range() {
        let b = RoleBasis::sylvester(4).unwrap();
        let s = Tpr::zero(2, 4).unwrap();
        assert!(matches!(s.unbind(4, &b), Err(Error::Index { index: 4, len: 4 })));
    }

    #[test]
    fn accumulation_order_does_not_matter() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = RoleBasis::sylvester(8).unwrap();
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::uniform(&[4], -1.0, 1.0, &mut rng)).collect();
        let fwd = Tpr::zero(4, 8)
            .unwrap()
            .accumulate(&xs[0], 0, &b)
            .unwrap()
            .accumulate(&xs[1], 1, &b)
            .unwrap()
            .accumulate(&xs[2], 2, &b)
            .unwrap();
        let rev = Tpr::zero(4, 8)
            .unwrap()
            .accumulate(&xs[2], 2, &b)
            .unwrap()
            .accumulate(&xs[1], 1, &b)
            .unwrap()
            .accumulate(&xs[0], 0, &b)
            .unwrap();
        assert!(fwd.matrix().max_abs_diff(rev.matrix()) < 1e-12);
    }

    #[test]
    fn accumulate_past_capacity_rejected() {
        let b = RoleBasis::sylvester(4).unwrap();
        let s = Tpr::zero(2, 4).unwrap();
        let x = Tensor::vector(vec![1.0, 1.0]);
        assert!(matches!(
            s.accumulate(&x, 4, &b),
            Err(Error::Capacity { requested: 4, capacity: 4 })
        ));
    }

    #[test]
    fn retrieve_exact_column() {
        let mut data = vec![0.0; 2 * 8];
        for j in 0..8 {
            data[j] = j as f64;
            data[8 + j] = -(j as f64);
        }
        let e = Tensor::matrix(2, 8, data).unwrap();
        let v = e.col(7).unwrap();
        assert_eq!(retrieve_nearest(&v, &e).unwrap(), 7);
    }

    #[test]
    fn retrieve_tolerates_noise_below_half_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let e = Tensor::uniform(&[6, 40], -1.0, 1.0, &mut rng);
        // Minimum inter-column distance by brute force.
        let mut min_gap = f64::INFINITY;
        for a in 0..40 {
            for b in (a + 1)..40 {
                let d2: f64 = (0..6)
                    .map(|i| {
                        let diff = e.at2(i, a) - e.at2(i, b);
                        diff * diff
                    })
                    .sum();
                min_gap = min_gap.min(d2.sqrt());
            }
        }
        let mut v = e.col(3).unwrap();
        // Shift one coordinate by just under half the minimum gap.
        v.data_mut()[0] += 0.49 * min_gap;
        assert_eq!(retrieve_nearest(&v, &e).unwrap(), 3);
    }

    #[test]
    fn retrieve_tie_breaks_low() {
        let mut data = vec![0.0; 3 * 12];
        for (i, v) in data.iter_mut().enumerate() {
            *v = i as f64;
        }
        let mut e = Tensor::new(vec![3, 12], data).unwrap();
        // Make columns 2 and 9 identical; a query equal to both must pick 2.
        for i in 0..3 {
            let v = e.at2(i, 2);
            e.set2(i, 9, v);
        }
        let v = e.col(2).unwrap();
        assert_eq!(retrieve_nearest(&v, &e).unwrap(), 2);
    }

    #[test]
    fn unbinding_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = RoleBasis::sylvester(8).unwrap();
        let xa: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[5], -1.0, 1.0, &mut rng)).collect();
        let xb: Vec<Tensor> = (0..4).map(|_| Tensor::uniform(&[5], -1.0, 1.0, &mut rng)).collect();
        let sa = bind(5, &xa, &b).unwrap();
        let sb = bind(5, &xb, &b).unwrap();
        let (alpha, beta) = (0.7, -1.3);
        let mixed = Tpr::from_matrix(
            Tensor::new(
                vec![5, 8],
                sa.matrix()
                    .data()
                    .iter()
                    .zip(sb.matrix().data())
                    .map(|(&a, &bv)| alpha * a + beta * bv)
                    .collect(),
            )
            .unwrap(),
        )
        .unwrap();
        for j in 0..4 {
            let lhs = mixed.unbind(j, &b).unwrap();
            let ua = sa.unbind(j, &b).unwrap();
            let ub = sb.unbind(j, &b).unwrap();
            for i in 0..5 {
                let rhs = alpha * ua.data()[i] + beta * ub.data()[i];
                assert!((lhs.data()[i] - rhs).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn small_retrieval_experiment_is_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let b = RoleBasis::sylvester(8).unwrap();
        let table = Tensor::uniform(&[8, 100], -0.5, 0.5, &mut rng);
        let report = retrieval_experiment(&table, &b, 8, 50, &mut rng).unwrap();
        assert_eq!(report.correct, 50);
        assert!((report.accuracy() - 1.0).abs() < 1e-15);
    }
}
