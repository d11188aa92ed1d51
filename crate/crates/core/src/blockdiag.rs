//! Block-diagonal precision `Φ = blkdiag(Φ₁, …, Φ_m)`.
//!
//! The objective becomes `H(Φ) = −log det Φ + tr(Φ S) + Σ_{i≤r} g(λᵢ)` with `λ` the
//! eigenvalues of `Φ^{1/2} S Φ^{1/2}` and `g(λ) = log max(1,λ) − max(1,λ) + 1`.
//! A subgradient of the concave part is `G = Σ_j δ_j/λ_j · m_j m_jᵀ` with
//! `m_j = S Φ^{1/2} u_j`; each block update is `Φ_b ← (S_bb − G_bb)⁻¹`.
//!
//! Singleton blocks go through exactly the arithmetic of the diagonal solver, so
//! the two produce identical iterates when no box clamping is active. The block
//! variant needs the covariance in dense form.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::data_io::CovarianceInput;
use crate::error::{domain, numerical, Result};
use crate::linalg::{spd_logdet, sym_eig_desc};
use crate::objective::{delta_weight, spectral_term};
use crate::solver::{validate_loop, SolverTrace, Termination, PSD_TOL, STALL_TOL};
use crate::spectra::DENSE_MAX_P;

/// Eigenvalue floor applied when inverting `S_bb − G_bb`.
pub const BLOCK_EIG_FLOOR: f64 = 1e-10;

/// Relative eigenvalue floor for a block to count as positive definite.
pub const BLOCK_SPD_RATIO: f64 = 1e-12;

/// Contiguous partition of `0..p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>, p: usize) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return domain("block sizes must be positive and non-empty");
        }
        let total: usize = sizes.iter().sum();
        if total != p {
            return domain(format!("block sizes sum to {total}, expected {p}"));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut at = 0;
        for &s in &sizes {
            offsets.push(at);
            at += s;
        }
        Ok(Self { sizes, offsets })
    }

    pub fn singletons(p: usize) -> Self {
        Self {
            sizes: vec![1; p],
            offsets: (0..p).collect(),
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn p(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn range(&self, b: usize) -> std::ops::Range<usize> {
        self.offsets[b]..self.offsets[b] + self.sizes[b]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockPrecision {
    structure: BlockStructure,
    blocks: Vec<DMatrix<f64>>,
}

impl BlockPrecision {
    pub fn new(structure: BlockStructure, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        if blocks.len() != structure.len() {
            return domain(format!("{} blocks given, structure has {}", blocks.len(), structure.len()));
        }
        for (b, m) in blocks.iter().enumerate() {
            let s = structure.sizes[b];
            if m.nrows() != s || m.ncols() != s {
                return domain(format!("block {b} is {}x{}, expected {s}x{s}", m.nrows(), m.ncols()));
            }
            if m.iter().any(|v| !v.is_finite()) || (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                return domain(format!("block {b} is not finite and symmetric"));
            }
            let eig = SymmetricEigen::new(m.clone()).eigenvalues;
            let hi = eig.max();
            let lo = eig.min();
            if !(hi > 0.0) || lo < BLOCK_SPD_RATIO * hi {
                return domain(format!("block {b} is not positive definite (eigenvalues {lo:e} .. {hi:e})"));
            }
        }
        Ok(Self { structure, blocks })
    }

    /// Block-diagonal precision with the given diagonal.
    pub fn from_diagonal(structure: BlockStructure, phi: &DVector<f64>) -> Result<Self> {
        let blocks = (0..structure.len())
            .map(|b| DMatrix::from_diagonal(&phi.rows_range(structure.range(b)).into_owned()))
            .collect();
        Self::new(structure, blocks)
    }

    /// `Φ_b = diag(S_bb)⁻¹ · 2`, the block analogue of the half-diagonal start.
    pub fn half_diagonal(cov: &CovarianceInput, structure: BlockStructure) -> Result<Self> {
        let phi = cov.diag().map(|s| 1.0 / (0.5 * s));
        Self::from_diagonal(structure, &phi)
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.structure.p();
        let mut out = DMatrix::zeros(p, p);
        for (b, m) in self.blocks.iter().enumerate() {
            let r = self.structure.range(b);
            out.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(m);
        }
        out
    }

    /// Diagonal entries, i.e. `φ` when all blocks are singletons.
    pub fn diagonal(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.structure.p());
        for (b, m) in self.blocks.iter().enumerate() {
            for (k, i) in self.structure.range(b).enumerate() {
                out[i] = m[(k, k)];
            }
        }
        out
    }
}

/// Square root and inverse square root of each block.
struct BlockRoots {
    root: Vec<DMatrix<f64>>,
    inv_root: Vec<DMatrix<f64>>,
}

impl BlockRoots {
    fn new(phi: &BlockPrecision) -> Self {
        let mut root = Vec::with_capacity(phi.blocks.len());
        let mut inv_root = Vec::with_capacity(phi.blocks.len());
        for m in &phi.blocks {
            if m.nrows() == 1 {
                let h = m[(0, 0)].sqrt();
                root.push(DMatrix::from_element(1, 1, h));
                inv_root.push(DMatrix::from_element(1, 1, h));
            } else {
                let eig = SymmetricEigen::new(m.clone());
                let v = &eig.eigenvectors;
                let sq = eig.eigenvalues.map(f64::sqrt);
                root.push(v * DMatrix::from_diagonal(&sq) * v.transpose());
                inv_root.push(v * DMatrix::from_diagonal(&sq.map(|x| 1.0 / x)) * v.transpose());
            }
        }
        Self { root, inv_root }
    }

    /// `Φ^{1/2} m`, or `Φ^{-1/2} m` when `inverse`.
    ///
    /// Singleton blocks multiply (or divide) by `√φᵢ` so that they match the
    /// diagonal code path bit for bit.
    fn apply_left(&self, structure: &BlockStructure, m: &mut DMatrix<f64>, inverse: bool) {
        for b in 0..structure.len() {
            let range = structure.range(b);
            if range.len() == 1 {
                let h = self.root[b][(0, 0)];
                let mut row = m.row_mut(range.start);
                if inverse {
                    row /= h;
                } else {
                    row *= h;
                }
            } else {
                let factor = if inverse { &self.inv_root[b] } else { &self.root[b] };
                let rows = m.rows_range(range.clone()).into_owned();
                m.rows_range_mut(range).copy_from(&(factor * rows));
            }
        }
    }

    fn apply_right(&self, structure: &BlockStructure, m: &mut DMatrix<f64>) {
        for b in 0..structure.len() {
            let range = structure.range(b);
            if range.len() == 1 {
                let h = self.root[b][(0, 0)];
                let mut col = m.column_mut(range.start);
                col *= h;
            } else {
                let cols = m.columns_range(range.clone()).into_owned();
                m.columns_range_mut(range).copy_from(&(cols * &self.root[b]));
            }
        }
    }
}

fn dense_cov(cov: &CovarianceInput) -> Result<&DMatrix<f64>> {
    match cov.covariance() {
        Some(s) if cov.p() <= DENSE_MAX_P => Ok(s),
        _ => domain(format!(
            "the block variant needs a materialised covariance with p <= {DENSE_MAX_P}"
        )),
    }
}

fn check_rank(cov: &CovarianceInput, phi: &BlockPrecision, r: usize) -> Result<()> {
    let p = cov.p();
    if phi.structure.p() != p {
        return domain(format!("block structure covers {} variables, expected {p}", phi.structure.p()));
    }
    if r == 0 || r >= p {
        return domain(format!("rank r = {r} must satisfy 1 <= r < p = {p}"));
    }
    Ok(())
}

/// Top `r + 1` eigenpairs of `Φ^{1/2} S Φ^{1/2}`, with the block roots.
fn block_spectrum(
    s: &DMatrix<f64>,
    phi: &BlockPrecision,
    r: usize,
) -> (DVector<f64>, DMatrix<f64>, BlockRoots) {
    let roots = BlockRoots::new(phi);
    let mut s_star = s.clone();
    roots.apply_left(&phi.structure, &mut s_star, false);
    roots.apply_right(&phi.structure, &mut s_star);
    let q = (r + 1).min(s.nrows());
    let (values, vectors) = sym_eig_desc(s_star);
    let values = values.rows(0, q).map(|v| v.max(0.0));
    (values, vectors.columns(0, q).into_owned(), roots)
}

fn f1_block(s: &DMatrix<f64>, phi: &BlockPrecision) -> Result<f64> {
    let mut total = 0.0;
    for (b, m) in phi.blocks.iter().enumerate() {
        let range = phi.structure.range(b);
        if range.len() == 1 {
            let v = m[(0, 0)];
            total += -v.ln() + s[(range.start, range.start)] * v;
        } else {
            let Some(logdet) = spd_logdet(m) else {
                return numerical(format!("block {b} lost positive definiteness"));
            };
            let s_bb = s.view((range.start, range.start), (range.len(), range.len()));
            total += -logdet + m.component_mul(&s_bb).sum();
        }
    }
    Ok(total)
}

/// `F₂(Φ) = −Σ_{i≤r} g(λᵢ)`, convex in `φ` and concave as written in `H`.
pub fn block_f2(cov: &CovarianceInput, phi: &BlockPrecision, r: usize) -> Result<f64> {
    check_rank(cov, phi, r)?;
    let s = dense_cov(cov)?;
    let (values, _, _) = block_spectrum(s, phi, r);
    Ok(-(0..r).map(|i| spectral_term(values[i])).sum::<f64>())
}

/// `H(Φ)`.
pub fn block_objective(cov: &CovarianceInput, phi: &BlockPrecision, r: usize) -> Result<f64> {
    check_rank(cov, phi, r)?;
    let s = dense_cov(cov)?;
    let (values, _, _) = block_spectrum(s, phi, r);
    objective_from_values(s, phi, r, &values)
}

fn objective_from_values(s: &DMatrix<f64>, phi: &BlockPrecision, r: usize, values: &DVector<f64>) -> Result<f64> {
    let top: f64 = (0..r).map(|i| spectral_term(values[i])).sum();
    Ok(f1_block(s, phi)? + top)
}

fn subgradient_blocks(
    cov: &CovarianceInput,
    phi: &BlockPrecision,
    r: usize,
    values: &DVector<f64>,
    vectors: &DMatrix<f64>,
    roots: &BlockRoots,
) -> Vec<DMatrix<f64>> {
    let structure = &phi.structure;
    let delta = DVector::from_fn(r, |i, _| delta_weight(values[i]));
    let active = delta.iter().take_while(|&&d| d > 0.0).count();
    if active == 0 {
        return structure.sizes.iter().map(|&s| DMatrix::zeros(s, s)).collect();
    }
    let u = vectors.columns(0, active).into_owned();
    let mut t1 = u.clone();
    for (j, mut col) in t1.column_iter_mut().enumerate() {
        col *= delta[j];
    }
    roots.apply_left(structure, &mut t1, true);
    let mut hu = u;
    roots.apply_left(structure, &mut hu, false);
    let m = cov.mul_cov(&hu);
    (0..structure.len())
        .map(|b| {
            let range = structure.range(b);
            let n = range.len();
            let mut g = DMatrix::zeros(n, n);
            for (a, i) in range.clone().enumerate() {
                for (c, k) in range.clone().enumerate() {
                    let mut acc = 0.0;
                    for j in 0..active {
                        acc += t1[(i, j)] * m[(k, j)];
                    }
                    g[(a, c)] = acc;
                }
            }
            (&g + g.transpose()) * 0.5
        })
        .collect()
}

/// Diagonal blocks of a subgradient of `F₂` at `Φ`.
pub fn block_subgradient(cov: &CovarianceInput, phi: &BlockPrecision, r: usize) -> Result<Vec<DMatrix<f64>>> {
    check_rank(cov, phi, r)?;
    let s = dense_cov(cov)?;
    let (values, vectors, roots) = block_spectrum(s, phi, r);
    Ok(subgradient_blocks(cov, phi, r, &values, &vectors, &roots))
}

fn update_blocks(s: &DMatrix<f64>, phi: &BlockPrecision, grads: &[DMatrix<f64>]) -> Result<BlockPrecision> {
    let structure = &phi.structure;
    let mut blocks = Vec::with_capacity(structure.len());
    for (b, g) in grads.iter().enumerate() {
        let range = structure.range(b);
        let n = range.len();
        let s_bb = s.view((range.start, range.start), (n, n));
        let scale = (0..n).map(|k| s_bb[(k, k)]).fold(1.0, f64::max);
        if n == 1 {
            let x = s_bb[(0, 0)] - g[(0, 0)];
            if x < -PSD_TOL * scale {
                return numerical(format!("S_bb - G_bb = {x:e} < 0 in block {b}"));
            }
            blocks.push(DMatrix::from_element(1, 1, 1.0 / x.max(BLOCK_EIG_FLOOR)));
        } else {
            let w = s_bb - g;
            let w = (&w + w.transpose()) * 0.5;
            let eig = SymmetricEigen::new(w);
            if eig.eigenvalues.min() < -PSD_TOL * scale {
                return numerical(format!(
                    "S_bb - G_bb has eigenvalue {:e} in block {b}",
                    eig.eigenvalues.min()
                ));
            }
            let inv = eig.eigenvalues.map(|x| 1.0 / x.max(BLOCK_EIG_FLOOR));
            let v = &eig.eigenvectors;
            let m = v * DMatrix::from_diagonal(&inv) * v.transpose();
            blocks.push((&m + m.transpose()) * 0.5);
        }
    }
    Ok(BlockPrecision {
        structure: structure.clone(),
        blocks,
    })
}

/// One block update `Φ_b ← (S_bb − G_bb)⁻¹`.
pub fn block_dc_step(cov: &CovarianceInput, phi: &BlockPrecision, r: usize) -> Result<BlockPrecision> {
    check_rank(cov, phi, r)?;
    let s = dense_cov(cov)?;
    let (values, vectors, roots) = block_spectrum(s, phi, r);
    let grads = subgradient_blocks(cov, phi, r, &values, &vectors, &roots);
    update_blocks(s, phi, &grads)
}

#[derive(Debug, Clone)]
pub struct BlockConfig {
    pub rank: usize,
    pub tol: f64,
    pub max_iters: usize,
    /// Defaults to [`BlockPrecision::half_diagonal`].
    pub init: Option<BlockPrecision>,
}

impl BlockConfig {
    pub fn new(rank: usize) -> Self {
        Self {
            rank,
            tol: 1e-8,
            max_iters: 2000,
            init: None,
        }
    }
}

fn block_distance(a: &BlockPrecision, b: &BlockPrecision) -> f64 {
    a.blocks
        .iter()
        .zip(&b.blocks)
        .map(|(x, y)| (x - y).norm_squared())
        .sum::<f64>()
        .sqrt()
}

/// Iterates block updates until the relative decrease of `H` drops below `tol`.
pub fn solve_block(
    cov: &CovarianceInput,
    structure: &BlockStructure,
    config: &BlockConfig,
) -> Result<(BlockPrecision, SolverTrace)> {
    let p = cov.p();
    validate_loop(config.rank, config.tol, config.max_iters, p)?;
    let s = dense_cov(cov)?;
    let r = config.rank;
    let mut phi = match &config.init {
        Some(init) if init.structure == *structure => init.clone(),
        Some(_) => return domain("initial precision has a different block structure"),
        None => BlockPrecision::half_diagonal(cov, BlockStructure::new(structure.sizes.clone(), p)?)?,
    };
    check_rank(cov, &phi, r)?;
    let start = Instant::now();
    let (mut values, mut vectors, mut roots) = block_spectrum(s, &phi, r);
    let mut f = objective_from_values(s, &phi, r, &values)?;
    let mut trace = SolverTrace {
        objectives: vec![f],
        step_norms: Vec::new(),
        elapsed: vec![start.elapsed().as_secs_f64()],
        termination: Termination::MaxIters,
        iterations: 0,
        rho: 0.0,
        tie_iterations: 0,
    };
    for _ in 0..config.max_iters {
        let grads = subgradient_blocks(cov, &phi, r, &values, &vectors, &roots);
        let next = update_blocks(s, &phi, &grads)?;
        let step = block_distance(&next, &phi);
        let (nv, nu, nr) = block_spectrum(s, &next, r);
        let f_next = objective_from_values(s, &next, r, &nv)?;
        let scale = f_next.abs().max(1.0);
        // Rounding-level increase: stop at the current iterate, as the diagonal solver does.
        if f_next > f && f_next - f <= STALL_TOL * scale {
            trace.termination = Termination::Converged;
            break;
        }
        trace.objectives.push(f_next);
        trace.step_norms.push(step);
        trace.elapsed.push(start.elapsed().as_secs_f64());
        trace.iterations += 1;
        if f_next - f > STALL_TOL * scale {
            trace.termination = Termination::Stalled;
            return Ok((next, trace));
        }
        let converged = step == 0.0 || f - f_next < config.tol * scale;
        phi = next;
        values = nv;
        vectors = nu;
        roots = nr;
        f = f_next;
        if converged {
            trace.termination = Termination::Converged;
            break;
        }
    }
    Ok((phi, trace))
}

/// Factor model implied by a block precision.
#[derive(Debug, Clone)]
pub struct BlockModel {
    /// `Ψ_b = Φ_b⁻¹` for each block.
    pub psi_blocks: Vec<DMatrix<f64>>,
    /// `L = Φ^{-1/2} [z₁ … z_r]`, `‖zᵢ‖² = max(1, λᵢ) − 1`.
    pub loadings: DMatrix<f64>,
    /// `log det Σ + tr(Σ⁻¹ S)` for `Σ = Ψ + L Lᵀ`, evaluated densely.
    pub neg_loglik: f64,
    pub rank_used: usize,
}

/// Best loadings for `phi` and the likelihood of the resulting model.
pub fn block_model(cov: &CovarianceInput, phi: &BlockPrecision, r: usize) -> Result<BlockModel> {
    check_rank(cov, phi, r)?;
    let s = dense_cov(cov)?;
    let p = s.nrows();
    let (values, vectors, roots) = block_spectrum(s, phi, r);
    let mut loadings = DMatrix::zeros(p, r);
    let mut rank_used = 0;
    for j in 0..r {
        let norm2 = values[j].max(1.0) - 1.0;
        if norm2 > 0.0 {
            loadings.set_column(j, &(vectors.column(j) * norm2.sqrt()));
            rank_used += 1;
        }
    }
    roots.apply_left(&phi.structure, &mut loadings, true);

    let mut psi_blocks = Vec::with_capacity(phi.blocks.len());
    let mut sigma = &loadings * loadings.transpose();
    for (b, m) in phi.blocks.iter().enumerate() {
        let Some(inv) = m.clone().cholesky().map(|c| c.inverse()) else {
            return numerical(format!("block {b} is not positive definite"));
        };
        let range = phi.structure.range(b);
        let mut view = sigma.view_mut((range.start, range.start), (range.len(), range.len()));
        view += &inv;
        psi_blocks.push(inv);
    }
    let Some(chol) = sigma.cholesky() else {
        return numerical("implied covariance is not positive definite");
    };
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let neg_loglik = logdet + chol.solve(s).trace();
    Ok(BlockModel {
        psi_blocks,
        loadings,
        neg_loglik,
        rank_used,
    })
}
