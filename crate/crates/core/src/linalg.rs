use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Full symmetric eigendecomposition with eigenvalues in descending order.
///
/// Equal eigenvalues keep the order the underlying solver produced them in.
/// Eigenvectors follow [`canonical_signs`].
pub(crate) fn sym_eig_desc(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    canonical_signs(&mut vectors);
    (values, vectors)
}

/// Flips each column so that its entry of largest magnitude is positive.
pub(crate) fn canonical_signs(v: &mut DMatrix<f64>) {
    for mut col in v.column_iter_mut() {
        let mut best = 0usize;
        let mut best_abs = -1.0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }
}

/// `diag(h) · m · diag(h)`, scaling rows first.
pub(crate) fn scale_sym(m: &DMatrix<f64>, h: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    scale_rows(&mut out, h);
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= h[j];
    }
    out
}

/// In place `m ← diag(h) · m`.
pub(crate) fn scale_rows(m: &mut DMatrix<f64>, h: &DVector<f64>) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row *= h[i];
    }
}

/// In place `m ← diag(h)⁻¹ · m`.
pub(crate) fn unscale_rows(m: &mut DMatrix<f64>, h: &DVector<f64>) {
    for (i, mut row) in m.row_iter_mut().enumerate() {
        row /= h[i];
    }
}

/// Thin orthonormal basis of the columns of `m`.
pub(crate) fn orthonormalize(m: DMatrix<f64>) -> DMatrix<f64> {
    let cols = m.ncols();
    let q = m.qr().q();
    q.columns(0, cols).into_owned()
}

/// `log det` of a symmetric positive definite matrix, `None` if not SPD.
pub(crate) fn spd_logdet(m: &DMatrix<f64>) -> Option<f64> {
    let chol = m.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}
