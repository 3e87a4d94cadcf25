//! Truncated bosonic and collective-spin operators and their tensor products,
//! stored as dense complex matrices.
//!
//! The composite ordering convention is fixed once here: the boson index
//! varies slower than the spin index, i.e. composite index
//! `i = n_boson * (n_spins + 1) + i_spin`. Every operator combined in an
//! expression must use this ordering.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tolerance for declaring a matrix Hermitian: `max |A - A†|` entrywise must
/// not exceed this times `max |A|`.
pub const HERMITICITY_TOL: f64 = 1e-12;

/// Dimensions of the composite boson ⊗ spin space.
///
/// `n_max` is the highest retained Fock state (boson dimension `n_max + 1`),
/// `n_spins` the number of two-level systems (spin dimension `n_spins + 1`,
/// collective spin J = n_spins / 2).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisDescriptor {
    n_max: usize,
    n_spins: usize,
}

impl BasisDescriptor {
    pub fn new(n_max: usize, n_spins: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::invalid(format!("n_max must be >= 1, got {n_max}")));
        }
        if n_spins < 1 {
            return Err(Error::invalid(format!("n_spins must be >= 1, got {n_spins}")));
        }
        Ok(BasisDescriptor { n_max, n_spins })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn boson_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn spin_dim(&self) -> usize {
        self.n_spins + 1
    }

    pub fn total_dim(&self) -> usize {
        self.boson_dim() * self.spin_dim()
    }

    /// Composite index of `|n_boson⟩ ⊗ |i_spin⟩` (boson slower).
    pub fn composite_index(&self, n_boson: usize, i_spin: usize) -> usize {
        debug_assert!(n_boson <= self.n_max && i_spin <= self.n_spins);
        n_boson * self.spin_dim() + i_spin
    }

    /// Inverse of [`composite_index`](Self::composite_index).
    pub fn split_index(&self, index: usize) -> (usize, usize) {
        (index / self.spin_dim(), index % self.spin_dim())
    }
}

/// Which space a matrix acts on: a bare factor of some dimension, or the
/// composite boson ⊗ spin space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixSpace {
    Factor { dim: usize },
    Composite(BasisDescriptor),
}

impl MatrixSpace {
    pub fn dim(&self) -> usize {
        match self {
            MatrixSpace::Factor { dim } => *dim,
            MatrixSpace::Composite(basis) => basis.total_dim(),
        }
    }
}

/// Dense complex square matrix tagged with the space it acts on and whether
/// it is Hermitian. Hermiticity is verified at construction when claimed.
#[derive(Clone, Debug)]
pub struct OperatorMatrix {
    space: MatrixSpace,
    entries: Array2<Complex64>,
    hermitian: bool,
}

impl OperatorMatrix {
    /// Wrap a matrix, verifying the Hermiticity claim against
    /// [`HERMITICITY_TOL`].
    pub fn new(space: MatrixSpace, entries: Array2<Complex64>, hermitian: bool) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c {
            return Err(Error::invalid(format!("matrix must be square, got {r}x{c}")));
        }
        if r != space.dim() {
            return Err(Error::invalid(format!(
                "matrix dimension {r} does not match space dimension {}",
                space.dim()
            )));
        }
        let op = OperatorMatrix { space, entries, hermitian };
        if hermitian {
            let dev = op.hermiticity_deviation();
            let scale = op.max_abs_entry();
            if dev > HERMITICITY_TOL * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::invalid(format!(
                    "matrix claimed Hermitian but max |A - A†| = {dev:.3e} (max |A| = {scale:.3e})"
                )));
            }
        }
        Ok(op)
    }

    pub fn hermitian(space: MatrixSpace, entries: Array2<Complex64>) -> Result<Self> {
        Self::new(space, entries, true)
    }

    pub fn identity(space: MatrixSpace) -> Self {
        let dim = space.dim();
        OperatorMatrix {
            space,
            entries: Array2::eye(dim),
            hermitian: true,
        }
    }

    pub fn space(&self) -> MatrixSpace {
        self.space
    }

    pub fn basis(&self) -> Option<BasisDescriptor> {
        match self.space {
            MatrixSpace::Composite(b) => Some(b),
            MatrixSpace::Factor { .. } => None,
        }
    }

    /// Re-tag a factor-space matrix as acting on a composite basis. The total
    /// dimension must match.
    pub fn with_basis(mut self, basis: BasisDescriptor) -> Result<Self> {
        if basis.total_dim() != self.dim() {
            return Err(Error::invalid(format!(
                "basis dimension {} does not match matrix dimension {}",
                basis.total_dim(),
                self.dim()
            )));
        }
        self.space = MatrixSpace::Composite(basis);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<Complex64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<Complex64> {
        self.entries
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        let n = self.dim();
        let mut dev: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                dev = dev.max((self.entries[(i, j)] - self.entries[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries
            .iter()
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// True when every entry has exactly zero imaginary part. Spectra of such
    /// matrices are computed on a real symmetric fast path.
    pub fn is_exactly_real(&self) -> bool {
        self.entries.iter().all(|z| z.im == 0.0)
    }

    /// Diagonal entries if the matrix has no off-diagonal support at all.
    pub fn exact_diagonal(&self) -> Option<Vec<f64>> {
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.entries[(i, j)] != Complex64::ZERO {
                    return None;
                }
            }
        }
        Some((0..n).map(|i| self.entries[(i, i)].re).collect())
    }

    /// True when the matrix is exactly the identity.
    pub fn is_exact_identity(&self) -> bool {
        let n = self.dim();
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { Complex64::new(1.0, 0.0) } else { Complex64::ZERO };
                if self.entries[(i, j)] != want {
                    return false;
                }
            }
        }
        true
    }

    pub fn matmul(&self, other: &OperatorMatrix) -> Result<Array2<Complex64>> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "dimension mismatch in product: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self.entries.dot(&other.entries))
    }
}

/// Truncated ladder operators `(create, annihilate, number)` on the
/// `(n_max + 1)`-dimensional Fock space: `annihilate[n-1, n] = √n`,
/// `create = annihilate†`, `number = diag(0, …, n_max)`.
pub fn boson_ops(n_max: usize) -> Result<(OperatorMatrix, OperatorMatrix, OperatorMatrix)> {
    if n_max < 1 {
        return Err(Error::invalid(format!("n_max must be >= 1, got {n_max}")));
    }
    let dim = n_max + 1;
    let space = MatrixSpace::Factor { dim };
    let mut annihilate = Array2::<Complex64>::zeros((dim, dim));
    let mut number = Array2::<Complex64>::zeros((dim, dim));
    for n in 1..=n_max {
        annihilate[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    for n in 0..=n_max {
        number[(n, n)] = Complex64::new(n as f64, 0.0);
    }
    let create = annihilate.t().mapv(|z| z.conj());
    Ok((
        OperatorMatrix::new(space, create, false)?,
        OperatorMatrix::new(space, annihilate, false)?,
        OperatorMatrix::hermitian(space, number)?,
    ))
}

/// Collective spin operators `(Jz, J+, J-)` in the `|J, m⟩` basis with
/// J = n_spins / 2 and m = -J … J ascending, so spin index `i_spin`
/// corresponds to `m = i_spin - J`.
pub fn spin_ops(n_spins: usize) -> Result<(OperatorMatrix, OperatorMatrix, OperatorMatrix)> {
    if n_spins < 1 {
        return Err(Error::invalid(format!("n_spins must be >= 1, got {n_spins}")));
    }
    let dim = n_spins + 1;
    let space = MatrixSpace::Factor { dim };
    let j = n_spins as f64 / 2.0;
    let mut jz = Array2::<Complex64>::zeros((dim, dim));
    let mut jplus = Array2::<Complex64>::zeros((dim, dim));
    for i in 0..dim {
        let m = i as f64 - j;
        jz[(i, i)] = Complex64::new(m, 0.0);
        if i + 1 < dim {
            // J+|J,m⟩ = √(J(J+1) - m(m+1)) |J,m+1⟩
            jplus[(i + 1, i)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
        }
    }
    let jminus = jplus.t().mapv(|z| z.conj());
    Ok((
        OperatorMatrix::hermitian(space, jz)?,
        OperatorMatrix::new(space, jplus, false)?,
        OperatorMatrix::new(space, jminus, false)?,
    ))
}

/// Kronecker product `a ⊗ b` with `a` on the slower-varying factor. With `a`
/// a boson operator and `b` a spin operator this realizes the fixed composite
/// ordering.
pub fn tensor(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<OperatorMatrix> {
    match (a.space(), b.space()) {
        (MatrixSpace::Composite(_), _) | (_, MatrixSpace::Composite(_)) => {
            return Err(Error::invalid(
                "tensor factors must be factor-space matrices".to_string(),
            ));
        }
        _ => {}
    }
    let entries = ndarray::linalg::kron(a.entries(), b.entries());
    let dim = entries.nrows();
    OperatorMatrix::new(
        MatrixSpace::Factor { dim },
        entries,
        a.is_hermitian() && b.is_hermitian(),
    )
}

/// Frobenius norm of the commutator `ab - ba`.
///
/// When either operand is exactly diagonal the norm is computed elementwise
/// in O(dim²); the general case costs two dense products.
pub fn commutator_norm(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "dimension mismatch in commutator: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    // [A, diag(d)]_{ij} = A_{ij} (d_j - d_i)
    let diag_path = |full: &OperatorMatrix, d: &[f64]| -> f64 {
        let n = full.dim();
        let e = full.entries();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = d[j] - d[i];
                acc += e[(i, j)].norm_sqr() * w * w;
            }
        }
        acc.sqrt()
    };
    if let Some(d) = b.exact_diagonal() {
        return Ok(diag_path(a, &d));
    }
    if let Some(d) = a.exact_diagonal() {
        return Ok(diag_path(b, &d));
    }
    let ab = a.matmul(b)?;
    let ba = b.matmul(a)?;
    let norm_sqr: f64 = ab
        .iter()
        .zip(ba.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum();
    Ok(norm_sqr.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn boson_ladder_small() {
        let (create, annihilate, number) = boson_ops(1).unwrap();
        assert_eq!(annihilate.entries()[(0, 1)], Complex64::new(1.0, 0.0));
        assert_eq!(annihilate.entries()[(0, 0)], Complex64::ZERO);
        assert_eq!(annihilate.entries()[(1, 0)], Complex64::ZERO);
        assert_eq!(annihilate.entries()[(1, 1)], Complex64::ZERO);
        assert_eq!(create.entries()[(1, 0)], Complex64::new(1.0, 0.0));
        assert_eq!(number.entries()[(1, 1)], Complex64::new(1.0, 0.0));
    }

    #[test]
    fn boson_sqrt_n_element() {
        let (_, annihilate, _) = boson_ops(2).unwrap();
        assert_abs_diff_eq!(
            annihilate.entries()[(1, 2)].re,
            2.0f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn boson_number_diagonal() {
        let (create, annihilate, number) = boson_ops(3).unwrap();
        // number = create · annihilate
        let prod = create.matmul(&annihilate).unwrap();
        for n in 0..=3usize {
            assert_abs_diff_eq!(prod[(n, n)].re, n as f64, epsilon = 1e-14);
            assert_abs_diff_eq!(number.entries()[(n, n)].re, n as f64, epsilon = 1e-15);
        }
    }

    #[test]
    fn boson_rejects_zero_truncation() {
        assert!(boson_ops(0).is_err());
    }

    #[test]
    fn ladder_elements_real_nonnegative_and_adjoint() {
        let (create, annihilate, _) = boson_ops(7).unwrap();
        for z in annihilate.entries().iter().chain(create.entries().iter()) {
            assert_eq!(z.im, 0.0);
            assert!(z.re >= 0.0);
        }
        let adj = annihilate.entries().t().mapv(|z| z.conj());
        assert_eq!(create.entries(), &adj);
    }

    #[test]
    fn spin_half() {
        let (jz, jplus, _) = spin_ops(1).unwrap();
        assert_abs_diff_eq!(jz.entries()[(0, 0)].re, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(jz.entries()[(1, 1)].re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(jplus.entries()[(1, 0)].re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn spin_seven_halves() {
        let (jz, _, _) = spin_ops(7).unwrap();
        assert_eq!(jz.dim(), 8);
        assert_abs_diff_eq!(jz.entries()[(0, 0)].re, -3.5, epsilon = 1e-15);
        assert_abs_diff_eq!(jz.entries()[(7, 7)].re, 3.5, epsilon = 1e-15);
    }

    #[test]
    fn su2_algebra() {
        for n_spins in [1, 2, 3, 7] {
            let (jz, jplus, jminus) = spin_ops(n_spins).unwrap();
            // [J+, J-] = 2 Jz
            let pm = jplus.matmul(&jminus).unwrap();
            let mp = jminus.matmul(&jplus).unwrap();
            let comm = &pm - &mp;
            let two_jz = jz.entries().mapv(|z| z * 2.0);
            for (c, t) in comm.iter().zip(two_jz.iter()) {
                assert_abs_diff_eq!(c.re, t.re, epsilon = 1e-12);
                assert_abs_diff_eq!(c.im, t.im, epsilon = 1e-12);
            }
            // [Jz, J+] = J+
            let zp = jz.matmul(&jplus).unwrap();
            let pz = jplus.matmul(&jz).unwrap();
            let comm = &zp - &pz;
            for (c, t) in comm.iter().zip(jplus.entries().iter()) {
                assert_abs_diff_eq!(c.re, t.re, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spin_rejects_zero() {
        assert!(spin_ops(0).is_err());
    }

    #[test]
    fn tensor_identities() {
        let i2 = OperatorMatrix::identity(MatrixSpace::Factor { dim: 2 });
        let i3 = OperatorMatrix::identity(MatrixSpace::Factor { dim: 3 });
        let t = tensor(&i2, &i3).unwrap();
        assert!(t.is_exact_identity());
        assert_eq!(t.dim(), 6);
    }

    #[test]
    fn tensor_boson_slower_ordering() {
        // diag(0,1) ⊗ I₂ = diag(0,0,1,1)
        let mut d = Array2::<Complex64>::zeros((2, 2));
        d[(1, 1)] = Complex64::new(1.0, 0.0);
        let a = OperatorMatrix::hermitian(MatrixSpace::Factor { dim: 2 }, d).unwrap();
        let i2 = OperatorMatrix::identity(MatrixSpace::Factor { dim: 2 });
        let t = tensor(&a, &i2).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| t.entries()[(i, i)].re).collect();
        assert_eq!(diag, vec![0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn tensor_factorization_oracle() {
        // (a ⊗ I)(I ⊗ b) == tensor(a, b) checked by direct multiplication.
        let a_raw = Array2::from_shape_fn((2, 2), |(i, j)| {
            Complex64::new((i * 2 + j) as f64 * 0.3 - 0.4, (i as f64 - j as f64) * 0.7)
        });
        let b_raw = Array2::from_shape_fn((2, 2), |(i, j)| {
            Complex64::new((j * 2 + i) as f64 * 0.9 - 1.1, (i + j) as f64 * 0.2)
        });
        let a = OperatorMatrix::new(MatrixSpace::Factor { dim: 2 }, a_raw, false).unwrap();
        let b = OperatorMatrix::new(MatrixSpace::Factor { dim: 2 }, b_raw, false).unwrap();
        let i2 = OperatorMatrix::identity(MatrixSpace::Factor { dim: 2 });
        let left = tensor(&a, &i2).unwrap();
        let right = tensor(&i2, &b).unwrap();
        let product = left.matmul(&right).unwrap();
        let direct = tensor(&a, &b).unwrap();
        for (p, d) in product.iter().zip(direct.entries().iter()) {
            assert_abs_diff_eq!(p.re, d.re, epsilon = 1e-14);
            assert_abs_diff_eq!(p.im, d.im, epsilon = 1e-14);
        }
    }

    #[test]
    fn tensor_against_index_arithmetic_oracle() {
        // Brute-force oracle on dims ≤ 4: kron(a, b)[i1*db+i2, j1*db+j2] = a[i1,j1] b[i2,j2]
        let da = 3;
        let db = 4;
        let a_raw = Array2::from_shape_fn((da, da), |(i, j)| {
            Complex64::new((3 * i + j) as f64, (i as f64) * 0.5)
        });
        let b_raw = Array2::from_shape_fn((db, db), |(i, j)| {
            Complex64::new((i + 2 * j) as f64 * 0.25, -(j as f64))
        });
        let a = OperatorMatrix::new(MatrixSpace::Factor { dim: da }, a_raw.clone(), false).unwrap();
        let b = OperatorMatrix::new(MatrixSpace::Factor { dim: db }, b_raw.clone(), false).unwrap();
        let t = tensor(&a, &b).unwrap();
        for i1 in 0..da {
            for i2 in 0..db {
                for j1 in 0..da {
                    for j2 in 0..db {
                        let got = t.entries()[(i1 * db + i2, j1 * db + j2)];
                        let want = a_raw[(i1, j1)] * b_raw[(i2, j2)];
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn tensor_dimension_tags() {
        let i2 = OperatorMatrix::identity(MatrixSpace::Factor { dim: 2 });
        let basis = BasisDescriptor::new(1, 1).unwrap();
        let tagged = OperatorMatrix::identity(MatrixSpace::Composite(basis));
        assert!(tensor(&tagged, &i2).is_err());
    }

    #[test]
    fn self_commutator_vanishes() {
        let (_, _, number) = boson_ops(4).unwrap();
        assert_abs_diff_eq!(commutator_norm(&number, &number).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn jz_jplus_commutator_norm() {
        let (jz, jplus, _) = spin_ops(5).unwrap();
        let norm = commutator_norm(&jz, &jplus).unwrap();
        assert_abs_diff_eq!(norm, jplus.frobenius_norm(), epsilon = 1e-12);
    }

    #[test]
    fn commutator_diag_path_matches_general() {
        // Same commutator through the diagonal fast path and the dense path.
        let (jz, jplus, jminus) = spin_ops(4).unwrap();
        // jx is not diagonal, so [jx, jz] goes through the dense path when
        // jz's diagonal detection is bypassed by adding a zero off-diagonal...
        // instead, compare [jz, j+] (diag path) against the dense formula.
        let fast = commutator_norm(&jz, &jplus).unwrap();
        let zp = jz.matmul(&jplus).unwrap();
        let pz = jplus.matmul(&jz).unwrap();
        let dense: f64 = zp
            .iter()
            .zip(pz.iter())
            .map(|(x, y)| (x - y).norm_sqr())
            .sum::<f64>()
            .sqrt();
        assert_abs_diff_eq!(fast, dense, epsilon = 1e-13);
        let _ = jminus;
    }

    #[test]
    fn commutator_dimension_mismatch() {
        let (jz, _, _) = spin_ops(2).unwrap();
        let (_, _, number) = boson_ops(4).unwrap();
        assert!(commutator_norm(&jz, &number).is_err());
    }

    #[test]
    fn hermitian_claim_verified() {
        let mut bad = Array2::<Complex64>::zeros((2, 2));
        bad[(0, 1)] = Complex64::new(1.0, 0.0);
        assert!(OperatorMatrix::hermitian(MatrixSpace::Factor { dim: 2 }, bad).is_err());
    }

    #[test]
    fn basis_descriptor_dims() {
        let b = BasisDescriptor::new(800, 7).unwrap();
        assert_eq!(b.total_dim(), 801 * 8);
        assert_eq!(b.composite_index(0, 0), 0);
        assert_eq!(b.composite_index(1, 0), 8);
        assert_eq!(b.split_index(8), (1, 0));
        assert!(BasisDescriptor::new(0, 7).is_err());
    }
}
