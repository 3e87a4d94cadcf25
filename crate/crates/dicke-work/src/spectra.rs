//! Hermitian eigendecomposition with charge-aware labeling.
//!
//! Charge labels never come from post-hoc rediagonalization inside
//! near-degenerate energy clusters: when a charge is conserved the matrix is
//! diagonalized sector by sector, which resolves cross-sector degeneracies by
//! construction and makes every label an exact integer.

use faer::Mat;
use ndarray::{Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::OperatorMatrix;
use crate::model::{ChargeId, MSector};

/// Relative tolerance on ‖[H, C]‖_F / ‖H‖_F below which a charge is accepted
/// as conserved for sectoring purposes.
pub const CONSERVATION_TOL: f64 = 1e-8;

/// Integer labels of one conserved charge, one value per eigenstate.
#[derive(Clone, Debug)]
pub struct ChargeLabels {
    pub id: ChargeId,
    pub values: Vec<i64>,
}

/// Full eigendecomposition of a Hermitian operator. Eigenvectors are stored
/// as columns embedded in the full basis; energies ascend within each sector
/// (globally, when there is a single sector).
#[derive(Clone, Debug)]
pub struct LabeledSpectrum {
    energies: Vec<f64>,
    eigenvectors: Array2<Complex64>,
    charges: Vec<ChargeLabels>,
    sector_of: Vec<i64>,
}

impl LabeledSpectrum {
    pub(crate) fn from_parts(
        energies: Vec<f64>,
        eigenvectors: Array2<Complex64>,
        charges: Vec<ChargeLabels>,
        sector_of: Vec<i64>,
    ) -> Self {
        debug_assert_eq!(energies.len(), eigenvectors.ncols());
        debug_assert_eq!(energies.len(), sector_of.len());
        LabeledSpectrum { energies, eigenvectors, charges, sector_of }
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn eigenvectors(&self) -> ArrayView2<'_, Complex64> {
        self.eigenvectors.view()
    }

    pub fn eigenvector(&self, n: usize) -> ArrayView1<'_, Complex64> {
        self.eigenvectors.column(n)
    }

    pub fn charges(&self) -> &[ChargeLabels] {
        &self.charges
    }

    pub fn charge_values(&self, id: &ChargeId) -> Option<&[i64]> {
        self.charges
            .iter()
            .find(|c| &c.id == id)
            .map(|c| c.values.as_slice())
    }

    /// Sector id per eigenstate; -1 when the spectrum was not sectored.
    pub fn sector_of(&self) -> &[i64] {
        &self.sector_of
    }

    /// Release the eigenvector storage, keeping energies and labels. Used by
    /// the experiment runner once transition probabilities are assembled;
    /// everything downstream works on labels alone.
    pub fn drop_eigenvectors(&mut self) {
        self.eigenvectors = Array2::zeros((0, 0));
    }

    pub fn has_eigenvectors(&self) -> bool {
        self.eigenvectors.ncols() == self.dim() && self.dim() > 0
    }

    /// Maximum deviation of V†V from the identity. Diagnostic; costs a dense
    /// product.
    pub fn orthonormality_deviation(&self) -> f64 {
        let v = &self.eigenvectors;
        let n = v.ncols();
        let mut dev: f64 = 0.0;
        for a in 0..n {
            for b in a..n {
                let mut acc = Complex64::ZERO;
                for i in 0..v.nrows() {
                    acc += v[(i, a)].conj() * v[(i, b)];
                }
                let want = if a == b { 1.0 } else { 0.0 };
                dev = dev.max((acc - want).norm());
            }
        }
        dev
    }

    /// ‖H − V diag(E) V†‖_F. Diagnostic; costs dense products.
    pub fn reconstruction_residual(&self, h: &OperatorMatrix) -> f64 {
        let v = &self.eigenvectors;
        let n = self.dim();
        let scaled = {
            let mut s = v.clone();
            for (k, mut col) in s.columns_mut().into_iter().enumerate() {
                let e = self.energies[k];
                col.mapv_inplace(|z| z * e);
            }
            s
        };
        let vt = v.t().mapv(|z| z.conj());
        let recon = scaled.dot(&vt);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (recon[(i, j)] - h.entries()[(i, j)]).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// max_n ‖C v_n − label_n v_n‖₂ for the given charge. Diagnostic.
    pub fn label_residual(&self, charge: &OperatorMatrix, id: &ChargeId) -> Option<f64> {
        let labels = self.charge_values(id)?;
        let v = &self.eigenvectors;
        let mut worst: f64 = 0.0;
        for (n, &label) in labels.iter().enumerate() {
            let mut acc = 0.0;
            for i in 0..v.nrows() {
                let mut cv = Complex64::ZERO;
                for k in 0..v.nrows() {
                    cv += charge.entries()[(i, k)] * v[(k, n)];
                }
                acc += (cv - v[(i, n)] * label as f64).norm_sqr();
            }
            worst = worst.max(acc.sqrt());
        }
        Some(worst)
    }
}

/// Dense Hermitian eigendecomposition of a block, ascending eigenvalues.
/// Exactly-real blocks go through the real symmetric path.
fn dense_eigh(block: ArrayView2<'_, Complex64>) -> Result<(Vec<f64>, Array2<Complex64>)> {
    let n = block.nrows();
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let is_real = block.iter().all(|z| z.im == 0.0);
    let (mut energies, mut vectors) = if is_real {
        let m = Mat::<f64>::from_fn(n, n, |i, j| block[(i, j)].re);
        let evd = m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::NumericFailure(format!("eigensolver did not converge: {e:?}")))?;
        let s = evd.S();
        let u = evd.U();
        let energies: Vec<f64> = (0..n).map(|i| s[i]).collect();
        let vectors = Array2::from_shape_fn((n, n), |(i, j)| Complex64::new(u[(i, j)], 0.0));
        (energies, vectors)
    } else {
        let m = Mat::<faer::c64>::from_fn(n, n, |i, j| {
            let z = block[(i, j)];
            faer::c64::new(z.re, z.im)
        });
        let evd = m
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|e| Error::NumericFailure(format!("eigensolver did not converge: {e:?}")))?;
        let s = evd.S();
        let u = evd.U();
        let energies: Vec<f64> = (0..n).map(|i| s[i].re).collect();
        let vectors = Array2::from_shape_fn((n, n), |(i, j)| {
            let z = u[(i, j)];
            Complex64::new(z.re, z.im)
        });
        (energies, vectors)
    };

    // The backend returns ascending eigenvalues; enforce it deterministically
    // anyway so downstream ordering never depends on backend internals.
    if energies.windows(2).any(|w| w[0] > w[1]) {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| energies[a].total_cmp(&energies[b]));
        let sorted_e: Vec<f64> = order.iter().map(|&k| energies[k]).collect();
        let mut sorted_v = Array2::zeros((n, n));
        for (dst, &src) in order.iter().enumerate() {
            sorted_v.column_mut(dst).assign(&vectors.column(src));
        }
        energies = sorted_e;
        vectors = sorted_v;
    }
    Ok((energies, vectors))
}

/// Full decomposition of a Hermitian operator with globally ascending
/// energies and no charge labels.
pub fn eig_hermitian(a: &OperatorMatrix) -> Result<LabeledSpectrum> {
    if !a.is_hermitian() {
        return Err(Error::invalid(
            "eig_hermitian requires a Hermitian-flagged operator",
        ));
    }
    let (energies, eigenvectors) = dense_eigh(a.entries().view())?;
    let n = energies.len();
    Ok(LabeledSpectrum::from_parts(
        energies,
        eigenvectors,
        Vec::new(),
        vec![-1; n],
    ))
}

/// ‖[H, diag(d)]‖_F computed elementwise.
fn diag_commutator_norm(h: &OperatorMatrix, d: &[f64]) -> f64 {
    let e = h.entries();
    let n = h.dim();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let w = d[j] - d[i];
            acc += e[(i, j)].norm_sqr() * w * w;
        }
    }
    acc.sqrt()
}

/// Diagonalize H inside each charge sector. The charge must commute with H
/// within [`CONSERVATION_TOL`]; the result carries the sector charge value as
/// an exact integer label per eigenstate, with eigenvectors embedded back
/// into the full basis. Output ordering: sectors in list order, energies
/// ascending within each sector.
pub fn eig_in_sectors(
    h: &OperatorMatrix,
    sectors: &[MSector],
    charge: ChargeId,
) -> Result<LabeledSpectrum> {
    if !h.is_hermitian() {
        return Err(Error::invalid("eig_in_sectors requires a Hermitian operator"));
    }
    let dim = h.dim();
    let mut charge_of = vec![f64::NAN; dim];
    let mut covered = 0usize;
    for s in sectors {
        for &i in &s.member_indices {
            if i >= dim {
                return Err(Error::invalid(format!(
                    "sector member index {i} out of range for dimension {dim}"
                )));
            }
            if !charge_of[i].is_nan() {
                return Err(Error::invalid(format!("index {i} appears in two sectors")));
            }
            charge_of[i] = s.m_value as f64;
            covered += 1;
        }
    }
    if covered != dim {
        return Err(Error::invalid(format!(
            "sectors cover {covered} of {dim} basis states"
        )));
    }

    let comm = diag_commutator_norm(h, &charge_of);
    let tol = CONSERVATION_TOL * h.frobenius_norm().max(f64::MIN_POSITIVE);
    if comm > tol {
        return Err(Error::ChargeNotConserved { norm: comm, tol });
    }

    let mut energies = Vec::with_capacity(dim);
    let mut labels = Vec::with_capacity(dim);
    let mut sector_of = Vec::with_capacity(dim);
    let mut eigenvectors = Array2::<Complex64>::zeros((dim, dim));
    let mut col = 0usize;
    for (sector_idx, sector) in sectors.iter().enumerate() {
        let members = &sector.member_indices;
        let k = members.len();
        if k == 0 {
            continue;
        }
        let block = Array2::from_shape_fn((k, k), |(a, b)| {
            h.entries()[(members[a], members[b])]
        });
        let (block_e, block_v) = dense_eigh(block.view())?;
        for local in 0..k {
            energies.push(block_e[local]);
            labels.push(sector.m_value as i64);
            sector_of.push(sector_idx as i64);
            for (row_local, &row_global) in members.iter().enumerate() {
                eigenvectors[(row_global, col)] = block_v[(row_local, local)];
            }
            col += 1;
        }
    }
    debug_assert_eq!(col, dim);

    Ok(LabeledSpectrum::from_parts(
        energies,
        eigenvectors,
        vec![ChargeLabels { id: charge, values: labels }],
        sector_of,
    ))
}

/// Diagonalize H split over the two parity blocks. Contract as
/// [`eig_hermitian`] except `sector_of` records the parity block (0 for +1,
/// 1 for -1) and energies ascend within each block.
pub fn parity_split_eig(h: &OperatorMatrix, parity: &OperatorMatrix) -> Result<LabeledSpectrum> {
    if !h.is_hermitian() {
        return Err(Error::invalid("parity_split_eig requires a Hermitian operator"));
    }
    if parity.dim() != h.dim() {
        return Err(Error::invalid("parity operator dimension mismatch"));
    }
    let diag = parity
        .exact_diagonal()
        .ok_or_else(|| Error::invalid("parity operator must be diagonal"))?;
    if diag.iter().any(|&d| d != 1.0 && d != -1.0) {
        return Err(Error::invalid("parity diagonal must consist of ±1"));
    }
    let comm = diag_commutator_norm(h, &diag);
    let tol = CONSERVATION_TOL * h.frobenius_norm().max(f64::MIN_POSITIVE);
    if comm > tol {
        return Err(Error::ChargeNotConserved { norm: comm, tol });
    }

    let dim = h.dim();
    let mut energies = Vec::with_capacity(dim);
    let mut sector_of = Vec::with_capacity(dim);
    let mut eigenvectors = Array2::<Complex64>::zeros((dim, dim));
    let mut col = 0usize;
    for (block_id, sign) in [(0i64, 1.0), (1i64, -1.0)] {
        let members: Vec<usize> = (0..dim).filter(|&i| diag[i] == sign).collect();
        let k = members.len();
        if k == 0 {
            continue;
        }
        let block = Array2::from_shape_fn((k, k), |(a, b)| {
            h.entries()[(members[a], members[b])]
        });
        let (block_e, block_v) = dense_eigh(block.view())?;
        for local in 0..k {
            energies.push(block_e[local]);
            sector_of.push(block_id);
            for (row_local, &row_global) in members.iter().enumerate() {
                eigenvectors[(row_global, col)] = block_v[(row_local, local)];
            }
            col += 1;
        }
    }
    debug_assert_eq!(col, dim);

    Ok(LabeledSpectrum::from_parts(
        energies,
        eigenvectors,
        Vec::new(),
        sector_of,
    ))
}
