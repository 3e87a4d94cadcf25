//! The N-particle Dicke Hamiltonian, its conserved excitation-number charge
//! in the integrable limits, the parity operator, and the charge-sector
//! decomposition of the composite basis.
//!
//! All energies are expressed in a single energy unit with ħ = 1.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::hilbert::{BasisDescriptor, MatrixSpace, OperatorMatrix};

/// Identifier of the excitation-number charge J + Jz + b†b.
pub const EXCITATION_NUMBER: &str = "excitation-number";

/// Identifier of the mirrored excitation number J - Jz + b†b, the quantity
/// conserved in the counter-rotating integrable limit.
pub const EXCITATION_NUMBER_MIRRORED: &str = "excitation-number-mirrored";

/// Identifier for a conserved charge, matching labels in a
/// [`LabeledSpectrum`](crate::spectra::LabeledSpectrum) against entries of a
/// [`BetaVector`](crate::ensembles::BetaVector).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ChargeId(pub String);

impl ChargeId {
    pub fn excitation_number() -> Self {
        ChargeId(EXCITATION_NUMBER.to_string())
    }

    pub fn excitation_number_mirrored() -> Self {
        ChargeId(EXCITATION_NUMBER_MIRRORED.to_string())
    }
}

impl std::fmt::Display for ChargeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Which excitation-number-like charge a Hamiltonian conserves.
///
/// The rotating coupling J₊b + J₋b† commutes with J + Jz + b†b; the
/// counter-rotating coupling J₊b† + J₋b raises spin and boson together and
/// instead commutes with the spin-flipped J - Jz + b†b. The two integrable
/// limits therefore carry different (but unitarily equivalent) charges.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChargeKind {
    ExcitationNumber,
    MirroredExcitationNumber,
}

impl ChargeKind {
    pub fn id(self) -> ChargeId {
        match self {
            ChargeKind::ExcitationNumber => ChargeId::excitation_number(),
            ChargeKind::MirroredExcitationNumber => ChargeId::excitation_number_mirrored(),
        }
    }

    /// Charge eigenvalue of the basis state |n_boson⟩ ⊗ |i_spin⟩.
    pub fn label(self, n_boson: usize, i_spin: usize, n_spins: usize) -> usize {
        match self {
            ChargeKind::ExcitationNumber => n_boson + i_spin,
            ChargeKind::MirroredExcitationNumber => n_boson + (n_spins - i_spin),
        }
    }
}

/// Parameters of the Dicke Hamiltonian
///
/// H = ω_b b†b + ω_at Jz
///   + (2g/√N) [ (1-α)(J₊b + J₋b†) + α(J₊b† + J₋b) ]
///
/// on `n_spins` two-level systems (collective spin J = n_spins/2) coupled to
/// a single bosonic mode truncated at Fock state `n_max`. `counter_rotating`
/// is the mixing parameter α ∈ [0, 1]: α ∈ {0, 1} gives the integrable
/// Tavis-Cummings limits, anything in between is chaotic.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DickeParams {
    pub n_spins: usize,
    pub n_max: usize,
    pub omega_boson: f64,
    pub omega_atom: f64,
    pub coupling: f64,
    pub counter_rotating: f64,
}

impl DickeParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_spins < 1 {
            return Err(Error::invalid("n_spins must be >= 1"));
        }
        if self.n_max < self.n_spins {
            return Err(Error::invalid(format!(
                "n_max ({}) must be >= n_spins ({}) so at least one full charge multiplet exists",
                self.n_max, self.n_spins
            )));
        }
        if !(self.omega_boson > 0.0) || !(self.omega_atom > 0.0) {
            return Err(Error::invalid("frequencies must be strictly positive"));
        }
        if !(self.coupling >= 0.0) {
            return Err(Error::invalid("coupling must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.counter_rotating) {
            return Err(Error::invalid(format!(
                "counter_rotating must lie in [0, 1], got {}",
                self.counter_rotating
            )));
        }
        Ok(())
    }

    pub fn basis(&self) -> BasisDescriptor {
        BasisDescriptor::new(self.n_max, self.n_spins).expect("validated params")
    }

    /// The excitation-number-like charge this Hamiltonian conserves, if any:
    /// J + Jz + b†b in the rotating limit α = 0, its spin-flipped image in
    /// the counter-rotating limit α = 1, either (canonically the former) when
    /// decoupled, nothing in the chaotic regime 0 < α < 1. Cross-checked
    /// against the numerical commutator in tests.
    pub fn conserved_charge_kind(&self) -> Option<ChargeKind> {
        if self.coupling == 0.0 || self.counter_rotating == 0.0 {
            Some(ChargeKind::ExcitationNumber)
        } else if self.counter_rotating == 1.0 {
            Some(ChargeKind::MirroredExcitationNumber)
        } else {
            None
        }
    }

    pub fn is_integrable(&self) -> bool {
        self.conserved_charge_kind().is_some()
    }
}

/// Eigenspace of the excitation number with eigenvalue `m_value`.
///
/// `truncated` marks sectors that lose members to the Fock cutoff
/// (m > n_max); ensemble weight on those sectors is what the truncation
/// guard monitors.
#[derive(Clone, Debug)]
pub struct MSector {
    pub m_value: usize,
    pub member_indices: Vec<usize>,
    pub truncated: bool,
}

/// Build the Dicke Hamiltonian as a dense Hermitian matrix on the composite
/// basis. All entries are real.
pub fn build_hamiltonian(params: &DickeParams) -> Result<OperatorMatrix> {
    params.validate()?;
    let basis = params.basis();
    let ns = basis.spin_dim();
    let j = params.n_spins as f64 / 2.0;
    let dim = basis.total_dim();
    let mut h = Array2::<Complex64>::zeros((dim, dim));

    for n in 0..basis.boson_dim() {
        for s in 0..ns {
            let i = basis.composite_index(n, s);
            let m = s as f64 - j;
            h[(i, i)] = Complex64::new(params.omega_boson * n as f64 + params.omega_atom * m, 0.0);
        }
    }

    let prefactor = 2.0 * params.coupling / (params.n_spins as f64).sqrt();
    let rotating = prefactor * (1.0 - params.counter_rotating);
    let counter = prefactor * params.counter_rotating;
    for n in 0..basis.boson_dim() {
        for s in 0..ns {
            let m = s as f64 - j;
            if s + 1 >= ns {
                continue;
            }
            let raise = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
            let i = basis.composite_index(n, s);
            // J₊ b  (and its adjoint J₋ b†)
            if n >= 1 {
                let amp = rotating * raise * (n as f64).sqrt();
                let k = basis.composite_index(n - 1, s + 1);
                h[(k, i)] += Complex64::new(amp, 0.0);
                h[(i, k)] += Complex64::new(amp, 0.0);
            }
            // J₊ b†  (and its adjoint J₋ b)
            if n + 1 < basis.boson_dim() {
                let amp = counter * raise * ((n + 1) as f64).sqrt();
                let k = basis.composite_index(n + 1, s + 1);
                h[(k, i)] += Complex64::new(amp, 0.0);
                h[(i, k)] += Complex64::new(amp, 0.0);
            }
        }
    }

    OperatorMatrix::hermitian(MatrixSpace::Composite(basis), h)
}

/// Diagonal matrix of the given charge; eigenvalues are non-negative
/// integers in [0, n_spins + n_max].
pub fn charge_operator(
    kind: ChargeKind,
    n_spins: usize,
    n_max: usize,
) -> Result<OperatorMatrix> {
    let basis = BasisDescriptor::new(n_max, n_spins)?;
    let dim = basis.total_dim();
    let mut m = Array2::<Complex64>::zeros((dim, dim));
    for i in 0..dim {
        let (n_boson, i_spin) = basis.split_index(i);
        m[(i, i)] = Complex64::new(kind.label(n_boson, i_spin, n_spins) as f64, 0.0);
    }
    OperatorMatrix::hermitian(MatrixSpace::Composite(basis), m)
}

/// The excitation number J + Jz + b†b as a diagonal matrix; its eigenvalues
/// are the non-negative integers n_boson + i_spin.
pub fn excitation_number(n_spins: usize, n_max: usize) -> Result<OperatorMatrix> {
    charge_operator(ChargeKind::ExcitationNumber, n_spins, n_max)
}

/// Parity (-1)^M, diagonal, squares to the identity. Commutes with the Dicke
/// Hamiltonian for every α and splits it into two blocks.
pub fn parity(n_spins: usize, n_max: usize) -> Result<OperatorMatrix> {
    let basis = BasisDescriptor::new(n_max, n_spins)?;
    let dim = basis.total_dim();
    let mut p = Array2::<Complex64>::zeros((dim, dim));
    for i in 0..dim {
        let (n_boson, i_spin) = basis.split_index(i);
        let sign = if (n_boson + i_spin) % 2 == 0 { 1.0 } else { -1.0 };
        p[(i, i)] = Complex64::new(sign, 0.0);
    }
    OperatorMatrix::hermitian(MatrixSpace::Composite(basis), p)
}

/// Disjoint partition of the composite basis by the given charge, ascending
/// in m. Sector m has size min(m+1, N+1) until the Fock cutoff clips it.
pub fn m_sectors_for(
    kind: ChargeKind,
    n_spins: usize,
    n_max: usize,
) -> Result<Vec<MSector>> {
    let basis = BasisDescriptor::new(n_max, n_spins)?;
    let mut sectors: Vec<MSector> = (0..=(n_max + n_spins))
        .map(|m| MSector {
            m_value: m,
            member_indices: Vec::new(),
            truncated: m > n_max,
        })
        .collect();
    for i in 0..basis.total_dim() {
        let (n_boson, i_spin) = basis.split_index(i);
        sectors[kind.label(n_boson, i_spin, n_spins)]
            .member_indices
            .push(i);
    }
    for s in &mut sectors {
        s.member_indices.sort_unstable();
    }
    Ok(sectors)
}

/// [`m_sectors_for`] with the rotating-limit excitation number J + Jz + b†b.
pub fn m_sectors(n_spins: usize, n_max: usize) -> Result<Vec<MSector>> {
    m_sectors_for(ChargeKind::ExcitationNumber, n_spins, n_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{boson_ops, commutator_norm, spin_ops, tensor};
    use approx::assert_abs_diff_eq;

    fn small_params(alpha: f64, g: f64) -> DickeParams {
        DickeParams {
            n_spins: 3,
            n_max: 12,
            omega_boson: 3.0,
            omega_atom: 10.0,
            coupling: g,
            counter_rotating: alpha,
        }
    }

    #[test]
    fn decoupled_spectrum_is_exact() {
        let p = small_params(0.5, 0.0);
        let h = build_hamiltonian(&p).unwrap();
        let d = h.exact_diagonal().expect("g=0 Hamiltonian is diagonal");
        let basis = p.basis();
        let j = p.n_spins as f64 / 2.0;
        for (i, &e) in d.iter().enumerate() {
            let (n, s) = basis.split_index(i);
            let expect = 3.0 * n as f64 + 10.0 * (s as f64 - j);
            assert_abs_diff_eq!(e, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn hamiltonian_matches_tensor_construction() {
        // The in-place assembly must agree with the explicit kron-product sum.
        let p = small_params(0.3, 1.7);
        let h = build_hamiltonian(&p).unwrap();

        let (create, annihilate, number) = boson_ops(p.n_max).unwrap();
        let (jz, jplus, jminus) = spin_ops(p.n_spins).unwrap();
        let eye_b = OperatorMatrix::identity(MatrixSpace::Factor { dim: p.n_max + 1 });
        let eye_s = OperatorMatrix::identity(MatrixSpace::Factor { dim: p.n_spins + 1 });
        let pref = 2.0 * p.coupling / (p.n_spins as f64).sqrt();
        let rot = pref * (1.0 - p.counter_rotating);
        let ctr = pref * p.counter_rotating;
        let mut expect = tensor(&number, &eye_s).unwrap().into_entries() * p.omega_boson;
        expect = expect + tensor(&eye_b, &jz).unwrap().into_entries() * p.omega_atom;
        expect = expect + tensor(&annihilate, &jplus).unwrap().into_entries() * rot;
        expect = expect + tensor(&create, &jminus).unwrap().into_entries() * rot;
        expect = expect + tensor(&create, &jplus).unwrap().into_entries() * ctr;
        expect = expect + tensor(&annihilate, &jminus).unwrap().into_entries() * ctr;

        for (a, b) in h.entries().iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a.re, b.re, epsilon = 1e-12);
            assert_abs_diff_eq!(a.im, b.im, epsilon = 1e-12);
        }
    }

    #[test]
    fn charge_conserved_in_integrable_limits() {
        for alpha in [0.0, 1.0] {
            let p = small_params(alpha, 6.0);
            let h = build_hamiltonian(&p).unwrap();
            let kind = p.conserved_charge_kind().expect("integrable");
            let m = charge_operator(kind, p.n_spins, p.n_max).unwrap();
            let norm = commutator_norm(&h, &m).unwrap();
            assert!(
                norm <= 1e-10 * h.frobenius_norm(),
                "alpha={alpha}: ‖[H,M]‖ = {norm:e}"
            );
        }
        // the rotating-limit charge is genuinely the wrong one at alpha = 1
        let p = small_params(1.0, 6.0);
        let h = build_hamiltonian(&p).unwrap();
        let m = excitation_number(p.n_spins, p.n_max).unwrap();
        assert!(commutator_norm(&h, &m).unwrap() > 1e-3 * h.frobenius_norm());
    }

    #[test]
    fn charge_broken_in_chaotic_regime() {
        let p = small_params(0.5, 1.0);
        let h = build_hamiltonian(&p).unwrap();
        let m = excitation_number(p.n_spins, p.n_max).unwrap();
        let norm = commutator_norm(&h, &m).unwrap();
        assert!(
            norm > 1e-3 * h.frobenius_norm(),
            "charge should be broken, ‖[H,M]‖/‖H‖ = {:e}",
            norm / h.frobenius_norm()
        );
    }

    #[test]
    fn conserved_charge_kind_matches_commutator() {
        for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
            for g in [0.0, 0.5, 3.0] {
                let p = small_params(alpha, g);
                let h = build_hamiltonian(&p).unwrap();
                let tol = 1e-10 * h.frobenius_norm().max(1.0);
                let conserved_kind = [
                    ChargeKind::ExcitationNumber,
                    ChargeKind::MirroredExcitationNumber,
                ]
                .into_iter()
                .find(|&kind| {
                    let m = charge_operator(kind, p.n_spins, p.n_max).unwrap();
                    commutator_norm(&h, &m).unwrap() <= tol
                });
                assert_eq!(
                    p.conserved_charge_kind(),
                    conserved_kind,
                    "alpha={alpha}, g={g}"
                );
            }
        }
    }

    #[test]
    fn parity_squares_to_identity_and_commutes() {
        let pi = parity(3, 12).unwrap();
        let sq = pi.matmul(&pi).unwrap();
        for (idx, z) in sq.indexed_iter() {
            let want = if idx.0 == idx.1 { 1.0 } else { 0.0 };
            assert_abs_diff_eq!(z.re, want, epsilon = 1e-15);
        }
        for alpha in [0.0, 0.3, 0.5, 1.0] {
            let p = small_params(alpha, 2.5);
            let h = build_hamiltonian(&p).unwrap();
            let norm = commutator_norm(&pi, &h).unwrap();
            assert!(norm <= 1e-10 * h.frobenius_norm(), "alpha={alpha}");
        }
    }

    #[test]
    fn parity_trace_counts_even_odd() {
        let (n_spins, n_max) = (3, 12);
        let pi = parity(n_spins, n_max).unwrap();
        let trace: f64 = (0..pi.dim()).map(|i| pi.entries()[(i, i)].re).sum();
        let basis = BasisDescriptor::new(n_max, n_spins).unwrap();
        let mut count = 0i64;
        for i in 0..basis.total_dim() {
            let (n, s) = basis.split_index(i);
            count += if (n + s) % 2 == 0 { 1 } else { -1 };
        }
        assert_abs_diff_eq!(trace, count as f64, epsilon = 1e-12);
    }

    #[test]
    fn excitation_number_diagonal_values() {
        // N=1, n_max=1: diag entries {0,1,1,2} in composite order
        let m = excitation_number(1, 1).unwrap();
        let d = m.exact_diagonal().unwrap();
        assert_eq!(d, vec![0.0, 1.0, 1.0, 2.0]);

        let m = excitation_number(3, 9).unwrap();
        let d = m.exact_diagonal().unwrap();
        for &v in &d {
            assert!(v >= 0.0 && v <= (3 + 9) as f64);
            assert_abs_diff_eq!(v, v.round(), epsilon = 0.0);
        }
    }

    #[test]
    fn sectors_partition_the_basis() {
        let (n_spins, n_max) = (7, 20);
        let sectors = m_sectors(n_spins, n_max).unwrap();
        let total: usize = sectors.iter().map(|s| s.member_indices.len()).sum();
        assert_eq!(total, (n_max + 1) * (n_spins + 1));
        let mut seen = vec![false; total];
        for sector in &sectors {
            for &i in &sector.member_indices {
                assert!(!seen[i], "index {i} appears in two sectors");
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sector_sizes_and_truncation() {
        let sectors = m_sectors(7, 20).unwrap();
        assert_eq!(sectors[0].member_indices.len(), 1);
        for s in &sectors {
            let expect = if s.m_value <= 20 {
                (s.m_value + 1).min(8)
            } else {
                8 - (s.m_value - 20)
            };
            assert_eq!(s.member_indices.len(), expect, "sector {}", s.m_value);
            assert_eq!(s.truncated, s.m_value > 20);
        }
    }

    #[test]
    fn sector_members_match_charge_eigenvalues() {
        for kind in [
            ChargeKind::ExcitationNumber,
            ChargeKind::MirroredExcitationNumber,
        ] {
            let sectors = m_sectors_for(kind, 3, 10).unwrap();
            let m = charge_operator(kind, 3, 10).unwrap();
            let d = m.exact_diagonal().unwrap();
            let mut covered = 0;
            for sector in &sectors {
                covered += sector.member_indices.len();
                for &i in &sector.member_indices {
                    assert_abs_diff_eq!(d[i], sector.m_value as f64, epsilon = 0.0);
                }
            }
            assert_eq!(covered, 11 * 4);
        }
    }

    #[test]
    fn mirrored_limit_diagonalizes_in_its_sectors() {
        let p = small_params(1.0, 4.0);
        let h = build_hamiltonian(&p).unwrap();
        let kind = p.conserved_charge_kind().unwrap();
        assert_eq!(kind, ChargeKind::MirroredExcitationNumber);
        let sectors = m_sectors_for(kind, p.n_spins, p.n_max).unwrap();
        let spec = crate::spectra::eig_in_sectors(&h, &sectors, kind.id()).unwrap();
        let full = crate::spectra::eig_hermitian(&h).unwrap();
        let mut sectored = spec.energies().to_vec();
        sectored.sort_by(f64::total_cmp);
        for (a, b) in sectored.iter().zip(full.energies()) {
            assert!((a - b).abs() <= 1e-9 * h.frobenius_norm());
        }
    }

    #[test]
    fn params_validation() {
        let mut p = small_params(0.5, 1.0);
        p.counter_rotating = 1.5;
        assert!(p.validate().is_err());
        let mut p = small_params(0.5, 1.0);
        p.n_max = 2; // below n_spins = 3
        assert!(p.validate().is_err());
        let mut p = small_params(0.5, 1.0);
        p.omega_boson = 0.0;
        assert!(p.validate().is_err());
    }
}
