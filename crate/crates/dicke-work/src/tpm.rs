//! The two-projection-measurement protocol: quench propagators, transition
//! probabilities, dephased diagonal ensembles, and exact discrete
//! distributions of work and generalized work.
//!
//! Distributions here are exact: every (initial, final) eigenstate pair
//! contributes its precise probability, and support points are merged only
//! within a tolerance far below physical level spacings. Nothing is sampled;
//! a sampling view exists separately for histogram realism but is never used
//! in verification.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use crate::ensembles::{gge_weights, BetaVector, EnsembleWeights};
use crate::error::{Error, Result};
use crate::hilbert::{BasisDescriptor, MatrixSpace, OperatorMatrix};
use crate::model::{self, DickeParams};
use crate::numeric::compensated_sum;
use crate::spectra::{eig_hermitian, LabeledSpectrum};

/// Default merge tolerance for work support points, in natural units of the
/// work variable. Far below level spacings, far above double-precision noise.
pub const DEFAULT_BINNING_TOL: f64 = 1e-9;

/// Tolerance on Σp - 1 for every distribution and weight vector here.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Tolerance on transition-matrix row/column sums.
pub const STOCHASTICITY_TOL: f64 = 1e-9;

/// Unitarity tolerance beyond which a propagator is rejected.
pub const UNITARITY_TOL: f64 = 1e-6;

/// One piecewise-constant segment of a quench schedule.
#[derive(Clone, Debug)]
pub struct ScheduleSegment {
    pub duration: f64,
    pub params: DickeParams,
}

/// Piecewise-constant drive. An empty segment list is the sudden quench: the
/// propagator is the identity and work statistics reduce to eigenbasis
/// overlaps.
#[derive(Clone, Debug, Default)]
pub struct QuenchSchedule {
    pub segments: Vec<ScheduleSegment>,
}

impl QuenchSchedule {
    pub fn sudden() -> Self {
        QuenchSchedule { segments: Vec::new() }
    }

    pub fn piecewise(segments: Vec<ScheduleSegment>) -> Self {
        QuenchSchedule { segments }
    }

    pub fn is_sudden(&self) -> bool {
        self.segments.iter().all(|s| s.duration == 0.0)
    }
}

/// Time-evolution operator of the schedule: the ordered product of
/// exp(-i H_seg t_seg) over segments, earliest segment acting first. The
/// sudden quench gives the exact identity.
pub fn propagator(schedule: &QuenchSchedule, basis: &BasisDescriptor) -> Result<OperatorMatrix> {
    for seg in &schedule.segments {
        if !(seg.duration >= 0.0) {
            return Err(Error::invalid(format!(
                "segment duration must be >= 0, got {}",
                seg.duration
            )));
        }
        if seg.params.basis() != *basis {
            return Err(Error::invalid(
                "schedule segment dimensions do not match the propagator basis",
            ));
        }
    }
    let dim = basis.total_dim();
    if schedule.is_sudden() {
        return Ok(OperatorMatrix::identity(MatrixSpace::Composite(*basis)));
    }

    let mut u: Option<Array2<Complex64>> = None;
    for seg in &schedule.segments {
        if seg.duration == 0.0 {
            continue;
        }
        let h = model::build_hamiltonian(&seg.params)?;
        let spec = eig_hermitian(&h)?;
        // U_seg = V diag(e^{-iEt}) V†
        let v = spec.eigenvectors();
        let mut phased = v.to_owned();
        for (k, mut col) in phased.columns_mut().into_iter().enumerate() {
            let phase = Complex64::from_polar(1.0, -spec.energies()[k] * seg.duration);
            col.mapv_inplace(|z| z * phase);
        }
        let vdag = v.t().mapv(|z| z.conj());
        let u_seg = phased.dot(&vdag);
        u = Some(match u {
            None => u_seg,
            Some(prev) => u_seg.dot(&prev),
        });
    }
    let entries = u.expect("at least one nonzero-duration segment");
    let op = OperatorMatrix::new(MatrixSpace::Composite(*basis), entries, false)?;
    let dev = unitarity_deviation(&op);
    if dev > 1e-9 * (dim as f64).sqrt() {
        return Err(Error::NumericFailure(format!(
            "propagator lost unitarity: ‖U†U - I‖_F = {dev:.3e}"
        )));
    }
    Ok(op)
}

/// ‖U†U - I‖_F.
pub fn unitarity_deviation(u: &OperatorMatrix) -> f64 {
    let n = u.dim();
    let e = u.entries();
    let mut acc = 0.0;
    for a in 0..n {
        for b in 0..n {
            let mut dot = Complex64::ZERO;
            for i in 0..n {
                dot += e[(i, a)].conj() * e[(i, b)];
            }
            let want = if a == b { 1.0 } else { 0.0 };
            acc += (dot - want).norm_sqr();
        }
    }
    acc.sqrt()
}

/// T[m, n] = |⟨final m|U|initial n⟩|², rows indexed by final eigenstates,
/// columns by initial ones. Unitarity of U makes T doubly stochastic.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    probs: Array2<f64>,
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.probs.nrows()
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn prob(&self, final_state: usize, initial_state: usize) -> f64 {
        self.probs[(final_state, initial_state)]
    }

    /// The backward transition matrix: |⟨n|U⁻¹|m⟩|² = |⟨m|U|n⟩|².
    pub fn transposed(&self) -> TransitionMatrix {
        TransitionMatrix { probs: self.probs.t().to_owned() }
    }

    /// T · p: dephased diagonal-ensemble weights on the final eigenbasis.
    pub fn apply(&self, p: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if p.len() != n {
            return Err(Error::invalid("weight vector dimension mismatch"));
        }
        let mut out = vec![0.0; n];
        for (m, out_m) in out.iter_mut().enumerate() {
            let row = self.probs.row(m);
            *out_m = compensated_sum(row.iter().zip(p).map(|(&t, &pn)| t * pn));
        }
        Ok(out)
    }

    fn verify_doubly_stochastic(&self) -> Result<()> {
        let n = self.dim();
        for m in 0..n {
            let s = compensated_sum(self.probs.row(m).iter().cloned());
            if (s - 1.0).abs() > STOCHASTICITY_TOL {
                return Err(Error::NumericFailure(format!(
                    "transition row {m} sums to {s}, violating double stochasticity"
                )));
            }
        }
        for c in 0..n {
            let s = compensated_sum(self.probs.column(c).iter().cloned());
            if (s - 1.0).abs() > STOCHASTICITY_TOL {
                return Err(Error::NumericFailure(format!(
                    "transition column {c} sums to {s}, violating double stochasticity"
                )));
            }
        }
        Ok(())
    }
}

/// Nonzero row indices of each eigenvector column. Sector-embedded spectra
/// have very small supports, which the identity-quench product exploits.
fn column_supports(spec: &LabeledSpectrum) -> Vec<Vec<u32>> {
    let v = spec.eigenvectors();
    let dim = spec.dim();
    let mut supports = Vec::with_capacity(dim);
    for col in 0..dim {
        let mut s = Vec::new();
        for row in 0..dim {
            if v[(row, col)] != Complex64::ZERO {
                s.push(row as u32);
            }
        }
        supports.push(s);
    }
    supports
}

/// Transition probabilities between the eigenbases of two spectra under a
/// unitary drive. For the sudden quench (U exactly the identity) the product
/// runs over eigenvector supports only; otherwise it is a dense triple
/// product preceded by a unitarity check.
pub fn transition_matrix(
    spec_ini: &LabeledSpectrum,
    spec_fin: &LabeledSpectrum,
    u: &OperatorMatrix,
) -> Result<TransitionMatrix> {
    let dim = spec_ini.dim();
    if spec_fin.dim() != dim || u.dim() != dim {
        return Err(Error::invalid(format!(
            "dimension mismatch: initial {dim}, final {}, propagator {}",
            spec_fin.dim(),
            u.dim()
        )));
    }
    if !spec_ini.has_eigenvectors() || !spec_fin.has_eigenvectors() {
        return Err(Error::invalid("spectra must retain their eigenvectors"));
    }

    let probs = if u.is_exact_identity() {
        overlap_squared(spec_ini, spec_fin)
    } else {
        let dev = unitarity_deviation(u);
        if dev > UNITARITY_TOL {
            return Err(Error::NumericFailure(format!(
                "propagator violates unitarity: ‖U†U - I‖_F = {dev:.3e}"
            )));
        }
        let evolved = u.entries().dot(&spec_ini.eigenvectors());
        let vdag = spec_fin.eigenvectors().t().mapv(|z| z.conj());
        let amps = vdag.dot(&evolved);
        amps.mapv(|z| z.norm_sqr())
    };

    let t = TransitionMatrix { probs };
    t.verify_doubly_stochastic()?;
    Ok(t)
}

/// |V_fin† V_ini|² running each inner product over the sparser column
/// support.
fn overlap_squared(spec_ini: &LabeledSpectrum, spec_fin: &LabeledSpectrum) -> Array2<f64> {
    let dim = spec_ini.dim();
    let vi = spec_ini.eigenvectors();
    let vf = spec_fin.eigenvectors();
    let supp_f = column_supports(spec_fin);
    let supp_i = column_supports(spec_ini);
    let total_f: usize = supp_f.iter().map(|s| s.len()).sum();
    let total_i: usize = supp_i.iter().map(|s| s.len()).sum();

    let mut t = Array2::<f64>::zeros((dim, dim));
    if total_f <= total_i {
        // row-major fill: fix the final column m, sweep initial columns
        let mut pairs: Vec<(usize, Complex64)> = Vec::new();
        for m in 0..dim {
            pairs.clear();
            pairs.extend(
                supp_f[m]
                    .iter()
                    .map(|&i| (i as usize, vf[(i as usize, m)].conj())),
            );
            let mut row = t.row_mut(m);
            for n in 0..dim {
                let mut acc = Complex64::ZERO;
                for &(i, a) in &pairs {
                    acc += a * vi[(i, n)];
                }
                row[n] = acc.norm_sqr();
            }
        }
    } else {
        let mut pairs: Vec<(usize, Complex64)> = Vec::new();
        for n in 0..dim {
            pairs.clear();
            pairs.extend(
                supp_i[n]
                    .iter()
                    .map(|&i| (i as usize, vi[(i as usize, n)])),
            );
            for m in 0..dim {
                let mut acc = Complex64::ZERO;
                for &(i, a) in &pairs {
                    acc += vf[(i, m)].conj() * a;
                }
                t[(m, n)] = acc.norm_sqr();
            }
        }
    }
    t
}

/// Exact discrete probability distribution of a work-like variable: strictly
/// increasing support values after tolerance merging, probabilities summing
/// to one.
#[derive(Clone, Debug)]
pub struct WorkDistribution {
    support: Vec<(f64, f64)>,
    binning_tol: f64,
}

impl WorkDistribution {
    /// Build from raw (value, probability) points: drops zero-probability
    /// points, sorts, merges values sharing a `binning_tol`-wide grid cell
    /// (merged value is the probability-weighted mean), and verifies
    /// normalization. Grid-cell merging is symmetric under value negation,
    /// so a distribution and its mirror always group support identically —
    /// which the pointwise Crooks comparisons rely on.
    pub fn from_points(mut points: Vec<(f64, f64)>, binning_tol: f64) -> Result<Self> {
        if !(binning_tol > 0.0) {
            return Err(Error::invalid("binning tolerance must be > 0"));
        }
        if points.iter().any(|&(v, p)| !v.is_finite() || !p.is_finite() || p < 0.0) {
            return Err(Error::invalid(
                "work support points must be finite with non-negative probability",
            ));
        }
        points.retain(|&(_, p)| p > 0.0);
        points.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

        let cell = |v: f64| (v / binning_tol).round();
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(points.len());
        let mut idx = 0;
        while idx < points.len() {
            let anchor_cell = cell(points[idx].0);
            let mut mass = 0.0;
            let mut weighted = 0.0;
            while idx < points.len() && cell(points[idx].0) == anchor_cell {
                mass += points[idx].1;
                weighted += points[idx].1 * points[idx].0;
                idx += 1;
            }
            // ties across cell boundaries collapse into the previous point
            let value = weighted / mass;
            match merged.last_mut() {
                Some(last) if last.0 >= value => {
                    last.1 += mass;
                }
                _ => merged.push((value, mass)),
            }
        }
        debug_assert!(merged.windows(2).all(|w| w[0].0 < w[1].0));

        let total = compensated_sum(merged.iter().map(|&(_, p)| p));
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NumericFailure(format!(
                "work distribution sums to {total}, outside 1 ± {NORMALIZATION_TOL:.0e}"
            )));
        }
        Ok(WorkDistribution { support: merged, binning_tol })
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn binning_tol(&self) -> f64 {
        self.binning_tol
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn total_probability(&self) -> f64 {
        compensated_sum(self.support.iter().map(|&(_, p)| p))
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.support.iter().map(|&(v, p)| v * p))
    }

    /// Probability at the support point matching `value` within the merge
    /// tolerance (or a caller-supplied tolerance).
    pub fn probability_near(&self, value: f64, tol: f64) -> Option<f64> {
        let idx = self
            .support
            .partition_point(|&(v, _)| v < value - tol);
        let candidate = self.support.get(idx)?;
        ((candidate.0 - value).abs() <= tol).then_some(candidate.1)
    }

    /// Coarse view for plotting: probability mass aggregated into bins of
    /// `width` anchored at 0. Never used by verification paths.
    pub fn binned(&self, width: f64) -> Result<Vec<(f64, f64)>> {
        if !(width > 0.0) {
            return Err(Error::invalid("display bin width must be > 0"));
        }
        let mut bins: std::collections::BTreeMap<i64, f64> = std::collections::BTreeMap::new();
        for &(v, p) in &self.support {
            let k = (v / width).floor() as i64;
            *bins.entry(k).or_insert(0.0) += p;
        }
        Ok(bins
            .into_iter()
            .map(|(k, p)| ((k as f64 + 0.5) * width, p))
            .collect())
    }
}

/// Per-state generalized energies β E_n + Σ_k β_k M_{k,n} (the quantities
/// whose measured differences form the generalized work). An empty charge
/// list reduces to β E_n. Labels are required only for charges carrying a
/// nonzero generalized temperature.
pub fn generalized_energies(spec: &LabeledSpectrum, betas: &BetaVector) -> Result<Vec<f64>> {
    let mut ge: Vec<f64> = spec.energies().iter().map(|&e| betas.beta * e).collect();
    for (id, beta_k) in &betas.charge_betas {
        if *beta_k == 0.0 {
            continue;
        }
        let labels = spec.charge_values(id).ok_or_else(|| {
            Error::invalid(format!(
                "charge '{id}' carries nonzero beta but the spectrum has no labels for it"
            ))
        })?;
        for (g, &m) in ge.iter_mut().zip(labels) {
            *g += beta_k * m as f64;
        }
    }
    Ok(ge)
}

/// Assemble the exact discrete PDF of per-pair outcome differences
/// value(m, n) = fin[m] - ini[n] weighted by p_n T[m, n].
fn pair_difference_pdf(
    p_ini: &EnsembleWeights,
    t: &TransitionMatrix,
    ini_values: &[f64],
    fin_values: &[f64],
    binning_tol: f64,
) -> Result<WorkDistribution> {
    let dim = t.dim();
    if p_ini.dim() != dim || ini_values.len() != dim || fin_values.len() != dim {
        return Err(Error::invalid("dimension mismatch in work distribution assembly"));
    }
    let probs = t.probs();
    let mut count = 0usize;
    for n in 0..dim {
        if p_ini.probabilities[n] == 0.0 {
            continue;
        }
        for m in 0..dim {
            if probs[(m, n)] > 0.0 {
                count += 1;
            }
        }
    }
    let mut points = Vec::with_capacity(count);
    for m in 0..dim {
        let row = probs.row(m);
        let fin = fin_values[m];
        for n in 0..dim {
            let p = p_ini.probabilities[n] * row[n];
            if p > 0.0 {
                points.push((fin - ini_values[n], p));
            }
        }
    }
    WorkDistribution::from_points(points, binning_tol)
}

/// P_FW(w) for work w = E_fin - E_ini under initial weights `p_ini` and
/// transitions `t`.
pub fn forward_work_pdf(
    p_ini: &EnsembleWeights,
    t: &TransitionMatrix,
    spec_ini: &LabeledSpectrum,
    spec_fin: &LabeledSpectrum,
    binning_tol: f64,
) -> Result<WorkDistribution> {
    pair_difference_pdf(p_ini, t, spec_ini.energies(), spec_fin.energies(), binning_tol)
}

/// P_FW(𝒲) for the dimensionless generalized work
/// 𝒲 = (β' E_fin + Σ_k β'_k M'_k) - (β E_ini + Σ_k β_k M_k).
/// The initial and final charge sets may differ.
pub fn generalized_work_pdf(
    p_ini: &EnsembleWeights,
    t: &TransitionMatrix,
    spec_ini: &LabeledSpectrum,
    spec_fin: &LabeledSpectrum,
    betas_ini: &BetaVector,
    betas_fin: &BetaVector,
    binning_tol: f64,
) -> Result<WorkDistribution> {
    let ge_ini = generalized_energies(spec_ini, betas_ini)?;
    let ge_fin = generalized_energies(spec_fin, betas_fin)?;
    pair_difference_pdf(p_ini, t, &ge_ini, &ge_fin, binning_tol)
}

/// Everything one run of a protocol produces: the dephased diagonal ensemble
/// on the arrival eigenbasis, the work PDF, and (when both beta vectors are
/// known) the generalized-work PDF.
#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub initial_weights: EnsembleWeights,
    pub diag_weights_final: Vec<f64>,
    pub pdf_work: WorkDistribution,
    pub pdf_generalized: Option<WorkDistribution>,
}

fn verify_normalized(label: &str, weights: &[f64]) -> Result<()> {
    let total = compensated_sum(weights.iter().cloned());
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NumericFailure(format!(
            "{label} weights sum to {total}, outside 1 ± {NORMALIZATION_TOL:.0e}"
        )));
    }
    Ok(())
}

/// Run the forward protocol from the equilibrium ensemble of `betas_ini` on
/// `spec_ini` through the transitions `t` into `spec_fin`. `betas_fin`
/// supplies the final-side generalized temperatures defining 𝒲; without it
/// only the plain work PDF is produced.
pub fn forward_protocol(
    spec_ini: &LabeledSpectrum,
    spec_fin: &LabeledSpectrum,
    t: &TransitionMatrix,
    betas_ini: &BetaVector,
    betas_fin: Option<&BetaVector>,
    binning_tol: f64,
) -> Result<ProtocolOutcome> {
    let p_ini = gge_weights(spec_ini, betas_ini)?;
    let diag = t.apply(&p_ini.probabilities)?;
    verify_normalized("diagonal-ensemble", &diag)?;
    let pdf_work = forward_work_pdf(&p_ini, t, spec_ini, spec_fin, binning_tol)?;
    let pdf_generalized = betas_fin
        .map(|bf| generalized_work_pdf(&p_ini, t, spec_ini, spec_fin, betas_ini, bf, binning_tol))
        .transpose()?;
    Ok(ProtocolOutcome {
        initial_weights: p_ini,
        diag_weights_final: diag,
        pdf_work,
        pdf_generalized,
    })
}

/// Run the backward protocol: the system starts in the equilibrium ensemble
/// of `betas_bw` on the final Hamiltonian's spectrum and evolves under the
/// inverse drive, whose transition matrix is exactly the transpose of the
/// forward one. Sign conventions match the fluctuation relations: the
/// backward work for a pair is minus the forward work, so checks compare
/// P_FW(w) against P_BW(-w).
pub fn backward_protocol(
    spec_fin: &LabeledSpectrum,
    spec_ini: &LabeledSpectrum,
    forward: &TransitionMatrix,
    betas_bw: &BetaVector,
    betas_fw_side: Option<&BetaVector>,
    binning_tol: f64,
) -> Result<ProtocolOutcome> {
    let p_bw = gge_weights(spec_fin, betas_bw)?;
    let t_bw = forward.transposed();
    let diag = t_bw.apply(&p_bw.probabilities)?;
    verify_normalized("diagonal-ensemble", &diag)?;
    let pdf_work = forward_work_pdf(&p_bw, &t_bw, spec_fin, spec_ini, binning_tol)?;
    let pdf_generalized = betas_fw_side
        .map(|bf| {
            generalized_work_pdf(&p_bw, &t_bw, spec_fin, spec_ini, betas_bw, bf, binning_tol)
        })
        .transpose()?;
    Ok(ProtocolOutcome {
        initial_weights: p_bw,
        diag_weights_final: diag,
        pdf_work,
        pdf_generalized,
    })
}

/// Sampling view: draw `count` (initial, final) eigenstate pairs from the
/// exact joint distribution p_n T[m, n]. Provided for histogram realism;
/// verification never uses it.
pub fn sample_transitions<R: Rng>(
    p_ini: &EnsembleWeights,
    t: &TransitionMatrix,
    rng: &mut R,
    count: usize,
) -> Result<Vec<(usize, usize)>> {
    let dim = t.dim();
    if p_ini.dim() != dim {
        return Err(Error::invalid("weight vector dimension mismatch"));
    }
    let draw = |cdf_target: f64, weights: &mut dyn Iterator<Item = f64>| -> usize {
        let mut acc = 0.0;
        for (idx, w) in weights.enumerate() {
            acc += w;
            if cdf_target < acc {
                return idx;
            }
        }
        dim - 1
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = draw(rng.random::<f64>(), &mut p_ini.probabilities.iter().cloned());
        let m = draw(
            rng.random::<f64>(),
            &mut t.probs().column(n).iter().cloned(),
        );
        out.push((n, m));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::BetaVector;
    use crate::model::ChargeId;
    use crate::spectra::eig_in_sectors;
    use approx::assert_abs_diff_eq;

    fn params(n_spins: usize, n_max: usize, alpha: f64, g: f64) -> DickeParams {
        DickeParams {
            n_spins,
            n_max,
            omega_boson: 3.0,
            omega_atom: 10.0,
            coupling: g,
            counter_rotating: alpha,
        }
    }

    fn full_spectrum(p: &DickeParams) -> LabeledSpectrum {
        eig_hermitian(&model::build_hamiltonian(p).unwrap()).unwrap()
    }

    #[test]
    fn sudden_propagator_is_identity() {
        let basis = BasisDescriptor::new(5, 2).unwrap();
        let u = propagator(&QuenchSchedule::sudden(), &basis).unwrap();
        assert!(u.is_exact_identity());
    }

    #[test]
    fn diagonal_segment_gives_stationary_phases() {
        let p = params(2, 5, 0.0, 0.0); // g = 0: H diagonal
        let basis = p.basis();
        let t_seg = 0.37;
        let schedule = QuenchSchedule::piecewise(vec![ScheduleSegment {
            duration: t_seg,
            params: p,
        }]);
        let u = propagator(&schedule, &basis).unwrap();
        let h = model::build_hamiltonian(&p).unwrap();
        let d = h.exact_diagonal().unwrap();
        for i in 0..basis.total_dim() {
            let want = Complex64::from_polar(1.0, -d[i] * t_seg);
            assert_abs_diff_eq!(u.entries()[(i, i)].re, want.re, epsilon = 1e-10);
            assert_abs_diff_eq!(u.entries()[(i, i)].im, want.im, epsilon = 1e-10);
        }
    }

    #[test]
    fn semigroup_property() {
        // two segments of the same H merge into one of summed duration
        let p = params(2, 6, 0.5, 1.3);
        let basis = p.basis();
        let two = propagator(
            &QuenchSchedule::piecewise(vec![
                ScheduleSegment { duration: 0.4, params: p },
                ScheduleSegment { duration: 0.7, params: p },
            ]),
            &basis,
        )
        .unwrap();
        let one = propagator(
            &QuenchSchedule::piecewise(vec![ScheduleSegment { duration: 1.1, params: p }]),
            &basis,
        )
        .unwrap();
        let mut worst = 0.0f64;
        for (a, b) in two.entries().iter().zip(one.entries().iter()) {
            worst = worst.max((a - b).norm());
        }
        assert!(worst <= 1e-9, "segments do not compose: {worst:e}");
    }

    #[test]
    fn propagator_is_unitary() {
        let p = params(2, 6, 0.3, 2.0);
        let basis = p.basis();
        let u = propagator(
            &QuenchSchedule::piecewise(vec![ScheduleSegment { duration: 0.9, params: p }]),
            &basis,
        )
        .unwrap();
        assert!(unitarity_deviation(&u) <= 1e-9 * (basis.total_dim() as f64).sqrt());
    }

    #[test]
    fn no_quench_transition_is_identity() {
        let p = params(2, 5, 0.5, 1.0);
        let spec = full_spectrum(&p);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p.basis()));
        let t = transition_matrix(&spec, &spec, &u).unwrap();
        for m in 0..spec.dim() {
            for n in 0..spec.dim() {
                let want = if m == n { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(t.prob(m, n), want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn sudden_transitions_match_explicit_inner_products() {
        // independent overlap oracle with explicit loops
        let p_ini = params(2, 4, 0.5, 1.0);
        let p_fin = params(2, 4, 0.0, 3.0);
        let spec_i = full_spectrum(&p_ini);
        let spec_f = full_spectrum(&p_fin);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p_ini.basis()));
        let t = transition_matrix(&spec_i, &spec_f, &u).unwrap();
        let dim = spec_i.dim();
        for m in 0..dim {
            for n in 0..dim {
                let mut acc = Complex64::ZERO;
                for i in 0..dim {
                    acc += spec_f.eigenvector(m)[i].conj() * spec_i.eigenvector(n)[i];
                }
                assert_abs_diff_eq!(t.prob(m, n), acc.norm_sqr(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn transition_rows_and_columns_sum_to_one() {
        let p_ini = params(2, 8, 0.5, 1.0);
        let p_fin = params(2, 8, 0.0, 4.0);
        let spec_i = full_spectrum(&p_ini);
        let spec_f = full_spectrum(&p_fin);
        let basis = p_ini.basis();
        let schedule = QuenchSchedule::piecewise(vec![ScheduleSegment {
            duration: 0.5,
            params: p_fin,
        }]);
        let u = propagator(&schedule, &basis).unwrap();
        let t = transition_matrix(&spec_i, &spec_f, &u).unwrap();
        for m in 0..t.dim() {
            let rs: f64 = t.probs().row(m).sum();
            let cs: f64 = t.probs().column(m).sum();
            assert_abs_diff_eq!(rs, 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(cs, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fast_and_dense_overlap_paths_agree() {
        // sectored final spectrum has sparse supports; compare the support
        // product against the dense triple product with an explicit identity
        let p_ini = params(2, 6, 0.5, 1.0);
        let p_fin = params(2, 6, 0.0, 2.0);
        let spec_i = full_spectrum(&p_ini);
        let sectors = model::m_sectors(2, 6).unwrap();
        let h_fin = model::build_hamiltonian(&p_fin).unwrap();
        let spec_f = eig_in_sectors(&h_fin, &sectors, ChargeId::excitation_number()).unwrap();

        let fast = overlap_squared(&spec_i, &spec_f);
        let vdag = spec_f.eigenvectors().t().mapv(|z| z.conj());
        let dense = vdag.dot(&spec_i.eigenvectors()).mapv(|z| z.norm_sqr());
        for (a, b) in fast.iter().zip(dense.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn trivial_process_single_support_point() {
        let p = params(1, 4, 0.0, 1.0);
        let spec = full_spectrum(&p);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p.basis()));
        let t = transition_matrix(&spec, &spec, &u).unwrap();
        let w = gge_weights(&spec, &BetaVector::gibbs(0.2)).unwrap();
        let pdf = forward_work_pdf(&w, &t, &spec, &spec, DEFAULT_BINNING_TOL).unwrap();
        assert_eq!(pdf.len(), 1);
        assert_abs_diff_eq!(pdf.support()[0].0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pdf.support()[0].1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn first_moment_identity() {
        let p_ini = params(2, 7, 0.5, 1.0);
        let p_fin = params(2, 7, 0.0, 3.0);
        let spec_i = full_spectrum(&p_ini);
        let spec_f = full_spectrum(&p_fin);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p_ini.basis()));
        let t = transition_matrix(&spec_i, &spec_f, &u).unwrap();
        let w = gge_weights(&spec_i, &BetaVector::gibbs(0.05)).unwrap();
        let pdf = forward_work_pdf(&w, &t, &spec_i, &spec_f, DEFAULT_BINNING_TOL).unwrap();
        let diag = t.apply(&w.probabilities).unwrap();
        let e_fin: f64 = diag
            .iter()
            .zip(spec_f.energies())
            .map(|(&q, &e)| q * e)
            .sum();
        let e_ini: f64 = w
            .probabilities
            .iter()
            .zip(spec_i.energies())
            .map(|(&q, &e)| q * e)
            .sum();
        let scale = e_ini.abs().max(e_fin.abs()).max(1.0);
        assert!((pdf.mean() - (e_fin - e_ini)).abs() <= 1e-9 * scale);
    }

    #[test]
    fn gibbs_reduction_scales_support() {
        // all charge betas zero and β' = β: 𝒲 = β w pointwise
        let p_ini = params(2, 6, 0.5, 1.0);
        let p_fin = params(2, 6, 0.0, 2.0);
        let spec_i = full_spectrum(&p_ini);
        let spec_f = full_spectrum(&p_fin);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p_ini.basis()));
        let t = transition_matrix(&spec_i, &spec_f, &u).unwrap();
        let beta = 0.11;
        let w = gge_weights(&spec_i, &BetaVector::gibbs(beta)).unwrap();
        let pdf_w = forward_work_pdf(&w, &t, &spec_i, &spec_f, DEFAULT_BINNING_TOL).unwrap();
        let pdf_gen = generalized_work_pdf(
            &w,
            &t,
            &spec_i,
            &spec_f,
            &BetaVector::gibbs(beta),
            &BetaVector::gibbs(beta),
            DEFAULT_BINNING_TOL * beta,
        )
        .unwrap();
        assert_eq!(pdf_w.len(), pdf_gen.len());
        for (&(v, p), &(gv, gp)) in pdf_w.support().iter().zip(pdf_gen.support()) {
            assert_abs_diff_eq!(gv, beta * v, epsilon = 1e-10);
            assert_abs_diff_eq!(gp, p, epsilon = 1e-13);
        }
    }

    #[test]
    fn generalized_pdf_requires_labels_for_nonzero_charge_beta() {
        let p = params(2, 6, 0.5, 1.0);
        let spec = full_spectrum(&p); // unlabeled
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p.basis()));
        let t = transition_matrix(&spec, &spec, &u).unwrap();
        let w = gge_weights(&spec, &BetaVector::gibbs(0.1)).unwrap();
        let with_charge =
            BetaVector::with_charge(0.1, ChargeId::excitation_number(), 0.5);
        let r = generalized_work_pdf(&w, &t, &spec, &spec, &with_charge, &with_charge, 1e-9);
        assert!(r.is_err());
        // zero charge beta passes without labels
        let zero_charge = BetaVector::with_charge(0.1, ChargeId::excitation_number(), 0.0);
        let r = generalized_work_pdf(&w, &t, &spec, &spec, &zero_charge, &zero_charge, 1e-9);
        assert!(r.is_ok());
    }

    #[test]
    fn backward_transition_is_forward_transpose() {
        // oracle: recompute the backward matrix from U⁻¹ = U† directly
        let p_ini = params(2, 6, 0.5, 1.0);
        let p_fin = params(2, 6, 0.0, 2.0);
        let basis = p_ini.basis();
        let spec_i = full_spectrum(&p_ini);
        let spec_f = full_spectrum(&p_fin);
        let schedule = QuenchSchedule::piecewise(vec![ScheduleSegment {
            duration: 0.8,
            params: p_fin,
        }]);
        let u = propagator(&schedule, &basis).unwrap();
        let t_fw = transition_matrix(&spec_i, &spec_f, &u).unwrap();
        let u_inv = OperatorMatrix::new(
            MatrixSpace::Composite(basis),
            u.entries().t().mapv(|z| z.conj()),
            false,
        )
        .unwrap();
        let t_bw = transition_matrix(&spec_f, &spec_i, &u_inv).unwrap();
        let transposed = t_fw.transposed();
        for m in 0..t_bw.dim() {
            for n in 0..t_bw.dim() {
                assert_abs_diff_eq!(t_bw.prob(m, n), transposed.prob(m, n), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn symmetric_trivial_process_mirrors() {
        // sudden, H' = H, same betas: P_BW(-w) = P_FW(w) pointwise
        let p = params(2, 6, 0.0, 2.0);
        let spec = full_spectrum(&p);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p.basis()));
        let t = transition_matrix(&spec, &spec, &u).unwrap();
        let betas = BetaVector::gibbs(0.07);
        let fw = forward_protocol(&spec, &spec, &t, &betas, None, 1e-9).unwrap();
        let bw = backward_protocol(&spec, &spec, &t, &betas, None, 1e-9).unwrap();
        assert_eq!(fw.pdf_work.len(), bw.pdf_work.len());
        for (&(v, p1), &(bv, p2)) in fw
            .pdf_work
            .support()
            .iter()
            .zip(bw.pdf_work.support().iter().rev())
        {
            assert_abs_diff_eq!(v, -bv, epsilon = 1e-10);
            assert_abs_diff_eq!(p1, p2, epsilon = 1e-12);
        }
    }

    #[test]
    fn merging_is_stable_under_halved_tolerance() {
        let p_ini = params(2, 7, 0.5, 1.0);
        let p_fin = params(2, 7, 0.0, 3.0);
        let spec_i = full_spectrum(&p_ini);
        let spec_f = full_spectrum(&p_fin);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p_ini.basis()));
        let t = transition_matrix(&spec_i, &spec_f, &u).unwrap();
        let w = gge_weights(&spec_i, &BetaVector::gibbs(0.05)).unwrap();
        let a = forward_work_pdf(&w, &t, &spec_i, &spec_f, 1e-9).unwrap();
        let b = forward_work_pdf(&w, &t, &spec_i, &spec_f, 0.5e-9).unwrap();
        assert_eq!(a.len(), b.len());
        for (&(va, pa), &(vb, pb)) in a.support().iter().zip(b.support()) {
            assert_abs_diff_eq!(va, vb, epsilon = 1e-9);
            assert!((pa - pb).abs() <= 1e-10);
        }
    }

    #[test]
    fn unnormalized_points_rejected() {
        let r = WorkDistribution::from_points(vec![(0.0, 0.7)], 1e-9);
        assert!(matches!(r, Err(Error::NumericFailure(_))));
        let r = WorkDistribution::from_points(vec![(0.0, 0.7), (1.0, -0.3)], 1e-9);
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn merge_tolerance_groups_points() {
        let pdf = WorkDistribution::from_points(
            vec![(0.0, 0.25), (4e-10, 0.25), (1.0, 0.5)],
            1e-9,
        )
        .unwrap();
        assert_eq!(pdf.len(), 2);
        assert_abs_diff_eq!(pdf.support()[0].1, 0.5, epsilon = 1e-15);
        // weighted-mean merged value
        assert_abs_diff_eq!(pdf.support()[0].0, 2e-10, epsilon = 1e-16);
        assert!(pdf.probability_near(0.0, 1e-9).is_some());
        assert!(pdf.probability_near(0.5, 1e-9).is_none());
    }

    #[test]
    fn merging_is_mirror_symmetric() {
        // grid cells reflect exactly, so mirrored inputs merge identically
        let points = vec![
            (0.0, 0.2),
            (3.0e-10, 0.1),
            (7.1e-10, 0.1),
            (1.4e-9, 0.1),
            (2.0, 0.5),
        ];
        let mirrored: Vec<(f64, f64)> = points.iter().map(|&(v, p)| (-v, p)).collect();
        let a = WorkDistribution::from_points(points, 1e-9).unwrap();
        let b = WorkDistribution::from_points(mirrored, 1e-9).unwrap();
        assert_eq!(a.len(), b.len());
        for (&(va, pa), &(vb, pb)) in a.support().iter().zip(b.support().iter().rev()) {
            assert_abs_diff_eq!(va, -vb, epsilon = 1e-18);
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn sampling_view_draws_plausible_pairs() {
        use rand::SeedableRng;
        let p = params(1, 4, 0.0, 1.0);
        let spec = full_spectrum(&p);
        let u = OperatorMatrix::identity(MatrixSpace::Composite(p.basis()));
        let t = transition_matrix(&spec, &spec, &u).unwrap();
        let w = gge_weights(&spec, &BetaVector::gibbs(0.5)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let samples = sample_transitions(&w, &t, &mut rng, 200).unwrap();
        assert_eq!(samples.len(), 200);
        // identity transitions: m == n always
        assert!(samples.iter().all(|&(n, m)| n == m));
    }
}
