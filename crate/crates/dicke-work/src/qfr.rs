//! Verification of the standard and generalized Tasaki-Crooks and Jarzynski
//! fluctuation relations against exact work distributions, plus occupation
//! comparisons between dephased states and reference ensembles.
//!
//! All exponential averages and pointwise ratios are evaluated in the log
//! domain; relative deviations stay meaningful even when the exponents span
//! hundreds of units.

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, log_sum_exp_with_max};
use crate::spectra::LabeledSpectrum;
use crate::tpm::WorkDistribution;
use crate::ensembles::EnsembleWeights;

/// Support points with probability at or below this floor are excluded from
/// pointwise Crooks comparisons; the ratio is ill-conditioned in far tails at
/// double precision. Excluded mass is reported, never asserted away.
pub const SUPPORT_FLOOR: f64 = 1e-12;

/// Exponential-average check of a Jarzynski-type equality.
#[derive(Clone, Debug)]
pub struct JarzynskiCheck {
    /// ⟨e^{-βw}⟩ or ⟨e^{-𝒲}⟩ over the distribution.
    pub exponential_average: f64,
    /// e^{-βΔF} or e^{-Δℱ}.
    pub target: f64,
    /// |average / target - 1|.
    pub residual: f64,
}

fn exponential_average_check(pdf: &WorkDistribution, scale: f64, log_target: f64) -> JarzynskiCheck {
    // ln Σ p_i e^{-scale·w_i} via log-sum-exp over ln p_i - scale·w_i
    let mut max = f64::NEG_INFINITY;
    for &(v, p) in pdf.support() {
        max = max.max(p.ln() - scale * v);
    }
    let log_avg = log_sum_exp_with_max(
        max,
        pdf.support().iter().map(|&(v, p)| p.ln() - scale * v),
    );
    let residual = (log_avg - log_target).exp_m1().abs();
    JarzynskiCheck {
        exponential_average: log_avg.exp(),
        target: log_target.exp(),
        residual,
    }
}

/// ⟨e^{-βw}⟩ compared against e^{-βΔF}. Exact when the initial state is the
/// Gibbs ensemble at β of the initial Hamiltonian.
pub fn check_jarzynski(pdf: &WorkDistribution, beta: f64, delta_f: f64) -> JarzynskiCheck {
    exponential_average_check(pdf, beta, -beta * delta_f)
}

/// ⟨e^{-𝒲}⟩ compared against e^{-Δℱ}, with Δℱ the difference of
/// dimensionless generalized free energies. Exact when the initial state is
/// the exact GGE entering 𝒲, for any final-side generalized temperatures.
pub fn check_generalized_jarzynski(pdf: &WorkDistribution, delta_cal_f: f64) -> JarzynskiCheck {
    exponential_average_check(pdf, 1.0, -delta_cal_f)
}

/// Exponent of the Crooks factor multiplying P_BW(-w): β(w - ΔF) for the
/// standard relation, 𝒲 - Δℱ for the generalized one.
#[derive(Clone, Copy, Debug)]
pub enum CrooksExponent {
    Standard { beta: f64, delta_f: f64 },
    Generalized { delta_cal_f: f64 },
}

impl CrooksExponent {
    fn eval(&self, value: f64) -> f64 {
        match *self {
            CrooksExponent::Standard { beta, delta_f } => beta * (value - delta_f),
            CrooksExponent::Generalized { delta_cal_f } => value - delta_cal_f,
        }
    }
}

/// One matched support point of a Crooks comparison: `lhs` is the forward
/// probability at `value`, `rhs` is the mirrored backward probability times
/// the exponential factor. Unmatched points keep `rhs = 0` and an infinite
/// deviation, and count toward the mismatch mass instead of the maximum.
#[derive(Clone, Copy, Debug)]
pub struct CrooksPoint {
    pub value: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_deviation: f64,
    pub matched: bool,
}

/// Pointwise comparison of a forward and a backward work distribution under
/// a Crooks-type identity.
#[derive(Clone, Debug)]
pub struct CrooksCheck {
    /// Every forward support point with probability above [`SUPPORT_FLOOR`].
    pub points: Vec<CrooksPoint>,
    /// Largest |lhs/rhs - 1| over matched points.
    pub max_rel_deviation: f64,
    /// Forward probability mass (above the floor) without a mirrored
    /// backward support point.
    pub support_mismatch_mass: f64,
    /// Forward probability mass skipped because it sits at or below the
    /// floor.
    pub skipped_mass: f64,
}

/// For each forward support value v with probability above the floor, find
/// the backward support point mirroring it at -v and compare P_FW(v) against
/// P_BW(-v)·e^{exponent(v)}.
///
/// Both distributions must share the same merge tolerance: support points
/// are paired by their (mirror-symmetric) merge cell, which is unambiguous
/// even when neighboring-cell support points sit closer together than the
/// tolerance.
pub fn crooks_pair(
    pdf_fw: &WorkDistribution,
    pdf_bw: &WorkDistribution,
    exponent: CrooksExponent,
) -> Result<CrooksCheck> {
    if pdf_fw.is_empty() || pdf_bw.is_empty() {
        return Err(Error::invalid("crooks_pair requires non-empty distributions"));
    }
    if pdf_fw.binning_tol() != pdf_bw.binning_tol() {
        return Err(Error::invalid(
            "crooks_pair requires both distributions to share one merge tolerance",
        ));
    }
    let tol = pdf_fw.binning_tol();
    let cell = |v: f64| (v / tol).round() as i64;
    let mut points = Vec::new();
    let mut max_rel: f64 = 0.0;
    let mut mismatch_mass = 0.0;
    let mut skipped_mass = 0.0;

    // Backward support mirrored: iterate it from the top so -cell ascends.
    let bw = pdf_bw.support();
    let mut bw_iter = bw.len();
    for &(v, p) in pdf_fw.support() {
        if p <= SUPPORT_FLOOR {
            skipped_mass += p;
            continue;
        }
        let k = cell(v);
        // advance the mirrored pointer to the first -bw_cell >= k
        while bw_iter > 0 && -cell(bw[bw_iter - 1].0) < k {
            bw_iter -= 1;
        }
        let matched = bw_iter > 0 && -cell(bw[bw_iter - 1].0) == k;
        if matched {
            let p_bw = bw[bw_iter - 1].1;
            let log_rhs = p_bw.ln() + exponent.eval(v);
            let rel = (p.ln() - log_rhs).exp_m1().abs();
            points.push(CrooksPoint {
                value: v,
                lhs: p,
                rhs: log_rhs.exp(),
                rel_deviation: rel,
                matched: true,
            });
            max_rel = max_rel.max(rel);
        } else {
            mismatch_mass += p;
            points.push(CrooksPoint {
                value: v,
                lhs: p,
                rhs: 0.0,
                rel_deviation: f64::INFINITY,
                matched: false,
            });
        }
    }
    Ok(CrooksCheck {
        points,
        max_rel_deviation: max_rel,
        support_mismatch_mass: mismatch_mass,
        skipped_mass,
    })
}

/// One eigenstate's occupation in the dephased state versus a reference
/// ensemble.
#[derive(Clone, Debug)]
pub struct OccupationRow {
    pub index: usize,
    pub energy: f64,
    pub charge_label: Option<i64>,
    pub actual: f64,
    pub ensemble: f64,
}

/// Per-eigenstate occupation comparison plus aggregate views.
#[derive(Clone, Debug)]
pub struct OccupationComparison {
    pub rows: Vec<OccupationRow>,
    /// Total-variation distance ½ Σ |actual - ensemble|.
    pub total_variation: f64,
    /// Marginal over the charge label when the spectrum carries one:
    /// (label, actual mass, ensemble mass).
    pub charge_marginal: Option<Vec<(i64, f64, f64)>>,
}

impl OccupationComparison {
    /// Marginal over energy bins of the given width: (bin center, actual
    /// mass, ensemble mass).
    pub fn energy_marginal(&self, bin_width: f64) -> Result<Vec<(f64, f64, f64)>> {
        if !(bin_width > 0.0) {
            return Err(Error::invalid("bin width must be > 0"));
        }
        let mut bins: std::collections::BTreeMap<i64, (f64, f64)> =
            std::collections::BTreeMap::new();
        for row in &self.rows {
            let k = (row.energy / bin_width).floor() as i64;
            let e = bins.entry(k).or_insert((0.0, 0.0));
            e.0 += row.actual;
            e.1 += row.ensemble;
        }
        Ok(bins
            .into_iter()
            .map(|(k, (a, e))| ((k as f64 + 0.5) * bin_width, a, e))
            .collect())
    }
}

/// Pair the dephased diagonal-ensemble weights with a reference ensemble's
/// weights, eigenstate by eigenstate.
pub fn occupation_comparison(
    diag_weights: &[f64],
    ensemble: &EnsembleWeights,
    spec: &LabeledSpectrum,
) -> Result<OccupationComparison> {
    let dim = spec.dim();
    if diag_weights.len() != dim || ensemble.dim() != dim {
        return Err(Error::invalid("occupation comparison dimension mismatch"));
    }
    let labels = spec.charges().first().map(|c| c.values.as_slice());
    let rows: Vec<OccupationRow> = (0..dim)
        .map(|n| OccupationRow {
            index: n,
            energy: spec.energies()[n],
            charge_label: labels.map(|l| l[n]),
            actual: diag_weights[n],
            ensemble: ensemble.probabilities[n],
        })
        .collect();
    let total_variation = 0.5
        * compensated_sum(
            rows.iter()
                .map(|r| (r.actual - r.ensemble).abs()),
        );
    let charge_marginal = labels.map(|l| {
        let mut acc: std::collections::BTreeMap<i64, (f64, f64)> =
            std::collections::BTreeMap::new();
        for (n, &label) in l.iter().enumerate() {
            let e = acc.entry(label).or_insert((0.0, 0.0));
            e.0 += diag_weights[n];
            e.1 += ensemble.probabilities[n];
        }
        acc.into_iter().map(|(m, (a, e))| (m, a, e)).collect()
    });
    Ok(OccupationComparison { rows, total_variation, charge_marginal })
}
