//! Gibbs and generalized-Gibbs weights, partition functions, expectation
//! values, free energies, and moment-matching fits of (generalized) inverse
//! temperatures.
//!
//! Weights are always assembled in the log domain with the maximum exponent
//! subtracted, so β·|E| of order 10⁴ stays finite.

use crate::error::{Error, Result};
use crate::hilbert::OperatorMatrix;
use crate::model::{ChargeId, MSector};
use crate::numeric::{compensated_sum, log_sum_exp, solve_small};
use crate::spectra::LabeledSpectrum;

use num_complex::Complex64;

/// Inverse temperature plus generalized inverse temperatures paired with the
/// charges they multiply. An empty charge list is the plain Gibbs ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaVector {
    pub beta: f64,
    pub charge_betas: Vec<(ChargeId, f64)>,
}

impl BetaVector {
    pub fn gibbs(beta: f64) -> Self {
        BetaVector { beta, charge_betas: Vec::new() }
    }

    pub fn with_charge(beta: f64, id: ChargeId, charge_beta: f64) -> Self {
        BetaVector { beta, charge_betas: vec![(id, charge_beta)] }
    }

    pub fn charge_beta(&self, id: &ChargeId) -> Option<f64> {
        self.charge_betas
            .iter()
            .find(|(cid, _)| cid == id)
            .map(|(_, b)| *b)
    }
}

/// Probabilities over the eigenstates of one spectrum together with ln Z.
#[derive(Clone, Debug)]
pub struct EnsembleWeights {
    pub probabilities: Vec<f64>,
    pub log_partition: f64,
}

impl EnsembleWeights {
    pub fn dim(&self) -> usize {
        self.probabilities.len()
    }
}

/// Target expectation values the fit must reproduce: the energy and one value
/// per charge.
#[derive(Clone, Debug)]
pub struct FitTargets {
    pub energy: f64,
    pub charge_targets: Vec<(ChargeId, f64)>,
}

impl FitTargets {
    pub fn energy_only(energy: f64) -> Self {
        FitTargets { energy, charge_targets: Vec::new() }
    }
}

/// Exponents -β E_n - Σ_k β_k M_{k,n} for every eigenstate.
fn log_weights_unnormalized(spec: &LabeledSpectrum, betas: &BetaVector) -> Result<Vec<f64>> {
    let mut logw: Vec<f64> = spec.energies().iter().map(|&e| -betas.beta * e).collect();
    for (id, beta_k) in &betas.charge_betas {
        let labels = spec.charge_values(id).ok_or_else(|| {
            Error::invalid(format!("spectrum carries no labels for charge '{id}'"))
        })?;
        for (lw, &m) in logw.iter_mut().zip(labels) {
            *lw -= beta_k * m as f64;
        }
    }
    Ok(logw)
}

/// Generalized Gibbs weights p_n ∝ exp(-β E_n - Σ_k β_k M_{k,n}) and ln Z.
pub fn gge_weights(spec: &LabeledSpectrum, betas: &BetaVector) -> Result<EnsembleWeights> {
    let logw = log_weights_unnormalized(spec, betas)?;
    let log_z = log_sum_exp(&logw);
    if !log_z.is_finite() {
        return Err(Error::NumericFailure(format!(
            "partition function is not finite (ln Z = {log_z})"
        )));
    }
    let probabilities: Vec<f64> = logw.iter().map(|&lw| (lw - log_z).exp()).collect();
    Ok(EnsembleWeights { probabilities, log_partition: log_z })
}

/// Observable whose ensemble average [`expectation`] computes: the energy, a
/// labeled charge, or an arbitrary operator (evaluated through the
/// eigenvectors).
pub enum Observable<'a> {
    Energy,
    Charge(&'a ChargeId),
    Operator(&'a OperatorMatrix),
}

/// Σ_n p_n O_nn along the diagonal paths, or tr[ρ O] through the eigenvector
/// transform for a general operator.
pub fn expectation(
    spec: &LabeledSpectrum,
    weights: &EnsembleWeights,
    observable: Observable<'_>,
) -> Result<f64> {
    if weights.dim() != spec.dim() {
        return Err(Error::invalid(format!(
            "weights dimension {} does not match spectrum dimension {}",
            weights.dim(),
            spec.dim()
        )));
    }
    match observable {
        Observable::Energy => Ok(compensated_sum(
            weights
                .probabilities
                .iter()
                .zip(spec.energies())
                .map(|(&p, &e)| p * e),
        )),
        Observable::Charge(id) => {
            let labels = spec.charge_values(id).ok_or_else(|| {
                Error::invalid(format!("spectrum carries no labels for charge '{id}'"))
            })?;
            Ok(compensated_sum(
                weights
                    .probabilities
                    .iter()
                    .zip(labels)
                    .map(|(&p, &m)| p * m as f64),
            ))
        }
        Observable::Operator(op) => {
            if op.dim() != spec.dim() {
                return Err(Error::invalid(format!(
                    "operator dimension {} does not match spectrum dimension {}",
                    op.dim(),
                    spec.dim()
                )));
            }
            // tr[ρ O] = Σ_n p_n ⟨v_n|O|v_n⟩
            let v = spec.eigenvectors();
            let dim = spec.dim();
            let mut acc = Vec::with_capacity(dim);
            for (n, &p) in weights.probabilities.iter().enumerate() {
                let mut val = Complex64::ZERO;
                for i in 0..dim {
                    let mut ov = Complex64::ZERO;
                    for k in 0..dim {
                        ov += op.entries()[(i, k)] * v[(k, n)];
                    }
                    val += v[(i, n)].conj() * ov;
                }
                acc.push(p * val.re);
            }
            Ok(compensated_sum(acc))
        }
    }
}

/// ℱ = -ln Z_GGE (dimensionless generalized free energy).
pub fn generalized_free_energy(spec: &LabeledSpectrum, betas: &BetaVector) -> Result<f64> {
    Ok(-gge_weights(spec, betas)?.log_partition)
}

/// Standard free energy F = -(1/β) ln Z of the Gibbs ensemble, so that βΔF
/// matches the standard fluctuation-relation exponent.
pub fn gibbs_free_energy(spec: &LabeledSpectrum, beta: f64) -> Result<f64> {
    if beta == 0.0 {
        return Err(Error::invalid("gibbs_free_energy requires beta != 0"));
    }
    Ok(generalized_free_energy(spec, &BetaVector::gibbs(beta))? / beta)
}

/// Total ensemble weight sitting on Fock-truncated charge sectors. This is
/// the quantity the truncation guard compares against its threshold.
pub fn weight_on_truncated_sectors(
    spec: &LabeledSpectrum,
    sectors: &[MSector],
    weights: &EnsembleWeights,
) -> Result<f64> {
    if weights.dim() != spec.dim() {
        return Err(Error::invalid("weights dimension mismatch"));
    }
    let truncated: Vec<bool> = sectors.iter().map(|s| s.truncated).collect();
    let mass = compensated_sum(weights.probabilities.iter().enumerate().filter_map(
        |(n, &p)| {
            let sector = spec.sector_of()[n];
            if sector >= 0 && truncated.get(sector as usize).copied().unwrap_or(false) {
                Some(p)
            } else {
                None
            }
        },
    ));
    Ok(mass)
}

const MAX_FIT_ITERATIONS: usize = 200;

/// Mean and covariance matrix of (energy, charges...) under the current
/// weights, with means subtracted for stability.
fn moments(
    energies: &[f64],
    charge_label_sets: &[&[i64]],
    probs: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = 1 + charge_label_sets.len();
    let value = |obs: usize, n: usize| -> f64 {
        if obs == 0 {
            energies[n]
        } else {
            charge_label_sets[obs - 1][n] as f64
        }
    };
    let mut means = vec![0.0; k];
    for (obs, mean) in means.iter_mut().enumerate() {
        *mean = compensated_sum(probs.iter().enumerate().map(|(n, &p)| p * value(obs, n)));
    }
    let mut cov = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a..k {
            let c = compensated_sum(probs.iter().enumerate().map(|(n, &p)| {
                p * (value(a, n) - means[a]) * (value(b, n) - means[b])
            }));
            cov[a][b] = c;
            cov[b][a] = c;
        }
    }
    (means, cov)
}

fn weights_for(energies: &[f64], charge_label_sets: &[&[i64]], theta: &[f64]) -> Vec<f64> {
    let n = energies.len();
    let mut logw = vec![0.0; n];
    for (i, lw) in logw.iter_mut().enumerate() {
        let mut acc = -theta[0] * energies[i];
        for (k, labels) in charge_label_sets.iter().enumerate() {
            acc -= theta[k + 1] * labels[i] as f64;
        }
        *lw = acc;
    }
    let log_z = log_sum_exp(&logw);
    logw.iter().map(|&lw| (lw - log_z).exp()).collect()
}

/// Fit (β, {β_k}) so the ensemble reproduces the target expectation values.
///
/// The fit is exact moment matching: damped Newton iteration with the
/// analytic Jacobian ∂⟨A⟩/∂β_k = -Cov(A, M_k), with a Levenberg-style
/// diagonal damping fallback when the covariance matrix turns singular.
/// The pure-energy fit brackets β > 0 by bisection before polishing; with
/// charge targets the initial β comes from the same bisection (extended to
/// negative β when the target demands it) and charge betas start at zero.
///
/// Converges when every residual satisfies |⟨A⟩ - target| ≤ 1e-8·max(1, |target|).
pub fn fit_temperatures(
    spec: &LabeledSpectrum,
    targets: &FitTargets,
    initial_guess: Option<&BetaVector>,
) -> Result<BetaVector> {
    let energies = spec.energies();
    let mut charge_ids = Vec::new();
    let mut charge_label_sets: Vec<&[i64]> = Vec::new();
    for (id, target) in &targets.charge_targets {
        let labels = spec.charge_values(id).ok_or_else(|| {
            Error::invalid(format!("spectrum carries no labels for charge '{id}'"))
        })?;
        let (lo, hi) = label_range(labels);
        if !(*target > lo && *target < hi) {
            return Err(Error::InfeasibleTarget(format!(
                "charge '{id}' target {target} outside attainable open range ({lo}, {hi})"
            )));
        }
        charge_ids.push(id.clone());
        charge_label_sets.push(labels);
    }
    let (e_lo, e_hi) = float_range(energies);
    if !(targets.energy > e_lo && targets.energy < e_hi) {
        return Err(Error::InfeasibleTarget(format!(
            "energy target {} outside attainable open range ({e_lo}, {e_hi})",
            targets.energy
        )));
    }

    let gibbs_only = charge_label_sets.is_empty();
    let mut theta = match initial_guess {
        Some(guess) => {
            let mut t = vec![guess.beta];
            for id in &charge_ids {
                t.push(guess.charge_beta(id).unwrap_or(0.0));
            }
            t
        }
        None => {
            let beta0 = bisect_gibbs_beta(energies, targets.energy, !gibbs_only)?;
            let mut t = vec![beta0];
            t.resize(1 + charge_label_sets.len(), 0.0);
            t
        }
    };

    let target_vec: Vec<f64> = std::iter::once(targets.energy)
        .chain(targets.charge_targets.iter().map(|(_, t)| *t))
        .collect();
    let tol: Vec<f64> = target_vec.iter().map(|t| 1e-8 * t.abs().max(1.0)).collect();

    let residual = |theta: &[f64]| -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
        let probs = weights_for(energies, &charge_label_sets, theta);
        let (means, cov) = moments(energies, &charge_label_sets, &probs);
        let r: Vec<f64> = means
            .iter()
            .zip(&target_vec)
            .map(|(m, t)| m - t)
            .collect();
        (r, means, cov)
    };

    let norm = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>().sqrt();

    let (mut r, _, mut cov) = residual(&theta);
    for _iter in 0..MAX_FIT_ITERATIONS {
        if r.iter().zip(&tol).all(|(res, t)| res.abs() <= *t) {
            let mut charge_betas = Vec::new();
            for (k, id) in charge_ids.iter().enumerate() {
                charge_betas.push((id.clone(), theta[k + 1]));
            }
            return Ok(BetaVector { beta: theta[0], charge_betas });
        }

        // Newton: J δ = -r with J = -Cov, i.e. Cov δ = r.
        let mut step = {
            let mut a = cov.clone();
            let mut b = r.clone();
            solve_small(&mut a, &mut b)
        };
        if step.is_none() {
            // Levenberg fallback on a singular covariance.
            let mut mu = 1e-8;
            while step.is_none() && mu < 1e8 {
                let mut a = cov.clone();
                for (i, row) in a.iter_mut().enumerate() {
                    row[i] += mu * row[i].abs().max(1e-300);
                }
                let mut b = r.clone();
                step = solve_small(&mut a, &mut b);
                mu *= 10.0;
            }
        }
        let step = step.ok_or_else(|| {
            Error::NumericFailure(format!(
                "fit Jacobian singular; residual norm {:.3e}",
                norm(&r)
            ))
        })?;

        // Backtracking damped update on the residual norm.
        let r0 = norm(&r);
        let mut lambda = 1.0;
        let mut accepted = None;
        while lambda > 1e-14 {
            let trial: Vec<f64> = theta
                .iter()
                .zip(&step)
                .map(|(t, s)| t + lambda * s)
                .collect();
            let (r_trial, _, cov_trial) = residual(&trial);
            if norm(&r_trial) <= (1.0 - 1e-4 * lambda) * r0 {
                accepted = Some((trial, r_trial, cov_trial));
                break;
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((trial, r_trial, cov_trial)) => {
                theta = trial;
                r = r_trial;
                cov = cov_trial;
            }
            None => {
                return Err(Error::NumericFailure(format!(
                    "fit stagnated: backtracking exhausted at residual norm {:.3e}",
                    r0
                )));
            }
        }
    }
    Err(Error::NumericFailure(format!(
        "fit did not converge in {MAX_FIT_ITERATIONS} iterations; final residual norm {:.3e}",
        norm(&r)
    )))
}

fn float_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

fn label_range(labels: &[i64]) -> (f64, f64) {
    let lo = labels.iter().min().copied().unwrap_or(0) as f64;
    let hi = labels.iter().max().copied().unwrap_or(0) as f64;
    (lo, hi)
}

/// ⟨E⟩ under Gibbs(β); strictly decreasing in β.
fn gibbs_energy(energies: &[f64], beta: f64) -> f64 {
    let logw: Vec<f64> = energies.iter().map(|&e| -beta * e).collect();
    let log_z = log_sum_exp(&logw);
    compensated_sum(
        logw.iter()
            .zip(energies)
            .map(|(&lw, &e)| (lw - log_z).exp() * e),
    )
}

/// Bisection for ⟨E⟩(β) = target. With `allow_negative` the bracket extends
/// below zero (used for GGE initial guesses in finite spectra, where
/// population-inverted targets are representable); otherwise the target must
/// be reachable with β > 0, i.e. lie below the flat average of the spectrum.
fn bisect_gibbs_beta(energies: &[f64], target: f64, allow_negative: bool) -> Result<f64> {
    let flat = compensated_sum(energies.iter().cloned()) / energies.len() as f64;
    let mut lo; // f(lo) > target
    let mut hi; // f(hi) < target
    if target < flat {
        lo = 0.0;
        hi = 1e-6;
        let mut steps = 0;
        while gibbs_energy(energies, hi) > target {
            hi *= 4.0;
            steps += 1;
            if steps > 200 {
                return Err(Error::InfeasibleTarget(format!(
                    "energy target {target} unreachable: stays above ⟨E⟩(β) even at β = {hi:.3e}"
                )));
            }
        }
    } else if allow_negative {
        hi = 0.0;
        lo = -1e-6;
        let mut steps = 0;
        while gibbs_energy(energies, lo) < target {
            lo *= 4.0;
            steps += 1;
            if steps > 200 {
                return Err(Error::InfeasibleTarget(format!(
                    "energy target {target} unreachable even at β = {lo:.3e}"
                )));
            }
        }
    } else {
        return Err(Error::InfeasibleTarget(format!(
            "energy target {target} is not below the flat spectral average {flat}; \
             unreachable with β > 0"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gibbs_energy(energies, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= 1e-12 * hi.abs().max(1e-12) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
