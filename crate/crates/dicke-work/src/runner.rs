//! Experiment runner: executes a configured protocol end to end and writes
//! machine-readable outputs.
//!
//! One run produces, per panel of the standard comparison figure:
//! occupations of the dephased state against both fitted references,
//! the four exact work PDFs (forward/backward, plain and generalized),
//! both pointwise Crooks comparisons, and a JSON summary with the fitted
//! temperatures, free-energy differences, and every check result. Outputs
//! are deterministic and byte-stable for a given configuration and build;
//! timing diagnostics go to stderr only.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use serde::Serialize;

use crate::cache::{Decomposition, SpectrumCache};
use crate::config::{BackwardReference, ExperimentConfig, OutputFormat};
use crate::ensembles::{
    self, gge_weights, BetaVector, FitTargets,
};
use crate::error::{Error, Result};
use crate::model::{self, ChargeId, DickeParams, MSector};
use crate::numeric::compensated_sum;
use crate::qfr::{self, CrooksCheck, CrooksExponent, JarzynskiCheck, OccupationComparison};
use crate::spectra::{self, LabeledSpectrum};
use crate::tpm::{self, WorkDistribution};

/// How [`run_experiment`] behaves beyond the configuration itself.
#[derive(Debug, Default)]
pub struct RunOptions {
    /// Skip all file output; compute and return the summary only.
    pub skip_outputs: bool,
    /// Spectral cache; None disables caching.
    pub cache: Option<SpectrumCache>,
    /// Timing diagnostics on stderr.
    pub progress: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChargeBetaSummary {
    pub charge: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BetaSummary {
    pub beta: f64,
    pub charge_betas: Vec<ChargeBetaSummary>,
}

impl From<&BetaVector> for BetaSummary {
    fn from(b: &BetaVector) -> Self {
        BetaSummary {
            beta: b.beta,
            charge_betas: b
                .charge_betas
                .iter()
                .map(|(id, v)| ChargeBetaSummary { charge: id.0.clone(), value: *v })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckSummary {
    pub exponential_average: f64,
    pub target: f64,
    pub residual: f64,
}

impl From<&JarzynskiCheck> for CheckSummary {
    fn from(c: &JarzynskiCheck) -> Self {
        CheckSummary {
            exponential_average: c.exponential_average,
            target: c.target,
            residual: c.residual,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CrooksSummary {
    pub max_rel_deviation: f64,
    pub support_mismatch_mass: f64,
    pub skipped_mass: f64,
    pub compared_points: usize,
}

impl From<&CrooksCheck> for CrooksSummary {
    fn from(c: &CrooksCheck) -> Self {
        CrooksSummary {
            max_rel_deviation: c.max_rel_deviation,
            support_mismatch_mass: c.support_mismatch_mass,
            skipped_mass: c.skipped_mass,
            compared_points: c.points.len(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TargetSummary {
    pub energy: f64,
    pub excitation_number: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct OccupationSummary {
    pub total_variation_gge: Option<f64>,
    pub total_variation_gibbs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TruncationSummary {
    pub threshold: f64,
    pub actual_state_mass: Option<f64>,
    pub fitted_gge_mass: Option<f64>,
    pub fitted_gibbs_mass: Option<f64>,
    pub initial_state_mass: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PdfSummary {
    pub support_points: usize,
    pub mean: f64,
}

/// Everything a run determines, in the order it is written to summary.json.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub model_initial: DickeParams,
    pub model_final: DickeParams,
    pub initial_betas: BetaSummary,
    pub targets: TargetSummary,
    pub fitted_gibbs: BetaSummary,
    pub fitted_gge: Option<BetaSummary>,
    /// The reference whose ensemble seeds the generalized backward protocol
    /// and defines the final-side betas of the generalized work variable.
    pub generalized_reference: BetaSummary,
    /// β ΔF of the standard relation at the forward initial β (absent when
    /// that β is zero).
    pub beta_delta_f: Option<f64>,
    /// Δℱ of the generalized relation.
    pub delta_cal_f: f64,
    pub jarzynski_standard: Option<CheckSummary>,
    pub jarzynski_generalized: CheckSummary,
    pub crooks_standard: CrooksSummary,
    pub crooks_generalized: CrooksSummary,
    pub occupations: OccupationSummary,
    pub truncation: TruncationSummary,
    pub pdf_work_forward: PdfSummary,
    pub pdf_generalized_forward: PdfSummary,
}

struct Progress {
    enabled: bool,
    start: Instant,
}

impl Progress {
    fn new(enabled: bool) -> Self {
        Progress { enabled, start: Instant::now() }
    }

    fn step(&self, label: &str) {
        if self.enabled {
            eprintln!(
                "[{:8.2}s] {label}",
                self.start.elapsed().as_secs_f64()
            );
        }
    }
}

fn decompose(
    params: &DickeParams,
    cache: &Option<SpectrumCache>,
    progress: &Progress,
    label: &str,
) -> Result<(LabeledSpectrum, Option<Vec<MSector>>)> {
    let kind = params.conserved_charge_kind();
    let decomposition = if kind.is_some() {
        Decomposition::MSectors
    } else {
        Decomposition::ParitySplit
    };
    let sectors = match kind {
        Some(k) => Some(model::m_sectors_for(k, params.n_spins, params.n_max)?),
        None => None,
    };

    // only the expensive parity-split decomposition is worth caching
    if decomposition == Decomposition::ParitySplit {
        if let Some(cache) = cache {
            if let Some(spec) = cache.load(params, decomposition) {
                progress.step(&format!("{label}: loaded cached spectrum"));
                return Ok((spec, sectors));
            }
        }
    }

    let h = model::build_hamiltonian(params)?;
    progress.step(&format!("{label}: Hamiltonian assembled (dim {})", h.dim()));
    let spec = if let (Some(sectors), Some(kind)) = (&sectors, kind) {
        spectra::eig_in_sectors(&h, sectors, kind.id())?
    } else {
        let parity = model::parity(params.n_spins, params.n_max)?;
        spectra::parity_split_eig(&h, &parity)?
    };
    progress.step(&format!("{label}: diagonalized"));
    if decomposition == Decomposition::ParitySplit {
        if let Some(cache) = cache {
            if let Err(e) = cache.store(params, decomposition, &spec) {
                eprintln!("warning: failed to write spectral cache: {e}");
            }
        }
    }
    Ok((spec, sectors))
}

fn truncated_mass(
    spec: &LabeledSpectrum,
    sectors: &Option<Vec<MSector>>,
    weights: &[f64],
) -> Option<f64> {
    let sectors = sectors.as_ref()?;
    let truncated: Vec<bool> = sectors.iter().map(|s| s.truncated).collect();
    Some(compensated_sum(weights.iter().enumerate().filter_map(
        |(n, &p)| {
            let s = spec.sector_of()[n];
            (s >= 0 && truncated[s as usize]).then_some(p)
        },
    )))
}

/// Execute the configured protocol. See the module docs for the produced
/// files; with `skip_outputs` only the [`Summary`] is computed.
pub fn run_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<Summary> {
    let progress = Progress::new(options.progress);
    let basis = config.model_initial.basis();
    if config.model_final.basis() != basis {
        return Err(Error::invalid(
            "initial and final models must share n_spins and n_max",
        ));
    }
    let binning_tol = config.outputs.binning_tol;

    // spectra
    let (mut spec_ini, sectors_ini) =
        decompose(&config.model_initial, &options.cache, &progress, "initial model")?;
    let (mut spec_fin, sectors_fin) =
        decompose(&config.model_final, &options.cache, &progress, "final model")?;

    // propagator and transition probabilities
    let u = tpm::propagator(&config.schedule, &basis)?;
    progress.step("propagator ready");
    let transitions = tpm::transition_matrix(&spec_ini, &spec_fin, &u)?;
    drop(u);
    progress.step("transition matrix assembled");
    spec_ini.drop_eigenvectors();
    spec_fin.drop_eigenvectors();

    // forward initial ensemble and dephased diagonal ensemble
    let betas_ini = &config.initial_ensemble.betas;
    let p_ini = gge_weights(&spec_ini, betas_ini)?;
    let diag = transitions.apply(&p_ini.probabilities)?;

    // fit targets from the dephased state
    let energy_target = compensated_sum(
        diag.iter().zip(spec_fin.energies()).map(|(&p, &e)| p * e),
    );
    let fin_charge: Option<ChargeId> = spec_fin.charges().first().map(|c| c.id.clone());
    let charge_target = fin_charge.as_ref().map(|id| {
        let labels = spec_fin.charge_values(id).expect("labels exist for own charge");
        compensated_sum(diag.iter().zip(labels).map(|(&p, &m)| p * m as f64))
    });
    progress.step("dephased state and fit targets computed");

    // reference fits
    let fitted_gibbs =
        ensembles::fit_temperatures(&spec_fin, &FitTargets::energy_only(energy_target), None)?;
    let fitted_gge = match (charge_target, &fin_charge) {
        (Some(m_target), Some(id)) => Some(ensembles::fit_temperatures(
            &spec_fin,
            &FitTargets {
                energy: energy_target,
                charge_targets: vec![(id.clone(), m_target)],
            },
            None,
        )?),
        _ => None,
    };
    progress.step("reference ensembles fitted");

    let gen_reference: BetaVector = match &config.backward_reference {
        BackwardReference::FittedGge => fitted_gge.clone().ok_or_else(|| {
            Error::invalid("fitted-gge backward reference requires a charge-conserving final model")
        })?,
        BackwardReference::FittedGibbs => fitted_gibbs.clone(),
        BackwardReference::ExplicitBetas(b) => b.clone(),
    };

    // truncation guard
    let w_gibbs = gge_weights(&spec_fin, &fitted_gibbs)?;
    let w_gge = fitted_gge
        .as_ref()
        .map(|b| gge_weights(&spec_fin, b))
        .transpose()?;
    let truncation = TruncationSummary {
        threshold: config.truncation_guard,
        actual_state_mass: truncated_mass(&spec_fin, &sectors_fin, &diag),
        fitted_gge_mass: w_gge
            .as_ref()
            .and_then(|w| truncated_mass(&spec_fin, &sectors_fin, &w.probabilities)),
        fitted_gibbs_mass: truncated_mass(&spec_fin, &sectors_fin, &w_gibbs.probabilities),
        initial_state_mass: truncated_mass(&spec_ini, &sectors_ini, &p_ini.probabilities),
    };
    for mass in [
        truncation.actual_state_mass,
        truncation.fitted_gge_mass,
        truncation.fitted_gibbs_mass,
        truncation.initial_state_mass,
    ]
    .into_iter()
    .flatten()
    {
        if mass > config.truncation_guard {
            return Err(Error::TruncationGuard { mass, limit: config.truncation_guard });
        }
    }

    // free-energy differences
    let beta_delta_f = if betas_ini.beta != 0.0 {
        let df = ensembles::gibbs_free_energy(&spec_fin, betas_ini.beta)?
            - ensembles::gibbs_free_energy(&spec_ini, betas_ini.beta)?;
        Some(betas_ini.beta * df)
    } else {
        None
    };
    let delta_cal_f = ensembles::generalized_free_energy(&spec_fin, &gen_reference)?
        - ensembles::generalized_free_energy(&spec_ini, betas_ini)?;

    let writer = OutputWriter::new(config, options.skip_outputs)?;

    // forward work distribution and the standard relation
    let pdf_w_fw = tpm::forward_work_pdf(&p_ini, &transitions, &spec_ini, &spec_fin, binning_tol)?;
    progress.step(&format!("forward work PDF: {} support points", pdf_w_fw.len()));
    writer.write_pdf("pdf_w_fw", &pdf_w_fw)?;
    let jarzynski_standard = beta_delta_f.map(|bdf| {
        qfr::check_jarzynski(&pdf_w_fw, betas_ini.beta, bdf / betas_ini.beta)
    });

    let crooks_standard = {
        let bw = tpm::backward_protocol(
            &spec_fin,
            &spec_ini,
            &transitions,
            &fitted_gibbs,
            None,
            binning_tol,
        )?;
        progress.step("backward protocol (Gibbs reference) done");
        writer.write_pdf("pdf_w_bw", &bw.pdf_work)?;
        let exponent = match beta_delta_f {
            Some(bdf) => CrooksExponent::Standard {
                beta: betas_ini.beta,
                delta_f: bdf / betas_ini.beta,
            },
            None => CrooksExponent::Standard { beta: 0.0, delta_f: 0.0 },
        };
        let check = qfr::crooks_pair(&pdf_w_fw, &bw.pdf_work, exponent)?;
        writer.write_crooks("crooks_gibbs", &check)?;
        check
    };
    let pdf_work_forward = PdfSummary { support_points: pdf_w_fw.len(), mean: pdf_w_fw.mean() };
    drop(pdf_w_fw);
    progress.step("standard relation checked");

    // generalized work distribution and the generalized relation
    let pdf_gen_fw = tpm::generalized_work_pdf(
        &p_ini,
        &transitions,
        &spec_ini,
        &spec_fin,
        betas_ini,
        &gen_reference,
        binning_tol,
    )?;
    writer.write_pdf("pdf_W_fw", &pdf_gen_fw)?;
    let jarzynski_generalized = qfr::check_generalized_jarzynski(&pdf_gen_fw, delta_cal_f);

    let crooks_generalized = {
        let bw = tpm::backward_protocol(
            &spec_fin,
            &spec_ini,
            &transitions,
            &gen_reference,
            Some(betas_ini),
            binning_tol,
        )?;
        progress.step("backward protocol (generalized reference) done");
        let pdf_gen_bw = bw
            .pdf_generalized
            .expect("generalized PDF requested from backward protocol");
        writer.write_pdf("pdf_W_bw", &pdf_gen_bw)?;
        let check = qfr::crooks_pair(
            &pdf_gen_fw,
            &pdf_gen_bw,
            CrooksExponent::Generalized { delta_cal_f },
        )?;
        writer.write_crooks("crooks_gge", &check)?;
        check
    };
    let pdf_generalized_forward =
        PdfSummary { support_points: pdf_gen_fw.len(), mean: pdf_gen_fw.mean() };
    drop(pdf_gen_fw);
    progress.step("generalized relation checked");

    // occupation comparisons
    let cmp_gibbs = qfr::occupation_comparison(&diag, &w_gibbs, &spec_fin)?;
    let cmp_gge = w_gge
        .as_ref()
        .map(|w| qfr::occupation_comparison(&diag, w, &spec_fin))
        .transpose()?;
    writer.write_occupations(&spec_fin, &diag, cmp_gge.as_ref(), &cmp_gibbs)?;
    let occupations = OccupationSummary {
        total_variation_gge: cmp_gge.as_ref().map(|c| c.total_variation),
        total_variation_gibbs: cmp_gibbs.total_variation,
    };
    progress.step("occupations compared");

    // optional sampling view
    if config.outputs.sample_count > 0 {
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(config.seed);
        let samples =
            tpm::sample_transitions(&p_ini, &transitions, &mut rng, config.outputs.sample_count)?;
        writer.write_samples(&samples, &spec_ini, &spec_fin)?;
    }

    let summary = Summary {
        model_initial: config.model_initial,
        model_final: config.model_final,
        initial_betas: betas_ini.into(),
        targets: TargetSummary {
            energy: energy_target,
            excitation_number: charge_target,
        },
        fitted_gibbs: (&fitted_gibbs).into(),
        fitted_gge: fitted_gge.as_ref().map(BetaSummary::from),
        generalized_reference: (&gen_reference).into(),
        beta_delta_f,
        delta_cal_f,
        jarzynski_standard: jarzynski_standard.as_ref().map(CheckSummary::from),
        jarzynski_generalized: (&jarzynski_generalized).into(),
        crooks_standard: (&crooks_standard).into(),
        crooks_generalized: (&crooks_generalized).into(),
        occupations,
        truncation,
        pdf_work_forward,
        pdf_generalized_forward,
    };
    writer.write_summary(&summary)?;
    progress.step("outputs written");
    Ok(summary)
}

/// Formats one f64 with 17 significant digits (lossless round-trip).
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

struct OutputWriter {
    dir: Option<PathBuf>,
    format: OutputFormat,
    display_bin_width: Option<f64>,
}

impl OutputWriter {
    fn new(config: &ExperimentConfig, skip: bool) -> Result<Self> {
        let dir = if skip {
            None
        } else {
            fs::create_dir_all(&config.outputs.directory)?;
            Some(config.outputs.directory.clone())
        };
        Ok(OutputWriter {
            dir,
            format: config.outputs.format,
            display_bin_width: config.outputs.display_bin_width,
        })
    }

    fn open(&self, name: &str) -> Result<Option<BufWriter<fs::File>>> {
        match &self.dir {
            None => Ok(None),
            Some(dir) => {
                let ext = match self.format {
                    OutputFormat::Csv => "csv",
                    OutputFormat::Json => "json",
                };
                let path = dir.join(format!("{name}.{ext}"));
                Ok(Some(BufWriter::with_capacity(1 << 20, fs::File::create(path)?)))
            }
        }
    }

    /// Write a table: a header row and a formatter per record. CSV emits
    /// comma-separated lines; JSON an array of objects with the same keys.
    fn write_table<T>(
        &self,
        name: &str,
        columns: &[&str],
        rows: &[T],
        mut cells: impl FnMut(&T) -> Vec<String>,
    ) -> Result<()> {
        let Some(mut out) = self.open(name)? else {
            return Ok(());
        };
        match self.format {
            OutputFormat::Csv => {
                writeln!(out, "{}", columns.join(","))?;
                for row in rows {
                    writeln!(out, "{}", cells(row).join(","))?;
                }
            }
            OutputFormat::Json => {
                writeln!(out, "[")?;
                for (i, row) in rows.iter().enumerate() {
                    let fields: Vec<String> = columns
                        .iter()
                        .zip(cells(row))
                        .map(|(c, v)| {
                            if v.is_empty() {
                                format!("\"{c}\":null")
                            } else {
                                format!("\"{c}\":{v}")
                            }
                        })
                        .collect();
                    let sep = if i + 1 == rows.len() { "" } else { "," };
                    writeln!(out, "{{{}}}{sep}", fields.join(","))?;
                }
                writeln!(out, "]")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    fn write_pdf(&self, name: &str, pdf: &WorkDistribution) -> Result<()> {
        self.write_table(name, &["value", "probability"], pdf.support(), |&(v, p)| {
            vec![fmt_f64(v), fmt_f64(p)]
        })?;
        // display-binned companion, never used by checks
        if self.dir.is_some() {
            let width = self.display_bin_width.or_else(|| auto_bin_width(pdf));
            if let Some(width) = width {
                let bins = pdf.binned(width)?;
                self.write_table(
                    &format!("{name}_binned"),
                    &["bin_center", "probability"],
                    &bins,
                    |&(c, p)| vec![fmt_f64(c), fmt_f64(p)],
                )?;
            }
        }
        Ok(())
    }

    fn write_crooks(&self, name: &str, check: &CrooksCheck) -> Result<()> {
        self.write_table(
            name,
            &["value", "lhs", "rhs", "rel_dev"],
            &check.points,
            |p| {
                vec![
                    fmt_f64(p.value),
                    fmt_f64(p.lhs),
                    fmt_f64(p.rhs),
                    if p.matched { fmt_f64(p.rel_deviation) } else { String::new() },
                ]
            },
        )
    }

    fn write_occupations(
        &self,
        spec: &LabeledSpectrum,
        diag: &[f64],
        cmp_gge: Option<&OccupationComparison>,
        cmp_gibbs: &OccupationComparison,
    ) -> Result<()> {
        let labels = spec.charges().first().map(|c| c.values.as_slice());
        let rows: Vec<usize> = (0..spec.dim()).collect();
        self.write_table(
            "occupations",
            &["index", "energy", "M_label", "actual_weight", "gge_weight", "gibbs_weight"],
            &rows,
            |&n| {
                vec![
                    n.to_string(),
                    fmt_f64(spec.energies()[n]),
                    labels.map_or(String::new(), |l| l[n].to_string()),
                    fmt_f64(diag[n]),
                    cmp_gge.map_or(String::new(), |c| fmt_f64(c.rows[n].ensemble)),
                    fmt_f64(cmp_gibbs.rows[n].ensemble),
                ]
            },
        )
    }

    fn write_samples(
        &self,
        samples: &[(usize, usize)],
        spec_ini: &LabeledSpectrum,
        spec_fin: &LabeledSpectrum,
    ) -> Result<()> {
        self.write_table(
            "samples_fw",
            &["initial_index", "final_index", "work"],
            samples,
            |&(n, m)| {
                vec![
                    n.to_string(),
                    m.to_string(),
                    fmt_f64(spec_fin.energies()[m] - spec_ini.energies()[n]),
                ]
            },
        )
    }

    fn write_summary(&self, summary: &Summary) -> Result<()> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(summary)
            .map_err(|e| Error::NumericFailure(format!("summary serialization: {e}")))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Default display bin width: a fiftieth of the support span.
fn auto_bin_width(pdf: &WorkDistribution) -> Option<f64> {
    let lo = pdf.support().first()?.0;
    let hi = pdf.support().last()?.0;
    let span = hi - lo;
    (span > 0.0).then(|| span / 50.0)
}

/// Resolve the cache directory the CLI should use: `no_cache` wins, then the
/// `DICKE_WORK_CACHE` environment variable, then `<output>/spectra-cache`.
pub fn resolve_cache(config: &ExperimentConfig, no_cache: bool) -> Option<SpectrumCache> {
    if no_cache {
        return None;
    }
    let dir = std::env::var_os("DICKE_WORK_CACHE")
        .map(PathBuf::from)
        .unwrap_or_else(|| config.outputs.directory.join("spectra-cache"));
    Some(SpectrumCache::new(dir))
}

/// Convenience for tests and examples: parse, then run.
pub fn run_from_path(
    path: &Path,
    options: &RunOptions,
) -> Result<Summary> {
    let text = fs::read_to_string(path)?;
    let config = crate::config::parse_config(&text)?;
    run_experiment(&config, options)
}
