use dicke_work::ensembles::{self, gge_weights, BetaVector, FitTargets};
use dicke_work::model::{self, DickeParams};
use dicke_work::qfr::{crooks_pair, CrooksExponent};
use dicke_work::spectra;
use dicke_work::tpm::{self};
use dicke_work::hilbert::{MatrixSpace, OperatorMatrix};

fn main() {
    let chaotic = DickeParams {
        n_spins: 7,
        n_max: 120,
        omega_boson: 3.0,
        omega_atom: 10.0,
        coupling: 1.0,
        counter_rotating: 0.5,
    };
    let integrable = DickeParams { coupling: 6.0, counter_rotating: 0.0, ..chaotic };
    let h_i = model::build_hamiltonian(&chaotic).unwrap();
    let pi = model::parity(chaotic.n_spins, chaotic.n_max).unwrap();
    let spec_i = spectra::parity_split_eig(&h_i, &pi).unwrap();
    let h_f = model::build_hamiltonian(&integrable).unwrap();
    let kind = integrable.conserved_charge_kind().unwrap();
    let sectors = model::m_sectors_for(kind, integrable.n_spins, integrable.n_max).unwrap();
    let spec_f = spectra::eig_in_sectors(&h_f, &sectors, kind.id()).unwrap();

    let u = OperatorMatrix::identity(MatrixSpace::Composite(chaotic.basis()));
    let t = tpm::transition_matrix(&spec_i, &spec_f, &u).unwrap();
    let betas_ini = BetaVector::gibbs(0.02);
    let p_ini = gge_weights(&spec_i, &betas_ini).unwrap();
    let diag = t.apply(&p_ini.probabilities).unwrap();
    let e_bar: f64 = diag.iter().zip(spec_f.energies()).map(|(&p, &e)| p * e).sum();
    let labels = spec_f.charge_values(&kind.id()).unwrap();
    let m_bar: f64 = diag.iter().zip(labels).map(|(&p, &m)| p * m as f64).sum();
    let fitted = ensembles::fit_temperatures(
        &spec_f,
        &FitTargets { energy: e_bar, charge_targets: vec![(kind.id(), m_bar)] },
        None,
    )
    .unwrap();
    println!("fitted: beta={:e} beta_M={:e}", fitted.beta, fitted.charge_betas[0].1);

    let tol = 1e-9;
    let pdf_fw = tpm::generalized_work_pdf(&p_ini, &t, &spec_i, &spec_f, &betas_ini, &fitted, tol).unwrap();
    let bw = tpm::backward_protocol(&spec_f, &spec_i, &t, &fitted, Some(&betas_ini), tol).unwrap();
    let pdf_bw = bw.pdf_generalized.unwrap();
    let dcf = ensembles::generalized_free_energy(&spec_f, &fitted).unwrap()
        - ensembles::generalized_free_energy(&spec_i, &betas_ini).unwrap();
    let check = crooks_pair(&pdf_fw, &pdf_bw, CrooksExponent::Generalized { delta_cal_f: dcf }).unwrap();
    println!(
        "max_rel={:e} mismatch={:e} skipped={:e} points={}",
        check.max_rel_deviation, check.support_mismatch_mass, check.skipped_mass, check.points.len()
    );
    let mut worst: Vec<_> = check.points.iter().filter(|p| p.matched).collect();
    worst.sort_by(|a, b| b.rel_deviation.total_cmp(&a.rel_deviation));
    for p in worst.iter().take(5) {
        println!(
            "  v={:.12} lhs={:.6e} rhs={:.6e} dev={:.3e}",
            p.value, p.lhs, p.rhs, p.rel_deviation
        );
        // find BW support near -v
        let got = pdf_bw.probability_near(-p.value, 2e-9);
        println!("    bw prob near -v: {:?}", got);
    }
    // distribution of deviations
    let big = check.points.iter().filter(|p| p.matched && p.rel_deviation > 1e-6).count();
    println!("points with dev > 1e-6: {big}");
}
