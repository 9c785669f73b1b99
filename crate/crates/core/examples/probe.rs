//! Scratch validation driver (not shipped): run one stage by name.

use mqrs::darkstates::{phi_k_state, psi_2splus};
use mqrs::dynamics::{
    least_time_search, m_independence_check, standard_trajectory, w_target, LeastTimeOptions,
    TrajectoryName, TrajectoryOverrides,
};
use mqrs::hilbert::{build_space, PureState};
use mqrs::models::{spectrum_equivalence_report, EquivalenceKind, ModelAction, ModelParams};
use mqrs::openquantum::{
    catch_and_release, propagate_master, CatchReleaseOptions, DensityMatrix, DissipationRates,
    MasterEngine, MasterOptions,
};
use mqrs::schedule::{PiecewiseConstant, Schedule};
use mqrs::spectra::{sweep_spectrum, Sector, SweepOptions};
use mqrs::{Error, C};
use nalgebra::DMatrix;

fn single_mode_analog(p: &ModelParams<f64>) -> ModelParams<f64> {
    let n = p.n_qubits();
    let m = p.n_modes();
    let mut g = DMatrix::zeros(1, n);
    let mut u = DMatrix::zeros(1, n);
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..m {
            s += p.g[(i, j)] * p.g[(i, j)];
        }
        g[(0, j)] = s.sqrt();
        u[(0, j)] = p.u[(0, j)];
    }
    ModelParams {
        delta: p.delta.clone(),
        omega: vec![p.omega[0]],
        g,
        u,
    }
}

fn remodes(p: &ModelParams<f64>, m_new: usize) -> ModelParams<f64> {
    let n = p.n_qubits();
    let m = p.n_modes();
    let mut g = DMatrix::zeros(m_new, n);
    let mut u = DMatrix::zeros(m_new, n);
    for j in 0..n {
        let mut s = 0.0;
        for i in 0..m {
            s += p.g[(i, j)] * p.g[(i, j)];
        }
        for i in 0..m_new {
            g[(i, j)] = (s / m_new as f64).sqrt();
            u[(i, j)] = p.u[(0, j)];
        }
    }
    ModelParams {
        delta: p.delta.clone(),
        omega: vec![p.omega[0]; m_new],
        g,
        u,
    }
}

fn equiv_scan() -> Result<(), Error> {
    let sched = standard_trajectory(TrajectoryName::Fig1Rabi, &TrajectoryOverrides::default())?;
    for &t in &[5.5_f64, 11.0] {
        let p2 = sched.params_at(t);
        let p1 = single_mode_analog(&p2);
        for (cm, c1, nl) in [(8, 16, 12), (10, 20, 12), (12, 24, 12), (12, 24, 16), (14, 28, 16)] {
            let s2 = build_space(2, 2, cm)?;
            let s1 = build_space(2, 1, c1)?;
            for sector in [Sector::Even, Sector::Odd] {
                let rep = spectrum_equivalence_report(s2, &p2, s1, &p1, sector, nl)?;
                println!(
                    "scan t={t} cm={cm} c1={c1} nl={nl} {:?}: prim={} max_primary={:.3e} max_lifted={:.3e}",
                    sector, rep.n_primaries, rep.max_primary_deviation, rep.max_lifted_deviation
                );
            }
        }
        let p3 = remodes(&p2, 3);
        for (cm, c1, nl) in [(7, 24, 12), (8, 24, 12)] {
            let s3 = build_space(2, 3, cm)?;
            let s1 = build_space(2, 1, c1)?;
            let rep = spectrum_equivalence_report(s3, &p3, s1, &p1, Sector::Even, nl)?;
            println!(
                "scan t={t} M=3 cm={cm} nl={nl}: prim={} max_primary={:.3e} max_lifted={:.3e}",
                rep.n_primaries, rep.max_primary_deviation, rep.max_lifted_deviation
            );
        }
    }
    // Stark away from the degenerate U1+U2=omega tower.
    let p2 = ModelParams {
        delta: vec![0.75, 0.25],
        omega: vec![1.0, 1.0],
        g: DMatrix::from_element(2, 2, 0.35),
        u: DMatrix::from_element(2, 2, 0.25),
    };
    let p1 = single_mode_analog(&p2);
    for (cm, c1, nl) in [(10, 20, 12), (12, 24, 12)] {
        let s2 = build_space(2, 2, cm)?;
        let s1 = build_space(2, 1, c1)?;
        let rep = spectrum_equivalence_report(s2, &p2, s1, &p1, Sector::Even, nl)?;
        println!(
            "scan stark cm={cm} nl={nl}: prim={} max_primary={:.3e} max_lifted={:.3e}",
            rep.n_primaries, rep.max_primary_deviation, rep.max_lifted_deviation
        );
    }
    Ok(())
}

fn equiv_stage() -> Result<(), Error> {
    let sched = standard_trajectory(TrajectoryName::Fig1Rabi, &TrajectoryOverrides::default())?;
    for &t in &[5.5_f64, 11.0] {
        let p2 = sched.params_at(t);
        let p1 = single_mode_analog(&p2);
        let p3 = remodes(&p2, 3);
        let s2 = build_space(2, 2, 8)?;
        let s1 = build_space(2, 1, 16)?;
        let s3 = build_space(2, 3, 6)?;
        for (label, sp, pp) in [("M=2", s2, &p2), ("M=3", s3, &p3)] {
            for sector in [Sector::Even, Sector::Odd] {
                let rep = spectrum_equivalence_report(sp, pp, s1, &p1, sector, 30)?;
                let lifted = rep.entries.len() - rep.n_primaries;
                let kmax = rep
                    .entries
                    .iter()
                    .map(|e| match e.kind {
                        EquivalenceKind::Lifted { k, .. } => k,
                        _ => 0,
                    })
                    .max()
                    .unwrap_or(0);
                println!(
                    "equiv t={t} {label} {:?}: primaries={} lifted={} kmax={} max_primary={:.3e} max_lifted={:.3e}",
                    sector, rep.n_primaries, lifted, kmax, rep.max_primary_deviation,
                    rep.max_lifted_deviation
                );
            }
        }
        let selfrep = spectrum_equivalence_report(s1, &p1, s1, &p1, Sector::Even, 30)?;
        println!(
            "equiv t={t} self: primaries={} lifted={} max_primary={:.3e}",
            selfrep.n_primaries,
            selfrep.entries.len() - selfrep.n_primaries,
            selfrep.max_primary_deviation
        );
    }

    // Stark case: primaries still match; lifted offsets are qubit-dressed.
    let sched2 = standard_trajectory(TrajectoryName::Fig2Stark, &TrajectoryOverrides::default())?;
    let p2 = sched2.params_at(0.93);
    let p1 = single_mode_analog(&p2);
    let s2 = build_space(2, 2, 8)?;
    let s1 = build_space(2, 1, 16)?;
    let rep = spectrum_equivalence_report(s2, &p2, s1, &p1, Sector::Even, 30)?;
    println!(
        "equiv stark: primaries={} lifted={} max_primary={:.3e} max_lifted={:.3e}",
        rep.n_primaries,
        rep.entries.len() - rep.n_primaries,
        rep.max_primary_deviation,
        rep.max_lifted_deviation
    );

    // Decoupled-lift matrix elements ⟨φ_K|Ḣ|ψ₂₊⟩ along the equal-U ramp.
    let p2 = sched.params_at(5.5);
    let p1 = single_mode_analog(&p2);
    let s2 = build_space(2, 2, 8)?;
    let s1c = build_space(2, 1, 8)?;
    let psi_m = psi_2splus(s2, &p2)?;
    let single = psi_2splus(s1c, &p1)?;
    let slopes = sched.slopes_at(5.5);
    let action = ModelAction::new(s2)?;
    let dim = s2.dim();
    for k in 1..=2 {
        let phi = phi_k_state(s2, &p2, &single, k)?;
        let mut out = vec![C::new(0.0, 0.0); dim];
        let mut scratch = vec![C::new(0.0, 0.0); dim];
        action.apply(
            &slopes,
            psi_m.state.amplitudes().as_slice(),
            &mut out,
            &mut scratch,
        );
        let mut acc = C::new(0.0, 0.0);
        for (a, b) in phi.state.amplitudes().iter().zip(out.iter()) {
            acc += a.conj() * *b;
        }
        println!("equiv phi_{k} residual={:.3e} |<phi|dH|psi>|={:.3e}", phi.residual, acc.norm());
    }
    Ok(())
}

fn flat_stage() -> Result<(), Error> {
    // fig1(c)/(d): E=ω track flat along the Rabi ramp, M=2 and M=1.
    let sched = standard_trajectory(TrajectoryName::Fig1Rabi, &TrajectoryOverrides::default())?;
    let coords: Vec<f64> = (0..=60).map(|k| k as f64 * 11.0 / 60.0).collect();
    for (label, m) in [("fig1c M=2", 2usize), ("fig1d M=1", 1usize)] {
        let space = build_space(2, m, 8)?;
        let pf = |t: f64| {
            let p = sched.params_at(t);
            if m == 1 {
                single_mode_analog(&p)
            } else {
                p
            }
        };
        let opts = SweepOptions::sector(Sector::Even);
        let sweep = sweep_spectrum(space, &coords, &pf, None, None, opts)?;
        let mut best: Option<(usize, f64)> = None;
        for (k, tr) in sweep.tracks.iter().enumerate() {
            let dev = tr
                .energies
                .iter()
                .fold(0.0_f64, |acc, &e| acc.max((e - 1.0).abs()));
            if best.map_or(true, |(_, b)| dev < b) {
                best = Some((k, dev));
            }
        }
        let (k, dev) = best.unwrap();
        println!("flat {label}: track {k} max|E-w| = {dev:.3e}");
    }

    // fig2(a): coupling sweep at Δ=(0.8,0.2), U=0.5 → flat at +ω and −ω.
    let space = build_space(2, 2, 8)?;
    let gs: Vec<f64> = (0..=60).map(|k| k as f64 * 1.2 / 60.0).collect();
    let pf = |g: f64| ModelParams {
        delta: vec![0.8, 0.2],
        omega: vec![1.0, 1.0],
        g: DMatrix::from_element(2, 2, g),
        u: DMatrix::from_element(2, 2, 0.5),
    };
    let opts = SweepOptions::sector(Sector::Even);
    let sweep = sweep_spectrum(space, &gs, &pf, None, None, opts)?;
    for target in [1.0_f64, -1.0] {
        let mut best: Option<(usize, f64)> = None;
        for (k, tr) in sweep.tracks.iter().enumerate() {
            let dev = tr
                .energies
                .iter()
                .fold(0.0_f64, |acc, &e| acc.max((e - target).abs()));
            if best.map_or(true, |(_, b)| dev < b) {
                best = Some((k, dev));
            }
        }
        let (k, dev) = best.unwrap();
        println!("flat fig2a E={target}: track {k} max dev = {dev:.3e}");
    }
    Ok(())
}

fn mind_stage() -> Result<(), Error> {
    let rep = m_independence_check(1.55, 1.9, (2.0 / 3.0, 1.0 / 3.0), &[1, 2, 3], 6, 1e-8)?;
    println!(
        "mind fidelities={:?} f_spread={:.3e} c_spread={:.3e}",
        rep.fidelities, rep.fidelity_spread, rep.coefficient_spread
    );
    let rep2 = m_independence_check(3.18, 0.65, (0.5, 0.5), &[1, 2, 3, 5], 6, 1e-8)?;
    println!(
        "mind fig4b fidelities={:?} f_spread={:.3e} c_spread={:.3e}",
        rep2.fidelities, rep2.fidelity_spread, rep2.coefficient_spread
    );
    Ok(())
}

fn lt_stage() -> Result<(), Error> {
    for u in [0.50_f64, 0.45, 0.40] {
        let opts = LeastTimeOptions::new((u, u), 1, (1.0, 3.0));
        let res = least_time_search(&opts)?;
        println!(
            "lt U={u}: found={} t_min={:?} g={:?} F={:?} probes={}",
            res.found, res.t_min, res.g_total, res.fidelity, res.probes
        );
    }
    let opts = LeastTimeOptions::new((0.0, 0.0), 1, (1.0, 3.0));
    let res = least_time_search(&opts)?;
    println!(
        "lt U=0: found={} t_min={:?} probes={}",
        res.found, res.t_min, res.probes
    );
    Ok(())
}

fn cr_stage() -> Result<(), Error> {
    let opts = CatchReleaseOptions::<f64>::default();
    let rep = catch_and_release(&opts)?;
    println!(
        "cr genF={:.6} hold_drop={:.3e} emitted={:?} fractions={:?} control_loss={:.3e}",
        rep.generation_fidelity,
        rep.hold_fidelity_drop,
        rep.emitted,
        rep.emitted_fractions,
        rep.control_release_loss
    );
    Ok(())
}

fn s3_stage() -> Result<(), Error> {
    let cutoff = 3usize;
    let space = build_space(2, 3, cutoff)?;
    let configs: [(&str, [f64; 3], f64, f64); 2] = [
        ("a", [0.1, 0.2, 0.3], 1e-4, 10.0),
        ("b", [0.266, 0.532, 0.798], 0.1001, 3.0),
    ];
    for (label, gs, kappa, t_end) in configs {
        let params = ModelParams {
            delta: vec![0.5, 0.5],
            omega: vec![1.0, 1.0, 1.0],
            g: DMatrix::from_fn(3, 2, |i, _| gs[i]),
            u: DMatrix::zeros(3, 2),
        };
        let sched = Schedule::hold(&params, t_end)?;
        let rates = DissipationRates {
            kappa_in: kappa,
            kappa_c: PiecewiseConstant::constant(0.0),
            gamma: vec![1e-5, 1e-5],
            gamma_phi: vec![0.0, 0.0],
        };
        let tracked: PureState<f64> = if label == "a" {
            PureState::basis_state(space, &[0, 0], &[0, 0, 0])?
        } else {
            w_target(space, &params)?
        };
        let initial = DensityMatrix::from_pure(&tracked);
        let samples: Vec<f64> = (1..=12).map(|k| k as f64 * t_end / 12.0).collect();
        let mut series: Vec<Vec<f64>> = vec![Vec::new(), Vec::new()];
        for (ei, engine) in [MasterEngine::Lindblad, MasterEngine::Dressed]
            .into_iter()
            .enumerate()
        {
            let mut pops = Vec::new();
            propagate_master(
                space,
                &sched,
                &rates,
                &initial,
                &samples,
                engine,
                &MasterOptions::default(),
                |_t, rho| {
                    pops.push(rho.fidelity(&tracked)?);
                    Ok(())
                },
            )?;
            series[ei] = pops;
        }
        let maxgap = series[0]
            .iter()
            .zip(series[1].iter())
            .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        println!(
            "s3{label}: final L={:.6} D={:.6} maxgap={:.3e}",
            series[0].last().unwrap(),
            series[1].last().unwrap(),
            maxgap
        );
    }
    Ok(())
}

fn main() -> Result<(), Error> {
    let stage = std::env::args().nth(1).unwrap_or_else(|| "equiv".into());
    match stage.as_str() {
        "equiv" => equiv_stage(),
        "scan" => equiv_scan(),
        "flat" => flat_stage(),
        "mind" => mind_stage(),
        "lt" => lt_stage(),
        "cr" => cr_stage(),
        "s3" => s3_stage(),
        other => {
            eprintln!("unknown stage {other}");
            Ok(())
        }
    }
}
