//! Byte-deterministic text output: CSV tables and key–value records with a
//! sorted `#`-comment metadata header. Every float is printed with
//! `{:.12e}` so repeated runs produce identical bytes.

use std::io::{self, Write};

use crate::darkstates::Certificate;
use crate::dynamics::LeastTimeResult;
use crate::hilbert::SpaceSpec;
use crate::num::Real;
use crate::openquantum::CatchReleaseReport;
use crate::spectra::{ExclusionReason, GapReport, LawReport, RatioEntry, SpectrumSweep};

/// Library version stamped into every header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Deterministic float rendering used in all output files.
pub fn float_field<T: Real>(x: T) -> String {
    format!("{:.12e}", x.as_f64())
}

/// Write the `#`-comment header: the version line followed by the metadata
/// pairs in sorted key order.
pub fn write_metadata<W: Write>(w: &mut W, pairs: &[(String, String)]) -> io::Result<()> {
    writeln!(w, "# version = {VERSION}")?;
    let mut sorted: Vec<&(String, String)> = pairs.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    for (k, v) in sorted {
        writeln!(w, "# {k} = {v}")?;
    }
    Ok(())
}

fn write_row<W: Write>(w: &mut W, fields: &[String]) -> io::Result<()> {
    writeln!(w, "{}", fields.join(","))
}

/// Long-format spectrum table: one row per (point, track) with the energy,
/// parity label, reference coupling/overlap, and any recorded free-mode
/// occupations; reference energies appear as their own column when present.
pub fn write_spectrum_csv<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    sweep: &SpectrumSweep<T>,
) -> io::Result<()> {
    write_metadata(w, meta)?;
    let n_free = sweep
        .tracks
        .iter()
        .map(|t| t.nb.len())
        .max()
        .unwrap_or(0);
    let mut headers = vec![
        "coord".to_string(),
        "track".to_string(),
        "parity".to_string(),
        "energy".to_string(),
        "ref_energy".to_string(),
        "ref_coupling".to_string(),
        "ref_overlap".to_string(),
    ];
    for r in 0..n_free {
        headers.push(format!("nb{}", r + 2));
    }
    write_row(w, &headers)?;
    for (p, &coord) in sweep.coords.iter().enumerate() {
        for (k, track) in sweep.tracks.iter().enumerate() {
            let mut row = vec![
                float_field(coord),
                k.to_string(),
                match track.parity {
                    Some(s) => s.to_string(),
                    None => String::new(),
                },
                float_field(track.energies[p]),
                match &sweep.reference {
                    Some(r) => float_field(r.energies[p]),
                    None => String::new(),
                },
                if track.ref_coupling.is_empty() {
                    String::new()
                } else {
                    float_field(track.ref_coupling[p])
                },
                if track.ref_overlap.is_empty() {
                    String::new()
                } else {
                    float_field(track.ref_overlap[p])
                },
            ];
            for r in 0..n_free {
                row.push(if r < track.nb.len() {
                    float_field(track.nb[r][p])
                } else {
                    String::new()
                });
            }
            write_row(w, &row)?;
        }
    }
    Ok(())
}

/// Time-series table: a time column followed by one column per labeled
/// series. All series must have the same length as `times`.
pub fn write_series_csv<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    time_label: &str,
    times: &[T],
    columns: &[(String, Vec<T>)],
) -> io::Result<()> {
    write_metadata(w, meta)?;
    let mut headers = vec![time_label.to_string()];
    headers.extend(columns.iter().map(|(name, _)| name.clone()));
    write_row(w, &headers)?;
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![float_field(t)];
        for (_, series) in columns {
            row.push(float_field(series[k]));
        }
        write_row(w, &row)?;
    }
    Ok(())
}

/// Adiabatic-ratio table: one row per level with its gap, coupling, and
/// ratio (empty for degenerate levels).
pub fn write_ratios_csv<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    entries: &[RatioEntry<T>],
) -> io::Result<()> {
    write_metadata(w, meta)?;
    write_row(
        w,
        &[
            "level".to_string(),
            "energy".to_string(),
            "gap".to_string(),
            "coupling".to_string(),
            "ratio".to_string(),
            "degenerate".to_string(),
        ],
    )?;
    for e in entries {
        write_row(
            w,
            &[
                e.level.to_string(),
                float_field(e.energy),
                float_field(e.gap),
                float_field(e.coupling),
                match e.ratio {
                    Some(r) => float_field(r),
                    None => String::new(),
                },
                (e.degenerate as u8).to_string(),
            ],
        )?;
    }
    Ok(())
}

fn exclusion_token(reason: &ExclusionReason) -> &'static str {
    match reason {
        ExclusionReason::Reference => "reference",
        ExclusionReason::FreeModeOccupation => "free-mode-occupation",
        ExclusionReason::DecoupledTrack => "decoupled",
    }
}

/// Key–value record for an effective-gap analysis.
pub fn write_gap_record<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    report: &GapReport<T>,
) -> io::Result<()> {
    write_metadata(w, meta)?;
    writeln!(w, "min_gap = {}", float_field(report.min_gap))?;
    writeln!(w, "at_coord = {}", float_field(report.at_coord))?;
    writeln!(w, "at_point = {}", report.at_point)?;
    writeln!(w, "limiting_track = {}", report.limiting_track)?;
    match report.reference_track {
        Some(t) => writeln!(w, "reference_track = {t}")?,
        None => writeln!(w, "reference_track =")?,
    }
    let mut excluded = report.excluded.clone();
    excluded.sort_by_key(|(t, _)| *t);
    for (t, reason) in &excluded {
        writeln!(w, "excluded_track_{t} = {}", exclusion_token(reason))?;
    }
    Ok(())
}

/// Key–value record for an amplitude-relation check.
pub fn write_law_record<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    report: &LawReport<T>,
) -> io::Result<()> {
    write_metadata(w, meta)?;
    writeln!(w, "max_residual = {}", float_field(report.max_residual))?;
    writeln!(w, "worst_track = {}", report.worst_track)?;
    writeln!(w, "worst_point = {}", report.worst_point)?;
    writeln!(w, "samples = {}", report.samples)?;
    Ok(())
}

/// Key–value record for a least-time search.
pub fn write_mintime_record<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    result: &LeastTimeResult<T>,
) -> io::Result<()> {
    write_metadata(w, meta)?;
    writeln!(w, "found = {}", result.found)?;
    let opt = |v: Option<T>| match v {
        Some(x) => float_field(x),
        None => String::new(),
    };
    writeln!(w, "t_min = {}", opt(result.t_min))?;
    writeln!(w, "g_total = {}", opt(result.g_total))?;
    writeln!(w, "fidelity = {}", opt(result.fidelity))?;
    writeln!(w, "probes = {}", result.probes)?;
    Ok(())
}

/// Text record certifying a dark state: the claimed energy, the measured
/// residual, parity, photon support, and the `top` largest amplitudes with
/// basis labels (qubits as u/d from qubit 1, photon numbers per mode).
pub fn write_certificate_record<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    space: SpaceSpec,
    cert: &Certificate<T>,
    top: usize,
) -> io::Result<()> {
    write_metadata(w, meta)?;
    writeln!(w, "energy = {}", float_field(cert.energy))?;
    writeln!(w, "residual = {}", float_field(cert.residual))?;
    writeln!(w, "parity = {}", cert.parity)?;
    writeln!(w, "photon_min = {}", cert.photon_bound.min)?;
    writeln!(w, "photon_max = {}", cert.photon_bound.max)?;
    let amps = cert.state.amplitudes();
    let mut order: Vec<usize> = (0..amps.len()).collect();
    order.sort_by(|&a, &b| {
        amps[b]
            .norm_sqr()
            .partial_cmp(&amps[a].norm_sqr())
            .expect("finite amplitudes")
            .then(a.cmp(&b))
    });
    writeln!(w, "state,re,im")?;
    for &k in order.iter().take(top) {
        let (bits, photons) = space.decode(k);
        let qubits: String = bits
            .iter()
            .map(|&b| if b == 0 { 'u' } else { 'd' })
            .collect();
        let modes: String = photons
            .iter()
            .map(|n| n.to_string())
            .collect::<Vec<_>>()
            .join(";");
        writeln!(
            w,
            "{qubits}:{modes},{},{}",
            float_field(amps[k].re),
            float_field(amps[k].im)
        )?;
    }
    Ok(())
}

/// Key–value record plus emission table for a catch-and-release run.
pub fn write_catch_release<W: Write, T: Real>(
    w: &mut W,
    meta: &[(String, String)],
    report: &CatchReleaseReport<T>,
) -> io::Result<()> {
    write_metadata(w, meta)?;
    writeln!(
        w,
        "generation_fidelity = {}",
        float_field(report.generation_fidelity)
    )?;
    writeln!(
        w,
        "hold_fidelity_drop = {}",
        float_field(report.hold_fidelity_drop)
    )?;
    writeln!(
        w,
        "control_release_loss = {}",
        float_field(report.control_release_loss)
    )?;
    for (i, (&e, &f)) in report
        .emitted
        .iter()
        .zip(report.emitted_fractions.iter())
        .enumerate()
    {
        writeln!(w, "emitted_{} = {}", i + 1, float_field(e))?;
        writeln!(w, "emitted_fraction_{} = {}", i + 1, float_field(f))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_render_deterministically() {
        assert_eq!(float_field(1.0f64), "1.000000000000e0");
        assert_eq!(float_field(-0.03125f64), "-3.125000000000e-2");
        assert_eq!(float_field(6.02e23f64), "6.020000000000e23");
    }

    #[test]
    fn metadata_is_sorted_and_versioned() {
        let mut buf = Vec::new();
        let meta = vec![
            ("zeta".to_string(), "1".to_string()),
            ("alpha".to_string(), "2".to_string()),
        ];
        write_metadata(&mut buf, &meta).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# version = "));
        assert_eq!(lines[1], "# alpha = 2");
        assert_eq!(lines[2], "# zeta = 1");
    }

    #[test]
    fn series_table_round_trips_bytes() {
        let times = vec![0.0f64, 0.5, 1.0];
        let cols = vec![("f".to_string(), vec![1.0, 0.5, 0.25])];
        let mut a = Vec::new();
        let mut b = Vec::new();
        write_series_csv(&mut a, &[], "t", &times, &cols).unwrap();
        write_series_csv(&mut b, &[], "t", &times, &cols).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        assert!(text.contains("t,f"));
        assert!(text.contains("5.000000000000e-1,5.000000000000e-1"));
    }
}
