//! CSV and text emission.

use std::io::Write;

use ancilla::checks::CheckOutcome;
use ancilla::protocols::{level_labels, RobustnessPoint, RunReport};

/// 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    format!("{x:.11e}")
}

pub fn csv_header(levels: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(level_labels(levels).iter().map(|l| format!("P_{l}")));
    h.extend(["Omega_0", "Omega_1"].map(String::from));
    if levels == 4 {
        h.push("Omega_2".into());
    }
    h.extend(["Omega_a", "Delta", "vn_residual_max", "norm_error"].map(String::from));
    h
}

pub fn write_csv<W: Write>(report: &RunReport, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(csv_header(report.levels))?;
    for row in &report.rows {
        let mut rec = vec![fmt_num(row.t)];
        rec.extend(row.populations.iter().map(|&p| fmt_num(p)));
        let d = &row.drives;
        rec.push(fmt_num(d.omega0));
        rec.push(fmt_num(d.omega1));
        if let Some(o2) = d.omega2 {
            rec.push(fmt_num(o2));
        }
        rec.extend([d.omega_a, d.delta, row.vn_residual_max, row.norm_error].map(fmt_num));
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_scan_csv<W: Write>(points: &[RobustnessPoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "P_e(T/2)", "P_1(T)", "P_0(3T/2)"])?;
    for p in points {
        w.write_record([p.alpha, p.p_excited, p.p_one, p.p_zero].map(fmt_num))?;
    }
    w.flush()?;
    Ok(())
}

pub fn run_summary(report: &RunReport) -> String {
    let mut s = String::new();
    let status = if report.failed() {
        "FAILED (residual monitor)"
    } else if report.all_passed() {
        "ok"
    } else {
        "checkpoint failures"
    };
    s.push_str(&format!(
        "protocol {}  T = {}  steps/T = {}  rows = {}  status: {status}\n",
        report.protocol,
        report.duration,
        report.steps_per_t,
        report.rows.len()
    ));
    for c in &report.checkpoints {
        s.push_str(&format!(
            "  {} {:<16} {:.6}  (want {})\n",
            if c.passed { "PASS" } else { "FAIL" },
            c.checkpoint.label,
            c.measured,
            c.checkpoint.expectation
        ));
    }
    for p in &report.residuals {
        s.push_str(&format!(
            "  {} path {} max residual {:.3e} (relative {:.3e})\n",
            if p.passed { "PASS" } else { "FAIL" },
            p.path,
            p.max_residual,
            p.max_relative
        ));
    }
    s.push_str(&format!("  norm drift {:.3e}\n", report.norm_drift));
    if let Some(d) = report.closed_form_distance {
        s.push_str(&format!("  closed form vs RK4 {d:.3e}\n"));
    }
    s
}

pub fn scan_summary(points: &[RobustnessPoint]) -> String {
    let fold = |f: fn(&RobustnessPoint) -> f64| points.iter().map(f).fold(f64::INFINITY, f64::min);
    format!(
        "alpha points {}  min P_e(T/2) {:.4}  min P_1(T) {:.4}  min P_0(3T/2) {:.4}\n",
        points.len(),
        fold(|p| p.p_excited),
        fold(|p| p.p_one),
        fold(|p| p.p_zero)
    )
}

pub fn verify_table(outcomes: &[CheckOutcome]) -> String {
    let width = outcomes.iter().map(|o| o.name.len()).max().unwrap_or(5).max(5);
    let mut s = format!("{:<width$}  status  detail\n", "check");
    for o in outcomes {
        s.push_str(&format!("{:<width$}  {:<6}  {}\n", o.name, if o.passed { "PASS" } else { "FAIL" }, o.detail));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headers_follow_dimension() {
        assert_eq!(csv_header(3).join(","), "t,P_0,P_1,P_e,Omega_0,Omega_1,Omega_a,Delta,vn_residual_max,norm_error");
        assert_eq!(
            csv_header(4).join(","),
            "t,P_0,P_1,P_e,P_2,Omega_0,Omega_1,Omega_2,Omega_a,Delta,vn_residual_max,norm_error"
        );
    }

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt_num(1.0), "1.00000000000e0");
        assert_eq!(fmt_num(-0.000123456789012345), "-1.23456789012e-4");
        let digits = fmt_num(std::f64::consts::PI).split('e').next().unwrap().replace('.', "");
        assert_eq!(digits.len(), 12);
    }
}
