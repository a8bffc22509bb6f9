//! Text and CSV renderings of fit results.

use std::fmt::Write as _;

use crate::dataset::ClusteredDataset;
use crate::differencing::DifferenceOperator;
use crate::estimator::{TwoStepFit, VarianceKind};
use crate::inference::BootstrapResult;

/// `x` rounded to `digits` significant digits, in fixed notation where
/// that stays readable.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let exp = x.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        // rounding can carry into a new leading digit
        let carried = s.parse::<f64>().is_ok_and(|r| r.abs() >= 10f64.powi(exp + 1));
        if decimals > 0 && carried {
            let decimals = decimals - 1;
            return format!("{x:.decimals$}");
        }
        s
    } else {
        format!("{x:.*e}", digits - 1)
    }
}

fn t_value(est: f64, se: f64) -> f64 {
    if se > 0.0 {
        est / se
    } else {
        f64::NAN
    }
}

/// Flat `key = value` report of a second-step fit and its operator.
pub fn fit_report(fit: &TwoStepFit, op: &DifferenceOperator, ds: &ClusteredDataset, boot: &[BootstrapResult]) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("operator", op.kind().name().into());
    kv("n_obs", ds.len().to_string());
    kv("n_selected", fit.n_selected.to_string());
    kv("m_rows", fit.m_rows.to_string());
    kv("dropped_anchors", op.dropped_anchors().to_string());
    kv("locations", ds.locations().len().to_string());
    kv(
        "variance",
        match fit.variance {
            VarianceKind::Verbatim => "verbatim",
            VarianceKind::ResidualAugmented => "residual-augmented",
        }
        .into(),
    );
    if fit.variance == VarianceKind::ResidualAugmented {
        kv("sigma_v2", fit.sigma_v2.to_string());
    }
    let p = &fit.probit;
    kv("probit_converged", p.converged.to_string());
    kv("probit_iterations", p.iterations.to_string());
    kv("probit_loglik", p.loglik.to_string());
    if !p.dropped_dummies.is_empty() {
        kv("probit_dropped_dummies", p.dropped_dummies.join(","));
    }
    for ((name, b), se) in p.names().iter().zip(&p.beta).zip(p.standard_errors()) {
        kv(&format!("probit.{name}"), b.to_string());
        kv(&format!("probit_se.{name}"), se.to_string());
    }
    for ((name, est), se) in fit.names.iter().zip(&fit.theta).zip(fit.standard_errors()) {
        kv(&format!("coef.{name}"), est.to_string());
        kv(&format!("se.{name}"), se.to_string());
        kv(&format!("t.{name}"), t_value(*est, se).to_string());
    }
    for b in boot {
        let c = &b.coefficient;
        kv(&format!("boot_null.{c}"), b.null_value.to_string());
        kv(&format!("boot_t.{c}"), b.t_observed.to_string());
        kv(&format!("p_boot.{c}"), b.p_value.to_string());
        if let (Some(lo), Some(hi)) = (b.ci_low, b.ci_high) {
            kv(&format!("ci_low.{c}"), lo.to_string());
            kv(&format!("ci_high.{c}"), hi.to_string());
        }
        kv(&format!("boot_replications.{c}"), b.replications.to_string());
        kv(&format!("boot_seed.{c}"), b.seed.to_string());
    }
    out
}

/// `name,estimate,se,t`, plus bootstrap columns when any result is given.
pub fn coefficient_csv(fit: &TwoStepFit, boot: &[BootstrapResult]) -> String {
    let mut out = String::from("name,estimate,se,t");
    if !boot.is_empty() {
        out.push_str(",p_boot,ci_low,ci_high,B,seed");
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for ((name, est), se) in fit.names.iter().zip(&fit.theta).zip(fit.standard_errors()) {
        let _ = write!(out, "{name},{est},{se},{}", t_value(*est, se));
        if !boot.is_empty() {
            match boot.iter().find(|b| &b.coefficient == name) {
                Some(b) => {
                    let _ = write!(
                        out,
                        ",{},{},{},{},{}",
                        b.p_value,
                        opt(b.ci_low),
                        opt(b.ci_high),
                        b.replications,
                        b.seed
                    );
                }
                None => out.push_str(",,,,,"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn significant_digits() {
        assert_eq!(format_sig(0.0, 6), "0");
        assert_eq!(format_sig(1.0, 6), "1.00000");
        assert_eq!(format_sig(-0.0393456789, 6), "-0.0393457");
        assert_eq!(format_sig(95.8, 6), "95.8000");
        assert_eq!(format_sig(123456.7, 6), "123457");
        assert_eq!(format_sig(9.999999, 6), "10.0000");
        assert_eq!(format_sig(1.5e-7, 6), "1.50000e-7");
        assert_eq!(format_sig(f64::NAN, 6), "NaN");
    }
}
