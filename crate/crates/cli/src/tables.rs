//! CSV tables written next to the JSON report by `evaluate`.

use coolguard::analytics::{
    DetectorEval, DetectorStudy, EvalReport, Exploration, ForecasterEval, IntegratedCoverage,
};
use std::fmt::Write;
use std::io;
use std::path::Path;

pub fn exploration_csv(e: &Exploration) -> String {
    let mut out = String::from("channel,leak_mean,normal_mean,welch_t,welch_df,welch_p,cohen_d,r_leak\n");
    for c in &e.channels {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.3},{:.6e},{:.6},{:.6}",
            c.channel.name(),
            c.leak_mean,
            c.normal_mean,
            c.welch.t,
            c.welch.df,
            c.welch.p,
            c.cohen_d,
            c.r_leak
        );
    }
    let _ = writeln!(out, "pressure~humidity,,,,,,,{:.6}", e.r_pressure_humidity);
    out
}

fn metric(out: &mut String, name: &str, value: f64) {
    let _ = writeln!(out, "{name},{value:.6}");
}

pub fn detector_csv(study: Option<&DetectorStudy>, eval: Option<&DetectorEval>) -> String {
    let mut out = String::from("metric,value\n");
    if let Some(s) = study {
        metric(&mut out, &format!("cv{}_f1", s.folds), s.cv_scores.f1);
        metric(&mut out, &format!("cv{}_precision", s.folds), s.cv_scores.precision);
        metric(&mut out, &format!("cv{}_recall", s.folds), s.cv_scores.recall);
        for (c, v) in &s.importances {
            metric(&mut out, &format!("importance_{}", c.name()), *v);
        }
        for a in &s.ablations {
            let names: Vec<&str> = a.channels.iter().map(|c| c.name()).collect();
            metric(&mut out, &format!("ablation_{}_f1", names.join("+")), a.f1);
        }
    }
    if let Some(e) = eval {
        metric(&mut out, "replay_f1", e.scores.f1);
        metric(&mut out, "replay_accuracy", e.scores.accuracy);
        metric(&mut out, "within_one_minute", e.within_one_minute);
    }
    out
}

pub fn forecaster_csv(f: &ForecasterEval) -> String {
    let mut out = String::from("metric,value\n");
    metric(&mut out, "mse_h2", f.mse);
    metric(&mut out, "rmse_h", f.rmse);
    metric(&mut out, "mae_h", f.mae);
    metric(&mut out, "uncensored_mse_h2", f.uncensored_mse);
    metric(&mut out, "eps90_h", f.eps90);
    metric(&mut out, "coverage90", f.coverage);
    for a in &f.accuracy {
        metric(
            &mut out,
            &format!("accuracy_p{}_{}h", a.spec.level, a.spec.horizon_hours),
            a.accuracy,
        );
    }
    metric(&mut out, "false_positive_rate", f.false_positive.rate);
    out
}

pub fn coverage_csv(c: &IntegratedCoverage) -> String {
    let mut out = String::from("metric,value\n");
    metric(&mut out, "coverage", c.coverage);
    metric(&mut out, "via_forecast", c.via_forecast);
    metric(&mut out, "via_detection", c.via_detection);
    metric(&mut out, "events", c.events as f64);
    out
}

/// Writes whichever tables the report has data for; returns the file names.
pub fn write_tables(dir: &Path, report: &EvalReport) -> io::Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut files: Vec<(&str, String)> = Vec::new();
    if let Some(e) = &report.exploration {
        files.push(("exploration.csv", exploration_csv(e)));
    }
    if report.study.is_some() || report.detector.is_some() {
        files.push((
            "detector.csv",
            detector_csv(report.study.as_ref(), report.detector.as_ref()),
        ));
    }
    if let Some(f) = &report.forecaster {
        files.push(("forecaster.csv", forecaster_csv(f)));
    }
    if let Some(c) = &report.integrated {
        files.push(("coverage.csv", coverage_csv(c)));
    }
    let mut names = Vec::new();
    for (name, body) in files {
        std::fs::write(dir.join(name), body)?;
        names.push(name.to_string());
    }
    Ok(names)
}
