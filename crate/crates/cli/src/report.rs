//! Plots and `report.txt`, rendered from the data artifacts of a run.

use std::fmt::Write as _;

use lnlab_core::analysis::GradientNormProfile;
use lnlab_core::metrics::{format_score, MetricsSnapshot, Ratio};
use lnlab_core::model::{LnSite, Variant};
use lnlab_core::train::TrainRecord;

use crate::artifacts::{RunDir, SUMMARY};
use crate::pipeline::{
    AblationComparison, BoundVerification, BoundsFile, GroupSweepEntry, ProfileSummary, Results,
    RunEntry, Summary, LN_REMOVED, WITH_LN,
};
use crate::svg::{bound_scatter, grouped_bars, line_chart, stacked_bars, Series};
use crate::Result;

pub const REPORT: &str = "report.txt";

fn pct(r: Option<Ratio>) -> f64 {
    r.map_or(f64::NAN, |r| r.percent())
}

fn curve(record: &TrainRecord, f: impl Fn(&MetricsSnapshot) -> f64) -> Vec<(f64, f64)> {
    record
        .epochs
        .iter()
        .map(|e| (e.epoch as f64, f(&e.metrics)))
        .collect()
}

fn metrics_line(m: &MetricsSnapshot) -> String {
    format!(
        "train {} test {} mem {} rec {} rand {} gap {:.2}",
        m.train_accuracy,
        m.learning_accuracy,
        format_score(m.memorization),
        format_score(m.recovery),
        format_score(m.random_prediction),
        m.overfit_gap
    )
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn plot_record(run: &mut RunDir, entry: &RunEntry, record: &TrainRecord) -> Result<()> {
    let title = format!("{} {}", entry.variant, entry.arm);
    run.write(
        &format!("{}/accuracy.svg", entry.dir),
        line_chart(
            &format!("{title}: accuracy"),
            "epoch",
            "accuracy (%)",
            &[
                Series::new("train", curve(record, |m| m.train_accuracy.percent())),
                Series::new("test", curve(record, |m| m.learning_accuracy.percent())),
            ],
        )
        .as_bytes(),
    )?;
    if record.epochs.iter().all(|e| e.metrics.memorization.is_some()) {
        let cats: Vec<String> = record.epochs.iter().map(|e| e.epoch.to_string()).collect();
        let stacks: Vec<Vec<f64>> = record
            .epochs
            .iter()
            .map(|e| {
                let m = &e.metrics;
                vec![pct(m.memorization), pct(m.recovery), pct(m.random_prediction)]
            })
            .collect();
        run.write(
            &format!("{}/scores.svg", entry.dir),
            stacked_bars(
                &format!("{title}: noisy-label outcomes"),
                "epoch",
                "share of noisy samples (%)",
                &cats,
                &["memorized", "recovered", "random"],
                &stacks,
            )
            .as_bytes(),
        )?;
    }
    Ok(())
}

fn site_series(p: &GradientNormProfile, site: LnSite, means: &[f64]) -> Vec<(f64, f64)> {
    p.sites
        .iter()
        .zip(means)
        .filter(|(s, _)| s.site == site)
        .map(|(s, &m)| (s.layer as f64, m))
        .collect()
}

fn plot_profile(run: &mut RunDir, entry: &RunEntry, p: &GradientNormProfile) -> Result<()> {
    let mut series = Vec::new();
    for site in LnSite::BOTH {
        let mut learn = Series::new(format!("learn {site}"), site_series(p, site, &p.learning.means));
        let mut mem = Series::new(format!("mem {site}"), site_series(p, site, &p.memorization.means));
        if site == LnSite::Ln2 {
            learn = learn.dashed();
            mem = mem.dashed();
        }
        series.extend([learn, mem]);
    }
    run.write(
        &format!("{}/gradients.svg", entry.dir),
        line_chart(
            &format!("{} {}: LN-input gradient norms", entry.variant, entry.arm),
            "layer",
            "mean gradient L2 norm",
            &series,
        )
        .as_bytes(),
    )?;
    Ok(())
}

/// LN1 learn/mem ratio per layer; sentinel sites are left out.
fn ratio_points(profile: &ProfileSummary, sites: &GradientNormProfile) -> Vec<(f64, f64)> {
    sites
        .sites
        .iter()
        .zip(&profile.ratios.ratios)
        .filter(|(s, _)| s.site == LnSite::Ln1)
        .filter_map(|(s, r)| r.map(|r| (s.layer as f64, r)))
        .collect()
}

fn plot_ratios(run: &mut RunDir, summary: &Summary, profiles: &[&ProfileSummary]) -> Result<()> {
    let mut series = Vec::new();
    for p in profiles {
        let Some(entry) = summary
            .runs
            .iter()
            .find(|r| r.variant == p.variant && r.arm == p.arm && r.profiled)
        else {
            continue;
        };
        let g: GradientNormProfile = run.read_json(&format!("{}/gradients.json", entry.dir))?;
        series.push(Series::new(format!("{} {}", p.variant, p.arm), ratio_points(p, &g)));
    }
    run.write(
        "ratios.svg",
        line_chart(
            "learning / memorization gradient-norm ratio (LN1)",
            "layer",
            "ratio",
            &series,
        )
        .as_bytes(),
    )?;
    Ok(())
}

fn ablation_report(run: &mut RunDir, summary: &Summary, text: &mut String) -> Result<()> {
    let cmp: AblationComparison = run.read_json("comparison.json")?;
    let _ = writeln!(
        text,
        "Paired training with LN affine parameters (with_ln) and without them at every site (ln_removed).\n\
         The ln_removed arm trains for as many epochs as with_ln needed to fit the noisy labels.\n"
    );
    for c in &cmp.variants {
        let _ = writeln!(text, "{}", c.variant);
        let _ = writeln!(text, "  with_ln    epochs {:>3}: {}", c.with_ln.epochs, metrics_line(&c.with_ln.final_metrics));
        let _ = writeln!(text, "  ln_removed epochs {:>3}: {}", c.ln_removed.epochs, metrics_line(&c.ln_removed.final_metrics));
        let _ = writeln!(
            text,
            "  overfit gap {:.2} -> {:.2} (change {:+.2} points)",
            c.overfit_gap_with_ln, c.overfit_gap_ln_removed, c.overfit_gap_change
        );
        let d = &c.profile_with_ln.dominance;
        let passed = d.passes.iter().filter(|(_, p)| *p).count();
        let _ = writeln!(
            text,
            "  sites with learning norm >= memorization norm (with_ln): {passed}/{} ({:.1}%)",
            d.passes.len(),
            100.0 * d.pass_fraction
        );
        let fmt_mean = |m: Option<f64>| m.map_or("undefined".to_string(), |m| format!("{m:.4}"));
        let _ = writeln!(
            text,
            "  mean learn/mem ratio: with_ln {}, ln_removed {}",
            fmt_mean(c.profile_with_ln.ratios.mean_finite),
            fmt_mean(c.profile_ln_removed.ratios.mean_finite)
        );
        let _ = writeln!(
            text,
            "  identical init: {}, identical batch order: {}\n",
            yes_no(c.identical_init),
            yes_no(c.identical_batch_order)
        );
    }
    let _ = writeln!(text, "Qualitative grid");
    if let Some(c) = cmp.variant(Variant::PostLn) {
        let _ = writeln!(
            text,
            "  Post-LN memorization dropped after LN removal: {} ({} -> {})",
            c.memorization_dropped.map_or("undefined, no noisy samples", yes_no),
            format_score(c.with_ln.final_metrics.memorization),
            format_score(c.ln_removed.final_metrics.memorization)
        );
        let _ = writeln!(
            text,
            "  Post-LN test accuracy dropped after LN removal: {} ({} -> {})",
            yes_no(c.test_accuracy_dropped),
            c.with_ln.final_metrics.learning_accuracy,
            c.ln_removed.final_metrics.learning_accuracy
        );
    }
    if let Some(c) = cmp.variant(Variant::PreLn) {
        let _ = writeln!(
            text,
            "  Pre-LN test accuracy dropped after LN removal: {} ({} -> {})",
            yes_no(c.test_accuracy_dropped),
            c.with_ln.final_metrics.learning_accuracy,
            c.ln_removed.final_metrics.learning_accuracy
        );
        let _ = writeln!(
            text,
            "  Pre-LN memorization dropped after LN removal: {} ({} -> {})",
            c.memorization_dropped.map_or("undefined, no noisy samples", yes_no),
            format_score(c.with_ln.final_metrics.memorization),
            format_score(c.ln_removed.final_metrics.memorization)
        );
    }
    let r = cmp.ratio_comparison;
    if let Some(higher) = r.pre_exceeds_post {
        let _ = writeln!(
            text,
            "  mean learn/mem ratio Pre-LN {:.4} vs Post-LN {:.4}: Pre-LN {}",
            r.pre_ln_mean.unwrap_or(f64::NAN),
            r.post_ln_mean.unwrap_or(f64::NAN),
            if higher { "higher" } else { "not higher" }
        );
    }

    for c in &cmp.variants {
        let v = c.variant;
        let rec = |arm: &str| -> Result<TrainRecord> { run.read_json(&format!("{v}/{arm}/record.json")) };
        let (a, b) = (rec(WITH_LN)?, rec(LN_REMOVED)?);
        if a.epochs.is_empty() || b.epochs.is_empty() {
            continue;
        }
        run.write(
            &format!("{v}/paired_accuracy.svg"),
            line_chart(
                &format!("{v}: accuracy with and without LN parameters"),
                "epoch",
                "accuracy (%)",
                &[
                    Series::new("test with_ln", curve(&a, |m| m.learning_accuracy.percent())),
                    Series::new("test ln_removed", curve(&b, |m| m.learning_accuracy.percent())),
                    Series::new("train with_ln", curve(&a, |m| m.train_accuracy.percent())).dashed(),
                    Series::new("train ln_removed", curve(&b, |m| m.train_accuracy.percent())).dashed(),
                ],
            )
            .as_bytes(),
        )?;
        run.write(
            &format!("{v}/paired_scores.svg"),
            line_chart(
                &format!("{v}: noisy-label outcomes with and without LN parameters"),
                "epoch",
                "share of noisy samples (%)",
                &[
                    Series::new("memorized with_ln", curve(&a, |m| pct(m.memorization))),
                    Series::new("memorized ln_removed", curve(&b, |m| pct(m.memorization))),
                    Series::new("recovered with_ln", curve(&a, |m| pct(m.recovery))).dashed(),
                    Series::new("recovered ln_removed", curve(&b, |m| pct(m.recovery))).dashed(),
                ],
            )
            .as_bytes(),
        )?;
    }
    let profiles: Vec<&ProfileSummary> = cmp.variants.iter().map(|c| &c.profile_with_ln).collect();
    plot_ratios(run, summary, &profiles)
}

fn group_report(run: &mut RunDir, entries: &[GroupSweepEntry], text: &mut String) -> Result<()> {
    let mut cats = Vec::new();
    let mut names = Vec::new();
    let mut values = Vec::new();
    for e in entries {
        let stored: GroupSweepEntry = run.read_json(&format!("{}/groups.json", e.variant))?;
        let _ = writeln!(text, "{}", e.variant);
        for g in &stored.groups {
            let _ = writeln!(text, "  {:<7} epochs {:>3}: {}", g.group.to_string(), g.epochs, metrics_line(&g.final_metrics));
        }
        let o = stored.ordering;
        let _ = writeln!(
            text,
            "  gap(early) > gap(middle) > gap(later): {}\n  gap(early) < gap(middle) < gap(later): {}\n  expected ordering for the variant holds: {}\n",
            yes_no(o.early_gt_middle_gt_later),
            yes_no(o.early_lt_middle_lt_later),
            yes_no(o.expected_holds)
        );
        if cats.is_empty() {
            cats = stored.groups.iter().map(|g| g.group.to_string()).collect();
        }
        names.push(e.variant.to_string());
        values.push(stored.groups.iter().map(|g| g.overfit_gap).collect());
    }
    run.write(
        "groups.svg",
        grouped_bars(
            "overfit gap per ablated layer group",
            "ablated group",
            "train - test accuracy (points)",
            &cats,
            &names,
            &values,
        )
        .as_bytes(),
    )?;
    Ok(())
}

fn bound_report(run: &mut RunDir, v: &BoundVerification, text: &mut String) -> Result<()> {
    let file: BoundsFile = run.read_json("bounds.json")?;
    let _ = writeln!(text, "validity slack {}\n", v.slack);
    for t in &v.tallies {
        let name = t.variant.map_or("?".to_string(), |v| v.to_string());
        let _ = writeln!(
            text,
            "{name} {} models: {} samples, {} entries, {} violations, {} undefined bounds, {} unconverged samples",
            t.source, t.samples, t.entries, t.violations, t.undefined_bounds, t.unconverged_samples
        );
        let _ = writeln!(
            text,
            "  nonincreasing bound sequences: {}/{} samples; with all variance conditions passing {}/{}; {} samples fail a variance condition ({} of them not monotone, reported only)",
            t.monotone_samples,
            t.samples,
            t.condition_pass_monotone,
            t.condition_pass_samples,
            t.condition_fail_samples,
            t.condition_fail_nonmonotone
        );
    }
    if file.runs.iter().any(|r| r.extended) {
        let _ = writeln!(text, "\nentries from sequences longer than one position are labeled extended");
    }
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for r in &file.runs {
        let key = format!("{} {}", r.variant, r.source);
        let pts: Vec<(f64, f64)> = r
            .report
            .entries
            .iter()
            .filter_map(|e| e.bound.map(|b| (b, e.measured)))
            .collect();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.extend(pts),
            None => groups.push((key, pts)),
        }
    }
    run.write(
        "bounds.svg",
        bound_scatter("measured LN-input gradient norm against its bound", &groups).as_bytes(),
    )?;
    Ok(())
}

/// Renders every plot and `report.txt` of the run described by its
/// `summary.json`. A run whose record holds no epochs gets no plots and an
/// explicit notice instead.
pub fn emit_report(run: &mut RunDir) -> Result<()> {
    let summary: Summary = run.read_json(SUMMARY)?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "pipeline {:?}, seed {}\n",
        summary.pipeline, summary.config.seed
    );
    if let Some(d) = &summary.data {
        let _ = writeln!(
            text,
            "data: {} samples ({} train, {} val, {} test), {} classes, sequence length {}, {} noisy labels\n",
            d.samples, d.train, d.val, d.test, d.num_classes, d.seq_len, d.noisy_samples
        );
        if d.empty_noise_warning {
            let _ = writeln!(text, "warning: the noise fraction selected no samples\n");
        }
    }
    let mut notices = Vec::new();
    for entry in &summary.runs {
        let record: TrainRecord = run.read_json(&format!("{}/record.json", entry.dir))?;
        if record.epochs.is_empty() {
            notices.push(format!("notice: {} has no recorded epochs; plots skipped", entry.dir));
            continue;
        }
        plot_record(run, entry, &record)?;
        if entry.profiled {
            let p: GradientNormProfile = run.read_json(&format!("{}/gradients.json", entry.dir))?;
            plot_profile(run, entry, &p)?;
        }
    }
    match &summary.results {
        Results::Baseline(arms) => {
            for a in arms {
                let _ = writeln!(text, "{} epochs {:>3}: {}", a.variant, a.epochs, metrics_line(&a.final_metrics));
            }
        }
        Results::AblationCompare(_) => ablation_report(run, &summary, &mut text)?,
        Results::GroupSweep(entries) => group_report(run, entries, &mut text)?,
        Results::GradientProfile(profiles) => {
            for p in profiles {
                let passed = p.dominance.passes.iter().filter(|(_, ok)| *ok).count();
                let _ = writeln!(
                    text,
                    "{}: learning norm >= memorization norm at {passed}/{} sites; mean ratio {}",
                    p.variant,
                    p.dominance.passes.len(),
                    p.ratios.mean_finite.map_or("undefined".into(), |m| format!("{m:.4}"))
                );
            }
            let refs: Vec<&ProfileSummary> = profiles.iter().collect();
            plot_ratios(run, &summary, &refs)?;
        }
        Results::BoundVerify(v) => bound_report(run, v, &mut text)?,
        Results::NoiseSweep(entries) => {
            let mut series: Vec<Series> = Vec::new();
            for e in entries {
                let _ = writeln!(
                    text,
                    "fraction {} ({} noisy) {} {:<10} epochs {:>3}: {}",
                    e.fraction,
                    e.noisy_samples,
                    e.arm.variant,
                    e.arm.arm,
                    e.arm.epochs,
                    metrics_line(&e.arm.final_metrics)
                );
                let name = format!("{} {}", e.arm.variant, e.arm.arm);
                let point = (100.0 * e.fraction, pct(e.arm.final_metrics.memorization));
                match series.iter_mut().find(|s| s.name == name) {
                    Some(s) => s.points.push(point),
                    None => series.push(Series::new(name, vec![point])),
                }
            }
            run.write(
                "noise_sweep.svg",
                line_chart(
                    "final memorization score per noise fraction",
                    "noisy labels (% of the noise population)",
                    "memorization score (%)",
                    &series,
                )
                .as_bytes(),
            )?;
        }
    }
    for n in &notices {
        let _ = writeln!(text, "{n}");
    }
    run.write(REPORT, text.as_bytes())
}
