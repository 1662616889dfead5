//! Report rendering: `report.json` and a plain-text table view.

use std::fmt::Write as _;
use std::path::Path;

use geoprobe_core::bank::Language;
use geoprobe_core::stats::StatsSummary;

use crate::analysis::{analyze, ModelRow, ReportDocument};
use crate::store::{RunStore, StoreError, COHERENCE_FILE, REPORT_JSON, REPORT_TEXT};

/// Analyze a run directory and write both report files into it.
pub fn emit_report(store: &RunStore) -> Result<ReportDocument, StoreError> {
    let doc = analyze(&store.meta()?, &store.records()?, &store.generations()?, &store.gaps()?);
    write_report(store.dir(), &doc)?;
    write_coherence(store, &doc)?;
    Ok(doc)
}

pub fn write_report(dir: &Path, doc: &ReportDocument) -> Result<(), StoreError> {
    let json = serde_json::to_string_pretty(doc).expect("report serializes");
    write(&dir.join(REPORT_JSON), json + "\n")?;
    write(&dir.join(REPORT_TEXT), render_text(doc))
}

fn write(path: &Path, text: String) -> Result<(), StoreError> {
    std::fs::write(path, text).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Rewrite `coherence.jsonl` with one report per scenario.
pub fn write_coherence(store: &RunStore, doc: &ReportDocument) -> Result<(), StoreError> {
    let path = store.path(COHERENCE_FILE);
    let mut text = String::new();
    for r in &doc.coherence.reports {
        text.push_str(&serde_json::to_string(r).expect("report serializes"));
        text.push('\n');
    }
    write(&path, text)
}

fn cond(s: Language, q: Language) -> String {
    if s == q {
        s.to_string()
    } else {
        format!("{s}/{q}")
    }
}

fn num(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:+.2}"))
}

/// Tier 1 numbers print plain; worse tiers carry a marker.
fn flagged(x: Option<f64>, tier: Option<u8>) -> String {
    let s = num(x);
    match tier {
        Some(2) => format!("{s}†"),
        Some(3) => format!("{s}‡"),
        Some(4) => format!("({s})"),
        _ => s,
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.0}%", 100.0 * v))
}

fn p(s: &Option<StatsSummary>) -> String {
    s.as_ref().map_or("-".into(), |s| format!("mean {:+.3}, p = {:.4}", s.mean, s.p_value))
}

fn fav(r: &ModelRow) -> Option<f64> {
    r.favourability.as_ref().map(|f| f.value)
}

struct Table {
    head: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(head: &[&str]) -> Self {
        Table {
            head: head.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn row(&mut self, r: Vec<String>) {
        self.rows.push(r);
    }

    fn render(&self, out: &mut String) {
        let n = self.head.len();
        let mut w = vec![0; n];
        for r in std::iter::once(&self.head).chain(&self.rows) {
            for (i, c) in r.iter().enumerate().take(n) {
                w[i] = w[i].max(c.chars().count());
            }
        }
        let line = |r: &Vec<String>, out: &mut String| {
            let cells: Vec<String> = r
                .iter()
                .enumerate()
                .map(|(i, c)| format!("{c}{}", " ".repeat(w[i] - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join(" | ").trim_end());
        };
        line(&self.head, out);
        let _ = writeln!(out, "{}", w.iter().map(|n| "-".repeat(*n)).collect::<Vec<_>>().join("-+-"));
        for r in &self.rows {
            line(r, out);
        }
        out.push('\n');
    }
}

pub fn render_text(doc: &ReportDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "run {}  target {}", doc.run_id, doc.target_country);
    let c = &doc.counts;
    let _ = writeln!(
        out,
        "records {} (main {}/{} expected), generations {}, gaps {}\n",
        c.records, c.main_records, c.expected_main_records, c.generations, c.gaps
    );

    let co = &doc.coherence;
    let _ = writeln!(
        out,
        "coherent scenarios: {}/{} at threshold {:.2}",
        co.included.len(),
        co.n_scenarios,
        co.threshold
    );
    for s in &co.sensitivity {
        let _ = writeln!(out, "  at {:.2}: {}", s.threshold, s.n_included);
    }
    out.push('\n');

    // base vs post-trained, per family
    let primary = doc.models.first().map(|r| (r.scenario_language, r.question_language));
    let mut t = Table::new(&["Family", "Model", "Base", "ΔEN", "Endpoint", "Compl."]);
    for d in doc.post_training.iter().filter(|d| Some((d.scenario_language, d.question_language)) == primary) {
        let post = doc
            .models
            .iter()
            .find(|r| r.model_id == d.post_model && Some((r.scenario_language, r.question_language)) == primary);
        let tier = post.and_then(|r| r.compliance_tier);
        t.row(vec![
            d.family.clone(),
            post.map_or(d.post_model.clone(), |r| r.label.clone()),
            num(Some(d.base)),
            flagged(Some(d.delta), tier),
            flagged(Some(d.post), tier),
            pct(d.post_compliance),
        ]);
    }
    if !t.rows.is_empty() {
        let _ = writeln!(out, "Post-training shift (target favourability, log-odds)");
        t.render(&mut out);
    }

    let mut t = Table::new(&["Model", "Lang", "Fav.", "±95%", "p", "All scen.", "Compl.", "Tier", "σ pp"]);
    for r in &doc.models {
        let f = r.favourability.as_ref();
        t.row(vec![
            r.label.clone(),
            cond(r.scenario_language, r.question_language),
            flagged(fav(r), r.compliance_tier),
            f.and_then(|f| f.ci_half_width).map_or("-".into(), |h| format!("{h:.2}")),
            f.and_then(|f| f.p_value).map_or("-".into(), |p| format!("{p:.4}")),
            num(r.favourability_all_scenarios),
            pct(r.mean_compliance),
            r.compliance_tier.map_or("-".into(), |t| t.to_string()),
            r.spread_pp.map_or("-".into(), |s| format!("{s:.1}")),
        ]);
    }
    let _ = writeln!(out, "Per-model favourability toward {}", doc.target_country);
    t.render(&mut out);

    if let Some(m) = &doc.maker_tests {
        let _ = writeln!(
            out,
            "Maker alignment ({}): {}/{} aligned; binomial {}; signed magnitude {}",
            cond(m.scenario_language, m.question_language),
            m.n_aligned,
            m.n_families,
            p(&m.binomial),
            p(&m.signed_magnitude)
        );
        if let Some(n) = &m.note {
            let _ = writeln!(out, "  note: {n}");
        }
        out.push('\n');
    }

    if !doc.language_shifts.is_empty() {
        let mut t = Table::new(&["Model", "Lang", "Country", "Shift vs en", "p", "Absolute"]);
        for s in &doc.language_shifts {
            t.row(vec![
                s.model_id.clone(),
                s.language.to_string(),
                s.country.clone(),
                num(s.shift.as_ref().map(|x| x.mean)),
                s.shift.as_ref().map_or("-".into(), |x| format!("{:.4}", x.p_value)),
                num(s.absolute),
            ]);
        }
        let _ = writeln!(out, "Language shifts");
        t.render(&mut out);
        for l in &doc.language_shift_tests {
            let _ = writeln!(
                out,
                "  {}: {}/{} post-trained shift toward target; binomial {}; vs base {}",
                l.language,
                l.n_toward_target,
                l.n_post_trained,
                p(&l.binomial),
                p(&l.paired_vs_base)
            );
        }
        out.push('\n');
    }

    if !doc.factorial.is_empty() {
        let mut t = Table::new(&["Model", "en/en", "en/zh", "zh/en", "zh/zh"]);
        for f in &doc.factorial {
            let mut r = vec![f.model_id.clone()];
            r.extend(f.cells.iter().map(|c| num(c.favourability)));
            t.row(r);
        }
        let _ = writeln!(out, "Scenario language × question language");
        t.render(&mut out);
    }

    if !doc.freegen.is_empty() {
        let mut t = Table::new(&["Model", "Compl.", "Letter", "Commit", "Forced", "Filler commit", "Agree"]);
        for f in &doc.freegen {
            let o = &f.own_reasoning;
            t.row(vec![
                f.label.clone(),
                pct(Some(o.letter_compliance)),
                num(o.letter_mean),
                num(o.commit_logodds_mean),
                num(f.forced),
                num(f.neutral_filler.as_ref().and_then(|n| n.commit_logodds_mean)),
                match (f.sign_agreement, f.agreement_expected) {
                    (Some(true), _) => "yes".into(),
                    (Some(false), true) => "NO".into(),
                    (Some(false), false) => "no (within band)".into(),
                    (None, _) => "-".into(),
                },
            ]);
        }
        let _ = writeln!(out, "Free generation");
        t.render(&mut out);
    }

    if !doc.ablations.is_empty() {
        let mut t = Table::new(&["Model", "Lang", "Ablation", "Baseline", "Variant", "Δ", "Compl."]);
        for a in &doc.ablations {
            t.row(vec![
                a.model_id.clone(),
                cond(a.scenario_language, a.question_language),
                a.ablation.clone(),
                num(Some(a.baseline)),
                num(Some(a.variant)),
                num(Some(a.delta)),
                pct(Some(a.variant_compliance)),
            ]);
        }
        let _ = writeln!(out, "Ablations");
        t.render(&mut out);
    }

    if !doc.prefill.is_empty() {
        let mut t = Table::new(&["Model", "Lang", "Prefill", "Naive compl.", "Corrected compl.", "Naive fav.", "Corrected fav."]);
        for r in &doc.prefill {
            t.row(vec![
                r.model_id.clone(),
                cond(r.scenario_language, r.question_language),
                format!("{:?}", r.prefill_token),
                pct(r.naive_compliance),
                pct(r.corrected_compliance),
                num(r.naive_favourability),
                num(r.corrected_favourability),
            ]);
        }
        let _ = writeln!(out, "Assistant-turn prefill");
        t.render(&mut out);
    }

    if !doc.fictional.is_empty() {
        let mut t = Table::new(&["Model", "Lang", "Country", "Phonetics", "Fav."]);
        for r in &doc.fictional {
            t.row(vec![
                r.model_id.clone(),
                cond(r.scenario_language, r.question_language),
                r.country.clone(),
                format!("{:?}", r.phonetic_identity),
                num(Some(r.favourability)),
            ]);
        }
        let _ = writeln!(out, "Fictional countries");
        t.render(&mut out);
    }

    if !doc.hot_cold.is_empty() {
        let mut t = Table::new(&["Model", "Lang", "Hot", "Cold", "Hot − cold"]);
        for r in &doc.hot_cold {
            t.row(vec![
                r.model_id.clone(),
                cond(r.scenario_language, r.question_language),
                num(r.hot),
                num(r.cold),
                num(r.hot_minus_cold),
            ]);
        }
        let _ = writeln!(out, "Hot vs cold scenarios");
        t.render(&mut out);
    }

    let mut t = Table::new(&["Model", "Justified/unjustified r", "Scenarios"]);
    for e in &doc.exclusion {
        t.row(vec![
            e.model_id.clone(),
            e.justified_unjustified_correlation.map_or("-".into(), |r| format!("{r:+.3}")),
            e.n_scenarios.to_string(),
        ]);
    }
    let _ = writeln!(out, "Exclusion diagnostic (all scenarios)");
    t.render(&mut out);

    if !doc.gaps.is_empty() {
        let _ = writeln!(out, "Gaps: {} queries failed after retries", doc.gaps.len());
    }
    if !doc.skipped_cells.is_empty() {
        let _ = writeln!(out, "Skipped cells: {}", doc.skipped_cells.len());
    }
    let _ = writeln!(out, "† compliance tier 2, ‡ tier 3, (x) tier 4");
    let _ = writeln!(out, "{}", doc.disclosure);
    out
}
