use std::sync::LazyLock;

use aicare_core::data::{FeatureSchema, XY_DYNAMIC, XY_STATIC};
use aicare_core::model::RiskAssessment;
use regex::{Regex, RegexBuilder};
use serde::{Deserialize, Serialize};

use crate::narrative::{Narrative, Section};
use crate::prompt::format_percent;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NumericLeak { section: Section, snippet: String },
    UnknownFeature { section: Section, name: String },
    EmptySection { section: Section },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub passed: bool,
    pub violations: Vec<Violation>,
}

/// Clinical measurement names a narrative might mention. A mention counts
/// as grounded only when it names (part of) a schema feature.
const EXTRA_LEXICON: &[&str] = &[
    "Cystatin C", "HbA1c", "Hemoglobin A1c", "Bilirubin", "Urea", "BUN", "eGFR", "CRP",
    "C-reactive protein", "Procalcitonin", "Troponin", "BNP", "NT-proBNP", "Lactate",
    "Magnesium", "Bicarbonate", "Transferrin", "Vitamin D", "INR", "Fibrinogen", "D-dimer",
    "Lymphocytes", "Neutrophils", "Hematocrit", "Beta-2 microglobulin", "Kt/V", "PTH",
    "Phosphate", "Cholesterol", "Gestational Age", "Fundal Height",
];

const UNITS: &[&str] = &[
    "mmol/L", "umol/L", "µmol/L", "g/L", "g/dL", "mg/dL", "mg/L", "U/L", "IU/L", "ng/mL", "pg/mL",
    "fL", "kg", "cm", "mmHg", "years", "kg/m^2", "kg/m2", "10^9/L", "mL/min",
];

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d+(?:[.,]\d+)?").expect("valid regex"));

struct Term {
    name: String,
    re: Regex,
}

fn term(name: &str) -> Term {
    let short_caps = name.len() <= 5 && name.chars().all(|c| !c.is_lowercase());
    let re = RegexBuilder::new(&format!(r"(?:^|[^\w]){}(?:$|[^\w])", regex::escape(name)))
        .case_insensitive(!short_caps)
        .build()
        .expect("valid term regex");
    Term { name: name.to_string(), re }
}

static LEXICON: LazyLock<Vec<Term>> = LazyLock::new(|| {
    let mut names: Vec<&str> = XY_DYNAMIC.iter().map(|(n, _)| *n).collect();
    names.extend(XY_STATIC.iter().map(|(n, _, _)| *n));
    names.extend(EXTRA_LEXICON);
    // generic words that are not measurements in running text
    names.retain(|n| !matches!(*n, "Height" | "Weight" | "Real-time Age"));
    names.sort_unstable();
    names.dedup();
    names.into_iter().map(term).collect()
});

/// Checks a narrative for grounding against the assessment it explains:
/// concrete numbers in clinical context, measurement names outside the
/// schema, and empty sections.
pub fn validate_narrative(
    narrative: &Narrative,
    schema: &FeatureSchema,
    assessment: &RiskAssessment,
    visit_idx: usize,
) -> ValidationReport {
    let risk = assessment.visits.get(visit_idx).map(|v| format_percent(v.risk()));
    let names: Vec<String> = schema.features().iter().map(|f| f.name.to_lowercase()).collect();
    let schema_terms: Vec<Term> = schema.features().iter().map(|f| term(&f.name)).collect();
    let mut units: Vec<&str> = UNITS.to_vec();
    units.extend(schema.features().iter().map(|f| f.unit.as_str()).filter(|u| !u.is_empty()));

    let mut violations = Vec::new();
    for section in Section::ALL {
        let body = narrative.sections.get(section);
        if body.trim().is_empty() {
            violations.push(Violation::EmptySection { section });
            continue;
        }
        for t in LEXICON.iter() {
            let lower = t.name.to_lowercase();
            if t.re.is_match(body) && !names.iter().any(|n| n.contains(&lower)) {
                violations.push(Violation::UnknownFeature { section, name: t.name.clone() });
            }
        }
        for snippet in numeric_leaks(body, risk.as_deref(), &units, &schema_terms) {
            violations.push(Violation::NumericLeak { section, snippet });
        }
    }
    ValidationReport { passed: violations.is_empty(), violations }
}

fn numeric_leaks(body: &str, risk: Option<&str>, units: &[&str], schema_terms: &[Term]) -> Vec<String> {
    let mut out = Vec::new();
    for m in NUMBER.find_iter(body) {
        let before = &body[..m.start()];
        let after = &body[m.end()..];
        // part of a name such as A1c, B12 or D3
        if before.chars().next_back().is_some_and(|c| c.is_alphabetic()) {
            continue;
        }
        if is_list_number(before, after) {
            continue;
        }
        let rest = after.trim_start();
        let percent = rest.starts_with('%');
        if percent && risk == Some(m.as_str()) {
            continue;
        }
        let with_unit = units.iter().any(|u| {
            rest.starts_with(u) && !rest[u.len()..].chars().next().is_some_and(|c| c.is_alphanumeric())
        });
        let clause = clause_around(body, m.start(), m.end());
        let near_feature = schema_terms.iter().chain(LEXICON.iter()).any(|t| t.re.is_match(clause));
        if percent || with_unit || near_feature {
            out.push(clause.trim().to_string());
        }
    }
    out.dedup();
    out
}

/// "1." or "2)" opening a line, after optional markdown decoration.
fn is_list_number(before: &str, after: &str) -> bool {
    let line_start = before.rsplit('\n').next().unwrap_or("");
    let decoration_only = line_start.chars().all(|c| c.is_whitespace() || matches!(c, '#' | '*' | '-' | '('));
    decoration_only && (after.starts_with(". ") || after.starts_with(") ") || after == "." || after.starts_with(".\n"))
}

fn is_boundary(text: &str, i: usize) -> bool {
    let c = text[i..].chars().next().unwrap_or(' ');
    match c {
        '\n' | ';' | '!' | '?' => true,
        '.' | ':' => text[i + 1..].chars().next().is_none_or(|n| n.is_whitespace()),
        _ => false,
    }
}

fn clause_around(text: &str, start: usize, end: usize) -> &str {
    let lo = text[..start]
        .char_indices()
        .rev()
        .find(|&(i, _)| is_boundary(text, i))
        .map_or(0, |(i, c)| i + c.len_utf8());
    let hi = text[end..]
        .char_indices()
        .find(|&(i, _)| is_boundary(text, end + i))
        .map_or(text.len(), |(i, _)| end + i);
    &text[lo..hi]
}
