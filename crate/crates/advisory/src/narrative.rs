use serde::{Deserialize, Serialize};

use crate::AdvisoryError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Llm,
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Section {
    KeyFeatures,
    RiskAnalysis,
    Advice,
}

impl Section {
    pub const ALL: [Section; 3] = [Section::KeyFeatures, Section::RiskAnalysis, Section::Advice];

    pub fn heading(self) -> &'static str {
        match self {
            Section::KeyFeatures => "Key Feature Identification",
            Section::RiskAnalysis => "Risk Analysis",
            Section::Advice => "Personalized Advice",
        }
    }

    /// Tolerant heading match on a normalized (lowercase, letters and
    /// spaces) line.
    fn matches(self, norm: &str) -> bool {
        match self {
            Section::KeyFeatures => norm.starts_with("key feature"),
            Section::RiskAnalysis => norm.starts_with("risk analysis"),
            Section::Advice => {
                norm.starts_with("personalized advice")
                    || norm.starts_with("personalised advice")
                    || norm.starts_with("personalized recommendation")
                    || norm.starts_with("personalised recommendation")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sections {
    pub key_features: String,
    pub risk_analysis: String,
    pub advice: String,
}

impl Sections {
    pub fn get(&self, s: Section) -> &str {
        match s {
            Section::KeyFeatures => &self.key_features,
            Section::RiskAnalysis => &self.risk_analysis,
            Section::Advice => &self.advice,
        }
    }

    fn get_mut(&mut self, s: Section) -> &mut String {
        match s {
            Section::KeyFeatures => &mut self.key_features,
            Section::RiskAnalysis => &mut self.risk_analysis,
            Section::Advice => &mut self.advice,
        }
    }

    /// Text with one plain heading line per section.
    pub fn render(&self) -> String {
        Section::ALL
            .iter()
            .map(|&s| format!("{}\n{}", s.heading(), self.get(s)))
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Narrative {
    pub text: String,
    pub source: Source,
    pub model: String,
    pub sections: Sections,
}

fn normalize(line: &str) -> String {
    let mut out = String::new();
    for c in line.chars() {
        if c.is_alphabetic() {
            out.extend(c.to_lowercase());
        } else if !out.ends_with(' ') {
            out.push(' ');
        }
    }
    out.trim().to_string()
}

/// Which section a line introduces, if it reads as a heading: short, and
/// made of the heading words plus markdown or numbering decoration.
fn heading_of(line: &str) -> Option<Section> {
    let norm = normalize(line);
    if norm.is_empty() || norm.split(' ').count() > 5 {
        return None;
    }
    Section::ALL.into_iter().find(|s| s.matches(&norm))
}

/// Splits a reply into the three sections by heading keywords. Text before
/// the first heading is dropped. Fails when a section is missing.
pub fn parse_sections(text: &str) -> Result<Sections, AdvisoryError> {
    let mut sections = Sections::default();
    let mut seen = [false; 3];
    let mut current: Option<Section> = None;
    for line in text.lines() {
        // "**Risk Analysis:** the model..." carries content after the heading
        if let Some(s) = heading_of(line) {
            current = Some(s);
            seen[s as usize] = true;
            continue;
        }
        if let Some((head, rest)) = line.split_once(':') {
            if let Some(s) = heading_of(head) {
                current = Some(s);
                seen[s as usize] = true;
                push_line(sections.get_mut(s), rest.trim_start_matches('*').trim());
                continue;
            }
        }
        if let Some(s) = current {
            push_line(sections.get_mut(s), line);
        }
    }
    if let Some(i) = seen.iter().position(|&x| !x) {
        return Err(AdvisoryError::Parse(format!(
            "missing section `{}`",
            Section::ALL[i].heading()
        )));
    }
    for s in Section::ALL {
        let body = sections.get_mut(s);
        *body = body.trim().to_string();
    }
    Ok(sections)
}

fn push_line(body: &mut String, line: &str) {
    if !body.is_empty() {
        body.push('\n');
    }
    body.push_str(line);
}
