use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::AspectId;

/// Text templates for the chat backends. Placeholders are `{name}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub summarize_system: String,
    pub summarize_user: String,
    pub decode_user: String,
    pub score_user: String,
    pub assess_user: String,
    pub aspect_descriptions: BTreeMap<AspectId, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            summarize_system: include_str!("../../assets/prompts/summarize_system.txt").into(),
            summarize_user: include_str!("../../assets/prompts/summarize_user.txt").into(),
            decode_user: include_str!("../../assets/prompts/decode_user.txt").into(),
            score_user: include_str!("../../assets/prompts/score_user.txt").into(),
            assess_user: include_str!("../../assets/prompts/assess_user.txt").into(),
            aspect_descriptions: serde_json::from_str(include_str!("../../assets/prompts/aspects.json"))
                .expect("bundled aspect descriptions are valid JSON"),
        }
    }
}

fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

impl PromptTemplates {
    /// Built-in templates, with any of the same file names found in `dir`
    /// taking precedence.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut t = PromptTemplates::default();
        let read = |name: &str| -> Result<Option<String>> {
            let p = dir.join(name);
            if p.exists() {
                fs::read_to_string(&p).map(Some).map_err(|e| Error::io(&p, e))
            } else {
                Ok(None)
            }
        };
        for (name, slot) in [
            ("summarize_system.txt", &mut t.summarize_system),
            ("summarize_user.txt", &mut t.summarize_user),
            ("decode_user.txt", &mut t.decode_user),
            ("score_user.txt", &mut t.score_user),
            ("assess_user.txt", &mut t.assess_user),
        ] {
            if let Some(s) = read(name)? {
                *slot = s;
            }
        }
        if let Some(s) = read("aspects.json")? {
            let extra: BTreeMap<AspectId, String> = serde_json::from_str(&s)?;
            t.aspect_descriptions.extend(extra);
        }
        Ok(t)
    }

    fn description(&self, aspect: &AspectId) -> String {
        self.aspect_descriptions.get(aspect).cloned().unwrap_or_else(|| aspect.to_string())
    }

    /// `(system, user)` messages asking for one summary sentence.
    pub fn summarize(&self, aspect: &AspectId, abstract_text: &str) -> (String, String) {
        let user = render(
            &self.summarize_user,
            &[("aspect", aspect.as_str()), ("aspect_description", &self.description(aspect)), ("abstract", abstract_text)],
        );
        (self.summarize_system.clone(), user)
    }

    pub fn decode(&self, aspect: &AspectId, conditioning: &str) -> String {
        render(&self.decode_user, &[("aspect", aspect.as_str()), ("conditioning", conditioning)])
    }

    pub fn score(&self, aspect: &AspectId, conditioning: &str) -> String {
        render(&self.score_user, &[("aspect", aspect.as_str()), ("conditioning", conditioning)])
    }

    pub fn assess(&self, aspect: &AspectId, a: &str, b: &str, max_score: i64) -> String {
        render(
            &self.assess_user,
            &[
                ("aspect", aspect.as_str()),
                ("aspect_description", &self.description(aspect)),
                ("abstract_a", a),
                ("abstract_b", b),
                ("max_score", &max_score.to_string()),
            ],
        )
    }
}
