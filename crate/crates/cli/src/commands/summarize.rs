use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::bail;
use atlas_core::backends::remote::{RemoteChatClient, RemoteConfig};
use atlas_core::backends::{filter_refusals, MockSummarizer, PromptTemplates, SummarizerBackend};
use atlas_core::geometry::AspectId;
use atlas_core::store::{load_atlas, parse_jsonl, IngestMode, SummaryRecord, MAX_SUMMARIES};
use atlas_core::synth::cue_phrases;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::print_summary;
use crate::pipeline::read_json;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Backend {
    /// Extract cue-bearing sentences; deterministic and offline.
    Mock,
    /// Chat-completion endpoint.
    Remote,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub atlas: PathBuf,

    /// Aspect to summarize; repeat for several.
    #[arg(long = "aspect", required = true)]
    pub aspects: Vec<String>,

    #[arg(long, value_enum, default_value = "mock")]
    pub backend: Backend,

    /// JSON object of aspect -> cue phrases for the mock backend; defaults to
    /// the cues of the bundled synthetic corpus.
    #[arg(long)]
    pub cues: Option<PathBuf>,

    /// Summaries requested per (document, aspect).
    #[arg(long, default_value_t = 4)]
    pub n: usize,

    /// Summaries JSONL, appended to and resumed from. Pairs where every
    /// summary was a refusal are recorded in `<out>.refused`.
    #[arg(long)]
    pub out: PathBuf,

    /// Stop after this many new (document, aspect) pairs.
    #[arg(long)]
    pub limit: Option<usize>,

    #[arg(long, env = "ATLAS_REMOTE_ENDPOINT")]
    pub endpoint: Option<String>,

    #[arg(long, env = "ATLAS_REMOTE_MODEL")]
    pub model: Option<String>,

    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Refused {
    doc_id: String,
    aspect: AspectId,
}

fn refused_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".refused");
    out.with_file_name(name)
}

/// Pairs already recorded in `path`. A final line cut short by an
/// interrupted run is dropped from the file so appends start clean.
fn recorded<T: serde::de::DeserializeOwned>(path: &Path, key: impl Fn(&T) -> (String, AspectId)) -> anyhow::Result<BTreeSet<(String, AspectId)>> {
    let Ok(text) = fs::read_to_string(path) else { return Ok(BTreeSet::new()) };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.len() != text.len() {
        tracing::warn!(path = %path.display(), "dropping a partial final line left by an interrupted run");
        fs::write(path, complete).map_err(|e| atlas_core::Error::io(path, e))?;
    }
    let parsed = parse_jsonl::<T, _>(complete, IngestMode::Lenient, |_| Ok(()))?;
    Ok(parsed.records.iter().map(key).collect())
}

fn append_line<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| atlas_core::Error::io(path, e))?;
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    f.write_all(line.as_bytes()).map_err(|e| atlas_core::Error::io(path, e))?;
    f.flush().map_err(|e| atlas_core::Error::io(path, e))?;
    Ok(())
}

fn backend(args: &Args) -> anyhow::Result<Box<dyn SummarizerBackend>> {
    Ok(match args.backend {
        Backend::Mock => {
            let cues: BTreeMap<AspectId, Vec<String>> = match &args.cues {
                Some(p) => read_json(p)?,
                None => cue_phrases(),
            };
            Box::new(MockSummarizer::new(cues))
        }
        Backend::Remote => {
            let mut cfg = RemoteConfig::default();
            if let Some(e) = &args.endpoint {
                cfg.endpoint = e.clone();
            }
            if let Some(m) = &args.model {
                cfg.model = m.clone();
            }
            let templates = match &args.prompts {
                Some(dir) => PromptTemplates::from_dir(dir)?,
                None => PromptTemplates::default(),
            };
            Box::new(RemoteChatClient::http(cfg, templates))
        }
    })
}

pub fn run(args: Args) -> anyhow::Result<()> {
    if !(1..=MAX_SUMMARIES).contains(&args.n) {
        bail!(atlas_core::Error::InvalidConfig(format!("--n must be in 1..={MAX_SUMMARIES}")));
    }
    let atlas = load_atlas(&args.atlas)?;
    let summarizer = backend(&args)?;
    let aspects: Vec<AspectId> = args.aspects.iter().map(AspectId::new).collect();
    let refused_file = refused_path(&args.out);

    let mut done = recorded::<SummaryRecord>(&args.out, |r| (r.doc_id.clone(), r.aspect.clone()))?;
    done.extend(recorded::<Refused>(&refused_file, |r| (r.doc_id.clone(), r.aspect.clone()))?);

    let (mut written, mut refused, mut skipped) = (0usize, 0usize, 0usize);
    'outer: for doc in &atlas.documents {
        for aspect in &aspects {
            if done.contains(&(doc.id.clone(), aspect.clone())) {
                skipped += 1;
                continue;
            }
            if args.limit.is_some_and(|l| written + refused >= l) {
                break 'outer;
            }
            let texts = filter_refusals(summarizer.summarize(&doc.abstract_text, aspect, args.n)?);
            if texts.is_empty() {
                append_line(&refused_file, &Refused { doc_id: doc.id.clone(), aspect: aspect.clone() })?;
                refused += 1;
            } else {
                let texts = texts.into_iter().take(MAX_SUMMARIES).collect();
                append_line(&args.out, &SummaryRecord::new(doc.id.clone(), aspect.clone(), texts)?)?;
                written += 1;
            }
        }
    }
    print_summary(&json!({
        "backend": summarizer.identity(),
        "written": written,
        "refused": refused,
        "already_done": skipped,
    }));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_final_lines_are_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let ok = serde_json::to_string(&Refused { doc_id: "a".into(), aspect: "h".into() }).unwrap();
        fs::write(&p, format!("{ok}\n{{\"doc_id\":\"b\",\"asp")).unwrap();
        let got = recorded::<Refused>(&p, |r| (r.doc_id.clone(), r.aspect.clone())).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(fs::read_to_string(&p).unwrap(), format!("{ok}\n"));
        assert_eq!(refused_path(&p), dir.path().join("s.jsonl.refused"));
    }
}
