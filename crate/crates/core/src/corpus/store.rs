use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{AdImpression, CorpusError, FixtureTagger, TagAssignment, TagRecord, VisitRecord, WebPage};
use crate::persona::Persona;

/// Persona id under which clean-profile sessions are recorded.
pub const CLEAN_PROFILE_ID: &str = "clean-profile";

const PERSONAS: &str = "personas.json";
const PAGES: &str = "pages.jsonl";
const VISITS: &str = "visits.jsonl";
const IMPRESSIONS: &str = "impressions.jsonl";

/// In-memory view of an experiment directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentStore {
    pub personas: Vec<Persona>,
    pub pages: Vec<WebPage>,
    /// Source name to per-page tag records.
    pub tags: BTreeMap<String, Vec<TagRecord>>,
    pub visits: Vec<VisitRecord>,
    pub impressions: Vec<AdImpression>,
}

impl ExperimentStore {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref();
        let personas_path = dir.join(PERSONAS);
        let personas: Vec<Persona> = {
            let text =
                std::fs::read_to_string(&personas_path).map_err(|e| CorpusError::io(&personas_path, e))?;
            serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
                path: personas_path.display().to_string(),
                line: e.line(),
                reason: e.to_string(),
            })?
        };
        let pages = read_jsonl(&dir.join(PAGES))?;
        let visits = read_jsonl(&dir.join(VISITS))?;
        let impressions = read_jsonl(&dir.join(IMPRESSIONS))?;

        let mut tags = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))?;
        for entry in entries {
            let entry = entry.map_err(|e| CorpusError::io(dir, e))?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(source) = name.strip_prefix("tags.").and_then(|n| n.strip_suffix(".jsonl")) {
                tags.insert(source.to_string(), read_jsonl(&entry.path())?);
            }
        }

        let store = ExperimentStore { personas, pages, tags, visits, impressions };
        store.validate()?;
        Ok(store)
    }

    /// Writes every collection, replacing existing files.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let mut w = StoreWriter::create(dir)?;
        w.write_personas(&self.personas)?;
        w.write_pages(&self.pages)?;
        for (source, records) in &self.tags {
            w.write_tags(source, records)?;
        }
        w.reset_events()?;
        w.append_visits(&self.visits)?;
        w.append_impressions(&self.impressions)?;
        Ok(())
    }

    /// Checks that personas, visits and impressions only refer to known pages
    /// and personas.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let pages: HashSet<&str> = self.pages.iter().map(|p| p.url.site_key()).collect();
        let personas: HashSet<&str> = self.personas.iter().map(|p| p.id.as_str()).collect();
        let page_missing =
            |what: &str, url: &super::PageUrl| CorpusError::Integrity(format!("{what} {url} is not in {PAGES}"));

        for p in &self.personas {
            for url in &p.training_pages {
                if !pages.contains(url.site_key()) {
                    return Err(page_missing(&format!("training page of {}", p.id), url));
                }
            }
        }
        let known_persona = |id: &str| id == CLEAN_PROFILE_ID || personas.contains(id);
        for v in &self.visits {
            if !known_persona(&v.persona_id) {
                return Err(CorpusError::Integrity(format!("visit by unknown persona {}", v.persona_id)));
            }
            if !pages.contains(v.url.site_key()) {
                return Err(page_missing("visited page", &v.url));
            }
        }
        for imp in &self.impressions {
            if !known_persona(&imp.persona_id) {
                return Err(CorpusError::Integrity(format!(
                    "impression for unknown persona {}",
                    imp.persona_id
                )));
            }
            if imp.ntimes == 0 {
                return Err(CorpusError::Integrity(format!(
                    "impression {} -> {} has ntimes = 0",
                    imp.control_page, imp.landing_page
                )));
            }
            for url in [&imp.control_page, &imp.landing_page] {
                if !pages.contains(url.site_key()) {
                    return Err(page_missing("impression page", url));
                }
            }
        }
        Ok(())
    }

    pub fn sources(&self) -> Vec<&str> {
        self.tags.keys().map(String::as_str).collect()
    }

    pub fn tagger(&self, source: &str) -> Option<FixtureTagger> {
        self.tags.get(source).map(|recs| FixtureTagger::from_records(source, recs.iter().cloned()))
    }

    pub fn tag_assignments(&self, source: &str) -> Vec<TagAssignment> {
        self.tags
            .get(source)
            .map(|recs| {
                recs.iter()
                    .map(|r| TagAssignment {
                        page: r.url.clone(),
                        source: source.to_string(),
                        keywords: r.keywords.clone(),
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn persona(&self, id: &str) -> Option<&Persona> {
        self.personas.iter().find(|p| p.id == id)
    }

    /// Order-independent equality of every collection.
    pub fn same_contents(&self, other: &ExperimentStore) -> bool {
        fn as_set<T: Serialize>(items: &[T]) -> BTreeSet<String> {
            items.iter().map(|i| serde_json::to_string(i).expect("serializable")).collect()
        }
        as_set(&self.personas) == as_set(&other.personas)
            && as_set(&self.pages) == as_set(&other.pages)
            && as_set(&self.visits) == as_set(&other.visits)
            && as_set(&self.impressions) == as_set(&other.impressions)
            && self.tags.len() == other.tags.len()
            && self.tags.iter().all(|(src, recs)| {
                other.tags.get(src).is_some_and(|o| as_set(recs) == as_set(o))
            })
    }
}

/// The one writer for an experiment directory. Visits and impressions are
/// append-only logs; the other files are rewritten whole.
#[derive(Debug)]
pub struct StoreWriter {
    dir: PathBuf,
}

impl StoreWriter {
    pub fn create(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(|e| CorpusError::io(&dir, e))?;
        Ok(StoreWriter { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write_personas(&mut self, personas: &[Persona]) -> Result<(), CorpusError> {
        self.write_json(PERSONAS, &personas)
    }

    pub fn write_pages(&mut self, pages: &[WebPage]) -> Result<(), CorpusError> {
        self.write_jsonl(PAGES, pages, false)
    }

    pub fn write_tags(&mut self, source: &str, records: &[TagRecord]) -> Result<(), CorpusError> {
        self.write_jsonl(&format!("tags.{source}.jsonl"), records, false)
    }

    /// Truncates the event logs.
    pub fn reset_events(&mut self) -> Result<(), CorpusError> {
        self.write_jsonl::<VisitRecord>(VISITS, &[], false)?;
        self.write_jsonl::<AdImpression>(IMPRESSIONS, &[], false)
    }

    pub fn append_visits(&mut self, visits: &[VisitRecord]) -> Result<(), CorpusError> {
        self.write_jsonl(VISITS, visits, true)
    }

    pub fn append_impressions(&mut self, impressions: &[AdImpression]) -> Result<(), CorpusError> {
        self.write_jsonl(IMPRESSIONS, impressions, true)
    }

    /// Pretty-printed JSON document, newline-terminated.
    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<(), CorpusError> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        std::fs::write(&path, text).map_err(|e| CorpusError::io(&path, e))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CorpusError> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| CorpusError::io(&path, e))
    }

    fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T], append: bool) -> Result<(), CorpusError> {
        let path = self.dir.join(name);
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(append)
            .truncate(!append)
            .open(&path)
            .map_err(|e| CorpusError::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for item in items {
            serde_json::to_writer(&mut out, item).expect("serializable");
            out.write_all(b"\n").map_err(|e| CorpusError::io(&path, e))?;
        }
        out.flush().map_err(|e| CorpusError::io(&path, e))
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
