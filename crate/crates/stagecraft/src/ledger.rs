//! Canonical object naming, episode records, and rollout-buffer tallies.
//!
//! Everything downstream treats a scene as a set of canonical object names:
//! lowercase, trimmed, inner whitespace collapsed. No synonym merging is
//! attempted; distinct canonical strings are distinct objects. Poses and
//! images are never stored, only the 64-bit seed that instantiated the
//! episode.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A scene object identified by its canonical name.
///
/// Two labels denote the same object exactly when their canonical names are
/// byte-equal; the optional category tag is carried along but takes no part
/// in equality, ordering, hashing, or serialization.
#[derive(Clone, Debug)]
pub struct ObjectLabel {
    name: String,
    category: Option<String>,
}

impl ObjectLabel {
    pub fn new(raw: &str) -> Result<Self> {
        let name = canonical_form(raw);
        if name.is_empty() {
            return Err(Error::EmptyLabel);
        }
        Ok(Self {
            name,
            category: None,
        })
    }

    pub fn with_category(raw: &str, category: &str) -> Result<Self> {
        let mut label = Self::new(raw)?;
        let category = canonical_form(category);
        if !category.is_empty() {
            label.category = Some(category);
        }
        Ok(label)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }
}

fn canonical_form(raw: &str) -> String {
    raw.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

impl PartialEq for ObjectLabel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
    }
}

impl Eq for ObjectLabel {}

impl PartialOrd for ObjectLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ObjectLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.name.cmp(&other.name)
    }
}

impl std::hash::Hash for ObjectLabel {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.name.hash(state);
    }
}

impl fmt::Display for ObjectLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl Serialize for ObjectLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name)
    }
}

impl<'de> Deserialize<'de> for ObjectLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        ObjectLabel::new(&raw).map_err(D::Error::custom)
    }
}

/// Deduplicated, order-free collection of object labels.
///
/// Iteration, comparison, and serialization always follow lexicographic
/// order of the canonical names, so equal sets serialize to identical bytes.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectSet {
    members: BTreeSet<ObjectLabel>,
}

impl ObjectSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a label; returns false when an equal label was already present.
    pub fn insert(&mut self, label: ObjectLabel) -> bool {
        self.members.insert(label)
    }

    pub fn remove(&mut self, label: &ObjectLabel) -> bool {
        self.members.remove(label)
    }

    pub fn contains(&self, label: &ObjectLabel) -> bool {
        self.members.contains(label)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ObjectLabel> {
        self.members.iter()
    }

    /// Canonical names in lexicographic order.
    pub fn names(&self) -> Vec<&str> {
        self.members.iter().map(|l| l.name()).collect()
    }

    pub fn is_subset(&self, other: &ObjectSet) -> bool {
        self.members.is_subset(&other.members)
    }

    pub fn union(&self, other: &ObjectSet) -> ObjectSet {
        ObjectSet {
            members: self.members.union(&other.members).cloned().collect(),
        }
    }

    pub fn intersection(&self, other: &ObjectSet) -> ObjectSet {
        ObjectSet {
            members: self.members.intersection(&other.members).cloned().collect(),
        }
    }

    pub fn difference(&self, other: &ObjectSet) -> ObjectSet {
        ObjectSet {
            members: self.members.difference(&other.members).cloned().collect(),
        }
    }
}

impl FromIterator<ObjectLabel> for ObjectSet {
    fn from_iter<I: IntoIterator<Item = ObjectLabel>>(iter: I) -> Self {
        ObjectSet {
            members: iter.into_iter().collect(),
        }
    }
}

impl fmt::Display for ObjectSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.names().join(", "))
    }
}

impl Serialize for ObjectSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.members.iter())
    }
}

impl<'de> Deserialize<'de> for ObjectSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = Vec::<String>::deserialize(deserializer)?;
        canonicalize(&raw).map_err(D::Error::custom)
    }
}

/// Canonicalize raw names into a deduplicated object set.
///
/// Names that collapse to the same canonical form merge into one member; a
/// name that is empty after trimming is an error. An empty input yields the
/// empty set.
pub fn canonicalize<I, S>(raw_names: I) -> Result<ObjectSet>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut set = ObjectSet::new();
    for raw in raw_names {
        set.insert(ObjectLabel::new(raw.as_ref())?);
    }
    Ok(set)
}

/// Where an episode record came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EpisodeSource {
    Simulated,
    Imported,
}

mod outcome_bit {
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        outcome: &bool,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(u8::from(*outcome))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<bool, D::Error> {
        match u8::deserialize(deserializer)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!(
                "outcome must be 0 or 1, got {other}"
            ))),
        }
    }
}

/// One recorded policy rollout: the whole starting scene, the pose seed, and
/// the binary task outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: String,
    pub objects: ObjectSet,
    #[serde(rename = "seed")]
    pub instantiation_seed: u64,
    #[serde(with = "outcome_bit")]
    pub outcome: bool,
    pub source: EpisodeSource,
}

/// Append-only collection of episode records with unique ids.
///
/// Single writer; interleaving writers on one buffer is unsupported.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    episodes: Vec<EpisodeRecord>,
    ids: BTreeSet<String>,
}

impl RolloutBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append one episode. Rejects empty object sets and reused ids.
    pub fn record_episode(&mut self, episode: EpisodeRecord) -> Result<()> {
        if episode.objects.is_empty() {
            return Err(Error::EmptyObjectSet);
        }
        if !self.ids.insert(episode.episode_id.clone()) {
            return Err(Error::DuplicateEpisodeId(episode.episode_id));
        }
        self.episodes.push(episode);
        Ok(())
    }

    pub fn episodes(&self) -> &[EpisodeRecord] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// Objects present in every recorded episode. Empty buffer yields the
    /// empty set.
    pub fn ubiquitous_objects(&self) -> ObjectSet {
        let mut episodes = self.episodes.iter();
        let Some(first) = episodes.next() else {
            return ObjectSet::new();
        };
        episodes.fold(first.objects.clone(), |acc, ep| acc.intersection(&ep.objects))
    }

    /// Group episodes by their exact object set and count trials/successes.
    pub fn tally(&self) -> Result<SuccessTable> {
        if self.episodes.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let mut entries: BTreeMap<ObjectSet, Tally> = BTreeMap::new();
        for episode in &self.episodes {
            let tally = entries.entry(episode.objects.clone()).or_default();
            tally.trials += 1;
            tally.successes += u64::from(episode.outcome);
        }
        Ok(SuccessTable { entries })
    }
}

/// Trial and success counts for one observed object set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub trials: u64,
    pub successes: u64,
}

/// Per-set tallies keyed by the exact object set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SuccessTable {
    entries: BTreeMap<ObjectSet, Tally>,
}

impl SuccessTable {
    pub fn entries(&self) -> impl Iterator<Item = (&ObjectSet, &Tally)> {
        self.entries.iter()
    }

    pub fn get(&self, set: &ObjectSet) -> Option<Tally> {
        self.entries.get(set).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_trials(&self) -> u64 {
        self.entries.values().map(|t| t.trials).sum()
    }

    /// Intersection of all entry sets; empty table yields the empty set.
    pub fn ubiquitous_objects(&self) -> ObjectSet {
        let mut keys = self.entries.keys();
        let Some(first) = keys.next() else {
            return ObjectSet::new();
        };
        keys.fold(first.clone(), |acc, set| acc.intersection(set))
    }
}

/// Write the buffer as one json record per line, objects in lexicographic
/// order.
pub fn write_episode_log<W: Write>(writer: &mut W, buffer: &RolloutBuffer) -> Result<()> {
    for episode in buffer.episodes() {
        serde_json::to_writer(&mut *writer, episode)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Read a line-delimited episode log; blank lines are skipped and object
/// arrays are accepted in any order.
pub fn read_episode_log<R: BufRead>(reader: R) -> Result<RolloutBuffer> {
    let mut buffer = RolloutBuffer::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let episode: EpisodeRecord =
            serde_json::from_str(&line).map_err(|err| Error::MalformedLog {
                line: idx + 1,
                message: err.to_string(),
            })?;
        buffer.record_episode(episode).map_err(|err| match err {
            Error::MalformedLog { .. } => err,
            other => Error::MalformedLog {
                line: idx + 1,
                message: other.to_string(),
            },
        })?;
    }
    Ok(buffer)
}

pub fn write_episode_log_file(path: &Path, buffer: &RolloutBuffer) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_episode_log(&mut writer, buffer)?;
    writer.flush()?;
    Ok(())
}

pub fn read_episode_log_file(path: &Path) -> Result<RolloutBuffer> {
    read_episode_log(BufReader::new(File::open(path)?))
}
