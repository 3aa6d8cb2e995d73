//! MECD-style annotation files: a JSON object mapping video ids to records.

use std::fmt;
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::types::{CausalGraph, CompleteCausalityList, MIN_EVENTS};

/// A relation flag written as `0`/`1` (booleans are accepted on input).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Flag(bool);

impl Serialize for Flag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(self.0))
    }
}

impl<'de> Deserialize<'de> for Flag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Flag;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("0, 1 or a boolean")
            }
            fn visit_bool<E: de::Error>(self, v: bool) -> std::result::Result<Flag, E> {
                Ok(Flag(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Flag, E> {
                match v {
                    0 => Ok(Flag(false)),
                    1 => Ok(Flag(true)),
                    _ => Err(E::invalid_value(de::Unexpected::Unsigned(v), &self)),
                }
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Flag, E> {
                match v {
                    0 => Ok(Flag(false)),
                    1 => Ok(Flag(true)),
                    _ => Err(E::invalid_value(de::Unexpected::Signed(v), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    duration: f64,
    timestamps: Vec<[f64; 2]>,
    sentences: Vec<String>,
    causality: Vec<Flag>,
    #[serde(rename = "complete causality", default, skip_serializing_if = "Option::is_none")]
    complete_causality: Option<Vec<Vec<Flag>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    planted_graph: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features_path: Option<String>,
}

/// One annotated video.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub duration: f64,
    pub timestamps: Vec<(f64, f64)>,
    pub sentences: Vec<String>,
    pub causality: Vec<bool>,
    pub complete_causality: Option<CompleteCausalityList>,
    /// Synthetic manifests only: the generating graph.
    pub planted_graph: Option<CausalGraph>,
    /// Synthetic manifests only: feature container relative to the manifest.
    pub features_path: Option<String>,
}

impl AnnotationRecord {
    pub fn n_events(&self) -> usize {
        self.sentences.len()
    }

    /// Checks the record and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let n = self.sentences.len();
        let fail = |m: String| Err(Error::record(&self.video_id, m));
        if self.timestamps.len() != n {
            return fail(format!("{n} sentences but {} timestamps", self.timestamps.len()));
        }
        if n < MIN_EVENTS {
            return fail(format!("N={n} < {MIN_EVENTS}"));
        }
        if self.causality.len() + 1 != n {
            return fail(format!("causality length {} \u{2260} N\u{2212}1={}", self.causality.len(), n - 1));
        }
        for (i, &(s, e)) in self.timestamps.iter().enumerate() {
            if !(s >= 0.0 && s < e) {
                return fail(format!("timestamp {} is not 0 \u{2264} start < end", i + 1));
            }
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if w[1].0 < w[0].1 {
                return fail(format!("timestamps {} and {} overlap or are unsorted", i + 1, i + 2));
            }
        }
        let mut warnings = Vec::new();
        if let Some(c) = &self.complete_causality {
            if c.n_events() != n {
                return fail(format!("complete causality covers {} events, record has {n}", c.n_events()));
            }
            if c.chain_labels() != self.causality.as_slice() {
                warnings.push(format!("{}: causality differs from the last complete causality item", self.video_id));
            }
        }
        if let Some(g) = &self.planted_graph {
            if g.n_events() != n {
                return fail(format!("planted graph covers {} events, record has {n}", g.n_events()));
            }
        }
        Ok(warnings)
    }

    fn from_raw(video_id: String, raw: RawRecord) -> Result<Self> {
        let n = raw.sentences.len();
        let complete_causality = raw
            .complete_causality
            .map(|items| CompleteCausalityList::new(items.into_iter().map(|it| it.into_iter().map(|f| f.0).collect()).collect()))
            .transpose()
            .map_err(|e| Error::record(&video_id, e.to_string()))?;
        let planted_graph = raw
            .planted_graph
            .map(|edges| {
                if edges.iter().any(|&[i, _]| i == 0) {
                    return Err(Error::Schema("planted_graph indices are 1-based".into()));
                }
                CausalGraph::from_edges(n, edges.iter().map(|&[i, j]| (i - 1, j - 1)))
            })
            .transpose()
            .map_err(|e| Error::record(&video_id, e.to_string()))?;
        Ok(Self {
            video_id,
            duration: raw.duration,
            timestamps: raw.timestamps.iter().map(|&[s, e]| (s, e)).collect(),
            sentences: raw.sentences,
            causality: raw.causality.iter().map(|f| f.0).collect(),
            complete_causality,
            planted_graph,
            features_path: raw.features_path,
        })
    }

    fn to_raw(&self) -> RawRecord {
        RawRecord {
            duration: self.duration,
            timestamps: self.timestamps.iter().map(|&(s, e)| [s, e]).collect(),
            sentences: self.sentences.clone(),
            causality: self.causality.iter().map(|&b| Flag(b)).collect(),
            complete_causality: self
                .complete_causality
                .as_ref()
                .map(|c| c.items().iter().map(|it| it.iter().map(|&b| Flag(b)).collect()).collect()),
            planted_graph: self.planted_graph.as_ref().map(CausalGraph::edges_one_based),
            features_path: self.features_path.clone(),
        }
    }
}

/// Records in file order.
struct RecordList(Vec<(String, RawRecord)>);

impl<'de> Deserialize<'de> for RecordList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RecordList;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping video ids to annotation records")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<RecordList, A::Error> {
                let mut out = Vec::new();
                while let Some(key) = map.next_key::<String>()? {
                    let rec = map.next_value::<RawRecord>().map_err(|e| de::Error::custom(format!("record {key:?}: {e}")))?;
                    out.push((key, rec));
                }
                Ok(RecordList(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Parses annotation text. `origin` names the source in error messages.
pub fn parse_annotations(text: &str, origin: &Path) -> Result<(Vec<AnnotationRecord>, Vec<String>)> {
    let list: RecordList =
        serde_json::from_str(text).map_err(|e| Error::Parse { path: origin.to_path_buf(), message: e.to_string() })?;
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::with_capacity(list.0.len());
    let mut warnings = Vec::new();
    for (id, raw) in list.0 {
        if !seen.insert(id.clone()) {
            return Err(Error::record(id, "duplicate video id"));
        }
        let rec = AnnotationRecord::from_raw(id, raw)?;
        warnings.extend(rec.validate()?);
        records.push(rec);
    }
    Ok((records, warnings))
}

/// Reads and validates an annotation or manifest file.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    load_annotations_with_warnings(path).map(|(r, _)| r)
}

pub fn load_annotations_with_warnings(path: &Path) -> Result<(Vec<AnnotationRecord>, Vec<String>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, path)
}

/// Canonical serialization: records in the given order, fixed key order.
pub fn annotations_to_string(records: &[AnnotationRecord]) -> String {
    struct Out<'a>(&'a [AnnotationRecord]);
    impl Serialize for Out<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
            let mut m = s.serialize_map(Some(self.0.len()))?;
            for r in self.0 {
                m.serialize_entry(&r.video_id, &r.to_raw())?;
            }
            m.end()
        }
    }
    let mut text = serde_json::to_string_pretty(&Out(records)).expect("annotation serialization is infallible");
    text.push('\n');
    text
}

pub fn save_annotations(path: &Path, records: &[AnnotationRecord]) -> Result<()> {
    std::fs::write(path, annotations_to_string(records)).map_err(|e| Error::io(path, e))
}
