use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::domain::Label;
use crate::eval::metrics::LabeledPrediction;
use crate::eval::EvalError;

/// One row of `sample_id,image_path,label[,sub_label]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub sample_id: String,
    pub image_path: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_label: Option<String>,
}

impl ManifestRecord {
    pub fn new(sample_id: impl Into<String>, image_path: impl Into<String>, label: impl Into<Label>) -> Self {
        ManifestRecord {
            sample_id: sample_id.into(),
            image_path: image_path.into(),
            label: label.into(),
            sub_label: None,
        }
    }

    pub fn with_sub_label(mut self, sub: impl Into<String>) -> Self {
        self.sub_label = Some(sub.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>) -> Self {
        Manifest { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted distinct labels.
    pub fn label_space(&self) -> Vec<Label> {
        let mut v: Vec<Label> = self.records.iter().map(|r| r.label.clone()).collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn class_counts(&self) -> BTreeMap<Label, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.label.clone()).or_insert(0) += 1;
        }
        m
    }

    pub fn from_reader<R: Read>(input: R) -> Result<Self, EvalError> {
        let mut rdr = csv::ReaderBuilder::new()
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        let want = ["sample_id", "image_path", "label"];
        if headers.len() < 3 || headers.iter().take(3).ne(want) {
            return Err(EvalError::Malformed(format!(
                "manifest header must start with sample_id,image_path,label; got {:?}",
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if row.len() < 3 || row.len() > 4 {
                return Err(EvalError::Malformed(format!("line {line}: expected 3 or 4 fields")));
            }
            let sub = row.get(3).filter(|s| !s.is_empty()).map(str::to_owned);
            let rec = ManifestRecord {
                sample_id: row[0].to_owned(),
                image_path: row[1].to_owned(),
                label: Label::new(&row[2]),
                sub_label: sub,
            };
            if rec.sample_id.is_empty() {
                return Err(EvalError::Malformed(format!("line {line}: empty sample_id")));
            }
            if !ids.insert(rec.sample_id.clone()) {
                return Err(EvalError::Malformed(format!(
                    "line {line}: duplicate sample_id {}",
                    rec.sample_id
                )));
            }
            records.push(rec);
        }
        Ok(Manifest { records })
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn to_writer<W: Write>(&self, out: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(out);
        let with_sub = self.records.iter().any(|r| r.sub_label.is_some());
        if with_sub {
            w.write_record(["sample_id", "image_path", "label", "sub_label"])?;
        } else {
            w.write_record(["sample_id", "image_path", "label"])?;
        }
        for r in &self.records {
            if with_sub {
                let sub = r.sub_label.as_deref().unwrap_or("");
                w.write_record([&r.sample_id, &r.image_path, r.label.as_str(), sub])?;
            } else {
                w.write_record([&r.sample_id, &r.image_path, r.label.as_str()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        self.to_writer(std::fs::File::create(path)?)
    }
}

/// Reads `sample_id,predicted_label` rows.
pub fn read_predictions<R: Read>(input: R) -> Result<Vec<(String, Label)>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(["sample_id", "predicted_label"]) {
        return Err(EvalError::Malformed(format!(
            "predictions header must be sample_id,predicted_label; got {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for row in rdr.records() {
        let row = row?;
        if !ids.insert(row[0].to_owned()) {
            return Err(EvalError::Malformed(format!("duplicate prediction for {}", &row[0])));
        }
        out.push((row[0].to_owned(), Label::new(&row[1])));
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<(String, Label)>, EvalError> {
    read_predictions(std::fs::File::open(path)?)
}

pub fn write_predictions<W: Write>(out: W, preds: &[(String, Label)]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sample_id", "predicted_label"])?;
    for (id, l) in preds {
        w.write_record([id.as_str(), l.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs every manifest record with its prediction, in manifest order.
pub fn join_predictions(
    gold: &Manifest,
    preds: &[(String, Label)],
) -> Result<Vec<LabeledPrediction>, EvalError> {
    let by_id: HashMap<&str, &Label> = preds.iter().map(|(i, l)| (i.as_str(), l)).collect();
    let known: HashSet<&str> = gold.records.iter().map(|r| r.sample_id.as_str()).collect();
    if let Some((stray, _)) = preds.iter().find(|(i, _)| !known.contains(i.as_str())) {
        return Err(EvalError::UnknownSample(stray.clone()));
    }
    gold.records
        .iter()
        .map(|r| {
            let p = by_id
                .get(r.sample_id.as_str())
                .ok_or_else(|| EvalError::MissingPrediction(r.sample_id.clone()))?;
            Ok(LabeledPrediction {
                sample_id: r.sample_id.clone(),
                gold: r.label.clone(),
                predicted: (*p).clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    #[default]
    Exact,
    Substring,
}

/// Case-insensitive sub-label matcher mapping to a merged class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapRule {
    pub pattern: String,
    pub target: Label,
    #[serde(default, rename = "match")]
    pub kind: MatchKind,
}

impl RemapRule {
    pub fn exact(pattern: impl Into<String>, target: impl Into<Label>) -> Self {
        RemapRule {
            pattern: pattern.into(),
            target: target.into(),
            kind: MatchKind::Exact,
        }
    }

    pub fn substring(pattern: impl Into<String>, target: impl Into<Label>) -> Self {
        RemapRule {
            pattern: pattern.into(),
            target: target.into(),
            kind: MatchKind::Substring,
        }
    }

    pub fn matches(&self, source: &str) -> bool {
        let s = source.to_lowercase();
        let p = self.pattern.to_lowercase();
        match self.kind {
            MatchKind::Exact => s == p,
            MatchKind::Substring => s.contains(&p),
        }
    }
}

pub fn load_rules(path: &Path) -> Result<Vec<RemapRule>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| EvalError::Malformed(format!("remap rules: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemapOutcome {
    pub manifest: Manifest,
    pub counts: BTreeMap<Label, usize>,
    pub dropped: usize,
}

/// Applies the first matching rule to each record's sub-label (or its label
/// when no sub-label is present).
pub fn remap_labels(manifest: &Manifest, rules: &[RemapRule], drop_unmatched: bool) -> RemapOutcome {
    let mut records = Vec::with_capacity(manifest.len());
    let mut dropped = 0;
    for r in &manifest.records {
        let source = r.sub_label.as_deref().unwrap_or(r.label.as_str());
        match rules.iter().find(|rule| rule.matches(source)) {
            Some(rule) => {
                let mut out = r.clone();
                out.sub_label = Some(source.to_owned());
                out.label = rule.target.clone();
                records.push(out);
            }
            None if drop_unmatched => dropped += 1,
            None => records.push(r.clone()),
        }
    }
    let manifest = Manifest { records };
    RemapOutcome {
        counts: manifest.class_counts(),
        manifest,
        dropped,
    }
}

/// Number of training samples for a group of size `n`.
pub fn train_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Seeded shuffle split. Stratified mode takes `floor(ratio * N_i)` of each
/// class; both halves keep the input order.
pub fn split(
    manifest: &Manifest,
    train_ratio: f64,
    seed: u64,
    stratified: bool,
) -> Result<(Manifest, Manifest), EvalError> {
    if manifest.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(EvalError::InvalidRatio(train_ratio));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut in_train = vec![false; manifest.len()];
    let groups: Vec<Vec<usize>> = if stratified {
        let mut by_class: BTreeMap<&Label, Vec<usize>> = BTreeMap::new();
        for (i, r) in manifest.records.iter().enumerate() {
            by_class.entry(&r.label).or_default().push(i);
        }
        by_class.into_values().collect()
    } else {
        vec![(0..manifest.len()).collect()]
    };
    for mut g in groups {
        let take = train_count(g.len(), train_ratio);
        g.shuffle(&mut rng);
        for &i in &g[..take] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in manifest.records.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    Ok((Manifest::new(train), Manifest::new(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip() {
        let m = Manifest::new(vec![
            ManifestRecord::new("s1", "img/a.png", "Psoriasis").with_sub_label("plaque psoriasis"),
            ManifestRecord::new("s2", "img/b, quoted.png", "Eczema"),
        ]);
        let mut buf = Vec::new();
        m.to_writer(&mut buf).unwrap();
        assert_eq!(Manifest::from_reader(&buf[..]).unwrap(), m);
    }

    #[test]
    fn manifest_rejects_bad_header_and_duplicates() {
        assert!(Manifest::from_reader(&b"id,path,label\n"[..]).is_err());
        let dup = b"sample_id,image_path,label\ns1,a,x\ns1,b,y\n";
        assert!(matches!(Manifest::from_reader(&dup[..]), Err(EvalError::Malformed(_))));
    }

    #[test]
    fn predictions_join() {
        let gold = Manifest::new(vec![
            ManifestRecord::new("s1", "a", "x"),
            ManifestRecord::new("s2", "b", "y"),
        ]);
        let preds = read_predictions(&b"sample_id,predicted_label\ns2,x\ns1,x\n"[..]).unwrap();
        let joined = join_predictions(&gold, &preds).unwrap();
        assert_eq!(joined[0], LabeledPrediction::new("s1", "x", "x"));
        assert_eq!(joined[1], LabeledPrediction::new("s2", "y", "x"));
        assert!(matches!(
            join_predictions(&gold, &preds[..1]),
            Err(EvalError::MissingPrediction(id)) if id == "s1"
        ));
    }

    #[test]
    fn contact_dermatitis_merge() {
        let m = Manifest::new(vec![
            ManifestRecord::new("1", "a", "x").with_sub_label("contact-dermatitis-allergic"),
            ManifestRecord::new("2", "b", "x").with_sub_label("Contact-Dermatitis-Irritant"),
        ]);
        let rules = [RemapRule::substring("contact-dermatitis", "Contact Dermatitis")];
        let out = remap_labels(&m, &rules, true);
        assert_eq!(out.counts.len(), 1);
        assert_eq!(out.counts[&Label::new("Contact Dermatitis")], 2);
        assert_eq!(out.dropped, 0);
    }

    #[test]
    fn remap_identity_and_precedence() {
        let m = Manifest::new(vec![ManifestRecord::new("1", "a", "x").with_sub_label("acne vulgaris")]);
        assert_eq!(remap_labels(&m, &[], false).manifest, m);
        assert_eq!(remap_labels(&m, &[], true).dropped, 1);
        let rules = [RemapRule::substring("acne", "First"), RemapRule::exact("acne vulgaris", "Second")];
        assert_eq!(remap_labels(&m, &rules, true).manifest.records[0].label.as_str(), "First");
    }

    #[test]
    fn rules_json_shape() {
        let rules: Vec<RemapRule> = serde_json::from_str(
            r#"[{"pattern":"tinea","target":"Tinea","match":"substring"},{"pattern":"x","target":"X"}]"#,
        )
        .unwrap();
        assert_eq!(rules[0].kind, MatchKind::Substring);
        assert_eq!(rules[1].kind, MatchKind::Exact);
    }

    #[test]
    fn stratified_floor_counts() {
        let counts = [115, 110, 81, 73, 59, 58, 46, 22];
        let mut recs = Vec::new();
        for (c, n) in counts.iter().enumerate() {
            for i in 0..*n {
                recs.push(ManifestRecord::new(format!("c{c}-{i}"), "p", format!("class{c}")));
            }
        }
        let m = Manifest::new(recs);
        let (train, test) = split(&m, 1.0 / 3.0, 7, true).unwrap();
        let got: Vec<usize> = (0..8)
            .map(|c| train.class_counts()[&Label::new(format!("class{c}"))])
            .collect();
        assert_eq!(got, vec![38, 36, 27, 24, 19, 19, 15, 7]);
        assert_eq!(train.len(), 185);
        assert_eq!(test.len(), 379);
    }

    #[test]
    fn split_errors_and_determinism() {
        assert!(matches!(split(&Manifest::default(), 0.5, 1, false), Err(EvalError::EmptyManifest)));
        let m = Manifest::new((0..10).map(|i| ManifestRecord::new(i.to_string(), "p", "a")).collect());
        assert!(matches!(split(&m, 1.0, 1, false), Err(EvalError::InvalidRatio(_))));
        assert_eq!(split(&m, 0.5, 3, false).unwrap(), split(&m, 0.5, 3, false).unwrap());
        assert_eq!(split(&m, 0.8, 3, false).unwrap().0.len(), 8);
    }
}
