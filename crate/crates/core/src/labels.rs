//! Image-level verb labels from POS-tagged captions and preposition labels
//! from subject/predicate/object triplets.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fsio;
use crate::vocab::{Vocabulary, PERSON};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pos {
    Noun,
    Verb,
    Other,
}

impl Serialize for Pos {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Pos::Noun => "NOUN",
            Pos::Verb => "VERB",
            Pos::Other => "X",
        })
    }
}

impl<'de> Deserialize<'de> for Pos {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.as_str() {
            "NOUN" => Pos::Noun,
            "VERB" => Pos::Verb,
            _ => Pos::Other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub lemma: String,
    pub pos: Pos,
}

impl TaggedToken {
    pub fn new(surface: &str, lemma: &str, pos: Pos) -> Self {
        TaggedToken {
            surface: surface.into(),
            lemma: lemma.into(),
            pos,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedCaption {
    pub image_id: String,
    pub tokens: Vec<TaggedToken>,
}

impl TaggedCaption {
    fn lemmas(&self, pos: Pos) -> impl Iterator<Item = &str> {
        self.tokens
            .iter()
            .filter(move |t| t.pos == pos)
            .map(|t| t.lemma.as_str())
    }

    /// Verb lemmas, deduplicated in first-seen order.
    pub fn verbs(&self) -> Vec<&str> {
        dedup(self.lemmas(Pos::Verb))
    }

    /// Noun lemmas, deduplicated in first-seen order.
    pub fn nouns(&self) -> Vec<&str> {
        dedup(self.lemmas(Pos::Noun))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.image_id.is_empty() {
            return Err("empty image_id".into());
        }
        for t in &self.tokens {
            if t.lemma.is_empty() || t.lemma.chars().any(char::is_uppercase) {
                return Err(format!("lemma `{}` must be non-empty lowercase", t.lemma));
            }
        }
        Ok(())
    }
}

fn dedup<'a>(it: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = BTreeSet::new();
    it.filter(|s| seen.insert(*s)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triplet {
    pub fn new(subject: &str, predicate: &str, object: &str) -> Self {
        Triplet {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        }
    }
}

impl Serialize for Triplet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        [&self.subject, &self.predicate, &self.object].serialize(s)
    }
}

impl<'de> Deserialize<'de> for Triplet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let [subject, predicate, object] = <[String; 3]>::deserialize(d)?;
        if subject.is_empty() || predicate.is_empty() || object.is_empty() {
            return Err(serde::de::Error::custom("triplet fields must be non-empty"));
        }
        Ok(Triplet {
            subject,
            predicate,
            object,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletRecord {
    pub image_id: String,
    pub triplets: Vec<Triplet>,
}

pub const DEFAULT_PERSON_SYNONYMS: [&str; 14] = [
    "person", "man", "woman", "boy", "girl", "child", "kid", "people", "guy", "lady", "player",
    "rider", "skier", "surfer",
];

/// Lemmas that count as "person".
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynonymList {
    person_synonyms: BTreeSet<String>,
}

impl Default for SynonymList {
    fn default() -> Self {
        Self::new(DEFAULT_PERSON_SYNONYMS).expect("default list contains person")
    }
}

impl SynonymList {
    pub fn new<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let person_synonyms: BTreeSet<String> =
            words.into_iter().map(|w| w.as_ref().to_lowercase()).collect();
        if !person_synonyms.contains(PERSON) {
            return Err(Error::Config("synonym list must contain `person`".into()));
        }
        Ok(SynonymList { person_synonyms })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fsio::read_to_string(path)?;
        let words: Vec<String> = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        Self::new(words)
    }

    pub fn is_person(&self, lemma: &str) -> bool {
        self.person_synonyms.contains(lemma)
    }
}

/// Verb vocabulary indices appearing in the caption, or nothing when no noun
/// refers to a person.
pub fn extract_interaction_labels(
    caption: &TaggedCaption,
    verbs: &Vocabulary,
    syn: &SynonymList,
) -> BTreeSet<usize> {
    if !caption.lemmas(Pos::Noun).any(|n| syn.is_person(n)) {
        return BTreeSet::new();
    }
    caption
        .lemmas(Pos::Verb)
        .filter_map(|v| verbs.get(v))
        .collect()
}

/// Multi-word predicates ("next to") map onto underscore entries ("next_to").
fn predicate_key(p: &str) -> String {
    p.split_whitespace().collect::<Vec<_>>().join("_")
}

/// Unique predicates of triplets whose subject is a person and whose
/// predicate is a known preposition.
pub fn extract_preposition_labels(
    triplets: &[Triplet],
    preps: &Vocabulary,
    syn: &SynonymList,
) -> BTreeSet<usize> {
    triplets
        .iter()
        .filter(|t| syn.is_person(&t.subject))
        .filter_map(|t| preps.get(&predicate_key(&t.predicate)))
        .collect()
}

/// One output line of the `extract-labels` subcommand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageLabels {
    pub image_id: String,
    pub verb_labels: Vec<String>,
    pub prep_labels: Vec<String>,
}

/// Labels per image, unioned across every caption and triplet line sharing
/// an `image_id`. Output follows first appearance of each id.
pub fn extract_corpus(
    captions: &[TaggedCaption],
    triplets: &[TripletRecord],
    verbs: &Vocabulary,
    preps: &Vocabulary,
    syn: &SynonymList,
) -> Vec<ImageLabels> {
    let mut order: Vec<&str> = Vec::new();
    let mut acc: HashMap<&str, (BTreeSet<usize>, BTreeSet<usize>)> = HashMap::new();
    for c in captions {
        let e = acc.entry(&c.image_id).or_insert_with(|| {
            order.push(&c.image_id);
            Default::default()
        });
        e.0.extend(extract_interaction_labels(c, verbs, syn));
    }
    for t in triplets {
        let e = acc.entry(&t.image_id).or_insert_with(|| {
            order.push(&t.image_id);
            Default::default()
        });
        e.1.extend(extract_preposition_labels(&t.triplets, preps, syn));
    }
    order
        .into_iter()
        .map(|id| {
            let (v, p) = &acc[id];
            ImageLabels {
                image_id: id.to_string(),
                verb_labels: v.iter().map(|&i| verbs.name(i).to_string()).collect(),
                prep_labels: p.iter().map(|&i| preps.name(i).to_string()).collect(),
            }
        })
        .collect()
}

pub fn load_captions(path: &Path) -> Result<Vec<TaggedCaption>> {
    fsio::read_jsonl::<TaggedCaption>(path)?
        .into_iter()
        .map(|(line, c)| {
            c.validate().map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            })?;
            Ok(c)
        })
        .collect()
}

pub fn load_triplets(path: &Path) -> Result<Vec<TripletRecord>> {
    Ok(fsio::read_jsonl::<TripletRecord>(path)?
        .into_iter()
        .map(|(_, t)| t)
        .collect())
}

pub fn load_labels(path: &Path) -> Result<Vec<ImageLabels>> {
    Ok(fsio::read_jsonl::<ImageLabels>(path)?
        .into_iter()
        .map(|(_, t)| t)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{default_prepositions, Role};

    fn tok(lemma: &str, pos: Pos) -> TaggedToken {
        TaggedToken::new(lemma, lemma, pos)
    }

    fn caption(tokens: Vec<TaggedToken>) -> TaggedCaption {
        TaggedCaption {
            image_id: "i".into(),
            tokens,
        }
    }

    fn verbs() -> Vocabulary {
        Vocabulary::new(Role::Verb, ["ride", "eat"]).unwrap()
    }

    #[test]
    fn person_riding_horse() {
        let c = caption(vec![
            tok("person", Pos::Noun),
            TaggedToken::new("riding", "ride", Pos::Verb),
            tok("horse", Pos::Noun),
        ]);
        let got = extract_interaction_labels(&c, &verbs(), &SynonymList::default());
        assert_eq!(got, BTreeSet::from([0]));
    }

    #[test]
    fn person_gate() {
        let c = caption(vec![tok("dog", Pos::Noun), tok("ride", Pos::Verb)]);
        assert!(extract_interaction_labels(&c, &verbs(), &SynonymList::default()).is_empty());
        // "person" tagged as a verb does not open the gate
        let c = caption(vec![tok("person", Pos::Verb), tok("ride", Pos::Verb)]);
        assert!(extract_interaction_labels(&c, &verbs(), &SynonymList::default()).is_empty());
    }

    #[test]
    fn synonym_and_intersection() {
        let c = caption(vec![
            tok("woman", Pos::Noun),
            tok("eat", Pos::Verb),
            tok("ride", Pos::Verb),
            tok("sing", Pos::Verb),
            tok("eat", Pos::Verb),
        ]);
        let got = extract_interaction_labels(&c, &verbs(), &SynonymList::default());
        assert_eq!(got, BTreeSet::from([0, 1]));
    }

    #[test]
    fn preposition_filters() {
        let preps = default_prepositions();
        let syn = SynonymList::default();
        let on = preps.get("on").unwrap();
        let t = [Triplet::new("person", "on", "horse"), Triplet::new("dog", "under", "table")];
        assert_eq!(extract_preposition_labels(&t, &preps, &syn), BTreeSet::from([on]));
        let t = [Triplet::new("man", "behind", "fence")];
        assert_eq!(
            extract_preposition_labels(&t, &preps, &syn),
            BTreeSet::from([preps.get("behind").unwrap()])
        );
        assert!(extract_preposition_labels(&[], &preps, &syn).is_empty());
        let t = [Triplet::new("person", "next to", "car"), Triplet::new("person", "ride", "car")];
        assert_eq!(
            extract_preposition_labels(&t, &preps, &syn),
            BTreeSet::from([preps.get("next_to").unwrap()])
        );
    }

    #[test]
    fn synonyms_require_person() {
        assert!(SynonymList::new(["man"]).is_err());
        let s = SynonymList::new(["Person", "Cyclist"]).unwrap();
        assert!(s.is_person("cyclist"));
    }

    #[test]
    fn corpus_unions_captions_per_image() {
        let preps = default_prepositions();
        let syn = SynonymList::default();
        let caps = vec![
            TaggedCaption { image_id: "a".into(), tokens: vec![tok("man", Pos::Noun), tok("ride", Pos::Verb)] },
            TaggedCaption { image_id: "b".into(), tokens: vec![tok("cat", Pos::Noun), tok("eat", Pos::Verb)] },
            TaggedCaption { image_id: "a".into(), tokens: vec![tok("boy", Pos::Noun), tok("eat", Pos::Verb)] },
        ];
        let trips = vec![TripletRecord { image_id: "c".into(), triplets: vec![Triplet::new("person", "on", "bench")] }];
        let out = extract_corpus(&caps, &trips, &verbs(), &preps, &syn);
        let ids: Vec<_> = out.iter().map(|l| l.image_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(out[0].verb_labels, ["ride", "eat"]);
        assert!(out[1].verb_labels.is_empty());
        assert_eq!(out[2].prep_labels, ["on"]);
    }

    #[test]
    fn triplet_wire_format() {
        let r: TripletRecord =
            serde_json::from_str(r#"{"image_id":"x","triplets":[["man","on","horse"]]}"#).unwrap();
        assert_eq!(r.triplets[0], Triplet::new("man", "on", "horse"));
        assert!(serde_json::from_str::<TripletRecord>(r#"{"image_id":"x","triplets":[["","on","horse"]]}"#).is_err());
        let tok: TaggedToken = serde_json::from_str(r#"{"surface":"a","lemma":"a","pos":"DET"}"#).unwrap();
        assert_eq!(tok.pos, Pos::Other);
    }

    use proptest::strategy::Strategy;

    proptest::proptest! {
        #[test]
        fn order_and_duplication_invariant(
            perm in proptest::strategy::Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
            dup in 1usize..4,
        ) {
            let base = [tok("girl", Pos::Noun), tok("eat", Pos::Verb), tok("ride", Pos::Verb), tok("run", Pos::Verb), tok("cake", Pos::Noun), tok("the", Pos::Other)];
            let shuffled: Vec<_> = perm.iter().map(|&i| base[i].clone()).collect();
            let a = extract_interaction_labels(&caption(base.to_vec()), &verbs(), &SynonymList::default());
            let b = extract_interaction_labels(&caption(shuffled), &verbs(), &SynonymList::default());
            proptest::prop_assert_eq!(&a, &b);
            proptest::prop_assert!(a.iter().all(|&i| i < 2));

            let preps = default_prepositions();
            let t = vec![Triplet::new("person", "on", "x"), Triplet::new("kid", "with", "y"), Triplet::new("cat", "in", "z")];
            let many: Vec<_> = t.iter().cycle().take(t.len() * dup).cloned().collect();
            proptest::prop_assert_eq!(
                extract_preposition_labels(&t, &preps, &SynonymList::default()),
                extract_preposition_labels(&many, &preps, &SynonymList::default())
            );
        }
    }
}
