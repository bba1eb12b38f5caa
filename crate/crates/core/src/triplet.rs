//! Subject-predicate-object extraction from captions.
//!
//! [`parse_caption`] is a small deterministic chunker: determiner/adjective/
//! noun runs become noun phrases, verb/preposition runs between them become
//! predicates. Output of an external scene-graph parser can be supplied
//! instead through [`TripletStore::load`].

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{normalize_text, tokenize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: String,
    pub predicate: String,
    pub object: Option<String>,
}

impl Triplet {
    /// Normalizes every field; `None` when subject or predicate ends up empty.
    pub fn new(subject: &str, predicate: &str, object: Option<&str>) -> Option<Self> {
        let subject = normalize_text(subject);
        let predicate = normalize_text(predicate);
        let object = object.map(normalize_text).filter(|o| !o.is_empty());
        if subject.is_empty() || predicate.is_empty() {
            return None;
        }
        Some(Self {
            subject,
            predicate,
            object,
        })
    }
}

/// Scene graph of one caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextGraph {
    pub source_caption: String,
    pub triplets: Vec<Triplet>,
    /// Subjects, objects and predicate-less noun phrases in first-occurrence
    /// order, deduplicated.
    pub nodes: Vec<String>,
}

impl TextGraph {
    /// Graph from explicit triplets plus nodes that take part in none.
    pub fn from_parts(source_caption: &str, triplets: Vec<Triplet>, singletons: Vec<String>) -> Self {
        let mut nodes: Vec<String> = Vec::new();
        let mut push = |n: &str| {
            if !n.is_empty() && !nodes.iter().any(|x| x == n) {
                nodes.push(n.to_owned());
            }
        };
        for t in &triplets {
            push(&t.subject);
            if let Some(o) = &t.object {
                push(o);
            }
        }
        for s in &singletons {
            push(&normalize_text(s));
        }
        Self {
            source_caption: source_caption.to_owned(),
            triplets,
            nodes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRole {
    Subject,
    Object,
}

/// Candidate concept: a graph node tagged with the retrieved caption it
/// came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptNode {
    pub text: String,
    pub origin_graph: usize,
    pub role: NodeRole,
}

// ---------------------------------------------------------------------------
// lexicon

const DETERMINERS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "another",
    "his", "her", "its", "their", "our", "my", "your", "one", "two", "three", "four", "five", "six",
    "seven", "eight", "nine", "ten", "several", "many", "few", "both", "all", "no", "other",
    "various", "multiple", "lots", "lot", "couple", "group", "pair", "bunch", "number",
];

/// Quantity nouns that head a partitive ("a group of people") and are
/// dropped together with the following "of".
const PARTITIVES: &[&str] = &["lots", "lot", "couple", "group", "pair", "bunch", "number"];

const PREPOSITIONS: &[&str] = &[
    "on", "in", "at", "with", "by", "under", "over", "near", "behind", "beside", "between", "into",
    "onto", "from", "of", "for", "to", "through", "across", "along", "around", "above", "below",
    "inside", "outside", "against", "toward", "towards", "beneath", "atop", "next", "up", "down",
    "out", "off", "during", "like", "about", "among", "past", "upon", "within", "without",
];

const AUXILIARIES: &[&str] = &[
    "is", "are", "was", "were", "be", "been", "being", "am", "has", "have", "had", "does", "do",
    "did", "can", "could", "will", "would", "may", "might", "should", "gets", "get",
];

const CONJUNCTIONS: &[&str] = &["and", "or", "but", "while", "as", "then", "so", "yet", "nor"];

const PRONOUNS: &[&str] = &[
    "it", "he", "she", "they", "them", "him", "we", "i", "you", "who", "which", "what", "where",
    "there", "here", "itself", "themselves", "someone", "something", "very", "not", "too", "also",
    "just", "only", "still", "together", "other's", "each other", "while", "when",
];

const ADJECTIVES: &[&str] = &[
    "red", "blue", "green", "yellow", "white", "black", "brown", "gray", "grey", "orange", "pink",
    "purple", "golden", "silver", "dark", "light", "bright", "big", "large", "small", "little",
    "tiny", "huge", "giant", "tall", "short", "long", "old", "young", "new", "wooden", "metal",
    "plastic", "empty", "full", "open", "closed", "wet", "dry", "hot", "cold", "busy", "clean",
    "dirty", "beautiful", "pretty", "cute", "happy", "sad", "stuffed", "snowy", "sunny", "cloudy",
    "grassy", "sandy", "rocky", "colorful", "striped", "spotted", "fresh", "ripe", "baby", "adult",
    "other", "same", "different", "front", "back", "top", "bottom", "left", "right", "middle",
    "several", "various", "modern", "ancient", "wild", "domestic", "electric", "double", "single",
    "crowded", "parked", "framed", "sliced", "decorated", "covered", "filled", "lit", "blurry",
];

/// Base forms; third-person "-s", "-ing" and "-ed" forms are recognized by
/// suffix stripping.
const VERBS: &[&str] = &[
    "sit", "stand", "lie", "lay", "ride", "hold", "eat", "drink", "play", "walk", "run", "fly",
    "look", "watch", "wear", "carry", "throw", "catch", "hit", "swing", "jump", "swim", "surf",
    "ski", "skate", "skateboard", "park", "drive", "pull", "push", "cut", "cook", "sleep", "rest",
    "hang", "lean", "graze", "climb", "talk", "smile", "pose", "wait", "cross", "fill", "cover",
    "feature", "show", "display", "contain", "face", "kick", "chase", "float", "sail", "land",
    "take", "make", "use", "read", "write", "work", "prepare", "serve", "place", "put", "set",
    "fly", "go", "come", "move", "travel", "hover", "perch", "roam", "gather", "hug", "kiss",
    "feed", "pet", "shake", "paint", "photograph", "depict", "stare", "glance", "point", "reach",
    "grab", "dress", "decorate", "crowd", "line", "top", "surround", "overlook", "border", "enjoy",
    "share", "cuddle", "lick", "bite", "brush", "wash", "tie", "build", "fix", "sell", "buy",
    "wander", "stroll", "dance", "sing", "laugh", "cry", "fall", "roll", "bounce", "kneel",
    "crouch", "squat", "drag", "load", "unload", "tow", "board", "exit", "enter", "leave",
    "approach", "follow", "lead", "pass", "attach", "stack", "pile", "arrange", "slice", "mount",
    "sits", "stands", "lies", "lying", "sitting", "standing", "running", "riding", "holding",
    "sat", "stood", "rode", "held", "ate", "ran", "flew", "wore", "threw", "caught", "swam",
    "drove", "took", "made", "went", "came", "fell", "led", "hung", "shown", "worn", "eaten",
    "ridden", "taken", "seen", "see", "sees", "seeing", "being", "has", "have",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Det,
    Adj,
    Noun,
    Verb,
    Aux,
    Prep,
    Conj,
    Other,
}

fn in_list(list: &[&str], w: &str) -> bool {
    list.contains(&w)
}

fn is_verb_form(w: &str) -> bool {
    if in_list(VERBS, w) {
        return true;
    }
    if let Some(stem) = w.strip_suffix("ies") {
        if in_list(VERBS, &format!("{stem}y")) {
            return true;
        }
    }
    for suffix in ["es", "s", "ing", "ed", "d"] {
        let Some(stem) = w.strip_suffix(suffix) else {
            continue;
        };
        if stem.len() < 2 {
            continue;
        }
        if in_list(VERBS, stem) || in_list(VERBS, &format!("{stem}e")) {
            return true;
        }
        // doubled consonant: "sitting" -> "sitt" -> "sit"
        let b = stem.as_bytes();
        if b.len() >= 3 && b[b.len() - 1] == b[b.len() - 2] && in_list(VERBS, &stem[..stem.len() - 1]) {
            return true;
        }
    }
    false
}

fn is_adjective(w: &str) -> bool {
    in_list(ADJECTIVES, w)
        || ["ful", "ous", "ive", "less", "ish", "ic", "al"]
            .iter()
            .any(|s| w.len() > s.len() + 3 && w.ends_with(s))
}

fn tag_tokens(tokens: &[String]) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(tokens.len());
    for (i, w) in tokens.iter().enumerate() {
        let w = w.as_str();
        let prev = if i == 0 { None } else { Some(tags[i - 1]) };
        let after_modifier = matches!(prev, Some(Tag::Det) | Some(Tag::Adj));
        let partitive = in_list(PARTITIVES, w);
        let before_of = tokens.get(i + 1).is_some_and(|n| n == "of");
        let tag = if in_list(DETERMINERS, w) && (!partitive || before_of) {
            Tag::Det
        } else if in_list(CONJUNCTIONS, w) {
            Tag::Conj
        } else if in_list(AUXILIARIES, w) && !after_modifier {
            Tag::Aux
        } else if in_list(PREPOSITIONS, w) {
            Tag::Prep
        } else if in_list(PRONOUNS, w) || w.chars().all(|c| c.is_ascii_digit()) {
            Tag::Other
        } else if in_list(ADJECTIVES, w) {
            Tag::Adj
        } else if is_verb_form(w) && !after_modifier {
            Tag::Verb
        } else if w.len() > 4 && w.ends_with("ly") {
            Tag::Other
        } else if is_adjective(w) && !after_modifier {
            Tag::Adj
        } else {
            Tag::Noun
        };
        tags.push(tag);
    }
    // A modifier run that never reaches a noun ends in a noun ("a white").
    for i in 0..tags.len() {
        if tags[i] == Tag::Adj
            && tags.get(i + 1).is_none_or(|t| !matches!(t, Tag::Adj | Tag::Noun))
            && i > 0
            && tags[i - 1] == Tag::Det
        {
            tags[i] = Tag::Noun;
        }
    }
    tags
}

#[derive(Debug, Clone)]
enum Chunk {
    Phrase { text: String, start: usize },
    Predicate(Vec<String>),
    Conj,
    Break,
}

fn chunk(tokens: &[String], tags: &[Tag]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match tags[i] {
            Tag::Det | Tag::Adj | Tag::Noun => {
                let start = i;
                let mut words: Vec<&str> = Vec::new();
                let mut has_noun = false;
                while i < tokens.len() && matches!(tags[i], Tag::Det | Tag::Adj | Tag::Noun) {
                    if has_noun && tags[i] != Tag::Noun {
                        break;
                    }
                    match tags[i] {
                        Tag::Det => {}
                        Tag::Noun => {
                            has_noun = true;
                            words.push(&tokens[i]);
                        }
                        _ => words.push(&tokens[i]),
                    }
                    i += 1;
                }
                // partitive: "a group of people" keeps only "people"
                if !has_noun && i < tokens.len() && tokens[i] == "of" {
                    let prev_partitive = (start..i).any(|j| in_list(PARTITIVES, &tokens[j]));
                    if prev_partitive {
                        i += 1;
                        continue;
                    }
                }
                if has_noun {
                    chunks.push(Chunk::Phrase {
                        text: words.join(" "),
                        start,
                    });
                } else {
                    chunks.push(Chunk::Break);
                }
            }
            Tag::Verb | Tag::Aux | Tag::Prep => {
                let mut words: Vec<(Tag, &str)> = Vec::new();
                while i < tokens.len() && matches!(tags[i], Tag::Verb | Tag::Aux | Tag::Prep | Tag::Other) {
                    if tags[i] != Tag::Other {
                        words.push((tags[i], &tokens[i]));
                    }
                    i += 1;
                }
                let has_verb = words.iter().any(|(t, _)| *t == Tag::Verb);
                let predicate: Vec<String> = words
                    .iter()
                    .filter(|(t, _)| !(has_verb && *t == Tag::Aux))
                    .map(|(_, w)| (*w).to_owned())
                    .collect();
                if predicate.is_empty() {
                    chunks.push(Chunk::Break);
                } else {
                    chunks.push(Chunk::Predicate(predicate));
                }
            }
            Tag::Conj => {
                chunks.push(Chunk::Conj);
                i += 1;
            }
            Tag::Other => {
                i += 1;
            }
        }
    }
    chunks
}

/// Parses one caption into a scene graph. Pure and deterministic.
///
/// Coordinated noun phrases ("a dog and a cat on a sofa") share the
/// predicate that follows them; an object becomes the subject of the next
/// predicate ("a man riding a horse on a beach" yields two triplets).
pub fn parse_caption(caption: &str) -> TextGraph {
    let tokens = tokenize(caption);
    let tags = tag_tokens(&tokens);
    let chunks = chunk(&tokens, &tags);

    let mut phrases: Vec<(usize, String)> = Vec::new();
    let mut triplets: Vec<Triplet> = Vec::new();
    let mut subjects: Vec<String> = Vec::new();
    let mut joining = false;
    let mut i = 0;
    while i < chunks.len() {
        match &chunks[i] {
            Chunk::Phrase { text, start } => {
                phrases.push((*start, text.clone()));
                if joining {
                    subjects.push(text.clone());
                } else {
                    subjects = vec![text.clone()];
                }
                joining = false;
            }
            Chunk::Conj => {
                joining = !subjects.is_empty();
            }
            Chunk::Break => {
                joining = false;
            }
            Chunk::Predicate(words) => {
                joining = false;
                let predicate = words.join(" ");
                // object group: phrase (conj phrase)*
                let mut objects: Vec<(usize, String)> = Vec::new();
                let mut j = i + 1;
                while let Some(Chunk::Phrase { text, start }) = chunks.get(j) {
                    objects.push((*start, text.clone()));
                    if matches!(chunks.get(j + 1), Some(Chunk::Conj))
                        && matches!(chunks.get(j + 2), Some(Chunk::Phrase { .. }))
                    {
                        j += 2;
                    } else {
                        j += 1;
                        break;
                    }
                }
                for s in &subjects {
                    if objects.is_empty() {
                        triplets.extend(Triplet::new(s, &predicate, None));
                    }
                    for (_, o) in &objects {
                        triplets.extend(Triplet::new(s, &predicate, Some(o)));
                    }
                }
                if !objects.is_empty() {
                    phrases.extend(objects.iter().cloned());
                    subjects = objects.into_iter().map(|(_, o)| o).collect();
                    i = j;
                    continue;
                }
                subjects.clear();
            }
        }
        i += 1;
    }

    phrases.sort_by_key(|(start, _)| *start);
    let mut nodes: Vec<String> = Vec::new();
    for (_, p) in phrases {
        if !nodes.contains(&p) {
            nodes.push(p);
        }
    }
    TextGraph {
        source_caption: caption.to_owned(),
        triplets,
        nodes,
    }
}

/// Flattens graphs into candidate concepts, keeping duplicates.
pub fn collect_nodes(graphs: &[TextGraph]) -> Vec<ConceptNode> {
    graphs
        .iter()
        .enumerate()
        .flat_map(|(origin_graph, g)| {
            g.nodes.iter().map(move |n| {
                let role = g
                    .triplets
                    .iter()
                    .find_map(|t| {
                        if &t.subject == n {
                            Some(NodeRole::Subject)
                        } else if t.object.as_ref() == Some(n) {
                            Some(NodeRole::Object)
                        } else {
                            None
                        }
                    })
                    .unwrap_or(NodeRole::Subject);
                ConceptNode {
                    text: n.clone(),
                    origin_graph,
                    role,
                }
            })
        })
        .collect()
}

/// Key used to look captions up in a [`TripletStore`].
fn caption_key(caption: &str) -> String {
    normalize_text(caption)
}

#[derive(Debug, Error)]
pub enum TripletFileError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Deserialize)]
struct TripletLine {
    caption: String,
    triplets: Vec<(Option<String>, Option<String>, Option<String>)>,
}

/// Precomputed scene graphs keyed by caption text.
#[derive(Debug, Clone, Default)]
pub struct TripletStore {
    graphs: HashMap<String, TextGraph>,
    warnings: Vec<String>,
}

impl TripletStore {
    /// Reads the JSON-lines triplet file.
    ///
    /// Each line is `{"caption": ..., "triplets": [[subject, predicate, object], ...]}`;
    /// the object may be null, and an entry with a null predicate is a bare
    /// node. In lenient mode malformed lines are skipped with a warning; in
    /// strict mode the first one aborts. A repeated caption replaces the
    /// earlier line.
    pub fn load(path: impl AsRef<Path>, strict: bool) -> Result<Self, TripletFileError> {
        let reader = BufReader::new(File::open(path)?);
        let mut store = Self::default();
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match Self::parse_line(&line) {
                Ok(graph) => {
                    let key = caption_key(&graph.source_caption);
                    if store.graphs.insert(key, graph).is_some() {
                        store.warn(format!("line {line_no}: duplicate caption, keeping the later line"));
                    }
                }
                Err(message) if strict => {
                    return Err(TripletFileError::Malformed { line: line_no, message });
                }
                Err(message) => store.warn(format!("line {line_no}: skipped: {message}")),
            }
        }
        Ok(store)
    }

    fn parse_line(line: &str) -> Result<TextGraph, String> {
        let parsed: TripletLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if parsed.caption.trim().is_empty() {
            return Err("empty caption".into());
        }
        let mut triplets = Vec::new();
        let mut singletons = Vec::new();
        for (k, (s, p, o)) in parsed.triplets.into_iter().enumerate() {
            let s = s.map(|s| normalize_text(&s)).unwrap_or_default();
            if s.is_empty() {
                return Err(format!("triplet {k} has no subject"));
            }
            match p.map(|p| normalize_text(&p)).filter(|p| !p.is_empty()) {
                Some(p) => triplets.extend(Triplet::new(&s, &p, o.as_deref())),
                None => {
                    singletons.push(s);
                    singletons.extend(o.map(|o| normalize_text(&o)).filter(|o| !o.is_empty()));
                }
            }
        }
        Ok(TextGraph::from_parts(&parsed.caption, triplets, singletons))
    }

    fn warn(&mut self, message: String) {
        log::warn!("{message}");
        self.warnings.push(message);
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn get(&self, caption: &str) -> Option<&TextGraph> {
        self.graphs.get(&caption_key(caption))
    }

    /// Stored graph for `caption`, or the rule-based parse when absent.
    pub fn graph_for(&self, caption: &str) -> TextGraph {
        match self.get(caption) {
            Some(g) => g.clone(),
            None => parse_caption(caption),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn t(s: &str, p: &str, o: Option<&str>) -> Triplet {
        Triplet::new(s, p, o).unwrap()
    }

    #[test]
    fn teddy_bear_on_red_chair() {
        let g = parse_caption("a teddy bear sits on a red chair");
        assert_eq!(g.triplets, vec![t("teddy bear", "sits on", Some("red chair"))]);
        assert_eq!(g.nodes, vec!["teddy bear", "red chair"]);
    }

    #[test]
    fn bare_noun_has_no_triplets() {
        let g = parse_caption("dogs");
        assert_eq!(g.nodes, vec!["dogs"]);
        assert!(g.triplets.is_empty());
    }

    #[test]
    fn whitespace_caption_is_empty() {
        let g = parse_caption("   \n ");
        assert!(g.nodes.is_empty() && g.triplets.is_empty());
    }

    #[test]
    fn chained_prepositions_make_object_the_next_subject() {
        let g = parse_caption("A man riding a horse on the beach.");
        assert_eq!(
            g.triplets,
            vec![t("man", "riding", Some("horse")), t("horse", "on", Some("beach"))]
        );
    }

    #[test]
    fn auxiliary_is_dropped_before_a_verb() {
        let g = parse_caption("a woman is holding an umbrella");
        assert_eq!(g.triplets, vec![t("woman", "holding", Some("umbrella"))]);
        let g = parse_caption("the cat is on the table");
        assert_eq!(g.triplets, vec![t("cat", "is on", Some("table"))]);
    }

    #[test]
    fn coordination_shares_the_predicate() {
        let g = parse_caption("a dog and a cat sleeping on a sofa");
        assert_eq!(
            g.triplets,
            vec![t("dog", "sleeping on", Some("sofa")), t("cat", "sleeping on", Some("sofa"))]
        );
        assert_eq!(g.nodes, vec!["dog", "cat", "sofa"]);
    }

    #[test]
    fn intransitive_predicate_has_no_object() {
        let g = parse_caption("a dog sleeping");
        assert_eq!(g.triplets, vec![t("dog", "sleeping", None)]);
    }

    #[test]
    fn partitive_is_dropped() {
        let g = parse_caption("a group of people standing in a park");
        assert_eq!(g.triplets, vec![t("people", "standing in", Some("park"))]);
    }

    #[test]
    fn collect_counts_all_nodes() {
        let graphs = vec![
            TextGraph::from_parts("bear", vec![], vec!["bear".into()]),
            TextGraph::from_parts("x", vec![t("bear", "on", Some("chair"))], vec![]),
        ];
        let nodes = collect_nodes(&graphs);
        assert_eq!(nodes.len(), 3);
        assert_eq!(nodes[2].role, NodeRole::Object);
        assert_eq!(nodes[2].origin_graph, 1);
        assert!(collect_nodes(&[]).is_empty());
    }

    #[test]
    fn triplet_file_policies() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, r#"{{"caption":"a man rides a horse","triplets":[["man","rides","horse"]]}}"#).unwrap();
        writeln!(f, r#"{{"caption":"A dog.","triplets":[["dog",null,null]]}}"#).unwrap();
        writeln!(f, "not json").unwrap();
        writeln!(f, r#"{{"caption":"a man rides a horse","triplets":[["Man","Rides","Horse!"],["horse","on","beach"]]}}"#).unwrap();
        f.flush().unwrap();

        let store = TripletStore::load(f.path(), false).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.warnings().len(), 2);
        let g = store.get("a man rides a horse").unwrap();
        assert_eq!(g.triplets.len(), 2);
        assert_eq!(g.triplets[0], t("man", "rides", Some("horse")));
        let dog = store.graph_for("a dog");
        assert_eq!(dog.nodes, vec!["dog"]);
        assert!(dog.triplets.is_empty());
        // unknown caption falls back to the parser
        assert_eq!(store.graph_for("two cats").nodes, vec!["cats"]);

        match TripletStore::load(f.path(), true) {
            Err(TripletFileError::Malformed { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn parse_is_consistent(words in proptest::collection::vec(
            proptest::sample::select(vec![
                "a", "the", "red", "dog", "cat", "sits", "on", "chair", "and", "is", "riding",
                "horse", "near", "two", "big", "table", "of", "with", "running", ",", "park",
            ]), 0..14)) {
            let caption = words.join(" ");
            let g = parse_caption(&caption);
            prop_assert_eq!(&g, &parse_caption(&caption));
            for tr in &g.triplets {
                prop_assert!(g.nodes.contains(&tr.subject));
                if let Some(o) = &tr.object {
                    prop_assert!(g.nodes.contains(o));
                }
                prop_assert!(!tr.subject.is_empty() && !tr.predicate.is_empty());
            }
            let mut dedup = g.nodes.clone();
            dedup.dedup();
            prop_assert_eq!(dedup.len(), g.nodes.len());
            for n in &g.nodes {
                prop_assert_eq!(normalize_text(n), n.clone());
            }
        }
    }
}
