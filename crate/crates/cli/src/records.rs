//! JSON shapes written to stdout and to trace files.

use memcap::fusion::DecisionRecord;
use memcap::pipeline::{CaptionOutput, Inspection, Timings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize)]
pub struct CaptionRecord<'a> {
    pub image_path: &'a str,
    pub caption: &'a str,
    pub key_concepts: &'a [String],
    pub retrieved_ids: &'a [usize],
    pub termination: &'static str,
    pub timings: &'a Timings,
}

impl<'a> CaptionRecord<'a> {
    pub fn new(image_path: &'a str, out: &'a CaptionOutput<f32>) -> Self {
        Self {
            image_path,
            caption: &out.caption,
            key_concepts: &out.key_concepts,
            retrieved_ids: &out.retrieved_ids,
            termination: out.termination.as_str(),
            timings: &out.timings,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub image_path: &'a str,
    pub error: ErrorInfo,
}

#[derive(Debug, Serialize)]
pub struct TraceLine<'a> {
    pub image_path: &'a str,
    #[serde(flatten)]
    pub decision: &'a DecisionRecord,
}

/// The part of a caption record that `eval-bleu` reads.
#[derive(Debug, Deserialize)]
pub struct ResultLine {
    pub image_path: String,
    pub caption: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct ReferenceLine {
    pub image: String,
    pub references: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct RetrievedView<'a> {
    pub id: usize,
    pub caption: &'a str,
    pub score: f32,
}

#[derive(Debug, Serialize)]
pub struct GraphView<'a> {
    pub caption: &'a str,
    pub triplets: Vec<(&'a str, &'a str, Option<&'a str>)>,
    pub nodes: &'a [String],
}

#[derive(Debug, Serialize)]
pub struct ClusterView<'a> {
    pub members: Vec<&'a str>,
    pub origins: Vec<usize>,
    pub cf: f32,
    pub kept: bool,
    pub key_concept: Option<&'a str>,
}

#[derive(Debug, Serialize)]
pub struct KeyConceptView<'a> {
    pub text: &'a str,
    pub image_similarity: f32,
}

#[derive(Debug, Serialize)]
pub struct RefinementView<'a> {
    pub caption: &'a str,
    pub termination: &'static str,
    pub iterations: usize,
    pub states: Vec<String>,
    pub decisions: &'a [DecisionRecord],
}

#[derive(Debug, Serialize)]
pub struct InspectDocument<'a> {
    pub image_path: &'a str,
    pub retrieved: Vec<RetrievedView<'a>>,
    pub graphs: Vec<GraphView<'a>>,
    pub clusters: Vec<ClusterView<'a>>,
    pub key_concepts: Vec<KeyConceptView<'a>>,
    pub ordering_relations: &'a [(String, String)],
    pub fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement: Option<RefinementView<'a>>,
}

impl<'a> InspectDocument<'a> {
    pub fn new(image_path: &'a str, inspection: &'a Inspection<f32>) -> Self {
        Self {
            image_path,
            retrieved: inspection
                .retrieved
                .items
                .iter()
                .map(|r| RetrievedView {
                    id: r.id,
                    caption: &r.caption,
                    score: r.score,
                })
                .collect(),
            graphs: inspection
                .graphs
                .iter()
                .map(|g| GraphView {
                    caption: &g.source_caption,
                    triplets: g
                        .triplets
                        .iter()
                        .map(|t| (t.subject.as_str(), t.predicate.as_str(), t.object.as_deref()))
                        .collect(),
                    nodes: &g.nodes,
                })
                .collect(),
            clusters: inspection
                .clusters
                .iter()
                .enumerate()
                .map(|(i, c)| ClusterView {
                    members: c.members.iter().map(|m| m.text.as_str()).collect(),
                    origins: c.members.iter().map(|m| m.origin_graph).collect(),
                    cf: c.cf,
                    kept: inspection.kept.contains(&i),
                    key_concept: c.key_concept.as_deref(),
                })
                .collect(),
            key_concepts: inspection
                .key_concepts
                .concepts
                .iter()
                .map(|k| KeyConceptView {
                    text: &k.text,
                    image_similarity: k.image_similarity,
                })
                .collect(),
            ordering_relations: &inspection.key_concepts.ordering_relations,
            fallback: inspection.fallback,
            refinement: None,
        }
    }

    pub fn with_refinement(mut self, out: &'a CaptionOutput<f32>) -> Self {
        self.refinement = Some(RefinementView {
            caption: &out.caption,
            termination: out.termination.as_str(),
            iterations: out.trace.states.len() - 1,
            states: out.trace.states.iter().map(|s| s.text()).collect(),
            decisions: &out.trace.decisions,
        });
        self
    }
}
