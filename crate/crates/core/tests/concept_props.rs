use memcap::concept::{cluster_concepts, select_key_concepts, ClusterConfig, ConceptCluster};
use memcap::embedding::EmbeddingVector;
use memcap::gateway::mock::MockEmbedder;
use memcap::gateway::{GatewayError, TextEmbedder};
use memcap::triplet::{ConceptNode, NodeRole};
use proptest::prelude::*;

const WORDS: &[&str] = &[
    "bear", "teddy", "chair", "red", "dog", "grass", "brown", "wooden", "table", "man", "horse", "beach",
];

fn phrases() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(WORDS), 1..3).prop_map(|w| w.join(" ")),
        1..25,
    )
}

fn nodes(texts: &[String]) -> Vec<ConceptNode> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| ConceptNode {
            text: t.clone(),
            origin_graph: i % 5,
            role: NodeRole::Subject,
        })
        .collect()
}

fn partition(clusters: &[ConceptCluster<f64>]) -> Vec<Vec<usize>> {
    clusters.iter().map(|c| c.node_indices.clone()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_tau_never_merges(texts in phrases(), lo in 0.05f64..0.9, step in 0.0f64..0.09, seed in 0u64..4) {
        let m = MockEmbedder::new(seed, 32);
        let n = nodes(&texts);
        let hi = lo + step;
        let a = cluster_concepts(&n, &m, &ClusterConfig::with_tau(lo).unwrap()).unwrap();
        let b = cluster_concepts(&n, &m, &ClusterConfig::with_tau(hi).unwrap()).unwrap();
        prop_assert!(b.len() >= a.len());
        // every high-tau cluster sits inside one low-tau cluster
        let low = partition(&a);
        for cluster in partition(&b) {
            let home = low.iter().position(|c| c.contains(&cluster[0])).unwrap();
            prop_assert!(cluster.iter().all(|i| low[home].contains(i)));
        }
    }

    #[test]
    fn clusters_partition_the_nodes(texts in phrases(), tau in 0.05f64..0.95) {
        let m = MockEmbedder::new(1, 32);
        let n = nodes(&texts);
        let clusters = cluster_concepts(&n, &m, &ClusterConfig::with_tau(tau).unwrap()).unwrap();
        let mut all: Vec<usize> = clusters.iter().flat_map(|c| c.node_indices.clone()).collect();
        all.sort();
        prop_assert_eq!(all, (0..n.len()).collect::<Vec<_>>());
        for c in &clusters {
            for w in c.node_indices.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn monotone_transform_keeps_the_key_concept(sims in prop::collection::vec(-0.95f64..0.95, 1..8)) {
        let texts: Vec<String> = (0..sims.len()).map(|i| format!("concept{i}")).collect();
        let cluster = || ConceptCluster {
            members: nodes(&texts),
            node_indices: (0..texts.len()).collect(),
            cf: 1.0,
            key_concept: None,
        };
        let image = EmbeddingVector::normalize(vec![1.0, 0.0]).unwrap();
        let plain = Sims(texts.clone(), sims.clone());
        let squashed = Sims(texts.clone(), sims.iter().map(|s| (s * s * s + s) / 2.0).collect());
        let a = select_key_concepts(&mut [cluster()], &image, &plain, 8).unwrap();
        let b = select_key_concepts(&mut [cluster()], &image, &squashed, 8).unwrap();
        prop_assert_eq!(a.texts(), b.texts());
    }
}

/// Cross-modal embedder placing text i at cosine `sims[i]` from [1, 0].
struct Sims(Vec<String>, Vec<f64>);

impl TextEmbedder<f64> for Sims {
    fn embed_texts_raw(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, GatewayError> {
        Ok(texts
            .iter()
            .map(|t| {
                let s = self.1[self.0.iter().position(|x| x == t).unwrap()];
                vec![s, (1.0 - s * s).sqrt()]
            })
            .collect())
    }
}
