#![allow(dead_code)]

use chunkcast::domain::*;

pub fn classes(spec: &[(f64, f64)]) -> Vec<BandwidthClass> {
    spec.iter()
        .enumerate()
        .map(|(i, &(upload_capacity, fraction))| BandwidthClass { id: i as u32 + 1, upload_capacity, fraction })
        .collect()
}

/// Complete graph, SR = c = 1, random/latest-useful, seed 1.
pub fn scenario(n: usize, class_spec: &[(f64, f64)]) -> Scenario {
    Scenario {
        n,
        edge_probability: EdgeProbability::Complete,
        classes: classes(class_spec),
        stream: StreamSpec { stream_rate: 1.0, chunk_size: 1.0 },
        source: SourceSpec { upload_capacity: 1.0, policy: SourcePolicy::RandomPeer },
        scheme: SchemeSpec {
            weight_kind: WeightKind::Random,
            awareness_probability: 0.0,
            chunk_policy: ChunkPolicy::LatestUseful,
            epoch_length: None,
            blind_retry: true,
        },
        buffer_deadline: 20.0,
        duration: 200.0,
        warmup: 20.0,
        seed: 1,
    }
}

pub fn valid(s: Scenario) -> ValidScenario {
    validate_scenario(s).expect("test scenario must validate")
}

pub fn table1() -> Vec<(f64, f64)> {
    vec![(4.0, 0.15), (1.0, 0.25), (0.384, 0.40), (0.128, 0.20)]
}
