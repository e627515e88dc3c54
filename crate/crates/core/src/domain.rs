//! Scenario vocabulary: bandwidth classes, stream and source parameters,
//! peer-selection scheme, and the validated form consumed by the rest of
//! the crate.

use std::fmt;
use std::ops::{Add, Sub};

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

/// Tolerance for the class fractions summing to one.
pub const FRACTION_TOLERANCE: f64 = 1e-9;

/// Simulation clock in integer nanoseconds.
///
/// Every period in the model (chunk period, upload times, epochs, deadline)
/// is rounded once to the nanosecond grid, so that coincident events such as
/// "source upload ends" and "next chunk created" compare equal exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    const PER_SECOND: f64 = 1e9;

    pub fn from_secs(secs: f64) -> Self {
        debug_assert!(secs >= 0.0 && secs.is_finite());
        SimTime((secs * Self::PER_SECOND).round() as u64)
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 / Self::PER_SECOND
    }

    pub fn nanos(self) -> u64 {
        self.0
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.as_secs())
    }
}

pub type ChunkId = u64;

/// A chunk of the stream. Chunk `k` is created at `k * T_SR`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Chunk {
    pub id: ChunkId,
    pub creation_time: SimTime,
}

impl Chunk {
    pub fn new(id: ChunkId, chunk_period: SimTime) -> Self {
        Chunk { id, creation_time: SimTime(id * chunk_period.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandwidthClass {
    /// 1-based class index.
    pub id: u32,
    /// Megabits per second. Zero marks a free-rider class.
    pub upload_capacity: f64,
    /// Share of the peer population.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    /// Megabits per second.
    pub stream_rate: f64,
    /// Megabits.
    pub chunk_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    Random,
    BandwidthAware,
    TitForTat,
    MostDeprived,
    ProportionalDeprived,
}

impl WeightKind {
    /// Weight kinds whose value depends only on static per-class data.
    pub fn is_static(self) -> bool {
        matches!(self, WeightKind::Random | WeightKind::BandwidthAware)
    }

    pub fn is_data_driven(self) -> bool {
        matches!(self, WeightKind::MostDeprived | WeightKind::ProportionalDeprived)
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            WeightKind::Random => "random",
            WeightKind::BandwidthAware => "bandwidth-aware",
            WeightKind::TitForTat => "tit-for-tat",
            WeightKind::MostDeprived => "most-deprived",
            WeightKind::ProportionalDeprived => "proportional-deprived",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChunkPolicy {
    LatestBlind,
    LatestUseful,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourcePolicy {
    RandomPeer,
    ClassTargeted { class: u32 },
    Aware { weight_kind: WeightKind, awareness_probability: f64 },
}

impl fmt::Display for SourcePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourcePolicy::RandomPeer => f.write_str("random-peer"),
            SourcePolicy::ClassTargeted { class } => write!(f, "class-targeted:{class}"),
            SourcePolicy::Aware { weight_kind, awareness_probability } => {
                write!(f, "aware:{weight_kind}:{awareness_probability}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    /// Megabits per second.
    pub upload_capacity: f64,
    pub policy: SourcePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSpec {
    pub weight_kind: WeightKind,
    pub awareness_probability: f64,
    pub chunk_policy: ChunkPolicy,
    /// Seconds; required for tit-for-tat.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch_length: Option<f64>,
    /// Latest-blind only: when the drawn target already holds the chunk, the
    /// sender is told and draws again. Off means the upload is wasted.
    #[serde(default = "yes")]
    pub blind_retry: bool,
}

fn yes() -> bool {
    true
}

impl SchemeSpec {
    /// W as used by the selection rule. Random selection ignores W.
    pub fn effective_awareness(&self) -> f64 {
        match self.weight_kind {
            WeightKind::Random => 0.0,
            _ => self.awareness_probability,
        }
    }
}

/// Overlay edge probability: a number in `[0, 1]` or the keyword `"complete"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeProbability {
    Complete,
    Probability(f64),
}

impl Serialize for EdgeProbability {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            EdgeProbability::Complete => serializer.serialize_str("complete"),
            EdgeProbability::Probability(p) => serializer.serialize_f64(*p),
        }
    }
}

impl<'de> Deserialize<'de> for EdgeProbability {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EdgeVisitor;

        impl Visitor<'_> for EdgeVisitor {
            type Value = EdgeProbability;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a probability in [0, 1] or \"complete\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
                Ok(EdgeProbability::Probability(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
                Ok(EdgeProbability::Probability(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
                Ok(EdgeProbability::Probability(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == "complete" {
                    Ok(EdgeProbability::Complete)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(EdgeVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n: usize,
    pub edge_probability: EdgeProbability,
    pub classes: Vec<BandwidthClass>,
    pub stream: StreamSpec,
    pub source: SourceSpec,
    pub scheme: SchemeSpec,
    /// Seconds since chunk creation.
    pub buffer_deadline: f64,
    pub duration: f64,
    pub warmup: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {message}")]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl ValidationError {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ValidationError { field: field.into(), message: message.into() }
    }
}

/// A scenario that passed validation, with per-class populations attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidScenario {
    scenario: Scenario,
    populations: Vec<usize>,
}

impl ValidScenario {
    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn into_scenario(self) -> Scenario {
        self.scenario
    }

    pub fn populations(&self) -> &[usize] {
        &self.populations
    }

    pub fn n(&self) -> usize {
        self.scenario.n
    }

    pub fn class_count(&self) -> usize {
        self.scenario.classes.len()
    }

    /// Peers occupy node ids `1..=n` in contiguous class blocks; node 0 is
    /// the source. Returns the 0-based class index of a peer.
    pub fn class_of_peer(&self, node: usize) -> usize {
        debug_assert!(node >= 1 && node <= self.scenario.n);
        let mut upper = 0;
        for (idx, pop) in self.populations.iter().enumerate() {
            upper += pop;
            if node <= upper {
                return idx;
            }
        }
        unreachable!("node {node} beyond population")
    }

    /// Class index for every node id, `None` for the source.
    pub fn node_classes(&self) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.scenario.n + 1);
        out.push(None);
        for (idx, pop) in self.populations.iter().enumerate() {
            out.extend(std::iter::repeat_n(Some(idx), *pop));
        }
        out
    }

    /// Population-weighted mean peer upload capacity.
    pub fn mean_capacity(&self) -> f64 {
        mean_capacity(&self.scenario.classes)
    }
}

/// Fraction-weighted mean upload capacity of a class table.
pub fn mean_capacity(classes: &[BandwidthClass]) -> f64 {
    classes.iter().map(|c| c.fraction * c.upload_capacity).sum()
}

/// Largest-remainder rounding of `fractions * n`; ties go to the lower index.
pub fn largest_remainder(fractions: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut pops: Vec<usize> = quotas.iter().map(|q| q.floor().max(0.0) as usize).collect();
    let assigned: usize = pops.iter().sum();
    let mut remaining = n.saturating_sub(assigned);
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for idx in order.into_iter().cycle() {
        if remaining == 0 {
            break;
        }
        pops[idx] += 1;
        remaining -= 1;
    }
    pops
}

fn finite_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

pub fn validate_scenario(s: Scenario) -> Result<ValidScenario, Vec<ValidationError>> {
    let mut errors = Vec::new();

    if s.n < 1 {
        errors.push(ValidationError::new("n", "peer count must be at least 1"));
    }
    if let EdgeProbability::Probability(p) = s.edge_probability {
        if !(0.0..=1.0).contains(&p) {
            errors.push(ValidationError::new("edge_probability", "must lie in [0, 1] or be \"complete\""));
        }
    }

    if s.classes.is_empty() {
        errors.push(ValidationError::new("classes", "at least one bandwidth class is required"));
    }
    for (idx, class) in s.classes.iter().enumerate() {
        if class.id as usize != idx + 1 {
            errors.push(ValidationError::new(
                format!("classes[{idx}].id"),
                format!("class ids must be distinct and contiguous from 1, found {}", class.id),
            ));
        }
        if !(class.upload_capacity.is_finite() && class.upload_capacity >= 0.0) {
            errors.push(ValidationError::new(format!("classes[{idx}].upload_capacity"), "must be >= 0"));
        }
        if !(class.fraction.is_finite() && (0.0..=1.0).contains(&class.fraction)) {
            errors.push(ValidationError::new(format!("classes[{idx}].fraction"), "must lie in [0, 1]"));
        }
    }
    let total: f64 = s.classes.iter().map(|c| c.fraction).sum();
    if !s.classes.is_empty() && (total - 1.0).abs() > FRACTION_TOLERANCE {
        errors.push(ValidationError::new("classes.fraction", format!("fractions sum ≠ 1 (sum = {total})")));
    }

    if !finite_positive(s.stream.stream_rate) {
        errors.push(ValidationError::new("stream.stream_rate", "must be > 0"));
    }
    if !finite_positive(s.stream.chunk_size) {
        errors.push(ValidationError::new("stream.chunk_size", "must be > 0"));
    }
    if finite_positive(s.stream.stream_rate)
        && finite_positive(s.stream.chunk_size)
        && SimTime::from_secs(s.stream.chunk_size / s.stream.stream_rate) == SimTime::ZERO
    {
        errors.push(ValidationError::new("stream", "chunk period rounds to zero"));
    }

    if !finite_positive(s.source.upload_capacity) {
        errors.push(ValidationError::new("source.upload_capacity", "must be > 0"));
    }
    match &s.source.policy {
        SourcePolicy::RandomPeer => {}
        SourcePolicy::ClassTargeted { class } => {
            if *class < 1 || *class as usize > s.classes.len() {
                errors.push(ValidationError::new("source.policy.class", format!("unknown class {class}")));
            }
        }
        SourcePolicy::Aware { awareness_probability, .. } => {
            if !(0.0..=1.0).contains(awareness_probability) {
                errors.push(ValidationError::new("source.policy.awareness_probability", "must lie in [0, 1]"));
            }
        }
    }

    if !(0.0..=1.0).contains(&s.scheme.awareness_probability) {
        errors.push(ValidationError::new("scheme.awareness_probability", "must lie in [0, 1]"));
    }
    let needs_epoch = s.scheme.weight_kind == WeightKind::TitForTat
        || matches!(s.source.policy, SourcePolicy::Aware { weight_kind: WeightKind::TitForTat, .. });
    match s.scheme.epoch_length {
        Some(te) if !finite_positive(te) => {
            errors.push(ValidationError::new("scheme.epoch_length", "must be > 0"));
        }
        None if needs_epoch => {
            errors.push(ValidationError::new("scheme.epoch_length", "required for tit-for-tat"));
        }
        _ => {}
    }

    if !finite_positive(s.buffer_deadline) {
        errors.push(ValidationError::new("buffer_deadline", "must be > 0"));
    }
    if !(s.warmup.is_finite() && s.warmup >= 0.0) {
        errors.push(ValidationError::new("warmup", "must be >= 0"));
    }
    if !(s.duration.is_finite() && s.duration > s.warmup) {
        errors.push(ValidationError::new("duration", "must exceed warmup"));
    }

    if !errors.is_empty() {
        return Err(errors);
    }

    let fractions: Vec<f64> = s.classes.iter().map(|c| c.fraction).collect();
    let populations = largest_remainder(&fractions, s.n);
    debug_assert_eq!(populations.iter().sum::<usize>(), s.n);
    Ok(ValidScenario { scenario: s, populations })
}

/// Upload time of a class, or the free-rider flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassTiming {
    Uploads { seconds: f64 },
    NeverUploads,
}

impl ClassTiming {
    pub fn seconds(self) -> Option<f64> {
        match self {
            ClassTiming::Uploads { seconds } => Some(seconds),
            ClassTiming::NeverUploads => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// T_SR = c / SR.
    pub chunk_period: f64,
    /// T_S = c / u_S.
    pub source_upload: f64,
    /// T_i = c / u_i per class.
    pub classes: Vec<ClassTiming>,
}

impl Timing {
    pub fn chunk_period_ticks(&self) -> SimTime {
        SimTime::from_secs(self.chunk_period)
    }

    pub fn source_upload_ticks(&self) -> SimTime {
        SimTime::from_secs(self.source_upload)
    }

    pub fn class_ticks(&self, class: usize) -> Option<SimTime> {
        self.classes[class].seconds().map(SimTime::from_secs)
    }

    /// Longest finite upload time across the source and all uploading classes.
    pub fn max_upload(&self) -> f64 {
        self.classes.iter().filter_map(|c| c.seconds()).fold(self.source_upload, f64::max)
    }
}

pub fn derive_timing(s: &ValidScenario) -> Timing {
    let sc = s.scenario();
    let c = sc.stream.chunk_size;
    Timing {
        chunk_period: c / sc.stream.stream_rate,
        source_upload: c / sc.source.upload_capacity,
        classes: sc
            .classes
            .iter()
            .map(|class| {
                if class.upload_capacity > 0.0 {
                    ClassTiming::Uploads { seconds: c / class.upload_capacity }
                } else {
                    ClassTiming::NeverUploads
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn table1() -> Vec<BandwidthClass> {
        vec![
            BandwidthClass { id: 1, upload_capacity: 4.0, fraction: 0.15 },
            BandwidthClass { id: 2, upload_capacity: 1.0, fraction: 0.25 },
            BandwidthClass { id: 3, upload_capacity: 0.384, fraction: 0.40 },
            BandwidthClass { id: 4, upload_capacity: 0.128, fraction: 0.20 },
        ]
    }

    fn base(classes: Vec<BandwidthClass>) -> Scenario {
        Scenario {
            n: 1000,
            edge_probability: EdgeProbability::Probability(0.05),
            classes,
            stream: StreamSpec { stream_rate: 0.9, chunk_size: 0.09 },
            source: SourceSpec { upload_capacity: 1.1, policy: SourcePolicy::RandomPeer },
            scheme: SchemeSpec {
                weight_kind: WeightKind::TitForTat,
                awareness_probability: 0.5,
                chunk_policy: ChunkPolicy::LatestUseful,
                epoch_length: Some(10.0),
                blind_retry: true,
            },
            buffer_deadline: 30.0,
            duration: 1200.0,
            warmup: 300.0,
            seed: 1,
        }
    }

    #[test]
    fn table1_is_valid_with_mean_1_02() {
        let v = validate_scenario(base(table1())).unwrap();
        assert!((v.mean_capacity() - 1.02).abs() < 0.01, "{}", v.mean_capacity());
        assert_eq!(v.populations(), &[150, 250, 400, 200]);
    }

    #[test]
    fn fraction_sum_error_names_field() {
        let classes = vec![
            BandwidthClass { id: 1, upload_capacity: 1.0, fraction: 0.5 },
            BandwidthClass { id: 2, upload_capacity: 1.0, fraction: 0.6 },
        ];
        let errs = validate_scenario(base(classes)).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "classes.fraction");
        assert!(errs[0].message.contains("fractions sum ≠ 1"));
    }

    #[test]
    fn homogeneous_single_class_is_valid() {
        let mut s = base(vec![BandwidthClass { id: 1, upload_capacity: 1.1, fraction: 1.0 }]);
        s.scheme.weight_kind = WeightKind::Random;
        let v = validate_scenario(s).unwrap();
        assert_eq!(v.populations(), &[1000]);
    }

    #[test]
    fn one_error_per_violation() {
        let mut s = base(table1());
        s.classes[2].id = 7;
        s.stream.chunk_size = 0.0;
        s.buffer_deadline = -1.0;
        s.warmup = 2000.0;
        s.scheme.epoch_length = None;
        let errs = validate_scenario(s).unwrap_err();
        let fields: Vec<&str> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(
            fields,
            vec!["classes[2].id", "stream.chunk_size", "scheme.epoch_length", "buffer_deadline", "duration"]
        );
    }

    #[test]
    fn validation_is_idempotent() {
        let v = validate_scenario(base(table1())).unwrap();
        let again = validate_scenario(v.scenario().clone()).unwrap();
        assert_eq!(v, again);
    }

    #[test]
    fn timing_for_validation_setup() {
        let mut s = base(table1());
        s.stream = StreamSpec { stream_rate: 0.9, chunk_size: 0.9 };
        s.source.upload_capacity = 0.9;
        let t = derive_timing(&validate_scenario(s).unwrap());
        assert_eq!(t.chunk_period, 1.0);
        assert_eq!(t.source_upload, 1.0);
        assert_eq!(t.chunk_period_ticks(), t.source_upload_ticks());
    }

    #[test]
    fn timing_heterogeneous_and_free_riders() {
        let classes = vec![
            BandwidthClass { id: 1, upload_capacity: 0.5, fraction: 0.5 },
            BandwidthClass { id: 2, upload_capacity: 2.0, fraction: 0.25 },
            BandwidthClass { id: 3, upload_capacity: 0.0, fraction: 0.25 },
        ];
        let mut s = base(classes);
        s.stream = StreamSpec { stream_rate: 1.0, chunk_size: 1.0 };
        s.source.upload_capacity = 1.0;
        let v = validate_scenario(s).unwrap();
        let t = derive_timing(&v);
        assert_eq!(t.classes[0], ClassTiming::Uploads { seconds: 2.0 });
        assert_eq!(t.classes[1], ClassTiming::Uploads { seconds: 0.5 });
        assert_eq!(t.classes[2], ClassTiming::NeverUploads);
        for (class, timing) in v.scenario().classes.iter().zip(&t.classes) {
            if let Some(secs) = timing.seconds() {
                assert!((secs * class.upload_capacity - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        assert_eq!(largest_remainder(&[1.0 / 3.0; 3], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.07, 0.66, 0.27], 1000), vec![70, 660, 270]);
        assert_eq!(largest_remainder(&[2.0 / 3.0, 1.0 / 3.0], 600), vec![400, 200]);
    }

    #[test]
    fn class_of_peer_uses_contiguous_blocks() {
        let v = validate_scenario(base(table1())).unwrap();
        assert_eq!(v.class_of_peer(1), 0);
        assert_eq!(v.class_of_peer(150), 0);
        assert_eq!(v.class_of_peer(151), 1);
        assert_eq!(v.class_of_peer(1000), 3);
        let classes = v.node_classes();
        assert_eq!(classes[0], None);
        assert_eq!(classes[400], Some(1));
    }

    #[test]
    fn edge_probability_json_forms() {
        let c: EdgeProbability = serde_json::from_str("\"complete\"").unwrap();
        assert_eq!(c, EdgeProbability::Complete);
        let p: EdgeProbability = serde_json::from_str("0.05").unwrap();
        assert_eq!(p, EdgeProbability::Probability(0.05));
        assert!(serde_json::from_str::<EdgeProbability>("\"full\"").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut json = serde_json::to_value(base(table1())).unwrap();
        json["stream"]["chunk_sise"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<Scenario>(json).is_err());
    }

    proptest::proptest! {
        #[test]
        fn populations_always_sum_to_n(raw in proptest::collection::vec(0.0f64..1.0, 1..8), n in 1usize..5000) {
            let total: f64 = raw.iter().sum();
            proptest::prop_assume!(total > 1e-6);
            let fractions: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let pops = largest_remainder(&fractions, n);
            proptest::prop_assert_eq!(pops.iter().sum::<usize>(), n);
            for (pop, f) in pops.iter().zip(&fractions) {
                proptest::prop_assert!((*pop as f64 - f * n as f64).abs() < 1.0 + 1e-9);
            }
        }
    }
}
