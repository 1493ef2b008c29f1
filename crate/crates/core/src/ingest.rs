//! Markov-chain fitting from labelled traffic sequences, the Beijing preset,
//! and the JSON scenario format.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::congestion::{ErrorCostModel, HazardParams, ObservationModel, TwoStateChain};
use crate::error::{Error, Result};
use crate::scenario::{ArrivalDist, Arrivals, BeliefCarry, CharOverrides, DiscreteDist, PathSpec, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

/// Label of a good (low-hazard) traffic status.
pub const LABEL_GOOD: u8 = 1;
/// Label of a bad (high-hazard) traffic status.
pub const LABEL_BAD: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub road: String,
    pub labels: Vec<u8>,
    pub interval_minutes: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainFit {
    pub chain: TwoStateChain,
    pub warnings: Vec<String>,
}

/// Maximum-likelihood transition probabilities from a fully labelled sequence.
/// A state never left (or never visited) gets a self-loop and a warning.
pub fn fit_two_state_chain(labels: &[u8]) -> Result<ChainFit> {
    if labels.len() < 2 {
        return Err(Error::Format("need at least two labels to fit a chain".into()));
    }
    if let Some(bad) = labels.iter().find(|l| **l != LABEL_GOOD && **l != LABEL_BAD) {
        return Err(Error::Format(format!("label {bad} is not 1 (good) or 2 (bad)")));
    }
    let mut counts = [[0u64; 2]; 2];
    for w in labels.windows(2) {
        counts[usize::from(w[0] - 1)][usize::from(w[1] - 1)] += 1;
    }
    let mut warnings = Vec::new();
    let row = |from: usize, to: usize, warnings: &mut Vec<String>| -> f64 {
        let total = counts[from][0] + counts[from][1];
        if total == 0 {
            let name = if from == 0 { "low" } else { "high" };
            warnings.push(format!(
                "{name} state never observed as a source; using a self-loop"
            ));
            0.0
        } else {
            counts[from][to] as f64 / total as f64
        }
    };
    let p_lh = row(0, 1, &mut warnings);
    let p_hl = row(1, 0, &mut warnings);
    Ok(ChainFit {
        chain: TwoStateChain::new(p_lh, p_hl)?,
        warnings,
    })
}

pub fn stationary(chain: &TwoStateChain) -> Result<f64> {
    chain.stationary()
}

/// Draws a label sequence from a chain.
pub fn generate_labels<R: Rng + ?Sized>(
    chain: &TwoStateChain,
    len: usize,
    start_high: bool,
    rng: &mut R,
) -> Vec<u8> {
    let mut high = start_high;
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        if t > 0 {
            high = rng.gen::<f64>() < chain.prob_next_high(high);
        }
        out.push(if high { LABEL_BAD } else { LABEL_GOOD });
    }
    out
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    road: String,
    timestamp_index: i64,
    label: u8,
}

/// Reads `road,timestamp_index,label` rows and groups them per road, ordered
/// by timestamp. Roads keep their first-appearance order.
pub fn read_labeled_sequences<R: Read>(reader: R, interval_minutes: f64) -> Result<Vec<LabeledSequence>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Vec<(i64, u8)>> = BTreeMap::new();
    for (line, rec) in rdr.deserialize::<LabelRow>().enumerate() {
        let rec = rec.map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))?;
        if rec.label != LABEL_GOOD && rec.label != LABEL_BAD {
            return Err(Error::Format(format!(
                "row {}: label {} is not 1 or 2",
                line + 1,
                rec.label
            )));
        }
        if !rows.contains_key(&rec.road) {
            order.push(rec.road.clone());
        }
        rows.entry(rec.road)
            .or_default()
            .push((rec.timestamp_index, rec.label));
    }
    if order.is_empty() {
        return Err(Error::Format("no labelled rows".into()));
    }
    Ok(order
        .into_iter()
        .map(|road| {
            let mut r = rows.remove(&road).unwrap_or_default();
            r.sort_by_key(|p| p.0);
            LabeledSequence {
                road,
                labels: r.into_iter().map(|p| p.1).collect(),
                interval_minutes,
            }
        })
        .collect())
}

/// Published steady states of the four Beijing roads.
pub const BEIJING_ROADS: [(&str, f64); 4] = [
    ("Donghuamen", 0.3883),
    ("Beiheyuan", 0.1064),
    ("Beichizi", 0.1915),
    ("Jianxiang", 0.9362),
];
pub const BEIJING_INITIAL_BELIEFS: [f64; 4] = [0.5, 0.2, 0.3, 0.8];
/// `p_LH + p_HL` of every preset chain.
pub const BEIJING_MIXING: f64 = 0.5;

/// Four independent stochastic paths calibrated to the published Beijing
/// values. Quantities that were not published are filled with defaults and
/// listed in `defaulted`.
pub fn beijing_preset() -> Scenario {
    let ell0 = 60.0;
    let paths = BEIJING_ROADS
        .iter()
        .zip(BEIJING_INITIAL_BELIEFS)
        .map(|(&(name, xbar), x0)| PathSpec {
            name: name.into(),
            chain: TwoStateChain {
                p_lh: BEIJING_MIXING * xbar,
                p_hl: BEIJING_MIXING * (1.0 - xbar),
            },
            initial_belief: x0,
            initial_exp_latency: 0.5 * ell0,
            initial_true_latency: None,
            initial_high: None,
        })
        .collect();
    Scenario {
        name: "beijing".into(),
        paths,
        ell0,
        hazard: HazardParams {
            alpha_high: 1.3,
            alpha_low: 0.3,
        },
        obs: ObservationModel::default(),
        err: ErrorCostModel { v0: 10.0 },
        arrivals: Arrivals {
            min: 84,
            max: 158,
            mean: 121.0,
            dist: ArrivalDist::TruncatedNormal { std: 12.33 },
        },
        rho: 0.98,
        prior_xbar: DiscreteDist::uniform(BEIJING_ROADS.iter().map(|r| r.1).collect()),
        belief_carry: BeliefCarry::Posterior,
        // one expected scout per high-belief path and slot
        char_overrides: CharOverrides {
            p_high: Some(1.0 / 121.0),
            ..CharOverrides::default()
        },
        latency_ceiling: Some(4.0 * ell0),
        defaulted: [
            "ell0",
            "latency_ceiling",
            "char.p_H",
            "error_cost",
            "observation",
            "arrivals.min",
            "arrivals.max",
            "paths.initial_exp_latency",
            "paths.chain.mixing",
            "prior_xbar",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    }
}

// ---- file format ----

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    paths: Vec<PathFile>,
    ell0: f64,
    alpha: AlphaFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    observation: Option<ObservationFile>,
    error_cost: ErrorCostFile,
    arrivals: ArrivalsFile,
    rho: f64,
    prior_xbar: PriorFile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    belief_update: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    char: Option<CharFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latency_ceiling: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<ProvenanceFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathFile {
    name: String,
    chain: ChainFile,
    initial_belief: f64,
    initial_exp_latency: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_true_latency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_state: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    #[serde(rename = "p_LH", default, skip_serializing_if = "Option::is_none")]
    p_lh: Option<f64>,
    #[serde(rename = "p_HL", default, skip_serializing_if = "Option::is_none")]
    p_hl: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stationary: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mixing: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlphaFile {
    #[serde(rename = "H")]
    high: f64,
    #[serde(rename = "L")]
    low: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "variant", deny_unknown_fields)]
enum ObservationFile {
    #[serde(rename = "parametric")]
    Parametric { gamma: f64 },
    #[serde(rename = "majority-vote")]
    MajorityVote { accuracy: f64 },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ErrorCostFile {
    v0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrivalsFile {
    min: u32,
    max: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dist: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    std: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorFile {
    support: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CharFile {
    #[serde(rename = "p_L", default, skip_serializing_if = "Option::is_none")]
    p_low: Option<f64>,
    #[serde(rename = "p_H", default, skip_serializing_if = "Option::is_none")]
    p_high: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x_th: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceFile {
    #[serde(default)]
    defaulted: Vec<String>,
}

fn to_file(s: &Scenario) -> ScenarioFile {
    ScenarioFile {
        schema_version: SCHEMA_VERSION,
        name: Some(s.name.clone()),
        paths: s
            .paths
            .iter()
            .map(|p| PathFile {
                name: p.name.clone(),
                chain: ChainFile {
                    p_lh: Some(p.chain.p_lh),
                    p_hl: Some(p.chain.p_hl),
                    stationary: None,
                    mixing: None,
                },
                initial_belief: p.initial_belief,
                initial_exp_latency: p.initial_exp_latency,
                initial_true_latency: p.initial_true_latency,
                initial_state: p.initial_high.map(|h| if h { "high" } else { "low" }.to_string()),
            })
            .collect(),
        ell0: s.ell0,
        alpha: AlphaFile {
            high: s.hazard.alpha_high,
            low: s.hazard.alpha_low,
        },
        observation: Some(match s.obs {
            ObservationModel::Parametric { gamma } => ObservationFile::Parametric { gamma },
            ObservationModel::MajorityVote { accuracy } => ObservationFile::MajorityVote { accuracy },
        }),
        error_cost: ErrorCostFile { v0: s.err.v0 },
        arrivals: ArrivalsFile {
            min: s.arrivals.min,
            max: s.arrivals.max,
            mean: Some(s.arrivals.mean),
            dist: Some(
                match s.arrivals.dist {
                    ArrivalDist::Uniform => "uniform",
                    ArrivalDist::TruncatedNormal { .. } => "truncated-normal",
                }
                .into(),
            ),
            std: match s.arrivals.dist {
                ArrivalDist::Uniform => None,
                ArrivalDist::TruncatedNormal { std } => Some(std),
            },
        },
        rho: s.rho,
        prior_xbar: PriorFile {
            support: s.prior_xbar.support.clone(),
            weights: s.prior_xbar.weights.clone(),
        },
        belief_update: match s.belief_carry {
            BeliefCarry::Posterior => None,
            other => Some(other.name().into()),
        },
        latency_ceiling: s.latency_ceiling,
        char: {
            let o = s.char_overrides;
            (o != CharOverrides::default()).then_some(CharFile {
                p_low: o.p_low,
                p_high: o.p_high,
                x_th: o.x_th,
            })
        },
        provenance: (!s.defaulted.is_empty()).then(|| ProvenanceFile {
            defaulted: s.defaulted.clone(),
        }),
    }
}

fn from_file(f: ScenarioFile) -> Result<Scenario> {
    if f.schema_version != SCHEMA_VERSION {
        return Err(Error::invalid(
            "schema_version",
            format!(
                "unsupported version {} (expected {SCHEMA_VERSION})",
                f.schema_version
            ),
        ));
    }
    let mut defaulted = f.provenance.map(|p| p.defaulted).unwrap_or_default();
    let mut mark = |field: &str| {
        if !defaulted.iter().any(|d| d == field) {
            defaulted.push(field.to_string());
        }
    };
    let mut paths = Vec::with_capacity(f.paths.len());
    for (i, p) in f.paths.into_iter().enumerate() {
        let field = |k: &str| format!("paths[{i}].chain.{k}");
        let chain = match (p.chain.p_lh, p.chain.p_hl, p.chain.stationary, p.chain.mixing) {
            (Some(a), Some(b), None, None) => TwoStateChain { p_lh: a, p_hl: b },
            (None, None, Some(x), Some(m)) => TwoStateChain::from_stationary(x, m).map_err(|e| match e {
                Error::Invalid { field: k, reason } => Error::Invalid {
                    field: field(&k),
                    reason,
                },
                other => other,
            })?,
            _ => {
                return Err(Error::invalid(
                    format!("paths[{i}].chain"),
                    "give either p_LH and p_HL, or stationary and mixing",
                ))
            }
        };
        let initial_high = match p.initial_state.as_deref() {
            None => None,
            Some("high") => Some(true),
            Some("low") => Some(false),
            Some(other) => {
                return Err(Error::invalid(
                    format!("paths[{i}].initial_state"),
                    format!("`{other}` is not high or low"),
                ))
            }
        };
        paths.push(PathSpec {
            name: p.name,
            chain,
            initial_belief: p.initial_belief,
            initial_exp_latency: p.initial_exp_latency,
            initial_true_latency: p.initial_true_latency,
            initial_high,
        });
    }
    let obs = match f.observation {
        Some(ObservationFile::Parametric { gamma }) => ObservationModel::Parametric { gamma },
        Some(ObservationFile::MajorityVote { accuracy }) => ObservationModel::MajorityVote { accuracy },
        None => {
            mark("observation");
            ObservationModel::default()
        }
    };
    let dist = match f.arrivals.dist.as_deref() {
        None | Some("uniform") => ArrivalDist::Uniform,
        Some("truncated-normal") => ArrivalDist::TruncatedNormal {
            std: f.arrivals.std.ok_or_else(|| {
                Error::invalid("arrivals.std", "required for a truncated-normal distribution")
            })?,
        },
        Some(other) => {
            return Err(Error::invalid(
                "arrivals.dist",
                format!("unknown distribution `{other}` (expected uniform or truncated-normal)"),
            ))
        }
    };
    let mean = match f.arrivals.mean {
        Some(m) => m,
        None => {
            mark("arrivals.mean");
            0.5 * f64::from(f.arrivals.min + f.arrivals.max)
        }
    };
    let belief_carry = match f.belief_update.as_deref() {
        None => BeliefCarry::Posterior,
        Some(s) => BeliefCarry::parse(s)?,
    };
    let s = Scenario {
        name: f.name.unwrap_or_else(|| "scenario".into()),
        paths,
        ell0: f.ell0,
        hazard: HazardParams {
            alpha_high: f.alpha.high,
            alpha_low: f.alpha.low,
        },
        obs,
        err: ErrorCostModel { v0: f.error_cost.v0 },
        arrivals: Arrivals {
            min: f.arrivals.min,
            max: f.arrivals.max,
            mean,
            dist,
        },
        rho: f.rho,
        prior_xbar: DiscreteDist {
            support: f.prior_xbar.support,
            weights: f.prior_xbar.weights,
        },
        belief_carry,
        char_overrides: f
            .char
            .map(|c| CharOverrides {
                p_low: c.p_low,
                p_high: c.p_high,
                x_th: c.x_th,
            })
            .unwrap_or_default(),
        latency_ceiling: f.latency_ceiling,
        defaulted,
    };
    s.validate()?;
    Ok(s)
}

pub fn scenario_to_json(s: &Scenario) -> Result<String> {
    serde_json::to_string_pretty(&to_file(s)).map_err(|e| Error::Format(e.to_string()))
}

pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        path: e.path().to_string(),
        message: e.inner().to_string(),
    })?;
    from_file(file)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    scenario_from_json(&std::fs::read_to_string(path)?)
}

pub fn save_scenario(s: &Scenario, path: &Path) -> Result<()> {
    s.validate()?;
    std::fs::write(path, scenario_to_json(s)? + "\n")?;
    Ok(())
}

/// Short content hash of a scenario's canonical JSON form.
pub fn scenario_hash(s: &Scenario) -> String {
    let text = serde_json::to_string(&to_file(s)).unwrap_or_default();
    let digest = Sha256::digest(text.as_bytes());
    hex::encode(&digest[..8])
}

/// JSON object describing one path entry of a scenario file.
pub fn path_fragment(
    name: &str,
    chain: &TwoStateChain,
    initial_belief: f64,
    initial_exp_latency: f64,
) -> String {
    let p = PathFile {
        name: name.into(),
        chain: ChainFile {
            p_lh: Some(chain.p_lh),
            p_hl: Some(chain.p_hl),
            stationary: None,
            mixing: None,
        },
        initial_belief,
        initial_exp_latency,
        initial_true_latency: None,
        initial_state: None,
    };
    serde_json::to_string_pretty(&p).unwrap_or_default()
}
