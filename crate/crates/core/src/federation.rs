//! The federation round engine: broadcast snapshotting, per-device identity
//! determination and local update, per-cluster aggregation, and the
//! empty-cluster policies.
//!
//! A round is a fork/join: device computations run in parallel against an
//! immutable broadcast snapshot, then the server reduces uploads in device
//! order. Results are bitwise identical for any worker count because every
//! device computation is a pure function of the snapshot plus that device's
//! own RNG stream, and all floating-point reductions happen serially.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clustering::{
    model_delta, normalize_losses, select_cluster, similarity_signed, ClusterDelta,
    ScoreBreakdown, SimilarityKind,
};
use crate::data::{sample_minibatch, DeviceDataset};
use crate::error::{Error, Result};
use crate::nn::{init_params, sgd_step, GradientVector, MlpConfig, Model, ParamVector};
use crate::seeding::{derive_rng, Domain};

/// The K global models for the current and previous rounds.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub models_now: Vec<ParamVector>,
    pub models_prev: Vec<ParamVector>,
    pub round: u64,
}

impl ServerState {
    /// Round-0 state: the previous models equal the initial ones, so the
    /// first round sees zero deltas and selection is loss-driven.
    pub fn new(models: Vec<ParamVector>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidConfig("server needs at least one cluster model".into()));
        }
        let len = models[0].len();
        for (k, m) in models.iter().enumerate() {
            if m.len() != len {
                return Err(Error::ShapeMismatch {
                    context: "server model layouts",
                    expected: len,
                    actual: m.len(),
                })
                .map_err(|e| e.at_round_position(0, k));
            }
        }
        Ok(Self {
            models_prev: models.clone(),
            models_now: models,
            round: 0,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.models_now.len()
    }
}

/// Initialize K MLP cluster models from the master seed.
///
/// Each cluster draws from the same initializer under its own derived seed,
/// which breaks the round-0 symmetry; `identical_init` forces one shared
/// seed instead, the pathological setting exercised by empty-cluster tests.
pub fn init_mlp_server(
    cfg: &MlpConfig,
    num_clusters: usize,
    master_seed: u64,
    identical_init: bool,
) -> Result<ServerState> {
    cfg.validate()?;
    let models = (0..num_clusters)
        .map(|k| {
            let idx = if identical_init { 0 } else { k as u64 };
            let mut rng = derive_rng(master_seed, Domain::ClusterInit, idx);
            init_params(cfg, &mut rng)
        })
        .collect();
    ServerState::new(models)
}

/// One device: its data, current identity, and private RNG stream.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub device_id: usize,
    pub dataset: DeviceDataset,
    pub identity: Option<usize>,
    rng: ChaCha8Rng,
}

impl DeviceState {
    pub fn new(device_id: usize, dataset: DeviceDataset, master_seed: u64) -> Self {
        Self {
            device_id,
            dataset,
            identity: None,
            rng: derive_rng(master_seed, Domain::DeviceStream, device_id as u64),
        }
    }
}

/// How empty clusters are repopulated after identity determination.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "devices")]
pub enum EmptyClusterPolicy {
    /// Leave identities as chosen; empty clusters carry their model over.
    None,
    /// Device `devices[k]` is always assigned identity `k`.
    Pinned(Vec<usize>),
    /// Move one device from the largest cluster into each empty one.
    Rescue,
}

/// Everything `run_round` needs from the experiment configuration.
#[derive(Debug, Clone)]
pub struct RoundConfig {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// SGD steps per device per round; steps after the first use fresh
    /// mini-batches.
    pub local_steps: usize,
    pub similarity: SimilarityKind,
    pub literal_eq3: bool,
    pub normalize_losses: bool,
    pub policy: EmptyClusterPolicy,
}

/// Post-round report: final identities, per-device score breakdowns, and
/// the aggregated models.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    /// Post-policy identities, exactly the ones aggregation used.
    pub identities: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    /// The raw decision each device made before any policy override.
    pub per_device_scores: Vec<ScoreBreakdown>,
    pub new_models: Vec<ParamVector>,
}

struct Decision {
    breakdown: ScoreBreakdown,
    gradients: Vec<GradientVector>,
}

/// Execute one full federation round.
///
/// Per device: sample one mini-batch, evaluate loss and gradient against
/// every broadcast model, score gradient similarity against each cluster's
/// delta, pick an identity, apply the empty-cluster policy, take the local
/// SGD step from the final identity's broadcast model reusing the gradient
/// already computed for it, and finally aggregate per cluster.
pub fn run_round<M: Model>(
    model: &M,
    server: &ServerState,
    devices: &mut [DeviceState],
    cfg: &RoundConfig,
) -> Result<(ServerState, RoundOutcome)> {
    if devices.is_empty() {
        return Err(Error::InvalidConfig("run_round needs at least one device".into()));
    }
    if cfg.local_steps == 0 {
        return Err(Error::InvalidConfig("local_steps must be at least 1".into()));
    }
    let k = server.num_clusters();
    let deltas: Vec<ClusterDelta> = (0..k)
        .map(|c| model_delta(&server.models_now[c], &server.models_prev[c], c))
        .collect::<Result<_>>()?;

    // Identity determination (Steps 1-4) on parallel workers.
    let decisions: Vec<Decision> = devices
        .par_iter_mut()
        .map(|dev| {
            decide(model, server, &deltas, dev, cfg)
                .map_err(|e| e.at_round_position(dev.device_id, usize::MAX))
        })
        .collect::<Result<_>>()?;

    let chosen: Vec<usize> = decisions.iter().map(|d| d.breakdown.chosen).collect();
    let identities = apply_empty_cluster_policy(&chosen, k, &cfg.policy)?;
    for (dev, &id) in devices.iter_mut().zip(&identities) {
        dev.identity = Some(id);
    }

    // Local updates from the (post-policy) identity's broadcast model.
    let uploads: Vec<(usize, ParamVector)> = devices
        .par_iter_mut()
        .zip(&decisions)
        .zip(&identities)
        .map(|((dev, decision), &id)| {
            local_update(model, server, dev, decision, id, cfg)
                .map(|w| (id, w))
                .map_err(|e| e.at_round_position(dev.device_id, id))
        })
        .collect::<Result<_>>()?;

    let new_models = aggregate(&uploads, k, &server.models_now)?;

    let mut cluster_sizes = vec![0usize; k];
    for &id in &identities {
        cluster_sizes[id] += 1;
    }
    let outcome = RoundOutcome {
        identities,
        cluster_sizes,
        per_device_scores: decisions.into_iter().map(|d| d.breakdown).collect(),
        new_models: new_models.clone(),
    };
    let next = ServerState {
        models_prev: server.models_now.clone(),
        models_now: new_models,
        round: server.round + 1,
    };
    Ok((next, outcome))
}

fn decide<M: Model>(
    model: &M,
    server: &ServerState,
    deltas: &[ClusterDelta],
    dev: &mut DeviceState,
    cfg: &RoundConfig,
) -> Result<Decision> {
    let batch = sample_minibatch(&dev.dataset, cfg.batch_size, &mut dev.rng)?;
    let k = server.num_clusters();
    let mut raw_losses = Vec::with_capacity(k);
    let mut gradients = Vec::with_capacity(k);
    let mut sims = Vec::with_capacity(k);
    for c in 0..k {
        let (loss, grad) = model
            .batch_loss_and_gradient(&server.models_now[c], &batch)
            .map_err(|e| e.at_round_position(dev.device_id, c))?;
        let sim = similarity_signed(&grad, &deltas[c], cfg.similarity, cfg.literal_eq3)?;
        raw_losses.push(loss);
        gradients.push(grad);
        sims.push(sim);
    }
    let rule_losses = if cfg.normalize_losses {
        normalize_losses(&raw_losses)
    } else {
        raw_losses.clone()
    };
    let (_, mut breakdown) = select_cluster(&sims, &rule_losses, cfg.lambda)?;
    breakdown.raw_loss = raw_losses;
    Ok(Decision {
        breakdown,
        gradients,
    })
}

fn local_update<M: Model>(
    model: &M,
    server: &ServerState,
    dev: &mut DeviceState,
    decision: &Decision,
    identity: usize,
    cfg: &RoundConfig,
) -> Result<ParamVector> {
    let mut w = sgd_step(
        &server.models_now[identity],
        &decision.gradients[identity],
        cfg.learning_rate,
    )?;
    for _ in 1..cfg.local_steps {
        let batch = sample_minibatch(&dev.dataset, cfg.batch_size, &mut dev.rng)?;
        let (_, grad) = model.batch_loss_and_gradient(&w, &batch)?;
        w = sgd_step(&w, &grad, cfg.learning_rate)?;
    }
    Ok(w)
}

/// Unweighted per-cluster mean of uploaded models; empty clusters keep
/// their carried model bitwise.
pub fn aggregate(
    uploads: &[(usize, ParamVector)],
    num_clusters: usize,
    carry: &[ParamVector],
) -> Result<Vec<ParamVector>> {
    if carry.len() != num_clusters {
        return Err(Error::ShapeMismatch {
            context: "aggregate carry count",
            expected: num_clusters,
            actual: carry.len(),
        });
    }
    let layout = carry.first().map_or(0, ParamVector::len);
    let mut sums: Vec<Vec<f64>> = vec![vec![0.0; layout]; num_clusters];
    let mut counts = vec![0usize; num_clusters];
    for (device, (id, w)) in uploads.iter().enumerate() {
        if *id >= num_clusters {
            return Err(Error::IndexOutOfRange {
                context: "upload identity",
                index: *id,
                limit: num_clusters,
            });
        }
        if w.len() != layout {
            return Err(Error::ShapeMismatch {
                context: "upload layout",
                expected: layout,
                actual: w.len(),
            })
            .map_err(|e| e.at_round_position(device, *id));
        }
        for (s, v) in sums[*id].iter_mut().zip(w.as_slice()) {
            *s += v;
        }
        counts[*id] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(k, (sum, &n))| {
            if n == 0 {
                carry[k].clone()
            } else {
                let inv = 1.0 / n as f64;
                ParamVector(sum.into_iter().map(|v| v * inv).collect())
            }
        })
        .collect())
}

/// Apply an empty-cluster policy to chosen identities.
///
/// `Pinned` force-assigns the designated devices regardless of their own
/// choices. `Rescue` repeatedly moves the lowest-id device out of the
/// currently largest cluster (ties to the lowest cluster index) into each
/// empty cluster, stopping when nothing is empty or no donor has two
/// members left.
pub fn apply_empty_cluster_policy(
    identities: &[usize],
    num_clusters: usize,
    policy: &EmptyClusterPolicy,
) -> Result<Vec<usize>> {
    for (device, &id) in identities.iter().enumerate() {
        if id >= num_clusters {
            return Err(Error::IndexOutOfRange {
                context: "device identity",
                index: id,
                limit: num_clusters,
            })
            .map_err(|e| e.at_round_position(device, id));
        }
    }
    let mut out = identities.to_vec();
    match policy {
        EmptyClusterPolicy::None => {}
        EmptyClusterPolicy::Pinned(pins) => {
            validate_pins(pins, num_clusters, identities.len())?;
            for (cluster, &device) in pins.iter().enumerate() {
                out[device] = cluster;
            }
        }
        EmptyClusterPolicy::Rescue => loop {
            let mut sizes = vec![0usize; num_clusters];
            for &id in &out {
                sizes[id] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            // Donor: largest cluster, ties to the lowest index.
            let mut donor = 0;
            for (c, &s) in sizes.iter().enumerate() {
                if s > sizes[donor] {
                    donor = c;
                }
            }
            if sizes[donor] < 2 {
                break;
            }
            let mover = out
                .iter()
                .position(|&id| id == donor)
                .expect("donor cluster is nonempty");
            out[mover] = empty;
        },
    }
    Ok(out)
}

fn validate_pins(pins: &[usize], num_clusters: usize, num_devices: usize) -> Result<()> {
    if pins.len() != num_clusters {
        return Err(Error::InvalidConfig(format!(
            "pinned policy needs exactly {} device ids, got {}",
            num_clusters,
            pins.len()
        )));
    }
    let mut seen = vec![false; num_devices];
    for &d in pins {
        if d >= num_devices {
            return Err(Error::IndexOutOfRange {
                context: "pinned device id",
                index: d,
                limit: num_devices,
            });
        }
        if seen[d] {
            return Err(Error::InvalidConfig(format!(
                "pinned device {d} appears more than once"
            )));
        }
        seen[d] = true;
    }
    Ok(())
}
