//! Orchestration: fixed-order and adaptive training over sequences,
//! deterministic rng stream layout, evaluation, and checkpointing.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::crbm::{
    apply_update, cd_m_step_cut, chain_and_probs, recon_error_j, recover_maps_cut,
    unit_mean_from_probs, FChoice, ModelParams,
};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::policy::{
    action_probs, q_backup, reward_from_error, select_action, PolicyConfig, QTable,
};
use crate::rng::SplitRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Bi,
    Tri,
    Fixed(usize),
    Adaptive,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bi" => Ok(Mode::Bi),
            "tri" => Ok(Mode::Tri),
            "adaptive" => Ok(Mode::Adaptive),
            other => {
                if let Some(n) = other.strip_prefix("fixed-") {
                    let n: usize = n
                        .parse()
                        .map_err(|_| Error::Config(format!("bad fixed order in mode '{other}'")))?;
                    Ok(Mode::Fixed(n))
                } else {
                    Err(Error::Config(format!("unknown mode '{other}'")))
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            Mode::Bi => "bi".into(),
            Mode::Tri => "tri".into(),
            Mode::Fixed(n) => format!("fixed-{n}"),
            Mode::Adaptive => "adaptive".into(),
        }
    }

    pub fn fixed_order(&self) -> Option<usize> {
        match self {
            Mode::Bi => Some(2),
            Mode::Tri => Some(3),
            Mode::Fixed(n) => Some(*n),
            Mode::Adaptive => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Number of kernels K.
    pub k: usize,
    /// Kernel side N_w.
    pub n_w: usize,
    /// CD steps m.
    pub m: usize,
    pub eta: f64,
    pub epochs: usize,
    pub discount: f64,
    pub tau: f64,
    pub f_choice: FChoice,
    pub order_min: usize,
    pub order_max: usize,
    /// Initial relational order is drawn from a rounded, clamped gaussian.
    pub init_order_mean: f64,
    pub init_order_std: f64,
    pub init_sigma: f64,
    /// Relative singular-value cutoff for the map-recovery solves during
    /// training and evaluation. Natural image maps are near rank-deficient;
    /// a stiff cutoff keeps sampling noise in the mean-field unit from being
    /// amplified through their smallest singular directions.
    pub recovery_cutoff: f64,
    pub seed: u64,
    /// Optional learning-rate blend for the Q backup; literal recursion when None.
    pub q_blend: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Bi,
            k: 4,
            n_w: 9,
            m: 1,
            eta: 0.2,
            epochs: 1,
            discount: 0.9,
            tau: 1.0,
            f_choice: FChoice::Linear,
            order_min: 2,
            order_max: 10,
            init_order_mean: 5.0,
            init_order_std: 1.0,
            init_sigma: 0.01,
            recovery_cutoff: 0.05,
            seed: 0,
            q_blend: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::Config("CD step count m must be >= 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.k < 1 || self.n_w < 1 {
            return Err(Error::Config("k and n_w must be >= 1".into()));
        }
        if self.order_min < 2 || self.order_max < self.order_min {
            return Err(Error::Config(format!(
                "invalid order bounds [{}, {}]",
                self.order_min, self.order_max
            )));
        }
        if !(0.0..1.0).contains(&self.recovery_cutoff) {
            return Err(Error::Config(format!(
                "recovery_cutoff {} must be in [0, 1)",
                self.recovery_cutoff
            )));
        }
        if let Some(n) = self.mode.fixed_order() {
            if n < 2 {
                return Err(Error::Config(format!("fixed order {n} must be >= 2")));
            }
        }
        self.policy().validate()
    }

    pub fn policy(&self) -> PolicyConfig {
        PolicyConfig {
            discount: self.discount,
            temperature: self.tau,
            f_choice: self.f_choice,
            blend: self.q_blend,
        }
    }

    /// Canonical key=value rendering; the digest is taken over this text.
    pub fn canonical_string(&self) -> String {
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("mode", self.mode.name());
        push("k", self.k.to_string());
        push("n_w", self.n_w.to_string());
        push("m", self.m.to_string());
        push("eta", format!("{:?}", self.eta));
        push("epochs", self.epochs.to_string());
        push("discount", format!("{:?}", self.discount));
        push("tau", format!("{:?}", self.tau));
        push("f_choice", self.f_choice.name().to_string());
        push("order_min", self.order_min.to_string());
        push("order_max", self.order_max.to_string());
        push("init_order_mean", format!("{:?}", self.init_order_mean));
        push("init_order_std", format!("{:?}", self.init_order_std));
        push("init_sigma", format!("{:?}", self.init_sigma));
        push("recovery_cutoff", format!("{:?}", self.recovery_cutoff));
        push("seed", self.seed.to_string());
        push(
            "q_blend",
            self.q_blend.map_or("none".into(), |b| format!("{b:?}")),
        );
        s
    }

    pub fn digest(&self) -> String {
        digest_hex(self.canonical_string().as_bytes())
    }
}

pub fn digest_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    let out = Sha256::digest(bytes);
    out.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

/// One trained unit's worth of telemetry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub seq: usize,
    pub unit_index: usize,
    pub unit_start: usize,
    pub order: usize,
    pub j: f64,
    pub reward: f64,
    /// Action delta in {-1, 0, 1}; 0 in fixed modes.
    pub action: i64,
    pub q_digest: String,
    /// Not serialized: timing is not part of the deterministic record stream.
    #[serde(skip)]
    pub wall_ms: f64,
}

// wall_ms is timing-only and excluded from equality
impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.seq == other.seq
            && self.unit_index == other.unit_index
            && self.unit_start == other.unit_start
            && self.order == other.order
            && self.j == other.j
            && self.reward == other.reward
            && self.action == other.action
            && self.q_digest == other.q_digest
    }
}

/// Parameters for one unit position within one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitModel {
    pub start: usize,
    pub order: usize,
    pub params: ModelParams,
}

/// Mutable training state; what a checkpoint captures besides config.
#[derive(Debug, Clone, PartialEq)]
pub enum RunState {
    Fixed {
        /// models[seq] lists that sequence's unit models in walk order.
        models: Vec<Vec<UnitModel>>,
    },
    Adaptive {
        /// keyed by (seq, unit start, effective order)
        models: BTreeMap<(usize, usize, usize), ModelParams>,
        qtable: QTable,
        /// current relational-order state
        state: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub next_epoch: usize,
    pub state: RunState,
    pub rng_state: (u64, u64, u128),
}

pub struct TrainOutput {
    pub records: Vec<EpochRecord>,
    pub checkpoint: Checkpoint,
}

// rng stream namespaces; keeps init, training, and policy draws independent
const NS_INIT: u64 = 1 << 56;
const NS_TRAIN: u64 = 2 << 56;
const NS_POLICY: u64 = 3 << 56;
const NS_ORDER: u64 = 4 << 56;

fn init_rng(seed: u64, seq: usize, start: usize, order: usize) -> SplitRng {
    let idx = NS_INIT | ((seq as u64) << 32) | ((start as u64) << 8) | order as u64;
    SplitRng::with_stream(seed, idx)
}

fn train_rng(seed: u64, epoch: usize, seq: usize, unit: usize) -> SplitRng {
    let idx = NS_TRAIN | ((epoch as u64) << 28) | ((seq as u64) << 12) | unit as u64;
    SplitRng::with_stream(seed, idx)
}

fn policy_rng(seed: u64, epoch: usize, seq: usize) -> SplitRng {
    let idx = NS_POLICY | ((epoch as u64) << 28) | (seq as u64);
    SplitRng::with_stream(seed, idx)
}

/// Stride-N walk with the tail rule: a short tail of >= 2 maps becomes its own
/// unit, a single leftover map joins the previous unit.
pub fn partition_units(len: usize, order: usize) -> Result<Vec<(usize, usize)>> {
    if len < 2 {
        return Err(Error::Shape(format!("sequence of length {len} is too short to train")));
    }
    let order = order.max(2).min(len);
    let mut units: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < len {
        let remaining = len - start;
        if remaining >= order {
            units.push((start, order));
            start += order;
        } else if remaining >= 2 {
            units.push((start, remaining));
            start = len;
        } else {
            // single leftover joins the previous unit
            let last = units.last_mut().unwrap();
            last.1 += 1;
            start = len;
        }
    }
    Ok(units)
}

fn seq_sides(sequences: &[Vec<Mat>]) -> Result<usize> {
    if sequences.is_empty() {
        return Err(Error::Shape("no sequences".into()));
    }
    let side = sequences[0]
        .first()
        .ok_or_else(|| Error::Shape("empty sequence".into()))?
        .side()?;
    for seq in sequences {
        for m in seq {
            if m.side()? != side {
                return Err(Error::Shape("sequences mix map sides".into()));
            }
        }
    }
    Ok(side)
}

fn train_unit(
    maps: &[Mat],
    params: &ModelParams,
    cfg: &RunConfig,
    rng: &mut SplitRng,
) -> Result<(ModelParams, f64)> {
    let res = cd_m_step_cut(maps, params, cfg.m, rng, cfg.recovery_cutoff)?;
    let j = recon_error_j(maps, &res.recon_maps, cfg.f_choice)?;
    let updated = apply_update(params, &res, cfg.eta)?;
    Ok((updated, j))
}

fn init_unit_params(
    cfg: &RunConfig,
    side: usize,
    seq: usize,
    start: usize,
    order: usize,
) -> Result<ModelParams> {
    let mut rng = init_rng(cfg.seed, seq, start, order);
    ModelParams::init_random(order, cfg.k, cfg.n_w, side, cfg.init_sigma, &mut rng)
}

fn fixed_epoch(
    models: &mut [Vec<UnitModel>],
    sequences: &[Vec<Mat>],
    epoch: usize,
    cfg: &RunConfig,
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    for (s, seq) in sequences.iter().enumerate() {
        for (u, unit) in models[s].iter_mut().enumerate() {
            let t0 = Instant::now();
            let maps = &seq[unit.start..unit.start + unit.order];
            let mut rng = train_rng(cfg.seed, epoch, s, u);
            let (updated, j) = train_unit(maps, &unit.params, cfg, &mut rng)?;
            unit.params = updated;
            records.push(EpochRecord {
                epoch,
                seq: s,
                unit_index: u,
                unit_start: unit.start,
                order: unit.order,
                j,
                reward: reward_from_error(j)?,
                action: 0,
                q_digest: String::new(),
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
        }
    }
    Ok(())
}

fn adaptive_epoch(
    models: &mut BTreeMap<(usize, usize, usize), ModelParams>,
    qtable: &mut QTable,
    state: &mut usize,
    sequences: &[Vec<Mat>],
    side: usize,
    epoch: usize,
    cfg: &RunConfig,
    records: &mut Vec<EpochRecord>,
) -> Result<()> {
    let policy = cfg.policy();
    for (s, seq) in sequences.iter().enumerate() {
        let mut action_rng = policy_rng(cfg.seed, epoch, s);
        let mut start = 0;
        let mut unit_index = 0;
        while start < seq.len() {
            let remaining = seq.len() - start;
            if remaining < 2 {
                break; // single leftover was folded into the previous unit
            }
            let t0 = Instant::now();
            // the action is taken first and the unit trains at the resulting
            // order, so the reward credited to (state, action) measures the
            // consequence of that action rather than the state it left
            let prev_state = *state;
            let probs = action_probs(qtable, prev_state, &policy)?;
            let action = select_action(&probs, &mut action_rng)?;
            let next_state = qtable.clamp_state(prev_state as i64 + action.delta());

            let mut order = next_state.min(remaining).max(2);
            if remaining - order == 1 {
                order += 1; // never strand a single map
            }
            let key = (s, start, order);
            if !models.contains_key(&key) {
                models.insert(key, init_unit_params(cfg, side, s, start, order)?);
            }
            let maps = &seq[start..start + order];
            let mut rng = train_rng(cfg.seed, epoch, s, unit_index);
            let (updated, j) = train_unit(maps, &models[&key], cfg, &mut rng)?;
            models.insert(key, updated);

            let reward = reward_from_error(j)?;
            // tail-truncated units train at an order the policy never chose;
            // crediting their reward to the state would corrupt the table
            if order == next_state {
                *qtable = q_backup(qtable, prev_state, action, reward, next_state, &policy)?;
            }
            records.push(EpochRecord {
                epoch,
                seq: s,
                unit_index,
                unit_start: start,
                order,
                j,
                reward,
                action: action.delta(),
                q_digest: qtable.digest(),
                wall_ms: t0.elapsed().as_secs_f64() * 1e3,
            });
            *state = next_state;
            start += order;
            unit_index += 1;
        }
    }
    Ok(())
}

fn draw_initial_order(cfg: &RunConfig) -> usize {
    let mut rng = SplitRng::with_stream(cfg.seed, NS_ORDER);
    let draw = rng.gaussian(cfg.init_order_mean, cfg.init_order_std).round();
    (draw as i64).clamp(cfg.order_min as i64, cfg.order_max as i64) as usize
}

fn fresh_state(cfg: &RunConfig, sequences: &[Vec<Mat>], side: usize) -> Result<RunState> {
    match cfg.mode.fixed_order() {
        Some(order) => {
            let mut models = Vec::with_capacity(sequences.len());
            for (s, seq) in sequences.iter().enumerate() {
                let units = partition_units(seq.len(), order)?;
                let mut list = Vec::with_capacity(units.len());
                for (start, n) in units {
                    list.push(UnitModel {
                        start,
                        order: n,
                        params: init_unit_params(cfg, side, s, start, n)?,
                    });
                }
                models.push(list);
            }
            Ok(RunState::Fixed { models })
        }
        None => Ok(RunState::Adaptive {
            models: BTreeMap::new(),
            qtable: QTable::new(cfg.order_min, cfg.order_max)?,
            state: draw_initial_order(cfg),
        }),
    }
}

/// Run (or resume) training to `cfg.epochs`. The returned checkpoint captures
/// the final state; resuming from an intermediate checkpoint reproduces the
/// uninterrupted run record-for-record.
pub fn run_training(
    cfg: &RunConfig,
    sequences: &[Vec<Mat>],
    resume: Option<Checkpoint>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    let side = seq_sides(sequences)?;
    let (mut state, start_epoch) = match resume {
        Some(ck) => (ck.state, ck.next_epoch),
        None => (fresh_state(cfg, sequences, side)?, 0),
    };
    let mut records = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        match &mut state {
            RunState::Fixed { models } => {
                fixed_epoch(models, sequences, epoch, cfg, &mut records)?
            }
            RunState::Adaptive { models, qtable, state: order_state } => adaptive_epoch(
                models,
                qtable,
                order_state,
                sequences,
                side,
                epoch,
                cfg,
                &mut records,
            )?,
        }
    }
    let checkpoint = Checkpoint {
        config_text: cfg.canonical_string(),
        next_epoch: cfg.epochs,
        state,
        rng_state: SplitRng::new(cfg.seed).state(),
    };
    Ok(TrainOutput { records, checkpoint })
}

/// Fixed-order training from scratch.
pub fn train_fixed(
    sequences: &[Vec<Mat>],
    order: usize,
    cfg: &RunConfig,
) -> Result<(Vec<Vec<UnitModel>>, Vec<EpochRecord>)> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Fixed(order);
    let out = run_training(&cfg, sequences, None)?;
    match out.checkpoint.state {
        RunState::Fixed { models } => Ok((models, out.records)),
        RunState::Adaptive { .. } => unreachable!(),
    }
}

/// Adaptive-order training from scratch.
pub fn train_adaptive(
    sequences: &[Vec<Mat>],
    cfg: &RunConfig,
) -> Result<(BTreeMap<(usize, usize, usize), ModelParams>, QTable, Vec<EpochRecord>)> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Adaptive;
    let out = run_training(&cfg, sequences, None)?;
    match out.checkpoint.state {
        RunState::Adaptive { models, qtable, .. } => Ok((models, qtable, out.records)),
        RunState::Fixed { .. } => unreachable!(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitEval {
    pub unit_start: usize,
    pub order: usize,
    pub j: f64,
}

/// Deterministic mean-field reconstruction pass; no parameter updates.
/// Total J is the exact sum of the per-unit values.
pub fn evaluate(
    models: &[UnitModel],
    sequence: &[Mat],
    cfg: &RunConfig,
) -> Result<(Vec<UnitEval>, f64)> {
    let mut covered = 0;
    let mut out = Vec::with_capacity(models.len());
    let mut total = 0.0;
    for unit in models {
        if unit.start != covered || unit.start + unit.order > sequence.len() {
            return Err(Error::Shape(format!(
                "unit at {} (order {}) does not tile a length-{} sequence",
                unit.start,
                unit.order,
                sequence.len()
            )));
        }
        let maps = &sequence[unit.start..unit.start + unit.order];
        let (_, probs) = chain_and_probs(maps, &unit.params)?;
        let o_bar = unit_mean_from_probs(&probs, &unit.params)?;
        let recon = recover_maps_cut(&o_bar, maps, &unit.params, cfg.recovery_cutoff)?;
        let j = recon_error_j(maps, &recon, cfg.f_choice)?;
        out.push(UnitEval { unit_start: unit.start, order: unit.order, j });
        total += j;
        covered += unit.order;
    }
    if covered != sequence.len() {
        return Err(Error::Shape(format!(
            "models cover {covered} of {} maps",
            sequence.len()
        )));
    }
    Ok((out, total))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn correlated_sequence(len: usize, side: usize) -> Vec<Mat> {
        let img = Mat::from_fn(side, side, |r, c| {
            let d = ((r as f64 - side as f64 / 2.0).powi(2)
                + (c as f64 - side as f64 / 2.0).powi(2))
            .sqrt();
            (1.0 - d / side as f64).clamp(0.0, 1.0)
        });
        vec![img; len]
    }

    fn desk_cfg(mode: Mode) -> RunConfig {
        RunConfig {
            mode,
            k: 2,
            n_w: 3,
            m: 1,
            eta: 0.2,
            epochs: 30,
            seed: 11,
            ..RunConfig::default()
        }
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition_units(6, 6).unwrap(), vec![(0, 6)]);
        assert_eq!(partition_units(7, 3).unwrap(), vec![(0, 3), (3, 4)]);
        assert_eq!(partition_units(5, 2).unwrap(), vec![(0, 2), (2, 3)]);
        assert_eq!(partition_units(4, 10).unwrap(), vec![(0, 4)]);
        assert!(partition_units(1, 2).is_err());
    }

    #[test]
    fn fixed_training_reduces_j_on_identical_maps() {
        let seqs = vec![correlated_sequence(6, 8)];
        let mut cfg = desk_cfg(Mode::Bi);
        cfg.epochs = 50;
        let (_, records) = train_fixed(&seqs, 2, &cfg).unwrap();
        let per_epoch: Vec<f64> = (0..cfg.epochs)
            .map(|e| {
                let js: Vec<f64> =
                    records.iter().filter(|r| r.epoch == e).map(|r| r.j).collect();
                js.iter().sum::<f64>() / js.len() as f64
            })
            .collect();
        let first: f64 = per_epoch[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = per_epoch[cfg.epochs - 10..].iter().sum::<f64>() / 10.0;
        assert!(last < first, "first={first} last={last}");
    }

    #[test]
    fn single_unit_when_order_is_length() {
        let seqs = vec![correlated_sequence(4, 6)];
        let mut cfg = desk_cfg(Mode::Fixed(4));
        cfg.epochs = 1;
        let (models, records) = train_fixed(&seqs, 4, &cfg).unwrap();
        assert_eq!(models[0].len(), 1);
        assert_eq!(records.len(), 1);
    }

    #[test]
    fn adaptive_unit_accounting_single_epoch() {
        let seqs = vec![correlated_sequence(12, 6)];
        let mut cfg = desk_cfg(Mode::Adaptive);
        cfg.epochs = 1;
        let (_, _, records) = train_adaptive(&seqs, &cfg).unwrap();
        let consumed: usize = records.iter().map(|r| r.order).sum();
        assert_eq!(consumed, 12);
        // orders stay in range and q legality holds throughout
        for r in &records {
            assert!(r.order >= 2);
            assert!((-1..=1).contains(&r.action));
        }
    }

    #[test]
    fn adaptive_j_trend_on_identical_maps() {
        let seqs = vec![correlated_sequence(12, 8)];
        let mut cfg = desk_cfg(Mode::Adaptive);
        cfg.epochs = 40;
        let (_, _, records) = train_adaptive(&seqs, &cfg).unwrap();
        let quarter = cfg.epochs / 4;
        let mean_j = |lo: usize, hi: usize| {
            let js: Vec<f64> = records
                .iter()
                .filter(|r| r.epoch >= lo && r.epoch < hi)
                .map(|r| r.j)
                .collect();
            js.iter().sum::<f64>() / js.len() as f64
        };
        assert!(mean_j(cfg.epochs - quarter, cfg.epochs) < mean_j(0, quarter));
    }

    #[test]
    fn determinism_of_records() {
        let seqs = vec![correlated_sequence(8, 6), correlated_sequence(6, 6)];
        let mut cfg = desk_cfg(Mode::Adaptive);
        cfg.epochs = 5;
        let (_, _, a) = train_adaptive(&seqs, &cfg).unwrap();
        let (_, _, b) = train_adaptive(&seqs, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn evaluate_is_pure_and_additive() {
        let seqs = vec![correlated_sequence(7, 6)];
        let mut cfg = desk_cfg(Mode::Bi);
        cfg.epochs = 3;
        let (models, _) = train_fixed(&seqs, 3, &cfg).unwrap();
        let (units, total) = evaluate(&models[0], &seqs[0], &cfg).unwrap();
        let (units2, total2) = evaluate(&models[0], &seqs[0], &cfg).unwrap();
        assert_eq!(units, units2);
        assert_eq!(total, total2);
        let sum: f64 = units.iter().map(|u| u.j).sum();
        assert!((sum - total).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_accounting() {
        // higher order allocates fewer unit models over the same length
        for (len, order, expected) in [(12, 2, 6), (12, 3, 4), (12, 6, 2), (12, 4, 3)] {
            assert_eq!(partition_units(len, order).unwrap().len(), expected);
        }
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let seqs = vec![correlated_sequence(8, 6)];
        for mode in [Mode::Bi, Mode::Adaptive] {
            let mut cfg = desk_cfg(mode);
            cfg.epochs = 8;
            let full = run_training(&cfg, &seqs, None).unwrap();

            let mut cfg_half = cfg.clone();
            cfg_half.epochs = 4;
            let half = run_training(&cfg_half, &seqs, None).unwrap();
            let resumed = run_training(&cfg, &seqs, Some(half.checkpoint)).unwrap();

            let tail: Vec<&EpochRecord> =
                full.records.iter().filter(|r| r.epoch >= 4).collect();
            assert_eq!(tail.len(), resumed.records.len());
            for (a, b) in tail.iter().zip(&resumed.records) {
                assert_eq!(*a, b);
            }
            assert_eq!(full.checkpoint.state, resumed.checkpoint.state);
        }
    }
}
