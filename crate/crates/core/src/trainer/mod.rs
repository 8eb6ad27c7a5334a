//! Alternating min-max training, early stopping and run artifacts.

mod checkpoint;
mod config;
mod run_dir;

use std::rc::Rc;
use std::time::Instant;

use ndarray::{s, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{ModelKind, TrainConfig};
pub use run_dir::RunDir;

use crate::autograd::{spmm, Tape};
use crate::dataset::{DataSplit, InteractionGraph, SensitivePartition};
use crate::discriminator::{self, fuse_on_tape, fuse_user_embeddings, label_column, predict_attribute, DiscriminatorParams};
use crate::encoder::{
    bpr_on_tape, l2_on_tape, propagate, propagate_on_tape, sample_triples, EmbeddingTable, EncoderParams, View,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricsReport};
use crate::nn::{Adam, Parameters};
use crate::objectives::{contrastive_batch, nce_on_tape, LossBreakdown};
use crate::view_generative::{generate_view_g2, generative_on_tape, sample_negative_pairs, GenerativeSample, VgaeParams};
use crate::view_recognition::{generate_view_g1, recognition_on_tape, EdgeScorerParams, EtaMode, RecognitionSample};

/// Interaction data prepared for training.
#[derive(Clone, Debug)]
pub struct TrainData {
    pub graph: Rc<InteractionGraph>,
    pub train: Vec<(usize, usize)>,
    pub valid: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub partition: SensitivePartition,
    labels: Rc<Array2<f64>>,
    hash: String,
}

impl TrainData {
    pub fn new(split: &DataSplit, partition: SensitivePartition, n_users: usize, n_items: usize) -> Result<Self> {
        if split.train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if partition.n_users() != n_users {
            return Err(Error::Shape(format!(
                "partition covers {} users, data has {n_users}",
                partition.n_users()
            )));
        }
        for &(u, v) in split.train.iter().chain(&split.valid).chain(&split.test) {
            if u >= n_users || v >= n_items {
                return Err(Error::Data(format!(
                    "interaction ({u}, {v}) outside {n_users} users x {n_items} items"
                )));
            }
        }
        let mut h = Sha256::new();
        h.update(format!("{n_users} {n_items}\n"));
        for (tag, part) in [("train", &split.train), ("valid", &split.valid), ("test", &split.test)] {
            h.update(tag);
            for &(u, v) in part.iter() {
                h.update(format!("{u},{v};"));
            }
        }
        h.update(partition.labels());
        Ok(Self {
            graph: Rc::new(InteractionGraph::new(split.train.iter().copied(), n_users, n_items)),
            train: split.train.clone(),
            valid: split.valid.clone(),
            test: split.test.clone(),
            labels: label_column(partition.labels()),
            partition,
            hash: config::hex(&h.finalize()),
        })
    }

    pub fn n_users(&self) -> usize {
        self.graph.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.graph.n_items()
    }

    /// Digest of the split and attribute labels.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn labels(&self) -> &Rc<Array2<f64>> {
        &self.labels
    }
}

/// Base embeddings (θ_f), both view generators (θ_g) and the discriminator
/// (θ_d).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub scorer: EdgeScorerParams,
    pub vgae: VgaeParams,
    pub disc: DiscriminatorParams,
}

impl ModelParams {
    /// Base embeddings come from stream 0 of the seed, everything else from
    /// stream 1, so the encoder initialisation does not depend on the other
    /// networks.
    pub fn init(config: &TrainConfig, n_users: usize, n_items: usize) -> Self {
        let mut r0 = ChaCha8Rng::seed_from_u64(config.seed);
        r0.set_stream(0);
        let encoder = EncoderParams::init(n_users, n_items, config.dim, config.n_layers, &mut r0);
        let mut r1 = ChaCha8Rng::seed_from_u64(config.seed);
        r1.set_stream(1);
        let scorer = EdgeScorerParams::new(config.dim, config.scorer_hidden, &mut r1);
        let vgae = VgaeParams::new(config.dim, config.dim, config.vgae_layers, &mut r1);
        let disc = DiscriminatorParams::new(config.dim, config.disc_hidden, &mut r1);
        Self {
            encoder,
            scorer,
            vgae,
            disc,
        }
    }

    /// θ_g tensors: edge scorer then VGAE.
    pub fn generator_tensors(&self) -> Vec<&Array2<f64>> {
        let mut t = self.scorer.tensors();
        t.extend(self.vgae.tensors());
        t
    }

    fn generator_tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut t = self.scorer.tensors_mut();
        t.extend(self.vgae.tensors_mut());
        t
    }

    /// Named tensors in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = vec![("encoder.embeddings".to_string(), self.encoder.embeddings.matrix())];
        for (prefix, ts) in [
            ("scorer", self.scorer.tensors()),
            ("vgae", self.vgae.tensors()),
            ("disc", self.disc.tensors()),
        ] {
            out.extend(ts.into_iter().enumerate().map(|(i, t)| (format!("{prefix}.{i}"), t)));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![self.encoder.embeddings.matrix_mut()];
        out.extend(self.scorer.tensors_mut());
        out.extend(self.vgae.tensors_mut());
        out.extend(self.disc.tensors_mut());
        out
    }
}

/// One Adam instance per parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub f: Adam,
    pub g: Adam,
    pub d: Adam,
}

impl Optimizers {
    pub fn new(config: &TrainConfig, params: &ModelParams) -> Self {
        let shapes = |ts: Vec<&Array2<f64>>| ts.iter().map(|t| t.dim()).collect::<Vec<_>>();
        let make = |s: Vec<(usize, usize)>| Adam::new(config.learning_rate, &s).with_clip(config.clip_norm);
        Self {
            f: make(vec![params.encoder.embeddings.matrix().dim()]),
            g: make(shapes(params.generator_tensors())),
            d: make(params.disc.shapes()),
        }
    }
}

/// Validation-based early stopping bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub best_epoch: Option<usize>,
    pub best_ndcg: f64,
    pub bad_epochs: usize,
    pub stopped: bool,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            best_epoch: None,
            best_ndcg: -1.0,
            bad_epochs: 0,
            stopped: false,
        }
    }
}

impl EarlyStop {
    /// Records one validation score; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, ndcg: f64, patience: usize) -> bool {
        if ndcg > self.best_ndcg {
            self.best_ndcg = ndcg;
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            if patience > 0 && self.bad_epochs >= patience {
                self.stopped = true;
            }
            false
        }
    }
}

/// Phase-one output: the loss terms and the detached fused user embeddings
/// the discriminator trains on.
pub struct MinPhase {
    pub losses: LossBreakdown,
    pub fused: Array2<f64>,
}

fn numeric_guard(losses: &LossBreakdown) -> Result<()> {
    if losses.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(serde_json::to_string(losses).unwrap_or_else(|_| format!("{losses:?}"))))
    }
}

/// Minimization phase: generates both views, evaluates every loss term and
/// takes one Adam step on θ_f and θ_g with θ_d held constant. `graph` is the
/// message-passing graph; negatives are always drawn against `data.graph`.
pub fn phase_min(
    state: &mut Checkpoint,
    data: &TrainData,
    graph: &Rc<InteractionGraph>,
    batch: &[(usize, usize)],
) -> Result<MinPhase> {
    let cfg = state.config.clone();
    let nu = data.n_users();
    let triples = sample_triples(&data.graph, batch, &mut state.rng);
    if triples.is_empty() {
        return Err(Error::Data("batch has no user with an unobserved item".into()));
    }
    let tape = Tape::new();
    let e0 = tape.param(state.params.encoder.embeddings.matrix().clone());
    let main = propagate_on_tape(&tape, graph, e0, &vec![None; cfg.n_layers]);
    let bpr_main = bpr_on_tape(&tape, main.output, &triples, nu);
    let reg = (cfg.reg > 0.0).then(|| l2_on_tape(&tape, e0, &triples, nu, cfg.reg));
    let mut losses = LossBreakdown {
        alpha: cfg.alpha,
        beta: cfg.beta,
        ..Default::default()
    };
    let mut total = bpr_main;
    if let Some(r) = reg {
        total = tape.add(total, r);
    }

    let adversarial = cfg.model == ModelKind::Fairdgcl;
    let mut generator_vars = None;
    let fused_var;
    if adversarial {
        let scorer = state.params.scorer.bind(&tape, true);
        let vgae = state.params.vgae.bind(&tape, true);
        let disc = state.params.disc.bind(&tape, false);
        let keeps = recognition_on_tape(
            &tape,
            graph,
            &main.layers[..cfg.n_layers],
            &scorer,
            cfg.tau_r,
            EtaMode::Sampled,
            &mut state.rng,
        );
        let keep_vars: Vec<_> = keeps.iter().map(|k| Some(k.keep)).collect();
        let v1 = propagate_on_tape(&tape, graph, e0, &keep_vars);
        let negatives = sample_negative_pairs(graph, cfg.vgae_negatives, &mut state.rng);
        let gen = generative_on_tape(&tape, graph, e0, &vgae, &negatives, &mut state.rng);
        let v2 = propagate_on_tape(&tape, graph, e0, &vec![Some(gen.keep); cfg.n_layers]);
        let bpr_rec = bpr_on_tape(&tape, v1.output, &triples, nu);
        let bpr_gen = bpr_on_tape(&tape, v2.output, &triples, nu);
        let nodes = contrastive_batch(&triples, nu, cfg.nce_batch, &mut state.rng);
        if nodes.len() < 2 {
            return Err(Error::Data(format!(
                "contrastive batch has {} node(s); increase batch_size",
                nodes.len()
            )));
        }
        let nce = nce_on_tape(&tape, v1.output, v2.output, Rc::new(nodes), cfg.tau, cfg.nce_denominator);
        let fused = fuse_on_tape(&tape, v1.output, v2.output, nu);
        let vd = disc.loss(&tape, fused, &data.labels);
        fused_var = fused;

        let vg = tape.add(
            tape.add(gen.loss, tape.add(bpr_rec, bpr_gen)),
            tape.scale(nce, cfg.alpha),
        );
        total = tape.sub(tape.add(total, vg), tape.scale(vd, cfg.beta));
        losses.l_bpr_rec = tape.item(bpr_rec);
        losses.l_bpr_gen = tape.item(bpr_gen);
        losses.l_vgae = tape.item(gen.loss);
        losses.l_nce = tape.item(nce);
        losses.l_vd = tape.item(vd);
        generator_vars = Some((scorer, vgae));
    } else {
        fused_var = tape.gather_rows(main.output, Rc::new((0..nu).collect()));
        let disc = state.params.disc.bind(&tape, false);
        let vd = disc.loss(&tape, fused_var, &data.labels);
        losses.l_vd = tape.item(vd);
        losses.beta = 0.0;
        losses.alpha = 0.0;
    }
    losses.l_bpr_main = tape.item(bpr_main);
    losses.l_reg = reg.map_or(0.0, |r| tape.item(r));
    let losses = losses.assemble();
    numeric_guard(&losses)?;
    let fused = tape.value(fused_var).clone();

    let grads = tape.backward(total);
    let gf = grads.get_or_zeros(e0, state.params.encoder.embeddings.matrix().dim());
    state
        .optim
        .f
        .update(vec![state.params.encoder.embeddings.matrix_mut()], vec![gf]);
    if let Some((scorer, vgae)) = generator_vars {
        let mut gg = scorer.collect_grads(&grads, &state.params.scorer);
        gg.extend(vgae.collect_grads(&grads, &state.params.vgae));
        state.optim.g.update(state.params.generator_tensors_mut(), gg);
    }
    Ok(MinPhase { losses, fused })
}

/// Maximization phase: `disc_steps` Adam steps on θ_d minimizing the
/// discriminator cross-entropy on fixed fused embeddings. Returns the loss
/// before the first step.
pub fn phase_max(state: &mut Checkpoint, fused: &Array2<f64>, labels: &Rc<Array2<f64>>) -> Result<f64> {
    let mut first = None;
    for _ in 0..state.config.disc_steps {
        let tape = Tape::new();
        let disc = state.params.disc.bind(&tape, true);
        let x = tape.constant(fused.clone());
        let loss = disc.loss(&tape, x, labels);
        let value = tape.item(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("discriminator loss {value}")));
        }
        first.get_or_insert(value);
        let grads = disc.collect_grads(&tape.backward(loss), &state.params.disc);
        state.optim.d.update(state.params.disc.tensors_mut(), grads);
    }
    Ok(first.unwrap_or(0.0))
}

/// One generator step followed by the discriminator step(s).
pub fn adversarial_step(
    state: &mut Checkpoint,
    data: &TrainData,
    graph: &Rc<InteractionGraph>,
    batch: &[(usize, usize)],
) -> Result<LossBreakdown> {
    let MinPhase { losses, fused } = phase_min(state, data, graph, batch)?;
    phase_max(state, &fused, &data.labels)?;
    Ok(losses)
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub valid: MetricsReport,
    pub disc_acc: f64,
    pub disc_auc: f64,
    /// Fraction of training edges kept by the random-drop baseline.
    pub kept_fraction: Option<f64>,
    pub wall_s: f64,
}

impl EpochRecord {
    pub fn to_json(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("epoch".into(), Value::from(self.epoch));
        if let Value::Object(l) = serde_json::to_value(self.losses).expect("finite losses") {
            m.extend(l);
        }
        m.extend(self.valid.to_json_map("val_"));
        m.insert("disc_acc".into(), Value::from(self.disc_acc));
        m.insert("disc_auc".into(), Value::from(self.disc_auc));
        if let Some(k) = self.kept_fraction {
            m.insert("kept_fraction".into(), Value::from(k));
        }
        m.insert("wall_s".into(), Value::from(self.wall_s));
        m
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&Value::Object(self.to_json())).expect("finite record")
    }
}

/// Layer outputs `h⁰..h^{L-1}` of plain propagation, the inputs of the
/// recognition scorer.
fn layer_embeddings(graph: &InteractionGraph, e0: &Array2<f64>, n_layers: usize) -> Vec<Array2<f64>> {
    let mut out = vec![e0.clone()];
    for _ in 1..n_layers {
        let next = spmm(graph, None, out.last().expect("non-empty"));
        out.push(next);
    }
    out
}

/// Freshly generated views with the fused user embeddings they induce.
pub struct ViewDiagnostics {
    pub fused: Array2<f64>,
    pub views: Option<(RecognitionSample, GenerativeSample)>,
}

/// Fused user embeddings of freshly generated views; the baselines have no
/// views and use the main encoding.
pub fn fused_embeddings(state: &mut Checkpoint, data: &TrainData) -> Result<ViewDiagnostics> {
    let cfg = &state.config;
    let params = &state.params;
    if cfg.model != ModelKind::Fairdgcl {
        let h = propagate(View::Plain(&data.graph), &params.encoder)?;
        return Ok(ViewDiagnostics {
            fused: h.matrix().slice(s![..data.n_users(), ..]).to_owned(),
            views: None,
        });
    }
    let e0 = params.encoder.embeddings.matrix();
    let layers = layer_embeddings(&data.graph, e0, cfg.n_layers);
    let g1 = generate_view_g1(&data.graph, &layers, &params.scorer, cfg.tau_r, EtaMode::Sampled, &mut state.rng)?;
    let g2 = generate_view_g2(&data.graph, &params.encoder.embeddings, &params.vgae, cfg.n_layers, &mut state.rng)?;
    let h1 = propagate(View::Augmented(&g1.view), &params.encoder)?;
    let h2 = propagate(View::Augmented(&g2.view), &params.encoder)?;
    Ok(ViewDiagnostics {
        fused: fuse_user_embeddings(&h1, &h2)?,
        views: Some((g1, g2)),
    })
}

/// Final user/item representations used for ranking.
pub fn final_embeddings(params: &ModelParams, graph: &InteractionGraph) -> Result<EmbeddingTable> {
    propagate(View::Plain(graph), &params.encoder)
}

/// Validation cutoffs: the configured ones plus 10 for early stopping.
fn validation_ks(config: &TrainConfig) -> Vec<usize> {
    let mut ks = config.eval_ks.clone();
    if !ks.contains(&10) {
        ks.push(10);
        ks.sort_unstable();
    }
    ks
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the epoch with the best validation NDCG@10.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// Drives epochs over a [`Checkpoint`], optionally persisting artifacts.
pub struct Trainer<'a> {
    state: Checkpoint,
    best: Checkpoint,
    data: &'a TrainData,
    run: Option<RunDir>,
    history: Vec<EpochRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a TrainData) -> Result<Self> {
        config.validate()?;
        let state = Checkpoint::init(config, data);
        Ok(Self {
            best: state.clone(),
            state,
            data,
            run: None,
            history: Vec::new(),
        })
    }

    /// Continues from `latest`; `best` defaults to `latest`.
    pub fn resume(latest: Checkpoint, best: Option<Checkpoint>, data: &'a TrainData) -> Result<Self> {
        latest.config.validate()?;
        latest.verify_data(data)?;
        let best = best.unwrap_or_else(|| latest.clone());
        best.verify_config(&latest.config)?;
        Ok(Self {
            state: latest,
            best,
            data,
            run: None,
            history: Vec::new(),
        })
    }

    pub fn with_run_dir(mut self, run: RunDir) -> Result<Self> {
        run.truncate_metrics(self.state.epoch)?;
        self.run = Some(run);
        Ok(self)
    }

    pub fn state(&self) -> &Checkpoint {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut Checkpoint {
        &mut self.state
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    fn epoch_graph(&mut self) -> (Rc<InteractionGraph>, Option<f64>) {
        let cfg = &self.state.config;
        if cfg.model != ModelKind::Randomdrop {
            return (Rc::clone(&self.data.graph), None);
        }
        let rate = cfg.drop_rate;
        let rng = &mut self.state.rng;
        let g = self.data.graph.subgraph(|_, _| rng.gen::<f64>() >= rate);
        let kept = g.n_edges() as f64 / self.data.graph.n_edges() as f64;
        if let Some(run) = &self.run {
            if let Err(e) = run.write_dropped_graph(self.state.epoch + 1, &g) {
                log::warn!("{e}");
            }
        }
        (Rc::new(g), Some(kept))
    }

    /// Trains one epoch and evaluates on the validation split.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let start = Instant::now();
        let mut edges = self.data.train.clone();
        edges.shuffle(&mut self.state.rng);
        let (graph, kept_fraction) = self.epoch_graph();
        let bs = self.state.config.batch_size;
        let mut parts = Vec::with_capacity(edges.len().div_ceil(bs));
        for batch in edges.chunks(bs) {
            match adversarial_step(&mut self.state, self.data, &graph, batch) {
                Ok(l) => parts.push(l),
                Err(e) => {
                    if let (Error::Numeric(_), Some(run)) = (&e, &self.run) {
                        run.write_abort(self.state.epoch + 1, parts.len(), &e)?;
                    }
                    return Err(e);
                }
            }
        }
        self.state.epoch += 1;
        let losses = LossBreakdown::mean(&parts);

        let h = final_embeddings(&self.state.params, &self.data.graph)?;
        let valid = evaluate(
            &h,
            &self.data.graph,
            &self.data.valid,
            &self.data.partition,
            &validation_ks(&self.state.config),
        )?;
        let diag = fused_embeddings(&mut self.state, self.data)?;
        if let (Some(run), Some((g1, g2))) = (&self.run, &diag.views) {
            run.write_view_dumps(self.state.epoch, g1, g2)?;
        }
        let probs = predict_attribute(&diag.fused, &self.state.params.disc)?;
        let labels = self.data.partition.labels();
        let record = EpochRecord {
            epoch: self.state.epoch,
            losses,
            disc_acc: discriminator::accuracy(&probs, labels),
            disc_auc: discriminator::auc(&probs, labels),
            kept_fraction,
            wall_s: start.elapsed().as_secs_f64(),
            valid,
        };
        let ndcg = record.valid.at(10).map_or(0.0, |c| c.ndcg);
        let patience = self.state.config.patience;
        let improved = self.state.early.observe(self.state.epoch, ndcg, patience);
        if improved {
            self.best = self.state.clone();
        }
        if let Some(run) = &self.run {
            run.append_metrics(&record)?;
            run.save(&self.state, improved)?;
        }
        log::info!(
            "epoch {} loss {:.5} val recall@10 {:.4} ndcg@10 {:.4} phi_r@10 {:.4} disc_acc {:.3} ({:.1}s)",
            record.epoch,
            record.losses.total,
            record.valid.at(10).map_or(0.0, |c| c.recall),
            ndcg,
            record.valid.at(10).map_or(0.0, |c| c.phi_r),
            record.disc_acc,
            record.wall_s
        );
        self.history.push(record.clone());
        Ok(record)
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.state.config.epochs || self.state.early.stopped
    }

    pub fn train(mut self) -> Result<TrainOutcome> {
        if self.state.epoch == 0 {
            if let Some(run) = &self.run {
                run.save(&self.state, true)?;
            }
        }
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(TrainOutcome {
            best: self.best,
            last: self.state,
            history: self.history,
        })
    }
}

/// Trains from scratch without writing artifacts.
pub fn train(config: TrainConfig, data: &TrainData) -> Result<TrainOutcome> {
    Trainer::new(config, data)?.train()
}
