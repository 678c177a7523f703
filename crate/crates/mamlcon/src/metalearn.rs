//! Meta-learning algorithms and the continual deployment engine.
//!
//! The inner loop introduces class groups sequentially: widen the mask, run
//! T full-batch Adam steps on the group's support set (T=30 for the first
//! group to saturate the model, T=5 afterwards), store one template per new
//! class, then take a single batched update step on the templates of every
//! class seen so far. Meta-training wraps that loop in a first-order outer
//! update of the initial weights; test-time deployment is the same loop run
//! once from the meta-learned initialization.
//!
//! The OML baseline shares the machinery but freezes the feature extractor
//! inside the inner loop and does no template rehearsal.

use rand::{Rng, RngCore};
use rayon::prelude::*;

use indexmap::IndexMap;

use crate::episodes::{sample_episode, Batch, Episode, ScenarioSpec};
use crate::error::{Error, Result};
use crate::model::{argmax_masked, ClassMask, ModelConfig};
use crate::nn::{adam_step, model_backward, softmax_cross_entropy, AdamState, GradientSet, ParameterSet, Tensor};
use crate::seeding::rng_from;

/// Inner-loop schedule and step size.
#[derive(Clone, Debug, PartialEq)]
pub struct InnerLoopConfig {
    /// Adaptation steps for the first class group.
    pub t_initial: usize,
    /// Adaptation steps for every later group.
    pub t_step: usize,
    /// Inner learning rate α (also used for the template step).
    pub inner_lr: f64,
    /// Template rehearsal updates per group. The method fixes this to 1;
    /// other values exist only for ablation.
    pub template_steps: usize,
}

impl Default for InnerLoopConfig {
    fn default() -> Self {
        InnerLoopConfig {
            t_initial: 30,
            t_step: 5,
            inner_lr: 0.001,
            template_steps: 1,
        }
    }
}

impl InnerLoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_initial < self.t_step {
            return Err(Error::Config(format!(
                "t_initial ({}) must be at least t_step ({})",
                self.t_initial, self.t_step
            )));
        }
        if !(self.inner_lr > 0.0) {
            return Err(Error::Config("inner learning rate must be positive".into()));
        }
        Ok(())
    }
}

/// Outer-loop (meta-training) settings.
#[derive(Clone, Debug)]
pub struct MetaTrainConfig {
    /// Outer learning rate β.
    pub outer_lr: f64,
    pub meta_iterations: usize,
    pub tasks_per_meta_batch: usize,
    pub scenario: ScenarioSpec,
    /// Held-out test examples drawn per class in each episode.
    pub test_examples_per_class: usize,
    pub seed: u64,
}

impl MetaTrainConfig {
    pub fn new(scenario: ScenarioSpec, meta_iterations: usize, seed: u64) -> Self {
        MetaTrainConfig {
            outer_lr: 0.0001,
            meta_iterations,
            tasks_per_meta_batch: 4,
            scenario,
            test_examples_per_class: 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.outer_lr > 0.0) {
            return Err(Error::Config("outer learning rate must be positive".into()));
        }
        if self.tasks_per_meta_batch == 0 {
            return Err(Error::Config("tasks_per_meta_batch must be positive".into()));
        }
        if self.test_examples_per_class == 0 {
            return Err(Error::Config("test_examples_per_class must be positive".into()));
        }
        Ok(())
    }
}

/// Which parameters the inner loop may update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdaptScope {
    /// Update the whole network (MAMLCon and the fine-tuning baseline).
    FullNetwork,
    /// Update only the dense head; the feature extractor stays bitwise
    /// frozen (OML's inner loop).
    HeadOnly,
}

/// Inner-loop behaviour of one algorithm.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeployPolicy {
    pub scope: AdaptScope,
    pub rehearse_templates: bool,
}

impl DeployPolicy {
    pub fn mamlcon() -> Self {
        DeployPolicy {
            scope: AdaptScope::FullNetwork,
            rehearse_templates: true,
        }
    }

    pub fn oml() -> Self {
        DeployPolicy {
            scope: AdaptScope::HeadOnly,
            rehearse_templates: false,
        }
    }
}

/// One stored rehearsal example.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateEntry {
    pub features: Tensor,
    pub head_index: usize,
}

/// Exactly one stored example per class seen so far, in introduction order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TemplateStore {
    entries: IndexMap<usize, TemplateEntry>,
}

impl TemplateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, class_id: usize) -> bool {
        self.entries.contains_key(&class_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &TemplateEntry)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    pub fn get(&self, class_id: usize) -> Option<&TemplateEntry> {
        self.entries.get(&class_id)
    }

    /// All templates as one batch, in introduction order.
    pub fn batch(&self) -> Result<Batch> {
        let items: Vec<(&Tensor, usize)> = self
            .entries
            .values()
            .map(|e| (&e.features, e.head_index))
            .collect();
        Batch::from_examples(&items)
    }
}

/// A class being introduced to a model: its id, the head row it maps to,
/// and its K support examples.
#[derive(Clone, Debug)]
pub struct NewClass<'a> {
    pub class_id: usize,
    pub head_index: usize,
    pub support: &'a [Tensor],
}

/// T full-batch Adam steps on the batch's cross-entropy loss.
///
/// With `steps = 0` the inputs come back untouched. `HeadOnly` scope zeroes
/// feature-extractor gradients before each update, which keeps those weights
/// (and their optimizer moments) exactly at their incoming values.
pub fn inner_adapt(
    model: &ModelConfig,
    params: ParameterSet,
    opt: AdamState,
    batch: &Batch,
    mask: &ClassMask,
    steps: usize,
    lr: f64,
    scope: AdaptScope,
) -> Result<(ParameterSet, AdamState)> {
    let mut params = params;
    let mut opt = opt;
    let fe_names = match scope {
        AdaptScope::FullNetwork => Vec::new(),
        AdaptScope::HeadOnly => model.fe_param_names()?,
    };
    for _ in 0..steps {
        let (logits, tape) = model.predict(&params, &batch.inputs, mask)?;
        let (_loss, dlogits) = softmax_cross_entropy(&logits, &batch.labels, mask.as_slice())?;
        let mut grads = model_backward(&tape, &params, &dlogits)?;
        if scope == AdaptScope::HeadOnly {
            grads.zero_names(fe_names.iter().map(String::as_str))?;
        }
        let (p, o) = adam_step(&params, &grads, &opt, lr)?;
        params = p;
        opt = o;
    }
    Ok((params, opt))
}

/// Append one uniformly chosen support example per new class.
pub fn store_templates(
    store: TemplateStore,
    classes: &[NewClass<'_>],
    rng: &mut impl Rng,
) -> Result<TemplateStore> {
    let mut store = store;
    for class in classes {
        if store.contains(class.class_id) {
            return Err(Error::State(format!(
                "class {} already has a template",
                class.class_id
            )));
        }
        if class.support.is_empty() {
            return Err(Error::Data(format!(
                "class {} has no support examples to template",
                class.class_id
            )));
        }
        let pick = rng.random_range(0..class.support.len());
        store.entries.insert(
            class.class_id,
            TemplateEntry {
                features: class.support[pick].clone(),
                head_index: class.head_index,
            },
        );
    }
    Ok(store)
}

/// One Adam step on the mean cross-entropy over all stored templates,
/// treated as a single batch.
///
/// An empty store is degenerate: the inputs pass through unchanged and a
/// warning is logged.
pub fn template_step(
    model: &ModelConfig,
    params: ParameterSet,
    opt: AdamState,
    store: &TemplateStore,
    mask: &ClassMask,
    lr: f64,
) -> Result<(ParameterSet, AdamState)> {
    if store.is_empty() {
        log::warn!("template step requested with an empty store; skipping");
        return Ok((params, opt));
    }
    for (class_id, entry) in store.iter() {
        if !mask.is_marked(entry.head_index) {
            return Err(Error::State(format!(
                "template for class {class_id} maps to masked-out head row {}",
                entry.head_index
            )));
        }
    }
    let batch = store.batch()?;
    inner_adapt(model, params, opt, &batch, mask, 1, lr, AdaptScope::FullNetwork)
}

/// Snapshot taken right after a group's adaptation phase (and template step).
#[derive(Clone, Debug)]
pub struct GroupSnapshot {
    pub params: ParameterSet,
    pub mask: ClassMask,
    pub store_size: usize,
    /// Cumulative optimizer steps at snapshot time.
    pub opt_steps: u64,
    /// Adaptation steps this group ran (T).
    pub adapt_steps: usize,
    /// Template updates this group ran.
    pub template_steps: usize,
}

/// An in-progress continual learner: parameters, optimizer state, mask, and
/// template store, advanced one class group at a time.
///
/// Both meta-training inner loops and test-time deployment drive this same
/// engine; the optimizer state is created fresh here and lives for the whole
/// session, modelling one deployment lifetime.
pub struct DeploymentSession {
    model: ModelConfig,
    inner: InnerLoopConfig,
    policy: DeployPolicy,
    params: ParameterSet,
    opt: AdamState,
    mask: ClassMask,
    store: TemplateStore,
    groups_learned: usize,
}

/// What one `learn_group` call actually executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupOutcome {
    pub adapt_steps: usize,
    pub template_steps: usize,
}

impl DeploymentSession {
    pub fn new(
        model: ModelConfig,
        initial_params: ParameterSet,
        inner: InnerLoopConfig,
        policy: DeployPolicy,
    ) -> Result<Self> {
        model.validate()?;
        inner.validate()?;
        let mask = ClassMask::new(model.head_classes);
        let opt = AdamState::new(&initial_params);
        Ok(DeploymentSession {
            model,
            inner,
            policy,
            params: initial_params,
            opt,
            mask,
            store: TemplateStore::new(),
            groups_learned: 0,
        })
    }

    /// Introduce a group of new classes: widen the mask, adapt for T steps
    /// on the group's support batch, then (under a rehearsing policy) store
    /// one template per new class and take the template steps.
    pub fn learn_group(
        &mut self,
        classes: &[NewClass<'_>],
        rng: &mut impl Rng,
    ) -> Result<GroupOutcome> {
        if classes.is_empty() {
            return Err(Error::State("cannot learn an empty class group".into()));
        }
        for class in classes {
            if class.head_index >= self.model.head_classes {
                return Err(Error::State(format!(
                    "head index {} out of range for {}-way head",
                    class.head_index, self.model.head_classes
                )));
            }
            if self.mask.is_marked(class.head_index) {
                return Err(Error::State(format!(
                    "head row {} is already assigned",
                    class.head_index
                )));
            }
        }
        let mut mask = self.mask.clone();
        for class in classes {
            mask.mark(class.head_index)?;
        }

        let items: Vec<(&Tensor, usize)> = classes
            .iter()
            .flat_map(|c| c.support.iter().map(move |t| (t, c.head_index)))
            .collect();
        let batch = Batch::from_examples(&items)?;

        let t = if self.groups_learned == 0 {
            self.inner.t_initial
        } else {
            self.inner.t_step
        };
        let (params, opt) = inner_adapt(
            &self.model,
            std::mem::take(&mut self.params),
            self.opt.clone(),
            &batch,
            &mask,
            t,
            self.inner.inner_lr,
            self.policy.scope,
        )?;
        self.params = params;
        self.opt = opt;

        let mut template_updates = 0;
        if self.policy.rehearse_templates {
            self.store = store_templates(std::mem::take(&mut self.store), classes, rng)?;
            for _ in 0..self.inner.template_steps {
                let (params, opt) = template_step(
                    &self.model,
                    std::mem::take(&mut self.params),
                    self.opt.clone(),
                    &self.store,
                    &mask,
                    self.inner.inner_lr,
                )?;
                self.params = params;
                self.opt = opt;
                template_updates += 1;
            }
            debug_assert_eq!(self.store.len(), mask.true_count());
        }

        self.mask = mask;
        self.groups_learned += 1;
        Ok(GroupOutcome {
            adapt_steps: t,
            template_steps: template_updates,
        })
    }

    /// Classify a `[B, channels, frames, coeffs]` batch over the live classes.
    pub fn classify(&self, inputs: &Tensor) -> Result<Vec<usize>> {
        if self.mask.true_count() == 0 {
            return Err(Error::State("no classes learned yet".into()));
        }
        let (logits, _) = self.model.predict(&self.params, inputs, &self.mask)?;
        Ok(argmax_masked(&logits, &self.mask))
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn mask(&self) -> &ClassMask {
        &self.mask
    }

    pub fn store(&self) -> &TemplateStore {
        &self.store
    }

    pub fn optimizer(&self) -> &AdamState {
        &self.opt
    }

    pub fn model(&self) -> &ModelConfig {
        &self.model
    }

    pub fn groups_learned(&self) -> usize {
        self.groups_learned
    }

    pub fn into_deployed(self) -> DeployedModel {
        DeployedModel {
            params: self.params,
            mask: self.mask,
            store: self.store,
            opt_state: self.opt,
        }
    }
}

/// Final state of a continual deployment.
#[derive(Clone, Debug)]
pub struct DeployedModel {
    pub params: ParameterSet,
    pub mask: ClassMask,
    pub store: TemplateStore,
    pub opt_state: AdamState,
}

/// Result of running an episode through the inner loop.
pub struct InnerLoopRun {
    pub params: ParameterSet,
    pub mask: ClassMask,
    pub store: TemplateStore,
    pub opt: AdamState,
    pub trajectory: Vec<GroupSnapshot>,
}

/// Drive a [`DeploymentSession`] through every group of an episode,
/// snapshotting after each group for retention analysis.
pub fn run_inner_loop(
    model: &ModelConfig,
    initial_params: ParameterSet,
    episode: &Episode,
    inner: &InnerLoopConfig,
    policy: DeployPolicy,
    rng: &mut impl Rng,
) -> Result<InnerLoopRun> {
    let mut session = DeploymentSession::new(model.clone(), initial_params, inner.clone(), policy)?;
    let mut trajectory = Vec::with_capacity(episode.groups.len());
    for group in &episode.groups {
        let classes: Vec<NewClass<'_>> = group
            .classes
            .iter()
            .map(|c| {
                Ok(NewClass {
                    class_id: c.class_id,
                    head_index: episode.head_index(c.class_id)?,
                    support: &c.support,
                })
            })
            .collect::<Result<_>>()?;
        let outcome = session.learn_group(&classes, rng)?;
        trajectory.push(GroupSnapshot {
            params: session.params().clone(),
            mask: session.mask().clone(),
            store_size: session.store().len(),
            opt_steps: session.optimizer().step_count(),
            adapt_steps: outcome.adapt_steps,
            template_steps: outcome.template_steps,
        });
    }
    Ok(InnerLoopRun {
        params: session.params.clone(),
        mask: session.mask.clone(),
        store: session.store.clone(),
        opt: session.opt.clone(),
        trajectory,
    })
}

/// The MAMLCon inner loop: full-network adaptation with template rehearsal.
pub fn mamlcon_inner_loop(
    model: &ModelConfig,
    initial_params: ParameterSet,
    episode: &Episode,
    inner: &InnerLoopConfig,
    rng: &mut impl Rng,
) -> Result<InnerLoopRun> {
    run_inner_loop(model, initial_params, episode, inner, DeployPolicy::mamlcon(), rng)
}

/// One adapted task for the outer update.
pub struct MetaTask {
    pub adapted: ParameterSet,
    pub meta_test: Batch,
    pub mask: ClassMask,
}

/// Optimizer applied to the initial weights.
///
/// Adam is what the experiments use; plain gradient descent exists so the
/// first-order update `θ₀ ← θ₀ − β·Σᵢ ∇L` is directly testable.
#[derive(Clone, Debug)]
pub enum OuterOptimizer {
    Adam(AdamState),
    Sgd,
}

/// First-order meta-update of the initial weights.
///
/// The meta-gradient is the sum over tasks of the meta-test loss gradient
/// evaluated at the task's *adapted* weights, applied directly to the
/// initial weights — the first-order MAML approximation that skips all
/// second-order terms.
pub fn fo_meta_update(
    model: &ModelConfig,
    theta0: &ParameterSet,
    tasks: &[MetaTask],
    opt: OuterOptimizer,
    outer_lr: f64,
) -> Result<(ParameterSet, OuterOptimizer)> {
    if tasks.is_empty() {
        return Err(Error::State("meta-update needs at least one task".into()));
    }
    let mut total = GradientSet::zeros_like(theta0);
    for task in tasks {
        if !task.adapted.same_layout(theta0) {
            return Err(Error::shape(
                "fo_meta_update",
                "adapted parameters do not mirror the initial weights",
            ));
        }
        let (logits, tape) = model.predict(&task.adapted, &task.meta_test.inputs, &task.mask)?;
        let (_loss, dlogits) =
            softmax_cross_entropy(&logits, &task.meta_test.labels, task.mask.as_slice())?;
        let grads = model_backward(&tape, &task.adapted, &dlogits)?;
        total.accumulate(&grads)?;
    }
    match opt {
        OuterOptimizer::Sgd => {
            let mut updated = ParameterSet::new();
            for (name, p) in theta0.iter() {
                let g = total.expect(name)?;
                let data = p
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&pv, &gv)| pv - outer_lr * gv)
                    .collect();
                updated.insert(name, Tensor::new(p.shape().to_vec(), data)?)?;
            }
            Ok((updated, OuterOptimizer::Sgd))
        }
        OuterOptimizer::Adam(state) => {
            let (updated, state) = adam_step(theta0, &total, &state, outer_lr)?;
            Ok((updated, OuterOptimizer::Adam(state)))
        }
    }
}

/// Which meta-training variant to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetaAlgorithm {
    MamlCon,
    Oml,
}

impl MetaAlgorithm {
    pub fn deploy_policy(self) -> DeployPolicy {
        match self {
            MetaAlgorithm::MamlCon => DeployPolicy::mamlcon(),
            MetaAlgorithm::Oml => DeployPolicy::oml(),
        }
    }
}

fn meta_train(
    data: &crate::episodes::LabeledDataset,
    cfg: &MetaTrainConfig,
    inner: &InnerLoopConfig,
    model: &ModelConfig,
    algo: MetaAlgorithm,
) -> Result<ParameterSet> {
    cfg.validate()?;
    inner.validate()?;
    model.validate()?;
    if model.head_classes < cfg.scenario.n_final {
        return Err(Error::Config(format!(
            "head has {} rows but the scenario ends with {} classes",
            model.head_classes, cfg.scenario.n_final
        )));
    }
    let policy = algo.deploy_policy();
    let mut rng = rng_from(cfg.seed);
    let mut theta = model.init_params(&mut rng)?;
    let mut outer = OuterOptimizer::Adam(AdamState::new(&theta));

    for _ in 0..cfg.meta_iterations {
        // Sample the whole batch (and per-task seeds) sequentially so the
        // run is reproducible no matter how the tasks are scheduled.
        let mut sampled = Vec::with_capacity(cfg.tasks_per_meta_batch);
        for _ in 0..cfg.tasks_per_meta_batch {
            let episode = sample_episode(
                data,
                &cfg.scenario,
                model.head_classes,
                cfg.test_examples_per_class,
                &mut rng,
            )?;
            sampled.push((episode, rng.next_u64()));
        }
        let tasks: Vec<MetaTask> = sampled
            .par_iter()
            .map(|(episode, task_seed)| -> Result<MetaTask> {
                let mut task_rng = rng_from(*task_seed);
                let run =
                    run_inner_loop(model, theta.clone(), episode, inner, policy, &mut task_rng)?;
                let meta_test = match algo {
                    // Meta-test over every class seen in the task.
                    MetaAlgorithm::MamlCon => episode.all_test_batch()?,
                    // OML measures on a random sample of classes instead;
                    // same batch size for a fair comparison.
                    MetaAlgorithm::Oml => {
                        let size = episode.n_classes() * cfg.test_examples_per_class;
                        episode.random_test_batch(size, &mut task_rng)?
                    }
                };
                Ok(MetaTask {
                    adapted: run.params,
                    meta_test,
                    mask: run.mask,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let (t, o) = fo_meta_update(model, &theta, &tasks, outer, cfg.outer_lr)?;
        theta = t;
        outer = o;
    }
    Ok(theta)
}

/// Meta-train MAMLCon, returning the optimized initial weights θ*.
pub fn mamlcon_meta_train(
    data: &crate::episodes::LabeledDataset,
    cfg: &MetaTrainConfig,
    inner: &InnerLoopConfig,
    model: &ModelConfig,
) -> Result<ParameterSet> {
    meta_train(data, cfg, inner, model, MetaAlgorithm::MamlCon)
}

/// Meta-train the OML baseline: head-only inner loops, no templates,
/// meta-test on a random class sample, outer update of the whole network.
pub fn oml_meta_train(
    data: &crate::episodes::LabeledDataset,
    cfg: &MetaTrainConfig,
    inner: &InnerLoopConfig,
    model: &ModelConfig,
) -> Result<ParameterSet> {
    meta_train(data, cfg, inner, model, MetaAlgorithm::Oml)
}

/// Test-time continual learning with a chosen inner-loop policy.
///
/// The starting weights are cloned; deployments never mutate θ*.
pub fn deploy_with_policy(
    model: &ModelConfig,
    theta_star: &ParameterSet,
    episode: &Episode,
    inner: &InnerLoopConfig,
    policy: DeployPolicy,
    rng: &mut impl Rng,
) -> Result<(DeployedModel, Vec<GroupSnapshot>)> {
    let run = run_inner_loop(model, theta_star.clone(), episode, inner, policy, rng)?;
    Ok((
        DeployedModel {
            params: run.params,
            mask: run.mask,
            store: run.store,
            opt_state: run.opt,
        },
        run.trajectory,
    ))
}

/// MAMLCon deployment: just the inner loop, starting from θ*.
pub fn continual_deploy(
    model: &ModelConfig,
    theta_star: &ParameterSet,
    episode: &Episode,
    inner: &InnerLoopConfig,
    rng: &mut impl Rng,
) -> Result<(DeployedModel, Vec<GroupSnapshot>)> {
    deploy_with_policy(model, theta_star, episode, inner, DeployPolicy::mamlcon(), rng)
}

/// The no-pretraining baseline: the full MAMLCon deployment procedure run
/// from a fresh random initialization instead of θ*.
pub fn finetune_baseline(
    model: &ModelConfig,
    episode: &Episode,
    inner: &InnerLoopConfig,
    rng: &mut impl Rng,
) -> Result<(DeployedModel, Vec<GroupSnapshot>)> {
    let theta = model.init_params(rng)?;
    deploy_with_policy(model, &theta, episode, inner, DeployPolicy::mamlcon(), rng)
}
