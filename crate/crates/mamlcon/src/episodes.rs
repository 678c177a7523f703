//! Continual-learning scenarios and episode sampling.
//!
//! A scenario string like `N50:CS5:CA5` describes an episode shape: end with
//! 50 classes, start with 5, add 5 per update step. An [`Episode`] is one
//! sampled instance: ordered class groups with K support examples per class,
//! a disjoint test set per class, and a freshly randomized mapping from class
//! to head index so that a meta-learner cannot memorise absolute labels.

use indexmap::IndexMap;
use rand::seq::index::sample as index_sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Parsed `N..:CS..:CA..` scenario plus the shot count K.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScenarioSpec {
    /// Final number of classes (N).
    pub n_final: usize,
    /// Initial class count (CS).
    pub cs: usize,
    /// Classes added per update step (CA).
    pub ca: usize,
    /// Support examples per class (K).
    pub k: usize,
}

impl ScenarioSpec {
    pub fn new(n_final: usize, cs: usize, ca: usize, k: usize) -> Result<Self> {
        let spec = ScenarioSpec { n_final, cs, ca, k };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        let reason = if self.n_final == 0 {
            Some("N must be at least 1".to_string())
        } else if self.cs == 0 || self.cs > self.n_final {
            Some(format!("CS must satisfy 1 <= CS <= N, got CS={}", self.cs))
        } else if self.ca == 0 {
            Some("CA must be at least 1".to_string())
        } else if self.k == 0 {
            Some("K must be at least 1".to_string())
        } else {
            None
        };
        match reason {
            Some(reason) => Err(Error::Scenario {
                text: self.notation(),
                reason,
            }),
            None => Ok(()),
        }
    }

    /// Canonical `N..:CS..:CA..` string.
    pub fn notation(&self) -> String {
        format!("N{}:CS{}:CA{}", self.n_final, self.cs, self.ca)
    }
}

/// Parse the `N<digits>:CS<digits>:CA<digits>` grammar (case-sensitive, no
/// whitespace) and attach the shot count.
pub fn parse_scenario(text: &str, k: usize) -> Result<ScenarioSpec> {
    let bad = |reason: &str| Error::Scenario {
        text: text.to_string(),
        reason: reason.to_string(),
    };
    let rest = text
        .strip_prefix('N')
        .ok_or_else(|| bad("expected leading 'N'"))?;
    let (n_str, rest) = rest
        .split_once(":CS")
        .ok_or_else(|| bad("expected ':CS'"))?;
    let (cs_str, ca_str) = rest
        .split_once(":CA")
        .ok_or_else(|| bad("expected ':CA'"))?;
    let parse = |s: &str, field: &str| -> Result<usize> {
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad(&format!("{field} must be digits, got '{s}'")));
        }
        s.parse()
            .map_err(|_| bad(&format!("{field} out of range: '{s}'")))
    };
    ScenarioSpec::new(
        parse(n_str, "N")?,
        parse(cs_str, "CS")?,
        parse(ca_str, "CA")?,
        k,
    )
}

/// Group sizes for a scenario: `[CS, CA, CA, ...]` with the last addition
/// clamped so the total hits N exactly.
pub fn class_schedule(spec: &ScenarioSpec) -> Vec<usize> {
    let mut sizes = vec![spec.cs];
    let mut total = spec.cs;
    while total < spec.n_final {
        let add = spec.ca.min(spec.n_final - total);
        sizes.push(add);
        total += add;
    }
    sizes
}

/// One class inside an episode group: its dataset id, K support examples,
/// and the held-out test examples.
#[derive(Clone, Debug)]
pub struct EpisodeClass {
    pub class_id: usize,
    pub support: Vec<Tensor>,
    pub test: Vec<Tensor>,
}

/// An ordered group of classes introduced together.
#[derive(Clone, Debug)]
pub struct ClassGroup {
    pub classes: Vec<EpisodeClass>,
}

/// One continual-learning task.
#[derive(Clone, Debug)]
pub struct Episode {
    pub groups: Vec<ClassGroup>,
    /// Injective class id → head index map, randomized per episode.
    pub label_map: IndexMap<usize, usize>,
    /// Head width the label map is injective into.
    pub n_max: usize,
}

/// A model-ready batch: stacked inputs and head-index labels.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `[B, 1, frames, coeffs]`.
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Stack `[frames, coeffs]` examples into `[B, 1, frames, coeffs]`.
    pub fn from_examples(items: &[(&Tensor, usize)]) -> Result<Batch> {
        if items.is_empty() {
            return Err(Error::Data("cannot build an empty batch".into()));
        }
        let reshaped: Vec<Tensor> = items
            .iter()
            .map(|(t, _)| {
                let mut shape = vec![1];
                shape.extend_from_slice(t.shape());
                t.reshape(&shape)
            })
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = reshaped.iter().collect();
        Ok(Batch {
            inputs: Tensor::stack(&refs)?,
            labels: items.iter().map(|(_, l)| *l).collect(),
        })
    }
}

impl Episode {
    pub fn n_classes(&self) -> usize {
        self.groups.iter().map(|g| g.classes.len()).sum()
    }

    pub fn head_index(&self, class_id: usize) -> Result<usize> {
        self.label_map
            .get(&class_id)
            .copied()
            .ok_or_else(|| Error::Data(format!("class {class_id} not in this episode")))
    }

    /// Support batch for one group, labelled with head indices.
    pub fn support_batch(&self, group: usize) -> Result<Batch> {
        let g = self
            .groups
            .get(group)
            .ok_or_else(|| Error::Data(format!("episode has no group {group}")))?;
        let mut items = Vec::new();
        for c in &g.classes {
            let label = self.head_index(c.class_id)?;
            for t in &c.support {
                items.push((t, label));
            }
        }
        Batch::from_examples(&items)
    }

    /// Test batch for one group's classes.
    pub fn group_test_batch(&self, group: usize) -> Result<Batch> {
        let g = self
            .groups
            .get(group)
            .ok_or_else(|| Error::Data(format!("episode has no group {group}")))?;
        let mut items = Vec::new();
        for c in &g.classes {
            let label = self.head_index(c.class_id)?;
            for t in &c.test {
                items.push((t, label));
            }
        }
        Batch::from_examples(&items)
    }

    /// Test batch over every class in the episode, in group order.
    pub fn all_test_batch(&self) -> Result<Batch> {
        let mut items = Vec::new();
        for g in &self.groups {
            for c in &g.classes {
                let label = self.head_index(c.class_id)?;
                for t in &c.test {
                    items.push((t, label));
                }
            }
        }
        Batch::from_examples(&items)
    }

    /// Test batch of `size` items sampled uniformly: class first, then one of
    /// its test examples. Used for the OML-style meta-test over a random
    /// sample of the episode's classes.
    pub fn random_test_batch(&self, size: usize, rng: &mut impl Rng) -> Result<Batch> {
        if size == 0 {
            return Err(Error::Data("random test batch must be non-empty".into()));
        }
        let classes: Vec<&EpisodeClass> =
            self.groups.iter().flat_map(|g| g.classes.iter()).collect();
        let mut items = Vec::with_capacity(size);
        for _ in 0..size {
            let c = classes[rng.random_range(0..classes.len())];
            let t = &c.test[rng.random_range(0..c.test.len())];
            items.push((t, self.head_index(c.class_id)?));
        }
        Batch::from_examples(&items)
    }
}

/// Labelled feature collection episodes are sampled from.
#[derive(Clone, Debug, Default)]
pub struct LabeledDataset {
    classes: IndexMap<usize, Vec<Tensor>>,
    pub frames: usize,
    pub coeffs: usize,
}

impl LabeledDataset {
    pub fn new(frames: usize, coeffs: usize) -> Self {
        LabeledDataset {
            classes: IndexMap::new(),
            frames,
            coeffs,
        }
    }

    pub fn add_example(&mut self, class_id: usize, features: Tensor) -> Result<()> {
        if features.shape() != [self.frames, self.coeffs] {
            return Err(Error::Data(format!(
                "example for class {class_id} has shape {:?}, dataset is [{}, {}]",
                features.shape(),
                self.frames,
                self.coeffs
            )));
        }
        self.classes.entry(class_id).or_default().push(features);
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn examples(&self, class_id: usize) -> Option<&[Tensor]> {
        self.classes.get(&class_id).map(Vec::as_slice)
    }

    /// Keep only the listed classes; for meta-train/held-out splits.
    pub fn restrict_to(&self, keep: &[usize]) -> LabeledDataset {
        LabeledDataset {
            classes: self
                .classes
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(id, v)| (*id, v.clone()))
                .collect(),
            frames: self.frames,
            coeffs: self.coeffs,
        }
    }

    fn check_capacity(&self, spec: &ScenarioSpec, k_test: usize) -> Result<()> {
        if self.n_classes() < spec.n_final {
            return Err(Error::Data(format!(
                "scenario needs {} classes, dataset has {} ({} short)",
                spec.n_final,
                self.n_classes(),
                spec.n_final - self.n_classes()
            )));
        }
        let need = spec.k + k_test;
        for (id, examples) in &self.classes {
            if examples.len() < need {
                return Err(Error::Data(format!(
                    "class {id} has {} examples, needs {need} (K={} support + {k_test} test)",
                    examples.len(),
                    spec.k
                )));
            }
        }
        Ok(())
    }
}

/// Sample one episode: N classes without replacement, K support plus
/// `k_test` disjoint test examples per class, grouped by the schedule, with
/// a fresh random injective label map into `[0, n_max)`.
pub fn sample_episode(
    data: &LabeledDataset,
    spec: &ScenarioSpec,
    n_max: usize,
    k_test: usize,
    rng: &mut impl Rng,
) -> Result<Episode> {
    spec.validate()?;
    if k_test == 0 {
        return Err(Error::Data("k_test must be at least 1".into()));
    }
    if n_max < spec.n_final {
        return Err(Error::Data(format!(
            "head width {n_max} is smaller than the scenario's {} classes",
            spec.n_final
        )));
    }
    data.check_capacity(spec, k_test)?;

    let ids: Vec<usize> = data.class_ids().collect();
    let picked: Vec<usize> = index_sample(rng, ids.len(), spec.n_final)
        .into_iter()
        .map(|i| ids[i])
        .collect();
    let slots: Vec<usize> = index_sample(rng, n_max, spec.n_final).into_vec();
    let label_map: IndexMap<usize, usize> =
        picked.iter().copied().zip(slots.iter().copied()).collect();

    let mut remaining = picked.as_slice();
    let mut groups = Vec::new();
    for size in class_schedule(spec) {
        let (now, later) = remaining.split_at(size);
        remaining = later;
        let mut classes = Vec::with_capacity(size);
        for &class_id in now {
            let pool = data.examples(class_id).expect("capacity checked");
            let chosen = index_sample(rng, pool.len(), spec.k + k_test).into_vec();
            let support = chosen[..spec.k].iter().map(|&i| pool[i].clone()).collect();
            let test = chosen[spec.k..].iter().map(|&i| pool[i].clone()).collect();
            classes.push(EpisodeClass {
                class_id,
                support,
                test,
            });
        }
        groups.push(ClassGroup { classes });
    }

    Ok(Episode {
        groups,
        label_map,
        n_max,
    })
}

/// Re-randomize the label map, leaving everything else untouched.
pub fn shuffle_labels(episode: &Episode, rng: &mut impl Rng) -> Episode {
    let n = episode.label_map.len();
    let slots: Vec<usize> = index_sample(rng, episode.n_max, n).into_vec();
    let label_map = episode
        .label_map
        .keys()
        .copied()
        .zip(slots)
        .collect();
    Episode {
        groups: episode.groups.clone(),
        label_map,
        n_max: episode.n_max,
    }
}
