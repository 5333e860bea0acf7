//! Synthetic multi-domain classification suites.
//!
//! Class means sit at equal angles on a circle in the plane of the first two
//! input coordinates. Each domain rotates that plane by its own angle, shifts
//! the nuisance coordinates by its own offset, and carries a domain-indicative
//! value in the last coordinate. Shift strength is therefore a dial.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// Parameters of [`make_domain_suite`]. One entry of `rotations_deg` and
/// `translations` per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub classes: usize,
    pub dim: usize,
    pub n_per_domain: usize,
    pub class_separation: f64,
    pub rotations_deg: Vec<f64>,
    pub translations: Vec<f64>,
    pub noise_sigma: f64,
    pub spurious_strength: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            classes: 4,
            dim: 16,
            n_per_domain: 600,
            class_separation: 4.0,
            rotations_deg: vec![0.0, 15.0, 30.0, 45.0],
            translations: vec![0.0, 0.5, 1.0, 1.5],
            noise_sigma: 1.0,
            spurious_strength: 0.5,
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    pub fn domains(&self) -> usize {
        self.rotations_deg.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.dim < 3 {
            return Err(Error::Config(format!(
                "input dimension must be at least 3 (class plane + spurious coordinate), got {}",
                self.dim
            )));
        }
        if self.n_per_domain < 4 * self.classes {
            return Err(Error::Config(format!(
                "n_per_domain = {} is below 4 * classes = {}",
                self.n_per_domain,
                4 * self.classes
            )));
        }
        if self.rotations_deg.is_empty() {
            return Err(Error::Config(
                "at least one domain rotation is required".into(),
            ));
        }
        if self.translations.len() != self.rotations_deg.len() {
            return Err(Error::Config(format!(
                "{} rotations but {} translations; need one of each per domain",
                self.rotations_deg.len(),
                self.translations.len()
            )));
        }
        if !(self.noise_sigma > 0.0) {
            return Err(Error::Config(format!(
                "noise_sigma must be > 0, got {}",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// Role a domain plays in one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Labeled,
    Unlabeled,
    Test,
}

impl Role {
    pub fn to_byte(self) -> u8 {
        match self {
            Role::Labeled => 0,
            Role::Unlabeled => 1,
            Role::Test => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Role::Labeled),
            1 => Some(Role::Unlabeled),
            2 => Some(Role::Test),
            _ => None,
        }
    }
}

/// Samples of one domain. `domain_id` is the physical domain index in the
/// suite; `role` says how the current experiment uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub domain_id: usize,
    pub role: Role,
    pub inputs: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl DomainDataset {
    /// Checks that labels, when present, match the sample count and cover every class.
    pub fn new(
        domain_id: usize,
        role: Role,
        inputs: Tensor,
        labels: Option<Vec<usize>>,
        classes: usize,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(Error::InvalidArgument(format!(
                    "domain {domain_id}: {} labels for {} samples",
                    l.len(),
                    inputs.rows()
                )));
            }
            let counts = class_counts(l, classes)?;
            if let Some(k) = counts.iter().position(|&c| c == 0) {
                return Err(Error::Config(format!(
                    "domain {domain_id}: class {k} has no samples"
                )));
            }
        }
        if role == Role::Labeled && labels.is_none() {
            return Err(Error::Config(format!(
                "labeled domain {domain_id} carries no labels"
            )));
        }
        Ok(DomainDataset {
            domain_id,
            role,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Config(format!("domain {} has no labels", self.domain_id)))
    }

    pub fn subset(&self, idx: &[usize]) -> Result<DomainDataset> {
        Ok(DomainDataset {
            domain_id: self.domain_id,
            role: self.role,
            inputs: self.inputs.select_rows(idx)?,
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
        })
    }
}

/// Per-class sample counts; errors on a label outside `[0, classes)`.
pub fn class_counts(labels: &[usize], classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0usize; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
        counts[y] += 1;
    }
    Ok(counts)
}

/// All domains of one generated (or loaded) suite, fully labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSuite {
    pub domains: Vec<DomainDataset>,
    pub classes: usize,
    pub dim: usize,
    pub gen_config: Option<GeneratorConfig>,
}

/// Builds the suite for `cfg` with an explicit seed. Domain 0 is tagged
/// labeled and the last domain test; [`DatasetSuite::partition`] reassigns
/// roles per experiment.
pub fn make_domain_suite(cfg: &GeneratorConfig, seed: u64) -> Result<DatasetSuite> {
    cfg.validate()?;
    let (k, p, n) = (cfg.classes, cfg.dim, cfg.n_per_domain);
    let mut rng = rng::stream(seed, 0x5eed);
    let spurious = p - 1;
    // Offset direction: uniform over the nuisance coordinates 2..p-1, or the
    // class-plane diagonal when there are none.
    let mut shift_dir = vec![0.0; p];
    if p > 3 {
        let w = 1.0 / libm::sqrt((p - 3) as f64);
        for v in &mut shift_dir[2..spurious] {
            *v = w;
        }
    } else {
        shift_dir[0] = core::f64::consts::FRAC_1_SQRT_2;
        shift_dir[1] = core::f64::consts::FRAC_1_SQRT_2;
    }

    let last = cfg.domains() - 1;
    let mut domains = Vec::with_capacity(cfg.domains());
    for t in 0..cfg.domains() {
        let theta = cfg.rotations_deg[t].to_radians();
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % k;
            let angle = 2.0 * core::f64::consts::PI * class as f64 / k as f64;
            let mut x = vec![0.0; p];
            x[0] = cfg.class_separation * libm::cos(angle);
            x[1] = cfg.class_separation * libm::sin(angle);
            for v in &mut x[..spurious] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += cfg.noise_sigma * z;
            }
            let (a, b) = (x[0], x[1]);
            x[0] = c * a - s * b;
            x[1] = s * a + c * b;
            for (v, d) in x.iter_mut().zip(&shift_dir) {
                *v += cfg.translations[t] * d;
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            x[spurious] = cfg.spurious_strength * (t + 1) as f64 + cfg.noise_sigma * z;
            rows.push((x, class));
        }
        rows.shuffle(&mut rng);
        let inputs = Tensor::from_rows(p, rows.iter().map(|(x, _)| x.as_slice()))?;
        let labels = rows.iter().map(|&(_, y)| y).collect();
        let role = if t == 0 {
            Role::Labeled
        } else if t == last {
            Role::Test
        } else {
            Role::Unlabeled
        };
        domains.push(DomainDataset::new(t, role, inputs, Some(labels), k)?);
    }
    Ok(DatasetSuite {
        domains,
        classes: k,
        dim: p,
        gen_config: Some(cfg.clone()),
    })
}

/// Sample indices of a stratified split: `(train, val)`, each ascending.
pub fn split_indices(
    labels: &[usize],
    classes: usize,
    ratio: (f64, f64),
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (tr, va) = ratio;
    if !(tr > 0.0) || !(va > 0.0) || ((tr + va) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got ({tr}, {va})"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidArgument(format!("label {y} out of range")));
        }
        by_class[y].push(i);
    }
    let mut rng = rng::stream(seed, 0x5b11);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (class, mut members) in by_class.into_iter().enumerate() {
        let count = members.len();
        if count < 2 {
            return Err(Error::Stratification { class, count });
        }
        members.shuffle(&mut rng);
        let n_train = libm::round(count as f64 * tr) as usize;
        let n_train = n_train.clamp(1, count - 1);
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Stratified `(train, val)` split of a labeled domain.
pub fn split(
    ds: &DomainDataset,
    classes: usize,
    ratio: (f64, f64),
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    let (tr, va) = split_indices(ds.labels()?, classes, ratio, seed)?;
    Ok((ds.subset(&tr)?, ds.subset(&va)?))
}

/// Input-level augmentation: a random rotation of at most `strength * 5°`
/// in the class plane followed by Gaussian jitter of scale `strength * noise_sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    pub strength: f64,
    pub noise_sigma: f64,
}

pub const MAX_AUGMENT_ROTATION_DEG: f64 = 5.0;

/// Augmented copy of `x`. Strength 0 returns `x` unchanged and draws nothing.
pub fn augment(x: &[f64], aug: Augment, rng: &mut Rng) -> Vec<f64> {
    let mut out = x.to_vec();
    if aug.strength == 0.0 {
        return out;
    }
    if out.len() >= 2 {
        let max = (aug.strength * MAX_AUGMENT_ROTATION_DEG).to_radians();
        let theta = rng.random_range(-max..=max);
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let (a, b) = (out[0], out[1]);
        out[0] = c * a - s * b;
        out[1] = s * a + c * b;
    }
    let scale = aug.strength * aug.noise_sigma;
    for v in &mut out {
        let z: f64 = StandardNormal.sample(rng);
        *v += scale * z;
    }
    out
}

/// Ground-truth labels of an unlabeled source domain. Reads go through
/// [`HiddenLabels::reveal_for_metrics`] and are counted so tests can audit
/// that training never consults them.
#[derive(Debug)]
pub struct HiddenLabels {
    domain_id: usize,
    labels: Vec<usize>,
    reads: Cell<usize>,
}

impl HiddenLabels {
    pub fn new(domain_id: usize, labels: Vec<usize>) -> Self {
        HiddenLabels {
            domain_id,
            labels,
            reads: Cell::new(0),
        }
    }

    pub fn domain_id(&self) -> usize {
        self.domain_id
    }

    pub fn reveal_for_metrics(&self) -> &[usize] {
        self.reads.set(self.reads.get() + 1);
        &self.labels
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }
}

/// The held-out test domain. Its inputs are reachable only through counted
/// accessors used by evaluation.
#[derive(Debug)]
pub struct HeldOutDomain {
    data: DomainDataset,
    reads: Cell<usize>,
}

impl HeldOutDomain {
    pub fn new(data: DomainDataset) -> Self {
        HeldOutDomain {
            data,
            reads: Cell::new(0),
        }
    }

    pub fn domain_id(&self) -> usize {
        self.data.domain_id
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Full test data, for evaluation only.
    pub fn open_for_evaluation(&self) -> &DomainDataset {
        self.reads.set(self.reads.get() + 1);
        &self.data
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }
}

/// One experiment's view of a suite.
#[derive(Debug)]
pub struct Partition {
    pub labeled: DomainDataset,
    /// Unlabeled sources in ascending domain order, labels stripped.
    pub unlabeled: Vec<DomainDataset>,
    pub hidden: Vec<HiddenLabels>,
    pub test: HeldOutDomain,
}

impl DatasetSuite {
    pub fn domain(&self, id: usize) -> Result<&DomainDataset> {
        self.domains
            .iter()
            .find(|d| d.domain_id == id)
            .ok_or_else(|| Error::Config(format!("suite has no domain {id}")))
    }

    /// Assigns roles: `labeled` keeps its labels, `test` is held out, every
    /// other domain becomes an unlabeled source with its labels moved to a
    /// [`HiddenLabels`] ledger.
    pub fn partition(&self, labeled: usize, test: usize) -> Result<Partition> {
        if labeled == test {
            return Err(Error::Config(format!(
                "labeled domain and test domain must differ (both are {labeled}); \
                 training and test domains are disjoint"
            )));
        }
        let mut lab = self.domain(labeled)?.clone();
        lab.role = Role::Labeled;
        let counts = class_counts(lab.labels()?, self.classes)?;
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!(
                "labeled domain {labeled} is missing class {k}"
            )));
        }
        let mut tst = self.domain(test)?.clone();
        tst.role = Role::Test;
        let mut unlabeled = Vec::new();
        let mut hidden = Vec::new();
        for d in &self.domains {
            if d.domain_id == labeled || d.domain_id == test {
                continue;
            }
            let truth = d.labels()?.to_vec();
            hidden.push(HiddenLabels::new(d.domain_id, truth));
            unlabeled.push(DomainDataset {
                domain_id: d.domain_id,
                role: Role::Unlabeled,
                inputs: d.inputs.clone(),
                labels: None,
            });
        }
        Ok(Partition {
            labeled: lab,
            unlabeled,
            hidden,
            test: HeldOutDomain::new(tst),
        })
    }
}
