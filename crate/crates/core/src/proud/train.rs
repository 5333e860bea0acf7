//! The epoch loop: per-domain pseudo-labeling at the start of each epoch,
//! then mini-batches of mixed samples trained with cross-entropy plus the
//! prototype merging loss.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::loss::pml_loss;
use super::mixing::{sample_match, udmix, ClassIndex};
use super::prototypes::{dapp, embed, hard_prototypes, soft_prototypes, PrototypeBank};
use super::uncertainty::{lambda_from_uncertainty, mixing_ratio, uncertainties};
use super::{ProudHyper, Reduction};
use crate::autodiff::{Sgd, Tape, Tensor};
use crate::datagen::{DomainDataset, HeldOutDomain, HiddenLabels};
use crate::error::{Error, Result};
use crate::model::{agreement, mixup_ce_loss, supervised_epoch, Model};
use crate::rng::{self, Rng};

/// A pseudo-labeled unlabeled-domain sample as seen by the batch loop.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabeledSample {
    pub x: Vec<f64>,
    pub pseudo_label: usize,
    pub uncertainty: f64,
    pub lambda_eps: f64,
    /// Position of the source among the unlabeled domains.
    pub source: usize,
}

/// Aggregates of one pass over the pseudo-labeled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// Mean applied mixing ratio per unlabeled source.
    pub mean_lambda: Vec<f64>,
    /// Mean per-step mixed cross-entropy.
    pub loss_ce: f64,
    /// Mean per-step prototype merging loss, reduced per `pml_reduction`,
    /// before the `alpha` weight.
    pub loss_pml: f64,
    pub steps: usize,
}

/// One epoch of history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Test accuracy after this epoch's updates.
    pub test_acc: f64,
    /// Pseudo-label accuracy per unlabeled source at this epoch's labeling stage.
    pub pl_acc: Vec<f64>,
    pub mean_lambda: Vec<f64>,
    pub mean_uncertainty: Vec<f64>,
    pub loss_ce: f64,
    pub loss_pml: f64,
}

#[derive(Debug, Clone)]
pub struct ProudOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// Prototype bank of the last epoch; `None` when no epoch ran or the
    /// variant builds no prototypes.
    pub bank: Option<PrototypeBank>,
    /// Normalized features at the last labeling stage, labeled domain first.
    pub features: Vec<(usize, Tensor)>,
}

const STREAM_DAPP: u64 = 0xda99;
const STREAM_BATCH: u64 = 0xba7c;

/// Shuffles `samples` into mini-batches and applies one SGD step per batch on
/// `CE(mixed batch) + alpha * PML(labeled partners ∪ pseudo-labeled batch)`.
#[allow(clippy::too_many_arguments)]
pub fn train_epoch(
    model: &mut Model,
    sgd: &mut Sgd,
    labeled: &DomainDataset,
    index: &ClassIndex,
    samples: &[PseudoLabeledSample],
    sources: usize,
    anchors: &Tensor,
    hyper: &ProudHyper,
    rng: &mut Rng,
) -> Result<EpochStats> {
    let labels = labeled.labels()?;
    let classes = model.spec().classes;
    let rule = hyper.mixing_rule();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut lambda_sum = alloc::vec![0.0; sources];
    let mut lambda_n = alloc::vec![0usize; sources];
    let (mut ce_total, mut pml_total, mut steps) = (0.0, 0.0, 0usize);
    for chunk in order.chunks(hyper.batch_size) {
        let batch: Vec<&PseudoLabeledSample> = chunk.iter().map(|&i| &samples[i]).collect();
        let pseudo: Vec<usize> = batch.iter().map(|s| s.pseudo_label).collect();
        let lambdas: Vec<f64> = batch
            .iter()
            .map(|s| mixing_ratio(s.uncertainty, &rule, rng))
            .collect();
        for (s, &lam) in batch.iter().zip(&lambdas) {
            lambda_sum[s.source] += lam;
            lambda_n[s.source] += 1;
        }
        let partners = sample_match(&pseudo, index, rng)?;
        let xu = Tensor::from_rows(labeled.dim(), batch.iter().map(|s| s.x.as_slice()))?;
        let xl = labeled.inputs.select_rows(&partners)?;
        let yl: Vec<usize> = partners.iter().map(|&i| labels[i]).collect();
        let (xm, ym) = udmix(&xl, &xu, &yl, &pseudo, &lambdas)?;

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let targets = Tensor::one_hot(&ym, classes)?;
        let xm = tape.constant(xm);
        let ce = if chunk.len() >= 2 {
            mixup_ce_loss(
                model,
                &mut tape,
                &bound,
                xm,
                &targets,
                hyper.mixup_alpha,
                hyper.mixup_targets,
                rng,
            )?
        } else {
            let logits = model.forward_logits(&mut tape, &bound, xm)?;
            tape.cross_entropy(logits, &targets)?
        };
        ce_total += tape.value(ce).data()[0];
        let loss = if hyper.alpha > 0.0 {
            let both = Tensor::from_rows(xl.cols(), xl.rows_iter().chain(xu.rows_iter()))?;
            let mut pml_labels = yl;
            pml_labels.extend_from_slice(&pseudo);
            let xb = tape.constant(both);
            let mut pml = pml_loss(model, &mut tape, &bound, xb, &pml_labels, anchors)?;
            if hyper.pml_reduction == Reduction::Mean {
                pml = tape.scale(pml, 1.0 / pml_labels.len() as f64);
            }
            pml_total += tape.value(pml).data()[0];
            let weighted = tape.scale(pml, hyper.alpha);
            tape.add(ce, weighted)?
        } else {
            ce
        };
        let grads = tape.backward(loss)?;
        sgd.step(model.params_mut(), &grads)?;
        steps += 1;
    }
    let mean_lambda = lambda_sum
        .iter()
        .zip(&lambda_n)
        .map(|(s, &n)| if n == 0 { f64::NAN } else { s / n as f64 })
        .collect();
    let per = |t: f64| if steps == 0 { 0.0 } else { t / steps as f64 };
    Ok(EpochStats {
        mean_lambda,
        loss_ce: per(ce_total),
        loss_pml: per(pml_total),
        steps,
    })
}

/// Argmax accuracy on the held-out domain.
pub fn evaluate(model: &Model, test: &HeldOutDomain) -> Result<f64> {
    model.accuracy(test.open_for_evaluation())
}

/// Runs `hyper.epochs` epochs from a pretrained model. Each epoch rebuilds the
/// prototypes and pseudo-labels of every unlabeled source from the current
/// model, estimates their uncertainty, then trains on mixed batches. `hidden`
/// is consulted only for the pseudo-label accuracy metric and `test` only for
/// the per-epoch evaluation.
pub fn proud_train(
    model: &Model,
    labeled: &DomainDataset,
    unlabeled: &[DomainDataset],
    hidden: &[HiddenLabels],
    test: &HeldOutDomain,
    hyper: &ProudHyper,
    seed: u64,
) -> Result<ProudOutcome> {
    hyper.validate()?;
    if unlabeled.is_empty() {
        return Err(Error::Config(
            "at least one unlabeled source domain is required".into(),
        ));
    }
    if hidden.len() != unlabeled.len()
        || hidden
            .iter()
            .zip(unlabeled)
            .any(|(h, u)| h.domain_id() != u.domain_id)
    {
        return Err(Error::InvalidArgument(
            "hidden labels do not match the unlabeled domains".into(),
        ));
    }
    let classes = model.spec().classes;
    let labels = labeled.labels()?;
    let index = ClassIndex::new(labels, classes)?;
    let mut current = model.clone();
    let mut sgd = Sgd::new(hyper.lr, hyper.momentum, hyper.weight_decay)?;
    let mut dapp_rng = rng::stream(seed, STREAM_DAPP);
    let mut batch_rng = rng::stream(seed, STREAM_BATCH);
    let mut history = Vec::with_capacity(hyper.epochs);
    let mut bank = None;
    let mut features = Vec::new();

    for epoch in 0..hyper.epochs {
        let mut domain_ids = Vec::new();
        let mut protos = Vec::new();
        features.clear();
        if hyper.anchors_include_labeled {
            let (normed, probs) = embed(&current, &labeled.inputs)?;
            let fallback = soft_prototypes(&normed, &probs)?;
            protos.push(hard_prototypes(&normed, labels, &fallback)?);
            domain_ids.push(labeled.domain_id);
            features.push((labeled.domain_id, normed));
        }
        let mut samples = Vec::new();
        let mut pl_acc = Vec::with_capacity(unlabeled.len());
        let mut mean_unc = Vec::with_capacity(unlabeled.len());
        for (source, (ds, truth)) in unlabeled.iter().zip(hidden).enumerate() {
            let out = dapp(&current, ds, hyper, &mut dapp_rng)?;
            let eps = uncertainties(&out.features, &out.prototypes, hyper.tau_eps)?;
            pl_acc.push(agreement(&out.labels, truth.reveal_for_metrics()));
            mean_unc.push(eps.iter().sum::<f64>() / eps.len() as f64);
            for (i, (&y, &e)) in out.labels.iter().zip(&eps).enumerate() {
                samples.push(PseudoLabeledSample {
                    x: ds.inputs.row_slice(i).to_vec(),
                    pseudo_label: y,
                    uncertainty: e,
                    lambda_eps: lambda_from_uncertainty(e, hyper.tau_lambda),
                    source,
                });
            }
            protos.push(out.prototypes);
            domain_ids.push(ds.domain_id);
            features.push((ds.domain_id, out.features));
        }
        let b = PrototypeBank::new(domain_ids, protos, epoch)?;
        let stats = train_epoch(
            &mut current,
            &mut sgd,
            labeled,
            &index,
            &samples,
            unlabeled.len(),
            &b.anchors,
            hyper,
            &mut batch_rng,
        )?;
        bank = Some(b);
        history.push(EpochRecord {
            epoch,
            test_acc: evaluate(&current, test)?,
            pl_acc,
            mean_lambda: stats.mean_lambda,
            mean_uncertainty: mean_unc,
            loss_ce: stats.loss_ce,
            loss_pml: stats.loss_pml,
        });
    }
    Ok(ProudOutcome {
        model: current,
        history,
        bank,
        features,
    })
}

/// Labeled-only baseline: continues supervised training on `labeled` for
/// `hyper.epochs` epochs with the same optimizer settings.
pub fn erm_train(
    model: &Model,
    labeled: &DomainDataset,
    sources: usize,
    test: &HeldOutDomain,
    hyper: &ProudHyper,
    seed: u64,
) -> Result<ProudOutcome> {
    hyper.validate()?;
    let mut current = model.clone();
    let mut sgd = Sgd::new(hyper.lr, hyper.momentum, hyper.weight_decay)?;
    let mut rng = rng::stream(seed, STREAM_BATCH);
    let mut history = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let loss = supervised_epoch(&mut current, &mut sgd, labeled, hyper.batch_size, &mut rng)?;
        history.push(EpochRecord {
            epoch,
            test_acc: evaluate(&current, test)?,
            pl_acc: alloc::vec![f64::NAN; sources],
            mean_lambda: alloc::vec![f64::NAN; sources],
            mean_uncertainty: alloc::vec![f64::NAN; sources],
            loss_ce: loss,
            loss_pml: f64::NAN,
        });
    }
    if history.len() != hyper.epochs {
        return Err(Error::Invariant(format!(
            "history has {} epochs",
            history.len()
        )));
    }
    Ok(ProudOutcome {
        model: current,
        history,
        bank: None,
        features: Vec::new(),
    })
}
