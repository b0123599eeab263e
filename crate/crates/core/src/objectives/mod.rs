//! Training objectives with gradients.
//!
//! Every loss is evaluated on a [`Tape`](crate::autodiff::Tape), so the value
//! and the gradients with respect to the batch rows (plus proxies and the
//! margin boundary, where present) come out of one pass.
//!
//! Inputs are raw embedding coordinates. Losses that work on the unit
//! hypersphere normalize rows inside the graph, so their gradients are taken
//! with respect to the raw coordinates and are tangent to the sphere at unit
//! inputs.
//!
//! Losses averaged over tuples divide by the number of tuples actually
//! formed; an empty tuple set yields a zero loss with zero gradient.

mod batch;
mod pairs;
mod proxy;

use std::f64::consts::FRAC_PI_4;

use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{self, Tape, Var};
use crate::embedding::{l2_norm, EmbeddingMatrix, LabelVector};
use crate::error::{Error, Result};
use crate::mining::TupleSet;
use crate::rng;

pub use batch::{
    angular_loss, generalized_lifted_loss, histogram_loss, histogram_overlap, multisimilarity_loss,
    multisimilarity_terms, npair_loss,
};
pub use pairs::{
    contrastive_loss, margin_loss, mine_mixup_triplets, mix_embeddings, mixup_triplet_loss,
    quadruplet_loss, snr_loss, triplet_loss, MixedLabel,
};
pub use proxy::{arcface_loss, normalized_softmax_loss, proxynca_loss, softtriple_loss};

/// Histogram resolution used for CUB200-2011 and CARS196.
pub const HISTOGRAM_BINS_CUB_CARS: usize = 65;
/// Histogram resolution used for Stanford Online Products.
pub const HISTOGRAM_BINS_SOP: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Contrastive,
    Triplet,
    Margin,
    GeneralizedLifted,
    NPair,
    Angular,
    ArcFace,
    Histogram,
    MultiSimilarity,
    ProxyNca,
    Quadruplet,
    Snr,
    SoftTriple,
    NormalizedSoftmax,
    MixupTriplet,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 15] = [
        ObjectiveKind::Contrastive,
        ObjectiveKind::Triplet,
        ObjectiveKind::Margin,
        ObjectiveKind::GeneralizedLifted,
        ObjectiveKind::NPair,
        ObjectiveKind::Angular,
        ObjectiveKind::ArcFace,
        ObjectiveKind::Histogram,
        ObjectiveKind::MultiSimilarity,
        ObjectiveKind::ProxyNca,
        ObjectiveKind::Quadruplet,
        ObjectiveKind::Snr,
        ObjectiveKind::SoftTriple,
        ObjectiveKind::NormalizedSoftmax,
        ObjectiveKind::MixupTriplet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Contrastive => "contrastive",
            ObjectiveKind::Triplet => "triplet",
            ObjectiveKind::Margin => "margin",
            ObjectiveKind::GeneralizedLifted => "genlifted",
            ObjectiveKind::NPair => "npair",
            ObjectiveKind::Angular => "angular",
            ObjectiveKind::ArcFace => "arcface",
            ObjectiveKind::Histogram => "histogram",
            ObjectiveKind::MultiSimilarity => "multisimilarity",
            ObjectiveKind::ProxyNca => "proxynca",
            ObjectiveKind::Quadruplet => "quadruplet",
            ObjectiveKind::Snr => "snr",
            ObjectiveKind::SoftTriple => "softtriple",
            ObjectiveKind::NormalizedSoftmax => "softmax",
            ObjectiveKind::MixupTriplet => "mixup_triplet",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn uses_proxies(self) -> bool {
        matches!(
            self,
            ObjectiveKind::ArcFace
                | ObjectiveKind::ProxyNca
                | ObjectiveKind::SoftTriple
                | ObjectiveKind::NormalizedSoftmax
        )
    }
}

/// Loss identifier plus every hyperparameter any loss reads.
///
/// [`ObjectiveSpec::new`] fills in the published defaults; fields not read
/// by the selected loss are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Primary margin: pair margin (contrastive), triplet margin, lifted
    /// margin, first quadruplet margin, SNR margin, arcface angular margin.
    pub gamma: f64,
    /// Second quadruplet margin.
    pub gamma2: f64,
    /// Initial margin-loss boundary.
    pub beta: f64,
    pub beta_lr: f64,
    /// Squared-norm penalty for losses on raw embeddings.
    pub nu: f64,
    pub angular_alpha: f64,
    pub angular_lambda: f64,
    pub msim_alpha: f64,
    pub msim_beta: f64,
    pub msim_lambda: f64,
    pub msim_epsilon: f64,
    pub snr_lambda: f64,
    pub temperature: f64,
    pub scale: f64,
    pub bins: usize,
    pub st_tau: f64,
    pub st_lambda: f64,
    pub st_delta: f64,
    pub st_gamma: f64,
    pub proxies_per_class: usize,
    pub proxy_lr: f64,
    pub p_switch: f64,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        let gamma = match kind {
            ObjectiveKind::Contrastive | ObjectiveKind::GeneralizedLifted | ObjectiveKind::Quadruplet => 1.0,
            ObjectiveKind::ArcFace => 0.5,
            ObjectiveKind::SoftTriple => 0.1,
            _ => 0.2,
        };
        let proxy_lr = match kind {
            ObjectiveKind::SoftTriple | ObjectiveKind::NormalizedSoftmax => 1e-5,
            _ => 5e-4,
        };
        Self {
            kind,
            gamma,
            gamma2: 0.5,
            beta: 1.2,
            beta_lr: 5e-4,
            nu: 0.005,
            angular_alpha: FRAC_PI_4,
            angular_lambda: 2.0,
            msim_alpha: 2.0,
            msim_beta: 40.0,
            msim_lambda: 0.5,
            msim_epsilon: 0.1,
            snr_lambda: 0.005,
            temperature: 0.05,
            scale: 16.0,
            bins: HISTOGRAM_BINS_CUB_CARS,
            st_tau: 0.2,
            st_lambda: 8.0,
            st_delta: 0.01,
            st_gamma: 0.1,
            proxies_per_class: if kind == ObjectiveKind::SoftTriple { 2 } else { 1 },
            proxy_lr,
            p_switch: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let margins = [
            ("gamma", self.gamma),
            ("gamma2", self.gamma2),
            ("beta", self.beta),
            ("st_delta", self.st_delta),
            ("msim_epsilon", self.msim_epsilon),
        ];
        for (name, v) in margins {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if self.bins < 2 {
            return Err(Error::invalid(format!("bins must be >= 2, got {}", self.bins)));
        }
        if !(0.0..=1.0).contains(&self.p_switch) {
            return Err(Error::invalid(format!(
                "p_switch must lie in [0, 1], got {}",
                self.p_switch
            )));
        }
        if self.proxies_per_class == 0 {
            return Err(Error::invalid("proxies_per_class must be >= 1"));
        }
        if !(self.st_gamma > 0.0) || !(self.msim_alpha > 0.0) || !(self.msim_beta > 0.0) {
            return Err(Error::invalid("softmax temperatures must be > 0"));
        }
        Ok(())
    }
}

/// Learnable class proxies, `classes x per_class x dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyBank {
    data: Vec<f64>,
    classes: usize,
    per_class: usize,
    dim: usize,
    pub learn_rate: f64,
}

impl ProxyBank {
    pub fn new(data: Vec<f64>, classes: usize, per_class: usize, dim: usize, learn_rate: f64) -> Result<Self> {
        if classes == 0 || per_class == 0 || dim == 0 {
            return Err(Error::invalid("proxy bank dimensions must be positive"));
        }
        if data.len() != classes * per_class * dim {
            return Err(Error::DimensionMismatch {
                expected: classes * per_class * dim,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("proxy bank holds non-finite values"));
        }
        Ok(Self {
            data,
            classes,
            per_class,
            dim,
            learn_rate,
        })
    }

    /// Unit-normalized isotropic Gaussian draws.
    pub fn random(classes: usize, per_class: usize, dim: usize, learn_rate: f64, seed: u64) -> Result<Self> {
        let mut r = rng::seeded(seed);
        let mut data = Vec::with_capacity(classes * per_class * dim);
        for _ in 0..classes * per_class {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let norm = l2_norm(&v);
            data.extend(v.iter().map(|x| x / norm));
        }
        Self::new(data, classes, per_class, dim, learn_rate)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn per_class(&self) -> usize {
        self.per_class
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn proxy(&self, class: usize, k: usize) -> &[f64] {
        let start = (class * self.per_class + k) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Plain gradient step `p -= learn_rate * grad`.
    pub fn apply_gradient(&mut self, grad: &[f64]) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::DimensionMismatch {
                expected: self.data.len(),
                found: grad.len(),
            });
        }
        for (p, g) in self.data.iter_mut().zip(grad) {
            *p -= self.learn_rate * g;
        }
        Ok(())
    }

    pub fn normalize(&mut self) -> Result<()> {
        for (i, chunk) in self.data.chunks_exact_mut(self.dim).enumerate() {
            let norm = l2_norm(chunk);
            if norm == 0.0 {
                return Err(Error::ZeroNorm { row: i });
            }
            chunk.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(())
    }
}

/// Loss value and gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `n x d`, row-major, aligned with the batch.
    pub grad_embeddings: Vec<f64>,
    pub dim: usize,
    /// Same layout as [`ProxyBank::as_slice`].
    pub grad_proxies: Option<Vec<f64>>,
    /// Gradient with respect to the margin-loss boundary.
    pub grad_beta: Option<f64>,
}

impl LossOutput {
    pub fn grad_row(&self, i: usize) -> &[f64] {
        &self.grad_embeddings[i * self.dim..(i + 1) * self.dim]
    }
}

/// Extra inputs for [`evaluate`].
#[derive(Debug, Clone, Copy, Default)]
pub struct LossInputs<'a> {
    pub tuples: Option<&'a TupleSet>,
    pub proxies: Option<&'a ProxyBank>,
    /// Current margin-loss boundary; defaults to `spec.beta`.
    pub beta: Option<f64>,
    pub mixed_labels: Option<&'a [MixedLabel]>,
    pub mixup_triplets: Option<&'a [TupleSet]>,
}

fn require<'a, T: ?Sized>(v: Option<&'a T>, what: &str, kind: ObjectiveKind) -> Result<&'a T> {
    v.ok_or_else(|| Error::invalid(format!("{} loss needs {what}", kind.name())))
}

/// Dispatches to the loss selected by `spec.kind`.
pub fn evaluate(
    spec: &ObjectiveSpec,
    batch: &EmbeddingMatrix,
    labels: &LabelVector,
    inputs: LossInputs<'_>,
) -> Result<LossOutput> {
    let k = spec.kind;
    match k {
        ObjectiveKind::Contrastive => contrastive_loss(batch, labels, require(inputs.tuples, "pairs", k)?, spec),
        ObjectiveKind::Triplet => triplet_loss(batch, labels, require(inputs.tuples, "triplets", k)?, spec),
        ObjectiveKind::Margin => margin_loss(
            batch,
            labels,
            require(inputs.tuples, "pairs or triplets", k)?,
            spec,
            inputs.beta.unwrap_or(spec.beta),
        ),
        ObjectiveKind::GeneralizedLifted => generalized_lifted_loss(batch, labels, spec),
        ObjectiveKind::NPair => npair_loss(batch, labels, spec),
        ObjectiveKind::Angular => angular_loss(batch, labels, spec),
        ObjectiveKind::ArcFace => arcface_loss(batch, labels, require(inputs.proxies, "a proxy bank", k)?, spec),
        ObjectiveKind::Histogram => histogram_loss(batch, labels, spec),
        ObjectiveKind::MultiSimilarity => multisimilarity_loss(batch, labels, spec),
        ObjectiveKind::ProxyNca => proxynca_loss(batch, labels, require(inputs.proxies, "a proxy bank", k)?, spec),
        ObjectiveKind::Quadruplet => quadruplet_loss(batch, labels, require(inputs.tuples, "quadruplets", k)?, spec),
        ObjectiveKind::Snr => snr_loss(batch, labels, require(inputs.tuples, "triplets", k)?, spec),
        ObjectiveKind::SoftTriple => softtriple_loss(batch, labels, require(inputs.proxies, "a proxy bank", k)?, spec),
        ObjectiveKind::NormalizedSoftmax => {
            normalized_softmax_loss(batch, labels, require(inputs.proxies, "a proxy bank", k)?, spec)
        }
        ObjectiveKind::MixupTriplet => mixup_triplet_loss(
            batch,
            require(inputs.mixed_labels, "mixed labels", k)?,
            require(inputs.mixup_triplets, "per-entry triplet sets", k)?,
            spec,
        ),
    }
}

/// Graph inputs handed to a loss builder.
pub(crate) struct Inputs<'t> {
    pub tape: &'t Tape,
    pub rows: Vec<Vec<Var<'t>>>,
    pub proxies: Option<Vec<Vec<Var<'t>>>>,
    pub beta: Option<Var<'t>>,
}

impl<'t> Inputs<'t> {
    pub fn zero(&self) -> Var<'t> {
        self.tape.constant(0.0)
    }

    /// Rows projected onto the unit sphere.
    pub fn unit_rows(&self) -> Result<Vec<Vec<Var<'t>>>> {
        unit(&self.rows)
    }

    pub fn unit_proxies(&self) -> Result<Vec<Vec<Var<'t>>>> {
        unit(self.proxies.as_ref().expect("proxy inputs present"))
    }
}

fn unit<'t>(rows: &[Vec<Var<'t>>]) -> Result<Vec<Vec<Var<'t>>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            if r.iter().all(|v| v.value() == 0.0) {
                Err(Error::ZeroNorm { row: i })
            } else {
                Ok(autodiff::normalize(r))
            }
        })
        .collect()
}

/// Builds the loss graph with `build` and back-propagates through it.
pub(crate) fn differentiate<F>(
    batch: &EmbeddingMatrix,
    proxies: Option<&ProxyBank>,
    beta: Option<f64>,
    build: F,
) -> Result<LossOutput>
where
    F: for<'t> FnOnce(&Inputs<'t>) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let rows: Vec<Vec<Var<'_>>> = batch.iter_rows().map(|r| tape.vars(r)).collect();
    let proxy_vars = proxies.map(|p| p.as_slice().chunks_exact(p.dim()).map(|c| tape.vars(c)).collect());
    let beta_var = beta.map(|b| tape.var(b));
    let inputs = Inputs {
        tape: &tape,
        rows,
        proxies: proxy_vars,
        beta: beta_var,
    };
    let out = build(&inputs)?;
    if !out.value().is_finite() {
        return Err(Error::invalid(format!("loss evaluated to {}", out.value())));
    }
    let grads = tape.gradient(out);
    let grad_embeddings = inputs.rows.iter().flat_map(|r| grads.wrt_all(r)).collect();
    let grad_proxies = inputs
        .proxies
        .as_ref()
        .map(|ps| ps.iter().flat_map(|r| grads.wrt_all(r)).collect());
    Ok(LossOutput {
        value: out.value(),
        grad_embeddings,
        dim: batch.dim(),
        grad_proxies,
        grad_beta: inputs.beta.map(|b| grads.wrt(b)),
    })
}

/// `total / count`, or zero for an empty set.
pub(crate) fn mean_of<'t>(tape: &'t Tape, terms: Vec<Var<'t>>) -> Var<'t> {
    let n = terms.len();
    if n == 0 {
        return tape.constant(0.0);
    }
    autodiff::sum(tape, terms) / n as f64
}

pub(crate) fn check_labels(batch: &EmbeddingMatrix, labels: &LabelVector) -> Result<()> {
    labels.check_len(batch.rows())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_defaults() {
        let t = ObjectiveSpec::new(ObjectiveKind::Triplet);
        assert_eq!(t.gamma, 0.2);
        assert_eq!(ObjectiveSpec::new(ObjectiveKind::Contrastive).gamma, 1.0);
        let m = ObjectiveSpec::new(ObjectiveKind::Margin);
        assert_eq!((m.gamma, m.beta, m.beta_lr), (0.2, 1.2, 0.0005));
        let ms = ObjectiveSpec::new(ObjectiveKind::MultiSimilarity);
        assert_eq!((ms.msim_alpha, ms.msim_beta, ms.msim_lambda, ms.msim_epsilon), (2.0, 40.0, 0.5, 0.1));
        let st = ObjectiveSpec::new(ObjectiveKind::SoftTriple);
        assert_eq!(
            (st.st_tau, st.st_lambda, st.st_delta, st.st_gamma, st.proxies_per_class),
            (0.2, 8.0, 0.01, 0.1, 2)
        );
        assert_eq!(ObjectiveSpec::new(ObjectiveKind::NormalizedSoftmax).temperature, 0.05);
        assert_eq!(ObjectiveSpec::new(ObjectiveKind::ArcFace).scale, 16.0);
        assert_eq!(ObjectiveSpec::new(ObjectiveKind::Histogram).bins, 65);
        for k in ObjectiveKind::ALL {
            ObjectiveSpec::new(k).validate().unwrap();
            assert_eq!(ObjectiveKind::from_name(k.name()), Some(k));
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = ObjectiveSpec::new(ObjectiveKind::Histogram);
        s.bins = 1;
        assert!(s.validate().is_err());
        let mut s = ObjectiveSpec::new(ObjectiveKind::Triplet);
        s.gamma = -0.1;
        assert!(s.validate().is_err());
        let mut s = ObjectiveSpec::new(ObjectiveKind::Triplet);
        s.p_switch = 1.1;
        assert!(s.validate().is_err());
        let mut s = ObjectiveSpec::new(ObjectiveKind::NormalizedSoftmax);
        s.temperature = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn proxy_bank_random_is_unit_and_seeded() {
        let a = ProxyBank::random(3, 2, 5, 0.1, 4).unwrap();
        let b = ProxyBank::random(3, 2, 5, 0.1, 4).unwrap();
        assert_eq!(a, b);
        for c in 0..3 {
            for k in 0..2 {
                assert!((l2_norm(a.proxy(c, k)) - 1.0).abs() < 1e-12);
            }
        }
    }
}
