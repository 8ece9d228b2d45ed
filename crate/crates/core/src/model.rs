//! TSK rule base and forward inference.
//!
//! Each rule `r` has Gaussian antecedents `(m[r][d], sigma[r][d])` and one
//! affine consequent per class. Firing levels are kept in log space and
//! normalized with a max-shifted softmax, so rules far from the input never
//! underflow to a 0/0 normalization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batchnorm::{BatchStats, BnState};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Lower clamp on `sigma^2` wherever it is used as a divisor.
pub const SIGMA_SQ_MIN: f64 = 1e-16;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnVariant {
    /// Plain TSK.
    None,
    /// One BN layer shared by all rule consequents; antecedents see raw input.
    Consequent,
    /// BN output feeds both antecedents and consequents.
    Global,
    /// Each rule's consequent has its own BN layer; antecedents see raw input.
    RuleSpecific,
}

impl BnVariant {
    pub fn is_active(self) -> bool {
        self != BnVariant::None
    }

    /// Number of BN blocks a model with `rules` rules carries.
    pub fn blocks(self, rules: usize) -> usize {
        match self {
            BnVariant::None => 0,
            BnVariant::Consequent | BnVariant::Global => 1,
            BnVariant::RuleSpecific => rules,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Antecedents {
    rules: usize,
    dims: usize,
    centers: Vec<f64>,
    spreads: Vec<f64>,
}

impl Antecedents {
    pub fn from_parts(rules: usize, dims: usize, centers: Vec<f64>, spreads: Vec<f64>) -> Result<Self> {
        if rules == 0 {
            return Err(Error::InconsistentModel("at least one rule is required".into()));
        }
        if centers.len() != rules * dims {
            return Err(Error::dims("antecedent centers", rules * dims, centers.len()));
        }
        if spreads.len() != rules * dims {
            return Err(Error::dims("antecedent spreads", rules * dims, spreads.len()));
        }
        Ok(Self {
            rules,
            dims,
            centers,
            spreads,
        })
    }

    pub fn rules(&self) -> usize {
        self.rules
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn center(&self, r: usize) -> &[f64] {
        &self.centers[r * self.dims..(r + 1) * self.dims]
    }

    pub fn spread(&self, r: usize) -> &[f64] {
        &self.spreads[r * self.dims..(r + 1) * self.dims]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn spreads(&self) -> &[f64] {
        &self.spreads
    }

    pub fn centers_mut(&mut self) -> &mut [f64] {
        &mut self.centers
    }

    pub fn spreads_mut(&mut self) -> &mut [f64] {
        &mut self.spreads
    }
}

/// Per-class affine consequents. Weights are laid out `[r][d][c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Consequents {
    rules: usize,
    dims: usize,
    classes: usize,
    bias: Vec<f64>,
    weights: Vec<f64>,
}

impl Consequents {
    pub fn zeros(rules: usize, dims: usize, classes: usize) -> Self {
        Self {
            rules,
            dims,
            classes,
            bias: vec![0.0; rules * classes],
            weights: vec![0.0; rules * dims * classes],
        }
    }

    pub fn from_parts(rules: usize, dims: usize, classes: usize, bias: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if bias.len() != rules * classes {
            return Err(Error::dims("consequent bias", rules * classes, bias.len()));
        }
        if weights.len() != rules * dims * classes {
            return Err(Error::dims("consequent weights", rules * dims * classes, weights.len()));
        }
        Ok(Self {
            rules,
            dims,
            classes,
            bias,
            weights,
        })
    }

    pub fn rules(&self) -> usize {
        self.rules
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    #[inline]
    pub fn bias(&self, r: usize, c: usize) -> f64 {
        self.bias[r * self.classes + c]
    }

    #[inline]
    pub fn weight(&self, r: usize, d: usize, c: usize) -> f64 {
        self.weights[(r * self.dims + d) * self.classes + c]
    }

    pub fn bias_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.bias[r * self.classes + c]
    }

    pub fn weight_mut(&mut self, r: usize, d: usize, c: usize) -> &mut f64 {
        &mut self.weights[(r * self.dims + d) * self.classes + c]
    }

    pub fn bias_slice(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias_slice_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn weight_slice_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    /// Weights of rule `r` as a `D x C` row-major block.
    #[inline]
    pub(crate) fn rule_weights(&self, r: usize) -> &[f64] {
        let w = self.dims * self.classes;
        &self.weights[r * w..(r + 1) * w]
    }

    #[inline]
    pub(crate) fn rule_bias(&self, r: usize) -> &[f64] {
        &self.bias[r * self.classes..(r + 1) * self.classes]
    }
}

/// A TSK fuzzy classifier with optional batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct TskModel {
    pub antecedents: Antecedents,
    pub consequents: Consequents,
    bn_variant: BnVariant,
    bn_state: Vec<BnState>,
}

/// Which statistics BN uses in a forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Mode<'a> {
    /// Running statistics.
    Eval,
    /// Statistics of the current mini-batch.
    Train(&'a BatchStats),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub scores: Vec<f64>,
    /// Normalized firing levels, one per rule.
    pub firing: Vec<f64>,
}

impl TskModel {
    /// Assembles a model; BN blocks (if any) start at gamma=1, beta=0,
    /// running mean 0 and running variance 1.
    pub fn new(antecedents: Antecedents, consequents: Consequents, bn_variant: BnVariant) -> Result<Self> {
        let blocks = bn_variant.blocks(antecedents.rules());
        let bn_state = (0..blocks).map(|_| BnState::new(antecedents.dims())).collect();
        Self::with_bn_state(antecedents, consequents, bn_variant, bn_state)
    }

    pub fn with_bn_state(
        antecedents: Antecedents,
        consequents: Consequents,
        bn_variant: BnVariant,
        bn_state: Vec<BnState>,
    ) -> Result<Self> {
        let model = Self {
            antecedents,
            consequents,
            bn_variant,
            bn_state,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let (r, d) = (self.antecedents.rules(), self.antecedents.dims());
        if self.consequents.rules() != r {
            return Err(Error::dims("consequent rules", r, self.consequents.rules()));
        }
        if self.consequents.dims() != d {
            return Err(Error::dims("consequent dims", d, self.consequents.dims()));
        }
        if self.consequents.classes() == 0 {
            return Err(Error::InconsistentModel("at least one class is required".into()));
        }
        let blocks = self.bn_variant.blocks(r);
        if self.bn_state.len() != blocks {
            return Err(Error::dims("bn blocks", blocks, self.bn_state.len()));
        }
        for s in &self.bn_state {
            s.validate(d)?;
        }
        Ok(())
    }

    pub fn rules(&self) -> usize {
        self.antecedents.rules()
    }

    pub fn dims(&self) -> usize {
        self.antecedents.dims()
    }

    pub fn classes(&self) -> usize {
        self.consequents.classes()
    }

    pub fn bn_variant(&self) -> BnVariant {
        self.bn_variant
    }

    pub fn bn_state(&self) -> &[BnState] {
        &self.bn_state
    }

    pub fn bn_state_mut(&mut self) -> &mut [BnState] {
        &mut self.bn_state
    }

    /// Trainable parameter groups in a fixed order: centers, spreads, bias,
    /// weights, then `gamma`/`beta` of each BN block. [`crate::GradientBundle::groups`]
    /// uses the same order.
    pub fn param_groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut groups: Vec<&mut [f64]> = vec![
            &mut self.antecedents.centers,
            &mut self.antecedents.spreads,
            &mut self.consequents.bias,
            &mut self.consequents.weights,
        ];
        for s in &mut self.bn_state {
            groups.push(&mut s.gamma);
            groups.push(&mut s.beta);
        }
        groups
    }

    /// Feeds one training batch's statistics into every BN block's running
    /// averages. No-op for plain models.
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        for s in &mut self.bn_state {
            s.update_running(stats);
        }
    }

    fn check_mode(&self, mode: Mode<'_>) -> Result<()> {
        match mode {
            Mode::Eval => {
                if self.bn_state.iter().any(|s| !s.is_initialized()) {
                    return Err(Error::UninitializedRunningStats);
                }
            }
            Mode::Train(stats) => {
                if self.bn_variant.is_active() && stats.mean.len() != self.dims() {
                    return Err(Error::dims("batch stats", self.dims(), stats.mean.len()));
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], mode: Mode<'_>) -> Result<ForwardOutput> {
        if x.len() != self.dims() {
            return Err(Error::dims("input features", self.dims(), x.len()));
        }
        self.check_mode(mode)?;
        let mut buf = SampleBuffers::new(self);
        self.forward_into(x, mode, &mut buf);
        Ok(ForwardOutput {
            scores: buf.scores,
            firing: buf.fbar,
        })
    }

    /// Eval-mode class scores for every row of `x`.
    pub fn scores_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dims() {
            return Err(Error::dims("input features", self.dims(), x.cols()));
        }
        self.check_mode(Mode::Eval)?;
        let mut buf = SampleBuffers::new(self);
        let mut out = Matrix::zeros(x.rows(), self.classes());
        for i in 0..x.rows() {
            self.forward_into(x.row(i), Mode::Eval, &mut buf);
            out.row_mut(i).copy_from_slice(&buf.scores);
        }
        Ok(out)
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<usize>> {
        let scores = self.scores_batch(x)?;
        Ok(scores.iter_rows().map(predict).collect())
    }

    /// Eval-mode normalized firing levels (`N x R`).
    pub fn firing_batch(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dims() {
            return Err(Error::dims("input features", self.dims(), x.cols()));
        }
        self.check_mode(Mode::Eval)?;
        let mut buf = SampleBuffers::new(self);
        let mut out = Matrix::zeros(x.rows(), self.rules());
        for i in 0..x.rows() {
            self.forward_into(x.row(i), Mode::Eval, &mut buf);
            out.row_mut(i).copy_from_slice(&buf.fbar);
        }
        Ok(out)
    }

    /// The forward kernel. Dimensions and BN readiness are checked by callers.
    pub(crate) fn forward_into(&self, x: &[f64], mode: Mode<'_>, buf: &mut SampleBuffers) {
        let d_n = self.dims();
        let stats = match mode {
            Mode::Eval => None,
            Mode::Train(s) => Some(s),
        };

        // Consequent inputs (and BN-normalized x_hat per block).
        match self.bn_variant {
            BnVariant::None => buf.z[..d_n].copy_from_slice(x),
            _ => {
                for (b, state) in self.bn_state.iter().enumerate() {
                    let span = b * d_n..(b + 1) * d_n;
                    state.normalize_into(x, stats, &mut buf.x_hat[span.clone()], &mut buf.z[span]);
                }
            }
        }
        let antecedent_input: &[f64] = match self.bn_variant {
            BnVariant::Global => &buf.z[..d_n],
            _ => x,
        };
        buf.a.copy_from_slice(antecedent_input);

        log_firing_into(&buf.a, &self.antecedents, &mut buf.log_f);
        normalized_firing_into(&buf.log_f, &mut buf.fbar);

        let c_n = self.classes();
        let per_rule_input = self.bn_variant == BnVariant::RuleSpecific;
        buf.scores.iter_mut().for_each(|s| *s = 0.0);
        for r in 0..self.rules() {
            let blk = if per_rule_input { r } else { 0 };
            let z = &buf.z[blk * d_n..(blk + 1) * d_n];
            let y = &mut buf.y[r * c_n..(r + 1) * c_n];
            affine_into(z, self.consequents.rule_bias(r), self.consequents.rule_weights(r), y);
            let f = buf.fbar[r];
            for (s, v) in buf.scores.iter_mut().zip(y.iter()) {
                *s += f * v;
            }
        }
    }
}

/// Scratch space for one forward pass, reused across samples.
#[derive(Clone, Debug)]
pub(crate) struct SampleBuffers {
    pub a: Vec<f64>,
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub log_f: Vec<f64>,
    pub fbar: Vec<f64>,
    pub y: Vec<f64>,
    pub scores: Vec<f64>,
}

impl SampleBuffers {
    pub fn new(model: &TskModel) -> Self {
        let (r, d, c) = (model.rules(), model.dims(), model.classes());
        let blocks = model.bn_variant.blocks(r).max(1);
        Self {
            a: vec![0.0; d],
            z: vec![0.0; blocks * d],
            x_hat: vec![0.0; blocks * d],
            log_f: vec![0.0; r],
            fbar: vec![0.0; r],
            y: vec![0.0; r * c],
            scores: vec![0.0; c],
        }
    }
}

#[inline]
fn affine_into(z: &[f64], bias: &[f64], weights: &[f64], out: &mut [f64]) {
    let c_n = bias.len();
    out.copy_from_slice(bias);
    for (d, zd) in z.iter().enumerate() {
        let row = &weights[d * c_n..(d + 1) * c_n];
        for (o, w) in out.iter_mut().zip(row) {
            *o += zd * w;
        }
    }
}

/// Gaussian membership grade `exp(-(x - m)^2 / (2 sigma^2))`.
pub fn membership_grade(x: f64, m: f64, sigma: f64) -> f64 {
    let s2 = (sigma * sigma).max(SIGMA_SQ_MIN);
    (-(x - m) * (x - m) / (2.0 * s2)).exp()
}

#[inline]
fn log_firing_into(x: &[f64], ant: &Antecedents, out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for ((xd, m), s) in x.iter().zip(ant.center(r)).zip(ant.spread(r)) {
            let diff = xd - m;
            acc += diff * diff / (2.0 * (s * s).max(SIGMA_SQ_MIN));
        }
        *o = -acc;
    }
}

/// Log of the product t-norm firing level of every rule.
///
/// # Panics
/// If `x.len() != ant.dims()`.
pub fn log_firing(x: &[f64], ant: &Antecedents) -> Vec<f64> {
    assert_eq!(x.len(), ant.dims(), "input length must match antecedent dims");
    let mut out = vec![0.0; ant.rules()];
    log_firing_into(x, ant, &mut out);
    out
}

#[inline]
fn normalized_firing_into(log_f: &[f64], out: &mut [f64]) {
    let max = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(log_f) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Normalized firing levels from log firing levels (max-shifted softmax).
pub fn normalized_firing(log_f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; log_f.len()];
    normalized_firing_into(log_f, &mut out);
    out
}

/// Rule outputs `y[r][c] = b0[r][c] + sum_d b[r][d][c] x_d` as an `R x C` matrix.
///
/// # Panics
/// If `x.len() != cons.dims()`.
pub fn consequent_outputs(x: &[f64], cons: &Consequents) -> Matrix {
    assert_eq!(x.len(), cons.dims(), "input length must match consequent dims");
    let mut out = Matrix::zeros(cons.rules(), cons.classes());
    for r in 0..cons.rules() {
        affine_into(x, cons.rule_bias(r), cons.rule_weights(r), out.row_mut(r));
    }
    out
}

/// Index of the largest score; ties go to the lowest index.
pub fn predict(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

// ---- serialization ----

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BnStateDoc {
    Shared(BnState),
    PerRule(Vec<BnState>),
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    #[serde(rename = "R")]
    rules: usize,
    #[serde(rename = "D")]
    dims: usize,
    #[serde(rename = "C")]
    classes: usize,
    bn_variant: BnVariant,
    m: Vec<Vec<f64>>,
    sigma: Vec<Vec<f64>>,
    b0: Vec<Vec<f64>>,
    b: Vec<Vec<Vec<f64>>>,
    bn_state: Option<BnStateDoc>,
}

fn chunk(v: &[f64], width: usize) -> Vec<Vec<f64>> {
    if width == 0 {
        return vec![];
    }
    v.chunks(width).map(<[f64]>::to_vec).collect()
}

fn flatten(rows: Vec<Vec<f64>>, width: usize, what: &'static str) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(rows.len() * width);
    for row in rows {
        if row.len() != width {
            return Err(Error::dims(what, width, row.len()));
        }
        out.extend(row);
    }
    Ok(out)
}

impl TskModel {
    pub fn to_json(&self) -> Result<String> {
        let (r, d, c) = (self.rules(), self.dims(), self.classes());
        let doc = ModelDoc {
            version: MODEL_FORMAT_VERSION,
            rules: r,
            dims: d,
            classes: c,
            bn_variant: self.bn_variant,
            m: chunk(self.antecedents.centers(), d),
            sigma: chunk(self.antecedents.spreads(), d),
            b0: chunk(self.consequents.bias_slice(), c),
            b: (0..r).map(|i| chunk(self.consequents.rule_weights(i), c)).collect(),
            bn_state: match self.bn_variant {
                BnVariant::None => None,
                BnVariant::Consequent | BnVariant::Global => Some(BnStateDoc::Shared(self.bn_state[0].clone())),
                BnVariant::RuleSpecific => Some(BnStateDoc::PerRule(self.bn_state.clone())),
            },
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_str(s)?;
        if doc.version != MODEL_FORMAT_VERSION {
            return Err(Error::InconsistentModel(format!(
                "unsupported model format version {}",
                doc.version
            )));
        }
        let (r, d, c) = (doc.rules, doc.dims, doc.classes);
        if doc.m.len() != r || doc.sigma.len() != r || doc.b0.len() != r || doc.b.len() != r {
            return Err(Error::InconsistentModel("per-rule arrays must have R rows".into()));
        }
        let ant = Antecedents::from_parts(
            r,
            d,
            flatten(doc.m, d, "m row")?,
            flatten(doc.sigma, d, "sigma row")?,
        )?;
        let mut weights = Vec::with_capacity(r * d * c);
        for block in doc.b {
            if block.len() != d {
                return Err(Error::dims("b rule block", d, block.len()));
            }
            weights.extend(flatten(block, c, "b row")?);
        }
        let cons = Consequents::from_parts(r, d, c, flatten(doc.b0, c, "b0 row")?, weights)?;
        let bn_state = match doc.bn_state {
            None => vec![],
            Some(BnStateDoc::Shared(s)) => vec![s],
            Some(BnStateDoc::PerRule(v)) => v,
        };
        Self::with_bn_state(ant, cons, doc.bn_variant, bn_state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
