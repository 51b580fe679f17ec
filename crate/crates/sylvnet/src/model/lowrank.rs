//! Low-rank model: per-network embedding pipelines fused by residual
//! summation; predictions are calibrated dot products, so the prediction
//! matrix has rank at most the embedding width.
//!
//! Per network, on top of the encoder output `U = MLP(F)`:
//!
//! - graph branch: L layers of `U <- act((diag(s) + (I - diag(s)) A~) U W_l)`,
//!   computed in operator form (never materializes an n x n matrix);
//! - within-network attention branch: `act(B U W)` with row-softmax gram `B`;
//! - per-class prior branch: `V_i = act(H_i U_other T_i)` for each rating
//!   class indicator `H_i`, concatenated and reduced by one linear layer;
//! - cross-network attention branch: `act(C U_other T)` with cross softmax `C`.
//!
//! With the attention branches disabled the whole pipeline stays O(nnz * r),
//! which is the memory-lean variant.

use super::mlp::MlpSpec;
use super::{glorot, one_minus, ModelError, ParamNodes};
use crate::data::PriorAssociation;
use crate::diff::{ActivationKind, NodeId, ParamSet, Tape};
use crate::sparse::CsrMatrix;
use crate::Mat;
use ndarray::Array2;
use rand::Rng;
use std::sync::Arc;

/// Which embedding branches are active (on both networks).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchFlags {
    pub cge: bool,
    pub attention: bool,
    pub prior: bool,
    pub cross_attention: bool,
}

impl BranchFlags {
    pub fn all() -> Self {
        Self { cge: true, attention: true, prior: true, cross_attention: true }
    }

    /// Graph-only variant: both attention branches disabled.
    pub fn graph_only(self) -> Self {
        Self { attention: false, cross_attention: false, ..self }
    }

    /// Attention-only variant: the graph branch disabled.
    pub fn attention_only(self) -> Self {
        Self { cge: false, ..self }
    }

    pub fn count(&self) -> usize {
        usize::from(self.cge)
            + usize::from(self.attention)
            + usize::from(self.prior)
            + usize::from(self.cross_attention)
    }
}

#[derive(Debug, Clone)]
pub struct LowRankConfig {
    /// Embedding width r.
    pub hidden_dim: usize,
    /// Graph-branch depth L.
    pub cge_layers: usize,
    /// Encoder depth; 1 = single linear map.
    pub encoder_layers: usize,
    pub encoder_activation: ActivationKind,
    pub branch_activation: ActivationKind,
    pub branches: BranchFlags,
    /// Number of rating classes K for the per-class prior branch.
    pub num_classes: usize,
}

impl Default for LowRankConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            cge_layers: 2,
            encoder_layers: 2,
            encoder_activation: ActivationKind::Relu,
            branch_activation: ActivationKind::Relu,
            branches: BranchFlags::all(),
            num_classes: 5,
        }
    }
}

impl LowRankConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 {
            return Err(ModelError::Config("hidden_dim must be at least 1".into()));
        }
        if self.cge_layers == 0 {
            return Err(ModelError::Config("cge_layers must be at least 1".into()));
        }
        if self.encoder_layers == 0 {
            return Err(ModelError::Config("encoder_layers must be at least 1".into()));
        }
        if self.branches.prior && self.num_classes == 0 {
            return Err(ModelError::Config("prior branch requires num_classes >= 1".into()));
        }
        Ok(())
    }
}

/// Sparse per-class indicators of the (train-visible) prior: `H_i` holds a
/// one where the rating equals class i. Their sum is the observation mask.
#[derive(Debug, Clone)]
pub struct PriorIndicators {
    pub per_class: Vec<Arc<CsrMatrix>>,
    pub per_class_t: Vec<Arc<CsrMatrix>>,
}

impl PriorIndicators {
    pub fn build(prior: &PriorAssociation) -> Self {
        let k = prior.classes.len();
        let mut triplets: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); k];
        for (i, j, value) in prior.observed_entries() {
            let class = prior
                .class_index(value)
                .expect("observed entries were validated against the class list");
            triplets[class].push((i, j, 1.0));
        }
        let (n1, n2) = (prior.n1(), prior.n2());
        let per_class: Vec<Arc<CsrMatrix>> = triplets
            .iter()
            .map(|t| Arc::new(CsrMatrix::from_triplets(n1, n2, t)))
            .collect();
        let per_class_t = per_class.iter().map(|m| Arc::new(m.transpose())).collect();
        Self { per_class, per_class_t }
    }
}

/// Per-forward inputs. `indicators` is required when the prior branch is on.
pub struct LowRankInputs<'a> {
    pub f1: &'a Mat,
    pub f2: &'a Mat,
    pub a1: Arc<CsrMatrix>,
    pub a2: Arc<CsrMatrix>,
    pub indicators: Option<&'a PriorIndicators>,
}

/// Forward products: final embeddings plus the calibration scalars applied to
/// their dot products.
pub struct LowRankOutput {
    pub u1: NodeId,
    pub u2: NodeId,
    pub scale: NodeId,
    pub shift: NodeId,
}

pub struct LowRankModel {
    pub cfg: LowRankConfig,
    enc1: MlpSpec,
    enc2: MlpSpec,
    concat1: MlpSpec,
    concat2: MlpSpec,
}

impl LowRankModel {
    pub fn new(cfg: LowRankConfig, d1: usize, d2: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        let r = cfg.hidden_dim;
        let enc1 = MlpSpec::encoder("enc1", d1, r, cfg.encoder_layers, cfg.encoder_activation);
        let enc2 = MlpSpec::encoder("enc2", d2, r, cfg.encoder_layers, cfg.encoder_activation);
        let concat1 = MlpSpec::linear("net1.prior.concat", cfg.num_classes * r, r);
        let concat2 = MlpSpec::linear("net2.prior.concat", cfg.num_classes * r, r);
        Ok(Self { cfg, enc1, enc2, concat1, concat2 })
    }

    pub fn init_params<R: Rng>(&self, n1: usize, n2: usize, rng: &mut R) -> ParamSet {
        let r = self.cfg.hidden_dim;
        let mut params = ParamSet::new();
        self.enc1.push_params(&mut params, rng);
        self.enc2.push_params(&mut params, rng);
        for (side, n) in [(1, n1), (2, n2)] {
            params.push(format!("net{side}.sigma.raw"), Array2::zeros((n, 1)), false);
            for layer in 0..self.cfg.cge_layers {
                params.push(format!("net{side}.cge.w{layer}"), glorot(rng, r, r), true);
            }
            params.push(format!("net{side}.attn.w"), glorot(rng, r, r), true);
            for class in 0..self.cfg.num_classes {
                params.push(format!("net{side}.prior.theta{class}"), glorot(rng, r, r), true);
            }
            params.push(format!("net{side}.cross.w"), glorot(rng, r, r), true);
        }
        self.concat1.push_params(&mut params, rng);
        self.concat2.push_params(&mut params, rng);
        params.push("out.scale", Array2::from_elem((1, 1), 1.0), false);
        params.push("out.shift", Array2::zeros((1, 1)), false);
        params
    }

    /// Graph branch: L operator-form layers on top of `u`.
    fn graph_branch(
        &self,
        tape: &mut Tape,
        side: usize,
        a: &Arc<CsrMatrix>,
        u: NodeId,
        pnodes: &ParamNodes,
    ) -> Result<NodeId, ModelError> {
        let raw = pnodes.get(&format!("net{side}.sigma.raw"));
        let sigma = tape.activation(raw, ActivationKind::Sigmoid);
        let om = one_minus(tape, sigma);
        let mut cur = u;
        for layer in 0..self.cfg.cge_layers {
            let self_part = tape.row_scale(cur, sigma)?;
            let agg = tape.spmm(a.clone(), cur)?;
            let neigh_part = tape.row_scale(agg, om)?;
            let mixed = tape.add(self_part, neigh_part)?;
            let w = pnodes.get(&format!("net{side}.cge.w{layer}"));
            let lin = tape.matmul(mixed, w)?;
            cur = tape.activation(lin, self.cfg.branch_activation);
        }
        Ok(cur)
    }

    fn attention_branch(
        &self,
        tape: &mut Tape,
        side: usize,
        u: NodeId,
        pnodes: &ParamNodes,
    ) -> Result<NodeId, ModelError> {
        let b = tape.row_softmax_gram(u, u)?;
        let agg = tape.matmul(b, u)?;
        let w = pnodes.get(&format!("net{side}.attn.w"));
        let lin = tape.matmul(agg, w)?;
        Ok(tape.activation(lin, self.cfg.branch_activation))
    }

    /// Per-class prior branch for one side. `indicators` must map this side's
    /// nodes to the other side's (already transposed for network 2).
    fn prior_branch(
        &self,
        tape: &mut Tape,
        side: usize,
        indicators: &[Arc<CsrMatrix>],
        u_other: NodeId,
        pnodes: &ParamNodes,
        concat: &MlpSpec,
    ) -> Result<NodeId, ModelError> {
        let mut parts = Vec::with_capacity(self.cfg.num_classes);
        for (class, h_i) in indicators.iter().enumerate() {
            let agg = tape.spmm(h_i.clone(), u_other)?;
            let theta = pnodes.get(&format!("net{side}.prior.theta{class}"));
            let lin = tape.matmul(agg, theta)?;
            parts.push(tape.activation(lin, self.cfg.branch_activation));
        }
        let stacked = tape.concat_cols(&parts)?;
        Ok(concat.forward(tape, stacked, pnodes)?)
    }

    fn cross_branch(
        &self,
        tape: &mut Tape,
        side: usize,
        u_self: NodeId,
        u_other: NodeId,
        pnodes: &ParamNodes,
    ) -> Result<NodeId, ModelError> {
        let c = tape.row_softmax_gram(u_self, u_other)?;
        let agg = tape.matmul(c, u_other)?;
        let w = pnodes.get(&format!("net{side}.cross.w"));
        let lin = tape.matmul(agg, w)?;
        Ok(tape.activation(lin, self.cfg.branch_activation))
    }

    /// Builds both embedding pipelines. Enabled branch outputs are added to
    /// the encoder output (residual fusion).
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &LowRankInputs,
        pnodes: &ParamNodes,
    ) -> Result<LowRankOutput, ModelError> {
        let cfg = &self.cfg;
        if cfg.branches.prior && inputs.indicators.is_none() {
            return Err(ModelError::Config(
                "prior branch enabled but no class indicators supplied".into(),
            ));
        }
        if let Some(ind) = inputs.indicators {
            if ind.per_class.len() != cfg.num_classes {
                return Err(ModelError::Config(format!(
                    "expected {} class indicators, got {}",
                    cfg.num_classes,
                    ind.per_class.len()
                )));
            }
        }
        let f1 = tape.constant(inputs.f1.clone());
        let f2 = tape.constant(inputs.f2.clone());
        let u1_h = self.enc1.forward(tape, f1, pnodes)?;
        let u2_h = self.enc2.forward(tape, f2, pnodes)?;

        let fuse = |tape: &mut Tape,
                        side: usize,
                        u_self: NodeId,
                        u_other: NodeId,
                        a: &Arc<CsrMatrix>,
                        indicators: Option<&[Arc<CsrMatrix>]>,
                        concat: &MlpSpec|
         -> Result<NodeId, ModelError> {
            let mut total = u_self;
            if cfg.branches.cge {
                let b = self.graph_branch(tape, side, a, u_self, pnodes)?;
                total = tape.add(total, b)?;
            }
            if cfg.branches.attention {
                let b = self.attention_branch(tape, side, u_self, pnodes)?;
                total = tape.add(total, b)?;
            }
            if cfg.branches.prior {
                let b = self.prior_branch(
                    tape,
                    side,
                    indicators.expect("checked above"),
                    u_other,
                    pnodes,
                    concat,
                )?;
                total = tape.add(total, b)?;
            }
            if cfg.branches.cross_attention {
                let b = self.cross_branch(tape, side, u_self, u_other, pnodes)?;
                total = tape.add(total, b)?;
            }
            Ok(total)
        };

        let u1 = fuse(
            tape,
            1,
            u1_h,
            u2_h,
            &inputs.a1,
            inputs.indicators.map(|i| i.per_class.as_slice()),
            &self.concat1,
        )?;
        let u2 = fuse(
            tape,
            2,
            u2_h,
            u1_h,
            &inputs.a2,
            inputs.indicators.map(|i| i.per_class_t.as_slice()),
            &self.concat2,
        )?;
        Ok(LowRankOutput {
            u1,
            u2,
            scale: pnodes.get("out.scale"),
            shift: pnodes.get("out.shift"),
        })
    }
}
