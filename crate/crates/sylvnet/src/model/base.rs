//! Base model: four parallel n1 x n2 association channels fused by learned
//! per-row weights.
//!
//! Channels over shared encoder embeddings `U1 = MLP1(F1)`, `U2 = MLP2(F2)`:
//!
//! - graph channel: `sum_i act(A^i_1 U1 W_i U2^T (A^i_2)^T)` with
//!   `A^ = diag(s) + (I - diag(s)) A~` and `W_i = W'_i W'_i^T` (PSD by
//!   construction);
//! - within-network attention: `act(B1 U1 W U2^T B2^T)` with row-softmax gram
//!   attention `B`;
//! - prior channel: `act((U1 U1^T) H (U2 U2^T))`, gram-smoothed prior;
//! - cross-network attention: `act((U1 U2^T) ⊙ C)` with `C` the row-softmax
//!   of cross-network inner products.
//!
//! A forward pass can be restricted to a subset of rows of network 1; the
//! attention normalizations still range over all nodes.

use super::mlp::MlpSpec;
use super::{glorot, one_minus, ModelError, ParamNodes};
use crate::diff::{ActivationKind, NodeId, ParamSet, Tape};
use crate::sparse::CsrMatrix;
use crate::Mat;
use ndarray::Array2;
use rand::Rng;
use std::sync::Arc;

/// Which association channels are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelFlags {
    pub cge: bool,
    pub attention: bool,
    pub prior: bool,
    pub cross_attention: bool,
}

impl ChannelFlags {
    pub fn all() -> Self {
        Self { cge: true, attention: true, prior: true, cross_attention: true }
    }

    /// Default for multi-class ratings: everything except the prior channel.
    pub fn without_prior() -> Self {
        Self { prior: false, ..Self::all() }
    }

    /// Graph-only variant: both attention channels disabled.
    pub fn graph_only(self) -> Self {
        Self { attention: false, cross_attention: false, ..self }
    }

    /// Attention-only variant: the graph channel disabled.
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
pub struct BaseConfig {
    /// Embedding width r.
    pub hidden_dim: usize,
    /// Aggregation depth l of the graph channel.
    pub cge_levels: usize,
    /// Encoder depth; 1 = single linear map, 2 = one hidden layer of width r.
    pub encoder_layers: usize,
    pub encoder_activation: ActivationKind,
    pub channel_activation: ActivationKind,
    pub fusion_activation: ActivationKind,
    pub channels: ChannelFlags,
    /// Replace a multi-class prior by its observation indicator for the prior
    /// channel instead of rejecting it.
    pub binarize_prior: bool,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            cge_levels: 3,
            encoder_layers: 2,
            encoder_activation: ActivationKind::Relu,
            channel_activation: ActivationKind::Relu,
            fusion_activation: ActivationKind::Linear,
            channels: ChannelFlags::without_prior(),
            binarize_prior: false,
        }
    }
}

impl BaseConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hidden_dim == 0 {
            return Err(ModelError::Config("hidden_dim must be at least 1".into()));
        }
        if self.cge_levels == 0 {
            return Err(ModelError::Config("cge_levels must be at least 1".into()));
        }
        if self.encoder_layers == 0 {
            return Err(ModelError::Config("encoder_layers must be at least 1".into()));
        }
        if self.channels.count() == 0 {
            return Err(ModelError::Config("at least one channel must be enabled".into()));
        }
        Ok(())
    }
}

/// Per-forward inputs. `h_prior` is required when the prior channel is on;
/// obtain it through [`BaseModel::prior_input`].
pub struct BaseInputs<'a> {
    pub f1: &'a Mat,
    pub f2: &'a Mat,
    pub a1: Arc<CsrMatrix>,
    pub a2: Arc<CsrMatrix>,
    pub h_prior: Option<Arc<Mat>>,
}

pub struct BaseModel {
    pub cfg: BaseConfig,
    enc1: MlpSpec,
    enc2: MlpSpec,
}

/// `A^ = diag(s) + (I - diag(s)) * A~` as an explicit dense node; `sigma`
/// entries must already lie in (0,1).
pub fn cge_adjacency(
    tape: &mut Tape,
    a_dense: NodeId,
    sigma: NodeId,
) -> Result<NodeId, ModelError> {
    let d = tape.diag(sigma)?;
    let om = one_minus(tape, sigma);
    let rest = tape.row_scale(a_dense, om)?;
    Ok(tape.add(d, rest)?)
}

/// `(diag(s) + (I - diag(s)) A~) * u` without materializing the n x n matrix.
fn cge_apply(
    tape: &mut Tape,
    a: &Arc<CsrMatrix>,
    sigma: NodeId,
    one_minus_sigma: NodeId,
    u: NodeId,
) -> Result<NodeId, ModelError> {
    let self_part = tape.row_scale(u, sigma)?;
    let agg = tape.spmm(a.clone(), u)?;
    let neigh_part = tape.row_scale(agg, one_minus_sigma)?;
    Ok(tape.add(self_part, neigh_part)?)
}

impl BaseModel {
    pub fn new(cfg: BaseConfig, d1: usize, d2: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        let enc1 =
            MlpSpec::encoder("enc1", d1, cfg.hidden_dim, cfg.encoder_layers, cfg.encoder_activation);
        let enc2 =
            MlpSpec::encoder("enc2", d2, cfg.hidden_dim, cfg.encoder_layers, cfg.encoder_activation);
        Ok(Self { cfg, enc1, enc2 })
    }

    /// Fresh parameters: Glorot weights, zero sigma logits (sigma = 0.5),
    /// fusion constant 1/c, identity output calibration.
    pub fn init_params<R: Rng>(&self, n1: usize, n2: usize, rng: &mut R) -> ParamSet {
        let r = self.cfg.hidden_dim;
        let mut params = ParamSet::new();
        self.enc1.push_params(&mut params, rng);
        self.enc2.push_params(&mut params, rng);
        params.push("sigma1.raw", Array2::zeros((n1, 1)), false);
        params.push("sigma2.raw", Array2::zeros((n2, 1)), false);
        for level in 0..self.cfg.cge_levels {
            params.push(format!("cge.factor{level}"), glorot(rng, r, r), true);
        }
        params.push("attn.w", glorot(rng, r, r), true);
        let c = self.cfg.channels.count();
        params.push("fusion.w", Array2::from_elem((n1, c), 1.0 / c as f64), true);
        params.push("out.scale", Array2::from_elem((1, 1), 1.0), false);
        params.push("out.shift", Array2::zeros((1, 1)), false);
        params
    }

    /// Resolves the prior-channel input under the binary-gating policy: a
    /// binary prior passes through, a multi-class prior is either binarized
    /// to its observation indicator or rejected.
    pub fn prior_input(
        &self,
        prior: &crate::data::PriorAssociation,
    ) -> Result<Option<Arc<Mat>>, ModelError> {
        if !self.cfg.channels.prior {
            return Ok(None);
        }
        let binary = prior.h.iter().all(|&v| v == 0.0 || v == 1.0);
        if binary {
            Ok(Some(Arc::new(prior.h.clone())))
        } else if self.cfg.binarize_prior {
            Ok(Some(Arc::new(prior.mask.clone())))
        } else {
            Err(ModelError::Config(
                "prior channel requires binary associations; \
                 set binarize_prior or disable the channel"
                    .into(),
            ))
        }
    }

    /// Builds the forward graph and returns the calibrated association node
    /// (`rows x n2`, where rows is `batch_rows` or all of network 1).
    pub fn forward(
        &self,
        tape: &mut Tape,
        inputs: &BaseInputs,
        pnodes: &ParamNodes,
        batch_rows: Option<&Arc<Vec<usize>>>,
    ) -> Result<NodeId, ModelError> {
        let cfg = &self.cfg;
        let act = cfg.channel_activation;
        let f1 = tape.constant(inputs.f1.clone());
        let f2 = tape.constant(inputs.f2.clone());
        let u1 = self.enc1.forward(tape, f1, pnodes)?;
        let u2 = self.enc2.forward(tape, f2, pnodes)?;
        let u1_rows = match batch_rows {
            Some(rows) => tape.row_slice(u1, rows.clone())?,
            None => u1,
        };

        let mut channels: Vec<NodeId> = Vec::new();

        if cfg.channels.cge {
            let sig1_raw = pnodes.get("sigma1.raw");
            let sig2_raw = pnodes.get("sigma2.raw");
            let sig1 = tape.activation(sig1_raw, ActivationKind::Sigmoid);
            let sig2 = tape.activation(sig2_raw, ActivationKind::Sigmoid);
            let om1 = one_minus(tape, sig1);
            let om2 = one_minus(tape, sig2);
            let mut p = u1;
            let mut q = u2;
            let mut sum: Option<NodeId> = None;
            for level in 0..cfg.cge_levels {
                p = cge_apply(tape, &inputs.a1, sig1, om1, p)?;
                q = cge_apply(tape, &inputs.a2, sig2, om2, q)?;
                let p_rows = match batch_rows {
                    Some(rows) => tape.row_slice(p, rows.clone())?,
                    None => p,
                };
                let factor = pnodes.get(&format!("cge.factor{level}"));
                let factor_t = tape.transpose(factor);
                let metric = tape.matmul(factor, factor_t)?;
                let left = tape.matmul(p_rows, metric)?;
                let qt = tape.transpose(q);
                let term = tape.matmul(left, qt)?;
                let term = tape.activation(term, act);
                sum = Some(match sum {
                    Some(s) => tape.add(s, term)?,
                    None => term,
                });
            }
            channels.push(sum.expect("cge_levels >= 1"));
        }

        if cfg.channels.attention {
            let b1 = tape.row_softmax_gram(u1_rows, u1)?;
            let b2 = tape.row_softmax_gram(u2, u2)?;
            let left = tape.matmul(b1, u1)?;
            let w = pnodes.get("attn.w");
            let lw = tape.matmul(left, w)?;
            let v2 = tape.matmul(b2, u2)?;
            let v2t = tape.transpose(v2);
            let x2 = tape.matmul(lw, v2t)?;
            channels.push(tape.activation(x2, act));
        }

        if cfg.channels.prior {
            let h = inputs.h_prior.as_ref().ok_or_else(|| {
                ModelError::Config("prior channel enabled but no prior matrix supplied".into())
            })?;
            let hc = tape.constant(h.as_ref().clone());
            let u1t = tape.transpose(u1);
            let gram1_rows = tape.matmul(u1_rows, u1t)?;
            let smoothed = tape.matmul(gram1_rows, hc)?;
            // (.)(U2 U2^T) associated as ((.) U2) U2^T to stay O(n*r) wide.
            let su2 = tape.matmul(smoothed, u2)?;
            let u2t = tape.transpose(u2);
            let x3 = tape.matmul(su2, u2t)?;
            channels.push(tape.activation(x3, act));
        }

        if cfg.channels.cross_attention {
            let c = tape.row_softmax_gram(u1_rows, u2)?;
            let u2t = tape.transpose(u2);
            let scores = tape.matmul(u1_rows, u2t)?;
            let x4 = tape.hadamard(scores, c)?;
            channels.push(tape.activation(x4, act));
        }

        let fused = self.fuse_channels(tape, &channels, pnodes, batch_rows)?;
        let fused = tape.activation(fused, cfg.fusion_activation);
        let scale = pnodes.get("out.scale");
        let shift = pnodes.get("out.shift");
        let scaled = tape.scale_by(fused, scale)?;
        Ok(tape.add_scalar(scaled, shift)?)
    }

    /// Per-row weighted sum of the stacked channels: row i of the output is
    /// `sum_k W(i,k) * X_k(i,:)`.
    fn fuse_channels(
        &self,
        tape: &mut Tape,
        channels: &[NodeId],
        pnodes: &ParamNodes,
        batch_rows: Option<&Arc<Vec<usize>>>,
    ) -> Result<NodeId, ModelError> {
        let w = pnodes.get("fusion.w");
        let mut sum: Option<NodeId> = None;
        for (k, &x) in channels.iter().enumerate() {
            let col = tape.col_slice(w, k)?;
            let col = match batch_rows {
                Some(rows) => tape.row_slice(col, rows.clone())?,
                None => col,
            };
            let weighted = tape.row_scale(x, col)?;
            sum = Some(match sum {
                Some(s) => tape.add(s, weighted)?,
                None => weighted,
            });
        }
        Ok(sum.expect("at least one channel"))
    }
}
