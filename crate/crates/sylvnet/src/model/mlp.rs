//! Feature encoder MLPs with named parameters.

use super::{broadcast_rows, glorot, ParamNodes};
use crate::diff::{ActivationKind, DiffError, NodeId, ParamSet, Tape};
use ndarray::Array2;
use rand::Rng;

/// Shape and naming of one encoder MLP. `layers = 1` is a single linear map;
/// `layers = 2` adds one hidden layer of width `out`. Hidden layers apply the
/// activation, the final layer stays linear.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub name: String,
    pub dims: Vec<(usize, usize)>,
    pub activation: ActivationKind,
}

impl MlpSpec {
    pub fn encoder(
        name: impl Into<String>,
        d_in: usize,
        out: usize,
        layers: usize,
        activation: ActivationKind,
    ) -> Self {
        assert!(layers >= 1, "encoder needs at least one layer");
        let mut dims = vec![(d_in, out)];
        for _ in 1..layers {
            dims.push((out, out));
        }
        Self { name: name.into(), dims, activation }
    }

    /// Single linear layer with explicit dimensions (used by the per-class
    /// concat reducer).
    pub fn linear(name: impl Into<String>, d_in: usize, out: usize) -> Self {
        Self { name: name.into(), dims: vec![(d_in, out)], activation: ActivationKind::Linear }
    }

    fn weight_name(&self, layer: usize) -> String {
        format!("{}.w{layer}", self.name)
    }

    fn bias_name(&self, layer: usize) -> String {
        format!("{}.b{layer}", self.name)
    }

    /// Glorot weights, zero biases.
    pub fn push_params<R: Rng>(&self, params: &mut ParamSet, rng: &mut R) {
        for (layer, &(d_in, d_out)) in self.dims.iter().enumerate() {
            params.push(self.weight_name(layer), glorot(rng, d_in, d_out), true);
            params.push(self.bias_name(layer), Array2::zeros((1, d_out)), false);
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        pnodes: &ParamNodes,
    ) -> Result<NodeId, DiffError> {
        let rows = tape.shape(x).0;
        let mut cur = x;
        let last = self.dims.len() - 1;
        for layer in 0..self.dims.len() {
            let w = pnodes.get(&self.weight_name(layer));
            let b = pnodes.get(&self.bias_name(layer));
            let lin = tape.matmul(cur, w)?;
            let bias = broadcast_rows(tape, rows, b)?;
            cur = tape.add(lin, bias)?;
            if layer < last {
                cur = tape.activation(cur, self.activation);
            }
        }
        Ok(cur)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ParamNodes;
    use crate::Mat;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_layer_identity_weights_pass_features_through() {
        let spec = MlpSpec::encoder("enc", 2, 2, 1, ActivationKind::Relu);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        spec.push_params(&mut params, &mut rng);
        params.get_mut("enc.w0").unwrap().value = Array2::eye(2);
        let f = array![[1.0, -2.0], [0.5, 3.0]];
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pnodes = ParamNodes::new(&params, &bound);
        let x = tape.constant(f.clone());
        let u = spec.forward(&mut tape, x, &pnodes).unwrap();
        assert_eq!(tape.value(u), &f);
    }

    #[test]
    fn zero_weights_zero_bias_give_zero_embeddings() {
        let spec = MlpSpec::encoder("enc", 3, 2, 2, ActivationKind::Tanh);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        spec.push_params(&mut params, &mut rng);
        params.get_mut("enc.w0").unwrap().value = Array2::zeros((3, 2));
        params.get_mut("enc.w1").unwrap().value = Array2::zeros((2, 2));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pnodes = ParamNodes::new(&params, &bound);
        let x = tape.constant(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
        let u = spec.forward(&mut tape, x, &pnodes).unwrap();
        let zero: Mat = Array2::zeros((2, 2));
        assert_eq!(tape.value(u), &zero);
    }

    #[test]
    fn two_layer_forward_matches_hand_composition() {
        let spec = MlpSpec::encoder("enc", 2, 3, 2, ActivationKind::Tanh);
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        spec.push_params(&mut params, &mut rng);
        params.get_mut("enc.b0").unwrap().value = array![[0.1, -0.2, 0.3]];
        params.get_mut("enc.b1").unwrap().value = array![[-0.5, 0.25, 0.0]];
        let f = array![[0.7, -1.1], [2.0, 0.4], [-0.3, 0.9]];

        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let pnodes = ParamNodes::new(&params, &bound);
        let x = tape.constant(f.clone());
        let u = spec.forward(&mut tape, x, &pnodes).unwrap();

        // Independent recomputation with plain ndarray ops.
        let w0 = &params.get("enc.w0").unwrap().value;
        let b0 = &params.get("enc.b0").unwrap().value;
        let w1 = &params.get("enc.w1").unwrap().value;
        let b1 = &params.get("enc.b1").unwrap().value;
        let mut hidden = f.dot(w0);
        for mut row in hidden.rows_mut() {
            for (v, b) in row.iter_mut().zip(b0.row(0)) {
                *v = (*v + b).tanh();
            }
        }
        let mut want = hidden.dot(w1);
        for mut row in want.rows_mut() {
            for (v, b) in row.iter_mut().zip(b1.row(0)) {
                *v += b;
            }
        }
        let got = tape.value(u);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-14);
        }
    }
}
