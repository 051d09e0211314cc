use super::{log_sum_exp, softmax, Architecture, Gradients, MlpSpec, NetworkState};
use crate::error::{Error, Result};

const HIDDEN_W: usize = 0;
const HIDDEN_B: usize = 1;
const OUTPUT_W: usize = 2;
const OUTPUT_B: usize = 3;

fn spec_of(state: &NetworkState) -> Result<MlpSpec> {
    match state.arch {
        Architecture::Mlp(s) => Ok(s),
        Architecture::Lstm(_) => Err(Error::Input("expected an MLP state".into())),
    }
}

fn check_batch(spec: &MlpSpec, batch: &[f64]) -> Result<usize> {
    if !batch.len().is_multiple_of(spec.n_inputs) {
        return Err(Error::Dimension(format!(
            "batch of {} values is not a whole number of {}-wide rows",
            batch.len(),
            spec.n_inputs
        )));
    }
    if batch.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("batch contains a non-finite value".into()));
    }
    Ok(batch.len() / spec.n_inputs)
}

/// `rows x in` times `in x out` plus a broadcast bias row.
fn affine(x: &[f64], rows: usize, n_in: usize, w: &[f64], b: &[f64], n_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        out.extend_from_slice(b);
        let dst = &mut out[r * n_out..(r + 1) * n_out];
        for (k, &xv) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (d, &wv) in dst.iter_mut().zip(&w[k * n_out..(k + 1) * n_out]) {
                *d += xv * wv;
            }
        }
    }
    out
}

struct Forward {
    rows: usize,
    hidden_pre: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(state: &NetworkState, spec: &MlpSpec, batch: &[f64]) -> Result<Forward> {
    let rows = check_batch(spec, batch)?;
    let t = &state.tensors;
    let hidden_pre = affine(
        batch,
        rows,
        spec.n_inputs,
        &t[HIDDEN_W].data,
        &t[HIDDEN_B].data,
        spec.n_hidden,
    );
    let hidden: Vec<f64> = hidden_pre.iter().map(|&z| spec.activation.apply(z)).collect();
    let logits = affine(
        &hidden,
        rows,
        spec.n_hidden,
        &t[OUTPUT_W].data,
        &t[OUTPUT_B].data,
        spec.n_outputs,
    );
    Ok(Forward {
        rows,
        hidden_pre,
        hidden,
        logits,
    })
}

/// Logits for a row-major batch `[B x n_inputs]`, returned as `[B x n_outputs]`.
pub fn mlp_forward(state: &NetworkState, batch: &[f64]) -> Result<Vec<f64>> {
    let spec = spec_of(state)?;
    Ok(forward(state, &spec, batch)?.logits)
}

/// Mean softmax cross-entropy over the batch and its exact gradients.
pub fn mlp_backward(state: &NetworkState, batch: &[f64], labels: &[usize]) -> Result<(Gradients, f64)> {
    let spec = spec_of(state)?;
    let fwd = forward(state, &spec, batch)?;
    if fwd.rows == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if labels.len() != fwd.rows {
        return Err(Error::Dimension(format!("{} labels for {} rows", labels.len(), fwd.rows)));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= spec.n_outputs) {
        return Err(Error::Input(format!("label {bad} outside 0..{}", spec.n_outputs)));
    }

    let (n_in, n_h, n_o) = (spec.n_inputs, spec.n_hidden, spec.n_outputs);
    let scale = 1.0 / fwd.rows as f64;
    let mut grads = Gradients::zeros_like(state);
    let w_out = &state.tensors[OUTPUT_W].data;
    let mut loss = 0.0;
    let mut d_hidden = vec![0.0; n_h];

    for r in 0..fwd.rows {
        let z = &fwd.logits[r * n_o..(r + 1) * n_o];
        let y = labels[r];
        loss += log_sum_exp(z) - z[y];

        let mut dz = softmax(z);
        dz[y] -= 1.0;
        dz.iter_mut().for_each(|v| *v *= scale);

        let h = &fwd.hidden[r * n_h..(r + 1) * n_h];
        for j in 0..n_h {
            let mut acc = 0.0;
            for k in 0..n_o {
                grads.tensors[OUTPUT_W].data[j * n_o + k] += h[j] * dz[k];
                acc += w_out[j * n_o + k] * dz[k];
            }
            d_hidden[j] = acc * spec.activation.derivative(fwd.hidden_pre[r * n_h + j]);
        }
        for k in 0..n_o {
            grads.tensors[OUTPUT_B].data[k] += dz[k];
        }

        let x = &batch[r * n_in..(r + 1) * n_in];
        for (i, &xv) in x.iter().enumerate() {
            let row = &mut grads.tensors[HIDDEN_W].data[i * n_h..(i + 1) * n_h];
            for (g, &dh) in row.iter_mut().zip(&d_hidden) {
                *g += xv * dh;
            }
        }
        for (g, &dh) in grads.tensors[HIDDEN_B].data.iter_mut().zip(&d_hidden) {
            *g += dh;
        }
    }
    Ok((grads, loss * scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, MlpSpec};

    fn state(spec: MlpSpec, seed: u64) -> NetworkState {
        NetworkState::initialize(Architecture::Mlp(spec), seed).unwrap()
    }

    #[test]
    fn zero_network_is_uniform() {
        let s = NetworkState::zeros(Architecture::Mlp(MlpSpec::new(3, 5, 4))).unwrap();
        let logits = mlp_forward(&s, &[1.0, -2.0, 3.0, 0.5, 0.5, 0.5]).unwrap();
        assert!(logits.iter().all(|&z| z == 0.0));
        for p in softmax(&logits[..4]) {
            assert_eq!(p, 0.25);
        }
        let (_, loss) = mlp_backward(&s, &[1.0, -2.0, 3.0], &[2]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_unit() {
        let mut s = NetworkState::zeros(Architecture::Mlp(MlpSpec::new(1, 1, 1))).unwrap();
        s.tensors[HIDDEN_W].data[0] = 1.0;
        s.tensors[OUTPUT_W].data[0] = 1.0;
        assert_eq!(mlp_forward(&s, &[2.0]).unwrap(), vec![2.0]);
        // the ReLU clamps negative inputs
        assert_eq!(mlp_forward(&s, &[-2.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn forward_matches_naive_triple_loop() {
        let spec = MlpSpec::new(4, 6, 3);
        let s = state(spec, 42);
        let batch = [
            0.3, -1.2, 0.8, 2.0, //
            -0.5, 0.0, 1.5, -0.7, //
            1.1, 0.9, -0.4, 0.2,
        ];
        let got = mlp_forward(&s, &batch).unwrap();
        let w1 = s.tensor("hidden.weight").unwrap();
        let b1 = s.tensor("hidden.bias").unwrap();
        let w2 = s.tensor("output.weight").unwrap();
        let b2 = s.tensor("output.bias").unwrap();
        for r in 0..3 {
            let mut h = [0.0; 6];
            for j in 0..6 {
                let mut acc = b1.data[j];
                for i in 0..4 {
                    acc += batch[r * 4 + i] * w1.at(i, j);
                }
                h[j] = acc.max(0.0);
            }
            for k in 0..3 {
                let mut acc = b2.data[k];
                for j in 0..6 {
                    acc += h[j] * w2.at(j, k);
                }
                assert!((got[r * 3 + k] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn saturated_sample_has_vanishing_gradient() {
        let mut s = NetworkState::zeros(Architecture::Mlp(MlpSpec::new(1, 1, 2))).unwrap();
        s.tensors[OUTPUT_B].data = vec![40.0, -40.0];
        let (g, loss) = mlp_backward(&s, &[1.0], &[0]).unwrap();
        assert!(g.norm() < 1e-8);
        assert!(loss >= 0.0 && loss < 1e-8);
    }

    #[test]
    fn errors() {
        let s = state(MlpSpec::new(2, 3, 2), 1);
        assert!(matches!(mlp_forward(&s, &[1.0, 2.0, 3.0]), Err(Error::Dimension(_))));
        assert!(matches!(mlp_forward(&s, &[1.0, f64::NAN]), Err(Error::Input(_))));
        assert!(matches!(mlp_backward(&s, &[1.0, 2.0], &[2]), Err(Error::Input(_))));
        assert!(matches!(mlp_backward(&s, &[], &[]), Err(Error::Input(_))));
    }

    #[test]
    fn tanh_variant_runs() {
        let spec = MlpSpec {
            activation: Activation::Tanh,
            ..MlpSpec::new(2, 3, 2)
        };
        let s = state(spec, 5);
        let (g, loss) = mlp_backward(&s, &[0.5, -0.5, 1.0, 1.0], &[0, 1]).unwrap();
        assert!(loss > 0.0 && g.norm() > 0.0);
    }
}
