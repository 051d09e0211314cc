//! Analytic gradients against central finite differences of the forward-only loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use weightforge::data::{Dataset, TabularDataset, TokenDataset};
use weightforge::model::{
    lstm_backward, lstm_forward, lstm_step_cached, mlp_backward, Architecture, LstmSpec, MlpSpec, NetworkState,
};

const STEP: f64 = 1e-5;
/// Entries whose gradient magnitude is below this are compared absolutely.
const FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst relative error across every parameter of `state`.
fn max_fd_error(state: &NetworkState, data: &Dataset) -> f64 {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (grads, _) = state.loss_and_gradients(data, &idx).unwrap();
    let mut worst: f64 = 0.0;
    for (ti, t) in state.tensors.iter().enumerate() {
        for k in 0..t.data.len() {
            let mut plus = state.clone();
            plus.tensors[ti].data[k] += STEP;
            let mut minus = state.clone();
            minus.tensors[ti].data[k] -= STEP;
            let numeric = (plus.loss(data, &idx).unwrap() - minus.loss(data, &idx).unwrap()) / (2.0 * STEP);
            worst = worst.max(rel_err(grads.tensors[ti].data[k], numeric));
        }
    }
    worst
}

fn mlp_case(seed: u64) -> (NetworkState, Dataset) {
    let spec = MlpSpec::new(4, 6, 3);
    let state = NetworkState::initialize(Architecture::Mlp(spec), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
    let feats: Vec<f64> = (0..8 * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..3)).collect();
    (state, TabularDataset::new(feats, 4, labels, 3).unwrap().into())
}

fn lstm_case(seed: u64, len: usize) -> (NetworkState, Dataset) {
    let spec = LstmSpec::new(7, 3, 4, 3);
    let state = NetworkState::initialize(Architecture::Lstm(spec), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2000);
    let seqs: Vec<Vec<usize>> = (0..3).map(|_| (0..len).map(|_| rng.random_range(1..7)).collect()).collect();
    let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..3)).collect();
    (state, TokenDataset::new(seqs, labels, 7, 3).unwrap().into())
}

#[test]
fn mlp_seed_42_matches_finite_differences() {
    let (state, data) = mlp_case(42);
    let err = max_fd_error(&state, &data);
    assert!(err < 1e-5, "max relative error {err:e}");
}

#[test]
fn mlp_gradients_over_seeds() {
    for seed in 0..5 {
        let (state, data) = mlp_case(seed);
        let err = max_fd_error(&state, &data);
        assert!(err < 1e-5, "seed {seed}: max relative error {err:e}");
    }
}

#[test]
fn lstm_length_4_seed_7_matches_finite_differences() {
    let (state, data) = lstm_case(7, 4);
    let err = max_fd_error(&state, &data);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn lstm_gradients_over_seeds() {
    for seed in 0..5 {
        let (state, data) = lstm_case(seed, 5);
        let err = max_fd_error(&state, &data);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate equations written out scalar by scalar, one output unit at a time.
fn scalar_step(state: &NetworkState, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = h.len();
    let pre = |gate: &str, j: usize| {
        let w = state.tensor(&format!("lstm.w_{gate}")).unwrap();
        let u = state.tensor(&format!("lstm.u_{gate}")).unwrap();
        let b = state.tensor(&format!("lstm.b_{gate}")).unwrap();
        let mut acc = b.data[j];
        for (e, xv) in x.iter().enumerate() {
            acc += xv * w.at(e, j);
        }
        for (l, hv) in h.iter().enumerate() {
            acc += hv * u.at(l, j);
        }
        acc
    };
    let mut h_out = vec![0.0; k];
    let mut c_out = vec![0.0; k];
    for j in 0..k {
        let i = sigmoid(pre("i", j));
        let f = sigmoid(pre("f", j));
        let o = sigmoid(pre("o", j));
        let g = pre("c", j).tanh();
        c_out[j] = f * c[j] + i * g;
        h_out[j] = o * c_out[j].tanh();
    }
    (h_out, c_out)
}

#[test]
fn lstm_step_matches_scalar_oracle() {
    let spec = LstmSpec::new(9, 3, 4, 2);
    let state = NetworkState::initialize(Architecture::Lstm(spec), 7).unwrap();
    let x = [0.4, -1.1, 0.7];
    let h = [0.2, -0.3, 0.05, 0.6];
    let c = [1.0, -0.5, 0.3, -2.0];
    let cache = lstm_step_cached(&state, &x, &h, &c).unwrap();
    let (h_ref, c_ref) = scalar_step(&state, &x, &h, &c);
    for j in 0..4 {
        assert!((cache.hidden[j] - h_ref[j]).abs() < 1e-12);
        assert!((cache.cell[j] - c_ref[j]).abs() < 1e-12);
        for g in [cache.input_gate[j], cache.forget_gate[j], cache.output_gate[j]] {
            assert!(g > 0.0 && g < 1.0);
        }
    }
}

#[test]
fn lstm_forward_matches_unrolled_scalar_oracle() {
    let spec = LstmSpec::new(9, 3, 4, 2);
    let state = NetworkState::initialize(Architecture::Lstm(spec), 7).unwrap();
    let tokens = [3, 1, 8, 8, 2];
    let emb = state.tensor("embedding.weight").unwrap();
    let (mut h, mut c) = (vec![0.0; 4], vec![0.0; 4]);
    for &t in &tokens {
        (h, c) = scalar_step(&state, emb.row(t), &h, &c);
    }
    let w = state.tensor("output.weight").unwrap();
    let b = state.tensor("output.bias").unwrap();
    let got = lstm_forward(&state, &tokens).unwrap();
    for o in 0..2 {
        let mut acc = b.data[o];
        for j in 0..4 {
            acc += h[j] * w.at(j, o);
        }
        assert!((got[o] - acc).abs() < 1e-12);
    }
}

/// Length-1 sequence gradients derived by hand through one step.
#[test]
fn lstm_single_step_hand_derivation() {
    let spec = LstmSpec::new(4, 2, 3, 2);
    let state = NetworkState::initialize(Architecture::Lstm(spec), 3).unwrap();
    let token = 2;
    let label = 1;
    let (grads, _) = lstm_backward(&state, &[token], label).unwrap();

    let x = state.tensor("embedding.weight").unwrap().row(token).to_vec();
    let zeros = [0.0; 3];
    let pre = |gate: &str, j: usize| {
        let w = state.tensor(&format!("lstm.w_{gate}")).unwrap();
        let b = state.tensor(&format!("lstm.b_{gate}")).unwrap();
        b.data[j] + x[0] * w.at(0, j) + x[1] * w.at(1, j)
    };
    let (wo, bo) = (state.tensor("output.weight").unwrap(), state.tensor("output.bias").unwrap());
    let (h, _) = scalar_step(&state, &x, &zeros, &zeros);
    let z: Vec<f64> = (0..2).map(|o| bo.data[o] + (0..3).map(|j| h[j] * wo.at(j, o)).sum::<f64>()).collect();
    let m = z[0].max(z[1]);
    let denom = (z[0] - m).exp() + (z[1] - m).exp();
    let p: Vec<f64> = z.iter().map(|v| (v - m).exp() / denom).collect();
    let dz = [p[0], p[1] - 1.0];

    for j in 0..3 {
        // with c_prev = 0: c = i g, h = o tanh(c)
        let i = sigmoid(pre("i", j));
        let o = sigmoid(pre("o", j));
        let g = pre("c", j).tanh();
        let c = i * g;
        let dh = wo.at(j, 0) * dz[0] + wo.at(j, 1) * dz[1];
        let dc = dh * o * (1.0 - c.tanh().powi(2));
        let expect = [
            ("lstm.b_i", dc * g * i * (1.0 - i)),
            ("lstm.b_o", dh * c.tanh() * o * (1.0 - o)),
            ("lstm.b_c", dc * i * (1.0 - g * g)),
            ("lstm.b_f", 0.0),
        ];
        for (name, want) in expect {
            let got = grads.get(name).unwrap().data[j];
            assert!((got - want).abs() < 1e-12, "{name}[{j}]: {got} vs {want}");
        }
        // no recurrence contribution on the first step
        assert_eq!(grads.get("lstm.u_i").unwrap().data[j], 0.0);
        assert!((grads.get("output.weight").unwrap().at(j, 1) - h[j] * dz[1]).abs() < 1e-12);
    }
}

#[test]
fn mlp_full_batch_descent_is_non_increasing() {
    let (mut state, data) = mlp_case(9);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut prev = f64::INFINITY;
    for _ in 0..20 {
        let (g, loss) = state.loss_and_gradients(&data, &idx).unwrap();
        assert!(loss <= prev, "loss rose from {prev} to {loss}");
        prev = loss;
        state.apply_gradients(&g, 1e-4);
    }
}

#[test]
fn lstm_full_batch_descent_is_non_increasing() {
    let (mut state, data) = lstm_case(4, 4);
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut prev = f64::INFINITY;
    for _ in 0..20 {
        let (g, loss) = state.loss_and_gradients(&data, &idx).unwrap();
        assert!(loss <= prev, "loss rose from {prev} to {loss}");
        prev = loss;
        state.apply_gradients(&g, 1e-4);
    }
}

#[test]
fn mlp_backward_rejects_out_of_range_label() {
    let (state, _) = mlp_case(1);
    assert!(mlp_backward(&state, &[0.0; 4], &[3]).is_err());
}
