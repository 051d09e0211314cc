//! Single-layer LSTM sequence classifier with full backpropagation through time.
//!
//! Per step, with `x` the embedded token and `s()` the logistic sigmoid:
//!
//! ```text
//! i = s(x W_i + h U_i + b_i)      f = s(x W_f + h U_f + b_f)
//! o = s(x W_o + h U_o + b_o)      g = tanh(x W_c + h U_c + b_c)
//! c' = f * c + i * g              h' = o * tanh(c')
//! ```
//!
//! Padding tokens are masked: the recurrence skips them and carries `(h, c)` through.

use super::{log_sum_exp, sigmoid, softmax, Architecture, Gradients, LstmSpec, NetworkState};
use crate::data::PAD_TOKEN;
use crate::error::{Error, Result};

const EMBEDDING: usize = 0;
const W: usize = 1;
const U: usize = 5;
const B: usize = 9;
const OUTPUT_W: usize = 13;
const OUTPUT_B: usize = 14;

// gate slots inside each group of four
const IN: usize = 0;
const FORGET: usize = 1;
const OUT: usize = 2;
const CAND: usize = 3;

fn spec_of(state: &NetworkState) -> Result<LstmSpec> {
    match state.arch {
        Architecture::Lstm(s) => Ok(s),
        Architecture::Mlp(_) => Err(Error::Input("expected an LSTM state".into())),
    }
}

/// Everything one step produces, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

fn step(state: &NetworkState, spec: &LstmSpec, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStepCache {
    let k = spec.hidden_dim;
    let t = &state.tensors;
    let mut pre = [
        t[B + IN].data.clone(),
        t[B + FORGET].data.clone(),
        t[B + OUT].data.clone(),
        t[B + CAND].data.clone(),
    ];
    for (q, acc) in pre.iter_mut().enumerate() {
        let w = &t[W + q];
        for (e, &xv) in x.iter().enumerate() {
            for (a, &wv) in acc.iter_mut().zip(w.row(e)) {
                *a += xv * wv;
            }
        }
        let u = &t[U + q];
        for (l, &hv) in h_prev.iter().enumerate() {
            for (a, &uv) in acc.iter_mut().zip(u.row(l)) {
                *a += hv * uv;
            }
        }
    }
    let [pi, pf, po, pc] = pre;
    let input_gate: Vec<f64> = pi.into_iter().map(sigmoid).collect();
    let forget_gate: Vec<f64> = pf.into_iter().map(sigmoid).collect();
    let output_gate: Vec<f64> = po.into_iter().map(sigmoid).collect();
    let candidate: Vec<f64> = pc.into_iter().map(f64::tanh).collect();
    let cell: Vec<f64> = (0..k)
        .map(|j| forget_gate[j] * c_prev[j] + input_gate[j] * candidate[j])
        .collect();
    let hidden: Vec<f64> = (0..k).map(|j| output_gate[j] * cell[j].tanh()).collect();
    LstmStepCache {
        input_gate,
        forget_gate,
        output_gate,
        candidate,
        cell,
        hidden,
    }
}

/// One recurrence step on an already-embedded input. Returns `(h_t, c_t)`.
pub fn lstm_step(state: &NetworkState, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let cache = lstm_step_cached(state, x, h_prev, c_prev)?;
    Ok((cache.hidden, cache.cell))
}

pub fn lstm_step_cached(state: &NetworkState, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<LstmStepCache> {
    let spec = spec_of(state)?;
    if x.len() != spec.embed_dim || h_prev.len() != spec.hidden_dim || c_prev.len() != spec.hidden_dim {
        return Err(Error::Dimension(format!(
            "step inputs ({}, {}, {}) do not match embed_dim {} / hidden_dim {}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            spec.embed_dim,
            spec.hidden_dim
        )));
    }
    Ok(step(state, &spec, x, h_prev, c_prev))
}

/// Validated, truncated, pad-free view of a token sequence.
fn effective_tokens(spec: &LstmSpec, tokens: &[usize]) -> Result<Vec<usize>> {
    if tokens.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= spec.vocab_size) {
        return Err(Error::Input(format!("token {bad} outside vocabulary of {}", spec.vocab_size)));
    }
    let limit = spec.max_len.unwrap_or(usize::MAX);
    Ok(tokens.iter().take(limit).copied().filter(|&t| t != PAD_TOKEN).collect())
}

fn unroll(state: &NetworkState, spec: &LstmSpec, tokens: &[usize]) -> Vec<LstmStepCache> {
    let k = spec.hidden_dim;
    let embedding = &state.tensors[EMBEDDING];
    let mut caches: Vec<LstmStepCache> = Vec::with_capacity(tokens.len());
    let zeros = vec![0.0; k];
    for &tok in tokens {
        let (h, c) = caches
            .last()
            .map_or((&zeros, &zeros), |prev| (&prev.hidden, &prev.cell));
        let next = step(state, spec, embedding.row(tok), h, c);
        caches.push(next);
    }
    caches
}

fn output_logits(state: &NetworkState, spec: &LstmSpec, h: &[f64]) -> Vec<f64> {
    let w = &state.tensors[OUTPUT_W];
    let mut out = state.tensors[OUTPUT_B].data.clone();
    for (j, &hv) in h.iter().enumerate().take(spec.hidden_dim) {
        for (o, &wv) in out.iter_mut().zip(w.row(j)) {
            *o += hv * wv;
        }
    }
    out
}

/// Class logits read from the final hidden state, starting from `h_0 = c_0 = 0`.
pub fn lstm_forward(state: &NetworkState, tokens: &[usize]) -> Result<Vec<f64>> {
    let spec = spec_of(state)?;
    let tokens = effective_tokens(&spec, tokens)?;
    let caches = unroll(state, &spec, &tokens);
    let zeros = vec![0.0; spec.hidden_dim];
    let h = caches.last().map_or(&zeros, |c| &c.hidden);
    Ok(output_logits(state, &spec, h))
}

/// Cross-entropy of one sequence and its gradients by backpropagation through time.
pub fn lstm_backward(state: &NetworkState, tokens: &[usize], label: usize) -> Result<(Gradients, f64)> {
    let spec = spec_of(state)?;
    if label >= spec.n_outputs {
        return Err(Error::Input(format!("label {label} outside 0..{}", spec.n_outputs)));
    }
    let tokens = effective_tokens(&spec, tokens)?;
    let caches = unroll(state, &spec, &tokens);
    let k = spec.hidden_dim;
    let n_o = spec.n_outputs;
    let zeros = vec![0.0; k];
    let h_final = caches.last().map_or(&zeros, |c| &c.hidden);

    let z = output_logits(state, &spec, h_final);
    let loss = log_sum_exp(&z) - z[label];
    let mut dz = softmax(&z);
    dz[label] -= 1.0;

    let mut grads = Gradients::zeros_like(state);
    let t = &state.tensors;
    let mut dh = vec![0.0; k];
    for j in 0..k {
        for o in 0..n_o {
            grads.tensors[OUTPUT_W].data[j * n_o + o] += h_final[j] * dz[o];
            dh[j] += t[OUTPUT_W].at(j, o) * dz[o];
        }
    }
    for o in 0..n_o {
        grads.tensors[OUTPUT_B].data[o] += dz[o];
    }

    let mut dc = vec![0.0; k];
    let mut da = [vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]];
    for step_idx in (0..caches.len()).rev() {
        let cur = &caches[step_idx];
        let (h_prev, c_prev) = if step_idx == 0 {
            (&zeros, &zeros)
        } else {
            (&caches[step_idx - 1].hidden, &caches[step_idx - 1].cell)
        };
        for j in 0..k {
            let tc = cur.cell[j].tanh();
            let d_out = dh[j] * tc;
            dc[j] += dh[j] * cur.output_gate[j] * (1.0 - tc * tc);
            let (i, f, o, g) = (
                cur.input_gate[j],
                cur.forget_gate[j],
                cur.output_gate[j],
                cur.candidate[j],
            );
            da[IN][j] = dc[j] * g * i * (1.0 - i);
            da[FORGET][j] = dc[j] * c_prev[j] * f * (1.0 - f);
            da[OUT][j] = d_out * o * (1.0 - o);
            da[CAND][j] = dc[j] * i * (1.0 - g * g);
            dc[j] *= f;
        }

        let tok = tokens[step_idx];
        let x = t[EMBEDDING].row(tok);
        let mut dx = vec![0.0; spec.embed_dim];
        let mut dh_prev = vec![0.0; k];
        for q in 0..4 {
            let gate = &da[q];
            for (e, &xv) in x.iter().enumerate() {
                let w_row = t[W + q].row(e);
                let g_row = &mut grads.tensors[W + q].data[e * k..(e + 1) * k];
                let mut acc = 0.0;
                for j in 0..k {
                    g_row[j] += xv * gate[j];
                    acc += w_row[j] * gate[j];
                }
                dx[e] += acc;
            }
            for (l, &hv) in h_prev.iter().enumerate() {
                let u_row = t[U + q].row(l);
                let g_row = &mut grads.tensors[U + q].data[l * k..(l + 1) * k];
                let mut acc = 0.0;
                for j in 0..k {
                    g_row[j] += hv * gate[j];
                    acc += u_row[j] * gate[j];
                }
                dh_prev[l] += acc;
            }
            for (b, &gv) in grads.tensors[B + q].data.iter_mut().zip(gate) {
                *b += gv;
            }
        }
        let n_e = spec.embed_dim;
        for (g, d) in grads.tensors[EMBEDDING].data[tok * n_e..(tok + 1) * n_e]
            .iter_mut()
            .zip(&dx)
        {
            *g += d;
        }
        dh = dh_prev;
    }
    Ok((grads, loss))
}
