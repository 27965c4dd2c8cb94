//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tgl_core::model::{Batch, ModelSpec, AUX_INPUT, JOINTS};
use tgl_core::topology::{Finger, HandTopology, Segment, SensorNode};
use tgl_core::{Network, Tape, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖a − b‖ / max(‖a‖, ‖b‖, 1e-12).
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-12)
}

/// Checks d f / d inputs for a scalar function built on the tape. Inputs
/// listed in `constant` are recorded without gradient tracking.
fn check_op(inputs: Vec<Tensor>, constant: &[usize], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let eval = |xs: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(k, x)| tape.leaf(x.clone().with_requires_grad(!constant.contains(&k))))
        .collect();
    let out = f(&mut tape, &vars);
    let grads = tape.gradients(out).unwrap();
    for k in (0..inputs.len()).filter(|k| !constant.contains(k)) {
        // Leaves are recorded first, so recording position equals input index.
        let analytic = grads[k].as_ref().map(|g| g.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = vec![0.0; inputs[k].len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.clone();
            let mut minus = inputs.clone();
            let mut pd = plus[k].data().to_vec();
            let mut md = minus[k].data().to_vec();
            pd[i] += H;
            md[i] -= H;
            plus[k] = Tensor::new(inputs[k].shape().to_vec(), pd).unwrap();
            minus[k] = Tensor::new(inputs[k].shape().to_vec(), md).unwrap();
            *slot = (eval(&plus) - eval(&minus)) / (2.0 * H);
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < TOL, "input {k}: relative error {err:e}");
    }
}

#[test]
fn elementary_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_tensor(&mut rng, &[3, 4], 1.0);
    let b = random_tensor(&mut rng, &[4, 2], 1.0);
    let c = random_tensor(&mut rng, &[3, 2], 1.0);
    let bias = random_tensor(&mut rng, &[2], 1.0);

    check_op(vec![a.clone(), b.clone()], &[], |t, v| {
        let m = t.matmul(v[0], v[1]).unwrap();
        let sq = t.mul(m, m).unwrap();
        t.sum(sq)
    });
    check_op(vec![a.clone(), b.clone(), bias, c.clone()], &[], |t, v| {
        let m = t.matmul(v[0], v[1]).unwrap();
        let z = t.add_bias(m, v[2]).unwrap();
        let r = t.relu(z);
        t.mse_loss(r, v[3]).unwrap()
    });
    check_op(vec![c.clone(), c.scale(0.5)], &[], |t, v| {
        let d = t.sub(v[0], v[1]).unwrap();
        let s = t.add(d, v[0]).unwrap();
        let k = t.scale(s, -1.5);
        let sq = t.mul(k, k).unwrap();
        t.mean(sq)
    });
    check_op(vec![a, c], &[], |t, v| {
        let cat = t.concat_cols(v[0], v[1]).unwrap();
        let flat = t.reshape(cat, &[2, 9]).unwrap();
        let sq = t.mul(flat, flat).unwrap();
        t.sum(sq)
    });

    let s = random_tensor(&mut rng, &[3, 3], 1.0);
    let x = random_tensor(&mut rng, &[6, 2], 1.0);
    check_op(vec![s, x], &[0], |t, v| {
        let p = t.propagate(v[0], v[1]).unwrap();
        let sq = t.mul(p, p).unwrap();
        t.sum(sq)
    });
}

fn six_node_topology() -> HandTopology {
    let nodes = (0..6)
        .map(|id| SensorNode {
            id,
            segment: if id < 3 { Segment::Fingertip } else { Segment::Middle },
            finger: Finger::Index,
            patch_row: id / 3,
            patch_col: id % 3,
        })
        .collect();
    HandTopology::new(nodes, vec![[0, 1], [1, 2], [0, 3], [1, 4], [2, 5], [3, 4], [4, 5]]).unwrap()
}

fn loss_of(net: &Network, batch: &Batch) -> f64 {
    let pred = net.predict_batch(batch).unwrap();
    let target = batch.target.as_ref().unwrap();
    pred.data().iter().zip(target.data()).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64
}

/// Worst per-tensor relative error over one random draw of parameters and data.
pub fn network_gradient_error(spec: ModelSpec, topo: &HandTopology, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let mut net = Network::new(spec, topo, seed).unwrap();
    // Non-zero biases so every path is exercised.
    for b in &mut net.params.fc_biases {
        let shape = b.shape().to_vec();
        b.value = random_tensor(&mut rng, &shape, 0.1);
    }
    let n = topo.node_count();
    let batch_size = 3;
    let batch = Batch {
        tactile: random_tensor(&mut rng, &[batch_size * n, 3], 1.0),
        aux: random_tensor(&mut rng, &[batch_size, AUX_INPUT], 1.0),
        target: Some(random_tensor(&mut rng, &[batch_size, JOINTS], 1.0)),
    };

    let mut tape = Tape::new();
    let loss = net.loss_tape(&mut tape, &batch).unwrap();
    net.params.zero_grad();
    tape.backward(loss, &mut net.params.parameters_mut()).unwrap();
    let analytic: Vec<Vec<f64>> = net.params.parameters().iter().map(|p| p.grad.data().to_vec()).collect();

    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; grad.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let original = net.params.parameters()[k].value.data()[i];
            let set = |net: &mut Network, v: f64| {
                let p = &mut net.params.parameters_mut()[k].value;
                let shape = p.shape().to_vec();
                let mut d = p.data().to_vec();
                d[i] = v;
                *p = Tensor::new(shape, d).unwrap();
            };
            set(&mut net, original + H);
            let up = loss_of(&net, &batch);
            set(&mut net, original - H);
            let down = loss_of(&net, &batch);
            set(&mut net, original);
            *slot = (up - down) / (2.0 * H);
        }
        worst = worst.max(rel_err(grad, &numeric));
    }
    worst
}

#[test]
fn two_layer_gcn_end_to_end() {
    let topo = six_node_topology();
    for seed in 0..5 {
        let err = network_gradient_error(ModelSpec::gcn(vec![4, 5], vec![8], 6), &topo, seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn mlp_end_to_end() {
    let topo = six_node_topology();
    for seed in 0..3 {
        let err = network_gradient_error(ModelSpec::mlp(vec![10, 7], 6), &topo, seed);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
