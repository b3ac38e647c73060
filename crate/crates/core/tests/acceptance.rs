//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The property checks run in seconds. The training reproductions take hours
//! per seed and only run with `SWARMGRAPH_TRAINING_ACCEPTANCE=1`; otherwise
//! they print SKIP.

use std::process::ExitCode;

use rand::seq::SliceRandom;
use rand::Rng;
use swarmgraph::comm::{AdjacencyMask, CommConfig, DropoutSchedule};
use swarmgraph::env::Observation;
use swarmgraph::gradtape::{ParamSet, Segments, Tape, Tensor, Var};
use swarmgraph::harness::{cmd_train, Checkpoint, RunConfig, RunOptions};
use swarmgraph::policy::local::decentralized_forward;
use swarmgraph::policy::{ObsBatch, Policy, PolicyConfig, VariantKind};
use swarmgraph::ppo::gae_stream;
use swarmgraph::rng::{self, StreamRng};
use swarmgraph::tasks::{hungarian, matching_cost, TaskKind};

type Outcome = Result<String, String>;

enum Status {
    Pass,
    Fail,
    Skip,
}

fn report(name: &str, status: Status, detail: &str) -> bool {
    let tag = match status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::Skip => "SKIP",
    };
    println!("{tag} {name}: {detail}");
    !matches!(status, Status::Fail)
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    match f() {
        Ok(d) => report(name, Status::Pass, &d),
        Err(d) => report(name, Status::Fail, &d),
    }
}

// ---------------------------------------------------------------- gradients

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, for kinks at the origin.
fn away_from_zero(rng: &mut StreamRng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f64 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &[Var]) -> swarmgraph::Result<Var> + 'a;

/// Compares tape gradients of `Σ w ⊙ f(inputs)` (random `w`) with central
/// differences over every input entry; returns the relative error.
fn check_inputs(inputs: &[Tensor<f64>], build: &Build<'_>, rng: &mut StreamRng) -> Result<f64, String> {
    let eval = |xs: &[Tensor<f64>], w: Option<&Tensor<f64>>| -> Result<(f64, Tensor<f64>, Vec<Option<Tensor<f64>>>), String> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.input(t.clone())).collect();
        let out = build(&mut tape, &vars).map_err(|e| e.to_string())?;
        let shape = tape.value(out).shape().to_vec();
        let w = match w {
            Some(w) => w.clone(),
            None => Tensor::filled(&shape, 0.0),
        };
        let wv = tape.constant(w);
        let prod = tape.mul(out, wv).map_err(|e| e.to_string())?;
        let loss = tape.sum(prod).map_err(|e| e.to_string())?;
        let grads = tape.backward(loss, &mut ParamSet::new()).map_err(|e| e.to_string())?;
        let g = vars.iter().map(|&v| grads.get(v).cloned()).collect();
        Ok((tape.value(loss).data()[0], tape.value(out).clone(), g))
    };
    let (_, out, _) = eval(inputs, None)?;
    let w = rand_tensor(rng, out.shape());
    let (_, _, grads) = eval(inputs, Some(&w))?;
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, x) in inputs.iter().enumerate() {
        match &grads[i] {
            Some(g) => analytic.extend_from_slice(g.data()),
            None => analytic.extend(std::iter::repeat_n(0.0, x.len())),
        }
        for j in 0..x.len() {
            let mut xs = inputs.to_vec();
            xs[i].data_mut()[j] = x.data()[j] + FD_STEP;
            let up = eval(&xs, Some(&w))?.0;
            xs[i].data_mut()[j] = x.data()[j] - FD_STEP;
            let down = eval(&xs, Some(&w))?.0;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(rel_error(&analytic, &numeric))
}

struct Primitive {
    name: &'static str,
    make: fn(&mut StreamRng) -> Vec<Tensor<f64>>,
    build: fn(&mut Tape<f64>, &[Var]) -> swarmgraph::Result<Var>,
}

fn ne_mask(rng: &mut StreamRng, rows: usize, cols: usize) -> Vec<bool> {
    let mut m: Vec<bool> = (0..rows * cols).map(|_| rng.random_bool(0.6)).collect();
    for r in 0..rows {
        m[r * cols + rng.random_range(0..cols)] = true;
    }
    m
}

fn primitives() -> Vec<Primitive> {
    vec![
        Primitive {
            name: "affine",
            make: |r| vec![rand_tensor(r, &[3, 4]), rand_tensor(r, &[4, 5]), rand_tensor(r, &[5])],
            build: |t, v| t.affine(v[0], v[1], Some(v[2])),
        },
        Primitive {
            name: "matmul",
            make: |r| vec![rand_tensor(r, &[4, 3]), rand_tensor(r, &[3, 2])],
            build: |t, v| t.matmul(v[0], v[1]),
        },
        Primitive {
            name: "relu",
            make: |r| vec![away_from_zero(r, &[3, 5])],
            build: |t, v| t.relu(v[0]),
        },
        Primitive {
            name: "concat",
            make: |r| vec![rand_tensor(r, &[3, 2]), rand_tensor(r, &[3, 4])],
            build: |t, v| t.concat(&[v[0], v[1]]),
        },
        Primitive {
            name: "masked_softmax",
            make: |r| vec![rand_tensor(r, &[4, 5])],
            build: |t, v| {
                let mut rng = rng::stream(7, "mask", 0);
                let mask = ne_mask(&mut rng, 4, 5);
                t.masked_softmax(v[0], mask)
            },
        },
        Primitive {
            name: "log_softmax",
            make: |r| vec![rand_tensor(r, &[3, 5])],
            build: |t, v| t.log_softmax(v[0]),
        },
        Primitive {
            name: "seg_dot",
            make: |r| vec![rand_tensor(r, &[6, 4]), rand_tensor(r, &[6, 4])],
            build: |t, v| t.seg_dot(v[0], v[1], Segments::new(3, 3), 2, 0.7),
        },
        Primitive {
            name: "seg_neg_sq_dist",
            make: |r| vec![rand_tensor(r, &[2, 3]), rand_tensor(r, &[8, 3])],
            build: |t, v| t.seg_neg_sq_dist(v[0], v[1], Segments::new(1, 4)),
        },
        Primitive {
            name: "seg_mix",
            make: |r| vec![rand_tensor(r, &[12, 3]), rand_tensor(r, &[6, 4])],
            build: |t, v| t.seg_mix(v[0], v[1], Segments::new(3, 3), 2),
        },
        Primitive {
            name: "gather_cols",
            make: |r| vec![rand_tensor(r, &[4, 5])],
            build: |t, v| t.gather_cols(v[0], &[4, 0, 2, 2]),
        },
        Primitive {
            name: "add",
            make: |r| vec![rand_tensor(r, &[3, 3]), rand_tensor(r, &[3, 3])],
            build: |t, v| t.add(v[0], v[1]),
        },
        Primitive {
            name: "sub",
            make: |r| vec![rand_tensor(r, &[3, 3]), rand_tensor(r, &[3, 3])],
            build: |t, v| t.sub(v[0], v[1]),
        },
        Primitive {
            name: "mul",
            make: |r| vec![rand_tensor(r, &[3, 3]), rand_tensor(r, &[3, 3])],
            build: |t, v| t.mul(v[0], v[1]),
        },
        Primitive {
            name: "minimum",
            make: |r| {
                let a = rand_tensor(r, &[3, 4]);
                let gap = away_from_zero(r, &[3, 4]);
                let b = Tensor::from_vec(&[3, 4], a.data().iter().zip(gap.data()).map(|(x, g)| x + g).collect()).unwrap();
                vec![a, b]
            },
            build: |t, v| t.minimum(v[0], v[1]),
        },
        Primitive {
            name: "scale",
            make: |r| vec![rand_tensor(r, &[2, 5])],
            build: |t, v| t.scale(v[0], -1.7),
        },
        Primitive {
            name: "exp",
            make: |r| vec![rand_tensor(r, &[3, 3])],
            build: |t, v| t.exp(v[0]),
        },
        Primitive {
            name: "square",
            make: |r| vec![rand_tensor(r, &[3, 3])],
            build: |t, v| t.square(v[0]),
        },
        Primitive {
            name: "clamp",
            make: |r| {
                // Keep clear of the bounds at ±0.5.
                let data = (0..12)
                    .map(|_| loop {
                        let v: f64 = r.random_range(-1.0..1.0);
                        if (v.abs() - 0.5).abs() > 0.05 {
                            break v;
                        }
                    })
                    .collect();
                vec![Tensor::from_vec(&[3, 4], data).unwrap()]
            },
            build: |t, v| t.clamp(v[0], -0.5, 0.5),
        },
        Primitive {
            name: "row_sum",
            make: |r| vec![rand_tensor(r, &[4, 3])],
            build: |t, v| t.row_sum(v[0]),
        },
        Primitive {
            name: "sum",
            make: |r| vec![rand_tensor(r, &[4, 3])],
            build: |t, v| t.sum(v[0]),
        },
        Primitive {
            name: "mean",
            make: |r| vec![rand_tensor(r, &[4, 3])],
            build: |t, v| t.mean(v[0]),
        },
        Primitive {
            name: "reshape",
            make: |r| vec![rand_tensor(r, &[4, 3])],
            build: |t, v| {
                let x = t.reshape(v[0], &[2, 6])?;
                t.square(x)
            },
        },
    ]
}

fn random_team(rng: &mut StreamRng, agents: usize, entities: usize) -> Vec<Observation> {
    (0..agents)
        .map(|_| Observation {
            own: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.2..0.2),
                rng.random_range(-0.2..0.2),
            ],
            relative: (0..entities)
                .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect(),
        })
        .collect()
}

fn chain(agents: usize) -> AdjacencyMask {
    let edges: Vec<(usize, usize)> = (0..agents - 1).map(|i| (i, i + 1)).collect();
    AdjacencyMask::from_edges(agents, &edges)
}

fn small_config(variant: VariantKind) -> PolicyConfig {
    PolicyConfig {
        hidden: 6,
        attn_dim: 4,
        hops: 2,
        heads: 2,
        variant,
        ..PolicyConfig::default()
    }
}

#[derive(Clone, Copy)]
enum Head {
    LogProb,
    Value,
    Entropy,
}

/// Parameter gradients of one network output, weighted by random constants.
fn check_network(variant: VariantKind, head: Head, seed: u64) -> Result<f64, String> {
    let mut rng = rng::stream(seed, "fd-net", 0);
    let mut policy: Policy<f64> = Policy::new(small_config(variant), &mut rng).map_err(|e| e.to_string())?;
    // Non-zero biases so every parameter matters.
    for p in policy.params.iter_mut() {
        if p.value.shape().len() == 1 {
            p.value = rand_tensor(&mut rng, p.value.shape());
        }
    }
    let teams = [random_team(&mut rng, 3, 2), random_team(&mut rng, 3, 2)];
    let masks = [AdjacencyMask::full(3), chain(3)];
    let batch: ObsBatch<f64> = ObsBatch::new(&teams, &masks).map_err(|e| e.to_string())?;
    let actions: Vec<usize> = (0..6).map(|_| rng.random_range(0..5)).collect();
    let w = rand_tensor(&mut rng, &[6, 1]);
    let loss_of = |p: &mut Policy<f64>, grad: bool| -> Result<f64, String> {
        let mut tape = Tape::new();
        let ev = p.evaluate_actions(&mut tape, &batch, &actions).map_err(|e| e.to_string())?;
        let out = match head {
            Head::LogProb => ev.log_probs,
            Head::Value => ev.values,
            Head::Entropy => ev.entropy,
        };
        let wv = tape.constant(w.clone());
        let prod = tape.mul(out, wv).map_err(|e| e.to_string())?;
        let loss = tape.sum(prod).map_err(|e| e.to_string())?;
        if grad {
            p.params.zero_grad();
            tape.backward(loss, &mut p.params).map_err(|e| e.to_string())?;
        }
        Ok(tape.value(loss).data()[0])
    };
    loss_of(&mut policy, true)?;
    let analytic: Vec<f64> = policy.params.iter().flat_map(|p| p.grad.data().to_vec()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..policy.params.len() {
        let id = swarmgraph::gradtape::ParamId(i);
        for j in 0..policy.params.get(id).value.len() {
            let x = policy.params.get(id).value.data()[j];
            policy.params.get_mut(id).value.data_mut()[j] = x + FD_STEP;
            let up = loss_of(&mut policy, false)?;
            policy.params.get_mut(id).value.data_mut()[j] = x - FD_STEP;
            let down = loss_of(&mut policy, false)?;
            policy.params.get_mut(id).value.data_mut()[j] = x;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
    }
    Ok(rel_error(&analytic, &numeric))
}

fn gradient_check() -> Outcome {
    let mut rng = rng::stream(1, "fd", 0);
    let mut cases = 0;
    let mut worst: (f64, String) = (0.0, String::new());
    let mut record = |e: f64, name: String| {
        cases += 1;
        if e > worst.0 {
            worst = (e, name);
        }
    };
    for p in primitives() {
        for _ in 0..5 {
            let inputs = (p.make)(&mut rng);
            let e = check_inputs(&inputs, &p.build, &mut rng)?;
            record(e, p.name.to_string());
        }
    }
    // Parameters enter through `param`; a bias-free affine exercises it alone.
    for k in 0..3 {
        let mut params = ParamSet::new();
        let id = params.insert("w", rand_tensor(&mut rng, &[3, 2])).unwrap();
        let x = rand_tensor(&mut rng, &[4, 3]);
        let w = rand_tensor(&mut rng, &[4, 2]);
        let f = |ps: &mut ParamSet<f64>, grad: bool| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let pv = t.param(ps, id);
            let y = t.matmul(xv, pv).unwrap();
            let wv = t.constant(w.clone());
            let prod = t.mul(y, wv).unwrap();
            let l = t.sum(prod).unwrap();
            if grad {
                ps.zero_grad();
                t.backward(l, ps).unwrap();
            }
            t.value(l).data()[0]
        };
        f(&mut params, true);
        let analytic = params.get(id).grad.data().to_vec();
        let mut numeric = Vec::new();
        for j in 0..6 {
            let v = params.get(id).value.data()[j];
            params.get_mut(id).value.data_mut()[j] = v + FD_STEP;
            let up = f(&mut params, false);
            params.get_mut(id).value.data_mut()[j] = v - FD_STEP;
            let down = f(&mut params, false);
            params.get_mut(id).value.data_mut()[j] = v;
            numeric.push((up - down) / (2.0 * FD_STEP));
        }
        record(rel_error(&analytic, &numeric), format!("param#{k}"));
    }
    let mut seed = 0;
    for variant in [VariantKind::Mha, VariantKind::Exp, VariantKind::Uniform] {
        for (head, hname) in [(Head::LogProb, "logp"), (Head::Value, "value"), (Head::Entropy, "entropy")] {
            for _ in 0..2 {
                seed += 1;
                let e = check_network(variant, head, seed)?;
                record(e, format!("network {variant:?} {hname}"));
            }
        }
    }
    let detail = format!("{cases} cases, worst relative error {:.2e} ({})", worst.0, worst.1);
    if cases >= 100 && worst.0 <= FD_TOL {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// --------------------------------------------------------------- assignment

fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], perm: &mut Vec<usize>, used: &mut [bool], best: &mut f64) {
        let n = cost.len();
        if perm.len() == n {
            let c = matching_cost(cost, perm);
            if c < *best {
                *best = c;
            }
            return;
        }
        for a in 0..n {
            if !used[a] {
                used[a] = true;
                perm.push(a);
                go(cost, perm, used, best);
                perm.pop();
                used[a] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, &mut Vec::new(), &mut vec![false; cost.len()], &mut best);
    best
}

fn assignment_oracle() -> Outcome {
    let mut rng = rng::stream(2, "hungarian", 0);
    let mut count = 0;
    for m in 2..=7 {
        for k in 0..500 {
            let cost: Vec<Vec<f64>> = (0..m).map(|_| (0..m).map(|_| rng.random_range(0.0..3.0)).collect()).collect();
            let h = hungarian(&cost).map_err(|e| e.to_string())?;
            let b = brute_force_min(&cost);
            if h.total_cost != b {
                return Err(format!("M={m} matrix {k}: hungarian {} vs exhaustive {b}", h.total_cost));
            }
            count += 1;
        }
    }
    Ok(format!("{count} matrices (M=2..7), exact equality"))
}

// ---------------------------------------------------------------------- GAE

fn gae_oracle() -> Outcome {
    let mut rng = rng::stream(3, "gae", 0);
    let (mut worst, mut total) = (0.0f64, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..=10);
        let gamma = rng.random_range(0.8..1.0);
        let lambda = rng.random_range(0.5..1.0);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..1.0)).collect();
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        // Either a terminal last step or a truncated stream with a bootstrap value.
        let terminal = rng.random_bool(0.5);
        let bootstrap = rng.random_range(-5.0..5.0);
        let mut dones = vec![false; n];
        dones[n - 1] = terminal;
        let got = gae_stream(&rewards, &values, &dones, bootstrap, gamma, lambda);
        let next = |t: usize| -> f64 {
            if t + 1 < n {
                values[t + 1]
            } else if terminal {
                0.0
            } else {
                bootstrap
            }
        };
        for t in 0..n {
            let direct: f64 = (0..n - t)
                .map(|l| (gamma * lambda).powi(l as i32) * (rewards[t + l] + gamma * next(t + l) - values[t + l]))
                .sum();
            worst = worst.max((direct - got[t]).abs());
            total += 1;
        }
    }
    let d = format!("1000 episodes, {total} steps, max deviation {worst:.2e}");
    if worst <= 1e-10 {
        Ok(d)
    } else {
        Err(d)
    }
}

// ------------------------------------------------------------ equivariance

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max)
}

fn permutation_equivariance() -> Outcome {
    let mut rng = rng::stream(4, "perm", 0);
    let mut worst_entity = 0.0f64;
    let mut worst_agent = 0.0f64;
    for variant in [VariantKind::Mha, VariantKind::Exp, VariantKind::Uniform] {
        let cfg = PolicyConfig {
            variant,
            ..PolicyConfig::default()
        };
        let policy: Policy = Policy::new(cfg, &mut rng).map_err(|e| e.to_string())?;
        for _ in 0..3 {
            let m = 5;
            let team = random_team(&mut rng, m, 4);
            let mask = {
                let mut mk = AdjacencyMask::full(m);
                mk.set(0, 2, false);
                mk.set(1, 4, false);
                mk
            };
            let record = |obs: &[Observation], mask: &AdjacencyMask| {
                let batch: ObsBatch<f32> = ObsBatch::single(obs, mask).unwrap();
                let mut tape = Tape::new();
                let rec = policy.record(&mut tape, &batch).unwrap();
                (
                    tape.value(rec.entity_embedding).clone(),
                    tape.value(rec.logits).clone(),
                    tape.value(rec.values).clone(),
                )
            };
            let (e0, l0, v0) = record(&team, &mask);

            let mut eperm: Vec<usize> = (0..4).collect();
            eperm.shuffle(&mut rng);
            let shuffled: Vec<Observation> = team
                .iter()
                .map(|o| Observation {
                    own: o.own,
                    relative: eperm.iter().map(|&k| o.relative[k]).collect(),
                })
                .collect();
            let (e1, l1, v1) = record(&shuffled, &mask);
            worst_entity = worst_entity
                .max(max_abs_diff(e0.data(), e1.data()))
                .max(max_abs_diff(l0.data(), l1.data()))
                .max(max_abs_diff(v0.data(), v1.data()));

            let mut aperm: Vec<usize> = (0..m).collect();
            aperm.shuffle(&mut rng);
            let permuted: Vec<Observation> = aperm.iter().map(|&k| team[k].clone()).collect();
            let (_, l2, v2) = record(&permuted, &mask.permuted(&aperm));
            for (new, &old) in aperm.iter().enumerate() {
                worst_agent = worst_agent
                    .max(max_abs_diff(l2.row(new), l0.row(old)))
                    .max(max_abs_diff(v2.row(new), v0.row(old)));
            }
        }
    }
    let d = format!("entity permutation max deviation {worst_entity:.2e}, agent permutation {worst_agent:.2e}");
    if worst_entity <= 1e-5 && worst_agent <= 1e-5 {
        Ok(d)
    } else {
        Err(d)
    }
}

// ------------------------------------------------------------ hop locality

fn hop_locality() -> Outcome {
    let mut rng = rng::stream(5, "hops", 0);
    let mut notes = Vec::new();
    for variant in [VariantKind::Mha, VariantKind::Exp, VariantKind::Uniform] {
        let cfg = PolicyConfig {
            variant,
            hops: 3,
            ..PolicyConfig::default()
        };
        let policy: Policy = Policy::new(cfg, &mut rng).map_err(|e| e.to_string())?;
        let team = random_team(&mut rng, 5, 3);
        let mask = chain(5);
        let logits = |obs: &[Observation]| policy.forward(&ObsBatch::single(obs, &mask).unwrap()).unwrap().logits;
        let base = logits(&team);
        let perturbed = |agent: usize| {
            let mut t = team.clone();
            t[agent].own[0] += 0.37;
            t[agent].own[3] -= 0.11;
            logits(&t)
        };
        let far = perturbed(0);
        let near = perturbed(3);
        let far_same = far.row(4).iter().zip(base.row(4)).all(|(a, b)| a.to_bits() == b.to_bits());
        let near_changed = near.row(4) != base.row(4);
        if !far_same {
            return Err(format!("{variant:?}: agent 0 (4 hops away) changed agent 4's logits"));
        }
        if !near_changed {
            return Err(format!("{variant:?}: agent 3 (1 hop away) did not change agent 4's logits"));
        }
        notes.push(format!("{variant:?}"));
    }
    Ok(format!(
        "5-agent chain, C=3 ({}): agent 4 bitwise unaffected by agent 0, affected by agent 3",
        notes.join(", ")
    ))
}

// ------------------------------------------------------ decentralized path

fn decentralized_equivalence() -> Outcome {
    let mut rng = rng::stream(6, "decentral", 0);
    let mut cases = 0;
    for variant in [VariantKind::Mha, VariantKind::Exp, VariantKind::Uniform] {
        let cfg = PolicyConfig {
            variant,
            ..PolicyConfig::default()
        };
        let policy: Policy = Policy::new(cfg, &mut rng).map_err(|e| e.to_string())?;
        for (m, l) in [(1, 1), (3, 3), (5, 2), (6, 4)] {
            let team = random_team(&mut rng, m, l);
            let mut mask = AdjacencyMask::full(m);
            for i in 0..m {
                for j in i + 1..m {
                    if rng.random_bool(0.4) {
                        mask.set(i, j, false);
                    }
                }
            }
            let batched = policy
                .forward(&ObsBatch::single(&team, &mask).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let local = decentralized_forward(&policy, &team, &mask).map_err(|e| e.to_string())?;
            let same = batched.logits.data().iter().zip(local.logits.data()).all(|(a, b)| a.to_bits() == b.to_bits())
                && batched.values.iter().zip(&local.values).all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(format!("{variant:?} M={m} L={l}: per-agent outputs differ from batched"));
            }
            cases += 1;
        }
    }
    Ok(format!("{cases} teams across MHA/Exp/Uniform, logits and values bitwise equal"))
}

// --------------------------------------------------------------- checkpoint

fn checkpoint_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.policy.hidden = 32;
    cfg.policy.attn_dim = 32;
    cfg.ppo.n_envs = 2;
    cfg.ppo.rollout_len = 16;
    cfg.ppo.epochs = 1;
    cfg.train.iterations = 2;
    cfg.train.eval_every = 2;
    cfg.train.eval_episodes = 2;
    cmd_train(&cfg, dir.path(), RunOptions { deterministic: true }).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint::load(&dir.path().join("final.ckpt")).map_err(|e| e.to_string())?;
    let policy = ckpt.policy(&cfg.policy).map_err(|e| e.to_string())?;

    let mut rng = rng::stream(8, "probe", 0);
    let team = random_team(&mut rng, 4, 4);
    let probe = ObsBatch::single(&team, &chain(4)).map_err(|e| e.to_string())?;
    let before = policy.forward(&probe).map_err(|e| e.to_string())?;
    let path = dir.path().join("again.ckpt");
    ckpt.save(&path).map_err(|e| e.to_string())?;
    let reloaded = Checkpoint::load(&path).map_err(|e| e.to_string())?;
    let after = reloaded
        .policy(&cfg.policy)
        .and_then(|p| p.forward(&probe))
        .map_err(|e| e.to_string())?;
    let bitwise = before.logits.data().iter().zip(after.logits.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        && before.values.iter().zip(&after.values).all(|(a, b)| a.to_bits() == b.to_bits());
    if !bitwise {
        return Err("forward outputs differ after save/load".into());
    }

    // Transfer: parameters carried to a larger team keep their hashes until the
    // first update there.
    let digest = ckpt.params.digest();
    let mut trainer = swarmgraph::ppo::Trainer::new(
        policy,
        cfg.world_for(5),
        cfg.task.clone(),
        cfg.comm.clone(),
        cfg.ppo.clone(),
    )
    .map_err(|e| e.to_string())?;
    if trainer.policy.params.digest() != digest {
        return Err("tensor hash changed when moving to M=5".into());
    }
    let names_equal = trainer
        .policy
        .params
        .iter()
        .zip(ckpt.params.iter())
        .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
    trainer.set_world(cfg.world_for(7)).map_err(|e| e.to_string())?;
    trainer.reset_optimizer();
    if trainer.policy.params.digest() != digest || !names_equal {
        return Err("tensor hash or shapes changed at the curriculum boundary".into());
    }
    trainer.train_iteration().map_err(|e| e.to_string())?;
    if trainer.policy.params.digest() == digest {
        return Err("training after transfer left parameters untouched".into());
    }
    Ok("probe forward bitwise equal after save/load; tensor hashes unchanged across M=3→5→7 transfer".into())
}

// ------------------------------------------------------------------ dropout

fn dropout_schedule() -> Outcome {
    let mut rng = rng::stream(9, "dropout-check", 0);
    let mut checked = 0;
    for m in [2, 3, 5, 7, 10] {
        for p in [0.25, 0.5, 0.75] {
            let full = AdjacencyMask::full(m);
            let e = m * (m - 1) / 2;
            let want = (p * e as f64).floor() as usize;
            let mut sched = DropoutSchedule::new(p, 10, rng::stream(rng.random(), "sched", 0));
            let mut windows: Vec<Vec<(usize, usize)>> = Vec::new();
            for step in 0..60 {
                let masked = sched.apply(&full, step);
                if !masked.is_symmetric() || !masked.has_self_edges() {
                    return Err(format!("M={m} p={p} step {step}: mask lost symmetry or diagonal"));
                }
                let dropped: Vec<(usize, usize)> = full.edges().into_iter().filter(|&(i, j)| !masked.get(i, j)).collect();
                if dropped.len() != want {
                    return Err(format!("M={m} p={p} step {step}: {} edges dropped, expected {want}", dropped.len()));
                }
                if step % 10 == 0 {
                    windows.push(dropped);
                } else if windows.last() != Some(&dropped) {
                    return Err(format!("M={m} p={p} step {step}: dropped set changed inside a period"));
                }
            }
            // With many possible subsets the six windows cannot all coincide.
            let choices = (1..=want).fold(1.0, |acc, k| acc * (e - want + k) as f64 / k as f64);
            if choices >= 10.0 && windows.windows(2).all(|w| w[0] == w[1]) {
                return Err(format!("M={m} p={p}: dropped set never resampled"));
            }
            checked += 1;
        }
    }
    // The training path: schedules come from the comm configuration.
    let cfg = CommConfig {
        dropout: true,
        ..CommConfig::default()
    };
    if cfg.schedule(true, rng::stream(0, "x", 0)).is_none() || cfg.schedule(false, rng::stream(0, "x", 0)).is_some() {
        return Err("dropout must be active in training and off in evaluation by default".into());
    }
    Ok(format!(
        "{checked} (M, p) settings: ⌊p·E⌋ symmetric edges dropped, constant for 10 steps, resampled after"
    ))
}

// ----------------------------------------------------------------- training

const TRAINING_ENV: &str = "SWARMGRAPH_TRAINING_ACCEPTANCE";

struct TrainingCase {
    name: &'static str,
    task: TaskKind,
    agents: usize,
    radius: Option<f64>,
    success: f64,
    max_distance: Option<f64>,
}

/// Best evaluation seen in a run: success at or above `bar` with distance
/// check, over evaluations every 50 updates within the 2500-update budget.
fn train_seed(case: &TrainingCase, seed: u64) -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.task.kind = case.task;
    cfg.world.agents = case.agents;
    cfg.comm.radius = case.radius;
    cfg.train.iterations = 2500;
    cfg.train.stop_at_threshold = true;
    cfg.train.success_threshold = case.success / 100.0;
    cfg.train.checkpoint_every = 500;
    let report = cmd_train(&cfg, dir.path(), RunOptions { deterministic: true }).map_err(|e| e.to_string())?;
    let rows: Vec<swarmgraph::harness::metrics::EvalRow> =
        swarmgraph::harness::metrics::read_rows(&dir.path().join("eval.csv")).map_err(|e| e.to_string())?;
    let ok_row = rows.iter().find(|r| {
        r.success_rate >= case.success && case.max_distance.is_none_or(|d| r.avg_min_distance.is_some_and(|a| a <= d))
    });
    let best = rows.iter().map(|r| r.success_rate).fold(0.0, f64::max);
    Ok(match ok_row {
        Some(r) => (true, format!("seed {seed}: {:.1}% at update {}", r.success_rate, r.iteration)),
        None => (false, format!("seed {seed}: best {best:.1}% in {} updates", report.updates)),
    })
}

fn zero_shot_seed(seed: u64) -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.world.agents = 5;
    cfg.train.iterations = 2500;
    cfg.train.stop_at_threshold = true;
    cfg.train.checkpoint_every = 500;
    cmd_train(&cfg, dir.path(), RunOptions { deterministic: true }).map_err(|e| e.to_string())?;
    let (ckpt, cfg, policy) =
        swarmgraph::harness::load_run(&dir.path().join("final.ckpt"), None).map_err(|e| e.to_string())?;
    let mut parts = Vec::new();
    let mut ok = true;
    for m in [4, 6] {
        let s = swarmgraph::harness::cmd_eval(&ckpt, &cfg, &policy, m, true).map_err(|e| e.to_string())?;
        ok &= s.success_rate >= 50.0;
        parts.push(format!("M={m} {:.1}%", s.success_rate));
    }
    Ok((ok, format!("seed {seed}: {}", parts.join(", "))))
}

fn majority(results: Vec<Result<(bool, String), String>>) -> Outcome {
    let mut passed = 0;
    let mut lines = Vec::new();
    for r in results {
        let (ok, line) = r?;
        passed += ok as usize;
        lines.push(line);
    }
    let d = format!("{passed}/3 seeds met the bar ({})", lines.join("; "));
    if passed >= 2 {
        Ok(d)
    } else {
        Err(d)
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= run("gradient correctness", gradient_check);
    ok &= run("assignment oracle", assignment_oracle);
    ok &= run("GAE oracle", gae_oracle);
    ok &= run("permutation equivariance", permutation_equivariance);
    ok &= run("hop locality", hop_locality);
    ok &= run("decentralized-execution equivalence", decentralized_equivalence);
    ok &= run("checkpoint round-trip", checkpoint_round_trip);
    ok &= run("dropout schedule", dropout_schedule);

    let cases = [
        TrainingCase {
            name: "coverage M=3 UC MHA (>=80% success)",
            task: TaskKind::Coverage,
            agents: 3,
            radius: None,
            success: 80.0,
            max_distance: None,
        },
        TrainingCase {
            name: "formation M=3 UC MHA (>=85% success)",
            task: TaskKind::Formation,
            agents: 3,
            radius: None,
            success: 85.0,
            max_distance: None,
        },
        TrainingCase {
            name: "coverage M=3 RC R=2 MHA (>=70% success, dist <= 0.15)",
            task: TaskKind::Coverage,
            agents: 3,
            radius: Some(2.0),
            success: 70.0,
            max_distance: Some(0.15),
        },
    ];
    let enabled = std::env::var(TRAINING_ENV).is_ok_and(|v| v == "1");
    for case in &cases {
        let name = format!("training: {}", case.name);
        if enabled {
            ok &= run(&name, || majority((1..=3).map(|s| train_seed(case, s)).collect()));
        } else {
            report(&name, Status::Skip, &format!("set {TRAINING_ENV}=1 to run (hours per seed)"));
        }
    }
    let name = "training: zero-shot coverage trained at M=5, evaluated at M=4 and M=6 (>=50%)";
    if enabled {
        ok &= run(name, || majority((1..=3).map(zero_shot_seed).collect()));
    } else {
        report(name, Status::Skip, &format!("set {TRAINING_ENV}=1 to run (hours per seed)"));
    }

    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
