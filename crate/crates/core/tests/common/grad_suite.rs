//! Finite-difference gradient checks.

use mcu_core::hsi::{AbundanceMatrix, EndmemberMatrix, Guidance, HsiCube};
use mcu_core::ndgraph::{Graph, Var};
use mcu_core::nets::{nba_graph, uadip_graph, uedip_graph, Nba, NbaParams, NetShape};
use mcu_core::train::{composite_loss, AugTerms, LossWeights};
use mcu_core::Tensor;
use ndarray::{Array2, Array3, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-6;
const REL: f64 = 1e-4;
const INSTANCES: u64 = 5;

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_shape_simple_fn(IxDyn(shape), || scale * rng.random_range(-1.0..1.0))
}

/// Builds a scalar loss from leaves. Leaves are registered by the closure
/// in the order given.
type Build<'a> = dyn Fn(&mut Graph<f64>, &[Var]) -> Var + 'a;

pub fn loss_value(leaves: &[Tensor<f64>], build: &Build) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.constant(t.clone())).collect();
    let l = build(&mut g, &vars);
    *g.value(l).iter().next().unwrap()
}

/// Compares backprop with central differences on up to `max_entries`
/// entries per leaf, and returns the worst relative error seen.
pub fn check(name: &str, leaves: &[Tensor<f64>], build: &Build, max_entries: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let l = build(&mut g, &vars);
    g.backward(l).unwrap();
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).raw_dim())))
        .collect();

    let mut worst: f64 = 0.0;
    let mut work = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let n = leaf.len();
        let picks: Vec<usize> = if n <= max_entries {
            (0..n).collect()
        } else {
            (0..max_entries).map(|_| rng.random_range(0..n)).collect()
        };
        for idx in picks {
            let orig = *leaf.iter().nth(idx).unwrap();
            *work[li].iter_mut().nth(idx).unwrap() = orig + EPS;
            let lp = loss_value(&work, build);
            *work[li].iter_mut().nth(idx).unwrap() = orig - EPS;
            let lm = loss_value(&work, build);
            *work[li].iter_mut().nth(idx).unwrap() = orig;
            let numeric = (lp - lm) / (2.0 * EPS);
            let a = *analytic[li].iter().nth(idx).unwrap();
            let scale = a.abs().max(numeric.abs()).max(1e-3);
            let rel = (a - numeric).abs() / scale;
            assert!(
                rel <= REL,
                "{name}: leaf {li} entry {idx}: analytic {a:e} numeric {numeric:e} rel {rel:e}"
            );
            worst = worst.max(rel);
        }
    }
    worst
}

/// `½‖x − c‖²` against a random target so every entry matters.
pub fn project(g: &mut Graph<f64>, x: Var, rng_seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let c = random(&mut rng, g.shape(x), 1.0);
    let c = g.constant(c);
    let d = g.sub(x, c).unwrap();
    let s = g.sum_squares(d);
    g.scale(s, 0.5)
}

pub fn for_instances(name: &str, f: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Box<Build<'static>>)) {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (leaves, build) = f(&mut rng);
        check(&format!("{name} #{seed}"), &leaves, &*build, 40, &mut rng);
    }
}

pub fn matmul() {
    for_instances("matmul", |rng| {
        (
            vec![random(rng, &[3, 4], 1.0), random(rng, &[4, 5], 1.0)],
            Box::new(|g, v| {
                let m = g.matmul(v[0], v[1]).unwrap();
                project(g, m, 1)
            }),
        )
    });
}

pub fn conv1d() {
    for_instances("conv1d", |rng| {
        (
            vec![random(rng, &[2, 3, 7], 1.0), random(rng, &[3, 2, 3], 1.0)],
            Box::new(|g, v| {
                let c = g.conv1d(v[0], v[1]).unwrap();
                project(g, c, 2)
            }),
        )
    });
}

pub fn conv2d() {
    for_instances("conv2d", |rng| {
        (
            vec![random(rng, &[2, 5, 4], 1.0), random(rng, &[3, 2, 3, 3], 1.0)],
            Box::new(|g, v| {
                let c = g.conv2d(v[0], v[1]).unwrap();
                project(g, c, 3)
            }),
        )
    });
}

pub fn add_sub_and_scalar_product() {
    for_instances("add/sub/mul_scalar", |rng| {
        (
            vec![random(rng, &[3, 4], 1.0), random(rng, &[3, 4], 1.0), random(rng, &[], 1.0)],
            Box::new(|g, v| {
                let a = g.add(v[0], v[1]).unwrap();
                let s = g.sub(a, v[1]).unwrap();
                let s = g.sub(s, v[1]).unwrap();
                let m = g.mul_scalar(v[2], s).unwrap();
                project(g, m, 4)
            }),
        )
    });
}

pub fn pointwise_maps() {
    for_instances("relu/sigmoid/scale", |rng| {
        (
            vec![random(rng, &[4, 5], 2.0)],
            Box::new(|g, v| {
                let r = g.relu(v[0]);
                let s = g.sigmoid(v[0]);
                let s = g.scale(s, 3.0);
                let t = g.add(r, s).unwrap();
                project(g, t, 5)
            }),
        )
    });
}

pub fn softmax_along_each_axis() {
    for axis in 0..3 {
        for_instances(&format!("softmax axis {axis}"), move |rng| {
            (
                vec![random(rng, &[3, 4, 2], 2.0)],
                Box::new(move |g, v| {
                    let s = g.softmax(v[0], axis).unwrap();
                    project(g, s, 6)
                }),
            )
        });
    }
}

pub fn thresholds_with_learnable_level() {
    for_instances("soft_threshold/shift_relu", |rng| {
        let z = Tensor::from_elem(IxDyn(&[]), rng.random_range(0.05..0.3));
        (
            vec![random(rng, &[5, 6], 1.0), z],
            Box::new(|g, v| {
                let a = g.soft_threshold(v[0], v[1]).unwrap();
                let b = g.shift_relu(v[0], v[1]).unwrap();
                let t = g.add(a, b).unwrap();
                project(g, t, 7)
            }),
        )
    });
}

pub fn reshape_permute_and_reductions() {
    for_instances("reshape/permute/sum", |rng| {
        (
            vec![random(rng, &[2, 3, 4], 1.0)],
            Box::new(|g, v| {
                let p = g.permute(v[0], &[2, 0, 1]).unwrap();
                let r = g.reshape(p, &[4, 6]).unwrap();
                let t = g.transpose(r).unwrap();
                let s = g.sum(t);
                let q = project(g, t, 8);
                let s = g.scale(s, 0.3);
                let s = g.sum_squares(s);
                g.add(q, s).unwrap()
            }),
        )
    });
}

pub fn shape(p: usize, h: usize, w: usize, r: usize, m: usize, layers: usize) -> NetShape {
    NetShape {
        bands: p,
        height: h,
        width: w,
        endmembers: r,
        layers_e: layers,
        layers_a: layers,
        kernels_e: m,
        kernels_a: m,
        ksize_e: 3,
        ksize_a: 3,
    }
}

/// Random parameters with larger scales than the default init so the
/// thresholds are exercised on both sides.
pub fn net_leaves(s: &NetShape, rng: &mut ChaCha8Rng) -> NbaParams<f64> {
    let mut p = NbaParams::<f64>::init(s, rng).unwrap();
    for t in p.leaves_mut() {
        if t.ndim() == 0 {
            let v = rng.random_range(0.05..0.6);
            t.fill(v);
        } else {
            t.mapv_inplace(|v| 2.0 * v);
        }
    }
    p
}

pub fn rebuild(template: &NbaParams<f64>, vars: &[Var]) -> Nba<Var> {
    let mut it = vars.iter();
    template.map(&mut |_| *it.next().unwrap())
}

pub fn cube(p: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> HsiCube<f64> {
    HsiCube::new(Array3::from_shape_simple_fn((p, h, w), || rng.random_range(0.0..1.0))).unwrap()
}

pub fn uedip_network() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        // P=10, N=12 (3×4), R=2, m_E=3
        let s = shape(10, 3, 4, 2, 3, 2);
        let params = net_leaves(&s, &mut rng);
        let y = cube(10, 3, 4, &mut rng);
        let leaves: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
        let y_t = y.flat().t().as_standard_layout().into_owned().into_dyn();
        let build = move |g: &mut Graph<f64>, v: &[Var]| {
            let net = rebuild(&params, v);
            let yt = g.constant(y_t.clone());
            let e = uedip_graph(g, yt, &net.uedip).unwrap();
            project(g, e, 9)
        };
        check(&format!("uedip #{seed}"), &leaves, &build, 12, &mut rng);
    }
}

pub fn uadip_network() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        // P=8, 4×4 image, R=3, m_A=4
        let s = shape(8, 4, 4, 3, 4, 2);
        let params = net_leaves(&s, &mut rng);
        let y = cube(8, 4, 4, &mut rng);
        let leaves: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
        let flat = y.to_flat().into_dyn();
        let build = move |g: &mut Graph<f64>, v: &[Var]| {
            let net = rebuild(&params, v);
            let yc = g.constant(flat.clone());
            let a = uadip_graph(g, yc, 4, 4, &net.uadip).unwrap();
            project(g, a, 10)
        };
        check(&format!("uadip #{seed}"), &leaves, &build, 12, &mut rng);
    }
}

pub fn composite_loss_through_nba() {
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let (p, h, w, r) = (6, 3, 3, 2);
        let s = shape(p, h, w, r, 2, 1);
        let params = net_leaves(&s, &mut rng);
        let y = cube(p, h, w, &mut rng);
        let e_g = Array2::from_shape_simple_fn((p, r), || rng.random_range(0.0..1.0));
        let mut a_g = Array2::from_shape_simple_fn((r, h * w), || rng.random_range(0.1..1.0));
        for mut c in a_g.columns_mut() {
            let s = c.sum();
            c /= s;
        }
        let guidance = Guidance {
            endmembers: EndmemberMatrix::new(e_g),
            abundances: AbundanceMatrix::new(a_g, h, w).unwrap(),
        };
        let aug = AugTerms {
            x_e: Array2::from_shape_simple_fn((p, r), || rng.random_range(0.0..1.0)),
            d_e: Array2::from_shape_simple_fn((p, r), || rng.random_range(-0.1..0.1)),
            mu_e: 0.3,
            x_a: Array2::from_shape_simple_fn((r, h * w), || rng.random_range(0.0..1.0)),
            d_a: Array2::from_shape_simple_fn((r, h * w), || rng.random_range(-0.1..0.1)),
            mu_a: 0.2,
        };
        let weights = LossWeights { alpha1: 0.7, alpha2: 0.4, alpha3: 1.0, ..LossWeights::default() };
        let leaves: Vec<Tensor<f64>> = params.named().into_iter().map(|(_, t)| t.clone()).collect();
        let build = move |g: &mut Graph<f64>, v: &[Var]| {
            let net = rebuild(&params, v);
            let nodes = nba_graph(g, &y, &net).unwrap();
            let yv = g.constant(y.to_flat().into_dyn());
            composite_loss(g, yv, &nodes, &guidance, &weights, Some(&aug)).unwrap().total
        };
        check(&format!("nba loss #{seed}"), &leaves, &build, 8, &mut rng);
    }
}
