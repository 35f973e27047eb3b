#![allow(dead_code)]

use hnseg::autodiff::{BatchNormMode, Real, RunningStats, Tape, Tensor, Var};
use hnseg::config::PipelineConfig;
use hnseg::datapipe::CaseRecord;
use hnseg::loss::{deep_supervision_loss, dice_ce, LabelTensor, LossConfig};
use hnseg::segresnet::{Mode, NetworkParams, SegResNet, SegResNetConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Differentiable operators under finite-difference test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Add,
    Mul,
    Scale,
    Sum,
    Relu,
    Softmax,
    NearestDownsample,
    Conv3d,
    Conv3dStrided,
    Conv3dPointwise,
    ConvTranspose3d,
    BatchNormTrain,
    BatchNormEval,
    DiceCe,
    DeepSupervision,
}

pub const ALL_OPS: [Op; 15] = [
    Op::Add,
    Op::Mul,
    Op::Scale,
    Op::Sum,
    Op::Relu,
    Op::Softmax,
    Op::NearestDownsample,
    Op::Conv3d,
    Op::Conv3dStrided,
    Op::Conv3dPointwise,
    Op::ConvTranspose3d,
    Op::BatchNormTrain,
    Op::BatchNormEval,
    Op::DiceCe,
    Op::DeepSupervision,
];

/// One randomized instance: differentiable inputs plus fixed data.
pub struct Instance {
    pub op: Op,
    pub inputs: Vec<Tensor<f64>>,
    /// Random projection turning tensor outputs into a scalar loss.
    pub projection: Option<Tensor<f64>>,
    pub labels: Option<LabelTensor>,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn labels(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> LabelTensor {
    let n = shape.iter().product();
    LabelTensor::new(shape, (0..n).map(|_| rng.random_range(0..3u8)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay outside the stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = random(rng, shape, 0.1, 1.0);
    for v in t.data_mut() {
        if rng.random_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

pub fn instance(op: Op, seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(op as u64));
    let d = rng.random_range(2..=4usize);
    let h = rng.random_range(2..=4usize);
    let w = rng.random_range(2..=4usize);
    let small = [rng.random_range(1..=2usize), rng.random_range(1..=3usize), d, h, w];
    let inputs = match op {
        Op::Add | Op::Mul => vec![random(&mut rng, &small, -1.0, 1.0), random(&mut rng, &small, -1.0, 1.0)],
        Op::Scale | Op::Sum | Op::Softmax => vec![random(&mut rng, &small, -2.0, 2.0)],
        Op::Relu => vec![away_from_zero(&mut rng, &small)],
        Op::NearestDownsample => vec![random(&mut rng, &[small[0], small[1], 2 * d, 2 * h, 2 * w], -1.0, 1.0)],
        Op::Conv3d => vec![
            random(&mut rng, &[small[0], 2, d + 1, h + 2, w + 1], -1.0, 1.0),
            random(&mut rng, &[3, 2, 3, 3, 3], -0.5, 0.5),
            random(&mut rng, &[3], -0.5, 0.5),
        ],
        Op::Conv3dStrided => vec![
            random(&mut rng, &[small[0], 2, 2 * d, 2 * h + 1, 2 * w], -1.0, 1.0),
            random(&mut rng, &[3, 2, 3, 3, 3], -0.5, 0.5),
        ],
        Op::Conv3dPointwise => vec![
            random(&mut rng, &[small[0], 3, d, h, w], -1.0, 1.0),
            random(&mut rng, &[2, 3, 1, 1, 1], -1.0, 1.0),
            random(&mut rng, &[2], -0.5, 0.5),
        ],
        Op::ConvTranspose3d => vec![
            random(&mut rng, &[small[0], 3, d, h, w], -1.0, 1.0),
            random(&mut rng, &[3, 2, 2, 2, 2], -0.5, 0.5),
            random(&mut rng, &[2], -0.5, 0.5),
        ],
        Op::BatchNormTrain | Op::BatchNormEval => {
            let c = small[1];
            vec![
                random(&mut rng, &[2, c, d, h, w], -2.0, 2.0),
                random(&mut rng, &[c], 0.5, 1.5),
                random(&mut rng, &[c], -0.5, 0.5),
            ]
        }
        Op::DiceCe => vec![random(&mut rng, &[small[0], 3, d, h, w], -2.0, 2.0)],
        Op::DeepSupervision => {
            let n = small[0];
            vec![
                random(&mut rng, &[n, 3, 2 * d, 2 * h, 2 * w], -2.0, 2.0),
                random(&mut rng, &[n, 3, d, h, w], -2.0, 2.0),
            ]
        }
    };
    let labels = match op {
        Op::DiceCe => Some(labels(&mut rng, [small[0], d, h, w])),
        Op::DeepSupervision => Some(labels(&mut rng, [small[0], 2 * d, 2 * h, 2 * w])),
        _ => None,
    };
    let mut inst = Instance {
        op,
        inputs,
        projection: None,
        labels,
    };
    if !matches!(op, Op::DiceCe | Op::DeepSupervision) {
        let mut tape = Tape::<f64>::new();
        let (out, _) = forward(&inst, &mut tape, &inst.inputs.clone());
        let shape = tape.shape(out).to_vec();
        inst.projection = Some(random(&mut rng, &shape, -1.0, 1.0));
    }
    inst
}

fn forward<T: Real>(inst: &Instance, tape: &mut Tape<T>, inputs: &[Tensor<T>]) -> (Var, Vec<Var>) {
    let v: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss_cfg = LossConfig::default();
    let out = match inst.op {
        Op::Add => tape.add(v[0], v[1]).unwrap(),
        Op::Mul => tape.mul(v[0], v[1]).unwrap(),
        Op::Scale => tape.scale(v[0], T::lit(1.7)),
        Op::Sum => tape.sum(v[0]),
        Op::Relu => tape.relu(v[0]),
        Op::Softmax => tape.softmax_channels(v[0]).unwrap(),
        Op::NearestDownsample => tape.nearest_downsample(v[0], 2).unwrap(),
        Op::Conv3d => tape.conv3d(v[0], v[1], Some(v[2]), 1, 1).unwrap(),
        Op::Conv3dStrided => tape.conv3d(v[0], v[1], None, 2, 1).unwrap(),
        Op::Conv3dPointwise => tape.conv3d(v[0], v[1], Some(v[2]), 1, 0).unwrap(),
        Op::ConvTranspose3d => tape.conv_transpose3d(v[0], v[1], Some(v[2])).unwrap(),
        Op::BatchNormTrain => tape.batch_norm(v[0], v[1], v[2], BatchNormMode::Train { eps: T::lit(1e-5) }).unwrap().0,
        Op::BatchNormEval => {
            let c = inputs[1].numel();
            let stats = RunningStats {
                mean: (0..c).map(|i| T::lit(0.1 * i as f64 - 0.05)).collect(),
                var: (0..c).map(|i| T::lit(0.8 + 0.3 * i as f64)).collect(),
            };
            tape.batch_norm(v[0], v[1], v[2], BatchNormMode::Eval { stats: &stats, eps: T::lit(1e-5) })
                .unwrap()
                .0
        }
        Op::DiceCe => dice_ce(tape, v[0], inst.labels.as_ref().unwrap(), &loss_cfg).unwrap().0,
        Op::DeepSupervision => deep_supervision_loss(tape, &v, inst.labels.as_ref().unwrap(), &loss_cfg).unwrap().0,
    };
    (out, v)
}

/// Scalar loss and analytic gradients for every input.
pub fn loss_and_grads<T: Real>(inst: &Instance, inputs: &[Tensor<T>], want_grads: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::<T>::new();
    let (out, leaves) = forward(inst, &mut tape, inputs);
    let loss = match &inst.projection {
        Some(p) => {
            let pv = tape.constant(p.cast());
            let prod = tape.mul(out, pv).unwrap();
            tape.sum(prod)
        }
        None => out,
    };
    let value = tape.value(loss).data()[0].to_f64().unwrap();
    if !want_grads {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let grads = leaves
        .iter()
        .map(|&v| tape.grad(v).unwrap().iter().map(|g| g.to_f64().unwrap()).collect())
        .collect();
    (value, grads)
}

/// Central-difference steps, relative to `max(|x|, 1)`.
pub const F32_STEP: f64 = 3e-2;
pub const F64_STEP: f64 = 1e-6;

/// Norm-wise relative error between analytic and central-difference
/// gradients, in precision `T`.
pub fn gradient_error<T: Real>(inst: &Instance, step: f64) -> f64 {
    let inputs: Vec<Tensor<T>> = inst.inputs.iter().map(|t| t.cast()).collect();
    let (_, analytic) = loss_and_grads(inst, &inputs, true);
    let (mut diff, mut na, mut nn) = (0.0f64, 0.0f64, 0.0f64);
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.numel() {
            let x = input.data()[j].to_f64().unwrap();
            let h = step * x.abs().max(1.0);
            let mut probe = inputs.clone();
            probe[i].data_mut()[j] = T::lit(x + h);
            let (up, _) = loss_and_grads(inst, &probe, false);
            probe[i].data_mut()[j] = T::lit(x - h);
            let (down, _) = loss_and_grads(inst, &probe, false);
            // the perturbation actually applied after rounding to T
            let h_eff = (T::lit(x + h).to_f64().unwrap() - T::lit(x - h).to_f64().unwrap()) / 2.0;
            let numeric = (up - down) / (2.0 * h_eff);
            let a = analytic[i][j];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
    }
    diff.sqrt() / na.sqrt().max(nn.sqrt()).max(1e-8)
}

/// Tiny network used where the desk model would be too slow.
pub fn tiny_network() -> SegResNetConfig {
    SegResNetConfig {
        in_channels: 2,
        out_channels: 3,
        init_filters: 2,
        blocks_down: vec![1, 1, 1],
        ds_levels: 2,
        patch_size: [8; 3],
    }
}

/// Desk pipeline shrunk to the tiny network and 8³ patches.
pub fn tiny_pipeline() -> PipelineConfig {
    let mut cfg = PipelineConfig::desk();
    cfg.network = tiny_network();
    cfg.sampler.patch_size = [8; 3];
    cfg.inference.roi_size = [8; 3];
    cfg.train.epochs = 2;
    cfg.train.val_every = 1;
    cfg.train.lr0 = 1e-2;
    cfg
}

/// In-memory case with a bright cube of class 1 and a dimmer one of class 2.
pub fn synthetic_record(id: &str, seed: u64, dims: [usize; 3]) -> CaseRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [d, h, w] = dims;
    let s = d * h * w;
    let mut labels = vec![0u8; s];
    let mut input = vec![0f32; 2 * s];
    let c1 = [rng.random_range(2..d - 3), rng.random_range(2..h - 3), rng.random_range(2..w - 3)];
    let c2 = [rng.random_range(2..d - 3), rng.random_range(2..h - 3), rng.random_range(2..w - 3)];
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let inside = |c: [usize; 3]| (0..3).all(|a| [z, y, x][a].abs_diff(c[a]) <= 1);
                if inside(c1) {
                    labels[i] = 1;
                } else if inside(c2) {
                    labels[i] = 2;
                }
                let noise = rng.random_range(-0.05f32..0.05);
                input[i] = 0.3 + 0.2 * (labels[i] == 1) as u8 as f32 + noise;
                input[s + i] = 0.2 + 0.3 * (labels[i] > 0) as u8 as f32 + 0.1 * (labels[i] == 2) as u8 as f32 + noise;
            }
        }
    }
    let mut foreground = [Vec::new(), Vec::new()];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            foreground[l as usize - 1].push(i as u32);
        }
    }
    CaseRecord {
        id: id.to_string(),
        dims,
        input: Tensor::new(vec![1, 2, d, h, w], input).unwrap(),
        labels,
        foreground,
        pad: [0.1, 0.3],
    }
}

pub fn forward_train(net: &SegResNet, params: &NetworkParams<f64>, x: &Tensor<f64>) -> (Tape<f64>, Vec<Var>, Vec<(usize, Var)>) {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pass = net.forward(params, &mut tape, xv, Mode::Train).unwrap();
    (tape, pass.outputs, pass.param_vars)
}
