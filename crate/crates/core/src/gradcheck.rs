//! Finite-difference verification of every backward rule and of the full
//! training loss.
//!
//! Analytic gradients come from the tape at the working precision (`f32` by
//! default, `f64` with `double`). Numeric gradients are central differences
//! of an `f64` forward pass evaluated at the same (rounded) inputs.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::loss::{total_loss, LossWeights};
use crate::model::{ClassConditioning, LatentSampling, ModelSpec, SsVaeModel, Variant};
use crate::tensor::{OpKind, Real, Reduction, Tape, Tensor, Var};

pub const SINGLE_TOLERANCE: f64 = 1e-3;
pub const DOUBLE_TOLERANCE: f64 = 1e-6;

/// Denominator floor of the relative error, so exact zeros compare cleanly.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckOptions {
    /// Analytic gradients in `f64` and the tighter tolerance.
    pub double: bool,
    /// Scale the backward output of this operation by 1.5.
    pub fault: Option<OpKind>,
}

impl GradCheckOptions {
    pub fn tolerance(&self) -> f64 {
        if self.double {
            DOUBLE_TOLERANCE
        } else {
            SINGLE_TOLERANCE
        }
    }

    fn step(&self) -> f64 {
        if self.double {
            1e-5
        } else {
            1e-4
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index (across all inputs) of the worst element.
    pub worst: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub tolerance: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

impl fmt::Display for CaseResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<12} max rel err {:.3e} tol {:.1e} (analytic {:.6e}, numeric {:.6e} at element {})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_error,
            self.tolerance,
            self.analytic,
            self.numeric,
            self.worst
        )
    }
}

#[derive(Clone, Debug)]
enum Graph {
    Op(OpKind),
    TotalLoss {
        spec: ModelSpec,
        x: Tensor<f64>,
        labels: Vec<Option<usize>>,
    },
}

#[derive(Clone, Debug)]
struct Case {
    name: String,
    graph: Graph,
    inputs: Vec<Tensor<f64>>,
    /// Weights of the linear read-out that turns an op's output into a scalar.
    readout: Option<Tensor<f64>>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect())
        .expect("positive shape")
}

/// Values in `[-hi, -lo] ∪ [lo, hi]`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let mut t = uniform(rng, shape, lo, hi);
    for v in t.data_mut() {
        if rng.gen() {
            *v = -*v;
        }
    }
    t
}

const END_TO_END: &str = "total_loss";
const GATHER_PICKS: [(usize, usize); 4] = [(0, 1), (2, 3), (1, 1), (0, 1)];

fn op_inputs(kind: OpKind, rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    let m = [3, 4];
    match kind {
        OpKind::MatMul => vec![uniform(rng, &[3, 5], -1.0, 1.0), uniform(rng, &[5, 2], -1.0, 1.0)],
        OpKind::Add | OpKind::Sub | OpKind::Mul => {
            vec![uniform(rng, &m, -1.0, 1.0), uniform(rng, &m, -1.0, 1.0)]
        }
        OpKind::AddRow => vec![uniform(rng, &m, -1.0, 1.0), uniform(rng, &[4], -1.0, 1.0)],
        OpKind::Relu => vec![away_from_zero(rng, &m, 0.2, 1.0)],
        OpKind::Log => vec![uniform(rng, &m, 0.5, 2.0)],
        // clamp bounds are ±0.5; keep every value at least 0.1 from them
        OpKind::Clamp => vec![uniform(rng, &m, -0.4, 0.4).map(|v| {
            if v.abs() < 0.1 {
                v
            } else {
                v.signum() * (v.abs() * 1.5 + 0.45)
            }
        })],
        OpKind::ConcatCols => vec![uniform(rng, &[3, 2], -1.0, 1.0), uniform(rng, &[3, 3], -1.0, 1.0)],
        _ => vec![uniform(rng, &m, -2.0, 2.0)],
    }
}

fn build_op<T: Real>(tape: &mut Tape<T>, kind: OpKind, v: &[Var]) -> Result<Var> {
    Ok(match kind {
        OpKind::MatMul => tape.matmul(v[0], v[1])?,
        OpKind::Add => tape.add(v[0], v[1])?,
        OpKind::Sub => tape.sub(v[0], v[1])?,
        OpKind::Mul => tape.mul(v[0], v[1])?,
        OpKind::AddRow => tape.add_row(v[0], v[1])?,
        OpKind::Scale => tape.scale(v[0], 1.7),
        OpKind::AddScalar => tape.add_scalar(v[0], 0.3),
        OpKind::Relu => tape.relu(v[0]),
        OpKind::Sigmoid => tape.sigmoid(v[0]),
        OpKind::Exp => tape.exp(v[0]),
        OpKind::Log => tape.log(v[0])?,
        OpKind::Softplus => tape.softplus(v[0]),
        OpKind::Clamp => tape.clamp(v[0], -0.5, 0.5),
        OpKind::Softmax => tape.softmax(v[0]),
        OpKind::LogSoftmax => tape.log_softmax(v[0]),
        OpKind::Sum => tape.reduce(Reduction::Sum, v[0], Some(1))?,
        OpKind::Mean => tape.reduce(Reduction::Mean, v[0], Some(0))?,
        OpKind::ConcatCols => tape.concat_cols(v[0], v[1])?,
        OpKind::Gather => tape.gather(v[0], GATHER_PICKS.to_vec())?,
        OpKind::Leaf => return Err(Error::Argument("leaves have no backward rule".into())),
    })
}

fn end_to_end_case() -> Case {
    let spec = ModelSpec {
        variant: Variant::SemiSupervised,
        input_dim: 6,
        encoder_widths: vec![5],
        latent_dim: 2,
        num_classes: 3,
        decoder_widths: vec![5],
        pi_to_decoder: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let model = SsVaeModel::<f64>::new(spec.clone(), &mut rng).expect("valid spec");
    Case {
        name: END_TO_END.into(),
        inputs: model.params().to_vec(),
        graph: Graph::TotalLoss {
            spec,
            x: uniform(&mut rng, &[4, 6], 0.05, 0.95),
            labels: vec![Some(0), None, Some(2), None],
        },
        readout: None,
    }
}

fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut out: Vec<Case> = OpKind::DIFFERENTIABLE
        .iter()
        .map(|&kind| {
            let inputs = op_inputs(kind, &mut rng);
            let mut probe = Tape::<f64>::new();
            let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
            let y = build_op(&mut probe, kind, &vars).expect("fixture shapes agree");
            let readout = away_from_zero(&mut rng, probe.shape(y), 0.5, 1.5);
            Case {
                name: kind.to_string(),
                graph: Graph::Op(kind),
                inputs,
                readout: Some(readout),
            }
        })
        .collect();
    out.push(end_to_end_case());
    out
}

pub fn case_names() -> Vec<String> {
    cases().into_iter().map(|c| c.name).collect()
}

/// Scalar output of `case` at `inputs`, plus the input leaves.
fn evaluate<T: Real>(
    case: &Case,
    inputs: &[Tensor<T>],
    fault: Option<OpKind>,
) -> Result<(Tape<T>, Var, Vec<Var>)> {
    let mut tape = Tape::new();
    if let Some(kind) = fault {
        tape.inject_gradient_fault(kind, 1.5);
    }
    let (loss, leaves) = match &case.graph {
        Graph::Op(kind) => {
            let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
            let y = build_op(&mut tape, *kind, &vars)?;
            let w = tape.constant(case.readout.as_ref().expect("op cases have a readout").cast());
            let weighted = tape.mul(y, w)?;
            (tape.sum(weighted), vars)
        }
        Graph::TotalLoss { spec, x, labels } => {
            let model = SsVaeModel::from_parameters(spec.clone(), inputs.to_vec())?;
            let bound = model.bind(&mut tape);
            let xv = tape.constant(x.cast());
            let mut noise = ChaCha8Rng::seed_from_u64(11);
            let out = model.forward(
                &mut tape,
                &bound,
                xv,
                LatentSampling::Noise(&mut noise),
                ClassConditioning::Predicted,
            )?;
            let weights = LossWeights {
                alpha_weight: 1.0,
                beta_norm: 1.0,
            };
            let parts = total_loss(&mut tape, spec.variant, xv, labels, &out, weights)?;
            (parts.total, bound.vars().to_vec())
        }
    };
    Ok((tape, loss, leaves))
}

fn analytic<T: Real>(case: &Case, inputs: &[Tensor<f64>], fault: Option<OpKind>) -> Result<Vec<f64>> {
    let cast: Vec<Tensor<T>> = inputs.iter().map(Tensor::cast).collect();
    let (mut tape, loss, leaves) = evaluate(case, &cast, fault)?;
    tape.backward(loss)?;
    let mut out = Vec::new();
    for (v, t) in leaves.iter().zip(inputs) {
        match tape.grad(*v) {
            Some(g) => out.extend(g.data().iter().map(|x| x.to_f64_lossy())),
            None => out.extend(std::iter::repeat_n(0.0, t.numel())),
        }
    }
    Ok(out)
}

fn numeric(case: &Case, inputs: &[Tensor<f64>], h: f64) -> Result<Vec<f64>> {
    let value = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let (tape, loss, _) = evaluate(case, inputs, None)?;
        tape.value(loss).item()
    };
    let mut out = Vec::new();
    let mut probe = inputs.to_vec();
    for i in 0..inputs.len() {
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + h;
            let up = value(&probe)?;
            probe[i].data_mut()[j] = orig - h;
            let down = value(&probe)?;
            probe[i].data_mut()[j] = orig;
            out.push((up - down) / (2.0 * h));
        }
    }
    Ok(out)
}

fn check_case(case: &Case, opts: &GradCheckOptions) -> Result<CaseResult> {
    // Evaluate both routes at exactly representable points of the working precision.
    let inputs: Vec<Tensor<f64>> = if opts.double {
        case.inputs.clone()
    } else {
        case.inputs.iter().map(|t| t.cast::<f32>().cast()).collect()
    };
    let a = if opts.double {
        analytic::<f64>(case, &inputs, opts.fault)?
    } else {
        analytic::<f32>(case, &inputs, opts.fault)?
    };
    let n = numeric(case, &inputs, opts.step())?;
    let mut result = CaseResult {
        name: case.name.clone(),
        max_rel_error: 0.0,
        worst: 0,
        analytic: 0.0,
        numeric: 0.0,
        tolerance: opts.tolerance(),
    };
    for (i, (&av, &nv)) in a.iter().zip(&n).enumerate() {
        let err = (av - nv).abs() / av.abs().max(nv.abs()).max(RELATIVE_FLOOR);
        if !(err <= result.max_rel_error) {
            result.max_rel_error = err;
            result.worst = i;
            result.analytic = av;
            result.numeric = nv;
        }
    }
    Ok(result)
}

/// Checks every operation and the end-to-end loss.
pub fn run_gradcheck(opts: &GradCheckOptions) -> Result<Vec<CaseResult>> {
    cases().iter().map(|c| check_case(c, opts)).collect()
}

/// Checks the named cases only.
pub fn run_cases(names: &[&str], opts: &GradCheckOptions) -> Result<Vec<CaseResult>> {
    let all = cases();
    names
        .iter()
        .map(|&name| {
            let case = all
                .iter()
                .find(|c| c.name == name)
                .ok_or_else(|| Error::Argument(format!("no gradient check named {name:?}")))?;
            check_case(case, opts)
        })
        .collect()
}
