//! Double-precision gradient checks for every differentiable tape op and
//! the composite modules, shared by the test suite and the CLI.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{gradcheck_with, GradCheckOptions, GradCheckReport, OpKind, Tape, Var};
use crate::error::{Error, Result};
use crate::layer::ConvVars;
use crate::network::{NetworkConfig, ScopeNetwork, Variant};
use crate::ops::ConvGeometry;
use crate::sde::sde_forward_tape;
use crate::ssr::{ssr_forward_tape, SsrVars};
use crate::tensor::{Shape, Tensor};

/// Tolerance for ops that are linear in each checked element, and for the loss.
pub const LINEAR_TOLERANCE: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteGroup {
    All,
    Ops,
    Sde,
    Ssr,
    Network,
}

impl FromStr for SuiteGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(SuiteGroup::All),
            "ops" => Ok(SuiteGroup::Ops),
            "sde" => Ok(SuiteGroup::Sde),
            "ssr" => Ok(SuiteGroup::Ssr),
            "network" => Ok(SuiteGroup::Network),
            other => Err(Error::invalid("gradcheck", format!("unknown module `{other}`"))),
        }
    }
}

impl fmt::Display for SuiteGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SuiteGroup::All => "all",
            SuiteGroup::Ops => "ops",
            SuiteGroup::Sde => "sde",
            SuiteGroup::Ssr => "ssr",
            SuiteGroup::Network => "network",
        })
    }
}

#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.report.max_relative_error <= self.tolerance
    }
}

type CaseFn = fn(GradCheckOptions) -> Result<GradCheckReport>;

struct Case {
    name: &'static str,
    group: SuiteGroup,
    tolerance: f64,
    run: CaseFn,
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x6ead_c0de ^ tag)
}

fn uniform(rng: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values in `[-hi, -gap] ∪ [gap, hi]`.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape, gap: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(gap..hi);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(out * weights)` with fixed pseudo-random weights.
fn weighted_sum(tape: &mut Tape<f64>, out: Var, tag: u64) -> Result<Var> {
    let w = uniform(&mut rng(tag ^ 0xface), tape.shape(out), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn check(
    inputs: &[Tensor<f64>],
    opts: GradCheckOptions,
    tag: u64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    gradcheck_with(
        |tape, v| {
            let out = f(tape, v)?;
            weighted_sum(tape, out, tag)
        },
        inputs,
        opts,
    )
}

fn s(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w)
}

fn conv_same(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(1);
    let inputs = [
        uniform(&mut r, s(2, 3, 5, 6), -1.0, 1.0),
        uniform(&mut r, s(4, 3, 3, 3), -1.0, 1.0),
        uniform(&mut r, s(4, 1, 1, 1), -1.0, 1.0),
    ];
    check(&inputs, o, 1, |t, v| t.conv2d(v[0], v[1], v[2], ConvGeometry::same(3)))
}

fn conv_strided(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(2);
    let inputs = [
        uniform(&mut r, s(1, 2, 7, 6), -1.0, 1.0),
        uniform(&mut r, s(3, 2, 3, 3), -1.0, 1.0),
        uniform(&mut r, s(3, 1, 1, 1), -1.0, 1.0),
    ];
    check(&inputs, o, 2, |t, v| t.conv2d(v[0], v[1], v[2], ConvGeometry::new(2, 1)))
}

fn conv_pointwise(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(3);
    let inputs = [
        uniform(&mut r, s(2, 4, 3, 3), -1.0, 1.0),
        uniform(&mut r, s(5, 4, 1, 1), -1.0, 1.0),
        uniform(&mut r, s(5, 1, 1, 1), -1.0, 1.0),
    ];
    check(&inputs, o, 3, |t, v| t.conv2d(v[0], v[1], v[2], ConvGeometry::new(1, 0)))
}

fn binary(tag: u64, o: GradCheckOptions, f: fn(&mut Tape<f64>, Var, Var) -> Result<Var>) -> Result<GradCheckReport> {
    let mut r = rng(tag);
    let inputs = [
        uniform(&mut r, s(2, 3, 4, 4), -1.0, 1.0),
        uniform(&mut r, s(2, 3, 4, 4), -1.0, 1.0),
    ];
    check(&inputs, o, tag, |t, v| f(t, v[0], v[1]))
}

fn add(o: GradCheckOptions) -> Result<GradCheckReport> {
    binary(4, o, |t, a, b| t.add(a, b))
}

fn sub(o: GradCheckOptions) -> Result<GradCheckReport> {
    binary(5, o, |t, a, b| t.sub(a, b))
}

fn mul(o: GradCheckOptions) -> Result<GradCheckReport> {
    binary(6, o, |t, a, b| t.mul(a, b))
}

fn scale(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(7), s(1, 2, 3, 4), -1.0, 1.0)];
    check(&inputs, o, 7, |t, v| Ok(t.scale(v[0], -1.75)))
}

fn mul_broadcast(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(8);
    let inputs = [
        uniform(&mut r, s(2, 3, 4, 5), -1.0, 1.0),
        uniform(&mut r, s(2, 1, 4, 5), -1.0, 1.0),
    ];
    check(&inputs, o, 8, |t, v| t.mul_broadcast(v[0], v[1]))
}

fn relu(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [away_from_zero(&mut rng(9), s(2, 3, 4, 4), 0.05, 2.0)];
    check(&inputs, o, 9, |t, v| Ok(t.relu(v[0])))
}

fn hardswish(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(10);
    // stay clear of the breakpoints at -3 and 3
    let inputs = [Tensor::from_fn(s(2, 3, 4, 4), |_, _, _, _| {
        let band = r.gen_range(0..3);
        match band {
            0 => r.gen_range(-4.5..-3.1),
            1 => r.gen_range(-2.9..2.9),
            _ => r.gen_range(3.1..4.5),
        }
    })];
    check(&inputs, o, 10, |t, v| Ok(t.hardswish(v[0])))
}

fn sigmoid(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(11), s(2, 3, 4, 4), -4.0, 4.0)];
    check(&inputs, o, 11, |t, v| Ok(t.sigmoid(v[0])))
}

fn softmax(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(12), s(2, 9, 3, 4), -2.0, 2.0)];
    check(&inputs, o, 12, |t, v| t.softmax_per_position(v[0]))
}

fn pixel_shuffle(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(13), s(2, 8, 3, 2), -1.0, 1.0)];
    check(&inputs, o, 13, |t, v| t.pixel_shuffle(v[0], 2))
}

fn unfold(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(14), s(1, 2, 4, 5), -1.0, 1.0)];
    check(&inputs, o, 14, |t, v| t.unfold_neighborhood(v[0], 3))
}

fn nearest_upsample(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(15), s(2, 2, 3, 3), -1.0, 1.0)];
    check(&inputs, o, 15, |t, v| t.nearest_upsample(v[0], 2))
}

fn avg_pool(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(16), s(2, 2, 6, 4), -1.0, 1.0)];
    check(&inputs, o, 16, |t, v| t.avg_pool_to(v[0], 3, 2))
}

fn global_pool(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(17), s(2, 3, 4, 3), -1.0, 1.0)];
    check(&inputs, o, 17, |t, v| t.global_avg_pool(v[0]))
}

fn concat(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(18);
    let inputs = [
        uniform(&mut r, s(2, 1, 3, 3), -1.0, 1.0),
        uniform(&mut r, s(2, 3, 3, 3), -1.0, 1.0),
        uniform(&mut r, s(2, 2, 3, 3), -1.0, 1.0),
    ];
    check(&inputs, o, 18, |t, v| t.concat_channels(v))
}

fn reassemble(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(19);
    let inputs = [
        uniform(&mut r, s(2, 3, 5, 4), -1.0, 1.0),
        uniform(&mut r, s(2, 9, 5, 4), 0.0, 1.0),
    ];
    check(&inputs, o, 19, |t, v| t.reassemble(v[0], v[1]))
}

fn reassemble_softmax(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(20);
    let inputs = [
        uniform(&mut r, s(1, 2, 6, 5), -1.0, 1.0),
        uniform(&mut r, s(1, 25, 6, 5), -2.0, 2.0),
    ];
    check(&inputs, o, 20, |t, v| {
        let k = t.softmax_per_position(v[1])?;
        t.reassemble(v[0], k)
    })
}

fn fully_connected(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(21);
    let inputs = [
        uniform(&mut r, s(3, 5, 1, 1), -1.0, 1.0),
        uniform(&mut r, s(4, 5, 1, 1), -1.0, 1.0),
        uniform(&mut r, s(4, 1, 1, 1), -1.0, 1.0),
    ];
    check(&inputs, o, 21, |t, v| t.fully_connected(v[0], v[1], v[2]))
}

fn cross_entropy(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(22), s(4, 5, 1, 1), -3.0, 3.0)];
    gradcheck_with(|t, v| t.cross_entropy(v[0], &[0, 4, 2, 2]), &inputs, o)
}

fn sum(o: GradCheckOptions) -> Result<GradCheckReport> {
    let inputs = [uniform(&mut rng(23), s(2, 2, 2, 3), -1.0, 1.0)];
    gradcheck_with(|t, v| Ok(t.sum(v[0])), &inputs, o)
}

fn conv_vars(v: &[Var], geometry: ConvGeometry) -> ConvVars {
    ConvVars {
        weight: v[0],
        bias: v[1],
        geometry,
    }
}

fn sde(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(30);
    let inputs = [
        uniform(&mut r, s(2, 3, 6, 5), -1.0, 1.0),
        uniform(&mut r, s(9, 3, 3, 3), -0.5, 0.5),
        uniform(&mut r, s(9, 1, 1, 1), -0.5, 0.5),
    ];
    check(&inputs, o, 30, |t, v| {
        let enc = conv_vars(&v[1..3], ConvGeometry::same(3));
        Ok(sde_forward_tape(t, v[0], &enc)?.enhanced)
    })
}

fn ssr(o: GradCheckOptions) -> Result<GradCheckReport> {
    let mut r = rng(31);
    let inputs = [
        uniform(&mut r, s(1, 2, 8, 6), -1.0, 1.0),
        uniform(&mut r, s(1, 2, 4, 3), -1.0, 1.0),
        uniform(&mut r, s(36, 2, 3, 3), -0.5, 0.5),
        uniform(&mut r, s(36, 1, 1, 1), -0.5, 0.5),
        uniform(&mut r, s(9, 2, 3, 3), -0.5, 0.5),
        uniform(&mut r, s(9, 1, 1, 1), -0.5, 0.5),
    ];
    check(&inputs, o, 31, |t, v| {
        let vars = SsrVars {
            lp_encoder: conv_vars(&v[2..4], ConvGeometry::same(3)),
            guide_encoder: conv_vars(&v[4..6], ConvGeometry::same(3)),
        };
        Ok(ssr_forward_tape(t, v[0], v[1], &vars)?.refined)
    })
}

/// The micro configuration used for whole-network checks.
pub fn micro_network_config() -> NetworkConfig {
    NetworkConfig {
        variant: Variant::Full,
        image_channels: 3,
        stage_channels: [4, 4, 6, 6],
        blocks_per_stage: [1, 1, 1, 1],
        c_prime: 4,
        k_l: [3, 3, 3],
        k_h: 3,
        num_classes: 3,
    }
}

fn network(o: GradCheckOptions) -> Result<GradCheckReport> {
    let net = ScopeNetwork::<f64>::new(micro_network_config(), 32)?;
    let mut r = rng(32);
    let mut inputs = vec![uniform(&mut r, s(2, 3, 32, 32), 0.0, 1.0)];
    // Wider than the training init: with fan-in scaling the deep-path
    // gradients shrink to ~1e-8, where finite differences are all noise.
    inputs.extend(net.params().tensors().map(|t| uniform(&mut r, t.shape(), -0.5, 0.5)));
    let labels = [2, 0];
    let opts = GradCheckOptions {
        max_elements_per_input: o.max_elements_per_input.or(Some(6)),
        ..o
    };
    gradcheck_with(
        |t, v| {
            let nodes = net.forward_tape(t, &v[1..], v[0], Variant::Full)?;
            t.cross_entropy(nodes.logits, &labels)
        },
        &inputs,
        opts,
    )
}

fn all_cases() -> Vec<Case> {
    use SuiteGroup::*;
    let c = |name, group, tolerance, run: CaseFn| Case {
        name,
        group,
        tolerance,
        run,
    };
    vec![
        c("conv2d", Ops, LINEAR_TOLERANCE, conv_same),
        c("conv2d_stride2", Ops, LINEAR_TOLERANCE, conv_strided),
        c("conv2d_1x1", Ops, LINEAR_TOLERANCE, conv_pointwise),
        c("add", Ops, LINEAR_TOLERANCE, add),
        c("sub", Ops, LINEAR_TOLERANCE, sub),
        c("scale", Ops, LINEAR_TOLERANCE, scale),
        c("pixel_shuffle", Ops, LINEAR_TOLERANCE, pixel_shuffle),
        c("unfold_neighborhood", Ops, LINEAR_TOLERANCE, unfold),
        c("nearest_upsample", Ops, LINEAR_TOLERANCE, nearest_upsample),
        c("avg_pool_to", Ops, LINEAR_TOLERANCE, avg_pool),
        c("global_avg_pool", Ops, LINEAR_TOLERANCE, global_pool),
        c("concat_channels", Ops, LINEAR_TOLERANCE, concat),
        c("fully_connected", Ops, LINEAR_TOLERANCE, fully_connected),
        c("sum", Ops, LINEAR_TOLERANCE, sum),
        c("cross_entropy", Ops, LINEAR_TOLERANCE, cross_entropy),
        c("mul", Ops, TOLERANCE, mul),
        c("mul_broadcast", Ops, TOLERANCE, mul_broadcast),
        c("relu", Ops, TOLERANCE, relu),
        c("hardswish", Ops, TOLERANCE, hardswish),
        c("sigmoid", Ops, TOLERANCE, sigmoid),
        c("softmax_per_position", Ops, TOLERANCE, softmax),
        c("reassemble", Ops, TOLERANCE, reassemble),
        c("reassemble_softmax_k5", Ops, TOLERANCE, reassemble_softmax),
        c("sde", Sde, TOLERANCE, sde),
        c("ssr", Ssr, TOLERANCE, ssr),
        c("network", Network, TOLERANCE, network),
    ]
}

/// Names of the cases `group` selects.
pub fn case_names(group: SuiteGroup) -> Vec<&'static str> {
    all_cases()
        .into_iter()
        .filter(|c| group == SuiteGroup::All || c.group == group)
        .map(|c| c.name)
        .collect()
}

/// Runs every case of `group`, optionally with one corrupted backward rule.
pub fn run_suite(group: SuiteGroup, fault: Option<OpKind>) -> Result<Vec<CaseResult>> {
    let opts = GradCheckOptions {
        fault,
        ..GradCheckOptions::default()
    };
    all_cases()
        .into_iter()
        .filter(|c| group == SuiteGroup::All || c.group == group)
        .map(|c| {
            Ok(CaseResult {
                name: c.name,
                tolerance: c.tolerance,
                report: (c.run)(opts)?,
            })
        })
        .collect()
}

