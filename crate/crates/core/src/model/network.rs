use crate::autodiff::{NodeId, StatKind, Tape};
use crate::colorspace::{hsi_to_rgb_node, lab_to_rgb_node, rgb_to_hsi_node, rgb_to_lab_node};
use crate::error::{Error, Result};
use crate::model::weights::{schema_index, WeightSet};
use crate::tensor::Tensor;

/// Guard added to the channel average / maximum before taking reciprocals.
pub const STAT_EPS: f64 = 1e-6;

/// Which branches of the network are active. The default enables
/// everything; switching branches off gives the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub gray_world: bool,
    pub white_patch: bool,
    pub rgb_stretch: bool,
    pub hsi_stretch: bool,
    pub lab_stretch: bool,
    pub residuals: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            gray_world: true,
            white_patch: true,
            rgb_stretch: true,
            hsi_stretch: true,
            lab_stretch: true,
            residuals: true,
        }
    }
}

impl Architecture {
    pub fn has_balance(&self) -> bool {
        self.gray_world || self.white_patch
    }

    pub fn has_stretch(&self) -> bool {
        self.rgb_stretch || self.hsi_stretch || self.lab_stretch
    }

    /// Named ablation variants: `full`, `no-dsbm`, `no-mcsm`, `no-rem`,
    /// `no-gw`, `no-wp`, `no-rgb`, `no-hsi`, `no-lab`.
    pub fn variant(name: &str) -> Option<Self> {
        let mut a = Architecture::default();
        match name {
            "full" => {}
            "no-dsbm" => (a.gray_world, a.white_patch) = (false, false),
            "no-mcsm" => (a.rgb_stretch, a.hsi_stretch, a.lab_stretch) = (false, false, false),
            "no-rem" => a.residuals = false,
            "no-gw" => a.gray_world = false,
            "no-wp" => a.white_patch = false,
            "no-rgb" => a.rgb_stretch = false,
            "no-hsi" => a.hsi_stretch = false,
            "no-lab" => a.lab_stretch = false,
            _ => return None,
        }
        Some(a)
    }
}

/// Weight-set tensors registered on a tape, in schema order.
#[derive(Clone, Debug)]
pub struct GraphParams {
    nodes: Vec<NodeId>,
}

impl GraphParams {
    pub fn register(tape: &mut Tape, weights: &WeightSet, trainable: bool) -> Self {
        let nodes = weights
            .params()
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), trainable))
            .collect();
        GraphParams { nodes }
    }

    /// Wraps nodes already on the tape, one per schema entry.
    pub fn from_nodes(nodes: Vec<NodeId>) -> Result<Self> {
        if nodes.len() != crate::model::weights::SCHEMA.len() {
            return Err(Error::shape(format!(
                "expected {} parameter nodes, got {}",
                crate::model::weights::SCHEMA.len(),
                nodes.len()
            )));
        }
        Ok(GraphParams { nodes })
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn node(&self, name: &str) -> NodeId {
        self.nodes[schema_index(name).unwrap_or_else(|| panic!("unknown parameter {name}"))]
    }

    /// `(weight, bias)` of the layer at `prefix`.
    pub fn layer(&self, prefix: &str) -> (NodeId, NodeId) {
        (
            self.node(&format!("{prefix}.weight")),
            self.node(&format!("{prefix}.bias")),
        )
    }
}

/// Per-stage snapshots of a forward pass, every one shaped like the input.
#[derive(Clone, Debug, Default)]
pub struct ModuleTrace {
    pub stages: Vec<(String, Tensor)>,
}

impl ModuleTrace {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.stages.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

type Recorder<'a> = Option<&'a mut Vec<(&'static str, NodeId)>>;

fn note(rec: &mut Recorder<'_>, name: &'static str, id: NodeId) {
    if let Some(r) = rec.as_mut() {
        r.push((name, id));
    }
}

fn sum_all(tape: &mut Tape, parts: &[NodeId]) -> Result<NodeId> {
    let mut acc = parts[0];
    for &p in &parts[1..] {
        acc = tape.add(acc, p)?;
    }
    Ok(acc)
}

/// Residual enhancement: `tanh(conv3x3(z))`.
pub fn rem_forward(tape: &mut Tape, z: NodeId, layer: (NodeId, NodeId)) -> Result<NodeId> {
    let c = tape.conv3x3(z, layer.0, layer.1)?;
    Ok(tape.tanh(c))
}

fn balance_branch(
    tape: &mut Tape,
    x: NodeId,
    p: &GraphParams,
    arch: &Architecture,
    kind: StatKind,
    rec: &mut Recorder<'_>,
) -> Result<NodeId> {
    let (tag, rem, names) = match kind {
        StatKind::Average => ("gw", "rem.dsbm_gw.conv3x3", ["dsbm.gw.balanced", "dsbm.gw.residual"]),
        _ => ("wp", "rem.dsbm_wp.conv3x3", ["dsbm.wp.balanced", "dsbm.wp.residual"]),
    };
    let stat = tape.global_stat(x, kind)?;
    let inv = tape.reciprocal(stat, STAT_EPS);
    let (w, b) = p.layer(&format!("dsbm.{tag}.pw"));
    let mixed = tape.pointwise_conv(x, w, b)?;
    let mut out = tape.mul(mixed, inv)?;
    note(rec, names[0], out);
    if arch.residuals {
        let r = rem_forward(tape, x, p.layer(rem))?;
        note(rec, names[1], r);
        out = tape.add(out, r)?;
    }
    let (mw, mb) = p.layer(&format!("dsbm.{tag}.merge3x3"));
    tape.conv3x3(out, mw, mb)
}

fn dsbm_inner(
    tape: &mut Tape,
    x: NodeId,
    p: &GraphParams,
    arch: &Architecture,
    rec: &mut Recorder<'_>,
) -> Result<NodeId> {
    let mut parts = Vec::new();
    if arch.gray_world {
        parts.push(balance_branch(tape, x, p, arch, StatKind::Average, rec)?);
    }
    if arch.white_patch {
        parts.push(balance_branch(tape, x, p, arch, StatKind::Maximum, rec)?);
    }
    if parts.is_empty() {
        return Err(Error::Config("balance module has no active branch".into()));
    }
    let out = sum_all(tape, &parts)?;
    note(rec, "dsbm.output", out);
    Ok(out)
}

/// Dual-statistic white balance module.
pub fn dsbm_forward(tape: &mut Tape, x: NodeId, p: &GraphParams, arch: &Architecture) -> Result<NodeId> {
    dsbm_inner(tape, x, p, arch, &mut None)
}

fn min_max_stretch(tape: &mut Tape, x: NodeId) -> Result<NodeId> {
    let lo = tape.global_stat(x, StatKind::Minimum)?;
    let hi = tape.global_stat(x, StatKind::Maximum)?;
    tape.stretch(x, lo, hi)
}

fn mcsm_inner(
    tape: &mut Tape,
    input: NodeId,
    p: &GraphParams,
    arch: &Architecture,
    rec: &mut Recorder<'_>,
) -> Result<NodeId> {
    let x = tape.clamp(input, 0.0, 1.0);
    note(rec, "mcsm.input", x);
    let mut parts = Vec::new();

    if arch.rgb_stretch {
        let s = min_max_stretch(tape, x)?;
        let (w, b) = p.layer("mcsm.rgb.pw");
        let mut out = tape.pointwise_conv(s, w, b)?;
        note(rec, "mcsm.rgb.stretched", out);
        if arch.residuals {
            let r = rem_forward(tape, x, p.layer("rem.mcsm_rgb.conv3x3"))?;
            note(rec, "mcsm.rgb.residual", r);
            out = tape.add(out, r)?;
        }
        let (mw, mb) = p.layer("mcsm.rgb.merge3x3");
        parts.push(tape.conv3x3(out, mw, mb)?);
    }

    if arch.hsi_stretch {
        let hsi = rgb_to_hsi_node(tape, x)?;
        note(rec, "mcsm.hsi.input", hsi);
        let hue = tape.slice_channels(hsi, 0, 1)?;
        let si = tape.slice_channels(hsi, 1, 2)?;
        let s = min_max_stretch(tape, si)?;
        let (w, b) = p.layer("mcsm.si.pw");
        let si = tape.pointwise_conv(s, w, b)?;
        let mut out = tape.concat_channels(&[hue, si])?;
        if arch.residuals {
            let r = rem_forward(tape, hsi, p.layer("rem.mcsm_hsi.conv3x3"))?;
            let keep_si = tape.constant(Tensor::vector(vec![0.0, 1.0, 1.0]));
            let r = tape.mul(r, keep_si)?;
            note(rec, "mcsm.hsi.residual", r);
            out = tape.add(out, r)?;
        }
        note(rec, "mcsm.hsi.stretched", out);
        let rgb = hsi_to_rgb_node(tape, out)?;
        note(rec, "mcsm.hsi.rgb", rgb);
        let (mw, mb) = p.layer("mcsm.hsi.merge3x3");
        parts.push(tape.conv3x3(rgb, mw, mb)?);
    }

    if arch.lab_stretch {
        let lab = rgb_to_lab_node(tape, x)?;
        note(rec, "mcsm.lab.input", lab);
        let s = min_max_stretch(tape, lab)?;
        let (w, b) = p.layer("mcsm.lab.pw");
        let mut out = tape.pointwise_conv(s, w, b)?;
        if arch.residuals {
            let r = rem_forward(tape, lab, p.layer("rem.mcsm_lab.conv3x3"))?;
            note(rec, "mcsm.lab.residual", r);
            out = tape.add(out, r)?;
        }
        note(rec, "mcsm.lab.stretched", out);
        let rgb = lab_to_rgb_node(tape, out)?;
        note(rec, "mcsm.lab.rgb", rgb);
        let (mw, mb) = p.layer("mcsm.lab.merge3x3");
        parts.push(tape.conv3x3(rgb, mw, mb)?);
    }

    if parts.is_empty() {
        return Err(Error::Config("stretch module has no active branch".into()));
    }
    sum_all(tape, &parts)
}

/// Multi-color-space stretch module.
pub fn mcsm_forward(tape: &mut Tape, x: NodeId, p: &GraphParams, arch: &Architecture) -> Result<NodeId> {
    mcsm_inner(tape, x, p, arch, &mut None)
}

fn graph_inner(
    tape: &mut Tape,
    x: NodeId,
    p: &GraphParams,
    arch: &Architecture,
    rec: &mut Recorder<'_>,
) -> Result<NodeId> {
    let (c, _, _) = tape.value(x).shape3()?;
    if c != 3 {
        return Err(Error::shape(format!("network input has {} channels", c)));
    }
    if !arch.has_balance() && !arch.has_stretch() {
        return Err(Error::Config("architecture has no active module".into()));
    }
    let mut y = x;
    if arch.has_balance() {
        y = dsbm_inner(tape, y, p, arch, rec)?;
    }
    if arch.has_stretch() {
        y = mcsm_inner(tape, y, p, arch, rec)?;
    }
    note(rec, "output", y);
    Ok(y)
}

/// Records the full network on `tape`; returns the unclamped output node.
pub fn usln_graph(tape: &mut Tape, x: NodeId, p: &GraphParams, arch: &Architecture) -> Result<NodeId> {
    graph_inner(tape, x, p, arch, &mut None)
}

pub struct Forward {
    /// Raw network output, not clamped.
    pub output: Tensor,
    pub trace: Option<ModuleTrace>,
}

impl Forward {
    /// The output clamped to `[0, 1]`, as written to disk and scored.
    pub fn clamped(&self) -> Tensor {
        self.output.clamp01()
    }
}

/// Inference pass without gradient bookkeeping on the parameters.
pub fn usln_forward(input: &Tensor, weights: &WeightSet, arch: &Architecture, trace: bool) -> Result<Forward> {
    let mut tape = Tape::new();
    let params = GraphParams::register(&mut tape, weights, false);
    let x = tape.constant(input.clone());
    let mut stages = Vec::new();
    let out = {
        let mut rec: Recorder<'_> = trace.then_some(&mut stages);
        graph_inner(&mut tape, x, &params, arch, &mut rec)?
    };
    let trace = trace.then(|| ModuleTrace {
        stages: stages
            .into_iter()
            .map(|(n, id)| (n.to_string(), tape.value(id).clone()))
            .collect(),
    });
    Ok(Forward {
        output: tape.value(out).clone(),
        trace,
    })
}

/// Number of parameters the full network actually reads on a forward pass.
pub fn touched_parameter_count(weights: &WeightSet, input: &Tensor) -> Result<usize> {
    let mut tape = Tape::new();
    let params = GraphParams::register(&mut tape, weights, true);
    let x = tape.constant(input.clone());
    let y = usln_graph(&mut tape, x, &params, &Architecture::default())?;
    let reach = tape.ancestors(y);
    Ok(params
        .nodes()
        .iter()
        .filter(|n| reach[n.index()])
        .map(|&n| tape.value(n).len())
        .sum())
}
