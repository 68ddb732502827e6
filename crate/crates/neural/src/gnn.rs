//! Message-passing policy for graph observations with pointer outputs.
//!
//! Node states start from an embedding of the node features plus one
//! selection bit. Each round, every edge `s -> d` produces a message from
//! `[h_d, h_s, x_sd]`; each node updates from its own state and the mean of
//! its incoming messages. A shared scalar head scores every node and a
//! softmax over nodes gives the first index. The second index reruns the
//! whole network with the selection bit set on the first choice.

use npi_core::task::schema_by_name;
use npi_core::vm::{GraphObservation, Instruction, InstructionSchema, Observation};
use rand::RngCore;

use crate::checkpoint::{Checkpoint, LayerShape};
use crate::dense::{axpy, dot, Layout, Mlp, MlpCache};
use crate::dist::{argmax, categorical_term, sample_categorical};
use crate::{Decode, NeuralError, Policy, Term, TermStats};

pub const KIND: &str = "gnn";
const EDGE_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GnnConfig {
    pub rounds: usize,
    pub state: usize,
    pub embed_hidden: usize,
    pub edge_hidden: usize,
    pub message: usize,
    pub node_hidden: usize,
    pub pointer_hidden: usize,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            rounds: 5,
            state: 16,
            embed_hidden: 32,
            edge_hidden: 32,
            message: 32,
            node_hidden: 32,
            pointer_hidden: 16,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GnnPolicy {
    schema: &'static InstructionSchema,
    config: GnnConfig,
    node_dim: usize,
    embed: Mlp,
    edge: Vec<Mlp>,
    node: Vec<Mlp>,
    pointer: Mlp,
    params: Vec<f64>,
}

struct Round {
    edge: EdgeCache,
    node: MlpCache,
}

/// Edge network activations of one round. The message layer is linear, so
/// the mean of messages equals the message layer applied to the mean
/// hidden activation; only hidden activations are kept per edge.
struct EdgeCache {
    /// Node states entering the round, `n x state`.
    h: Vec<f64>,
    /// Rectified hidden activations, `edges x edge_hidden`.
    hidden: Vec<f64>,
    /// Mean hidden activation over incoming edges, `n x edge_hidden`.
    mean: Vec<f64>,
}

/// Everything one forward pass needs for its backward pass.
struct Pass {
    embed: MlpCache,
    rounds: Vec<Round>,
    pointer: MlpCache,
}

impl Pass {
    fn logits(&self) -> &[f64] {
        self.pointer.output()
    }
}

impl GnnPolicy {
    /// `node_dim` excludes the selection bit.
    pub fn new(
        schema: &'static InstructionSchema,
        node_dim: usize,
        config: GnnConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self, NeuralError> {
        let mut policy = Self::build(schema, node_dim, config)?;
        let mut params = std::mem::take(&mut policy.params);
        policy.embed.init(&mut params, rng, false);
        for m in policy.edge.iter().chain(&policy.node) {
            m.init(&mut params, rng, false);
        }
        policy.pointer.init(&mut params, rng, true);
        policy.params = params;
        Ok(policy)
    }

    fn build(
        schema: &'static InstructionSchema,
        node_dim: usize,
        c: GnnConfig,
    ) -> Result<Self, NeuralError> {
        let shape_ok = schema.num_types() == 1
            && schema.types()[0].args == [npi_core::vm::ArgKind::Pointer; 2];
        if !shape_ok {
            return Err(NeuralError::Unsupported(format!(
                "graph policy needs a single two-pointer instruction, schema {} differs",
                schema.name()
            )));
        }
        let mut layout = Layout::default();
        let s = c.state;
        let embed = layout.mlp(&[node_dim + 1, c.embed_hidden, s], false);
        let mut edge = Vec::new();
        let mut node = Vec::new();
        for _ in 0..c.rounds {
            edge.push(layout.mlp(&[2 * s + EDGE_DIM, c.edge_hidden, c.message], false));
            node.push(layout.mlp(&[s + c.message, c.node_hidden, s], false));
        }
        let pointer = layout.mlp(&[s, c.pointer_hidden, 1], false);
        Ok(GnnPolicy {
            schema,
            config: c,
            node_dim,
            embed,
            edge,
            node,
            pointer,
            params: vec![0.0; layout.size()],
        })
    }

    pub fn config(&self) -> GnnConfig {
        self.config
    }

    fn graph<'o>(&self, obs: &'o Observation) -> Result<&'o GraphObservation, NeuralError> {
        match obs.as_graph() {
            Some(g) if g.node_dim == self.node_dim && g.num_nodes > 0 => Ok(g),
            Some(g) => Err(NeuralError::Shape {
                expected: format!("graph with node width {}", self.node_dim),
                got: format!("graph with {} nodes of width {}", g.num_nodes, g.node_dim),
            }),
            None => Err(NeuralError::Shape {
                expected: "graph".into(),
                got: "vector".into(),
            }),
        }
    }

    fn forward(&self, g: &GraphObservation, selected: Option<usize>, keep: bool) -> Pass {
        let p = &self.params;
        let (n, s) = (g.num_nodes, self.config.state);
        let mut x = Vec::with_capacity(n * (self.node_dim + 1));
        for v in 0..n {
            x.extend_from_slice(&g.node_features[v * self.node_dim..(v + 1) * self.node_dim]);
            x.push(if selected == Some(v) { 1.0 } else { 0.0 });
        }
        let embed = self.embed.forward(p, x, n);
        let mut h = embed.output().to_vec();
        let indeg = in_degrees(g);
        let m = self.config.message;
        let mut rounds = Vec::with_capacity(self.config.rounds);
        for (edge_mlp, node_mlp) in self.edge.iter().zip(&self.node) {
            let (edge, msg) = self.edge_forward(edge_mlp, g, h, &indeg, keep);
            let mut nin = Vec::with_capacity(n * (s + m));
            for v in 0..n {
                nin.extend_from_slice(&edge.h[v * s..(v + 1) * s]);
                nin.extend_from_slice(&msg[v * m..(v + 1) * m]);
            }
            let node = node_mlp.forward(p, nin, n);
            h = node.output().to_vec();
            rounds.push(Round { edge, node });
        }
        let pointer = self.pointer.forward(p, h, n);
        Pass {
            embed,
            rounds,
            pointer,
        }
    }

    fn backward(&self, g: &GraphObservation, pass: &Pass, dlogits: Vec<f64>, grads: &mut [f64]) {
        let p = &self.params;
        let (n, s, m) = (g.num_nodes, self.config.state, self.config.message);
        let indeg = in_degrees(g);
        let mut dh = self.pointer.backward(p, grads, &pass.pointer, dlogits);
        for (t, round) in pass.rounds.iter().enumerate().rev() {
            let dnin = self.node[t].backward(p, grads, &round.node, dh);
            let mut dprev = vec![0.0; n * s];
            let mut dmsg = vec![0.0; n * m];
            for v in 0..n {
                dprev[v * s..(v + 1) * s].copy_from_slice(&dnin[v * (s + m)..v * (s + m) + s]);
                dmsg[v * m..(v + 1) * m].copy_from_slice(&dnin[v * (s + m) + s..(v + 1) * (s + m)]);
            }
            self.edge_backward(&self.edge[t], g, &round.edge, &indeg, &dmsg, grads, &mut dprev);
            dh = dprev;
        }
        self.embed.backward(p, grads, &pass.embed, dh);
    }

    /// Mean incoming message per node, zero for nodes without in-edges.
    /// Per-edge activations are kept only when `keep` is set.
    fn edge_forward(
        &self,
        mlp: &Mlp,
        g: &GraphObservation,
        h: Vec<f64>,
        indeg: &[usize],
        keep: bool,
    ) -> (EdgeCache, Vec<f64>) {
        let p = &self.params;
        let (n, s) = (g.num_nodes, self.config.state);
        let (l1, l2) = (&mlp.layers[0], &mlp.layers[1]);
        let (hid, m, width) = (l1.output, l2.output, l1.input);
        let w1 = &p[l1.weight_range()];
        let b1 = &p[l1.bias_range()];
        // Per-node projections of the destination and source halves.
        let mut pd = vec![0.0; n * hid];
        let mut ps = vec![0.0; n * hid];
        for v in 0..n {
            let hv = &h[v * s..(v + 1) * s];
            for o in 0..hid {
                let row = &w1[o * width..(o + 1) * width];
                pd[v * hid + o] = dot(&row[..s], hv);
                ps[v * hid + o] = dot(&row[s..2 * s], hv);
            }
        }
        for v in 0..n {
            for (a, b) in pd[v * hid..(v + 1) * hid].iter_mut().zip(b1) {
                *a += b;
            }
        }
        let wx0: Vec<f64> = (0..hid).map(|o| w1[o * width + 2 * s]).collect();
        let wx1: Vec<f64> = (0..hid).map(|o| w1[o * width + 2 * s + 1]).collect();
        let mut hidden = if keep { vec![0.0; g.edges.len() * hid] } else { Vec::new() };
        let mut scratch = vec![0.0; hid];
        let mut mean = vec![0.0; n * hid];
        for (e, (&(src, dst), x)) in g.edges.iter().zip(&g.edge_features).enumerate() {
            let w = 1.0 / indeg[dst] as f64;
            let (x0, x1) = (x[0], x[1]);
            let out = if keep { &mut hidden[e * hid..(e + 1) * hid] } else { &mut scratch[..] };
            let pdd = &pd[dst * hid..(dst + 1) * hid];
            let pss = &ps[src * hid..(src + 1) * hid];
            let acc = &mut mean[dst * hid..(dst + 1) * hid];
            for (((((o, a), b), c0), c1), m) in out.iter_mut().zip(pdd).zip(pss).zip(&wx0).zip(&wx1).zip(acc) {
                *o = (a + b + c0 * x0 + c1 * x1).max(0.0);
                *m += w * *o;
            }
        }
        let w2 = &p[l2.weight_range()];
        let b2 = &p[l2.bias_range()];
        let mut msg = vec![0.0; n * m];
        for v in (0..n).filter(|&v| indeg[v] > 0) {
            let a = &mean[v * hid..(v + 1) * hid];
            for o in 0..m {
                msg[v * m + o] = b2[o] + dot(&w2[o * hid..(o + 1) * hid], a);
            }
        }
        (EdgeCache { h, hidden, mean }, msg)
    }

    /// Accumulates edge-network gradients and adds the state gradient into `dh`.
    #[allow(clippy::too_many_arguments)]
    fn edge_backward(
        &self,
        mlp: &Mlp,
        g: &GraphObservation,
        cache: &EdgeCache,
        indeg: &[usize],
        dmsg: &[f64],
        grads: &mut [f64],
        dh: &mut [f64],
    ) {
        let p = &self.params;
        let (n, s) = (g.num_nodes, self.config.state);
        let (l1, l2) = (&mlp.layers[0], &mlp.layers[1]);
        let (hid, m, width) = (l1.output, l2.output, l1.input);
        let w2 = &p[l2.weight_range()];
        let mut dmean = vec![0.0; n * hid];
        {
            let (gw, gb) = grads[l2.offset..l2.offset + l2.param_count()].split_at_mut(m * hid);
            for v in (0..n).filter(|&v| indeg[v] > 0) {
                let a = &cache.mean[v * hid..(v + 1) * hid];
                let da = &mut dmean[v * hid..(v + 1) * hid];
                for o in 0..m {
                    let d = dmsg[v * m + o];
                    if d != 0.0 {
                        gb[o] += d;
                        axpy(d, a, &mut gw[o * hid..(o + 1) * hid]);
                        axpy(d, &w2[o * hid..(o + 1) * hid], da);
                    }
                }
            }
        }
        let mut dpd = vec![0.0; n * hid];
        let mut dps = vec![0.0; n * hid];
        let mut dwx = vec![0.0; hid * EDGE_DIM];
        let mut db1 = vec![0.0; hid];
        for (e, (&(src, dst), x)) in g.edges.iter().zip(&g.edge_features).enumerate() {
            let w = 1.0 / indeg[dst] as f64;
            let act = &cache.hidden[e * hid..(e + 1) * hid];
            for o in 0..hid {
                if act[o] > 0.0 {
                    let dz = w * dmean[dst * hid + o];
                    dpd[dst * hid + o] += dz;
                    dps[src * hid + o] += dz;
                    dwx[o * EDGE_DIM] += dz * x[0];
                    dwx[o * EDGE_DIM + 1] += dz * x[1];
                    db1[o] += dz;
                }
            }
        }
        let w1 = &p[l1.weight_range()];
        let (gw, gb) = grads[l1.offset..l1.offset + l1.param_count()].split_at_mut(hid * width);
        for o in 0..hid {
            gb[o] += db1[o];
            let grow = &mut gw[o * width..(o + 1) * width];
            grow[2 * s] += dwx[o * EDGE_DIM];
            grow[2 * s + 1] += dwx[o * EDGE_DIM + 1];
            let row = &w1[o * width..(o + 1) * width];
            for v in 0..n {
                let hv = &cache.h[v * s..(v + 1) * s];
                let (a, b) = (dpd[v * hid + o], dps[v * hid + o]);
                let dhv = &mut dh[v * s..(v + 1) * s];
                if a != 0.0 {
                    axpy(a, hv, &mut grow[..s]);
                    axpy(a, &row[..s], dhv);
                }
                if b != 0.0 {
                    axpy(b, hv, &mut grow[s..2 * s]);
                    axpy(b, &row[s..2 * s], dhv);
                }
            }
        }
    }

    /// Pointer logits for the first index, or the second given `selected`.
    pub fn pointer_logits(
        &self,
        obs: &Observation,
        selected: Option<usize>,
    ) -> Result<Vec<f64>, NeuralError> {
        let g = self.graph(obs)?;
        Ok(self.forward(g, selected, false).logits().to_vec())
    }

    fn check_pointers(&self, g: &GraphObservation, ins: &Instruction) -> Result<(), NeuralError> {
        self.schema.validate(ins)?;
        if ins.args.iter().any(|&a| a >= g.num_nodes) {
            return Err(NeuralError::Shape {
                expected: format!("pointers below {}", g.num_nodes),
                got: format!("{:?}", ins.args),
            });
        }
        Ok(())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NeuralError> {
        if ck.kind != KIND {
            return Err(NeuralError::Checkpoint(format!("expected kind {KIND}, found {}", ck.kind)));
        }
        let schema = schema_by_name(&ck.schema)
            .ok_or_else(|| NeuralError::Checkpoint(format!("unknown schema {}", ck.schema)))?;
        let config = GnnConfig {
            rounds: ck.meta_usize("rounds")?,
            state: ck.meta_usize("state")?,
            embed_hidden: ck.meta_usize("embed_hidden")?,
            edge_hidden: ck.meta_usize("edge_hidden")?,
            message: ck.meta_usize("message")?,
            node_hidden: ck.meta_usize("node_hidden")?,
            pointer_hidden: ck.meta_usize("pointer_hidden")?,
        };
        let mut policy = Self::build(schema, ck.meta_usize("node_dim")?, config)?;
        if policy.layer_shapes() != ck.layers {
            return Err(NeuralError::Checkpoint("layer shapes do not match the configuration".into()));
        }
        policy.params.copy_from_slice(&ck.params);
        Ok(policy)
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut named: Vec<(String, &Mlp)> = vec![("embed".into(), &self.embed)];
        for t in 0..self.config.rounds {
            named.push((format!("edge{t}"), &self.edge[t]));
            named.push((format!("node{t}"), &self.node[t]));
        }
        named.push(("pointer".into(), &self.pointer));
        let mut out = Vec::new();
        for (prefix, m) in named {
            for (k, d) in m.layers.iter().enumerate() {
                out.push(LayerShape {
                    name: format!("{prefix}.{k}"),
                    input: d.input,
                    output: d.output,
                });
            }
        }
        out
    }
}

fn in_degrees(g: &GraphObservation) -> Vec<usize> {
    let mut d = vec![0usize; g.num_nodes];
    for &(_, dst) in &g.edges {
        d[dst] += 1;
    }
    d
}

fn choose(logits: &[f64], decode: Decode, rng: &mut dyn RngCore) -> usize {
    match decode {
        Decode::Greedy => argmax(logits),
        Decode::Sample => sample_categorical(logits, rng),
    }
}

impl Policy for GnnPolicy {
    fn schema(&self) -> &'static InstructionSchema {
        self.schema
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn log_prob(&self, obs: &Observation, action: &Instruction) -> Result<f64, NeuralError> {
        let g = self.graph(obs)?;
        self.check_pointers(g, action)?;
        let (i, j) = (action.args[0], action.args[1]);
        let mut scratch = vec![0.0; g.num_nodes];
        let first = categorical_term(self.forward(g, None, false).logits(), i, 0.0, 0.0, &mut scratch).0;
        let second = categorical_term(self.forward(g, Some(i), false).logits(), j, 0.0, 0.0, &mut scratch).0;
        Ok(first + second)
    }

    fn act(
        &self,
        obs: &Observation,
        decode: Decode,
        rng: &mut dyn RngCore,
    ) -> Result<Instruction, NeuralError> {
        let g = self.graph(obs)?;
        let i = choose(self.forward(g, None, false).logits(), decode, rng);
        let j = choose(self.forward(g, Some(i), false).logits(), decode, rng);
        Ok(Instruction::new(0, vec![i, j]))
    }

    fn accumulate(
        &self,
        obs: &Observation,
        terms: &[Term<'_>],
        grads: &mut [f64],
    ) -> Result<Vec<TermStats>, NeuralError> {
        let g = self.graph(obs)?;
        let n = g.num_nodes;
        let first = self.forward(g, None, true);
        let mut d_first = vec![0.0; n];
        let mut stats = Vec::with_capacity(terms.len());
        for term in terms {
            self.check_pointers(g, term.action)?;
            let (a, b) = (term.log_prob_weight, term.entropy_weight);
            let (i, j) = (term.action.args[0], term.action.args[1]);
            let (lp1, h1) = categorical_term(first.logits(), i, a, b, &mut d_first);
            let second = self.forward(g, Some(i), true);
            let mut d_second = vec![0.0; n];
            let (lp2, h2) = categorical_term(second.logits(), j, a, b, &mut d_second);
            self.backward(g, &second, d_second, grads);
            stats.push(TermStats {
                log_prob: lp1 + lp2,
                entropy: h1 + h2,
            });
        }
        self.backward(g, &first, d_first, grads);
        Ok(stats)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let c = self.config;
        let meta = [
            ("node_dim", self.node_dim),
            ("rounds", c.rounds),
            ("state", c.state),
            ("embed_hidden", c.embed_hidden),
            ("edge_hidden", c.edge_hidden),
            ("message", c.message),
            ("node_hidden", c.node_hidden),
            ("pointer_hidden", c.pointer_hidden),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        Checkpoint {
            kind: KIND.into(),
            schema: self.schema.name().into(),
            meta,
            layers: self.layer_shapes(),
            params: self.params.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use npi_core::sort::full_view_schema;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_graph(n: usize) -> Observation {
        let mut edges = vec![];
        let mut edge_features = vec![];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    edges.push((i, j));
                    edge_features.push([0.0, 0.0]);
                }
            }
        }
        Observation::Graph(GraphObservation {
            num_nodes: n,
            node_features: vec![1.0; n],
            node_dim: 1,
            edges,
            edge_features,
        })
    }

    #[test]
    fn symmetric_graph_gives_uniform_pointers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut pol = GnnPolicy::new(full_view_schema(), 1, GnnConfig::default(), &mut rng).unwrap();
        let obs = toy_graph(5);
        let lp = pol.log_prob(&obs, &Instruction::new(0, vec![1, 3])).unwrap();
        assert!((lp + 2.0 * 5f64.ln()).abs() < 1e-12);
        // nonzero head: all first-pass logits still coincide
        let range = pol.pointer.layers[1].weight_range();
        for k in range {
            pol.params[k] = 0.3;
        }
        let logits = pol.pointer_logits(&obs, None).unwrap();
        assert!(logits.iter().all(|&l| (l - logits[0]).abs() < 1e-12));
    }

    #[test]
    fn rejects_vector_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pol = GnnPolicy::new(full_view_schema(), 1, GnnConfig::default(), &mut rng).unwrap();
        assert!(pol.act(&Observation::Vector(vec![0.0]), Decode::Greedy, &mut rng).is_err());
    }
}
