//! Policy over vector observations: a rectified trunk, one head for the
//! instruction type and one head per argument slot of each type.
//!
//! The head for slot `m` of type `t` sees the trunk output concatenated with
//! the encodings of slots `0..m` already chosen, which makes the argument
//! distribution autoregressive.

use npi_core::task::schema_by_name;
use npi_core::vm::{ArgKind, Instruction, InstructionSchema, Observation};
use rand::RngCore;

use crate::checkpoint::{Checkpoint, LayerShape};
use crate::dense::{Layout, Mlp};
use crate::dist::{argmax, bernoulli_term, categorical_term, sample_bernoulli, sample_categorical};
use crate::{Decode, NeuralError, Policy, Term, TermStats};

pub const KIND: &str = "mlp";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub trunk_layers: usize,
    pub width: usize,
    pub head_hidden: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            trunk_layers: 3,
            width: 64,
            head_hidden: 64,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpPolicy {
    schema: &'static InstructionSchema,
    config: MlpConfig,
    input_width: usize,
    trunk: Mlp,
    type_head: Mlp,
    arg_heads: Vec<Vec<Mlp>>,
    params: Vec<f64>,
}

fn head_output(kind: ArgKind) -> usize {
    match kind {
        ArgKind::Bool => 1,
        ArgKind::Int(c) => c,
        ArgKind::Pointer => unreachable!("rejected at construction"),
    }
}

impl MlpPolicy {
    /// Zero-initialized output layers make the initial policy uniform.
    pub fn new(
        schema: &'static InstructionSchema,
        input_width: usize,
        config: MlpConfig,
        rng: &mut dyn RngCore,
    ) -> Result<Self, NeuralError> {
        let mut policy = Self::build(schema, input_width, config)?;
        let mut params = std::mem::take(&mut policy.params);
        policy.trunk.init(&mut params, rng, false);
        policy.type_head.init(&mut params, rng, true);
        for head in policy.arg_heads.iter().flatten() {
            head.init(&mut params, rng, true);
        }
        policy.params = params;
        Ok(policy)
    }

    fn build(
        schema: &'static InstructionSchema,
        input_width: usize,
        config: MlpConfig,
    ) -> Result<Self, NeuralError> {
        if schema.has_pointer_args() {
            return Err(NeuralError::Unsupported(format!(
                "schema {} has pointer arguments; use the graph policy",
                schema.name()
            )));
        }
        let mut layout = Layout::default();
        let mut dims = vec![input_width];
        dims.extend(std::iter::repeat(config.width).take(config.trunk_layers.max(1)));
        let trunk = layout.mlp(&dims, true);
        let w = config.width;
        let type_head = layout.mlp(&[w, config.head_hidden, schema.num_types()], false);
        let mut arg_heads = Vec::new();
        for ty in schema.types() {
            let mut extra = 0;
            let mut heads = Vec::new();
            for &kind in &ty.args {
                heads.push(layout.mlp(&[w + extra, config.head_hidden, head_output(kind)], false));
                extra += kind.encoding_width().expect("non-pointer");
            }
            arg_heads.push(heads);
        }
        Ok(MlpPolicy {
            schema,
            config,
            input_width,
            trunk,
            type_head,
            arg_heads,
            params: vec![0.0; layout.size()],
        })
    }

    pub fn config(&self) -> MlpConfig {
        self.config
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn type_head(&self) -> &Mlp {
        &self.type_head
    }

    pub fn arg_head(&self, type_id: usize, slot: usize) -> &Mlp {
        &self.arg_heads[type_id][slot]
    }

    fn vector<'o>(&self, obs: &'o Observation) -> Result<&'o [f64], NeuralError> {
        match obs.as_vector() {
            Some(v) if v.len() == self.input_width => Ok(v),
            Some(v) => Err(NeuralError::Shape {
                expected: format!("vector of width {}", self.input_width),
                got: format!("vector of width {}", v.len()),
            }),
            None => Err(NeuralError::Shape {
                expected: format!("vector of width {}", self.input_width),
                got: "graph".into(),
            }),
        }
    }

    fn head_input(&self, z: &[f64], type_id: usize, chosen: &[usize]) -> Vec<f64> {
        let mut x = z.to_vec();
        for (&kind, &v) in self.schema.types()[type_id].args.iter().zip(chosen) {
            match kind {
                ArgKind::Bool => x.push(v as f64),
                ArgKind::Int(c) => x.extend((0..c).map(|k| if k == v { 1.0 } else { 0.0 })),
                ArgKind::Pointer => unreachable!("rejected at construction"),
            }
        }
        x
    }

    fn trunk_output(&self, obs: &Observation) -> Result<Vec<f64>, NeuralError> {
        let x = self.vector(obs)?;
        Ok(self.trunk.forward(&self.params, x.to_vec(), 1).output().to_vec())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, NeuralError> {
        if ck.kind != KIND {
            return Err(NeuralError::Checkpoint(format!("expected kind {KIND}, found {}", ck.kind)));
        }
        let schema = schema_by_name(&ck.schema)
            .ok_or_else(|| NeuralError::Checkpoint(format!("unknown schema {}", ck.schema)))?;
        let config = MlpConfig {
            trunk_layers: ck.meta_usize("trunk_layers")?,
            width: ck.meta_usize("width")?,
            head_hidden: ck.meta_usize("head_hidden")?,
        };
        let mut policy = Self::build(schema, ck.meta_usize("input_width")?, config)?;
        if policy.layer_shapes() != ck.layers {
            return Err(NeuralError::Checkpoint("layer shapes do not match the configuration".into()));
        }
        policy.params.copy_from_slice(&ck.params);
        Ok(policy)
    }

    fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut out = Vec::new();
        let mut add = |prefix: String, m: &Mlp| {
            for (k, d) in m.layers.iter().enumerate() {
                out.push(LayerShape {
                    name: format!("{prefix}.{k}"),
                    input: d.input,
                    output: d.output,
                });
            }
        };
        add("trunk".into(), &self.trunk);
        add("type".into(), &self.type_head);
        for (t, heads) in self.arg_heads.iter().enumerate() {
            for (m, h) in heads.iter().enumerate() {
                add(format!("arg{t}.{m}"), h);
            }
        }
        out
    }
}

impl Policy for MlpPolicy {
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
        self.schema.validate(action)?;
        let z = self.trunk_output(obs)?;
        let p = &self.params;
        let type_logits = self.type_head.forward(p, z.clone(), 1).acts.pop().unwrap_or_default();
        let mut scratch = vec![0.0; type_logits.len()];
        let mut lp = categorical_term(&type_logits, action.type_id, 0.0, 0.0, &mut scratch).0;
        for (m, &kind) in self.schema.types()[action.type_id].args.iter().enumerate() {
            let input = self.head_input(&z, action.type_id, &action.args[..m]);
            let out = self.arg_heads[action.type_id][m].forward(p, input, 1);
            lp += match kind {
                ArgKind::Bool => bernoulli_term(out.output()[0], action.args[m] == 1, 0.0, 0.0).0,
                _ => {
                    let mut scratch = vec![0.0; out.output().len()];
                    categorical_term(out.output(), action.args[m], 0.0, 0.0, &mut scratch).0
                }
            };
        }
        Ok(lp)
    }

    fn act(
        &self,
        obs: &Observation,
        decode: Decode,
        rng: &mut dyn RngCore,
    ) -> Result<Instruction, NeuralError> {
        let z = self.trunk_output(obs)?;
        let p = &self.params;
        let type_logits = self.type_head.forward(p, z.clone(), 1).acts.pop().unwrap_or_default();
        let t = match decode {
            Decode::Greedy => argmax(&type_logits),
            Decode::Sample => sample_categorical(&type_logits, rng),
        };
        let mut args = Vec::new();
        for (m, &kind) in self.schema.types()[t].args.iter().enumerate() {
            let input = self.head_input(&z, t, &args);
            let out = self.arg_heads[t][m].forward(p, input, 1);
            let logits = out.output();
            args.push(match (kind, decode) {
                (ArgKind::Bool, Decode::Greedy) => usize::from(logits[0] > 0.0),
                (ArgKind::Bool, Decode::Sample) => usize::from(sample_bernoulli(logits[0], rng)),
                (_, Decode::Greedy) => argmax(logits),
                (_, Decode::Sample) => sample_categorical(logits, rng),
            });
        }
        Ok(Instruction::new(t, args))
    }

    fn accumulate(
        &self,
        obs: &Observation,
        terms: &[Term<'_>],
        grads: &mut [f64],
    ) -> Result<Vec<TermStats>, NeuralError> {
        let x = self.vector(obs)?;
        let p = &self.params;
        let trunk = self.trunk.forward(p, x.to_vec(), 1);
        let z = trunk.output().to_vec();
        let type_cache = self.type_head.forward(p, z.clone(), 1);
        let type_logits = type_cache.output();
        let mut d_type = vec![0.0; type_logits.len()];
        let mut dz = vec![0.0; z.len()];
        let mut stats = Vec::with_capacity(terms.len());
        for term in terms {
            let ins = term.action;
            self.schema.validate(ins)?;
            let (a, b) = (term.log_prob_weight, term.entropy_weight);
            let (mut lp, mut h) = categorical_term(type_logits, ins.type_id, a, b, &mut d_type);
            for (m, &kind) in self.schema.types()[ins.type_id].args.iter().enumerate() {
                let head = &self.arg_heads[ins.type_id][m];
                let cache = head.forward(p, self.head_input(&z, ins.type_id, &ins.args[..m]), 1);
                let mut dl = vec![0.0; cache.output().len()];
                let (l, e) = match kind {
                    ArgKind::Bool => {
                        let (l, e, d) = bernoulli_term(cache.output()[0], ins.args[m] == 1, a, b);
                        dl[0] = d;
                        (l, e)
                    }
                    _ => categorical_term(cache.output(), ins.args[m], a, b, &mut dl),
                };
                lp += l;
                h += e;
                let din = head.backward(p, grads, &cache, dl);
                for (d, g) in dz.iter_mut().zip(&din) {
                    *d += g;
                }
            }
            stats.push(TermStats {
                log_prob: lp,
                entropy: h,
            });
        }
        let din = self.type_head.backward(p, grads, &type_cache, d_type);
        for (d, g) in dz.iter_mut().zip(&din) {
            *d += g;
        }
        self.trunk.backward(p, grads, &trunk, dz);
        Ok(stats)
    }

    fn to_checkpoint(&self) -> Checkpoint {
        let meta = [
            ("input_width", self.input_width),
            ("trunk_layers", self.config.trunk_layers),
            ("width", self.config.width),
            ("head_hidden", self.config.head_hidden),
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
    use npi_core::sort::bubble_insertion_schema;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_at_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = bubble_insertion_schema();
        let pol = MlpPolicy::new(s, 68, MlpConfig::default(), &mut rng).unwrap();
        let obs = Observation::Vector(vec![0.5; 68]);
        for ins in s.enumerate().unwrap() {
            let expected: f64 = -(s.num_types() as f64).ln()
                - s.types()[ins.type_id]
                    .args
                    .iter()
                    .map(|k| (k.cardinality().unwrap() as f64).ln())
                    .sum::<f64>();
            assert!((pol.log_prob(&obs, &ins).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_width_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pol = MlpPolicy::new(bubble_insertion_schema(), 68, MlpConfig::default(), &mut rng).unwrap();
        assert!(pol.act(&Observation::Vector(vec![0.0; 3]), Decode::Greedy, &mut rng).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = MlpConfig {
            trunk_layers: 2,
            width: 8,
            head_hidden: 5,
        };
        let mut pol = MlpPolicy::new(bubble_insertion_schema(), 68, cfg, &mut rng).unwrap();
        pol.params_mut()[7] = 0.1 + 0.2;
        let back = MlpPolicy::from_checkpoint(&pol.to_checkpoint()).unwrap();
        assert_eq!(back.params(), pol.params());
        assert_eq!(back.config(), cfg);
    }
}
