//! Bit-exact parameter checkpoints.
//!
//! Text format, one file per parameter set: a version line, optional comment
//! annotations, then for each DBS a policy and a value network, each with its
//! layer shapes and parameter values as hexadecimal IEEE-754 bit patterns.
//! Round-tripping reproduces every f64 exactly.

use crate::approx::{Activation, LayerSpec, NetShape, ParamVector};
use crate::error::{Error, Result};
use crate::vdrl::ParamSet;

pub const CHECKPOINT_VERSION: &str = "dronecov-checkpoint v1";

/// Serialize a parameter set; `annotations` become leading comment lines.
pub fn write_param_set(set: &ParamSet, annotations: &[String]) -> String {
    let mut out = format!("# {CHECKPOINT_VERSION}\n");
    for a in annotations {
        out.push_str(&format!("# {a}\n"));
    }
    out.push_str(&format!("dbs {}\n", set.num_dbs()));
    for n in 0..set.num_dbs() {
        write_net(&mut out, "policy", n, &set.policy[n]);
        write_net(&mut out, "value", n, &set.value[n]);
    }
    out
}

fn write_net(out: &mut String, role: &str, index: usize, params: &ParamVector) {
    out.push_str(&format!("net {role} {index}\n"));
    for layer in &params.shape().layers {
        out.push_str(&format!(
            "layer {} {} {}\n",
            layer.inputs, layer.outputs, layer.activation
        ));
    }
    out.push_str(&format!("values {}\n", params.len()));
    for chunk in params.values().chunks(8) {
        let words: Vec<String> = chunk
            .iter()
            .map(|v| format!("{:016x}", v.to_bits()))
            .collect();
        out.push_str(&words.join(" "));
        out.push('\n');
    }
}

/// Parse a checkpoint produced by [`write_param_set`].
pub fn parse_param_set(text: &str) -> Result<ParamSet> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .peekable();

    let header = lines
        .next()
        .ok_or_else(|| Error::contract("empty checkpoint"))?;
    let dbs: usize = header
        .strip_prefix("dbs ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::contract(format!("expected 'dbs <n>', got {header:?}")))?;

    let mut policy = Vec::with_capacity(dbs);
    let mut value = Vec::with_capacity(dbs);
    for n in 0..dbs {
        for role in ["policy", "value"] {
            let head = lines
                .next()
                .ok_or_else(|| Error::contract(format!("missing net {role} {n}")))?;
            if head != format!("net {role} {n}") {
                return Err(Error::contract(format!(
                    "expected 'net {role} {n}', got {head:?}"
                )));
            }
            let mut layers = Vec::new();
            while let Some(l) = lines.peek() {
                if !l.starts_with("layer ") {
                    break;
                }
                let parts: Vec<&str> = lines.next().unwrap().split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(Error::contract("malformed layer line"));
                }
                let activation = match parts[3] {
                    "tanh" => Activation::Tanh,
                    "linear" => Activation::Linear,
                    other => return Err(Error::contract(format!("unknown activation {other:?}"))),
                };
                layers.push(LayerSpec {
                    inputs: parts[1]
                        .parse()
                        .map_err(|_| Error::contract("bad layer inputs"))?,
                    outputs: parts[2]
                        .parse()
                        .map_err(|_| Error::contract("bad layer outputs"))?,
                    activation,
                });
            }
            let shape = NetShape::new(layers)?;
            let count_line = lines
                .next()
                .ok_or_else(|| Error::contract("missing values line"))?;
            let count: usize = count_line
                .strip_prefix("values ")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    Error::contract(format!("expected 'values <n>', got {count_line:?}"))
                })?;
            if count != shape.param_count() {
                return Err(Error::contract(format!(
                    "value count {count} does not match shape ({})",
                    shape.param_count()
                )));
            }
            let mut values = Vec::with_capacity(count);
            while values.len() < count {
                let line = lines
                    .next()
                    .ok_or_else(|| Error::contract("checkpoint truncated inside values"))?;
                for word in line.split_whitespace() {
                    let bits = u64::from_str_radix(word, 16)
                        .map_err(|_| Error::contract(format!("bad hex word {word:?}")))?;
                    values.push(f64::from_bits(bits));
                }
            }
            if values.len() != count {
                return Err(Error::contract("too many values in checkpoint"));
            }
            let net = ParamVector::new(shape, values)?;
            if role == "policy" {
                policy.push(net);
            } else {
                value.push(net);
            }
        }
    }
    Ok(ParamSet { policy, value })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::NetArch;
    use proptest::prelude::*;

    fn arbitrary_set(seed: u64, hidden: Vec<usize>) -> ParamSet {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let arch = NetArch { hidden };
        ParamSet {
            policy: vec![ParamVector::init_uniform(arch.policy_shape(4), &mut rng)],
            value: vec![ParamVector::init_uniform(arch.value_shape(4), &mut rng)],
        }
    }

    #[test]
    fn annotations_are_preserved_as_comments() {
        let set = arbitrary_set(1, vec![3]);
        let text = write_param_set(&set, &["spec_hash: 123".into()]);
        assert!(text.contains("# spec_hash: 123"));
        assert_eq!(parse_param_set(&text).unwrap(), set);
    }

    #[test]
    fn truncated_checkpoints_are_rejected() {
        let set = arbitrary_set(2, vec![2]);
        let text = write_param_set(&set, &[]);
        let cut = &text[..text.len() / 2];
        assert!(parse_param_set(cut).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..10_000, hidden in 1usize..6) {
            let set = arbitrary_set(seed, vec![hidden]);
            let text = write_param_set(&set, &[]);
            let parsed = parse_param_set(&text).unwrap();
            prop_assert_eq!(parsed, set);
        }
    }
}
