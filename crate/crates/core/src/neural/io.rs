//! Versioned text format for [`Mlp`].
//!
//! ```text
//! safenav-mlp 1
//! role barrier
//! tag static
//! sizes 5 32 32 1
//! hidden relu
//! output identity
//! shift <in floats>
//! scale <in floats>
//! weights 0 <in*out floats, row-major (inputs, outputs)>
//! bias 0 <out floats>
//! ...
//! end
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so save/load is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::mlp::{Mlp, ModelRole, OutputActivation};
use crate::error::{Error, Result};

const MAGIC: &str = "safenav-mlp";
const VERSION: u32 = 1;

fn join<'a>(values: impl Iterator<Item = &'a f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

impl Mlp {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sizes: Vec<String> = self.sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "{MAGIC} {VERSION}").unwrap();
        writeln!(out, "role {}", self.role).unwrap();
        writeln!(out, "tag {}", self.tag).unwrap();
        writeln!(out, "sizes {}", sizes.join(" ")).unwrap();
        writeln!(out, "hidden relu").unwrap();
        writeln!(out, "output {}", self.output.as_str()).unwrap();
        writeln!(out, "shift {}", join(self.input_shift.iter())).unwrap();
        writeln!(out, "scale {}", join(self.input_scale.iter())).unwrap();
        for (i, layer) in self.layers.iter().enumerate() {
            writeln!(out, "weights {i} {}", join(layer.weights.iter())).unwrap();
            writeln!(out, "bias {i} {}", join(layer.bias.iter())).unwrap();
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |key: &str| -> Result<(usize, Vec<String>)> {
            let (n, line) = lines.next().ok_or_else(|| parse_err(0, format!("missing `{key}`")))?;
            let mut fields = line.split(' ');
            match fields.next() {
                Some(k) if k == key => Ok((n, fields.map(str::to_string).collect())),
                other => Err(parse_err(n, format!("expected `{key}`, found {other:?}"))),
            }
        };

        let (n, header) = next(MAGIC)?;
        if header != [VERSION.to_string()] {
            return Err(parse_err(n, format!("unsupported version {header:?}")));
        }
        let (n, role) = next("role")?;
        let role: ModelRole = role.join(" ").parse().map_err(|e: Error| parse_err(n, e.to_string()))?;
        let (_, tag) = next("tag")?;
        let (n, sizes) = next("sizes")?;
        let sizes: Vec<usize> = sizes
            .iter()
            .map(|s| s.parse().map_err(|_| parse_err(n, format!("bad size `{s}`"))))
            .collect::<Result<_>>()?;
        let (n, hidden) = next("hidden")?;
        if hidden != ["relu"] {
            return Err(parse_err(n, format!("unsupported hidden activation {hidden:?}")));
        }
        let (n, output) = next("output")?;
        let output: OutputActivation = output
            .join(" ")
            .parse()
            .map_err(|e: Error| parse_err(n, e.to_string()))?;

        let mut model = Mlp::zeros(role, &sizes, output).map_err(|e| parse_err(n, e.to_string()))?;
        model.tag = tag.join(" ");
        let d = sizes[0];
        let (n, shift) = next("shift")?;
        model.input_shift = Array1::from(floats(n, &shift, d)?);
        let (n, scale) = next("scale")?;
        model.input_scale = Array1::from(floats(n, &scale, d)?);
        for (i, w) in sizes.windows(2).enumerate() {
            let (n, fields) = next("weights")?;
            let values = indexed(n, &fields, i, w[0] * w[1])?;
            model.layers[i].weights = Array2::from_shape_vec((w[0], w[1]), values)
                .map_err(|e| parse_err(n, e.to_string()))?;
            let (n, fields) = next("bias")?;
            model.layers[i].bias = Array1::from(indexed(n, &fields, i, w[1])?);
        }
        next("end")?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_err(line: usize, message: String) -> Error {
    Error::Parse {
        what: "model file",
        line,
        message,
    }
}

fn floats(line: usize, fields: &[String], expected: usize) -> Result<Vec<f64>> {
    if fields.len() != expected {
        return Err(parse_err(
            line,
            format!("expected {expected} values, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|s| s.parse().map_err(|_| parse_err(line, format!("bad float `{s}`"))))
        .collect()
}

fn indexed(line: usize, fields: &[String], layer: usize, expected: usize) -> Result<Vec<f64>> {
    match fields.split_first() {
        Some((idx, rest)) if idx.parse() == Ok(layer) => floats(line, rest, expected),
        _ => Err(parse_err(line, format!("expected layer index {layer}"))),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in 0u64..1000, scale in -1e6f64..1e6, hidden in 1usize..9) {
            let mut m = Mlp::new(ModelRole::Dynamics, &[7, hidden, 4], OutputActivation::Tanh, seed)
                .unwrap()
                .with_tag("freight");
            m.scale_output_layer(scale);
            m.set_input_normalization(&[0.1, -3.0, 1e-300, 0.0, 5.5, 1.0, -0.0], &[1.0, 2.0, 3.0, 0.5, 1e-5, 7.0, 0.1]).unwrap();
            let back = Mlp::from_text(&m.to_text()).unwrap();
            prop_assert_eq!(back.to_text(), m.to_text());
            for i in 0..m.param_count() {
                prop_assert_eq!(back.param(i).to_bits(), m.param(i).to_bits());
            }
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        assert!(Mlp::from_text("other 1\n").is_err());
        let m = Mlp::new(ModelRole::Barrier, &[5, 3, 1], OutputActivation::Identity, 1).unwrap();
        let text = m.to_text();
        let cut: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        assert!(Mlp::from_text(&cut).is_err());
    }

    #[test]
    fn header_lists_role_and_sizes() {
        let m = Mlp::new(ModelRole::Rejection, &[9, 4, 2], OutputActivation::Sigmoid, 1)
            .unwrap()
            .with_tag("dynamic");
        let text = m.to_text();
        let head: Vec<&str> = text.lines().take(6).collect();
        assert_eq!(
            head,
            ["safenav-mlp 1", "role rejection", "tag dynamic", "sizes 9 4 2", "hidden relu", "output sigmoid"]
        );
    }
}
