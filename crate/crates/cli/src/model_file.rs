//! Line-oriented model file.
//!
//! ```text
//! HIPRENET-MODEL-v1
//! config_hash <hex or ->
//! seed <u64 or ->
//! input_dim <d>
//! input_scaling none | input_scaling <shift_1..shift_d> / <scale_1..scale_d>
//! initial
//! network tanh <width> <width> ...
//! params <p_1> ... <p_n>
//! stages <k>
//! scale <e>            # then network/params, repeated k times
//! patches <m>
//! center <c_1..c_d>    # then radius, scale, network, params; m times
//! end
//! ```
//!
//! Every float is written with 17 significant digits, so a load of a save
//! reproduces each parameter bit for bit.

use std::path::Path;

use hiprenet_core::feynman::format_f64;
use hiprenet_core::{Activation, HiPreNetModel, InputScaling, Mlp, MlpArchitecture, Patch, Stage};

use crate::error::{CliError, Result};

pub const MAGIC: &str = "HIPRENET-MODEL-v1";
const MAGIC_PREFIX: &str = "HIPRENET-MODEL-";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ModelProvenance {
    pub config_hash: Option<String>,
    pub seed: Option<u64>,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|&v| format_f64(v)).collect::<Vec<_>>().join(" ")
}

fn write_net(out: &mut String, net: &Mlp) {
    let arch = net.arch();
    let widths: Vec<String> = arch.hidden_widths().iter().map(|w| w.to_string()).collect();
    out.push_str(&format!("network {} {}\n", arch.activation().name(), widths.join(" ")));
    out.push_str(&format!("params {}\n", join(net.params())));
}

pub fn model_to_string(model: &HiPreNetModel, prov: &ModelProvenance) -> String {
    let mut s = String::new();
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&format!("config_hash {}\n", prov.config_hash.as_deref().unwrap_or("-")));
    s.push_str(&format!("seed {}\n", prov.seed.map_or("-".into(), |v| v.to_string())));
    s.push_str(&format!("input_dim {}\n", model.input_dim()));
    match &model.input_scaling {
        None => s.push_str("input_scaling none\n"),
        Some(sc) => s.push_str(&format!("input_scaling {} / {}\n", join(&sc.shift), join(&sc.scale))),
    }
    s.push_str("initial\n");
    write_net(&mut s, &model.initial);
    s.push_str(&format!("stages {}\n", model.stages.len()));
    for st in &model.stages {
        s.push_str(&format!("scale {}\n", format_f64(st.scale)));
        write_net(&mut s, &st.net);
    }
    s.push_str(&format!("patches {}\n", model.patches.len()));
    for p in &model.patches {
        s.push_str(&format!("center {}\n", join(&p.center)));
        s.push_str(&format!("radius {}\n", format_f64(p.radius)));
        s.push_str(&format!("scale {}\n", format_f64(p.scale)));
        write_net(&mut s, &p.net);
    }
    s.push_str("end\n");
    s
}

pub fn save_model(model: &HiPreNetModel, prov: &ModelProvenance, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model, prov)).map_err(|e| CliError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<(HiPreNetModel, ModelProvenance)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    model_from_str(&text)
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn bad(&self, field: &'static str, message: impl Into<String>) -> CliError {
        CliError::ModelField {
            line: self.line,
            field,
            message: message.into(),
        }
    }

    /// Next line, which must start with `field`; returns the remainder.
    fn expect(&mut self, field: &'static str) -> Result<&'a str> {
        let Some((i, line)) = self.iter.next() else {
            self.line += 1;
            return Err(self.bad(field, "file ends early (truncated?)"));
        };
        self.line = i + 1;
        let line = line.trim_end();
        let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
        if key != field {
            return Err(self.bad(field, format!("expected `{field}`, found `{key}`")));
        }
        Ok(rest.trim())
    }

    fn floats(&self, field: &'static str, text: &str) -> Result<Vec<f64>> {
        text.split_whitespace()
            .map(|t| match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(self.bad(field, format!("`{t}` is not a finite number"))),
            })
            .collect()
    }

    fn float(&mut self, field: &'static str) -> Result<f64> {
        let rest = self.expect(field)?;
        match self.floats(field, rest)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(self.bad(field, "expected exactly one number")),
        }
    }

    fn count(&mut self, field: &'static str) -> Result<usize> {
        let rest = self.expect(field)?;
        rest.parse().map_err(|_| self.bad(field, format!("`{rest}` is not a count")))
    }

    fn network(&mut self, input_dim: usize) -> Result<Mlp> {
        let rest = self.expect("network")?;
        let mut tokens = rest.split_whitespace();
        let act = tokens.next().unwrap_or("");
        if Activation::from_name(act).is_none() {
            return Err(self.bad("network", format!("unknown activation `{act}`")));
        }
        let widths = tokens
            .map(|t| t.parse::<usize>().map_err(|_| self.bad("network", format!("bad width `{t}`"))))
            .collect::<Result<Vec<_>>>()?;
        let arch = MlpArchitecture::new(input_dim, widths).map_err(|e| self.bad("network", e.to_string()))?;
        let rest = self.expect("params")?;
        let params = self.floats("params", rest)?;
        Mlp::new(arch, params).map_err(|e| self.bad("params", e.to_string()))
    }
}

pub fn model_from_str(text: &str) -> Result<(HiPreNetModel, ModelProvenance)> {
    let first = text.lines().next().unwrap_or("").trim_end();
    if first != MAGIC {
        if let Some(version) = first.strip_prefix(MAGIC_PREFIX) {
            return Err(CliError::ModelVersion(version.to_string()));
        }
        return Err(CliError::ModelField {
            line: 1,
            field: "header",
            message: format!("not a model file (expected `{MAGIC}`)"),
        });
    }
    let mut r = Lines {
        iter: text.lines().enumerate(),
        line: 0,
    };
    r.iter.next();
    r.line = 1;

    let hash = r.expect("config_hash")?;
    let seed = r.expect("seed")?;
    let prov = ModelProvenance {
        config_hash: (hash != "-" && !hash.is_empty()).then(|| hash.to_string()),
        seed: match seed {
            "-" => None,
            s => Some(s.parse().map_err(|_| r.bad("seed", format!("`{s}` is not a u64")))?),
        },
    };
    let d = r.count("input_dim")?;
    let scaling_text = r.expect("input_scaling")?;
    let input_scaling = if scaling_text == "none" {
        None
    } else {
        let (a, b) = scaling_text
            .split_once('/')
            .ok_or_else(|| r.bad("input_scaling", "expected `none` or `<shift> / <scale>`"))?;
        let sc = InputScaling::new(r.floats("input_scaling", a)?, r.floats("input_scaling", b)?)
            .map_err(|e| r.bad("input_scaling", e.to_string()))?;
        Some(sc)
    };
    r.expect("initial")?;
    let initial = r.network(d)?;
    let n_stages = r.count("stages")?;
    let mut stages = Vec::with_capacity(n_stages.min(1024));
    for _ in 0..n_stages {
        let scale = r.float("scale")?;
        let net = r.network(d)?;
        stages.push(Stage { scale, net });
    }
    let n_patches = r.count("patches")?;
    let mut patches = Vec::with_capacity(n_patches.min(1024));
    for _ in 0..n_patches {
        let rest = r.expect("center")?;
        let center = r.floats("center", rest)?;
        let radius = r.float("radius")?;
        let scale = r.float("scale")?;
        let net = r.network(d)?;
        patches.push(Patch { center, radius, scale, net });
    }
    r.expect("end")?;
    let model = HiPreNetModel {
        input_scaling,
        initial,
        stages,
        patches,
    };
    model.validate().map_err(|e| CliError::ModelField {
        line: r.line,
        field: "model",
        message: e.to_string(),
    })?;
    Ok((model, prov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use hiprenet_core::{DenseMatrix, Rng};

    fn sample_model(rng: &mut Rng) -> HiPreNetModel {
        let arch = |w: Vec<usize>| MlpArchitecture::new(2, w).unwrap();
        let mut m = HiPreNetModel::new(Mlp::init(arch(vec![5, 5]), rng));
        m.input_scaling = Some(InputScaling::new(vec![3.0, -0.1], vec![1.1547, 2.0]).unwrap());
        m.stages.push(Stage { scale: 3.7e-3, net: Mlp::init(arch(vec![4]), rng) });
        m.stages.push(Stage { scale: 1.0e-5 / 3.0, net: Mlp::init(arch(vec![6, 6]), rng) });
        for c in [[0.1, 0.2], [-0.3, 0.4]] {
            m.patches.push(Patch {
                center: c.to_vec(),
                radius: 0.75,
                scale: 2.0e-7,
                net: Mlp::init(arch(vec![3]), rng),
            });
        }
        m
    }

    #[test]
    fn round_trip_preserves_predictions_bitwise() {
        let mut rng = Rng::new(5);
        let model = sample_model(&mut rng);
        let prov = ModelProvenance { config_hash: Some("ab12".into()), seed: Some(7) };
        let text = model_to_string(&model, &prov);
        let (back, p2) = model_from_str(&text).unwrap();
        assert_eq!(back, model);
        assert_eq!(p2, prov);
        assert_eq!(back.patches[1].center, vec![-0.3, 0.4]);
        let x = DenseMatrix::from_row_major(100, 2, (0..200).map(|_| rng.uniform(-1.0, 1.0).unwrap()).collect()).unwrap();
        let a = model.predict(&x).unwrap();
        let b = back.predict(&x).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_eq!(model_to_string(&back, &p2), text);
    }

    #[test]
    fn damaged_files_are_rejected_with_the_field_named() {
        let model = sample_model(&mut Rng::new(6));
        let text = model_to_string(&model, &ModelProvenance::default());

        let truncated: String = text.lines().take(9).map(|l| format!("{l}\n")).collect();
        assert!(matches!(model_from_str(&truncated), Err(CliError::ModelField { .. })));

        let v2 = text.replacen("-v1", "-v2", 1);
        assert!(matches!(model_from_str(&v2), Err(CliError::ModelVersion(v)) if v == "v2"));

        let bad_radius = text.replacen("radius 7.5000000000000000e-1", "radius abc", 1);
        match model_from_str(&bad_radius) {
            Err(CliError::ModelField { field, .. }) => assert_eq!(field, "radius"),
            other => panic!("{other:?}"),
        }
        let short_params = text.replacen("params ", "params 1.0 ", 1);
        match model_from_str(&short_params) {
            Err(CliError::ModelField { field, line, .. }) => assert_eq!((field, line), ("params", 8)),
            other => panic!("{other:?}"),
        }
        assert!(model_from_str("").is_err());
    }
}
