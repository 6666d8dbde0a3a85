//! `NCTC/1` text model format.
//!
//! ```text
//! NCTC/1
//! order 3
//! hidden 50
//! layers 2
//! decay 5.0000000000000000e-1
//! dropout 0.0000000000000000e0
//! word_dim 300
//! labels 2
//! label negative
//! label positive
//! tensor layer1.U1 50 300
//! <50 rows of 300 numbers>
//! ...
//! tensor W 100 2
//! <100 rows of 2 numbers>
//! end
//! ```
//!
//! Tensors follow in declared order: per layer `U1..Un`, `O`, `b` (as a
//! `1 × h` row), then `W`. Every number is written with 17 significant
//! digits, so a load/save cycle reproduces the file byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, ensure, Context, Result};
use nctc_core::{LayerParams, Model, ModelConfig};
use ndarray::{Array1, Array2};

pub const FORMAT_TAG: &str = "NCTC/1";

fn write_float<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    write!(w, "{v:.16e}")
}

fn write_tensor<W: Write>(
    w: &mut W,
    name: &str,
    rows: usize,
    cols: usize,
    data: &[f64],
) -> Result<()> {
    writeln!(w, "tensor {name} {rows} {cols}")?;
    for row in data.chunks(cols) {
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                write!(w, " ")?;
            }
            write_float(w, v)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let cfg = &model.config;
    writeln!(w, "{FORMAT_TAG}")?;
    writeln!(w, "order {}", cfg.order)?;
    writeln!(w, "hidden {}", cfg.hidden)?;
    writeln!(w, "layers {}", cfg.layers)?;
    write!(w, "decay ")?;
    write_float(&mut w, cfg.decay)?;
    writeln!(w)?;
    write!(w, "dropout ")?;
    write_float(&mut w, cfg.dropout)?;
    writeln!(w)?;
    writeln!(w, "word_dim {}", cfg.word_dim)?;
    writeln!(w, "labels {}", cfg.labels.len())?;
    for label in &cfg.labels {
        ensure!(
            !label.contains(['\n', '\r']),
            "label {label:?} contains a line break"
        );
        writeln!(w, "label {label}")?;
    }
    let names = model.tensor_names();
    let shapes = tensor_shapes(cfg);
    for ((name, (rows, cols)), data) in names.iter().zip(shapes).zip(model.param_slices()) {
        write_tensor(&mut w, name, rows, cols, data)?;
    }
    writeln!(w, "end")?;
    w.flush()?;
    Ok(())
}

/// `(rows, cols)` of every tensor in file order.
fn tensor_shapes(cfg: &ModelConfig) -> Vec<(usize, usize)> {
    let mut shapes = Vec::new();
    for t in 0..cfg.layers {
        let d_in = if t == 0 { cfg.word_dim } else { cfg.hidden };
        shapes.extend(std::iter::repeat_n((cfg.hidden, d_in), cfg.order));
        shapes.push((cfg.hidden, cfg.hidden));
        shapes.push((1, cfg.hidden));
    }
    shapes.push((cfg.layers * cfg.hidden, cfg.labels.len()));
    shapes
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn next_line(&mut self) -> Result<String> {
        self.number += 1;
        match self.inner.next() {
            Some(line) => Ok(line?),
            None => bail!("line {}: unexpected end of model file", self.number),
        }
    }

    fn field(&mut self, key: &str) -> Result<String> {
        let line = self.next_line()?;
        let (k, v) = line.split_once(' ').unwrap_or((line.as_str(), ""));
        ensure!(
            k == key,
            "line {}: expected {key:?}, found {line:?}",
            self.number
        );
        Ok(v.to_string())
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.field(key)?;
        raw.trim()
            .parse()
            .map_err(|e| anyhow!("line {}: bad value for {key}: {e}", self.number))
    }
}

pub fn read_model<R: BufRead>(reader: R) -> Result<Model> {
    let mut lines = Lines {
        inner: reader.lines(),
        number: 0,
    };
    let tag = lines.next_line()?;
    ensure!(
        tag == FORMAT_TAG,
        "not an {FORMAT_TAG} model file (found {tag:?})"
    );
    let order = lines.parsed("order")?;
    let hidden = lines.parsed("hidden")?;
    let layers = lines.parsed("layers")?;
    let decay = lines.parsed("decay")?;
    let dropout = lines.parsed("dropout")?;
    let word_dim = lines.parsed("word_dim")?;
    let label_count: usize = lines.parsed("labels")?;
    let labels = (0..label_count)
        .map(|_| lines.field("label"))
        .collect::<Result<Vec<_>>>()?;
    let cfg = ModelConfig {
        order,
        hidden,
        layers,
        decay,
        dropout,
        word_dim,
        labels,
    };
    cfg.validate().context("model header")?;

    let mut names = Vec::new();
    for t in 1..=cfg.layers {
        names.extend((1..=cfg.order).map(|m| format!("layer{t}.U{m}")));
        names.push(format!("layer{t}.O"));
        names.push(format!("layer{t}.b"));
    }
    names.push("W".to_string());

    let mut tensors = Vec::with_capacity(names.len());
    for (name, (rows, cols)) in names.iter().zip(tensor_shapes(&cfg)) {
        let header = lines.next_line()?;
        let expected = format!("tensor {name} {rows} {cols}");
        ensure!(
            header == expected,
            "line {}: expected {expected:?}, found {header:?}",
            lines.number
        );
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let line = lines.next_line()?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|e| anyhow!("line {}: bad number {tok:?}: {e}", lines.number))?;
                data.push(v);
            }
            ensure!(
                data.len() - before == cols,
                "line {}: expected {cols} values in {name}, found {}",
                lines.number,
                data.len() - before
            );
        }
        tensors.push(Array2::from_shape_vec((rows, cols), data)?);
    }
    let end = lines.next_line()?;
    ensure!(
        end == "end",
        "line {}: expected \"end\", found {end:?}",
        lines.number
    );

    let mut tensors = tensors.into_iter();
    let mut layer_params = Vec::with_capacity(cfg.layers);
    for _ in 0..cfg.layers {
        let slots: Vec<Array2<f64>> = tensors.by_ref().take(cfg.order).collect();
        let output = tensors.next().expect("tensor count matches names");
        let bias: Array1<f64> = tensors
            .next()
            .expect("tensor count matches names")
            .into_shape_with_order(cfg.hidden)?;
        layer_params.push(LayerParams::new(slots, output, bias)?);
    }
    let classifier = tensors.next().expect("tensor count matches names");
    Ok(Model::from_parts(cfg, layer_params, classifier)?)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_model(model, BufWriter::new(file))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_model(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}
