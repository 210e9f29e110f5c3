//! Plain-text model checkpoints.
//!
//! A checkpoint starts with the run configuration (`key=value` lines, the
//! same text as a config echo), followed by one block per parameter group:
//!
//! ```text
//! # checkpoint input_width=2
//! task=adding
//! ...
//! @dense state.V 2 64
//! <one line of space-separated values per row>
//! @wavelet reset.W
//! <the nine-line wavelet layer text>
//! ```
//!
//! Loading rebuilds the model from the configuration and then overwrites
//! every parameter, so a checkpoint must name each one exactly once.

use std::collections::HashSet;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fwt::{join_values, parse_values};
use crate::params::{ParamId, ParamStore};
use crate::training::{Model, TrainConfig};
use crate::wavelet_linear::WaveletLinear;

const HEADER: &str = "# checkpoint input_width=";

/// A model together with its parameters and configuration.
pub struct Checkpoint {
    pub config: TrainConfig,
    pub input_width: usize,
    pub model: Model,
    pub store: ParamStore,
}

fn wavelet_owned(model: &Model) -> HashSet<ParamId> {
    model
        .wavelet_layers()
        .iter()
        .flat_map(|(_, l)| {
            let mut ids = l.trainable_ids();
            ids.extend(l.fb.ids());
            ids
        })
        .collect()
}

/// Serialises `model` and its parameters.
pub fn to_text(config: &TrainConfig, input_width: usize, model: &Model, store: &ParamStore) -> String {
    let mut s = format!("{HEADER}{input_width}\n");
    s.push_str(&config.to_text());
    let skip = wavelet_owned(model);
    for id in model.param_ids() {
        if skip.contains(&id) {
            continue;
        }
        let t = store.value(id);
        let (rows, cols) = match t.shape() {
            [r, c] => (*r, *c),
            _ => (1, t.len()),
        };
        s.push_str(&format!("@dense {} {rows} {cols}\n", store.name(id)));
        for row in t.data().chunks(cols.max(1)) {
            s.push_str(&join_values(row));
            s.push('\n');
        }
    }
    for (name, layer) in model.wavelet_layers() {
        s.push_str(&format!("@wavelet {name}\n"));
        s.push_str(&layer.to_text(store));
    }
    s
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::invalid(format!("checkpoint line {line}: {}", msg.into()))
}

/// Parses [`to_text`] output.
pub fn from_text(text: &str) -> Result<Checkpoint> {
    let lines: Vec<&str> = text.lines().collect();
    let first = lines.first().copied().unwrap_or("");
    let input_width: usize = first
        .strip_prefix(HEADER)
        .and_then(|w| w.trim().parse().ok())
        .ok_or_else(|| bad(1, "missing `# checkpoint input_width=N` header"))?;
    let body = lines.iter().position(|l| l.starts_with('@')).unwrap_or(lines.len());
    let config = TrainConfig::from_text(&lines[1..body].join("\n"))?;
    let mut store = ParamStore::new();
    let mut model = Model::build_for_width(&config, &mut store, input_width)?;

    let owned = wavelet_owned(&model);
    let mut pending: HashSet<ParamId> = model.param_ids().into_iter().filter(|id| !owned.contains(id)).collect();
    let layer_names: Vec<String> = model.wavelet_layers().into_iter().map(|(n, _)| n).collect();
    let mut layers_seen = vec![false; layer_names.len()];

    let mut i = body;
    while i < lines.len() {
        let line = lines[i].trim();
        if line.is_empty() {
            i += 1;
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["@dense", name, rows, cols] => {
                let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(i + 1, format!("bad size `{s}`")));
                let (rows, cols) = (parse(rows)?, parse(cols)?);
                let id = store
                    .find(name)
                    .filter(|id| pending.contains(id))
                    .ok_or_else(|| bad(i + 1, format!("unexpected parameter `{name}`")))?;
                if i + 1 + rows > lines.len() {
                    return Err(bad(i + 1, format!("`{name}` is truncated")));
                }
                let mut data = Vec::with_capacity(rows * cols);
                for (k, row) in lines[i + 1..i + 1 + rows].iter().enumerate() {
                    let v = parse_values(row).map_err(|e| bad(i + 2 + k, e.to_string()))?;
                    if v.len() != cols {
                        return Err(bad(i + 2 + k, format!("expected {cols} values, found {}", v.len())));
                    }
                    data.extend(v);
                }
                let shape = store.value(id).shape().to_vec();
                if data.len() != store.value(id).len() {
                    return Err(bad(i + 1, format!("`{name}` has {rows}x{cols} values, model expects {shape:?}")));
                }
                store.set(id, Tensor::new(shape, data)?)?;
                pending.remove(&id);
                i += 1 + rows;
            }
            ["@wavelet", name] => {
                let k = layer_names
                    .iter()
                    .position(|n| n == name)
                    .filter(|&k| !layers_seen[k])
                    .ok_or_else(|| bad(i + 1, format!("unexpected wavelet layer `{name}`")))?;
                let end = i + 1 + WaveletLinear::TEXT_LINES;
                if end > lines.len() {
                    return Err(bad(i + 1, format!("wavelet layer `{name}` is truncated")));
                }
                let mut layers = model.wavelet_layers_mut();
                layers[k]
                    .load_text(&mut store, &lines[i + 1..end].join("\n"))
                    .map_err(|e| bad(i + 1, e.to_string()))?;
                layers_seen[k] = true;
                i = end;
            }
            _ => return Err(bad(i + 1, format!("expected a block header, found `{line}`"))),
        }
    }
    if let Some(id) = pending.iter().next() {
        return Err(Error::invalid(format!("checkpoint is missing parameter `{}`", store.name(*id))));
    }
    if let Some(k) = layers_seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!("checkpoint is missing wavelet layer `{}`", layer_names[k])));
    }
    Ok(Checkpoint { config, input_width, model, store })
}

pub fn save(path: &Path, config: &TrainConfig, input_width: usize, model: &Model, store: &ParamStore) -> Result<()> {
    std::fs::write(path, to_text(config, input_width, model, store)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recurrent::CompressSet;
    use crate::training::TaskKind;

    fn perturbed(config: &TrainConfig, width: usize) -> (Model, ParamStore) {
        let mut store = ParamStore::new();
        let model = Model::build_for_width(config, &mut store, width).unwrap();
        for (k, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let t = store.value_mut(id);
            for (j, v) in t.data_mut().iter_mut().enumerate() {
                *v += 0.01 * ((k * 31 + j) as f64).sin();
            }
        }
        (model, store)
    }

    #[test]
    fn round_trip_restores_every_value() {
        for compress in ["none", "reset", "state,reset,update"] {
            let config = TrainConfig {
                task: TaskKind::Copy,
                hidden: 16,
                compress: compress.parse::<CompressSet>().unwrap(),
                ..TrainConfig::default()
            };
            let (model, store) = perturbed(&config, 10);
            let text = to_text(&config, 10, &model, &store);
            let back = from_text(&text).unwrap();
            assert_eq!(back.config, config);
            assert_eq!(back.model.count_params(&back.store), model.count_params(&store));
            for id in store.ids() {
                let other = back.store.find(store.name(id)).unwrap();
                assert_eq!(back.store.value(other), store.value(id), "{}", store.name(id));
            }
            assert_eq!(to_text(&back.config, 10, &back.model, &back.store), text);
        }
    }

    #[test]
    fn feed_forward_round_trip() {
        let config =
            TrainConfig { task: TaskKind::Mnist, hidden: 16, compress: CompressSet::all(), ..TrainConfig::default() };
        let (model, store) = perturbed(&config, 49);
        let text = to_text(&config, 49, &model, &store);
        assert_eq!(to_text(&config, 49, &from_text(&text).unwrap().model, &from_text(&text).unwrap().store), text);
    }

    #[test]
    fn rejects_damaged_text() {
        let config = TrainConfig { hidden: 8, compress: CompressSet::all(), ..TrainConfig::default() };
        let (model, store) = perturbed(&config, 2);
        let text = to_text(&config, 2, &model, &store);
        assert!(from_text(&text[1..]).is_err());
        let cut = text.rfind("@wavelet").unwrap();
        assert!(from_text(&text[..cut]).is_err());
        assert!(from_text(&text.replacen("@dense readout.b 1 1", "@dense readout.c 1 1", 1)).is_err());
        assert!(from_text(&format!("{text}@dense readout.b 1 1\n0\n")).is_err());
    }
}
