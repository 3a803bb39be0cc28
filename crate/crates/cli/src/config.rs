//! Settings resolution: defaults < config file < flags.
//!
//! The config file is flat text, one `key = value` per line, `#` starts a
//! comment line. Keys are the option names in snake_case (`batch_size`);
//! dashes are accepted. Booleans take `true` or `false`; lists are
//! comma-separated. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, CommandFactory, FromArgMatches};
use serde::Serialize;

use crate::args::Cli;

/// One layer of settings, keyed by option id.
pub type Layer = BTreeMap<String, String>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Default,
    File,
    Flag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Setting {
    pub value: Option<String>,
    pub source: Source,
}

/// The parsed command plus where each of its settings came from.
#[derive(Debug)]
pub struct Resolved {
    pub cli: Cli,
    /// Subcommand names, e.g. `["bench", "steps"]`.
    pub command: Vec<String>,
    pub settings: BTreeMap<String, Setting>,
}

#[derive(Debug)]
pub enum ParseError {
    /// Usage errors, `--help` and `--version`; clap picks the exit code.
    Clap(clap::Error),
    Config(String),
}

impl From<clap::Error> for ParseError {
    fn from(e: clap::Error) -> Self {
        ParseError::Clap(e)
    }
}

fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

pub fn parse_config_text(text: &str) -> Result<Layer, String> {
    let mut layer = Layer::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected `key = value`, got `{line}`", no + 1))?;
        let key = normalize_key(key);
        if key.is_empty() {
            return Err(format!("line {}: empty key", no + 1));
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        if layer.insert(key.clone(), value.to_string()).is_some() {
            return Err(format!("line {}: key `{key}` set twice", no + 1));
        }
    }
    Ok(layer)
}

/// Right-biased union: keys of `top` replace those of `base`.
pub fn overlay(base: &Layer, top: &Layer) -> Layer {
    let mut out = base.clone();
    out.extend(top.iter().map(|(k, v)| (k.clone(), v.clone())));
    out
}

/// Final value and origin of every known key.
pub fn resolve(known: &[String], defaults: &Layer, file: &Layer, flags: &Layer) -> BTreeMap<String, Setting> {
    let merged = overlay(&overlay(defaults, file), flags);
    known
        .iter()
        .map(|k| {
            let source = if flags.contains_key(k) {
                Source::Flag
            } else if file.contains_key(k) {
                Source::File
            } else {
                Source::Default
            };
            (k.clone(), Setting { value: merged.get(k).cloned(), source })
        })
        .collect()
}

/// Values of the leaf's arguments that came from `source`.
fn layer_from(matches: &ArgMatches, ids: &[String], source: ValueSource) -> Layer {
    ids.iter()
        .filter(|id| matches.value_source(id) == Some(source))
        .filter_map(|id| {
            let raw = matches.get_raw(id)?;
            let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
            Some((id.clone(), vals.join(",")))
        })
        .collect()
}

fn leaf<'a>(cmd: &'a clap::Command, matches: &'a ArgMatches) -> (Vec<String>, &'a clap::Command, &'a ArgMatches) {
    let (mut cmd, mut matches) = (cmd, matches);
    let mut path = Vec::new();
    while let Some((name, sub)) = matches.subcommand() {
        path.push(name.to_string());
        cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
        matches = sub;
    }
    (path, cmd, matches)
}

fn arg_ids(cmd: &clap::Command) -> Vec<String> {
    cmd.get_arguments()
        .map(|a| a.get_id().to_string())
        .filter(|id| id != "help" && id != "version")
        .collect()
}

/// Command-line arguments that reproduce `layer` for the leaf command.
fn render(cmd: &clap::Command, path: &[String], layer: &Layer, program: &OsString) -> Result<Vec<OsString>, String> {
    let mut argv = vec![program.clone()];
    argv.extend(path.iter().map(OsString::from));
    for (id, value) in layer {
        let arg = cmd
            .get_arguments()
            .find(|a| a.get_id() == id.as_str())
            .ok_or_else(|| format!("unknown key `{id}`"))?;
        let long = format!("--{}", arg.get_long().expect("every option has a long form"));
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => argv.push(long.into()),
                "false" => {}
                other => return Err(format!("key `{id}` takes true or false, got `{other}`")),
            }
        } else {
            argv.push(long.into());
            argv.push(value.into());
        }
    }
    Ok(argv)
}

/// Parses `argv`, folding in the `--config` file of the chosen command.
pub fn parse(argv: &[OsString]) -> Result<Resolved, ParseError> {
    let root = Cli::command();
    let matches = root.clone().try_get_matches_from(argv)?;
    let (path, cmd, leaf_matches) = leaf(&root, &matches);
    let ids = arg_ids(cmd);
    let defaults = layer_from(leaf_matches, &ids, ValueSource::DefaultValue);
    let flags = layer_from(leaf_matches, &ids, ValueSource::CommandLine);

    let file = match leaf_matches.get_one::<std::path::PathBuf>("config") {
        Some(p) => read_config(p, &ids)?,
        None => Layer::new(),
    };
    let settings = resolve(&ids, &defaults, &file, &flags);
    if file.is_empty() {
        let cli = Cli::from_arg_matches(&matches)?;
        return Ok(Resolved { cli, command: path, settings });
    }
    let program = argv.first().cloned().unwrap_or_else(|| "rectiflow".into());
    let merged_argv = render(cmd, &path, &overlay(&file, &flags), &program).map_err(ParseError::Config)?;
    let cli = root
        .try_get_matches_from(&merged_argv)
        .and_then(|m| Cli::from_arg_matches(&m))
        .map_err(|e| ParseError::Config(format!("invalid value in config file: {}", e.render().to_string().trim())))?;
    Ok(Resolved { cli, command: path, settings })
}

fn read_config(path: &Path, ids: &[String]) -> Result<Layer, ParseError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ParseError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let layer = parse_config_text(&text).map_err(|e| ParseError::Config(format!("{}: {e}", path.display())))?;
    for key in layer.keys() {
        if key == "config" || !ids.contains(key) {
            return Err(ParseError::Config(format!("{}: unknown key `{key}`", path.display())));
        }
    }
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(pairs: &[(&str, &str)]) -> Layer {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn parses_comments_dashes_and_quotes() {
        let l = parse_config_text("# run\nbatch-size = 64\n\n  steps=10  \nout = \"a b\"\n").unwrap();
        assert_eq!(l, layer(&[("batch_size", "64"), ("steps", "10"), ("out", "a b")]));
    }

    #[test]
    fn rejects_duplicates_and_bare_words() {
        assert!(parse_config_text("steps = 1\nsteps = 2\n").unwrap_err().contains("twice"));
        assert!(parse_config_text("steps\n").is_err());
        assert!(parse_config_text(" = 3\n").is_err());
    }

    #[test]
    fn resolve_reports_sources() {
        let known = vec!["a".to_string(), "b".to_string(), "c".to_string(), "d".to_string()];
        let s = resolve(
            &known,
            &layer(&[("a", "1"), ("b", "1"), ("c", "1")]),
            &layer(&[("b", "2"), ("c", "2")]),
            &layer(&[("c", "3")]),
        );
        assert_eq!(s["a"], Setting { value: Some("1".into()), source: Source::Default });
        assert_eq!(s["b"], Setting { value: Some("2".into()), source: Source::File });
        assert_eq!(s["c"], Setting { value: Some("3".into()), source: Source::Flag });
        assert_eq!(s["d"], Setting { value: None, source: Source::Default });
    }

    fn arb_layer() -> impl Strategy<Value = Layer> {
        prop::collection::btree_map("[a-e]", "[0-9]{1,3}", 0..5)
    }

    proptest! {
        #[test]
        fn overlay_is_associative(a in arb_layer(), b in arb_layer(), c in arb_layer()) {
            prop_assert_eq!(overlay(&overlay(&a, &b), &c), overlay(&a, &overlay(&b, &c)));
        }

        #[test]
        fn later_layers_win(d in arb_layer(), f in arb_layer(), g in arb_layer()) {
            let m = overlay(&overlay(&d, &f), &g);
            for (k, v) in &m {
                let expect = g.get(k).or_else(|| f.get(k)).or_else(|| d.get(k));
                prop_assert_eq!(Some(v), expect);
            }
            prop_assert_eq!(m.len(), d.keys().chain(f.keys()).chain(g.keys()).collect::<std::collections::BTreeSet<_>>().len());
        }

        #[test]
        fn config_text_round_trips(l in prop::collection::btree_map("[a-z][a-z_]{0,8}", "[A-Za-z0-9./,]{1,12}", 0..8)) {
            let text: String = l.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
            prop_assert_eq!(parse_config_text(&text).unwrap(), l);
        }
    }
}
