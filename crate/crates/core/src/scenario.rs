//! Plain-text scenario files: `key = value` entries, nested `{ }` blocks
//! and `[ ]` lists. Numbers may be constant expressions (`pi/2`).
//!
//! ```text
//! name = "sphere"
//! warped_product { base = "interval(0.05,3.09)", fiber = "circle", warp = "sin(x1)" }
//! map = "pi1"
//! clairaut_g = "auto"
//! launches = "oblique"
//! checks = ["clairaut", "angle-identity"]
//! ```

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::clairaut::{oblique_sphere_launches, Launch};
use crate::expr::Expr;
use crate::manifold::FdConfig;

/// A configuration problem, with the offending key and line when known.
#[derive(Debug, Clone, Error, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.key.is_empty()) {
            (Some(l), false) => write!(f, "line {l}: `{}`: {}", self.key, self.message),
            (Some(l), true) => write!(f, "line {l}: {}", self.message),
            (None, false) => write!(f, "`{}`: {}", self.key, self.message),
            (None, true) => write!(f, "{}", self.message),
        }
    }
}

fn config_err(key: &str, line: Option<usize>, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: key.to_string(),
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    /// An unquoted token: a number, constant expression or bare word.
    Bare(String),
    List(Vec<Value>),
    Block(Block),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Value,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Block {
    pub entries: Vec<Entry>,
}

impl Block {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().rev().find(|e| e.key == key)
    }

    pub fn all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a Entry> + 'a {
        self.entries.iter().filter(move |e| e.key == key)
    }

    /// Replace (or add) the value at a dotted path.
    pub fn set_path(&mut self, path: &str, value: Value) -> Result<(), ConfigError> {
        let mut parts = path.splitn(2, '.');
        let head = parts.next().unwrap_or_default();
        if head.is_empty() {
            return Err(config_err(path, None, "empty key"));
        }
        match parts.next() {
            None => {
                self.entries.retain(|e| e.key != head);
                self.entries.push(Entry {
                    key: head.to_string(),
                    value,
                    line: 0,
                });
                Ok(())
            }
            Some(rest) => {
                let existing = self.entries.iter_mut().rev().find(|e| e.key == head);
                match existing {
                    Some(Entry {
                        value: Value::Block(b),
                        ..
                    }) => b.set_path(rest, value),
                    Some(e) => Err(config_err(head, Some(e.line), "not a block")),
                    None => {
                        let mut b = Block::default();
                        b.set_path(rest, value)?;
                        self.entries.push(Entry {
                            key: head.to_string(),
                            value: Value::Block(b),
                            line: 0,
                        });
                        Ok(())
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Str(String),
    Bare(String),
    Eq,
    Comma,
    Semi,
    Newline,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let mut chars = raw.chars().peekable();
        while let Some(&c) = chars.peek() {
            match c {
                '#' => break,
                c if c.is_whitespace() => {
                    chars.next();
                }
                '"' => {
                    chars.next();
                    let mut s = String::new();
                    let mut closed = false;
                    while let Some(c) = chars.next() {
                        match c {
                            '"' => {
                                closed = true;
                                break;
                            }
                            '\\' => match chars.next() {
                                Some('n') => s.push('\n'),
                                Some(other) => s.push(other),
                                None => break,
                            },
                            other => s.push(other),
                        }
                    }
                    if !closed {
                        return Err(config_err("", Some(line), "unterminated string"));
                    }
                    out.push((Tok::Str(s), line));
                }
                '=' | ',' | ';' | '{' | '}' | '[' | ']' => {
                    chars.next();
                    let t = match c {
                        '=' => Tok::Eq,
                        ',' => Tok::Comma,
                        ';' => Tok::Semi,
                        '{' => Tok::LBrace,
                        '}' => Tok::RBrace,
                        '[' => Tok::LBracket,
                        _ => Tok::RBracket,
                    };
                    out.push((t, line));
                }
                _ => {
                    let mut s = String::new();
                    let mut depth = 0usize;
                    while let Some(&c) = chars.peek() {
                        let stop = depth == 0
                            && (c.is_whitespace() || "=,;{}[]\"#".contains(c));
                        if stop {
                            break;
                        }
                        match c {
                            '(' => depth += 1,
                            ')' => depth = depth.saturating_sub(1),
                            _ => {}
                        }
                        s.push(c);
                        chars.next();
                    }
                    out.push((Tok::Bare(s), line));
                }
            }
        }
        out.push((Tok::Newline, line));
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map_or(0, |(_, l)| *l)
    }

    fn skip_separators(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline | Tok::Comma | Tok::Semi)) {
            self.pos += 1;
        }
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline)) {
            self.pos += 1;
        }
    }

    fn block(&mut self, nested: bool) -> Result<Block, ConfigError> {
        let mut block = Block::default();
        loop {
            self.skip_separators();
            match self.peek() {
                None if nested => return Err(config_err("", Some(self.line()), "missing `}`")),
                None => return Ok(block),
                Some(Tok::RBrace) if nested => {
                    self.pos += 1;
                    return Ok(block);
                }
                Some(Tok::Bare(_)) => {
                    let line = self.line();
                    let key = match &self.toks[self.pos].0 {
                        Tok::Bare(k) => k.clone(),
                        _ => unreachable!(),
                    };
                    self.pos += 1;
                    self.skip_newlines();
                    let value = match self.peek() {
                        Some(Tok::Eq) => {
                            self.pos += 1;
                            self.skip_newlines();
                            self.value(&key)?
                        }
                        Some(Tok::LBrace) => {
                            self.pos += 1;
                            Value::Block(self.block(true)?)
                        }
                        _ => return Err(config_err(&key, Some(line), "expected `=` or `{`")),
                    };
                    block.entries.push(Entry { key, value, line });
                }
                Some(t) => {
                    return Err(config_err(
                        "",
                        Some(self.line()),
                        format!("unexpected {t:?} where a key was expected"),
                    ))
                }
            }
        }
    }

    fn value(&mut self, key: &str) -> Result<Value, ConfigError> {
        let line = self.line();
        let tok = self.toks.get(self.pos).map(|(t, _)| t.clone());
        match tok {
            Some(Tok::Str(s)) => {
                self.pos += 1;
                Ok(Value::Str(s))
            }
            Some(Tok::Bare(s)) => {
                self.pos += 1;
                Ok(Value::Bare(s))
            }
            Some(Tok::LBrace) => {
                self.pos += 1;
                Ok(Value::Block(self.block(true)?))
            }
            Some(Tok::LBracket) => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_separators();
                    match self.peek() {
                        Some(Tok::RBracket) => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        None => return Err(config_err(key, Some(line), "missing `]`")),
                        _ => items.push(self.value(key)?),
                    }
                }
            }
            _ => Err(config_err(key, Some(line), "missing value")),
        }
    }
}

/// Parse scenario text into its untyped entry tree.
pub fn parse_block(src: &str) -> Result<Block, ConfigError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
    };
    p.block(false)
}

/// Parse the right-hand side of a `--set key=value` override.
pub fn parse_value(src: &str) -> Result<Value, ConfigError> {
    let mut p = Parser {
        toks: tokenize(src)?,
        pos: 0,
    };
    p.skip_newlines();
    let v = p.value("--set")?;
    p.skip_separators();
    if p.peek().is_some() {
        return Err(config_err("--set", None, format!("trailing input in `{src}`")));
    }
    Ok(v)
}

/// Apply `key=value` overrides in order.
pub fn apply_overrides(block: &mut Block, sets: &[String]) -> Result<(), ConfigError> {
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| config_err(s, None, "override must look like key=value"))?;
        block.set_path(k.trim(), parse_value(v)?)?;
    }
    Ok(())
}

fn as_str<'a>(e: &'a Entry, key: &str) -> Result<&'a str, ConfigError> {
    match &e.value {
        Value::Str(s) | Value::Bare(s) => Ok(s),
        _ => Err(config_err(key, Some(e.line), "expected a string")),
    }
}

fn number(v: &Value, key: &str, line: usize) -> Result<f64, ConfigError> {
    let s = match v {
        Value::Str(s) | Value::Bare(s) => s,
        _ => return Err(config_err(key, Some(line), "expected a number")),
    };
    let x = Expr::parse(s, 0)
        .and_then(|e| e.eval(&[]))
        .map_err(|e| config_err(key, Some(line), format!("bad number `{s}`: {e}")))?;
    if !x.is_finite() {
        return Err(config_err(key, Some(line), format!("`{s}` is not finite")));
    }
    Ok(x)
}

fn numbers(v: &Value, key: &str, line: usize) -> Result<Vec<f64>, ConfigError> {
    match v {
        Value::List(items) => items.iter().map(|x| number(x, key, line)).collect(),
        _ => Err(config_err(key, Some(line), "expected a list of numbers")),
    }
}

fn strings(e: &Entry, key: &str) -> Result<Vec<String>, ConfigError> {
    match &e.value {
        Value::List(items) => items
            .iter()
            .map(|v| match v {
                Value::Str(s) | Value::Bare(s) => Ok(s.clone()),
                _ => Err(config_err(key, Some(e.line), "expected a list of strings")),
            })
            .collect(),
        Value::Str(s) | Value::Bare(s) => Ok(vec![s.clone()]),
        _ => Err(config_err(key, Some(e.line), "expected a list of strings")),
    }
}

fn sub_block<'a>(e: &'a Entry, key: &str) -> Result<&'a Block, ConfigError> {
    match &e.value {
        Value::Block(b) => Ok(b),
        _ => Err(config_err(key, Some(e.line), "expected a `{ }` block")),
    }
}

fn check_keys(b: &Block, prefix: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    for e in &b.entries {
        if !allowed.contains(&e.key.as_str()) {
            let key = if prefix.is_empty() {
                e.key.clone()
            } else {
                format!("{prefix}.{}", e.key)
            };
            return Err(config_err(&key, Some(e.line), "unknown key"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductSpec {
    pub base: String,
    pub fiber: String,
    pub warp: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    /// `pi1`, `pi2`, `identity` or `heisenberg`.
    Named(String),
    Exprs {
        phi1: Vec<String>,
        phi2: Vec<String>,
        target: ProductSpec,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaplacianChoice {
    Calibrate,
    Plus,
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub product: Option<ProductSpec>,
    pub manifold: Option<String>,
    pub map: Option<MapSpec>,
    pub clairaut_g: String,
    pub launches: Vec<Launch>,
    pub checks: Vec<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub samples: usize,
    pub seed: u64,
    pub output_dir: Option<String>,
    pub prefix: String,
    pub stride: usize,
    pub points: Vec<Vec<f64>>,
    pub laplacian: LaplacianChoice,
    pub fd: FdConfig,
}

const TOP_KEYS: &[&str] = &[
    "name",
    "warped_product",
    "manifold",
    "map",
    "clairaut_g",
    "launch",
    "launches",
    "checks",
    "tolerances",
    "samples",
    "seed",
    "output",
    "curvature",
    "fd",
];

fn product_spec(b: &Block, prefix: &str, keys: [&str; 3]) -> Result<ProductSpec, ConfigError> {
    let get = |k: &str| -> Result<String, ConfigError> {
        let e = b
            .get(k)
            .ok_or_else(|| config_err(&format!("{prefix}.{k}"), None, "missing"))?;
        Ok(as_str(e, &format!("{prefix}.{k}"))?.to_string())
    };
    let warp = match b.get(keys[2]) {
        Some(e) => as_str(e, &format!("{prefix}.{}", keys[2]))?.to_string(),
        None => "1".to_string(),
    };
    Ok(ProductSpec {
        base: get(keys[0])?,
        fiber: get(keys[1])?,
        warp,
    })
}

impl Scenario {
    pub fn parse(src: &str, overrides: &[String]) -> Result<Scenario, ConfigError> {
        let mut block = parse_block(src)?;
        apply_overrides(&mut block, overrides)?;
        Scenario::from_block(&block)
    }

    pub fn from_block(b: &Block) -> Result<Scenario, ConfigError> {
        check_keys(b, "", TOP_KEYS)?;
        for key in TOP_KEYS.iter().filter(|k| **k != "launch") {
            if b.all(key).count() > 1 {
                let line = b.all(key).nth(1).map(|e| e.line);
                return Err(config_err(key, line, "given more than once"));
            }
        }
        let name = match b.get("name") {
            Some(e) => as_str(e, "name")?.to_string(),
            None => "scenario".to_string(),
        };
        let product = match b.get("warped_product") {
            Some(e) => {
                let wb = sub_block(e, "warped_product")?;
                check_keys(wb, "warped_product", &["base", "fiber", "warp"])?;
                Some(product_spec(wb, "warped_product", ["base", "fiber", "warp"])?)
            }
            None => None,
        };
        let manifold = match b.get("manifold") {
            Some(e) => Some(as_str(e, "manifold")?.to_string()),
            None => None,
        };
        let map = match b.get("map") {
            None => None,
            Some(e) => Some(match &e.value {
                Value::Block(mb) => {
                    check_keys(
                        mb,
                        "map",
                        &["phi1", "phi2", "target_base", "target_fiber", "target_warp"],
                    )?;
                    let list = |k: &str| -> Result<Vec<String>, ConfigError> {
                        match mb.get(k) {
                            Some(e) => strings(e, &format!("map.{k}")),
                            None => Ok(Vec::new()),
                        }
                    };
                    MapSpec::Exprs {
                        phi1: list("phi1")?,
                        phi2: list("phi2")?,
                        target: product_spec(mb, "map", ["target_base", "target_fiber", "target_warp"])?,
                    }
                }
                _ => MapSpec::Named(as_str(e, "map")?.to_string()),
            }),
        };
        let clairaut_g = match b.get("clairaut_g") {
            Some(e) => as_str(e, "clairaut_g")?.to_string(),
            None => "auto".to_string(),
        };

        let mut launches = Vec::new();
        if let Some(e) = b.get("launches") {
            match as_str(e, "launches")? {
                "oblique" => launches.extend(oblique_sphere_launches(10.0, 1e-3)),
                other => {
                    return Err(config_err(
                        "launches",
                        Some(e.line),
                        format!("unknown launch preset `{other}` (known: oblique)"),
                    ))
                }
            }
        }
        for e in b.all("launch") {
            let lb = sub_block(e, "launch")?;
            check_keys(lb, "launch", &["point", "velocity", "t_end", "dt"])?;
            let need = |k: &str| {
                lb.get(k)
                    .ok_or_else(|| config_err(&format!("launch.{k}"), Some(e.line), "missing"))
            };
            let pe = need("point")?;
            let ve = need("velocity")?;
            let t_end = match lb.get("t_end") {
                Some(x) => number(&x.value, "launch.t_end", x.line)?,
                None => 10.0,
            };
            let dt = match lb.get("dt") {
                Some(x) => number(&x.value, "launch.dt", x.line)?,
                None => 1e-3,
            };
            if t_end <= 0.0 || dt <= 0.0 {
                return Err(config_err("launch", Some(e.line), "t_end and dt must be positive"));
            }
            launches.push(Launch {
                point: numbers(&pe.value, "launch.point", pe.line)?,
                velocity: numbers(&ve.value, "launch.velocity", ve.line)?,
                t_end,
                dt,
            });
        }

        let checks = match b.get("checks") {
            Some(e) => strings(e, "checks")?,
            None => Vec::new(),
        };
        if checks.is_empty() {
            return Err(config_err("checks", None, "at least one check is required"));
        }

        let mut tolerances = BTreeMap::new();
        if let Some(e) = b.get("tolerances") {
            for t in &sub_block(e, "tolerances")?.entries {
                let key = format!("tolerances.{}", t.key);
                let v = number(&t.value, &key, t.line)?;
                if v <= 0.0 {
                    return Err(config_err(&key, Some(t.line), "tolerance must be positive"));
                }
                tolerances.insert(t.key.clone(), v);
            }
        }

        let count = |key: &str, default: f64| -> Result<f64, ConfigError> {
            match b.get(key) {
                Some(e) => number(&e.value, key, e.line),
                None => Ok(default),
            }
        };
        let samples = count("samples", 20.0)?;
        if samples < 1.0 || samples.fract() != 0.0 {
            return Err(config_err("samples", None, "must be a positive integer"));
        }
        let seed = count("seed", 0.0)?;
        if seed < 0.0 || seed.fract() != 0.0 || seed > u64::MAX as f64 {
            return Err(config_err("seed", None, "must be a non-negative integer"));
        }

        let (mut output_dir, mut prefix, mut stride) = (None, name.replace(' ', "_"), 1usize);
        if let Some(e) = b.get("output") {
            let ob = sub_block(e, "output")?;
            check_keys(ob, "output", &["dir", "prefix", "stride"])?;
            if let Some(d) = ob.get("dir") {
                output_dir = Some(as_str(d, "output.dir")?.to_string());
            }
            if let Some(p) = ob.get("prefix") {
                prefix = as_str(p, "output.prefix")?.to_string();
            }
            if let Some(s) = ob.get("stride") {
                let v = number(&s.value, "output.stride", s.line)?;
                if v < 1.0 || v.fract() != 0.0 {
                    return Err(config_err("output.stride", Some(s.line), "must be a positive integer"));
                }
                stride = v as usize;
            }
        }

        let (mut points, mut laplacian) = (Vec::new(), LaplacianChoice::Minus);
        if let Some(e) = b.get("curvature") {
            let cb = sub_block(e, "curvature")?;
            check_keys(cb, "curvature", &["points", "laplacian"])?;
            if let Some(pe) = cb.get("points") {
                match &pe.value {
                    Value::List(items) => {
                        for item in items {
                            points.push(numbers(item, "curvature.points", pe.line)?);
                        }
                    }
                    _ => return Err(config_err("curvature.points", Some(pe.line), "expected a list of points")),
                }
            }
            if let Some(le) = cb.get("laplacian") {
                laplacian = match as_str(le, "curvature.laplacian")? {
                    "calibrate" => LaplacianChoice::Calibrate,
                    "plus" => LaplacianChoice::Plus,
                    "minus" => LaplacianChoice::Minus,
                    other => {
                        return Err(config_err(
                            "curvature.laplacian",
                            Some(le.line),
                            format!("`{other}` is not one of calibrate, plus, minus"),
                        ))
                    }
                };
            }
        }

        let mut fd = FdConfig::default();
        if let Some(e) = b.get("fd") {
            let fb = sub_block(e, "fd")?;
            check_keys(fb, "fd", &["step", "field_step", "outer_step"])?;
            for entry in &fb.entries {
                let key = format!("fd.{}", entry.key);
                let v = number(&entry.value, &key, entry.line)?;
                if v <= 0.0 {
                    return Err(config_err(&key, Some(entry.line), "step must be positive"));
                }
                match entry.key.as_str() {
                    "step" => fd.step = v,
                    "field_step" => fd.field_step = v,
                    _ => fd.outer_step = v,
                }
            }
        }

        if product.is_none() && manifold.is_none() && !matches!(&map, Some(MapSpec::Named(n)) if n == "heisenberg") {
            return Err(config_err(
                "warped_product",
                None,
                "a warped_product block, a manifold or the heisenberg map is required",
            ));
        }

        Ok(Scenario {
            name,
            product,
            manifold,
            map,
            clairaut_g,
            launches,
            checks,
            tolerances,
            samples: samples as usize,
            seed: seed as u64,
            output_dir,
            prefix,
            stride,
            points,
            laplacian,
            fd,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# a comment
name = "demo"
warped_product { base = "interval(0.05,3.09)", fiber = "circle", warp = "sin(x1)" }
map = pi1
launch {
  point = [pi/2, 0]
  velocity = [cos(pi/4), sin(pi/4)]
  t_end = 5
}
checks = ["clairaut", "angle-identity"]
tolerances { clairaut = 1e-4 }
seed = 7
"#;

    #[test]
    fn parses_sample() {
        let s = Scenario::parse(SAMPLE, &[]).unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.map, Some(MapSpec::Named("pi1".into())));
        assert_eq!(s.launches.len(), 1);
        assert!((s.launches[0].point[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(s.launches[0].dt, 1e-3);
        assert_eq!(s.checks, vec!["clairaut", "angle-identity"]);
        assert_eq!(s.seed, 7);
        assert_eq!(s.tolerances["clairaut"], 1e-4);
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let s = Scenario::parse(
            SAMPLE,
            &[
                "warped_product.warp=\"exp(x1)\"".into(),
                "seed=9".into(),
                "tolerances.angle-identity=1e-2".into(),
                "fd.step=2e-5".into(),
            ],
        )
        .unwrap();
        assert_eq!(s.product.unwrap().warp, "exp(x1)");
        assert_eq!(s.seed, 9);
        assert_eq!(s.tolerances["angle-identity"], 1e-2);
        assert_eq!(s.fd.step, 2e-5);
    }

    #[test]
    fn errors_name_the_key() {
        let e = Scenario::parse("checks = [x]\nbogus = 1\nmanifold = line", &[]).unwrap_err();
        assert_eq!(e.key, "bogus");
        assert_eq!(e.line, Some(2));
        let e = Scenario::parse("manifold = line\nchecks = []", &[]).unwrap_err();
        assert_eq!(e.key, "checks");
        let e = Scenario::parse("manifold = line\nchecks = [a]\nseed = -1", &[]).unwrap_err();
        assert_eq!(e.key, "seed");
        let e = Scenario::parse("manifold = line\nchecks = [a]\nwarped_product { base = line }", &[]).unwrap_err();
        assert_eq!(e.key, "warped_product.fiber");
        assert!(parse_block("a = \"open").is_err());
        assert!(parse_block("a { b = 1").is_err());
    }
}
