//! JSON ingestion and emission, CSV formatting.
//!
//! Node-valued fields are objects keyed by node id. Every parse error names
//! the offending field as a dotted path.

use serde_json::{json, Map, Value};

use crate::equilibrium::iid::IidEconomy;
use crate::equilibrium::{Economy, EquilibriumResult};
use crate::error::{Error, Result};
use crate::habits::Habits;
use crate::market::{Asset, Market, MarketSpec};
use crate::optimizer::{AgentSpec, SolveResult};
use crate::tree::{AdaptedProcess, EventTree, NodeSpec, Partition};

pub fn parse_json(text: &str) -> Result<Value> {
    serde_json::from_str(text).map_err(|e| {
        Error::schema(
            format!("<json>:{}:{}", e.line(), e.column()),
            format!("malformed JSON: {e}"),
        )
    })
}

fn join(prefix: &str, field: &str) -> String {
    if prefix.is_empty() {
        field.to_string()
    } else {
        format!("{prefix}.{field}")
    }
}

fn object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::schema(path_or_root(path), "expected an object"))
}

fn path_or_root(path: &str) -> String {
    if path.is_empty() {
        "<root>".into()
    } else {
        path.into()
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, prefix: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| Error::schema(join(prefix, name), "missing required field"))
}

fn number(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::schema(path, "expected a number"))
}

fn get_f64(obj: &Map<String, Value>, name: &str, prefix: &str) -> Result<f64> {
    number(field(obj, name, prefix)?, &join(prefix, name))
}

fn get_usize(obj: &Map<String, Value>, name: &str, prefix: &str) -> Result<usize> {
    field(obj, name, prefix)?
        .as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::schema(join(prefix, name), "expected a non-negative integer"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::schema(path, "expected an array"))
}

pub fn tree_from_json(v: &Value) -> Result<EventTree> {
    let obj = object(v, "")?;
    let horizon = get_usize(obj, "horizon", "")?;
    let nodes = array(field(obj, "nodes", "")?, "nodes")?;
    let mut specs = Vec::with_capacity(nodes.len());
    for (i, n) in nodes.iter().enumerate() {
        let p = format!("nodes[{i}]");
        let o = object(n, &p)?;
        let id = field(o, "id", &p)?
            .as_str()
            .ok_or_else(|| Error::schema(join(&p, "id"), "expected a string"))?
            .to_string();
        let parent = match o.get("parent") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => return Err(Error::schema(join(&p, "parent"), "expected a string or null")),
        };
        let prob = get_f64(o, "prob", &p)?;
        specs.push(NodeSpec { id, parent, prob });
    }
    EventTree::new(horizon, specs)
}

pub fn tree_to_json(tree: &EventTree) -> Value {
    let nodes: Vec<Value> = (0..tree.len())
        .map(|n| {
            json!({
                "id": tree.id(n),
                "parent": tree.parent(n).map(|p| tree.id(p).to_string()),
                "prob": tree.transition(n),
            })
        })
        .collect();
    json!({ "horizon": tree.horizon(), "nodes": nodes })
}

/// Reads `{node_id: value}`. Nodes listed in `optional` default to zero.
pub fn process_from_json(tree: &EventTree, v: &Value, path: &str, optional: &[usize]) -> Result<AdaptedProcess> {
    let obj = object(v, path)?;
    for key in obj.keys() {
        tree.lookup(key)
            .map_err(|_| Error::schema(join(path, key), "unknown node id"))?;
    }
    let mut out = AdaptedProcess::zeros(tree);
    for n in 0..tree.len() {
        let id = tree.id(n);
        match obj.get(id) {
            Some(x) => out.set(n, number(x, &join(path, id))?),
            None if optional.contains(&n) => {}
            None => return Err(Error::schema(join(path, id), "missing value for node")),
        }
    }
    Ok(out)
}

pub fn process_to_json(tree: &EventTree, x: &AdaptedProcess) -> Value {
    let mut m = Map::new();
    for n in 0..tree.len() {
        m.insert(tree.id(n).to_string(), json!(x.at(n)));
    }
    Value::Object(m)
}

/// Partitions given as one list of blocks (lists of node ids) per depth `1..=T`.
fn partitions_from_json(tree: &EventTree, v: &Value, path: &str, same_parent: bool) -> Result<Vec<Partition>> {
    let levels = array(v, path)?;
    if levels.len() != tree.horizon() {
        return Err(Error::schema(path, format!("expected {} levels (depths 1..T)", tree.horizon())));
    }
    let mut out = vec![Partition::trivial(tree, 0)];
    for (i, lv) in levels.iter().enumerate() {
        let p = format!("{path}[{i}]");
        let mut blocks = Vec::new();
        for (j, b) in array(lv, &p)?.iter().enumerate() {
            let bp = format!("{p}[{j}]");
            let mut block = Vec::new();
            for id in array(b, &bp)? {
                let s = id.as_str().ok_or_else(|| Error::schema(&bp, "expected node ids"))?;
                block.push(tree.lookup(s).map_err(|_| Error::schema(&bp, format!("unknown node `{s}`")))?);
            }
            blocks.push(block);
        }
        let part = Partition::new(tree, i + 1, blocks, same_parent).map_err(|e| match e {
            Error::Schema { message, .. } => Error::schema(&p, message),
            other => other,
        })?;
        out.push(part);
    }
    Ok(out)
}

fn partitions_to_json(tree: &EventTree, parts: &[Partition]) -> Value {
    Value::Array(
        parts[1..]
            .iter()
            .map(|p| {
                json!(p
                    .blocks
                    .iter()
                    .map(|b| b.iter().map(|&n| tree.id(n).to_string()).collect::<Vec<_>>())
                    .collect::<Vec<_>>())
            })
            .collect(),
    )
}

/// A market object embeds the tree fields (`horizon`, `nodes`) at top level.
pub fn market_from_json(v: &Value) -> Result<Market> {
    let tree = tree_from_json(v)?;
    let obj = object(v, "")?;
    let interest = match obj.get("interest") {
        Some(x) => process_from_json(&tree, x, "interest", &[0])?,
        None => return Err(Error::schema("interest", "missing required field")),
    };
    let mut assets = Vec::new();
    if let Some(a) = obj.get("assets") {
        for (i, item) in array(a, "assets")?.iter().enumerate() {
            let p = format!("assets[{i}]");
            let o = object(item, &p)?;
            let name = match o.get("name") {
                Some(Value::String(s)) => s.clone(),
                Some(_) => return Err(Error::schema(join(&p, "name"), "expected a string")),
                None => format!("asset{i}"),
            };
            let prices = process_from_json(&tree, field(o, "prices", &p)?, &join(&p, "prices"), &[])?;
            let dividends = match o.get("dividends") {
                Some(d) => {
                    let all: Vec<usize> = (0..tree.len()).collect();
                    process_from_json(&tree, d, &join(&p, "dividends"), &all)?
                }
                None => AdaptedProcess::zeros(&tree),
            };
            assets.push(Asset {
                name,
                prices,
                dividends,
            });
        }
    }
    let classc_blocks = match obj.get("classC_blocks") {
        Some(Value::Null) | None => None,
        Some(x) => Some(partitions_from_json(&tree, x, "classC_blocks", true)?),
    };
    let idio_factor = match obj.get("idio_factor") {
        Some(Value::Null) | None => None,
        Some(x) => Some(partitions_from_json(&tree, x, "idio_factor", false)?),
    };
    Market::new(MarketSpec {
        tree,
        assets,
        interest,
        classc_blocks,
        idio_factor,
    })
}

pub fn market_to_json(market: &Market) -> Value {
    let spec = market.spec();
    let tree = &spec.tree;
    let mut v = tree_to_json(tree);
    let o = v.as_object_mut().expect("tree json is an object");
    o.insert("interest".into(), process_to_json(tree, &spec.interest));
    o.insert(
        "assets".into(),
        Value::Array(
            spec.assets
                .iter()
                .map(|a| {
                    json!({
                        "name": a.name,
                        "prices": process_to_json(tree, &a.prices),
                        "dividends": process_to_json(tree, &a.dividends),
                    })
                })
                .collect(),
        ),
    );
    if let Some(h) = &spec.classc_blocks {
        o.insert("classC_blocks".into(), partitions_to_json(tree, h));
    }
    if let Some(f) = &spec.idio_factor {
        o.insert("idio_factor".into(), partitions_to_json(tree, f));
    }
    v
}

fn habits_from_json(tree: &EventTree, obj: &Map<String, Value>, prefix: &str) -> Result<Habits> {
    match (obj.get("beta"), obj.get("beta_matrix")) {
        (Some(_), Some(_)) => Err(Error::schema(join(prefix, "beta"), "give either beta or beta_matrix, not both")),
        (Some(b), None) => Habits::static_beta(tree.horizon(), number(b, &join(prefix, "beta"))?)
            .map_err(|e| prefix_err(e, prefix)),
        (None, Some(m)) => {
            let p = join(prefix, "beta_matrix");
            let rows = array(m, &p)?;
            let mut out = Vec::with_capacity(rows.len());
            for (i, r) in rows.iter().enumerate() {
                let rp = format!("{p}[{i}]");
                out.push(
                    array(r, &rp)?
                        .iter()
                        .enumerate()
                        .map(|(j, x)| number(x, &format!("{rp}[{j}]")))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            Habits::from_rows(out).map_err(|e| prefix_err(e, prefix))
        }
        (None, None) => Ok(Habits::none(tree.horizon())),
    }
}

pub fn agent_from_json(tree: &EventTree, v: &Value, prefix: &str) -> Result<AgentSpec> {
    let obj = object(v, prefix)?;
    let gamma = get_f64(obj, "gamma", prefix)?;
    let rho = match obj.get("rho") {
        Some(r) => number(r, &join(prefix, "rho"))?,
        None => 0.0,
    };
    let habits = habits_from_json(tree, obj, prefix)?;
    let eps = process_from_json(tree, field(obj, "endowment", prefix)?, &join(prefix, "endowment"), &[])?;
    AgentSpec::new(tree, gamma, rho, habits, eps).map_err(|e| prefix_err(e, prefix))
}

pub fn agent_to_json(tree: &EventTree, a: &AgentSpec) -> Value {
    let mut v = json!({
        "gamma": a.gamma,
        "rho": a.rho,
        "endowment": process_to_json(tree, &a.endowment),
    });
    let o = v.as_object_mut().expect("object");
    match a.habits.as_static() {
        Some(b) => o.insert("beta".into(), json!(b)),
        None => o.insert("beta_matrix".into(), json!(a.habits.rows())),
    };
    v
}

/// `{"market": {...}, "agent": {...}}`.
pub fn problem_from_json(v: &Value) -> Result<(Market, AgentSpec)> {
    let obj = object(v, "")?;
    let market = market_from_json(field(obj, "market", "")?).map_err(|e| prefix_err(e, "market"))?;
    let agent = agent_from_json(market.tree(), field(obj, "agent", "")?, "agent")?;
    Ok((market, agent))
}

fn prefix_err(e: Error, p: &str) -> Error {
    match e {
        Error::Schema { field, message } => Error::schema(join(p, &field), message),
        other => other,
    }
}

/// Tree fields at top level, a common `beta` and an `agents` list. Agents may
/// repeat `beta`; it must then agree.
pub fn economy_from_json(v: &Value) -> Result<Economy> {
    let tree = tree_from_json(v)?;
    let obj = object(v, "")?;
    let beta = match obj.get("beta") {
        Some(b) => Some(number(b, "beta")?),
        None => None,
    };
    let list = array(field(obj, "agents", "")?, "agents")?;
    let mut agents = Vec::with_capacity(list.len());
    for (i, a) in list.iter().enumerate() {
        let p = format!("agents[{i}]");
        let mut a = a.clone();
        if let (Some(b), Some(o)) = (beta, a.as_object_mut()) {
            match o.get("beta") {
                Some(x) if x.as_f64() != Some(b) => {
                    return Err(Error::schema(join(&p, "beta"), "disagrees with the economy-wide beta"))
                }
                _ => {
                    o.insert("beta".into(), json!(b));
                }
            }
        }
        agents.push(agent_from_json(&tree, &a, &p)?);
    }
    Economy::new(tree, agents)
}

pub fn economy_to_json(e: &Economy) -> Value {
    let mut v = tree_to_json(&e.tree);
    let o = v.as_object_mut().expect("object");
    o.insert("beta".into(), json!(e.beta));
    o.insert(
        "agents".into(),
        Value::Array(
            e.agents
                .iter()
                .map(|a| {
                    json!({
                        "gamma": a.gamma,
                        "rho": a.rho,
                        "endowment": process_to_json(&e.tree, &a.endowment),
                    })
                })
                .collect(),
        ),
    );
    v
}

pub fn equilibrium_to_json(tree: &EventTree, r: &EquilibriumResult) -> Value {
    json!({
        "M": process_to_json(tree, &r.m),
        "Mtilde": process_to_json(tree, &r.mtilde),
        "lambdas": r.lambdas,
        "consumptions": r.consumptions.iter().map(|c| process_to_json(tree, c)).collect::<Vec<_>>(),
        "clearing_residual": r.clearing_residual,
        "budget_residual": r.budget_residual,
        "excess_demand": r.excess_demand,
        "iterations": r.iterations,
    })
}

fn f64_list(v: &Value, path: &str) -> Result<Vec<f64>> {
    array(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| number(x, &format!("{path}[{i}]")))
        .collect()
}

pub fn equilibrium_from_json(tree: &EventTree, v: &Value) -> Result<EquilibriumResult> {
    let obj = object(v, "")?;
    let m = process_from_json(tree, field(obj, "M", "")?, "M", &[])?;
    let mtilde = process_from_json(tree, field(obj, "Mtilde", "")?, "Mtilde", &[])?;
    let lambdas = f64_list(field(obj, "lambdas", "")?, "lambdas")?;
    let consumptions = array(field(obj, "consumptions", "")?, "consumptions")?
        .iter()
        .enumerate()
        .map(|(i, c)| process_from_json(tree, c, &format!("consumptions[{i}]"), &[]))
        .collect::<Result<Vec<_>>>()?;
    if consumptions.len() != lambdas.len() {
        return Err(Error::schema("consumptions", "one consumption plan per weight required"));
    }
    if !(m.at(0) > 0.0) || (0..tree.len()).any(|n| !(m.at(n) > 0.0)) {
        return Err(Error::schema("M", "state-price density must be positive"));
    }
    let excess_demand = f64_list(field(obj, "excess_demand", "")?, "excess_demand")?;
    Ok(EquilibriumResult {
        m,
        mtilde,
        lambdas,
        consumptions,
        clearing_residual: get_f64(obj, "clearing_residual", "")?,
        budget_residual: get_f64(obj, "budget_residual", "")?,
        excess_demand,
        iterations: get_usize(obj, "iterations", "")?,
    })
}

pub fn solve_to_json(tree: &EventTree, r: &SolveResult) -> Value {
    json!({
        "c": process_to_json(tree, &r.c),
        "W": process_to_json(tree, &r.w),
        "R": process_to_json(tree, &r.r),
        "utility": r.diagnostics.utility,
        "foc_residual": r.diagnostics.foc_residual,
        "iterations": r.diagnostics.iterations,
        "method": r.diagnostics.method,
    })
}

/// `{"values", "probs", "gamma", "rho"?, "beta"?, "horizon"?}`; the horizon
/// defaults to 1.
pub fn iid_from_json(v: &Value) -> Result<(IidEconomy, usize)> {
    let obj = object(v, "")?;
    let values = f64_list(field(obj, "values", "")?, "values")?;
    let probs = f64_list(field(obj, "probs", "")?, "probs")?;
    let gamma = get_f64(obj, "gamma", "")?;
    let rho = obj.get("rho").map(|r| number(r, "rho")).transpose()?.unwrap_or(0.0);
    let beta = obj.get("beta").map(|r| number(r, "beta")).transpose()?.unwrap_or(0.0);
    let horizon = match obj.get("horizon") {
        Some(_) => get_usize(obj, "horizon", "")?,
        None => 1,
    };
    if horizon == 0 {
        return Err(Error::schema("horizon", "horizon must be at least 1"));
    }
    Ok((IidEconomy::new(values, probs, gamma, rho, beta)?, horizon))
}

/// C `%.17g`: 17 significant digits, shortest of fixed and exponent notation,
/// trailing zeros removed.
pub fn fmt_g17(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.16e}", x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mant = strip_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mant}e{sign}{:02}", exp.abs())
    } else {
        let prec = (16 - exp) as usize;
        strip_zeros(&format!("{:.*}", prec, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn csv(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let cells: Vec<String> = r.into_iter().map(fmt_g17).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
