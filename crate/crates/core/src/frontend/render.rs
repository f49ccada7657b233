use serde_json::{json, Value};

use super::DaeSystem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    /// The input grammar; `parse(render(s))` reproduces `s`.
    Text,
    Json,
}

pub fn render(sys: &DaeSystem, format: Format) -> String {
    match format {
        Format::Text => render_text(sys),
        Format::Json => serde_json::to_string_pretty(&to_json(sys)).expect("json value serializes"),
    }
}

fn list(kw: &str, items: &[String], out: &mut String) {
    if !items.is_empty() {
        out.push_str(&format!("{kw} {};\n", items.join(", ")));
    }
}

fn render_text(sys: &DaeSystem) -> String {
    let mut out = String::new();
    if !sys.name.is_empty() {
        out.push_str(&format!("system {};\n", sys.name));
    }
    list("var", &sys.states, &mut out);
    list("aux", &sys.aux, &mut out);
    let funcs: Vec<String> = sys.funcs.iter().map(|(f, a)| format!("{f}({a})")).collect();
    list("fun", &funcs, &mut out);
    list("input", &sys.inputs, &mut out);
    let consts: Vec<String> = sys
        .consts
        .iter()
        .map(|(c, v)| match v {
            Some(v) => format!("{c} = {v}"),
            None => c.clone(),
        })
        .collect();
    list("const", &consts, &mut out);
    for (name, z) in &sys.zeros {
        out.push_str(&format!("zero {name}: {};\n", sys.text(z)));
    }
    if let Some((c, d)) = &sys.offsets {
        let join = |v: &[i64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        out.push_str(&format!("offsets c = ({}) d = ({});\n", join(c), join(d)));
    }
    for eq in &sys.equations {
        out.push_str(&format!("eq {}: {};\n", eq.name, sys.text(&eq.expr)));
    }
    out
}

pub fn to_json(sys: &DaeSystem) -> Value {
    json!({
        "name": sys.name,
        "states": sys.states,
        "aux": sys.aux,
        "functions": sys.funcs.iter().map(|(f, a)| json!({"name": f, "arity": a})).collect::<Vec<_>>(),
        "inputs": sys.inputs,
        "constants": sys.consts.iter().map(|(c, v)| json!({
            "name": c,
            "value": v.as_ref().map(|v| v.to_string()),
        })).collect::<Vec<_>>(),
        "zeros": sys.zeros.iter().map(|(n, z)| json!({"name": n, "expr": sys.text(z)})).collect::<Vec<_>>(),
        "offsets": sys.offsets.as_ref().map(|(c, d)| json!({"c": c, "d": d})),
        "equations": sys.equations.iter().map(|e| json!({"name": e.name, "expr": sys.text(&e.expr)})).collect::<Vec<_>>(),
    })
}
