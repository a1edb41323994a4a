use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{
    Answer, Comparator, Condition, DialogGraph, DialogNode, GraphError, LogicBranches, NodeId,
    NodeKind, Result, Value, ValueType, VariableSpec,
};

#[derive(Clone, Debug, Default)]
pub struct ParseOptions {
    /// Treat nodes not reachable from the start node as a hard error.
    pub unreachable_is_error: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GraphWarning {
    Unreachable(Vec<String>),
    DuplicateQuestionsDropped { node: String, count: usize },
}

#[derive(Serialize, Deserialize)]
struct RawDocument {
    nodes: Vec<RawNode>,
    start: String,
    #[serde(default)]
    variables: Vec<RawVariable>,
}

#[derive(Serialize, Deserialize)]
struct RawNode {
    id: String,
    kind: NodeKind,
    #[serde(default)]
    text: String,
    #[serde(default)]
    answers: Vec<RawAnswer>,
    #[serde(default)]
    questions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    variable: Option<RawVariable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branches: Option<Vec<RawCondition>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    default: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawAnswer {
    id: String,
    text: String,
    target: String,
    #[serde(default)]
    paraphrases: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct RawVariable {
    name: String,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<Value>>,
}

#[derive(Serialize, Deserialize)]
struct RawCondition {
    var: String,
    op: Comparator,
    #[serde(rename = "const")]
    constant: Value,
    target: String,
}

/// Parses and validates a dataset graph document with default options.
/// Warnings are logged.
pub fn parse_graph(document: &str) -> Result<DialogGraph> {
    let (graph, warnings) = parse_graph_with(document, &ParseOptions::default())?;
    for w in warnings {
        log::warn!("{w:?}");
    }
    Ok(graph)
}

pub fn parse_graph_with(
    document: &str,
    options: &ParseOptions,
) -> Result<(DialogGraph, Vec<GraphWarning>)> {
    let raw: RawDocument = serde_json::from_str(document).map_err(|e| match e.classify() {
        serde_json::error::Category::Syntax | serde_json::error::Category::Eof => {
            GraphError::Syntax {
                line: e.line(),
                column: e.column(),
                message: e.to_string(),
            }
        }
        _ => GraphError::Schema(e.to_string()),
    })?;
    build(raw, options)
}

/// Canonical JSON form of a graph; `parse_graph(serialize_graph(g)) == g`.
pub fn serialize_graph(graph: &DialogGraph) -> String {
    let raw = RawDocument {
        start: graph.start.as_str().to_owned(),
        variables: graph.variables.iter().map(raw_variable).collect(),
        nodes: graph
            .nodes
            .iter()
            .map(|n| RawNode {
                id: n.id.as_str().to_owned(),
                kind: n.kind,
                text: n.text.clone(),
                answers: n
                    .answers
                    .iter()
                    .map(|a| RawAnswer {
                        id: a.id.clone(),
                        text: a.prototype_text.clone(),
                        target: a.target.as_str().to_owned(),
                        paraphrases: a.paraphrases.clone(),
                    })
                    .collect(),
                questions: n.questions.clone(),
                variable: n.variable.as_ref().map(raw_variable),
                branches: n.branches.as_ref().map(|b| {
                    b.conditions
                        .iter()
                        .map(|c| RawCondition {
                            var: c.variable.clone(),
                            op: c.comparator,
                            constant: c.constant.clone(),
                            target: c.target.as_str().to_owned(),
                        })
                        .collect()
                }),
                default: n.branches.as_ref().map(|b| b.default.as_str().to_owned()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&raw).expect("graph serializes")
}

fn raw_variable(v: &VariableSpec) -> RawVariable {
    let (ty, values) = match &v.value_type {
        ValueType::Boolean => ("boolean", None),
        ValueType::Number => (
            "number",
            v.number_choices
                .as_ref()
                .map(|c| c.iter().map(|x| Value::Number(*x)).collect()),
        ),
        ValueType::Enumeration(vals) => (
            "enumeration",
            Some(vals.iter().cloned().map(Value::Text).collect()),
        ),
    };
    RawVariable {
        name: v.name.clone(),
        ty: ty.to_owned(),
        values,
    }
}

fn variable_spec(raw: RawVariable) -> Result<VariableSpec> {
    let invalid = |reason: &str| GraphError::Schema(format!("variable {:?}: {reason}", raw.name));
    if raw.name.trim().is_empty() {
        return Err(GraphError::Schema("variable with empty name".into()));
    }
    let (value_type, number_choices) = match raw.ty.as_str() {
        "boolean" | "bool" => (ValueType::Boolean, None),
        "number" => {
            let choices = match &raw.values {
                None => None,
                Some(vals) => Some(
                    vals.iter()
                        .map(|v| match v {
                            Value::Number(n) => Ok(*n),
                            _ => Err(invalid("number choices must be numeric")),
                        })
                        .collect::<Result<Vec<f64>>>()?,
                ),
            };
            if choices.as_ref().is_some_and(|c| c.is_empty()) {
                return Err(invalid("empty number choices"));
            }
            (ValueType::Number, choices)
        }
        "enumeration" | "enum" => {
            let vals = raw
                .values
                .as_ref()
                .ok_or_else(|| invalid("enumeration without values"))?
                .iter()
                .map(|v| match v {
                    Value::Text(s) => Ok(s.clone()),
                    _ => Err(invalid("enumeration values must be strings")),
                })
                .collect::<Result<Vec<String>>>()?;
            if vals.is_empty() {
                return Err(invalid("empty enumeration"));
            }
            (ValueType::Enumeration(vals), None)
        }
        other => return Err(invalid(&format!("unknown type {other:?}"))),
    };
    Ok(VariableSpec {
        name: raw.name,
        value_type,
        number_choices,
    })
}

fn constant_matches(spec: &VariableSpec, value: &Value) -> bool {
    match (&spec.value_type, value) {
        (ValueType::Boolean, Value::Bool(_)) => true,
        (ValueType::Number, Value::Number(_)) => true,
        (ValueType::Enumeration(vals), Value::Text(s)) => vals.contains(s),
        _ => false,
    }
}

fn build(raw: RawDocument, options: &ParseOptions) -> Result<(DialogGraph, Vec<GraphWarning>)> {
    let mut warnings = Vec::new();

    let mut variables: Vec<VariableSpec> = Vec::new();
    for rv in raw.variables {
        let spec = variable_spec(rv)?;
        if variables.iter().any(|v| v.name == spec.name) {
            return Err(GraphError::DuplicateVariable(spec.name));
        }
        variables.push(spec);
    }

    let mut index = HashMap::new();
    for (i, n) in raw.nodes.iter().enumerate() {
        if n.id.trim().is_empty() {
            return Err(GraphError::EmptyNodeId);
        }
        if index.insert(NodeId::new(n.id.clone()), i).is_some() {
            return Err(GraphError::DuplicateNodeId(n.id.clone()));
        }
    }

    let resolve = |from: &str, target: &str| -> Result<NodeId> {
        let id = NodeId::new(target);
        if index.contains_key(&id) {
            Ok(id)
        } else {
            Err(GraphError::DanglingEdge {
                from: from.to_owned(),
                target: target.to_owned(),
            })
        }
    };

    let mut answer_ids = HashSet::new();
    let mut nodes = Vec::with_capacity(raw.nodes.len());
    for rn in raw.nodes {
        let invalid = |reason: &str| GraphError::InvalidNode {
            node: rn.id.clone(),
            reason: reason.to_owned(),
        };

        let mut answers = Vec::with_capacity(rn.answers.len());
        for ra in &rn.answers {
            if !answer_ids.insert(ra.id.clone()) {
                return Err(GraphError::DuplicateAnswerId(ra.id.clone()));
            }
            if ra.text.trim().is_empty() {
                return Err(invalid(&format!("answer {:?} has empty text", ra.id)));
            }
            answers.push(Answer {
                id: ra.id.clone(),
                prototype_text: ra.text.clone(),
                target: resolve(&rn.id, &ra.target)?,
                paraphrases: ra.paraphrases.clone(),
            });
        }

        let variable = match rn.variable {
            None => None,
            Some(rv) => {
                let name = rv.name.clone();
                let spec = variable_spec(rv)?;
                match variables.iter().find(|v| v.name == name) {
                    Some(declared) if declared.value_type == spec.value_type => {
                        Some(declared.clone())
                    }
                    Some(_) => return Err(invalid(&format!("variable {name:?} type mismatch"))),
                    None => {
                        return Err(GraphError::UndeclaredVariable {
                            node: rn.id.clone(),
                            variable: name,
                        })
                    }
                }
            }
        };

        let branches = match (rn.branches, rn.default) {
            (None, None) => None,
            (Some(conds), Some(default)) => {
                let mut conditions = Vec::with_capacity(conds.len());
                for rc in conds {
                    let spec = variables.iter().find(|v| v.name == rc.var).ok_or_else(|| {
                        GraphError::UndeclaredVariable {
                            node: rn.id.clone(),
                            variable: rc.var.clone(),
                        }
                    })?;
                    if rc.op.is_ordering() && spec.value_type != ValueType::Number {
                        return Err(invalid(&format!(
                            "ordering comparator on non-number variable {:?}",
                            rc.var
                        )));
                    }
                    if !constant_matches(spec, &rc.constant) {
                        return Err(invalid(&format!(
                            "constant {:?} does not fit variable {:?}",
                            rc.constant, rc.var
                        )));
                    }
                    conditions.push(Condition {
                        variable: rc.var,
                        comparator: rc.op,
                        constant: rc.constant,
                        target: resolve(&rn.id, &rc.target)?,
                    });
                }
                Some(LogicBranches {
                    conditions,
                    default: resolve(&rn.id, &default)?,
                })
            }
            (Some(_), None) => return Err(invalid("branches without default")),
            (None, Some(_)) => return Err(invalid("default without branches")),
        };

        // case-insensitive dedup, first occurrence wins
        let mut seen = HashSet::new();
        let before = rn.questions.len();
        let questions: Vec<String> = rn
            .questions
            .into_iter()
            .filter(|q| !q.trim().is_empty() && seen.insert(q.trim().to_lowercase()))
            .collect();
        if questions.len() < before {
            warnings.push(GraphWarning::DuplicateQuestionsDropped {
                node: rn.id.clone(),
                count: before - questions.len(),
            });
        }

        let node = DialogNode {
            id: NodeId::new(rn.id.clone()),
            kind: rn.kind,
            text: rn.text,
            answers,
            questions,
            variable,
            branches,
        };
        check_node_kind(&node)?;
        nodes.push(node);
    }

    let starts: Vec<String> = nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Start)
        .map(|n| n.id.as_str().to_owned())
        .collect();
    if starts.len() > 1 {
        return Err(GraphError::MultipleStart(starts));
    }
    let start = NodeId::new(raw.start.clone());
    match index.get(&start) {
        Some(&i) if nodes[i].kind == NodeKind::Start => {}
        _ => return Err(GraphError::BadStart(raw.start)),
    }

    let graph = DialogGraph {
        nodes,
        index,
        start,
        variables,
    };

    let reachable: HashSet<NodeId> = graph.reachable().into_iter().collect();
    let unreachable: Vec<String> = graph
        .nodes
        .iter()
        .filter(|n| !reachable.contains(&n.id))
        .map(|n| n.id.as_str().to_owned())
        .collect();
    if !unreachable.is_empty() {
        if options.unreachable_is_error {
            return Err(GraphError::Unreachable(unreachable));
        }
        warnings.push(GraphWarning::Unreachable(unreachable));
    }

    check_variable_collection(&graph)?;
    Ok((graph, warnings))
}

fn check_node_kind(node: &DialogNode) -> Result<()> {
    let invalid = |reason: &str| {
        Err(GraphError::InvalidNode {
            node: node.id.as_str().to_owned(),
            reason: reason.to_owned(),
        })
    };
    if node.kind != NodeKind::Variable && node.variable.is_some() {
        return invalid("only variable nodes carry a variable spec");
    }
    if node.kind != NodeKind::Logic && node.branches.is_some() {
        return invalid("only logic nodes carry branches");
    }
    match node.kind {
        NodeKind::Start if !node.questions.is_empty() => invalid("start node has questions"),
        NodeKind::Logic => {
            if !node.text.trim().is_empty() {
                return invalid("logic node has text");
            }
            if !node.answers.is_empty() {
                return invalid("logic node has answers");
            }
            match &node.branches {
                Some(b) if !b.conditions.is_empty() => Ok(()),
                _ => invalid("logic node needs at least one branch and a default"),
            }
        }
        NodeKind::Variable => {
            if node.variable.is_none() {
                return invalid("variable node without variable spec");
            }
            if node.answers.len() != 1 {
                return invalid("variable node needs exactly one outgoing answer");
            }
            if node.text.trim().is_empty() {
                return invalid("variable node has empty text");
            }
            Ok(())
        }
        NodeKind::Info | NodeKind::Question if node.text.trim().is_empty() => {
            invalid("empty node text")
        }
        _ => Ok(()),
    }
}

/// Every variable a logic node tests must be collected on all paths leading to it.
fn check_variable_collection(graph: &DialogGraph) -> Result<()> {
    let n = graph.nodes.len();
    let all: BTreeSet<&str> = graph.variables.iter().map(|v| v.name.as_str()).collect();
    let start = graph.index[&graph.start];

    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, node) in graph.nodes.iter().enumerate() {
        for t in node.successors() {
            preds[graph.index[t]].push(i);
        }
    }
    let reachable: HashSet<usize> = graph
        .reachable()
        .iter()
        .map(|id| graph.index[id])
        .collect();

    let collects = |i: usize| graph.nodes[i].variable.as_ref().map(|v| v.name.as_str());
    // must-collected sets at node entry; top = all variables
    let mut entry: Vec<BTreeSet<&str>> = vec![all.clone(); n];
    entry[start].clear();
    let mut changed = true;
    while changed {
        changed = false;
        for i in 0..n {
            if i == start || !reachable.contains(&i) {
                continue;
            }
            let mut acc: Option<BTreeSet<&str>> = None;
            for &p in preds[i].iter().filter(|p| reachable.contains(p)) {
                let mut out = entry[p].clone();
                if let Some(v) = collects(p) {
                    out.insert(v);
                }
                acc = Some(match acc {
                    None => out,
                    Some(a) => a.intersection(&out).copied().collect(),
                });
            }
            let next = acc.unwrap_or_default();
            if next != entry[i] {
                entry[i] = next;
                changed = true;
            }
        }
    }

    for &i in &reachable {
        if let Some(b) = &graph.nodes[i].branches {
            for c in &b.conditions {
                if !entry[i].contains(c.variable.as_str()) {
                    return Err(GraphError::VariableNotCollected {
                        node: graph.nodes[i].id.as_str().to_owned(),
                        variable: c.variable.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> &'static str {
        r#"{
          "start": "s",
          "nodes": [
            {"id": "s", "kind": "start", "text": "Hi", "answers": [{"id": "a1", "text": "go", "target": "n1"}]},
            {"id": "n1", "kind": "info", "text": "One", "answers": [{"id": "a2", "text": "next", "target": "n2"}]},
            {"id": "n2", "kind": "info", "text": "Two"}
          ]
        }"#
    }

    #[test]
    fn minimal_chain_parses() {
        let g = parse_graph(chain()).unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(g.start().as_str(), "s");
    }

    #[test]
    fn dangling_edge_names_target() {
        let doc = chain().replace(r#""target": "n2""#, r#""target": "n99""#);
        match parse_graph(&doc) {
            Err(GraphError::DanglingEdge { target, .. }) => assert_eq!(target, "n99"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_error_reports_position() {
        let err = parse_graph("{\n  \"start\": \"s\",\n  nodes: []\n}").unwrap_err();
        match err {
            GraphError::Syntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let doc = chain().replace(r#""id": "n2""#, r#""id": "n1""#);
        assert!(matches!(parse_graph(&doc), Err(GraphError::DuplicateNodeId(id)) if id == "n1"));
    }

    #[test]
    fn unreachable_is_warning_by_default_and_error_on_request() {
        let doc = chain().replace(
            r#"{"id": "n2", "kind": "info", "text": "Two"}"#,
            r#"{"id": "n2", "kind": "info", "text": "Two"}, {"id": "orphan", "kind": "info", "text": "x"}"#,
        );
        let (_, warnings) = parse_graph_with(&doc, &ParseOptions::default()).unwrap();
        assert_eq!(warnings, vec![GraphWarning::Unreachable(vec!["orphan".into()])]);
        let strict = ParseOptions {
            unreachable_is_error: true,
        };
        assert!(matches!(
            parse_graph_with(&doc, &strict),
            Err(GraphError::Unreachable(_))
        ));
    }

    #[test]
    fn undeclared_variable_in_condition() {
        let doc = r#"{
          "start": "s",
          "nodes": [
            {"id": "s", "kind": "start", "text": "Hi", "answers": [{"id": "a1", "text": "go", "target": "l"}]},
            {"id": "l", "kind": "logic", "branches": [{"var": "days", "op": ">", "const": 3, "target": "x"}], "default": "x"},
            {"id": "x", "kind": "info", "text": "X"}
          ]
        }"#;
        assert!(matches!(
            parse_graph(doc),
            Err(GraphError::UndeclaredVariable { variable, .. }) if variable == "days"
        ));
    }

    #[test]
    fn logic_before_collection_rejected() {
        let doc = r#"{
          "start": "s",
          "variables": [{"name": "days", "type": "number"}],
          "nodes": [
            {"id": "s", "kind": "start", "text": "Hi", "answers": [
              {"id": "a1", "text": "ask", "target": "v"},
              {"id": "a2", "text": "skip", "target": "l"}]},
            {"id": "v", "kind": "variable", "text": "How many days?", "variable": {"name": "days", "type": "number"},
             "answers": [{"id": "a3", "text": "value", "target": "l"}]},
            {"id": "l", "kind": "logic", "branches": [{"var": "days", "op": ">", "const": 3, "target": "x"}], "default": "x"},
            {"id": "x", "kind": "info", "text": "X"}
          ]
        }"#;
        assert!(matches!(
            parse_graph(doc),
            Err(GraphError::VariableNotCollected { node, .. }) if node == "l"
        ));
    }

    #[test]
    fn ordering_comparator_requires_number() {
        let doc = r#"{
          "start": "s",
          "variables": [{"name": "ok", "type": "boolean"}],
          "nodes": [
            {"id": "s", "kind": "start", "text": "Hi", "answers": [{"id": "a1", "text": "go", "target": "v"}]},
            {"id": "v", "kind": "variable", "text": "Ok?", "variable": {"name": "ok", "type": "boolean"},
             "answers": [{"id": "a3", "text": "value", "target": "l"}]},
            {"id": "l", "kind": "logic", "branches": [{"var": "ok", "op": "<", "const": true, "target": "x"}], "default": "x"},
            {"id": "x", "kind": "info", "text": "X"}
          ]
        }"#;
        assert!(matches!(parse_graph(doc), Err(GraphError::InvalidNode { .. })));
    }

    #[test]
    fn duplicate_questions_dropped_case_insensitively() {
        let doc = chain().replace(
            r#""text": "Two""#,
            r#""text": "Two", "questions": ["Why?", "why?", "How?"]"#,
        );
        let g = parse_graph(&doc).unwrap();
        assert_eq!(g.node_by_str("n2").unwrap().questions, vec!["Why?", "How?"]);
    }

    #[test]
    fn multiple_start_nodes_rejected() {
        let doc = chain().replace(r#""kind": "info", "text": "Two""#, r#""kind": "start", "text": "Two""#);
        assert!(matches!(parse_graph(&doc), Err(GraphError::MultipleStart(_))));
    }
}
