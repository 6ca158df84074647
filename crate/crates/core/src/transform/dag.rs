//! Declarative transformation DAGs and their execution order.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ops::{Counter, Predicate};
use super::sessionize::DEFAULT_GAP_MS;

/// Name of the pseudo-table backed by the raw log.
pub const RAW: &str = "raw";

fn default_version() -> u32 {
    1
}

fn default_gap() -> i64 {
    DEFAULT_GAP_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OpSpec {
    /// Raw payloads to interactions; bad records go to the `rejects` table.
    Explode { rejects: String },
    Sessionize {
        #[serde(default = "default_gap")]
        gap_ms: i64,
    },
    Filter { predicate: Predicate },
    Aggregate { group_by: Vec<String>, counters: Vec<Counter> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformNode {
    pub name: String,
    #[serde(default = "default_version")]
    pub version: u32,
    pub inputs: Vec<String>,
    pub op: OpSpec,
    pub output: String,
}

impl TransformNode {
    /// Every table this node writes: its output, plus the rejects table for
    /// explode.
    pub fn outputs(&self) -> Vec<&str> {
        let mut v = alloc::vec![self.output.as_str()];
        if let OpSpec::Explode { rejects } = &self.op {
            v.push(rejects.as_str());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformDag {
    pub nodes: Vec<TransformNode>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DagError {
    #[error("CYCLE: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("UNKNOWN_INPUT: node `{node}` reads `{input}`, which no node produces")]
    UnknownInput { node: String, input: String },
    #[error("duplicate node name `{0}`")]
    DuplicateNode(String),
    #[error("table `{0}` is produced by more than one node")]
    DuplicateOutput(String),
    #[error("node `{node}`: {reason}")]
    InvalidNode { node: String, reason: &'static str },
}

impl TransformDag {
    pub fn node(&self, name: &str) -> Option<&TransformNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    /// Node producing `table`, if any.
    pub fn producer(&self, table: &str) -> Option<&TransformNode> {
        self.nodes.iter().find(|n| n.outputs().contains(&table))
    }

    fn check_shape(&self) -> Result<BTreeMap<&str, usize>, DagError> {
        let mut names = BTreeSet::new();
        let mut producers: BTreeMap<&str, usize> = BTreeMap::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            if !names.insert(node.name.as_str()) {
                return Err(DagError::DuplicateNode(node.name.clone()));
            }
            let invalid = |reason| DagError::InvalidNode {
                node: node.name.clone(),
                reason,
            };
            match &node.op {
                OpSpec::Explode { rejects } => {
                    if node.inputs.len() != 1 || node.inputs[0] != RAW {
                        return Err(invalid("explode reads exactly the `raw` table"));
                    }
                    if rejects == &node.output {
                        return Err(invalid("rejects table must differ from output"));
                    }
                }
                _ => {
                    if node.inputs.len() != 1 {
                        return Err(invalid("operator takes exactly one input table"));
                    }
                    if node.inputs[0] == RAW {
                        return Err(invalid("only explode may read `raw`"));
                    }
                }
            }
            for out in node.outputs() {
                if out == RAW || producers.insert(out, idx).is_some() {
                    return Err(DagError::DuplicateOutput(out.into()));
                }
            }
        }
        for node in &self.nodes {
            for input in &node.inputs {
                if input != RAW && !producers.contains_key(input.as_str()) {
                    return Err(DagError::UnknownInput {
                        node: node.name.clone(),
                        input: input.clone(),
                    });
                }
            }
        }
        Ok(producers)
    }

    pub fn validate(&self) -> Result<(), DagError> {
        self.plan().map(|_| ())
    }

    /// Topological order: every node appears after the producers of all its
    /// inputs. Ties follow declaration order.
    pub fn plan(&self) -> Result<Vec<&TransformNode>, DagError> {
        let producers = self.check_shape()?;
        let deps: Vec<Vec<usize>> = self
            .nodes
            .iter()
            .map(|n| {
                n.inputs
                    .iter()
                    .filter_map(|i| producers.get(i.as_str()).copied())
                    .collect()
            })
            .collect();

        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            New,
            Open,
            Done,
        }
        let mut marks = alloc::vec![Mark::New; self.nodes.len()];
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut path: Vec<usize> = Vec::new();

        fn visit(
            at: usize,
            deps: &[Vec<usize>],
            marks: &mut [Mark],
            path: &mut Vec<usize>,
            order: &mut Vec<usize>,
        ) -> Result<(), Vec<usize>> {
            match marks[at] {
                Mark::Done => return Ok(()),
                Mark::Open => {
                    let from = path.iter().position(|&p| p == at).unwrap();
                    return Err(path[from..].to_vec());
                }
                Mark::New => {}
            }
            marks[at] = Mark::Open;
            path.push(at);
            for &d in &deps[at] {
                visit(d, deps, marks, path, order)?;
            }
            path.pop();
            marks[at] = Mark::Done;
            order.push(at);
            Ok(())
        }

        for start in 0..self.nodes.len() {
            visit(start, &deps, &mut marks, &mut path, &mut order).map_err(|cycle| {
                DagError::Cycle(cycle.into_iter().map(|i| self.nodes[i].name.clone()).collect())
            })?;
        }
        Ok(order.into_iter().map(|i| &self.nodes[i]).collect())
    }

    /// `target` and everything it transitively depends on, in plan order.
    pub fn plan_for(&self, target: &str) -> Result<Vec<&TransformNode>, DagError> {
        let full = self.plan()?;
        let mut needed: BTreeSet<&str> = BTreeSet::new();
        let mut stack = alloc::vec![target];
        while let Some(name) = stack.pop() {
            if !needed.insert(name) {
                continue;
            }
            if let Some(node) = self.node(name) {
                for i in &node.inputs {
                    if let Some(p) = self.producer(i) {
                        stack.push(p.name.as_str());
                    }
                }
            }
        }
        Ok(full.into_iter().filter(|n| needed.contains(n.name.as_str())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn filter(name: &str, input: &str, output: &str) -> TransformNode {
        TransformNode {
            name: name.to_string(),
            version: 1,
            inputs: vec![input.to_string()],
            op: OpSpec::Filter {
                predicate: Predicate::NotNull {
                    column: "sku".to_string(),
                },
            },
            output: output.to_string(),
        }
    }

    fn explode(name: &str, output: &str) -> TransformNode {
        TransformNode {
            name: name.to_string(),
            version: 1,
            inputs: vec![RAW.to_string()],
            op: OpSpec::Explode {
                rejects: "rejects".to_string(),
            },
            output: output.to_string(),
        }
    }

    #[test]
    fn two_node_cycle_is_named() {
        let dag = TransformDag {
            nodes: vec![filter("A", "b_out", "a_out"), filter("B", "a_out", "b_out")],
        };
        assert_eq!(dag.plan().unwrap_err(), DagError::Cycle(vec!["A".to_string(), "B".to_string()]));
    }

    #[test]
    fn single_node() {
        let dag = TransformDag {
            nodes: vec![explode("x", "interactions")],
        };
        let plan = dag.plan().unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].name, "x");
    }

    #[test]
    fn diamond_respects_dependencies() {
        let mut z = filter("z", "x_out", "z_out");
        // z is declared first to make sure ordering is not declaration order.
        z.inputs = vec!["x_out".to_string()];
        let dag = TransformDag {
            nodes: vec![
                z,
                filter("x", "base", "x_out"),
                filter("y", "base", "y_out"),
                explode("e", "base"),
            ],
        };
        let plan = dag.plan().unwrap();
        let pos = |n: &str| plan.iter().position(|p| p.name == n).unwrap();
        assert!(pos("e") < pos("x") && pos("e") < pos("y"));
        assert!(pos("x") < pos("z"));
        assert_eq!(plan.len(), 4);
    }

    #[test]
    fn unknown_input_and_duplicates() {
        let dag = TransformDag {
            nodes: vec![filter("a", "ghost", "out")],
        };
        assert!(matches!(dag.plan(), Err(DagError::UnknownInput { .. })));

        let dag = TransformDag {
            nodes: vec![explode("a", "t"), explode("b", "t")],
        };
        assert!(matches!(dag.plan(), Err(DagError::DuplicateOutput(_))));

        let dag = TransformDag {
            nodes: vec![explode("a", "t"), filter("a", "t", "u")],
        };
        assert!(matches!(dag.plan(), Err(DagError::DuplicateNode(_))));

        let dag = TransformDag {
            nodes: vec![filter("a", RAW, "u")],
        };
        assert!(matches!(dag.plan(), Err(DagError::InvalidNode { .. })));
    }

    #[test]
    fn plan_for_selects_ancestors() {
        let dag = TransformDag {
            nodes: vec![explode("e", "base"), filter("x", "base", "x_out"), filter("y", "base", "y_out")],
        };
        let names: Vec<&str> = dag.plan_for("x").unwrap().iter().map(|n| n.name.as_str()).collect();
        assert_eq!(names, vec!["e", "x"]);
    }

    #[test]
    fn spec_document_parses() {
        let doc = r#"{"nodes":[
            {"name":"explode","inputs":["raw"],"op":{"kind":"explode","rejects":"rejects"},"output":"interactions"},
            {"name":"sessionize","version":2,"inputs":["interactions"],"op":{"kind":"sessionize"},"output":"sessions"}
        ]}"#;
        let dag: TransformDag = serde_json::from_str(doc).unwrap();
        assert_eq!(dag.nodes[0].version, 1);
        assert_eq!(dag.nodes[1].op, OpSpec::Sessionize { gap_ms: DEFAULT_GAP_MS });
        assert!(dag.validate().is_ok());
    }
}
