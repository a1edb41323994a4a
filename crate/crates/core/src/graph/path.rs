use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{DialogGraph, GraphError, NodeId, NodeKind, Result, Value};

/// Variable name to value.
pub type Assignments = BTreeMap<String, Value>;

/// How a trajectory leaves a node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Step {
    /// Follow the answer at this declaration index.
    Answer { index: usize, id: String },
    /// Logic node: matching condition index, `None` for the default branch.
    Branch(Option<usize>),
}

impl DialogGraph {
    /// Edges leaving `node` when variables take the given values; logic nodes
    /// have exactly one live edge.
    pub fn live_edges(&self, node: &NodeId, values: &Assignments) -> Vec<(Step, NodeId)> {
        let Some(n) = self.node(node) else {
            return Vec::new();
        };
        if n.kind == NodeKind::Logic {
            let b = n.branches.as_ref().expect("validated logic node");
            let choice = b.select(values);
            return vec![(Step::Branch(choice), b.target(choice).clone())];
        }
        n.answers
            .iter()
            .enumerate()
            .map(|(index, a)| {
                (
                    Step::Answer {
                        index,
                        id: a.id.clone(),
                    },
                    a.target.clone(),
                )
            })
            .collect()
    }

    /// Breadth-first shortest path from the start node to `goal`. Ties go to
    /// the earlier-declared answer.
    pub fn shortest_trajectory(
        &self,
        goal: &NodeId,
        assignments: &Assignments,
    ) -> Result<Vec<(NodeId, Step)>> {
        self.shortest_path_from(&self.start, goal, assignments)
    }

    pub fn shortest_path_from(
        &self,
        from: &NodeId,
        goal: &NodeId,
        assignments: &Assignments,
    ) -> Result<Vec<(NodeId, Step)>> {
        let from_idx = self
            .idx(from)
            .ok_or_else(|| GraphError::UnknownNode(from.as_str().to_owned()))?;
        let goal_idx = self
            .idx(goal)
            .ok_or_else(|| GraphError::UnknownNode(goal.as_str().to_owned()))?;
        let mut parent: Vec<Option<(usize, Step)>> = vec![None; self.len()];
        let mut seen = vec![false; self.len()];
        seen[from_idx] = true;
        let mut queue = VecDeque::from([from_idx]);
        while let Some(i) = queue.pop_front() {
            if i == goal_idx {
                let mut path = Vec::new();
                let mut cur = i;
                while let Some((p, step)) = parent[cur].clone() {
                    path.push((self.nodes[p].id.clone(), step));
                    cur = p;
                }
                path.reverse();
                return Ok(path);
            }
            for (step, target) in self.live_edges(&self.nodes[i].id, assignments) {
                let j = self.index[&target];
                if !seen[j] {
                    seen[j] = true;
                    parent[j] = Some((i, step));
                    queue.push_back(j);
                }
            }
        }
        Err(GraphError::UnreachableGoal(goal.as_str().to_owned()))
    }

    /// Target of a trajectory step taken at `node`.
    pub fn step_target(&self, node: &NodeId, step: &Step) -> Option<NodeId> {
        let n = self.node(node)?;
        match step {
            Step::Answer { index, .. } => n.answers.get(*index).map(|a| a.target.clone()),
            Step::Branch(choice) => n.branches.as_ref().map(|b| b.target(*choice).clone()),
        }
    }

    /// Nodes visited by a trajectory, ending with the goal.
    pub fn trajectory_nodes(&self, trajectory: &[(NodeId, Step)], goal: &NodeId) -> Vec<NodeId> {
        let mut nodes: Vec<NodeId> = trajectory.iter().map(|(n, _)| n.clone()).collect();
        nodes.push(goal.clone());
        nodes
    }
}
