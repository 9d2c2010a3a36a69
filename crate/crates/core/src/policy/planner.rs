//! Breadth-first ground-truth planner on the carry layer.

use std::collections::VecDeque;

use crate::model::features::SceneView;
use crate::model::{Action, Cell, Subgoal, TargetPredicate};
use crate::sim::{in_grid, CARRY_Z, GRID};

/// What the planner may assume about the gripper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperBelief {
    /// Read the open/closed bit from the observation.
    Observed,
    /// Assume the gripper is open whenever it is empty.
    AssumeOpenWhenEmpty,
}

/// A first move of a shortest 8-connected path on the carry layer from
/// `from` to any cell satisfying `goal`; `route` in `[0, 1)` picks among the
/// equally short ones. `None` if `from` already satisfies it or no goal cell is
/// reachable.
fn first_step(from: Cell, goal: impl Fn(Cell) -> bool, route: f64) -> Option<[i32; 3]> {
    if goal(from) {
        return None;
    }
    let idx = |c: Cell| (c.x * GRID.y + c.y) as usize;
    let neighbours = |c: Cell| {
        (-1..=1)
            .flat_map(move |dx| (-1..=1).map(move |dy| c.offset(dx, dy, 0)))
            .filter(move |n| *n != c && in_grid(*n))
    };
    // distances to the goal set, found backwards from every goal cell
    let mut dist = vec![u32::MAX; (GRID.x * GRID.y) as usize];
    let mut queue = VecDeque::new();
    for x in 0..GRID.x {
        for y in 0..GRID.y {
            let c = Cell::new(x, y, from.z);
            if goal(c) {
                dist[idx(c)] = 0;
                queue.push_back(c);
            }
        }
    }
    while let Some(c) = queue.pop_front() {
        for n in neighbours(c) {
            if dist[idx(n)] == u32::MAX {
                dist[idx(n)] = dist[idx(c)] + 1;
                queue.push_back(n);
            }
        }
    }
    let d = dist[idx(from)];
    if d == u32::MAX {
        return None;
    }
    let options: Vec<Cell> = neighbours(from).filter(|n| dist[idx(*n)] + 1 == d).collect();
    let pick = ((route * options.len() as f64) as usize).min(options.len() - 1);
    let n = options[pick];
    Some([n.x - from.x, n.y - from.y, 0])
}

/// Next action toward `subgoal` from the scene, or `None` when the subgoal is
/// unachievable from here (its item sits in the wrong container).
pub fn next_action(view: &SceneView, subgoal: &Subgoal, dim: usize, belief: GripperBelief) -> Option<Action> {
    next_action_via(view, subgoal, dim, belief, 0.0)
}

/// [`next_action`] with `route` choosing among equally short paths.
pub fn next_action_via(
    view: &SceneView,
    subgoal: &Subgoal,
    dim: usize,
    belief: GripperBelief,
    route: f64,
) -> Option<Action> {
    let TargetPredicate::InContainer { item, container } = subgoal.target;
    let item_v = view.object(item)?;
    let cont_v = view.object(container)?;
    match item_v.container {
        Some(c) if c == container => return Some(Action::noop(dim)),
        Some(_) => return None,
        None => {}
    }
    let g = view.gripper;
    if g.position.z < CARRY_Z {
        return Some(Action::move_by([0, 0, CARRY_Z - g.position.z], dim));
    }
    let here = g.position;
    let above = |c: Cell| Cell::new(c.x, c.y, CARRY_Z);
    match g.holding {
        Some(h) if h == item => {
            let target = above(cont_v.position);
            Some(match first_step(here, |c| c == target, route) {
                Some(d) => Action::move_by(d, dim),
                None => Action::release(dim),
            })
        }
        Some(_) => {
            // put the wrong object down on a free floor cell
            let free = |c: Cell| view.occupant(c.floor()).is_none();
            Some(match first_step(here, free, route) {
                Some(d) => Action::move_by(d, dim),
                None if free(here) => Action::release(dim),
                None => return None,
            })
        }
        None => {
            let open = match belief {
                GripperBelief::Observed => g.open,
                GripperBelief::AssumeOpenWhenEmpty => true,
            };
            if !open {
                return Some(Action::open(dim));
            }
            let pos = item_v.position;
            Some(match first_step(here, |c| c == above(pos), route) {
                Some(d) => Action::move_by(d, dim),
                None => Action::grasp(item, offset(here, pos), dim),
            })
        }
    }
}

pub fn offset(from: Cell, to: Cell) -> [i32; 3] {
    [to.x - from.x, to.y - from.y, to.z - from.z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionKind;
    use crate::sim::tests::{tiny_state, tiny_task};
    use crate::sim::{BlockWorld, Encoder};

    #[test]
    fn planner_completes_tiny_task() {
        let task = tiny_task();
        let w = BlockWorld::new(task.clone(), Encoder::new(16, 0), 8).unwrap();
        let mut s = tiny_state();
        for g in &task.subgoals {
            let mut guard = 0;
            while !w.subgoal_satisfied(g.id, &s) {
                let view = SceneView::decode(&w.encode(&s).raw_features).unwrap();
                let a = next_action(&view, g, 8, GripperBelief::Observed).expect("achievable");
                let (n, _, ev) = w.step(&s, &a).unwrap();
                assert!(ev.iter().all(|e| e.kind != crate::model::EventKind::ActionFailed), "{a} failed");
                s = n;
                guard += 1;
                assert!(guard < 30);
            }
        }
        assert!(w.task_satisfied(&s));
    }

    #[test]
    fn closed_empty_gripper_handling_depends_on_belief() {
        let task = tiny_task();
        let w = BlockWorld::new(task.clone(), Encoder::new(16, 0), 8).unwrap();
        let mut s = tiny_state();
        s.gripper.open = false;
        s.gripper.position = Cell::new(1, 1, 1);
        let view = SceneView::decode(&w.encode(&s).raw_features).unwrap();
        let seen = next_action(&view, &task.subgoals[0], 8, GripperBelief::Observed).unwrap();
        assert_eq!(seen.kind, ActionKind::Open);
        let blind = next_action(&view, &task.subgoals[0], 8, GripperBelief::AssumeOpenWhenEmpty).unwrap();
        assert_eq!(blind.kind, ActionKind::Grasp);
    }

    #[test]
    fn first_step_is_shortest() {
        let goal = Cell::new(3, 1, 1);
        let mut c = Cell::new(0, 0, 1);
        let mut steps = 0;
        while let Some(d) = first_step(c, |x| x == goal, 0.5) {
            c = c.offset(d[0], d[1], d[2]);
            steps += 1;
        }
        assert_eq!((c, steps), (goal, 3));
        assert!(first_step(Cell::new(2, 2, 1), |c| c == Cell::new(2, 2, 1), 0.0).is_none());
    }
}
