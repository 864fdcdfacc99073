use std::ops::ControlFlow;

use super::RuleAtom;
use crate::kg::{EntityId, KnowledgeGraph};

/// Enumerate every extension of `binding` that satisfies all `atoms` in `kg`.
///
/// Atoms are joined greedily: at each step the remaining atom with the most
/// bound variables is matched, using the `(head, relation)` / `(tail,
/// relation)` indexes when one side is bound and an existence probe when
/// both are. `binding` is restored before returning.
pub fn for_each_body_binding<F>(
    kg: &KnowledgeGraph,
    atoms: &[RuleAtom],
    binding: &mut [Option<EntityId>],
    f: &mut F,
) -> ControlFlow<()>
where
    F: FnMut(&[Option<EntityId>]) -> ControlFlow<()>,
{
    debug_assert!(atoms.len() < 32);
    let remaining = (1u32 << atoms.len()) - 1;
    step(kg, atoms, remaining, binding, f)
}

fn step<F>(
    kg: &KnowledgeGraph,
    atoms: &[RuleAtom],
    remaining: u32,
    binding: &mut [Option<EntityId>],
    f: &mut F,
) -> ControlFlow<()>
where
    F: FnMut(&[Option<EntityId>]) -> ControlFlow<()>,
{
    if remaining == 0 {
        return f(binding);
    }
    // pick the most constrained atom; ties go to the smaller relation
    let mut pick = usize::MAX;
    let mut pick_key = (0u8, usize::MAX);
    for (i, a) in atoms.iter().enumerate() {
        if remaining & (1 << i) == 0 {
            continue;
        }
        let bound = binding[a.subject.index()].is_some() as u8 + binding[a.object.index()].is_some() as u8;
        let key = (bound, kg.relation_count(a.relation));
        if pick == usize::MAX || key.0 > pick_key.0 || (key.0 == pick_key.0 && key.1 < pick_key.1) {
            pick = i;
            pick_key = key;
        }
    }
    let a = atoms[pick];
    let rest = remaining & !(1 << pick);
    let (sv, ov) = (a.subject.index(), a.object.index());
    match (binding[sv], binding[ov]) {
        (Some(s), Some(o)) => {
            if kg.has(s, a.relation, o) {
                step(kg, atoms, rest, binding, f)?;
            }
        }
        (Some(s), None) => {
            for &o in kg.tails(s, a.relation) {
                binding[ov] = Some(o);
                let r = step(kg, atoms, rest, binding, f);
                binding[ov] = None;
                r?;
            }
        }
        (None, Some(o)) => {
            for &s in kg.heads(o, a.relation) {
                binding[sv] = Some(s);
                let r = step(kg, atoms, rest, binding, f);
                binding[sv] = None;
                r?;
            }
        }
        (None, None) => {
            for t in kg.triples_of(a.relation) {
                if sv == ov {
                    if t.head != t.tail {
                        continue;
                    }
                    binding[sv] = Some(t.head);
                } else {
                    binding[sv] = Some(t.head);
                    binding[ov] = Some(t.tail);
                }
                let r = step(kg, atoms, rest, binding, f);
                binding[sv] = None;
                binding[ov] = None;
                r?;
            }
        }
    }
    ControlFlow::Continue(())
}

/// True when some extension of `binding` satisfies all `atoms`.
pub(crate) fn exists(kg: &KnowledgeGraph, atoms: &[RuleAtom], binding: &mut [Option<EntityId>]) -> bool {
    for_each_body_binding(kg, atoms, binding, &mut |_| ControlFlow::Break(())).is_break()
}
