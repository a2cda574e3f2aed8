use std::collections::BTreeSet;

use super::compile::{CPremise, Compiled};
use super::eval::{build, Binding, Lookup, Solver, World};
use super::GroundRule;

/// All instances of `schema` whose premises and conclusion exist in the
/// world's domain, sorted and duplicate-free.
pub fn ground(schema: &Compiled, world: &World<'_>) -> Vec<GroundRule> {
    let mut out = BTreeSet::new();
    let Some(conclusion) = &schema.conclusion else { return Vec::new() };
    let solver = Solver::new(world, schema, true);
    solver.solve(Vec::new(), &mut |env| {
        let mut st = Lookup(world.table);
        let Some(c) = build(conclusion, env, world.ctx, &mut st) else { return true };
        let mut premises = Vec::new();
        for p in &schema.premises {
            match p {
                CPremise::Value(t) => match build(t, env, world.ctx, &mut st) {
                    Some(h) => premises.push(h),
                    None => return true,
                },
                CPremise::Members(v) => match &env[*v] {
                    Some(Binding::Set(hs)) => premises.extend(hs.iter().copied()),
                    _ => return true,
                },
            }
        }
        let rule = GroundRule::new(schema.label.clone(), premises, c);
        if !rule.premises.contains(&c) {
            out.insert(rule);
        }
        true
    });
    out.into_iter().collect()
}

/// Grounds every schema and concatenates the results in schema order.
pub fn ground_all<'c>(schemas: impl IntoIterator<Item = &'c Compiled>, world: &World<'_>) -> Vec<GroundRule> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in schemas {
        for r in ground(s, world) {
            if seen.insert(r.clone()) {
                out.push(r);
            }
        }
    }
    out
}
