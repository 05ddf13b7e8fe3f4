//! Exhaustive reference evaluator.
//!
//! Instead of backtracking, every iteration point in a rule body (each `[_]`
//! and each index variable at its first occurrence) is assigned a key drawn
//! from a universe holding every object key and array index present in the
//! document. All assignments are enumerated; each is checked as straight-line
//! code. Comparison and builtin semantics are re-implemented here so nothing
//! is shared with the evaluator under test.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use pacloop::rego::{Builtin, CmpOp, Expr, PolicyDocument, RefHead, Scalar, Segment, Term};
use serde_json::Value;

/// Key universe: object keys as strings, array indices as numbers.
pub fn universe(doc: &Value) -> Vec<Value> {
    fn walk(v: &Value, keys: &mut BTreeSet<String>, max_len: &mut usize) {
        match v {
            Value::Object(m) => {
                for (k, child) in m {
                    keys.insert(k.clone());
                    walk(child, keys, max_len);
                }
            }
            Value::Array(a) => {
                *max_len = (*max_len).max(a.len());
                for child in a {
                    walk(child, keys, max_len);
                }
            }
            _ => {}
        }
    }
    let mut keys = BTreeSet::new();
    let mut max_len = 0;
    walk(doc, &mut keys, &mut max_len);
    let mut out: Vec<Value> = (0..max_len).map(|i| Value::from(i as u64)).collect();
    out.extend(keys.into_iter().map(Value::String));
    out
}

/// Identifies one iteration point: wildcard occurrences get synthetic names.
#[derive(Debug, Clone)]
struct Choice {
    name: String,
}

fn num(v: &Value) -> Option<f64> {
    v.as_f64()
}

fn equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(_), Value::Number(_)) => num(a) == num(b),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| equal(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, v)| y.get(k).map(|w| equal(v, w)).unwrap_or(false))
        }
        _ => a == b,
    }
}

fn holds(op: CmpOp, a: &Value, b: &Value) -> bool {
    if op == CmpOp::Eq {
        return equal(a, b);
    }
    if op == CmpOp::Ne {
        return !equal(a, b);
    }
    let ord = if a.is_number() && b.is_number() {
        num(a).unwrap().partial_cmp(&num(b).unwrap())
    } else if let (Some(x), Some(y)) = (a.as_str(), b.as_str()) {
        Some(x.cmp(y))
    } else {
        return false;
    };
    let Some(o) = ord else { return false };
    match op {
        CmpOp::Lt => o.is_lt(),
        CmpOp::Le => o.is_le(),
        CmpOp::Gt => o.is_gt(),
        CmpOp::Ge => o.is_ge(),
        _ => unreachable!(),
    }
}

fn index(container: &Value, key: &Value) -> Option<Value> {
    match (container, key) {
        (Value::Object(m), Value::String(k)) => m.get(k).cloned(),
        (Value::Array(a), Value::Number(n)) => {
            let f = n.as_f64()?;
            if f < 0.0 || f.fract() != 0.0 {
                return None;
            }
            a.get(f as usize).cloned()
        }
        _ => None,
    }
}

fn scalar(s: &Scalar) -> Value {
    match s {
        Scalar::Null => Value::Null,
        Scalar::Bool(b) => Value::Bool(*b),
        Scalar::Number(n) => Value::Number(n.clone()),
        Scalar::String(s) => Value::String(s.clone()),
    }
}

/// Numbers the wildcard occurrences of a term tree in source order and
/// collects index variables not yet known.
fn collect_choices(t: &Term, known: &mut HashSet<String>, wild: &mut usize, out: &mut Vec<Choice>) {
    match t {
        Term::Scalar(_) => {}
        Term::Array(items) => items.iter().for_each(|i| collect_choices(i, known, wild, out)),
        Term::Call { args, .. } => args.iter().for_each(|a| collect_choices(a, known, wild, out)),
        Term::Ref(r) => {
            for seg in &r.path {
                match seg {
                    Segment::Wildcard => {
                        out.push(Choice { name: format!("$w{}", *wild) });
                        *wild += 1;
                    }
                    Segment::Var(v) if !known.contains(v) => {
                        known.insert(v.clone());
                        out.push(Choice { name: v.clone() });
                    }
                    _ => {}
                }
            }
        }
    }
}

fn expr_choices(e: &Expr, known: &mut HashSet<String>, wild: &mut usize, out: &mut Vec<Choice>) {
    match e {
        Expr::Assign { var, value } => {
            collect_choices(value, known, wild, out);
            known.insert(var.clone());
        }
        Expr::Compare { left, right, .. } => {
            collect_choices(left, known, wild, out);
            collect_choices(right, known, wild, out);
        }
        Expr::Truthy(t) => collect_choices(t, known, wild, out),
        // Negation choices are enumerated locally; only count its wildcards.
        Expr::Not(inner) => {
            let mut scratch = known.clone();
            let mut ignored = Vec::new();
            expr_choices(inner, &mut scratch, wild, &mut ignored);
        }
    }
}

struct Straight<'d> {
    doc: &'d Value,
    env: BTreeMap<String, Value>,
    wild: usize,
}

impl Straight<'_> {
    fn term(&mut self, t: &Term) -> Option<Value> {
        match t {
            Term::Scalar(s) => Some(scalar(s)),
            Term::Array(items) => {
                let vals: Vec<Option<Value>> = items.iter().map(|i| self.term(i)).collect();
                vals.into_iter().collect::<Option<Vec<_>>>().map(Value::Array)
            }
            Term::Call { func, args } => {
                // evaluate every argument so wildcard numbering stays aligned
                let vals: Vec<Option<Value>> = args.iter().map(|a| self.term(a)).collect();
                let vals: Option<Vec<Value>> = vals.into_iter().collect();
                let vals = vals?;
                match func {
                    Builtin::Count => match &vals[0] {
                        Value::Array(a) => Some(Value::from(a.len() as u64)),
                        Value::Object(o) => Some(Value::from(o.len() as u64)),
                        Value::String(s) => Some(Value::from(s.chars().count() as u64)),
                        _ => None,
                    },
                    Builtin::Contains => match (&vals[0], &vals[1]) {
                        (Value::String(h), Value::String(n)) => Some(Value::Bool(h.contains(n.as_str()))),
                        _ => None,
                    },
                }
            }
            Term::Ref(r) => {
                let mut cur = match &r.head {
                    RefHead::Input => Some(self.doc.clone()),
                    RefHead::Var(v) => self.env.get(v).cloned(),
                };
                for seg in &r.path {
                    let key = match seg {
                        Segment::Field(f) => Some(Value::String(f.clone())),
                        Segment::Key(s) => Some(scalar(s)),
                        Segment::Wildcard => {
                            let name = format!("$w{}", self.wild);
                            self.wild += 1;
                            self.env.get(&name).cloned()
                        }
                        Segment::Var(v) => self.env.get(v).cloned(),
                    };
                    cur = match (cur, key) {
                        (Some(c), Some(k)) => index(&c, &k),
                        _ => None,
                    };
                }
                cur
            }
        }
    }
}

fn count_wild_term(t: &Term) -> usize {
    match t {
        Term::Scalar(_) => 0,
        Term::Array(items) => items.iter().map(count_wild_term).sum(),
        Term::Call { args, .. } => args.iter().map(count_wild_term).sum(),
        Term::Ref(r) => r.path.iter().filter(|s| matches!(s, Segment::Wildcard)).count(),
    }
}

fn count_wild_expr(e: &Expr) -> usize {
    match e {
        Expr::Assign { value, .. } => count_wild_term(value),
        Expr::Compare { left, right, .. } => count_wild_term(left) + count_wild_term(right),
        Expr::Truthy(t) => count_wild_term(t),
        Expr::Not(inner) => count_wild_expr(inner),
    }
}

fn for_each_assignment(choices: &[Choice], uni: &[Value], env: &mut BTreeMap<String, Value>, f: &mut dyn FnMut(&BTreeMap<String, Value>) -> bool) -> bool {
    match choices.split_first() {
        None => f(env),
        Some((c, rest)) => {
            for u in uni {
                env.insert(c.name.clone(), u.clone());
                if !for_each_assignment(rest, uni, env, f) {
                    env.remove(&c.name);
                    return false;
                }
            }
            env.remove(&c.name);
            true
        }
    }
}

/// Checks `e` under a complete assignment, enumerating negation-local choices.
fn check_expr(e: &Expr, doc: &Value, uni: &[Value], env: &mut BTreeMap<String, Value>, wild_base: usize) -> bool {
    let mut s = Straight { doc, env: env.clone(), wild: wild_base };
    match e {
        Expr::Assign { var, value } => match s.term(value) {
            Some(v) => {
                env.insert(var.clone(), v);
                true
            }
            None => false,
        },
        Expr::Compare { op, left, right } => {
            let l = s.term(left);
            let r = s.term(right);
            matches!((l, r), (Some(l), Some(r)) if holds(*op, &l, &r))
        }
        Expr::Truthy(t) => matches!(s.term(t), Some(v) if v != Value::Bool(false)),
        Expr::Not(inner) => {
            let mut known: HashSet<String> = env.keys().cloned().collect();
            let mut w = wild_base;
            let mut local = Vec::new();
            expr_choices(inner, &mut known, &mut w, &mut local);
            let mut witnessed = false;
            let mut scratch = env.clone();
            for_each_assignment(&local, uni, &mut scratch, &mut |assign| {
                let mut e2 = assign.clone();
                if check_expr(inner, doc, uni, &mut e2, wild_base) {
                    witnessed = true;
                    return false;
                }
                true
            });
            !witnessed
        }
    }
}

fn message_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// The deny set computed by exhaustive enumeration.
pub fn brute_force_deny(policy: &PolicyDocument, doc: &Value) -> BTreeSet<String> {
    let uni = universe(doc);
    let mut out = BTreeSet::new();
    for rule in policy.rules.iter().filter(|r| r.head_name == "deny") {
        let mut known = HashSet::new();
        let mut wild = 0;
        let mut choices = Vec::new();
        for e in &rule.body {
            expr_choices(e, &mut known, &mut wild, &mut choices);
        }
        let mut env = BTreeMap::new();
        for_each_assignment(&choices, &uni, &mut env, &mut |assign| {
            let mut env = assign.clone();
            let mut wild_base = 0;
            for e in &rule.body {
                if !check_expr(e, doc, &uni, &mut env, wild_base) {
                    return true;
                }
                wild_base += count_wild_expr(e);
            }
            let mut s = Straight { doc, env: env.clone(), wild: usize::MAX / 2 };
            if let Some(m) = s.term(&rule.message) {
                out.insert(message_text(&m));
            }
            true
        });
    }
    out
}
