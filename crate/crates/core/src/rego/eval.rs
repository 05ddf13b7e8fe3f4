//! Deterministic evaluator for partial-set rules.
//!
//! Each rule body is solved by depth-first backtracking: expressions run in
//! source order, and every reference iteration (`[_]` or an unbound `[x]`)
//! fans out over the array elements or object entries it touches. A binding
//! that hits a missing path or a type mismatch is simply dropped.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Number, Value};

use super::ast::*;

pub const DEFAULT_MAX_BINDINGS: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("rule {rule} (`{name}`) exceeded the limit of {limit} candidate bindings")]
    BindingLimit { rule: usize, name: String, limit: u64 },
}

#[derive(Debug, Clone, Copy)]
pub struct EvalLimits {
    pub max_bindings_per_rule: u64,
}

impl Default for EvalLimits {
    fn default() -> Self {
        EvalLimits {
            max_bindings_per_rule: DEFAULT_MAX_BINDINGS,
        }
    }
}

/// One variable of a satisfying binding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub var: String,
    /// Location inside the input document, when the value was read from it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub path: Option<String>,
    pub value: Value,
}

/// Why a single deny message fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationTrace {
    pub rule_index: usize,
    pub rule_name: String,
    pub message: String,
    pub bindings: Vec<BoundValue>,
}

impl ViolationTrace {
    pub fn binding(&self, var: &str) -> Option<&BoundValue> {
        self.bindings.iter().find(|b| b.var == var)
    }
}

impl fmt::Display for ViolationTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule #{} {}: {:?}", self.rule_index, self.rule_name, self.message)?;
        let paths: Vec<String> = self
            .bindings
            .iter()
            .filter_map(|b| b.path.as_ref().map(|p| format!("{p} = {}", b.value)))
            .filter(|s| s.len() <= 200)
            .collect();
        if !paths.is_empty() {
            write!(f, " [{}]", paths.join(", "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PathSeg {
    Key(String),
    Index(usize),
}

fn render_path(path: &[PathSeg]) -> String {
    let mut s = String::new();
    for seg in path {
        match seg {
            PathSeg::Key(k) => {
                let ident = !k.is_empty()
                    && k.chars().all(|c| c.is_alphanumeric() || c == '_')
                    && !k.starts_with(|c: char| c.is_ascii_digit());
                if ident {
                    if !s.is_empty() {
                        s.push('.');
                    }
                    s.push_str(k);
                } else {
                    s.push_str(&format!("[{}]", serde_json::to_string(k).unwrap_or_default()));
                }
            }
            PathSeg::Index(i) => s.push_str(&format!("[{i}]")),
        }
    }
    s
}

#[derive(Debug, Clone)]
struct Val<'a> {
    v: Cow<'a, Value>,
    path: Option<Vec<PathSeg>>,
}

impl<'a> Val<'a> {
    fn owned(v: Value) -> Self {
        Val {
            v: Cow::Owned(v),
            path: None,
        }
    }

    fn child(&self, seg: PathSeg) -> Option<Val<'a>> {
        let path = self.path.as_ref().map(|p| {
            let mut p = p.clone();
            p.push(seg.clone());
            p
        });
        let v = match &self.v {
            Cow::Borrowed(b) => Cow::Borrowed(lookup(*b, &seg)?),
            Cow::Owned(o) => Cow::Owned(lookup(o, &seg)?.clone()),
        };
        Some(Val { v, path })
    }
}

fn lookup<'v>(v: &'v Value, seg: &PathSeg) -> Option<&'v Value> {
    match (v, seg) {
        (Value::Object(m), PathSeg::Key(k)) => m.get(k),
        (Value::Array(a), PathSeg::Index(i)) => a.get(*i),
        _ => None,
    }
}

/// Converts a lookup key value into a path segment, if it can address anything.
fn key_segment(container: &Value, key: &Value) -> Option<PathSeg> {
    match (container, key) {
        (Value::Object(_), Value::String(s)) => Some(PathSeg::Key(s.clone())),
        (Value::Array(_), Value::Number(n)) => {
            let f = n.as_f64()?;
            if f >= 0.0 && f.fract() == 0.0 {
                Some(PathSeg::Index(f as usize))
            } else {
                None
            }
        }
        _ => None,
    }
}

type Env<'a> = Vec<(String, Val<'a>)>;

fn env_get<'e, 'a>(env: &'e Env<'a>, name: &str) -> Option<&'e Val<'a>> {
    env.iter().rev().find(|(n, _)| n == name).map(|(_, v)| v)
}

enum Flow {
    /// Negation found a witness; unwind.
    Stop,
    Limit,
}

type Res = Result<(), Flow>;

/// Structural equality with numeric comparison across integer/float forms.
pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => numbers_equal(x, y),
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(p, q)| values_equal(p, q))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len()
                && x.iter().all(|(k, v)| y.get(k).is_some_and(|w| values_equal(v, w)))
        }
        _ => a == b,
    }
}

fn numbers_equal(x: &Number, y: &Number) -> bool {
    match (x.as_i64(), y.as_i64()) {
        (Some(p), Some(q)) => p == q,
        _ => x.as_f64() == y.as_f64(),
    }
}

/// Comparison semantics: `==`/`!=` are structural; ordering is defined for
/// number/number and string/string pairs only, anything else fails.
pub fn compare(op: CmpOp, a: &Value, b: &Value) -> bool {
    match op {
        CmpOp::Eq => values_equal(a, b),
        CmpOp::Ne => !values_equal(a, b),
        _ => {
            let ord = match (a, b) {
                (Value::Number(x), Value::Number(y)) => x
                    .as_f64()
                    .zip(y.as_f64())
                    .and_then(|(p, q)| p.partial_cmp(&q)),
                (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
                _ => None,
            };
            match ord {
                None => false,
                Some(o) => match op {
                    CmpOp::Lt => o.is_lt(),
                    CmpOp::Le => o.is_le(),
                    CmpOp::Gt => o.is_gt(),
                    CmpOp::Ge => o.is_ge(),
                    CmpOp::Eq | CmpOp::Ne => unreachable!(),
                },
            }
        }
    }
}

/// Builtin application; `None` means undefined.
pub fn apply_builtin(func: Builtin, args: &[&Value]) -> Option<Value> {
    match func {
        Builtin::Count => {
            let n = match args[0] {
                Value::Array(a) => a.len(),
                Value::Object(o) => o.len(),
                Value::String(s) => s.chars().count(),
                _ => return None,
            };
            Some(Value::Number((n as u64).into()))
        }
        Builtin::Contains => match (args[0], args[1]) {
            (Value::String(h), Value::String(n)) => Some(Value::Bool(h.contains(n.as_str()))),
            _ => None,
        },
    }
}

/// The textual deny-set entry for a message value.
pub fn message_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

struct RuleRun<'a> {
    input: &'a Value,
    budget: u64,
    used: u64,
}

impl<'a> RuleRun<'a> {
    fn tick(&mut self) -> Res {
        self.used += 1;
        if self.used > self.budget {
            Err(Flow::Limit)
        } else {
            Ok(())
        }
    }

    fn term(
        &mut self,
        t: &Term,
        env: &Env<'a>,
        k: &mut dyn FnMut(&mut Self, Val<'a>, &Env<'a>) -> Res,
    ) -> Res {
        match t {
            Term::Scalar(s) => k(self, Val::owned(s.to_json()), env),
            Term::Array(items) => self.array(items, 0, Vec::new(), env, k),
            Term::Call { func, args } => {
                let func = *func;
                self.args(args, 0, Vec::new(), env, &mut |run, vals, env| {
                    let refs: Vec<&Value> = vals.iter().map(|v| v.v.as_ref()).collect();
                    match apply_builtin(func, &refs) {
                        Some(v) => k(run, Val::owned(v), env),
                        None => Ok(()),
                    }
                })
            }
            Term::Ref(r) => {
                let start = match &r.head {
                    RefHead::Input => Val {
                        v: Cow::Borrowed(self.input),
                        path: Some(Vec::new()),
                    },
                    RefHead::Var(name) => match env_get(env, name) {
                        Some(v) => v.clone(),
                        None => return Ok(()),
                    },
                };
                self.walk(start, &r.path, env, k)
            }
        }
    }

    fn array(
        &mut self,
        items: &[Term],
        i: usize,
        acc: Vec<Value>,
        env: &Env<'a>,
        k: &mut dyn FnMut(&mut Self, Val<'a>, &Env<'a>) -> Res,
    ) -> Res {
        if i == items.len() {
            return k(self, Val::owned(Value::Array(acc)), env);
        }
        self.term(&items[i], env, &mut |run, v, env| {
            let mut next = acc.clone();
            next.push(v.v.into_owned());
            run.array(items, i + 1, next, env, k)
        })
    }

    fn args(
        &mut self,
        items: &[Term],
        i: usize,
        acc: Vec<Val<'a>>,
        env: &Env<'a>,
        k: &mut dyn FnMut(&mut Self, Vec<Val<'a>>, &Env<'a>) -> Res,
    ) -> Res {
        if i == items.len() {
            return k(self, acc, env);
        }
        self.term(&items[i], env, &mut |run, v, env| {
            let mut next = acc.clone();
            next.push(v);
            run.args(items, i + 1, next, env, k)
        })
    }

    fn walk(
        &mut self,
        cur: Val<'a>,
        segs: &[Segment],
        env: &Env<'a>,
        k: &mut dyn FnMut(&mut Self, Val<'a>, &Env<'a>) -> Res,
    ) -> Res {
        let Some((seg, rest)) = segs.split_first() else {
            return k(self, cur, env);
        };
        match seg {
            Segment::Field(name) | Segment::Key(Scalar::String(name)) => {
                match cur.child(PathSeg::Key(name.clone())) {
                    Some(c) => self.walk(c, rest, env, k),
                    None => Ok(()),
                }
            }
            Segment::Key(s) => {
                let key = s.to_json();
                match key_segment(&cur.v, &key).and_then(|seg| cur.child(seg)) {
                    Some(c) => self.walk(c, rest, env, k),
                    None => Ok(()),
                }
            }
            Segment::Wildcard => self.iterate(&cur, None, rest, env, k),
            Segment::Var(name) => match env_get(env, name) {
                Some(bound) => {
                    let key = bound.v.as_ref().clone();
                    match key_segment(&cur.v, &key).and_then(|seg| cur.child(seg)) {
                        Some(c) => self.walk(c, rest, env, k),
                        None => Ok(()),
                    }
                }
                None => self.iterate(&cur, Some(name), rest, env, k),
            },
        }
    }

    fn iterate(
        &mut self,
        cur: &Val<'a>,
        bind: Option<&str>,
        rest: &[Segment],
        env: &Env<'a>,
        k: &mut dyn FnMut(&mut Self, Val<'a>, &Env<'a>) -> Res,
    ) -> Res {
        let keys: Vec<(PathSeg, Value)> = match cur.v.as_ref() {
            Value::Array(a) => (0..a.len())
                .map(|i| (PathSeg::Index(i), Value::Number((i as u64).into())))
                .collect(),
            Value::Object(m) => m
                .keys()
                .map(|key| (PathSeg::Key(key.clone()), Value::String(key.clone())))
                .collect(),
            _ => return Ok(()),
        };
        for (seg, key) in keys {
            self.tick()?;
            let Some(child) = cur.child(seg) else { continue };
            match bind {
                Some(name) => {
                    let mut env2 = env.clone();
                    env2.push((name.to_string(), Val::owned(key)));
                    self.walk(child, rest, &env2, k)?;
                }
                None => self.walk(child, rest, env, k)?,
            }
        }
        Ok(())
    }

    fn expr(&mut self, e: &Expr, env: &Env<'a>, k: &mut dyn FnMut(&mut Self, &Env<'a>) -> Res) -> Res {
        match e {
            Expr::Assign { var, value } => self.term(value, env, &mut |run, v, env| {
                let mut env2 = env.clone();
                env2.push((var.clone(), v));
                k(run, &env2)
            }),
            Expr::Compare { op, left, right } => {
                let op = *op;
                self.term(left, env, &mut |run, l, env| {
                    run.term(right, env, &mut |run, r, env| {
                        if compare(op, &l.v, &r.v) {
                            k(run, env)
                        } else {
                            Ok(())
                        }
                    })
                })
            }
            Expr::Truthy(t) => self.term(t, env, &mut |run, v, env| {
                if *v.v == Value::Bool(false) {
                    Ok(())
                } else {
                    k(run, env)
                }
            }),
            Expr::Not(inner) => {
                let mut found = false;
                let r = self.expr(inner, env, &mut |_, _| {
                    found = true;
                    Err(Flow::Stop)
                });
                match r {
                    Ok(()) | Err(Flow::Stop) => {}
                    Err(Flow::Limit) => return Err(Flow::Limit),
                }
                if found {
                    Ok(())
                } else {
                    k(self, env)
                }
            }
        }
    }

    fn body(&mut self, body: &[Expr], env: &Env<'a>, k: &mut dyn FnMut(&mut Self, &Env<'a>) -> Res) -> Res {
        match body.split_first() {
            None => k(self, env),
            Some((first, rest)) => self.expr(first, env, &mut |run, env| run.body(rest, env, k)),
        }
    }
}

/// Evaluator configured with a binding budget. Stateless and `Sync`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Evaluator {
    pub limits: EvalLimits,
}

impl Evaluator {
    pub fn new(limits: EvalLimits) -> Self {
        Evaluator { limits }
    }

    fn run_rules(
        &self,
        policy: &PolicyDocument,
        input: &Value,
        name: &str,
        on_hit: &mut dyn FnMut(usize, &DenyRule, String, &Env<'_>),
    ) -> Result<(), EvalError> {
        for (idx, rule) in policy.rules_named(name) {
            let mut run = RuleRun {
                input,
                budget: self.limits.max_bindings_per_rule,
                used: 0,
            };
            let start: Env<'_> = Vec::new();
            let res = run.body(&rule.body, &start, &mut |run, env| {
                run.term(&rule.message, env, &mut |_, msg, env| {
                    on_hit(idx, rule, message_text(&msg.v), env);
                    Ok(())
                })
            });
            if let Err(Flow::Limit) = res {
                return Err(EvalError::BindingLimit {
                    rule: idx,
                    name: rule.head_name.clone(),
                    limit: self.limits.max_bindings_per_rule,
                });
            }
        }
        Ok(())
    }

    /// The set of values produced by every rule named `name`.
    pub fn evaluate_set(
        &self,
        policy: &PolicyDocument,
        input: &Value,
        name: &str,
    ) -> Result<BTreeSet<String>, EvalError> {
        let mut out = BTreeSet::new();
        self.run_rules(policy, input, name, &mut |_, _, msg, _| {
            out.insert(msg);
        })?;
        Ok(out)
    }

    pub fn evaluate(&self, policy: &PolicyDocument, input: &Value) -> Result<BTreeSet<String>, EvalError> {
        self.evaluate_set(policy, input, "deny")
    }

    /// One trace per satisfying (rule, binding) pair, ordered by rule index
    /// then enumeration order.
    pub fn explain(&self, policy: &PolicyDocument, input: &Value) -> Result<Vec<ViolationTrace>, EvalError> {
        let mut traces = Vec::new();
        self.run_rules(policy, input, "deny", &mut |idx, rule, message, env| {
            let bindings = env
                .iter()
                .map(|(var, val)| BoundValue {
                    var: var.clone(),
                    path: val.path.as_deref().map(render_path),
                    value: val.v.as_ref().clone(),
                })
                .collect();
            traces.push(ViolationTrace {
                rule_index: idx,
                rule_name: rule.head_name.clone(),
                message,
                bindings,
            });
        })?;
        Ok(traces)
    }
}

pub fn evaluate(policy: &PolicyDocument, input: &Value) -> Result<BTreeSet<String>, EvalError> {
    Evaluator::default().evaluate(policy, input)
}

pub fn explain(policy: &PolicyDocument, input: &Value) -> Result<Vec<ViolationTrace>, EvalError> {
    Evaluator::default().explain(policy, input)
}
