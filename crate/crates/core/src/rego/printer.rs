//! Canonical source printer. `parse(print(doc))` is structurally equal to `doc`.

use std::fmt::Write;

use super::ast::*;

pub fn print_policy(doc: &PolicyDocument) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "package {}", doc.package_name.join("."));
    if !doc.imports.is_empty() {
        out.push('\n');
        for imp in &doc.imports {
            let _ = writeln!(out, "import {}", imp.join("."));
        }
    }
    for rule in &doc.rules {
        out.push('\n');
        print_rule(&mut out, rule);
    }
    out
}

fn print_rule(out: &mut String, rule: &DenyRule) {
    match rule.head_form {
        HeadForm::Bracket => {
            let _ = writeln!(out, "{}[{}] if {{", rule.head_name, term(&rule.message));
        }
        HeadForm::Contains => {
            let _ = writeln!(out, "{} contains {} if {{", rule.head_name, term(&rule.message));
        }
    }
    for e in &rule.body {
        let _ = writeln!(out, "    {}", expr(e));
    }
    out.push_str("}\n");
}

pub fn expr(e: &Expr) -> String {
    match e {
        Expr::Assign { var, value } => format!("{var} := {}", term(value)),
        Expr::Compare { op, left, right } => {
            format!("{} {} {}", term(left), op.symbol(), term(right))
        }
        Expr::Truthy(t) => term(t),
        Expr::Not(inner) => format!("not {}", expr(inner)),
    }
}

pub fn scalar(s: &Scalar) -> String {
    match s {
        Scalar::Null => "null".into(),
        Scalar::Bool(b) => b.to_string(),
        Scalar::Number(n) => n.to_string(),
        Scalar::String(s) => serde_json::to_string(s).expect("string serialization"),
    }
}

pub fn term(t: &Term) -> String {
    match t {
        Term::Scalar(s) => scalar(s),
        Term::Array(items) => {
            let inner: Vec<String> = items.iter().map(term).collect();
            format!("[{}]", inner.join(", "))
        }
        Term::Call { func, args } => {
            let inner: Vec<String> = args.iter().map(term).collect();
            format!("{}({})", func.name(), inner.join(", "))
        }
        Term::Ref(r) => {
            let mut s = match &r.head {
                RefHead::Input => "input".to_string(),
                RefHead::Var(v) => v.clone(),
            };
            for seg in &r.path {
                match seg {
                    Segment::Field(f) => {
                        s.push('.');
                        s.push_str(f);
                    }
                    Segment::Key(k) => {
                        let _ = write!(s, "[{}]", scalar(k));
                    }
                    Segment::Wildcard => s.push_str("[_]"),
                    Segment::Var(v) => {
                        let _ = write!(s, "[{v}]");
                    }
                }
            }
            s
        }
    }
}
