//! Line-oriented text format for synthesized policies.
//!
//! ```text
//! # saloha-policy-table v1
//! policy proposed
//! mode symmetric
//! users 2
//! channel_states 10
//! buffer 5
//! [thresholds]
//! initial 9
//! 0 : 0 0 : 4 4 9          common state : thresholds : next after nak ack col
//! [user 0]
//! xi 0.0125
//! theta 1.75
//! rule table
//! 1 3 9 ack 4 0.93         q h_prev common z_prev h_cur power_w
//! [user 1]
//! xi 0.0125
//! theta 1.75
//! rule same 0
//! ```
//!
//! Other rules are `rule fixed <watts>` and `rule per_csi <w_1> ... <w_J>`.
//! Floats are written in shortest round-trip form.

use std::io::Write;
use std::sync::Arc;

use crate::dynamics::Feedback;
use crate::error::{Error, Result};

use super::{PolicyMode, PowerRule, PowerTable, SynthesizedPolicy, ThresholdPolicy, UserRule};

const MAGIC: &str = "# saloha-policy-table v1";

pub fn write_policy_table<W: Write>(
    policy: &SynthesizedPolicy,
    channel_states: usize,
    buffer: usize,
    out: &mut W,
) -> std::io::Result<()> {
    let th = &policy.thresholds;
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "policy {}", policy.name)?;
    writeln!(out, "mode {}", th.mode.label())?;
    writeln!(out, "users {}", th.users)?;
    writeln!(out, "channel_states {channel_states}")?;
    writeln!(out, "buffer {buffer}")?;
    writeln!(out, "[thresholds]")?;
    writeln!(out, "initial {}", th.initial)?;
    for (c, (states, next)) in th.states.iter().zip(&th.next).enumerate() {
        let s: Vec<String> = states.iter().map(|g| g.to_string()).collect();
        writeln!(out, "{c} : {} : {} {} {}", s.join(" "), next[0], next[1], next[2])?;
    }
    for (k, user) in policy.users.iter().enumerate() {
        writeln!(out, "[user {k}]")?;
        writeln!(out, "xi {}", user.xi)?;
        writeln!(out, "theta {}", user.theta)?;
        let shared = (0..k).find(|&i| match (&policy.users[i].rule, &user.rule) {
            (PowerRule::Table(a), PowerRule::Table(b)) => Arc::ptr_eq(a, b),
            _ => false,
        });
        match (&user.rule, shared) {
            (PowerRule::Table(_), Some(i)) => writeln!(out, "rule same {i}")?,
            (PowerRule::Table(t), None) => {
                writeln!(out, "rule table")?;
                writeln!(out, "# q h_prev common z_prev h_cur power_w")?;
                for (q, hp, c, z, hc, p) in t.entries() {
                    writeln!(out, "{q} {hp} {c} {z} {hc} {p}")?;
                }
            }
            (PowerRule::Fixed(p), _) => writeln!(out, "rule fixed {p}")?,
            (PowerRule::PerCsi(v), _) => {
                let s: Vec<String> = v.iter().map(|p| p.to_string()).collect();
                writeln!(out, "rule per_csi {}", s.join(" "))?;
            }
        }
    }
    Ok(())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn num<T: std::str::FromStr>(line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    tok.ok_or_else(|| parse_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what}")))
}

fn keyed<'a>(line: usize, text: &'a str, key: &str) -> Result<&'a str> {
    text.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .map(str::trim)
        .ok_or_else(|| parse_err(line, format!("expected `{key} ...`")))
}

enum PendingRule {
    Table(PowerTable),
    Same(usize),
    Done(PowerRule),
}

pub fn read_policy_table(text: &str) -> Result<SynthesizedPolicy> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, l)) if l == MAGIC => {}
        Some((n, _)) => return Err(parse_err(n, "missing policy-table header")),
        None => return Err(parse_err(0, "empty policy table")),
    }
    let mut lines = lines.filter(|(_, l)| !l.starts_with('#')).peekable();
    let mut next_line = |key: &str| -> Result<(usize, String)> {
        let (n, l) = lines.next().ok_or_else(|| parse_err(0, format!("missing `{key}`")))?;
        Ok((n, keyed(n, l, key)?.to_string()))
    };
    let (_, name) = next_line("policy")?;
    let (n, mode) = next_line("mode")?;
    let mode = match mode.as_str() {
        "symmetric" => PolicyMode::Symmetric,
        "asymmetric" => PolicyMode::Asymmetric,
        _ => return Err(parse_err(n, "mode must be symmetric or asymmetric")),
    };
    let (n, v) = next_line("users")?;
    let users: usize = num(n, Some(&v), "users")?;
    let (n, v) = next_line("channel_states")?;
    let j: usize = num(n, Some(&v), "channel_states")?;
    let (n, v) = next_line("buffer")?;
    let buffer: usize = num(n, Some(&v), "buffer")?;
    drop(next_line);

    let mut rest: Vec<(usize, &str)> = lines.collect();
    rest.reverse();
    let mut pop = || rest.pop();

    match pop() {
        Some((_, "[thresholds]")) => {}
        Some((n, _)) => return Err(parse_err(n, "expected [thresholds]")),
        None => return Err(parse_err(0, "missing [thresholds]")),
    }
    let (n, l) = pop().ok_or_else(|| parse_err(0, "missing initial"))?;
    let initial: usize = num(n, Some(keyed(n, l, "initial")?), "initial")?;
    let mut states = Vec::new();
    let mut next = Vec::new();
    let mut pending: Vec<(f64, f64, PendingRule)> = Vec::new();
    let mut current: Option<(usize, Option<f64>, Option<f64>, Option<PendingRule>)> = None;

    let finish = |cur: Option<(usize, Option<f64>, Option<f64>, Option<PendingRule>)>,
                      pending: &mut Vec<(f64, f64, PendingRule)>|
     -> Result<()> {
        if let Some((n, xi, theta, rule)) = cur {
            let rule = rule.ok_or_else(|| parse_err(n, "user section without rule"))?;
            pending.push((
                xi.ok_or_else(|| parse_err(n, "missing xi"))?,
                theta.ok_or_else(|| parse_err(n, "missing theta"))?,
                rule,
            ));
        }
        Ok(())
    };

    while let Some((n, l)) = pop() {
        if let Some(k) = l.strip_prefix("[user ").and_then(|r| r.strip_suffix(']')) {
            let k: usize = num(n, Some(k), "user index")?;
            if k != pending.len() + usize::from(current.is_some()) {
                return Err(parse_err(n, "user sections must be in order"));
            }
            finish(current.take(), &mut pending)?;
            if states.is_empty() {
                return Err(parse_err(n, "no threshold states"));
            }
            current = Some((n, None, None, None));
            continue;
        }
        match current.as_mut() {
            None => {
                let parts: Vec<&str> = l.split(':').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(parse_err(n, "threshold row must be `c : thresholds : next`"));
                }
                let c: usize = num(n, Some(parts[0]), "common state")?;
                if c != states.len() {
                    return Err(parse_err(n, "threshold rows must be numbered in order"));
                }
                let th: Vec<usize> = parts[1]
                    .split_whitespace()
                    .map(|t| num(n, Some(t), "threshold"))
                    .collect::<Result<_>>()?;
                let nx: Vec<usize> = parts[2]
                    .split_whitespace()
                    .map(|t| num(n, Some(t), "next state"))
                    .collect::<Result<_>>()?;
                if nx.len() != 3 {
                    return Err(parse_err(n, "need three next states"));
                }
                if th.iter().any(|&g| g >= j) {
                    return Err(parse_err(n, "threshold outside channel alphabet"));
                }
                states.push(th);
                next.push([nx[0], nx[1], nx[2]]);
            }
            Some((_, xi, theta, rule)) => {
                if let Some(v) = l.strip_prefix("xi ") {
                    *xi = Some(num(n, Some(v.trim()), "xi")?);
                } else if let Some(v) = l.strip_prefix("theta ") {
                    *theta = Some(num(n, Some(v.trim()), "theta")?);
                } else if let Some(v) = l.strip_prefix("rule ") {
                    let mut toks = v.split_whitespace();
                    *rule = Some(match toks.next() {
                        Some("table") => PendingRule::Table(PowerTable::new(buffer, j, states.len())),
                        Some("same") => PendingRule::Same(num(n, toks.next(), "user index")?),
                        Some("fixed") => PendingRule::Done(PowerRule::Fixed(num(n, toks.next(), "power")?)),
                        Some("per_csi") => {
                            let v: Vec<f64> = toks.map(|t| num(n, Some(t), "power")).collect::<Result<_>>()?;
                            if v.len() != j {
                                return Err(parse_err(n, "per_csi needs one power per CSI state"));
                            }
                            PendingRule::Done(PowerRule::PerCsi(v))
                        }
                        _ => return Err(parse_err(n, "unknown rule")),
                    });
                } else if let Some(PendingRule::Table(t)) = rule.as_mut() {
                    let toks: Vec<&str> = l.split_whitespace().collect();
                    if toks.len() != 6 {
                        return Err(parse_err(n, "table row needs six fields"));
                    }
                    let q: usize = num(n, Some(toks[0]), "q")?;
                    let hp: usize = num(n, Some(toks[1]), "h_prev")?;
                    let c: usize = num(n, Some(toks[2]), "common")?;
                    let z = Feedback::parse(toks[3]).ok_or_else(|| parse_err(n, "bad feedback"))?;
                    let hc: usize = num(n, Some(toks[4]), "h_cur")?;
                    let p: f64 = num(n, Some(toks[5]), "power")?;
                    if q > buffer || hp >= j || hc >= j || c >= t.common_states {
                        return Err(parse_err(n, "table row out of range"));
                    }
                    t.set(q, hp, c, z, hc, p);
                } else {
                    return Err(parse_err(n, format!("unexpected line `{l}`")));
                }
            }
        }
    }
    finish(current.take(), &mut pending)?;
    if pending.len() != users {
        return Err(parse_err(0, format!("{} user sections for {users} users", pending.len())));
    }

    let thresholds = ThresholdPolicy::new(mode, users, states, next, initial)?;
    let mut rules: Vec<UserRule> = Vec::with_capacity(users);
    for (k, (xi, theta, rule)) in pending.into_iter().enumerate() {
        let rule = match rule {
            PendingRule::Table(t) => PowerRule::Table(Arc::new(t)),
            PendingRule::Done(r) => r,
            PendingRule::Same(i) if i < k => rules[i].rule.clone(),
            PendingRule::Same(i) => return Err(parse_err(0, format!("user {k} refers to later user {i}"))),
        };
        rules.push(UserRule { xi, theta, rule });
    }
    Ok(SynthesizedPolicy {
        name,
        thresholds,
        users: rules,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let th = ThresholdPolicy::new(
            PolicyMode::Symmetric,
            2,
            vec![vec![0, 0], vec![1, 1]],
            vec![[1, 1, 0], [0, 1, 1]],
            1,
        )
        .unwrap();
        let mut t = PowerTable::new(1, 2, 2);
        t.set(1, 0, 1, Feedback::Ack, 1, 0.1 + 0.2);
        t.set(0, 1, 0, Feedback::Nak, 0, 0.0);
        let table = Arc::new(t);
        let p = SynthesizedPolicy {
            name: "proposed".into(),
            thresholds: th,
            users: vec![
                UserRule { xi: 1e-3, theta: 0.5, rule: PowerRule::Table(table.clone()) },
                UserRule { xi: 1e-3, theta: 0.5, rule: PowerRule::Table(table) },
            ],
        };
        let mut buf = Vec::new();
        write_policy_table(&p, 2, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("rule same 0"));
        let back = read_policy_table(&text).unwrap();
        assert_eq!(back, p);

        let fixed = SynthesizedPolicy {
            users: vec![
                UserRule { xi: 0.0, theta: f64::INFINITY, rule: PowerRule::Fixed(2.5) },
                UserRule { xi: 0.0, theta: 1.0, rule: PowerRule::PerCsi(vec![0.0, 1.25]) },
            ],
            ..p
        };
        let mut buf = Vec::new();
        write_policy_table(&fixed, 2, 1, &mut buf).unwrap();
        assert_eq!(read_policy_table(std::str::from_utf8(&buf).unwrap()).unwrap(), fixed);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_policy_table("hello").is_err());
        assert!(read_policy_table(MAGIC).is_err());
    }
}
