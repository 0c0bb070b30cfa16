//! Endpoint projection: compiles a checked protocol into one local program
//! per role.
//!
//! Projection is total on checker-accepted protocols. Sends project to a
//! send at the source and a receive at the destination; choices stay with
//! their chooser; nature draws project to an `observe` at every role that
//! holds the drawn variable's root (the runtime's `world` endpoint supplies
//! the value); broadcast guards fan out as unicast sends from the
//! broadcaster to every other role in lexicographic order, after which all
//! endpoints branch on the now-shared guard.

use std::collections::BTreeMap;

use crate::ast::{Expr, Guard, Role, Stmt, VarName};
use crate::checker::{preorder, CheckedProtocol, StmtId};
use crate::parser::render_expr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Sign {
    Plus,
    Minus,
}

/// One endpoint instruction.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Instr {
    Send {
        var: VarName,
        to: Role,
        money: bool,
    },
    Recv {
        var: VarName,
        from: Role,
        money: bool,
    },
    ChooseLocal {
        var: VarName,
        domain: String,
    },
    /// Receive an exogenous draw from the runtime's `world` endpoint.
    Observe {
        var: VarName,
    },
    BranchOnKnown {
        guard: VarName,
        then_branch: Vec<Instr>,
        else_branch: Vec<Instr>,
    },
    ComputeLocal {
        var: VarName,
        expr: Expr,
    },
    MoneyDelta {
        amount: Expr,
        sign: Sign,
    },
}

/// The per-role program produced by projection.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LocalProgram {
    pub role: Role,
    pub instrs: Vec<Instr>,
}

impl LocalProgram {
    /// Flattened view of every instruction, branches included.
    pub fn flatten(&self) -> Vec<&Instr> {
        let mut out = Vec::new();
        fn walk<'a>(instrs: &'a [Instr], out: &mut Vec<&'a Instr>) {
            for i in instrs {
                out.push(i);
                if let Instr::BranchOnKnown {
                    then_branch,
                    else_branch,
                    ..
                } = i
                {
                    walk(then_branch, out);
                    walk(else_branch, out);
                }
            }
        }
        walk(&self.instrs, &mut out);
        out
    }
}

/// Projects the protocol onto a single role.
pub fn project_role(checked: &CheckedProtocol, role: &Role) -> LocalProgram {
    let mut ids = IdCounter::new();
    let instrs = project_block(checked, &checked.desugared.body, role, &mut ids);
    LocalProgram {
        role: role.clone(),
        instrs,
    }
}

/// Projects every participating role (never `world`).
pub fn project_all(checked: &CheckedProtocol) -> BTreeMap<Role, LocalProgram> {
    checked
        .roles
        .iter()
        .map(|r| (r.clone(), project_role(checked, r)))
        .collect()
}

/// Tracks pre-order statement ids during the projection walk so the
/// checker's per-statement knowledge can be consulted.
struct IdCounter {
    next: StmtId,
}

impl IdCounter {
    fn new() -> Self {
        IdCounter { next: 0 }
    }

    fn take(&mut self) -> StmtId {
        let id = self.next;
        self.next += 1;
        id
    }

    fn skip_block(&mut self, stmts: &[Stmt]) {
        let mut flat = Vec::new();
        preorder(stmts, &mut flat);
        self.next += flat.len();
    }
}

fn project_block(
    checked: &CheckedProtocol,
    stmts: &[Stmt],
    role: &Role,
    ids: &mut IdCounter,
) -> Vec<Instr> {
    let mut out = Vec::new();
    for s in stmts {
        let id = ids.take();
        match s {
            Stmt::Send {
                payload,
                from,
                to,
                money,
                ..
            } => {
                let var = payload.as_var().expect("checked sends carry variables");
                if role == from {
                    out.push(Instr::Send {
                        var: var.clone(),
                        to: to.clone(),
                        money: *money,
                    });
                    if *money {
                        out.push(Instr::MoneyDelta {
                            amount: payload.clone(),
                            sign: Sign::Minus,
                        });
                    }
                } else if role == to {
                    out.push(Instr::Recv {
                        var: var.clone(),
                        from: from.clone(),
                        money: *money,
                    });
                    if *money {
                        out.push(Instr::MoneyDelta {
                            amount: payload.clone(),
                            sign: Sign::Plus,
                        });
                    }
                }
            }
            Stmt::Choose {
                var,
                chooser,
                domain,
                ..
            } => {
                if role == chooser {
                    out.push(Instr::ChooseLocal {
                        var: var.clone(),
                        domain: domain.clone(),
                    });
                }
            }
            Stmt::NatureChoose { var, .. } => {
                // observers are the roles holding the root when the draw runs
                let root = var.root();
                if checked.knowledge.knows(id, role, &root) {
                    out.push(Instr::Observe { var: var.clone() });
                }
            }
            Stmt::Values { .. } => {}
            Stmt::Local {
                var, owner, expr, ..
            } => {
                if role == owner {
                    out.push(Instr::ComputeLocal {
                        var: var.clone(),
                        expr: expr.clone(),
                    });
                }
            }
            Stmt::If {
                guard,
                broadcaster,
                guard_var,
                then_branch,
                else_branch,
                ..
            } => {
                if role == broadcaster {
                    match guard {
                        Guard::Choice { var, domain, .. } => out.push(Instr::ChooseLocal {
                            var: var.clone(),
                            domain: domain.clone(),
                        }),
                        Guard::Expr(e) => out.push(Instr::ComputeLocal {
                            var: guard_var.clone(),
                            expr: e.clone(),
                        }),
                    }
                    // unicast fan-out in lexicographic role order
                    for r in &checked.roles {
                        if r != broadcaster {
                            out.push(Instr::Send {
                                var: guard_var.clone(),
                                to: r.clone(),
                                money: false,
                            });
                        }
                    }
                } else {
                    out.push(Instr::Recv {
                        var: guard_var.clone(),
                        from: broadcaster.clone(),
                        money: false,
                    });
                }
                let then_instrs = project_block(checked, then_branch, role, ids);
                let else_instrs = project_block(checked, else_branch, role, ids);
                out.push(Instr::BranchOnKnown {
                    guard: guard_var.clone(),
                    then_branch: then_instrs,
                    else_branch: else_instrs,
                });
            }
            Stmt::Exchange { .. } => {
                // unreachable for checked protocols; keep id numbering sane
                ids.skip_block(&[]);
            }
        }
    }
    out
}

/// Human-readable listing, one instruction per line.
pub fn render_listing(p: &LocalProgram) -> String {
    let mut out = format!("role {}:\n", p.role);
    fn walk(instrs: &[Instr], depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        for i in instrs {
            match i {
                Instr::Send { var, to, money } => {
                    let tag = if *money { " [money]" } else { "" };
                    out.push_str(&format!("{pad}send {var} -> {to}{tag}\n"));
                }
                Instr::Recv { var, from, money } => {
                    let tag = if *money { " [money]" } else { "" };
                    out.push_str(&format!("{pad}recv {var} <- {from}{tag}\n"));
                }
                Instr::ChooseLocal { var, domain } => {
                    out.push_str(&format!("{pad}choose {var} : {domain}\n"));
                }
                Instr::Observe { var } => {
                    out.push_str(&format!("{pad}observe {var} <- world\n"));
                }
                Instr::BranchOnKnown {
                    guard,
                    then_branch,
                    else_branch,
                } => {
                    out.push_str(&format!("{pad}branch {guard} {{\n"));
                    walk(then_branch, depth + 1, out);
                    if else_branch.is_empty() {
                        out.push_str(&format!("{pad}}}\n"));
                    } else {
                        out.push_str(&format!("{pad}}} else {{\n"));
                        walk(else_branch, depth + 1, out);
                        out.push_str(&format!("{pad}}}\n"));
                    }
                }
                Instr::ComputeLocal { var, expr } => {
                    out.push_str(&format!("{pad}{var} = {}\n", render_expr(expr)));
                }
                Instr::MoneyDelta { amount, sign } => {
                    let op = match sign {
                        Sign::Plus => "+=",
                        Sign::Minus => "-=",
                    };
                    out.push_str(&format!("{pad}money {op} {}\n", render_expr(amount)));
                }
            }
        }
    }
    walk(&p.instrs, 1, &mut out);
    out
}

/// Compact structural skeleton: sends, receives, choices and branches only
/// (money legs and observes are runtime detail). Used to compare projected
/// programs against reference shapes.
pub fn skeleton(p: &LocalProgram) -> Vec<String> {
    let mut out = Vec::new();
    fn walk(instrs: &[Instr], depth: usize, out: &mut Vec<String>) {
        let pad = "| ".repeat(depth);
        for i in instrs {
            match i {
                Instr::Send {
                    var,
                    to,
                    money: false,
                } => out.push(format!("{pad}send {var} -> {to}")),
                Instr::Recv {
                    var,
                    from,
                    money: false,
                } => out.push(format!("{pad}recv {var} <- {from}")),
                Instr::ChooseLocal { var, domain } => {
                    out.push(format!("{pad}choose {var} : {domain}"))
                }
                Instr::BranchOnKnown {
                    guard,
                    then_branch,
                    else_branch,
                } => {
                    out.push(format!("{pad}branch {guard}"));
                    walk(then_branch, depth + 1, out);
                    if !else_branch.is_empty() {
                        out.push(format!("{pad}else"));
                        walk(else_branch, depth + 1, out);
                    }
                }
                _ => {}
            }
        }
    }
    walk(&p.instrs, 0, &mut out);
    out
}

/// Matched send/receive counts per directed channel `(from, to)`, flattened
/// over all branches; money legs counted separately.
pub fn channel_counts(
    programs: &BTreeMap<Role, LocalProgram>,
) -> BTreeMap<(Role, Role), (usize, usize)> {
    let mut out: BTreeMap<(Role, Role), (usize, usize)> = BTreeMap::new();
    for (role, prog) in programs {
        for i in prog.flatten() {
            match i {
                Instr::Send { to, .. } => {
                    out.entry((role.clone(), to.clone())).or_default().0 += 1;
                }
                Instr::Recv { from, .. } => {
                    out.entry((from.clone(), role.clone())).or_default().1 += 1;
                }
                _ => {}
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::check_well_formed;
    use crate::parser::parse_protocol;

    fn bookseller() -> CheckedProtocol {
        check_well_formed(&parse_protocol(crate::bundled::BOOKSELLER).unwrap()).unwrap()
    }

    #[test]
    fn buyer_projection_matches_reference_shape() {
        let c = bookseller();
        let buyer = project_role(&c, &Role::new("buyer"));
        assert_eq!(
            skeleton(&buyer),
            vec![
                "send title -> seller",
                "recv price <- seller",
                "choose accept : bool",
                "send accept -> seller",
                "branch accept",
                "| recv book <- seller",
            ]
        );
        // the money leg is present underneath the branch
        let flat = buyer.flatten();
        assert!(flat.iter().any(|i| matches!(i,
            Instr::Send { var, money: true, .. } if var.name() == "price")));
        assert!(flat.iter().any(|i| matches!(i,
            Instr::MoneyDelta { sign: Sign::Minus, .. })));
    }

    #[test]
    fn seller_projection_matches_reference_shape() {
        let c = bookseller();
        let seller = project_role(&c, &Role::new("seller"));
        assert_eq!(
            skeleton(&seller),
            vec![
                "recv title <- buyer",
                "choose price : Prices",
                "send price -> buyer",
                "recv accept <- buyer",
                "branch accept",
                "| send book -> buyer",
            ]
        );
        // seller observes the drawn quality before anything else
        assert!(matches!(&seller.instrs[0], Instr::Observe { var } if var.name() == "book.quality"));
        let flat = seller.flatten();
        assert!(flat.iter().any(|i| matches!(i,
            Instr::MoneyDelta { sign: Sign::Plus, .. })));
    }

    #[test]
    fn empty_protocol_projects_to_empty_program() {
        let c = check_well_formed(&parse_protocol("protocol empty { }").unwrap()).unwrap();
        for role in [Role::new("anyone"), Role::new("else")] {
            let p = project_role(&c, &role);
            assert!(p.instrs.is_empty());
        }
    }

    #[test]
    fn broadcast_fans_out_to_every_other_role() {
        let src = "param x : int @ a\nprotocol t {\n  send(x, b)\n  send(x, c)\n  if broadcast(a.choose(bool)) { }\n}\n";
        let c = check_well_formed(&parse_protocol(src).unwrap()).unwrap();
        let programs = project_all(&c);
        let a_sends: Vec<&Instr> = programs[&Role::new("a")]
            .flatten()
            .into_iter()
            .filter(|i| matches!(i, Instr::Send { var, .. } if var.name() == "accept"))
            .collect();
        assert_eq!(a_sends.len(), 2);
        // lexicographic fan-out order
        match (&a_sends[0], &a_sends[1]) {
            (Instr::Send { to: t1, .. }, Instr::Send { to: t2, .. }) => {
                assert_eq!(t1.name(), "b");
                assert_eq!(t2.name(), "c");
            }
            _ => unreachable!(),
        }
        for r in ["b", "c"] {
            let recvs = programs[&Role::new(r)]
                .flatten()
                .into_iter()
                .filter(|i| matches!(i, Instr::Recv { var, .. } if var.name() == "accept"))
                .count();
            assert_eq!(recvs, 1);
        }
    }

    #[test]
    fn communication_free_protocol_has_only_local_instructions() {
        let src = "param x : int @ a\nprotocol t {\n  c = a.choose(bool)\n  y = x + 1\n}\n";
        let c = check_well_formed(&parse_protocol(src).unwrap()).unwrap();
        let p = project_role(&c, &Role::new("a"));
        assert_eq!(p.instrs.len(), 2);
        assert!(p.flatten().iter().all(|i| matches!(
            i,
            Instr::ChooseLocal { .. } | Instr::ComputeLocal { .. }
        )));
    }

    #[test]
    fn send_recv_counts_match_pairwise() {
        let c = bookseller();
        let programs = project_all(&c);
        for ((from, to), (sends, recvs)) in channel_counts(&programs) {
            assert_eq!(sends, recvs, "channel {from}->{to} unbalanced");
        }
    }

    #[test]
    fn four_plain_pairs_on_the_accept_path() {
        let c = bookseller();
        let programs = project_all(&c);
        // walk the accept path: everything at top level plus then-branches
        fn accept_path(instrs: &[Instr]) -> Vec<&Instr> {
            let mut out = Vec::new();
            for i in instrs {
                match i {
                    Instr::BranchOnKnown { then_branch, .. } => {
                        out.push(i);
                        out.extend(accept_path(then_branch));
                    }
                    other => out.push(other),
                }
            }
            out
        }
        let mut plain = 0usize;
        let mut money = 0usize;
        for prog in programs.values() {
            for i in accept_path(&prog.instrs) {
                match i {
                    Instr::Send { money: false, .. } => plain += 1,
                    Instr::Send { money: true, .. } => money += 1,
                    _ => {}
                }
            }
        }
        assert_eq!(plain, 4, "title, price, accept, book");
        assert_eq!(money, 1, "the payment leg");
    }

    #[test]
    fn listing_mirrors_the_choreography_columns() {
        let c = bookseller();
        let buyer = render_listing(&project_role(&c, &Role::new("buyer")));
        assert!(buyer.contains("send title -> seller"));
        assert!(buyer.contains("recv price <- seller"));
        assert!(buyer.contains("choose accept : bool"));
        assert!(buyer.contains("branch accept {"));
        assert!(buyer.contains("send price -> seller [money]"));
        assert!(buyer.contains("money -= price"));
        let seller = render_listing(&project_role(&c, &Role::new("seller")));
        assert!(seller.contains("observe book.quality <- world"));
        assert!(seller.contains("money += price"));
    }
}
