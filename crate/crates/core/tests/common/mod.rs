#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use blockdbg_core::program::{ArithOp, Block, CompareOp, ProcedureDef, Script, Statement, Trigger};
use blockdbg_core::{parse_program, Expr, Program, Value};
use proptest::prelude::*;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../programs")
}

/// Every `.blk.json` program shipped in `programs/`, sorted by file name.
pub fn corpus() -> Vec<(String, Program)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(".blk.json"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let program = parse_program(&text).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (p.file_name().unwrap().to_string_lossy().into_owned(), program)
        })
        .collect()
}

pub fn corpus_program(name: &str) -> Program {
    corpus().into_iter().find(|(n, _)| n == name).map(|(_, p)| p).expect("corpus file")
}

const VARS: [&str; 3] = ["x", "y", "z"];
const LISTS: [&str; 2] = ["l", "m"];

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        4 => (-3i32..10).prop_map(|n| Value::Number(n as f64)),
        1 => prop::sample::select(vec!["", "a", "3", "last", "Hi"]).prop_map(Value::text),
        1 => any::<bool>().prop_map(Value::Bool),
    ]
}

fn expr(params: Vec<String>) -> BoxedStrategy<Expr> {
    let mut leaves: Vec<BoxedStrategy<Expr>> = vec![
        value().prop_map(Expr::Literal).boxed(),
        prop::sample::select(VARS.to_vec()).prop_map(Expr::var).boxed(),
        prop::sample::select(LISTS.to_vec()).prop_map(|l| Expr::ListLength(l.into())).boxed(),
    ];
    if !params.is_empty() {
        leaves.push(prop::sample::select(params).prop_map(Expr::Param).boxed());
    }
    let leaf = prop::strategy::Union::new(leaves);
    leaf.prop_recursive(3, 12, 2, |inner| {
        let b = |e: Expr| Box::new(e);
        prop_oneof![
            (prop::sample::select(vec![ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div, ArithOp::Mod]), inner.clone(), inner.clone())
                .prop_map(|(op, l, r)| Expr::arith(op, l, r)),
            (prop::sample::select(vec![CompareOp::Lt, CompareOp::Gt, CompareOp::Eq]), inner.clone(), inner.clone())
                .prop_map(|(op, l, r)| Expr::compare(op, l, r)),
            (prop::sample::select(LISTS.to_vec()), inner.clone())
                .prop_map(move |(l, i)| Expr::ListItem { list: l.into(), index: b(i) }),
            (prop::sample::select(LISTS.to_vec()), inner.clone())
                .prop_map(move |(l, i)| Expr::ListContains { list: l.into(), item: b(i) }),
            (inner.clone(), inner.clone()).prop_map(move |(l, r)| Expr::Join(b(l), b(r))),
            (inner.clone(), inner.clone()).prop_map(move |(l, r)| Expr::And(b(l), b(r))),
            (inner.clone(), inner.clone()).prop_map(move |(l, r)| Expr::Or(b(l), b(r))),
            (inner.clone(), inner.clone()).prop_map(move |(i, t)| Expr::LetterOf { index: b(i), text: b(t) }),
            inner.clone().prop_map(move |e| Expr::Not(b(e))),
            inner.clone().prop_map(move |e| Expr::Round(b(e))),
            inner.prop_map(move |e| Expr::StringLength(b(e))),
        ]
    })
    .boxed()
}

/// Block tree with placeholder ids; see [`number_blocks`].
fn block(params: Vec<String>, callable: Vec<(String, usize)>) -> BoxedStrategy<Block> {
    let e = expr(params);
    let var = prop::sample::select(VARS.to_vec()).prop_map(String::from);
    let list = prop::sample::select(LISTS.to_vec()).prop_map(String::from);
    let mut simple: Vec<(u32, BoxedStrategy<Statement>)> = vec![
        (3, (var.clone(), e.clone()).prop_map(|(var, value)| Statement::SetVar { var, value }).boxed()),
        (3, (var, e.clone()).prop_map(|(var, by)| Statement::ChangeVar { var, by }).boxed()),
        (2, (list.clone(), e.clone()).prop_map(|(list, item)| Statement::ListAdd { list, item }).boxed()),
        (1, (list.clone(), e.clone()).prop_map(|(list, index)| Statement::ListDelete { list, index }).boxed()),
        (1, (list.clone(), e.clone(), e.clone())
            .prop_map(|(list, index, item)| Statement::ListInsert { list, index, item })
            .boxed()),
        (1, (list, e.clone(), e.clone()).prop_map(|(list, index, item)| Statement::ListReplace { list, index, item }).boxed()),
        (3, e.clone().prop_map(|message| Statement::Say { message }).boxed()),
    ];
    if !callable.is_empty() {
        let calls = (prop::sample::select(callable), prop::collection::vec(e.clone(), 2)).prop_map(|((name, arity), mut args)| {
            args.truncate(arity);
            Statement::Call { procedure: name, inputs: args }
        });
        simple.push((2, calls.boxed()));
    }
    let leaf = prop::strategy::Union::new_weighted(simple).prop_map(|op| Block::new("?", op));
    let leaf = prop_oneof![20 => leaf, 1 => Just(Block::new("?", Statement::StopScript))];
    leaf.prop_recursive(3, 24, 4, move |inner| {
        let body = prop::collection::vec(inner, 0..4);
        let cond = e.clone();
        let small = (0i32..4).prop_map(|n| Expr::lit(n as f64));
        prop_oneof![
            (cond.clone(), body.clone())
                .prop_map(|(condition, b)| Block::with_substacks("?", Statement::If { condition }, vec![b])),
            (cond.clone(), body.clone(), body.clone())
                .prop_map(|(condition, a, b)| Block::with_substacks("?", Statement::IfElse { condition }, vec![a, b])),
            (small, body.clone()).prop_map(|(times, b)| Block::with_substacks("?", Statement::Repeat { times }, vec![b])),
            (cond, body.clone())
                .prop_map(|(condition, b)| Block::with_substacks("?", Statement::RepeatUntil { condition }, vec![b])),
        ]
    })
    .boxed()
}

fn number_blocks(blocks: &mut [Block], next: &mut usize) {
    for b in blocks {
        b.id = format!("b{next}").as_str().into();
        *next += 1;
        for s in &mut b.substacks {
            number_blocks(s, next);
        }
    }
}

/// Random valid programs: up to two procedures (each may call only the ones
/// defined before it, so there is no recursion) and one to three scripts.
/// Loops are bounded only by fuel.
pub fn program() -> impl Strategy<Value = Program> {
    let lists = prop::collection::vec(prop::collection::vec(value(), 0..5), 2);
    let p0 = prop::collection::vec(block(vec!["n".into()], vec![]), 0..4);
    let p1 = prop::collection::vec(block(vec!["a".into(), "b".into()], vec![("p0".into(), 1)]), 0..4);
    let scripts = prop::collection::vec(
        prop::collection::vec(block(vec![], vec![("p0".into(), 1), ("p1".into(), 2)]), 1..5),
        1..4,
    );
    (prop::collection::vec(value(), 3), lists, p0, p1, scripts).prop_map(|(vars, lists, p0, p1, scripts)| {
        let mut next = 1;
        let mut procedures = vec![
            ProcedureDef { name: "p0".into(), params: vec!["n".into()], body: p0 },
            ProcedureDef { name: "p1".into(), params: vec!["a".into(), "b".into()], body: p1 },
        ];
        let mut scripts: Vec<Script> =
            scripts.into_iter().map(|body| Script { trigger: Trigger::GreenFlag, body }).collect();
        for s in &mut scripts {
            number_blocks(&mut s.body, &mut next);
        }
        for p in &mut procedures {
            number_blocks(&mut p.body, &mut next);
        }
        Program {
            variables: VARS.iter().map(|v| v.to_string()).zip(vars).collect::<BTreeMap<_, _>>(),
            lists: LISTS.iter().map(|l| l.to_string()).zip(lists).collect(),
            procedures,
            scripts,
        }
    })
}
