//! Sentiment treebank files: one bracketed tree per line, e.g.
//! `(3 (2 It) (3 (2 works) (2 .)))`, labels 0–4 on every node.

use std::path::Path;

use crate::data::Example;
use crate::error::{IramError, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SstTree {
    Leaf { label: u8, token: String },
    Node { label: u8, children: Vec<SstTree> },
}

impl SstTree {
    pub fn label(&self) -> u8 {
        match self {
            SstTree::Leaf { label, .. } | SstTree::Node { label, .. } => *label,
        }
    }

    pub fn leaves(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves(&self, out: &mut Vec<String>) {
        match self {
            SstTree::Leaf { token, .. } => out.push(token.clone()),
            SstTree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Every node's (leaves, label), root first.
    pub fn phrases(&self) -> Vec<(Vec<String>, u8)> {
        let mut out = vec![(self.leaves(), self.label())];
        if let SstTree::Node { children, .. } = self {
            for c in children {
                out.extend(c.phrases());
            }
        }
        out
    }

    pub fn render(&self) -> String {
        match self {
            SstTree::Leaf { label, token } => format!("({label} {token})"),
            SstTree::Node { label, children } => {
                let inner: Vec<String> = children.iter().map(SstTree::render).collect();
                format!("({label} {})", inner.join(" "))
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> IramError {
        IramError::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.src[self.pos..].chars().next() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, ch: char) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.err(format!("expected '{ch}', found '{c}'"))),
            None => Err(self.err(format!("expected '{ch}', found end of input"))),
        }
    }

    fn atom(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.src[start..self.pos]
    }

    fn tree(&mut self) -> Result<SstTree> {
        self.expect('(')?;
        let at = self.pos;
        let raw = self.atom();
        let label = match raw.parse::<u8>() {
            Ok(l) if l <= 4 => l,
            _ => {
                return Err(IramError::Parse {
                    offset: at,
                    message: format!("expected a label in 0..=4, found {raw:?}"),
                })
            }
        };
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                let mut children = Vec::new();
                while self.peek() == Some('(') {
                    children.push(self.tree()?);
                    self.skip_ws();
                }
                self.expect(')')?;
                Ok(SstTree::Node { label, children })
            }
            Some(')') => Err(self.err("node without children or token")),
            Some(_) => {
                let token = self.atom().to_string();
                self.expect(')')?;
                Ok(SstTree::Leaf { label, token })
            }
            None => Err(self.err("unexpected end of input")),
        }
    }
}

pub fn parse_tree(line: &str) -> Result<SstTree> {
    let mut p = Parser { src: line, pos: 0 };
    let t = p.tree()?;
    p.skip_ws();
    if p.pos != line.len() {
        return Err(p.err("trailing input after tree"));
    }
    Ok(t)
}

/// Leaves in order and the root (sentence) label.
pub fn parse_sst_tree(line: &str) -> Result<(Vec<String>, u8)> {
    let t = parse_tree(line)?;
    Ok((t.leaves(), t.label()))
}

/// 0, 1 → negative (0); 3, 4 → positive (1); 2 → dropped.
pub fn binarize_sst(label: u8) -> Result<Option<usize>> {
    match label {
        0 | 1 => Ok(Some(0)),
        2 => Ok(None),
        3 | 4 => Ok(Some(1)),
        l => Err(IramError::Data(format!("sentiment label {l} outside 0..=4"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SstMode {
    Binary,
    FineGrained,
}

impl SstMode {
    pub fn num_classes(self) -> usize {
        match self {
            SstMode::Binary => 2,
            SstMode::FineGrained => 5,
        }
    }
}

/// Parses tree lines into examples. With `phrases`, every node becomes an
/// instance; otherwise only the root sentence.
pub fn examples_from_lines<'a, I>(lines: I, mode: SstMode, phrases: bool, source: &str) -> Result<Vec<Example>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = Vec::new();
    for (n, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tree = parse_tree(line.trim()).map_err(|e| match e {
            IramError::Parse { offset, message } => IramError::Parse {
                offset,
                message: format!("{source} line {}: {message}", n + 1),
            },
            e => e,
        })?;
        let items = if phrases {
            tree.phrases()
        } else {
            vec![(tree.leaves(), tree.label())]
        };
        for (i, (tokens, label)) in items.into_iter().enumerate() {
            let label = match mode {
                SstMode::FineGrained => Some(label as usize),
                SstMode::Binary => binarize_sst(label)?,
            };
            if let Some(label) = label {
                out.push(Example {
                    tokens,
                    label,
                    source: format!("{source}:{}:{i}", n + 1),
                });
            }
        }
    }
    Ok(out)
}

pub fn load_sst(path: &Path, mode: SstMode, phrases: bool) -> Result<Vec<Example>> {
    let text = std::fs::read_to_string(path).map_err(|e| IramError::io(path, e))?;
    examples_from_lines(text.lines(), mode, phrases, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_leaves_and_root_label() {
        let (tokens, label) = parse_sst_tree("(3 (2 It) (3 (2 works) (2 .)))").unwrap();
        assert_eq!(tokens, vec!["It", "works", "."]);
        assert_eq!(label, 3);
    }

    #[test]
    fn malformed_trees_report_offsets() {
        for bad in ["((2 a)", "(2 (2 a)", "(x a)", "(7 a)", "(2 a))", "(2 )", ""] {
            match parse_sst_tree(bad) {
                Err(IramError::Parse { offset, .. }) => assert!(offset <= bad.len()),
                other => panic!("{bad:?} gave {other:?}"),
            }
        }
        match parse_sst_tree("((2 a)") {
            Err(IramError::Parse { offset, .. }) => assert_eq!(offset, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn binarization() {
        assert_eq!(binarize_sst(0).unwrap(), Some(0));
        assert_eq!(binarize_sst(1).unwrap(), Some(0));
        assert_eq!(binarize_sst(2).unwrap(), None);
        assert_eq!(binarize_sst(3).unwrap(), Some(1));
        assert_eq!(binarize_sst(4).unwrap(), Some(1));
        assert!(binarize_sst(5).is_err());
    }

    #[test]
    fn neutral_sentences_dropped_in_binary_mode() {
        let lines = ["(2 (2 ok))", "(4 (4 great))", "(0 (0 bad))"];
        let bin = examples_from_lines(lines, SstMode::Binary, false, "t").unwrap();
        assert_eq!(bin.iter().map(|e| e.label).collect::<Vec<_>>(), vec![1, 0]);
        let fine = examples_from_lines(lines, SstMode::FineGrained, false, "t").unwrap();
        assert_eq!(fine.iter().map(|e| e.label).collect::<Vec<_>>(), vec![2, 4, 0]);
    }

    #[test]
    fn phrase_mode_emits_every_node() {
        let ex = examples_from_lines(["(3 (2 It) (3 (2 works) (2 .)))"], SstMode::FineGrained, true, "t").unwrap();
        assert_eq!(ex.len(), 5);
        assert_eq!(ex[0].tokens.len(), 3);
        assert_eq!(ex[2].tokens, vec!["works", "."]);
    }
}
