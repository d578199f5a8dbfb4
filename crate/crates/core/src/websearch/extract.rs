//! Main-content text extraction.
//!
//! The rule: drop `script`, `style`, `nav`, `header` and `footer` subtrees
//! (plus non-rendered containers such as `head`, `noscript`, `template`,
//! `iframe` and `svg`), take the text of what remains, break it at block
//! element boundaries, collapse whitespace inside each block and join the
//! non-empty blocks with newlines.

use scraper::{Html, Node};

const REMOVED: &[&str] = &[
    "script", "style", "nav", "header", "footer", "head", "noscript", "template", "iframe", "svg", "canvas",
    "select", "button",
];

const BLOCKS: &[&str] = &[
    "address",
    "article",
    "aside",
    "blockquote",
    "body",
    "br",
    "caption",
    "dd",
    "details",
    "dialog",
    "div",
    "dl",
    "dt",
    "fieldset",
    "figcaption",
    "figure",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "hr",
    "html",
    "li",
    "main",
    "ol",
    "p",
    "pre",
    "section",
    "summary",
    "table",
    "tbody",
    "td",
    "tfoot",
    "th",
    "thead",
    "tr",
    "ul",
];

/// Extract readable text from an HTML page.
pub fn extract_main_text(html: &str) -> String {
    let document = Html::parse_document(html);
    let mut blocks: Vec<String> = vec![String::new()];
    // (node, closing) pairs; an element is pushed once to open and once to close.
    let mut stack = vec![(document.tree.root(), false)];
    while let Some((node, closing)) = stack.pop() {
        match node.value() {
            Node::Element(el) => {
                let name = el.name();
                if REMOVED.contains(&name) {
                    continue;
                }
                let is_block = BLOCKS.contains(&name);
                if is_block {
                    blocks.push(String::new());
                }
                if !closing {
                    stack.push((node, true));
                    let children: Vec<_> = node.children().collect();
                    stack.extend(children.into_iter().rev().map(|c| (c, false)));
                }
            }
            Node::Text(text) if !closing => {
                blocks.last_mut().expect("never empty").push_str(text);
            }
            Node::Document | Node::Fragment if !closing => {
                let children: Vec<_> = node.children().collect();
                stack.extend(children.into_iter().rev().map(|c| (c, false)));
            }
            _ => {}
        }
    }
    join_blocks(blocks.iter().map(String::as_str))
}

/// Plain-text documents get the same line normalization as extracted HTML.
pub fn normalize_plain_text(text: &str) -> String {
    join_blocks(text.lines())
}

fn join_blocks<'a>(blocks: impl Iterator<Item = &'a str>) -> String {
    blocks
        .map(collapse_whitespace)
        .filter(|b| !b.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
