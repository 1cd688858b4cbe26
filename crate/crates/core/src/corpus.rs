//! Dependency-parsed corpora: CoNLL-U ingestion and tree queries.
//!
//! Only the ID, FORM, UPOS, HEAD and DEPREL columns are read. Multiword
//! token ranges (`3-4`) and empty nodes (`5.1`) are skipped, so every
//! sentence is a basic single-headed tree.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single word of a parsed sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    /// 1-based position within the sentence.
    pub index: usize,
    pub form: String,
    pub upos: String,
    /// Index of the governor, 0 for the root.
    pub head: usize,
    pub deprel: String,
}

impl Token {
    pub fn new(
        index: usize,
        form: impl Into<String>,
        upos: impl Into<String>,
        head: usize,
        deprel: impl Into<String>,
    ) -> Self {
        Token {
            index,
            form: form.into(),
            upos: upos.into(),
            head,
            deprel: deprel.into(),
        }
    }

    /// True for tokens tagged as verbs or auxiliaries.
    pub fn is_verbal(&self) -> bool {
        self.upos == "VERB" || self.upos == "AUX"
    }
}

/// Returns true when `deprel` carries the relation `label`, ignoring any
/// subtype after a colon (`advcl:because` carries `advcl`).
pub fn label_matches(deprel: &str, label: &str) -> bool {
    deprel == label || deprel.split(':').next() == Some(label)
}

/// A dependency tree over one sentence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepSentence {
    tokens: Vec<Token>,
    pub sent_id: Option<String>,
}

impl DepSentence {
    /// Builds a sentence, checking that the head array forms a single
    /// rooted tree over consecutively numbered tokens.
    pub fn new(tokens: Vec<Token>, sent_id: Option<String>) -> Result<Self> {
        let sentence = DepSentence { tokens, sent_id };
        sentence.validate()?;
        Ok(sentence)
    }

    fn structure_error(&self, message: impl Into<String>) -> Error {
        Error::Structure {
            sent_id: self.sent_id.clone().unwrap_or_else(|| "<unnamed>".into()),
            message: message.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(self.structure_error("empty sentence"));
        }
        let mut roots = 0;
        for (pos, token) in self.tokens.iter().enumerate() {
            if token.index != pos + 1 {
                return Err(self.structure_error(format!(
                    "token ids must be consecutive from 1, found {} at position {}",
                    token.index,
                    pos + 1
                )));
            }
            if token.form.is_empty() {
                return Err(self.structure_error(format!("token {} has an empty form", token.index)));
            }
            if token.head > n {
                return Err(self.structure_error(format!(
                    "token {} has head {} outside the sentence",
                    token.index, token.head
                )));
            }
            if token.head == token.index {
                return Err(self.structure_error(format!("token {} heads itself", token.index)));
            }
            if token.head == 0 {
                roots += 1;
            }
        }
        if roots != 1 {
            return Err(self.structure_error(format!("expected exactly one root, found {}", roots)));
        }
        // Every token must reach the root within n steps.
        for token in &self.tokens {
            let mut current = token.head;
            let mut steps = 0;
            while current != 0 {
                steps += 1;
                if steps > n {
                    return Err(self.structure_error(format!("token {} lies on a cycle", token.index)));
                }
                current = self.tokens[current - 1].head;
            }
        }
        Ok(())
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token at a 1-based index.
    pub fn token(&self, index: usize) -> Option<&Token> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn root(&self) -> &Token {
        self.tokens
            .iter()
            .find(|t| t.head == 0)
            .expect("validated sentence has a root")
    }

    /// Space-joined forms of every token.
    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(|t| t.form.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index == 0 || index > self.tokens.len() {
            return Err(Error::argument(format!(
                "token index {} is not in a sentence of {} tokens",
                index,
                self.tokens.len()
            )));
        }
        Ok(())
    }

    /// Tokens governed by `head`, optionally restricted to one relation,
    /// in surface order.
    pub fn dependents(&self, head: usize, relation: Option<&str>) -> Result<Vec<&Token>> {
        self.check_index(head)?;
        Ok(self
            .tokens
            .iter()
            .filter(|t| t.head == head)
            .filter(|t| relation.map_or(true, |rel| label_matches(&t.deprel, rel)))
            .collect())
    }

    /// All tokens reachable from `head`, pruning every excluded token
    /// together with everything below it. Surface order.
    pub fn subtree_yield(&self, head: usize, excluded: &HashSet<usize>) -> Result<Vec<&Token>> {
        self.check_index(head)?;
        let n = self.tokens.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for t in &self.tokens {
            children[t.head].push(t.index);
        }

        let mut keep = vec![false; n + 1];
        let mut stack = Vec::new();
        if !excluded.contains(&head) {
            stack.push(head);
        }
        while let Some(node) = stack.pop() {
            keep[node] = true;
            for &child in &children[node] {
                if !excluded.contains(&child) {
                    stack.push(child);
                }
            }
        }
        Ok(self.tokens.iter().filter(|t| keep[t.index]).collect())
    }
}

/// A document: sentences in their original text order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub sentences: Vec<DepSentence>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            sentences: Vec::new(),
        }
    }
}

/// Streaming CoNLL-U reader yielding one document at a time.
pub struct DocumentReader<R> {
    read: R,
    line_no: usize,
    doc: Option<Document>,
    n_docs: usize,
    tokens: Vec<Token>,
    sent_id: Option<String>,
    sent_line: usize,
    done: bool,
}

impl<R: BufRead> DocumentReader<R> {
    pub fn new(read: R) -> Self {
        DocumentReader {
            read,
            line_no: 0,
            doc: None,
            n_docs: 0,
            tokens: Vec::new(),
            sent_id: None,
            sent_line: 0,
            done: false,
        }
    }

    fn start_doc(&mut self, id: Option<String>) -> Option<Document> {
        self.n_docs += 1;
        let id = id.unwrap_or_else(|| format!("doc{}", self.n_docs));
        self.doc.replace(Document::new(id))
    }

    fn finish_sentence(&mut self) -> Result<()> {
        if self.tokens.is_empty() {
            self.sent_id = None;
            return Ok(());
        }
        let tokens = std::mem::take(&mut self.tokens);
        let sent_id = self
            .sent_id
            .take()
            .or_else(|| Some(format!("line {}", self.sent_line)));
        let sentence = DepSentence::new(tokens, sent_id)?;
        if self.doc.is_none() {
            self.start_doc(None);
        }
        self.doc.as_mut().unwrap().sentences.push(sentence);
        Ok(())
    }

    fn take_nonempty_doc(&mut self) -> Option<Document> {
        match self.doc.take() {
            Some(doc) if !doc.sentences.is_empty() => Some(doc),
            _ => None,
        }
    }

    fn parse_token(&self, line: &str) -> Result<Option<Token>> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 10 {
            return Err(Error::parse(
                self.line_no,
                format!("expected 10 tab-separated columns, found {}", fields.len()),
            ));
        }
        if fields[0].contains('-') || fields[0].contains('.') {
            return Ok(None);
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(self.line_no, format!("non-numeric token id '{}'", fields[0])))?;
        let head: usize = fields[6]
            .parse()
            .map_err(|_| Error::parse(self.line_no, format!("non-numeric head '{}'", fields[6])))?;
        Ok(Some(Token::new(index, fields[1], fields[3], head, fields[7])))
    }

    fn next_document(&mut self) -> Result<Option<Document>> {
        if self.done {
            return Ok(None);
        }
        let mut buf = String::new();
        loop {
            buf.clear();
            let read = self.read.read_line(&mut buf)?;
            if read == 0 {
                self.finish_sentence()?;
                self.done = true;
                return Ok(self.take_nonempty_doc());
            }
            self.line_no += 1;
            let line = buf.trim_end_matches(['\n', '\r']);

            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(rest) = comment.strip_prefix("newdoc") {
                    self.finish_sentence()?;
                    let id = rest
                        .trim()
                        .strip_prefix("id")
                        .and_then(|r| r.trim().strip_prefix('='))
                        .map(|r| r.trim().to_string())
                        .filter(|r| !r.is_empty());
                    let previous = self.start_doc(id);
                    if let Some(doc) = previous.filter(|d| !d.sentences.is_empty()) {
                        return Ok(Some(doc));
                    }
                } else if let Some(rest) = comment.strip_prefix("sent_id") {
                    if let Some(value) = rest.trim().strip_prefix('=') {
                        self.sent_id = Some(value.trim().to_string());
                    }
                }
                continue;
            }

            if line.trim().is_empty() {
                self.finish_sentence()?;
                continue;
            }

            if self.tokens.is_empty() {
                self.sent_line = self.line_no;
            }
            if let Some(token) = self.parse_token(line)? {
                self.tokens.push(token);
            }
        }
    }
}

impl<R: BufRead> Iterator for DocumentReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.next_document() {
            Ok(Some(doc)) => Some(Ok(doc)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Reads every document from a CoNLL-U stream.
pub fn parse_conllu<R: BufRead>(read: R) -> Result<Vec<Document>> {
    DocumentReader::new(read).collect()
}

/// Writes documents back out as CoNLL-U. Unread columns become `_`.
pub fn write_conllu<W: Write>(docs: &[Document], mut write: W) -> Result<()> {
    for doc in docs {
        writeln!(write, "# newdoc id = {}", doc.doc_id)?;
        for sentence in &doc.sentences {
            if let Some(id) = &sentence.sent_id {
                writeln!(write, "# sent_id = {}", id)?;
            }
            for t in sentence.tokens() {
                writeln!(
                    write,
                    "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                    t.index, t.form, t.upos, t.head, t.deprel
                )?;
            }
            writeln!(write)?;
        }
    }
    Ok(())
}
