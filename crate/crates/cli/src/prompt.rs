//! Interactive annotation over a line-oriented reader and writer (stdin/stdout in the
//! binary, buffers in tests).

use std::io::{BufRead, Write};

use genkb_core::active::{ActiveError, Annotator};
use genkb_core::eval::{EvalError, LabelSource};
use genkb_core::{NamedTriple, QuantLabel};

/// The question shown for a triple: "is it true that all bee pollinate some clover?".
pub fn render_question(q: QuantLabel, t: &NamedTriple) -> String {
    let q = match q {
        QuantLabel::All | QuantLabel::None => "all",
        QuantLabel::Some => "some",
    };
    format!("is it true that {q} {} {} some {}?", t.source, t.relation, t.target)
}

fn read_answer<R: BufRead, W: Write, T>(
    input: &mut R,
    output: &mut W,
    prompt: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<T, String> {
    loop {
        write!(output, "{prompt} ").map_err(|e| e.to_string())?;
        output.flush().map_err(|e| e.to_string())?;
        let mut line = String::new();
        if input.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
            return Err("input closed before all questions were answered".into());
        }
        match parse(line.trim()) {
            Some(v) => return Ok(v),
            None => writeln!(output, "unrecognised answer {:?}", line.trim()).map_err(|e| e.to_string())?,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "y" | "yes" | "t" | "true" | "1" | "all" | "some" | "a" | "s" => Some(true),
        "n" | "no" | "f" | "false" | "0" | "none" => Some(false),
        _ => None,
    }
}

fn parse_label(s: &str) -> Option<QuantLabel> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Some(QuantLabel::All),
        "s" => Some(QuantLabel::Some),
        "n" => Some(QuantLabel::None),
        other => other.parse().ok(),
    }
}

/// Asks for the truth of ranked predictions, one rank at a time in the order the
/// estimator requests them.
pub struct PromptLabels<'a, R, W> {
    ranked: &'a [NamedTriple],
    input: R,
    output: W,
}

impl<'a, R: BufRead, W: Write> PromptLabels<'a, R, W> {
    pub fn new(ranked: &'a [NamedTriple], input: R, output: W) -> Self {
        Self { ranked, input, output }
    }
}

impl<R: BufRead, W: Write> LabelSource for PromptLabels<'_, R, W> {
    fn labels(&mut self, ranks: &[usize]) -> Result<Vec<bool>, EvalError> {
        ranks
            .iter()
            .map(|&i| {
                let t = self
                    .ranked
                    .get(i)
                    .ok_or_else(|| EvalError::Label(format!("no prediction at rank {}", i + 1)))?;
                let prompt = format!("[rank {}] {} {} {}? [y/n]", i + 1, t.source, t.relation, t.target);
                read_answer(&mut self.input, &mut self.output, &prompt, parse_bool).map_err(EvalError::Label)
            })
            .collect()
    }
}

/// Asks a person for all/some/none.
pub struct PromptAnnotator<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> PromptAnnotator<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }
}

impl<R: BufRead, W: Write> Annotator for PromptAnnotator<R, W> {
    fn annotate(&mut self, triple: &NamedTriple) -> Result<QuantLabel, ActiveError> {
        let prompt = format!("{} [all/some/none]", render_question(QuantLabel::All, triple));
        read_answer(&mut self.input, &mut self.output, &prompt, parse_label).map_err(ActiveError::Annotation)
    }
}
