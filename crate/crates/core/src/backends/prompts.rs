//! Prompt templates for response generation and query self-generation.
//!
//! Placeholders are written `{name}`. Rendering replaces every declared
//! placeholder and fails if one is missing; literal braces elsewhere in a
//! template (the JSON examples) are left alone.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::consistency::ExtractorKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: &'static str,
    pub text: &'static str,
    pub placeholders: &'static [&'static str],
}

impl PromptTemplate {
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = self.text.to_string();
        for key in self.placeholders {
            let (_, value) = values.iter().find(|(k, _)| k == key).ok_or_else(|| {
                Error::InvalidInput(format!("template {} needs a value for {{{key}}}", self.name))
            })?;
            out = out.replace(&format!("{{{key}}}"), value);
        }
        Ok(out)
    }
}

pub const GSM8K_RESPONSE: PromptTemplate = PromptTemplate {
    name: "gsm8k-response",
    text: "Prompt: Answer the following question step-by-step. When you are ready, place the final answer in a new line as #### < number >.
Q: {question}
A: Let's think step by step. ",
    placeholders: &["question"],
};

pub const MATH_RESPONSE: PromptTemplate = PromptTemplate {
    name: "math-response",
    text: "Prompt: Answer the following question step-by-step. When you are ready, place the final answer in a new line as: The final answer is $\\boxed{< your answer>}$
Q: {question}
A: Let's think step by step. ",
    placeholders: &["question"],
};

pub const ZEBRA_RESPONSE: PromptTemplate = PromptTemplate {
    name: "zebralogic-response",
    text: r#"Example Puzzle:

There are 3 houses, numbered 1 to 3 from left to right, as seen from across the street. Each house is occupied by a different person. Each house has a unique attribute for each of the following characteristics:
 - Each person has a unique name: 'Peter', 'Eric', 'Arnold'.
 - Each person has a unique favorite drink: 'tea', 'water', 'milk'

## Clues:
1. Peter is in the second house.
2. Arnold is directly left of the one who only drinks water.
3. The one who only drinks water is directly left of the person who likes milk.

Answer to the Example Puzzle:

{
    "reasoning": "Given Clue 1, we know Peter is in House 2. According to Clue 2, Arnold is directly left of the one who only drinks water. The person in House 3 cannot be on the left of anyone, so Arnold must be in House 1. Thus, Peter drinks water, and Eric lives in House 3. Then, according to Clue 3, Eric drinks milk. Therefore, Arnold drinks tea.",
    "solution": {
        "House 1": {
            "Name": "Arnold",
            "Drink": "tea"
        },
        "House 2": {
            "Name": "Peter",
            "Drink": "water"
        },
        "House 3": {
            "Name": "Eric",
            "Drink": "milk"
             }
       }
}

Puzzle to Solve: {puzzle}


Prompt:
Now please solve the above puzzle. Present your reasoning and solution in the following json format:
 {json template}"#,
    placeholders: &["puzzle", "json template"],
};

/// Four-shot form; [`render_math_query`] accepts any number of exemplars.
pub const MATH_QUERY: PromptTemplate = PromptTemplate {
    name: "gsm8k-math-query",
    text: "Q: {few-shot question 1}
Q: {few-shot question 2}
Q: {few-shot question 3}
Q: {few-shot question 4}

Prompt: Based on the examples above, generate ONE solvable math word problem with similar difficulty. Note that all the information needed to solve the problem should be included in the question. Output the question and nothing else.
Q: ",
    placeholders: &[
        "few-shot question 1",
        "few-shot question 2",
        "few-shot question 3",
        "few-shot question 4",
    ],
};

pub const ZEBRA_QUERY: PromptTemplate = PromptTemplate {
    name: "zebralogic-query",
    text: r#"Example Puzzle:
Attributes to Change: ["Name", "Drink"]
```
There are 3 houses, numbered 1 to 3 from left to right, as seen from across the street. Each house is occupied by a different person. Each house has a unique attribute for each of the following characteristics:
 - Each person has a unique name: 'Peter', 'Eric', 'Arnold'.
 - Each person has a unique favorite drink: 'tea', 'water', 'milk'

## Clues:
1. Peter is in the second house.
2. Arnold is directly left of the one who only drinks water.
3. The one who only drinks water is directly left of the person who likes milk.
'''

Answer:
Let's change the "Name" and "Drink" attributes of the given puzzle to create a new puzzle. There are 3 names and drinks involved
Mentions of "Name" changes from 'Peter', 'Eric', 'Arnold' to mentions of "Name": 'Molly', 'Shannon', 'Kelly' respectively.
Instead of "Drink" as the attribute, let's their "Food" preferences as the attribute. So mentions of "Drink" changes from 'tea', 'water', 'milk' to mentions of "Food": 'pizza', 'burgers', 'fries' respectively.
Now, changing the language of the puzzle and clues we get,

New Attribute Map: {"Name": "Name", "Drink": "Food"}
Puzzle:
'''
There are 3 houses, numbered 1 to 3 from left to right, as seen from across the street. Each house is occupied by a different person. Each house has a unique attribute for each of the following characteristics:
 - Each person has a unique name: 'Molly', 'Shannon', 'Kelly'.
 - Each person has a unique favorite food: 'pizza', 'burgers', 'fries'

## Clues:
1. Molly is in the second house.
2. Kelly is directly left of the one who only eats burgers.
3. The one who only eats burgers is directly left of the person who likes fries.
```

Puzzle to rephrase:
Attributes to Change: {attributes dict}
```
{input puzzle}
'''

Prompt:
Rephrase the above puzzle by changing only the attributes above. ALWAYS mention the "New Attribute Map" and enclose the new puzzle within ``` '''. Aside from these attributes keep the logic of the puzzle as similar as possible. Similar to the example above, give your reasoning before rephrasing the puzzle.
"#,
    placeholders: &["attributes dict", "input puzzle"],
};

/// Placeholder JSON skeleton for puzzle answers when none is configured.
pub const DEFAULT_JSON_TEMPLATE: &str =
    r#"{"reasoning": "___", "solution": {"House 1": {"Attribute": "___"}}}"#;

/// Attributes rewritten when rephrasing a puzzle, unless configured.
pub const DEFAULT_ZEBRA_ATTRIBUTES: &str = r#"["Name"]"#;

/// Task family; selects templates and the natural extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptStyle {
    #[default]
    Gsm8k,
    Math,
    Zebralogic,
}

impl PromptStyle {
    pub fn name(self) -> &'static str {
        match self {
            PromptStyle::Gsm8k => "gsm8k",
            PromptStyle::Math => "math",
            PromptStyle::Zebralogic => "zebralogic",
        }
    }

    pub fn response_template(self) -> PromptTemplate {
        match self {
            PromptStyle::Gsm8k => GSM8K_RESPONSE,
            PromptStyle::Math => MATH_RESPONSE,
            PromptStyle::Zebralogic => ZEBRA_RESPONSE,
        }
    }

    pub fn extractor(self) -> ExtractorKind {
        match self {
            PromptStyle::Gsm8k => ExtractorKind::HashNumber,
            PromptStyle::Math => ExtractorKind::Boxed,
            PromptStyle::Zebralogic => ExtractorKind::JsonSolution,
        }
    }

    pub fn render_response(self, problem_text: &str) -> Result<String> {
        match self {
            PromptStyle::Zebralogic => ZEBRA_RESPONSE.render(&[
                ("puzzle", problem_text),
                ("json template", DEFAULT_JSON_TEMPLATE),
            ]),
            other => other.response_template().render(&[("question", problem_text)]),
        }
    }

    /// Query-generation prompt; puzzles rephrase the first exemplar only.
    pub fn render_query(self, exemplars: &[&str]) -> Result<String> {
        match self {
            PromptStyle::Zebralogic => {
                let puzzle = exemplars
                    .first()
                    .ok_or_else(|| Error::InvalidInput("query generation needs an exemplar".into()))?;
                ZEBRA_QUERY.render(&[
                    ("attributes dict", DEFAULT_ZEBRA_ATTRIBUTES),
                    ("input puzzle", puzzle),
                ])
            }
            _ => render_math_query(exemplars),
        }
    }

    /// Pull the generated problem out of a query-generation completion.
    pub fn parse_generated_query(self, completion: &str) -> Option<String> {
        let text = match self {
            PromptStyle::Zebralogic => {
                let start = completion.rfind("'''")?;
                let before = &completion[..start];
                let open = before.rfind("```").or_else(|| before.rfind("'''"))?;
                let inner = &before[open + 3..];
                inner.to_string()
            }
            _ => {
                let t = completion.trim();
                t.strip_prefix("Q:").unwrap_or(t).to_string()
            }
        };
        let text = text.trim();
        (!text.is_empty()).then(|| text.to_string())
    }
}

impl fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gsm8k" => Ok(PromptStyle::Gsm8k),
            "math" => Ok(PromptStyle::Math),
            "zebralogic" => Ok(PromptStyle::Zebralogic),
            other => Err(Error::validation("prompt_style", format!("unknown style {other:?}"))),
        }
    }
}

/// The math query-generation prompt with one `Q:` line per exemplar.
pub fn render_math_query(exemplars: &[&str]) -> Result<String> {
    if exemplars.is_empty() {
        return Err(Error::InvalidInput("query generation needs an exemplar".into()));
    }
    let tail = MATH_QUERY
        .text
        .split_once("\n\n")
        .map(|(_, tail)| tail)
        .expect("template has a blank line");
    let mut out = String::new();
    for q in exemplars {
        out.push_str("Q: ");
        out.push_str(q);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(tail);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_shot_forms_agree() {
        let qs = ["a?", "b?", "c?", "d?"];
        let by_template = MATH_QUERY
            .render(&[
                ("few-shot question 1", qs[0]),
                ("few-shot question 2", qs[1]),
                ("few-shot question 3", qs[2]),
                ("few-shot question 4", qs[3]),
            ])
            .unwrap();
        assert_eq!(by_template, render_math_query(&qs).unwrap());
        assert!(by_template.ends_with("Output the question and nothing else.\nQ: "));
    }

    #[test]
    fn response_prompts_embed_question() {
        let p = PromptStyle::Gsm8k.render_response("What is 2+2?").unwrap();
        assert!(p.contains("Q: What is 2+2?\n"));
        assert!(p.contains("#### < number >"));
        let m = PromptStyle::Math.render_response("x").unwrap();
        assert!(m.contains("$\\boxed{< your answer>}$"));
        let z = PromptStyle::Zebralogic.render_response("PUZZLE").unwrap();
        assert!(z.contains("Puzzle to Solve: PUZZLE"));
        assert!(z.contains("\"Name\": \"Arnold\""));
        assert!(!z.contains("{json template}"));
    }

    #[test]
    fn missing_placeholder_is_an_error() {
        assert!(GSM8K_RESPONSE.render(&[]).is_err());
        assert!(PromptStyle::Gsm8k.render_query(&[]).is_err());
    }

    #[test]
    fn rendering_is_pure() {
        let a = PromptStyle::Zebralogic.render_query(&["p1"]).unwrap();
        let b = PromptStyle::Zebralogic.render_query(&["p1"]).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("Attributes to Change: [\"Name\"]\n```\np1\n'''"));
    }

    #[test]
    fn parse_generated() {
        assert_eq!(
            PromptStyle::Gsm8k.parse_generated_query("Q: How many apples?\n").as_deref(),
            Some("How many apples?")
        );
        let z = "reasoning...\nNew Attribute Map: {}\nPuzzle:\n```\nNew puzzle text\n'''";
        assert_eq!(PromptStyle::Zebralogic.parse_generated_query(z).as_deref(), Some("New puzzle text"));
        assert_eq!(PromptStyle::Gsm8k.parse_generated_query("   "), None);
    }
}
