//! Prompt templates for SQL generation and workload augmentation.

use super::{AugmentRequest, GenerationRequest};

pub const PROMPT_VERSION: &str = "1";

pub const SQL_SYSTEM_PROMPT: &str = "You translate questions about a relational database into a single SQLite \
SELECT statement. Use only tables and columns from the schema. Reply with the SQL in one ```sql code block.";

pub const AUGMENT_SYSTEM_PROMPT: &str = "You write new benchmark items for text-to-SQL evaluation. Each item is a \
natural-language question and one SQLite query that answers it. Reply with a JSON object \
{\"question\": ..., \"sql\": ...} and nothing else.";

pub fn sql_user_prompt(req: &GenerationRequest) -> String {
    let mut out = format!("Schema:\n{}\n", req.schema_text.trim_end());
    for ex in &req.exemplars {
        out.push_str(&format!("\nQuestion: {}\nSQL: {}\n", ex.question, ex.sql));
    }
    out.push_str(&format!("\nQuestion: {}\nSQL:", req.question));
    out
}

pub fn augment_user_prompt(req: &AugmentRequest) -> String {
    let mut out = format!(
        "Schema:\n{}\n\nWrite a question whose SQL answer falls in structural class {}: {}.\n",
        req.schema_text.trim_end(),
        req.target,
        req.target.description()
    );
    if !req.exemplars.is_empty() {
        out.push_str("\nExamples of this class:\n");
        for ex in &req.exemplars {
            out.push_str(&format!("Question: {}\nSQL: {}\n", ex.question, ex.sql));
        }
    }
    out.push_str(&format!("\nThis is attempt {}; produce an item different from earlier ones.\n", req.attempt + 1));
    out
}
