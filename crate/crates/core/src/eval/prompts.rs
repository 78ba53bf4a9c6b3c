//! Judge prompt templates. `{words}` is replaced by the comma-separated word list.

pub const INTRUDER_TEMPLATE: &str = "From the following list of words, identify the single word that does not belong with the others. The words are: {words}.

Your response must be only the single intruder word and nothing else.";

pub const RATING_TEMPLATE: &str = "You are an expert in semantics and lexical relationships. Your task is to evaluate the coherence of the following list of words: '{words}'.

Coherence is how well the words belong to a single, clear, and specific category.

  - A score of 100 means the words are extremely coherent (e.g., all are types of citrus fruits).
  - A score around 50 means the words are moderately coherent (e.g., all are 'vehicles' but mix cars, boats, and planes).
  - A score of 0 means the words are completely unrelated.

Provide your analysis as a JSON object with two keys: \"rationale\" and \"score\".

  - \"rationale\": A brief, one-sentence explanation for your score.
  - \"score\": An integer between 0 and 100.

Your response MUST be only the JSON object and nothing else.";

pub fn render(template: &str, words: &[String]) -> String {
    template.replace("{words}", &words.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rating_prompt_keeps_scale_anchors() {
        let p = render(RATING_TEMPLATE, &["lemon".into(), "lime".into()]);
        assert!(p.contains("A score of 100 means the words are extremely coherent"));
        assert!(p.contains("'lemon, lime'"));
        assert!(!p.contains("{words}"));
    }

    #[test]
    fn intruder_prompt_lists_words() {
        let p = render(INTRUDER_TEMPLATE, &["a".into(), "b".into()]);
        assert!(p.contains("The words are: a, b."));
    }
}
