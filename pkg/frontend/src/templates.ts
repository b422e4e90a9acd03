/** Quick-fill question templates.
 *
 * Question halves of the builder's template file (data/templates.json in
 * the Python package); keep the two lists in sync by hand.
 */

export const QUESTION_TEMPLATES = [
  "What is the result of [KEY]?",
  "What is the [KEY] status of this slide?",
  "What does the slide show for [KEY]?",
  "What is the reported [KEY] finding?",
];

export const ENTITY_KEYS = [
  "her2",
  "pr",
  "er",
  "subtype",
  "grade",
  "margins",
  "stage",
  "survival_months",
];

export function fillTemplate(template: string, key: string): string {
  return template.replace("[KEY]", key);
}
