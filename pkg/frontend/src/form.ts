import type { AnnotationSubmission } from './types.js';

// Mirrors the server-side annotation preconditions: correctness and clarity
// on 1-5, logicalness on 1-3, counts >= 0, and an edit whenever
// correctness < 5. The server re-validates; this just fails fast inline.

export interface ScoringFormState {
  correctness: number | null;
  clarity: number | null;
  logicalness: number | null;
  missedEntities: number;
  missedRelations: number;
  hallucinatedEntities: number;
  hallucinatedRelations: number;
  /** The editable explanation field; starts as the model draft. */
  editedExplanation: string;
  /** The untouched model draft, for change detection. */
  draftExplanation: string;
}

export function initialForm(draftExplanation: string): ScoringFormState {
  return {
    correctness: null,
    clarity: null,
    logicalness: null,
    missedEntities: 0,
    missedRelations: 0,
    hallucinatedEntities: 0,
    hallucinatedRelations: 0,
    editedExplanation: draftExplanation,
    draftExplanation,
  };
}

export function hasEdit(state: ScoringFormState): boolean {
  return state.editedExplanation !== state.draftExplanation;
}

export type FormCheck =
  | { ok: true; submission: AnnotationSubmission }
  | { ok: false; problems: string[] };

function scaleProblem(name: string, value: number | null, lo: number, hi: number): string | null {
  if (value === null) return `${name} is required`;
  if (!Number.isInteger(value) || value < lo || value > hi) {
    return `${name} must be an integer between ${lo} and ${hi}`;
  }
  return null;
}

export function buildSubmission(state: ScoringFormState, annotatorId: string): FormCheck {
  const problems: string[] = [];
  for (const problem of [
    scaleProblem('correctness', state.correctness, 1, 5),
    scaleProblem('clarity', state.clarity, 1, 5),
    scaleProblem('logicalness', state.logicalness, 1, 3),
  ]) {
    if (problem) problems.push(problem);
  }
  const counts: [string, number][] = [
    ['missed entities', state.missedEntities],
    ['missed relations', state.missedRelations],
    ['hallucinated entities', state.hallucinatedEntities],
    ['hallucinated relations', state.hallucinatedRelations],
  ];
  for (const [name, value] of counts) {
    if (!Number.isInteger(value) || value < 0) problems.push(`${name} must be a non-negative integer`);
  }
  if (state.correctness !== null && state.correctness < 5 && !hasEdit(state)) {
    problems.push('correctness below 5 requires editing the explanation');
  }
  if (!state.editedExplanation.trim()) {
    problems.push('the explanation must not be empty');
  }
  if (problems.length > 0) return { ok: false, problems };
  return {
    ok: true,
    submission: {
      annotator_id: annotatorId,
      correctness: state.correctness as number,
      clarity: state.clarity as number,
      logicalness: state.logicalness as number,
      missed_entities: state.missedEntities,
      missed_relations: state.missedRelations,
      hallucinated_entities: state.hallucinatedEntities,
      hallucinated_relations: state.hallucinatedRelations,
      // submitted text equals the edit field exactly; null means "approved as-is"
      edited_explanation: hasEdit(state) ? state.editedExplanation : null,
    },
  };
}
