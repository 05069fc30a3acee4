import type { ReviewItem } from './types.js';

/** Everything the review screen renders, taken verbatim from the API. */
export interface ReviewViewModel {
  itemId: string;
  prettyRule: string;
  machineRule: string;
  instance: {
    bindings: [string, string][];
    bodyAtoms: string[][];
    headAtom: string[];
    headInKg: boolean;
  } | null;
  variableTypes: { variable: string; typeLabel: string; method: string; note: string | null }[];
  judgeAggregate: number | null;
  judgeRuns: { score: number | null; rationale: string }[];
  draftExplanation: string;
}

export function buildViewModel(item: ReviewItem): ReviewViewModel {
  const instance = item.draft.sample_instance;
  return {
    itemId: item.item_id,
    prettyRule: item.pretty_rule,
    machineRule: item.draft.rule_text,
    instance: instance
      ? {
          bindings: Object.entries(instance.bindings).sort(([a], [b]) => a.localeCompare(b)),
          bodyAtoms: instance.body,
          headAtom: instance.head,
          headInKg: instance.head_in_kg,
        }
      : null,
    variableTypes: item.draft.variable_types.map((tv) => ({
      variable: tv.variable,
      typeLabel: tv.type_label,
      method: tv.method,
      note: tv.confidence_note,
    })),
    judgeAggregate: item.draft.judge_aggregate,
    judgeRuns: item.judge_runs.map((run) => ({ score: run.score, rationale: run.rationale })),
    draftExplanation: item.draft.explanation,
  };
}

export function formatAtom(atom: string[]): string {
  return atom.join('  —  ');
}
