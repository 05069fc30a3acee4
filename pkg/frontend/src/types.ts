// Payload shapes mirror the server API exactly (see docs/api.md in the
// repository root); the UI never re-derives rule content client-side.

export interface TypedVariable {
  variable: string;
  type_label: string;
  method: string;
  confidence_note: string | null;
}

export interface GroundedInstance {
  rule_id: string;
  bindings: Record<string, string>;
  body: string[][];
  head: string[];
  head_in_kg: boolean;
}

export interface DatasetEntryDraft {
  item_id: string;
  rule_text: string;
  variable_types: TypedVariable[];
  sample_instance: GroundedInstance | null;
  explanation: string;
  provenance: string;
  judge_aggregate: number | null;
  human_scores: Record<string, number> | null;
  annotator_id: string | null;
}

export interface JudgeRunInfo {
  score: number | null;
  rationale: string;
}

export interface ReviewItem {
  item_id: string;
  status: 'pending' | 'in-review' | 'resolved';
  draft: DatasetEntryDraft;
  annotations: unknown[];
  judge_runs: JudgeRunInfo[];
  claimed_by: string | null;
  claimed_at: number | null;
  pretty_rule: string;
}

export type ApiErrorCode = 'not_found' | 'conflict' | 'validation' | 'internal';

export interface ApiErrorBody {
  code: ApiErrorCode;
  message: string;
}

export interface AnnotationSubmission {
  annotator_id: string;
  correctness: number;
  clarity: number;
  logicalness: number;
  missed_entities: number;
  missed_relations: number;
  hallucinated_entities: number;
  hallucinated_relations: number;
  edited_explanation: string | null;
}

export interface SubmissionResult {
  item_id: string;
  status: string;
}
