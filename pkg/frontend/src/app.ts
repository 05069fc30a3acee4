import { ApiClient, ApiRequestError, NetworkError } from './api.js';
import { buildSubmission, hasEdit, initialForm, type ScoringFormState } from './form.js';
import { buildViewModel, formatAtom, type ReviewViewModel } from './model.js';
import type { ReviewItem } from './types.js';

type Screen =
  | { kind: 'start' }
  | { kind: 'loading' }
  | { kind: 'empty' }
  | { kind: 'review'; item: ReviewItem; vm: ReviewViewModel; form: ScoringFormState; conflict: boolean };

const client = new ApiClient('');
let screen: Screen = { kind: 'start' };
let banner: string | null = null;

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function esc(text: string): string {
  const div = document.createElement('div');
  div.textContent = text;
  return div.innerHTML;
}

function annotatorId(): string {
  const input = $('annotator') as HTMLInputElement;
  return input.value.trim();
}

async function claimNext(): Promise<void> {
  if (!annotatorId()) {
    banner = 'Enter your annotator id first.';
    render();
    return;
  }
  screen = { kind: 'loading' };
  banner = null;
  render();
  try {
    const item = await client.claimNext(annotatorId());
    if (item === null) {
      screen = { kind: 'empty' };
    } else {
      screen = {
        kind: 'review',
        item,
        vm: buildViewModel(item),
        form: initialForm(item.draft.explanation),
        conflict: false,
      };
    }
  } catch (err) {
    // claim is retriable; stay on the start/empty screen with a banner
    banner = err instanceof NetworkError ? 'Cannot reach the server — retry when it is back.' : String(err);
    screen = { kind: 'start' };
  }
  render();
}

async function submit(): Promise<void> {
  if (screen.kind !== 'review') return;
  const check = buildSubmission(screen.form, annotatorId());
  if (!check.ok) {
    banner = check.problems.join(' · ');
    render();
    return;
  }
  try {
    await client.submitAnnotation(screen.item.item_id, check.submission);
    banner = `Saved ${screen.item.item_id}.`;
    await claimNext();
  } catch (err) {
    if (err instanceof ApiRequestError && err.body.code === 'conflict') {
      // lease expired or claimed elsewhere: keep the form contents, offer re-claim
      screen = { ...screen, conflict: true };
      banner = 'Your claim on this item expired; it was released back to the queue. Re-claim to continue.';
    } else if (err instanceof ApiRequestError && err.body.code === 'validation') {
      banner = `Rejected: ${err.body.message}`;
    } else if (err instanceof NetworkError) {
      banner = 'Cannot reach the server — your scores are still here, retry submit.';
    } else {
      banner = String(err);
    }
    render();
  }
}

function bindFormInputs(form: ScoringFormState): void {
  const numeric = (id: string, apply: (v: number) => void) => {
    const el = $(id) as HTMLInputElement | HTMLSelectElement;
    el.addEventListener('change', () => {
      const v = parseInt(el.value, 10);
      if (!Number.isNaN(v)) apply(v);
    });
  };
  numeric('score-correctness', (v) => (form.correctness = v));
  numeric('score-clarity', (v) => (form.clarity = v));
  numeric('score-logicalness', (v) => (form.logicalness = v));
  numeric('count-missed-entities', (v) => (form.missedEntities = v));
  numeric('count-missed-relations', (v) => (form.missedRelations = v));
  numeric('count-hallucinated-entities', (v) => (form.hallucinatedEntities = v));
  numeric('count-hallucinated-relations', (v) => (form.hallucinatedRelations = v));
  const edit = $('edit-explanation') as HTMLTextAreaElement;
  edit.addEventListener('input', () => {
    form.editedExplanation = edit.value;
  });
  $('submit-btn').addEventListener('click', () => void submit());
}

function scaleOptions(hi: number): string {
  let out = '<option value="">—</option>';
  for (let i = 1; i <= hi; i++) out += `<option value="${i}">${i}</option>`;
  return out;
}

function reviewHtml(vm: ReviewViewModel, form: ScoringFormState, conflict: boolean): string {
  const types = vm.variableTypes
    .map(
      (tv) =>
        `<li><code>${esc(tv.variable)}</code> is a <strong>${esc(tv.typeLabel)}</strong>` +
        ` <small>(${esc(tv.method)}${tv.note ? '; ' + esc(tv.note) : ''})</small></li>`,
    )
    .join('');
  const instance = vm.instance
    ? `<ul>${vm.instance.bodyAtoms.map((a) => `<li>${esc(formatAtom(a))}</li>`).join('')}
       <li>⇒ ${esc(formatAtom(vm.instance.headAtom))} ${vm.instance.headInKg ? '(head holds in the KG)' : '(head not in the KG)'}</li></ul>`
    : '<em>no grounded instance available</em>';
  const runs = vm.judgeRuns
    .map((r) => `<li>score ${r.score ?? 'unparseable'} — ${esc(r.rationale)}</li>`)
    .join('');
  return `
  <section class="rule-panel">
    <h2>Rule</h2>
    <p class="pretty-rule">${esc(vm.prettyRule)}</p>
    <details><summary>machine form</summary><pre>${esc(vm.machineRule)}</pre></details>
    <h3>Instance</h3>${instance}
    <h3>Variable types</h3><ul>${types || '<li><em>none</em></li>'}</ul>
    <details class="judge"><summary>Judge: aggregate ${vm.judgeAggregate ?? 'n/a'} (open for per-run rationales)</summary>
      <ul>${runs}</ul>
    </details>
  </section>
  <section class="scoring-panel">
    <h2>Explanation</h2>
    <textarea id="edit-explanation" rows="5">${esc(form.editedExplanation)}</textarea>
    <p class="hint">Edit the text in place when it is not perfectly correct; your edit is submitted verbatim.</p>
    <div class="scores">
      <label>Correctness (1-5) <select id="score-correctness">${scaleOptions(5)}</select></label>
      <label>Clarity (1-5) <select id="score-clarity">${scaleOptions(5)}</select></label>
      <label>Logicalness (1-3) <select id="score-logicalness">${scaleOptions(3)}</select></label>
    </div>
    <div class="counts">
      <label>Missed entities <input id="count-missed-entities" type="number" min="0" value="0"></label>
      <label>Missed relations <input id="count-missed-relations" type="number" min="0" value="0"></label>
      <label>Hallucinated entities <input id="count-hallucinated-entities" type="number" min="0" value="0"></label>
      <label>Hallucinated relations <input id="count-hallucinated-relations" type="number" min="0" value="0"></label>
    </div>
    <button id="submit-btn" ${conflict ? 'disabled' : ''}>Submit and claim next</button>
    ${conflict ? '<button id="reclaim-btn">Re-claim</button>' : ''}
  </section>`;
}

function render(): void {
  const bannerEl = $('banner');
  bannerEl.textContent = banner ?? '';
  bannerEl.className = banner ? 'banner visible' : 'banner';

  const mainEl = $('main');
  switch (screen.kind) {
    case 'start':
      mainEl.innerHTML = '<button id="claim-btn" class="primary">Claim next item</button>';
      $('claim-btn').addEventListener('click', () => void claimNext());
      break;
    case 'loading':
      mainEl.innerHTML = '<p>Loading…</p>';
      break;
    case 'empty':
      mainEl.innerHTML = '<p class="empty">Queue empty — nothing left to review. 🎉</p>' +
        '<button id="claim-btn">Check again</button>';
      $('claim-btn').addEventListener('click', () => void claimNext());
      break;
    case 'review': {
      mainEl.innerHTML = reviewHtml(screen.vm, screen.form, screen.conflict);
      bindFormInputs(screen.form);
      const reclaim = document.getElementById('reclaim-btn');
      if (reclaim) reclaim.addEventListener('click', () => void claimNext());
      break;
    }
  }
}

document.addEventListener('DOMContentLoaded', () => {
  render();
});
