// Round trip against the real Python service: claim -> edit -> submit must
// persist the edited text verbatim in the event log and the export, and the
// lease-expiry conflict path must surface cleanly without losing form state.

import { spawn, type ChildProcess } from 'node:child_process';
import { mkdtempSync, readFileSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ApiClient, ApiRequestError } from '../src/api.js';
import { buildSubmission, initialForm } from '../src/form.js';
import { buildViewModel } from '../src/model.js';

const PORT = 21000 + Math.floor(Math.random() * 20000);
const LEASE_SECONDS = 2;

let server: ChildProcess;
let workdir: string;
let logPath: string;
const client = new ApiClient(`http://127.0.0.1:${PORT}`);

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      await client.stats();
      return;
    } catch {
      await new Promise((resolve) => setTimeout(resolve, 150));
    }
  }
  throw new Error('fixture server did not come up');
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), 'rulescribe-ui-'));
  logPath = join(workdir, 'events.jsonl');
  server = spawn(
    'python3',
    [
      join(__dirname, 'serve_fixture.py'),
      '--port', String(PORT),
      '--log', logPath,
      '--lease', String(LEASE_SECONDS),
      '--items', '3',
    ],
    { stdio: ['ignore', 'inherit', 'inherit'] },
  );
  await waitForServer();
}, 30_000);

afterAll(() => {
  server?.kill();
  rmSync(workdir, { recursive: true, force: true });
});

describe('annotation round trip against a live service', () => {
  it('claim -> edit -> submit persists the edit verbatim in log and export', async () => {
    const item = await client.claimNext('ui-ann-1');
    expect(item).not.toBeNull();
    const vm = buildViewModel(item!);
    expect(vm.prettyRule.startsWith('IF ')).toBe(true);
    expect(vm.machineRule).toContain('=>');
    expect(vm.judgeRuns).toHaveLength(3);

    const form = initialForm(vm.draftExplanation);
    form.correctness = 3;
    form.clarity = 4;
    form.logicalness = 3;
    form.missedEntities = 1;
    form.editedExplanation = 'UI-edited explanation: drugs of this kind treat the disease.';
    const check = buildSubmission(form, 'ui-ann-1');
    expect(check.ok).toBe(true);
    if (!check.ok) return;

    const result = await client.submitAnnotation(vm.itemId, check.submission);
    expect(result.status).toBe('resolved');

    const log = readFileSync(logPath, 'utf8');
    expect(log).toContain('UI-edited explanation: drugs of this kind treat the disease.');

    const exportText = await client.exportAll();
    expect(exportText).toContain('UI-edited explanation: drugs of this kind treat the disease.');
    // submitted text equals the field contents exactly: it is the assistant turn
    const lines = exportText.trim().split('\n').map((l) => JSON.parse(l) as { messages: { role: string; content: string }[] });
    const assistantTexts = lines.map((l) => l.messages[2]!.content);
    expect(assistantTexts).toContain('UI-edited explanation: drugs of this kind treat the disease.');
  });

  it('re-claiming is idempotent for the same annotator', async () => {
    const first = await client.claimNext('ui-ann-2');
    const again = await client.claimNext('ui-ann-2');
    expect(first!.item_id).toBe(again!.item_id);
  });

  it('lease expiry surfaces as a conflict and loses no state', async () => {
    // ui-ann-2 already holds an item from the previous test
    const held = await client.claimNext('ui-ann-2');

    // resolve every other pending item so the expired one is next in line
    for (;;) {
      const other = await client.claimNext('ui-ann-4');
      if (other === null) break;
      const quickForm = initialForm(other.draft.explanation);
      quickForm.correctness = 5;
      quickForm.clarity = 5;
      quickForm.logicalness = 3;
      const quick = buildSubmission(quickForm, 'ui-ann-4');
      if (!quick.ok) throw new Error(quick.problems.join(','));
      await client.submitAnnotation(other.item_id, quick.submission);
    }

    await new Promise((resolve) => setTimeout(resolve, (LEASE_SECONDS + 0.6) * 1000));

    // someone else picks it up after expiry
    const taken = await client.claimNext('ui-ann-3');
    expect(taken!.item_id).toBe(held!.item_id);

    const form = initialForm(held!.draft.explanation);
    form.correctness = 5;
    form.clarity = 5;
    form.logicalness = 3;
    const check = buildSubmission(form, 'ui-ann-2');
    expect(check.ok).toBe(true);
    if (!check.ok) return;

    const err = await client
      .submitAnnotation(held!.item_id, check.submission)
      .then(() => null)
      .catch((e) => e);
    expect(err).toBeInstanceOf(ApiRequestError);
    expect((err as ApiRequestError).body.code).toBe('conflict');
    // client-side state is untouched; the same submission succeeds for the new claimant
    const retry = { ...check.submission, annotator_id: 'ui-ann-3' };
    const result = await client.submitAnnotation(held!.item_id, retry);
    expect(result.status).toBe('resolved');
  }, 15_000);

  it('drains the queue to the empty state', async () => {
    let guard = 10;
    for (;;) {
      const item = await client.claimNext('ui-ann-9');
      if (item === null) break;
      const form = initialForm(item.draft.explanation);
      form.correctness = 5;
      form.clarity = 5;
      form.logicalness = 3;
      const check = buildSubmission(form, 'ui-ann-9');
      if (!check.ok) throw new Error(check.problems.join(','));
      await client.submitAnnotation(item.item_id, check.submission);
      if (--guard === 0) throw new Error('queue never drained');
    }
    expect(await client.claimNext('ui-ann-9')).toBeNull();
    const stats = (await client.stats()) as { items: Record<string, number> };
    expect(stats.items['pending']).toBe(0);
    expect(stats.items['in-review']).toBe(0);
    expect(stats.items['resolved']).toBe(3);
  }, 15_000);
});
