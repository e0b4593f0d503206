/**
 * End-to-end transcript equivalence against a live backend.
 *
 * Trains a tiny deterministic checkpoint, generates predicted-history CLI
 * answers for a fixture dialogue, then replays the same questions through
 * the real HTTP client and asserts the transcripts match turn for turn.
 * Also verifies that a "refresh" (history fetch) reconstructs the session.
 */
import { ChildProcess, execFileSync, spawn } from 'node:child_process';
import { mkdtempSync, readFileSync, rmSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join, resolve } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { ServiceClient } from '../src/api.js';
import { UISession } from '../src/session.js';

const REPO_ROOT = resolve(__dirname, '..', '..');
const PORT = 8901;
const BASE = `http://127.0.0.1:${PORT}`;

interface FixtureDialogue {
  id: string;
  context: string;
  qas: Array<{ question: string }>;
}

let workDir: string;
let server: ChildProcess | undefined;
let dialogue: FixtureDialogue;
let cliAnswers: Array<{ turn: number; answer: string; type: string }>;

function py(args: string[], timeoutMs = 120_000): string {
  return execFileSync('python3', args, {
    cwd: REPO_ROOT,
    timeout: timeoutMs,
    encoding: 'utf-8',
  });
}

async function waitForHealth(): Promise<void> {
  for (let i = 0; i < 100; i++) {
    try {
      const res = await fetch(`${BASE}/healthz`);
      if (res.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 200));
  }
  throw new Error('service did not become healthy');
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), 'convmc-e2e-'));
  const dataPath = join(workDir, 'fixture.json');
  const predsPath = join(workDir, 'preds.jsonl');

  py([
    '-c',
    [
      'import json, sys',
      `sys.path.insert(0, ${JSON.stringify(join(REPO_ROOT, 'tests'))})`,
      'from _synth import coreference_corpus, to_quac_json',
      `json.dump(to_quac_json(coreference_corpus(2, seed=31)), open(${JSON.stringify(dataPath)}, "w"))`,
    ].join('\n'),
  ]);

  const config = join(workDir, 'config.json');
  py([
    '-c',
    `import json; json.dump({"lr": 1e-3, "weight_decay": 0.0, "batch_size": 4, "hidden": 16, "layers": 1, "heads": 2, "ff_dim": 32, "dropout": 0.0, "max_seq_len": 128, "max_query_len": 16}, open(${JSON.stringify(config)}, "w"))`,
  ]);
  py([
    '-m', 'convmc.cli', 'train',
    '--dataset', 'quac',
    '--data', dataPath,
    '--out', workDir,
    '--config', config,
    '--epochs', '1',
    '--max-steps', '2',
    '--k', '1',
    '--seed', '3',
  ]);

  const checkpoint = join(workDir, 'model_final.npz');
  py([
    '-m', 'convmc.cli', 'predict',
    '--checkpoint', checkpoint,
    '--data', dataPath,
    '--history', 'predicted',
    '--out', predsPath,
  ]);

  const fixture = JSON.parse(readFileSync(dataPath, 'utf-8'));
  dialogue = fixture.data[0].paragraphs[0] as FixtureDialogue;
  cliAnswers = readFileSync(predsPath, 'utf-8')
    .trim()
    .split('\n')
    .map((line) => JSON.parse(line))
    .filter((row) => row.dialogue_id === dialogue.id);

  server = spawn(
    'python3',
    ['-m', 'convmc.cli', 'serve', '--checkpoint', checkpoint, '--port', String(PORT)],
    { cwd: REPO_ROOT, stdio: 'ignore' },
  );
  await waitForHealth();
}, 240_000);

afterAll(() => {
  server?.kill();
  if (workDir) rmSync(workDir, { recursive: true, force: true });
});

describe('live service replay', () => {
  it('scripted 3-turn session matches the CLI transcript on the same checkpoint', async () => {
    const client = new ServiceClient(BASE);
    const info = await client.createSession(dialogue.context);
    const session = UISession.fromCreate(info);
    expect(dialogue.qas).toHaveLength(3);
    expect(cliAnswers).toHaveLength(3);

    for (const [i, qa] of dialogue.qas.entries()) {
      session.beginAsk();
      const response = await client.ask(session.sessionId, qa.question);
      const turn = session.completeAsk(qa.question, response);
      expect(turn.turn).toBe(i + 1);
      expect(turn.answer).toBe(cliAnswers[i].answer);
      expect(turn.type).toBe(cliAnswers[i].type);
    }
  }, 120_000);

  it('refresh reconstructs the identical transcript from server history', async () => {
    const client = new ServiceClient(BASE);
    const info = await client.createSession(dialogue.context);
    const live = UISession.fromCreate(info);
    for (const qa of dialogue.qas) {
      live.beginAsk();
      const response = await client.ask(live.sessionId, qa.question);
      live.completeAsk(qa.question, response);
    }

    const rebuilt = UISession.fromHistory(await client.fetchHistory(live.sessionId));
    expect(rebuilt.sessionId).toBe(live.sessionId);
    expect(rebuilt.paragraph).toBe(live.paragraph);
    expect(rebuilt.tokenSpans).toEqual(live.tokenSpans);
    expect(rebuilt.turns).toEqual(live.turns);
    expect(rebuilt.contextTurnNumbers()).toEqual(live.contextTurnNumbers());

    // the highlight derived after refresh matches the live one
    const last = rebuilt.turns[rebuilt.turns.length - 1];
    expect(rebuilt.highlightRange(last.span)).toEqual(
      live.highlightRange(live.turns[live.turns.length - 1].span),
    );
  }, 120_000);
});
