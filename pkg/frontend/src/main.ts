/**
 * Page wiring: paragraph form starts a session, the question form drives
 * the conversation, and the session id is kept in the URL hash so a reload
 * rebuilds the transcript from the server's history.
 */
import { ApiError, ServiceClient } from './api.js';
import {
  Elements,
  hideBanner,
  markContextTurns,
  renderParagraph,
  renderSession,
  renderTurn,
  setPending,
  showBanner,
} from './render.js';
import { UISession } from './session.js';

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

export function serviceBaseUrl(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get('service') ?? 'http://127.0.0.1:8000';
}

export function wireApp(): void {
  const els: Elements = {
    paragraphPanel: el('paragraph-panel'),
    chatLog: el('chat-log'),
    banner: el('banner'),
    questionInput: el<HTMLInputElement>('question-input'),
    askButton: el<HTMLButtonElement>('ask-button'),
  };
  const paragraphInput = el<HTMLTextAreaElement>('paragraph-input');
  const startButton = el<HTMLButtonElement>('start-button');
  const paragraphError = el('paragraph-error');
  const chatSection = el('chat-section');
  const setupSection = el('setup-section');

  const client = new ServiceClient(serviceBaseUrl());
  let session: UISession | null = null;

  function enterChat(s: UISession): void {
    session = s;
    window.location.hash = s.sessionId;
    setupSection.hidden = true;
    chatSection.hidden = false;
    renderSession(els, s);
    setPending(els, false);
  }

  async function start(): Promise<void> {
    const paragraph = paragraphInput.value;
    if (!paragraph.trim()) {
      paragraphError.textContent = 'paste a paragraph first';
      return;
    }
    paragraphError.textContent = '';
    try {
      const info = await client.createSession(paragraph);
      enterChat(UISession.fromCreate(info));
    } catch (err) {
      showBanner(els.banner, describe(err), () => void start());
    }
  }

  async function ask(): Promise<void> {
    if (!session || session.pending) return;
    const question = els.questionInput.value.trim();
    if (!question) return;
    session.beginAsk();
    setPending(els, true);
    try {
      const response = await client.ask(session.sessionId, question);
      const turn = session.completeAsk(question, response);
      els.questionInput.value = '';
      renderTurn(els.chatLog, turn);
      markContextTurns(els.chatLog, session);
      renderParagraph(els.paragraphPanel, session, session.highlightRange(turn.span));
      els.chatLog.scrollTop = els.chatLog.scrollHeight;
    } catch (err) {
      session.failAsk();
      if (err instanceof ApiError && err.status === 404) {
        showBanner(els.banner, 'session expired; start a new conversation', () => {
          window.location.hash = '';
          window.location.reload();
        });
      } else {
        showBanner(els.banner, describe(err), () => void ask());
      }
    } finally {
      setPending(els, session?.pending ?? false);
    }
  }

  async function resume(sessionId: string): Promise<void> {
    try {
      const history = await client.fetchHistory(sessionId);
      enterChat(UISession.fromHistory(history));
    } catch {
      window.location.hash = '';
      setupSection.hidden = false;
    }
  }

  startButton.addEventListener('click', () => void start());
  els.askButton.addEventListener('click', () => void ask());
  els.questionInput.addEventListener('keydown', (ev) => {
    if (ev.key === 'Enter') void ask();
  });
  hideBanner(els.banner);

  const existing = window.location.hash.slice(1);
  if (existing) {
    void resume(existing);
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return err.message;
  if (err instanceof Error) return `service unreachable: ${err.message}`;
  return String(err);
}

if (typeof document !== 'undefined' && document.getElementById('setup-section')) {
  wireApp();
}
