/**
 * DOM rendering: paragraph panel with the answer highlight, chat bubbles
 * with type badges, the model-context markers, and the error banner.
 */
import type { UISession, UITurn } from './session.js';

export interface Elements {
  paragraphPanel: HTMLElement;
  chatLog: HTMLElement;
  banner: HTMLElement;
  questionInput: HTMLInputElement;
  askButton: HTMLButtonElement;
}

export function renderParagraph(
  el: HTMLElement,
  session: UISession,
  highlight: [number, number] | null,
): void {
  el.textContent = '';
  const text = session.paragraph;
  if (!highlight) {
    el.appendChild(document.createTextNode(text));
    return;
  }
  const [begin, end] = highlight;
  el.appendChild(document.createTextNode(text.slice(0, begin)));
  const mark = document.createElement('mark');
  mark.className = 'answer-highlight';
  mark.textContent = text.slice(begin, end);
  el.appendChild(mark);
  el.appendChild(document.createTextNode(text.slice(end)));
}

function badge(type: string): HTMLElement {
  const span = document.createElement('span');
  span.className = `badge badge-${type}`;
  span.textContent = type;
  return span;
}

export function renderTurn(log: HTMLElement, turn: UITurn): void {
  const q = document.createElement('div');
  q.className = 'bubble user';
  q.dataset.turn = String(turn.turn);
  q.textContent = turn.question;
  log.appendChild(q);

  const a = document.createElement('div');
  a.className = 'bubble model';
  a.dataset.turn = String(turn.turn);
  const text = document.createElement('span');
  text.className = 'answer-text';
  text.textContent = turn.answer;
  a.appendChild(text);
  a.appendChild(badge(turn.type));
  const score = document.createElement('span');
  score.className = 'score';
  score.textContent = turn.score.toFixed(3);
  a.appendChild(score);
  log.appendChild(a);
}

/** Re-mark which bubbles are inside the model's history window. */
export function markContextTurns(log: HTMLElement, session: UISession): void {
  const active = new Set(session.contextTurnNumbers());
  log.querySelectorAll<HTMLElement>('.bubble').forEach((el) => {
    const turn = Number(el.dataset.turn);
    el.classList.toggle('in-context', active.has(turn));
  });
}

export function showBanner(
  el: HTMLElement,
  message: string,
  onRetry?: () => void,
): void {
  el.textContent = '';
  el.classList.add('visible');
  el.appendChild(document.createTextNode(message));
  if (onRetry) {
    const btn = document.createElement('button');
    btn.textContent = 'retry';
    btn.addEventListener('click', () => {
      hideBanner(el);
      onRetry();
    });
    el.appendChild(btn);
  }
}

export function hideBanner(el: HTMLElement): void {
  el.classList.remove('visible');
  el.textContent = '';
}

export function setPending(els: Elements, pending: boolean): void {
  els.questionInput.disabled = pending;
  els.askButton.disabled = pending;
}

/** Full redraw from session state (used on load and after refresh). */
export function renderSession(els: Elements, session: UISession): void {
  els.chatLog.textContent = '';
  for (const turn of session.turns) {
    renderTurn(els.chatLog, turn);
  }
  markContextTurns(els.chatLog, session);
  const last = session.turns[session.turns.length - 1];
  renderParagraph(
    els.paragraphPanel,
    session,
    last ? session.highlightRange(last.span) : null,
  );
}
