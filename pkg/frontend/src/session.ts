/**
 * Client-side conversation state. Mirrors the server's turn log exactly:
 * every field shown in the UI is either returned by an /ask call or
 * re-fetchable from /history, so a refresh can always rebuild the view.
 */
import type { AskResponse, HistoryResponse, SessionInfo } from './api.js';

export interface UITurn {
  turn: number;
  question: string;
  answer: string;
  type: string;
  span: { start: number; end: number };
  score: number;
}

export class UISession {
  readonly turns: UITurn[] = [];
  pending = false;

  constructor(
    readonly sessionId: string,
    readonly paragraph: string,
    readonly tokenSpans: Array<[number, number]>,
    readonly k: number,
  ) {}

  static fromCreate(info: SessionInfo): UISession {
    return new UISession(info.sessionId, info.paragraph, info.tokenSpans, info.k);
  }

  /** Rebuild the full transcript from a /history response (page refresh). */
  static fromHistory(history: HistoryResponse): UISession {
    const session = new UISession(
      history.sessionId,
      history.paragraph,
      history.tokenSpans,
      history.k,
    );
    for (const turn of history.turns) {
      session.turns.push({ ...turn, span: { ...turn.span } });
    }
    return session;
  }

  /** One in-flight ask per session; callers must check before sending. */
  beginAsk(): void {
    if (this.pending) {
      throw new Error('an ask is already in flight for this session');
    }
    this.pending = true;
  }

  completeAsk(question: string, response: AskResponse): UITurn {
    const turn: UITurn = {
      turn: response.turn,
      question,
      answer: response.answer,
      type: response.type,
      span: { ...response.span },
      score: response.score,
    };
    this.turns.push(turn);
    this.pending = false;
    return turn;
  }

  failAsk(): void {
    this.pending = false;
  }

  /**
   * Turn numbers currently fed to the model as history: exactly the k most
   * recent completed turns.
   */
  contextTurnNumbers(): number[] {
    if (this.k === 0) return [];
    return this.turns.slice(-this.k).map((t) => t.turn);
  }

  /** Character range to highlight for a token span, via server alignment. */
  highlightRange(span: { start: number; end: number }): [number, number] | null {
    if (
      span.start < 0 ||
      span.end >= this.tokenSpans.length ||
      span.start > span.end
    ) {
      return null;
    }
    return [this.tokenSpans[span.start][0], this.tokenSpans[span.end][1]];
  }
}
