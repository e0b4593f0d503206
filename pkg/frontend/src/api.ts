/**
 * Typed client for the conversational-comprehension inference service.
 *
 * All calls go through the three session endpoints; no other coupling to
 * the backend exists. Errors surface as ApiError with the HTTP status so
 * the UI can distinguish an expired session (404) from a server fault.
 */

export interface TokenSpan {
  start: number;
  end: number;
}

export interface SessionInfo {
  sessionId: string;
  paragraph: string;
  /** Character span [begin, end) of each passage token in `paragraph`. */
  tokenSpans: Array<[number, number]>;
  k: number;
}

export interface AskResponse {
  answer: string;
  type: string;
  span: TokenSpan;
  score: number;
  turn: number;
}

export interface HistoryTurn {
  turn: number;
  question: string;
  answer: string;
  type: string;
  span: TokenSpan;
  score: number;
}

export interface HistoryResponse {
  sessionId: string;
  paragraph: string;
  tokenSpans: Array<[number, number]>;
  k: number;
  turns: HistoryTurn[];
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

async function expectOk(res: Response): Promise<unknown> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = (await res.json()) as { detail?: unknown };
      if (body.detail !== undefined) detail = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(res.status, `HTTP ${res.status}: ${detail}`);
  }
  return res.json();
}

export class ServiceClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async post(path: string, body: unknown): Promise<unknown> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    return expectOk(res);
  }

  async createSession(paragraph: string, k?: number): Promise<SessionInfo> {
    const body: Record<string, unknown> = { paragraph };
    if (k !== undefined) body.k = k;
    const raw = (await this.post('/sessions', body)) as {
      session_id: string;
      paragraph: string;
      token_spans: Array<[number, number]>;
      k: number;
    };
    return {
      sessionId: raw.session_id,
      paragraph: raw.paragraph,
      tokenSpans: raw.token_spans,
      k: raw.k,
    };
  }

  async ask(sessionId: string, question: string): Promise<AskResponse> {
    return (await this.post(
      `/sessions/${sessionId}/ask`,
      { question },
    )) as AskResponse;
  }

  async fetchHistory(sessionId: string): Promise<HistoryResponse> {
    const res = await this.fetchFn(`${this.baseUrl}/sessions/${sessionId}/history`);
    const raw = (await expectOk(res)) as {
      session_id: string;
      paragraph: string;
      token_spans: Array<[number, number]>;
      k: number;
      turns: HistoryTurn[];
    };
    return {
      sessionId: raw.session_id,
      paragraph: raw.paragraph,
      tokenSpans: raw.token_spans,
      k: raw.k,
      turns: raw.turns,
    };
  }
}
