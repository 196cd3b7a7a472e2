// Typed client for the assistant HTTP API. The fetch implementation is
// injectable so tests run against an in-memory service double.

export interface PaperSummary {
  id: string;
  title: string;
  paper_type: string;
  review_count: number;
}

export interface PaperDetail {
  id: string;
  title: string;
  paper_type: string;
  reviews: string[];
}

export interface UtteranceRecord {
  role: 'seeker' | 'agent';
  text: string;
  rewards?: Record<string, number>;
}

export interface SessionRecord {
  id: string;
  paper_id: string;
  created_at: number; // epoch seconds, server clock
  transcript: { paper_id: string; provenance: string; utterances: UtteranceRecord[] };
  decision: string | null;
  meta_review: string | null;
  closed_at: number | null;
  message_timestamps: number[];
}

export interface MessageResponse {
  reply: string;
  rewards: Record<string, number> | null;
}

export interface StudyLogEntry {
  session_id: string;
  paper_id: string;
  duration_seconds: number;
  turn_count: number;
  decision: string;
  gold_decision: string | null;
}

/** Error response from the service ({code, message} with an HTTP status). */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

/** Transport-level failure (service unreachable); retryable. */
export class NetworkError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'NetworkError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new NetworkError(String(err));
    }
    if (!response.ok) {
      let code = 'unknown_error';
      let message = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { code?: string; message?: string };
        code = body.code ?? code;
        message = body.message ?? message;
      } catch {
        // non-JSON error body; keep the defaults
      }
      throw new ApiError(response.status, code, message);
    }
    return (await response.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  listPapers(): Promise<PaperSummary[]> {
    return this.request<PaperSummary[]>('/papers');
  }

  getPaper(id: string): Promise<PaperDetail> {
    return this.request<PaperDetail>(`/papers/${encodeURIComponent(id)}`);
  }

  createSession(paperId: string): Promise<SessionRecord> {
    return this.post<SessionRecord>('/sessions', { paper_id: paperId });
  }

  getSession(id: string): Promise<SessionRecord> {
    return this.request<SessionRecord>(`/sessions/${encodeURIComponent(id)}`);
  }

  postMessage(sessionId: string, text: string): Promise<MessageResponse> {
    return this.post<MessageResponse>(`/sessions/${encodeURIComponent(sessionId)}/messages`, { text });
  }

  submitDecision(sessionId: string, decision: string, metaReview: string): Promise<SessionRecord> {
    return this.post<SessionRecord>(`/sessions/${encodeURIComponent(sessionId)}/decision`, {
      decision,
      meta_review: metaReview,
    });
  }

  studyLog(paperId?: string): Promise<StudyLogEntry[]> {
    const query = paperId ? `?paper_id=${encodeURIComponent(paperId)}` : '';
    return this.request<StudyLogEntry[]>(`/study/log${query}`);
  }
}
