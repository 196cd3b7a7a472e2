// Framework-free application state for the assistant UI.
//
// The store owns every invariant the view must respect: a single in-flight
// message per session (chat input disabled while pending), optimistic seeker
// bubbles that roll back on failure (the rendered transcript never settles on
// a seeker turn), a timer derived from the server's created_at rather than a
// client clock, and a meta-review draft autosaved to local storage so a
// network fault never loses written text. Reloads restore the exact
// transcript and timer baseline from GET /sessions/{id}.

import { ApiClient, ApiError, NetworkError, PaperDetail, PaperSummary, SessionRecord } from './api.js';

export interface ChatBubble {
  role: 'seeker' | 'agent';
  text: string;
  pending?: boolean;
}

export interface ViewState {
  papers: PaperSummary[];
  selectedPaper: PaperDetail | null;
  session: SessionRecord | null;
  pendingMessage: string | null;
  draftMetaReview: string;
  draftDecision: 'accept' | 'reject' | null;
  banner: string | null;
  notice: string | null;
  focusDecision: boolean;
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

const SESSION_KEY = 'reviewforge_session_id';
const DRAFT_KEY_PREFIX = 'reviewforge_draft_';

export class AppStore {
  private state: ViewState = {
    papers: [],
    selectedPaper: null,
    session: null,
    pendingMessage: null,
    draftMetaReview: '',
    draftDecision: null,
    banner: null,
    notice: null,
    focusDecision: false,
  };

  private listeners: Array<(state: ViewState) => void> = [];
  private decisionInFlight = false;

  constructor(
    private readonly api: ApiClient,
    private readonly storage: StorageLike,
    private readonly now: () => number = () => Date.now(),
  ) {}

  getState(): ViewState {
    return this.state;
  }

  subscribe(listener: (state: ViewState) => void): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private update(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) listener(this.state);
  }

  // ----- derived view data ---------------------------------------------

  /** Transcript plus any optimistic (unsettled) seeker bubble. */
  chat(): ChatBubble[] {
    const bubbles: ChatBubble[] = (this.state.session?.transcript.utterances ?? []).map((u) => ({
      role: u.role,
      text: u.text,
    }));
    if (this.state.pendingMessage !== null) {
      bubbles.push({ role: 'seeker', text: this.state.pendingMessage, pending: true });
    }
    return bubbles;
  }

  /** Seconds since the server-side session start; reload-safe. */
  elapsedSeconds(): number {
    const session = this.state.session;
    if (session === null) return 0;
    const end = session.closed_at !== null ? session.closed_at * 1000 : this.now();
    return Math.max(0, (end - session.created_at * 1000) / 1000);
  }

  sessionOpen(): boolean {
    return this.state.session !== null && this.state.session.closed_at === null;
  }

  canSend(text: string): boolean {
    return this.sessionOpen() && this.state.pendingMessage === null && text.trim().length > 0;
  }

  canSubmitDecision(): boolean {
    return (
      this.sessionOpen() &&
      this.state.draftDecision !== null &&
      this.state.draftMetaReview.trim().length > 0 &&
      !this.decisionInFlight
    );
  }

  // ----- paper browsing --------------------------------------------------

  async loadPapers(): Promise<void> {
    try {
      this.update({ papers: await this.api.listPapers(), banner: null });
    } catch (err) {
      this.fail(err, 'Could not load the paper list.');
    }
  }

  async openPaper(id: string): Promise<void> {
    try {
      const paper = await this.api.getPaper(id);
      this.update({ selectedPaper: paper, banner: null, notice: null });
      this.update({ draftMetaReview: this.loadDraft() });
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.update({ notice: `Paper ${id} was not found.` });
        return;
      }
      this.fail(err, 'Could not open the paper.');
    }
  }

  // ----- session lifecycle ------------------------------------------------

  async startSession(): Promise<void> {
    const paper = this.state.selectedPaper;
    if (paper === null || this.state.session !== null) return;
    try {
      const session = await this.api.createSession(paper.id);
      this.storage.setItem(SESSION_KEY, session.id);
      this.update({ session, banner: null, draftMetaReview: this.loadDraft() });
    } catch (err) {
      this.fail(err, 'Could not start a session.');
    }
  }

  /**
   * Reload path: rebuild the exact transcript and timer baseline from the
   * server. Drafts come back from local storage.
   */
  async restore(): Promise<boolean> {
    const sessionId = this.storage.getItem(SESSION_KEY);
    if (sessionId === null) return false;
    try {
      const session = await this.api.getSession(sessionId);
      this.update({ session });
      await this.openPaper(session.paper_id);
      this.update({ draftMetaReview: this.loadDraft() });
      return true;
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) {
        this.storage.removeItem(SESSION_KEY);
        return false;
      }
      this.fail(err, 'Could not restore the session.');
      return false;
    }
  }

  // ----- chat ---------------------------------------------------------------

  async sendMessage(text: string): Promise<void> {
    if (!this.canSend(text)) return;
    const session = this.state.session!;
    const trimmed = text.trim();
    // Optimistic seeker bubble; input stays disabled while pending.
    this.update({ pendingMessage: trimmed, banner: null });
    try {
      await this.api.postMessage(session.id, trimmed);
      const refreshed = await this.api.getSession(session.id);
      this.update({ session: refreshed, pendingMessage: null });
    } catch (err) {
      // Roll the optimistic turn back; the settled transcript never ends on
      // a seeker bubble (mirrors the service-side rollback).
      this.update({ pendingMessage: null });
      if (err instanceof ApiError && err.status === 409) {
        await this.refreshSession();
        this.update({ focusDecision: true, notice: 'This session is closed.' });
        return;
      }
      this.fail(err, 'The agent could not reply; your message was not sent.');
      throw new RestoreInputText(trimmed);
    }
  }

  // ----- decision -------------------------------------------------------------

  setDraftMetaReview(text: string): void {
    this.update({ draftMetaReview: text });
    this.saveDraft(text);
  }

  setDraftDecision(decision: 'accept' | 'reject'): void {
    this.update({ draftDecision: decision });
  }

  async submitDecision(): Promise<void> {
    if (!this.canSubmitDecision()) return;
    const session = this.state.session!;
    this.decisionInFlight = true; // client-side single-flight: a double click submits once
    try {
      const closed = await this.api.submitDecision(
        session.id,
        this.state.draftDecision!,
        this.state.draftMetaReview.trim(),
      );
      this.update({ session: closed, focusDecision: false });
      this.clearDraft();
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        await this.refreshSession(); // already closed elsewhere; converge on server state
        return;
      }
      this.fail(err, 'Could not submit the decision.');
    } finally {
      this.decisionInFlight = false;
    }
  }

  async refreshSession(): Promise<void> {
    const session = this.state.session;
    if (session === null) return;
    try {
      this.update({ session: await this.api.getSession(session.id) });
    } catch (err) {
      this.fail(err, 'Could not refresh the session.');
    }
  }

  // ----- internals ------------------------------------------------------------

  private fail(err: unknown, fallback: string): void {
    if (err instanceof NetworkError) {
      this.update({ banner: 'Service unreachable. Check the connection and retry.' });
      return;
    }
    if (err instanceof ApiError) {
      this.update({ banner: `${fallback} (${err.code}: ${err.message})` });
      return;
    }
    this.update({ banner: fallback });
  }

  private draftKey(): string | null {
    const paperId = this.state.session?.paper_id ?? this.state.selectedPaper?.id;
    return paperId ? DRAFT_KEY_PREFIX + paperId : null;
  }

  private saveDraft(text: string): void {
    const key = this.draftKey();
    if (key !== null) this.storage.setItem(key, text);
  }

  private loadDraft(): string {
    const key = this.draftKey();
    return key !== null ? (this.storage.getItem(key) ?? '') : '';
  }

  private clearDraft(): void {
    const key = this.draftKey();
    if (key !== null) this.storage.removeItem(key);
  }
}

/** Thrown by sendMessage so the view can put the failed text back into the input. */
export class RestoreInputText extends Error {
  constructor(readonly text: string) {
    super('restore input');
    this.name = 'RestoreInputText';
  }
}
