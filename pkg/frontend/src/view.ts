// DOM layer: renders the store state and wires user events. All UI rules
// (disabled inputs, read-only closed view) come from the store's guards.

import { AppStore, RestoreInputText } from './store.js';
import { formatElapsed } from './timer.js';

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node as T;
}

export class AppView {
  private paperList = el<HTMLUListElement>('paper-list');
  private reviewsPanel = el<HTMLDivElement>('reviews-panel');
  private chatLog = el<HTMLDivElement>('chat-log');
  private chatInput = el<HTMLTextAreaElement>('chat-input');
  private sendBtn = el<HTMLButtonElement>('send-btn');
  private startBtn = el<HTMLButtonElement>('start-session-btn');
  private timer = el<HTMLSpanElement>('timer');
  private banner = el<HTMLDivElement>('banner');
  private notice = el<HTMLDivElement>('notice');
  private decisionPanel = el<HTMLDivElement>('decision-panel');
  private metaReview = el<HTMLTextAreaElement>('meta-review');
  private acceptRadio = el<HTMLInputElement>('decision-accept');
  private rejectRadio = el<HTMLInputElement>('decision-reject');
  private submitBtn = el<HTMLButtonElement>('submit-btn');
  private closedView = el<HTMLDivElement>('closed-view');

  constructor(private readonly store: AppStore) {
    store.subscribe(() => this.render());
    this.wire();
    window.setInterval(() => this.renderTimer(), 1000);
  }

  private wire(): void {
    this.startBtn.addEventListener('click', () => void this.store.startSession());
    this.sendBtn.addEventListener('click', () => void this.send());
    this.chatInput.addEventListener('keydown', (event) => {
      if (event.key === 'Enter' && !event.shiftKey) {
        event.preventDefault();
        void this.send();
      }
    });
    this.chatInput.addEventListener('input', () => this.renderSendState());
    this.metaReview.addEventListener('input', () => {
      this.store.setDraftMetaReview(this.metaReview.value);
    });
    this.acceptRadio.addEventListener('change', () => this.store.setDraftDecision('accept'));
    this.rejectRadio.addEventListener('change', () => this.store.setDraftDecision('reject'));
    this.submitBtn.addEventListener('click', () => void this.store.submitDecision());
  }

  private async send(): Promise<void> {
    const text = this.chatInput.value;
    if (!this.store.canSend(text)) return;
    this.chatInput.value = '';
    try {
      await this.store.sendMessage(text);
    } catch (err) {
      if (err instanceof RestoreInputText) {
        this.chatInput.value = err.text; // failed sends give the text back
        return;
      }
      throw err;
    }
  }

  render(): void {
    const state = this.store.getState();

    this.banner.textContent = state.banner ?? '';
    this.banner.hidden = state.banner === null;
    this.notice.textContent = state.notice ?? '';
    this.notice.hidden = state.notice === null;

    this.paperList.replaceChildren(
      ...state.papers.map((paper) => {
        const item = document.createElement('li');
        const button = document.createElement('button');
        button.textContent = `${paper.title} (${paper.review_count} reviews)`;
        button.addEventListener('click', () => void this.store.openPaper(paper.id));
        item.appendChild(button);
        return item;
      }),
    );

    const paper = state.selectedPaper;
    if (paper !== null) {
      this.reviewsPanel.replaceChildren(
        ...paper.reviews.map((review, index) => {
          const block = document.createElement('article');
          const heading = document.createElement('h3');
          heading.textContent = `Review ${index + 1}`;
          const body = document.createElement('p');
          body.textContent = review;
          block.append(heading, body);
          return block;
        }),
      );
    }
    this.startBtn.disabled = paper === null || state.session !== null;

    this.chatLog.replaceChildren(
      ...this.store.chat().map((bubble) => {
        const div = document.createElement('div');
        div.className = `bubble ${bubble.role}${bubble.pending ? ' pending' : ''}`;
        div.textContent = bubble.text;
        return div;
      }),
    );
    this.chatLog.scrollTop = this.chatLog.scrollHeight;

    if (this.metaReview.value !== state.draftMetaReview) {
      this.metaReview.value = state.draftMetaReview;
    }

    const closed = state.session !== null && state.session.closed_at !== null;
    this.decisionPanel.classList.toggle('focused', state.focusDecision);
    this.metaReview.disabled = closed || state.session === null;
    this.acceptRadio.disabled = closed || state.session === null;
    this.rejectRadio.disabled = closed || state.session === null;
    this.closedView.hidden = !closed;
    if (closed) {
      this.closedView.textContent =
        `Session closed: ${state.session!.decision}. The transcript above is read-only.`;
    }

    this.renderSendState();
    this.renderTimer();
  }

  private renderSendState(): void {
    this.sendBtn.disabled = !this.store.canSend(this.chatInput.value);
    this.chatInput.disabled =
      !this.store.sessionOpen() || this.store.getState().pendingMessage !== null;
    this.submitBtn.disabled = !this.store.canSubmitDecision();
  }

  private renderTimer(): void {
    this.timer.textContent = formatElapsed(this.store.elapsedSeconds());
  }
}
