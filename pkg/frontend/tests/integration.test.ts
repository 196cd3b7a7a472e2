// Same lifecycle as the scripted suite, but against a running assistant
// service (set FORGE_SERVICE_URL, e.g. after `forge serve --corpus ...`).
// Skipped when no service is configured.

import { describe, expect, it } from 'vitest';

import { ApiClient } from '../src/api.js';
import { AppStore } from '../src/store.js';
import { FakeStorage } from './fakeService.js';

const SERVICE_URL = process.env.FORGE_SERVICE_URL;

describe.skipIf(!SERVICE_URL)('against a live service', () => {
  it('runs the full lifecycle over real HTTP', async () => {
    const storage = new FakeStorage();
    const store = new AppStore(new ApiClient(SERVICE_URL!), storage);

    await store.loadPapers();
    const papers = store.getState().papers;
    expect(papers.length).toBeGreaterThan(0);

    await store.openPaper(papers[0].id);
    expect(store.getState().selectedPaper?.reviews.length).toBeGreaterThan(0);

    await store.startSession();
    expect(store.sessionOpen()).toBe(true);

    await store.sendMessage('Can you summarize the reviews?');
    await store.sendMessage('What are the main weaknesses?');
    expect(store.chat()).toHaveLength(4);

    // Reload: a fresh store over the same storage restores the transcript.
    const reloaded = new AppStore(new ApiClient(SERVICE_URL!), storage);
    expect(await reloaded.restore()).toBe(true);
    expect(reloaded.chat()).toEqual(store.chat());
    expect(reloaded.getState().session?.created_at).toBe(store.getState().session?.created_at);

    reloaded.setDraftDecision('accept');
    reloaded.setDraftMetaReview('Integration-run meta-review.');
    await Promise.all([reloaded.submitDecision(), reloaded.submitDecision()]);
    expect(reloaded.sessionOpen()).toBe(false);

    const log = await new ApiClient(SERVICE_URL!).studyLog();
    const entry = log.find((e) => e.session_id === reloaded.getState().session?.id);
    expect(entry?.turn_count).toBe(4);
  });
});
