import { ApiClient } from './api.js';
import { AppStore } from './store.js';
import { AppView } from './view.js';

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get('service') ?? 'http://127.0.0.1:8000';

const store = new AppStore(new ApiClient(baseUrl), window.localStorage);
new AppView(store);

void (async () => {
  await store.loadPapers();
  await store.restore(); // a reload mid-conversation lands back in the same session
})();
