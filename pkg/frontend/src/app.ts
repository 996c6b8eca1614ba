// Two-panel console: the left panel searches the knowledge graph by
// keyword and shows the retrieved context; the right panel runs
// multi-round QA against the pinned session. "Restart" (or asking "new")
// returns to keyword entry.

import { ApiClient, ApiError } from "./api.js";
import {
  UiSessionState,
  appendTurn,
  enterQaPhase,
  initialState,
  resetToKeywordEntry,
} from "./state.js";

export interface AppHandles {
  state: UiSessionState;
  root: HTMLElement;
  searchAction(): Promise<void>;
  askAction(): Promise<void>;
  restartAction(): Promise<void>;
}

function element<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function createApp(root: HTMLElement, api: ApiClient): AppHandles {
  const state = initialState();

  root.innerHTML = "";
  const header = element("header", "topbar");
  header.append(element("h1", "title", "Knowledge Graph QA"));
  const keyField = element("input", "api-key");
  keyField.id = "api-key";
  keyField.type = "password";
  keyField.placeholder = "API key";
  keyField.setAttribute("aria-label", "API key");
  header.append(keyField);
  root.append(header);

  const main = element("main", "panels");

  // Left panel: keyword search and context display.
  const searchPanel = element("section", "panel search-panel");
  searchPanel.append(element("h2", "panel-title", "1. Search the graph"));
  const keywordInput = element("input", "keyword");
  keywordInput.id = "keyword";
  keywordInput.placeholder = "keyword, e.g. IPv6";
  keywordInput.setAttribute("aria-label", "keyword");
  const searchButton = element("button", "primary", "Search");
  searchButton.id = "search-btn";
  const searchBanner = element("div", "banner hidden");
  searchBanner.id = "search-banner";
  const contextBox = element("div", "context");
  contextBox.id = "context";
  searchPanel.append(keywordInput, searchButton, searchBanner, contextBox);

  // Right panel: multi-round QA.
  const qaPanel = element("section", "panel qa-panel");
  qaPanel.append(element("h2", "panel-title", "2. Ask questions"));
  const transcriptBox = element("div", "transcript");
  transcriptBox.id = "transcript";
  const askBanner = element("div", "banner hidden");
  askBanner.id = "ask-banner";
  const questionInput = element("input", "question");
  questionInput.id = "question";
  questionInput.placeholder = "your question (or: new)";
  questionInput.setAttribute("aria-label", "question");
  const askButton = element("button", "primary", "Ask/Continue");
  askButton.id = "ask-btn";
  const restartButton = element("button", "secondary", "Restart");
  restartButton.id = "restart-btn";
  const controls = element("div", "controls");
  controls.append(questionInput, askButton, restartButton);
  qaPanel.append(transcriptBox, askBanner, controls);

  main.append(searchPanel, qaPanel);
  root.append(main);

  function showBanner(banner: HTMLElement, message: string): void {
    banner.textContent = message;
    banner.classList.remove("hidden");
  }

  function clearBanner(banner: HTMLElement): void {
    banner.textContent = "";
    banner.classList.add("hidden");
  }

  function renderContext(): void {
    contextBox.innerHTML = "";
    if (state.phase === "qa" && state.noContext) {
      contextBox.append(
        element("div", "context-empty", "(no graph context for this keyword)"),
      );
      return;
    }
    for (const line of state.contextLines) {
      contextBox.append(element("div", "context-line", line));
    }
  }

  function renderTranscript(): void {
    transcriptBox.innerHTML = "";
    for (const turn of state.transcript) {
      const block = element("div", "turn");
      block.append(element("div", "turn-question", turn.question));
      block.append(element("div", "turn-answer", turn.answer));
      transcriptBox.append(block);
    }
    transcriptBox.scrollTop = transcriptBox.scrollHeight;
  }

  function syncPhase(): void {
    const inQa = state.phase === "qa";
    questionInput.disabled = !inQa || state.askInFlight;
    askButton.disabled = !inQa || state.askInFlight;
    restartButton.disabled = state.askInFlight;
    if (!inQa) {
      keywordInput.focus();
    }
  }

  async function searchAction(): Promise<void> {
    clearBanner(searchBanner);
    api.setApiKey(keyField.value);
    const keyword = keywordInput.value.trim();
    if (!keyword) {
      showBanner(searchBanner, "Enter a keyword first.");
      return;
    }
    try {
      const response = await api.search(keyword);
      enterQaPhase(
        state,
        keyword,
        response.session_id,
        response.context_text,
        response.no_context,
      );
      renderContext();
      renderTranscript();
      syncPhase();
      questionInput.focus();
    } catch (error) {
      showBanner(searchBanner, describeError(error));
    }
  }

  async function askAction(): Promise<void> {
    if (state.phase !== "qa" || state.askInFlight || !state.sessionId) {
      return;
    }
    const question = questionInput.value.trim();
    if (!question) {
      showBanner(askBanner, "Type a question (or: new / exit).");
      return;
    }
    clearBanner(askBanner);
    state.askInFlight = true;
    syncPhase();
    try {
      const response = await api.ask(state.sessionId, question);
      if (response.restart || response.ended) {
        state.askInFlight = false;
        resetToKeywordEntry(state);
        renderContext();
        renderTranscript();
        syncPhase();
        return;
      }
      appendTurn(state, question, response.answer ?? "");
      questionInput.value = "";
      renderTranscript();
    } catch (error) {
      if (error instanceof ApiError && error.status === 410) {
        showBanner(
          askBanner,
          "This session has expired. Click Restart to search again.",
        );
      } else {
        showBanner(askBanner, describeError(error));
      }
    } finally {
      state.askInFlight = false;
      syncPhase();
    }
  }

  async function restartAction(): Promise<void> {
    const sessionId = state.sessionId;
    if (sessionId) {
      try {
        await api.ask(sessionId, "new");
      } catch {
        // The server session expires by TTL; local reset proceeds anyway.
      }
    }
    resetToKeywordEntry(state);
    clearBanner(askBanner);
    clearBanner(searchBanner);
    keywordInput.value = "";
    questionInput.value = "";
    renderContext();
    renderTranscript();
    syncPhase();
  }

  searchButton.addEventListener("click", () => void searchAction());
  keywordInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void searchAction();
  });
  askButton.addEventListener("click", () => void askAction());
  questionInput.addEventListener("keydown", (event) => {
    if (event.key === "Enter") void askAction();
  });
  restartButton.addEventListener("click", () => void restartAction());

  syncPhase();
  return { state, root, searchAction, askAction, restartAction };
}

function describeError(error: unknown): string {
  if (error instanceof ApiError) {
    if (error.status === 401) return "Unauthorized: check the API key.";
    if (error.status === 400) return `Bad request: ${error.message}`;
    if (error.status === 503) return "The graph store is unavailable.";
    if (error.status === 502) return "The answer model is unavailable; try again.";
    return `${error.status}: ${error.message}`;
  }
  return error instanceof Error ? error.message : String(error);
}
