// UI session state: which phase the console is in, the pinned context and
// the ordered transcript. Context lines come from the server's
// context_text split on newlines only, so rendered lines stay byte-equal
// to the service payload.

export type Phase = "enter_keyword" | "qa";

export interface Turn {
  question: string;
  answer: string;
}

export interface UiSessionState {
  sessionId: string | null;
  keyword: string;
  contextLines: string[];
  noContext: boolean;
  transcript: Turn[];
  phase: Phase;
  askInFlight: boolean;
}

export function initialState(): UiSessionState {
  return {
    sessionId: null,
    keyword: "",
    contextLines: [],
    noContext: false,
    transcript: [],
    phase: "enter_keyword",
    askInFlight: false,
  };
}

export function splitContext(contextText: string): string[] {
  return contextText === "" ? [] : contextText.split("\n");
}

export function enterQaPhase(
  state: UiSessionState,
  keyword: string,
  sessionId: string,
  contextText: string,
  noContext: boolean,
): void {
  state.keyword = keyword;
  state.sessionId = sessionId;
  state.contextLines = splitContext(contextText);
  state.noContext = noContext;
  state.transcript = [];
  state.phase = "qa";
}

export function appendTurn(
  state: UiSessionState,
  question: string,
  answer: string,
): void {
  state.transcript.push({ question, answer });
}

export function resetToKeywordEntry(state: UiSessionState): void {
  state.sessionId = null;
  state.keyword = "";
  state.contextLines = [];
  state.noContext = false;
  state.transcript = [];
  state.phase = "enter_keyword";
  state.askInFlight = false;
}
